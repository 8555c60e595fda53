use std::collections::HashMap;

use rand::Rng;

use crate::scalar::Scalar;
use crate::NnError;

/// Dense row-major array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Vec<T>,
    /// Receives L2 weight decay. False for biases and batchnorm γ/β.
    pub decay: bool,
}

/// Named trainable tensors with gradient accumulators, plus non-trainable
/// buffers (batchnorm running statistics). Insertion order is preserved and
/// used for every iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    buffers: Vec<(String, Tensor<T>)>,
    buffer_index: HashMap<String, usize>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            params: Vec::new(),
            index: HashMap::new(),
            buffers: Vec::new(),
            buffer_index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, decay: bool) -> Result<usize, NnError> {
        if self.index.contains_key(name) || self.buffer_index.contains_key(name) {
            return Err(NnError::DuplicateName(name.to_string()));
        }
        let id = self.params.len();
        self.index.insert(name.to_string(), id);
        let grad = vec![T::zero(); value.len()];
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
            decay,
        });
        Ok(id)
    }

    pub fn add_buffer(&mut self, name: &str, value: Tensor<T>) -> Result<(), NnError> {
        if self.index.contains_key(name) || self.buffer_index.contains_key(name) {
            return Err(NnError::DuplicateName(name.to_string()));
        }
        self.buffer_index.insert(name.to_string(), self.buffers.len());
        self.buffers.push((name.to_string(), value));
        Ok(())
    }

    pub fn id(&self, name: &str) -> Result<usize, NnError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&Parameter<T>, NnError> {
        Ok(&self.params[self.id(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter<T>, NnError> {
        let id = self.id(name)?;
        Ok(&mut self.params[id])
    }

    pub fn param(&self, id: usize) -> &Parameter<T> {
        &self.params[id]
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor<T>, NnError> {
        self.buffer_index
            .get(name)
            .map(|&i| &self.buffers[i].1)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn set_buffer(&mut self, name: &str, data: Vec<T>) -> Result<(), NnError> {
        let i = *self
            .buffer_index
            .get(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        let buf = &mut self.buffers[i].1;
        if buf.data.len() != data.len() {
            return Err(NnError::ShapeMismatch(format!("buffer {name}")));
        }
        buf.data = data;
        Ok(())
    }

    pub fn buffers(&self) -> &[(String, Tensor<T>)] {
        &self.buffers
    }

    /// Total trainable scalar count.
    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Multiplies every gradient by `s`.
    pub fn scale_grads(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// Same names, shapes and values in another precision; gradients zeroed.
    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        let mut out = ParameterStore::new();
        for p in &self.params {
            out.add(&p.name, p.value.cast(), p.decay).expect("names are unique");
        }
        for (name, b) in &self.buffers {
            out.add_buffer(name, b.cast()).expect("names are unique");
        }
        out
    }
}

/// Uniform in ±√(6/(fan_in+fan_out)).
pub fn glorot<T: Scalar, R: Rng>(rng: &mut R, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-limit..limit))).collect();
    Tensor { shape, data }
}
