use crate::params::ParameterStore;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 strength λ; adds λ·w to the gradient of every decayed parameter.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates, one pair per store parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParameterStore<T>, config: AdamConfig) -> Self {
        let zeros = || store.params().iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update from the store's accumulated gradients.
    pub fn step(&mut self, store: &mut ParameterStore<T>) {
        self.t += 1;
        let c = self.config;
        let lr = T::from_f64(c.lr);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let corr1 = T::from_f64(1.0 - c.beta1.powi(self.t as i32));
        let corr2 = T::from_f64(1.0 - c.beta2.powi(self.t as i32));
        let eps = T::from_f64(c.eps);
        let wd = T::from_f64(c.weight_decay);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let decay = p.decay && c.weight_decay != 0.0;
            for i in 0..p.value.data.len() {
                let w = p.value.data[i];
                let g = if decay { p.grad[i] + wd * w } else { p.grad[i] };
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / corr1;
                let vhat = v[i] / corr2;
                p.value.data[i] = w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
