//! Reverse-mode tape. Every op appends a node; `backward` walks the nodes in
//! reverse creation order, which is a valid reverse topological order.

use std::collections::HashMap;

use crate::params::{ParameterStore, Tensor};
use crate::scalar::{matmul, Scalar};
use crate::NnError;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Batchnorm statistics source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics.
    Eval,
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(usize),
    Affine {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, T),
    Sum(Var),
    L1Diff(Var, Var),
    Conv {
        x: Var,
        w: Var,
        b: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    Concat(Vec<Var>),
    Slice {
        a: Var,
        start: usize,
    },
    Column {
        x: Var,
        j: usize,
    },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    /// Empty for parameters, which are read from the store.
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    by_node: Vec<Option<Vec<T>>>,
    params: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`; `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the parameter gradients into the store's accumulators.
    pub fn accumulate_into(&self, store: &mut ParameterStore<T>) {
        for &(node, pid) in &self.params {
            if let Some(g) = &self.by_node[node] {
                let acc = &mut store.params_mut()[pid].grad;
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += *v;
                }
            }
        }
    }
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParameterStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: HashMap<usize, Var>,
    mode: Mode,
    track: bool,
    buffer_updates: Vec<(String, Vec<T>)>,
}

fn shape_err(msg: String) -> NnError {
    NnError::ShapeMismatch(msg)
}

fn check_finite<T: Scalar>(op: &'static str, v: &[T]) -> Result<(), NnError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(NnError::NonFiniteValue(op))
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    // Split by sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn grad_slot<T: Scalar>(grads: &mut [Option<Vec<T>>], i: usize, len: usize) -> &mut Vec<T> {
    grads[i].get_or_insert_with(|| vec![T::zero(); len])
}

/// Writes the 3×3, pad-1 patches of one `c×h×w` image as a `(c·9)×(h·w)`
/// matrix.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &x[ci * hw + sy as usize * w..][..w];
                    for (xo, o) in out.iter_mut().enumerate() {
                        let sx = xo as isize + kx as isize - 1;
                        *o = if sx < 0 || sx >= w as isize {
                            T::zero()
                        } else {
                            src[sx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut dx[ci * hw + sy as usize * w..][..w];
                    for xo in 0..w {
                        let sx = xo as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            dst[sx as usize] += row[y * w + xo];
                        }
                    }
                }
            }
        }
    }
}

impl<'s, T: Scalar> Graph<'s, T> {
    /// A tape over `store`. With `track == false` no node requires gradients
    /// and `backward` fails with `NoTape`.
    pub fn new(store: &'s ParameterStore<T>, mode: Mode, track: bool) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            mode,
            track,
            buffer_updates: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &'s ParameterStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        op: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        kind: Op<T>,
        deps: &[Var],
    ) -> Result<Var, NnError> {
        check_finite(op, &value)?;
        let needs_grad = deps.iter().any(|d| self.nodes[d.0].needs_grad);
        self.nodes.push(Node {
            shape,
            value,
            op: kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[T] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.store.param(id).value.data,
            _ => &self.nodes[v.0].value,
        }
    }

    /// Constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var, NnError> {
        self.push("input", t.shape, t.data, Op::Input, &[])
    }

    /// Input whose gradient `backward` reports (for sensitivity checks).
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Result<Var, NnError> {
        let v = self.input(t)?;
        self.nodes[v.0].needs_grad = self.track;
        Ok(v)
    }

    /// The store parameter `name`; repeated calls return the same node.
    pub fn param(&mut self, name: &str) -> Result<Var, NnError> {
        let id = self.store.id(name)?;
        if let Some(v) = self.param_vars.get(&id) {
            return Ok(*v);
        }
        let shape = self.store.param(id).value.shape.clone();
        self.nodes.push(Node {
            shape,
            value: Vec::new(),
            op: Op::Param(id),
            needs_grad: self.track,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        Ok(v)
    }

    /// `x·Wᵀ + b` for `x: [B, in]`, `W: [out, in]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(format!("affine: x {xs:?}, W {ws:?}")));
        }
        let (bsz, inp, out) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(shape_err(format!("affine: bias {:?}, expected [{out}]", self.shape(b))));
            }
        }
        let mut y = vec![T::zero(); bsz * out];
        matmul(bsz, inp, out, self.value(x), false, self.value(w), true, &mut y, false);
        if let Some(b) = b {
            let bv = self.value(b);
            for row in y.chunks_mut(out) {
                for (v, bb) in row.iter_mut().zip(bv) {
                    *v += *bb;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        self.push("affine", vec![bsz, out], y, Op::Affine { x, w, b }, &deps)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<(), NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("{op}: {:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("add", a, b)?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        self.push("add", self.shape(a).to_vec(), y, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("mul", a, b)?;
        let y = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        self.push("mul", self.shape(a).to_vec(), y, Op::Mul(a, b), &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NnError> {
        let y = self.value(a).iter().map(|x| sigmoid(*x)).collect();
        self.push("sigmoid", self.shape(a).to_vec(), y, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        let y = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push("tanh", self.shape(a).to_vec(), y, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        let y = self.value(a).iter().map(|x| x.max(T::zero())).collect();
        self.push("relu", self.shape(a).to_vec(), y, Op::Relu(a), &[a])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var, NnError> {
        let y = self.value(a).iter().map(|x| *x * s).collect();
        self.push("scale", self.shape(a).to_vec(), y, Op::Scale(a, s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NnError> {
        let s = self.value(a).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a), &[a])
    }

    /// `Σ |a − b|` as a one-element tensor.
    pub fn l1_diff_sum(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_shape("l1_diff_sum", a, b)?;
        let s = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (*x - *y).abs())
            .sum();
        self.push("l1_diff_sum", vec![1], vec![s], Op::L1Diff(a, b), &[a, b])
    }

    /// 3×3 convolution, stride 1, zero padding 1. `x: [B, C, H, W]`,
    /// `w: [O, C, 3, 3]`, `b: [O]`.
    pub fn conv2d_3x3(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NnError> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != 3 || ws[3] != 3 || self.shape(b) != [ws[0]] {
            return Err(shape_err(format!(
                "conv2d_3x3: x {xs:?}, W {ws:?}, b {:?}",
                self.shape(b)
            )));
        }
        let (bsz, c, h, wd, o) = (xs[0], xs[1], xs[2], xs[3], ws[0]);
        let hw = h * wd;
        let mut y = vec![T::zero(); bsz * o * hw];
        let mut cols = vec![T::zero(); c * 9 * hw];
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        for n in 0..bsz {
            im2col(&xv[n * c * hw..(n + 1) * c * hw], c, h, wd, &mut cols);
            let out = &mut y[n * o * hw..(n + 1) * o * hw];
            for (oc, row) in out.chunks_mut(hw).enumerate() {
                row.iter_mut().for_each(|v| *v = bv[oc]);
            }
            matmul(o, c * 9, hw, wv, false, &cols, false, out, true);
        }
        self.push("conv2d_3x3", vec![bsz, o, h, wd], y, Op::Conv { x, w, b }, &[x, w, b])
    }

    /// Non-overlapping max pooling with a `kh×kw` window over `[B, C, H, W]`.
    pub fn maxpool(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || kh == 0 || kw == 0 || !xs[2].is_multiple_of(kh) || !xs[3].is_multiple_of(kw) {
            return Err(shape_err(format!("maxpool {kh}x{kw} over {xs:?}")));
        }
        let (bsz, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / kh, w / kw);
        let xv = self.value(x);
        let mut y = Vec::with_capacity(bsz * c * oh * ow);
        let mut argmax = Vec::with_capacity(y.capacity());
        for plane in 0..bsz * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * kh * w + ox * kw;
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let i = base + (oy * kh + dy) * w + ox * kw + dx;
                            if xv[i] > xv[best] {
                                best = i;
                            }
                        }
                    }
                    y.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        self.push("maxpool", vec![bsz, c, oh, ow], y, Op::MaxPool { x, argmax }, &[x])
    }

    /// Per-channel batchnorm over `[B, C, H, W]`. In train mode the running
    /// statistics named `running` (mean, variance) are queued for update;
    /// see [`Graph::take_buffer_updates`].
    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var, running: (&str, &str)) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || self.shape(gamma) != [xs[1]] || self.shape(beta) != [xs[1]] {
            return Err(shape_err(format!("batchnorm over {xs:?}")));
        }
        let (bsz, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let count = T::from_f64((bsz * hw) as f64);
        let eps = T::from_f64(BN_EPS);
        let xv = self.value(x);
        let train = self.mode == Mode::Train;
        let mut pending = Vec::new();
        let (mean, var) = if train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for (ch, (m, v)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
                let plane = |n: usize| &xv[(n * c + ch) * hw..][..hw];
                *m = (0..bsz).flat_map(plane).copied().sum::<T>() / count;
                *v = (0..bsz).flat_map(plane).map(|x| (*x - *m) * (*x - *m)).sum::<T>() / count;
            }
            let mom = T::from_f64(BN_MOMENTUM);
            let rm = &self.store.buffer(running.0)?.data;
            let rv = &self.store.buffer(running.1)?.data;
            if rm.len() != c || rv.len() != c {
                return Err(shape_err(format!("batchnorm running statistics for {c} channels")));
            }
            let new_m = rm
                .iter()
                .zip(&mean)
                .map(|(r, m)| mom * *r + (T::one() - mom) * *m)
                .collect();
            let new_v = rv
                .iter()
                .zip(&var)
                .map(|(r, v)| mom * *r + (T::one() - mom) * *v)
                .collect();
            pending.push((running.0.to_string(), new_m));
            pending.push((running.1.to_string(), new_v));
            (mean, var)
        } else {
            let rm = self.store.buffer(running.0)?.data.clone();
            let rv = self.store.buffer(running.1)?.data.clone();
            if rm.len() != c || rv.len() != c {
                return Err(shape_err(format!("batchnorm running statistics for {c} channels")));
            }
            (rm, rv)
        };
        let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for (i, (xh, out)) in xhat.iter_mut().zip(y.iter_mut()).enumerate() {
            let ch = (i / hw) % c;
            *xh = (xv[i] - mean[ch]) * inv_std[ch];
            *out = g[ch] * *xh + b[ch];
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        self.buffer_updates.extend(pending);
        self.push("batchnorm", xs, y, op, &[x, gamma, beta])
    }

    /// Column-wise concatenation of `[B, d_i]` tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let bsz = match parts.first() {
            Some(p) => self.shape(*p)[0],
            None => return Err(shape_err("concat of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.shape(*p);
            if s.len() != 2 || s[0] != bsz {
                return Err(shape_err(format!("concat: part {s:?} with batch {bsz}")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(bsz * total);
        for n in 0..bsz {
            for (p, w) in parts.iter().zip(&widths) {
                y.extend_from_slice(&self.value(*p)[n * w..(n + 1) * w]);
            }
        }
        self.push("concat", vec![bsz, total], y, Op::Concat(parts.to_vec()), parts)
    }

    /// Columns `start..start+len` of a `[B, D]` tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let s = self.shape(a);
        if s.len() != 2 || start + len > s[1] {
            return Err(shape_err(format!("slice {start}..{} of {s:?}", start + len)));
        }
        let (bsz, d) = (s[0], s[1]);
        let av = self.value(a);
        let y = (0..bsz)
            .flat_map(|n| av[n * d + start..n * d + start + len].iter().copied())
            .collect();
        self.push("slice_cols", vec![bsz, len], y, Op::Slice { a, start }, &[a])
    }

    /// Column `j` of a height-1 map `[B, C, 1, W]`, as `[B, C]`.
    pub fn column(&mut self, x: Var, j: usize) -> Result<Var, NnError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || s[2] != 1 || j >= s[3] {
            return Err(shape_err(format!("column {j} of {s:?}")));
        }
        let (bsz, c, w) = (s[0], s[1], s[3]);
        let xv = self.value(x);
        let y = (0..bsz * c).map(|i| xv[i * w + j]).collect();
        self.push("column", vec![bsz, c], y, Op::Column { x, j }, &[x])
    }

    /// Running-statistic updates queued by train-mode batchnorm.
    pub fn take_buffer_updates(&mut self) -> Vec<(String, Vec<T>)> {
        std::mem::take(&mut self.buffer_updates)
    }

    /// Gradients of the one-element `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NnError> {
        if !self.nodes[loss.0].needs_grad {
            return Err(NnError::NoTape);
        }
        if self.shape(loss).iter().product::<usize>() != 1 {
            return Err(shape_err(format!("backward from non-scalar {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut params = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            let wants = |v: Var| self.nodes[v.0].needs_grad;
            let len = |v: Var| self.value(v).len();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => params.push((i, *id)),
                Op::Affine { x, w, b } => {
                    let (bsz, out) = (node.shape[0], node.shape[1]);
                    let inp = self.shape(*x)[1];
                    if wants(*x) {
                        let dx = grad_slot(&mut grads, x.0, bsz * inp);
                        matmul(bsz, out, inp, &dy, false, self.value(*w), false, dx, true);
                    }
                    if wants(*w) {
                        let dw = grad_slot(&mut grads, w.0, out * inp);
                        matmul(out, bsz, inp, &dy, true, self.value(*x), false, dw, true);
                    }
                    if let Some(b) = b.filter(|b| wants(*b)) {
                        let db = grad_slot(&mut grads, b.0, out);
                        for row in dy.chunks(out) {
                            for (d, g) in db.iter_mut().zip(row) {
                                *d += *g;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if wants(*v) {
                            let d = grad_slot(&mut grads, v.0, dy.len());
                            d.iter_mut().zip(&dy).for_each(|(d, g)| *d += *g);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(a, b), (b, a)] {
                        if wants(*v) {
                            let o = self.value(*other);
                            let d = grad_slot(&mut grads, v.0, dy.len());
                            for ((d, g), o) in d.iter_mut().zip(&dy).zip(o) {
                                *d += *g * *o;
                            }
                        }
                    }
                }
                Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) if wants(*a) => {
                    let y = &node.value;
                    let d = grad_slot(&mut grads, a.0, dy.len());
                    for ((d, g), y) in d.iter_mut().zip(&dy).zip(y) {
                        *d += match node.op {
                            Op::Sigmoid(_) => *g * *y * (T::one() - *y),
                            Op::Tanh(_) => *g * (T::one() - *y * *y),
                            _ if *y > T::zero() => *g,
                            _ => T::zero(),
                        };
                    }
                }
                Op::Sigmoid(_) | Op::Tanh(_) | Op::Relu(_) => {}
                Op::Scale(a, s) => {
                    if wants(*a) {
                        let d = grad_slot(&mut grads, a.0, dy.len());
                        d.iter_mut().zip(&dy).for_each(|(d, g)| *d += *g * *s);
                    }
                }
                Op::Sum(a) => {
                    if wants(*a) {
                        let d = grad_slot(&mut grads, a.0, len(*a));
                        d.iter_mut().for_each(|d| *d += dy[0]);
                    }
                }
                Op::L1Diff(a, b) => {
                    let signs: Vec<T> = self
                        .value(*a)
                        .iter()
                        .zip(self.value(*b))
                        .map(|(x, y)| {
                            let d = *x - *y;
                            if d > T::zero() {
                                dy[0]
                            } else if d < T::zero() {
                                -dy[0]
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    if wants(*a) {
                        let d = grad_slot(&mut grads, a.0, signs.len());
                        d.iter_mut().zip(&signs).for_each(|(d, s)| *d += *s);
                    }
                    if wants(*b) {
                        let d = grad_slot(&mut grads, b.0, signs.len());
                        d.iter_mut().zip(&signs).for_each(|(d, s)| *d -= *s);
                    }
                }
                Op::Conv { x, w, b } => {
                    let xs = self.shape(*x);
                    let (bsz, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                    let o = node.shape[1];
                    let hw = h * wd;
                    if wants(*b) {
                        let db = grad_slot(&mut grads, b.0, o);
                        for (i, plane) in dy.chunks(hw).enumerate() {
                            db[i % o] += plane.iter().copied().sum::<T>();
                        }
                    }
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let mut cols = vec![T::zero(); c * 9 * hw];
                    let mut dcols = vec![T::zero(); c * 9 * hw];
                    let (want_x, want_w) = (wants(*x), wants(*w));
                    for n in 0..bsz {
                        let dyn_ = &dy[n * o * hw..(n + 1) * o * hw];
                        if want_w {
                            im2col(&xv[n * c * hw..(n + 1) * c * hw], c, h, wd, &mut cols);
                            let dw = grad_slot(&mut grads, w.0, o * c * 9);
                            matmul(o, hw, c * 9, dyn_, false, &cols, true, dw, true);
                        }
                        if want_x {
                            matmul(c * 9, o, hw, wv, true, dyn_, false, &mut dcols, false);
                            let dx = grad_slot(&mut grads, x.0, bsz * c * hw);
                            col2im(&dcols, c, h, wd, &mut dx[n * c * hw..(n + 1) * c * hw]);
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if wants(*x) {
                        let d = grad_slot(&mut grads, x.0, len(*x));
                        for (g, &i) in dy.iter().zip(argmax) {
                            d[i] += *g;
                        }
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let xs = self.shape(*x);
                    let (bsz, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
                    let mut sum_dy = vec![T::zero(); c];
                    let mut sum_dy_xhat = vec![T::zero(); c];
                    for (i, (g, xh)) in dy.iter().zip(xhat).enumerate() {
                        let ch = (i / hw) % c;
                        sum_dy[ch] += *g;
                        sum_dy_xhat[ch] += *g * *xh;
                    }
                    if wants(*gamma) {
                        let d = grad_slot(&mut grads, gamma.0, c);
                        d.iter_mut().zip(&sum_dy_xhat).for_each(|(d, s)| *d += *s);
                    }
                    if wants(*beta) {
                        let d = grad_slot(&mut grads, beta.0, c);
                        d.iter_mut().zip(&sum_dy).for_each(|(d, s)| *d += *s);
                    }
                    if wants(*x) {
                        let g = self.value(*gamma).to_vec();
                        let count = T::from_f64((bsz * hw) as f64);
                        let d = grad_slot(&mut grads, x.0, dy.len());
                        for (i, (dxi, gi)) in d.iter_mut().zip(&dy).enumerate() {
                            let ch = (i / hw) % c;
                            let scale = g[ch] * inv_std[ch];
                            *dxi += if *train {
                                scale * (*gi - sum_dy[ch] / count - xhat[i] * sum_dy_xhat[ch] / count)
                            } else {
                                scale * *gi
                            };
                        }
                    }
                }
                Op::Concat(parts) => {
                    let bsz = node.shape[0];
                    let total = node.shape[1];
                    let mut offset = 0;
                    for p in parts {
                        let w = self.shape(*p)[1];
                        if wants(*p) {
                            let d = grad_slot(&mut grads, p.0, bsz * w);
                            for n in 0..bsz {
                                let src = &dy[n * total + offset..][..w];
                                d[n * w..(n + 1) * w].iter_mut().zip(src).for_each(|(d, g)| *d += *g);
                            }
                        }
                        offset += w;
                    }
                }
                Op::Slice { a, start } => {
                    if wants(*a) {
                        let (bsz, width) = (node.shape[0], node.shape[1]);
                        let d_in = self.shape(*a)[1];
                        let d = grad_slot(&mut grads, a.0, bsz * d_in);
                        for n in 0..bsz {
                            let dst = &mut d[n * d_in + start..][..width];
                            dst.iter_mut().zip(&dy[n * width..]).for_each(|(d, g)| *d += *g);
                        }
                    }
                }
                Op::Column { x, j } => {
                    if wants(*x) {
                        let w = self.shape(*x)[3];
                        let d = grad_slot(&mut grads, x.0, len(*x));
                        for (i, g) in dy.iter().enumerate() {
                            d[i * w + j] += *g;
                        }
                    }
                }
            }
            grads[i] = Some(dy);
        }
        Ok(Gradients { by_node: grads, params })
    }
}
