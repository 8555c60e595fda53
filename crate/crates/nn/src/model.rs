//! CNN feature sequence → 2-layer BiLSTM encoder → bridge → 2-layer LSTM
//! decoder emitting one point per step.

use pentrace_core::raster::{RasterImage, IMAGE_SIZE};
use pentrace_core::trajectory::DEFAULT_POINTS;
use pentrace_core::{PenTrajectory, Point};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{widen, Record};
use crate::graph::{Graph, Mode, Var};
use crate::params::{glorot, ParameterStore, Tensor};
use crate::rnn::{lstm_step, LstmWeights};
use crate::scalar::Scalar;
use crate::NnError;

/// Pool window (height, width) after each conv layer.
pub const POOLS: [Option<(usize, usize)>; 6] = [
    Some((2, 2)),
    Some((2, 2)),
    None,
    Some((2, 1)),
    Some((2, 1)),
    Some((4, 1)),
];
/// Conv layers (0-based) followed by batchnorm.
pub const BN_LAYERS: [usize; 2] = [2, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnnConfig {
    pub channels: [usize; 6],
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            channels: [32, 64, 128, 128, 256, 256],
        }
    }
}

impl CnnConfig {
    /// `(channels, height, width)` of the final map for an `h×w` input.
    pub fn output_shape(&self, h: usize, w: usize) -> (usize, usize, usize) {
        POOLS
            .iter()
            .flatten()
            .fold((self.channels[5], h, w), |(c, h, w), (ph, pw)| (c, h / ph, w / pw))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Seq2SeqConfig {
    /// Hidden units per direction.
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub layers: usize,
    pub out_steps: usize,
    /// First decoder input, in pixels.
    pub start_token: (f64, f64),
    /// Pixels per network unit: decoder inputs are divided by it and the
    /// projection output multiplied by it.
    pub coord_scale: f64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            enc_hidden: 512,
            dec_hidden: 512,
            layers: 2,
            out_steps: DEFAULT_POINTS,
            start_token: (-1.0, -1.0),
            coord_scale: 16.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelConfig {
    pub cnn: CnnConfig,
    pub seq: Seq2SeqConfig,
}

impl ModelConfig {
    /// Narrow variant that trains in minutes on one CPU core.
    pub fn small() -> Self {
        ModelConfig {
            cnn: CnnConfig {
                channels: [8, 16, 32, 32, 64, 64],
            },
            seq: Seq2SeqConfig {
                enc_hidden: 64,
                dec_hidden: 64,
                ..Seq2SeqConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let s = &self.seq;
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.cnn.channels.contains(&0) || s.enc_hidden == 0 || s.dec_hidden == 0 {
            return bad("layer widths must be positive");
        }
        if s.layers == 0 {
            return bad("need at least one recurrent layer");
        }
        if s.out_steps < 2 {
            return bad("need at least two output steps");
        }
        if !(s.coord_scale.is_finite() && s.coord_scale > 0.0) {
            return bad("coord_scale must be positive");
        }
        if !(s.start_token.0.is_finite() && s.start_token.1.is_finite()) {
            return bad("start token must be finite");
        }
        Ok(())
    }

    /// Configuration as a checkpoint record.
    pub fn to_record(&self) -> Record {
        let s = &self.seq;
        let mut data: Vec<f32> = self.cnn.channels.iter().map(|c| *c as f32).collect();
        data.extend([
            s.enc_hidden as f32,
            s.dec_hidden as f32,
            s.layers as f32,
            s.out_steps as f32,
            s.start_token.0 as f32,
            s.start_token.1 as f32,
            s.coord_scale as f32,
        ]);
        Record {
            name: CONFIG_RECORD.to_string(),
            dims: vec![data.len()],
            data,
        }
    }

    pub fn from_record(r: &Record) -> Result<Self, NnError> {
        if r.data.len() != 13 {
            return Err(NnError::Checkpoint(format!(
                "config record has {} values, expected 13",
                r.data.len()
            )));
        }
        let d = &r.data;
        let u = |v: f32| v as usize;
        let mut channels = [0; 6];
        for (c, v) in channels.iter_mut().zip(d) {
            *c = u(*v);
        }
        let cfg = ModelConfig {
            cnn: CnnConfig { channels },
            seq: Seq2SeqConfig {
                enc_hidden: u(d[6]),
                dec_hidden: u(d[7]),
                layers: u(d[8]),
                out_steps: u(d[9]),
                start_token: (widen(d[10]), widen(d[11])),
                coord_scale: widen(d[12]),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Trainable scalar count, from layer shapes.
    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        let mut c_in = 1;
        for (k, &c) in self.cnn.channels.iter().enumerate() {
            n += c * c_in * 9 + c;
            if BN_LAYERS.contains(&k) {
                n += 2 * c;
            }
            c_in = c;
        }
        let lstm = |d: usize, h: usize| 4 * h * (d + h) + 4 * h;
        let s = &self.seq;
        let mut d = self.cnn.channels[5];
        for _ in 0..s.layers {
            n += 2 * lstm(d, s.enc_hidden);
            n += 2 * (s.dec_hidden * 2 * s.enc_hidden + s.dec_hidden);
            d = 2 * s.enc_hidden;
        }
        let mut d = 2;
        for _ in 0..s.layers {
            n += lstm(d, s.dec_hidden);
            d = s.dec_hidden;
        }
        n + 2 * s.dec_hidden + 2
    }
}

pub const CONFIG_RECORD: &str = "__config__";

fn lstm_params<T: Scalar>(
    store: &mut ParameterStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    d: usize,
    h: usize,
) -> Result<(), NnError> {
    store.add(&format!("{prefix}.w_ih"), glorot(rng, vec![4 * h, d], d, 4 * h), true)?;
    store.add(&format!("{prefix}.w_hh"), glorot(rng, vec![4 * h, h], h, 4 * h), true)?;
    let mut bias = Tensor::zeros(vec![4 * h]);
    bias.data[h..2 * h].iter_mut().for_each(|b| *b = T::one());
    store.add(&format!("{prefix}.bias"), bias, false).map(|_| ())
}

/// Freshly initialized parameters: Glorot-uniform weights, zero biases,
/// forget-gate biases 1, batchnorm γ = 1, β = 0, running mean 0, variance 1.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore<T>, NnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();
    let mut c_in = 1;
    for (k, &c) in cfg.cnn.channels.iter().enumerate() {
        let l = k + 1;
        store.add(
            &format!("cnn.conv{l}.weight"),
            glorot(&mut rng, vec![c, c_in, 3, 3], c_in * 9, c * 9),
            true,
        )?;
        store.add(&format!("cnn.conv{l}.bias"), Tensor::zeros(vec![c]), false)?;
        if BN_LAYERS.contains(&k) {
            store.add(&format!("cnn.bn{l}.gamma"), Tensor::filled(vec![c], T::one()), false)?;
            store.add(&format!("cnn.bn{l}.beta"), Tensor::zeros(vec![c]), false)?;
            store.add_buffer(&format!("cnn.bn{l}.running_mean"), Tensor::zeros(vec![c]))?;
            store.add_buffer(&format!("cnn.bn{l}.running_var"), Tensor::filled(vec![c], T::one()))?;
        }
        c_in = c;
    }
    let s = &cfg.seq;
    let mut d = cfg.cnn.channels[5];
    for l in 1..=s.layers {
        for dir in ["fwd", "bwd"] {
            lstm_params(&mut store, &mut rng, &format!("enc.l{l}.{dir}"), d, s.enc_hidden)?;
        }
        for part in ["h", "c"] {
            let p = format!("bridge.l{l}.{part}");
            store.add(
                &format!("{p}.weight"),
                glorot(
                    &mut rng,
                    vec![s.dec_hidden, 2 * s.enc_hidden],
                    2 * s.enc_hidden,
                    s.dec_hidden,
                ),
                true,
            )?;
            store.add(&format!("{p}.bias"), Tensor::zeros(vec![s.dec_hidden]), false)?;
        }
        d = 2 * s.enc_hidden;
    }
    let mut d = 2;
    for l in 1..=s.layers {
        lstm_params(&mut store, &mut rng, &format!("dec.l{l}"), d, s.dec_hidden)?;
        d = s.dec_hidden;
    }
    store.add(
        "head.weight",
        glorot(&mut rng, vec![2, s.dec_hidden], s.dec_hidden, 2),
        true,
    )?;
    store.add("head.bias", Tensor::zeros(vec![2]), false)?;
    Ok(store)
}

/// Images as a `[B, 1, 64, 64]` input, ink = 1.
pub fn image_batch<T: Scalar>(images: &[&RasterImage]) -> Result<Tensor<T>, NnError> {
    let mut data = Vec::with_capacity(images.len() * IMAGE_SIZE * IMAGE_SIZE);
    for img in images {
        if img.width() != IMAGE_SIZE || img.height() != IMAGE_SIZE {
            return Err(NnError::ShapeMismatch(format!(
                "image is {}x{}, expected {IMAGE_SIZE}x{IMAGE_SIZE}",
                img.width(),
                img.height()
            )));
        }
        data.extend(img.pixels().iter().map(|&p| if p { T::one() } else { T::zero() }));
    }
    Tensor::new(vec![images.len(), 1, IMAGE_SIZE, IMAGE_SIZE], data)
}

/// Runs the CNN and reads the height-1 output map column by column, left to
/// right: `W` vectors of shape `[B, C]`.
pub fn extract_feature_sequence<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    input: Var,
) -> Result<Vec<Var>, NnError> {
    let mut x = input;
    for (k, pool) in POOLS.iter().enumerate() {
        let l = k + 1;
        let w = g.param(&format!("cnn.conv{l}.weight"))?;
        let b = g.param(&format!("cnn.conv{l}.bias"))?;
        x = g.conv2d_3x3(x, w, b)?;
        if BN_LAYERS.contains(&k) {
            let gamma = g.param(&format!("cnn.bn{l}.gamma"))?;
            let beta = g.param(&format!("cnn.bn{l}.beta"))?;
            let rm = format!("cnn.bn{l}.running_mean");
            let rv = format!("cnn.bn{l}.running_var");
            x = g.batchnorm(x, gamma, beta, (&rm, &rv))?;
        }
        x = g.relu(x)?;
        if let Some((ph, pw)) = pool {
            x = g.maxpool(x, *ph, *pw)?;
        }
    }
    let s = g.shape(x).to_vec();
    if s[1] != cfg.cnn.channels[5] || s[2] != 1 {
        return Err(NnError::ShapeMismatch(format!("feature map {s:?} is not one row high")));
    }
    (0..s[3]).map(|j| g.column(x, j)).collect()
}

/// Decoder initial `(h, c)` per layer.
#[derive(Debug, Clone)]
pub struct EncodedState {
    pub layers: Vec<(Var, Var)>,
}

fn zeros<T: Scalar>(g: &mut Graph<'_, T>, rows: usize, cols: usize) -> Result<Var, NnError> {
    g.input(Tensor::zeros(vec![rows, cols]))
}

/// Runs the stacked BiLSTM over `xs` and bridges each layer's final states
/// (forward at the last position, backward at the first) to decoder states.
pub fn encode<T: Scalar>(g: &mut Graph<'_, T>, cfg: &ModelConfig, xs: &[Var]) -> Result<EncodedState, NnError> {
    if xs.is_empty() {
        return Err(NnError::ShapeMismatch("empty feature sequence".into()));
    }
    let s = &cfg.seq;
    let bsz = g.shape(xs[0])[0];
    let mut seq = xs.to_vec();
    let mut layers = Vec::with_capacity(s.layers);
    for l in 1..=s.layers {
        let fw = LstmWeights::from_store(g, &format!("enc.l{l}.fwd"))?;
        let bw = LstmWeights::from_store(g, &format!("enc.l{l}.bwd"))?;
        let z = zeros(g, bsz, s.enc_hidden)?;
        let mut state = (z, z);
        let mut fwd = Vec::with_capacity(seq.len());
        for x in &seq {
            state = lstm_step(g, *x, state, &fw)?;
            fwd.push(state.0);
        }
        let mut state = (z, z);
        let mut bwd = vec![z; seq.len()];
        for (t, x) in seq.iter().enumerate().rev() {
            state = lstm_step(g, *x, state, &bw)?;
            bwd[t] = state.0;
        }
        let last = g.concat(&[fwd[seq.len() - 1], bwd[0]])?;
        let mut bridged = Vec::with_capacity(2);
        for part in ["h", "c"] {
            let w = g.param(&format!("bridge.l{l}.{part}.weight"))?;
            let b = g.param(&format!("bridge.l{l}.{part}.bias"))?;
            bridged.push(g.affine(last, w, Some(b))?);
        }
        layers.push((bridged[0], bridged[1]));
        seq = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| g.concat(&[*f, *b]))
            .collect::<Result<_, _>>()?;
    }
    Ok(EncodedState { layers })
}

/// Decoder input source for steps after the first.
#[derive(Debug, Clone, Copy)]
pub enum Decoding<'a> {
    /// Ground-truth previous points, `[B, 2]` per step, in pixels.
    TeacherForced(&'a [Var]),
    /// The decoder's own previous outputs.
    Autoregressive,
}

/// Runs the decoder for `out_steps` steps; returns `[B, 2]` points in pixels.
pub fn decode<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    state: &EncodedState,
    mode: Decoding<'_>,
) -> Result<Vec<Var>, NnError> {
    let s = &cfg.seq;
    if state.layers.len() != s.layers {
        return Err(NnError::ShapeMismatch(format!(
            "{} encoded layers for a {}-layer decoder",
            state.layers.len(),
            s.layers
        )));
    }
    for (h, c) in &state.layers {
        if g.shape(*h).get(1) != Some(&s.dec_hidden) || g.shape(*c) != g.shape(*h) {
            return Err(NnError::ShapeMismatch(format!("encoded state {:?}", g.shape(*h))));
        }
    }
    if let Decoding::TeacherForced(t) = mode {
        if t.len() != s.out_steps {
            return Err(NnError::ShapeMismatch(format!(
                "{} targets for {} steps",
                t.len(),
                s.out_steps
            )));
        }
    }
    let bsz = g.shape(state.layers[0].0)[0];
    let inv = T::from_f64(1.0 / s.coord_scale);
    let scale = T::from_f64(s.coord_scale);
    let weights: Vec<LstmWeights> = (1..=s.layers)
        .map(|l| LstmWeights::from_store(g, &format!("dec.l{l}")))
        .collect::<Result<_, _>>()?;
    let w_o = g.param("head.weight")?;
    let b_o = g.param("head.bias")?;

    let start: Vec<T> = (0..bsz)
        .flat_map(|_| [T::from_f64(s.start_token.0), T::from_f64(s.start_token.1)])
        .collect();
    let start = g.input(Tensor::new(vec![bsz, 2], start)?)?;
    let mut input = g.scale(start, inv)?;
    let mut states = state.layers.clone();
    let mut outputs = Vec::with_capacity(s.out_steps);
    for t in 0..s.out_steps {
        let mut x = input;
        for (st, wt) in states.iter_mut().zip(&weights) {
            *st = lstm_step(g, x, *st, wt)?;
            x = st.0;
        }
        let raw = g.affine(x, w_o, Some(b_o))?;
        outputs.push(g.scale(raw, scale)?);
        if t + 1 < s.out_steps {
            input = match mode {
                Decoding::TeacherForced(targets) => g.scale(targets[t], inv)?,
                Decoding::Autoregressive => raw,
            };
        }
    }
    Ok(outputs)
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[B, 2]` per step, in pixels.
    pub points: Vec<Var>,
    /// Batch mean of the per-sample mean L1 distance, when targets are given.
    pub loss: Option<Var>,
}

/// Per-step `[B, 2]` target inputs from 50-point trajectories.
pub fn target_inputs<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    targets: &[&PenTrajectory],
    with_grad: bool,
) -> Result<Vec<Var>, NnError> {
    let n = cfg.seq.out_steps;
    if let Some(t) = targets.iter().find(|t| t.len() != n) {
        return Err(NnError::ShapeMismatch(format!(
            "target has {} points, expected {n}",
            t.len()
        )));
    }
    (0..n)
        .map(|k| {
            let data = targets
                .iter()
                .flat_map(|t| {
                    let p = t.points()[k];
                    [T::from_f64(p.x), T::from_f64(p.y)]
                })
                .collect();
            let t = Tensor::new(vec![targets.len(), 2], data)?;
            if with_grad {
                g.input_with_grad(t)
            } else {
                g.input(t)
            }
        })
        .collect()
}

/// `(1/n′)·Σ_t ‖ẑ_t − Z_t‖₁`, averaged over the batch.
pub fn l1_loss<T: Scalar>(g: &mut Graph<'_, T>, points: &[Var], targets: &[Var]) -> Result<Var, NnError> {
    if points.len() != targets.len() || points.is_empty() {
        return Err(NnError::ShapeMismatch(format!(
            "{} outputs vs {} targets",
            points.len(),
            targets.len()
        )));
    }
    let bsz = g.shape(points[0])[0];
    let mut total: Option<Var> = None;
    for (p, t) in points.iter().zip(targets) {
        let d = g.l1_diff_sum(*p, *t)?;
        total = Some(match total {
            Some(acc) => g.add(acc, d)?,
            None => d,
        });
    }
    let total = total.expect("nonempty");
    g.scale(total, T::from_f64(1.0 / (points.len() * bsz) as f64))
}

/// Image batch → points (and loss when `targets` is given). Teacher forcing
/// applies only with targets.
pub fn forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    cfg: &ModelConfig,
    images: &[&RasterImage],
    targets: Option<&[&PenTrajectory]>,
    teacher_forcing: bool,
) -> Result<ForwardOutput, NnError> {
    let input = g.input(image_batch(images)?)?;
    let xs = extract_feature_sequence(g, cfg, input)?;
    let state = encode(g, cfg, &xs)?;
    let tvars = match targets {
        Some(t) => Some(target_inputs(g, cfg, t, false)?),
        None => None,
    };
    let mode = match (&tvars, teacher_forcing) {
        (Some(t), true) => Decoding::TeacherForced(t),
        _ => Decoding::Autoregressive,
    };
    let points = decode(g, cfg, &state, mode)?;
    let loss = match &tvars {
        Some(t) => Some(l1_loss(g, &points, t)?),
        None => None,
    };
    Ok(ForwardOutput { points, loss })
}

/// Reads per-sample trajectories out of `[B, 2]` step outputs.
pub fn to_trajectories<T: Scalar>(g: &Graph<'_, T>, points: &[Var]) -> Result<Vec<PenTrajectory>, NnError> {
    let bsz = points.first().map_or(0, |p| g.shape(*p)[0]);
    (0..bsz)
        .map(|b| {
            let pts = points
                .iter()
                .map(|p| {
                    let v = g.value(*p);
                    Point::new(v[2 * b].as_f64(), v[2 * b + 1].as_f64())
                })
                .collect();
            PenTrajectory::new(pts).map_err(|e| NnError::ShapeMismatch(e.to_string()))
        })
        .collect()
}

/// Autoregressive prediction with batchnorm in eval mode.
pub fn predict<T: Scalar>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    images: &[&RasterImage],
) -> Result<Vec<PenTrajectory>, NnError> {
    let mut g = Graph::new(store, Mode::Eval, false);
    let out = forward(&mut g, cfg, images, None, false)?;
    to_trajectories(&g, &out.points)
}

/// Mean over points of `|Δx| + |Δy|`.
pub fn trajectory_l1(pred: &PenTrajectory, target: &PenTrajectory) -> Result<f64, NnError> {
    if pred.len() != target.len() {
        return Err(NnError::ShapeMismatch(format!(
            "{} vs {} points",
            pred.len(),
            target.len()
        )));
    }
    let sum: f64 = pred
        .points()
        .iter()
        .zip(target.points())
        .map(|(a, b)| (a.x - b.x).abs() + (a.y - b.y).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}
