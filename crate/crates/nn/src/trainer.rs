use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pentrace_core::data::TrainingPair;
use pentrace_core::{PenTrajectory, RasterImage};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::checkpoint::save_checkpoint;
use crate::graph::{Graph, Mode};
use crate::model::{forward, init_params, predict, trajectory_l1, ModelConfig};
use crate::params::ParameterStore;
use crate::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
    pub teacher_forcing: bool,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_interval: usize,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Cosine-anneal the learning rate from `lr` down to this value over the
    /// planned steps; `None` keeps it constant.
    pub lr_final: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 0.001,
            l2: 1e-4,
            seed: 0,
            teacher_forcing: true,
            checkpoint_interval: 0,
            clip_norm: 5.0,
            max_steps: None,
            lr_final: None,
        }
    }
}

impl TrainConfig {
    /// Steps the run will take on `n` samples.
    pub fn planned_steps(&self, n: usize) -> usize {
        let all = self.epochs * n.div_ceil(self.batch_size);
        self.max_steps.map_or(all, |m| m.min(all))
    }

    /// Learning rate for the optimizer step with 0-based index `step`.
    pub fn lr_at(&self, step: usize, planned: usize) -> f64 {
        match self.lr_final {
            Some(end) if planned > 1 => {
                let t = (step.min(planned - 1) as f64) / (planned - 1) as f64;
                end + 0.5 * (self.lr - end) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            _ => self.lr,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be a finite non-negative number");
        }
        if self.lr_final.is_some_and(|f| !(f >= 0.0 && f.is_finite())) {
            return bad("lr_final must be a finite non-negative number");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be a finite non-negative number");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

fn parse_value<V: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<V, NnError> {
    v.parse()
        .map_err(|_| NnError::Config(format!("line {line}: bad value {v:?} for {key}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, NnError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(NnError::Config(format!("line {line}: bad value {v:?} for {key}"))),
    }
}

/// Parses `key = value` lines (`#` starts a comment). Training keys mirror
/// [`TrainConfig`]; model keys are `model` (`paper` or `small`, applied
/// before any other model key), `channels` (six comma-separated widths),
/// `enc_hidden`, `dec_hidden`, `layers` and `coord_scale`.
pub fn parse_config(text: &str) -> Result<(TrainConfig, ModelConfig), NnError> {
    let mut cfg = TrainConfig::default();
    let mut model = ModelConfig::default();
    let mut preset: Option<ModelConfig> = None;
    let mut overrides: Vec<(usize, String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| NnError::Config(format!("line {n}: expected `key = value`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "epochs" => cfg.epochs = parse_value(n, key, value)?,
            "batch_size" => cfg.batch_size = parse_value(n, key, value)?,
            "lr" => cfg.lr = parse_value(n, key, value)?,
            "l2" => cfg.l2 = parse_value(n, key, value)?,
            "seed" => cfg.seed = parse_value(n, key, value)?,
            "teacher_forcing" => cfg.teacher_forcing = parse_bool(n, key, value)?,
            "checkpoint_interval" => cfg.checkpoint_interval = parse_value(n, key, value)?,
            "clip_norm" => cfg.clip_norm = parse_value(n, key, value)?,
            "max_steps" => cfg.max_steps = Some(parse_value(n, key, value)?),
            "lr_final" => cfg.lr_final = Some(parse_value(n, key, value)?),
            "model" => {
                preset = Some(match value {
                    "paper" => ModelConfig::default(),
                    "small" => ModelConfig::small(),
                    _ => return Err(NnError::Config(format!("line {n}: unknown model {value:?}"))),
                })
            }
            "channels" | "enc_hidden" | "dec_hidden" | "layers" | "coord_scale" => {
                overrides.push((n, key.to_string(), value.to_string()))
            }
            _ => return Err(NnError::Config(format!("line {n}: unknown key {key:?}"))),
        }
    }
    if let Some(p) = preset {
        model = p;
    }
    for (n, key, value) in overrides {
        match key.as_str() {
            "channels" => {
                let widths: Vec<usize> = value
                    .split(',')
                    .map(|w| parse_value(n, &key, w.trim()))
                    .collect::<Result<_, _>>()?;
                model.cnn.channels = widths
                    .try_into()
                    .map_err(|_| NnError::Config(format!("line {n}: channels needs six widths")))?;
            }
            "enc_hidden" => model.seq.enc_hidden = parse_value(n, &key, &value)?,
            "dec_hidden" => model.seq.dec_hidden = parse_value(n, &key, &value)?,
            "layers" => model.seq.layers = parse_value(n, &key, &value)?,
            _ => model.seq.coord_scale = parse_value(n, &key, &value)?,
        }
    }
    cfg.validate()?;
    model.validate()?;
    Ok((cfg, model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss, or the final ones without
    /// a validation set.
    pub params: ParameterStore<f32>,
    pub final_params: ParameterStore<f32>,
    pub adam: AdamState<f32>,
    pub history: Vec<EpochRecord>,
    /// Teacher-forced batch loss of every optimizer step.
    pub step_losses: Vec<f64>,
    /// 1-based epoch `params` came from.
    pub best_epoch: usize,
}

/// `epoch,train_loss,val_loss`; the last column is empty without validation.
pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for r in history {
        let val = r.val_loss.map_or_else(String::new, |v| format!("{v:.6}"));
        let _ = writeln!(out, "{},{:.6},{val}", r.epoch, r.train_loss);
    }
    out
}

/// One teacher-forced (or free-running) optimizer step over a batch.
/// Returns the batch loss.
fn train_step(
    store: &mut ParameterStore<f32>,
    adam: &mut AdamState<f32>,
    model: &ModelConfig,
    batch: &[&TrainingPair],
    cfg: &TrainConfig,
) -> Result<Option<f64>, NnError> {
    let images: Vec<&RasterImage> = batch.iter().map(|p| &p.image).collect();
    let targets: Vec<&PenTrajectory> = batch.iter().map(|p| &p.target).collect();
    let (loss, grads, updates) = {
        let mut g = Graph::new(&*store, Mode::Train, true);
        let out = match forward(&mut g, model, &images, Some(&targets), cfg.teacher_forcing) {
            Ok(o) => o,
            Err(NnError::NonFiniteValue(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let loss = out.loss.expect("targets given");
        let value = g.value(loss)[0] as f64;
        let grads = g.backward(loss)?;
        (value, grads, g.take_buffer_updates())
    };
    store.zero_grad();
    grads.accumulate_into(store);
    let norm = store.grad_norm();
    if !norm.is_finite() {
        return Ok(None);
    }
    if norm > cfg.clip_norm {
        store.scale_grads((cfg.clip_norm / norm) as f32);
    }
    for (name, data) in updates {
        store.set_buffer(&name, data)?;
    }
    adam.step(store);
    Ok(Some(loss))
}

/// Trains from a fresh initialization seeded by `cfg.seed`.
///
/// Each epoch shuffles the training set with the seeded RNG and runs one
/// optimizer step per batch. With a validation set the parameters with the
/// lowest autoregressive validation L1 are returned in `params`. Checkpoints
/// go to `checkpoint_dir` (if any) every `checkpoint_interval` epochs; on a
/// non-finite loss the last good parameters are written there as
/// `last_good.ppck` before the error is returned.
pub fn train(
    model: &ModelConfig,
    data: &[TrainingPair],
    val: Option<&[TrainingPair]>,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    if data.is_empty() || val.is_some_and(|v| v.is_empty()) {
        return Err(NnError::EmptyDataset);
    }
    let mut store: ParameterStore<f32> = init_params(model, cfg.seed)?;
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        weight_decay: cfg.l2,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&store, adam_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_0dd5);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, ParameterStore<f32>)> = None;
    let planned = cfg.planned_steps(data.len());

    'epochs: for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut seen = 0;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step_losses.len() >= m) {
                break;
            }
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &data[i]).collect();
            adam.config.lr = cfg.lr_at(step_losses.len(), planned);
            let Some(loss) = train_step(&mut store, &mut adam, model, &batch, cfg)? else {
                if let Some(dir) = checkpoint_dir {
                    save_checkpoint(&dir.join("last_good.ppck"), model, &store, Some(&adam))?;
                }
                return Err(NnError::NonFiniteLoss {
                    epoch,
                    step: step_losses.len() + 1,
                });
            };
            step_losses.push(loss);
            sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        if seen == 0 {
            break 'epochs;
        }
        let val_loss = match val {
            Some(v) => Some(evaluate_loss(&store, model, v)?),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss: sum / seen as f64,
            val_loss,
        });
        if let Some(vl) = val_loss {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, epoch, store.clone()));
            }
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0 {
                save_checkpoint(&dir.join(format!("epoch-{epoch:04}.ppck")), model, &store, Some(&adam))?;
            }
        }
    }

    let last_epoch = history.last().map_or(0, |r| r.epoch);
    let (params, best_epoch) = match best {
        Some((_, e, p)) => (p, e),
        None => (store.clone(), last_epoch),
    };
    Ok(TrainOutcome {
        params,
        final_params: store,
        adam,
        history,
        step_losses,
        best_epoch,
    })
}

/// Autoregressive per-sample mean L1, batchnorm in eval mode, in input order.
pub fn per_sample_losses(
    params: &ParameterStore<f32>,
    model: &ModelConfig,
    data: &[TrainingPair],
) -> Result<Vec<f64>, NnError> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(32) {
        let images: Vec<&RasterImage> = chunk.iter().map(|p| &p.image).collect();
        let preds = predict(params, model, &images)?;
        for (p, s) in preds.iter().zip(chunk) {
            out.push(trajectory_l1(p, &s.target)?);
        }
    }
    Ok(out)
}

/// Mean of [`per_sample_losses`].
pub fn evaluate_loss(params: &ParameterStore<f32>, model: &ModelConfig, data: &[TrainingPair]) -> Result<f64, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let losses = per_sample_losses(params, model, data)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Default location for the loss history next to a checkpoint.
pub fn loss_csv_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("loss.csv")
}
