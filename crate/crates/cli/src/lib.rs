//! The `pentrace` command line: generate synthetic glyph datasets, train the
//! recovery model, score it (or the graph-trace baseline) and draw results.

pub mod svg;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pentrace_core::data::{
    generate_corpus, load_dataset_file, make_pair, save_dataset_file, DataError, GlyphClass, TrainingPair,
};
use pentrace_core::eval::fixtures::{crafted_fixtures, scripted};
use pentrace_core::eval::{comparison_table, evaluate, BaselineRecoverer, EvalReport, SP_TOLERANCE};
use pentrace_core::raster::read_pgm;
use pentrace_core::{PenTrajectory, Point, RasterError, TrajectoryError};
use pentrace_nn::checkpoint::{load_checkpoint, save_checkpoint};
use pentrace_nn::trainer::{loss_csv, loss_csv_path, parse_config};
use pentrace_nn::{train, ModelRecoverer, NnError, TrainConfig};
use thiserror::Error;

pub use svg::{render_svg, SvgError};

/// Prefix of every error line on standard error.
pub const ERROR_PREFIX: &str = "pentrace: error:";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: DataError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: RasterError },
    #[error("sample {id}: {source}")]
    Sample { id: String, source: TrajectoryError },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Svg(#[from] SvgError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Parser)]
#[command(
    name = "pentrace",
    version,
    about = "Stroke-order recovery from offline glyph images"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic glyph dataset (one JSON record per line).
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus its loss history.
    Train(TrainArgs),
    /// Score a checkpoint and/or the graph-trace baseline.
    Eval(EvalArgs),
    /// Recover the drawing order of one PGM image.
    Recover(RecoverArgs),
    /// Draw a dataset sample and/or a prediction as SVG.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub per_class: usize,
    /// Comma-separated subset of line, curve, loop, junctioned.
    #[arg(long, value_delimiter = ',', default_values_t = GlyphClass::ALL)]
    pub classes: Vec<GlyphClass>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Validation set; the checkpoint keeps the epoch with the lowest
    /// validation loss.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// `key = value` training and model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss history CSV [default: next to the checkpoint, `.loss.csv`].
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Directory for periodic checkpoints.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "fixtures", conflicts_with = "fixtures")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Score the graph-trace baseline (next to the model when both are given).
    #[arg(long)]
    pub baseline: bool,
    /// Use the five hand-scored fixtures instead of a dataset; without
    /// `--ckpt` or `--baseline` their scripted predictions are scored.
    #[arg(long)]
    pub fixtures: bool,
    /// Score raw decoder output instead of skeleton-snapped points.
    #[arg(long)]
    pub no_snap: bool,
    /// Write the summary as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write per-sample outcomes as CSV.
    #[arg(long)]
    pub samples_csv: Option<PathBuf>,
    /// Write a histogram of predicted x and y values (needs `--ckpt`).
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RecoverArgs {
    /// 64×64 binary PGM (P5), nonzero = ink.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the recovered points as `x,y` CSV.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub no_snap: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sample to draw from `--data`.
    #[arg(long, requires = "data")]
    pub id: Option<String>,
    /// Predicted points as `x,y` CSV.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Leave out the sample image.
    #[arg(long)]
    pub no_image: bool,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn load_pairs(path: &Path) -> Result<Vec<TrainingPair>, CliError> {
    let records = load_dataset_file(path).map_err(|source| CliError::Data {
        path: path.to_path_buf(),
        source,
    })?;
    records
        .iter()
        .map(|r| {
            make_pair(r).map_err(|source| CliError::Sample {
                id: r.id.clone(),
                source,
            })
        })
        .collect()
}

/// Reads `x,y` rows; a non-numeric first row is taken as a header.
pub fn read_points_csv(path: &Path) -> Result<PenTrajectory, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(x, y)| Some(Point::new(x.trim().parse().ok()?, y.trim().parse().ok()?)));
        match parsed {
            Some(p) => pts.push(p),
            None if i == 0 => {}
            None => {
                return Err(CliError::Invalid(format!(
                    "{}: line {}: expected `x,y`",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    PenTrajectory::new(pts).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn points_csv(t: &PenTrajectory) -> String {
    let mut out = String::from("x,y\n");
    for p in t.points() {
        let _ = writeln!(out, "{:.4},{:.4}", p.x, p.y);
    }
    out
}

pub const HISTOGRAM_LO: f64 = -16.0;
pub const HISTOGRAM_HI: f64 = 80.0;
pub const HISTOGRAM_BIN: f64 = 2.0;

/// Counts of predicted x and y values in 2 px bins over [−16, 80), with open
/// bins for anything outside.
pub fn histogram_csv(trajs: &[PenTrajectory]) -> String {
    let bins = ((HISTOGRAM_HI - HISTOGRAM_LO) / HISTOGRAM_BIN) as usize;
    let mut counts = [vec![0usize; bins + 2], vec![0usize; bins + 2]];
    for t in trajs {
        for p in t.points() {
            for (axis, v) in [p.x, p.y].into_iter().enumerate() {
                let slot = if v < HISTOGRAM_LO {
                    0
                } else if v >= HISTOGRAM_HI {
                    bins + 1
                } else {
                    1 + ((v - HISTOGRAM_LO) / HISTOGRAM_BIN) as usize
                };
                counts[axis][slot] += 1;
            }
        }
    }
    let mut out = String::from("axis,bin_start,bin_end,count\n");
    for (axis, name) in ["x", "y"].iter().enumerate() {
        for (slot, c) in counts[axis].iter().enumerate() {
            let (lo, hi) = if slot == 0 {
                ("-inf".to_string(), format!("{HISTOGRAM_LO}"))
            } else if slot == bins + 1 {
                (format!("{HISTOGRAM_HI}"), "inf".to_string())
            } else {
                let lo = HISTOGRAM_LO + (slot - 1) as f64 * HISTOGRAM_BIN;
                (format!("{lo}"), format!("{}", lo + HISTOGRAM_BIN))
            };
            let _ = writeln!(out, "{name},{lo},{hi},{c}");
        }
    }
    out
}

fn gen(args: &GenArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.classes.is_empty() {
        return Err(CliError::Invalid("no glyph classes given".into()));
    }
    let records = generate_corpus(args.seed, args.per_class, &args.classes);
    save_dataset_file(&args.out, &records).map_err(|source| CliError::Data {
        path: args.out.clone(),
        source,
    })?;
    let _ = writeln!(stdout, "wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

fn train_cmd(args: &TrainArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (cfg, model) = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path).map_err(io_err(path))?)?,
        None => (TrainConfig::default(), Default::default()),
    };
    let data = load_pairs(&args.data)?;
    let val = args.val.as_deref().map(load_pairs).transpose()?;
    if let Some(dir) = &args.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let out = train(&model, &data, val.as_deref(), &cfg, args.checkpoint_dir.as_deref())?;
    save_checkpoint(&args.out, &model, &out.params, Some(&out.adam))?;
    let csv_path = args.loss_csv.clone().unwrap_or_else(|| loss_csv_path(&args.out));
    write_file(&csv_path, &loss_csv(&out.history))?;
    let last = out.history.last();
    let _ = writeln!(
        stdout,
        "trained {} steps over {} epochs; final train loss {:.4}; kept epoch {}",
        out.step_losses.len(),
        out.history.len(),
        last.map_or(f64::NAN, |r| r.train_loss),
        out.best_epoch
    );
    let _ = writeln!(stdout, "wrote {} and {}", args.out.display(), csv_path.display());
    Ok(())
}

fn eval_cmd(args: &EvalArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.histogram.is_some() && args.ckpt.is_none() {
        return Err(CliError::Invalid("--histogram needs --ckpt".into()));
    }
    let samples = match &args.data {
        Some(path) => load_pairs(path)?,
        None => crafted_fixtures().into_iter().map(|f| f.pair).collect(),
    };
    let mut reports: Vec<EvalReport> = Vec::new();
    if let Some(path) = &args.ckpt {
        let ck = load_checkpoint(path)?;
        let mut model = ModelRecoverer::new(ck.config, ck.params);
        model.snap = !args.no_snap;
        reports.push(evaluate(&samples, &mut model, SP_TOLERANCE));
        if let Some(h) = &args.histogram {
            model.snap = false;
            let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
            let raw = model.recover_images(&images)?;
            write_file(h, &histogram_csv(&raw))?;
        }
    }
    if args.baseline {
        reports.push(evaluate(&samples, &mut BaselineRecoverer::default(), SP_TOLERANCE));
    }
    if reports.is_empty() {
        if !args.fixtures {
            return Err(CliError::Invalid(
                "nothing to evaluate: give --ckpt and/or --baseline".into(),
            ));
        }
        reports.push(evaluate(&samples, &mut scripted(&crafted_fixtures()), SP_TOLERANCE));
    }
    let refs: Vec<&EvalReport> = reports.iter().collect();
    let _ = write!(stdout, "{}", comparison_table(&refs));
    let failures: usize = reports.iter().map(EvalReport::failures).sum();
    if failures > 0 {
        let _ = writeln!(stdout, "{failures} sample(s) could not be scored and count as wrong");
    }
    if let Some(path) = &args.csv {
        let mut text = String::new();
        for (i, r) in reports.iter().enumerate() {
            let csv = r.summary_csv();
            text.push_str(if i == 0 {
                &csv
            } else {
                csv.split_once('\n').map_or("", |(_, rest)| rest)
            });
        }
        write_file(path, &text)?;
    }
    if let Some(path) = &args.samples_csv {
        let mut text = String::new();
        for r in &reports {
            for line in r.samples_csv().lines().skip(usize::from(!text.is_empty())) {
                if text.is_empty() {
                    text.push_str("method,");
                } else {
                    let _ = write!(text, "{},", r.method);
                }
                text.push_str(line);
                text.push('\n');
            }
        }
        write_file(path, &text)?;
    }
    Ok(())
}

fn recover_cmd(args: &RecoverArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = std::fs::File::open(&args.image).map_err(io_err(&args.image))?;
    let image = read_pgm(std::io::BufReader::new(file)).map_err(|source| CliError::Image {
        path: args.image.clone(),
        source,
    })?;
    let ck = load_checkpoint(&args.ckpt)?;
    let mut model = ModelRecoverer::new(ck.config, ck.params);
    model.snap = !args.no_snap;
    let traj = model.recover_image(&image)?;
    write_file(&args.out, &render_svg(None, Some(&traj), Some(&image))?)?;
    if let Some(p) = &args.points {
        write_file(p, &points_csv(&traj))?;
    }
    let (s, e) = (traj.first(), traj.last());
    let _ = writeln!(
        stdout,
        "recovered {} points from ({:.1}, {:.1}) to ({:.1}, {:.1}); wrote {}",
        traj.len(),
        s.x,
        s.y,
        e.x,
        e.y,
        args.out.display()
    );
    Ok(())
}

fn render_cmd(args: &RenderArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let sample = match (&args.data, &args.id) {
        (Some(path), Some(id)) => {
            let pairs = load_pairs(path)?;
            let found = pairs.into_iter().find(|p| &p.id == id);
            Some(found.ok_or_else(|| CliError::Invalid(format!("{}: no sample with id {id:?}", path.display())))?)
        }
        (Some(_), None) => return Err(CliError::Invalid("--data needs --id".into())),
        _ => None,
    };
    let pred = args.pred.as_deref().map(read_points_csv).transpose()?;
    let image = sample.as_ref().filter(|_| !args.no_image).map(|s| &s.image);
    let svg = render_svg(sample.as_ref().map(|s| &s.target), pred.as_ref(), image)?;
    write_file(&args.out, &svg)?;
    let _ = writeln!(stdout, "wrote {}", args.out.display());
    Ok(())
}

pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Gen(a) => gen(a, stdout),
        Command::Train(a) => train_cmd(a, stdout),
        Command::Eval(a) => eval_cmd(a, stdout),
        Command::Recover(a) => recover_cmd(a, stdout),
        Command::Render(a) => render_cmd(a, stdout),
    }
}

/// Parses `argv` and runs it: 0 on success, 1 on a runtime failure, 2 on a
/// usage error. Help and version requests print and return 0.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{text}");
            } else {
                let _ = write!(stderr, "{text}");
            }
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(&cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "{ERROR_PREFIX} {e}");
            1
        }
    }
}
