//! Structural evaluation: start point (SP), junction point (JP) and complete
//! trajectory (CT) accuracy, plus a graph-tracing baseline.

mod baseline;
mod edges;
pub mod fixtures;
mod metrics;

use std::collections::HashMap;
use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::data::TrainingPair;
use crate::raster::{build_skeleton_graph, skeletonize, RasterError};
use crate::trajectory::{PenTrajectory, ResampleSpec, TrajectoryError};

pub use baseline::baseline_trace;
pub use edges::{to_edge_sequence, EdgeSequence, EdgeVisit};
pub use metrics::{ct_correct, jp_score, junction_transitions, sp_correct, start_distance, SP_TOLERANCE};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("edge sequence does not belong to this graph: {0}")]
    GraphMismatch(String),
    #[error("skeleton graph has no nodes to start from")]
    NoEndpoint,
    #[error("recovery failed: {0}")]
    Recovery(String),
}

/// Anything that turns an offline sample into a pen trajectory.
pub trait Recoverer {
    fn name(&self) -> &str;
    fn recover(&mut self, sample: &TrainingPair) -> Result<PenTrajectory, EvalError>;
}

/// The graph-tracing baseline.
#[derive(Debug, Clone, Default)]
pub struct BaselineRecoverer {
    pub spec: ResampleSpec,
}

impl Recoverer for BaselineRecoverer {
    fn name(&self) -> &str {
        "graph-trace baseline"
    }

    fn recover(&mut self, sample: &TrainingPair) -> Result<PenTrajectory, EvalError> {
        let skel = skeletonize(&sample.image)?;
        let graph = build_skeleton_graph(&skel)?;
        baseline_trace(&graph, self.spec)
    }
}

/// Returns the ground truth; every metric should be perfect.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleRecoverer;

impl Recoverer for OracleRecoverer {
    fn name(&self) -> &str {
        "ground truth"
    }

    fn recover(&mut self, sample: &TrainingPair) -> Result<PenTrajectory, EvalError> {
        Ok(sample.target.clone())
    }
}

/// Returns the ground truth walked backwards.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReversedRecoverer;

impl Recoverer for ReversedRecoverer {
    fn name(&self) -> &str {
        "reversed ground truth"
    }

    fn recover(&mut self, sample: &TrainingPair) -> Result<PenTrajectory, EvalError> {
        Ok(sample.target.reversed())
    }
}

/// Fixed predictions looked up by sample id.
#[derive(Debug, Clone, Default)]
pub struct ScriptedRecoverer {
    pub name: String,
    pub predictions: HashMap<String, PenTrajectory>,
}

impl Recoverer for ScriptedRecoverer {
    fn name(&self) -> &str {
        &self.name
    }

    fn recover(&mut self, sample: &TrainingPair) -> Result<PenTrajectory, EvalError> {
        self.predictions
            .get(&sample.id)
            .cloned()
            .ok_or_else(|| EvalError::Recovery(format!("no prediction for {}", sample.id)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub id: String,
    pub sp: bool,
    pub start_distance: Option<f64>,
    pub jp_correct: usize,
    pub jp_total: usize,
    pub ct: bool,
    pub gt_edges: usize,
    pub pred_edges: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub method: String,
    pub samples: Vec<SampleOutcome>,
    pub sp_correct: usize,
    pub jp_correct: usize,
    pub jp_total: usize,
    pub ct_correct: usize,
}

fn ratio(n: usize, d: usize) -> Option<f64> {
    (d > 0).then(|| n as f64 / d as f64)
}

fn percent(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |r| format!("{:.2}%", 100.0 * r))
}

impl EvalReport {
    pub fn from_outcomes(method: impl Into<String>, samples: Vec<SampleOutcome>) -> Self {
        for s in &samples {
            assert!(!s.ct || s.sp, "sample {} is CT-correct without a correct start", s.id);
            assert!(s.jp_correct <= s.jp_total);
        }
        let sp_correct = samples.iter().filter(|s| s.sp).count();
        let ct_correct = samples.iter().filter(|s| s.ct).count();
        let jp_correct = samples.iter().map(|s| s.jp_correct).sum();
        let jp_total = samples.iter().map(|s| s.jp_total).sum();
        EvalReport {
            method: method.into(),
            samples,
            sp_correct,
            jp_correct,
            jp_total,
            ct_correct,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sp_rate(&self) -> Option<f64> {
        ratio(self.sp_correct, self.len())
    }

    /// `None` when the evaluated images contain no junctions.
    pub fn jp_rate(&self) -> Option<f64> {
        ratio(self.jp_correct, self.jp_total)
    }

    pub fn ct_rate(&self) -> Option<f64> {
        ratio(self.ct_correct, self.len())
    }

    pub fn failures(&self) -> usize {
        self.samples.iter().filter(|s| s.error.is_some()).count()
    }

    /// `method,metric,correct,total,rate`, one row per metric.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,metric,correct,total,rate\n");
        let rows = [
            ("SP", self.sp_correct, self.len(), self.sp_rate()),
            ("JP", self.jp_correct, self.jp_total, self.jp_rate()),
            ("CT", self.ct_correct, self.len(), self.ct_rate()),
        ];
        for (name, c, t, r) in rows {
            let rate = r.map_or_else(String::new, |r| format!("{r:.6}"));
            let _ = writeln!(out, "{},{name},{c},{t},{rate}", csv_field(&self.method));
        }
        out
    }

    pub fn samples_csv(&self) -> String {
        let mut out = String::from("id,sp,start_distance,jp_correct,jp_total,ct,gt_edges,pred_edges,error\n");
        for s in &self.samples {
            let d = s.start_distance.map_or_else(String::new, |d| format!("{d:.3}"));
            let _ = writeln!(
                out,
                "{},{},{d},{},{},{},{},{},{}",
                csv_field(&s.id),
                s.sp as u8,
                s.jp_correct,
                s.jp_total,
                s.ct as u8,
                s.gt_edges,
                s.pred_edges,
                csv_field(s.error.as_deref().unwrap_or("")),
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Side-by-side table of several methods, one row per metric.
pub fn comparison_table(reports: &[&EvalReport]) -> String {
    let labels = [
        "Starting Point (SP) accuracy",
        "Junction Points (JP) accuracy",
        "Complete Trajectory (CT) accuracy",
    ];
    let width = labels.iter().map(|l| l.len()).max().unwrap_or(0);
    let cols: Vec<usize> = reports.iter().map(|r| r.method.len().max(20)).collect();
    let mut out = format!("{:width$}", "Metric");
    for (r, w) in reports.iter().zip(&cols) {
        let _ = write!(out, " | {:>w$}", r.method);
    }
    out.push('\n');
    out.push_str(&"-".repeat(width + cols.iter().map(|w| w + 3).sum::<usize>()));
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        let _ = write!(out, "{label:width$}");
        for (r, w) in reports.iter().zip(&cols) {
            let cell = match i {
                0 => format!("{} ({}/{})", percent(r.sp_rate()), r.sp_correct, r.len()),
                1 => format!("{} ({}/{})", percent(r.jp_rate()), r.jp_correct, r.jp_total),
                _ => format!("{} ({}/{})", percent(r.ct_rate()), r.ct_correct, r.len()),
            };
            let _ = write!(out, " | {cell:>w$}");
        }
        out.push('\n');
    }
    out
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&comparison_table(&[self]))?;
        if self.failures() > 0 {
            writeln!(f, "{} sample(s) failed and count as incorrect", self.failures())?;
        }
        Ok(())
    }
}

/// Scores one prediction against the sample's ground truth.
pub fn score_sample(sample: &TrainingPair, pred: Result<PenTrajectory, EvalError>, tolerance: f64) -> SampleOutcome {
    let mut out = SampleOutcome {
        id: sample.id.clone(),
        sp: false,
        start_distance: None,
        jp_correct: 0,
        jp_total: 0,
        ct: false,
        gt_edges: 0,
        pred_edges: 0,
        error: None,
    };
    let skel = match skeletonize(&sample.image) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let graph = match build_skeleton_graph(&skel) {
        Ok(g) => g,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.jp_total = graph.junction_count();
    let result = (|| -> Result<(), EvalError> {
        let gt_seq = to_edge_sequence(&sample.target, &graph, &skel)?;
        out.gt_edges = gt_seq.len();
        let pred = pred?;
        let pred_seq = to_edge_sequence(&pred, &graph, &skel)?;
        out.pred_edges = pred_seq.len();
        let d = start_distance(&pred, &sample.target, &skel)?;
        out.start_distance = Some(d);
        out.sp = d <= tolerance;
        let (c, t) = jp_score(&pred_seq, &gt_seq, &graph)?;
        out.jp_correct = c;
        out.jp_total = t;
        out.ct = ct_correct(&pred_seq, &gt_seq, out.sp);
        Ok(())
    })();
    if let Err(e) = result {
        out.error = Some(e.to_string());
    }
    out
}

/// Runs `recoverer` over `samples`. Failures are recorded per sample and
/// scored as incorrect.
pub fn evaluate(samples: &[TrainingPair], recoverer: &mut dyn Recoverer, tolerance: f64) -> EvalReport {
    let outcomes = samples
        .iter()
        .map(|s| score_sample(s, recoverer.recover(s), tolerance))
        .collect();
    EvalReport::from_outcomes(recoverer.name(), outcomes)
}
