//! Pen trajectories: ordered 2-D point sequences, arc-length resampling and
//! normalization into the 64×64 image frame.
//!
//! Coordinates are pixels with the origin at the top-left corner, `x` the
//! column and `y` the row. Pixel `(i, j)` has its center at integer
//! coordinates `(i, j)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Side length of the square image frame trajectories are normalized into.
pub const FRAME_SIZE: f64 = 64.0;
/// Inner margin kept free so that thickening never clips at the border.
pub const FRAME_MARGIN: f64 = 2.0;
/// Number of points in a model target / prediction.
pub const DEFAULT_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(self, other: Point, t: f64) -> Point {
        Point::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("trajectory needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at index {0}")]
    NonFinite(usize),
    #[error("trajectory has zero arc length")]
    ZeroLengthTrajectory,
    #[error("bounding box has zero extent on both axes")]
    DegenerateBBox,
    #[error("resample count must be at least 2, got {0}")]
    InvalidResampleCount(usize),
    #[error("coordinate at index {0} is outside the [0, 64) frame")]
    OutOfFrame(usize),
}

/// Ordered sequence of pen positions.
///
/// Holds at least two finite points. A trajectory produced by
/// [`normalize_to_box`] carries the `normalized` flag and has every
/// coordinate in `[0, 64)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenTrajectory {
    points: Vec<Point>,
    normalized: bool,
}

impl PenTrajectory {
    pub fn new(points: Vec<Point>) -> Result<Self, TrajectoryError> {
        if points.len() < 2 {
            return Err(TrajectoryError::TooFewPoints(points.len()));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(TrajectoryError::NonFinite(i));
        }
        Ok(Self {
            points,
            normalized: false,
        })
    }

    pub fn from_pairs<I: IntoIterator<Item = (f64, f64)>>(pairs: I) -> Result<Self, TrajectoryError> {
        Self::new(pairs.into_iter().map(Point::from).collect())
    }

    /// Wraps points already known to lie in the image frame.
    pub fn new_normalized(points: Vec<Point>) -> Result<Self, TrajectoryError> {
        let mut traj = Self::new(points)?;
        if let Some(i) = traj.points.iter().position(|p| !in_frame(*p)) {
            return Err(TrajectoryError::OutOfFrame(i));
        }
        traj.normalized = true;
        Ok(traj)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn first(&self) -> Point {
        self.points[0]
    }

    pub fn last(&self) -> Point {
        self.points[self.points.len() - 1]
    }

    pub fn reversed(&self) -> Self {
        let mut points = self.points.clone();
        points.reverse();
        Self {
            points,
            normalized: self.normalized,
        }
    }

    /// Applies `f` to every point. The normalized flag survives only if the
    /// result still lies in the frame.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Result<Self, TrajectoryError> {
        let points: Vec<Point> = self.points.iter().map(|p| f(*p)).collect();
        let mut out = Self::new(points)?;
        out.normalized = self.normalized && out.points.iter().all(|p| in_frame(*p));
        Ok(out)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }
}

fn in_frame(p: Point) -> bool {
    (0.0..FRAME_SIZE).contains(&p.x) && (0.0..FRAME_SIZE).contains(&p.y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResampleSpec {
    pub n_points: usize,
}

impl Default for ResampleSpec {
    fn default() -> Self {
        Self {
            n_points: DEFAULT_POINTS,
        }
    }
}

impl ResampleSpec {
    pub fn new(n_points: usize) -> Result<Self, TrajectoryError> {
        if n_points < 2 {
            return Err(TrajectoryError::InvalidResampleCount(n_points));
        }
        Ok(Self { n_points })
    }
}

pub fn arc_length(traj: &PenTrajectory) -> f64 {
    traj.points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Resamples `traj` to `spec.n_points` points spaced evenly by arc length.
///
/// Output point `k` sits at cumulative arc length `k·L/(n−1)`; the first and
/// last points are copied from the input unchanged.
pub fn resample_uniform(traj: &PenTrajectory, spec: ResampleSpec) -> Result<PenTrajectory, TrajectoryError> {
    let n = spec.n_points;
    if n < 2 {
        return Err(TrajectoryError::InvalidResampleCount(n));
    }
    let pts = &traj.points;
    let mut cumulative = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    cumulative.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].distance(w[1]);
        cumulative.push(acc);
    }
    let total = acc;
    if total <= 0.0 {
        return Err(TrajectoryError::ZeroLengthTrajectory);
    }

    let mut out = Vec::with_capacity(n);
    out.push(pts[0]);
    let mut seg = 0;
    for k in 1..n - 1 {
        let target = total * k as f64 / (n - 1) as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        let p = if seg_len > 0.0 {
            let t = ((target - cumulative[seg]) / seg_len).clamp(0.0, 1.0);
            pts[seg].lerp(pts[seg + 1], t)
        } else {
            pts[seg]
        };
        out.push(p);
    }
    out.push(pts[pts.len() - 1]);

    let mut result = PenTrajectory::new(out)?;
    result.normalized = traj.normalized && result.points.iter().all(|p| in_frame(*p));
    Ok(result)
}

/// Maps the bounding box isotropically into `[2, 62]²`, centering the
/// shorter axis.
pub fn normalize_to_box(traj: &PenTrajectory) -> Result<PenTrajectory, TrajectoryError> {
    let (lo, hi) = traj.bbox();
    let ex = hi.x - lo.x;
    let ey = hi.y - lo.y;
    let extent = ex.max(ey);
    if extent <= 0.0 {
        return Err(TrajectoryError::DegenerateBBox);
    }
    let span = FRAME_SIZE - 2.0 * FRAME_MARGIN;
    let scale = span / extent;
    let center = FRAME_SIZE / 2.0;
    // Each axis is centered; for the longer one this lands exactly on the margin.
    let ox = center - scale * (lo.x + hi.x) / 2.0;
    let oy = center - scale * (lo.y + hi.y) / 2.0;
    let lo_bound = FRAME_MARGIN;
    let hi_bound = FRAME_SIZE - FRAME_MARGIN;
    let points = traj
        .points
        .iter()
        .map(|p| {
            Point::new(
                (scale * p.x + ox).clamp(lo_bound, hi_bound),
                (scale * p.y + oy).clamp(lo_bound, hi_bound),
            )
        })
        .collect();
    PenTrajectory::new_normalized(points)
}
