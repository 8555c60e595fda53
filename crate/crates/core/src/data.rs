//! Synthetic glyphs, dataset files and the online-to-offline conversion that
//! turns a pen trajectory into an (image, target) training pair.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::raster::{rasterize, RasterImage, DEFAULT_THICKNESS};
use crate::trajectory::{normalize_to_box, resample_uniform, PenTrajectory, Point, ResampleSpec, TrajectoryError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GlyphClass {
    Line,
    Curve,
    Loop,
    Junctioned,
}

impl GlyphClass {
    pub const ALL: [GlyphClass; 4] = [
        GlyphClass::Line,
        GlyphClass::Curve,
        GlyphClass::Loop,
        GlyphClass::Junctioned,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GlyphClass::Line => "line",
            GlyphClass::Curve => "curve",
            GlyphClass::Loop => "loop",
            GlyphClass::Junctioned => "junctioned",
        }
    }
}

impl fmt::Display for GlyphClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GlyphClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GlyphClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown glyph class {s:?}"))
    }
}

/// Parameters of one synthetic glyph.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub seed: u64,
    pub class: GlyphClass,
    /// Inclusive range of chained segments for `Curve` glyphs.
    pub segments: (usize, usize),
    /// Approximate extent of the glyph in raw units.
    pub size: f64,
}

impl GlyphSpec {
    pub fn new(class: GlyphClass, seed: u64) -> Self {
        Self {
            seed,
            class,
            segments: (2, 4),
            size: 100.0,
        }
    }
}

/// One online sample: raw pen positions, in writing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub label: Option<String>,
    pub points: Vec<[f64; 2]>,
}

impl DatasetRecord {
    pub fn trajectory(&self) -> Result<PenTrajectory, TrajectoryError> {
        PenTrajectory::new(self.points.iter().map(|p| Point::new(p[0], p[1])).collect())
    }
}

/// An offline image together with its 50-point normalized target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub id: String,
    pub image: RasterImage,
    pub target: PenTrajectory,
}

fn quad_bezier(p0: Point, c: Point, p2: Point, samples: usize, out: &mut Vec<Point>) {
    for i in 1..=samples {
        let t = i as f64 / samples as f64;
        let u = 1.0 - t;
        out.push(Point::new(
            u * u * p0.x + 2.0 * u * t * c.x + t * t * p2.x,
            u * u * p0.y + 2.0 * u * t * c.y + t * t * p2.y,
        ));
    }
}

fn dir(theta: f64) -> Point {
    Point::new(theta.cos(), theta.sin())
}

fn line_glyph(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let theta = rng.gen_range(0.0..2.0 * PI);
    let len = rng.gen_range(0.5..1.0);
    let d = dir(theta);
    vec![Point::new(0.0, 0.0), Point::new(d.x * len, d.y * len)]
}

/// Chained G1-continuous quadratic segments whose total absolute turning
/// stays below 180°, so the stroke never crosses itself.
fn curve_glyph(rng: &mut ChaCha8Rng, segments: (usize, usize)) -> Vec<Point> {
    let (lo, hi) = (segments.0.max(1), segments.1.max(segments.0.max(1)));
    let k = rng.gen_range(lo..=hi);
    let budget = 170f64.to_radians();
    let mut used = 0.0;
    let mut theta = rng.gen_range(0.0..2.0 * PI);
    let mut p = Point::new(0.0, 0.0);
    let mut out = vec![p];
    for _ in 0..k {
        let len = rng.gen_range(0.6..1.0);
        let mut turn = rng.gen_range(20f64.to_radians()..60f64.to_radians());
        turn = turn.min(budget - used).max(0.0);
        used += turn;
        if rng.gen_bool(0.5) {
            turn = -turn;
        }
        let c = Point::new(p.x + dir(theta).x * len / 2.0, p.y + dir(theta).y * len / 2.0);
        theta += turn;
        let end = Point::new(c.x + dir(theta).x * len / 2.0, c.y + dir(theta).y * len / 2.0);
        quad_bezier(p, c, end, 16, &mut out);
        p = end;
    }
    out
}

/// A tail running into a circle that closes back on the tail's end point.
fn loop_glyph(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let r = 1.0;
    let phi = rng.gen_range(0.0..2.0 * PI);
    let ccw = rng.gen_bool(0.5);
    let sign = if ccw { 1.0 } else { -1.0 };
    let p = Point::new(r * phi.cos(), r * phi.sin());
    let n = dir(phi);
    let t = Point::new(-phi.sin() * sign, phi.cos() * sign);
    let beta = rng.gen_range(20f64.to_radians()..45f64.to_radians());
    let tail_len = rng.gen_range(1.2..2.2) * r;
    let a = Point::new(
        p.x + tail_len * (n.x * beta.cos() - t.x * beta.sin()),
        p.y + tail_len * (n.y * beta.cos() - t.y * beta.sin()),
    );
    let mut out = Vec::new();
    for i in 0..12 {
        out.push(a.lerp(p, i as f64 / 12.0));
    }
    let steps = 48;
    for i in 0..=steps {
        let ang = phi + sign * 2.0 * PI * i as f64 / steps as f64;
        out.push(Point::new(r * ang.cos(), r * ang.sin()));
    }
    out
}

/// Two curve pieces sharing an interior crossing point (nodal-cubic
/// "alpha" shape), drawn as one smooth stroke.
fn junctioned_glyph(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let k = rng.gen_range(0.6..1.4);
    let t0 = -rng.gen_range(1.25..1.6);
    let t1 = rng.gen_range(1.25..1.6);
    let bend = rng.gen_range(-0.15..0.15);
    let steps = 96;
    (0..=steps)
        .map(|i| {
            let t = t0 + (t1 - t0) * i as f64 / steps as f64;
            let x = t * t - 1.0;
            let y = k * t * (t * t - 1.0) + bend * x * x;
            Point::new(x, y)
        })
        .collect()
}

/// Open strokes start at the end nearer the top-left corner (smaller
/// `x + y`, y pointing down), as left-to-right writers tend to draw them.
/// Under a uniformly random rotation the image alone would not tell the two
/// ends of a stroke apart.
fn orient_like_writing(points: &mut [Point]) {
    let (a, b) = (points[0], points[points.len() - 1]);
    if b.x + b.y < a.x + a.y {
        points.reverse();
    }
}

/// Deterministic glyph construction from a seed.
pub fn generate_glyph(spec: &GlyphSpec) -> DatasetRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape = match spec.class {
        GlyphClass::Line => line_glyph(&mut rng),
        GlyphClass::Curve => curve_glyph(&mut rng, spec.segments),
        GlyphClass::Loop => loop_glyph(&mut rng),
        GlyphClass::Junctioned => junctioned_glyph(&mut rng),
    };
    // Random rotation and mild anisotropic scale, then fit to `size`.
    let rot = rng.gen_range(0.0..2.0 * PI);
    let stretch = rng.gen_range(0.85..1.15);
    let (s, c) = rot.sin_cos();
    let shaped: Vec<Point> = shape
        .iter()
        .map(|p| Point::new((c * p.x - s * p.y) * stretch, s * p.x + c * p.y))
        .collect();
    let (mut lo, mut hi) = (shaped[0], shaped[0]);
    for p in &shaped {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    let extent = (hi.x - lo.x).max(hi.y - lo.y).max(f64::EPSILON);
    let scale = spec.size / extent;
    let mut shaped = shaped;
    if spec.class != GlyphClass::Loop {
        orient_like_writing(&mut shaped);
    }
    let points = shaped
        .iter()
        .map(|p| [(p.x - lo.x) * scale, (p.y - lo.y) * scale])
        .collect();
    DatasetRecord {
        id: format!("{}-{}", spec.class, spec.seed),
        label: Some(spec.class.name().to_string()),
        points,
    }
}

/// Mixes a corpus seed with a class and index into an independent glyph seed.
fn glyph_seed(seed: u64, class: GlyphClass, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add((class as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `per_class` glyphs of every requested class, ids `<class>-<index>`.
pub fn generate_corpus(seed: u64, per_class: usize, classes: &[GlyphClass]) -> Vec<DatasetRecord> {
    let mut out = Vec::with_capacity(per_class * classes.len());
    for &class in classes {
        for i in 0..per_class {
            let mut rec = generate_glyph(&GlyphSpec::new(class, glyph_seed(seed, class, i)));
            rec.id = format!("{class}-{i:05}");
            out.push(rec);
        }
    }
    out
}

/// Order-sensitive SHA-256 over ids and coordinate bit patterns, as hex.
pub fn corpus_digest(records: &[DatasetRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update((r.id.len() as u64).to_le_bytes());
        h.update(r.id.as_bytes());
        h.update((r.points.len() as u64).to_le_bytes());
        for p in &r.points {
            h.update(p[0].to_le_bytes());
            h.update(p[1].to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Online record → (offline image, 50-point target). Both derive from the
/// same normalized polyline; the image is drawn from the full-resolution
/// polyline, not from the resampled target.
pub fn make_pair(record: &DatasetRecord) -> Result<TrainingPair, TrajectoryError> {
    make_pair_with(record, DEFAULT_THICKNESS, ResampleSpec::default())
}

pub fn make_pair_with(
    record: &DatasetRecord,
    thickness: usize,
    spec: ResampleSpec,
) -> Result<TrainingPair, TrajectoryError> {
    let normalized = normalize_to_box(&record.trajectory()?)?;
    let target = resample_uniform(&normalized, spec)?;
    let image = rasterize(&normalized, thickness);
    Ok(TrainingPair {
        id: record.id.clone(),
        image,
        target,
    })
}

pub fn save_dataset<W: Write>(mut out: W, records: &[DatasetRecord]) -> Result<(), DataError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| std::io::Error::other(e.to_string()))?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_dataset<R: BufRead>(input: R) -> Result<Vec<DatasetRecord>, DataError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| DataError::ParseError {
            line: line_no,
            message: e.to_string(),
        })?;
        rec.trajectory().map_err(|e| DataError::ParseError {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(DataError::DuplicateId {
                line: line_no,
                id: rec.id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn save_dataset_file(path: &std::path::Path, records: &[DatasetRecord]) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    save_dataset(std::io::BufWriter::new(file), records)
}

pub fn load_dataset_file(path: &std::path::Path) -> Result<Vec<DatasetRecord>, DataError> {
    let file = std::fs::File::open(path)?;
    load_dataset(std::io::BufReader::new(file))
}

/// Reads a plain point dump: one `x y` pair per line, strokes separated by
/// blank lines. Strokes are concatenated in file order.
pub fn read_point_text<R: BufRead>(
    input: R,
    id: &str,
    label: Option<&str>,
) -> Result<(DatasetRecord, usize), DataError> {
    let mut points = Vec::new();
    let mut strokes = 0;
    let mut in_stroke = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            in_stroke = false;
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let parse = |f: Option<&str>| -> Result<f64, DataError> {
            f.and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::ParseError {
                    line: i + 1,
                    message: format!("expected `x y`, found {trimmed:?}"),
                })
        };
        let x = parse(fields.next())?;
        let y = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(DataError::ParseError {
                line: i + 1,
                message: format!("expected `x y`, found {trimmed:?}"),
            });
        }
        if !in_stroke {
            strokes += 1;
            in_stroke = true;
        }
        points.push([x, y]);
    }
    let rec = DatasetRecord {
        id: id.to_string(),
        label: label.map(str::to_string),
        points,
    };
    rec.trajectory()?;
    Ok((rec, strokes))
}
