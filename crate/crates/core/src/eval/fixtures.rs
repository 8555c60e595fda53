//! Hand-built evaluation cases with known scores.

use std::collections::HashMap;

use crate::data::{DatasetRecord, TrainingPair};
use crate::raster::{rasterize, RasterImage};
use crate::trajectory::{PenTrajectory, Point};

use super::ScriptedRecoverer;

/// Expected per-sample score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expected {
    pub sp: bool,
    pub jp_correct: usize,
    pub jp_total: usize,
    pub ct: bool,
}

#[derive(Debug, Clone)]
pub struct CraftedFixture {
    pub pair: TrainingPair,
    pub prediction: PenTrajectory,
    pub expected: Expected,
    /// What the graph-trace baseline should score on this image.
    pub baseline_expected: Expected,
}

/// Points every pixel or less along each polyline segment.
pub fn densify(vertices: &[(f64, f64)]) -> Vec<Point> {
    let mut out = vec![Point::new(vertices[0].0, vertices[0].1)];
    for w in vertices.windows(2) {
        let a = Point::new(w[0].0, w[0].1);
        let b = Point::new(w[1].0, w[1].1);
        let steps = a.distance(b).ceil().max(1.0) as usize;
        for i in 1..=steps {
            out.push(a.lerp(b, i as f64 / steps as f64));
        }
    }
    out
}

/// Pen trajectory made of separate strokes; pen-up jumps carry no points.
fn strokes(parts: &[&[(f64, f64)]]) -> PenTrajectory {
    PenTrajectory::new(parts.iter().flat_map(|s| densify(s)).collect()).expect("fixture geometry")
}

/// Draws each stroke separately so pen-up jumps leave no ink.
fn ink(parts: &[&[(f64, f64)]]) -> RasterImage {
    let mut img = RasterImage::new(64, 64);
    for s in parts {
        let t = PenTrajectory::new(densify(s)).expect("fixture geometry");
        for (x, y) in rasterize(&t, 1).foreground() {
            img.set(x, y, true);
        }
    }
    img
}

fn fixture(
    id: &str,
    gt: &[&[(f64, f64)]],
    pred: &[&[(f64, f64)]],
    expected: (bool, usize, usize, bool),
    baseline: (bool, usize, usize, bool),
) -> CraftedFixture {
    let e = |(sp, jp_correct, jp_total, ct)| Expected {
        sp,
        jp_correct,
        jp_total,
        ct,
    };
    CraftedFixture {
        pair: TrainingPair {
            id: id.to_string(),
            image: ink(gt),
            target: strokes(gt),
        },
        prediction: strokes(pred),
        expected: e(expected),
        baseline_expected: e(baseline),
    }
}

const PLUS_H: &[(f64, f64)] = &[(4.0, 32.0), (60.0, 32.0)];
const PLUS_V: &[(f64, f64)] = &[(32.0, 4.0), (32.0, 60.0)];
const LOOP: &[(f64, f64)] = &[
    (4.0, 40.0),
    (28.0, 40.0),
    (56.0, 40.0),
    (56.0, 12.0),
    (28.0, 12.0),
    (28.0, 40.0),
    (28.0, 60.0),
];

/// Five scripted predictions on four drawings.
///
/// | fixture         | SP | JP  | CT |
/// |-----------------|----|-----|----|
/// | line            | 1  | 0/0 | 1  |
/// | reversed line   | 0  | 0/0 | 0  |
/// | plus, correct   | 1  | 1/1 | 1  |
/// | plus, wrong arm | 1  | 0/1 | 0  |
/// | loop skipped    | 1  | 0/1 | 0  |
///
/// The baseline (top-left start, straightest continuation) gets the line
/// and the loop right, starts the reversed line and both pluses at the wrong
/// end, and leaves the plus after its first bar.
pub fn crafted_fixtures() -> Vec<CraftedFixture> {
    let line: &[(f64, f64)] = &[(8.0, 20.0), (56.0, 44.0)];
    let back: &[(f64, f64)] = &[(56.0, 44.0), (8.0, 20.0)];
    vec![
        fixture("line", &[line], &[line], (true, 0, 0, true), (true, 0, 0, true)),
        fixture(
            "reversed-line",
            &[back],
            &[line],
            (false, 0, 0, false),
            (false, 0, 0, false),
        ),
        fixture(
            "plus-correct",
            &[PLUS_H, PLUS_V],
            &[PLUS_H, PLUS_V],
            (true, 1, 1, true),
            (false, 0, 1, false),
        ),
        fixture(
            "plus-wrong-arm",
            &[PLUS_H, PLUS_V],
            &[
                &[(4.0, 32.0), (32.0, 32.0), (32.0, 4.0)],
                &[(32.0, 60.0), (32.0, 32.0), (60.0, 32.0)],
            ],
            (true, 0, 1, false),
            (false, 0, 1, false),
        ),
        fixture(
            "loop-skipped",
            &[LOOP],
            &[&[(4.0, 40.0), (28.0, 40.0), (28.0, 60.0)]],
            (true, 0, 1, false),
            (true, 1, 1, true),
        ),
    ]
}

/// Recoverer replaying the scripted fixture predictions.
pub fn scripted(fixtures: &[CraftedFixture]) -> ScriptedRecoverer {
    ScriptedRecoverer {
        name: "scripted".to_string(),
        predictions: fixtures
            .iter()
            .map(|f| (f.pair.id.clone(), f.prediction.clone()))
            .collect::<HashMap<_, _>>(),
    }
}

fn record(id: &str, vertices: &[(f64, f64)]) -> DatasetRecord {
    DatasetRecord {
        id: id.to_string(),
        label: None,
        points: densify(vertices).iter().map(|p| [p.x, p.y]).collect(),
    }
}

/// Single-stroke drawings that start at their top-left stroke end: four
/// without junctions and one X that crosses itself.
pub fn single_stroke_fixtures() -> Vec<DatasetRecord> {
    let arc: Vec<(f64, f64)> = (0..=48)
        .map(|i| {
            let t = std::f64::consts::PI * (1.0 - i as f64 / 48.0);
            (32.0 + 24.0 * t.cos(), 40.0 - 24.0 * t.sin())
        })
        .collect();
    let s_curve: Vec<(f64, f64)> = (0..=96)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / 96.0;
            (32.0 + 18.0 * t.sin(), 6.0 + 52.0 * i as f64 / 96.0)
        })
        .collect();
    // Diagonals crossing at (32, 32), joined on the right by a 270° arc
    // of radius 10 tangent to both.
    let (r, cx) = (10.0, 32.0 + 10.0 * std::f64::consts::SQRT_2);
    let mut x_crossing = vec![(10.0, 10.0)];
    x_crossing.extend((0..=54).map(|i| {
        let a = (135.0 - 270.0 * i as f64 / 54.0_f64).to_radians();
        (cx + r * a.cos(), 32.0 + r * a.sin())
    }));
    x_crossing.push((10.0, 54.0));
    vec![
        record("line", &[(10.0, 8.0), (54.0, 56.0)]),
        record("l-shape", &[(12.0, 6.0), (12.0, 56.0), (52.0, 56.0)]),
        record("arc", &arc),
        record("s-curve", &s_curve),
        record("x-crossing", &x_crossing),
    ]
}
