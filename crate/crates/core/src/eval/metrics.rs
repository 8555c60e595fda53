use std::collections::BTreeMap;

use crate::raster::{nearest_pixel, NodeId, NodeKind, RasterError, RasterImage, SkeletonGraph};
use crate::trajectory::{PenTrajectory, Point};

use super::edges::{EdgeSequence, EdgeVisit};
use super::EvalError;

/// Start-point tolerance, in pixels.
pub const SP_TOLERANCE: f64 = 3.0;

/// Distance between the skeleton-snapped first points of two trajectories.
pub fn start_distance(pred: &PenTrajectory, gt: &PenTrajectory, skel: &RasterImage) -> Result<f64, EvalError> {
    let pixels: Vec<(usize, usize)> = skel.foreground().collect();
    if pixels.is_empty() {
        return Err(RasterError::EmptyImage.into());
    }
    let (px, py) = nearest_pixel(&pixels, pred.first());
    let (gx, gy) = nearest_pixel(&pixels, gt.first());
    Ok(Point::new(px as f64, py as f64).distance(Point::new(gx as f64, gy as f64)))
}

pub fn sp_correct(
    pred: &PenTrajectory,
    gt: &PenTrajectory,
    skel: &RasterImage,
    tolerance: f64,
) -> Result<bool, EvalError> {
    Ok(start_distance(pred, gt, skel)? <= tolerance)
}

/// Ordered (incoming, outgoing) edge pairs observed at each junction.
pub fn junction_transitions(
    seq: &EdgeSequence,
    graph: &SkeletonGraph,
) -> Result<BTreeMap<NodeId, Vec<(EdgeVisit, EdgeVisit)>>, EvalError> {
    seq.check_against(graph)?;
    let is_junction = |n: NodeId| graph.node(n).kind == NodeKind::Junction;
    let mut out: BTreeMap<NodeId, Vec<(EdgeVisit, EdgeVisit)>> = BTreeMap::new();
    for w in seq.visits.windows(2) {
        let exit = EdgeSequence::exit_node(graph, w[0]);
        let entry = EdgeSequence::entry_node(graph, w[1]);
        if is_junction(exit) {
            out.entry(exit).or_default().push((w[0], w[1]));
        }
        if entry != exit && is_junction(entry) {
            out.entry(entry).or_default().push((w[0], w[1]));
        }
    }
    Ok(out)
}

/// Junctions whose transition list in `pred` matches `gt` exactly, out of all
/// junctions in the graph.
pub fn jp_score(pred: &EdgeSequence, gt: &EdgeSequence, graph: &SkeletonGraph) -> Result<(usize, usize), EvalError> {
    let p = junction_transitions(pred, graph)?;
    let g = junction_transitions(gt, graph)?;
    let junctions: Vec<NodeId> = graph
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Junction)
        .map(|n| n.id)
        .collect();
    let correct = junctions.iter().filter(|n| p.get(n) == g.get(n)).count();
    Ok((correct, junctions.len()))
}

pub fn ct_correct(pred: &EdgeSequence, gt: &EdgeSequence, sp: bool) -> bool {
    sp && pred == gt
}
