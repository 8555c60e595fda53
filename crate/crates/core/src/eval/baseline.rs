//! Greedy graph tracer: start at the top-left stroke end and at every node
//! continue along the unused branch that bends least.

use crate::raster::{EdgeId, NodeId, NodeKind, SkeletonGraph};
use crate::trajectory::{resample_uniform, PenTrajectory, Point, ResampleSpec};

use super::EvalError;

/// Turn cost, edge, direction and pixel walk of a candidate continuation.
type Candidate = (f64, EdgeId, bool, Vec<(usize, usize)>);

/// Pixels used to estimate a branch direction.
const TANGENT_SPAN: usize = 5;

fn start_node(graph: &SkeletonGraph) -> Option<NodeId> {
    let top_left = |kind: Option<NodeKind>| {
        graph
            .nodes()
            .iter()
            .filter(|n| kind.is_none_or(|k| n.kind == k))
            .min_by_key(|n| (n.pixel.1, n.pixel.0))
            .map(|n| n.id)
    };
    top_left(Some(NodeKind::Endpoint)).or_else(|| top_left(None))
}

/// Pixels of `edge` in walking order, ending on the far node pixel.
fn walk(graph: &SkeletonGraph, edge: EdgeId, forward: bool) -> Vec<(usize, usize)> {
    let e = graph.edge(edge);
    let mut px: Vec<(usize, usize)> = if forward {
        e.chain.clone()
    } else {
        e.chain.iter().rev().copied().collect()
    };
    let end = if forward { e.endpoints.1 } else { e.endpoints.0 };
    px.push(graph.node(end).pixel);
    px
}

fn direction(from: (usize, usize), to: (usize, usize)) -> (f64, f64) {
    (to.0 as f64 - from.0 as f64, to.1 as f64 - from.1 as f64)
}

fn turn(a: (f64, f64), b: (f64, f64)) -> f64 {
    let cross = a.0 * b.1 - a.1 * b.0;
    let dot = a.0 * b.0 + a.1 * b.1;
    cross.atan2(dot).abs()
}

/// Traces the skeleton graph into a trajectory of `spec.n_points` points.
pub fn baseline_trace(graph: &SkeletonGraph, spec: ResampleSpec) -> Result<PenTrajectory, EvalError> {
    let mut node = start_node(graph).ok_or(EvalError::NoEndpoint)?;
    let mut used = vec![false; graph.edges().len()];
    let mut path: Vec<(usize, usize)> = vec![graph.node(node).pixel];
    let mut heading: Option<(f64, f64)> = None;

    loop {
        let here = graph.node(node).pixel;
        let mut best: Option<Candidate> = None;
        for e in graph.incident_edges(node) {
            if used[e.id] {
                continue;
            }
            let mut orientations = Vec::with_capacity(2);
            if e.endpoints.0 == node {
                orientations.push(true);
            }
            if e.endpoints.1 == node {
                orientations.push(false);
            }
            for forward in orientations {
                let px = walk(graph, e.id, forward);
                let ahead = px[TANGENT_SPAN.min(px.len()) - 1];
                let cost = match heading {
                    Some(h) if ahead != here => turn(h, direction(here, ahead)),
                    _ => 0.0,
                };
                let better = match &best {
                    None => true,
                    Some((c, id, fw, _)) => (cost, e.id, !forward) < (*c, *id, !*fw),
                };
                if better {
                    best = Some((cost, e.id, forward, px));
                }
            }
        }
        let Some((_, edge, forward, px)) = best else {
            break;
        };
        used[edge] = true;
        path.extend(px);
        let arrival = path[path.len() - 1];
        let back = path[path.len().saturating_sub(TANGENT_SPAN + 1)];
        heading = (back != arrival).then(|| direction(back, arrival));
        let e = graph.edge(edge);
        node = if forward { e.endpoints.1 } else { e.endpoints.0 };
    }

    let points: Vec<Point> = path.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
    let raw = if points.len() < 2 { vec![points[0]; 2] } else { points };
    let traj = PenTrajectory::new(raw)?;
    match resample_uniform(&traj, spec) {
        Ok(t) => Ok(t),
        // Everything sits on one pixel.
        Err(_) => Ok(PenTrajectory::new(vec![traj.first(); spec.n_points])?),
    }
}
