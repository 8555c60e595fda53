use crate::raster::{snap_to_skeleton, EdgeId, NodeId, PixelOwner, RasterImage, SkeletonGraph};
use crate::trajectory::PenTrajectory;

use super::EvalError;

/// One traversal of a skeleton edge. `forward` means the walk follows the
/// edge's chain from its start node towards its end node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeVisit {
    pub edge: EdgeId,
    pub forward: bool,
}

/// Ordered edge traversals of a trajectory, consecutive repeats compressed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeSequence {
    pub visits: Vec<EdgeVisit>,
}

impl EdgeSequence {
    pub fn len(&self) -> usize {
        self.visits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visits.is_empty()
    }

    /// Node a visit leaves through.
    pub fn exit_node(graph: &SkeletonGraph, v: EdgeVisit) -> NodeId {
        let (a, b) = graph.edge(v.edge).endpoints;
        if v.forward {
            b
        } else {
            a
        }
    }

    /// Node a visit enters through.
    pub fn entry_node(graph: &SkeletonGraph, v: EdgeVisit) -> NodeId {
        let (a, b) = graph.edge(v.edge).endpoints;
        if v.forward {
            a
        } else {
            b
        }
    }

    pub fn check_against(&self, graph: &SkeletonGraph) -> Result<(), EvalError> {
        match self.visits.iter().find(|v| v.edge >= graph.edges().len()) {
            Some(v) => Err(EvalError::GraphMismatch(format!("unknown edge {}", v.edge))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Edge(EdgeId, usize),
    Node(NodeId),
}

/// Snaps `traj` onto `skel` and reads off the sequence of edges it visits.
///
/// Points landing on node pixels count towards the edge of the next point
/// that lies on a chain (or the previous one, at the tail of the
/// trajectory). Direction is read from the chain indices visited.
pub fn to_edge_sequence(
    traj: &PenTrajectory,
    graph: &SkeletonGraph,
    skel: &RasterImage,
) -> Result<EdgeSequence, EvalError> {
    let snapped = snap_to_skeleton(traj, skel)?;
    let mut slots = Vec::with_capacity(snapped.len());
    for p in snapped.points() {
        let (x, y) = (p.x as usize, p.y as usize);
        slots.push(match graph.owner(x, y) {
            PixelOwner::Edge(e, i) => Slot::Edge(e, i),
            PixelOwner::Node(n) => Slot::Node(n),
            PixelOwner::Background => {
                return Err(EvalError::GraphMismatch(format!(
                    "skeleton pixel ({x}, {y}) is not in the graph"
                )))
            }
        });
    }

    // (edge, optional chain position); node points get virtual positions
    // just before / after the chain when they are that edge's end node.
    let mut assigned: Vec<(EdgeId, Option<isize>)> = Vec::with_capacity(slots.len());
    for (k, slot) in slots.iter().enumerate() {
        match *slot {
            Slot::Edge(e, i) => assigned.push((e, Some(i as isize))),
            Slot::Node(n) => {
                let ahead = slots[k + 1..].iter().find_map(|s| match s {
                    Slot::Edge(e, _) => Some(*e),
                    _ => None,
                });
                let behind = || {
                    slots[..k].iter().rev().find_map(|s| match s {
                        Slot::Edge(e, _) => Some(*e),
                        _ => None,
                    })
                };
                let Some(edge) = ahead.or_else(behind) else {
                    continue;
                };
                let ed = graph.edge(edge);
                let len = ed.chain.len() as isize;
                let pos = if ed.is_self_loop() {
                    None
                } else if ed.endpoints.0 == n {
                    Some(-1)
                } else if ed.endpoints.1 == n {
                    Some(len)
                } else {
                    None
                };
                assigned.push((edge, pos));
            }
        }
    }

    // Runs of equal edges.
    let mut runs: Vec<(EdgeId, Vec<isize>)> = Vec::new();
    for (e, pos) in assigned {
        match runs.last_mut() {
            Some((last, positions)) if *last == e => positions.extend(pos),
            _ => runs.push((e, pos.into_iter().collect())),
        }
    }

    let mut visits = Vec::with_capacity(runs.len());
    for (r, (edge, positions)) in runs.iter().enumerate() {
        let forward = match (positions.first(), positions.last()) {
            (Some(f), Some(l)) if f != l => l > f,
            _ => {
                // Not enough positions; orient by the neighboring runs.
                let (a, b) = graph.edge(*edge).endpoints;
                let touches = |other: EdgeId, node: NodeId| {
                    let (oa, ob) = graph.edge(other).endpoints;
                    oa == node || ob == node
                };
                let prev_at = |n: NodeId, m: NodeId| r > 0 && touches(runs[r - 1].0, n) && !touches(runs[r - 1].0, m);
                let next_at = |n: NodeId, m: NodeId| {
                    r + 1 < runs.len() && touches(runs[r + 1].0, n) && !touches(runs[r + 1].0, m)
                };
                prev_at(a, b) || !(prev_at(b, a) || next_at(a, b))
            }
        };
        visits.push(EdgeVisit { edge: *edge, forward });
    }
    Ok(EdgeSequence { visits })
}
