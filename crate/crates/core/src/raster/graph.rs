//! Skeleton graphs: endpoints and junctions as nodes, pixel chains as edges.

use std::collections::BTreeSet;

use super::{RasterError, RasterImage, NEIGHBORS8};
use crate::trajectory::Point;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    /// Degree-1 stroke end.
    Endpoint,
    /// Three or more branches meet here.
    Junction,
    /// Artificial node: anchors a loop without other nodes, or an isolated
    /// pixel.
    Anchor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonNode {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Representative pixel (cluster pixel nearest the cluster centroid).
    pub pixel: (usize, usize),
    /// All pixels owned by the node; more than one for merged junctions.
    pub pixels: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonEdge {
    pub id: EdgeId,
    /// `(start, end)`; `chain[0]` touches `start`, the last chain pixel
    /// touches `end`.
    pub endpoints: (NodeId, NodeId),
    pub chain: Vec<(usize, usize)>,
}

impl SkeletonEdge {
    pub fn is_self_loop(&self) -> bool {
        self.endpoints.0 == self.endpoints.1
    }

    pub fn other(&self, node: NodeId) -> NodeId {
        if self.endpoints.0 == node {
            self.endpoints.1
        } else {
            self.endpoints.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelOwner {
    Background,
    Node(NodeId),
    /// Edge id and index into its chain.
    Edge(EdgeId, usize),
}

#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    width: usize,
    height: usize,
    nodes: Vec<SkeletonNode>,
    edges: Vec<SkeletonEdge>,
    owner: Vec<PixelOwner>,
}

impl SkeletonGraph {
    pub fn nodes(&self) -> &[SkeletonNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[SkeletonEdge] {
        &self.edges
    }

    pub fn node(&self, id: NodeId) -> &SkeletonNode {
        &self.nodes[id]
    }

    pub fn edge(&self, id: EdgeId) -> &SkeletonEdge {
        &self.edges[id]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn owner(&self, x: usize, y: usize) -> PixelOwner {
        if x < self.width && y < self.height {
            self.owner[y * self.width + x]
        } else {
            PixelOwner::Background
        }
    }

    /// Number of edge ends incident to `node`; self-loops count twice.
    pub fn degree(&self, node: NodeId) -> usize {
        self.edges
            .iter()
            .map(|e| (e.endpoints.0 == node) as usize + (e.endpoints.1 == node) as usize)
            .sum()
    }

    pub fn incident_edges(&self, node: NodeId) -> impl Iterator<Item = &SkeletonEdge> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.endpoints.0 == node || e.endpoints.1 == node)
    }

    pub fn junction_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Junction).count()
    }

    pub fn endpoint_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Endpoint).count()
    }

    pub fn node_point(&self, id: NodeId) -> Point {
        let (x, y) = self.nodes[id].pixel;
        Point::new(x as f64, y as f64)
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for n in &self.nodes {
            let d = self.degree(n.id);
            match n.kind {
                NodeKind::Endpoint if d != 1 => return Err(format!("endpoint {} has degree {d}", n.id)),
                NodeKind::Junction if d < 3 => return Err(format!("junction {} has degree {d}", n.id)),
                _ => {}
            }
        }
        let degree_sum: usize = (0..self.nodes.len()).map(|n| self.degree(n)).sum();
        if degree_sum != 2 * self.edges.len() {
            return Err(format!("degree sum {degree_sum} != 2 x {} edges", self.edges.len()));
        }
        let adjacent =
            |a: (usize, usize), b: (usize, usize)| a != b && a.0.abs_diff(b.0) <= 1 && a.1.abs_diff(b.1) <= 1;
        let touches = |node: NodeId, p: (usize, usize)| self.nodes[node].pixels.iter().any(|q| adjacent(*q, p));
        for e in &self.edges {
            for w in e.chain.windows(2) {
                if !adjacent(w[0], w[1]) {
                    return Err(format!("edge {} chain is not 8-connected", e.id));
                }
            }
            match (e.chain.first(), e.chain.last()) {
                (Some(&f), Some(&l)) => {
                    if !touches(e.endpoints.0, f) || !touches(e.endpoints.1, l) {
                        return Err(format!("edge {} chain does not touch its nodes", e.id));
                    }
                }
                _ => {
                    let a = &self.nodes[e.endpoints.0];
                    if !a.pixels.iter().any(|&p| touches(e.endpoints.1, p)) {
                        return Err(format!("empty edge {} joins non-adjacent nodes", e.id));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the node/edge graph of a thin skeleton image.
///
/// Pixels with one 8-neighbor are endpoints, pixels with three or more are
/// junction pixels; adjacent junction pixels merge into a single node. Edges
/// are the maximal pixel chains between nodes. A closed loop without any node
/// gets an artificial node at its top-left-most pixel and a self-loop edge.
pub fn build_skeleton_graph(skel: &RasterImage) -> Result<SkeletonGraph, RasterError> {
    if let Some((x, y)) = skel.first_thick_pixel() {
        return Err(RasterError::NotThin(x, y));
    }
    let (w, h) = (skel.width(), skel.height());
    let idx = |x: usize, y: usize| y * w + x;
    let mut count = vec![0usize; w * h];
    for (x, y) in skel.foreground() {
        count[idx(x, y)] = skel.neighbor_count(x, y);
    }
    let neighbors = |x: usize, y: usize| {
        NEIGHBORS8.iter().filter_map(move |(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            skel.get_signed(nx, ny).then_some((nx as usize, ny as usize))
        })
    };

    let mut owner = vec![PixelOwner::Background; w * h];
    let mut nodes: Vec<SkeletonNode> = Vec::new();

    // Node pixels, clustered; row-major scan makes ids deterministic.
    for (x, y) in skel.foreground() {
        let c = count[idx(x, y)];
        if c == 2 || owner[idx(x, y)] != PixelOwner::Background {
            continue;
        }
        let id = nodes.len();
        let mut pixels = vec![(x, y)];
        owner[idx(x, y)] = PixelOwner::Node(id);
        let kind = match c {
            0 => NodeKind::Anchor,
            1 => NodeKind::Endpoint,
            _ => {
                let mut stack = vec![(x, y)];
                while let Some((cx, cy)) = stack.pop() {
                    for (nx, ny) in neighbors(cx, cy) {
                        if count[idx(nx, ny)] >= 3 && owner[idx(nx, ny)] == PixelOwner::Background {
                            owner[idx(nx, ny)] = PixelOwner::Node(id);
                            pixels.push((nx, ny));
                            stack.push((nx, ny));
                        }
                    }
                }
                NodeKind::Junction
            }
        };
        pixels.sort_by_key(|&(px, py)| (py, px));
        let pixel = representative(&pixels);
        nodes.push(SkeletonNode {
            id,
            kind,
            pixel,
            pixels,
        });
    }

    let mut edges: Vec<SkeletonEdge> = Vec::new();
    let mut direct_pairs = BTreeSet::new();

    // Follows a chain starting at `first`, entered from node pixel `from`.
    // Returns the chain and the node it ends at.
    let trace = |owner: &[PixelOwner], from: (usize, usize), first: (usize, usize)| {
        let mut chain = vec![first];
        let mut prev = from;
        let mut cur = first;
        loop {
            let next = neighbors(cur.0, cur.1).find(|&q| q != prev && !chain.contains(&q));
            let Some(next) = next else {
                // Both neighbors already seen: the chain closed on itself
                // through `prev`'s node.
                let end = neighbors(cur.0, cur.1)
                    .find_map(|q| match owner[idx(q.0, q.1)] {
                        PixelOwner::Node(n) => Some(n),
                        _ => None,
                    })
                    .expect("chain pixel next to a node");
                return (chain, end);
            };
            if let PixelOwner::Node(n) = owner[idx(next.0, next.1)] {
                return (chain, n);
            }
            chain.push(next);
            prev = cur;
            cur = next;
        }
    };

    #[allow(clippy::needless_range_loop)] // the body pushes into nodes[node_id]
    for node_id in 0..nodes.len() {
        let node_pixels = nodes[node_id].pixels.clone();
        for &p in &node_pixels {
            for q in neighbors(p.0, p.1).collect::<Vec<_>>() {
                match owner[idx(q.0, q.1)] {
                    PixelOwner::Node(other) if other != node_id => {
                        let key = (node_id.min(other), node_id.max(other));
                        if direct_pairs.insert(key) {
                            edges.push(SkeletonEdge {
                                id: edges.len(),
                                endpoints: key,
                                chain: Vec::new(),
                            });
                        }
                    }
                    PixelOwner::Background => {
                        let (chain, end) = trace(&owner, p, q);
                        if end == node_id && chain.len() <= 2 {
                            // Tiny notch inside a junction cluster, not a loop.
                            for &c in &chain {
                                owner[idx(c.0, c.1)] = PixelOwner::Node(node_id);
                                nodes[node_id].pixels.push(c);
                            }
                            continue;
                        }
                        let id = edges.len();
                        for (i, &c) in chain.iter().enumerate() {
                            owner[idx(c.0, c.1)] = PixelOwner::Edge(id, i);
                        }
                        edges.push(SkeletonEdge {
                            id,
                            endpoints: (node_id, end),
                            chain,
                        });
                    }
                    _ => {}
                }
            }
        }
    }

    // Whatever is left consists of closed loops without nodes.
    for (x, y) in skel.foreground() {
        if owner[idx(x, y)] != PixelOwner::Background {
            continue;
        }
        let id = nodes.len();
        owner[idx(x, y)] = PixelOwner::Node(id);
        nodes.push(SkeletonNode {
            id,
            kind: NodeKind::Anchor,
            pixel: (x, y),
            pixels: vec![(x, y)],
        });
        let first = neighbors(x, y).next().expect("loop pixel has two neighbors");
        let (chain, end) = trace(&owner, (x, y), first);
        let eid = edges.len();
        for (i, &c) in chain.iter().enumerate() {
            owner[idx(c.0, c.1)] = PixelOwner::Edge(eid, i);
        }
        edges.push(SkeletonEdge {
            id: eid,
            endpoints: (id, end),
            chain,
        });
    }

    let mut graph = SkeletonGraph {
        width: w,
        height: h,
        nodes,
        edges,
        owner,
    };
    for i in 0..graph.nodes.len() {
        graph.nodes[i].pixels.sort_by_key(|&(px, py)| (py, px));
        let d = graph.degree(i);
        let node = &mut graph.nodes[i];
        node.kind = match (node.kind, d) {
            (NodeKind::Junction, 1) => NodeKind::Endpoint,
            (NodeKind::Junction, 0 | 2) => NodeKind::Anchor,
            (k, _) => k,
        };
    }
    Ok(graph)
}

fn representative(pixels: &[(usize, usize)]) -> (usize, usize) {
    let n = pixels.len() as f64;
    let cx = pixels.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let cy = pixels.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    super::nearest_pixel(pixels, Point::new(cx, cy))
}
