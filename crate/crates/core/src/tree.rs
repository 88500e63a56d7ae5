//! Recursive crossing trees.
//!
//! The root is the coarse upward crossing; every node's children are the
//! steps of one embedded conditioned walk at the next finer scale, recorded
//! in depth-first pre-order in a flat arena. Depth-d trees for grid K grow
//! like K^(2d), so nodes are kept to 24 bytes and construction enforces a
//! node budget.
//!
//! Directions are stored in absolute orientation (+1 up, -1 down). The walk
//! inside a down-crossing is the mirror image of the conditioned walk, so the
//! local record of any node is obtained by multiplying child directions by
//! the node's own direction.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::walk::{sample_conditioned_walk, LatticeWalkPath};

/// Index of a node in the arena. The root is `NodeId(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub u32);

#[derive(Clone, Debug)]
pub struct Node {
    pub duration: f64,
    /// Size of the subtree rooted here, including the node itself.
    pub subtree: u32,
    pub child_count: u32,
    pub depth: u8,
    /// +1 for an upward crossing, -1 for a downward one (absolute).
    pub direction: i8,
}

#[derive(Clone, Debug)]
pub struct CrossingTree {
    pub k: u32,
    pub max_depth: u32,
    nodes: Vec<Node>,
}

/// How leaf durations are assigned.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DurationMode {
    /// Leaf at depth d gets its exact mean K^(-2d).
    Mean,
    /// Leaf at depth d gets an independent exit-time draw scaled by K^(-2d).
    Sampled,
}

impl DurationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DurationMode::Mean => "mean",
            DurationMode::Sampled => "sampled",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(DurationMode::Mean),
            "sampled" => Ok(DurationMode::Sampled),
            other => Err(Error::InvalidParameter(format!(
                "unknown duration mode '{other}' (expected mean|sampled)"
            ))),
        }
    }
}

pub const DEFAULT_NODE_CAP: u64 = 100_000_000;

impl CrossingTree {
    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Children in time order.
    pub fn children(&self, id: NodeId) -> ChildIter<'_> {
        let n = &self.nodes[id.0 as usize];
        ChildIter {
            tree: self,
            next: id.0 + 1,
            remaining: n.child_count,
        }
    }

    /// The embedded walk recorded by this node's children, in local
    /// orientation (starts at 0, ends at +K). `None` for leaves.
    pub fn child_walk(&self, id: NodeId) -> Option<LatticeWalkPath> {
        let n = self.node(id);
        if n.child_count == 0 {
            return None;
        }
        let mut levels = Vec::with_capacity(n.child_count as usize + 1);
        let mut x = 0i32;
        levels.push(x);
        for c in self.children(id) {
            x += (self.node(c).direction * n.direction) as i32;
            levels.push(x);
        }
        Some(LatticeWalkPath { k: self.k, levels })
    }

    /// Child directions in absolute orientation.
    pub fn child_directions(&self, id: NodeId) -> impl Iterator<Item = i8> + '_ {
        self.children(id).map(move |c| self.node(c).direction)
    }

    /// Mutable access used by duration assignment and the loaders.
    pub(crate) fn nodes_mut(&mut self) -> &mut Vec<Node> {
        &mut self.nodes
    }

    pub(crate) fn from_parts(k: u32, max_depth: u32, nodes: Vec<Node>) -> Self {
        Self { k, max_depth, nodes }
    }

    /// Verify duration additivity: every internal node's duration equals the
    /// sum of its children's within `tol` (relative).
    pub fn validate_durations(&self, tol: f64) -> Result<()> {
        for i in 0..self.nodes.len() {
            let id = NodeId(i as u32);
            let n = self.node(id);
            if n.child_count == 0 {
                continue;
            }
            let sum: f64 = self.children(id).map(|c| self.node(c).duration).sum();
            if (sum - n.duration).abs() > tol * n.duration.abs().max(1.0) {
                return Err(Error::Format(format!(
                    "duration mismatch at node {i}: {} vs child sum {sum}",
                    n.duration
                )));
            }
        }
        Ok(())
    }
}

pub struct ChildIter<'a> {
    tree: &'a CrossingTree,
    next: u32,
    remaining: u32,
}

impl<'a> Iterator for ChildIter<'a> {
    type Item = NodeId;

    fn next(&mut self) -> Option<NodeId> {
        if self.remaining == 0 {
            return None;
        }
        let id = NodeId(self.next);
        self.next += self.tree.nodes[self.next as usize].subtree;
        self.remaining -= 1;
        Some(id)
    }
}

/// Build a crossing tree of the given depth. Structure only; durations are
/// assigned by [`assign_durations`].
///
/// Generation is keyed by node path: the walk of a node reached by child
/// indices (i1, .., id) from the root is drawn from
/// `rng.substream(i1)...substream(id)`, so subtrees could be regenerated in
/// any order without changing the result.
pub fn build_crossing_tree(
    k: u32,
    max_depth: u32,
    node_cap: u64,
    rng: &RngStream,
) -> Result<CrossingTree> {
    if k < 2 {
        return Err(Error::InvalidParameter("K must be at least 2".into()));
    }
    let mut nodes: Vec<Node> = Vec::new();
    nodes.push(Node {
        duration: 0.0,
        subtree: 1,
        child_count: 0,
        depth: 0,
        direction: 1,
    });
    grow(&mut nodes, 0, 0, 1, k, max_depth, node_cap, rng)?;
    Ok(CrossingTree {
        k,
        max_depth,
        nodes,
    })
}

#[allow(clippy::too_many_arguments)]
fn grow(
    nodes: &mut Vec<Node>,
    at: usize,
    depth: u32,
    direction: i8,
    k: u32,
    max_depth: u32,
    node_cap: u64,
    stream: &RngStream,
) -> Result<()> {
    if depth >= max_depth {
        return Ok(());
    }
    let mut walk_rng = stream.substream(u64::MAX); // walk draw; children use 0..n
    let walk = sample_conditioned_walk(k, &mut walk_rng);
    let child_count = walk.len() as u32;
    if nodes.len() as u64 + child_count as u64 > node_cap {
        return Err(Error::NodeBudget { cap: node_cap });
    }
    nodes[at].child_count = child_count;
    let signs: Vec<i8> = walk.steps().map(|(_, s)| s * direction).collect();
    for (i, sign) in signs.into_iter().enumerate() {
        let child_at = nodes.len();
        nodes.push(Node {
            duration: 0.0,
            subtree: 1,
            child_count: 0,
            depth: (depth + 1) as u8,
            direction: sign,
        });
        grow(
            nodes,
            child_at,
            depth + 1,
            sign,
            k,
            max_depth,
            node_cap,
            &stream.substream(i as u64),
        )?;
        let sub = (nodes.len() - child_at) as u32;
        nodes[child_at].subtree = sub;
    }
    nodes[at].subtree = (nodes.len() - at) as u32;
    Ok(())
}

/// Fill in durations bottom-up. Leaves at depth d get K^(-2d) in mean mode or
/// an independent exit-time draw scaled by K^(-2d) in sampled mode; internal
/// nodes get the sum of their children.
///
/// Sampling ignores each crossing's exit side: for a symmetric interval
/// started at the center, exit side and exit time are independent (checked by
/// a Monte Carlo oracle in the tests).
pub fn assign_durations(tree: &mut CrossingTree, mode: DurationMode, rng: &RngStream) {
    let k2 = (tree.k as f64) * (tree.k as f64);
    let n = tree.len();
    // Leaves first. Key the draw by node index so the pass order is free.
    for i in 0..n {
        let node = &tree.nodes()[i];
        if node.child_count != 0 {
            continue;
        }
        let scale = k2.powi(-(node.depth as i32));
        let d = match mode {
            DurationMode::Mean => scale,
            DurationMode::Sampled => {
                let mut r = rng.substream(i as u64);
                scale * crate::exit_time::sample_exit_time(&mut r)
            }
        };
        tree.nodes_mut()[i].duration = d;
    }
    // Pre-order arena: children lie after parents, so a reverse pass sums up.
    for i in (0..n).rev() {
        if tree.nodes()[i].child_count == 0 {
            continue;
        }
        let id = NodeId(i as u32);
        let sum: f64 = tree.children(id).map(|c| tree.node(c).duration).sum();
        tree.nodes_mut()[i].duration = sum;
    }
}

/// Absolute x-offsets (start times) of every node, from durations.
pub fn node_offsets(tree: &CrossingTree) -> Vec<f64> {
    let mut offsets = vec![0.0f64; tree.len()];
    for i in 0..tree.len() {
        let id = NodeId(i as u32);
        let mut x = offsets[i];
        for c in tree.children(id) {
            offsets[c.0 as usize] = x;
            x += tree.node(c).duration;
        }
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_zero_is_single_root() {
        let rng = RngStream::new(1);
        let t = build_crossing_tree(5, 0, DEFAULT_NODE_CAP, &rng).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.node(t.root()).child_count, 0);
    }

    #[test]
    fn children_form_valid_walks() {
        let rng = RngStream::new(2);
        let t = build_crossing_tree(4, 3, DEFAULT_NODE_CAP, &rng).unwrap();
        for i in 0..t.len() {
            let id = NodeId(i as u32);
            if let Some(w) = t.child_walk(id) {
                w.validate().unwrap();
                assert!(w.len() >= t.k as usize);
            }
        }
    }

    #[test]
    fn down_node_child_walk_ends_at_minus_k_in_absolute_units() {
        let rng = RngStream::new(3);
        let t = build_crossing_tree(3, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        let mut seen_down = false;
        for i in 0..t.len() {
            let id = NodeId(i as u32);
            let n = t.node(id);
            if n.child_count == 0 || n.direction != -1 {
                continue;
            }
            seen_down = true;
            let sum: i32 = t.child_directions(id).map(|d| d as i32).sum();
            assert_eq!(sum, -(t.k as i32));
        }
        assert!(seen_down);
    }

    #[test]
    fn determinism_bit_identical() {
        let rng = RngStream::new(77);
        let a = build_crossing_tree(5, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        let b = build_crossing_tree(5, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.nodes().iter().zip(b.nodes()) {
            assert_eq!(x.direction, y.direction);
            assert_eq!(x.child_count, y.child_count);
        }
        let mut am = a.clone();
        let mut bm = b.clone();
        assign_durations(&mut am, DurationMode::Sampled, &rng);
        assign_durations(&mut bm, DurationMode::Sampled, &rng);
        for (x, y) in am.nodes().iter().zip(bm.nodes()) {
            assert_eq!(x.duration.to_bits(), y.duration.to_bits());
        }
    }

    #[test]
    fn node_budget_is_enforced() {
        let rng = RngStream::new(4);
        let err = build_crossing_tree(5, 4, 200, &rng).unwrap_err();
        assert!(matches!(err, Error::NodeBudget { cap: 200 }));
    }

    #[test]
    fn mean_mode_durations_are_exact() {
        let rng = RngStream::new(5);
        let mut t = build_crossing_tree(3, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        assign_durations(&mut t, DurationMode::Mean, &rng);
        let k2 = 9.0f64;
        for i in 0..t.len() {
            let n = &t.nodes()[i];
            if n.child_count == 0 {
                assert_eq!(n.duration, k2.powi(-(n.depth as i32)));
            }
        }
        t.validate_durations(1e-12).unwrap();
    }

    #[test]
    fn sampled_mode_leaf_mean_matches_scale() {
        let rng = RngStream::new(6);
        let mut t = build_crossing_tree(5, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        assign_durations(&mut t, DurationMode::Sampled, &rng);
        t.validate_durations(1e-12).unwrap();
        let mut leaf_durations: Vec<f64> = Vec::new();
        for n in t.nodes() {
            if n.child_count == 0 && n.depth == 2 {
                // leaf duration = K^(-2d) * sigma draw; rescale to unit mean
                leaf_durations.push(n.duration * 5.0f64.powi(4));
            }
        }
        assert!(leaf_durations.len() > 100);
        let (mean, se) = crate::stats::mean_se(&leaf_durations);
        assert!(
            (mean - 1.0).abs() < 3.0 * se,
            "scaled leaf mean {mean} (se {se})"
        );
    }

    #[test]
    fn exit_side_and_exit_time_are_independent() {
        // Simple-walk oracle: from the center of a symmetric interval, the
        // exit time distribution conditional on each exit side is the same.
        let mut rng = RngStream::new(7);
        let barrier = 20i32;
        let mut up_times: Vec<f64> = Vec::new();
        let mut down_times: Vec<f64> = Vec::new();
        for _ in 0..4000 {
            let mut x = 0i32;
            let mut steps = 0u64;
            while x.abs() < barrier {
                x += if rng.next_bool(0.5) { 1 } else { -1 };
                steps += 1;
            }
            if x > 0 {
                up_times.push(steps as f64);
            } else {
                down_times.push(steps as f64);
            }
        }
        let (_, p) = crate::stats::ks_two_sample(&up_times, &down_times);
        assert!(p > 0.01, "exit side correlates with exit time, p = {p}");
    }

    #[test]
    fn offsets_partition_parent_extent() {
        let rng = RngStream::new(8);
        let mut t = build_crossing_tree(4, 2, DEFAULT_NODE_CAP, &rng).unwrap();
        assign_durations(&mut t, DurationMode::Sampled, &rng);
        let offsets = node_offsets(&t);
        for i in 0..t.len() {
            let id = NodeId(i as u32);
            let n = t.node(id);
            if n.child_count == 0 {
                continue;
            }
            let mut expected = offsets[i];
            for c in t.children(id) {
                assert!((offsets[c.0 as usize] - expected).abs() < 1e-12);
                expected += t.node(c).duration;
            }
            assert!((expected - (offsets[i] + n.duration)).abs() < 1e-9);
        }
    }
}
