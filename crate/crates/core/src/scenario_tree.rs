//! Finite scenario trees and processes adapted to them.
//!
//! A [`ScenarioTree`] is a rooted, non-recombining tree over a time grid
//! `0 = t_0 < ... < t_M = T`. Nodes are stored in breadth-first order with
//! the children of every node contiguous, so the nodes of a given depth and
//! the leaves below a given node both occupy contiguous index ranges. All
//! expectations reduce to exact probability-weighted sums over nodes.
//!
//! Branches carry a label: with `F` driving factors a node has `2^F`
//! children and bit `j` of the child label selects the sign of the `j`-th
//! symmetric `±√Δt` Brownian increment (bit clear is the up move).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default cap on the depth of a binary tree; larger trees are refused.
pub const DEFAULT_DEPTH_CAP: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("invalid tree parameter: {0}")]
    InvalidParameter(String),
    #[error("tree too large: {nodes} nodes exceeds the limit of {limit}")]
    TooLarge { nodes: usize, limit: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("malformed tree document: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub parent: Option<usize>,
    pub depth: usize,
    /// Label of the branch leading into this node (0 for the root).
    pub branch: usize,
    /// Conditional probability of reaching this node from its parent.
    pub branch_prob: f64,
    first_child: usize,
    child_count: usize,
}

impl Node {
    pub fn children(&self) -> std::ops::Range<usize> {
        self.first_child..self.first_child + self.child_count
    }

    pub fn is_leaf(&self) -> bool {
        self.child_count == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    times: Vec<f64>,
    factors: usize,
    nodes: Vec<Node>,
    node_prob: Vec<f64>,
    depth_start: Vec<usize>,
    leaf_range: Vec<(usize, usize)>,
}

/// Builder-level limits for tree construction.
#[derive(Debug, Clone, Copy)]
pub struct TreeLimits {
    pub depth_cap: usize,
}

impl Default for TreeLimits {
    fn default() -> Self {
        Self { depth_cap: DEFAULT_DEPTH_CAP }
    }
}

impl TreeLimits {
    /// Node budget equivalent to a full binary tree of `depth_cap`.
    pub fn max_nodes(&self) -> usize {
        (1usize << (self.depth_cap + 1)) - 1
    }
}

impl ScenarioTree {
    /// Non-recombining binary tree with `2^(depth+1) - 1` nodes and `t_m = m dt`.
    pub fn binary(depth: usize, dt: f64, up_prob: f64) -> Result<Self, TreeError> {
        Self::binary_with_limits(depth, dt, up_prob, TreeLimits::default())
    }

    pub fn binary_with_limits(depth: usize, dt: f64, up_prob: f64, limits: TreeLimits) -> Result<Self, TreeError> {
        if !(up_prob > 0.0 && up_prob < 1.0) {
            return Err(TreeError::InvalidParameter(format!("up_prob must lie in (0, 1), got {up_prob}")));
        }
        Self::product_with_limits(depth, dt, 1, up_prob, limits)
    }

    /// Tree driven by `factors` independent binary shocks per step
    /// (branching `2^factors`). `factors = 0` gives a deterministic chain.
    pub fn product(depth: usize, dt: f64, factors: usize, up_prob: f64) -> Result<Self, TreeError> {
        Self::product_with_limits(depth, dt, factors, up_prob, TreeLimits::default())
    }

    /// Deterministic chain `t_0 < ... < t_depth` with a single path.
    pub fn chain(depth: usize, dt: f64) -> Result<Self, TreeError> {
        Self::product(depth, dt, 0, 0.5)
    }

    pub fn product_with_limits(
        depth: usize,
        dt: f64,
        factors: usize,
        up_prob: f64,
        limits: TreeLimits,
    ) -> Result<Self, TreeError> {
        if depth < 1 {
            return Err(TreeError::InvalidParameter("depth must be at least 1".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(TreeError::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if factors > 0 && !(up_prob > 0.0 && up_prob < 1.0) {
            return Err(TreeError::InvalidParameter(format!("up_prob must lie in (0, 1), got {up_prob}")));
        }
        if factors > 8 {
            return Err(TreeError::InvalidParameter("at most 8 driving factors".into()));
        }
        let branching = 1usize << factors;
        let limit = limits.max_nodes();
        let mut count = 0usize;
        let mut width = 1usize;
        for _ in 0..=depth {
            count = count.saturating_add(width);
            if count > limit || depth > limits.depth_cap {
                return Err(TreeError::TooLarge { nodes: count.max(limit + 1), limit });
            }
            width = width.saturating_mul(branching);
        }

        let branch_probs: Vec<f64> = (0..branching)
            .map(|label| (0..factors).map(|j| if label >> j & 1 == 0 { up_prob } else { 1.0 - up_prob }).product())
            .collect();

        let times: Vec<f64> = (0..=depth).map(|m| m as f64 * dt).collect();
        let mut parents = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        let mut probs = Vec::with_capacity(count);
        parents.push(None);
        labels.push(0);
        probs.push(1.0);
        let mut level = 0..1usize;
        for _ in 0..depth {
            let next_start = parents.len();
            for parent in level.clone() {
                for (label, &p) in branch_probs.iter().enumerate() {
                    parents.push(Some(parent));
                    labels.push(label);
                    probs.push(p);
                }
            }
            level = next_start..parents.len();
        }
        Self::assemble(times, factors, &parents, &labels, &probs)
    }

    /// Builds a tree from breadth-first parent links and validates every
    /// structural invariant.
    pub fn from_parts(
        times: Vec<f64>,
        factors: usize,
        parents: &[Option<usize>],
        branches: &[usize],
        branch_probs: &[f64],
    ) -> Result<Self, TreeError> {
        Self::assemble(times, factors, parents, branches, branch_probs)
    }

    fn assemble(
        times: Vec<f64>,
        factors: usize,
        parents: &[Option<usize>],
        branches: &[usize],
        branch_probs: &[f64],
    ) -> Result<Self, TreeError> {
        let n = parents.len();
        if branches.len() != n || branch_probs.len() != n {
            return Err(TreeError::Malformed("node arrays differ in length".into()));
        }
        if times.len() < 2 {
            return Err(TreeError::Malformed("time grid needs at least two points".into()));
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TreeError::Malformed("time grid must start at 0 and increase".into()));
        }
        if n == 0 || parents[0].is_some() {
            return Err(TreeError::Malformed("node 0 must be the root".into()));
        }
        let max_depth = times.len() - 1;
        let mut nodes: Vec<Node> = Vec::with_capacity(n);
        let mut node_prob = vec![0.0; n];
        for id in 0..n {
            let (depth, prob) = match parents[id] {
                None if id == 0 => (0, 1.0),
                None => return Err(TreeError::Malformed(format!("node {id} has no parent"))),
                Some(p) if p >= id => return Err(TreeError::Malformed(format!("node {id} precedes its parent {p}"))),
                Some(p) => {
                    let bp = branch_probs[id];
                    if !(bp > 0.0 && bp <= 1.0) {
                        return Err(TreeError::Malformed(format!("node {id} has branch probability {bp}")));
                    }
                    (nodes[p].depth + 1, node_prob[p] * bp)
                }
            };
            if depth > max_depth {
                return Err(TreeError::Malformed(format!("node {id} deeper than the grid")));
            }
            if let Some(p) = parents[id] {
                let parent = &mut nodes[p];
                if parent.child_count == 0 {
                    parent.first_child = id;
                } else if parent.first_child + parent.child_count != id {
                    return Err(TreeError::Malformed(format!("children of node {p} are not contiguous")));
                }
                parent.child_count += 1;
            }
            if id > 0 && nodes[id - 1].depth > depth {
                return Err(TreeError::Malformed("nodes are not in breadth-first order".into()));
            }
            node_prob[id] = prob;
            nodes.push(Node {
                parent: parents[id],
                depth,
                branch: if id == 0 { 0 } else { branches[id] },
                branch_prob: if id == 0 { 1.0 } else { branch_probs[id] },
                first_child: 0,
                child_count: 0,
            });
        }
        for (id, node) in nodes.iter().enumerate() {
            let is_last = node.depth == max_depth;
            if is_last != node.is_leaf() {
                return Err(TreeError::Malformed(format!(
                    "node {id}: leaves must be exactly the depth-{max_depth} nodes"
                )));
            }
            if !node.is_leaf() {
                let total: f64 = node.children().map(|c| nodes[c].branch_prob).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(TreeError::Malformed(format!("branch probabilities of node {id} sum to {total}")));
                }
            }
        }
        let mut depth_start = vec![n; max_depth + 2];
        for (id, node) in nodes.iter().enumerate().rev() {
            depth_start[node.depth] = id;
        }
        depth_start[max_depth + 1] = n;
        let first_leaf = depth_start[max_depth];
        let mut leaf_range = vec![(0, 0); n];
        for id in (0..n).rev() {
            leaf_range[id] = if nodes[id].is_leaf() {
                (id - first_leaf, id - first_leaf + 1)
            } else {
                let ch = nodes[id].children();
                (leaf_range[ch.start].0, leaf_range[ch.end - 1].1)
            };
        }
        Ok(Self { times, factors, nodes, node_prob, depth_start, leaf_range })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of time steps `M`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.steps()]
    }

    /// `t_{m+1} - t_m`; zero for the terminal index.
    pub fn dt(&self, m: usize) -> f64 {
        if m < self.steps() {
            self.times[m + 1] - self.times[m]
        } else {
            0.0
        }
    }

    pub fn factors(&self) -> usize {
        self.factors
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node_prob(&self, id: usize) -> f64 {
        self.node_prob[id]
    }

    pub fn node_probs(&self) -> &[f64] {
        &self.node_prob
    }

    pub fn time_of(&self, id: usize) -> f64 {
        self.times[self.nodes[id].depth]
    }

    /// Length of the interval ending at this node, `t_m - t_{m-1}`; zero at the root.
    pub fn dt_into(&self, id: usize) -> f64 {
        let m = self.nodes[id].depth;
        if m == 0 {
            0.0
        } else {
            self.times[m] - self.times[m - 1]
        }
    }

    pub fn nodes_at_depth(&self, m: usize) -> std::ops::Range<usize> {
        self.depth_start[m]..self.depth_start[m + 1]
    }

    pub fn leaves(&self) -> std::ops::Range<usize> {
        self.nodes_at_depth(self.steps())
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    /// Leaf indices (0-based among leaves) descending from `id`.
    pub fn leaf_span(&self, id: usize) -> std::ops::Range<usize> {
        let (lo, hi) = self.leaf_range[id];
        lo..hi
    }

    /// Ancestor of `id` at depth `m` (itself when `m` is its depth).
    pub fn ancestor_at(&self, mut id: usize, m: usize) -> usize {
        while self.nodes[id].depth > m {
            id = self.nodes[id].parent.expect("non-root has a parent");
        }
        id
    }

    /// Path of node ids from the root to the given leaf (0-based leaf index).
    pub fn path_to_leaf(&self, leaf: usize) -> Vec<usize> {
        let mut id = self.leaves().start + leaf;
        let mut path = vec![id];
        while let Some(p) = self.nodes[id].parent {
            path.push(p);
            id = p;
        }
        path.reverse();
        path
    }

    /// Sign (`+1` up, `-1` down) of factor `j` on the branch into `id`; 0 at the root.
    pub fn shock(&self, id: usize, factor: usize) -> f64 {
        if id == 0 || factor >= self.factors {
            return 0.0;
        }
        if self.nodes[id].branch >> factor & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `Σ_leaves P(leaf) · value`.
    pub fn expectation(&self, leaf_values: &[f64]) -> Result<f64, TreeError> {
        if leaf_values.len() != self.leaf_count() {
            return Err(TreeError::ShapeMismatch { expected: self.leaf_count(), got: leaf_values.len() });
        }
        Ok(self.leaves().zip(leaf_values).map(|(id, v)| self.node_prob[id] * v).sum())
    }

    /// Probability-weighted sum of a nodewise scalar over all nodes.
    pub fn weighted_node_sum(&self, values: impl Fn(usize) -> f64) -> f64 {
        (0..self.len()).map(|id| self.node_prob[id] * values(id)).sum()
    }

    /// Conditional expectation onto the tree filtration of a pathwise process.
    ///
    /// `raw` is laid out as `[leaf][time index][coordinate]` with `dims`
    /// coordinates. The value at a node of depth `m` is the average of
    /// `raw[·][m]` over the leaves below it, weighted by leaf probability.
    pub fn adapted_projection(&self, raw: &[f64], dims: usize) -> Result<AdaptedProcess, TreeError> {
        let per_leaf = (self.steps() + 1) * dims;
        let expected = self.leaf_count() * per_leaf;
        if dims == 0 || raw.len() != expected {
            return Err(TreeError::ShapeMismatch { expected, got: raw.len() });
        }
        let first_leaf = self.leaves().start;
        let mut out = AdaptedProcess::zeros(self, dims);
        for id in 0..self.len() {
            let m = self.nodes[id].depth;
            let mass = self.node_prob[id];
            let value = out.node_mut(id);
            for leaf in self.leaf_span(id) {
                let w = self.node_prob[first_leaf + leaf] / mass;
                let row = &raw[leaf * per_leaf + m * dims..leaf * per_leaf + (m + 1) * dims];
                for (v, r) in value.iter_mut().zip(row) {
                    *v += w * r;
                }
            }
        }
        Ok(out)
    }

    /// Brownian path of factor `j`: `W_0 = 0`, `W_child = W_parent ± √Δt`.
    pub fn brownian(&self, factor: usize) -> AdaptedProcess {
        let mut w = AdaptedProcess::zeros(self, 1);
        for id in 1..self.len() {
            let parent = self.nodes[id].parent.unwrap();
            let step = self.shock(id, factor) * self.dt_into(id).sqrt();
            w.values[id] = w.values[parent] + step;
        }
        w
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            times: self.times.clone(),
            factors: self.factors,
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(id, n)| NodeRecord {
                    id,
                    parent: n.parent,
                    time_index: n.depth,
                    branch: n.branch,
                    branch_prob: n.branch_prob,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &TreeDocument) -> Result<Self, TreeError> {
        for (pos, rec) in doc.nodes.iter().enumerate() {
            if rec.id != pos {
                return Err(TreeError::Malformed(format!("node record {pos} carries id {}", rec.id)));
            }
        }
        let parents: Vec<_> = doc.nodes.iter().map(|r| r.parent).collect();
        let branches: Vec<_> = doc.nodes.iter().map(|r| r.branch).collect();
        let probs: Vec<_> = doc.nodes.iter().map(|r| r.branch_prob).collect();
        let tree = Self::assemble(doc.times.clone(), doc.factors, &parents, &branches, &probs)?;
        for rec in &doc.nodes {
            if tree.nodes[rec.id].depth != rec.time_index {
                return Err(TreeError::Malformed(format!(
                    "node {} declares time index {} but sits at depth {}",
                    rec.id, rec.time_index, tree.nodes[rec.id].depth
                )));
            }
        }
        Ok(tree)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("tree document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TreeError> {
        let doc: TreeDocument = serde_json::from_str(text).map_err(|e| TreeError::Malformed(e.to_string()))?;
        Self::from_document(&doc)
    }
}

/// Serialized form of a tree: one record per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub times: Vec<f64>,
    pub factors: usize,
    pub nodes: Vec<NodeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub time_index: usize,
    pub branch: usize,
    pub branch_prob: f64,
}

/// Node-indexed vector-valued process on a scenario tree.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedProcess {
    dims: usize,
    values: Vec<f64>,
}

impl AdaptedProcess {
    pub fn zeros(tree: &ScenarioTree, dims: usize) -> Self {
        Self { dims, values: vec![0.0; tree.len() * dims] }
    }

    pub fn constant(tree: &ScenarioTree, value: &[f64]) -> Self {
        let mut values = Vec::with_capacity(tree.len() * value.len());
        for _ in 0..tree.len() {
            values.extend_from_slice(value);
        }
        Self { dims: value.len(), values }
    }

    /// Builds a process from a row-major `[node][coordinate]` buffer.
    pub fn from_values(dims: usize, values: Vec<f64>) -> Self {
        assert!(dims > 0 && values.len().is_multiple_of(dims), "values must fill whole nodes");
        Self { dims, values }
    }

    pub fn from_fn(tree: &ScenarioTree, dims: usize, mut f: impl FnMut(usize, &mut [f64])) -> Self {
        let mut p = Self::zeros(tree, dims);
        for id in 0..tree.len() {
            f(id, p.node_mut(id));
        }
        p
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, id: usize) -> &[f64] {
        &self.values[id * self.dims..(id + 1) * self.dims]
    }

    pub fn node_mut(&mut self, id: usize) -> &mut [f64] {
        &mut self.values[id * self.dims..(id + 1) * self.dims]
    }

    pub fn get(&self, id: usize, coord: usize) -> f64 {
        self.values[id * self.dims + coord]
    }

    pub fn fits(&self, tree: &ScenarioTree) -> bool {
        self.values.len() == tree.len() * self.dims
    }

    pub fn check_fits(&self, tree: &ScenarioTree) -> Result<(), TreeError> {
        if self.fits(tree) {
            Ok(())
        } else {
            Err(TreeError::ShapeMismatch { expected: tree.len() * self.dims, got: self.values.len() })
        }
    }

    /// Coordinates `range` of every node as a new process.
    pub fn slice(&self, coords: std::ops::Range<usize>) -> Self {
        let dims = coords.len();
        let mut values = Vec::with_capacity(self.node_count() * dims);
        for id in 0..self.node_count() {
            values.extend_from_slice(&self.node(id)[coords.clone()]);
        }
        Self { dims, values }
    }

    /// Concatenates processes coordinate-wise.
    pub fn stack(parts: &[&AdaptedProcess]) -> Self {
        let nodes = parts.first().map_or(0, |p| p.node_count());
        let dims: usize = parts.iter().map(|p| p.dims).sum();
        let mut values = Vec::with_capacity(nodes * dims);
        for id in 0..nodes {
            for p in parts {
                values.extend_from_slice(p.node(id));
            }
        }
        Self { dims, values }
    }

    /// Largest absolute coordinate difference.
    pub fn sup_distance(&self, other: &AdaptedProcess) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Root value for the root (the time-0 jump), `A(node) - A(parent)` elsewhere.
    pub fn increments(&self, tree: &ScenarioTree) -> AdaptedProcess {
        let mut out = self.clone();
        for id in (1..tree.len()).rev() {
            let parent = tree.node(id).parent.unwrap();
            for c in 0..self.dims {
                out.values[id * self.dims + c] -= self.values[parent * self.dims + c];
            }
        }
        out
    }

    /// Inverse of [`increments`](Self::increments): pathwise cumulative sums.
    pub fn cumulate(&self, tree: &ScenarioTree) -> AdaptedProcess {
        let mut out = self.clone();
        for id in 1..tree.len() {
            let parent = tree.node(id).parent.unwrap();
            for c in 0..self.dims {
                out.values[id * self.dims + c] += out.values[parent * self.dims + c];
            }
        }
        out
    }

    /// True iff every increment, the root jump included, is `>= -tol`.
    pub fn is_monotone_control(&self, tree: &ScenarioTree, tol: f64) -> bool {
        self.increments(tree).values.iter().all(|&z| z >= -tol)
    }

    /// Pointwise `self <= other + tol` in every coordinate.
    pub fn le_with_tol(&self, other: &AdaptedProcess, tol: f64) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| *a <= *b + tol)
    }
}
