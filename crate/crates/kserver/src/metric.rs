//! Finite metrics, rooted weighted trees, τ-HSTs and random tree embeddings.
//!
//! A [`WeightedTree`] induces a metric on its leaves: the distance between two
//! leaves is the total weight of the edges on the path joining them. Edge
//! weights live on the child endpoint, so `weight(u)` is the weight of the edge
//! `(parent(u), u)`.
//!
//! ```
//! use kserver::metric::{hst, WeightedTree};
//! use kserver::rat::int;
//!
//! // binary 2-HST with edge weights 2 (top) and 1 (bottom)
//! let t = hst(&[2, 2], int(2), int(2)).unwrap();
//! let l = t.tree().leaves().to_vec();
//! assert_eq!(t.tree().leaf_distance(l[0], l[1]).unwrap(), int(2));
//! assert_eq!(t.tree().leaf_distance(l[0], l[2]).unwrap(), int(6));
//! ```

use std::collections::VecDeque;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitStream;
use crate::rat::{self, int, Rat};

/// A multiset of `k` leaves, stored sorted by node id.
pub type Configuration = Vec<usize>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("edge ratio violated between node {0} and its child {1}")]
    RatioViolation(usize, usize),
    #[error("leaves {0} and {1} have different depths")]
    UnequalLeafDepth(usize, usize),
    #[error("node {0} is not a leaf")]
    UnknownLeaf(usize),
    #[error("configuration sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("invalid metric: {0}")]
    InvalidMetric(String),
}

/// Finite metric with integral distances.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetricSpace {
    dist: Vec<Vec<u64>>,
    diameter: u64,
}

impl MetricSpace {
    /// Validates symmetry, positivity off the diagonal and the triangle inequality.
    pub fn new(dist: Vec<Vec<u64>>) -> Result<Self, MetricError> {
        let n = dist.len();
        if n == 0 {
            return Err(MetricError::InvalidMetric("empty".into()));
        }
        for (i, row) in dist.iter().enumerate() {
            if row.len() != n {
                return Err(MetricError::InvalidMetric(format!("row {i} has wrong length")));
            }
            for j in 0..n {
                if (i == j) != (row[j] == 0) {
                    return Err(MetricError::InvalidMetric(format!("bad zero pattern at ({i},{j})")));
                }
                if row[j] != dist[j][i] {
                    return Err(MetricError::InvalidMetric(format!("asymmetric at ({i},{j})")));
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                for c in 0..n {
                    if dist[a][c] > dist[a][b] + dist[b][c] {
                        return Err(MetricError::InvalidMetric(format!("triangle ({a},{b},{c})")));
                    }
                }
            }
        }
        let diameter = dist.iter().flatten().copied().max().unwrap_or(0);
        Ok(Self { dist, diameter })
    }

    /// Shortest-path closure of random integer edge lengths in `1..=max_len`.
    pub fn random(n: usize, max_len: u64, bits: &mut BitStream) -> Self {
        let mut d = vec![vec![0u64; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let w = 1 + bits.below(max_len);
                d[i][j] = w;
                d[j][i] = w;
            }
        }
        for m in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][m] + d[m][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        Self::new(d).expect("shortest-path closure is a metric")
    }

    /// Metric where every pair is at distance `d`.
    pub fn uniform(n: usize, d: u64) -> Self {
        let dist = (0..n).map(|i| (0..n).map(|j| if i == j { 0 } else { d }).collect()).collect();
        Self::new(dist).expect("uniform metric")
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }

    pub fn dist(&self, a: usize, b: usize) -> u64 {
        self.dist[a][b]
    }

    pub fn diameter(&self) -> u64 {
        self.diameter
    }

    pub fn matrix(&self) -> &[Vec<u64>] {
        &self.dist
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(MetricJson { n: self.len(), diameter: self.diameter, distances: self.dist.clone() })
            .expect("serializable")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, MetricError> {
        let m: MetricJson =
            serde_json::from_value(v.clone()).map_err(|e| MetricError::InvalidMetric(e.to_string()))?;
        Self::new(m.distances)
    }
}

#[derive(Serialize, Deserialize)]
struct MetricJson {
    n: usize,
    #[serde(default)]
    diameter: u64,
    distances: Vec<Vec<u64>>,
}

/// Rooted tree with non-negative rational edge weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightedTree {
    parent: Vec<Option<usize>>,
    weight: Vec<Rat>,
    children: Vec<Vec<usize>>,
    root: usize,
    leaves: Vec<usize>,
    leaf_pos: Vec<Option<usize>>,
    order: Vec<usize>,
    depth: Vec<usize>,
    nleaves: Vec<usize>,
    tin: Vec<usize>,
    tout: Vec<usize>,
    root_dist: Vec<Rat>,
}

impl WeightedTree {
    /// Builds a tree from a parent map; `weight[u]` is the weight of `(parent(u), u)`
    /// and is ignored for the root.
    pub fn new(parent: Vec<Option<usize>>, weight: Vec<Rat>) -> Result<Self, MetricError> {
        let n = parent.len();
        if n == 0 || weight.len() != n {
            return Err(MetricError::InvalidTree("parent and weight lengths differ or are empty".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&u| parent[u].is_none()).collect();
        if roots.len() != 1 {
            return Err(MetricError::InvalidTree(format!("expected one root, found {}", roots.len())));
        }
        let root = roots[0];
        let mut children = vec![Vec::new(); n];
        for u in 0..n {
            if let Some(p) = parent[u] {
                if p >= n || p == u {
                    return Err(MetricError::InvalidTree(format!("bad parent for node {u}")));
                }
                children[p].push(u);
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut depth = vec![0usize; n];
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &c in &children[u] {
                depth[c] = depth[u] + 1;
                queue.push_back(c);
            }
        }
        if order.len() != n {
            return Err(MetricError::InvalidTree("parent map has a cycle or unreachable nodes".into()));
        }
        let mut weight = weight;
        weight[root] = Rat::zero();
        for u in 0..n {
            if u == root {
                continue;
            }
            if weight[u].is_negative() {
                return Err(MetricError::InvalidTree(format!("negative weight at node {u}")));
            }
            if weight[u].is_zero() && !children[u].is_empty() {
                return Err(MetricError::InvalidTree(format!("zero weight on internal edge at node {u}")));
            }
        }
        let leaves: Vec<usize> = (0..n).filter(|&u| children[u].is_empty()).collect();
        let mut leaf_pos = vec![None; n];
        for (i, &l) in leaves.iter().enumerate() {
            leaf_pos[l] = Some(i);
        }
        let mut nleaves = vec![0usize; n];
        for &u in order.iter().rev() {
            nleaves[u] = if children[u].is_empty() { 1 } else { children[u].iter().map(|&c| nleaves[c]).sum() };
        }
        let mut root_dist = vec![Rat::zero(); n];
        for &u in &order {
            if let Some(p) = parent[u] {
                root_dist[u] = root_dist[p] + weight[u];
            }
        }
        let (mut tin, mut tout) = (vec![0; n], vec![0; n]);
        let mut clock = 0;
        let mut stack = vec![(root, false)];
        while let Some((u, done)) = stack.pop() {
            if done {
                tout[u] = clock;
                continue;
            }
            tin[u] = clock;
            clock += 1;
            stack.push((u, true));
            for &c in children[u].iter().rev() {
                stack.push((c, false));
            }
        }
        Ok(Self { parent, weight, children, root, leaves, leaf_pos, order, depth, nleaves, tin, tout, root_dist })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn parent(&self, u: usize) -> Option<usize> {
        self.parent[u]
    }

    pub fn weight(&self, u: usize) -> Rat {
        self.weight[u]
    }

    pub fn children(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    pub fn is_leaf(&self, u: usize) -> bool {
        self.children[u].is_empty()
    }

    /// Leaves in increasing id order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Position of `u` in [`Self::leaves`].
    pub fn leaf_index(&self, u: usize) -> Option<usize> {
        self.leaf_pos.get(u).copied().flatten()
    }

    /// Nodes in breadth-first order from the root.
    pub fn bfs(&self) -> &[usize] {
        &self.order
    }

    pub fn depth(&self, u: usize) -> usize {
        self.depth[u]
    }

    /// `n_u`, the number of leaves below `u`.
    pub fn subtree_leaves(&self, u: usize) -> usize {
        self.nleaves[u]
    }

    /// Whether `v` lies in the subtree rooted at `u` (inclusive).
    pub fn in_subtree(&self, u: usize, v: usize) -> bool {
        self.tin[u] <= self.tin[v] && self.tin[v] < self.tout[u]
    }

    /// Weighted distance from the root.
    pub fn root_dist(&self, u: usize) -> Rat {
        self.root_dist[u]
    }

    /// Largest leaf-to-leaf distance.
    pub fn diameter(&self) -> Rat {
        let mut best = Rat::zero();
        for (i, &a) in self.leaves.iter().enumerate() {
            for &b in &self.leaves[i + 1..] {
                let d = self.node_distance(a, b);
                if d > best {
                    best = d;
                }
            }
        }
        best
    }

    pub fn lca(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        a
    }

    /// Path weight between two arbitrary nodes.
    pub fn node_distance(&self, a: usize, b: usize) -> Rat {
        let c = self.lca(a, b);
        self.root_dist[a] + self.root_dist[b] - self.root_dist[c] * int(2)
    }

    /// Path weight between two leaves.
    pub fn leaf_distance(&self, a: usize, b: usize) -> Result<Rat, MetricError> {
        for x in [a, b] {
            if x >= self.len() || !self.is_leaf(x) {
                return Err(MetricError::UnknownLeaf(x));
            }
        }
        Ok(self.node_distance(a, b))
    }

    /// Nodes on the path from `u` up to the root, `u` first.
    pub fn ancestors(&self, u: usize) -> Vec<usize> {
        let mut out = vec![u];
        let mut x = u;
        while let Some(p) = self.parent[x] {
            out.push(p);
            x = p;
        }
        out
    }

    /// `n_u(C)` for every node `u`.
    pub fn counts(&self, c: &[usize]) -> Vec<i64> {
        let mut n = vec![0i64; self.len()];
        for &l in c {
            let mut x = l;
            n[x] += 1;
            while let Some(p) = self.parent[x] {
                n[p] += 1;
                x = p;
            }
        }
        n
    }

    /// Leaves of the subtree rooted at `u`, increasing id order.
    pub fn leaves_under(&self, u: usize) -> Vec<usize> {
        self.leaves.iter().copied().filter(|&l| self.in_subtree(u, l)).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let nodes = (0..self.len())
            .map(|u| NodeJson { id: u, parent: self.parent[u], weight: self.weight[u] })
            .collect();
        serde_json::to_value(TreeJson { root: self.root, nodes, leaves: self.leaves.clone(), tau: None })
            .expect("serializable")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, MetricError> {
        let t: TreeJson = serde_json::from_value(v.clone()).map_err(|e| MetricError::InvalidTree(e.to_string()))?;
        tree_from_json(&t)
    }
}

#[derive(Serialize, Deserialize)]
struct NodeJson {
    id: usize,
    parent: Option<usize>,
    #[serde(with = "crate::rat::serde_rat")]
    weight: Rat,
}

#[derive(Serialize, Deserialize)]
struct TreeJson {
    #[serde(default)]
    root: usize,
    nodes: Vec<NodeJson>,
    #[serde(default)]
    leaves: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<String>,
}

fn tree_from_json(t: &TreeJson) -> Result<WeightedTree, MetricError> {
    let n = t.nodes.len();
    let mut parent = vec![None; n];
    let mut weight = vec![Rat::zero(); n];
    for nd in &t.nodes {
        if nd.id >= n {
            return Err(MetricError::InvalidTree(format!("node id {} out of range", nd.id)));
        }
        parent[nd.id] = nd.parent;
        weight[nd.id] = nd.weight;
    }
    WeightedTree::new(parent, weight)
}

/// A weighted tree whose weights shrink by `tau` per level, leaves at equal depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TauHst {
    tree: WeightedTree,
    tau: Rat,
}

impl TauHst {
    pub fn tree(&self) -> &WeightedTree {
        &self.tree
    }

    pub fn tau(&self) -> Rat {
        self.tau
    }

    pub fn into_tree(self) -> WeightedTree {
        self.tree
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = self.tree.to_json();
        v["tau"] = serde_json::Value::String(rat::fmt(&self.tau));
        v
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, MetricError> {
        let t: TreeJson = serde_json::from_value(v.clone()).map_err(|e| MetricError::InvalidTree(e.to_string()))?;
        let tau = t
            .tau
            .as_deref()
            .and_then(rat::parse)
            .ok_or_else(|| MetricError::InvalidTree("missing tau".into()))?;
        validate_hst(tree_from_json(&t)?, tau)
    }
}

/// Checks the τ-HST conditions and wraps the tree.
pub fn validate_hst(tree: WeightedTree, tau: Rat) -> Result<TauHst, MetricError> {
    if tau < Rat::one() {
        return Err(MetricError::InvalidTree("tau must be at least 1".into()));
    }
    for &u in tree.bfs() {
        if u == tree.root() {
            continue;
        }
        for &v in tree.children(u) {
            if tree.weight(u) != tau * tree.weight(v) {
                return Err(MetricError::RatioViolation(u, v));
            }
        }
    }
    let leaves = tree.leaves();
    if let Some(&first) = leaves.first() {
        for &l in &leaves[1..] {
            if tree.depth(l) != tree.depth(first) {
                return Err(MetricError::UnequalLeafDepth(first, l));
            }
        }
    }
    Ok(TauHst { tree, tau })
}

/// Matching distance `Σ_{u≠r} w_u |n_u(C) − n_u(C′)|`.
pub fn config_distance(tree: &WeightedTree, c: &[usize], c2: &[usize]) -> Result<Rat, MetricError> {
    if c.len() != c2.len() {
        return Err(MetricError::SizeMismatch(c.len(), c2.len()));
    }
    for &l in c.iter().chain(c2) {
        if l >= tree.len() || !tree.is_leaf(l) {
            return Err(MetricError::UnknownLeaf(l));
        }
    }
    let (a, b) = (tree.counts(c), tree.counts(c2));
    let mut total = Rat::zero();
    for u in 0..tree.len() {
        if u != tree.root() && a[u] != b[u] {
            total += tree.weight(u) * int((a[u] - b[u]).abs() as i128);
        }
    }
    Ok(total)
}

/// Star with `n` leaves, every edge of weight `w`.
pub fn star(n: usize, w: Rat) -> TauHst {
    hst(&[n], w, int(2)).expect("star is an HST")
}

/// Complete HST with the given branching per level; level-one edges weigh
/// `top`, and each deeper level is lighter by a factor `tau`.
pub fn hst(branching: &[usize], top: Rat, tau: Rat) -> Result<TauHst, MetricError> {
    let mut parent = vec![None];
    let mut weight = vec![Rat::zero()];
    let mut frontier = vec![0usize];
    let mut w = top;
    for &b in branching {
        let mut next = Vec::new();
        for &u in &frontier {
            for _ in 0..b {
                parent.push(Some(u));
                weight.push(w);
                next.push(parent.len() - 1);
            }
        }
        frontier = next;
        w /= tau;
    }
    validate_hst(WeightedTree::new(parent, weight)?, tau)
}

/// Random HST: between one and three levels, each internal node with a random
/// number of children in `1..=max_branch`, at most `max_leaves` leaves.
pub fn random_hst(max_leaves: usize, max_branch: usize, tau: Rat, bits: &mut BitStream) -> TauHst {
    loop {
        let levels = 1 + bits.below(3) as usize;
        let top = int(1 + bits.below(4) as i128) * tau.pow(levels as i32 - 1);
        let mut parent = vec![None];
        let mut weight = vec![Rat::zero()];
        let mut frontier = vec![0usize];
        let mut w = top;
        for _ in 0..levels {
            let mut next = Vec::new();
            for &u in &frontier {
                let b = 1 + bits.below(max_branch as u64) as usize;
                for _ in 0..b {
                    parent.push(Some(u));
                    weight.push(w);
                    next.push(parent.len() - 1);
                }
            }
            frontier = next;
            w /= tau;
        }
        if frontier.len() >= 2 && frontier.len() <= max_leaves {
            return validate_hst(WeightedTree::new(parent, weight).expect("valid"), tau).expect("hst");
        }
    }
}

/// Random tree with between 2 and `max_leaves` leaves and random rational weights.
pub fn random_tree(max_leaves: usize, bits: &mut BitStream) -> WeightedTree {
    let target = 2 + bits.below((max_leaves - 1) as u64) as usize;
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut weight = vec![Rat::zero()];
    loop {
        let leaves = (0..parent.len()).filter(|&u| !parent.iter().any(|p| *p == Some(u))).count();
        let internal_root = parent.len() > 1;
        if leaves >= target && internal_root {
            break;
        }
        let at = bits.below(parent.len() as u64) as usize;
        parent.push(Some(at));
        let w = rat::rat(1 + bits.below(8) as i128, 1 + bits.below(3) as i128);
        weight.push(w);
    }
    WeightedTree::new(parent, weight).expect("random tree is well formed")
}

/// Path `1..n` rooted at its first point, each point carrying a zero-length leaf.
///
/// Returns the tree and, for every position, the id of its leaf.
pub fn path_tree(n: usize) -> (WeightedTree, Vec<usize>) {
    let mut parent = Vec::new();
    let mut weight = Vec::new();
    for i in 0..n {
        parent.push(if i == 0 { None } else { Some(i - 1) });
        weight.push(if i == 0 { Rat::zero() } else { Rat::one() });
    }
    let mut leaf = Vec::new();
    for i in 0..n {
        parent.push(Some(i));
        weight.push(Rat::zero());
        leaf.push(n + i);
    }
    (WeightedTree::new(parent, weight).expect("path tree"), leaf)
}

/// Output of [`frt_embed`]: the tree and the leaf assigned to each point.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub hst: TauHst,
    pub leaf_of: Vec<usize>,
    pub bits_used: u64,
}

impl Embedding {
    pub fn tree_distance(&self, x: usize, y: usize) -> Rat {
        self.hst.tree().node_distance(self.leaf_of[x], self.leaf_of[y])
    }
}

/// Random hierarchical decomposition of `metric` into a `tau`-HST.
///
/// A random permutation of the points and a scale `β ∈ [1, τ)` drawn
/// log-uniformly fix radii `r_i = β·D/2·τ^{-i}`. Level `i` splits every
/// level-`(i-1)` cluster by assigning each point to the first point of the
/// permutation within distance `r_i`. Edges entering level `i` weigh
/// `r_{i-1}`, which makes the result a τ-HST that never contracts distances.
/// Clusters that do not split become single-child chains, so every leaf
/// sits at the same depth.
pub fn frt_embed(metric: &MetricSpace, tau: Rat, bits: &mut BitStream) -> Embedding {
    let start = bits.used();
    let n = metric.len();
    if n == 1 {
        let tree = WeightedTree::new(vec![None], vec![Rat::zero()]).expect("single node");
        let hst = validate_hst(tree, tau).expect("trivial");
        return Embedding { hst, leaf_of: vec![0], bits_used: bits.used() - start };
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = bits.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    const SCALE_BITS: u32 = 16;
    let (j, q) = bits.unit(SCALE_BITS);
    let beta_f = rat::to_f64(&tau).powf(j as f64 / q as f64);
    let beta = std::cmp::max(rat::ceil_to(beta_f, 1 << 20), Rat::one());
    let r0 = beta * int(metric.diameter() as i128) / int(2);
    let half = rat::rat(1, 2);
    let mut levels = 0i32;
    while r0 / tau.pow(levels) >= half {
        levels += 1;
    }
    let mut parent = vec![None];
    let mut weight = vec![Rat::zero()];
    let mut cluster_of = vec![0usize; n];
    for i in 1..=levels {
        let r = r0 / tau.pow(i);
        let w = r0 / tau.pow(i - 1);
        let center: Vec<usize> =
            (0..n).map(|x| *perm.iter().find(|&&c| int(metric.dist(x, c) as i128) <= r).unwrap()).collect();
        let mut made: Vec<((usize, usize), usize)> = Vec::new();
        let mut next = vec![0usize; n];
        for x in 0..n {
            let key = (cluster_of[x], center[x]);
            let id = match made.iter().find(|(k, _)| *k == key) {
                Some(&(_, id)) => id,
                None => {
                    parent.push(Some(cluster_of[x]));
                    weight.push(w);
                    let id = parent.len() - 1;
                    made.push((key, id));
                    id
                }
            };
            next[x] = id;
        }
        cluster_of = next;
    }
    let tree = WeightedTree::new(parent, weight).expect("embedding tree");
    let hst = validate_hst(tree, tau).expect("embedding is an HST");
    Embedding { hst, leaf_of: cluster_of, bits_used: bits.used() - start }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_level(top: i128, bottom: i128) -> WeightedTree {
        let parent = vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)];
        let w = [0, top, top, bottom, bottom, bottom, bottom].iter().map(|&x| int(x)).collect();
        WeightedTree::new(parent, w).unwrap()
    }

    #[test]
    fn validate_examples() {
        assert!(validate_hst(star(3, int(1)).into_tree(), int(2)).is_ok());
        assert!(validate_hst(two_level(10, 1), int(10)).is_ok());
        assert_eq!(validate_hst(two_level(10, 2), int(10)), Err(MetricError::RatioViolation(1, 3)));
    }

    #[test]
    fn unequal_depth_is_rejected() {
        let parent = vec![None, Some(0), Some(0), Some(1)];
        let w = vec![int(0), int(2), int(2), int(1)];
        let t = WeightedTree::new(parent, w).unwrap();
        assert_eq!(validate_hst(t, int(2)), Err(MetricError::UnequalLeafDepth(2, 3)));
    }

    #[test]
    fn malformed_trees() {
        assert!(WeightedTree::new(vec![None, None], vec![int(0), int(0)]).is_err());
        assert!(WeightedTree::new(vec![Some(1), Some(0)], vec![int(1), int(1)]).is_err());
        assert!(WeightedTree::new(vec![None, Some(0), Some(1)], vec![int(0), int(0), int(1)]).is_err());
        assert!(WeightedTree::new(vec![None, Some(0)], vec![int(0), int(0)]).is_ok());
    }

    #[test]
    fn leaf_distance_examples() {
        let t = hst(&[2, 2], int(2), int(2)).unwrap();
        let l = t.tree().leaves().to_vec();
        assert_eq!(t.tree().leaf_distance(l[0], l[0]).unwrap(), int(0));
        assert_eq!(t.tree().leaf_distance(l[0], l[1]).unwrap(), int(2));
        assert_eq!(t.tree().leaf_distance(l[1], l[3]).unwrap(), int(6));
        assert_eq!(t.tree().leaf_distance(0, l[0]), Err(MetricError::UnknownLeaf(0)));
    }

    #[test]
    fn config_distance_examples() {
        let t = hst(&[2, 2], int(2), int(2)).unwrap();
        let tr = t.tree();
        let l = tr.leaves().to_vec();
        assert_eq!(config_distance(tr, &[l[0], l[2]], &[l[0], l[2]]).unwrap(), int(0));
        assert_eq!(config_distance(tr, &[l[0]], &[l[3]]).unwrap(), tr.leaf_distance(l[0], l[3]).unwrap());
        assert_eq!(config_distance(tr, &[l[0]], &[l[1], l[2]]), Err(MetricError::SizeMismatch(1, 2)));
    }

    #[test]
    fn json_round_trip() {
        let t = hst(&[3, 2], int(10), int(10)).unwrap();
        let back = TauHst::from_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        let m = MetricSpace::random(5, 9, &mut BitStream::new(3));
        assert_eq!(MetricSpace::from_json(&m.to_json()).unwrap(), m);
        let s = serde_json::to_string(&t.tree().to_json()).unwrap();
        assert!(s.starts_with("{\"leaves\":"));
    }

    #[test]
    fn frt_single_and_pair() {
        let mut bits = BitStream::new(11);
        let e = frt_embed(&MetricSpace::uniform(1, 1), int(16), &mut bits);
        assert_eq!(e.hst.tree().n_leaves(), 1);
        let e = frt_embed(&MetricSpace::uniform(2, 1), int(16), &mut bits);
        assert_eq!(e.hst.tree().depth(e.leaf_of[0]), 1);
        assert!(e.tree_distance(0, 1) >= int(1));
    }

    #[test]
    fn frt_bits_are_bounded() {
        let mut bits = BitStream::new(5);
        let m = MetricSpace::random(8, 20, &mut bits);
        let bound: u64 = (2..=8u64).map(|i| 9 * crate::bits::bits_for(i) as u64).sum::<u64>() + 16;
        for _ in 0..20 {
            let e = frt_embed(&m, int(16), &mut bits);
            assert!(e.bits_used <= bound);
            assert!(e.bits_used >= 16);
        }
    }

    proptest! {
        #[test]
        fn frt_never_contracts(seed in any::<u64>(), n in 1usize..9, tau in 10i128..20) {
            let mut bits = BitStream::new(seed);
            let m = MetricSpace::random(n, 30, &mut bits);
            let e = frt_embed(&m, int(tau), &mut bits);
            let leaves: std::collections::BTreeSet<_> = e.leaf_of.iter().copied().collect();
            prop_assert_eq!(leaves.len(), n);
            for x in 0..n {
                prop_assert!(e.hst.tree().is_leaf(e.leaf_of[x]));
                for y in 0..n {
                    prop_assert!(e.tree_distance(x, y) >= int(m.dist(x, y) as i128));
                }
            }
        }

        #[test]
        fn config_distance_triangle(seed in any::<u64>(), k in 1usize..4) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(7, &mut bits);
            let l = t.leaves().to_vec();
            let mut pick = || {
                let mut c: Vec<usize> = (0..k).map(|_| l[bits.below(l.len() as u64) as usize]).collect();
                c.sort();
                c
            };
            let (a, b, c) = (pick(), pick(), pick());
            let ab = config_distance(&t, &a, &b).unwrap();
            let bc = config_distance(&t, &b, &c).unwrap();
            let ac = config_distance(&t, &a, &c).unwrap();
            prop_assert!(ac <= ab + bc);
            prop_assert_eq!(ab, config_distance(&t, &b, &a).unwrap());
        }
    }
}
