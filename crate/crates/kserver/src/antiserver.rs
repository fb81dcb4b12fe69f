//! The anti-server polytope `P`, its δ-floored variant `P_δ`, and the
//! functionals used by the fractional algorithm.
//!
//! Coordinates `x_{uj}` exist for every node `u` and `j ∈ [n_u]`, where `n_u`
//! is the number of leaves below `u`. Intuitively `x_{uj}` is the fraction of
//! "subtree `u` holds fewer than `j` servers". The polytope asks for
//!
//! * `0 ≤ x ≤ 1` and `x_{rj} ≥ 1` for `j > k` at the root `r`;
//! * for every internal `u` and every set `S` of child coordinates,
//!   `Σ_{i ≤ |S|} x_{ui} ≤ Σ_{(v,j) ∈ S} x_{vj}`.
//!
//! The second family has exponentially many members, but sorting the child
//! coordinates of `u` reduces it to `n_u` prefix checks.

use thiserror::Error;

use crate::measure::MassVector;
use crate::metric::WeightedTree;
use crate::rat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AntiServerError {
    #[error("configuration has {0} servers, expected {1}")]
    SizeMismatch(usize, usize),
    #[error("mass condition violated: leaf coordinates sum to {found}, expected {expected}")]
    MassCondition { found: f64, expected: f64 },
    #[error("point is not close to the polytope after repair (violation {0})")]
    NotNear(f64),
}

/// Index layout of the coordinate set χ for one tree.
#[derive(Clone, Debug)]
pub struct Chi {
    offset: Vec<usize>,
    size: Vec<usize>,
    weight: Vec<f64>,
    node_of: Vec<usize>,
    internal: Vec<(usize, Vec<usize>)>,
    children: Vec<Vec<usize>>,
    leaves: Vec<usize>,
    parent: Vec<Option<usize>>,
    root: usize,
    len: usize,
}

impl Chi {
    pub fn new(tree: &WeightedTree) -> Self {
        let n = tree.len();
        let mut offset = vec![0; n];
        let mut size = vec![0; n];
        let mut weight = Vec::new();
        let mut node_of = Vec::new();
        let mut len = 0;
        for u in 0..n {
            offset[u] = len;
            size[u] = tree.subtree_leaves(u);
            len += size[u];
            let w = if u == tree.root() { 0.0 } else { rat::to_f64(&tree.weight(u)) };
            for _ in 0..size[u] {
                weight.push(w);
                node_of.push(u);
            }
        }
        let internal = tree
            .bfs()
            .iter()
            .filter(|&&u| !tree.is_leaf(u))
            .map(|&u| {
                let (offset, size) = (&offset, &size);
                let cs = tree.children(u).iter().flat_map(|&c| (0..size[c]).map(move |j| offset[c] + j)).collect();
                (u, cs)
            })
            .collect();
        let parent = (0..n).map(|u| tree.parent(u)).collect();
        let children = (0..n).map(|u| tree.children(u).to_vec()).collect();
        Self { offset, size, weight, node_of, internal, children, leaves: tree.leaves().to_vec(), parent, root: tree.root(), len }
    }

    /// Total number of coordinates `|χ|`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Flat index of `x_{uj}` (`j` starting at 1).
    pub fn idx(&self, u: usize, j: usize) -> usize {
        debug_assert!(j >= 1 && j <= self.size[u]);
        self.offset[u] + j - 1
    }

    /// Flat index of `x_{ℓ1}`.
    pub fn leaf_idx(&self, leaf: usize) -> usize {
        self.offset[leaf]
    }

    pub fn node_count(&self) -> usize {
        self.offset.len()
    }

    pub fn children_of(&self, u: usize) -> &[usize] {
        &self.children[u]
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Weight `w_u` attached to each coordinate (zero at the root).
    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    pub fn node_of(&self, i: usize) -> usize {
        self.node_of[i]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Coordinates of the root node.
    pub fn root_coords(&self) -> std::ops::Range<usize> {
        self.offset[self.root]..self.offset[self.root] + self.size[self.root]
    }

    /// Internal nodes in breadth-first order, each with the flat indices of χ_u.
    pub fn internal(&self) -> &[(usize, Vec<usize>)] {
        &self.internal
    }

    fn own(&self, u: usize) -> std::ops::Range<usize> {
        self.offset[u]..self.offset[u] + self.size[u]
    }
}

/// `δ = 1/(2k+1)`.
pub fn delta(k: usize) -> f64 {
    1.0 / (2 * k + 1) as f64
}

/// A point of `[0,1]^χ`.
#[derive(Clone, Debug, PartialEq)]
pub struct AntiServerPoint {
    pub k: usize,
    pub x: Vec<f64>,
}

/// Linear inequality `Σ c_i y_i ≤ rhs`, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct Cut {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
    pub violation: f64,
}

impl Cut {
    fn new(coeffs: Vec<(usize, f64)>, rhs: f64, x: &[f64]) -> Self {
        let lhs: f64 = coeffs.iter().map(|&(i, c)| c * x[i]).sum();
        Self { coeffs, rhs, violation: lhs - rhs }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    Feasible,
    Cut(Cut),
}

/// Constraint set: `P`, optionally floored (`P_δ`), with the mass condition
/// `Σ_ℓ x_{ℓ1} = n − k` and a pinned leaf `x_{ρ1} = δ`.
#[derive(Clone, Debug)]
pub struct Polytope {
    pub chi: Chi,
    pub k: usize,
    pub delta: f64,
    pub floor: bool,
    pub mass: bool,
    pub pinned: Option<usize>,
}

impl Polytope {
    /// Plain `P`.
    pub fn plain(tree: &WeightedTree, k: usize) -> Self {
        Self { chi: Chi::new(tree), k, delta: delta(k), floor: false, mass: false, pinned: None }
    }

    /// `P_δ` with the mass condition and, optionally, a pinned leaf.
    pub fn projection(tree: &WeightedTree, k: usize, pinned: Option<usize>) -> Self {
        Self { chi: Chi::new(tree), k, delta: delta(k), floor: true, mass: true, pinned }
    }

    /// `n − k`.
    pub fn mass_target(&self) -> f64 {
        self.chi.n_leaves() as f64 - self.k as f64
    }

    /// Approximate separation: `Feasible` when every constraint is violated by
    /// at most `gamma`, otherwise a violated inequality with unit sup-norm.
    pub fn separate(&self, x: &[f64], gamma: f64) -> Verdict {
        let chi = &self.chi;
        for (i, &v) in x.iter().enumerate() {
            if v - 1.0 > gamma {
                return Verdict::Cut(Cut::new(vec![(i, 1.0)], 1.0, x));
            }
            if -v > gamma {
                return Verdict::Cut(Cut::new(vec![(i, -1.0)], 0.0, x));
            }
        }
        for (j, i) in chi.root_coords().enumerate() {
            if j + 1 > self.k && 1.0 - x[i] > gamma {
                return Verdict::Cut(Cut::new(vec![(i, -1.0)], -1.0, x));
            }
        }
        if self.floor {
            for &l in &chi.leaves {
                let i = chi.leaf_idx(l);
                if self.delta - x[i] > gamma {
                    return Verdict::Cut(Cut::new(vec![(i, -1.0)], -self.delta, x));
                }
            }
        }
        if let Some(p) = self.pinned {
            let i = chi.leaf_idx(p);
            if x[i] - self.delta > gamma {
                return Verdict::Cut(Cut::new(vec![(i, 1.0)], self.delta, x));
            }
            if self.delta - x[i] > gamma {
                return Verdict::Cut(Cut::new(vec![(i, -1.0)], -self.delta, x));
            }
        }
        if self.mass {
            let s: f64 = chi.leaves.iter().map(|&l| x[chi.leaf_idx(l)]).sum();
            let t = self.mass_target();
            if s - t > gamma {
                return Verdict::Cut(Cut::new(chi.leaves.iter().map(|&l| (chi.leaf_idx(l), 1.0)).collect(), t, x));
            }
            if t - s > gamma {
                return Verdict::Cut(Cut::new(chi.leaves.iter().map(|&l| (chi.leaf_idx(l), -1.0)).collect(), -t, x));
            }
        }
        for (u, cs) in &chi.internal {
            let mut sorted = cs.clone();
            sorted.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
            let own = chi.own(*u);
            let (mut lhs, mut rhs) = (0.0, 0.0);
            for (s, &c) in sorted.iter().enumerate() {
                lhs += x[own.start + s];
                rhs += x[c];
                if lhs - rhs > gamma {
                    let mut coeffs: Vec<(usize, f64)> = (0..=s).map(|i| (own.start + i, 1.0)).collect();
                    coeffs.extend(sorted[..=s].iter().map(|&c| (c, -1.0)));
                    return Verdict::Cut(Cut::new(coeffs, 0.0, x));
                }
            }
        }
        Verdict::Feasible
    }

    /// Reference check of every subset `S ⊆ χ_u` (exponential; test oracle).
    pub fn exhaustive_feasible(&self, x: &[f64], gamma: f64) -> bool {
        let chi = &self.chi;
        let box_ok = x.iter().all(|&v| v <= 1.0 + gamma && v >= -gamma);
        let root_ok = chi.root_coords().enumerate().all(|(j, i)| j + 1 <= self.k || x[i] >= 1.0 - gamma);
        let floor_ok = !self.floor || chi.leaves.iter().all(|&l| x[chi.leaf_idx(l)] >= self.delta - gamma);
        let pin_ok = self.pinned.is_none_or(|p| (x[chi.leaf_idx(p)] - self.delta).abs() <= gamma);
        let mass_ok = !self.mass || {
            let s: f64 = chi.leaves.iter().map(|&l| x[chi.leaf_idx(l)]).sum();
            (s - self.mass_target()).abs() <= gamma
        };
        if !(box_ok && root_ok && floor_ok && pin_ok && mass_ok) {
            return false;
        }
        for (u, cs) in &chi.internal {
            assert!(cs.len() <= 20, "exhaustive oracle limited to 20 child coordinates");
            let own = chi.own(*u);
            for mask in 1u32..(1u32 << cs.len()) {
                let size = mask.count_ones() as usize;
                let lhs: f64 = (0..size).map(|i| x[own.start + i]).sum();
                let rhs: f64 = cs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &c)| x[c]).sum();
                if lhs - rhs > gamma {
                    return false;
                }
            }
        }
        true
    }

    /// Repairs a nearby candidate into `P_δ` (and the pin, if any).
    ///
    /// Box bounds, the δ floor, the pin and the canonical root values
    /// (`0` for `j ≤ k`, `1` beyond) are imposed first. A bottom-up pass then
    /// lowers each node's own coordinates until its prefix constraints hold,
    /// and a top-down pass lifts the smallest child coordinates, water-filling
    /// style, wherever a parent constraint is still violated. Leaf coordinates
    /// only ever rise in the second pass, so the δ floor survives.
    pub fn repair(&self, y: &[f64]) -> Result<AntiServerPoint, AntiServerError> {
        let chi = &self.chi;
        let d = self.delta;
        let mut x: Vec<f64> = y.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        let mut cap = vec![1.0f64; chi.len];
        for &l in &chi.leaves {
            let i = chi.leaf_idx(l);
            if self.floor {
                x[i] = x[i].max(d);
            }
        }
        if let Some(p) = self.pinned {
            x[chi.leaf_idx(p)] = d;
            let mut u = Some(p);
            while let Some(v) = u {
                cap[chi.offset[v]] = d;
                u = chi.parent[v];
            }
        }
        for (j, i) in chi.root_coords().enumerate() {
            x[i] = if j < self.k { 0.0 } else { 1.0 };
        }
        let fixed = |i: usize| chi.node_of[i] == chi.root || self.pinned.is_some_and(|p| i == chi.leaf_idx(p));
        for (u, cs) in chi.internal.iter().rev() {
            if *u == chi.root {
                continue;
            }
            let own = chi.own(*u);
            let mut vals: Vec<f64> = cs.iter().map(|&c| x[c]).collect();
            vals.sort_by(f64::total_cmp);
            let (mut q, mut p) = (0.0, 0.0);
            for (s, i) in own.enumerate() {
                q += vals[s];
                let allowed = (q - p).max(0.0);
                if x[i] > allowed {
                    x[i] = allowed;
                }
                x[i] = x[i].min(cap[i]);
                p += x[i];
            }
        }
        for (u, cs) in &chi.internal {
            let own: Vec<f64> = chi.own(*u).map(|i| x[i]).collect();
            let ok = |x: &[f64]| {
                let mut vals: Vec<f64> = cs.iter().map(|&c| x[c]).collect();
                vals.sort_by(f64::total_cmp);
                let (mut p, mut q) = (0.0, 0.0);
                for s in 0..own.len() {
                    p += own[s];
                    q += vals[s];
                    if p - q > 1e-13 {
                        return false;
                    }
                }
                true
            };
            if ok(&x) {
                continue;
            }
            let lift = |x: &mut Vec<f64>, level: f64, base: &[f64]| {
                for (t, &c) in cs.iter().enumerate() {
                    x[c] = if fixed(c) { base[t] } else { base[t].max(level.min(cap[c])) };
                }
            };
            let base: Vec<f64> = cs.iter().map(|&c| x[c]).collect();
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                lift(&mut x, mid, &base);
                if ok(&x) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            lift(&mut x, hi, &base);
        }
        let out = AntiServerPoint { k: self.k, x };
        let plain = Polytope { mass: false, ..self.clone() };
        match plain.separate(&out.x, 1e-12) {
            Verdict::Feasible => Ok(out),
            Verdict::Cut(c) => Err(AntiServerError::NotNear(c.violation)),
        }
    }
}

/// Integral encoding: `x_{uj} = 0` when subtree `u` holds at least `j` servers.
pub fn from_config(tree: &WeightedTree, chi: &Chi, k: usize, config: &[usize]) -> Result<AntiServerPoint, AntiServerError> {
    if config.len() != k {
        return Err(AntiServerError::SizeMismatch(config.len(), k));
    }
    let counts = tree.counts(config);
    let mut x = vec![1.0; chi.len()];
    for u in 0..tree.len() {
        for j in 1..=chi.size[u] {
            if counts[u] >= j as i64 {
                x[chi.idx(u, j)] = 0.0;
            }
        }
    }
    Ok(AntiServerPoint { k, x })
}

/// Leaf measure `z_ℓ = (1 − x_{ℓ1})/(1 − δ)` of mass `k + ½`, quantized to
/// denominator `denom` (even) with the total kept exact. Leaves with
/// `x_{ℓ1} = δ` map to exactly one unit.
pub fn to_leaf_measure(
    tree: &WeightedTree,
    chi: &Chi,
    x: &AntiServerPoint,
    denom: i64,
    tol: f64,
) -> Result<MassVector, AntiServerError> {
    assert!(denom % 2 == 0, "denominator must be even to hold k + 1/2");
    let d = delta(x.k);
    let n = chi.n_leaves();
    let expected = n as f64 - x.k as f64;
    let found: f64 = chi.leaves.iter().map(|&l| x.x[chi.leaf_idx(l)]).sum();
    if (found - expected).abs() > tol {
        return Err(AntiServerError::MassCondition { found, expected });
    }
    let total = (2 * x.k as i64 + 1) * denom / 2;
    let mut leaf_num = vec![0i64; tree.len()];
    let mut free: Vec<(usize, f64)> = Vec::new();
    let mut used = 0i64;
    for &l in &chi.leaves {
        let v = x.x[chi.leaf_idx(l)];
        if v == d {
            leaf_num[l] = denom;
            used += denom;
        } else {
            free.push((l, ((1.0 - v) / (1.0 - d)).max(0.0) * denom as f64));
        }
    }
    let target = total - used;
    let raw: f64 = free.iter().map(|p| p.1).sum();
    if !free.is_empty() {
        let scale = if raw > 0.0 { target as f64 / raw } else { 0.0 };
        let mut parts: Vec<(usize, i64, f64)> = free
            .iter()
            .map(|&(l, r)| {
                let v = if raw > 0.0 { r * scale } else { target as f64 / free.len() as f64 };
                (l, v.floor() as i64, v - v.floor())
            })
            .collect();
        let mut rest = target - parts.iter().map(|p| p.1).sum::<i64>();
        let mut order: Vec<usize> = (0..parts.len()).collect();
        order.sort_by(|&a, &b| parts[b].2.total_cmp(&parts[a].2).then(a.cmp(&b)));
        let mut i = 0;
        while rest > 0 {
            parts[order[i % order.len()]].1 += 1;
            rest -= 1;
            i += 1;
        }
        while rest < 0 {
            let j = order[order.len() - 1 - (i % order.len())];
            if parts[j].1 > 0 {
                parts[j].1 -= 1;
                rest += 1;
            }
            i += 1;
        }
        for (l, v, _) in parts {
            leaf_num[l] = v;
        }
    }
    Ok(MassVector::from_leaves(tree, denom, &leaf_num))
}

/// `D(x‖x′) = Σ_{u≠r} w_u Σ_j ((x+δ) log((x+δ)/(x′+δ)) − x + x′)`.
pub fn divergence(chi: &Chi, x: &[f64], x2: &[f64], delta: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..chi.len() {
        let w = chi.weight[i];
        if w == 0.0 {
            continue;
        }
        let (a, b) = (x[i] + delta, x2[i] + delta);
        acc += w * (a * (a / b).ln() - x[i] + x2[i]);
    }
    acc
}

/// `∂D/∂x_{uj} = w_u log((x_{uj}+δ)/(x′_{uj}+δ))`.
pub fn divergence_gradient(chi: &Chi, x: &[f64], x2: &[f64], delta: f64) -> Vec<f64> {
    (0..chi.len()).map(|i| chi.weight[i] * ((x[i] + delta) / (x2[i] + delta)).ln()).collect()
}

/// `Σ w_u (x_{ui} − x′_{ui})^+`.
pub fn positive_movement(chi: &Chi, x: &[f64], x2: &[f64]) -> f64 {
    (0..chi.len()).map(|i| chi.weight[i] * (x[i] - x2[i]).max(0.0)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::BitStream;
    use crate::metric::{hst, random_hst, random_tree, star};
    use crate::rat::{int, rat};
    use proptest::prelude::*;

    fn rand_unit(bits: &mut BitStream) -> f64 {
        bits.bits(20) as f64 / (1u64 << 20) as f64
    }

    #[test]
    fn from_config_examples() {
        let t = hst(&[2, 2], int(2), int(2)).unwrap();
        let tr = t.tree();
        let chi = Chi::new(tr);
        let l = tr.leaves().to_vec();
        let x = from_config(tr, &chi, 2, &[l[0], l[2]]).unwrap();
        for &leaf in &l {
            let v = x.x[chi.leaf_idx(leaf)];
            assert_eq!(v, if leaf == l[0] || leaf == l[2] { 0.0 } else { 1.0 });
        }
        let x = from_config(tr, &chi, 2, &[l[0], l[1]]).unwrap();
        let u = tr.parent(l[0]).unwrap();
        assert_eq!((x.x[chi.idx(u, 1)], x.x[chi.idx(u, 2)]), (0.0, 0.0));
        let p = Polytope::plain(tr, 2);
        assert_eq!(p.separate(&x.x, 0.0), Verdict::Feasible);
        assert_eq!(from_config(tr, &chi, 2, &[l[0]]), Err(AntiServerError::SizeMismatch(1, 2)));
    }

    #[test]
    fn root_cut() {
        let t = star(3, int(1));
        let p = Polytope::plain(t.tree(), 1);
        let mut x = from_config(t.tree(), &p.chi, 1, &[1]).unwrap().x;
        x[p.chi.idx(0, 2)] = 0.0;
        match p.separate(&x, 0.0) {
            Verdict::Cut(c) => assert_eq!(c.coeffs, vec![(p.chi.idx(0, 2), -1.0)]),
            v => panic!("expected a root cut, got {v:?}"),
        }
    }

    #[test]
    fn leaf_measure_examples() {
        let t = star(3, int(1));
        let tr = t.tree();
        let chi = Chi::new(tr);
        let x = AntiServerPoint { k: 1, x: vec![0.0, 1.0, 1.0, 1.0 / 3.0, 5.0 / 6.0, 5.0 / 6.0] };
        let z = to_leaf_measure(tr, &chi, &x, 1 << 20, 1e-9).unwrap();
        assert_eq!(z.leaf_values(tr), vec![int(1), rat(1, 4), rat(1, 4)]);
        assert_eq!(z.mass(tr), rat(3, 2));
        let bad = AntiServerPoint { k: 1, x: vec![0.0, 1.0, 1.0, 1.0 / 3.0, 1.0, 1.0] };
        assert!(matches!(to_leaf_measure(tr, &chi, &bad, 1 << 20, 1e-9), Err(AntiServerError::MassCondition { .. })));
        let one = AntiServerPoint { k: 1, x: vec![0.0, 1.0, 1.0, 1.0 / 3.0, 1.0, 2.0 / 3.0] };
        let z = to_leaf_measure(tr, &chi, &one, 1 << 20, 1e-9).unwrap();
        assert_eq!(z.value(2), int(0));
        assert_eq!(z.value(1), int(1));
    }

    #[test]
    fn divergence_examples() {
        let t = star(1, int(1));
        let chi = Chi::new(t.tree());
        let (x, x2) = (vec![0.0, 2.0 / 3.0], vec![0.0, 1.0 / 3.0]);
        let want = (1.5f64).ln() - 1.0 / 3.0;
        assert!((divergence(&chi, &x, &x2, 1.0 / 3.0) - want).abs() < 1e-15);
        assert_eq!(divergence(&chi, &x, &x, 1.0 / 3.0), 0.0);
    }

    #[test]
    fn positive_movement_example() {
        let parent = vec![None, Some(0)];
        let tr = crate::metric::WeightedTree::new(parent, vec![int(0), int(3)]).unwrap();
        let chi = Chi::new(&tr);
        let (a, b) = (vec![0.0, 0.7], vec![0.0, 0.5]);
        assert!((positive_movement(&chi, &a, &b) - 0.6).abs() < 1e-12);
        assert_eq!(positive_movement(&chi, &a, &a), 0.0);
    }

    #[test]
    fn repair_examples() {
        let t = hst(&[2, 2], int(10), int(10)).unwrap();
        let tr = t.tree();
        let p = Polytope { floor: true, ..Polytope::plain(tr, 2) };
        let l = tr.leaves().to_vec();
        let mut x = from_config(tr, &p.chi, 2, &[l[0], l[3]]).unwrap();
        for &leaf in &l {
            let i = p.chi.leaf_idx(leaf);
            x.x[i] = x.x[i].max(p.delta);
        }
        assert_eq!(p.separate(&x.x, 0.0), Verdict::Feasible);
        assert_eq!(p.repair(&x.x).unwrap(), x);
        let mut y = x.x.clone();
        let i = p.chi.leaf_idx(l[0]);
        y[i] -= 1e-9;
        let r = p.repair(&y).unwrap();
        let dist = r.x.iter().zip(&x.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dist <= 1e-8, "moved by {dist}");
    }

    #[test]
    fn repair_respects_pin() {
        let t = hst(&[2, 3], int(10), int(10)).unwrap();
        let tr = t.tree();
        let l = tr.leaves().to_vec();
        let p = Polytope::projection(tr, 2, Some(l[4]));
        let x = from_config(tr, &p.chi, 2, &[l[0], l[1]]).unwrap();
        let r = p.repair(&x.x).unwrap();
        assert_eq!(r.x[p.chi.leaf_idx(l[4])], p.delta);
        let plain = Polytope { mass: false, ..p.clone() };
        assert_eq!(plain.separate(&r.x, 1e-12), Verdict::Feasible);
    }

    proptest! {
        #[test]
        fn oracle_matches_exhaustive(seed in any::<u64>(), k in 1usize..4) {
            let mut bits = BitStream::new(seed);
            let tr = random_tree(5, &mut bits);
            prop_assume!(k <= tr.n_leaves());
            let p = Polytope::plain(&tr, k);
            let base = from_config(&tr, &p.chi, k, &tr.leaves()[..k]).unwrap().x;
            let x: Vec<f64> = base.iter().map(|&b| if bits.below(3) == 0 { rand_unit(&mut bits) } else { b }).collect();
            let fast = p.separate(&x, 0.0) == Verdict::Feasible;
            prop_assert_eq!(fast, p.exhaustive_feasible(&x, 0.0));
            if let Verdict::Cut(c) = p.separate(&x, 0.0) {
                prop_assert!(c.violation > 0.0);
                prop_assert!(c.coeffs.iter().all(|&(_, v)| v.abs() == 1.0));
            }
        }

        #[test]
        fn from_config_always_feasible(seed in any::<u64>(), k in 1usize..5) {
            let mut bits = BitStream::new(seed);
            let tr = random_tree(8, &mut bits);
            let chi = Chi::new(&tr);
            let l = tr.leaves();
            let mut c: Vec<usize> = (0..k).map(|_| l[bits.below(l.len() as u64) as usize]).collect();
            c.sort();
            let x = from_config(&tr, &chi, k, &c).unwrap();
            let p = Polytope::plain(&tr, k);
            prop_assert_eq!(p.separate(&x.x, 0.0), Verdict::Feasible);
        }

        #[test]
        fn gradient_matches_finite_differences(seed in any::<u64>()) {
            let mut bits = BitStream::new(seed);
            let t = random_hst(8, 3, int(10), &mut bits);
            let chi = Chi::new(t.tree());
            let d = 1.0 / 5.0;
            let x: Vec<f64> = (0..chi.len()).map(|_| 0.05 + 0.9 * rand_unit(&mut bits)).collect();
            let x2: Vec<f64> = (0..chi.len()).map(|_| 0.05 + 0.9 * rand_unit(&mut bits)).collect();
            let g = divergence_gradient(&chi, &x, &x2, d);
            let h = 1e-6;
            for i in 0..chi.len() {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (divergence(&chi, &a, &x2, d) - divergence(&chi, &b, &x2, d)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-4 * g[i].abs().max(1e-2), "coord {}: {} vs {}", i, fd, g[i]);
            }
            prop_assert!(divergence(&chi, &x, &x2, d) >= 0.0);
        }

        #[test]
        fn movement_antisymmetry(seed in any::<u64>()) {
            let mut bits = BitStream::new(seed);
            let t = hst(&[2, 2], int(4), int(2)).unwrap();
            let chi = Chi::new(t.tree());
            let x: Vec<f64> = (0..chi.len()).map(|_| rand_unit(&mut bits)).collect();
            let y: Vec<f64> = (0..chi.len()).map(|_| rand_unit(&mut bits)).collect();
            let lhs = positive_movement(&chi, &x, &y) - positive_movement(&chi, &y, &x);
            let rhs: f64 = (0..chi.len()).map(|i| chi.weights()[i] * (x[i] - y[i])).sum();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn repaired_points_pass(seed in any::<u64>(), k in 1usize..3) {
            let mut bits = BitStream::new(seed);
            let t = random_hst(8, 3, int(10), &mut bits);
            let tr = t.tree();
            prop_assume!(k < tr.n_leaves());
            let pin = tr.leaves()[bits.below(tr.n_leaves() as u64) as usize];
            let p = Polytope::projection(tr, k, Some(pin));
            let y: Vec<f64> = (0..p.chi.len()).map(|_| rand_unit(&mut bits) * 1.2 - 0.1).collect();
            let r = p.repair(&y).unwrap();
            let plain = Polytope { mass: false, ..p.clone() };
            prop_assert_eq!(plain.separate(&r.x, 1e-12), Verdict::Feasible);
            prop_assert!(plain.exhaustive_feasible(&r.x, 1e-12));
        }
    }
}
