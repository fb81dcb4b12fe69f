//! Inner and leaf measures on a tree, the σ map and tree optimal transport.
//!
//! A [`MassVector`] stores subtree aggregates `z_u = num[u] / denom`. The
//! point mass at `u` is `z_u − Σ_{c ∈ C_u} z_c`; a leaf measure has no point
//! mass on internal nodes.

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitStream;
use crate::metric::WeightedTree;
use crate::rat::{int, rat, Rat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MeasureError {
    #[error("measure does not match the tree ({0} entries for {1} nodes)")]
    TreeMismatch(usize, usize),
    #[error("measures have different total mass")]
    MassMismatch,
    #[error("invalid measure: {0}")]
    InvalidMeasure(Violation),
}

/// Subtree-aggregate mass vector with a common denominator.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MassVector {
    #[serde(rename = "denominator")]
    denom: i64,
    #[serde(rename = "numerators")]
    num: Vec<i64>,
}

/// Which refinement of the inner-measure conditions to check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Inner,
    Leaf,
    Barely(i64),
}

/// First invariant found broken by [`validate`].
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("root mass is {found}, expected {expected}")]
    RootMass { found: Rat, expected: Rat },
    #[error("negative mass at node {0}")]
    Negative(usize),
    #[error("children of node {0} hold more than the node")]
    Inner(usize),
    #[error("internal node {0} carries point mass")]
    PointMass(usize),
    #[error("value at node {node} is not a multiple of 1/{m}")]
    NotBarely { node: usize, m: i64 },
    #[error("vector has {0} entries for a tree of {1} nodes")]
    Length(usize, usize),
}

impl MassVector {
    pub fn new(denom: i64, num: Vec<i64>) -> Self {
        assert!(denom > 0, "denominator must be positive");
        Self { denom, num }
    }

    pub fn zero(len: usize, denom: i64) -> Self {
        Self::new(denom, vec![0; len])
    }

    /// Integral leaf measure with one unit per server of `config`.
    pub fn from_config(tree: &WeightedTree, config: &[usize], denom: i64) -> Self {
        let c = tree.counts(config);
        Self::new(denom, c.into_iter().map(|x| x * denom).collect())
    }

    /// Leaf measure from leaf numerators, given per node id (internal entries ignored).
    pub fn from_leaves(tree: &WeightedTree, denom: i64, leaf_num: &[i64]) -> Self {
        let mut num = vec![0i64; tree.len()];
        for &u in tree.bfs().iter().rev() {
            num[u] = if tree.is_leaf(u) { leaf_num[u] } else { tree.children(u).iter().map(|&c| num[c]).sum() };
        }
        Self::new(denom, num)
    }

    pub fn denom(&self) -> i64 {
        self.denom
    }

    pub fn nums(&self) -> &[i64] {
        &self.num
    }

    pub fn num(&self, u: usize) -> i64 {
        self.num[u]
    }

    pub fn set_num(&mut self, u: usize, v: i64) {
        self.num[u] = v;
    }

    pub fn len(&self) -> usize {
        self.num.len()
    }

    pub fn is_empty(&self) -> bool {
        self.num.is_empty()
    }

    /// `z_u` as an exact rational.
    pub fn value(&self, u: usize) -> Rat {
        rat(self.num[u] as i128, self.denom as i128)
    }

    /// Total mass `z_r`.
    pub fn mass(&self, tree: &WeightedTree) -> Rat {
        self.value(tree.root())
    }

    /// Numerator of the point mass `z_[u]`.
    pub fn point_num(&self, tree: &WeightedTree, u: usize) -> i64 {
        self.num[u] - tree.children(u).iter().map(|&c| self.num[c]).sum::<i64>()
    }

    pub fn point_mass(&self, tree: &WeightedTree, u: usize) -> Rat {
        rat(self.point_num(tree, u) as i128, self.denom as i128)
    }

    /// Same values over denominator `d`, if every value is representable.
    pub fn with_denom(&self, d: i64) -> Option<Self> {
        let mut num = Vec::with_capacity(self.num.len());
        for &x in &self.num {
            let p = x as i128 * d as i128;
            if p % self.denom as i128 != 0 {
                return None;
            }
            num.push((p / self.denom as i128) as i64);
        }
        Some(Self::new(d, num))
    }

    /// Smallest denominator representing the same values.
    pub fn reduced(&self) -> Self {
        let mut g = self.denom;
        for &x in &self.num {
            g = num_integer::gcd(g, x);
        }
        Self::new(self.denom / g, self.num.iter().map(|x| x / g).collect())
    }

    /// Every value is a multiple of `1/m`.
    pub fn is_barely(&self, m: i64) -> bool {
        self.num.iter().all(|&x| (x as i128 * m as i128) % self.denom as i128 == 0)
    }

    /// Leaf values as rationals in [`WeightedTree::leaves`] order.
    pub fn leaf_values(&self, tree: &WeightedTree) -> Vec<Rat> {
        tree.leaves().iter().map(|&l| self.value(l)).collect()
    }

    /// Debug dump `{"denominator": M, "numerators": [...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

/// `σ(x) = ⌊x⌋ + 2(x − ⌊x⌋ − ½)^+`.
pub fn sigma(x: Rat) -> Rat {
    assert!(x >= Rat::zero(), "sigma is defined on non-negative reals");
    let f = x.floor();
    let r = x - f - rat(1, 2);
    if r > Rat::zero() {
        f + r * int(2)
    } else {
        f
    }
}

/// σ on a numerator over denominator `d`; the result has the same denominator.
pub fn sigma_num(x: i64, d: i64) -> i64 {
    let (f, r) = (x.div_euclid(d), x.rem_euclid(d));
    f * d + (2 * r - d).max(0)
}

/// Element-wise σ on aggregates. The output keeps the input denominator.
pub fn sigma_map(tree: &WeightedTree, z: &MassVector) -> Result<MassVector, MeasureError> {
    check_inner(tree, z).map_err(MeasureError::InvalidMeasure)?;
    Ok(MassVector::new(z.denom, z.num.iter().map(|&x| sigma_num(x, z.denom)).collect()))
}

/// `Σ_{u≠r} w_u |z_u − z′_u|`.
pub fn ot_distance(tree: &WeightedTree, a: &MassVector, b: &MassVector) -> Result<Rat, MeasureError> {
    for v in [a, b] {
        if v.len() != tree.len() {
            return Err(MeasureError::TreeMismatch(v.len(), tree.len()));
        }
    }
    let r = tree.root();
    if a.num[r] as i128 * b.denom as i128 != b.num[r] as i128 * a.denom as i128 {
        return Err(MeasureError::MassMismatch);
    }
    Ok(ot_unchecked(tree, a, b))
}

/// OT without the mass check, for callers that already know the masses agree.
pub(crate) fn ot_unchecked(tree: &WeightedTree, a: &MassVector, b: &MassVector) -> Rat {
    let (da, db) = (a.denom as i128, b.denom as i128);
    let mut total = Rat::zero();
    if da == db {
        let mut acc = Rat::zero();
        for u in 0..tree.len() {
            if u != tree.root() && a.num[u] != b.num[u] {
                acc += tree.weight(u) * int((a.num[u] - b.num[u]).abs() as i128);
            }
        }
        return acc / int(da);
    }
    for u in 0..tree.len() {
        if u == tree.root() {
            continue;
        }
        let diff = (a.num[u] as i128 * db - b.num[u] as i128 * da).abs();
        if diff != 0 {
            total += tree.weight(u) * int(diff);
        }
    }
    total / int(da * db)
}

/// Transport plan between two measures over the same denominator, as
/// `(from, to, units)` triples of point-mass units.
///
/// Surpluses and deficits are matched inside the lowest subtree containing
/// both, so every edge carries flow in one direction only and the plan's cost
/// equals [`ot_distance`].
pub fn transport_plan(tree: &WeightedTree, a: &MassVector, b: &MassVector) -> Result<Vec<(usize, usize, i64)>, MeasureError> {
    for v in [a, b] {
        if v.len() != tree.len() {
            return Err(MeasureError::TreeMismatch(v.len(), tree.len()));
        }
    }
    if a.denom != b.denom || a.num[tree.root()] != b.num[tree.root()] {
        return Err(MeasureError::MassMismatch);
    }
    let mut supply: Vec<Vec<(usize, i64)>> = vec![Vec::new(); tree.len()];
    let mut demand: Vec<Vec<(usize, i64)>> = vec![Vec::new(); tree.len()];
    let mut plan = Vec::new();
    for &u in tree.bfs().iter().rev() {
        let (mut s, mut d) = (Vec::new(), Vec::new());
        for &c in tree.children(u) {
            s.append(&mut supply[c]);
            d.append(&mut demand[c]);
        }
        let diff = b.point_num(tree, u) - a.point_num(tree, u);
        if diff < 0 {
            s.push((u, -diff));
        } else if diff > 0 {
            d.push((u, diff));
        }
        let (mut i, mut j) = (0, 0);
        while i < s.len() && j < d.len() {
            let q = s[i].1.min(d[j].1);
            plan.push((s[i].0, d[j].0, q));
            s[i].1 -= q;
            d[j].1 -= q;
            if s[i].1 == 0 {
                i += 1;
            }
            if d[j].1 == 0 {
                j += 1;
            }
        }
        supply[u] = s.split_off(i);
        demand[u] = d.split_off(j);
    }
    Ok(plan)
}

fn check_inner(tree: &WeightedTree, z: &MassVector) -> Result<(), Violation> {
    if z.len() != tree.len() {
        return Err(Violation::Length(z.len(), tree.len()));
    }
    for &u in tree.bfs() {
        if z.num[u] < 0 {
            return Err(Violation::Negative(u));
        }
        if z.point_num(tree, u) < 0 {
            return Err(Violation::Inner(u));
        }
    }
    Ok(())
}

/// Checks the inner-measure conditions, root mass `mass`, and the refinement `kind`.
pub fn validate(tree: &WeightedTree, z: &MassVector, kind: Kind, mass: Rat) -> Result<(), Violation> {
    check_inner(tree, z)?;
    let found = z.mass(tree);
    if found != mass {
        return Err(Violation::RootMass { found, expected: mass });
    }
    match kind {
        Kind::Inner => {}
        Kind::Leaf => {
            for &u in tree.bfs() {
                if !tree.is_leaf(u) && z.point_num(tree, u) != 0 {
                    return Err(Violation::PointMass(u));
                }
            }
        }
        Kind::Barely(m) => {
            for &u in tree.bfs() {
                if (z.num[u] as i128 * m as i128) % z.denom as i128 != 0 {
                    return Err(Violation::NotBarely { node: u, m });
                }
            }
        }
    }
    Ok(())
}

/// Random inner measure on the `1/d` grid: `k·d` units dropped on uniformly random nodes.
pub fn random_inner(tree: &WeightedTree, k: i64, d: i64, bits: &mut BitStream) -> MassVector {
    let mut point = vec![0i64; tree.len()];
    for _ in 0..k * d {
        point[bits.below(tree.len() as u64) as usize] += 1;
    }
    let mut num = vec![0i64; tree.len()];
    for &u in tree.bfs().iter().rev() {
        num[u] = point[u] + tree.children(u).iter().map(|&c| num[c]).sum::<i64>();
    }
    MassVector::new(d, num)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::{random_tree, star, WeightedTree};
    use num_traits::Signed;
    use proptest::prelude::*;

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(rat(1, 2)), int(0));
        assert_eq!(sigma(int(1)), int(1));
        assert_eq!(sigma(rat(3, 4)), rat(1, 2));
        assert_eq!(sigma(rat(5, 2)), int(2));
        assert_eq!(sigma(rat(2, 5)), int(0));
        for x in 0..50 {
            assert_eq!(rat(sigma_num(x, 8) as i128, 8), sigma(rat(x as i128, 8)));
        }
    }

    #[test]
    fn sigma_chain_of_one_and_a_quarter() {
        let parent = vec![None, Some(0), Some(1)];
        let t = WeightedTree::new(parent, vec![int(0), int(1), int(1)]).unwrap();
        let z = MassVector::new(4, vec![5, 5, 5]);
        let s = sigma_map(&t, &z).unwrap();
        assert_eq!(s.nums(), &[4, 4, 4]);
        assert!(validate(&t, &s, Kind::Leaf, int(1)).is_ok());
    }

    #[test]
    fn integral_is_fixed() {
        let t = star(4, int(1));
        let z = MassVector::from_config(t.tree(), &[1, 3], 1);
        assert_eq!(sigma_map(t.tree(), &z).unwrap(), z);
    }

    #[test]
    fn ot_examples() {
        let t = star(2, int(1));
        let a = MassVector::from_config(t.tree(), &[1], 1);
        let b = MassVector::from_config(t.tree(), &[2], 1);
        assert_eq!(ot_distance(t.tree(), &a, &a).unwrap(), int(0));
        assert_eq!(ot_distance(t.tree(), &a, &b).unwrap(), int(2));
        let c = MassVector::from_config(t.tree(), &[1, 2], 1);
        assert_eq!(ot_distance(t.tree(), &a, &c), Err(MeasureError::MassMismatch));
        assert!(matches!(ot_distance(t.tree(), &a, &MassVector::zero(2, 1)), Err(MeasureError::TreeMismatch(2, 3))));
    }

    #[test]
    fn validate_reports() {
        let t = star(3, int(1));
        let tr = t.tree();
        let z = MassVector::new(2, vec![2, 1, 1, 0]);
        assert!(validate(tr, &z, Kind::Leaf, int(1)).is_ok());
        let inj = MassVector::new(2, vec![3, 1, 1, 0]);
        assert_eq!(validate(tr, &inj, Kind::Leaf, rat(3, 2)), Err(Violation::PointMass(0)));
        assert!(validate(tr, &inj, Kind::Inner, rat(3, 2)).is_ok());
        assert!(matches!(validate(tr, &z, Kind::Inner, int(2)), Err(Violation::RootMass { .. })));
        assert_eq!(validate(tr, &z, Kind::Barely(1), int(1)), Err(Violation::NotBarely { node: 1, m: 1 }));
        let bad = MassVector::new(1, vec![1, 1, 1, 0]);
        assert_eq!(validate(tr, &bad, Kind::Inner, int(1)), Err(Violation::Inner(0)));
    }

    #[test]
    fn json_dump() {
        let z = MassVector::new(3, vec![3, 1, 2]);
        assert_eq!(serde_json::to_string(&z.to_json()).unwrap(), r#"{"denominator":3,"numerators":[3,1,2]}"#);
    }

    proptest! {
        #[test]
        fn sigma_lipschitz_and_monotone(a in 0i64..400, b in 0i64..400, d in 1i64..24) {
            let (x, y) = (rat(a as i128, d as i128), rat(b as i128, d as i128));
            let (sx, sy) = (sigma(x), sigma(y));
            prop_assert!((sx - sy).abs() <= (x - y).abs() * int(2));
            if x <= y { prop_assert!(sx <= sy); }
        }

        #[test]
        fn sigma_superadditive(a in 0i64..200, b in 0i64..200, d in 1i64..24) {
            let (x, y) = (rat(a as i128, d as i128), rat(b as i128, d as i128));
            prop_assert!(sigma(x) + sigma(y) <= sigma(x + y));
        }

        #[test]
        fn sigma_map_halves_granularity(seed in any::<u64>(), m in 1i64..=12, k in 1i64..4) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(6, &mut bits);
            let z = random_inner(&t, k, 2 * m, &mut bits);
            let s = sigma_map(&t, &z).unwrap();
            prop_assert!(validate(&t, &s, Kind::Barely(m), int(k as i128)).is_ok());
            prop_assert!(s.is_barely(m));
        }

        #[test]
        fn sigma_map_on_k_plus_half(seed in any::<u64>(), k in 1i64..4) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(6, &mut bits);
            let mut z = random_inner(&t, k, 2, &mut bits);
            let leaf = t.leaves()[0];
            for u in t.ancestors(leaf) { z.set_num(u, z.num(u) + 1); }
            let s = sigma_map(&t, &z).unwrap();
            prop_assert_eq!(s.mass(&t), int(k as i128));
        }

        #[test]
        fn ot_metric_axioms(seed in any::<u64>(), k in 1i64..4) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(6, &mut bits);
            let a = random_inner(&t, k, 3, &mut bits);
            let b = random_inner(&t, k, 4, &mut bits);
            let c = random_inner(&t, k, 6, &mut bits);
            let ab = ot_distance(&t, &a, &b).unwrap();
            prop_assert_eq!(ab, ot_distance(&t, &b, &a).unwrap());
            prop_assert!(ot_distance(&t, &a, &c).unwrap() <= ab + ot_distance(&t, &b, &c).unwrap());
            prop_assert_eq!(ot_distance(&t, &a, &a.with_denom(12).unwrap()).unwrap(), int(0));
        }

        #[test]
        fn transport_plan_realizes_ot(seed in any::<u64>(), k in 1i64..4, d in 1i64..6) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(7, &mut bits);
            let a = random_inner(&t, k, d, &mut bits);
            let b = random_inner(&t, k, d, &mut bits);
            let plan = transport_plan(&t, &a, &b).unwrap();
            let mut point: Vec<i64> = (0..t.len()).map(|u| a.point_num(&t, u)).collect();
            let mut cost = Rat::zero();
            for &(f, to, q) in &plan {
                prop_assert!(q > 0 && f != to);
                point[f] -= q;
                point[to] += q;
                cost += t.node_distance(f, to) * int(q as i128);
            }
            let target: Vec<i64> = (0..t.len()).map(|u| b.point_num(&t, u)).collect();
            prop_assert_eq!(point, target);
            prop_assert_eq!(cost / int(d as i128), ot_distance(&t, &a, &b).unwrap());
        }
    }
}
