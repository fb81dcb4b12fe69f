//! Fractional to `m`-barely fractional conversion on trees.
//!
//! Each request runs five stages on the fractional measure `x(t)`:
//!
//! 1. `z¹ = σ(x)` element-wise;
//! 2. hysteresis: `z²` moves towards `z¹` over the grid `(1/m′)ℕ`,
//!    `m′ = 2m + 2k + 1`, only as far as a whole unit still pays off;
//! 3. `z³ = λ·z²` with `λ = m′/(2m)`;
//! 4. `z⁴ = σ(z³)`, now `m`-barely fractional with mass `k`;
//! 5. mass that passes through inner nodes is deferred until it reaches a
//!    leaf, giving the leaf measure `y(t)`.
//!
//! [`Filtered`] drops requests that the current output already serves.

use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::bits::BitStream;
use crate::fractional::{FractionalAlgorithm, FractionalError};
use crate::measure::{self, Kind, MassVector, MeasureError, Violation};
use crate::metric::WeightedTree;
use crate::rat::{int, lcm, rat, serde_rat, Rat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscretizeError {
    #[error("granularity m = {m} is below 2k²+k = {min}")]
    GranularityTooSmall { m: usize, min: usize },
    #[error("hysteresis did not settle within {0} unit moves")]
    NonTermination(usize),
    #[error("unit tracker: {0}")]
    TrackerInconsistency(String),
    #[error("invalid measure: {0}")]
    InvalidMeasure(#[from] Violation),
    #[error("measure failure: {0}")]
    Measure(#[from] MeasureError),
    #[error("fractional source: {0}")]
    Fractional(#[from] FractionalError),
    #[error("invariant broken at step {step}: {what}")]
    Invariant { step: usize, what: String },
    #[error("instance too large for the oracle: {0}")]
    InstanceTooLarge(String),
}

/// Smallest admissible granularity `2k² + k`.
pub fn min_granularity(k: usize) -> usize {
    2 * k * k + k
}

/// `m′ = 2m + 2k + 1`.
pub fn hysteresis_denom(k: usize, m: usize) -> usize {
    2 * m + 2 * k + 1
}

/// `λ = 1/(1 − (2k+1)/m′) = m′/(2m)`.
pub fn lambda(k: usize, m: usize) -> Rat {
    rat(hysteresis_denom(k, m) as i128, 2 * m as i128)
}

/// Stage 1: `z¹ = σ(x)` on every node.
pub fn step1_sigma(tree: &WeightedTree, x: &MassVector, k: usize) -> Result<MassVector, DiscretizeError> {
    measure::validate(tree, x, Kind::Inner, int(k as i128))?;
    Ok(measure::sigma_map(tree, x)?)
}

/// Stage 2: starting from `prev` (denominator `m′`), move units of `1/m′`
/// across edges towards `target` while the side they leave still holds at
/// least one unit more than `target` does there.
///
/// Edges are scanned in BFS order, the edge to the parent before the edges to
/// the children, until a full sweep makes no move. Returns the new measure and
/// the number of unit moves.
pub fn step2_hysteresis(tree: &WeightedTree, prev: &MassVector, target: &MassVector) -> Result<(MassVector, usize), DiscretizeError> {
    if prev.len() != tree.len() || target.len() != tree.len() {
        return Err(MeasureError::TreeMismatch(prev.len().min(target.len()), tree.len()).into());
    }
    let r = tree.root();
    if prev.value(r) != target.value(r) {
        return Err(MeasureError::MassMismatch.into());
    }
    let mp = prev.denom();
    let d = lcm(mp as i128, target.denom() as i128) as i64;
    let s = d / mp;
    let t: Vec<i64> = target.nums().iter().map(|&v| v * (d / target.denom())).collect();
    let mut z = prev.nums().to_vec();
    let point = |z: &[i64], u: usize| z[u] - tree.children(u).iter().map(|&c| z[c]).sum::<i64>();
    let budget = (prev.num(r).max(1) as usize) * tree.len().max(2);
    let mut moves = 0usize;
    loop {
        let before = moves;
        for &u in tree.bfs() {
            if u != r && z[u] * s - t[u] >= s {
                let q = point(&z, u).min((z[u] * s - t[u]) / s);
                if q > 0 {
                    z[u] -= q;
                    moves += q as usize;
                }
            }
            for &c in tree.children(u) {
                if t[c] - z[c] * s >= s {
                    let q = point(&z, u).min((t[c] - z[c] * s) / s);
                    if q > 0 {
                        z[c] += q;
                        moves += q as usize;
                    }
                }
            }
        }
        if moves == before {
            break;
        }
        if moves > budget {
            return Err(DiscretizeError::NonTermination(budget));
        }
    }
    Ok((MassVector::new(mp, z), moves))
}

/// Stage 3: `z³ = λ·z²`. Values `j/m′` become `j/(2m)`.
pub fn step3_scale(z2: &MassVector, k: usize, m: usize) -> Result<MassVector, DiscretizeError> {
    if m < min_granularity(k) {
        return Err(DiscretizeError::GranularityTooSmall { m, min: min_granularity(k) });
    }
    let mp = hysteresis_denom(k, m) as i64;
    let z2 = z2.with_denom(mp).ok_or(Violation::NotBarely { node: 0, m: mp })?;
    Ok(MassVector::new(2 * m as i64, z2.nums().to_vec()))
}

/// Stage 4: `z⁴ = σ(z³)`, reported over denominator `m`.
pub fn step4_sigma(tree: &WeightedTree, z3: &MassVector, m: usize) -> Result<MassVector, DiscretizeError> {
    let s = measure::sigma_map(tree, &z3.with_denom(2 * m as i64).ok_or(Violation::NotBarely { node: 0, m: 2 * m as i64 })?)?;
    Ok(s.with_denom(m as i64).expect("σ maps (1/2m)ℕ into (1/m)ℕ"))
}

/// One `1/m` unit of server mass: where the barely fractional measure puts it
/// and the leaf where it physically sits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Unit {
    pub virtual_node: usize,
    pub actual: usize,
}

/// Stage 5: defers inner movement until a unit reaches a leaf.
///
/// A unit whose virtual node is a leaf sits at that leaf. A unit at an inner
/// node stays at the last leaf it visited.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct UnitTracker {
    m: i64,
    units: Vec<Unit>,
}

impl UnitTracker {
    /// Units of an integral-per-`1/m` leaf measure `z` (denominator `m`).
    pub fn new(tree: &WeightedTree, z: &MassVector) -> Result<Self, DiscretizeError> {
        let mut units = Vec::new();
        for u in 0..tree.len() {
            let q = z.point_num(tree, u);
            if q != 0 && !tree.is_leaf(u) {
                return Err(DiscretizeError::TrackerInconsistency(format!("start has mass at inner node {u}")));
            }
            units.extend((0..q).map(|_| Unit { virtual_node: u, actual: u }));
        }
        Ok(Self { m: z.denom(), units })
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    /// Applies `from → to` and returns the movement cost of the actual positions.
    pub fn advance(&mut self, tree: &WeightedTree, from: &MassVector, to: &MassVector) -> Result<Rat, DiscretizeError> {
        self.check(tree, from)?;
        let plan = measure::transport_plan(tree, from, to)?;
        let mut cost = Rat::zero();
        let mut moved = vec![false; self.units.len()];
        for (f, t, q) in plan {
            let mut cand: Vec<usize> = (0..self.units.len()).filter(|&i| !moved[i] && self.units[i].virtual_node == f).collect();
            cand.sort_by_key(|&i| (!tree.in_subtree(t, self.units[i].actual), i));
            if cand.len() < q as usize {
                return Err(DiscretizeError::TrackerInconsistency(format!("{q} units requested at node {f}, {} present", cand.len())));
            }
            for &i in &cand[..q as usize] {
                moved[i] = true;
                let unit = &mut self.units[i];
                unit.virtual_node = t;
                if tree.is_leaf(t) {
                    cost += tree.node_distance(unit.actual, t);
                    unit.actual = t;
                }
            }
        }
        Ok(cost / int(self.m as i128))
    }

    /// Leaf measure of the actual positions.
    pub fn leaf_measure(&self, tree: &WeightedTree) -> MassVector {
        let mut leaf = vec![0i64; tree.len()];
        for u in &self.units {
            leaf[u.actual] += 1;
        }
        MassVector::from_leaves(tree, self.m, &leaf)
    }

    /// Virtual positions aggregate to `z`; units at leaves sit where they are.
    pub fn check(&self, tree: &WeightedTree, z: &MassVector) -> Result<(), DiscretizeError> {
        let z = z.with_denom(self.m).ok_or_else(|| DiscretizeError::TrackerInconsistency("measure off the 1/m grid".into()))?;
        let mut count = vec![0i64; tree.len()];
        for u in &self.units {
            count[u.virtual_node] += 1;
            if !tree.is_leaf(u.actual) || (tree.is_leaf(u.virtual_node) && u.actual != u.virtual_node) {
                return Err(DiscretizeError::TrackerInconsistency(format!("unit {u:?} misplaced")));
            }
        }
        for (u, &c) in count.iter().enumerate() {
            if c != z.point_num(tree, u) {
                return Err(DiscretizeError::TrackerInconsistency(format!("node {u} holds {c} units, measure says {}", z.point_num(tree, u))));
            }
        }
        Ok(())
    }
}

/// Movement cost of every stage, per step or cumulative.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageCosts {
    #[serde(with = "serde_rat")]
    pub fractional: Rat,
    #[serde(with = "serde_rat")]
    pub z1: Rat,
    #[serde(with = "serde_rat")]
    pub z2: Rat,
    #[serde(with = "serde_rat")]
    pub z3: Rat,
    #[serde(with = "serde_rat")]
    pub z4: Rat,
    #[serde(with = "serde_rat")]
    pub deferred: Rat,
}

impl StageCosts {
    pub fn zero() -> Self {
        let z = Rat::zero();
        Self { fractional: z, z1: z, z2: z, z3: z, z4: z, deferred: z }
    }

    fn add(&mut self, o: &Self) {
        self.fractional += o.fractional;
        self.z1 += o.z1;
        self.z2 += o.z2;
        self.z3 += o.z3;
        self.z4 += o.z4;
        self.deferred += o.deferred;
    }

    /// The cumulative chain `z¹ ≤ 2x`, `z² ≤ z¹`, `z³ ≤ 2z²`, `z⁴ ≤ 2z³`, `y ≤ z⁴`.
    pub fn chain_violation(&self) -> Option<String> {
        let two = int(2);
        let checks = [
            (self.z1 <= two * self.fractional, "z1 > 2·x"),
            (self.z2 <= self.z1, "z2 > z1"),
            (self.z3 <= two * self.z2, "z3 > 2·z2"),
            (self.z4 <= two * self.z3, "z4 > 2·z3"),
            (self.deferred <= self.z4, "y > z4"),
        ];
        checks.iter().find(|c| !c.0).map(|c| c.1.to_string())
    }
}

/// All stage measures of one step, serialized as one JSON line of a trajectory dump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub step: usize,
    pub request: Option<usize>,
    pub x: MassVector,
    pub z1: MassVector,
    pub z2: MassVector,
    pub z3: MassVector,
    pub z4: MassVector,
    pub y: MassVector,
    pub hysteresis_moves: usize,
    pub cost: StageCosts,
}

impl StageRecord {
    pub fn json_line(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }
}

/// State of the five-stage conversion.
#[derive(Clone, Debug)]
pub struct HysteresisState {
    tree: WeightedTree,
    k: usize,
    m: usize,
    x: MassVector,
    z1: MassVector,
    z2: MassVector,
    z4: MassVector,
    tracker: UnitTracker,
    y: MassVector,
    totals: StageCosts,
    steps: usize,
}

impl HysteresisState {
    /// Starts from an integral leaf measure `x0` of mass `k`.
    pub fn new(tree: &WeightedTree, k: usize, m: usize, x0: &MassVector) -> Result<Self, DiscretizeError> {
        if m < min_granularity(k) {
            return Err(DiscretizeError::GranularityTooSmall { m, min: min_granularity(k) });
        }
        measure::validate(tree, x0, Kind::Leaf, int(k as i128))?;
        measure::validate(tree, x0, Kind::Barely(1), int(k as i128))?;
        let mp = hysteresis_denom(k, m) as i64;
        let z2 = x0.with_denom(mp).expect("integral");
        let z4 = x0.with_denom(m as i64).expect("integral");
        let tracker = UnitTracker::new(tree, &z4)?;
        Ok(Self {
            tree: tree.clone(),
            k,
            m,
            x: x0.clone(),
            z1: x0.clone(),
            z2,
            y: z4.clone(),
            z4,
            tracker,
            totals: StageCosts::zero(),
            steps: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn m_prime(&self) -> usize {
        hysteresis_denom(self.k, self.m)
    }

    pub fn tree(&self) -> &WeightedTree {
        &self.tree
    }

    /// Current deferred leaf measure `y`.
    pub fn y(&self) -> &MassVector {
        &self.y
    }

    pub fn z2(&self) -> &MassVector {
        &self.z2
    }

    pub fn z4(&self) -> &MassVector {
        &self.z4
    }

    pub fn tracker(&self) -> &UnitTracker {
        &self.tracker
    }

    pub fn totals(&self) -> &StageCosts {
        &self.totals
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Feeds the next fractional measure. Every stage invariant is checked
    /// with exact arithmetic; the first failure is returned as an error.
    pub fn step(&mut self, x: &MassVector, request: Option<usize>) -> Result<StageRecord, DiscretizeError> {
        let tree = &self.tree;
        let (k, m) = (self.k, self.m);
        let step = self.steps + 1;
        let bad = |what: String| DiscretizeError::Invariant { step, what };
        let z1 = step1_sigma(tree, x, k)?;
        let (z2, moves) = step2_hysteresis(tree, &self.z2, &z1)?;
        let z3 = step3_scale(&z2, k, m)?;
        let z4 = step4_sigma(tree, &z3, m)?;
        let z3_prev = step3_scale(&self.z2, k, m)?;
        let ot = |a: &MassVector, b: &MassVector| measure::ot_distance(tree, a, b);
        let mut tracker = self.tracker.clone();
        let deferred = tracker.advance(tree, &self.z4, &z4)?;
        let y = tracker.leaf_measure(tree);
        let cost = StageCosts {
            fractional: ot(&self.x, x)?,
            z1: ot(&self.z1, &z1)?,
            z2: ot(&self.z2, &z2)?,
            z3: ot(&z3_prev, &z3)?,
            z4: ot(&self.z4, &z4)?,
            deferred,
        };

        let kk = int(k as i128);
        let mp = self.m_prime() as i64;
        measure::validate(tree, &z2, Kind::Barely(mp), kk).map_err(|v| bad(format!("z2: {v}")))?;
        measure::validate(tree, &z3, Kind::Barely(2 * m as i64), lambda(k, m) * kk).map_err(|v| bad(format!("z3: {v}")))?;
        measure::validate(tree, &z4, Kind::Barely(m as i64), kk).map_err(|v| bad(format!("z4: {v}")))?;
        measure::validate(tree, &y, Kind::Leaf, kk).map_err(|v| bad(format!("y: {v}")))?;
        if cost.z2 + ot(&z2, &z1)? != ot(&self.z2, &z1)? {
            return Err(bad("hysteresis step is not on a geodesic".into()));
        }
        let slack = rat(2 * k as i128 + 1, mp as i128);
        let one = int(1);
        for u in 0..tree.len() {
            if z2.value(u) < z1.value(u) - slack {
                return Err(bad(format!("mass floor broken at node {u}")));
            }
            if x.value(u) >= one && (z3.value(u) < one || z4.value(u) < one) {
                return Err(bad(format!("node {u} lost its full server")));
            }
        }
        if let Some(r) = request {
            if x.value(r) >= one && y.value(r) < one {
                return Err(bad(format!("request {r} served by x but not by y")));
            }
        }
        tracker.check(tree, &z4)?;
        let mut totals = self.totals.clone();
        totals.add(&cost);
        if let Some(what) = totals.chain_violation() {
            return Err(bad(what));
        }

        let record = StageRecord {
            step,
            request,
            x: x.clone(),
            z1: z1.clone(),
            z2: z2.clone(),
            z3,
            z4: z4.clone(),
            y: y.clone(),
            hysteresis_moves: moves,
            cost,
        };
        self.x = x.clone();
        self.z1 = z1;
        self.z2 = z2;
        self.z4 = z4;
        self.tracker = tracker;
        self.y = y;
        self.totals = totals;
        self.steps = step;
        Ok(record)
    }
}

/// Online algorithm whose output is an `m`-barely fractional leaf measure.
pub trait BarelyFractional {
    fn tree(&self) -> &WeightedTree;
    fn k(&self) -> usize;
    fn m(&self) -> usize;
    fn current(&self) -> &MassVector;
    fn serve(&mut self, leaf: usize) -> Result<MassVector, DiscretizeError>;
}

/// Fractional source followed by the five stages.
#[derive(Clone, Debug)]
pub struct Pipeline<F> {
    source: F,
    state: HysteresisState,
    last: Option<StageRecord>,
}

impl<F: FractionalAlgorithm> Pipeline<F> {
    /// The source must still hold its (integral) initial configuration.
    pub fn new(source: F, m: usize) -> Result<Self, DiscretizeError> {
        let state = HysteresisState::new(source.tree(), source.k(), m, source.current())?;
        Ok(Self { source, state, last: None })
    }

    pub fn source(&self) -> &F {
        &self.source
    }

    pub fn state(&self) -> &HysteresisState {
        &self.state
    }

    pub fn last(&self) -> Option<&StageRecord> {
        self.last.as_ref()
    }
}

impl<F: FractionalAlgorithm> BarelyFractional for Pipeline<F> {
    fn tree(&self) -> &WeightedTree {
        self.state.tree()
    }

    fn k(&self) -> usize {
        self.state.k()
    }

    fn m(&self) -> usize {
        self.state.m()
    }

    fn current(&self) -> &MassVector {
        self.state.y()
    }

    fn serve(&mut self, leaf: usize) -> Result<MassVector, DiscretizeError> {
        let x = self.source.serve(leaf)?;
        let rec = self.state.step(&x, Some(leaf))?;
        self.last = Some(rec);
        Ok(self.state.y().clone())
    }
}

/// Drops every request the wrapped algorithm already serves with mass ≥ 1.
#[derive(Clone, Debug)]
pub struct Filtered<A> {
    inner: A,
    forwarded: Vec<usize>,
    dropped: usize,
    last_forwarded: bool,
    cost: Rat,
}

impl<A: BarelyFractional> Filtered<A> {
    pub fn new(inner: A) -> Self {
        Self { inner, forwarded: Vec::new(), dropped: 0, last_forwarded: false, cost: Rat::zero() }
    }

    pub fn inner(&self) -> &A {
        &self.inner
    }

    /// The forwarded subsequence `ρ′`.
    pub fn forwarded(&self) -> &[usize] {
        &self.forwarded
    }

    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn last_forwarded(&self) -> bool {
        self.last_forwarded
    }

    /// Total movement of the output measure.
    pub fn cost(&self) -> Rat {
        self.cost
    }
}

impl<A: BarelyFractional> BarelyFractional for Filtered<A> {
    fn tree(&self) -> &WeightedTree {
        self.inner.tree()
    }

    fn k(&self) -> usize {
        self.inner.k()
    }

    fn m(&self) -> usize {
        self.inner.m()
    }

    fn current(&self) -> &MassVector {
        self.inner.current()
    }

    fn serve(&mut self, leaf: usize) -> Result<MassVector, DiscretizeError> {
        if self.inner.current().value(leaf) >= int(1) {
            self.dropped += 1;
            self.last_forwarded = false;
            return Ok(self.inner.current().clone());
        }
        let prev = self.inner.current().clone();
        let next = self.inner.serve(leaf)?;
        self.cost += measure::ot_distance(self.inner.tree(), &prev, &next)?;
        self.forwarded.push(leaf);
        self.last_forwarded = true;
        Ok(next)
    }
}

/// Random leaf-measure trajectory serving random requests, for campaigns.
///
/// Starts at an integral configuration; each step moves a few random chunks
/// of mass between leaves, then tops the requested leaf up to one.
pub fn random_trajectory(tree: &WeightedTree, k: usize, len: usize, denom: i64, bits: &mut BitStream) -> (Vec<usize>, Vec<usize>, Vec<MassVector>) {
    let leaves = tree.leaves().to_vec();
    let n = leaves.len() as u64;
    let mut c0 = Vec::new();
    for _ in 0..k {
        c0.push(leaves[bits.below(n) as usize]);
    }
    c0.sort();
    let mut num = vec![0i64; tree.len()];
    for &l in &c0 {
        num[l] += denom;
    }
    let (mut requests, mut steps) = (Vec::new(), Vec::new());
    for _ in 0..len {
        let rho = leaves[bits.below(n) as usize];
        for _ in 0..1 + bits.below(3) {
            let (a, b) = (leaves[bits.below(n) as usize], leaves[bits.below(n) as usize]);
            let q = (bits.below((denom / 2 + 1) as u64) as i64).min(num[a]);
            num[a] -= q;
            num[b] += q;
        }
        while num[rho] < denom {
            let &src = leaves.iter().filter(|&&l| l != rho).max_by_key(|&&l| (num[l], std::cmp::Reverse(l))).expect("two leaves");
            let q = (denom - num[rho]).min(num[src]);
            num[src] -= q;
            num[rho] += q;
        }
        requests.push(rho);
        steps.push(MassVector::from_leaves(tree, denom, &num));
    }
    (c0, requests, steps)
}

/// Exhaustive minimizer of `OT(prev, z) + OT(z, target)` over inner measures
/// `z` on the grid `(1/denom)ℕ`, ties broken towards maximal `OT(prev, z)`.
#[derive(Clone, Debug)]
pub struct HysteresisOracle {
    pub objective: Rat,
    pub tie: Rat,
    pub argmin: Vec<MassVector>,
}

pub fn hysteresis_brute_force(tree: &WeightedTree, prev: &MassVector, target: &MassVector) -> Result<HysteresisOracle, DiscretizeError> {
    let d = prev.denom();
    let total = prev.num(tree.root());
    let nodes = tree.len();
    let count = (1..nodes as i128).fold(1i128, |acc, i| acc * (total as i128 + i) / i);
    if count > 200_000 {
        return Err(DiscretizeError::InstanceTooLarge(format!("{count} grid measures")));
    }
    let mut best: Option<HysteresisOracle> = None;
    let mut point = vec![0i64; nodes];
    fn rec(i: usize, left: i64, point: &mut Vec<i64>, visit: &mut dyn FnMut(&[i64])) {
        if i + 1 == point.len() {
            point[i] = left;
            visit(point);
            return;
        }
        for q in 0..=left {
            point[i] = q;
            rec(i + 1, left - q, point, visit);
        }
    }
    let mut visit = |p: &[i64]| {
        let mut num = vec![0i64; nodes];
        for &u in tree.bfs().iter().rev() {
            num[u] = p[u] + tree.children(u).iter().map(|&c| num[c]).sum::<i64>();
        }
        let z = MassVector::new(d, num);
        let tie = measure::ot_unchecked(tree, prev, &z);
        let obj = tie + measure::ot_unchecked(tree, &z, target);
        match &mut best {
            Some(b) if obj > b.objective || (obj == b.objective && tie < b.tie) => {}
            Some(b) if obj == b.objective && tie == b.tie => b.argmin.push(z),
            _ => best = Some(HysteresisOracle { objective: obj, tie, argmin: vec![z] }),
        }
    };
    rec(0, total, &mut point, &mut visit);
    Ok(best.expect("at least one grid measure"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractional::ScriptedFractional;
    use crate::measure::random_inner;
    use crate::metric::{hst, random_tree, WeightedTree};
    use proptest::prelude::*;

    fn two_leaf_star() -> WeightedTree {
        WeightedTree::new(vec![None, Some(0), Some(0)], vec![int(0), int(1), int(1)]).unwrap()
    }

    #[test]
    fn sigma_stage_examples() {
        let t = two_leaf_star();
        let x = MassVector::new(1, vec![1, 1, 0]);
        assert_eq!(step1_sigma(&t, &x, 1).unwrap(), x);
        let x = MassVector::new(5, vec![5, 2, 3]);
        let z = step1_sigma(&t, &x, 1).unwrap();
        assert_eq!(z.value(1), int(0));
        assert_eq!(z.value(2), rat(1, 5));
        assert!(matches!(step1_sigma(&t, &MassVector::new(1, vec![1, 1, 1]), 1), Err(DiscretizeError::InvalidMeasure(_))));
    }

    #[test]
    fn hysteresis_fixed_point() {
        let t = two_leaf_star();
        let z = MassVector::new(9, vec![9, 5, 4]);
        let (out, moves) = step2_hysteresis(&t, &z, &z).unwrap();
        assert_eq!((out, moves), (z, 0));
    }

    #[test]
    fn hysteresis_absorbs_small_oscillation() {
        let t = two_leaf_star();
        let start = MassVector::new(1, vec![1, 1, 0]).with_denom(9).unwrap();
        let first = MassVector::new(18, vec![18, 10, 8]);
        let (mut z, moves) = step2_hysteresis(&t, &start, &first).unwrap();
        assert_eq!(z.nums(), &[9, 5, 4]);
        assert_eq!(moves, 8);
        for i in 0..20 {
            let target = if i % 2 == 0 { MassVector::new(36, vec![36, 17, 19]) } else { MassVector::new(36, vec![36, 19, 17]) };
            let (next, moves) = step2_hysteresis(&t, &z, &target).unwrap();
            assert_eq!(moves, 0);
            z = next;
        }
        let flip = MassVector::new(18, vec![18, 8, 10]);
        let (z, moves) = step2_hysteresis(&t, &z, &flip).unwrap();
        assert_eq!((z.nums(), moves), (&[9, 4, 5][..], 2));
    }

    #[test]
    fn scale_examples() {
        assert_eq!(lambda(1, 3), rat(3, 2));
        let t = two_leaf_star();
        let z2 = MassVector::new(9, vec![9, 9, 0]);
        let z3 = step3_scale(&z2, 1, 3).unwrap();
        assert_eq!(z3.mass(&t), rat(3, 2));
        assert_eq!(z3.value(1), rat(3, 2));
        let z2 = MassVector::new(9, vec![9, 4, 5]);
        let z3 = step3_scale(&z2, 1, 3).unwrap();
        assert_eq!((z3.value(1), z3.value(2)), (rat(4, 6), rat(5, 6)));
        assert_eq!(step3_scale(&z2, 1, 2), Err(DiscretizeError::GranularityTooSmall { m: 2, min: 3 }));
        for k in 1..6 {
            let m = min_granularity(k);
            assert!(lambda(k, m) * int(k as i128) <= int(k as i128) + rat(1, 2));
            assert!(lambda(k, m) <= int(2));
        }
    }

    #[test]
    fn sigma4_examples() {
        let t = two_leaf_star();
        let z3 = MassVector::new(6, vec![9, 6, 3]);
        let z4 = step4_sigma(&t, &z3, 3).unwrap();
        assert_eq!(z4.denom(), 3);
        assert_eq!(z4.mass(&t), int(1));
        assert_eq!(z4.value(1), int(1));
    }

    fn deep_tree() -> WeightedTree {
        // root → a → {l1, l2}, root → b → l3
        WeightedTree::new(vec![None, Some(0), Some(0), Some(1), Some(1), Some(2)], vec![int(0), int(4), int(4), int(1), int(1), int(1)]).unwrap()
    }

    #[test]
    fn tracker_constant_is_free() {
        let t = deep_tree();
        let z = MassVector::from_leaves(&t, 2, &[0, 0, 0, 1, 1, 0]);
        let mut tr = UnitTracker::new(&t, &z).unwrap();
        assert_eq!(tr.advance(&t, &z, &z).unwrap(), int(0));
        assert_eq!(tr.leaf_measure(&t), z);
    }

    #[test]
    fn tracker_defers_through_inner_node() {
        let t = deep_tree();
        let at = |node: usize| {
            let mut point = vec![0i64; 6];
            point[node] = 1;
            let mut num = vec![0i64; 6];
            for &u in t.bfs().iter().rev() {
                num[u] = point[u] + t.children(u).iter().map(|&c| num[c]).sum::<i64>();
            }
            MassVector::new(1, num)
        };
        let mut tr = UnitTracker::new(&t, &at(3)).unwrap();
        assert_eq!(tr.advance(&t, &at(3), &at(0)).unwrap(), int(0));
        assert_eq!(tr.leaf_measure(&t), at(3));
        let c = tr.advance(&t, &at(0), &at(5)).unwrap();
        assert_eq!(c, t.node_distance(3, 5));
        let virt = measure::ot_distance(&t, &at(3), &at(0)).unwrap() + measure::ot_distance(&t, &at(0), &at(5)).unwrap();
        assert!(c <= virt);
        let mut tr = UnitTracker::new(&t, &at(3)).unwrap();
        tr.advance(&t, &at(3), &at(1)).unwrap();
        assert_eq!(tr.advance(&t, &at(1), &at(4)).unwrap(), int(2));
    }

    #[test]
    fn filter_forwards_once() {
        let t = two_leaf_star();
        let x0 = MassVector::new(1, vec![1, 1, 0]);
        let moved = MassVector::new(1, vec![1, 0, 1]);
        let src = ScriptedFractional::new(t.clone(), 1, x0, vec![moved]);
        let mut f = Filtered::new(Pipeline::new(src, 3).unwrap());
        for _ in 0..5 {
            let y = f.serve(2).unwrap();
            assert_eq!(y.value(2), int(1));
        }
        assert_eq!(f.forwarded(), &[2]);
        assert_eq!(f.dropped(), 4);
        assert_eq!(f.cost(), int(2));
        assert_eq!(f.inner().state().totals().deferred, int(2));
    }

    #[test]
    fn integral_lazy_source_passes_through() {
        let t = hst(&[2, 2], int(10), int(10)).unwrap();
        let tree = t.tree().clone();
        let l = tree.leaves().to_vec();
        let c0 = vec![l[0], l[2]];
        let reqs = [l[1], l[1], l[3], l[0]];
        let mut cur = c0.clone();
        let mut steps = Vec::new();
        for &r in &reqs {
            if !cur.contains(&r) {
                let far = *cur.iter().max_by_key(|&&c| (tree.node_distance(c, r), c)).unwrap();
                let i = cur.iter().position(|&c| c == far).unwrap();
                cur[i] = r;
                cur.sort();
            }
            steps.push(MassVector::from_config(&tree, &cur, 1));
        }
        let src = ScriptedFractional::new(tree.clone(), 2, MassVector::from_config(&tree, &c0, 1), steps.clone());
        let mut p = Pipeline::new(src, min_granularity(2)).unwrap();
        for (i, &r) in reqs.iter().enumerate() {
            let y = p.serve(r).unwrap();
            assert_eq!(y.with_denom(1).unwrap(), steps[i]);
        }
        let tot = p.state().totals();
        assert_eq!(tot.deferred, tot.fractional);
    }

    fn small_tree(bits: &mut BitStream) -> WeightedTree {
        loop {
            let t = random_tree(4, bits);
            if t.len() <= 6 {
                return t;
            }
        }
    }

    #[test]
    fn trajectory_dump_is_json_lines() {
        let mut bits = BitStream::new(3);
        let t = hst(&[3], int(1), int(10)).unwrap().into_tree();
        let (c0, reqs, steps) = random_trajectory(&t, 1, 3, 16, &mut bits);
        let src = ScriptedFractional::new(t.clone(), 1, MassVector::from_config(&t, &c0, 16), steps);
        let mut p = Pipeline::new(src, 3).unwrap();
        for &r in &reqs {
            p.serve(r).unwrap();
            let line = p.last().unwrap().json_line();
            let v: serde_json::Value = serde_json::from_str(&line).unwrap();
            assert_eq!(v["request"], r);
            assert!(v["cost"]["deferred"].is_string());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn hysteresis_matches_exhaustive(seed in any::<u64>(), k in 1i64..=2, mp in 2i64..=9, rounds in 1usize..4) {
            let mut bits = BitStream::new(seed);
            let t = small_tree(&mut bits);
            let mut prev = random_inner(&t, k, mp, &mut bits);
            for _ in 0..rounds {
                let d = [mp, 2 * mp, 7, 12][bits.below(4) as usize];
                let target = random_inner(&t, k, d, &mut bits);
                let (z, _) = step2_hysteresis(&t, &prev, &target).unwrap();
                let oracle = hysteresis_brute_force(&t, &prev, &target).unwrap();
                let tie = measure::ot_distance(&t, &prev, &z).unwrap();
                prop_assert_eq!(tie + measure::ot_distance(&t, &z, &target).unwrap(), oracle.objective);
                prop_assert_eq!(tie, oracle.tie);
                prop_assert!(oracle.argmin.contains(&z));
                prev = z;
            }
        }
    }

    proptest! {
        #[test]
        fn deferred_never_costs_more(seed in any::<u64>(), k in 1i64..=3, m in 1i64..=5) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(6, &mut bits);
            let mut leaf = vec![0i64; t.len()];
            for _ in 0..k * m { leaf[t.leaves()[bits.below(t.n_leaves() as u64) as usize]] += 1; }
            let mut z = MassVector::from_leaves(&t, m, &leaf);
            let mut tr = UnitTracker::new(&t, &z).unwrap();
            let (mut ycost, mut zcost) = (Rat::zero(), Rat::zero());
            for _ in 0..8 {
                let next = random_inner(&t, k, m, &mut bits);
                zcost += measure::ot_distance(&t, &z, &next).unwrap();
                ycost += tr.advance(&t, &z, &next).unwrap();
                tr.check(&t, &next).unwrap();
                let y = tr.leaf_measure(&t);
                prop_assert!(measure::validate(&t, &y, Kind::Leaf, int(k as i128)).is_ok());
                for &l in t.leaves() {
                    if next.point_num(&t, l) > 0 { prop_assert!(y.num(l) >= next.point_num(&t, l)); }
                }
                prop_assert!(ycost <= zcost);
                z = next;
            }
        }

        #[test]
        fn sigma4_lands_on_m_grid(seed in any::<u64>(), k in 1i64..=3) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(6, &mut bits);
            let m = min_granularity(k as usize);
            let z3 = random_inner(&t, k, 2 * m as i64, &mut bits);
            let mut z3n = z3.nums().to_vec();
            let extra = bits.below(k as u64 + 1) as i64;
            let leaf = t.leaves()[0];
            for u in t.ancestors(leaf) { z3n[u] += extra; }
            let z3 = MassVector::new(2 * m as i64, z3n);
            let z4 = step4_sigma(&t, &z3, m).unwrap();
            prop_assert!(measure::validate(&t, &z4, Kind::Barely(m as i64), int(k as i128)).is_ok());
        }

        #[test]
        fn pipeline_stage_chain(seed in any::<u64>(), k in 1usize..=3, len in 1usize..30) {
            let mut bits = BitStream::new(seed);
            let t = random_tree(8, &mut bits);
            let (c0, reqs, steps) = random_trajectory(&t, k, len, 24, &mut bits);
            let src = ScriptedFractional::new(t.clone(), k, MassVector::from_config(&t, &c0, 24), steps);
            let mut p = Pipeline::new(src, min_granularity(k)).unwrap();
            for &r in &reqs {
                let y = p.serve(r).unwrap();
                prop_assert!(y.value(r) >= int(1));
            }
            let tot = p.state().totals();
            prop_assert!(tot.deferred <= tot.fractional * int(8));
        }
    }
}
