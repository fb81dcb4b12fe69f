//! Barely fractional to barely random.
//!
//! An [`Ensemble`] holds `m` deterministic configurations `R_1..R_m`. It is
//! *consistent* with an `m`-barely fractional leaf measure `z` when
//! `m·z_u = Σ_i n_u(R_i)` at every node, and *balanced* when every
//! `n_u(R_i) ∈ {⌊z_u⌋, ⌈z_u⌉}`. Sampling one member uses `⌈log₂ m⌉` bits once.

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitStream;
use crate::measure::{self, Kind, MassVector, MeasureError};
use crate::metric::{config_distance, WeightedTree};
use crate::rat::{int, rat, serde_rat, Rat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoundingError {
    #[error("tree is not a path with one zero-length leaf per point")]
    NotAPath,
    #[error("measures differ in mass or grid")]
    MassMismatch,
    #[error("no member can take the move {0} → {1}")]
    NoCandidate(usize, usize),
    #[error("no exchange available at node {0}")]
    ExchangeUnavailable(usize),
    #[error("ensemble invariant broken: {0}")]
    Invariant(String),
    #[error("measure failure: {0}")]
    Measure(#[from] MeasureError),
}

/// `m` configurations, each a sorted multiset of leaves.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ensemble {
    members: Vec<Vec<usize>>,
}

impl Ensemble {
    pub fn new(members: Vec<Vec<usize>>) -> Self {
        let members = members
            .into_iter()
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        Self { members }
    }

    /// `m` copies of `config`.
    pub fn uniform(config: &[usize], m: usize) -> Self {
        Self::new(vec![config.to_vec(); m])
    }

    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    /// `n_u(R_i)` for every member and node.
    pub fn counts(&self, tree: &WeightedTree) -> Vec<Vec<i64>> {
        self.members.iter().map(|c| tree.counts(c)).collect()
    }

    fn replace(&mut self, i: usize, from: usize, to: usize) {
        let c = &mut self.members[i];
        let at = c.iter().position(|&x| x == from).expect("member holds the leaf");
        c.remove(at);
        let at = c.partition_point(|&x| x <= to);
        c.insert(at, to);
    }

    /// First node where `m·z_u ≠ Σ_i n_u(R_i)`, if any.
    pub fn consistency_error(&self, tree: &WeightedTree, z: &MassVector) -> Option<String> {
        let Some(z) = z.with_denom(self.m() as i64) else {
            return Some("measure is not m-barely fractional".into());
        };
        let counts = self.counts(tree);
        (0..tree.len()).find_map(|u| {
            let s: i64 = counts.iter().map(|c| c[u]).sum();
            (s != z.num(u)).then(|| format!("node {u}: members hold {s}/{}, measure {}", self.m(), z.num(u)))
        })
    }

    /// First `(node, member)` with `n_u(R_i) ∉ {⌊z_u⌋, ⌈z_u⌉}`, if any.
    pub fn balance_error(&self, tree: &WeightedTree, z: &MassVector) -> Option<String> {
        let counts = self.counts(tree);
        for u in 0..tree.len() {
            let (lo, hi) = band(z, u);
            for (i, c) in counts.iter().enumerate() {
                if c[u] < lo || c[u] > hi {
                    return Some(format!("member {i} holds {} below node {u}, band [{lo}, {hi}]", c[u]));
                }
            }
        }
        None
    }

    pub fn check(&self, tree: &WeightedTree, z: &MassVector) -> Result<(), RoundingError> {
        match self.consistency_error(tree, z).or_else(|| self.balance_error(tree, z)) {
            Some(e) => Err(RoundingError::Invariant(e)),
            None => Ok(()),
        }
    }

    /// Snapshot `{"m", "members", "z"}`.
    pub fn snapshot(&self, z: &MassVector) -> serde_json::Value {
        serde_json::json!({ "m": self.m(), "members": self.members, "z": z })
    }
}

/// `(⌊z_u⌋, ⌈z_u⌉)`.
fn band(z: &MassVector, u: usize) -> (i64, i64) {
    let (n, d) = (z.num(u), z.denom());
    (n.div_euclid(d), (n + d - 1).div_euclid(d))
}

fn off_band(n: i64, (lo, hi): (i64, i64)) -> i64 {
    (lo - n).max(n - hi).max(0)
}

/// Rounding on a line: position `u` holds `z_u` = mass at positions `≥ u`;
/// member `i` places its `h`-th server at the largest `u` with
/// `⌊z_u + (i−1)/m⌋ ≥ h`.
pub fn round_line(tree: &WeightedTree, points: &[usize], z: &MassVector, m: usize) -> Result<Ensemble, RoundingError> {
    let n = points.len();
    if n == 0 || tree.len() != 2 * n || tree.root() != 0 {
        return Err(RoundingError::NotAPath);
    }
    for (i, &p) in points.iter().enumerate() {
        let chain_ok = i == 0 || tree.parent(i) == Some(i - 1);
        if !chain_ok || tree.parent(p) != Some(i) || !tree.is_leaf(p) || !tree.weight(p).is_zero() {
            return Err(RoundingError::NotAPath);
        }
    }
    let z = z.with_denom(m as i64).ok_or(RoundingError::MassMismatch)?;
    let k = z.num(0) / m as i64;
    let mut members = Vec::with_capacity(m);
    for i in 0..m as i64 {
        let level = |u: usize| (z.num(u) + i).div_euclid(m as i64);
        let config = (1..=k).map(|h| points[(0..n).rev().find(|&u| level(u) >= h).expect("position 1 holds all k")]).collect();
        members.push(config);
    }
    Ok(Ensemble::new(members))
}

/// Decomposes `z → z′` into `1/m` leaf-to-leaf moves whose distances sum to `OT(z, z′)`.
pub fn elementary_moves(tree: &WeightedTree, z: &MassVector, z2: &MassVector) -> Result<Vec<(usize, usize)>, RoundingError> {
    if z.denom() != z2.denom() {
        return Err(RoundingError::MassMismatch);
    }
    let plan = measure::transport_plan(tree, z, z2).map_err(|e| match e {
        MeasureError::MassMismatch => RoundingError::MassMismatch,
        e => e.into(),
    })?;
    Ok(plan.into_iter().flat_map(|(a, b, q)| std::iter::repeat_n((a, b), q as usize)).collect())
}

/// `G = (1/m)·Σ_v w_v·Σ_i dist(n_v(R_i), {⌊z_v⌋, ⌈z_v⌉})`.
pub fn balance_gap(tree: &WeightedTree, ens: &Ensemble, z: &MassVector) -> Rat {
    let counts = ens.counts(tree);
    let mut g = Rat::zero();
    for v in 0..tree.len() {
        let b = band(z, v);
        let s: i64 = counts.iter().map(|c| off_band(c[v], b)).sum();
        if s != 0 {
            g += tree.weight(v) * int(s as i128);
        }
    }
    g / int(ens.m() as i128)
}

/// Leaf reached from `start` by always stepping into the lowest child where
/// member `more` holds more servers than member `less`.
fn descend(tree: &WeightedTree, counts: &[Vec<i64>], more: usize, less: usize, start: usize) -> Option<usize> {
    let mut u = start;
    while !tree.is_leaf(u) {
        u = *tree.children(u).iter().find(|&&c| counts[more][c] > counts[less][c])?;
    }
    Some(u)
}

/// Restores balancedness top-down, exchanging one leaf at a time between an
/// over-full and an under-full member. Returns the exchanges and their total
/// member movement.
///
/// The exchanged leaves are found by descending where the giving member holds
/// more than the receiving one, so no node's imbalance grows along the way.
pub fn rebalance(tree: &WeightedTree, ens: &mut Ensemble, z: &MassVector) -> Result<(usize, Rat), RoundingError> {
    let m = ens.m();
    let mut exchanges = 0;
    let mut moved = Rat::zero();
    let limit = tree.len() * m * (z.num(tree.root()) / z.denom()).max(1) as usize + 1;
    for &v in tree.bfs() {
        let Some(p) = tree.parent(v) else { continue };
        let (lo, hi) = band(z, v);
        loop {
            let counts = ens.counts(tree);
            let n = |i: usize| counts[i][v];
            let over = (0..m).find(|&i| n(i) > hi);
            let under = (0..m).find(|&i| n(i) < lo);
            let (i, j) = match (over, under) {
                (None, None) => break,
                (Some(i), Some(j)) => (i, j),
                (Some(i), None) => (i, (0..m).find(|&j| n(j) < hi).ok_or(RoundingError::ExchangeUnavailable(v))?),
                (None, Some(j)) => ((0..m).find(|&i| n(i) > lo).ok_or(RoundingError::ExchangeUnavailable(v))?, j),
            };
            let a = descend(tree, &counts, i, j, v).ok_or(RoundingError::ExchangeUnavailable(v))?;
            let sib = tree.children(p).iter().copied().find(|&c| c != v && counts[j][c] > counts[i][c]);
            let b = sib.and_then(|c| descend(tree, &counts, j, i, c)).ok_or(RoundingError::ExchangeUnavailable(v))?;
            ens.replace(i, a, b);
            ens.replace(j, b, a);
            moved += tree.node_distance(a, b) * int(2);
            exchanges += 1;
            if exchanges > limit {
                return Err(RoundingError::ExchangeUnavailable(v));
            }
        }
    }
    Ok((exchanges, moved))
}

/// Outcome of one [`apply_elementary`] call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MoveReport {
    pub direct: bool,
    pub exchanges: usize,
    /// Total leaf movement over all members (not divided by `m`).
    pub movement: Rat,
}

/// Moves one `1/m` unit from leaf `l` to leaf `l2` in `z` and updates the
/// ensemble so it stays consistent and balanced.
pub fn apply_elementary(tree: &WeightedTree, ens: &mut Ensemble, z: &mut MassVector, l: usize, l2: usize) -> Result<MoveReport, RoundingError> {
    let m = ens.m();
    let mut zn = z.with_denom(m as i64).ok_or(RoundingError::MassMismatch)?;
    if !tree.is_leaf(l) || !tree.is_leaf(l2) || zn.num(l) == 0 {
        return Err(RoundingError::NoCandidate(l, l2));
    }
    let counts = ens.counts(tree);
    let floor2 = band(&zn, l2).0;
    let mut movement;
    let direct = (0..m).find(|&i| counts[i][l] >= 1 && counts[i][l2] <= floor2);
    if let Some(i) = direct {
        ens.replace(i, l, l2);
        movement = tree.node_distance(l, l2);
    } else {
        let i = (0..m).find(|&i| counts[i][l] >= 1).ok_or(RoundingError::NoCandidate(l, l2))?;
        let j = (0..m).find(|&j| counts[j][l2] <= floor2).ok_or(RoundingError::NoCandidate(l, l2))?;
        let u = tree.lca(l, l2);
        let l3 = tree
            .leaves_under(u)
            .into_iter()
            .find(|&x| x != l && x != l2 && counts[j][x] > counts[i][x])
            .ok_or(RoundingError::NoCandidate(l, l2))?;
        ens.replace(i, l, l3);
        ens.replace(j, l3, l2);
        movement = tree.node_distance(l, l3) + tree.node_distance(l3, l2);
    }
    for x in tree.ancestors(l) {
        zn.set_num(x, zn.num(x) - 1);
    }
    for x in tree.ancestors(l2) {
        zn.set_num(x, zn.num(x) + 1);
    }
    let (exchanges, moved) = rebalance(tree, ens, &zn)?;
    movement += moved;
    *z = zn;
    Ok(MoveReport { direct: direct.is_some(), exchanges, movement })
}

/// Per-step record of [`HstRounding::step`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RoundingStep {
    pub moves: usize,
    pub exchanges: usize,
    #[serde(with = "serde_rat")]
    pub ot: Rat,
    /// `(1/m)·Σ_i d(R_i, R′_i)`.
    #[serde(with = "serde_rat")]
    pub ensemble_cost: Rat,
}

/// Online rounding of an `m`-barely fractional leaf-measure trajectory on a tree.
#[derive(Clone, Debug)]
pub struct HstRounding {
    tree: WeightedTree,
    z: MassVector,
    ens: Ensemble,
    member_cost: Vec<Rat>,
    ot: Rat,
    cost: Rat,
}

impl HstRounding {
    /// Every member starts at the integral configuration `c0`.
    pub fn new(tree: &WeightedTree, c0: &[usize], m: usize) -> Self {
        let mut c = c0.to_vec();
        c.sort();
        Self {
            tree: tree.clone(),
            z: MassVector::from_config(tree, &c, m as i64),
            ens: Ensemble::uniform(&c, m),
            member_cost: vec![Rat::zero(); m],
            ot: Rat::zero(),
            cost: Rat::zero(),
        }
    }

    pub fn ensemble(&self) -> &Ensemble {
        &self.ens
    }

    pub fn measure(&self) -> &MassVector {
        &self.z
    }

    /// Cumulative movement of each member.
    pub fn member_costs(&self) -> &[Rat] {
        &self.member_cost
    }

    /// Cumulative average member movement.
    pub fn cost(&self) -> Rat {
        self.cost
    }

    /// Cumulative `OT` of the input trajectory.
    pub fn ot(&self) -> Rat {
        self.ot
    }

    /// Follows `z → z2`, checking consistency and balance after every elementary move.
    pub fn step(&mut self, z2: &MassVector) -> Result<RoundingStep, RoundingError> {
        let tree = &self.tree;
        let m = self.ens.m();
        let z2 = z2.with_denom(m as i64).ok_or(RoundingError::MassMismatch)?;
        measure::validate(tree, &z2, Kind::Leaf, self.z.mass(tree)).map_err(|v| RoundingError::Invariant(v.to_string()))?;
        let moves = elementary_moves(tree, &self.z, &z2)?;
        let before = self.ens.clone();
        let mut exchanges = 0;
        for &(a, b) in &moves {
            exchanges += apply_elementary(tree, &mut self.ens, &mut self.z, a, b)?.exchanges;
            self.ens.check(tree, &self.z)?;
        }
        if self.z != z2 {
            return Err(RoundingError::Invariant("moves do not reproduce the target measure".into()));
        }
        let ot = measure::ot_distance(tree, &before_measure(tree, &before, m), &z2)?;
        let mut total = Rat::zero();
        for (i, (a, b)) in before.members().iter().zip(self.ens.members()).enumerate() {
            let d = config_distance(tree, a, b).expect("members are leaf configurations");
            self.member_cost[i] += d;
            total += d;
        }
        let ensemble_cost = total / int(m as i128);
        self.ot += ot;
        self.cost += ensemble_cost;
        Ok(RoundingStep { moves: moves.len(), exchanges, ot, ensemble_cost })
    }
}

fn before_measure(tree: &WeightedTree, ens: &Ensemble, m: usize) -> MassVector {
    let mut leaf = vec![0i64; tree.len()];
    for c in ens.members() {
        for &l in c {
            leaf[l] += 1;
        }
    }
    MassVector::from_leaves(tree, m as i64, &leaf)
}

/// Index of the member to follow, drawn once with `⌈log₂ m⌉` bits per attempt.
pub fn sample_index(m: usize, bits: &mut BitStream) -> usize {
    bits.below(m as u64) as usize
}

/// Samples one member and replays it along the ensemble trajectory.
/// Returns the configurations and the bits consumed by the draw.
pub fn sample(trajectory: &[Ensemble], bits: &mut BitStream) -> (Vec<Vec<usize>>, u64) {
    let m = trajectory.first().map_or(1, Ensemble::m);
    let before = bits.used();
    let i = sample_index(m, bits);
    let used = bits.used() - before;
    (trajectory.iter().map(|e| e.members()[i].clone()).collect(), used)
}

/// Movement of every member along a trajectory of ensembles.
pub fn member_costs(tree: &WeightedTree, trajectory: &[Ensemble]) -> Vec<Rat> {
    let m = trajectory.first().map_or(0, Ensemble::m);
    let mut out = vec![Rat::zero(); m];
    for w in trajectory.windows(2) {
        for (i, c) in out.iter_mut().enumerate() {
            *c += config_distance(tree, &w[0].members()[i], &w[1].members()[i]).expect("leaf configurations");
        }
    }
    out
}

/// Cost of the best member in hindsight.
pub fn advised_cost(tree: &WeightedTree, trajectory: &[Ensemble]) -> Rat {
    member_costs(tree, trajectory).into_iter().min().unwrap_or_else(Rat::zero)
}

/// Average member cost, the cost of the barely random algorithm.
pub fn average_cost(tree: &WeightedTree, trajectory: &[Ensemble]) -> Rat {
    let c = member_costs(tree, trajectory);
    if c.is_empty() {
        return Rat::zero();
    }
    c.iter().fold(Rat::zero(), |a, b| a + b) * rat(1, c.len() as i128)
}
