//! Online fractional k-server on τ-HSTs.
//!
//! Each request is served by an approximate Bregman projection of the current
//! anti-server point onto `P_δ`, with the requested leaf pinned at `x_{ρ1} = δ`
//! and leaf coordinates summing to `n − k`. The resulting `(k+½)`-mass leaf
//! measure is reduced to mass `k` before it is reported.

use num_traits::Zero;
use thiserror::Error;

use crate::antiserver::{self, AntiServerError, AntiServerPoint, Chi, Polytope, Verdict};
use crate::bits::BitStream;
use crate::measure::{self, Kind, MassVector, MeasureError, Violation};
use crate::metric::{TauHst, WeightedTree};
use crate::rat::{self, int, Rat};
use crate::solver::{self, OracleConvexFunction, OracleConvexSet, SetVerdict, SolverError};

/// Denominator of the reported leaf measures (even, so `k + ½` is exact).
pub const MEASURE_DENOM: i64 = 1 << 20;

/// Constant `C` in `ε_solver = ε_step / (C·D·log²k·n)`.
pub const SOLVER_C: f64 = 16.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FractionalError {
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("configuration has {0} servers, expected {1}")]
    SizeMismatch(usize, usize),
    #[error("node {0} is not a leaf")]
    UnknownLeaf(usize),
    #[error("solver failure: {0}")]
    Solver(#[from] SolverError),
    #[error("anti-server failure: {0}")]
    AntiServer(#[from] AntiServerError),
    #[error("measure failure: {0}")]
    Measure(#[from] MeasureError),
    #[error("request at leaf {leaf} left with mass {mass}")]
    Unserved { leaf: usize, mass: Rat },
}

/// Anything producing one k-mass leaf measure per request.
pub trait FractionalAlgorithm {
    fn tree(&self) -> &WeightedTree;
    fn k(&self) -> usize;
    /// Measure currently held (the initial configuration before any request).
    fn current(&self) -> &MassVector;
    fn serve(&mut self, leaf: usize) -> Result<MassVector, FractionalError>;
}

/// Replays a precomputed trajectory of leaf measures.
#[derive(Clone, Debug)]
pub struct ScriptedFractional {
    tree: WeightedTree,
    k: usize,
    current: MassVector,
    queue: std::collections::VecDeque<MassVector>,
}

impl ScriptedFractional {
    pub fn new(tree: WeightedTree, k: usize, initial: MassVector, steps: Vec<MassVector>) -> Self {
        Self { tree, k, current: initial, queue: steps.into() }
    }
}

impl FractionalAlgorithm for ScriptedFractional {
    fn tree(&self) -> &WeightedTree {
        &self.tree
    }

    fn k(&self) -> usize {
        self.k
    }

    fn current(&self) -> &MassVector {
        &self.current
    }

    fn serve(&mut self, leaf: usize) -> Result<MassVector, FractionalError> {
        let next = self.queue.pop_front().expect("scripted trajectory exhausted");
        if next.value(leaf) < int(1) {
            return Err(FractionalError::Unserved { leaf, mass: next.value(leaf) });
        }
        self.current = next.clone();
        Ok(next)
    }
}

/// `ε_step = 1/(2(2k²+k))`.
pub fn default_eps_step(k: usize) -> f64 {
    1.0 / (2.0 * (2 * k * k + k) as f64)
}

/// `ε_solver = ε_step/(C·D·max(1, ln²k)·n)`.
pub fn solver_eps(eps_step: f64, diameter: f64, k: usize, n: usize) -> f64 {
    let l = (k as f64).ln().powi(2).max(1.0);
    eps_step / (SOLVER_C * diameter.max(1.0) * l * n as f64)
}

/// Projection subproblem in a full-dimensional parametrization.
///
/// The mass condition and the root constraint force every full-prefix
/// constraint `Σ_j x_{uj} = Σ_{ℓ ∈ L_u} x_{ℓ1}` to hold with equality, so the
/// feasible set has empty interior in `χ`. The solver instead works on the
/// coordinates left after fixing the root and the pin and solving these
/// equalities for one leaf (`ℓ*`) and for `x_{u,n_u}` at each internal `u`.
/// Cuts and gradients are pulled back through the substitution.
struct Projection<'a> {
    poly: &'a Polytope,
    vars: Vec<usize>,
    base: Vec<f64>,
    prev: &'a [f64],
    scale: f64,
    elim_leaf: usize,
    other_leaves: Vec<usize>,
    elim: Vec<(usize, Vec<usize>, Vec<usize>)>,
    lipschitz: f64,
    alpha: f64,
    upper: f64,
}

impl<'a> Projection<'a> {
    fn new(poly: &'a Polytope, prev: &'a [f64], leaf: usize) -> Self {
        let chi = &poly.chi;
        let d = poly.delta;
        let pin = chi.leaf_idx(leaf);
        let root = chi.root_coords();
        let leaf_coords: Vec<usize> = chi.leaves().iter().map(|&l| chi.leaf_idx(l)).collect();
        let elim_leaf = *leaf_coords.iter().rev().find(|&&i| i != pin).expect("at least two leaves");
        let other_leaves: Vec<usize> = leaf_coords.iter().copied().filter(|&i| i != elim_leaf).collect();
        let mut below: Vec<Vec<usize>> = vec![Vec::new(); chi.node_count()];
        for &l in chi.leaves() {
            below[l].push(chi.leaf_idx(l));
        }
        for (u, _) in chi.internal().iter().rev() {
            below[*u] = chi.children_of(*u).iter().flat_map(|&c| below[c].clone()).collect();
        }
        let elim: Vec<(usize, Vec<usize>, Vec<usize>)> = chi
            .internal()
            .iter()
            .filter(|(u, _)| *u != chi.root())
            .map(|(u, _)| {
                let n_u = below[*u].len();
                let own: Vec<usize> = (1..n_u).map(|j| chi.idx(*u, j)).collect();
                (chi.idx(*u, n_u), below[*u].clone(), own)
            })
            .collect();
        let mut fixed = vec![false; chi.len()];
        for i in root.clone() {
            fixed[i] = true;
        }
        fixed[pin] = true;
        fixed[elim_leaf] = true;
        for (e, _, _) in &elim {
            fixed[*e] = true;
        }
        let vars: Vec<usize> = (0..chi.len()).filter(|&i| !fixed[i]).collect();
        let mut base = vec![0.0; chi.len()];
        for (j, i) in root.enumerate() {
            base[i] = if j < poly.k { 0.0 } else { 1.0 };
        }
        base[pin] = d;
        let w = chi.weights();
        let lg = (1.0 + 1.0 / d).ln();
        let w_min = chi
            .leaves()
            .iter()
            .map(|&l| w[chi.leaf_idx(l)])
            .chain(vars.iter().map(|&i| w[i]))
            .fold(f64::INFINITY, f64::min);
        let alpha = w_min / (2.0 * (1.0 + d));
        let g = |a: f64, b: f64| (a + d) * ((a + d) / (b + d)).ln() - a + b;
        let gmax = g(1.0, 0.0).max(g(0.0, 1.0));
        let upper = (0..chi.len()).map(|i| w[i] * gmax).sum::<f64>();
        let mut p = Self {
            poly,
            vars,
            base,
            prev,
            scale: 1.0 / (2.0 * chi.len() as f64),
            elim_leaf,
            other_leaves,
            elim,
            lipschitz: 0.0,
            alpha,
            upper,
        };
        let bound: Vec<f64> = w.iter().map(|wi| wi * lg).collect();
        p.lipschitz = p.pull_abs(&bound).iter().map(|v| v * v).sum::<f64>().sqrt();
        p
    }

    fn full(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.base.clone();
        for (t, &i) in self.vars.iter().enumerate() {
            x[i] = y[t];
        }
        x[self.elim_leaf] = self.poly.mass_target() - self.other_leaves.iter().map(|&i| x[i]).sum::<f64>();
        for (e, plus, minus) in &self.elim {
            x[*e] = plus.iter().map(|&i| x[i]).sum::<f64>() - minus.iter().map(|&i| x[i]).sum::<f64>();
        }
        x
    }

    /// Chain rule from `χ` back to the free coordinates.
    fn pull(&self, g: &[f64]) -> Vec<f64> {
        let mut g = g.to_vec();
        for (e, plus, minus) in self.elim.iter().rev() {
            let ge = g[*e];
            for &i in plus {
                g[i] += ge;
            }
            for &i in minus {
                g[i] -= ge;
            }
        }
        let gl = g[self.elim_leaf];
        for &i in &self.other_leaves {
            g[i] -= gl;
        }
        self.vars.iter().map(|&i| g[i]).collect()
    }

    /// Same as [`pull`](Self::pull) with all coefficients taken in absolute value.
    fn pull_abs(&self, g: &[f64]) -> Vec<f64> {
        let mut g = g.to_vec();
        for (e, plus, minus) in self.elim.iter().rev() {
            let ge = g[*e];
            for &i in plus.iter().chain(minus) {
                g[i] += ge;
            }
        }
        let gl = g[self.elim_leaf];
        for &i in &self.other_leaves {
            g[i] += gl;
        }
        self.vars.iter().map(|&i| g[i]).collect()
    }
}

impl OracleConvexSet for Projection<'_> {
    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn center(&self) -> Vec<f64> {
        vec![0.5; self.vars.len()]
    }

    fn radius(&self) -> f64 {
        (self.vars.len() as f64).sqrt() / 2.0 * 1.01 + 1e-9
    }

    fn separate(&self, y: &[f64], gamma: f64) -> SetVerdict {
        match self.poly.separate(&self.full(y), gamma * self.scale) {
            Verdict::Feasible => SetVerdict::Feasible,
            Verdict::Cut(c) => {
                let mut dense = vec![0.0; self.base.len()];
                for (i, v) in c.coeffs {
                    dense[i] += v;
                }
                let g = self.pull(&dense);
                let m = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if m == 0.0 {
                    // The violated constraint is constant on the parametrized
                    // set, so the set is empty and any cut is valid.
                    let mut e = vec![0.0; g.len()];
                    e[0] = 1.0;
                    return SetVerdict::Cut(e);
                }
                SetVerdict::Cut(g.iter().map(|v| v / m).collect())
            }
        }
    }
}

impl OracleConvexFunction for Projection<'_> {
    fn value(&self, y: &[f64]) -> f64 {
        antiserver::divergence(&self.poly.chi, &self.full(y), self.prev, self.poly.delta)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let g = antiserver::divergence_gradient(&self.poly.chi, &self.full(y), self.prev, self.poly.delta);
        self.pull(&g)
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn value_interval(&self) -> (f64, f64) {
        (0.0, self.upper)
    }
}

/// Diagnostics of the latest request.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub request: usize,
    pub prev_x: Vec<f64>,
    /// Sup-norm distance moved by the repair.
    pub repair_shift: f64,
    /// `Σ_ℓ x_{ℓ1} − (n − k)` after repair.
    pub mass_error: f64,
    pub bisections: usize,
    pub snapped: bool,
    pub cost: Rat,
}

/// State of the fractional algorithm.
#[derive(Clone, Debug)]
pub struct FractionalState {
    tree: WeightedTree,
    k: usize,
    chi: Chi,
    x: AntiServerPoint,
    measure: MassVector,
    eps_step: f64,
    eps_solver: f64,
    cost: Rat,
    steps: usize,
    last: Option<StepInfo>,
}

impl FractionalState {
    /// Starts from the integral configuration `c0`, with occupied leaves
    /// lifted to the δ floor.
    pub fn init(hst: &TauHst, k: usize, c0: &[usize]) -> Result<Self, FractionalError> {
        Self::with_eps(hst, k, c0, default_eps_step(k))
    }

    pub fn with_eps(hst: &TauHst, k: usize, c0: &[usize], eps_step: f64) -> Result<Self, FractionalError> {
        if hst.tau() < int(10) {
            return Err(FractionalError::InvalidTree(format!("tau {} below 10", rat::fmt(&hst.tau()))));
        }
        let tree = hst.tree().clone();
        if c0.len() != k {
            return Err(FractionalError::SizeMismatch(c0.len(), k));
        }
        if k == 0 || k > tree.n_leaves() {
            return Err(FractionalError::InvalidTree(format!("k = {k} with {} leaves", tree.n_leaves())));
        }
        if let Some(&bad) = c0.iter().find(|&&l| tree.leaf_index(l).is_none()) {
            return Err(FractionalError::UnknownLeaf(bad));
        }
        let chi = Chi::new(&tree);
        let mut x = antiserver::from_config(&tree, &chi, k, c0)?;
        let d = antiserver::delta(k);
        for &l in tree.leaves() {
            let i = chi.leaf_idx(l);
            x.x[i] = if x.x[i] == 0.0 { d } else { 1.0 };
        }
        let floor = Polytope { floor: true, ..Polytope::plain(&tree, k) };
        let x = floor.repair(&x.x)?;
        let mut sorted = c0.to_vec();
        sorted.sort();
        let measure = MassVector::from_config(&tree, &sorted, MEASURE_DENOM);
        let eps_solver = solver_eps(eps_step, rat::to_f64(&tree.diameter()), k, tree.n_leaves());
        Ok(Self { tree, k, chi, x, measure, eps_step, eps_solver, cost: Rat::zero(), steps: 0, last: None })
    }

    pub fn x(&self) -> &AntiServerPoint {
        &self.x
    }

    pub fn chi(&self) -> &Chi {
        &self.chi
    }

    pub fn eps_step(&self) -> f64 {
        self.eps_step
    }

    pub fn eps_solver(&self) -> f64 {
        self.eps_solver
    }

    pub fn cost(&self) -> Rat {
        self.cost
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn last_step(&self) -> Option<&StepInfo> {
        self.last.as_ref()
    }

    /// Projection polytope for a request at `leaf`.
    pub fn polytope(&self, leaf: usize) -> Polytope {
        Polytope::projection(&self.tree, self.k, Some(leaf))
    }

    /// Lipschitz bound of the divergence in the free coordinates.
    pub fn lipschitz(&self, leaf: usize) -> f64 {
        let poly = self.polytope(leaf);
        Projection::new(&poly, &self.x.x, leaf).lipschitz
    }

    fn serve_inner(&mut self, leaf: usize) -> Result<MassVector, FractionalError> {
        if self.tree.leaf_index(leaf).is_none() {
            return Err(FractionalError::UnknownLeaf(leaf));
        }
        let prev_x = self.x.x.clone();
        let n = self.tree.n_leaves();
        if self.k == n {
            self.steps += 1;
            self.last = Some(StepInfo { request: leaf, prev_x, repair_shift: 0.0, mass_error: 0.0, bisections: 0, snapped: false, cost: Rat::zero() });
            return Ok(self.measure.clone());
        }
        let poly = self.polytope(leaf);
        let prob = Projection::new(&poly, &prev_x, leaf);
        let (y, stats) = solver::minimize_convex(&prob, &prob, self.eps_solver)?;
        let raw = prob.full(&y);
        let x = poly.repair(&raw)?;
        let repair_shift = raw.iter().zip(&x.x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let mass: f64 = self.chi.leaves().iter().map(|&l| x.x[self.chi.leaf_idx(l)]).sum();
        let mass_error = mass - poly.mass_target();
        let half = antiserver::to_leaf_measure(&self.tree, &self.chi, &x, MEASURE_DENOM, self.eps_step)?;
        let mut z = reduce_mass(&self.tree, &half)?;
        let snapped = snap(&self.tree, &mut z, leaf, self.eps_step);
        if z.value(leaf) < int(1) {
            return Err(FractionalError::Unserved { leaf, mass: z.value(leaf) });
        }
        let cost = measure::ot_distance(&self.tree, &self.measure, &z)?;
        self.cost += cost;
        self.steps += 1;
        self.x = x;
        self.measure = z.clone();
        self.last = Some(StepInfo { request: leaf, prev_x, repair_shift, mass_error, bisections: stats.bisections, snapped, cost });
        Ok(z)
    }

    /// Per-step certificate: the oracle accepts `x(t)` at `γ = ε_step`, and
    /// `D(x(t)‖x(t−1))` is compared with random feasible probes and with
    /// convex combinations of `x(t)` and those probes.
    pub fn audit_last(&self, probes: usize, seed: u64) -> Option<AuditReport> {
        let info = self.last.as_ref()?;
        let poly = self.polytope(info.request);
        let oracle_ok = self.k == self.tree.n_leaves() || poly.separate(&self.x.x, self.eps_step) == Verdict::Feasible;
        if self.k == self.tree.n_leaves() {
            return Some(AuditReport { oracle_ok, worst_gap: 0.0, bound: 0.0, probes: 0 });
        }
        let prob = Projection::new(&poly, &info.prev_x, info.request);
        let bound = prob.lipschitz * self.eps_solver;
        let here = antiserver::divergence(&self.chi, &self.x.x, &info.prev_x, poly.delta);
        let mut bits = BitStream::new(seed);
        let mut worst = f64::NEG_INFINITY;
        for p in 0..probes {
            let mut q = random_feasible(&poly, &mut bits);
            if p % 2 == 1 {
                let lam = 1.0 - (bits.bits(10) as f64 + 1.0) / 1024.0 * 0.1;
                for (a, b) in q.iter_mut().zip(&self.x.x) {
                    *a = lam * b + (1.0 - lam) * *a;
                }
            }
            let there = antiserver::divergence(&self.chi, &q, &info.prev_x, poly.delta);
            worst = worst.max(here - there);
        }
        Some(AuditReport { oracle_ok, worst_gap: worst, bound, probes })
    }
}

impl FractionalAlgorithm for FractionalState {
    fn tree(&self) -> &WeightedTree {
        &self.tree
    }

    fn k(&self) -> usize {
        self.k
    }

    fn current(&self) -> &MassVector {
        &self.measure
    }

    fn serve(&mut self, leaf: usize) -> Result<MassVector, FractionalError> {
        self.serve_inner(leaf)
    }
}

/// Result of [`FractionalState::audit_last`].
#[derive(Clone, Debug, PartialEq)]
pub struct AuditReport {
    pub oracle_ok: bool,
    /// `max_probe D(x(t)‖x(t−1)) − D(probe‖x(t−1))`.
    pub worst_gap: f64,
    /// `L·ε_solver`.
    pub bound: f64,
    pub probes: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.oracle_ok && self.worst_gap <= self.bound
    }
}

/// Random point of `P_δ` with the pin and the mass condition.
///
/// Leaf values lie in `[δ, 1]` and sum to `n − k`; each internal `x_{u,i}` is
/// the `i`-th smallest leaf value below `u`, which makes every prefix
/// constraint tight.
pub fn random_feasible(poly: &Polytope, bits: &mut BitStream) -> Vec<f64> {
    let chi = &poly.chi;
    let d = poly.delta;
    let leaves = chi.leaves();
    let pin = poly.pinned;
    let free: Vec<usize> = leaves.iter().copied().filter(|&l| Some(l) != pin).collect();
    let mut val = vec![0.0; chi.len()];
    for &l in leaves {
        val[chi.leaf_idx(l)] = d;
    }
    let mut budget = poly.mass_target() - d * leaves.len() as f64;
    let mut weights: Vec<f64> = free.iter().map(|_| (bits.bits(16) as f64 + 1.0) / 65536.0).collect();
    let mut open: Vec<usize> = (0..free.len()).collect();
    while budget > 1e-15 && !open.is_empty() {
        let total: f64 = open.iter().map(|&t| weights[t]).sum();
        let mut next = Vec::new();
        let mut spent = 0.0;
        for &t in &open {
            let i = chi.leaf_idx(free[t]);
            let add = budget * weights[t] / total;
            let room = 1.0 - val[i];
            if add >= room {
                val[i] = 1.0;
                spent += room;
                weights[t] = 0.0;
            } else {
                val[i] += add;
                spent += add;
                next.push(t);
            }
        }
        budget -= spent;
        if next.len() == open.len() {
            break;
        }
        open = next;
    }
    let mut below: Vec<Vec<f64>> = vec![Vec::new(); chi.node_count()];
    for &l in leaves {
        below[l].push(val[chi.leaf_idx(l)]);
    }
    for (u, _) in chi.internal().iter().rev() {
        let mut acc: Vec<f64> = chi.children_of(*u).iter().flat_map(|&c| below[c].clone()).collect();
        acc.sort_by(f64::total_cmp);
        below[*u] = acc;
    }
    for (u, _) in chi.internal() {
        if *u == chi.root() {
            continue;
        }
        for (j, v) in below[*u].iter().enumerate() {
            val[chi.idx(*u, j + 1)] = *v;
        }
    }
    for (j, i) in chi.root_coords().enumerate() {
        val[i] = if j < poly.k { 0.0 } else { 1.0 };
    }
    val
}

/// Converts a `(k+½)`-mass leaf measure into a `k`-mass leaf measure.
///
/// Targets start at `σ(z_u)` on every aggregate. Walking down from the root,
/// each node hands its target to its children: every child first gets
/// `σ(z_c)`, and the surplus is spread in proportion to the room `z_c − σ(z_c)`
/// (ties on the grid go to the lowest child index). A leaf at exactly one unit
/// stays there since `σ(1) = 1`.
pub fn reduce_mass(tree: &WeightedTree, z: &MassVector) -> Result<MassVector, MeasureError> {
    let m = z.mass(tree);
    let k = m - Rat::new(1, 2);
    if !k.is_integer() || k < Rat::zero() {
        return Err(MeasureError::InvalidMeasure(Violation::RootMass { found: m, expected: k.floor() + Rat::new(1, 2) }));
    }
    measure::validate(tree, z, Kind::Leaf, m).map_err(MeasureError::InvalidMeasure)?;
    let d = z.denom();
    let mut target = vec![0i64; tree.len()];
    target[tree.root()] = measure::sigma_num(z.num(tree.root()), d);
    for &u in tree.bfs() {
        let cs = tree.children(u);
        if cs.is_empty() {
            continue;
        }
        let base: Vec<i64> = cs.iter().map(|&c| measure::sigma_num(z.num(c), d)).collect();
        let room: Vec<i64> = cs.iter().zip(&base).map(|(&c, b)| z.num(c) - b).collect();
        let surplus = target[u] - base.iter().sum::<i64>();
        let total_room: i64 = room.iter().sum();
        assert!(surplus >= 0 && surplus <= total_room, "σ surplus out of range at node {u}");
        let mut give: Vec<i64> = vec![0; cs.len()];
        let mut rem: Vec<(i128, usize)> = Vec::new();
        if total_room > 0 {
            for t in 0..cs.len() {
                let p = surplus as i128 * room[t] as i128;
                give[t] = (p / total_room as i128) as i64;
                rem.push((p % total_room as i128, t));
            }
        }
        let mut left = surplus - give.iter().sum::<i64>();
        rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut idx = 0;
        while left > 0 {
            let t = rem[idx % rem.len()].1;
            if give[t] < room[t] {
                give[t] += 1;
                left -= 1;
            }
            idx += 1;
        }
        for (t, &c) in cs.iter().enumerate() {
            target[c] = base[t] + give[t];
        }
    }
    let mut leaf_num = vec![0i64; tree.len()];
    for &l in tree.leaves() {
        leaf_num[l] = target[l];
    }
    Ok(MassVector::from_leaves(tree, d, &leaf_num))
}

/// Raises the requested leaf to exactly one unit when it is within `eps` below,
/// taking the deficit from the heaviest other leaf. Returns whether it acted.
pub fn snap(tree: &WeightedTree, z: &mut MassVector, leaf: usize, eps: f64) -> bool {
    let d = z.denom();
    let have = z.num(leaf);
    if have >= d || (d - have) as f64 > eps * d as f64 {
        return false;
    }
    let deficit = d - have;
    let donor = tree
        .leaves()
        .iter()
        .copied()
        .filter(|&l| l != leaf)
        .max_by(|&a, &b| z.num(a).cmp(&z.num(b)).then(b.cmp(&a)))
        .expect("another leaf exists");
    let mut leaf_num = vec![0i64; tree.len()];
    for &l in tree.leaves() {
        leaf_num[l] = z.num(l);
    }
    let take = deficit.min(leaf_num[donor]);
    leaf_num[donor] -= take;
    leaf_num[leaf] += take;
    *z = MassVector::from_leaves(tree, d, &leaf_num);
    true
}
