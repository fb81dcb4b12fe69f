//! Exact offline optimum and brute-force reference oracles.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measure::MassVector;
use crate::metric::{MetricSpace, WeightedTree};
use crate::rat::{int, lcm, Rat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OfflineError {
    #[error("trace cannot be served")]
    InfeasibleTrace,
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),
}

/// Points of a metric together with their pairwise distance.
pub trait Metric {
    fn points(&self) -> Vec<usize>;
    fn d(&self, a: usize, b: usize) -> Rat;
}

impl Metric for MetricSpace {
    fn points(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
    fn d(&self, a: usize, b: usize) -> Rat {
        int(self.dist(a, b) as i128)
    }
}

/// Leaves of a tree, addressed by node id.
impl Metric for WeightedTree {
    fn points(&self) -> Vec<usize> {
        self.leaves().to_vec()
    }
    fn d(&self, a: usize, b: usize) -> Rat {
        self.node_distance(a, b)
    }
}

/// Initial configuration and request sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub initial: Vec<usize>,
    pub requests: Vec<usize>,
}

impl RequestTrace {
    pub fn new(initial: Vec<usize>, requests: Vec<usize>) -> Self {
        Self { initial, requests }
    }

    pub fn k(&self) -> usize {
        self.initial.len()
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

/// Minimum-cost perfect assignment of `k` sources to `k` targets by subset DP.
pub fn min_assignment(k: usize, cost: impl Fn(usize, usize) -> Rat) -> Rat {
    assert!(k <= 20, "assignment oracle limited to 20 items");
    let full = 1usize << k;
    let mut best: Vec<Option<Rat>> = vec![None; full];
    best[0] = Some(Rat::zero());
    for mask in 0..full {
        let Some(cur) = best[mask] else { continue };
        let i = mask.count_ones() as usize;
        if i == k {
            continue;
        }
        for j in 0..k {
            if mask & (1 << j) == 0 {
                let v = cur + cost(i, j);
                let slot = &mut best[mask | (1 << j)];
                if slot.is_none_or(|s| v < s) {
                    *slot = Some(v);
                }
            }
        }
    }
    best[full - 1].unwrap_or_else(Rat::zero)
}

/// Minimum-weight perfect matching between two equal-size point multisets.
pub fn matching_distance<M: Metric + ?Sized>(metric: &M, a: &[usize], b: &[usize]) -> Rat {
    assert_eq!(a.len(), b.len());
    min_assignment(a.len(), |i, j| metric.d(a[i], b[j]))
}

/// Brute-force transport cost between two measures: every `1/M` unit of point
/// mass becomes an item and items are assigned exhaustively.
pub fn brute_transport(tree: &WeightedTree, z: &MassVector, z2: &MassVector) -> Result<Rat, OfflineError> {
    let d = lcm(z.denom() as i128, z2.denom() as i128) as i64;
    let (a, b) = (z.with_denom(d).unwrap(), z2.with_denom(d).unwrap());
    let units = |v: &MassVector| -> Vec<usize> {
        let mut out = Vec::new();
        for u in 0..tree.len() {
            for _ in 0..v.point_num(tree, u).max(0) {
                out.push(u);
            }
        }
        out
    };
    let (ua, ub) = (units(&a), units(&b));
    if ua.len() != ub.len() {
        return Err(OfflineError::InstanceTooLarge("unequal mass".into()));
    }
    if ua.len() > 16 {
        return Err(OfflineError::InstanceTooLarge(format!("{} units", ua.len())));
    }
    Ok(min_assignment(ua.len(), |i, j| tree.node_distance(ua[i], ub[j])) / int(d as i128))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut r: u128 = 1;
    for i in 0..k.min(n - k) {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

fn subsets(points: &[usize], k: usize) -> Vec<Vec<usize>> {
    fn rec(p: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..p.len() {
            cur.push(p[i]);
            rec(p, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(points, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Dynamic program over `k`-subsets of points. Guarded to `C(n,k) ≤ 10⁴`, `T ≤ 50`.
pub fn opt_dp<M: Metric + ?Sized>(metric: &M, trace: &RequestTrace) -> Result<Rat, OfflineError> {
    let points = metric.points();
    let k = trace.k().min(points.len());
    if binomial(points.len(), k) > 10_000 || trace.len() > 50 {
        return Err(OfflineError::InstanceTooLarge(format!("n={}, k={}, T={}", points.len(), k, trace.len())));
    }
    let states = subsets(&points, k);
    let trans = |a: &[usize], b: &[usize]| -> Rat {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        let common: Vec<usize> = a.iter().copied().filter(|x| b.contains(x)).collect();
        for c in common {
            let i = a.iter().position(|&x| x == c).unwrap();
            a.remove(i);
            let j = b.iter().position(|&x| x == c).unwrap();
            b.remove(j);
        }
        matching_distance(metric, &a, &b)
    };
    let init = trace.initial.clone();
    let mut dp: Vec<Option<Rat>> = states
        .iter()
        .map(|s| if trace.k() == s.len() { Some(matching_distance(metric, &init, s)) } else { None })
        .collect();
    if trace.k() != k {
        return Err(OfflineError::InfeasibleTrace);
    }
    for &r in &trace.requests {
        let mut next: Vec<Option<Rat>> = vec![None; states.len()];
        for (j, s) in states.iter().enumerate() {
            if !s.contains(&r) {
                continue;
            }
            for (i, p) in states.iter().enumerate() {
                if let Some(c) = dp[i] {
                    let v = c + trans(p, s);
                    if next[j].is_none_or(|b| v < b) {
                        next[j] = Some(v);
                    }
                }
            }
        }
        dp = next;
    }
    dp.into_iter().flatten().min().ok_or(OfflineError::InfeasibleTrace)
}

struct Edge {
    to: usize,
    cap: i64,
    cost: i128,
}

struct Flow {
    g: Vec<Vec<usize>>,
    e: Vec<Edge>,
}

impl Flow {
    fn new(n: usize) -> Self {
        Self { g: vec![Vec::new(); n], e: Vec::new() }
    }

    fn add(&mut self, a: usize, b: usize, cap: i64, cost: i128) {
        self.g[a].push(self.e.len());
        self.e.push(Edge { to: b, cap, cost });
        self.g[b].push(self.e.len());
        self.e.push(Edge { to: a, cap: 0, cost: -cost });
    }

    /// Successive shortest paths; `topo` orders nodes so every forward edge goes
    /// from an earlier to a later node, which gives the initial potentials.
    fn min_cost(&mut self, s: usize, t: usize, want: i64, topo: &[usize]) -> Option<i128> {
        let n = self.g.len();
        const INF: i128 = i128::MAX / 4;
        let mut pot = vec![INF; n];
        pot[s] = 0;
        for &u in topo {
            if pot[u] == INF {
                continue;
            }
            for &id in &self.g[u] {
                let ed = &self.e[id];
                if ed.cap > 0 && pot[u] + ed.cost < pot[ed.to] {
                    pot[ed.to] = pot[u] + ed.cost;
                }
            }
        }
        for p in pot.iter_mut() {
            if *p == INF {
                *p = 0;
            }
        }
        let mut total: i128 = 0;
        let mut sent = 0;
        while sent < want {
            let mut dist = vec![INF; n];
            let mut prev = vec![usize::MAX; n];
            dist[s] = 0;
            let mut heap = BinaryHeap::from([Reverse((0i128, s))]);
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &id in &self.g[u] {
                    let ed = &self.e[id];
                    if ed.cap <= 0 {
                        continue;
                    }
                    let nd = d + ed.cost + pot[u] - pot[ed.to];
                    if nd < dist[ed.to] {
                        dist[ed.to] = nd;
                        prev[ed.to] = id;
                        heap.push(Reverse((nd, ed.to)));
                    }
                }
            }
            if dist[t] == INF {
                return None;
            }
            for u in 0..n {
                if dist[u] < INF {
                    pot[u] += dist[u];
                }
            }
            let mut v = t;
            while v != s {
                let id = prev[v];
                self.e[id].cap -= 1;
                self.e[id ^ 1].cap += 1;
                total += self.e[id].cost;
                v = self.e[id ^ 1].to;
            }
            sent += 1;
        }
        Some(total)
    }
}

/// Exact offline optimum by min-cost flow on the time-expanded graph: one unit
/// per server, each request a node pair whose connecting arc must be used.
pub fn opt_flow<M: Metric + ?Sized>(metric: &M, trace: &RequestTrace) -> Result<Rat, OfflineError> {
    let k = trace.k();
    let t = trace.len();
    if k == 0 {
        return if t == 0 { Ok(Rat::zero()) } else { Err(OfflineError::InfeasibleTrace) };
    }
    let mut scale: i128 = 1;
    let mut dists: Vec<Rat> = Vec::new();
    let mut add = |a: usize, b: usize| -> usize {
        let d = metric.d(a, b);
        scale = lcm(scale, *d.denom());
        dists.push(d);
        dists.len() - 1
    };
    let mut init_to: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in trace.initial.iter().enumerate() {
        for &r in &trace.requests {
            init_to[i].push(add(c, r));
        }
    }
    let mut req_to: Vec<Vec<usize>> = vec![Vec::new(); t];
    for a in 0..t {
        for b in a + 1..t {
            req_to[a].push(add(trace.requests[a], trace.requests[b]));
        }
    }
    let cost = |i: usize| -> i128 { (dists[i] * int(scale)).to_integer() };
    let max = (0..dists.len()).map(cost).max().unwrap_or(0);
    let big = max * (t as i128 + k as i128 + 1) + 1;
    let (src, sink) = (0, 1 + k + 2 * t);
    let mut f = Flow::new(sink + 1);
    for i in 0..k {
        f.add(src, 1 + i, 1, 0);
        f.add(1 + i, sink, 1, 0);
        for (j, &id) in init_to[i].iter().enumerate() {
            f.add(1 + i, 1 + k + 2 * j, 1, cost(id));
        }
    }
    for a in 0..t {
        let (inn, out) = (1 + k + 2 * a, 2 + k + 2 * a);
        f.add(inn, out, 1, -big);
        f.add(out, sink, 1, 0);
        for (off, &id) in req_to[a].iter().enumerate() {
            f.add(out, 1 + k + 2 * (a + 1 + off), 1, cost(id));
        }
    }
    let topo: Vec<usize> = (0..=sink).collect();
    let total = f.min_cost(src, sink, k as i64, &topo).ok_or(OfflineError::InfeasibleTrace)?;
    let covered = total + big * t as i128;
    if covered < 0 || covered >= big {
        return Err(OfflineError::InfeasibleTrace);
    }
    Ok(Rat::new(covered, scale))
}

/// Movement cost of a concrete configuration trajectory.
pub fn trajectory_cost<M: Metric + ?Sized>(metric: &M, initial: &[usize], configs: &[Vec<usize>]) -> Rat {
    let mut prev = initial.to_vec();
    let mut total = Rat::zero();
    for c in configs {
        total += matching_distance(metric, &prev, c);
        prev = c.clone();
    }
    total
}
