//! Central-cut ellipsoid method and level-set dichotomy for strongly convex
//! minimization over oracle-represented sets.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("ellipsoid exceeded its iteration budget of {0}")]
    IterationBudgetExceeded(usize),
    #[error("no level set of the objective was found inside the value interval")]
    Infeasible,
}

/// Answer of an approximate separation oracle.
#[derive(Clone, Debug, PartialEq)]
pub enum SetVerdict {
    /// The query point is within `γ` of the set.
    Feasible,
    /// Every point of the set satisfies `c·x ≤ c·y + γ`, with `‖c‖_∞ = 1`.
    Cut(Vec<f64>),
}

pub trait OracleConvexSet {
    fn dim(&self) -> usize;
    /// Centre of a ball of radius [`radius`](Self::radius) containing the set.
    fn center(&self) -> Vec<f64>;
    fn radius(&self) -> f64;
    fn separate(&self, y: &[f64], gamma: f64) -> SetVerdict;
}

/// Convex function given by value and gradient oracles evaluated to machine
/// precision, with the constants the dichotomy needs.
pub trait OracleConvexFunction {
    fn value(&self, y: &[f64]) -> f64;
    fn gradient(&self, y: &[f64]) -> Vec<f64>;
    fn lipschitz(&self) -> f64;
    /// Modulus with `f(y) − f(x*) ≥ α‖y − x*‖²` at the constrained minimizer.
    fn alpha(&self) -> f64;
    /// Closed interval containing the minimum value over the set.
    fn value_interval(&self) -> (f64, f64);
}

#[derive(Clone, Debug, PartialEq)]
pub enum EllipsoidOutcome {
    NearPoint(Vec<f64>),
    /// Final ellipsoid contains the set and has volume at most `ε^{2d}`.
    SmallVolume { center: Vec<f64>, log_volume: f64, iterations: usize },
}

/// `ln` of the volume of the unit ball in `d` dimensions.
fn log_unit_ball(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

fn ln_gamma(x: f64) -> f64 {
    // Gamma at integers and half-integers is all we need.
    let mut acc = 0.0;
    let mut y = x;
    while y > 1.5 {
        y -= 1.0;
        acc += y.ln();
    }
    if (y - 0.5).abs() < 1e-9 {
        acc + 0.5 * std::f64::consts::PI.ln()
    } else {
        acc
    }
}

/// Iteration cap `10·d(d+1)·ln(R/ε) + 100`.
pub fn iteration_cap(d: usize, radius: f64, eps: f64) -> usize {
    let l = (radius / eps).ln().max(1.0);
    (10.0 * (d * (d + 1)) as f64 * l) as usize + 100
}

/// Central-cut ellipsoid method.
///
/// Starts from the enclosing ball and queries the centre at `γ = ε`. The
/// ellipsoid is kept as `{x + Bw : ‖w‖ ≤ 1}`, so its shape `P = BBᵀ` stays
/// symmetric positive definite without explicit repair; each update is
/// inflated by `1 + 1/(4d²)` on `P` to absorb rounding.
///
/// Directions that never receive a cut grow without bound, which eventually
/// destroys the factor numerically. Two safeguards use the enclosing ball
/// `B(c, R)`: a centre outside it is cut off by the ball itself, and every
/// `d²` steps the semi-axes `σ` are replaced by `√2·min(σ, 2R)` when that
/// shrinks the volume. The second ellipsoid contains `E ∩ B(c, R)` whenever
/// the centre lies in the ball.
pub fn central_cut_ellipsoid<K: OracleConvexSet + ?Sized>(k: &K, eps: f64) -> Result<EllipsoidOutcome, SolverError> {
    assert!(eps > 0.0);
    let d = k.dim();
    let r = k.radius();
    let cap = iteration_cap(d, r, eps);
    let origin = DVector::from_vec(k.center());
    let mut x = origin.clone();
    if d == 0 {
        return Ok(EllipsoidOutcome::NearPoint(vec![]));
    }
    let df = d as f64;
    let target = 2.0 * df * eps.ln();
    let base = log_unit_ball(d);
    let mut b = DMatrix::<f64>::identity(d, d) * r;
    let mut log_det = df * 2.0 * r.ln();
    let blow = 1.0 + 1.0 / (4.0 * df * df);
    let (shrink, scale) = if d == 1 { (0.5, 1.0) } else { (1.0 - ((df - 1.0) / (df + 1.0)).sqrt(), (df * df / (df * df - 1.0) * blow).sqrt()) };
    let step_log_det = if d == 1 { 0.25f64.ln() } else { 2.0 * df * scale.ln() + (1.0 - 2.0 / (df + 1.0)).ln() };
    let clamp_every = (d * d).max(16);
    for it in 0..cap {
        let off = &x - &origin;
        let c = if off.norm() > r {
            let m = off.amax();
            off / m
        } else {
            match k.separate(x.as_slice(), eps) {
                SetVerdict::Feasible => return Ok(EllipsoidOutcome::NearPoint(x.as_slice().to_vec())),
                SetVerdict::Cut(c) => DVector::from_vec(c),
            }
        };
        let log_vol = base + 0.5 * log_det;
        if log_vol <= target {
            return Ok(EllipsoidOutcome::SmallVolume { center: x.as_slice().to_vec(), log_volume: log_vol, iterations: it });
        }
        let a = b.tr_mul(&c);
        let norm = a.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Ok(EllipsoidOutcome::SmallVolume { center: x.as_slice().to_vec(), log_volume: f64::NEG_INFINITY, iterations: it });
        }
        let u = a / norm;
        let bu = &b * &u;
        x -= &bu * (if d == 1 { 0.5 } else { 1.0 / (df + 1.0) });
        b = (&b - (&bu * u.transpose()) * shrink) * scale;
        log_det += step_log_det;
        if (it + 1) % clamp_every == 0 && (&x - &origin).norm() <= r {
            clamp_axes(&mut b, &mut log_det, 2.0 * r);
        }
    }
    Err(SolverError::IterationBudgetExceeded(cap))
}

/// Replaces semi-axes `σ` by `√2·min(σ, cap)` if that lowers the volume.
fn clamp_axes(b: &mut DMatrix<f64>, log_det: &mut f64, cap: f64) {
    let svd = b.clone().svd(true, false);
    let sig = &svd.singular_values;
    if sig.iter().all(|&s| s <= cap) {
        return;
    }
    let new: Vec<f64> = sig.iter().map(|&s| std::f64::consts::SQRT_2 * s.min(cap)).collect();
    let old_ld: f64 = sig.iter().map(|s| 2.0 * s.ln()).sum();
    let new_ld: f64 = new.iter().map(|s| 2.0 * s.ln()).sum();
    if new_ld >= old_ld || !new_ld.is_finite() {
        return;
    }
    let u = svd.u.expect("left singular vectors");
    *b = u * DMatrix::from_diagonal(&DVector::from_vec(new));
    *log_det = new_ld;
}

/// Smallest set tolerance handed to an oracle inside [`minimize_convex`];
/// below this, rounding in sums of coordinates dominates the check.
pub const GAMMA_FLOOR: f64 = 1e-12;

/// `K ∩ {f ≤ A}`.
struct LevelSet<'a, F: ?Sized, K: ?Sized> {
    f: &'a F,
    k: &'a K,
    level: f64,
    set_gamma: f64,
}

impl<F: OracleConvexFunction + ?Sized, K: OracleConvexSet + ?Sized> OracleConvexSet for LevelSet<'_, F, K> {
    fn dim(&self) -> usize {
        self.k.dim()
    }

    fn center(&self) -> Vec<f64> {
        self.k.center()
    }

    fn radius(&self) -> f64 {
        self.k.radius()
    }

    fn separate(&self, y: &[f64], gamma: f64) -> SetVerdict {
        match self.k.separate(y, gamma.min(self.set_gamma)) {
            SetVerdict::Feasible => {}
            cut => return cut,
        }
        if self.f.value(y) <= self.level {
            return SetVerdict::Feasible;
        }
        let g = self.f.gradient(y);
        let m = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m == 0.0 {
            // Stationary point above the level: nothing in the set goes lower.
            return SetVerdict::Cut(vec![1.0; y.len()]);
        }
        SetVerdict::Cut(g.iter().map(|v| v / m).collect())
    }
}

/// Statistics of one [`minimize_convex`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MinimizeStats {
    pub bisections: usize,
    pub level: f64,
}

/// Dichotomy over the level `A`.
///
/// With `ε′ = αε²/8` the interval of candidate levels is halved until its
/// width drops below `ε′/2`; each probe runs the ellipsoid on `K ∩ {f ≤ A}`
/// at precision `ε/2`. The returned point is the ellipsoid answer at the
/// upper end of the final interval.
///
/// Points accepted by `K`'s oracle may sit outside `K`, where `f` can dip
/// below the constrained minimum; the set oracle is therefore queried at
/// `ε′/(2L)` (floored at [`GAMMA_FLOOR`]), so such a dip costs at most
/// `ε′/2` in level.
pub fn minimize_convex<F, K>(f: &F, k: &K, eps: f64) -> Result<(Vec<f64>, MinimizeStats), SolverError>
where
    F: OracleConvexFunction + ?Sized,
    K: OracleConvexSet + ?Sized,
{
    assert!(eps > 0.0);
    let eps_prime = f.alpha() * eps * eps / 8.0;
    let (mut lo, mut hi) = f.value_interval();
    let mut best: Option<Vec<f64>> = None;
    let mut stats = MinimizeStats::default();
    let set_gamma = (eps_prime / (2.0 * f.lipschitz().max(1.0))).max(GAMMA_FLOOR);
    let probe = |level: f64| central_cut_ellipsoid(&LevelSet { f, k, level, set_gamma }, eps / 2.0);
    while hi - lo >= eps_prime / 2.0 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        stats.bisections += 1;
        match probe(mid)? {
            EllipsoidOutcome::NearPoint(x) => {
                hi = mid;
                best = Some(x);
            }
            EllipsoidOutcome::SmallVolume { .. } => lo = mid,
        }
    }
    stats.level = hi;
    match best {
        Some(x) => Ok((x, stats)),
        None => match probe(hi)? {
            EllipsoidOutcome::NearPoint(x) => Ok((x, stats)),
            EllipsoidOutcome::SmallVolume { .. } => Err(SolverError::Infeasible),
        },
    }
}

/// Euclidean ball.
#[derive(Clone, Debug)]
pub struct BallSet {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl OracleConvexSet for BallSet {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn center(&self) -> Vec<f64> {
        self.center.clone()
    }

    fn radius(&self) -> f64 {
        self.radius * 2.0
    }

    fn separate(&self, y: &[f64], gamma: f64) -> SetVerdict {
        let diff: Vec<f64> = y.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let n = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n <= self.radius + gamma {
            return SetVerdict::Feasible;
        }
        let m = diff.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        SetVerdict::Cut(diff.iter().map(|v| v / m).collect())
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct BoxSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl OracleConvexSet for BoxSet {
    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    fn radius(&self) -> f64 {
        let half: f64 = self.lo.iter().zip(&self.hi).map(|(a, b)| 0.25 * (b - a) * (b - a)).sum();
        half.sqrt().max(1e-12) * 1.01
    }

    fn separate(&self, y: &[f64], gamma: f64) -> SetVerdict {
        // Coordinate violations of at most γ/√d keep the distance below γ.
        let tol = gamma / (y.len() as f64).sqrt();
        for i in 0..y.len() {
            let mut c = vec![0.0; y.len()];
            if y[i] > self.hi[i] + tol {
                c[i] = 1.0;
                return SetVerdict::Cut(c);
            }
            if y[i] < self.lo[i] - tol {
                c[i] = -1.0;
                return SetVerdict::Cut(c);
            }
        }
        SetVerdict::Feasible
    }
}

/// `{x ≥ 0, Σ x ≤ s}`.
#[derive(Clone, Debug)]
pub struct SimplexSet {
    pub dim: usize,
    pub scale: f64,
}

impl OracleConvexSet for SimplexSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn center(&self) -> Vec<f64> {
        vec![self.scale / 2.0; self.dim]
    }

    fn radius(&self) -> f64 {
        self.scale * (self.dim as f64).sqrt()
    }

    fn separate(&self, y: &[f64], gamma: f64) -> SetVerdict {
        let d = y.len() as f64;
        let tol = gamma / d.sqrt();
        for i in 0..y.len() {
            if y[i] < -tol {
                let mut c = vec![0.0; y.len()];
                c[i] = -1.0;
                return SetVerdict::Cut(c);
            }
        }
        if y.iter().sum::<f64>() > self.scale + tol {
            return SetVerdict::Cut(vec![1.0; y.len()]);
        }
        SetVerdict::Feasible
    }
}

/// `‖x − c‖²` on a bounded domain of diameter `diam`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub c: Vec<f64>,
    pub diam: f64,
    pub max_value: f64,
}

impl OracleConvexFunction for Quadratic {
    fn value(&self, y: &[f64]) -> f64 {
        y.iter().zip(&self.c).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.c).map(|(a, b)| 2.0 * (a - b)).collect()
    }

    fn lipschitz(&self) -> f64 {
        2.0 * self.diam
    }

    fn alpha(&self) -> f64 {
        1.0
    }

    fn value_interval(&self) -> (f64, f64) {
        (0.0, self.max_value)
    }
}

/// Euclidean projection onto `{x ≥ 0, Σ x ≤ s}` (closed form).
pub fn project_simplex(c: &[f64], s: f64) -> Vec<f64> {
    let clipped: Vec<f64> = c.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= s {
        return clipped;
    }
    let mut u = c.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, v) in u.iter().enumerate() {
        acc += v;
        let t = (acc - s) / (i + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    c.iter().map(|v| (v - theta).max(0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    #[test]
    fn ball_returns_origin() {
        let k = BallSet { center: vec![0.0; 3], radius: 1.0 };
        assert_eq!(central_cut_ellipsoid(&k, 1e-3).unwrap(), EllipsoidOutcome::NearPoint(vec![0.0; 3]));
    }

    #[test]
    fn offset_ball_found() {
        let k = BallSet { center: vec![0.7, -0.2], radius: 0.01 };
        struct Shifted(BallSet);
        impl OracleConvexSet for Shifted {
            fn dim(&self) -> usize {
                2
            }
            fn center(&self) -> Vec<f64> {
                vec![0.0, 0.0]
            }
            fn radius(&self) -> f64 {
                2.0
            }
            fn separate(&self, y: &[f64], g: f64) -> SetVerdict {
                self.0.separate(y, g)
            }
        }
        match central_cut_ellipsoid(&Shifted(k.clone()), 1e-3).unwrap() {
            EllipsoidOutcome::NearPoint(x) => assert!(dist(&x, &k.center) <= 0.01 + 1e-3),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn tiny_box_stress() {
        let lo = vec![0.3, 0.3];
        let hi = vec![0.3 + 1e-9, 0.3 + 1e-9];
        struct Wide(BoxSet);
        impl OracleConvexSet for Wide {
            fn dim(&self) -> usize {
                2
            }
            fn center(&self) -> Vec<f64> {
                vec![0.0, 0.0]
            }
            fn radius(&self) -> f64 {
                1.0
            }
            fn separate(&self, y: &[f64], g: f64) -> SetVerdict {
                self.0.separate(y, g)
            }
        }
        let k = Wide(BoxSet { lo, hi });
        match central_cut_ellipsoid(&k, 1e-3).unwrap() {
            EllipsoidOutcome::NearPoint(x) => assert_eq!(k.0.separate(&x, 1e-3), SetVerdict::Feasible),
            EllipsoidOutcome::SmallVolume { log_volume, .. } => assert!(log_volume <= 4.0 * (1e-3f64).ln()),
        }
    }

    #[test]
    fn one_dimensional() {
        let k = BoxSet { lo: vec![0.0], hi: vec![1.0] };
        let f = Quadratic { c: vec![1.7], diam: 1.0, max_value: 4.0 };
        let (x, _) = minimize_convex(&f, &k, 1e-5).unwrap();
        assert!((x[0] - 1.0).abs() <= 1e-5);
    }

    #[test]
    fn simplex_near_point() {
        let k = SimplexSet { dim: 4, scale: 1.0 };
        match central_cut_ellipsoid(&k, 1e-6).unwrap() {
            EllipsoidOutcome::NearPoint(x) => {
                assert!(x.iter().all(|&v| v >= -1e-6));
                assert!(x.iter().sum::<f64>() <= 1.0 + 1e-6);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn square_norm_over_box() {
        let k = BoxSet { lo: vec![0.0; 3], hi: vec![1.0; 3] };
        let f = Quadratic { c: vec![0.0; 3], diam: 3f64.sqrt(), max_value: 3.0 };
        let (x, _) = minimize_convex(&f, &k, 1e-4).unwrap();
        assert!(dist(&x, &[0.0; 3]) <= 1e-4, "{x:?}");
    }

    #[test]
    fn deterministic() {
        let k = SimplexSet { dim: 3, scale: 1.0 };
        let f = Quadratic { c: vec![0.9, 0.8, -0.3], diam: 2.0, max_value: 8.0 };
        assert_eq!(minimize_convex(&f, &k, 1e-4).unwrap(), minimize_convex(&f, &k, 1e-4).unwrap());
    }

    #[test]
    fn projection_formula() {
        assert_eq!(project_simplex(&[0.2, 0.3], 1.0), vec![0.2, 0.3]);
        let p = project_simplex(&[1.0, 1.0], 1.0);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(project_simplex(&[2.0, -1.0], 1.0), vec![1.0, 0.0]);
    }

    #[test]
    fn cap_formula() {
        assert_eq!(iteration_cap(2, 1.0, (-5.0f64).exp()), 10 * 6 * 5 + 100);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn simplex_projection_recovered(c in proptest::collection::vec(-1.0f64..2.0, 2..=6)) {
            let d = c.len();
            let k = SimplexSet { dim: d, scale: 1.0 };
            let f = Quadratic { c: c.clone(), diam: 2.0 * (d as f64).sqrt(), max_value: 9.0 * d as f64 };
            let (x, _) = minimize_convex(&f, &k, 1e-4).unwrap();
            let want = project_simplex(&c, 1.0);
            prop_assert!(dist(&x, &want) <= 1e-4, "{:?} vs {:?}", x, want);
        }

        #[test]
        fn box_minimizer_recovered(c in proptest::collection::vec(-1.0f64..2.0, 1..=6)) {
            let d = c.len();
            let k = BoxSet { lo: vec![0.0; d], hi: vec![1.0; d] };
            let f = Quadratic { c: c.clone(), diam: (d as f64).sqrt(), max_value: 4.0 * d as f64 };
            let (x, _) = minimize_convex(&f, &k, 1e-4).unwrap();
            let want: Vec<f64> = c.iter().map(|v| v.clamp(0.0, 1.0)).collect();
            prop_assert!(dist(&x, &want) <= 1e-4, "{:?} vs {:?}", x, want);
        }
    }
}
