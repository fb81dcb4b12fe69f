//! Experiment runner: instances, request generators, end-to-end runs and reports.
//!
//! A run is fully determined by its [`ExperimentConfig`]. The algorithm's own
//! randomness (the embedding and the member draw) comes from one counted
//! [`BitStream`]; the adversary and random instances use separate streams so
//! they never show up in the bit count.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitStream;
use crate::discretize::{min_granularity, BarelyFractional, DiscretizeError, Filtered, Pipeline, StageCosts};
use crate::fractional::{FractionalAlgorithm, FractionalError, FractionalState};
use crate::measure::{self, MassVector};
use crate::metric::{frt_embed, hst, validate_hst, MetricError, MetricSpace, TauHst, WeightedTree};
use crate::offline::{self, matching_distance, Metric, OfflineError, RequestTrace};
use crate::rat::{self, int, serde_rat, Rat};
use crate::rounding::{self, HstRounding, RoundingError};

/// Stream offsets so the adversary and instance generators never share bits with the algorithm.
const ADVERSARY_STREAM: u64 = 0x5eed_0001;
const INSTANCE_STREAM: u64 = 0x5eed_0002;

/// Random probes per audited fractional step.
pub const AUDIT_PROBES: usize = 200;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown generator: {0}")]
    UnknownGenerator(String),
    #[error("{0}")]
    Io(String),
    #[error("instance: {0}")]
    Metric(#[from] MetricError),
    #[error("offline optimum: {0}")]
    Offline(#[from] OfflineError),
    #[error("step {step}: {what}")]
    Step { step: usize, what: String, invariant: bool },
}

impl HarnessError {
    /// Whether the failure is a broken invariant rather than bad input.
    pub fn is_violation(&self) -> bool {
        matches!(self, HarnessError::Step { invariant: true, .. })
    }

    fn fractional(step: usize, e: FractionalError) -> Self {
        let invariant = matches!(e, FractionalError::Unserved { .. });
        HarnessError::Step { step, what: e.to_string(), invariant }
    }

    fn discretize(step: usize, e: DiscretizeError) -> Self {
        match e {
            DiscretizeError::Fractional(f) => Self::fractional(step, f),
            e => {
                let invariant = matches!(
                    e,
                    DiscretizeError::Invariant { .. } | DiscretizeError::TrackerInconsistency(_) | DiscretizeError::NonTermination(_)
                );
                HarnessError::Step { step, what: e.to_string(), invariant }
            }
        }
    }

    fn rounding(step: usize, e: RoundingError) -> Self {
        let invariant = !matches!(e, RoundingError::NotAPath | RoundingError::MassMismatch);
        HarnessError::Step { step, what: e.to_string(), invariant }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Bregman-projection fractional algorithm only.
    Fractional,
    /// Fractional algorithm, discretization and superfluous-request filter.
    BarelyFractional,
    /// As above, followed by rounding and one sampled member.
    #[default]
    BarelyRandom,
    /// General metric: embedding first, costs measured in the input metric.
    EndToEnd,
    /// Barely random, reporting the best member in hindsight.
    Advice,
}

impl Mode {
    pub fn discretizes(self) -> bool {
        self != Mode::Fractional
    }

    pub fn rounds(self) -> bool {
        matches!(self, Mode::BarelyRandom | Mode::EndToEnd | Mode::Advice)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fractional => "fractional",
            Mode::BarelyFractional => "barely-fractional",
            Mode::BarelyRandom => "barely-random",
            Mode::EndToEnd => "end-to-end",
            Mode::Advice => "advice",
        }
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| HarnessError::Config(format!("unknown mode {s}")))
    }
}

/// Where the metric comes from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceSpec {
    /// `n` points at pairwise distance 2 (a one-level star).
    Uniform { n: usize },
    /// Complete HST with the given branching per level.
    Hst { branching: Vec<usize>, top: i64 },
    /// One far point and `k` clustered points; `far` is the top edge weight.
    FarPoint {
        #[serde(default = "default_far")]
        far: i64,
    },
    /// Random integral metric on `n` points, embedded before the run.
    RandomMetric { n: usize, max_len: u64 },
    MetricFile { path: String },
    /// Weighted tree JSON; validated as a τ-HST with the configured τ.
    TreeFile { path: String },
}

fn default_far() -> i64 {
    10
}

/// How requests are produced.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum GeneratorSpec {
    /// Independent uniformly random points.
    Uniform,
    /// Cycles through `points` (default: the first `k + 1`).
    RoundRobin {
        #[serde(default)]
        points: Option<Vec<usize>>,
    },
    /// Cycles through the clustered points of a far-point instance.
    FarPoint,
    /// Requests the point where the algorithm currently holds the least mass.
    Lazy,
    File { path: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub instance: InstanceSpec,
    pub generator: GeneratorSpec,
    pub k: usize,
    /// Defaults to `2k² + k`.
    pub m: Option<usize>,
    /// Defaults to 16 for embeddings and 10 for native trees.
    pub tau: Option<i64>,
    /// Defaults to `1/(2m)`.
    pub eps_step: Option<f64>,
    pub seed: u64,
    pub steps: usize,
    /// Initial configuration as point indices.
    pub initial: Option<Vec<usize>>,
    pub audit: bool,
    /// OPT is computed only for traces up to this length.
    pub opt_limit: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            mode: Mode::BarelyRandom,
            instance: InstanceSpec::Uniform { n: 4 },
            generator: GeneratorSpec::Lazy,
            k: 3,
            m: None,
            tau: None,
            eps_step: None,
            seed: 0,
            steps: 100,
            initial: None,
            audit: false,
            opt_limit: 2000,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json_str(&read(path)?)
    }

    pub fn m(&self) -> usize {
        self.m.unwrap_or_else(|| min_granularity(self.k))
    }

    pub fn tau(&self) -> i64 {
        self.tau.unwrap_or(if self.embeds() { 16 } else { 10 })
    }

    pub fn eps_step(&self) -> f64 {
        self.eps_step.unwrap_or(1.0 / (2.0 * self.m() as f64))
    }

    fn embeds(&self) -> bool {
        matches!(self.instance, InstanceSpec::RandomMetric { .. } | InstanceSpec::MetricFile { .. })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |s: String| Err(HarnessError::Config(s));
        if self.k == 0 {
            return bad("k must be positive".into());
        }
        if self.tau() < 10 {
            return bad(format!("tau {} below 10", self.tau()));
        }
        if self.mode.discretizes() && self.m() < min_granularity(self.k) {
            return bad(format!("m = {} below 2k²+k = {}", self.m(), min_granularity(self.k)));
        }
        if self.embeds() != (self.mode == Mode::EndToEnd) {
            return bad(format!("mode {} does not match instance {:?}", self.mode.name(), self.instance));
        }
        if !(self.eps_step() > 0.0 && self.eps_step() < 1.0) {
            return bad("eps_step must lie in (0, 1)".into());
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

fn parse_json(path: &Path) -> Result<serde_json::Value, HarnessError> {
    serde_json::from_str(&read(path)?).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// A concrete metric on points `0..n`, with the tree the algorithm runs on.
#[derive(Clone, Debug)]
pub struct Instance {
    pub hst: TauHst,
    /// Input metric when the tree is an embedding.
    pub metric: Option<MetricSpace>,
    /// Point index → tree leaf.
    pub leaf_of: Vec<usize>,
    point_of: HashMap<usize, usize>,
    /// Far point and clustered points of a far-point instance.
    pub far: Option<(usize, Vec<usize>)>,
    pub embed_bits: u64,
}

impl Instance {
    /// Builds the instance; embeddings draw from `bits`.
    pub fn build(cfg: &ExperimentConfig, bits: &mut BitStream) -> Result<Self, HarnessError> {
        let tau = int(cfg.tau() as i128);
        let native = |hst: TauHst| {
            let leaves = hst.tree().leaves().to_vec();
            Self::new(hst, None, leaves, 0)
        };
        let from_metric = |metric: MetricSpace, bits: &mut BitStream| {
            let e = frt_embed(&metric, tau, bits);
            Self::new(e.hst, Some(metric), e.leaf_of, e.bits_used)
        };
        let inst = match &cfg.instance {
            InstanceSpec::Uniform { n } => native(hst(&[*n], int(1), tau)?),
            InstanceSpec::Hst { branching, top } => native(hst(branching, int(*top as i128), tau)?),
            InstanceSpec::FarPoint { far } => {
                let w = int(*far as i128);
                let mut parent = vec![None, Some(0), Some(0), Some(1)];
                let mut weight = vec![Rat::zero(), w, w, w / tau];
                for _ in 0..cfg.k {
                    parent.push(Some(2));
                    weight.push(w / tau);
                }
                let mut inst = native(validate_hst(WeightedTree::new(parent, weight)?, tau)?);
                let far = inst.point_of[&3];
                let near = (0..inst.n_points()).filter(|&p| p != far).collect();
                inst.far = Some((far, near));
                inst
            }
            InstanceSpec::RandomMetric { n, max_len } => {
                let mut ib = BitStream::new(cfg.seed ^ INSTANCE_STREAM);
                from_metric(MetricSpace::random(*n, *max_len, &mut ib), bits)
            }
            InstanceSpec::MetricFile { path } => from_metric(MetricSpace::from_json(&parse_json(Path::new(path))?)?, bits),
            InstanceSpec::TreeFile { path } => native(validate_hst(WeightedTree::from_json(&parse_json(Path::new(path))?)?, tau)?),
        };
        Ok(inst)
    }

    fn new(hst: TauHst, metric: Option<MetricSpace>, leaf_of: Vec<usize>, embed_bits: u64) -> Self {
        let point_of = leaf_of.iter().enumerate().map(|(p, &l)| (l, p)).collect();
        Self { hst, metric, leaf_of, point_of, far: None, embed_bits }
    }

    pub fn tree(&self) -> &WeightedTree {
        self.hst.tree()
    }

    pub fn n_points(&self) -> usize {
        self.leaf_of.len()
    }

    pub fn point_of(&self, leaf: usize) -> usize {
        self.point_of[&leaf]
    }

    /// Default initial configuration: the far point plus `k − 1` clustered
    /// points on far-point instances, the first `k` points otherwise.
    pub fn default_initial(&self, k: usize) -> Vec<usize> {
        match &self.far {
            Some((far, near)) => std::iter::once(*far).chain(near.iter().copied().take(k - 1)).collect(),
            None => (0..k).collect(),
        }
    }
}

impl Metric for Instance {
    fn points(&self) -> Vec<usize> {
        (0..self.n_points()).collect()
    }

    fn d(&self, a: usize, b: usize) -> Rat {
        match &self.metric {
            Some(m) => int(m.dist(a, b) as i128),
            None => self.tree().node_distance(self.leaf_of[a], self.leaf_of[b]),
        }
    }
}

/// One ledger row; the field order is the column order of `ledger.csv`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LedgerRow {
    pub step: usize,
    pub request: usize,
    pub forwarded: bool,
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
    /// Movement of the barely fractional output after filtering.
    #[serde(with = "serde_rat")]
    pub output: Rat,
    /// Average member movement in the instance metric.
    #[serde(with = "serde_rat")]
    pub ensemble: Rat,
    /// Movement of the sampled member.
    #[serde(with = "serde_rat")]
    pub sampled: Rat,
    #[serde(with = "serde_rat")]
    pub cum_fractional: Rat,
    #[serde(with = "serde_rat")]
    pub cum_z1: Rat,
    #[serde(with = "serde_rat")]
    pub cum_z2: Rat,
    #[serde(with = "serde_rat")]
    pub cum_z3: Rat,
    #[serde(with = "serde_rat")]
    pub cum_z4: Rat,
    #[serde(with = "serde_rat")]
    pub cum_deferred: Rat,
    #[serde(with = "serde_rat")]
    pub cum_output: Rat,
    #[serde(with = "serde_rat")]
    pub cum_ensemble: Rat,
    #[serde(with = "serde_rat")]
    pub cum_sampled: Rat,
    #[serde(with = "serde_rat")]
    pub cum_advised: Rat,
    pub bits: u64,
}

/// Cumulative costs of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Totals {
    #[serde(flatten)]
    pub stages: StageCosts,
    #[serde(with = "serde_rat")]
    pub output: Rat,
    #[serde(with = "serde_rat")]
    pub ensemble: Rat,
    #[serde(with = "serde_rat")]
    pub sampled: Rat,
    #[serde(with = "serde_rat")]
    pub advised: Rat,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BitReport {
    pub embedding: u64,
    pub sampling: u64,
    /// Stream position once initialization is over.
    pub after_init: u64,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub seed: u64,
    pub k: usize,
    pub m: usize,
    pub tau: i64,
    pub points: usize,
    pub steps: usize,
    pub forwarded: usize,
    pub dropped: usize,
    pub totals: Totals,
    /// Cost the ratio is taken of: fractional, output, ensemble or advised, by mode.
    #[serde(with = "serde_rat")]
    pub cost: Rat,
    pub opt: Option<String>,
    pub ratio: Option<f64>,
    pub sampled_member: Option<usize>,
    pub bits: BitReport,
    pub violations: usize,
    pub violation_log: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trace: RequestTrace,
    pub ledger: Vec<LedgerRow>,
    pub summary: Summary,
}

impl RunOutput {
    /// Writes `ledger.csv` (or `ledger.json`), `summary.json` and `trace.json` into `dir`.
    pub fn write(&self, dir: &Path, format: Format) -> Result<(), HarnessError> {
        let io = |e: std::io::Error| HarnessError::Io(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_path(dir.join("ledger.csv")).map_err(|e| HarnessError::Io(e.to_string()))?;
                for row in &self.ledger {
                    w.serialize(row).map_err(|e| HarnessError::Io(e.to_string()))?;
                }
                w.flush().map_err(io)?;
            }
            Format::Json => fs::write(dir.join("ledger.json"), to_pretty(&self.ledger)).map_err(io)?,
        }
        fs::write(dir.join("summary.json"), to_pretty(&self.summary)).map_err(io)?;
        fs::write(dir.join("trace.json"), to_pretty(&self.trace)).map_err(io)?;
        Ok(())
    }
}

fn to_pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(HarnessError::Config(format!("unknown format {s}"))),
        }
    }
}

enum Engine {
    Fractional(FractionalState),
    Discrete(Box<Filtered<Pipeline<FractionalState>>>),
}

impl Engine {
    fn current(&self) -> &MassVector {
        match self {
            Engine::Fractional(f) => f.current(),
            Engine::Discrete(d) => d.current(),
        }
    }
}

enum Source {
    Fixed(Vec<usize>),
    Uniform(BitStream),
    Cycle(Vec<usize>),
    Lazy,
}

/// Requests before the run: the trace for non-adaptive generators, or `None` for the lazy adversary.
fn prepare(cfg: &ExperimentConfig, inst: &Instance) -> Result<(Vec<usize>, Source, usize), HarnessError> {
    let n = inst.n_points();
    let check = |pts: &[usize], what: &str| match pts.iter().find(|&&p| p >= n) {
        Some(p) => Err(HarnessError::Config(format!("{what} point {p} out of range (n = {n})"))),
        None => Ok(()),
    };
    let mut initial = cfg.initial.clone();
    let (source, steps) = match &cfg.generator {
        GeneratorSpec::Uniform => (Source::Uniform(BitStream::new(cfg.seed ^ ADVERSARY_STREAM)), cfg.steps),
        GeneratorSpec::RoundRobin { points } => {
            let pts = points.clone().unwrap_or_else(|| (0..(cfg.k + 1).min(n)).collect());
            check(&pts, "round-robin")?;
            if pts.is_empty() {
                return Err(HarnessError::Config("round-robin needs at least one point".into()));
            }
            (Source::Cycle(pts), cfg.steps)
        }
        GeneratorSpec::FarPoint => {
            let (_, near) = inst.far.clone().ok_or_else(|| HarnessError::UnknownGenerator("far-point needs a far-point instance".into()))?;
            (Source::Cycle(near), cfg.steps)
        }
        GeneratorSpec::Lazy => (Source::Lazy, cfg.steps),
        GeneratorSpec::File { path } => {
            let t: RequestTrace = serde_json::from_value(parse_json(Path::new(path))?).map_err(|e| HarnessError::Io(format!("{path}: {e}")))?;
            check(&t.requests, "trace")?;
            if initial.is_none() && !t.initial.is_empty() {
                initial = Some(t.initial.clone());
            }
            let len = t.requests.len();
            (Source::Fixed(t.requests), len)
        }
    };
    let initial = initial.unwrap_or_else(|| inst.default_initial(cfg.k));
    check(&initial, "initial")?;
    if initial.len() != cfg.k {
        return Err(HarnessError::Config(format!("initial configuration has {} points, k = {}", initial.len(), cfg.k)));
    }
    if cfg.k > n {
        return Err(HarnessError::Config(format!("k = {} exceeds {n} points", cfg.k)));
    }
    Ok((initial, source, steps))
}

/// Produces the request trace of `cfg`; the lazy adversary runs the configured algorithm.
pub fn generate(cfg: &ExperimentConfig) -> Result<RequestTrace, HarnessError> {
    cfg.validate()?;
    if cfg.generator == GeneratorSpec::Lazy {
        return Ok(run(cfg)?.trace);
    }
    let mut bits = BitStream::new(cfg.seed);
    let inst = Instance::build(cfg, &mut bits)?;
    let (initial, mut source, steps) = prepare(cfg, &inst)?;
    let requests = (0..steps).map(|t| next_request(&mut source, t, &inst, None)).collect();
    Ok(RequestTrace::new(initial, requests))
}

fn next_request(source: &mut Source, t: usize, inst: &Instance, current: Option<&MassVector>) -> usize {
    match source {
        Source::Fixed(r) => r[t],
        Source::Uniform(b) => b.below(inst.n_points() as u64) as usize,
        Source::Cycle(pts) => pts[t % pts.len()],
        Source::Lazy => {
            let z = current.expect("lazy adversary needs the algorithm state");
            (0..inst.n_points()).min_by(|&a, &b| z.value(inst.leaf_of[a]).cmp(&z.value(inst.leaf_of[b])).then(a.cmp(&b))).expect("points")
        }
    }
}

/// Exact offline optimum of a trace on an instance, or `None` beyond `limit` requests.
pub fn optimum(inst: &Instance, trace: &RequestTrace, limit: usize) -> Result<Option<Rat>, HarnessError> {
    if trace.len() > limit {
        return Ok(None);
    }
    Ok(Some(offline::opt_flow(inst, trace)?))
}

/// Runs the configured pipeline end to end.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    cfg.validate()?;
    let (k, m) = (cfg.k, cfg.m());
    let mut bits = BitStream::new(cfg.seed);
    let inst = Instance::build(cfg, &mut bits)?;
    let (initial, mut source, steps) = prepare(cfg, &inst)?;
    let tree = inst.tree().clone();
    let c0: Vec<usize> = initial.iter().map(|&p| inst.leaf_of[p]).collect();
    let init_err = |e: FractionalError| HarnessError::Step { step: 0, what: e.to_string(), invariant: false };
    let frac = FractionalState::with_eps(&inst.hst, k, &c0, cfg.eps_step()).map_err(init_err)?;
    let mut engine = if cfg.mode.discretizes() {
        let p = Pipeline::new(frac, m).map_err(|e| HarnessError::discretize(0, e))?;
        Engine::Discrete(Box::new(Filtered::new(p)))
    } else {
        Engine::Fractional(frac)
    };
    let before_sample = bits.used();
    let mut rounding = cfg.mode.rounds().then(|| HstRounding::new(&tree, &c0, m));
    let sampled = cfg.mode.rounds().then(|| rounding::sample_index(m, &mut bits));
    let bit_report = |bits: &BitStream| BitReport {
        embedding: inst.embed_bits,
        sampling: bits.used() - before_sample,
        after_init: 0,
        total: bits.used(),
    };
    let after_init = bits.used();

    let members0: Vec<Vec<usize>> = vec![initial.clone(); if cfg.mode.rounds() { m } else { 0 }];
    let mut members = members0;
    let mut member_cost = vec![Rat::zero(); members.len()];
    let mut totals = Totals { stages: StageCosts::zero(), output: Rat::zero(), ensemble: Rat::zero(), sampled: Rat::zero(), advised: Rat::zero() };
    let mut ledger = Vec::with_capacity(steps);
    let mut requests = Vec::with_capacity(steps);
    let mut violations = Vec::new();
    let mut forwarded = 0;

    for t in 0..steps {
        let step = t + 1;
        let p = next_request(&mut source, t, &inst, Some(engine.current()));
        requests.push(p);
        let leaf = inst.leaf_of[p];
        let mut row_stage = StageCosts::zero();
        let mut output = Rat::zero();
        let mut fwd = true;
        match &mut engine {
            Engine::Fractional(f) => {
                let z = f.serve(leaf).map_err(|e| HarnessError::fractional(step, e))?;
                row_stage.fractional = f.last_step().expect("served").cost;
                output = row_stage.fractional;
                if z.value(leaf) < int(1) {
                    violations.push(format!("step {step}: request {p} not served"));
                }
                if cfg.audit {
                    audit_fractional(f, step, cfg.seed, &mut violations);
                }
            }
            Engine::Discrete(d) => {
                let prev = d.current().clone();
                let y = d.serve(leaf).map_err(|e| HarnessError::discretize(step, e))?;
                fwd = d.last_forwarded();
                if fwd {
                    forwarded += 1;
                    row_stage = d.inner().last().expect("forwarded").cost.clone();
                    output = measure::ot_distance(&tree, &prev, &y).map_err(|e| HarnessError::Step { step, what: e.to_string(), invariant: true })?;
                    if cfg.audit {
                        audit_fractional(d.inner().source(), step, cfg.seed, &mut violations);
                    }
                }
                if y.value(leaf) < int(1) {
                    violations.push(format!("step {step}: request {p} not served by the barely fractional output"));
                }
                if let Some(r) = rounding.as_mut() {
                    r.step(&y).map_err(|e| HarnessError::rounding(step, e))?;
                }
            }
        }

        let mut ens = Rat::zero();
        let mut samp = Rat::zero();
        if let Some(r) = &rounding {
            for (i, c) in r.ensemble().members().iter().enumerate() {
                let now: Vec<usize> = c.iter().map(|&l| inst.point_of(l)).collect();
                if !now.contains(&p) {
                    violations.push(format!("step {step}: member {i} misses request {p}"));
                }
                let d = matching_distance(&inst, &members[i], &now);
                member_cost[i] += d;
                ens += d;
                if Some(i) == sampled {
                    samp = d;
                }
                members[i] = now;
            }
            ens /= int(m as i128);
        }

        add_stages(&mut totals.stages, &row_stage);
        totals.output += output;
        totals.ensemble += ens;
        totals.sampled += samp;
        totals.advised = member_cost.iter().copied().min().unwrap_or_else(Rat::zero);
        if cfg.audit {
            if let Some(what) = totals.stages.chain_violation().filter(|_| cfg.mode.discretizes()) {
                violations.push(format!("step {step}: {what}"));
            }
            if !totals.advised.is_zero() && totals.advised > totals.ensemble {
                violations.push(format!("step {step}: advised cost above the average"));
            }
        }
        ledger.push(LedgerRow {
            step,
            request: p,
            forwarded: fwd,
            fractional: row_stage.fractional,
            z1: row_stage.z1,
            z2: row_stage.z2,
            z3: row_stage.z3,
            z4: row_stage.z4,
            deferred: row_stage.deferred,
            output,
            ensemble: ens,
            sampled: samp,
            cum_fractional: totals.stages.fractional,
            cum_z1: totals.stages.z1,
            cum_z2: totals.stages.z2,
            cum_z3: totals.stages.z3,
            cum_z4: totals.stages.z4,
            cum_deferred: totals.stages.deferred,
            cum_output: totals.output,
            cum_ensemble: totals.ensemble,
            cum_sampled: totals.sampled,
            cum_advised: totals.advised,
            bits: bits.used(),
        });
    }

    let trace = RequestTrace::new(initial, requests);
    let opt = optimum(&inst, &trace, cfg.opt_limit)?;
    if let Some(o) = opt {
        for (i, c) in member_cost.iter().enumerate() {
            if *c < o {
                violations.push(format!("member {i} cost {} below OPT {}", rat::fmt(c), rat::fmt(&o)));
            }
        }
    }
    let cost = match cfg.mode {
        Mode::Fractional => totals.stages.fractional,
        Mode::BarelyFractional => totals.output,
        Mode::BarelyRandom | Mode::EndToEnd => totals.ensemble,
        Mode::Advice => totals.advised,
    };
    let ratio = opt.filter(|o| !o.is_zero()).map(|o| rat::to_f64(&(cost / o)));
    let mut bit_rep = bit_report(&bits);
    bit_rep.after_init = after_init;
    let dropped = if cfg.mode.discretizes() { steps - forwarded } else { 0 };
    let summary = Summary {
        mode: cfg.mode,
        seed: cfg.seed,
        k,
        m,
        tau: cfg.tau(),
        points: inst.n_points(),
        steps,
        forwarded: if cfg.mode.discretizes() { forwarded } else { steps },
        dropped,
        totals,
        cost,
        opt: opt.map(|o| rat::fmt(&o)),
        ratio,
        sampled_member: sampled,
        bits: bit_rep,
        violations: violations.len(),
        violation_log: violations,
    };
    Ok(RunOutput { trace, ledger, summary })
}

fn add_stages(a: &mut StageCosts, b: &StageCosts) {
    a.fractional += b.fractional;
    a.z1 += b.z1;
    a.z2 += b.z2;
    a.z3 += b.z3;
    a.z4 += b.z4;
    a.deferred += b.deferred;
}

fn audit_fractional(f: &FractionalState, step: usize, seed: u64, violations: &mut Vec<String>) {
    if let Some(r) = f.audit_last(AUDIT_PROBES, seed.wrapping_add(step as u64)) {
        if !r.passed() {
            violations.push(format!("step {step}: projection audit failed ({r:?})"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(mode: Mode, instance: InstanceSpec, generator: GeneratorSpec, k: usize, steps: usize) -> ExperimentConfig {
        ExperimentConfig { mode, instance, generator, k, steps, ..Default::default() }
    }

    #[test]
    fn config_json_round_trip() {
        let c = ExperimentConfig::from_json_str(r#"{"mode":"advice","instance":{"kind":"hst","branching":[2,2],"top":10},"generator":{"name":"round-robin"},"k":2}"#).unwrap();
        assert_eq!(c.mode, Mode::Advice);
        assert_eq!(c.m(), 10);
        assert_eq!(c.tau(), 10);
        let again = ExperimentConfig::from_json_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
        assert!(ExperimentConfig::from_json_str(r#"{"generator":{"name":"zigzag"}}"#).is_err());
        assert_eq!("end-to-end".parse::<Mode>().unwrap(), Mode::EndToEnd);
    }

    #[test]
    fn validation() {
        let mut c = ExperimentConfig { m: Some(5), ..Default::default() };
        assert!(c.validate().is_err());
        c.m = None;
        c.tau = Some(5);
        assert!(c.validate().is_err());
        c.tau = None;
        c.mode = Mode::EndToEnd;
        assert!(c.validate().is_err());
        c.instance = InstanceSpec::RandomMetric { n: 5, max_len: 4 };
        assert!(c.validate().is_ok());
        assert_eq!(c.tau(), 16);
    }

    #[test]
    fn far_point_trace_avoids_far_point() {
        let c = cfg(Mode::BarelyRandom, InstanceSpec::FarPoint { far: 10 }, GeneratorSpec::FarPoint, 2, 10);
        let t = generate(&c).unwrap();
        let inst = Instance::build(&c, &mut BitStream::new(0)).unwrap();
        let (far, near) = inst.far.clone().unwrap();
        assert_eq!(near.len(), 2);
        assert!(t.initial.contains(&far));
        assert!(t.requests.iter().all(|&r| r != far));
    }

    #[test]
    fn round_robin_opt_is_one_relocation() {
        let c = cfg(Mode::BarelyRandom, InstanceSpec::Hst { branching: vec![2, 2], top: 10 }, GeneratorSpec::RoundRobin { points: Some(vec![0, 1]) }, 2, 12);
        let t = generate(&c).unwrap();
        let inst = Instance::build(&c, &mut BitStream::new(0)).unwrap();
        assert_eq!(offline::opt_dp(&inst, &t).unwrap(), int(0));
        let c = ExperimentConfig { initial: Some(vec![0, 2]), ..c };
        let t = generate(&c).unwrap();
        assert_eq!(offline::opt_dp(&inst, &t).unwrap(), int(22));
    }

    #[test]
    fn uniform_generator_is_deterministic() {
        let c = cfg(Mode::BarelyRandom, InstanceSpec::Uniform { n: 6 }, GeneratorSpec::Uniform, 2, 40);
        let a = serde_json::to_string(&generate(&c).unwrap()).unwrap();
        let b = serde_json::to_string(&generate(&c).unwrap()).unwrap();
        assert_eq!(a, b);
        let other = generate(&ExperimentConfig { seed: 1, ..c }).unwrap();
        assert_ne!(serde_json::to_string(&other).unwrap(), a);
    }

    #[test]
    fn alternating_two_points_end_to_end() {
        let c = cfg(Mode::BarelyRandom, InstanceSpec::Uniform { n: 2 }, GeneratorSpec::RoundRobin { points: Some(vec![1, 0]) }, 1, 6);
        let out = run(&c).unwrap();
        let s = &out.summary;
        assert_eq!(s.violations, 0, "{:?}", s.violation_log);
        assert_eq!(s.m, 3);
        assert_eq!(s.bits.sampling, 2);
        assert_eq!(s.bits.total, s.bits.after_init);
        assert!(s.totals.ensemble <= s.totals.stages.fractional * int(8));
        assert_eq!(s.opt.as_deref(), Some("12"));
        let last = out.ledger.last().unwrap();
        assert_eq!(last.cum_ensemble, s.totals.ensemble);
        let sum = out.ledger.iter().fold(Rat::zero(), |a, r| a + r.ensemble);
        assert_eq!(sum, s.totals.ensemble);
    }

    #[test]
    fn outputs_written() {
        let c = cfg(Mode::BarelyFractional, InstanceSpec::Uniform { n: 3 }, GeneratorSpec::Lazy, 1, 4);
        let out = run(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        out.write(dir.path(), Format::Csv).unwrap();
        let csv = fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
        let header = csv.lines().next().unwrap();
        assert!(header.starts_with("step,request,forwarded,fractional,z1,z2,z3,z4,deferred,output,ensemble,sampled,cum_fractional"));
        assert_eq!(csv.lines().count(), 5);
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["violations"], 0);
        out.write(dir.path(), Format::Json).unwrap();
        assert!(dir.path().join("ledger.json").exists());
    }
}
