//! The aggregated model: replicas with random success probability, their
//! normalized sums, extremal point processes, discrete maxima and the
//! conditional exceedance sampler.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::rng::{tags, RandomStream};
use crate::samplers::{sample_innovation, sample_q, InnovationLaw};
use crate::special::validate_times;
use crate::theory::OpenInterval;

/// Default cap on simulated Bernoulli steps when `KARLIN_BUDGET` is unset.
pub const DEFAULT_STEP_BUDGET: u128 = 1_000_000_000_000;

/// Step budget from the `KARLIN_BUDGET` environment variable, or the default.
pub fn step_budget() -> u128 {
    std::env::var("KARLIN_BUDGET")
        .ok()
        .and_then(|s| s.trim().replace('_', "").parse::<f64>().ok())
        .filter(|b| *b >= 0.0)
        .map(|b| b as u128)
        .unwrap_or(DEFAULT_STEP_BUDGET)
}

/// Parameters of the aggregated model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub rho: f64,
    pub c_x: f64,
    pub innovation: InnovationLaw,
}

impl ModelParams {
    /// Builds the parameters, reading `alpha` and `c_x` off the innovation law.
    pub fn new(alpha_prime: f64, rho: f64, innovation: InnovationLaw) -> Result<Self> {
        let p = Self {
            alpha: innovation.tail_index(),
            alpha_prime,
            rho,
            c_x: innovation.scale_constant(),
            innovation,
        };
        p.validate()?;
        Ok(p)
    }

    /// Finite-variance preset `alpha = alpha' = 2`, `rho = 2H`, so `beta = 2H`.
    pub fn enriquez(hurst: f64, innovation: InnovationLaw) -> Result<Self> {
        if !innovation.has_finite_variance() {
            return Err(invalid("the finite-variance preset needs Rademacher or Gaussian innovations"));
        }
        Self::new(2.0, 2.0 * hurst, innovation)
    }

    pub fn gamma(&self) -> f64 {
        self.alpha / self.alpha_prime
    }

    pub fn beta(&self) -> f64 {
        self.gamma() - 1.0 + self.rho
    }

    pub fn validate(&self) -> Result<()> {
        self.innovation.validate()?;
        if !(self.alpha > 0.0 && self.alpha_prime > 0.0 && self.c_x > 0.0) {
            return Err(invalid("alpha, alpha_prime and c_x must be positive"));
        }
        if !(self.rho < 1.0) {
            return Err(invalid(format!("rho must be below 1, got {}", self.rho)));
        }
        let beta = self.beta();
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!(
                "beta = alpha/alpha' - 1 + rho must lie in (0, 1), got {beta}"
            )));
        }
        let (a, c) = (self.innovation.tail_index(), self.innovation.scale_constant());
        if self.innovation.has_finite_variance() {
            if self.alpha != 2.0 || self.c_x != c {
                return Err(invalid("finite-variance innovations need alpha = 2 and c_x = E X^2"));
            }
        } else if self.alpha != a || self.c_x != c {
            return Err(invalid("alpha and c_x must match the Pareto innovation law"));
        }
        Ok(())
    }
}

/// How success parities along a replica path are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMethod {
    /// Success positions by geometric gaps; cost O(nq) per replica.
    GeometricGaps,
    /// Parity of each Binomial increment between grid points drawn directly
    /// from `(1 - (1-2q)^m) / 2`; cost O(d) per replica.
    #[default]
    ParityIncrements,
}

/// Sizes, grid and seed of one simulation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub n: u64,
    pub m_n: u64,
    pub reps: usize,
    pub times: Vec<f64>,
    pub seed: u64,
    pub epsilon: f64,
    #[serde(default)]
    pub path: PathMethod,
}

/// Hypotheses of the limit theorems that a plan does not meet.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanWarning {
    /// `m_n L(n) / n^{1-rho}` is below 1.
    SlowReplicaGrowth { ratio: f64 },
    /// For `alpha > 2`, `m_n` grows at least like `n^{2 beta / (alpha - 2)}`.
    FastReplicaGrowth { kappa: f64, bound: f64 },
}

impl fmt::Display for PlanWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::SlowReplicaGrowth { ratio } => {
                write!(f, "m_n (1-rho) / n^(1-rho) = {ratio:.4} < 1: too few replicas for the growth condition")
            }
            Self::FastReplicaGrowth { kappa, bound } => {
                write!(f, "m_n ~ n^{kappa:.4} but the point-process limit needs an exponent below {bound:.4}")
            }
        }
    }
}

impl SimulationPlan {
    /// Checks hard constraints and returns warnings for unmet asymptotic hypotheses.
    pub fn validate(&self, params: &ModelParams) -> Result<Vec<PlanWarning>> {
        if self.n == 0 || self.m_n == 0 || self.reps == 0 {
            return Err(invalid("n, m_n and reps must be at least 1"));
        }
        validate_times(&self.times)?;
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        let mut warnings = vec![];
        let nf = self.n as f64;
        let ratio = self.m_n as f64 * (1.0 - params.rho) / nf.powf(1.0 - params.rho);
        if ratio < 1.0 {
            warnings.push(PlanWarning::SlowReplicaGrowth { ratio });
        }
        if params.alpha > 2.0 && self.n > 1 {
            let kappa = (self.m_n as f64).ln() / nf.ln();
            let bound = 2.0 * params.beta() / (params.alpha - 2.0);
            if kappa >= bound {
                warnings.push(PlanWarning::FastReplicaGrowth { kappa, bound });
            }
        }
        Ok(warnings)
    }

    /// Nominal Bernoulli steps `n m_n R` charged against the budget.
    pub fn nominal_steps(&self) -> u128 {
        self.n as u128 * self.m_n as u128 * self.reps as u128
    }

    fn check_budget(&self, budget: u128) -> Result<()> {
        let requested = self.nominal_steps();
        if requested > budget {
            return Err(Error::Budget { requested, budget });
        }
        Ok(())
    }
}

/// `ceil(scale * n^kappa)`.
pub fn m_n_power_rule(n: u64, scale: f64, kappa: f64) -> u64 {
    (scale * (n as f64).powf(kappa)).ceil().max(1.0) as u64
}

/// Normalization `a_n = (c_x Gamma(1-beta)/beta n^beta m_n (1-rho))^{1/alpha}`.
pub fn norm_const(params: &ModelParams, n: u64, m_n: u64) -> f64 {
    let beta = params.beta();
    (params.c_x * gamma(1.0 - beta) / beta * (n as f64).powf(beta) * m_n as f64 * (1.0 - params.rho))
        .powf(1.0 / params.alpha)
}

/// Grid indices `floor(n t_k)`.
pub fn grid_indices(n: u64, times: &[f64]) -> Vec<u64> {
    times.iter().map(|&t| ((n as f64 * t).floor() as u64).min(n)).collect()
}

/// Positions `1 <= j <= n` of the successes of a Bernoulli(q) sequence,
/// generated by geometric gaps.
pub struct SuccessPositions<'a> {
    n: u64,
    pos: u64,
    log_fail: f64,
    stream: &'a mut RandomStream,
}

impl<'a> SuccessPositions<'a> {
    pub fn new(q: f64, n: u64, stream: &'a mut RandomStream) -> Self {
        Self { n, pos: 0, log_fail: (-q).ln_1p(), stream }
    }
}

impl Iterator for SuccessPositions<'_> {
    type Item = u64;

    #[inline]
    fn next(&mut self) -> Option<u64> {
        if self.pos >= self.n {
            return None;
        }
        let gap = (self.stream.uniform().ln() / self.log_fail).ceil();
        // the float-to-int cast saturates for huge gaps
        let gap = (gap as u64).max(1);
        self.pos = self.pos.saturating_add(gap);
        (self.pos <= self.n).then_some(self.pos)
    }
}

/// Number of successes among the first `n` steps, by geometric gaps.
pub fn count_successes(q: f64, n: u64, stream: &mut RandomStream) -> u64 {
    SuccessPositions::new(q, n, stream).count() as u64
}

/// Probability that a Binomial(m, q) count is odd, `(1 - (1-2q)^m) / 2`.
#[inline]
pub fn binomial_odd_prob(q: f64, m: u64) -> f64 {
    if m == 0 {
        return 0.0;
    }
    if q < 0.5 {
        -0.5 * (m as f64 * (-2.0 * q).ln_1p()).exp_m1()
    } else {
        let r = (2.0 * q - 1.0).powf(m as f64);
        0.5 * (1.0 - if m.is_multiple_of(2) { r } else { -r })
    }
}

/// Parity of the success count at each grid index.
pub fn path_parities(q: f64, n: u64, grid: &[u64], method: PathMethod, stream: &mut RandomStream) -> Vec<bool> {
    let mut out = Vec::with_capacity(grid.len());
    match method {
        PathMethod::GeometricGaps => {
            let mut parity = false;
            let mut successes = SuccessPositions::new(q, n, stream).peekable();
            for &k in grid {
                while successes.next_if(|&j| j <= k).is_some() {
                    parity = !parity;
                }
                out.push(parity);
            }
        }
        PathMethod::ParityIncrements => {
            let mut parity = false;
            let mut prev = 0;
            for &k in grid {
                if k > prev {
                    if stream.uniform() < binomial_odd_prob(q, k - prev) {
                        parity = !parity;
                    }
                    prev = k;
                }
                out.push(parity);
            }
        }
    }
    out
}

/// Parity at each grid index from one Bernoulli draw per step.
pub fn naive_path_parities(q: f64, grid: &[u64], stream: &mut RandomStream) -> (Vec<bool>, u64) {
    let mut out = Vec::with_capacity(grid.len());
    let mut count = 0u64;
    let mut j = 0u64;
    for &k in grid {
        while j < k {
            j += 1;
            if stream.uniform() < q {
                count += 1;
            }
        }
        out.push(count % 2 == 1);
    }
    (out, count)
}

/// `S_{floor(n t_k)} = x q^{-1/alpha'} 1{odd number of successes up to floor(n t_k)}`.
pub fn replica_fdd(q: f64, x: f64, alpha_prime: f64, n: u64, times: &[f64], stream: &mut RandomStream) -> Vec<f64> {
    let v = x / q.powf(1.0 / alpha_prime);
    let grid = grid_indices(n, times);
    path_parities(q, n, &grid, PathMethod::GeometricGaps, stream)
        .into_iter()
        .map(|odd| if odd { v } else { 0.0 })
        .collect()
}

/// Success probability and innovation of one replica.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Replica {
    pub q: f64,
    pub x: f64,
}

impl Replica {
    pub fn draw(params: &ModelParams, stream: &mut RandomStream) -> Self {
        let q = sample_q(params.rho, stream).expect("rho validated");
        let x = sample_innovation(&params.innovation, stream);
        Self { q, x }
    }

    /// `x / (a_n q^{1/alpha'})`.
    pub fn scaled(&self, params: &ModelParams, a_n: f64) -> f64 {
        self.x / (a_n * self.q.powf(1.0 / params.alpha_prime))
    }
}

fn replica_stream(root: &RandomStream, sample: u64, replica: u64) -> RandomStream {
    root.derive(sample, tags::SAMPLE).derive(replica, tags::REPLICA)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// One normalized aggregate vector `(S_n(t_k) / a_n)_k` for sample index `s`.
pub fn aggregate_sample(params: &ModelParams, plan: &SimulationPlan, s: u64) -> Vec<f64> {
    let root = RandomStream::new(plan.seed);
    let a_n = norm_const(params, plan.n, plan.m_n);
    let grid = grid_indices(plan.n, &plan.times);
    let mut acc = vec![CompensatedSum::default(); grid.len()];
    for i in 0..plan.m_n {
        let mut st = replica_stream(&root, s, i);
        let r = Replica::draw(params, &mut st);
        let v = r.scaled(params, a_n);
        for (a, odd) in acc.iter_mut().zip(path_parities(r.q, plan.n, &grid, plan.path, &mut st)) {
            if odd {
                a.add(v);
            }
        }
    }
    acc.iter().map(CompensatedSum::value).collect()
}

/// `R` samples of the normalized aggregate on the plan's grid, using the
/// step budget from [`step_budget`].
pub fn aggregate_fdd(params: &ModelParams, plan: &SimulationPlan) -> Result<Vec<Vec<f64>>> {
    aggregate_fdd_with_budget(params, plan, step_budget())
}

pub fn aggregate_fdd_with_budget(params: &ModelParams, plan: &SimulationPlan, budget: u128) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    plan.validate(params)?;
    plan.check_budget(budget)?;
    Ok((0..plan.reps as u64).into_par_iter().map(|s| aggregate_sample(params, plan, s)).collect())
}

/// A point `(value, location)` of a point measure on `(R \ {0}) x [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub value: f64,
    pub location: f64,
}

/// Finite point measure.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointMeasureSample {
    pub points: Vec<Point>,
}

impl PointMeasureSample {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        for p in &points {
            if !(p.value.is_finite() && p.value != 0.0 && (0.0..=1.0).contains(&p.location)) {
                return Err(invalid(format!("invalid point {p:?}")));
            }
        }
        Ok(Self { points })
    }

    /// Largest `|value|`, or 0 without points.
    pub fn max_abs(&self) -> f64 {
        self.points.iter().map(|p| p.value.abs()).fold(0.0, f64::max)
    }

    pub fn count_above(&self, x: f64) -> usize {
        self.points.iter().filter(|p| p.value.abs() > x).count()
    }
}

/// Sources on which the discrete sup-measure can be evaluated.
pub trait SupMeasure {
    /// Largest `|value|` over locations inside `interval`, 0 if there is none.
    fn sup_over(&self, interval: &OpenInterval) -> f64;
}

impl SupMeasure for PointMeasureSample {
    fn sup_over(&self, interval: &OpenInterval) -> f64 {
        self.points.iter().filter(|p| interval.contains(p.location)).map(|p| p.value.abs()).fold(0.0, f64::max)
    }
}

/// Normalized aggregate `sum_i X_i eta_{i,j} / (a_n q_i^{1/alpha'})` at every `j = 1..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseAggregate {
    /// Entry `j - 1` holds the value at step `j`.
    pub values: Vec<f64>,
}

impl DenseAggregate {
    pub fn n(&self) -> u64 {
        self.values.len() as u64
    }

    /// Points `(value, j/n)` with `|value| > epsilon`.
    pub fn points_above(&self, epsilon: f64) -> PointMeasureSample {
        let n = self.values.len() as f64;
        PointMeasureSample {
            points: self
                .values
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > epsilon)
                .map(|(j, &v)| Point { value: v, location: (j + 1) as f64 / n })
                .collect(),
        }
    }
}

impl SupMeasure for DenseAggregate {
    fn sup_over(&self, interval: &OpenInterval) -> f64 {
        let n = self.values.len() as f64;
        // grid points j/n strictly inside (lo, hi)
        let first = ((interval.lo * n).floor() as usize + 1).max(1);
        let last = ((interval.hi * n).ceil() as usize).saturating_sub(1).min(self.values.len());
        if first > last {
            return 0.0;
        }
        self.values[first - 1..last].iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// `M_n(I)`: the largest aggregate magnitude over grid points `j/n` in `I`.
pub fn discrete_sup_measure<S: SupMeasure + ?Sized>(source: &S, interval: &OpenInterval) -> f64 {
    source.sup_over(interval)
}

/// A replica with at least one success and its scaled magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// `X / (a_n q^{1/alpha'})`, signed.
    pub magnitude: f64,
    /// Number of successes up to `n`.
    pub size: u64,
}

/// One repetition of the extremal point process.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalSample {
    pub points: PointMeasureSample,
    /// Replicas with `|magnitude| > epsilon` and at least one success.
    pub clusters: Vec<ClusterSummary>,
}

/// Full path of repetition `s`, together with its large clusters.
pub fn dense_aggregate(params: &ModelParams, plan: &SimulationPlan, s: u64) -> (DenseAggregate, Vec<ClusterSummary>) {
    let root = RandomStream::new(plan.seed);
    let a_n = norm_const(params, plan.n, plan.m_n);
    let mut values = vec![0.0; plan.n as usize];
    let mut clusters = vec![];
    for i in 0..plan.m_n {
        let mut st = replica_stream(&root, s, i);
        let r = Replica::draw(params, &mut st);
        let v = r.scaled(params, a_n);
        let mut size = 0;
        for j in SuccessPositions::new(r.q, plan.n, &mut st) {
            values[(j - 1) as usize] += v;
            size += 1;
        }
        if size > 0 && v.abs() > plan.epsilon {
            clusters.push(ClusterSummary { magnitude: v, size });
        }
    }
    (DenseAggregate { values }, clusters)
}

/// Signed per-success points of repetition `s`; only replicas whose scaled
/// magnitude exceeds epsilon need a path, since every point of a replica
/// has that magnitude.
pub fn signed_points(params: &ModelParams, plan: &SimulationPlan, s: u64) -> ExtremalSample {
    let root = RandomStream::new(plan.seed);
    let a_n = norm_const(params, plan.n, plan.m_n);
    let n = plan.n as f64;
    let mut points = vec![];
    let mut clusters = vec![];
    for i in 0..plan.m_n {
        let mut st = replica_stream(&root, s, i);
        let r = Replica::draw(params, &mut st);
        let v = r.scaled(params, a_n);
        if v.abs() <= plan.epsilon {
            continue;
        }
        let mut size = 0u64;
        for j in SuccessPositions::new(r.q, plan.n, &mut st) {
            size += 1;
            let sign = if size % 2 == 1 { -1.0 } else { 1.0 };
            points.push(Point { value: sign * v, location: j as f64 / n });
        }
        if size > 0 {
            clusters.push(ClusterSummary { magnitude: v, size });
        }
    }
    ExtremalSample { points: PointMeasureSample { points }, clusters }
}

/// Extremal point process per repetition: the aggregated values
/// `(sum_i X_i eta_{i,j} / (a_n q_i^{1/alpha'}), j/n)` when `signed` is false,
/// or the per-success points `((-1)^{tau_{i,j}} X_i / (a_n q_i^{1/alpha'}), j/n)`
/// when true. Only points with `|value| > epsilon` are kept.
pub fn extract_extremal_points(params: &ModelParams, plan: &SimulationPlan, signed: bool) -> Result<Vec<ExtremalSample>> {
    params.validate()?;
    plan.validate(params)?;
    if !signed {
        plan.check_budget(step_budget())?;
    }
    Ok((0..plan.reps as u64)
        .into_par_iter()
        .map(|s| {
            if signed {
                signed_points(params, plan, s)
            } else {
                let (dense, clusters) = dense_aggregate(params, plan, s);
                ExtremalSample { points: dense.points_above(plan.epsilon), clusters }
            }
        })
        .collect())
}

/// `M_n(I_k)` for every repetition, read off the full aggregate path.
pub fn sup_measure_samples(params: &ModelParams, plan: &SimulationPlan, intervals: &[OpenInterval]) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    plan.validate(params)?;
    plan.check_budget(step_budget())?;
    Ok((0..plan.reps as u64)
        .into_par_iter()
        .map(|s| {
            let (dense, _) = dense_aggregate(params, plan, s);
            intervals.iter().map(|iv| discrete_sup_measure(&dense, iv)).collect()
        })
        .collect())
}

/// Draw conditioned on a large, nonempty replica.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDraw {
    pub tau_n: u64,
    pub nq: f64,
    /// `X / (a_n q^{1/alpha'})`, signed.
    pub magnitude: f64,
}

/// Rejection sampler for the event `{|X| / (a_n q^{1/alpha'}) > x, tau_n != 0}`.
///
/// Returns the accepted draw and the number of attempts it took, or a budget
/// error once `max_attempts` draws were rejected.
pub fn conditional_exceedance_sample(
    params: &ModelParams,
    n: u64,
    m_n: u64,
    x: f64,
    stream: &mut RandomStream,
    max_attempts: u64,
) -> Result<(ConditionalDraw, u64)> {
    if !(x > 0.0) {
        return Err(invalid("threshold must be positive"));
    }
    let a_n = norm_const(params, n, m_n);
    for attempt in 1..=max_attempts {
        let r = Replica::draw(params, stream);
        let v = r.scaled(params, a_n);
        if v.abs() <= x {
            continue;
        }
        let tau_n = count_successes(r.q, n, stream);
        if tau_n > 0 {
            return Ok((ConditionalDraw { tau_n, nq: n as f64 * r.q, magnitude: v }, attempt));
        }
    }
    Err(Error::BudgetExhausted { attempts: max_attempts })
}

/// Accepted draws from repeated conditional sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalRun {
    pub draws: Vec<ConditionalDraw>,
    pub attempts: u64,
}

impl ConditionalRun {
    /// Fraction of attempts accepted, with its binomial standard error.
    pub fn acceptance_rate(&self) -> (f64, f64) {
        let p = self.draws.len() as f64 / self.attempts as f64;
        (p, (p * (1.0 - p) / self.attempts as f64).sqrt())
    }
}

/// Collects `accepted` conditional draws, each from its own substream.
pub fn conditional_exceedance_run(
    params: &ModelParams,
    n: u64,
    m_n: u64,
    x: f64,
    seed: u64,
    accepted: usize,
    max_attempts_each: u64,
) -> Result<ConditionalRun> {
    params.validate()?;
    let root = RandomStream::new(seed);
    let results: Vec<(ConditionalDraw, u64)> = (0..accepted as u64)
        .into_par_iter()
        .map(|k| {
            let mut st = root.derive(k, tags::ATTEMPT);
            conditional_exceedance_sample(params, n, m_n, x, &mut st, max_attempts_each)
        })
        .collect::<Result<_>>()?;
    let attempts = results.iter().map(|r| r.1).sum();
    Ok(ConditionalRun { draws: results.into_iter().map(|r| r.0).collect(), attempts })
}
