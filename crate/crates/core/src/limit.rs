//! Direct simulation of the limit objects: the stable series, the Gaussian
//! case, the clustered limit point process and the random sup-measure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Point, PointMeasureSample};
use crate::rng::{tags, RandomStream};
use crate::samplers::{sample_binomial, SibuyaSampler};
use crate::special::{ln_gamma_ratio, validate_times};
use crate::theory::OpenInterval;

/// Largest series length `truncation_level` will return.
pub const TRUNCATION_CAP: u64 = 100_000_000;

/// Clusters drawn by `limit_supmeasure_sample` before giving up.
pub const SUPMEASURE_CLUSTER_CAP: u64 = 100_000;

/// Default bound on `sum_k |theta_k|` used to size the compensated series.
pub const DEFAULT_THETA_NORM: f64 = 4.0;

/// Stability index and memory parameter of the limit process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KarlinParams {
    pub alpha: f64,
    pub beta: f64,
}

impl KarlinParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(invalid(format!("alpha must lie in (0, 2], got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        Ok(())
    }

    fn require_stable(&self) -> Result<()> {
        self.validate()?;
        if self.alpha >= 2.0 {
            return Err(invalid("series operations need alpha < 2"));
        }
        Ok(())
    }
}

/// `sum_{l > L} Gamma(l - c) / Gamma(l)` with `c = 2/alpha`, for `L > c`.
///
/// The sum telescopes to `Gamma(L + 1 - c) / ((c - 1) Gamma(L))`.
pub fn series_tail_variance(alpha: f64, level: u64) -> f64 {
    let c = 2.0 / alpha;
    let l = level as f64;
    ln_gamma_ratio(l, 1.0 - c).exp() / (c - 1.0)
}

/// Smallest `L > lower` at which the decreasing `f` drops below `target`.
fn first_level_below(lower: f64, target: f64, f: impl Fn(u64) -> f64) -> Result<u64> {
    let mut lo = (lower.floor() as u64).max(0);
    if lo as f64 <= lower {
        lo += 1;
    }
    if f(lo) < target {
        return Ok(lo);
    }
    // f(lo) >= target: grow until below, then bisect
    let mut hi = lo.max(1);
    loop {
        hi = hi.saturating_mul(2);
        if f(hi) < target {
            break;
        }
        if hi >= TRUNCATION_CAP {
            return Err(Error::TruncationCap(format!(
                "series length would exceed {TRUNCATION_CAP} terms"
            )));
        }
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if f(mid) < target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if hi > TRUNCATION_CAP {
        return Err(Error::TruncationCap(format!("series length {hi} exceeds {TRUNCATION_CAP}")));
    }
    Ok(hi)
}

/// Smallest `L > 2/alpha` with `sqrt(sum_{l > L} Gamma(l - 2/alpha)/Gamma(l)) < tol`.
pub fn truncation_level(alpha: f64, tol: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(invalid("truncation needs alpha in (0, 2)"));
    }
    if !(tol > 0.0) {
        return Err(invalid("tol must be positive"));
    }
    first_level_below(2.0 / alpha, tol * tol, |l| series_tail_variance(alpha, l))
}

/// Bound on the characteristic-function error of the Gaussian-compensated
/// series of length `level`, for `sum_k |theta_k| <= theta_norm`.
///
/// Conditional on `Gamma_L = g`, the exact remainder and its Gaussian
/// replacement differ in log-CF by at most
/// `A^4 g^{1 - 4/alpha} / (24 (4/alpha - 1))`, and `E Gamma_L^{-p} = Gamma(L - p)/Gamma(L)`.
pub fn compensation_error_bound(alpha: f64, level: u64, theta_norm: f64) -> f64 {
    let p = 4.0 / alpha - 1.0;
    theta_norm.powi(4) * ln_gamma_ratio(level as f64, -p).exp() / (24.0 * p)
}

/// Smallest series length whose compensated CF error bound is below `tol`.
pub fn compensated_level(alpha: f64, tol: f64, theta_norm: f64) -> Result<u64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(invalid("truncation needs alpha in (0, 2)"));
    }
    if !(tol > 0.0 && theta_norm > 0.0) {
        return Err(invalid("tol and theta_norm must be positive"));
    }
    first_level_below(4.0 / alpha - 1.0, tol, |l| compensation_error_bound(alpha, l, theta_norm))
}

/// Treatment of the series terms beyond the truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TailMode {
    /// Drop the tail; the length comes from [`truncation_level`].
    Truncate,
    /// Replace the tail by a Gaussian vector with its conditional covariance;
    /// the length comes from [`compensated_level`].
    GaussianCompensation { theta_norm: f64 },
}

impl Default for TailMode {
    fn default() -> Self {
        Self::GaussianCompensation { theta_norm: DEFAULT_THETA_NORM }
    }
}

/// `2^{beta-3} (s^beta + t^beta - |t-s|^beta)`.
pub fn fbm_cov(beta: f64, s: f64, t: f64) -> f64 {
    2f64.powf(beta - 3.0) * (s.powf(beta) + t.powf(beta) - (t - s).abs().powf(beta))
}

/// Correlation `(s^beta + t^beta - |t-s|^beta) / (2 (s t)^{beta/2})`, free of the scale convention.
pub fn fbm_corr(beta: f64, s: f64, t: f64) -> f64 {
    fbm_cov(beta, s, t) / (fbm_cov(beta, s, s) * fbm_cov(beta, t, t)).sqrt()
}

/// `P(odd count in [0, s] and in [0, t])` for one Sibuya cluster of uniforms.
pub fn parity_indicator_cov(beta: f64, s: f64, t: f64) -> f64 {
    2.0 * fbm_cov(beta, s, t)
}

/// Lower Cholesky factor, adding diagonal jitter up to 1e-12 if needed.
pub fn cholesky_with_jitter(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut last = 0.0;
    for jitter in [0.0, 1e-16, 1e-15, 1e-14, 1e-13, 1e-12] {
        let m = matrix + DMatrix::identity(matrix.nrows(), matrix.ncols()) * jitter;
        if let Some(c) = m.cholesky() {
            return Ok(c.l());
        }
        last = jitter;
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

fn cell_lengths(times: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    times
        .iter()
        .map(|&t| {
            let h = t - prev;
            prev = t;
            h
        })
        .collect()
}

/// Cumulative-count parities at the grid for `count` uniforms on (0, 1),
/// drawing one binomial per cell.
fn cell_parities(count: u64, cells: &[f64], out: &mut [bool], stream: &mut RandomStream) {
    let mut remaining = count;
    let mut remaining_len = 1.0;
    let mut parity = false;
    for (k, &h) in cells.iter().enumerate() {
        let c = if remaining == 0 {
            0
        } else {
            sample_binomial(remaining, (h / remaining_len).min(1.0), stream)
        };
        remaining -= c;
        remaining_len -= h;
        parity ^= c % 2 == 1;
        out[k] = parity;
    }
}

/// Precomputed sampler for the series representation on a fixed grid.
#[derive(Debug, Clone)]
pub struct SeriesSampler {
    params: KarlinParams,
    cells: Vec<f64>,
    level: u64,
    mode: TailMode,
    sibuya: SibuyaSampler,
    tail_factor: Option<DMatrix<f64>>,
}

impl SeriesSampler {
    pub fn new(params: KarlinParams, times: &[f64], tol: f64, mode: TailMode) -> Result<Self> {
        params.require_stable()?;
        validate_times(times)?;
        let (level, tail_factor) = match mode {
            TailMode::Truncate => (truncation_level(params.alpha, tol)?, None),
            TailMode::GaussianCompensation { theta_norm } => {
                let d = times.len();
                let cov = DMatrix::from_fn(d, d, |i, j| parity_indicator_cov(params.beta, times[i], times[j]));
                (compensated_level(params.alpha, tol, theta_norm)?, Some(cholesky_with_jitter(&cov)?))
            }
        };
        Ok(Self {
            params,
            cells: cell_lengths(times),
            level,
            mode,
            sibuya: SibuyaSampler::new(params.beta)?,
            tail_factor,
        })
    }

    /// Number of explicit series terms.
    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn mode(&self) -> TailMode {
        self.mode
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Vec<f64> {
        self.sample_with_sign(stream, 1.0)
    }

    /// As [`Self::sample`] with every sign `epsilon_l` (and the Gaussian tail)
    /// multiplied by `sign`.
    pub fn sample_with_sign(&self, stream: &mut RandomStream, sign: f64) -> Vec<f64> {
        let d = self.cells.len();
        let mut out = vec![0.0; d];
        let mut parities = vec![false; d];
        let mut gamma = 0.0;
        let inv_alpha = -1.0 / self.params.alpha;
        for _ in 0..self.level {
            gamma += stream.exponential();
            let v = sign * stream.sign() * gamma.powf(inv_alpha);
            let q = self.sibuya.sample(stream);
            cell_parities(q, &self.cells, &mut parities, stream);
            for (o, &odd) in out.iter_mut().zip(&parities) {
                if odd {
                    *o += v;
                }
            }
        }
        if let Some(factor) = &self.tail_factor {
            let mut tail = stream.derive(0, tags::TAIL);
            let z = DVector::from_fn(d, |_, _| tail.standard_normal());
            let c = 2.0 / self.params.alpha;
            let scale = (gamma.powf(1.0 - c) / (c - 1.0)).sqrt();
            for (o, g) in out.iter_mut().zip((factor * z).iter()) {
                *o += sign * scale * g;
            }
        }
        out
    }
}

/// Truncated series `sum_{l <= L} epsilon_l Gamma_l^{-1/alpha} 1{odd}` at each time,
/// with `L = truncation_level(alpha, tol)`.
pub fn zeta_series_fdd(params: &KarlinParams, times: &[f64], tol: f64, stream: &mut RandomStream) -> Result<Vec<f64>> {
    Ok(SeriesSampler::new(*params, times, tol, TailMode::Truncate)?.sample(stream))
}

/// Centered Gaussian vector with covariance `fbm_cov` on a fixed grid.
#[derive(Debug, Clone)]
pub struct GaussianFdd {
    factor: DMatrix<f64>,
}

impl GaussianFdd {
    pub fn new(beta: f64, times: &[f64]) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("beta must lie in (0, 1), got {beta}")));
        }
        if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(invalid("times must be positive and finite"));
        }
        let mut sorted = times.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("times must be distinct"));
        }
        let d = times.len();
        let cov = DMatrix::from_fn(d, d, |i, j| fbm_cov(beta, times[i], times[j]));
        Ok(Self { factor: cholesky_with_jitter(&cov)? })
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Vec<f64> {
        let z = DVector::from_fn(self.factor.nrows(), |_, _| stream.standard_normal());
        (&self.factor * z).iter().copied().collect()
    }
}

pub fn gaussian_karlin_fdd(beta: f64, times: &[f64], stream: &mut RandomStream) -> Result<Vec<f64>> {
    Ok(GaussianFdd::new(beta, times)?.sample(stream))
}

/// One cluster of the limit point process. Its `size` ordered uniform
/// locations are regenerated from a private stream on demand, since Sibuya
/// sizes have infinite mean.
#[derive(Debug, Clone)]
pub struct LimitCluster {
    /// `Gamma_l^{-1/alpha}`.
    pub magnitude: f64,
    pub sign: f64,
    pub size: u64,
    stream: RandomStream,
}

impl LimitCluster {
    /// Locations in increasing order.
    pub fn locations(&self) -> OrderedUniforms {
        OrderedUniforms { remaining: self.size, last: 0.0, stream: self.stream.clone() }
    }

    /// Points of the cluster; in signed mode the `j`-th ordered point
    /// carries the factor `(-1)^j`.
    pub fn points(&self, signed: bool) -> impl Iterator<Item = Point> + '_ {
        let v = self.sign * self.magnitude;
        self.locations().enumerate().map(move |(k, location)| {
            let value = if signed && k % 2 == 0 { -v } else { v };
            Point { value, location }
        })
    }
}

/// Order statistics of `n` uniforms, generated in increasing order.
#[derive(Debug, Clone)]
pub struct OrderedUniforms {
    remaining: u64,
    last: f64,
    stream: RandomStream,
}

impl Iterator for OrderedUniforms {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        if self.remaining == 0 {
            return None;
        }
        // minimum of `remaining` uniforms on (last, 1)
        let u = self.stream.uniform();
        let frac = -(u.ln() / self.remaining as f64).exp_m1();
        self.last += (1.0 - self.last) * frac;
        self.remaining -= 1;
        Some(self.last)
    }
}

/// Clusters of the limit point process with magnitude above epsilon.
#[derive(Debug, Clone)]
pub struct LimitPointProcess {
    pub clusters: Vec<LimitCluster>,
    pub signed: bool,
}

impl LimitPointProcess {
    /// Largest `|value|`, or 0 without clusters.
    pub fn max_abs(&self) -> f64 {
        self.clusters.first().map_or(0.0, |c| c.magnitude)
    }

    pub fn total_points(&self) -> u128 {
        self.clusters.iter().map(|c| c.size as u128).sum()
    }

    /// Materializes all points; errors when there are more than `max_points`.
    pub fn to_point_measure(&self, max_points: u64) -> Result<PointMeasureSample> {
        let total = self.total_points();
        if total > max_points as u128 {
            return Err(Error::Budget { requested: total, budget: max_points as u128 });
        }
        PointMeasureSample::new(self.clusters.iter().flat_map(|c| c.points(self.signed)).collect())
    }
}

/// Limit point process restricted to `|value| > epsilon`: arrivals
/// `Gamma_l < epsilon^{-alpha}`, each with a Sibuya cluster of uniform locations.
pub fn limit_point_process_sample(
    params: &KarlinParams,
    epsilon: f64,
    stream: &mut RandomStream,
    signed: bool,
) -> Result<LimitPointProcess> {
    params.validate()?;
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon must be positive"));
    }
    let sibuya = SibuyaSampler::new(params.beta)?;
    let horizon = epsilon.powf(-params.alpha);
    let mut clusters = vec![];
    let mut gamma = 0.0;
    for l in 0.. {
        gamma += stream.exponential();
        if gamma >= horizon {
            break;
        }
        clusters.push(LimitCluster {
            magnitude: gamma.powf(-1.0 / params.alpha),
            sign: stream.sign(),
            size: sibuya.sample(stream),
            stream: stream.derive(l, tags::LOCATIONS),
        });
    }
    Ok(LimitPointProcess { clusters, signed })
}

/// `M(I_k) = max` of `Gamma_l^{-1/alpha}` over clusters with a point in `I_k`.
pub fn limit_supmeasure_sample(params: &KarlinParams, intervals: &[OpenInterval], stream: &mut RandomStream) -> Result<Vec<f64>> {
    params.validate()?;
    if intervals.is_empty() {
        return Err(invalid("need at least one interval"));
    }
    let sibuya = SibuyaSampler::new(params.beta)?;
    // elementary cells cut by every endpoint
    let mut cuts: Vec<f64> = intervals.iter().flat_map(|i| [i.lo, i.hi]).chain([0.0, 1.0]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let cells: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
    let covers: Vec<Vec<usize>> = intervals
        .iter()
        .map(|iv| (0..cells.len()).filter(|&c| iv.lo <= cuts[c] && cuts[c + 1] <= iv.hi).collect())
        .collect();
    let mut out = vec![0.0; intervals.len()];
    let mut open = intervals.len();
    let mut counts = vec![0u64; cells.len()];
    let mut gamma = 0.0;
    for _ in 0..SUPMEASURE_CLUSTER_CAP {
        gamma += stream.exponential();
        let mut remaining = sibuya.sample(stream);
        let mut remaining_len = 1.0;
        for (c, &h) in cells.iter().enumerate() {
            let k = if remaining == 0 { 0 } else { sample_binomial(remaining, (h / remaining_len).min(1.0), stream) };
            counts[c] = k;
            remaining -= k;
            remaining_len -= h;
        }
        let magnitude = gamma.powf(-1.0 / params.alpha);
        for (k, cover) in covers.iter().enumerate() {
            if out[k] == 0.0 && cover.iter().any(|&c| counts[c] > 0) {
                out[k] = magnitude;
                open -= 1;
            }
        }
        if open == 0 {
            return Ok(out);
        }
    }
    Err(Error::BudgetExhausted { attempts: SUPMEASURE_CLUSTER_CAP })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::sibuya_pmf;
    use crate::stats::{ecf_estimate, ks_test, mean_se, pmf_chisq, proportion_se};
    use crate::theory::{cf_theoretical, supmeasure_fdd_prob, FddSpec, IntervalQuery};

    #[test]
    fn params_validation() {
        assert!(KarlinParams::new(2.0, 0.5).is_ok());
        assert!(KarlinParams::new(2.1, 0.5).is_err());
        assert!(KarlinParams::new(1.5, 1.0).is_err());
        let g = KarlinParams::new(2.0, 0.5).unwrap();
        assert!(SeriesSampler::new(g, &[1.0], 0.1, TailMode::Truncate).is_err());
    }

    #[test]
    fn tail_variance_closed_forms() {
        // c = 2: 1/((l-1)(l-2)) sums to 1/(L-1); c = 3: to 1/(2(L-1)(L-2))
        for l in [3u64, 4, 10, 1000, 123_456] {
            let lf = l as f64;
            assert!((series_tail_variance(1.0, l) * (lf - 1.0) - 1.0).abs() < 1e-12);
            assert!((series_tail_variance(2.0 / 3.0, l) * 2.0 * (lf - 1.0) * (lf - 2.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_variance_against_direct_sum() {
        // ratio recursion up to N, then the asymptotic integral N^{1-c}/(c-1)
        let alpha = 1.5;
        let c = 2.0 / alpha;
        let level = 5u64;
        let big = 2_000_000u64;
        let mut r = (crate::special::ln_gamma_ratio(level as f64 + 1.0, -c)).exp();
        let mut sum = 0.0;
        for l in level + 1..=big {
            sum += r;
            r *= (l as f64 - c) / l as f64;
        }
        let tail = (big as f64 + 0.5 - c / 2.0).powf(1.0 - c) / (c - 1.0);
        let direct = sum + tail;
        assert!((series_tail_variance(alpha, level) / direct - 1.0).abs() < 1e-6);
    }

    #[test]
    fn truncation_levels() {
        let l = truncation_level(1.0, 1e-3).unwrap();
        let bound = |l: u64| 1.0 / (l as f64 - 1.0) < 1e-3 * 1e-3;
        assert!(bound(l) && !bound(l - 1));
        assert!((1_000_001..=1_000_002).contains(&l));
        let mut prev = 0;
        for k in 0..8 {
            let tol = 0.5f64.powi(k);
            let l = truncation_level(1.25, tol).unwrap();
            assert!(l >= prev);
            assert!(series_tail_variance(1.25, l).sqrt() < tol);
            if l > 2 {
                assert!(series_tail_variance(1.25, l - 1).sqrt() >= tol);
            }
            prev = l;
        }
        assert!(matches!(truncation_level(1.5, 1e-3), Err(Error::TruncationCap(_))));
        assert!(truncation_level(1.5, 0.0).is_err());
    }

    #[test]
    fn compensated_levels() {
        let l = compensated_level(1.5, 1e-3, DEFAULT_THETA_NORM).unwrap();
        assert!(compensation_error_bound(1.5, l, 4.0) < 1e-3);
        assert!(compensation_error_bound(1.5, l - 1, 4.0) >= 1e-3);
        assert!((150..250).contains(&l), "{l}");
        assert!(compensated_level(1.5, 1e-4, 4.0).unwrap() > l);
    }

    #[test]
    fn fbm_covariance() {
        assert_eq!(fbm_cov(0.5, 0.0, 0.7), 0.0);
        assert_eq!(fbm_cov(0.3, 0.2, 0.9), fbm_cov(0.3, 0.9, 0.2));
        assert!((fbm_cov(0.5, 1.0, 1.0) - 0.353553390593).abs() < 1e-11);
        assert!((fbm_corr(0.5, 0.5, 1.0) - 0.594603557501).abs() < 1e-11);
        assert!((fbm_corr(0.75, 0.5, 1.0) - 0.648419777326).abs() < 1e-11);
        // stationary increments
        let (b, s, t) = (0.7, 0.3, 0.8);
        let inc = fbm_cov(b, t, t) + fbm_cov(b, s, s) - 2.0 * fbm_cov(b, s, t);
        assert!((inc - 2f64.powf(b - 2.0) * (t - s).powf(b)).abs() < 1e-14);
    }

    #[test]
    fn jitter_handles_singular_grids() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(cholesky_with_jitter(&m).is_ok());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(cholesky_with_jitter(&bad), Err(Error::NotPositiveDefinite { .. })));
        assert!(GaussianFdd::new(0.5, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn gaussian_fdd_moments() {
        let times = [0.5, 1.0];
        let g = GaussianFdd::new(0.5, &times).unwrap();
        let root = RandomStream::new(11);
        let n = 100_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|k| g.sample(&mut root.derive(k, 0))).collect();
        for (i, j) in [(0, 0), (0, 1), (1, 1)] {
            let prods: Vec<f64> = xs.iter().map(|v| v[i] * v[j]).collect();
            let (m, se) = mean_se(&prods);
            assert!((m - fbm_cov(0.5, times[i], times[j])).abs() < 4.0 * se, "{i}{j}");
        }
        let a: Vec<f64> = xs.iter().map(|v| v[0]).collect();
        let b: Vec<f64> = xs.iter().map(|v| v[1]).collect();
        let (r, se) = crate::stats::correlation_se(&a, &b).unwrap();
        assert!((r - 0.5 / 0.5f64.powf(0.25)).abs() < 3.0 * se);
        // single-time marginal
        let one = GaussianFdd::new(0.3, &[0.6]).unwrap();
        let z: Vec<f64> = (0..20_000).map(|k| one.sample(&mut root.derive(k, 1))[0]).collect();
        let sd = fbm_cov(0.3, 0.6, 0.6).sqrt();
        let normal = statrs::distribution::Normal::new(0.0, sd).unwrap();
        use statrs::distribution::ContinuousCDF;
        assert!(ks_test(&z, |x| normal.cdf(x)).unwrap().p_value > 0.01);
    }

    #[test]
    fn series_sign_flip_is_exact() {
        let p = KarlinParams::new(1.5, 0.5).unwrap();
        let s = SeriesSampler::new(p, &[0.25, 0.5, 1.0], 1e-2, TailMode::default()).unwrap();
        for k in 0..50 {
            let root = RandomStream::new(k);
            let a = s.sample(&mut root.clone());
            let b = s.sample_with_sign(&mut root.clone(), -1.0);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(*x, -*y);
            }
        }
    }

    #[test]
    fn series_near_zero_time() {
        // zeta(t) has the law of t^{beta/alpha} zeta(1)
        let p = KarlinParams::new(1.5, 0.5).unwrap();
        let t = 1e-6;
        let s = SeriesSampler::new(p, &[t, 1.0], 1e-3, TailMode::default()).unwrap();
        let root = RandomStream::new(5);
        let xs: Vec<Vec<f64>> = (0..20_000).map(|k| s.sample(&mut root.derive(k, 0))).collect();
        let near: Vec<f64> = xs.iter().map(|v| v[0].abs()).collect();
        let one: Vec<f64> = xs.iter().map(|v| v[1].abs()).collect();
        let bound = t.powf(0.5 / 1.5) * mean_se(&one).0;
        assert!(mean_se(&near).0 < 3.0 * bound, "{} {bound}", mean_se(&near).0);
    }

    fn series_ecf_check(params: KarlinParams, tol: f64, mode: TailMode) {
        let times = [0.25, 0.5, 1.0];
        let s = SeriesSampler::new(params, &times, tol, mode).unwrap();
        let root = RandomStream::new(77);
        let xs: Vec<Vec<f64>> = (0..20_000).map(|k| s.sample(&mut root.derive(k, tags::SAMPLE))).collect();
        for (k, &t) in times.iter().enumerate() {
            let col: Vec<Vec<f64>> = xs.iter().map(|v| vec![v[k]]).collect();
            for theta in [0.5, 1.0, 2.0] {
                let e = ecf_estimate(&col, &[theta]).unwrap();
                let spec = FddSpec::new(vec![t], vec![theta]).unwrap();
                let target = cf_theoretical(params.alpha, params.beta, &spec).unwrap();
                assert!((e.real_part - target).abs() < 4.0 * e.std_error + 2.0 * tol, "t {t} theta {theta}: {} vs {target}", e.real_part);
            }
        }
    }

    #[test]
    fn truncated_series_matches_cf() {
        series_ecf_check(KarlinParams::new(1.0, 0.5).unwrap(), 0.05, TailMode::Truncate);
    }

    #[test]
    fn compensated_series_matches_cf() {
        series_ecf_check(KarlinParams::new(1.5, 0.3).unwrap(), 1e-3, TailMode::default());
    }

    #[test]
    fn series_self_similarity() {
        // -ln CF(theta, c t) = c^beta (-ln CF(theta, t))
        let p = KarlinParams::new(1.5, 0.5).unwrap();
        let s = SeriesSampler::new(p, &[0.5, 1.0], 1e-3, TailMode::default()).unwrap();
        let root = RandomStream::new(3);
        let xs: Vec<Vec<f64>> = (0..20_000).map(|k| s.sample(&mut root.derive(k, 0))).collect();
        let theta = 1.0;
        let e_half = ecf_estimate(&xs.iter().map(|v| vec![v[0]]).collect::<Vec<_>>(), &[theta]).unwrap();
        let e_one = ecf_estimate(&xs.iter().map(|v| vec![v[1]]).collect::<Vec<_>>(), &[theta]).unwrap();
        let lhs = -e_half.real_part.ln();
        let rhs = 0.5f64.powf(0.5) * -e_one.real_part.ln();
        let se = (e_half.std_error / e_half.real_part).hypot(0.5f64.sqrt() * e_one.std_error / e_one.real_part);
        assert!((lhs - rhs).abs() < 4.0 * se, "{lhs} {rhs} {se}");
    }

    #[test]
    fn limit_point_process_laws() {
        let p = KarlinParams::new(1.5, 0.5).unwrap();
        let eps = 0.5;
        let root = RandomStream::new(8);
        let runs = 20_000;
        let samples: Vec<LimitPointProcess> =
            (0..runs).map(|k| limit_point_process_sample(&p, eps, &mut root.derive(k, 0), false).unwrap()).collect();
        let counts: Vec<f64> = samples.iter().map(|s| s.clusters.len() as f64).collect();
        let (m, se) = mean_se(&counts);
        assert!((m - eps.powf(-1.5)).abs() < 3.0 * se);
        let mut sizes = vec![0u64; 21];
        let mut locs = vec![];
        for s in &samples {
            for c in &s.clusters {
                sizes[(c.size.min(21) - 1) as usize] += (c.size <= 20) as u64;
                if c.size > 20 {
                    sizes[20] += 1;
                }
                if c.size <= 50 {
                    let l: Vec<f64> = c.locations().collect();
                    assert!(l.windows(2).all(|w| w[0] <= w[1]));
                    locs.extend(l);
                }
            }
        }
        let probs: Vec<f64> = (1..=20).map(|l| sibuya_pmf(0.5, l).unwrap()).collect();
        assert!(pmf_chisq(&sizes, &probs).unwrap().p_value > 0.001);
        assert!(ks_test(&locs[..50_000.min(locs.len())], |x| x.clamp(0.0, 1.0)).unwrap().p_value > 0.01);
    }

    #[test]
    fn signed_limit_points_alternate() {
        let p = KarlinParams::new(1.5, 0.5).unwrap();
        let s = limit_point_process_sample(&p, 0.3, &mut RandomStream::new(1), true).unwrap();
        for c in s.clusters.iter().filter(|c| c.size < 100) {
            for (k, pt) in c.points(true).enumerate() {
                let want = if k % 2 == 0 { -c.sign } else { c.sign } * c.magnitude;
                assert_eq!(pt.value, want);
            }
        }
        let mut tiny = s.clone();
        tiny.clusters.retain(|c| c.size < 100);
        let pm = tiny.to_point_measure(1_000_000).unwrap();
        assert_eq!(pm.points.len() as u128, tiny.total_points());
        assert!(s.to_point_measure(0).is_err() || s.clusters.is_empty());
    }

    #[test]
    fn limit_supmeasure_laws() {
        let p = KarlinParams::new(1.5, 0.5).unwrap();
        let iv = |a, b| OpenInterval::new(a, b).unwrap();
        let intervals = [iv(0.0, 1.0), iv(0.0, 0.25), iv(0.5, 0.75), iv(0.1, 0.2)];
        let root = RandomStream::new(21);
        let runs = 100_000;
        let mut whole = 0usize;
        let mut joint = 0usize;
        for k in 0..runs {
            let m = limit_supmeasure_sample(&p, &intervals, &mut root.derive(k, 0)).unwrap();
            assert!(m[1] <= m[0] && m[2] <= m[0] && m[3] <= m[1]);
            whole += (m[0] <= 1.5) as usize;
            joint += (m[1] <= 1.0 && m[2] <= 1.0) as usize;
        }
        let t_whole = supmeasure_fdd_prob(1.5, 0.5, &IntervalQuery::new(vec![iv(0.0, 1.0)], vec![1.5]).unwrap()).unwrap();
        let t_joint = supmeasure_fdd_prob(
            1.5,
            0.5,
            &IntervalQuery::new(vec![iv(0.0, 0.25), iv(0.5, 0.75)], vec![1.0, 1.0]).unwrap(),
        )
        .unwrap();
        assert!((t_whole - (-(1.5f64).powf(-1.5)).exp()).abs() < 1e-12);
        for (hits, target) in [(whole, t_whole), (joint, t_joint)] {
            let p_hat = hits as f64 / runs as f64;
            assert!((p_hat - target).abs() < 3.0 * proportion_se(target, runs as usize), "{p_hat} {target}");
        }
    }
}
