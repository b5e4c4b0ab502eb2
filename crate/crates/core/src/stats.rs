//! Empirical characteristic functions, KS and chi-square tests, and the
//! small estimators (means, proportions, correlations) used by the checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};

/// Pairwise (cascade) summation; the result does not depend on how the
/// input was produced, only on its order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Sample mean and its standard error (`n - 1` in the variance).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Binomial standard error of an observed proportion.
pub fn proportion_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Sample correlation with a delta-method (influence-function) standard error.
pub fn correlation_se(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(invalid("correlation needs two equal-length samples of size >= 3"));
    }
    let n = xs.len() as f64;
    let mx = pairwise_sum(xs) / n;
    let my = pairwise_sum(ys) / n;
    let cx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let cy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sxx = pairwise_sum(&cx.iter().map(|a| a * a).collect::<Vec<_>>()) / n;
    let syy = pairwise_sum(&cy.iter().map(|b| b * b).collect::<Vec<_>>()) / n;
    let sxy = pairwise_sum(&cx.iter().zip(&cy).map(|(a, b)| a * b).collect::<Vec<_>>()) / n;
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InsufficientData("correlation of a constant sample".into()));
    }
    let r = sxy / (sxx * syy).sqrt();
    let (sx, sy) = (sxx.sqrt(), syy.sqrt());
    let infl: Vec<f64> = cx
        .iter()
        .zip(&cy)
        .map(|(a, b)| {
            let (u, v) = (a / sx, b / sy);
            u * v - 0.5 * r * (u * u + v * v)
        })
        .collect();
    let (_, se) = mean_se(&infl);
    Ok((r, se))
}

/// Empirical characteristic function at one frequency vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcfEstimate {
    pub real_part: f64,
    pub imag_part: f64,
    /// Standard error of `real_part`.
    pub std_error: f64,
    /// Standard error of `imag_part`.
    pub imag_std_error: f64,
    pub count: usize,
}

/// Mean of `exp(i <theta, v>)` over the sample vectors `v`.
pub fn ecf_estimate(samples: &[Vec<f64>], thetas: &[f64]) -> Result<EcfEstimate> {
    if samples.len() < 2 {
        return Err(invalid("an ECF estimate needs at least two samples"));
    }
    let mut re = Vec::with_capacity(samples.len());
    let mut im = Vec::with_capacity(samples.len());
    for v in samples {
        if v.len() != thetas.len() {
            return Err(invalid(format!("sample of dimension {} paired with {} frequencies", v.len(), thetas.len())));
        }
        let phase: f64 = v.iter().zip(thetas).map(|(x, t)| x * t).sum();
        let (s, c) = phase.sin_cos();
        re.push(c);
        im.push(s);
    }
    let n = samples.len() as f64;
    let moments = |xs: &[f64]| {
        let mean = pairwise_sum(xs) / n;
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        // population variance keeps the bound se <= 1/sqrt(n) for |x| <= 1
        (mean, (pairwise_sum(&dev) / n / n).sqrt())
    };
    let (real_part, std_error) = moments(&re);
    let (imag_part, imag_std_error) = moments(&im);
    Ok(EcfEstimate { real_part, imag_part, std_error, imag_std_error, count: samples.len() })
}

/// Outcome of a Kolmogorov-Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Effective sample size used for the asymptotic p-value.
    pub effective_n: f64,
    /// Set when the sample is a single repeated value.
    pub degenerate: bool,
}

/// Kolmogorov survival function `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // theta-function form, fast for small lambda
        let x = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 0..50 {
            let j = (2 * k + 1) as f64;
            let term = (x * j * j).exp();
            cdf += term;
            if term < 1e-16 * cdf {
                break;
            }
        }
        let cdf = cdf * (2.0 * std::f64::consts::PI).sqrt() / lambda;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sf = 0.0;
    for k in 1..200 {
        let term = 2.0 * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sf += if k % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    sf.clamp(0.0, 1.0)
}

/// `lambda` with `kolmogorov_sf(lambda) = level`, for `level` in (0, 1).
pub fn kolmogorov_quantile(level: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn sorted_copy(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(invalid("sample contains NaN"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample two-sided KS test against a continuous `cdf`.
pub fn ks_test(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if sample.len() < 10 {
        return Err(Error::InsufficientData(format!("KS test needs at least 10 points, got {}", sample.len())));
    }
    let v = sorted_copy(sample)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let degenerate = v[0] == v[v.len() - 1];
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf(n.sqrt() * d), effective_n: n, degenerate })
}

/// Two-sample two-sided KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.len() < 10 || b.len() < 10 {
        return Err(Error::InsufficientData("two-sample KS needs at least 10 points per sample".into()));
    }
    let (x, y) = (sorted_copy(a)?, sorted_copy(b)?);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let degenerate = x[0] == x[n - 1] && y[0] == y[m - 1];
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf(ne.sqrt() * d), effective_n: ne, degenerate })
}

/// Outcome of a Pearson chi-square test.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Cell boundaries after merging, as `[start, end)` indices of the input cells.
    pub cells: Vec<(usize, usize)>,
}

/// Pearson chi-square goodness of fit for counts over cells `0..k`.
///
/// `expected` holds the model probabilities of the first `k` cells and may sum
/// to less than one. `observed` has either `k` entries, or `k + 1` entries
/// where the last counts everything outside the first `k` cells; with `k`
/// entries the remainder cell is taken to be empty. Adjacent cells are merged
/// front to back until every merged cell expects at least 5 counts.
pub fn pmf_chisq(observed: &[u64], expected: &[f64]) -> Result<ChiSquareResult> {
    let k = expected.len();
    if observed.len() != k && observed.len() != k + 1 {
        return Err(invalid("observed must have one entry per expected cell, plus optionally a remainder"));
    }
    if expected.iter().any(|&p| !(p >= 0.0)) {
        return Err(invalid("expected probabilities must be nonnegative"));
    }
    let total_p: f64 = expected.iter().sum();
    if total_p > 1.0 + 1e-9 {
        return Err(invalid(format!("expected probabilities sum to {total_p} > 1")));
    }
    let mut obs: Vec<u64> = observed.to_vec();
    if obs.len() == k {
        obs.push(0);
    }
    let mut probs = expected.to_vec();
    probs.push((1.0 - total_p).max(0.0));
    let n: u64 = obs.iter().sum();
    if n == 0 {
        return Err(Error::InsufficientData("no observations".into()));
    }
    let nf = n as f64;

    let mut cells: Vec<(usize, usize, f64, u64)> = vec![];
    let (mut start, mut e_acc, mut o_acc) = (0usize, 0.0, 0u64);
    for i in 0..probs.len() {
        e_acc += probs[i] * nf;
        o_acc += obs[i];
        if e_acc >= 5.0 {
            cells.push((start, i + 1, e_acc, o_acc));
            start = i + 1;
            e_acc = 0.0;
            o_acc = 0;
        }
    }
    if start < probs.len() {
        if e_acc == 0.0 && o_acc == 0 {
            // trailing empty cells carry no information
        } else if let Some(last) = cells.last_mut() {
            last.1 = probs.len();
            last.2 += e_acc;
            last.3 += o_acc;
        } else {
            cells.push((start, probs.len(), e_acc, o_acc));
        }
    }
    if cells.len() < 2 || cells.iter().any(|c| c.2 < 5.0) {
        return Err(Error::InsufficientData(format!(
            "only {} cells with expected count >= 5 after merging",
            cells.iter().filter(|c| c.2 >= 5.0).count()
        )));
    }
    let statistic: f64 = cells.iter().map(|&(_, _, e, o)| (o as f64 - e).powi(2) / e).sum();
    let dof = cells.len() - 1;
    let p_value = ChiSquared::new(dof as f64).expect("dof >= 1").sf(statistic);
    Ok(ChiSquareResult { statistic, dof, p_value, cells: cells.iter().map(|c| (c.0, c.1)).collect() })
}
