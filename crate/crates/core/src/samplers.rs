//! Random variates for the primitive laws of the model.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::RandomStream;
use crate::special::sibuya_survival_asymptotic;

/// Law of the innovations `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InnovationLaw {
    /// Symmetric sign times a Pareto magnitude with `P(|X| > x) = c_x x^{-alpha}`
    /// for `x >= c_x^{1/alpha}`.
    SymmetrizedPareto { alpha: f64, c_x: f64 },
    /// Fair `+1` / `-1`.
    Rademacher,
    /// Centered normal with the given variance.
    Gaussian { variance: f64 },
}

impl InnovationLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::SymmetrizedPareto { alpha, c_x } if !(alpha > 0.0 && c_x > 0.0) => {
                Err(invalid(format!("Pareto innovations need alpha > 0 and c_x > 0, got {alpha}, {c_x}")))
            }
            Self::Gaussian { variance } if !(variance > 0.0) => {
                Err(invalid(format!("Gaussian innovations need a positive variance, got {variance}")))
            }
            _ => Ok(()),
        }
    }

    /// Tail index of the law: the Pareto exponent, or 2 for finite variance.
    pub fn tail_index(&self) -> f64 {
        match *self {
            Self::SymmetrizedPareto { alpha, .. } => alpha,
            _ => 2.0,
        }
    }

    /// Tail constant `c_x`, or `E X^2` for finite-variance laws.
    pub fn scale_constant(&self) -> f64 {
        match *self {
            Self::SymmetrizedPareto { c_x, .. } => c_x,
            Self::Rademacher => 1.0,
            Self::Gaussian { variance } => variance,
        }
    }

    pub fn has_finite_variance(&self) -> bool {
        !matches!(self, Self::SymmetrizedPareto { .. })
    }
}

/// Pareto magnitude `(c_x / u)^{1/alpha}` for a uniform `u`.
#[inline]
pub fn pareto_magnitude(alpha: f64, c_x: f64, u: f64) -> f64 {
    (c_x / u).powf(1.0 / alpha)
}

pub fn sample_innovation(law: &InnovationLaw, stream: &mut RandomStream) -> f64 {
    match *law {
        InnovationLaw::SymmetrizedPareto { alpha, c_x } => {
            let m = pareto_magnitude(alpha, c_x, stream.uniform());
            stream.sign() * m
        }
        InnovationLaw::Rademacher => stream.sign(),
        InnovationLaw::Gaussian { variance } => variance.sqrt() * stream.standard_normal(),
    }
}

/// Inverse CDF of the density `(1 - rho) x^{-rho}` on (0, 1).
#[inline]
pub fn q_from_uniform(rho: f64, u: f64) -> f64 {
    u.powf(1.0 / (1.0 - rho))
}

/// Success probability `q` drawn from the density `(1 - rho) x^{-rho}` on (0, 1).
/// Draws landing on 0 or 1 in floating point are redrawn.
pub fn sample_q(rho: f64, stream: &mut RandomStream) -> Result<f64> {
    if !(rho < 1.0) {
        return Err(invalid(format!("rho must be below 1, got {rho}")));
    }
    loop {
        let q = q_from_uniform(rho, stream.uniform());
        if q > 0.0 && q < 1.0 {
            return Ok(q);
        }
    }
}

/// Entries of the memoized survival table (index `n` holds `P(Q > n)`).
const SIBUYA_TABLE_CAP: usize = 1 << 20;

fn extend_survival(beta: f64, v: &mut Vec<f64>, len: usize) {
    let mut s = *v.last().expect("table starts with P(Q > 0)");
    for n in v.len()..len {
        s *= 1.0 - beta / n as f64;
        v.push(s);
    }
}

struct SibuyaTable {
    beta: f64,
    survival: RwLock<Vec<f64>>,
}

impl SibuyaTable {
    fn new(beta: f64) -> Self {
        let mut v = Vec::with_capacity(1024);
        v.push(1.0);
        extend_survival(beta, &mut v, 1024);
        Self { beta, survival: RwLock::new(v) }
    }

    /// Smallest `n` with `P(Q > n) < u`.
    fn quantile(&self, u: f64) -> u64 {
        {
            let v = self.survival.read().unwrap();
            if *v.last().unwrap() < u {
                return v.partition_point(|&s| s >= u) as u64;
            }
            if v.len() >= SIBUYA_TABLE_CAP {
                drop(v);
                return self.quantile_beyond_table(u);
            }
        }
        let mut v = self.survival.write().unwrap();
        while *v.last().unwrap() >= u && v.len() < SIBUYA_TABLE_CAP {
            let len = (2 * v.len()).min(SIBUYA_TABLE_CAP);
            extend_survival(self.beta, &mut v, len);
        }
        if *v.last().unwrap() < u {
            return v.partition_point(|&s| s >= u) as u64;
        }
        drop(v);
        self.quantile_beyond_table(u)
    }

    fn quantile_beyond_table(&self, u: f64) -> u64 {
        let surv = |n: u64| sibuya_survival_asymptotic(self.beta, n);
        let mut lo = SIBUYA_TABLE_CAP as u64 - 1;
        let mut hi = lo;
        loop {
            hi = match hi.checked_mul(2) {
                Some(h) => h,
                None => return u64::MAX,
            };
            if surv(hi) < u {
                break;
            }
            lo = hi;
        }
        // invariant: surv(lo) >= u > surv(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if surv(mid) < u {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    }
}

fn sibuya_table(beta: f64) -> Arc<SibuyaTable> {
    static TABLES: OnceLock<Mutex<HashMap<u64, Arc<SibuyaTable>>>> = OnceLock::new();
    let tables = TABLES.get_or_init(Default::default);
    let mut map = tables.lock().unwrap();
    map.entry(beta.to_bits()).or_insert_with(|| Arc::new(SibuyaTable::new(beta))).clone()
}

/// Handle for repeated Sibuya draws with a fixed `beta`; avoids the registry
/// lookup on every call.
#[derive(Clone)]
pub struct SibuyaSampler {
    beta: f64,
    table: Option<Arc<SibuyaTable>>,
}

impl std::fmt::Debug for SibuyaSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SibuyaSampler").field("beta", &self.beta).finish()
    }
}

impl SibuyaSampler {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid(format!("beta must lie in (0, 1], got {beta}")));
        }
        let table = (beta < 1.0).then(|| sibuya_table(beta));
        Ok(Self { beta, table })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Smallest `n >= 1` with `P(Q > n) < u`; saturates at `u64::MAX`.
    pub fn quantile(&self, u: f64) -> u64 {
        match &self.table {
            None => 1,
            Some(_) if u > 1.0 - self.beta => 1,
            Some(t) => t.quantile(u),
        }
    }

    pub fn sample(&self, stream: &mut RandomStream) -> u64 {
        match self.table {
            None => 1,
            Some(_) => self.quantile(stream.uniform()),
        }
    }
}

/// One Sibuya(beta) draw by CDF inversion.
pub fn sample_sibuya(beta: f64, stream: &mut RandomStream) -> Result<u64> {
    Ok(SibuyaSampler::new(beta)?.sample(stream))
}

/// Arrival times of a unit-rate Poisson process, generated lazily.
#[derive(Debug)]
pub struct PoissonArrivals<'a> {
    stream: &'a mut RandomStream,
    time: f64,
}

impl<'a> PoissonArrivals<'a> {
    pub fn new(stream: &'a mut RandomStream) -> Self {
        Self { stream, time: 0.0 }
    }
}

impl Iterator for PoissonArrivals<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        self.time += self.stream.exponential();
        Some(self.time)
    }
}

/// The first `count` arrival times of a unit-rate Poisson process.
pub fn poisson_arrivals(count: usize, stream: &mut RandomStream) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(invalid("need at least one arrival"));
    }
    Ok(PoissonArrivals::new(stream).take(count).collect())
}

/// Binomial(n, p) draw.
pub fn sample_binomial(n: u64, p: f64, stream: &mut RandomStream) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("p checked to lie in (0, 1)").sample(stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{sibuya_pmf, sibuya_survival};
    use crate::stats::{ks_test, pmf_chisq};

    #[test]
    fn sibuya_beta_one_is_degenerate() {
        let mut s = RandomStream::new(1);
        for _ in 0..100 {
            assert_eq!(sample_sibuya(1.0, &mut s).unwrap(), 1);
        }
    }

    #[test]
    fn sibuya_quantile_is_the_inverse_survival() {
        let beta = 0.37;
        let sampler = SibuyaSampler::new(beta).unwrap();
        for n in [1u64, 2, 3, 10, 1000, 5000] {
            let s_prev = sibuya_survival(beta, n - 1).unwrap();
            let s_n = sibuya_survival(beta, n).unwrap();
            // u just below S(n-1) maps to n, u just above S(n) too
            assert_eq!(sampler.quantile(s_prev * (1.0 - 1e-12)), n);
            assert_eq!(sampler.quantile(s_n * (1.0 + 1e-12)), n);
        }
    }

    #[test]
    fn sibuya_deep_tail_uses_closed_form() {
        let beta = 0.5;
        let sampler = SibuyaSampler::new(beta).unwrap();
        let n = 50_000_000u64;
        let s = sibuya_survival(beta, n).unwrap();
        let got = sampler.quantile(s * (1.0 + 1e-9));
        assert!(got.abs_diff(n) <= 1, "{got}");
        assert_eq!(SibuyaSampler::new(0.05).unwrap().quantile(1e-300), u64::MAX);
    }

    #[test]
    fn sibuya_empirical_pmf() {
        let beta = 0.5;
        let n = 100_000;
        let mut s = RandomStream::new(2024);
        let sampler = SibuyaSampler::new(beta).unwrap();
        let mut counts = [0u64; 5];
        let mut pgf_sum = 0.0;
        let mut pgf_sq = 0.0;
        for _ in 0..n {
            let q = sampler.sample(&mut s);
            counts[(q.min(5) - 1) as usize] += 1;
            let z = 0.5f64.powf(q as f64);
            pgf_sum += z;
            pgf_sq += z * z;
        }
        for (ell, want) in [(1u64, 0.5), (2, 0.125), (3, 0.0625)] {
            let p = counts[(ell - 1) as usize] as f64 / n as f64;
            let se = (want * (1.0 - want) / n as f64).sqrt();
            assert!((p - want).abs() < 3.0 * se, "ell {ell}: {p}");
        }
        let expected: Vec<f64> = (1..=4).map(|l| sibuya_pmf(beta, l).unwrap()).collect();
        let chi = pmf_chisq(&counts, &expected).unwrap();
        assert!(chi.p_value > 0.001, "{chi:?}");
        let mean = pgf_sum / n as f64;
        let se = ((pgf_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 0.292893219).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn q_inverse_cdf() {
        assert_eq!(q_from_uniform(0.5, 0.25), 0.0625);
        assert_eq!(q_from_uniform(0.0, 0.3), 0.3);
        let mut s = RandomStream::new(3);
        let n = 100_000;
        let rho = 0.5;
        let xs: Vec<f64> = (0..n).map(|_| sample_q(rho, &mut s).unwrap()).collect();
        let ks = ks_test(&xs, |x| x.clamp(0.0, 1.0).powf(0.5)).unwrap();
        assert!(ks.statistic < 1.63 / (n as f64).sqrt(), "{ks:?}");
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want = (1.0 - rho) / (2.0 - rho);
        assert!((mean - want).abs() < 3.0 * (var / n as f64).sqrt());
        let xs0: Vec<f64> = (0..n).map(|_| sample_q(0.0, &mut s).unwrap()).collect();
        assert!(ks_test(&xs0, |x| x.clamp(0.0, 1.0)).unwrap().p_value > 0.01);
        assert!(sample_q(1.0, &mut s).is_err());
    }

    #[test]
    fn pareto_inverse_cdf_arithmetic() {
        assert_eq!(pareto_magnitude(2.0, 1.0, 0.0625), 4.0);
    }

    #[test]
    fn innovations_are_symmetric() {
        let laws = [
            InnovationLaw::SymmetrizedPareto { alpha: 2.5, c_x: 1.0 },
            InnovationLaw::Rademacher,
            InnovationLaw::Gaussian { variance: 3.0 },
        ];
        let n = 100_000;
        for law in laws {
            let mut s = RandomStream::new(11);
            let xs: Vec<f64> = (0..n).map(|_| sample_innovation(&law, &mut s)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "{law:?}");
        }
    }

    #[test]
    fn pareto_tail_constant() {
        let (alpha, c_x) = (1.5, 1.0);
        let law = InnovationLaw::SymmetrizedPareto { alpha, c_x };
        let n = 100_000;
        let mut s = RandomStream::new(12);
        let xs: Vec<f64> = (0..n).map(|_| sample_innovation(&law, &mut s).abs()).collect();
        for x in [2.0f64, 5.0] {
            let p = xs.iter().filter(|&&v| v > x).count() as f64 / n as f64;
            let scaled = x.powf(alpha) * p;
            assert!((scaled - c_x).abs() < 0.1, "x {x}: {scaled}");
        }
    }

    #[test]
    fn pareto_second_moment_finite_above_two() {
        // alpha = 3: E X^2 = 3 c_x^{2/3} / (3 - 2) = 3 for c_x = 1
        let law = InnovationLaw::SymmetrizedPareto { alpha: 3.0, c_x: 1.0 };
        let mut s = RandomStream::new(13);
        let n = 400_000;
        let m2 = (0..n).map(|_| sample_innovation(&law, &mut s).powi(2)).sum::<f64>() / n as f64;
        assert!((m2 - 3.0).abs() < 0.3, "{m2}");
    }

    #[test]
    fn arrivals() {
        let mut s = RandomStream::new(4);
        let g = poisson_arrivals(50, &mut s).unwrap();
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(poisson_arrivals(0, &mut s).is_err());

        let runs = 10_000;
        let mut sums = [0.0; 3];
        let mut incs = vec![];
        for r in 0..runs {
            let mut st = RandomStream::new(5).derive(r, 0);
            let g = poisson_arrivals(10, &mut st).unwrap();
            for (k, &ell) in [1usize, 5, 10].iter().enumerate() {
                sums[k] += g[ell - 1];
            }
            incs.push(g[3] - g[2]);
        }
        for (k, &ell) in [1usize, 5, 10].iter().enumerate() {
            let mean = sums[k] / runs as f64;
            assert!((mean - ell as f64).abs() < 3.0 * (ell as f64 / runs as f64).sqrt());
        }
        let ks = ks_test(&incs, |x| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() }).unwrap();
        assert!(ks.p_value > 0.01, "{ks:?}");
    }

    #[test]
    fn draws_are_reproducible() {
        let root = RandomStream::new(77);
        let draw = |mut s: RandomStream| {
            (
                sample_sibuya(0.4, &mut s).unwrap(),
                sample_q(0.3, &mut s).unwrap(),
                sample_innovation(&InnovationLaw::Gaussian { variance: 1.0 }, &mut s),
                poisson_arrivals(3, &mut s).unwrap(),
                sample_binomial(1000, 0.3, &mut s),
            )
        };
        assert_eq!(draw(root.derive(1, 2)), draw(root.derive(1, 2)));
    }
}
