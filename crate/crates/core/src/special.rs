//! Deterministic scalar functions: the stable constant, Sibuya law,
//! Poisson parity probabilities and the Gamma-mixture density.

use std::f64::consts::FRAC_PI_2;

use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{invalid, Result};
use crate::quad::{integrate, QuadOptions};

/// Below this index the Sibuya pmf and survival use the exact multiplicative
/// recursion; above it, an asymptotic log-gamma ratio.
pub const SIBUYA_RECURSION_LIMIT: u64 = 1 << 16;

/// `C_alpha = (int_0^inf x^{-alpha} sin x dx)^{-1}`, with `C_2 = 2`.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(invalid(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if alpha == 2.0 {
        return Ok(2.0);
    }
    // Gamma(1-a) cos(pi a / 2) = Gamma(2-a) * sin(pi e / 2) / e with e = 1-a,
    // which stays well conditioned through the removable point a = 1.
    let e = 1.0 - alpha;
    let sinc = if e.abs() < 1e-8 {
        FRAC_PI_2 * (1.0 - (FRAC_PI_2 * e).powi(2) / 6.0)
    } else {
        (FRAC_PI_2 * e).sin() / e
    };
    Ok(1.0 / (gamma(2.0 - alpha) * sinc))
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("beta must lie in (0, 1), got {beta}")))
    }
}

/// `ln Gamma(x + a) - ln Gamma(x)` for `x > 0`, `x + a > 0`.
///
/// Uses the Stirling difference with `ln1p` for large `x`, so the result keeps
/// full relative accuracy when `a` is small compared to `x`.
pub fn ln_gamma_ratio(x: f64, a: f64) -> f64 {
    if x < 10.0 || x + a < 10.0 {
        return ln_gamma(x + a) - ln_gamma(x);
    }
    let y = x + a;
    let mut r = (x - 0.5) * (a / x).ln_1p() + a * y.ln() - a;
    // Bernoulli corrections B_{2k} / (2k (2k-1)) applied to y^{1-2k} - x^{1-2k}.
    const C: [f64; 6] = [1.0 / 12.0, -1.0 / 360.0, 1.0 / 1260.0, -1.0 / 1680.0, 1.0 / 1188.0, -691.0 / 360360.0];
    let (ix, iy) = (1.0 / x, 1.0 / y);
    let (ix2, iy2) = (ix * ix, iy * iy);
    let (mut px, mut py) = (ix, iy);
    for c in C {
        r += c * (py - px);
        px *= ix2;
        py *= iy2;
    }
    r
}

/// Sibuya probability mass `P(Q = ell)`.
pub fn sibuya_pmf(beta: f64, ell: u64) -> Result<f64> {
    check_beta(beta)?;
    if ell == 0 {
        return Ok(0.0);
    }
    if ell <= SIBUYA_RECURSION_LIMIT {
        let mut p = beta;
        for l in 1..ell {
            let l = l as f64;
            p *= (l - beta) / (l + 1.0);
        }
        return Ok(p);
    }
    let l = ell as f64;
    Ok((beta.ln() - ln_gamma(1.0 - beta) + ln_gamma_ratio(l, -beta) - l.ln()).exp())
}

/// Sibuya survival `P(Q > n)`.
pub fn sibuya_survival(beta: f64, n: u64) -> Result<f64> {
    check_beta(beta)?;
    if n <= SIBUYA_RECURSION_LIMIT {
        let mut s = 1.0;
        for k in 1..=n {
            s *= 1.0 - beta / k as f64;
        }
        return Ok(s);
    }
    Ok(sibuya_survival_asymptotic(beta, n))
}

/// Closed-form survival `Gamma(n+1-beta) / (Gamma(1-beta) Gamma(n+1))`.
pub(crate) fn sibuya_survival_asymptotic(beta: f64, n: u64) -> f64 {
    (ln_gamma_ratio(n as f64 + 1.0, -beta) - ln_gamma(1.0 - beta)).exp()
}

/// Iterator over `(ell, pmf, survival)` for `ell = 1, 2, ...`, using the
/// multiplicative recursions throughout.
#[derive(Debug, Clone)]
pub struct SibuyaTerms {
    beta: f64,
    ell: u64,
    pmf: f64,
    survival: f64,
}

impl SibuyaTerms {
    pub fn new(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { beta, ell: 0, pmf: 0.0, survival: 1.0 })
    }
}

impl Iterator for SibuyaTerms {
    type Item = (u64, f64, f64);

    fn next(&mut self) -> Option<Self::Item> {
        self.ell += 1;
        let l = self.ell as f64;
        self.pmf = if self.ell == 1 { self.beta } else { self.pmf * (l - 1.0 - self.beta) / l };
        self.survival *= 1.0 - self.beta / l;
        Some((self.ell, self.pmf, self.survival))
    }
}

/// Sibuya probability generating function `E z^Q = 1 - (1-z)^beta`.
pub fn sibuya_pgf(beta: f64, z: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    if !(-1.0..=1.0).contains(&z) {
        return Err(invalid(format!("pgf argument must lie in [-1, 1], got {z}")));
    }
    Ok(1.0 - (1.0 - z).powf(beta))
}

/// Sorted observation times together with a parity (odd/even) bit per time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityPattern {
    times: Vec<f64>,
    delta: Vec<bool>,
}

impl ParityPattern {
    pub fn new(times: Vec<f64>, delta: Vec<bool>) -> Result<Self> {
        validate_times(&times)?;
        if delta.len() != times.len() {
            return Err(invalid("parity bits and times differ in length"));
        }
        Ok(Self { times, delta })
    }

    /// Pattern whose bits are the low `times.len()` bits of `mask`
    /// (bit `j` belongs to time `j`).
    pub fn from_mask(times: Vec<f64>, mask: u64) -> Result<Self> {
        let delta = (0..times.len()).map(|j| mask >> j & 1 == 1).collect();
        Self::new(times, delta)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    pub fn dim(&self) -> usize {
        self.times.len()
    }

    /// True when at least one bit is odd.
    pub fn is_nonzero(&self) -> bool {
        self.delta.iter().any(|&b| b)
    }
}

/// Checks that `times` is nonempty, strictly increasing and inside `(0, 1]`.
pub fn validate_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(invalid("time grid is empty"));
    }
    let mut prev = 0.0;
    for &t in times {
        if !(t > prev && t <= 1.0) {
            return Err(invalid(format!("times must be strictly increasing in (0, 1], got {times:?}")));
        }
        prev = t;
    }
    Ok(())
}

/// `P(N(q t_j) = delta_j mod 2 for all j)` for a unit-rate Poisson process `N`.
///
/// `q` must be nonnegative.
pub fn poisson_parity_prob(pattern: &ParityPattern, q: f64) -> f64 {
    debug_assert!(q >= 0.0);
    let mut p = 1.0;
    let (mut t_prev, mut d_prev) = (0.0, false);
    for (&t, &d) in pattern.times.iter().zip(&pattern.delta) {
        let x = -2.0 * q * (t - t_prev);
        p *= if d == d_prev { 0.5 * (1.0 + x.exp()) } else { -0.5 * x.exp_m1() };
        t_prev = t;
        d_prev = d;
    }
    p
}

/// Density `(1 - e^{-x}) beta x^{-beta-1} / Gamma(1-beta)` on `x > 0`.
pub fn gamma_mixture_pdf(beta: f64, x: f64) -> Result<f64> {
    check_beta(beta)?;
    if !(x > 0.0) {
        return Err(invalid(format!("density argument must be positive, got {x}")));
    }
    Ok(-(-x).exp_m1() * beta * x.powf(-beta - 1.0) / gamma(1.0 - beta))
}

/// Distribution function of [`gamma_mixture_pdf`], absolute accuracy 1e-10.
pub fn gamma_mixture_cdf(beta: f64, x: f64) -> Result<f64> {
    check_beta(beta)?;
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x == f64::INFINITY {
        return Ok(1.0);
    }
    let opts = QuadOptions { abs_tol: 1e-11, rel_tol: 1e-12, max_intervals: 2000 };
    if x <= 1.0 {
        // y = u^{1/(1-beta)} turns the x^{-beta} singularity into a bounded integrand.
        let k = 1.0 / (1.0 - beta);
        let c = beta / gamma(2.0 - beta);
        let head = integrate(
            |u: f64| {
                let y = u.powf(k);
                if y == 0.0 {
                    1.0
                } else {
                    -(-y).exp_m1() / y
                }
            },
            0.0,
            x.powf(1.0 - beta),
            opts,
        )?;
        Ok((c * head.value).clamp(0.0, 1.0))
    } else {
        // v = y^{-beta} maps the tail (x, inf) onto (0, x^{-beta}).
        let tail = integrate(
            |v: f64| if v == 0.0 { 1.0 } else { -(-v.powf(-1.0 / beta)).exp_m1() },
            0.0,
            x.powf(-beta),
            opts,
        )?;
        Ok((1.0 - tail.value / gamma(1.0 - beta)).clamp(0.0, 1.0))
    }
}

/// Laplace transform `(1 + theta)^beta - theta^beta` of the Gamma mixture.
pub fn gamma_mixture_laplace(beta: f64, theta: f64) -> f64 {
    (1.0 + theta).powf(beta) - theta.powf(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    /// `int_0^inf x^{-alpha} sin x dx` by per-period quadrature and repeated
    /// averaging of the alternating partial sums.
    fn sine_integral(alpha: f64) -> f64 {
        let opts = QuadOptions { rel_tol: 1e-13, abs_tol: 1e-15, max_intervals: 4000 };
        // first period with x = u^2 so the integrand is bounded at 0
        let first = integrate(
            |u: f64| 2.0 * u.powf(1.0 - 2.0 * alpha) * (u * u).sin(),
            0.0,
            PI.sqrt(),
            opts,
        )
        .unwrap()
        .value;
        let mut partial = vec![];
        let mut s = first;
        for k in 1..80 {
            let a = k as f64 * PI;
            s += integrate(|x: f64| x.powf(-alpha) * x.sin(), a, a + PI, opts).unwrap().value;
            partial.push(s);
        }
        for _ in 0..40 {
            partial = partial.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        }
        partial[partial.len() - 1]
    }

    #[test]
    fn c_alpha_values() {
        assert_eq!(c_alpha(2.0).unwrap(), 2.0);
        let oracle1 = 1.0 / sine_integral(1.0);
        assert!(close(c_alpha(1.0).unwrap(), oracle1, 1e-9), "{oracle1}");
        assert!(close(c_alpha(1.0).unwrap(), std::f64::consts::FRAC_2_PI, 1e-12));
        let oracle15 = 1.0 / sine_integral(1.5);
        assert!(close(c_alpha(1.5).unwrap(), oracle15, 1e-8), "{oracle15}");
        assert!(close(c_alpha(1.5).unwrap(), 0.398942280401433, 1e-12));
        let oracle05 = 1.0 / sine_integral(0.5);
        assert!(close(c_alpha(0.5).unwrap(), oracle05, 1e-8), "{oracle05}");
    }

    #[test]
    fn c_alpha_continuous_at_one() {
        let c = 2.0 / PI;
        assert!((c_alpha(1.0 + 1e-6).unwrap() - c).abs() < 1e-4);
        assert!((c_alpha(1.0 - 1e-6).unwrap() - c).abs() < 1e-4);
        assert!((c_alpha(1.0 + 1e-9).unwrap() - c).abs() < 1e-8);
    }

    #[test]
    fn c_alpha_domain() {
        assert!(c_alpha(0.0).is_err());
        assert!(c_alpha(2.5).is_err());
        assert!(c_alpha(f64::NAN).is_err());
    }

    #[test]
    fn sibuya_values() {
        assert_eq!(sibuya_pmf(0.5, 1).unwrap(), 0.5);
        assert_eq!(sibuya_pmf(0.5, 2).unwrap(), 0.125);
        assert_eq!(sibuya_pmf(0.5, 3).unwrap(), 0.0625);
        assert_eq!(sibuya_survival(0.5, 0).unwrap(), 1.0);
        assert_eq!(sibuya_survival(0.5, 1).unwrap(), 0.5);
        assert_eq!(sibuya_survival(0.5, 2).unwrap(), 0.375);
        assert!(sibuya_pmf(1.0, 1).is_err());
        assert!(sibuya_pmf(0.0, 1).is_err());
    }

    #[test]
    fn sibuya_mass_sums_to_one() {
        for k in 1..=9 {
            let beta = k as f64 / 10.0;
            let mut total = 0.0;
            let mut last_survival = 0.0;
            for (_, p, s) in SibuyaTerms::new(beta).unwrap().take(1_000_000) {
                total += p;
                last_survival = s;
            }
            assert!((total + last_survival - 1.0).abs() < 1e-12, "beta {beta}");
            let closed = sibuya_survival(beta, 1_000_000).unwrap();
            assert!(close(closed, last_survival, 1e-10), "beta {beta}: {closed} vs {last_survival}");
        }
    }

    #[test]
    fn sibuya_branches_agree_at_switch() {
        for &beta in &[0.1, 0.5, 0.93] {
            let n = SIBUYA_RECURSION_LIMIT;
            let a = sibuya_survival(beta, n).unwrap();
            let b = sibuya_survival_asymptotic(beta, n);
            assert!(close(a, b, 1e-12), "{a} {b}");
            let p = sibuya_pmf(beta, n + 1).unwrap();
            assert!(close(p, a - sibuya_survival(beta, n + 1).unwrap(), 1e-8));
        }
    }

    #[test]
    fn ln_gamma_ratio_matches_high_precision() {
        // reference values from 30-digit log-gamma evaluations
        let cases = [
            (10.75, -0.75, -1.7176447449790488),
            (12.0, 0.5, 1.2320396660625599),
            (30.5, -0.75, -2.5414795252232399),
            (30.5, 0.25, 0.8513496067683989),
            (100.0, -0.75, -3.4472876513784636),
            (100.0, 0.25, 1.1503542681888362),
            (1e4, -0.75, -6.9076896512476185),
            (1e4, 0.25, 2.3025757179159236),
            (1e7, -0.75, -12.088571672593737),
            (1e7, 0.25, 4.0295239033645799),
        ];
        for (x, a, want) in cases {
            assert!(close(ln_gamma_ratio(x, a), want, 1e-14), "{x} {a}: {}", ln_gamma_ratio(x, a));
        }
    }

    #[test]
    fn pgf_values() {
        assert_eq!(sibuya_pgf(0.3, 1.0).unwrap(), 1.0);
        assert!((sibuya_pgf(0.5, 0.5).unwrap() - 0.292893219).abs() < 1e-9);
        let m1 = sibuya_pgf(0.5, -1.0).unwrap();
        assert!((m1 + 0.414213562).abs() < 1e-9);
        for k in 1..10 {
            let beta = k as f64 / 10.0;
            let odd = (1.0 - sibuya_pgf(beta, -1.0).unwrap()) / 2.0;
            assert!((odd - 2f64.powf(beta - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn parity_closed_forms() {
        let p1 = ParityPattern::new(vec![1.0], vec![true]).unwrap();
        for &q in &[0.0, 1e-9, 0.3, 4.0] {
            assert!(close(poisson_parity_prob(&p1, q), -(-2.0 * q).exp_m1() / 2.0, 1e-15) || q == 0.0);
        }
        let (t1, t2, q) = (0.3, 0.8, 2.5);
        let p2 = ParityPattern::new(vec![t1, t2], vec![true, true]).unwrap();
        let want = 0.25 * (1.0 - (-2.0 * q * t1).exp()) * (1.0 + (-2.0 * q * (t2 - t1)).exp());
        assert!(close(poisson_parity_prob(&p2, q), want, 1e-14));
        let p3 = ParityPattern::new(vec![0.2, 0.5, 1.0], vec![false, true, false]).unwrap();
        assert_eq!(poisson_parity_prob(&p3, 0.0), 0.0);
    }

    /// Sums Poisson increment pmfs over counts `0..=k` per cell.
    fn brute_parity(times: &[f64], delta: &[bool], q: f64) -> f64 {
        let mut p = 1.0;
        let (mut t_prev, mut d_prev) = (0.0, false);
        for (&t, &d) in times.iter().zip(delta) {
            let lam = q * (t - t_prev);
            // count parity must equal d xor d_prev
            let want_odd = d != d_prev;
            let mut term = (-lam).exp();
            let mut cell = 0.0;
            let mut k = 0u64;
            loop {
                if (k % 2 == 1) == want_odd {
                    cell += term;
                }
                k += 1;
                term *= lam / k as f64;
                if k as f64 > lam && term < 1e-17 {
                    break;
                }
            }
            p *= cell;
            t_prev = t;
            d_prev = d;
        }
        p
    }

    fn sorted_times() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, 1..=5).prop_map(|mut v| {
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
            v
        })
    }

    proptest! {
        #[test]
        fn parity_patterns_partition_unity(times in sorted_times(), q in 0.0f64..50.0) {
            let d = times.len();
            let total: f64 = (0..1u64 << d)
                .map(|m| poisson_parity_prob(&ParityPattern::from_mask(times.clone(), m).unwrap(), q))
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn parity_matches_poisson_sums(times in sorted_times(), q in 0.0f64..50.0, mask in 0u64..32) {
            let pat = ParityPattern::from_mask(times.clone(), mask).unwrap();
            let a = poisson_parity_prob(&pat, q);
            let b = brute_parity(&times, pat.delta(), q);
            prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }

        #[test]
        fn survival_recursion_identity(beta in 0.01f64..0.99, n in 0u64..5000) {
            let s = sibuya_survival(beta, n).unwrap();
            let s1 = sibuya_survival(beta, n + 1).unwrap();
            prop_assert_eq!(s * (1.0 - beta / (n + 1) as f64), s1);
        }
    }

    #[test]
    fn gamma_mixture_density() {
        let want = (1.0 - (-1.0f64).exp()) * 0.5 / PI.sqrt();
        assert!(close(gamma_mixture_pdf(0.5, 1.0).unwrap(), want, 1e-14));
        assert!((gamma_mixture_pdf(0.5, 1.0).unwrap() - 0.1783179).abs() < 1e-7);
        assert!(gamma_mixture_pdf(0.5, 0.0).is_err());
        assert!(gamma_mixture_pdf(0.5, -1.0).is_err());
    }

    #[test]
    fn gamma_mixture_normalization_and_laplace() {
        for &beta in &[0.2, 0.5, 0.8] {
            // mass on (0, 50] by plain quadrature plus the tail, which is
            // 50^{-beta} / Gamma(1-beta) up to a factor 1 - O(e^{-50})
            let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 4000 };
            let k = 1.0 / (1.0 - beta);
            let head = integrate(|u: f64| gamma_mixture_pdf(beta, u.powf(k)).unwrap() * k * u.powf(k - 1.0), 0.0, 1.0, opts).unwrap().value;
            let mid = integrate(|x: f64| gamma_mixture_pdf(beta, x).unwrap(), 1.0, 50.0, opts).unwrap().value;
            let total = head + mid + 50f64.powf(-beta) / gamma(1.0 - beta);
            assert!((total - 1.0).abs() < 1e-8, "{total}");
            assert!((gamma_mixture_cdf(beta, 50.0).unwrap() - head - mid).abs() < 1e-10);
            // Laplace transform at theta = 1 by quadrature on the cdf scale:
            // int e^{-x} f(x) dx over (0, 1] with x = u^{1/(1-beta)}, then the tail.
            let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 4000 };
            let k = 1.0 / (1.0 - beta);
            let head = integrate(
                |u: f64| {
                    let x = u.powf(k);
                    if x == 0.0 { beta / gamma(2.0 - beta) } else { (-x).exp() * gamma_mixture_pdf(beta, x).unwrap() * k * u.powf(k - 1.0) }
                },
                0.0,
                1.0,
                opts,
            )
            .unwrap()
            .value;
            let tail = integrate(|x: f64| (-x).exp() * gamma_mixture_pdf(beta, x).unwrap(), 1.0, 60.0, opts).unwrap().value;
            let lt = head + tail;
            assert!((lt - gamma_mixture_laplace(beta, 1.0)).abs() < 1e-9, "{lt}");
        }
        assert!((gamma_mixture_laplace(0.5, 1.0) - 0.414213562).abs() < 1e-9);
    }

    #[test]
    fn gamma_mixture_cdf_is_continuous_and_matches_density() {
        let beta = 0.5;
        let below = gamma_mixture_cdf(beta, 1.0).unwrap();
        let above = gamma_mixture_cdf(beta, 1.0 + 1e-9).unwrap();
        assert!((above - below).abs() < 1e-9);
        // derivative check at a few points
        for &x in &[0.01, 0.3, 2.0, 7.0] {
            let h = 1e-5 * x;
            let d = (gamma_mixture_cdf(beta, x + h).unwrap() - gamma_mixture_cdf(beta, x - h).unwrap()) / (2.0 * h);
            assert!(close(d, gamma_mixture_pdf(beta, x).unwrap(), 1e-4), "x {x}: {d}");
        }
    }
}
