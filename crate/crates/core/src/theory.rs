//! Deterministic limit laws: CF coefficients, the theoretical characteristic
//! function, the Sibuya side of the odd-occupancy identity, and sup-measure
//! probabilities.

use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::special::{c_alpha, poisson_parity_prob, sibuya_pgf, validate_times, ParityPattern, SibuyaTerms};

/// Largest grid dimension accepted by the `2^d`-term enumerations.
pub const MAX_DIM: usize = 20;

/// Relative accuracy promised by [`m_coeff`].
pub const M_COEFF_REL_TOL: f64 = 1e-8;

/// Time grid with one frequency per time.
#[derive(Debug, Clone, PartialEq)]
pub struct FddSpec {
    pub times: Vec<f64>,
    pub thetas: Vec<f64>,
}

impl FddSpec {
    pub fn new(times: Vec<f64>, thetas: Vec<f64>) -> Result<Self> {
        validate_times(&times)?;
        if times.len() != thetas.len() {
            return Err(invalid("times and thetas differ in length"));
        }
        if thetas.iter().any(|t| !t.is_finite()) {
            return Err(invalid("thetas must be finite"));
        }
        Ok(Self { times, thetas })
    }
}

fn check_alpha_beta(alpha: f64, beta: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(invalid(format!("alpha must lie in (0, 2], got {alpha}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// `P(q) / q` as `q -> 0`: the length of the single flipping increment, or 0
/// when the pattern flips more than once.
fn parity_slope_at_zero(pattern: &ParityPattern) -> f64 {
    let mut flips = 0;
    let mut slope = 0.0;
    let (mut t_prev, mut d_prev) = (0.0, false);
    for (&t, &d) in pattern.times().iter().zip(pattern.delta()) {
        if d != d_prev {
            flips += 1;
            slope = t - t_prev;
        }
        t_prev = t;
        d_prev = d;
    }
    if flips == 1 {
        slope
    } else {
        0.0
    }
}

/// Raw integral `int_0^inf P(q) q^{-beta-1} dq` with its error estimate.
pub fn parity_integral(beta: f64, pattern: &ParityPattern) -> Result<(f64, f64)> {
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-11, max_intervals: 4000 };
    // (0, 1]: q = u^{1/(1-beta)} leaves the bounded integrand P(q) / (q (1-beta)).
    let k = 1.0 / (1.0 - beta);
    let slope0 = parity_slope_at_zero(pattern);
    let head = integrate(
        |u: f64| {
            let q = u.powf(k);
            if q == 0.0 {
                slope0 * k
            } else {
                poisson_parity_prob(pattern, q) / q * k
            }
        },
        0.0,
        1.0,
        opts,
    )?;
    // [1, inf): q = v^{-1/beta} gives (1/beta) int_0^1 P(v^{-1/beta}) dv.
    let tail = integrate(
        |v: f64| {
            let q = v.powf(-1.0 / beta);
            poisson_parity_prob(pattern, if q.is_finite() { q } else { f64::MAX })
        },
        0.0,
        1.0,
        opts,
    )?;
    Ok((head.value + tail.value / beta, head.error + tail.error / beta))
}

/// CF coefficient `beta / (Gamma(1-beta) C_alpha) int_0^inf P(q) q^{-beta-1} dq`
/// for a pattern with at least one odd bit.
pub fn m_coeff(alpha: f64, beta: f64, pattern: &ParityPattern) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    if !pattern.is_nonzero() {
        return Err(invalid("parity pattern must contain an odd bit"));
    }
    let (value, error) = parity_integral(beta, pattern)?;
    if error > M_COEFF_REL_TOL * value.abs() {
        return Err(Error::Quadrature { estimate: value, error, evaluations: 0 });
    }
    Ok(beta / (gamma(1.0 - beta) * c_alpha(alpha)?) * value)
}

/// `sum over nonzero patterns of |<theta, delta>|^alpha m(t, delta)`.
pub fn cf_exponent(alpha: f64, beta: f64, spec: &FddSpec) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    let d = spec.times.len();
    if d > MAX_DIM {
        return Err(invalid(format!("dimension {d} exceeds the cap of {MAX_DIM}")));
    }
    let mut total = 0.0;
    for mask in 1u64..(1 << d) {
        let dot: f64 = (0..d).filter(|j| mask >> j & 1 == 1).map(|j| spec.thetas[j]).sum();
        if dot == 0.0 {
            continue;
        }
        let pattern = ParityPattern::from_mask(spec.times.clone(), mask)?;
        total += dot.abs().powf(alpha) * m_coeff(alpha, beta, &pattern)?;
    }
    Ok(total)
}

/// Characteristic function of the Karlin stable process at `spec`.
pub fn cf_theoretical(alpha: f64, beta: f64, spec: &FddSpec) -> Result<f64> {
    Ok((-cf_exponent(alpha, beta, spec)?).exp())
}

/// Value of the Sibuya-side expectation with its truncation diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Value {
    pub value: f64,
    /// Bound on the neglected part of the sum over cluster sizes.
    pub tail_bound: f64,
    /// Number of cluster sizes enumerated.
    pub terms: u64,
}

/// Enumeration cap on the cluster size in [`lemma1_rhs`].
pub const LEMMA1_MAX_TERMS: u64 = 10_000_000;

/// Parity transform of a time grid: for each set `s` of cells, the mode
/// value `z_s = 1 - 2 |union of cells in s|` and the weight `c_s` such that
/// `E[ |<theta, I>|^alpha | Q = l ] = sum_s c_s z_s^l`, where `I_j` is the
/// indicator that an odd number of the `l` uniforms fall in `(0, t_j]`.
fn parity_modes(alpha: f64, spec: &FddSpec) -> Vec<(f64, f64)> {
    let d = spec.times.len();
    let n = 1usize << d;
    let widths: Vec<f64> = spec
        .times
        .iter()
        .scan(0.0, |prev, &t| {
            let w = t - *prev;
            *prev = t;
            Some(w)
        })
        .collect();
    // w(e): |<theta, cumulative parity of e>|^alpha for cell parities e
    let mut c: Vec<f64> = (0..n)
        .map(|e| {
            let mut parity = false;
            let mut dot = 0.0;
            for j in 0..d {
                parity ^= e >> j & 1 == 1;
                if parity {
                    dot += spec.thetas[j];
                }
            }
            dot.abs().powf(alpha)
        })
        .collect();
    // Walsh-Hadamard transform, c_s = 2^{-d} sum_e (-1)^{|s & e|} w(e)
    let mut h = 1;
    while h < n {
        for i in (0..n).step_by(2 * h) {
            for j in i..i + h {
                let (a, b) = (c[j], c[j + h]);
                c[j] = a + b;
                c[j + h] = a - b;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / n as f64;
    (0..n)
        .map(|s| {
            let measure: f64 = (0..d).filter(|j| s >> j & 1 == 1).map(|j| widths[j]).sum();
            ((1.0 - 2.0 * measure).clamp(-1.0, 1.0), c[s] * scale)
        })
        .collect()
}

/// `E |sum_j theta_j 1{odd number of a Sibuya cluster's uniforms in (0, t_j]}|^alpha`
/// by enumeration over the cluster size.
///
/// Cluster sizes are enumerated until the bound on the rest drops below
/// `tol`. Parity modes that do not decay with the size (`|z_s| = 1`) are
/// summed in closed form through the probability generating function.
pub fn lemma1_rhs(alpha: f64, beta: f64, spec: &FddSpec, tol: f64) -> Result<Lemma1Value> {
    lemma1_rhs_capped(alpha, beta, spec, tol, LEMMA1_MAX_TERMS)
}

/// [`lemma1_rhs`] with an explicit cap on the enumerated cluster size.
pub fn lemma1_rhs_capped(alpha: f64, beta: f64, spec: &FddSpec, tol: f64, max_terms: u64) -> Result<Lemma1Value> {
    check_alpha_beta(alpha, beta)?;
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if spec.times.len() > MAX_DIM {
        return Err(invalid(format!("dimension {} exceeds the cap of {MAX_DIM}", spec.times.len())));
    }
    let modes = parity_modes(alpha, spec);
    let mut persistent = Vec::new();
    let mut decaying = Vec::new();
    for (z, c) in modes {
        if c == 0.0 {
            continue;
        }
        if (1.0 - z.abs()) < 1e-12 {
            persistent.push((z.signum(), c));
        } else {
            decaying.push((z, c));
        }
    }
    let mut value = 0.0;
    // closed-form part: sum_l pmf(l) z^l = pgf(z)
    for &(z, c) in &persistent {
        value += c * sibuya_pgf(beta, z)?;
    }
    let mut powers: Vec<f64> = vec![1.0; decaying.len()];
    let weight_abs: f64 = decaying.iter().map(|(_, c)| c.abs()).sum();
    let zeta = decaying.iter().map(|(z, _)| z.abs()).fold(0.0, f64::max);
    let mut terms = 0;
    let mut tail_bound = weight_abs;
    for (ell, pmf, survival) in SibuyaTerms::new(beta)? {
        let mut f = 0.0;
        for (p, &(z, c)) in powers.iter_mut().zip(&decaying) {
            *p *= z;
            f += c * *p;
        }
        value += pmf * f;
        terms = ell;
        // sum_{l > ell} pmf(l) |z|^l <= survival(ell) zeta^{ell+1}
        tail_bound = weight_abs * survival * zeta.powf(ell as f64 + 1.0);
        if tail_bound < tol || decaying.is_empty() {
            break;
        }
        if ell >= max_terms {
            return Err(Error::TruncationCap(format!(
                "lemma1_rhs: bound {tail_bound:e} still above {tol:e} after {ell} cluster sizes"
            )));
        }
    }
    Ok(Lemma1Value { value: value.max(0.0), tail_bound: if decaying.is_empty() { 0.0 } else { tail_bound }, terms })
}

/// Open subinterval `(lo, hi)` of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OpenInterval {
    pub lo: f64,
    pub hi: f64,
}

impl OpenInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(invalid(format!("need 0 <= lo < hi <= 1, got ({lo}, {hi})")));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Lebesgue measure of a union of intervals (sort-and-merge sweep).
pub fn union_measure(intervals: &[OpenInterval]) -> f64 {
    let mut v = intervals.to_vec();
    v.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for iv in v {
        cur = match cur {
            Some((lo, hi)) if iv.lo <= hi => Some((lo, hi.max(iv.hi))),
            Some((lo, hi)) => {
                total += hi - lo;
                Some((iv.lo, iv.hi))
            }
            None => Some((iv.lo, iv.hi)),
        };
    }
    if let Some((lo, hi)) = cur {
        total += hi - lo;
    }
    total
}

/// Intervals with one threshold each.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalQuery {
    pub intervals: Vec<OpenInterval>,
    pub thresholds: Vec<f64>,
}

impl IntervalQuery {
    pub fn new(intervals: Vec<OpenInterval>, thresholds: Vec<f64>) -> Result<Self> {
        if intervals.is_empty() || intervals.len() != thresholds.len() {
            return Err(invalid("need one threshold per interval, and at least one interval"));
        }
        if thresholds.iter().any(|&x| !(x > 0.0)) {
            return Err(invalid("thresholds must be positive"));
        }
        Ok(Self { intervals, thresholds })
    }
}

/// `P(M(I_k) <= x_k for all k)` for the Karlin random sup-measure.
pub fn supmeasure_fdd_prob(alpha: f64, beta: f64, query: &IntervalQuery) -> Result<f64> {
    check_alpha_beta(alpha, beta)?;
    let mut order: Vec<(f64, OpenInterval)> = query
        .thresholds
        .iter()
        .zip(&query.intervals)
        .map(|(&x, &iv)| (x.powf(-alpha), iv))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0));
    // E max_k w_k 1{cluster hits I_k}, with P(hit A) = |A|^beta
    let mut expected_max = 0.0;
    let mut hit_prev = 0.0;
    let mut union = Vec::with_capacity(order.len());
    for (w, iv) in order {
        union.push(iv);
        let hit = union_measure(&union).powf(beta);
        expected_max += w * (hit - hit_prev);
        hit_prev = hit;
    }
    Ok((-expected_max).exp())
}
