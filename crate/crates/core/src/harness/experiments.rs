//! Experiment runners. Each turns a validated config into a list of gates.

use rayon::prelude::*;
use serde_json::json;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::config::{ExperimentConfig, ExperimentKind, DEFAULT_SEED};
use super::report::{Check, Report};
use crate::error::{Error, Result};
use crate::limit::{
    fbm_corr, fbm_cov, limit_point_process_sample, limit_supmeasure_sample, GaussianFdd, KarlinParams, SeriesSampler,
};
use crate::model::{aggregate_fdd, conditional_exceedance_run, extract_extremal_points, sup_measure_samples, ModelParams};
use crate::rng::{tags, RandomStream};
use crate::special::{c_alpha, gamma_mixture_cdf, sibuya_pmf, ParityPattern};
use crate::stats::{
    correlation_se, ecf_estimate, kolmogorov_quantile, ks_test, ks_two_sample, mean_se, pmf_chisq, proportion_se,
    KsResult,
};
use crate::theory::{cf_exponent, cf_theoretical, lemma1_rhs, m_coeff, supmeasure_fdd_prob, FddSpec, IntervalQuery, OpenInterval};

const REF_STABLE_CF: &str = "stable limit of the aggregated sums (characteristic function)";
const REF_SYMMETRY: &str = "symmetry of the limit law";
const REF_FBM_CORR: &str = "fractional Brownian limit of the finite-variance model (correlation)";
const REF_GAUSS_COV: &str = "covariance of the Gaussian limit";
const REF_RATE: &str = "exceedance rate of a single replica";
const REF_SIZE: &str = "conditional success count is Sibuya";
const REF_NQ: &str = "conditional nq follows the gamma mixture";
const REF_MAG: &str = "conditional magnitude is Pareto";
const REF_VOID: &str = "void probability of the limit point process";
const REF_COUNT: &str = "cluster count of the limit point process";
const REF_LOC: &str = "uniform locations of the limit point process";
const REF_MAX: &str = "aggregated and limit maxima agree in law";
const REF_SUP: &str = "Frechet finite-dimensional laws of the random sup-measure";
const REF_SERIES: &str = "series representation against the characteristic function";
const REF_IDENTITY: &str = "parity-moment identity behind the characteristic function";
const REF_CLOSED: &str = "closed-form values";

/// Passes when the KS statistic is below the asymptotic critical value at `level`.
fn ks_check(id: String, target_ref: &str, r: &KsResult, level: f64) -> Check {
    let critical = kolmogorov_quantile(level) / r.effective_n.sqrt();
    Check::within(id, target_ref, r.effective_n, r.statistic, 0.0, 0.0, critical)
}

/// Proportion check with the binomial standard error at the target.
fn proportion_check(id: String, target_ref: &str, x: f64, hits: usize, n: usize, target: f64, k: f64) -> Check {
    let se = proportion_se(target, n);
    Check::within(id, target_ref, x, hits as f64 / n as f64, target, se, k * se)
}

fn column(samples: &[Vec<f64>], k: usize) -> Vec<f64> {
    samples.iter().map(|v| v[k]).collect()
}

fn ecf_checks(
    checks: &mut Vec<Check>,
    samples: &[Vec<f64>],
    times: &[f64],
    thetas: &[f64],
    alpha: f64,
    beta: f64,
    allowance: f64,
    target_ref: &str,
) -> Result<()> {
    for (k, &t) in times.iter().enumerate() {
        let col: Vec<Vec<f64>> = samples.iter().map(|v| vec![v[k]]).collect();
        for &theta in thetas {
            let e = ecf_estimate(&col, &[theta])?;
            let target = cf_theoretical(alpha, beta, &FddSpec::new(vec![t], vec![theta])?)?;
            checks.push(Check::within(
                format!("ecf_t{t}_theta{theta}"),
                target_ref,
                theta,
                e.real_part,
                target,
                e.std_error,
                4.0 * e.std_error + allowance,
            ));
            checks.push(Check::within(
                format!("imag_t{t}_theta{theta}"),
                REF_SYMMETRY,
                theta,
                e.imag_part,
                0.0,
                e.imag_std_error,
                4.0 * e.imag_std_error,
            ));
        }
    }
    Ok(())
}

fn gaussian_cov_checks(checks: &mut Vec<Check>, beta: f64, times: &[f64], reps: usize, seed: u64) -> Result<()> {
    let g = GaussianFdd::new(beta, times)?;
    let root = RandomStream::new(seed).derive(1, tags::EXPERIMENT);
    let samples: Vec<Vec<f64>> = (0..reps as u64).into_par_iter().map(|s| g.sample(&mut root.derive(s, tags::SAMPLE))).collect();
    for k in 0..times.len() {
        for l in k..times.len() {
            let prods: Vec<f64> = samples.iter().map(|v| v[k] * v[l]).collect();
            let (m, se) = mean_se(&prods);
            checks.push(Check::within(
                format!("gauss_cov_{}_{}", times[k], times[l]),
                REF_GAUSS_COV,
                times[l],
                m,
                fbm_cov(beta, times[k], times[l]),
                se,
                4.0 * se,
            ));
        }
    }
    Ok(())
}

fn clt(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Vec<Check>> {
    let plan = cfg.simulation_plan()?;
    let samples = aggregate_fdd(params, &plan)?;
    let mut checks = vec![];
    ecf_checks(
        &mut checks,
        &samples,
        &plan.times,
        &cfg.checks.thetas,
        params.alpha,
        params.beta(),
        cfg.checks.allowance,
        REF_STABLE_CF,
    )?;
    Ok(checks)
}

fn gaussian_corr(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Vec<Check>> {
    if params.alpha != 2.0 {
        return Err(Error::Config("gaussian_corr needs a finite-variance model (alpha = 2)".into()));
    }
    let plan = cfg.simulation_plan()?;
    let beta = params.beta();
    let samples = aggregate_fdd(params, &plan)?;
    let mut checks = vec![];
    for k in 0..plan.times.len() {
        for l in k + 1..plan.times.len() {
            let (s, t) = (plan.times[k], plan.times[l]);
            let (r, se) = correlation_se(&column(&samples, k), &column(&samples, l))?;
            checks.push(Check::within(format!("corr_{s}_{t}"), REF_FBM_CORR, t, r, fbm_corr(beta, s, t), se, 4.0 * se));
        }
    }
    gaussian_cov_checks(&mut checks, beta, &plan.times, plan.reps, plan.seed)?;
    Ok(checks)
}

fn conditional(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Vec<Check>> {
    let (n, m_n, seed) = cfg.plan.sizes()?;
    let c = &cfg.checks;
    let run = conditional_exceedance_run(params, n, m_n, c.x, seed, c.accepted, c.max_attempts)?;
    let beta = params.beta();
    let target = c.x.powf(-params.alpha);
    let (rate, se) = run.acceptance_rate();
    let mut checks = vec![Check::within("rate", REF_RATE, c.x, m_n as f64 * rate, target, m_n as f64 * se, 0.1 * target)];
    let total = run.draws.len();
    for k in 1..=3u64 {
        let hits = run.draws.iter().filter(|d| d.tau_n == k).count();
        checks.push(proportion_check(format!("tau_pmf_{k}"), REF_SIZE, k as f64, hits, total, sibuya_pmf(beta, k)?, 3.0));
    }
    let nq: Vec<f64> = run.draws.iter().map(|d| d.nq).collect();
    let ks = ks_test(&nq, |v| gamma_mixture_cdf(beta, v).expect("beta validated"))?;
    checks.push(ks_check("nq_ks".into(), REF_NQ, &ks, c.ks_level));
    let mags: Vec<f64> = run.draws.iter().map(|d| d.magnitude.abs() / c.x).collect();
    let alpha = params.alpha;
    let ks = ks_test(&mags, |y| if y <= 1.0 { 0.0 } else { -(-alpha * y.ln()).exp_m1() })?;
    checks.push(ks_check("magnitude_ks".into(), REF_MAG, &ks, c.ks_level));
    Ok(checks)
}

fn ppp(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Vec<Check>> {
    let plan = cfg.simulation_plan()?;
    let c = &cfg.checks;
    let alpha = params.alpha;
    let limit = KarlinParams::new(alpha, params.beta())?;
    let reps = plan.reps;
    let pick_root = RandomStream::new(plan.seed).derive(2, tags::EXPERIMENT);

    let model = extract_extremal_points(params, &plan, false)?;
    let model_max: Vec<f64> = model.iter().map(|s| s.points.max_abs()).collect();
    let model_counts: Vec<f64> = model.iter().map(|s| s.clusters.len() as f64).collect();
    let model_locs: Vec<f64> = model
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.points.points.is_empty())
        .map(|(r, s)| {
            let pts = &s.points.points;
            let k = (pick_root.derive(r as u64, 0).uniform() * pts.len() as f64) as usize;
            pts[k.min(pts.len() - 1)].location
        })
        .collect();

    let limit_root = RandomStream::new(plan.seed).derive(3, tags::EXPERIMENT);
    let limits = (0..reps as u64)
        .into_par_iter()
        .map(|s| limit_point_process_sample(&limit, plan.epsilon, &mut limit_root.derive(s, tags::SAMPLE), false))
        .collect::<Result<Vec<_>>>()?;
    let limit_max: Vec<f64> = limits.iter().map(|l| l.max_abs()).collect();
    let limit_counts: Vec<f64> = limits.iter().map(|l| l.clusters.len() as f64).collect();
    let limit_locs: Vec<f64> = limits
        .iter()
        .enumerate()
        .filter_map(|(r, l)| {
            let cl = l.clusters.iter().find(|c| c.size <= c_max(cfg))?;
            let k = (pick_root.derive(r as u64, 1).uniform() * cl.size as f64) as usize;
            cl.locations().nth(k.min(cl.size as usize - 1))
        })
        .collect();

    let mut checks = vec![];
    for (label, maxima) in [("model", &model_max), ("limit", &limit_max)] {
        for &x in &c.thresholds {
            let hits = maxima.iter().filter(|&&m| m <= x).count();
            checks.push(proportion_check(format!("void_{label}_x{x}"), REF_VOID, x, hits, reps, (-x.powf(-alpha)).exp(), 3.0));
        }
    }
    let target = plan.epsilon.powf(-alpha);
    for (label, counts) in [("model", &model_counts), ("limit", &limit_counts)] {
        let (m, se) = mean_se(counts);
        checks.push(Check::within(format!("cluster_count_{label}"), REF_COUNT, plan.epsilon, m, target, se, 3.0 * se));
    }
    for (label, locs) in [("model", &model_locs), ("limit", &limit_locs)] {
        let ks = ks_test(locs, |x| x.clamp(0.0, 1.0))?;
        checks.push(ks_check(format!("locations_{label}"), REF_LOC, &ks, c.ks_level));
    }
    let ks = ks_two_sample(&model_max, &limit_max)?;
    checks.push(ks_check("max_two_sample".into(), REF_MAX, &ks, c.ks_level));
    Ok(checks)
}

fn c_max(cfg: &ExperimentConfig) -> u64 {
    cfg.checks.max_cluster_points.max(1)
}

fn supmeasure(cfg: &ExperimentConfig, params: &ModelParams) -> Result<Vec<Check>> {
    let plan = cfg.simulation_plan()?;
    let c = &cfg.checks;
    let (alpha, beta) = (params.alpha, params.beta());
    let whole = OpenInterval::new(0.0, 1.0)?;
    let extra = c.open_intervals()?;
    let mut intervals = vec![whole];
    intervals.extend(extra.iter().copied());
    let model = sup_measure_samples(params, &plan, &intervals)?;
    let limit = KarlinParams::new(alpha, beta)?;
    let root = RandomStream::new(plan.seed).derive(4, tags::EXPERIMENT);
    let limits = (0..plan.reps as u64)
        .into_par_iter()
        .map(|s| limit_supmeasure_sample(&limit, &intervals, &mut root.derive(s, tags::SAMPLE)))
        .collect::<Result<Vec<_>>>()?;
    let mut checks = vec![];
    for (label, samples) in [("model", &model), ("limit", &limits)] {
        for &x in &c.thresholds {
            let target = supmeasure_fdd_prob(alpha, beta, &IntervalQuery::new(vec![whole], vec![x])?)?;
            let hits = samples.iter().filter(|m| m[0] <= x).count();
            checks.push(proportion_check(format!("sup_{label}_whole_x{x}"), REF_SUP, x, hits, plan.reps, target, 3.0));
        }
        if !extra.is_empty() {
            let target = supmeasure_fdd_prob(alpha, beta, &IntervalQuery::new(extra.clone(), c.interval_thresholds.clone())?)?;
            let hits = samples
                .iter()
                .filter(|m| m[1..].iter().zip(&c.interval_thresholds).all(|(v, x)| v <= x))
                .count();
            checks.push(proportion_check(format!("sup_{label}_joint"), REF_SUP, 0.0, hits, plan.reps, target, 3.0));
        }
    }
    Ok(checks)
}

fn series_vs_theory(cfg: &ExperimentConfig, limit: &KarlinParams) -> Result<Vec<Check>> {
    let plan = cfg.simulation_plan()?;
    let c = &cfg.checks;
    let sampler = SeriesSampler::new(*limit, &plan.times, c.tol, c.tail_mode())?;
    let root = RandomStream::new(plan.seed);
    let samples: Vec<Vec<f64>> =
        (0..plan.reps as u64).into_par_iter().map(|s| sampler.sample(&mut root.derive(s, tags::SAMPLE))).collect();
    let mut checks = vec![];
    ecf_checks(&mut checks, &samples, &plan.times, &c.thetas, limit.alpha, limit.beta, 2.0 * c.tol, REF_SERIES)?;
    gaussian_cov_checks(&mut checks, limit.beta, &plan.times, plan.reps, plan.seed)?;
    Ok(checks)
}

/// Random `(times, thetas)` case with `d <= 3`.
fn random_case(stream: &mut RandomStream) -> (Vec<f64>, Vec<f64>) {
    let d = 1 + (stream.uniform() * 3.0) as usize;
    let mut times: Vec<f64> = (0..d).map(|_| 0.05 + 0.95 * stream.uniform()).collect();
    times.sort_by(f64::total_cmp);
    if stream.coin() {
        times[d - 1] = 1.0;
    }
    let thetas = (0..d).map(|_| stream.standard_normal()).collect();
    (times, thetas)
}

fn lemma1(cfg: &ExperimentConfig, limit: &KarlinParams) -> Result<Vec<Check>> {
    let c = &cfg.checks;
    let mut cases: Vec<(Vec<f64>, Vec<f64>)> = c.cases.iter().map(|k| (k.times.clone(), k.thetas.clone())).collect();
    let root = RandomStream::new(cfg.plan.seed.unwrap_or(DEFAULT_SEED)).derive(5, tags::EXPERIMENT);
    cases.extend((0..c.random_cases as u64).map(|k| random_case(&mut root.derive(k, 0))));
    let c_a = c_alpha(limit.alpha)?;
    cases
        .iter()
        .enumerate()
        .map(|(k, (times, thetas))| {
            let spec = FddSpec::new(times.clone(), thetas.clone())?;
            let quad = c_a * cf_exponent(limit.alpha, limit.beta, &spec)?;
            let enumerated = lemma1_rhs(limit.alpha, limit.beta, &spec, 1e-3 * c.rel_tol * quad.max(1e-300))?;
            Ok(Check::within(
                format!("identity_case{k}"),
                REF_IDENTITY,
                k as f64,
                enumerated.value,
                quad,
                enumerated.tail_bound,
                c.rel_tol * quad.abs(),
            ))
        })
        .collect()
}

/// `P(Poisson(lambda) is odd)` by direct summation of the pmf.
fn poisson_odd_brute(lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let kmax = (lambda + 40.0 * lambda.sqrt() + 60.0) as u64;
    let mut term = (-lambda).exp();
    let mut odd = 0.0;
    for k in 1..=kmax {
        term *= lambda / k as f64;
        if k % 2 == 1 {
            odd += term;
        }
    }
    odd
}

fn theory_eval(_cfg: &ExperimentConfig, limit: &KarlinParams) -> Result<Vec<Check>> {
    let (alpha, beta) = (limit.alpha, limit.beta);
    let mut checks = vec![];
    let mut pmf = beta;
    for l in 1..=3u64 {
        if l > 1 {
            pmf *= (l as f64 - 1.0 - beta) / l as f64;
        }
        checks.push(Check::within(format!("sibuya_pmf_{l}"), REF_CLOSED, l as f64, sibuya_pmf(beta, l)?, pmf, 0.0, 1e-14));
    }
    let two_over_pi = 2.0 / std::f64::consts::PI;
    checks.push(Check::within("c_alpha_1", REF_CLOSED, 1.0, c_alpha(1.0)?, two_over_pi, 0.0, 1e-14));
    checks.push(Check::within("c_alpha_2", REF_CLOSED, 2.0, c_alpha(2.0)?, 2.0, 0.0, 0.0));
    let single = ParityPattern::new(vec![1.0], vec![true])?;
    let closed = 2f64.powf(beta - 1.0) / c_alpha(alpha)?;
    checks.push(Check::within("m_coeff_single", REF_CLOSED, alpha, m_coeff(alpha, beta, &single)?, closed, 0.0, 1e-7 * closed));
    let times = vec![0.2, 0.55, 1.0];
    for mask in 0..8u64 {
        let pattern = ParityPattern::from_mask(times.clone(), mask)?;
        for q in [0.01, 0.7, 5.0, 60.0] {
            let mut brute = 1.0;
            let (mut prev_t, mut prev_d) = (0.0, false);
            for (&t, &d) in pattern.times().iter().zip(pattern.delta()) {
                let odd = poisson_odd_brute(q * (t - prev_t));
                brute *= if d != prev_d { odd } else { 1.0 - odd };
                prev_t = t;
                prev_d = d;
            }
            let p = crate::special::poisson_parity_prob(&pattern, q);
            checks.push(Check::within(format!("parity_mask{mask}_q{q}"), REF_CLOSED, q, p, brute, 0.0, 1e-10));
        }
    }
    Ok(checks)
}

/// Resolved parameters recorded in the report header.
fn params_json(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let mut v = json!({ "checks": cfg.checks });
    match cfg.experiment {
        ExperimentKind::Conditional => {
            let p = cfg.model_params()?;
            let (n, m_n, seed) = cfg.plan.sizes()?;
            v["model"] = serde_json::to_value(p)?;
            v["beta"] = json!(p.beta());
            v["plan"] = json!({ "n": n, "m_n": m_n, "seed": seed });
        }
        ExperimentKind::Clt | ExperimentKind::Ppp | ExperimentKind::Supmeasure | ExperimentKind::GaussianCorr => {
            let p = cfg.model_params()?;
            v["model"] = serde_json::to_value(p)?;
            v["beta"] = json!(p.beta());
            v["plan"] = serde_json::to_value(cfg.simulation_plan()?)?;
        }
        ExperimentKind::SeriesVsTheory => {
            v["limit"] = serde_json::to_value(cfg.limit_params()?)?;
            v["plan"] = serde_json::to_value(cfg.simulation_plan()?)?;
        }
        ExperimentKind::Lemma1 | ExperimentKind::TheoryEval => {
            v["limit"] = serde_json::to_value(cfg.limit_params()?)?;
            v["seed"] = json!(cfg.plan.seed.unwrap_or(DEFAULT_SEED));
        }
    }
    Ok(v)
}

/// Runs the experiment on the current rayon pool and collects its gates.
pub fn execute(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let checks = match cfg.experiment {
        ExperimentKind::Clt => clt(cfg, &cfg.model_params()?)?,
        ExperimentKind::GaussianCorr => gaussian_corr(cfg, &cfg.model_params()?)?,
        ExperimentKind::Conditional => conditional(cfg, &cfg.model_params()?)?,
        ExperimentKind::Ppp => ppp(cfg, &cfg.model_params()?)?,
        ExperimentKind::Supmeasure => supmeasure(cfg, &cfg.model_params()?)?,
        ExperimentKind::SeriesVsTheory => series_vs_theory(cfg, &cfg.limit_params()?)?,
        ExperimentKind::Lemma1 => lemma1(cfg, &cfg.limit_params()?)?,
        ExperimentKind::TheoryEval => theory_eval(cfg, &cfg.limit_params()?)?,
    };
    Ok(Report { experiment: cfg.experiment.name().to_string(), params: params_json(cfg)?, checks })
}

/// Upper critical value of the chi-square law with `dof` degrees of freedom.
pub fn chi_square_critical(dof: usize, level: f64) -> f64 {
    ChiSquared::new(dof as f64).expect("positive dof").inverse_cdf(1.0 - level)
}

/// Pearson check: passes when the statistic is below the critical value at `level`.
pub fn chisq_check(id: String, target_ref: &str, observed: &[u64], expected: &[f64], level: f64) -> Result<Check> {
    let r = pmf_chisq(observed, expected)?;
    let critical = chi_square_critical(r.dof, level);
    Ok(Check::within(id, target_ref, r.dof as f64, r.statistic, 0.0, 0.0, critical))
}
