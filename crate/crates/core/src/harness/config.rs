//! Experiment configuration: TOML files with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit::{KarlinParams, TailMode, DEFAULT_THETA_NORM};
use crate::model::{m_n_power_rule, ModelParams, PathMethod, SimulationPlan};
use crate::samplers::InnovationLaw;
use crate::theory::OpenInterval;

/// Seed used when a config does not set one.
pub const DEFAULT_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Clt,
    Ppp,
    Conditional,
    Supmeasure,
    SeriesVsTheory,
    GaussianCorr,
    Lemma1,
    TheoryEval,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Clt => "clt",
            Self::Ppp => "ppp",
            Self::Conditional => "conditional",
            Self::Supmeasure => "supmeasure",
            Self::SeriesVsTheory => "series_vs_theory",
            Self::GaussianCorr => "gaussian_corr",
            Self::Lemma1 => "lemma1",
            Self::TheoryEval => "theory_eval",
        }
    }

    fn needs_model(&self) -> bool {
        matches!(self, Self::Clt | Self::Ppp | Self::Conditional | Self::Supmeasure | Self::GaussianCorr)
    }

    fn needs_plan(&self) -> bool {
        !matches!(self, Self::Lemma1 | Self::TheoryEval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationKind {
    #[default]
    Pareto,
    Rademacher,
    Gaussian,
}

/// `[model]`: either explicit parameters or `preset = "enriquez"` with `hurst`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub hurst: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_prime: Option<f64>,
    pub rho: Option<f64>,
    pub c_x: Option<f64>,
    pub innovation: Option<InnovationKind>,
    pub variance: Option<f64>,
}

fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing field `{key}`")))
}

impl ModelSection {
    fn law(&self, alpha: Option<f64>) -> Result<InnovationLaw> {
        Ok(match self.innovation.unwrap_or_default() {
            InnovationKind::Pareto => InnovationLaw::SymmetrizedPareto {
                alpha: require(alpha, "model.alpha")?,
                c_x: self.c_x.unwrap_or(1.0),
            },
            InnovationKind::Rademacher => InnovationLaw::Rademacher,
            InnovationKind::Gaussian => InnovationLaw::Gaussian { variance: self.variance.unwrap_or(1.0) },
        })
    }

    pub fn build(&self) -> Result<ModelParams> {
        match self.preset.as_deref() {
            Some("enriquez") => {
                let hurst = require(self.hurst, "model.hurst")?;
                let law = match self.innovation {
                    None => InnovationLaw::Rademacher,
                    Some(_) => self.law(self.alpha)?,
                };
                ModelParams::enriquez(hurst, law)
            }
            Some(other) => Err(Error::Config(format!("unknown model.preset `{other}`"))),
            None => {
                let alpha = require(self.alpha, "model.alpha")?;
                let alpha_prime = require(self.alpha_prime, "model.alpha_prime")?;
                let rho = require(self.rho, "model.rho")?;
                let law = self.law(Some(alpha))?;
                let p = ModelParams::new(alpha_prime, rho, law)?;
                if p.alpha != alpha {
                    return Err(Error::Config(format!(
                        "model.alpha = {alpha} does not match the innovation law (tail index {})",
                        p.alpha
                    )));
                }
                Ok(p)
            }
        }
    }
}

/// `[limit]`: parameters of the limit process.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSection {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl LimitSection {
    pub fn build(&self) -> Result<KarlinParams> {
        KarlinParams::new(require(self.alpha, "limit.alpha")?, require(self.beta, "limit.beta")?)
    }
}

/// `[plan]`: sizes and grid. `m_n` may be given directly or as
/// `m_n_scale * n^m_n_exponent`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub n: Option<u64>,
    pub m_n: Option<u64>,
    pub m_n_exponent: Option<f64>,
    pub m_n_scale: Option<f64>,
    pub reps: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub path: Option<PathMethod>,
}

impl PlanSection {
    /// `(n, m_n, seed)` for experiments that draw single replicas.
    pub fn sizes(&self) -> Result<(u64, u64, u64)> {
        let n = require(self.n, "plan.n")?;
        let m_n = match (self.m_n, self.m_n_exponent) {
            (Some(m), _) => m,
            (None, Some(k)) => m_n_power_rule(n, self.m_n_scale.unwrap_or(1.0), k),
            (None, None) => return Err(Error::Config("missing field `plan.m_n` (or `plan.m_n_exponent`)".into())),
        };
        if n == 0 || m_n == 0 {
            return Err(Error::Config("plan.n and plan.m_n must be at least 1".into()));
        }
        Ok((n, m_n, self.seed.unwrap_or(DEFAULT_SEED)))
    }

    pub fn build(&self, needs_n: bool) -> Result<SimulationPlan> {
        let n = if needs_n { require(self.n, "plan.n")? } else { self.n.unwrap_or(1) };
        let m_n = match (self.m_n, self.m_n_exponent) {
            (Some(m), _) => m,
            (None, Some(k)) => m_n_power_rule(n, self.m_n_scale.unwrap_or(1.0), k),
            (None, None) if needs_n => return Err(Error::Config("missing field `plan.m_n` (or `plan.m_n_exponent`)".into())),
            (None, None) => 1,
        };
        Ok(SimulationPlan {
            n,
            m_n,
            reps: require(self.reps, "plan.reps")?,
            times: self.times.clone().ok_or_else(|| Error::Config("missing field `plan.times`".into()))?,
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            epsilon: self.epsilon.unwrap_or(1.0),
            path: self.path.unwrap_or_default(),
        })
    }
}

/// One explicit `(times, thetas)` case for the identity check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseSection {
    pub times: Vec<f64>,
    pub thetas: Vec<f64>,
}

/// `[checks]`: experiment-specific gates and their knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSection {
    pub thetas: Vec<f64>,
    /// Finite-n allowance added to ECF tolerances.
    pub allowance: f64,
    /// Thresholds `x` for void probabilities and for `M((0,1)) <= x`.
    pub thresholds: Vec<f64>,
    pub intervals: Vec<[f64; 2]>,
    pub interval_thresholds: Vec<f64>,
    /// Threshold of the conditional exceedance experiment.
    pub x: f64,
    pub accepted: usize,
    pub max_attempts: u64,
    /// Series tolerance.
    pub tol: f64,
    pub tail: TailKind,
    pub theta_norm: f64,
    pub cases: Vec<CaseSection>,
    pub random_cases: usize,
    pub rel_tol: f64,
    /// Significance level of KS gates.
    pub ks_level: f64,
    /// Significance level of chi-square gates.
    pub chisq_level: f64,
    /// Clusters of the limit process with more points than this are skipped
    /// when pooling locations.
    pub max_cluster_points: u64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            thetas: vec![0.5, 1.0, 2.0],
            allowance: 0.0,
            thresholds: vec![1.0, 2.0],
            intervals: vec![],
            interval_thresholds: vec![],
            x: 1.0,
            accepted: 1000,
            max_attempts: 100_000_000,
            tol: 1e-3,
            tail: TailKind::GaussianCompensation,
            theta_norm: DEFAULT_THETA_NORM,
            cases: vec![],
            random_cases: 10,
            rel_tol: 1e-5,
            ks_level: 0.01,
            chisq_level: 0.001,
            max_cluster_points: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailKind {
    Truncate,
    GaussianCompensation,
}

impl ChecksSection {
    pub fn tail_mode(&self) -> TailMode {
        match self.tail {
            TailKind::Truncate => TailMode::Truncate,
            TailKind::GaussianCompensation => TailMode::GaussianCompensation { theta_norm: self.theta_norm },
        }
    }

    pub fn open_intervals(&self) -> Result<Vec<OpenInterval>> {
        self.intervals.iter().map(|[a, b]| OpenInterval::new(*a, *b)).collect()
    }
}

/// `[output]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub json: bool,
    pub csv: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), json: true, csv: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub limit: LimitSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub checks: ChecksSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Parsed `key=value` override; the value is read as a TOML literal when
/// possible and as a bare string otherwise.
pub fn parse_override(text: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.to_string(), value))
}

fn apply_override(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("nonempty key");
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        for (k, v) in overrides {
            apply_override(&mut table, k, v.clone())?;
        }
        if !table.contains_key("experiment") {
            return Err(Error::Config("missing field `experiment`".into()));
        }
        toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    pub fn from_path(path: &Path, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("cannot read {}: {e}", path.display()))))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        self.model.build()
    }

    pub fn limit_params(&self) -> Result<KarlinParams> {
        self.limit.build()
    }

    pub fn simulation_plan(&self) -> Result<SimulationPlan> {
        self.plan.build(self.experiment.needs_model())
    }

    /// Builds every section the experiment uses and returns the plan warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = vec![];
        if self.experiment == ExperimentKind::Conditional {
            self.model_params()?;
            self.plan.sizes()?;
            if !(self.checks.x > 0.0) || self.checks.accepted < 10 {
                return Err(Error::Config("checks.x must be positive and checks.accepted at least 10".into()));
            }
        } else if self.experiment.needs_model() {
            let params = self.model_params()?;
            let plan = self.simulation_plan()?;
            warnings.extend(plan.validate(&params)?.iter().map(|w| w.to_string()));
        } else {
            self.limit_params()?;
            if self.experiment.needs_plan() {
                let plan = self.simulation_plan()?;
                crate::special::validate_times(&plan.times)?;
                if plan.reps < 2 {
                    return Err(Error::Config("plan.reps must be at least 2".into()));
                }
            }
        }
        match self.experiment {
            ExperimentKind::Clt | ExperimentKind::SeriesVsTheory if self.checks.thetas.is_empty() => {
                return Err(Error::Config("checks.thetas must not be empty".into()));
            }
            ExperimentKind::Supmeasure => {
                self.checks.open_intervals()?;
                if self.checks.intervals.len() != self.checks.interval_thresholds.len() {
                    return Err(Error::Config("checks.intervals and checks.interval_thresholds differ in length".into()));
                }
            }
            ExperimentKind::Ppp if self.checks.thresholds.iter().any(|&x| x < self.plan.epsilon.unwrap_or(1.0)) => {
                return Err(Error::Config("checks.thresholds must not be below plan.epsilon".into()));
            }
            ExperimentKind::SeriesVsTheory if !(self.checks.tol > 0.0) => {
                return Err(Error::Config("checks.tol must be positive".into()));
            }
            _ => {}
        }
        Ok(warnings)
    }
}
