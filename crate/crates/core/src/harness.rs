//! Monte-Carlo experiment orchestration and calibration/power reports.
//!
//! Replication `i` simulates its trajectory from its own seed, derived
//! from the master seed by [`replication_seed`]. Replications run in
//! parallel, but aggregation walks them in index order, so a report depends
//! only on the config and the master seed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::adaptive_sim::{run_eps_greedy, run_etc, run_uniform, EpsGreedyParams, EtcParams, Trajectory};
use crate::baselines::{aw_aipw_test, cadr_ate_test, Allocation, BaselineConfig};
use crate::error::{Error, Result};
use crate::kte_test::{dr_kte_unstabilized, normal_cdf, vs_dr_kte, TestConfig};
use crate::scenarios::{load_covariate_pool, Environment, ImageEnvSpec, OutcomeModel, Scenario, ScenarioSpec};

/// Replications that may fail (per method) before the run aborts.
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Environment variable that overrides `master_seed`.
pub const SEED_ENV_VAR: &str = "AKTE_MASTER_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    VsDrKte,
    DrKteUnstabilized,
    Cadr,
    AwAipwConstant,
    AwAipwTwoPoint,
}

impl Method {
    pub const ALL: [Method; 5] =
        [Method::VsDrKte, Method::DrKteUnstabilized, Method::Cadr, Method::AwAipwConstant, Method::AwAipwTwoPoint];

    pub fn name(self) -> &'static str {
        match self {
            Method::VsDrKte => "vs-dr-kte",
            Method::DrKteUnstabilized => "dr-kte-unstabilized",
            Method::Cadr => "cadr",
            Method::AwAipwConstant => "aw-aipw-constant",
            Method::AwAipwTwoPoint => "aw-aipw-two-point",
        }
    }

    pub fn available() -> String {
        Self::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    /// Accepts kebab-case or snake_case names.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::UnknownMethod { name: s.to_string(), available: Self::available() })
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum EnvConfig {
    Synthetic(ScenarioSpec),
    Image(ImageEnvSpec),
    /// CSV covariates with the synthetic outcome overlay.
    Pool {
        path: PathBuf,
        model: OutcomeModel,
        scenario: Scenario,
        #[serde(default = "default_true")]
        standardize: bool,
    },
}

fn default_true() -> bool {
    true
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Synthetic(ScenarioSpec::default())
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Environment> {
        match self {
            EnvConfig::Synthetic(s) => Environment::synthetic(s.clone()),
            EnvConfig::Image(s) => Environment::image(s.clone()),
            EnvConfig::Pool { path, model, scenario, standardize } => {
                let pool = load_covariate_pool(path, *standardize)?;
                Environment::pool(Arc::new(pool), *model, *scenario)
            }
        }
    }

    /// Short label used in report tables.
    pub fn label(&self) -> String {
        let model = |m: &OutcomeModel| match m {
            OutcomeModel::Cosine => "cosine",
            OutcomeModel::Linear => "linear",
            OutcomeModel::Sigmoid => "sigmoid",
        };
        match self {
            EnvConfig::Synthetic(s) => format!("{:?}-{}", s.scenario, model(&s.model)),
            EnvConfig::Image(s) if s.shift_delta == 0.0 => "image-null".into(),
            EnvConfig::Image(_) => "image-shift".into(),
            EnvConfig::Pool { model: m, scenario, .. } => format!("pool-{scenario:?}-{}", model(m)),
        }
    }

    /// Copy with the outcome scenario replaced; image environments have none.
    pub fn with_scenario(&self, scenario: Scenario) -> Result<Self> {
        match self {
            EnvConfig::Synthetic(s) => Ok(EnvConfig::Synthetic(ScenarioSpec { scenario, ..s.clone() })),
            EnvConfig::Pool { path, model, standardize, .. } => {
                Ok(EnvConfig::Pool { path: path.clone(), model: *model, scenario, standardize: *standardize })
            }
            EnvConfig::Image(_) => Err(Error::Input("image environments have no scenario to sweep".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum PolicyConfig {
    EpsGreedy(EpsGreedyParams),
    ExploreThenCommit(EtcParams),
    Uniform,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::EpsGreedy(EpsGreedyParams::default())
    }
}

impl PolicyConfig {
    pub fn simulate(&self, env: &Environment, horizon: usize, seed: u64) -> Result<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self {
            PolicyConfig::EpsGreedy(p) => run_eps_greedy(env, horizon, p, seed, &mut rng),
            PolicyConfig::ExploreThenCommit(p) => run_etc(env, horizon, p, seed, &mut rng),
            PolicyConfig::Uniform => run_uniform(env, horizon, seed, &mut rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Overrides the environment label in reports.
    pub name: Option<String>,
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub horizon: usize,
    pub n_reps: usize,
    pub methods: Vec<Method>,
    /// Applied to both the kernel tests and the baselines.
    pub alpha: f64,
    /// Kernels, ridge, split and weights for the kernel tests.
    pub test: TestConfig,
    pub baselines: BaselineConfig,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: None,
            env: EnvConfig::default(),
            policy: PolicyConfig::default(),
            horizon: 1000,
            n_reps: 200,
            methods: vec![Method::VsDrKte],
            alpha: 0.05,
            test: TestConfig::default(),
            baselines: BaselineConfig::default(),
            master_seed: 0,
            threads: None,
            output_dir: None,
        }
    }
}

fn config_error(path: &str, msg: impl Into<String>) -> Error {
    Error::Config { path: path.to_string(), msg: msg.into() }
}

/// Deserializes `json`, reporting the offending field path on failure.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(json: &str, source: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(json);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        let msg = format!("field `{field}`: {inner}");
        config_error(source, msg)
    })
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: Self = parse_json(json, "<inline>")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let source = path.display().to_string();
        let cfg: Self = parse_json(&text, &source)?;
        cfg.validate().map_err(|e| match e {
            Error::Config { msg, .. } => config_error(&source, msg),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_reps < 1 {
            return Err(config_error("<config>", "field `n_reps`: must be at least 1"));
        }
        if self.horizon < 4 {
            return Err(config_error("<config>", "field `horizon`: must be at least 4"));
        }
        if self.methods.is_empty() {
            return Err(config_error("<config>", format!("field `methods`: empty (available: {})", Method::available())));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_error("<config>", "field `alpha`: must lie in (0, 1)"));
        }
        if self.threads == Some(0) {
            return Err(config_error("<config>", "field `threads`: must be positive"));
        }
        self.test_config().validate().map_err(|e| config_error("<config>", format!("field `test`: {e}")))?;
        self.baseline_config().validate().map_err(|e| config_error("<config>", format!("field `baselines`: {e}")))
    }

    pub fn test_config(&self) -> TestConfig {
        TestConfig { alpha: self.alpha, ..self.test.clone() }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig { alpha: self.alpha, ..self.baselines }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.env.label())
    }

    /// Replaces `master_seed` with the value of [`SEED_ENV_VAR`] when set.
    pub fn apply_seed_override(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV_VAR) {
            self.master_seed = v
                .trim()
                .parse()
                .map_err(|_| config_error(SEED_ENV_VAR, format!("not an unsigned integer: '{v}'")))?;
        }
        Ok(())
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index`: output number `index + 1` of a SplitMix64
/// stream started at `master`, i.e. `mix(master + (index + 1) * 0x9E3779B97F4A7C15)`.
pub fn replication_seed(master: u64, index: usize) -> u64 {
    splitmix64_mix(master.wrapping_add((index as u64).wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Outcome of one method on one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: Method,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    /// Error kind when the method failed.
    pub error: Option<String>,
}

impl MethodRecord {
    fn ok(method: Method, statistic: f64, p_value: f64, reject: bool) -> Self {
        Self { method, statistic: Some(statistic), p_value: Some(p_value), reject: Some(reject), error: None }
    }

    fn failed(method: Method, e: &Error) -> Self {
        Self { method, statistic: None, p_value: None, reject: None, error: Some(e.kind().to_string()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub outcomes: Vec<MethodRecord>,
}

/// Runs one method on a trajectory.
pub fn run_method(method: Method, traj: &Trajectory, test: &TestConfig, base: &BaselineConfig) -> Result<MethodRecord> {
    let kernel = |o: crate::kte_test::TestOutcome| MethodRecord::ok(method, o.statistic, o.p_value, o.reject);
    let scalar = |o: crate::baselines::ScalarTestOutcome| MethodRecord::ok(method, o.statistic, o.p_value, o.reject);
    match method {
        Method::VsDrKte => vs_dr_kte(traj, test).map(kernel),
        Method::DrKteUnstabilized => dr_kte_unstabilized(traj, test).map(kernel),
        Method::Cadr => cadr_ate_test(traj, base).map(scalar),
        Method::AwAipwConstant => aw_aipw_test(traj, Allocation::Constant, None, base).map(scalar),
        Method::AwAipwTwoPoint => aw_aipw_test(traj, Allocation::TwoPoint, None, base).map(scalar),
    }
}

fn run_replication(cfg: &ExperimentConfig, env: &Environment, index: usize) -> ReplicationRecord {
    let seed = replication_seed(cfg.master_seed, index);
    let (test, base) = (cfg.test_config(), cfg.baseline_config());
    let outcomes = match cfg.policy.simulate(env, cfg.horizon, seed) {
        Ok(traj) => cfg
            .methods
            .iter()
            .map(|&m| run_method(m, &traj, &test, &base).unwrap_or_else(|e| MethodRecord::failed(m, &e)))
            .collect(),
        Err(e) => cfg.methods.iter().map(|&m| MethodRecord::failed(m, &e)).collect(),
    };
    ReplicationRecord { index, seed, outcomes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// `count / (n * width)`, comparable to `normal_pdf`.
    pub density: Vec<f64>,
    /// Standard normal density at bin centres.
    pub normal_pdf: Vec<f64>,
    pub below: usize,
    pub above: usize,
}

pub const HIST_RANGE: (f64, f64) = (-5.0, 5.0);
pub const HIST_BINS: usize = 40;

pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if !(hi > lo) || bins == 0 {
        return Err(Error::Input("histogram needs hi > lo and at least one bin".into()));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + k as f64 * width).collect();
    let mut counts = vec![0usize; bins];
    let (mut below, mut above) = (0, 0);
    for &s in samples {
        if s < lo {
            below += 1;
        } else if s >= hi {
            above += 1;
        } else {
            counts[(((s - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = samples.len().max(1) as f64;
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let normal_pdf = (0..bins)
        .map(|k| {
            let z = lo + (k as f64 + 0.5) * width;
            (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
        })
        .collect();
    Ok(Histogram { edges, counts, density, normal_pdf, below, above })
}

/// Sorted samples against standard normal quantiles at `(i + 0.5) / n`.
pub fn qq_pairs(samples: &[f64]) -> Vec<(f64, f64)> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.into_iter().enumerate().map(|(i, s)| (normal.inverse_cdf((i as f64 + 0.5) / n), s)).collect()
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `samples` and
/// the standard normal CDF.
pub fn ks_distance(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Input("KS distance of an empty sample".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("KS distance of a non-finite sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        let f = normal_cdf(s);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    /// Failure counts by error kind.
    pub failures: BTreeMap<String, usize>,
    pub reject_rate: f64,
    /// Binomial standard error `sqrt(rate (1 - rate) / n_ok)`.
    pub stderr: f64,
    pub ks: f64,
    pub mean_stat: f64,
    /// Sample variance (divisor `n - 1`; zero for a single replication).
    pub var_stat: f64,
    pub histogram: Histogram,
    /// `(normal quantile, sorted statistic)`, ascending.
    pub qq: Vec<(f64, f64)>,
}

fn summarize(method: Method, records: &[ReplicationRecord]) -> Result<MethodSummary> {
    let total = records.len();
    let mut stats = Vec::with_capacity(total);
    let mut rejects = 0usize;
    let mut failures = BTreeMap::new();
    for r in records {
        let Some(o) = r.outcomes.iter().find(|o| o.method == method) else { continue };
        match (o.statistic, o.reject) {
            (Some(s), Some(rej)) => {
                stats.push(s);
                rejects += usize::from(rej);
            }
            _ => *failures.entry(o.error.clone().unwrap_or_else(|| "unknown".into())).or_insert(0) += 1,
        }
    }
    let n_failed = total - stats.len();
    if n_failed as f64 > MAX_FAILURE_RATE * total as f64 || stats.is_empty() {
        return Err(Error::TooManyFailures { method: method.name().into(), failed: n_failed, total });
    }
    let n = stats.len() as f64;
    let reject_rate = rejects as f64 / n;
    let mean_stat = stats.iter().sum::<f64>() / n;
    let var_stat =
        if stats.len() > 1 { stats.iter().map(|s| (s - mean_stat).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(MethodSummary {
        method,
        n_ok: stats.len(),
        n_failed,
        failures,
        reject_rate,
        stderr: (reject_rate * (1.0 - reject_rate) / n).sqrt(),
        ks: ks_distance(&stats)?,
        mean_stat,
        var_stat,
        histogram: histogram(&stats, HIST_RANGE.0, HIST_RANGE.1, HIST_BINS)?,
        qq: qq_pairs(&stats),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: String,
    pub horizon: usize,
    pub n_reps: usize,
    pub master_seed: u64,
    pub alpha: f64,
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<MethodSummary>,
}

impl ReplicationReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    /// Per-replication statistics of `method`, `None` where it failed.
    pub fn statistics(&self, method: Method) -> Vec<Option<f64>> {
        self.records
            .iter()
            .map(|r| r.outcomes.iter().find(|o| o.method == method).and_then(|o| o.statistic))
            .collect()
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReplicationReport> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let work = || -> Vec<ReplicationRecord> {
        (0..cfg.n_reps).into_par_iter().map(|i| run_replication(cfg, &env, i)).collect()
    };
    let records = match cfg.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Input(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let summaries = cfg.methods.iter().map(|&m| summarize(m, &records)).collect::<Result<Vec<_>>>()?;
    Ok(ReplicationReport {
        scenario: cfg.label(),
        horizon: cfg.horizon,
        n_reps: cfg.n_reps,
        master_seed: cfg.master_seed,
        alpha: cfg.alpha,
        records,
        summaries,
    })
}

/// A base experiment swept over outcome scenarios and horizons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerConfig {
    pub experiment: ExperimentConfig,
    /// Empty keeps the experiment's own scenario.
    pub scenarios: Vec<Scenario>,
    /// Empty keeps the experiment's own horizon.
    pub horizons: Vec<usize>,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self { experiment: ExperimentConfig::default(), scenarios: Vec::new(), horizons: Vec::new() }
    }
}

impl PowerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = parse_json(&text, &path.display().to_string())?;
        cfg.experiment.validate()?;
        Ok(cfg)
    }

    /// One experiment per (scenario, horizon) pair, scenario-major.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        let envs = if self.scenarios.is_empty() {
            vec![self.experiment.env.clone()]
        } else {
            self.scenarios.iter().map(|&s| self.experiment.env.with_scenario(s)).collect::<Result<_>>()?
        };
        let horizons = if self.horizons.is_empty() { vec![self.experiment.horizon] } else { self.horizons.clone() };
        let mut out = Vec::with_capacity(envs.len() * horizons.len());
        for env in &envs {
            for &horizon in &horizons {
                out.push(ExperimentConfig { env: env.clone(), horizon, ..self.experiment.clone() });
            }
        }
        Ok(out)
    }
}

pub fn run_power(cfg: &PowerConfig) -> Result<Vec<ReplicationReport>> {
    cfg.expand()?.iter().map(run_experiment).collect()
}

pub const PRESETS: [&str; 6] = ["fig1", "fig2", "fig3-cosine", "fig3-linear", "fig3-sigmoid", "table2-blob"];

/// Desk-scale configurations behind each figure or table.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let synthetic = |model, scenario| EnvConfig::Synthetic(ScenarioSpec::new(model, scenario));
    let scalar_methods = vec![Method::VsDrKte, Method::Cadr, Method::AwAipwConstant];
    let fig3 = |model| -> Vec<ExperimentConfig> {
        [Scenario::I, Scenario::II, Scenario::III, Scenario::IV]
            .into_iter()
            .map(|s| ExperimentConfig {
                env: synthetic(model, s),
                n_reps: 100,
                methods: scalar_methods.clone(),
                ..ExperimentConfig::default()
            })
            .collect()
    };
    match name {
        "fig1" => Ok(vec![ExperimentConfig {
            env: synthetic(OutcomeModel::Cosine, Scenario::I),
            policy: PolicyConfig::ExploreThenCommit(EtcParams::default()),
            horizon: 700,
            methods: vec![Method::VsDrKte, Method::DrKteUnstabilized],
            ..ExperimentConfig::default()
        }]),
        "fig2" => Ok(vec![ExperimentConfig {
            env: synthetic(OutcomeModel::Cosine, Scenario::I),
            ..ExperimentConfig::default()
        }]),
        "fig3-cosine" => Ok(fig3(OutcomeModel::Cosine)),
        "fig3-linear" => Ok(fig3(OutcomeModel::Linear)),
        "fig3-sigmoid" => Ok(fig3(OutcomeModel::Sigmoid)),
        "table2-blob" => Ok([ImageEnvSpec::null(32), ImageEnvSpec::shifted(32)]
            .into_iter()
            .map(|spec| ExperimentConfig {
                env: EnvConfig::Image(spec),
                horizon: 600,
                n_reps: 100,
                methods: scalar_methods.clone(),
                ..ExperimentConfig::default()
            })
            .collect()),
        _ => Err(Error::Input(format!("unknown preset '{name}' (available: {})", PRESETS.join(", ")))),
    }
}

pub const SUMMARY_COLUMNS: [&str; 9] =
    ["method", "scenario", "T", "n_reps", "reject_rate", "stderr", "ks", "mean_stat", "var_stat"];

/// One row per (report, method) with [`SUMMARY_COLUMNS`].
pub fn write_summary_csv<W: Write>(reports: &[ReplicationReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_COLUMNS).map_err(csv_error)?;
    for r in reports {
        for s in &r.summaries {
            out.write_record([
                s.method.name().to_string(),
                r.scenario.clone(),
                r.horizon.to_string(),
                r.n_reps.to_string(),
                s.reject_rate.to_string(),
                s.stderr.to_string(),
                s.ks.to_string(),
                s.mean_stat.to_string(),
                s.var_stat.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Per-replication rows: index, seed, then statistic / p-value / reject per method.
pub fn write_statistics_csv<W: Write>(report: &ReplicationReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "seed", "method", "statistic", "p_value", "reject", "error"]).map_err(csv_error)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.records {
        for o in &r.outcomes {
            out.write_record([
                r.index.to_string(),
                r.seed.to_string(),
                o.method.name().to_string(),
                opt(o.statistic),
                opt(o.p_value),
                o.reject.map(|b| u8::from(b).to_string()).unwrap_or_default(),
                o.error.clone().unwrap_or_default(),
            ])
            .map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(reports: &[ReplicationReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "scenario", "T", "bin_lo", "bin_hi", "count", "density", "normal_pdf"])
        .map_err(csv_error)?;
    for r in reports {
        for s in &r.summaries {
            let h = &s.histogram;
            for k in 0..h.counts.len() {
                out.write_record([
                    s.method.name().to_string(),
                    r.scenario.clone(),
                    r.horizon.to_string(),
                    h.edges[k].to_string(),
                    h.edges[k + 1].to_string(),
                    h.counts[k].to_string(),
                    h.density[k].to_string(),
                    h.normal_pdf[k].to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_qq_csv<W: Write>(reports: &[ReplicationReport], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "scenario", "T", "normal_quantile", "statistic"]).map_err(csv_error)?;
    for r in reports {
        for s in &r.summaries {
            for (q, v) in &s.qq {
                out.write_record([
                    s.method.name().to_string(),
                    r.scenario.clone(),
                    r.horizon.to_string(),
                    q.to_string(),
                    v.to_string(),
                ])
                .map_err(csv_error)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Writes `summary.json`, `summary.csv`, `hist.csv`, `qq.csv` and one
/// `stats_<k>.csv` per report into `dir`.
pub fn write_outputs(reports: &[ReplicationReport], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut create = |name: String| -> Result<std::io::BufWriter<std::fs::File>> {
        let p = dir.join(name);
        let f = std::fs::File::create(&p)?;
        written.push(p);
        Ok(std::io::BufWriter::new(f))
    };
    serde_json::to_writer_pretty(create("summary.json".into())?, &summary_json(reports))?;
    write_summary_csv(reports, create("summary.csv".into())?)?;
    write_histogram_csv(reports, create("hist.csv".into())?)?;
    write_qq_csv(reports, create("qq.csv".into())?)?;
    for (k, r) in reports.iter().enumerate() {
        write_statistics_csv(r, create(format!("stats_{k}.csv"))?)?;
    }
    Ok(written)
}

/// Aggregates without per-replication records, histograms or QQ pairs.
pub fn summary_json(reports: &[ReplicationReport]) -> serde_json::Value {
    let items: Vec<_> = reports
        .iter()
        .map(|r| {
            let methods: Vec<_> = r
                .summaries
                .iter()
                .map(|s| {
                    serde_json::json!({
                        "method": s.method,
                        "n_ok": s.n_ok,
                        "n_failed": s.n_failed,
                        "failures": s.failures,
                        "reject_rate": s.reject_rate,
                        "stderr": s.stderr,
                        "ks": s.ks,
                        "mean_stat": s.mean_stat,
                        "var_stat": s.var_stat,
                    })
                })
                .collect();
            serde_json::json!({
                "scenario": r.scenario,
                "T": r.horizon,
                "n_reps": r.n_reps,
                "master_seed": r.master_seed,
                "alpha": r.alpha,
                "methods": methods,
            })
        })
        .collect();
    serde_json::Value::Array(items)
}
