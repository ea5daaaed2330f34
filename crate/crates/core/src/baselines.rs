//! Scalar adaptive ATE tests used as power baselines.
//!
//! Both work on the scalar summary of each outcome (the mean pixel for
//! images). Per-arm outcome regressions at round `t` are fit on rounds
//! `< t` only.

use serde::{Deserialize, Serialize};

use crate::adaptive_sim::{scalarize, OnlineRidge, Trajectory};
use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, LengthscaleRule};
use crate::kte_test::normal_sf;
use crate::nuisance::{sequential_smoothers, DEFAULT_RIDGE};
use crate::stabilization::{stabilization_weight, WeightConfig, WeightNormalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarMethod {
    Cadr,
    AwAipwConstant,
    AwAipwTwoPoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalarTestOutcome {
    pub method: ScalarMethod,
    /// ATE estimate, arm 1 minus arm 0.
    pub estimate: f64,
    pub statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
}

impl ScalarTestOutcome {
    fn new(method: ScalarMethod, estimate: f64, statistic: f64, alpha: f64) -> Result<Self> {
        if !statistic.is_finite() || !estimate.is_finite() {
            return Err(Error::Numerical(format!("{method:?} produced a non-finite statistic")));
        }
        let p_value = (2.0 * normal_sf(statistic.abs())).min(1.0);
        Ok(Self { method, estimate, statistic, p_value, reject: p_value < alpha, alpha })
    }
}

/// Outcome regression used for `E[Y | A = a, X]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regression {
    /// Gaussian-kernel ridge regression.
    Kernel(KernelSpec),
    /// Linear ridge on `(1, x)` with an unpenalized intercept.
    Linear,
}

impl Default for Regression {
    fn default() -> Self {
        Regression::Kernel(KernelSpec::gaussian(LengthscaleRule::Median))
    }
}

/// Denominator of the CADR statistic `sum_t w_t D_t / sqrt(V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Studentization {
    /// `V = T`, taking the stabilized increments to have unit variance.
    Nominal,
    /// `V = sum_t w_t^2 (D_t - estimate)^2`.
    #[default]
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub regression: Regression,
    pub studentization: Studentization,
    pub ridge: f64,
    pub alpha: f64,
    /// Warmup, floor, cap, clip and ratio normalization for the CADR weights.
    pub weights: WeightConfig,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            regression: Regression::default(),
            studentization: Studentization::default(),
            ridge: DEFAULT_RIDGE,
            alpha: 0.05,
            weights: WeightConfig::default(),
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ridge > 0.0) {
            return Err(Error::Input("ridge must be positive".into()));
        }
        if let Regression::Kernel(k) = &self.regression {
            k.validate()?;
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Input("alpha must lie in (0, 1)".into()));
        }
        self.weights.validate()
    }
}

struct ScalarData<'a> {
    x: Vec<&'a [f64]>,
    y: Vec<f64>,
    a: Vec<u8>,
    /// Clipped logged `pi_t(1 | X_t)`.
    p1: Vec<f64>,
}

fn scalar_data(traj: &Trajectory, clip: f64) -> Result<ScalarData<'_>> {
    traj.validate()?;
    if traj.len() < 2 {
        return Err(Error::Input("baseline tests need at least two rounds".into()));
    }
    Ok(ScalarData {
        x: traj.contexts(),
        y: traj.rounds.iter().map(|r| scalarize(&r.y)).collect(),
        a: traj.actions(),
        p1: traj.rounds.iter().map(|r| r.p1().clamp(clip, 1.0 - clip)).collect(),
    })
}

fn prob_of(arm: u8, p1: f64) -> f64 {
    if arm == 1 {
        p1
    } else {
        1.0 - p1
    }
}

/// `q1 - q0 + (1{a=1}/p1 - 1{a=0}/(1-p1)) (y - q_a)`.
fn dr_score(q0: f64, q1: f64, a: u8, y: f64, p1: f64) -> f64 {
    if a == 1 {
        q1 - q0 + (y - q1) / p1
    } else {
        q1 - q0 - (y - q0) / (1.0 - p1)
    }
}

/// `(q0, q1)` at each round's context from fits on earlier rounds. An arm
/// without earlier rounds predicts zero.
fn predictable_fits(data: &ScalarData<'_>, cfg: &BaselineConfig) -> Result<Vec<(f64, f64)>> {
    let n = data.y.len();
    match &cfg.regression {
        Regression::Kernel(spec) => {
            let kx = spec.resolve(&data.x)?.gram_symmetric(&data.x)?;
            let sm = sequential_smoothers(0, &kx, &data.a, cfg.ridge)?;
            let y = nalgebra::DVector::from_column_slice(&data.y);
            let (q0, q1) = (&sm.mu0 * &y, &sm.mu1 * &y);
            Ok((0..n).map(|t| (q0[t], q1[t])).collect())
        }
        Regression::Linear => {
            let d = data.x[0].len();
            let mut models = [OnlineRidge::new(d, cfg.ridge), OnlineRidge::new(d, cfg.ridge)];
            let mut out = Vec::with_capacity(n);
            for t in 0..n {
                let xt = data.x[t];
                out.push((
                    OnlineRidge::predict(&models[0].theta(), xt),
                    OnlineRidge::predict(&models[1].theta(), xt),
                ));
                models[data.a[t] as usize].update(xt, data.y[t]);
            }
            Ok(out)
        }
    }
}

/// Stabilized doubly robust ATE test with importance-reweighted
/// conditional standard deviations.
///
/// Round `t` uses outcome models fit on rounds `< t`. Its weight is
/// `1 / sigma_t`, where `sigma_t^2` is the variance of the earlier rounds'
/// scores (each with its own past-only fit) under time-`t` propensities,
/// reweighted by `pi_t(A_s | X_s) / pi_s(A_s | X_s)`. The statistic is
/// `sum_t w_t D_t / sqrt(T)`.
pub fn cadr_ate_test(traj: &Trajectory, cfg: &BaselineConfig) -> Result<ScalarTestOutcome> {
    let (omega, scores) = cadr_series(traj, cfg)?;
    let weighted_sum: f64 = omega.iter().zip(&scores).map(|(w, d)| w * d).sum();
    let estimate = weighted_sum / omega.iter().sum::<f64>();
    let scale = match cfg.studentization {
        Studentization::Nominal => scores.len() as f64,
        Studentization::Empirical => omega.iter().zip(&scores).map(|(w, d)| (w * (d - estimate)).powi(2)).sum(),
    };
    let statistic = if weighted_sum == 0.0 {
        0.0
    } else if scale > 0.0 {
        weighted_sum / scale.sqrt()
    } else {
        return Err(Error::DegenerateStatistic("CADR weighted scores have no spread".into()));
    };
    ScalarTestOutcome::new(ScalarMethod::Cadr, estimate, statistic, cfg.alpha)
}

/// Per-round CADR weights and scores.
pub fn cadr_series(traj: &Trajectory, cfg: &BaselineConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let wc = &cfg.weights;
    let clip = wc.propensity_clip;
    let data = scalar_data(traj, clip)?;
    let fitted = predictable_fits(&data, cfg)?;
    let n = data.y.len();

    let mut omega = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    let mut past = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for t in 0..n {
        let w = if t < wc.warmup_min {
            1.0
        } else {
            let snap = &traj.snapshots[t];
            past.clear();
            u.clear();
            for (s, &(q0, q1)) in fitted[..t].iter().enumerate() {
                let pe = snap.propensity(data.x[s]).clamp(clip, 1.0 - clip);
                let (a, ps) = (data.a[s], data.p1[s]);
                u.push(prob_of(a, pe) / prob_of(a, ps));
                past.push(dr_score(q0, q1, a, data.y[s], pe));
            }
            let total = match wc.normalization {
                WeightNormalization::PastCount => t as f64,
                WeightNormalization::SelfNormalized => u.iter().sum(),
            };
            let m1 = past.iter().zip(&u).map(|(s, w)| s * w).sum::<f64>() / total;
            let m2 = past.iter().zip(&u).map(|(s, w)| s * s * w).sum::<f64>() / total;
            stabilization_weight(m1 * m1, m2, wc.var_floor, wc.omega_max)?
        };
        let (q0, q1) = fitted[t];
        omega.push(w);
        out.push(dr_score(q0, q1, data.a[t], data.y[t], data.p1[t]));
    }
    Ok((omega, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    #[default]
    Constant,
    TwoPoint,
}

/// Forecast of future assignment probabilities for the two-point allocation.
pub trait PropensityForecast {
    /// Forecast of `sum_{s=t}^{horizon-1} e_s` for `arm`, given the current
    /// propensity `current = e_t`. Must be at least `current`.
    fn remaining_mass(&self, arm: u8, t: usize, horizon: usize, current: f64) -> f64;
}

impl<F: Fn(u8, usize, usize, f64) -> f64> PropensityForecast for F {
    fn remaining_mass(&self, arm: u8, t: usize, horizon: usize, current: f64) -> f64 {
        self(arm, t, horizon, current)
    }
}

/// `1 / (horizon - t)` for 0-based `t`; equals 1 at the last round.
pub fn constant_allocation(t: usize, horizon: usize) -> f64 {
    1.0 / (horizon - t) as f64
}

/// Stick-breaking weights `h_t = sqrt(lambda_t * remaining_t * e_t)` with
/// `remaining_t = 1 - sum_{s<t} h_s^2 / e_s`.
fn allocation_weights(
    arm: u8,
    e: &[f64],
    allocation: Allocation,
    forecast: Option<&dyn PropensityForecast>,
) -> Vec<f64> {
    let horizon = e.len();
    let mut remaining = 1.0f64;
    e.iter()
        .enumerate()
        .map(|(t, &et)| {
            let lambda = match (allocation, forecast) {
                (Allocation::TwoPoint, Some(f)) => {
                    let mass = f.remaining_mass(arm, t, horizon, et).max(et);
                    if t + 1 == horizon {
                        1.0
                    } else {
                        (et / mass).clamp(0.0, 1.0)
                    }
                }
                _ => constant_allocation(t, horizon),
            };
            let h = (lambda * remaining.max(0.0) * et).sqrt();
            remaining -= lambda * remaining;
            h
        })
        .collect()
}

/// Adaptively weighted AIPW contrast of arm 1 against arm 0.
///
/// `TwoPoint` without a forecast falls back to the constant allocation.
pub fn aw_aipw_test(
    traj: &Trajectory,
    allocation: Allocation,
    forecast: Option<&dyn PropensityForecast>,
    cfg: &BaselineConfig,
) -> Result<ScalarTestOutcome> {
    cfg.validate()?;
    let data = scalar_data(traj, cfg.weights.propensity_clip)?;
    let fitted = predictable_fits(&data, cfg)?;
    let n = data.y.len();
    let mut gamma = [Vec::with_capacity(n), Vec::with_capacity(n)];
    let mut e = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for t in 0..n {
        let (q0, q1) = fitted[t];
        for (arm, q) in [(0u8, q0), (1u8, q1)] {
            let et = prob_of(arm, data.p1[t]);
            let hit = if data.a[t] == arm { 1.0 } else { 0.0 };
            gamma[arm as usize].push(q + hit / et * (data.y[t] - q));
            e[arm as usize].push(et);
        }
    }

    let h = [0u8, 1].map(|arm| allocation_weights(arm, &e[arm as usize], allocation, forecast));
    let hsum = [h[0].iter().sum::<f64>(), h[1].iter().sum::<f64>()];
    if !(hsum[0] > 0.0 && hsum[1] > 0.0) {
        return Err(Error::DegenerateStatistic("allocation weights vanish".into()));
    }
    let mean = [0, 1].map(|k| h[k].iter().zip(&gamma[k]).map(|(w, g)| w * g).sum::<f64>() / hsum[k]);
    let var: f64 = (0..n)
        .map(|t| {
            let c1 = h[1][t] * (gamma[1][t] - mean[1]) / hsum[1];
            let c0 = h[0][t] * (gamma[0][t] - mean[0]) / hsum[0];
            (c1 - c0).powi(2)
        })
        .sum();
    if !(var > 0.0) {
        return Err(Error::DegenerateStatistic("AW-AIPW contrast has zero variance".into()));
    }
    let estimate = mean[1] - mean[0];
    let method = match allocation {
        Allocation::Constant => ScalarMethod::AwAipwConstant,
        Allocation::TwoPoint => ScalarMethod::AwAipwTwoPoint,
    };
    ScalarTestOutcome::new(method, estimate, estimate / var.sqrt(), cfg.alpha)
}
