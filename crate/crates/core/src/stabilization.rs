//! Predictable variance-stabilizing weights.
//!
//! For an in-fold round `t` with in-fold past `S_t`, the conditional variance
//! of the score is estimated by importance-weighted moments of the past
//! scores re-evaluated under the time-`t` policy:
//!
//! ```text
//! u_s   = rho_{s,t} / |S_t|,   rho_{s,t} = pi_t(A_s | X_s) / pi_s(A_s | X_s)
//! M1    = sum_s u_s phi_{s,t}             (an RKHS element)
//! M2    = sum_s u_s |phi_{s,t}|^2
//! omega = (M2 - |M1|^2)^{-1/2}
//! ```
//!
//! [`MomentCache`] makes each `(s, t)` pair O(1) for `M2` after an O(n^2)
//! setup; `|M1|^2` costs O(n |S_t|) per round.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dr_scores::{ScoreFactors, DEFAULT_PROPENSITY_CLIP};
use crate::error::{check_dim, Error, Result};

/// State of an epsilon-greedy (or explore-then-commit) policy before the
/// round-`t` update. Evaluates `pi_t(1 | x)` with the three-branch rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySnapshot {
    pub t: usize,
    pub theta0: Vec<f64>,
    pub theta1: Vec<f64>,
    pub epsilon: f64,
}

impl PolicySnapshot {
    /// Score `<theta, (1, x)>`.
    fn score(theta: &[f64], x: &[f64]) -> f64 {
        theta[0] + theta[1..].iter().zip(x).map(|(t, v)| t * v).sum::<f64>()
    }

    pub fn propensity(&self, x: &[f64]) -> f64 {
        let q0 = Self::score(&self.theta0, x);
        let q1 = Self::score(&self.theta1, x);
        if q1 > q0 {
            1.0 - 0.5 * self.epsilon
        } else if q1 < q0 {
            0.5 * self.epsilon
        } else {
            0.5
        }
    }

    pub fn propensity_of(&self, arm: u8, x: &[f64]) -> f64 {
        let p1 = self.propensity(x);
        if arm == 1 {
            p1
        } else {
            1.0 - p1
        }
    }
}

/// How importance ratios over the past set are turned into moment weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightNormalization {
    /// `u_s = rho_s / |S_t|`.
    PastCount,
    /// `u_s = rho_s / sum(rho)`; the variance estimate is then never negative.
    #[default]
    SelfNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    /// Rounds with fewer in-fold past points get `omega = 1`.
    pub warmup_min: usize,
    pub var_floor: f64,
    pub omega_max: f64,
    pub propensity_clip: f64,
    pub normalization: WeightNormalization,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            warmup_min: 2,
            var_floor: 1e-12,
            omega_max: 1e6,
            propensity_clip: DEFAULT_PROPENSITY_CLIP,
            normalization: WeightNormalization::default(),
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_min < 1 {
            return Err(Error::Input("warmup_min must be at least 1".into()));
        }
        if !(self.var_floor > 0.0 && self.omega_max > 0.0) {
            return Err(Error::Input("variance floor and omega cap must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.propensity_clip) {
            return Err(Error::Input("propensity clip must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationWeights {
    pub fold_id: usize,
    pub omega: Vec<f64>,
    pub warmup_mask: Vec<bool>,
    pub omega_max: f64,
}

impl StabilizationWeights {
    pub fn warmup_count(&self) -> usize {
        self.warmup_mask.iter().filter(|&&w| w).count()
    }
}

fn prob_of(arm: u8, p1: f64) -> f64 {
    if arm == 1 {
        p1
    } else {
        1.0 - p1
    }
}

/// `rho_s = pi_t(A_s | X_s) / pi_s(A_s | X_s)` from arm-1 propensities under
/// the evaluation policy (`eval_p1`) and the logging policy (`logged_p1`).
pub fn importance_ratios(eval_p1: &[f64], logged_p1: &[f64], actions: &[u8]) -> Result<Vec<f64>> {
    check_dim(actions.len(), eval_p1.len())?;
    check_dim(actions.len(), logged_p1.len())?;
    actions
        .iter()
        .zip(eval_p1.iter().zip(logged_p1))
        .map(|(&a, (&pe, &pl))| {
            let den = prob_of(a, pl);
            if !(den > 0.0) {
                return Err(Error::Input(format!("logged propensity {pl} leaves a zero denominator")));
            }
            Ok(prob_of(a, pe) / den)
        })
        .collect()
}

/// Fold-level precomputation for the conditional moments.
#[derive(Debug, Clone)]
pub struct MomentCache {
    delta_t: DMatrix<f64>,
    resid_t: DMatrix<f64>,
    k_delta: DMatrix<f64>,
    k_resid: DMatrix<f64>,
    v_dd: Vec<f64>,
    v_dr: Vec<f64>,
    v_rr: Vec<f64>,
}

impl MomentCache {
    pub fn new(factors: &ScoreFactors, k_yy: &DMatrix<f64>) -> Result<Self> {
        let m = factors.delta_t.nrows();
        check_dim(m, k_yy.nrows())?;
        check_dim(m, k_yy.ncols())?;
        let k_delta = k_yy * &factors.delta_t;
        let k_resid = k_yy * &factors.resid_t;
        let n = factors.delta_t.ncols();
        let col_dot = |a: &DMatrix<f64>, b: &DMatrix<f64>| -> Vec<f64> {
            (0..n).map(|s| a.column(s).dot(&b.column(s))).collect()
        };
        Ok(Self {
            v_dd: col_dot(&factors.delta_t, &k_delta),
            v_dr: col_dot(&factors.delta_t, &k_resid),
            v_rr: col_dot(&factors.resid_t, &k_resid),
            delta_t: factors.delta_t.clone(),
            resid_t: factors.resid_t.clone(),
            k_delta,
            k_resid,
        })
    }

    pub fn n(&self) -> usize {
        self.delta_t.ncols()
    }

    /// `|phi_{s,t}|^2` for multiplier `w` at column `s`.
    pub fn score_norm_sq(&self, s: usize, w: f64) -> f64 {
        self.v_dd[s] + 2.0 * w * self.v_dr[s] + w * w * self.v_rr[s]
    }

    /// Returns `(|M1|^2, M2)` for weights `u` supported on columns `0..u.len()`
    /// and time-`t` multipliers `w_t` over the same columns.
    pub fn moments(&self, w_t: &[f64], u: &[f64]) -> Result<(f64, f64)> {
        let k = u.len();
        if k == 0 {
            return Err(Error::Input("conditional moments need a non-empty past".into()));
        }
        if k > self.n() || w_t.len() < k {
            return Err(Error::DimensionMismatch { expected: k, got: w_t.len().min(self.n()) });
        }
        let uv = DVector::from_column_slice(u);
        let wu = DVector::from_iterator(k, u.iter().zip(w_t).map(|(a, b)| a * b));
        let c = self.delta_t.columns(0, k) * &uv + self.resid_t.columns(0, k) * &wu;
        let kc = self.k_delta.columns(0, k) * &uv + self.k_resid.columns(0, k) * &wu;
        let m1_sq = c.dot(&kc);
        let m2 = (0..k).map(|s| u[s] * self.score_norm_sq(s, w_t[s])).sum();
        Ok((m1_sq, m2))
    }
}

/// Convenience wrapper around [`MomentCache::moments`].
pub fn conditional_moments(cache: &MomentCache, w_t: &[f64], u: &[f64]) -> Result<(f64, f64)> {
    cache.moments(w_t, u)
}

/// `omega = max(m2 - m1_sq, floor)^{-1/2}`, capped at `cap`.
pub fn stabilization_weight(m1_sq: f64, m2: f64, floor: f64, cap: f64) -> Result<f64> {
    if !(m1_sq.is_finite() && m2.is_finite()) {
        return Err(Error::Numerical(format!("non-finite moments ({m1_sq}, {m2})")));
    }
    Ok((m2 - m1_sq).max(floor).powf(-0.5).min(cap))
}

/// Time-`t` multipliers `w^{(t)}_s` over the fold from a row of arm-1 propensities.
fn multipliers_into(actions: &[u8], p1_row: impl Iterator<Item = f64>, clip: f64, out: &mut Vec<f64>) {
    out.clear();
    out.extend(actions.iter().zip(p1_row).map(|(&a, p)| {
        let p = p.clamp(clip, 1.0 - clip);
        if a == 1 {
            1.0 / p
        } else {
            -1.0 / (1.0 - p)
        }
    }));
}

/// Stabilization weights for one fold in chronological order.
///
/// `prop_matrix[(t, s)]` is `pi_t(1 | X_s)` for in-fold positions `t` and
/// `s`; `logged_p1[s]` is `pi_s(1 | X_s)` as logged.
pub fn weight_series(
    fold_id: usize,
    actions: &[u8],
    logged_p1: &[f64],
    prop_matrix: &DMatrix<f64>,
    cache: &MomentCache,
    config: &WeightConfig,
) -> Result<StabilizationWeights> {
    config.validate()?;
    let n = actions.len();
    check_dim(n, logged_p1.len())?;
    check_dim(n, cache.n())?;
    if prop_matrix.nrows() != n || prop_matrix.ncols() != n {
        return Err(Error::Input(format!(
            "propensity matrix is {}x{}, fold has {n} rounds",
            prop_matrix.nrows(),
            prop_matrix.ncols()
        )));
    }
    let clip = config.propensity_clip;
    let logged: Vec<f64> = logged_p1.iter().map(|p| p.clamp(clip, 1.0 - clip)).collect();
    let mut omega = vec![1.0; n];
    let mut warmup = vec![true; n];
    let mut w_t = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for t in config.warmup_min..n {
        // only past columns are touched
        multipliers_into(&actions[..t], prop_matrix.row(t).iter().copied().take(t), clip, &mut w_t);
        u.clear();
        for s in 0..t {
            let pe = prop_matrix[(t, s)].clamp(clip, 1.0 - clip);
            u.push(prob_of(actions[s], pe) / prob_of(actions[s], logged[s]));
        }
        let total = match config.normalization {
            WeightNormalization::PastCount => t as f64,
            WeightNormalization::SelfNormalized => u.iter().sum(),
        };
        u.iter_mut().for_each(|v| *v /= total);
        let (m1_sq, m2) = cache.moments(&w_t, &u)?;
        omega[t] = stabilization_weight(m1_sq, m2, config.var_floor, config.omega_max)?;
        warmup[t] = false;
    }
    Ok(StabilizationWeights { fold_id, omega, warmup_mask: warmup, omega_max: config.omega_max })
}
