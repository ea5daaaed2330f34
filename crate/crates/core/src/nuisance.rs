//! Arm-wise kernel ridge smoothers for the conditional mean embedding.
//!
//! A [`FoldSmoothers`] maps the outcome features of a training basis to
//! predictions at the fold's own covariates: row `i` of `mu_a` holds the
//! coefficients of `mu_hat(a, X_i)` over the basis outcomes, so `mu_a * y`
//! is the arm-`a` ridge fit evaluated at every fold point. Column `j` is
//! zero unless basis point `j` was observed under arm `a`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::GramBlock;

pub const DEFAULT_RIDGE: f64 = 1e-2;

/// Where the smoother's training data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceMode {
    /// Within-fold hat matrices: the fold is its own training set.
    Hat,
    /// Ridge fit on the opposite fold, evaluated at this fold's covariates.
    Crossfit,
    /// Round `i` uses a ridge fit on the fold's earlier rounds only.
    #[default]
    Sequential,
}

#[derive(Debug, Clone)]
pub struct FoldSmoothers {
    pub fold_id: usize,
    /// Number of fold points (rows).
    pub n: usize,
    /// Round ids of the outcome basis (columns). The fold's own rounds come
    /// first, so own point `i` sits at basis position `i`.
    pub basis: Vec<usize>,
    /// Basis positions of the training points observed under arm 0 / arm 1.
    pub control_idx: Vec<usize>,
    pub treated_idx: Vec<usize>,
    /// Actions of the fold's own rounds.
    pub actions: Vec<u8>,
    pub mu0: DMatrix<f64>,
    pub mu1: DMatrix<f64>,
    pub mu: DMatrix<f64>,
    /// `I - mu`, where `I` selects the fold's own basis positions.
    pub r: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub lambda: f64,
}

impl FoldSmoothers {
    pub fn basis_len(&self) -> usize {
        self.basis.len()
    }

    /// Residual smoother of the observed arm: row `i` is `e_i - mu_{A_i}[i, :]`.
    pub fn observed_residual(&self) -> DMatrix<f64> {
        let mut out = -DMatrix::from_fn(self.n, self.basis_len(), |i, j| {
            if self.actions[i] == 1 {
                self.mu1[(i, j)]
            } else {
                self.mu0[(i, j)]
            }
        });
        for i in 0..self.n {
            out[(i, i)] += 1.0;
        }
        out
    }

    /// Applies the arm-`a` smoother to basis outcomes (one value per basis point).
    pub fn predict(&self, arm: u8, outcomes: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.basis_len(), outcomes.len())?;
        let m = if arm == 1 { &self.mu1 } else { &self.mu0 };
        Ok((m * DVector::from_column_slice(outcomes)).iter().copied().collect())
    }
}

fn validate_actions(actions: &[u8]) -> Result<()> {
    match actions.iter().find(|&&a| a > 1) {
        Some(a) => Err(Error::Input(format!("actions must be binary, got {a}"))),
        None => Ok(()),
    }
}

fn validate_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("ridge must be positive, got {lambda}")))
    }
}

/// Ridge smoother from training points into `n_eval` evaluation rows.
/// `k_eval_train` is `n_eval x n_train`; columns land at `col_offset + j`.
fn arm_block(
    k_eval_train: &DMatrix<f64>,
    k_train: &DMatrix<f64>,
    idx: &[usize],
    lambda: f64,
    col_offset: usize,
    out: &mut DMatrix<f64>,
) -> Result<()> {
    let na = idx.len();
    let mut kaa = DMatrix::from_fn(na, na, |i, j| k_train[(idx[i], idx[j])]);
    for i in 0..na {
        kaa[(i, i)] += lambda;
    }
    let chol = kaa
        .cholesky()
        .ok_or_else(|| Error::Numerical("ridge system is not positive definite".into()))?;
    // (K_aa + λI)^{-1} K_a,eval, then transpose into rows = evaluation points.
    let mut rhs = DMatrix::from_fn(na, k_eval_train.nrows(), |i, j| k_eval_train[(j, idx[i])]);
    chol.solve_mut(&mut rhs);
    for (p, &j) in idx.iter().enumerate() {
        for i in 0..out.nrows() {
            out[(i, col_offset + j)] = rhs[(p, i)];
        }
    }
    Ok(())
}

fn assemble(
    fold_id: usize,
    basis: Vec<usize>,
    actions: Vec<u8>,
    control_idx: Vec<usize>,
    treated_idx: Vec<usize>,
    mu0: DMatrix<f64>,
    mu1: DMatrix<f64>,
    lambda: f64,
) -> FoldSmoothers {
    let n = actions.len();
    let mu = &mu0 + &mu1;
    let mut r = -mu.clone();
    for i in 0..n {
        r[(i, i)] += 1.0;
    }
    let delta = &mu1 - &mu0;
    FoldSmoothers { fold_id, n, basis, control_idx, treated_idx, actions, mu0, mu1, mu, r, delta, lambda }
}

/// Within-fold arm-wise smoothers `mu_a = K[:, idx_a] (K[idx_a, idx_a] + λI)^{-1} E_a`,
/// in chronological order.
pub fn arm_smoothers(fold_id: usize, k_xx: &GramBlock, actions: &[u8], lambda: f64) -> Result<FoldSmoothers> {
    let n = actions.len();
    check_dim(n, k_xx.values.nrows())?;
    check_dim(n, k_xx.values.ncols())?;
    validate_actions(actions)?;
    validate_lambda(lambda)?;
    let control_idx: Vec<usize> = (0..n).filter(|&i| actions[i] == 0).collect();
    let treated_idx: Vec<usize> = (0..n).filter(|&i| actions[i] == 1).collect();
    if control_idx.is_empty() {
        return Err(Error::DegenerateFold { fold: fold_id, arm: 0 });
    }
    if treated_idx.is_empty() {
        return Err(Error::DegenerateFold { fold: fold_id, arm: 1 });
    }
    let mut mu0 = DMatrix::zeros(n, n);
    let mut mu1 = DMatrix::zeros(n, n);
    arm_block(&k_xx.values, &k_xx.values, &control_idx, lambda, 0, &mut mu0)?;
    arm_block(&k_xx.values, &k_xx.values, &treated_idx, lambda, 0, &mut mu1)?;
    Ok(assemble(fold_id, k_xx.rows.clone(), actions.to_vec(), control_idx, treated_idx, mu0, mu1, lambda))
}

/// Growing Cholesky factor of `K_aa + λI` over one arm's points.
struct IncrementalRidge {
    members: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl IncrementalRidge {
    fn new() -> Self {
        Self { members: Vec::new(), rows: Vec::new() }
    }

    /// `L^{-1} k` for kernel column `k` against the current members.
    fn forward(&self, k: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(k.len());
        for (i, row) in self.rows.iter().enumerate() {
            let acc: f64 = row[..i].iter().zip(&z).map(|(a, b)| a * b).sum();
            z.push((k[i] - acc) / row[i]);
        }
        z
    }

    /// `L^{-T} z`, giving the ridge coefficients.
    fn backward(&self, mut z: Vec<f64>) -> Vec<f64> {
        for i in (0..z.len()).rev() {
            z[i] /= self.rows[i][i];
            let zi = z[i];
            for (j, zj) in z[..i].iter_mut().enumerate() {
                *zj -= self.rows[i][j] * zi;
            }
        }
        z
    }

    fn push(&mut self, point: usize, mut z: Vec<f64>, k_self: f64, lambda: f64) -> Result<()> {
        let d2 = k_self + lambda - z.iter().map(|v| v * v).sum::<f64>();
        if !(d2 > 0.0) {
            return Err(Error::Numerical("ridge system is not positive definite".into()));
        }
        z.push(d2.sqrt());
        self.rows.push(z);
        self.members.push(point);
        Ok(())
    }
}

/// Predictable smoothers: row `i` of `mu_a` is the arm-`a` ridge fit on the
/// fold's rounds `0..i`, so every row is supported strictly below the diagonal.
/// An arm with no earlier rounds predicts zero.
pub fn sequential_smoothers(fold_id: usize, k_xx: &GramBlock, actions: &[u8], lambda: f64) -> Result<FoldSmoothers> {
    let n = actions.len();
    check_dim(n, k_xx.values.nrows())?;
    check_dim(n, k_xx.values.ncols())?;
    validate_actions(actions)?;
    validate_lambda(lambda)?;
    let control_idx: Vec<usize> = (0..n).filter(|&i| actions[i] == 0).collect();
    let treated_idx: Vec<usize> = (0..n).filter(|&i| actions[i] == 1).collect();
    if control_idx.is_empty() {
        return Err(Error::DegenerateFold { fold: fold_id, arm: 0 });
    }
    if treated_idx.is_empty() {
        return Err(Error::DegenerateFold { fold: fold_id, arm: 1 });
    }
    let k = &k_xx.values;
    let mut mu = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
    let mut arms = [IncrementalRidge::new(), IncrementalRidge::new()];
    for i in 0..n {
        let mut own_z = None;
        for (a, arm) in arms.iter().enumerate() {
            let col: Vec<f64> = arm.members.iter().map(|&j| k[(j, i)]).collect();
            let z = arm.forward(&col);
            let alpha = arm.backward(z.clone());
            for (&j, v) in arm.members.iter().zip(alpha) {
                mu[a][(i, j)] = v;
            }
            if a == actions[i] as usize {
                own_z = Some(z);
            }
        }
        let z = own_z.expect("binary action");
        arms[actions[i] as usize].push(i, z, k[(i, i)], lambda)?;
    }
    let [mu0, mu1] = mu;
    Ok(assemble(fold_id, k_xx.rows.clone(), actions.to_vec(), control_idx, treated_idx, mu0, mu1, lambda))
}

/// Smoothers fit on a separate training fold and evaluated at this fold's
/// covariates. The basis is `own_ids ++ train_ids`; own columns are zero.
pub fn crossfit_smoothers(
    fold_id: usize,
    own_ids: &[usize],
    own_actions: &[u8],
    train_ids: &[usize],
    train_actions: &[u8],
    k_eval_train: &GramBlock,
    k_train: &GramBlock,
    lambda: f64,
) -> Result<FoldSmoothers> {
    let n = own_ids.len();
    let nt = train_ids.len();
    check_dim(n, own_actions.len())?;
    check_dim(nt, train_actions.len())?;
    check_dim(n, k_eval_train.values.nrows())?;
    check_dim(nt, k_eval_train.values.ncols())?;
    check_dim(nt, k_train.values.nrows())?;
    validate_actions(own_actions)?;
    validate_actions(train_actions)?;
    validate_lambda(lambda)?;
    let local0: Vec<usize> = (0..nt).filter(|&j| train_actions[j] == 0).collect();
    let local1: Vec<usize> = (0..nt).filter(|&j| train_actions[j] == 1).collect();
    // The training fold is the one whose arms feed the ridge fit.
    let train_fold = 1 - fold_id.min(1);
    if local0.is_empty() {
        return Err(Error::DegenerateFold { fold: train_fold, arm: 0 });
    }
    if local1.is_empty() {
        return Err(Error::DegenerateFold { fold: train_fold, arm: 1 });
    }
    let m = n + nt;
    let mut mu0 = DMatrix::zeros(n, m);
    let mut mu1 = DMatrix::zeros(n, m);
    arm_block(&k_eval_train.values, &k_train.values, &local0, lambda, n, &mut mu0)?;
    arm_block(&k_eval_train.values, &k_train.values, &local1, lambda, n, &mut mu1)?;
    let basis: Vec<usize> = own_ids.iter().chain(train_ids).copied().collect();
    let control_idx = local0.iter().map(|j| j + n).collect();
    let treated_idx = local1.iter().map(|j| j + n).collect();
    Ok(assemble(fold_id, basis, own_actions.to_vec(), control_idx, treated_idx, mu0, mu1, lambda))
}
