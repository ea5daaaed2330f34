//! Doubly robust score coefficients in Gram form.
//!
//! Column `i` of a [`DrCoefficients`] matrix holds the coefficients, over the
//! smoother's outcome basis, of the RKHS score of round `i` for the contrast
//! between arm 1 and arm 0:
//!
//! ```text
//! mu_hat(1, X_i) - mu_hat(0, X_i) + w_i (phi(Y_i) - mu_hat(A_i, X_i))
//! ```
//!
//! so inner products between scores reduce to `c^T K_Y c'`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::GramBlock;
use crate::nuisance::FoldSmoothers;

/// Propensities are clipped into `[clip, 1 - clip]` before inversion.
pub const DEFAULT_PROPENSITY_CLIP: f64 = 1e-3;

/// How the outcome-model residual inside the score is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResidualForm {
    /// `phi(Y_i) - mu_hat(A_i, X_i)`: only the observed arm's fit is removed.
    #[default]
    ObservedArm,
    /// `phi(Y_i) - mu_hat(0, X_i) - mu_hat(1, X_i)`, i.e. `D = Delta + (I - mu) W`
    /// with the pooled smoother. Unbiased only when the fits agree.
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IpwMultipliers {
    pub w: Vec<f64>,
    /// Clipped `P(A = 1 | X_i)` used to build `w`.
    pub source_propensities: Vec<f64>,
}

/// `w_i = -1 / (1 - p_i)` for `A_i = 0` and `1 / p_i` for `A_i = 1`, with
/// `p_i = P(A = 1 | X_i)` clipped to `[clip, 1 - clip]`.
pub fn ipw_multipliers(actions: &[u8], propensities: &[f64], clip: f64) -> Result<IpwMultipliers> {
    check_dim(actions.len(), propensities.len())?;
    if !(0.0..0.5).contains(&clip) {
        return Err(Error::Input(format!("clip must lie in [0, 0.5), got {clip}")));
    }
    let mut w = Vec::with_capacity(actions.len());
    let mut src = Vec::with_capacity(actions.len());
    for (&a, &p) in actions.iter().zip(propensities) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Input(format!("propensity {p} outside (0, 1)")));
        }
        let p = p.clamp(clip, 1.0 - clip);
        w.push(match a {
            0 => -1.0 / (1.0 - p),
            1 => 1.0 / p,
            other => return Err(Error::Input(format!("actions must be binary, got {other}"))),
        });
        src.push(p);
    }
    Ok(IpwMultipliers { w, source_propensities: src })
}

/// Which propensities produced a coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Logged,
    Snapshot(usize),
}

#[derive(Debug, Clone)]
pub struct DrCoefficients {
    /// Round ids of the outcome basis (rows of `d`).
    pub basis: Vec<usize>,
    /// `basis_len x n`; column `i` is the score of the fold's `i`-th round.
    pub d: DMatrix<f64>,
    pub provenance: Provenance,
}

/// Transposed smoother factors `(Delta^T, Res^T)`, so that the score of round
/// `i` is `delta_t[:, i] + w_i * resid_t[:, i]`.
#[derive(Debug, Clone)]
pub struct ScoreFactors {
    pub delta_t: DMatrix<f64>,
    pub resid_t: DMatrix<f64>,
}

impl ScoreFactors {
    pub fn new(s: &FoldSmoothers, form: ResidualForm) -> Self {
        let resid = match form {
            ResidualForm::ObservedArm => s.observed_residual(),
            ResidualForm::Pooled => s.r.clone(),
        };
        Self { delta_t: s.delta.transpose(), resid_t: resid.transpose() }
    }

    pub fn coefficients(&self, w: &[f64], basis: &[usize], provenance: Provenance) -> Result<DrCoefficients> {
        check_dim(self.delta_t.ncols(), w.len())?;
        let mut d = self.resid_t.clone();
        for (j, mut col) in d.column_iter_mut().enumerate() {
            col *= w[j];
        }
        d += &self.delta_t;
        Ok(DrCoefficients { basis: basis.to_vec(), d, provenance })
    }
}

/// `D = Delta^T + Res^T diag(w)` for the fold described by `s`.
pub fn dr_coefficients(
    s: &FoldSmoothers,
    w: &IpwMultipliers,
    form: ResidualForm,
    provenance: Provenance,
) -> Result<DrCoefficients> {
    check_dim(s.n, w.w.len())?;
    ScoreFactors::new(s, form).coefficients(&w.w, &s.basis, provenance)
}

/// Cross-fold inner products `G0 = D0^T K_Y^{(0,1)} D1`.
pub fn cross_matrix(d0: &DrCoefficients, k01: &GramBlock, d1: &DrCoefficients) -> Result<DMatrix<f64>> {
    check_dim(d0.d.nrows(), k01.values.nrows())?;
    check_dim(d1.d.nrows(), k01.values.ncols())?;
    let left = d0.d.transpose() * &k01.values;
    Ok(left * &d1.d)
}

/// Canonical gradient for target arm `target` at one observation, in explicit
/// feature coordinates:
/// `1{A = target} / pi(target | X) * (phi(Y) - mu_bar(A, X)) + mu_bar(target, X)`.
///
/// `mu_bar` holds the outcome-model embedding per arm at the observation's context.
pub fn canonical_gradient(
    target: usize,
    observed: usize,
    propensity_target: f64,
    phi_y: &[f64],
    mu_bar: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if target >= mu_bar.len() || observed >= mu_bar.len() {
        return Err(Error::Input("arm index outside the outcome model".into()));
    }
    if !(propensity_target > 0.0 && propensity_target <= 1.0) {
        return Err(Error::Input(format!("propensity {propensity_target} outside (0, 1]")));
    }
    let dim = phi_y.len();
    for m in mu_bar {
        check_dim(dim, m.len())?;
    }
    let mut out = mu_bar[target].clone();
    if observed == target {
        for (o, (y, m)) in out.iter_mut().zip(phi_y.iter().zip(&mu_bar[observed])) {
            *o += (y - m) / propensity_target;
        }
    }
    Ok(out)
}

/// Difference of canonical gradients between arms `a` and `b`.
pub fn score_difference(
    a: usize,
    b: usize,
    observed: usize,
    propensities: &[f64],
    phi_y: &[f64],
    mu_bar: &[Vec<f64>],
) -> Result<Vec<f64>> {
    check_dim(mu_bar.len(), propensities.len())?;
    let ga = canonical_gradient(a, observed, propensities[a], phi_y, mu_bar)?;
    let gb = canonical_gradient(b, observed, propensities[b], phi_y, mu_bar)?;
    Ok(ga.iter().zip(&gb).map(|(x, y)| x - y).collect())
}

/// `c^T K c` for a coefficient vector over a Gram block.
pub fn rkhs_norm_sq(c: &DVector<f64>, k: &DMatrix<f64>) -> f64 {
    c.dot(&(k * c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;
    use crate::nuisance::arm_smoothers;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn multiplier_examples() {
        let m = ipw_multipliers(&[1, 0, 1, 0], &[0.5, 0.5, 0.8, 0.9], 1e-3).unwrap();
        assert_eq!(m.w[0], 2.0);
        assert_eq!(m.w[1], -2.0);
        assert_eq!(m.w[2], 1.25);
        assert!((m.w[3] + 10.0).abs() < 1e-12);
        assert!(ipw_multipliers(&[1], &[1.0], 1e-3).is_err());
        assert!(ipw_multipliers(&[1], &[0.0], 1e-3).is_err());
        // clipping bounds the magnitude
        let c = ipw_multipliers(&[1, 0], &[1e-6, 1.0 - 1e-6], 1e-3).unwrap();
        assert!((c.w[0] - 1000.0).abs() < 1e-9 && (c.w[1] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn identity_smoother_limit() {
        let k = GramBlock { rows: vec![0, 1, 2], cols: vec![0, 1, 2], values: DMatrix::identity(3, 3) };
        let s = arm_smoothers(0, &k, &[0, 1, 1], 1e12).unwrap();
        let w = ipw_multipliers(&[0, 1, 1], &[0.3, 0.6, 0.9], 1e-3).unwrap();
        for form in [ResidualForm::ObservedArm, ResidualForm::Pooled] {
            let d = dr_coefficients(&s, &w, form, Provenance::Logged).unwrap();
            let expect = DMatrix::from_diagonal(&DVector::from_vec(w.w.clone()));
            assert!((d.d - expect).abs().max() < 1e-9);
        }
    }

    #[test]
    fn two_point_worked_instance() {
        // mu0 = [[1/2, 0], [0, 0]], mu1 = [[0, 0], [0, 1/2]], w = (-2, 2):
        // Delta = diag(-1/2, 1/2), residual = diag(1/2, 1/2), D = diag(-3/2, 3/2).
        let k = GramBlock { rows: vec![0, 1], cols: vec![0, 1], values: DMatrix::identity(2, 2) };
        let s = arm_smoothers(0, &k, &[0, 1], 1.0).unwrap();
        let w = ipw_multipliers(&[0, 1], &[0.5, 0.5], 1e-3).unwrap();
        let d = dr_coefficients(&s, &w, ResidualForm::ObservedArm, Provenance::Logged).unwrap();
        assert_eq!(d.d, DMatrix::from_row_slice(2, 2, &[-1.5, 0.0, 0.0, 1.5]));
    }

    #[test]
    fn coefficients_match_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..15).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let a: Vec<u8> = (0..15).map(|i| (i % 3 == 0) as u8).collect();
        let p: Vec<f64> = (0..15).map(|_| rng.gen_range(0.1..0.9)).collect();
        let k = Kernel::gaussian(0.7).unwrap().gram(&x, &x).unwrap();
        let s = arm_smoothers(0, &k, &a, 0.1).unwrap();
        let w = ipw_multipliers(&a, &p, 1e-3).unwrap();
        let pooled = dr_coefficients(&s, &w, ResidualForm::Pooled, Provenance::Logged).unwrap();
        let wd = DMatrix::from_diagonal(&DVector::from_vec(w.w.clone()));
        assert!((pooled.d - (s.delta.transpose() + s.r.transpose() * &wd)).abs().max() < 1e-12);
        let obs = dr_coefficients(&s, &w, ResidualForm::ObservedArm, Provenance::Logged).unwrap();
        assert!((obs.d - (s.delta.transpose() + s.observed_residual().transpose() * wd)).abs().max() < 1e-12);
    }

    #[test]
    fn observed_arm_column_is_canonical_gradient() {
        // column i of D, contracted with scalar outcomes, equals the explicit score
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 12;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..0.8)).collect();
        let k = Kernel::gaussian(1.0).unwrap().gram(&x, &x).unwrap();
        let s = arm_smoothers(0, &k, &a, 0.2).unwrap();
        let w = ipw_multipliers(&a, &p, 1e-3).unwrap();
        let d = dr_coefficients(&s, &w, ResidualForm::ObservedArm, Provenance::Logged).unwrap();
        let f0 = s.predict(0, &y).unwrap();
        let f1 = s.predict(1, &y).unwrap();
        for i in 0..n {
            let mu_bar = vec![vec![f0[i]], vec![f1[i]]];
            let props = [1.0 - p[i], p[i]];
            let explicit = score_difference(1, 0, a[i] as usize, &props, &[y[i]], &mu_bar).unwrap()[0];
            let gram_form: f64 = d.d.column(i).iter().zip(&y).map(|(c, yy)| c * yy).sum();
            assert!((explicit - gram_form).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_matrix_identity_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k01 = GramBlock {
            rows: vec![0, 1, 2],
            cols: vec![3, 4],
            values: DMatrix::from_fn(3, 2, |_, _| rng.gen_range(0.0..1.0)),
        };
        let id0 = DrCoefficients { basis: vec![0, 1, 2], d: DMatrix::identity(3, 3), provenance: Provenance::Logged };
        let id1 = DrCoefficients { basis: vec![3, 4], d: DMatrix::identity(2, 2), provenance: Provenance::Logged };
        assert_eq!(cross_matrix(&id0, &k01, &id1).unwrap(), k01.values);
        let g = cross_matrix(&id0, &k01.scaled(3.0), &id1).unwrap();
        assert!((g - &k01.values * 3.0).abs().max() < 1e-15);
        assert!(cross_matrix(&id1, &k01, &id0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gram_trick_equals_feature_space(
            y0 in prop::collection::vec(-2.0f64..2.0, 2..8),
            y1 in prop::collection::vec(-2.0f64..2.0, 2..8),
            seed in any::<u64>(),
            scale in 0.1f64..10.0,
        ) {
            // linear outcome kernel k(y, y') = y y' on scalars
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n0, n1) = (y0.len(), y1.len());
            let d0 = DMatrix::from_fn(n0, n0, |_, _| rng.gen_range(-3.0..3.0));
            let d1 = DMatrix::from_fn(n1, n1, |_, _| rng.gen_range(-3.0..3.0));
            let k01 = GramBlock {
                rows: (0..n0).collect(),
                cols: (0..n1).collect(),
                values: DMatrix::from_fn(n0, n1, |i, j| y0[i] * y1[j]),
            };
            let c0 = DrCoefficients { basis: (0..n0).collect(), d: d0.clone(), provenance: Provenance::Logged };
            let c1 = DrCoefficients { basis: (0..n1).collect(), d: d1.clone(), provenance: Provenance::Logged };
            let g = cross_matrix(&c0, &k01, &c1).unwrap();
            for i in 0..n0 {
                for j in 0..n1 {
                    let f0: f64 = (0..n0).map(|s| d0[(s, i)] * y0[s]).sum();
                    let f1: f64 = (0..n1).map(|t| d1[(t, j)] * y1[t]).sum();
                    prop_assert!((g[(i, j)] - f0 * f1).abs() < 1e-8);
                }
            }
            let gs = cross_matrix(&c0, &k01.scaled(scale), &c1).unwrap();
            prop_assert!((gs - g * scale).abs().max() < 1e-9);
        }
    }
}
