//! Gaussian kernels, Gram blocks and length-scale rules.
//!
//! The canonical parametrization is the length-scale form
//! `k(a, b) = exp(-|a - b|^2 / (2 γ^2))`. Precision-style bandwidths are
//! converted with [`precision_to_lengthscale`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Length-scale fallback used when every pairwise distance is zero.
pub const DEGENERATE_LENGTHSCALE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthscaleRule {
    Fixed(f64),
    /// Median of the pairwise Euclidean distances.
    Median,
    /// Half of the median pairwise distance.
    HalfMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    #[serde(default)]
    pub family: KernelFamily,
    pub lengthscale: LengthscaleRule,
}

impl KernelSpec {
    pub fn gaussian(lengthscale: LengthscaleRule) -> Self {
        Self { family: KernelFamily::Gaussian, lengthscale }
    }

    pub fn validate(&self) -> Result<()> {
        if let LengthscaleRule::Fixed(g) = self.lengthscale {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::Input(format!("fixed length-scale must be positive, got {g}")));
            }
        }
        Ok(())
    }

    /// Resolves the length-scale against `data` and returns an evaluable kernel.
    pub fn resolve<P: AsRef<[f64]>>(&self, data: &[P]) -> Result<Kernel> {
        let lengthscale = resolve_lengthscale(self, data)?;
        Kernel::gaussian(lengthscale)
    }
}

/// Which space a kernel acts on. Only used for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRole {
    Covariate,
    Outcome,
}

/// A Gaussian kernel with a resolved length-scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel {
    lengthscale: f64,
    inv_two_sq: f64,
}

impl Kernel {
    pub fn gaussian(lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::Input(format!("length-scale must be positive, got {lengthscale}")));
        }
        Ok(Self { lengthscale, inv_two_sq: 1.0 / (2.0 * lengthscale * lengthscale) })
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(a.len(), b.len())?;
        Ok(self.eval_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) * self.inv_two_sq).exp()
    }

    /// Gram block between two point sets, with row/column ids `0..n`.
    pub fn gram<P: AsRef<[f64]>, Q: AsRef<[f64]>>(&self, rows: &[P], cols: &[Q]) -> Result<GramBlock> {
        if rows.is_empty() || cols.is_empty() {
            return Err(Error::Input("gram of an empty point set".into()));
        }
        let dim = rows[0].as_ref().len();
        for p in rows.iter().map(AsRef::as_ref).chain(cols.iter().map(AsRef::as_ref)) {
            check_dim(dim, p.len())?;
        }
        let values = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            self.eval_unchecked(rows[i].as_ref(), cols[j].as_ref())
        });
        Ok(GramBlock { rows: (0..rows.len()).collect(), cols: (0..cols.len()).collect(), values })
    }

    /// Symmetric Gram matrix of `points` against themselves, filled from the upper triangle.
    pub fn gram_symmetric<P: AsRef<[f64]>>(&self, points: &[P]) -> Result<GramBlock> {
        if points.is_empty() {
            return Err(Error::Input("gram of an empty point set".into()));
        }
        let n = points.len();
        let dim = points[0].as_ref().len();
        for p in points {
            check_dim(dim, p.as_ref().len())?;
        }
        let mut values = DMatrix::zeros(n, n);
        for j in 0..n {
            values[(j, j)] = 1.0;
            for i in 0..j {
                let k = self.eval_unchecked(points[i].as_ref(), points[j].as_ref());
                values[(i, j)] = k;
                values[(j, i)] = k;
            }
        }
        let ids: Vec<usize> = (0..n).collect();
        Ok(GramBlock { rows: ids.clone(), cols: ids, values })
    }
}

/// Dense Gram block with the round ids its rows and columns refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct GramBlock {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: DMatrix<f64>,
}

impl GramBlock {
    /// Extracts the sub-block for the given row and column ids, which must
    /// all appear in `self.rows` / `self.cols` when those are `0..n`.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> GramBlock {
        let values = DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.values[(rows[i], cols[j])]);
        GramBlock { rows: rows.to_vec(), cols: cols.to_vec(), values }
    }

    pub fn transpose(&self) -> GramBlock {
        GramBlock { rows: self.cols.clone(), cols: self.rows.clone(), values: self.values.transpose() }
    }

    pub fn scaled(&self, c: f64) -> GramBlock {
        GramBlock { rows: self.rows.clone(), cols: self.cols.clone(), values: &self.values * c }
    }
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of all pairwise Euclidean distances over `i < j`.
pub fn median_pairwise_distance<P: AsRef<[f64]>>(data: &[P]) -> Result<f64> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Input(format!("median rule needs at least 2 points, got {n}")));
    }
    let dim = data[0].as_ref().len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for j in 0..n {
        check_dim(dim, data[j].as_ref().len())?;
        for i in 0..j {
            d.push(sq_dist(data[i].as_ref(), data[j].as_ref()));
        }
    }
    // Squared distances share the ordering of distances; sqrt only the middle.
    let m = d.len();
    let mid = m / 2;
    let (_, &mut hi, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let med_sq = if m % 2 == 1 {
        hi.sqrt()
    } else {
        let lo = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo.sqrt() + hi.sqrt())
    };
    Ok(med_sq)
}

/// Resolves a length-scale rule against the data. A zero median falls back
/// to [`DEGENERATE_LENGTHSCALE`].
pub fn resolve_lengthscale<P: AsRef<[f64]>>(spec: &KernelSpec, data: &[P]) -> Result<f64> {
    spec.validate()?;
    let median = |data: &[P]| -> Result<f64> {
        let m = median_pairwise_distance(data)?;
        Ok(if m > 0.0 { m } else { DEGENERATE_LENGTHSCALE })
    };
    match spec.lengthscale {
        LengthscaleRule::Fixed(g) => Ok(g),
        LengthscaleRule::Median => median(data),
        LengthscaleRule::HalfMedian => {
            let m = median_pairwise_distance(data)?;
            Ok(if m > 0.0 { 0.5 * m } else { DEGENERATE_LENGTHSCALE })
        }
    }
}

/// Converts a precision-style bandwidth `p` in `exp(-p |a - b|^2 / 2)` to
/// the equivalent length-scale `1 / sqrt(p)`.
pub fn precision_to_lengthscale(precision: f64) -> Result<f64> {
    if !(precision > 0.0 && precision.is_finite()) {
        return Err(Error::Input(format!("precision must be positive, got {precision}")));
    }
    Ok(1.0 / precision.sqrt())
}
