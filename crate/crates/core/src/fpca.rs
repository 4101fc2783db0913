//! Functional principal component analysis in basis-coefficient space.
//!
//! Curves are represented by their coefficients in a common B-spline basis.
//! With centered coefficients `C` (n × M) and Gram matrix `W`, the empirical
//! covariance operator restricted to the basis span has the same nonzero
//! spectrum as `(1/n) W^{1/2} Cᵀ C W^{1/2}`. Eigenvectors `u` of that
//! symmetric matrix map back to L2-orthonormal eigenfunctions with
//! coefficients `W^{-1/2} u`.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::error::{Error, Result};
use crate::serde_util;

/// Basis coefficients of `n` curves sharing one basis.
#[derive(Debug, Clone)]
pub struct FunctionalSample {
    basis: BSplineBasis,
    coef: DMatrix<f64>,
}

impl FunctionalSample {
    pub fn new(basis: BSplineBasis, coef: DMatrix<f64>) -> Result<Self> {
        if coef.ncols() != basis.n_basis() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient matrix has {} columns for a basis of size {}",
                coef.ncols(),
                basis.n_basis()
            )));
        }
        if coef.nrows() < 2 {
            return Err(Error::InvalidInput("functional sample needs at least 2 curves".into()));
        }
        if coef.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("functional sample has non-finite coefficients".into()));
        }
        Ok(Self { basis, coef })
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn coef(&self) -> &DMatrix<f64> {
        &self.coef
    }

    pub fn n_curves(&self) -> usize {
        self.coef.nrows()
    }
}

/// Truncated Karhunen–Loève expansion of one functional predictor.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FpcaResult {
    pub basis: BSplineBasis,
    #[serde(with = "serde_util::vector")]
    pub mean_coef: DVector<f64>,
    /// Columns are basis coefficients of the eigenfunctions.
    #[serde(with = "serde_util::matrix_rows")]
    pub eigen_coef: DMatrix<f64>,
    #[serde(with = "serde_util::vector")]
    pub eigenvalues: DVector<f64>,
    /// Entry `(i, k)` is the score of curve `i` on eigenfunction `k`.
    #[serde(with = "serde_util::matrix_rows")]
    pub scores: DMatrix<f64>,
    /// Sum of all eigenvalues before truncation.
    pub total_variance: f64,
}

impl FpcaResult {
    pub fn n_components(&self) -> usize {
        self.eigen_coef.ncols()
    }

    /// Mean curve plus the first `m` components for curve `i`.
    pub fn reconstruct(&self, i: usize, m: usize) -> Result<DVector<f64>> {
        if i >= self.scores.nrows() {
            return Err(Error::InvalidInput(format!(
                "curve index {i} out of range for {} curves",
                self.scores.nrows()
            )));
        }
        if m > self.n_components() {
            return Err(Error::InvalidInput(format!(
                "requested {m} components but only {} were kept",
                self.n_components()
            )));
        }
        let mut out = self.mean_coef.clone();
        for k in 0..m {
            out.axpy(self.scores[(i, k)], &self.eigen_coef.column(k), 1.0);
        }
        Ok(out)
    }

    /// Eigenfunction values at `s`.
    pub fn eigenfunctions_at(&self, s: f64) -> Result<DVector<f64>> {
        Ok(self.eigen_coef.tr_mul(&self.basis.evaluate(s)?))
    }

    /// Scores of new curves, given as rows of basis coefficients, against
    /// the stored mean and eigenfunctions.
    pub fn project(&self, coef: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if coef.ncols() != self.mean_coef.len() {
            return Err(Error::DimensionMismatch(format!(
                "new curves have {} coefficients, basis has {}",
                coef.ncols(),
                self.mean_coef.len()
            )));
        }
        let mut centered = coef.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean_coef.transpose();
        }
        let weighted = self.basis.gram_matrix() * &self.eigen_coef;
        Ok(centered * weighted)
    }
}

/// Full eigen-decomposition, sorted and sign-normalized.
struct Spectrum {
    mean: DVector<f64>,
    centered: DMatrix<f64>,
    gram: DMatrix<f64>,
    inv_sqrt_gram: DMatrix<f64>,
    values: Vec<f64>,
    vectors: Vec<DVector<f64>>,
}

fn spectrum(sample: &FunctionalSample) -> Result<Spectrum> {
    let coef = sample.coef();
    let n = coef.nrows();
    let m = coef.ncols();
    let gram = sample.basis().gram_matrix();

    let gram_eig = gram.clone().symmetric_eigen();
    let gmax = gram_eig.eigenvalues.max();
    let gmin = gram_eig.eigenvalues.min();
    if !(gmax > 0.0) || gmin <= gmax * 1e-13 {
        return Err(Error::Decomposition(format!(
            "Gram matrix is not positive definite (eigenvalues in [{gmin:e}, {gmax:e}])"
        )));
    }
    let v = &gram_eig.eigenvectors;
    let sqrt_d = DMatrix::from_diagonal(&gram_eig.eigenvalues.map(f64::sqrt));
    let inv_sqrt_d = DMatrix::from_diagonal(&gram_eig.eigenvalues.map(|d| 1.0 / d.sqrt()));
    let sqrt_gram = v * sqrt_d * v.transpose();
    let inv_sqrt_gram = v * inv_sqrt_d * v.transpose();

    let mean = DVector::from_fn(m, |c, _| coef.column(c).sum() / n as f64);
    let mut centered = coef.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }

    let cs = &centered * &sqrt_gram;
    let mut cov = cs.tr_mul(&cs) / n as f64;
    cov = 0.5 * (&cov + cov.transpose());
    let eig = cov.symmetric_eigen();

    let mut pairs: Vec<(f64, DVector<f64>)> = eig
        .eigenvalues
        .iter()
        .zip(eig.eigenvectors.column_iter())
        .map(|(&val, vec)| (val.max(0.0), normalize_sign(vec.into_owned())))
        .collect();
    pairs.sort_by(|a, b| compare_eigenpairs(a, b));

    let (values, vectors) = pairs.into_iter().unzip();
    Ok(Spectrum {
        mean,
        centered,
        gram,
        inv_sqrt_gram,
        values,
        vectors,
    })
}

/// Makes the largest-magnitude component positive (first such index on ties).
fn normalize_sign(mut v: DVector<f64>) -> DVector<f64> {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
    v
}

fn compare_eigenpairs(a: &(f64, DVector<f64>), b: &(f64, DVector<f64>)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| {
        a.1.iter()
            .zip(b.1.iter())
            .find(|(x, y)| x != y)
            .map_or(Ordering::Equal, |(x, y)| y.total_cmp(x))
    })
}

/// Smallest number of components whose eigenvalue share reaches `threshold`.
///
/// A sample with zero total variance keeps one component.
pub fn components_for_share(eigenvalues: &[f64], threshold: f64) -> usize {
    let total: f64 = eigenvalues.iter().sum();
    if eigenvalues.is_empty() {
        return 0;
    }
    if total <= 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (k, v) in eigenvalues.iter().enumerate() {
        acc += v;
        if acc / total >= threshold - 1e-15 {
            return k + 1;
        }
    }
    eigenvalues.len()
}

/// Truncated expansion with `m1` components, `1 <= m1 <= min(n, M)`.
pub fn fpca(sample: &FunctionalSample, m1: usize) -> Result<FpcaResult> {
    let limit = sample.n_curves().min(sample.basis().n_basis());
    if m1 == 0 || m1 > limit {
        return Err(Error::InvalidInput(format!(
            "number of components {m1} must lie in 1..={limit}"
        )));
    }
    let spec = spectrum(sample)?;
    Ok(truncate(sample, spec, m1))
}

/// Expansion keeping the smallest number of components that explains
/// at least `threshold` of the total variance.
pub fn fpca_by_share(sample: &FunctionalSample, threshold: f64) -> Result<FpcaResult> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "variance share threshold {threshold} must lie in (0, 1]"
        )));
    }
    let limit = sample.n_curves().min(sample.basis().n_basis());
    let spec = spectrum(sample)?;
    let m1 = components_for_share(&spec.values[..limit], threshold).clamp(1, limit);
    Ok(truncate(sample, spec, m1))
}

fn truncate(sample: &FunctionalSample, spec: Spectrum, m1: usize) -> FpcaResult {
    let m = sample.basis().n_basis();
    let mut unit = DMatrix::zeros(m, m1);
    for k in 0..m1 {
        unit.set_column(k, &spec.vectors[k]);
    }
    let eigen_coef = &spec.inv_sqrt_gram * unit;
    let scores = &spec.centered * (&spec.gram * &eigen_coef);
    FpcaResult {
        basis: sample.basis().clone(),
        mean_coef: spec.mean,
        eigen_coef,
        eigenvalues: DVector::from_iterator(m1, spec.values.iter().copied().take(m1)),
        scores,
        total_variance: spec.values.iter().sum(),
    }
}
