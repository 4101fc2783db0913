//! Linearized regression problem `y = Σ_j Z_j b_j + ε`.
//!
//! Row `i` of `Z_j` is `ψ(t_i) ⊗ ξ_ij`: the exogenous basis is the outer
//! factor and the FPC scores the inner one, so column `l·m1 + k` pairs with
//! entry `(k, l)` of the column-major `m1 × m2` coefficient matrix `B_j`.

use nalgebra::{DMatrix, DVector};

use crate::basis::BSplineBasis;
use crate::error::{Error, Result};
use crate::fpca::FpcaResult;

#[derive(Debug, Clone)]
pub struct VcflmDesign {
    /// Standardized response (mean 0, SD 1 with divisor n).
    pub y: DVector<f64>,
    pub y_center: f64,
    pub y_scale: f64,
    pub t: Vec<f64>,
    pub t_basis: BSplineBasis,
    pub blocks: Vec<DMatrix<f64>>,
    pub group_dims: Vec<usize>,
}

impl VcflmDesign {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_groups(&self) -> usize {
        self.blocks.len()
    }

    /// Raw-scale values from standardized fitted values.
    pub fn fitted_to_response(&self, fitted: &DVector<f64>) -> DVector<f64> {
        fitted_to_response(self.y_center, self.y_scale, fitted)
    }
}

pub fn fitted_to_response(y_center: f64, y_scale: f64, fitted: &DVector<f64>) -> DVector<f64> {
    fitted.map(|v| v * y_scale + y_center)
}

/// Mean and SD (divisor n) of the response.
pub fn standardize(y_raw: &[f64]) -> Result<(DVector<f64>, f64, f64)> {
    let n = y_raw.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty response".into()));
    }
    if y_raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("response has non-finite values".into()));
    }
    let center = y_raw.iter().sum::<f64>() / n as f64;
    let var = y_raw.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n as f64;
    let scale = var.sqrt();
    if scale <= 1e-14 * center.abs().max(1.0) {
        return Err(Error::ConstantResponse);
    }
    let y = DVector::from_iterator(n, y_raw.iter().map(|v| (v - center) / scale));
    Ok((y, center, scale))
}

/// Exogenous basis values, one row per `t`.
pub fn exogenous_matrix(t: &[f64], t_basis: &BSplineBasis) -> Result<DMatrix<f64>> {
    t_basis.evaluate_many(t)
}

/// Kronecker rows `ψ(t_i) ⊗ ξ_i`.
pub fn design_block(scores: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if scores.nrows() != psi.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} score rows but {} exogenous rows",
            scores.nrows(),
            psi.nrows()
        )));
    }
    let m1 = scores.ncols();
    let m2 = psi.ncols();
    let mut z = DMatrix::zeros(scores.nrows(), m1 * m2);
    for l in 0..m2 {
        for k in 0..m1 {
            let mut col = z.column_mut(l * m1 + k);
            col.copy_from(&psi.column(l));
            col.component_mul_assign(&scores.column(k));
        }
    }
    Ok(z)
}

pub fn build_design(
    fpca_results: &[FpcaResult],
    t: &[f64],
    t_basis: &BSplineBasis,
    y_raw: &[f64],
) -> Result<VcflmDesign> {
    let n = y_raw.len();
    if fpca_results.is_empty() {
        return Err(Error::InvalidInput("at least one functional predictor is required".into()));
    }
    if t.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} exogenous values for {n} responses",
            t.len()
        )));
    }
    for (j, r) in fpca_results.iter().enumerate() {
        if r.scores.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "predictor {j} has {} score rows for {n} responses",
                r.scores.nrows()
            )));
        }
    }
    let psi = exogenous_matrix(t, t_basis)?;
    let (y, y_center, y_scale) = standardize(y_raw)?;
    let blocks = fpca_results
        .iter()
        .map(|r| design_block(&r.scores, &psi))
        .collect::<Result<Vec<_>>>()?;
    let group_dims = blocks.iter().map(|b| b.ncols()).collect();
    Ok(VcflmDesign {
        y,
        y_center,
        y_scale,
        t: t.to_vec(),
        t_basis: t_basis.clone(),
        blocks,
        group_dims,
    })
}

/// Column-major `m1 × m2` matrix from `vec B`.
pub fn unvec(b: &DVector<f64>, m1: usize) -> Result<DMatrix<f64>> {
    if m1 == 0 || b.len() % m1 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} cannot be reshaped with {m1} rows",
            b.len()
        )));
    }
    Ok(DMatrix::from_column_slice(m1, b.len() / m1, b.as_slice()))
}
