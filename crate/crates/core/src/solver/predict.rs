use nalgebra::{DMatrix, DVector};

use crate::basis::{smooth_curve, BSplineBasis, RawCurve};
use crate::design::{design_block, fitted_to_response, unvec};
use crate::error::{Error, Result};
use crate::fpca::FpcaResult;

use super::FitResult;

/// `β̂_j(s_a, t_b) = φ_j(s_a)ᵀ B̂_j ψ(t_b)` on a grid.
pub fn coefficient_surface(
    fit: &FitResult,
    j: usize,
    fpca_j: &FpcaResult,
    t_basis: &BSplineBasis,
    grid_s: &[f64],
    grid_t: &[f64],
) -> Result<DMatrix<f64>> {
    let b = fit
        .b
        .get(j)
        .ok_or_else(|| Error::InvalidInput(format!("group {j} is not part of the fit")))?;
    surface_from_coefficients(b, fpca_j, t_basis, grid_s, grid_t)
}

pub fn surface_from_coefficients(
    b: &DVector<f64>,
    fpca_j: &FpcaResult,
    t_basis: &BSplineBasis,
    grid_s: &[f64],
    grid_t: &[f64],
) -> Result<DMatrix<f64>> {
    let m1 = fpca_j.n_components();
    if b.len() != m1 * t_basis.n_basis() {
        return Err(Error::DimensionMismatch(format!(
            "coefficient vector of length {} for m1 = {m1}, m2 = {}",
            b.len(),
            t_basis.n_basis()
        )));
    }
    let bmat = unvec(b, m1)?;
    let phi = fpca_j.basis.evaluate_many(grid_s)? * &fpca_j.eigen_coef;
    let psi = t_basis.evaluate_many(grid_t)?;
    Ok(phi * bmat * psi.transpose())
}

/// Raw-scale predictions for new subjects.
///
/// `curves[j][i]` is the raw curve of predictor `j` for subject `i`. Curves
/// are smoothed with each predictor's training basis and scored against the
/// training mean and eigenfunctions.
pub fn predict(
    b: &[DVector<f64>],
    fpca_results: &[FpcaResult],
    t_basis: &BSplineBasis,
    y_center: f64,
    y_scale: f64,
    curves: &[Vec<RawCurve>],
    t: &[f64],
) -> Result<DVector<f64>> {
    if curves.len() != fpca_results.len() || b.len() != fpca_results.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictors in the model, {} curve sets and {} coefficient blocks supplied",
            fpca_results.len(),
            curves.len(),
            b.len()
        )));
    }
    let n = t.len();
    if let Some(&bad) = t.iter().find(|&&v| !t_basis.contains(v)) {
        let (lower, upper) = t_basis.domain();
        return Err(Error::Domain { value: bad, lower, upper });
    }
    let psi = t_basis.evaluate_many(t)?;
    let mut standardized = DVector::zeros(n);
    for (j, (fp, set)) in fpca_results.iter().zip(curves).enumerate() {
        if set.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "predictor {j} has {} curves for {n} exogenous values",
                set.len()
            )));
        }
        let mut coef = DMatrix::zeros(n, fp.basis.n_basis());
        for (i, curve) in set.iter().enumerate() {
            coef.set_row(i, &smooth_curve(curve, &fp.basis)?.transpose());
        }
        let scores = fp.project(&coef)?;
        let z = design_block(&scores, &psi)?;
        standardized += z * &b[j];
    }
    Ok(fitted_to_response(y_center, y_scale, &standardized))
}
