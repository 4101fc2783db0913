//! A fitted model as persisted by `fit` and consumed by `predict`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BSplineBasis, RawCurve};
use crate::error::{Error, Result};
use crate::fpca::FpcaResult;
use crate::solver::{predict, surface_from_coefficients};
use crate::tuning::Selection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedModel {
    pub variables: Vec<String>,
    /// Names of the variables with a nonzero coefficient surface.
    pub selected: Vec<String>,
    pub m2: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub sigma2: f64,
    pub df: f64,
    pub bic: f64,
    pub weights: Vec<f64>,
    pub y_center: f64,
    pub y_scale: f64,
    pub t_basis: BSplineBasis,
    pub fpca: Vec<FpcaResult>,
    /// `vec(B̂_j)` per variable, column-major `m₁ × m₂`.
    pub coefficients: Vec<Vec<f64>>,
    pub subjects: Vec<String>,
    /// In-sample fitted responses on the raw scale, aligned with `subjects`.
    pub fitted: Vec<f64>,
}

impl FittedModel {
    pub fn from_selection(
        selection: &Selection,
        variables: Vec<String>,
        fpca: Vec<FpcaResult>,
        t_basis: BSplineBasis,
        subjects: Vec<String>,
    ) -> Result<Self> {
        if variables.len() != selection.fit.b.len() || fpca.len() != variables.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} variables, {} FPCA results, {} coefficient blocks",
                variables.len(),
                fpca.len(),
                selection.fit.b.len()
            )));
        }
        let best = selection.report.best_row();
        let fitted = selection.design.fitted_to_response(&selection.fit.fitted);
        Ok(Self {
            selected: selection.fit.active_set().into_iter().map(|j| variables[j].clone()).collect(),
            variables,
            m2: selection.m2,
            alpha: selection.penalty.alpha,
            lambda: selection.penalty.lambda,
            sigma2: best.sigma2,
            df: best.df,
            bic: best.bic,
            weights: selection.penalty.weights.clone(),
            y_center: selection.design.y_center,
            y_scale: selection.design.y_scale,
            t_basis,
            fpca,
            coefficients: selection.fit.b.iter().map(|b| b.iter().copied().collect()).collect(),
            subjects,
            fitted: fitted.iter().copied().collect(),
        })
    }

    pub fn variable_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| Error::InvalidInput(format!("variable {name} is not part of the model")))
    }

    fn blocks(&self) -> Vec<DVector<f64>> {
        self.coefficients.iter().map(|b| DVector::from_column_slice(b)).collect()
    }

    /// `curves[j][i]` for `variables[j]`, subject `i`.
    pub fn predict(&self, curves: &[Vec<RawCurve>], t: &[f64]) -> Result<Vec<f64>> {
        let y = predict(&self.blocks(), &self.fpca, &self.t_basis, self.y_center, self.y_scale, curves, t)?;
        Ok(y.iter().copied().collect())
    }

    pub fn surface(&self, j: usize, grid_s: &[f64], grid_t: &[f64]) -> Result<DMatrix<f64>> {
        let b = self
            .coefficients
            .get(j)
            .ok_or_else(|| Error::InvalidInput(format!("variable index {j} out of range")))?;
        surface_from_coefficients(&DVector::from_column_slice(b), &self.fpca[j], &self.t_basis, grid_s, grid_t)
    }

    /// `points` equally spaced values covering a basis domain.
    pub fn grid(basis: &BSplineBasis, points: usize) -> Vec<f64> {
        let (lo, hi) = basis.domain();
        match points {
            0 => vec![],
            1 => vec![0.5 * (lo + hi)],
            _ => (0..points)
                .map(|k| if k == points - 1 { hi } else { lo + (hi - lo) * k as f64 / (points - 1) as f64 })
                .collect(),
        }
    }
}
