//! Group adaptive elastic-net estimation by blockwise coordinate descent.
//!
//! Each design block is orthogonalized as `Z_j = U_j R_j` with
//! `U_jᵀ U_j = n I`. In the coordinates `θ_j = R_j b_j` the working
//! objective is
//!
//! ```text
//! (1/(2n)) ‖y − Σ U_j θ_j‖² + αλ Σ ŵ_j ‖θ_j‖ + ((1 − α)λ / 2) Σ ‖θ_j‖²
//! ```
//!
//! and its exact minimizer in block `j`, holding the others fixed, is
//! `S(U_jᵀ r_j, nαλŵ_j) / (n(1 − α)λ + n)` with `S` the group
//! soft-thresholding operator and `r_j` the partial residual.

mod predict;

pub use predict::{coefficient_surface, predict, surface_from_coefficients};

use nalgebra::{DMatrix, DVector};

use crate::design::VcflmDesign;
use crate::error::{Error, Result};

/// Cap applied to adaptive weights of groups with a vanishing pilot fit.
pub const WEIGHT_CAP: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct OrthogonalizedDesign {
    n: usize,
    /// `U_j`, with `U_jᵀ U_j = n I`.
    pub u: Vec<DMatrix<f64>>,
    /// Upper-triangular `R_j` with nonnegative diagonal, `Z_j = U_j R_j`.
    pub r: Vec<DMatrix<f64>>,
}

impl OrthogonalizedDesign {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_groups(&self) -> usize {
        self.u.len()
    }

    pub fn group_dims(&self) -> Vec<usize> {
        self.u.iter().map(|u| u.ncols()).collect()
    }

    /// Original block `Z_j = U_j R_j`.
    pub fn block(&self, j: usize) -> DMatrix<f64> {
        &self.u[j] * &self.r[j]
    }
}

pub fn orthogonalize(design: &VcflmDesign) -> Result<OrthogonalizedDesign> {
    orthogonalize_blocks(&design.blocks)
}

/// Thin QR of each block rescaled so that `U_jᵀ U_j = n I`.
pub fn orthogonalize_blocks(blocks: &[DMatrix<f64>]) -> Result<OrthogonalizedDesign> {
    let n = blocks.first().map_or(0, |b| b.nrows());
    if n == 0 {
        return Err(Error::InvalidInput("design has no rows or no groups".into()));
    }
    let sqrt_n = (n as f64).sqrt();
    let mut u = Vec::with_capacity(blocks.len());
    let mut r = Vec::with_capacity(blocks.len());
    for (j, z) in blocks.iter().enumerate() {
        if z.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "group {j} has {} rows, expected {n}",
                z.nrows()
            )));
        }
        let d = z.ncols();
        if d == 0 {
            return Err(Error::InvalidInput(format!("group {j} has no columns")));
        }
        if d > n {
            return Err(Error::RankDeficient {
                group: j,
                min_singular_value: 0.0,
            });
        }
        let qr = z.clone().qr();
        let mut q = qr.q();
        let mut rt = qr.r();
        let sv = rt.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smax > 0.0) || smin <= smax * 1e-10 {
            return Err(Error::RankDeficient {
                group: j,
                min_singular_value: smin,
            });
        }
        for k in 0..d {
            if rt[(k, k)] < 0.0 {
                rt.row_mut(k).neg_mut();
                q.column_mut(k).neg_mut();
            }
        }
        u.push(q * sqrt_n);
        r.push(rt / sqrt_n);
    }
    Ok(OrthogonalizedDesign { n, u, r })
}

/// `(1 − κ/‖x‖₂)₊ x`; the zero vector whenever `‖x‖₂ <= κ`.
pub fn soft_threshold_group(x: &DVector<f64>, kappa: f64) -> DVector<f64> {
    let norm = x.norm();
    if norm <= kappa {
        DVector::zeros(x.len())
    } else {
        let excess = norm - kappa;
        x.map(|v| v * excess / norm)
    }
}

/// Group threshold `nαλŵ`, evaluated in one fixed operation order.
fn group_threshold(n: usize, alpha: f64, lambda: f64, weight: f64) -> f64 {
    n as f64 * alpha * lambda * weight
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    pub lambda: f64,
    pub alpha: f64,
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    pub fn new(lambda: f64, alpha: f64, weights: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!("lambda {lambda} must be finite and >= 0")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidInput(format!("alpha {alpha} must lie in [0, 1]")));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidInput("weights must be finite and >= 0".into()));
        }
        Ok(Self { lambda, alpha, weights })
    }

    /// Non-adaptive penalty (all weights 1).
    pub fn uniform(lambda: f64, alpha: f64, p: usize) -> Result<Self> {
        Self::new(lambda, alpha, vec![1.0; p])
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    fn check_groups(&self, p: usize) -> Result<()> {
        if self.weights.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} penalty weights for {p} groups",
                self.weights.len()
            )));
        }
        Ok(())
    }

    /// Penalty part of the working objective.
    pub fn value(&self, theta: &[DVector<f64>]) -> f64 {
        theta
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| {
                let norm = t.norm();
                let group = if norm > 0.0 { self.alpha * self.lambda * w * norm } else { 0.0 };
                group + 0.5 * (1.0 - self.alpha) * self.lambda * norm * norm
            })
            .sum()
    }
}

/// How the pilot estimate behind adaptive weights is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotEstimate {
    /// Minimum-norm least squares over all groups jointly.
    #[default]
    Joint,
    /// Separate least squares of `y` on each block.
    PerGroup,
}

/// `ŵ_j = ‖Z_j b̃_j‖₂⁻¹`, capped at [`WEIGHT_CAP`].
pub fn adaptive_weights(orth: &OrthogonalizedDesign, y: &DVector<f64>, pilot: PilotEstimate) -> Result<Vec<f64>> {
    if y.len() != orth.n() {
        return Err(Error::DimensionMismatch(format!(
            "response of length {} for a design with {} rows",
            y.len(),
            orth.n()
        )));
    }
    let norms: Vec<f64> = match pilot {
        PilotEstimate::PerGroup => orth
            .u
            .iter()
            .map(|u| u.tr_mul(y).norm() / (orth.n() as f64).sqrt())
            .collect(),
        PilotEstimate::Joint => {
            let dims = orth.group_dims();
            let total: usize = dims.iter().sum();
            let mut z = DMatrix::zeros(orth.n(), total);
            let mut offset = 0;
            for j in 0..orth.n_groups() {
                z.columns_mut(offset, dims[j]).copy_from(&orth.block(j));
                offset += dims[j];
            }
            let b = min_norm_least_squares(z.clone(), y)?;
            let mut offset = 0;
            (0..orth.n_groups())
                .map(|j| {
                    let fitted = z.columns(offset, dims[j]) * b.rows(offset, dims[j]);
                    offset += dims[j];
                    fitted.norm()
                })
                .collect()
        }
    };
    Ok(norms
        .into_iter()
        .map(|norm| if norm < 1e-12 { WEIGHT_CAP } else { (1.0 / norm).min(WEIGHT_CAP) })
        .collect())
}

fn min_norm_least_squares(z: DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let (rows, cols) = z.shape();
    let svd = z.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(cols));
    }
    let eps = smax * rows.max(cols) as f64 * f64::EPSILON;
    svd.solve(y, eps)
        .map_err(|e| Error::Decomposition(format!("pseudoinverse solve failed: {e}")))
}

/// Closed-form block minimizer from `U_jᵀ r_j`.
fn block_minimizer(correlation: &DVector<f64>, n: usize, penalty: &PenaltySpec, weight: f64) -> DVector<f64> {
    let nf = n as f64;
    // the ratio form keeps λ = ‖U_jᵀr_j‖/(nαŵ_j) itself on the zero side despite rounding
    let scale = nf * penalty.alpha * weight;
    if scale > 0.0 && correlation.norm() / scale <= penalty.lambda {
        return DVector::zeros(correlation.len());
    }
    let kappa = group_threshold(n, penalty.alpha, penalty.lambda, weight);
    soft_threshold_group(correlation, kappa) / (nf * (1.0 - penalty.alpha) * penalty.lambda + nf)
}

/// Exact minimizer in block `j` given the partial residual `r_j`.
pub fn block_update(
    orth: &OrthogonalizedDesign,
    j: usize,
    partial_residual: &DVector<f64>,
    penalty: &PenaltySpec,
) -> DVector<f64> {
    let correlation = orth.u[j].tr_mul(partial_residual);
    block_minimizer(&correlation, orth.n(), penalty, penalty.weights[j])
}

/// Smallest λ for which every group is thresholded at θ = 0:
/// `max_j ‖U_jᵀ y‖₂ / (nαŵ_j)`, nudged up to the first float at which the
/// solver's own threshold comparison zeroes every group.
pub fn lambda_max(orth: &OrthogonalizedDesign, y: &DVector<f64>, weights: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "lambda_max needs alpha in (0, 1], got {alpha}; supply lambdas explicitly"
        )));
    }
    if weights.len() != orth.n_groups() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} groups",
            weights.len(),
            orth.n_groups()
        )));
    }
    let n = orth.n();
    let norms: Vec<f64> = orth.u.iter().map(|u| u.tr_mul(y).norm()).collect();
    let mut lambda: f64 = 0.0;
    for (norm, &w) in norms.iter().zip(weights) {
        if *norm == 0.0 {
            continue;
        }
        if w <= 0.0 {
            return Err(Error::InvalidInput("an unpenalized group has no finite lambda_max".into()));
        }
        lambda = lambda.max(norm / (n as f64 * alpha * w));
    }
    while norms
        .iter()
        .zip(weights)
        .any(|(norm, &w)| *norm > group_threshold(n, alpha, lambda, w))
    {
        lambda = lambda.next_up();
    }
    Ok(lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Stop once the largest coordinate change in a sweep falls below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: Vec<DVector<f64>>,
    /// Coefficients on the original design, `b̂_j = R_j⁻¹ θ̂_j`.
    pub b: Vec<DVector<f64>>,
    pub active: Vec<bool>,
    /// Working objective after each sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Standardized fitted values `Σ U_j θ̂_j`.
    pub fitted: DVector<f64>,
}

impl FitResult {
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    pub fn active_set(&self) -> Vec<usize> {
        self.active
            .iter()
            .enumerate()
            .filter_map(|(j, a)| a.then_some(j))
            .collect()
    }

    pub fn rss(&self, y: &DVector<f64>) -> f64 {
        (y - &self.fitted).norm_squared()
    }

    /// Working objective at the returned solution.
    pub fn objective(&self, y: &DVector<f64>, penalty: &PenaltySpec) -> f64 {
        self.rss(y) / (2.0 * y.len() as f64) + penalty.value(&self.theta)
    }
}

pub fn fit(orth: &OrthogonalizedDesign, y: &DVector<f64>, penalty: &PenaltySpec, options: &FitOptions) -> Result<FitResult> {
    fit_from(orth, y, penalty, options, None)
}

/// Blockwise coordinate descent, optionally warm-started from `init`.
pub fn fit_from(
    orth: &OrthogonalizedDesign,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    options: &FitOptions,
    init: Option<&[DVector<f64>]>,
) -> Result<FitResult> {
    let n = orth.n();
    let p = orth.n_groups();
    penalty.check_groups(p)?;
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("response of length {} for {n} rows", y.len())));
    }
    if !(options.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }
    let dims = orth.group_dims();
    let mut theta: Vec<DVector<f64>> = match init {
        Some(start) => {
            if start.len() != p || start.iter().zip(&dims).any(|(t, d)| t.len() != *d) {
                return Err(Error::DimensionMismatch("warm start does not match group sizes".into()));
            }
            start.to_vec()
        }
        None => dims.iter().map(|&d| DVector::zeros(d)).collect(),
    };
    let mut residual = y.clone();
    for (u, t) in orth.u.iter().zip(&theta) {
        if t.iter().any(|v| *v != 0.0) {
            residual -= u * t;
        }
    }

    let nf = n as f64;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < options.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            let mut correlation = orth.u[j].tr_mul(&residual);
            correlation.axpy(nf, &theta[j], 1.0);
            let updated = block_minimizer(&correlation, n, penalty, penalty.weights[j]);
            let delta = &updated - &theta[j];
            let change = delta.amax();
            if change > 0.0 {
                residual.gemv(-1.0, &orth.u[j], &delta, 1.0);
                max_change = max_change.max(change);
            }
            theta[j] = updated;
        }
        let objective = residual.norm_squared() / (2.0 * nf) + penalty.value(&theta);
        if !objective.is_finite() {
            return Err(Error::NonFinite { sweep: sweeps });
        }
        trace.push(objective);
        if max_change < options.tol {
            converged = true;
            break;
        }
    }

    let b = theta
        .iter()
        .zip(&orth.r)
        .map(|(t, r)| {
            r.solve_upper_triangular(t)
                .ok_or_else(|| Error::Decomposition("R is singular".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let active = theta.iter().map(|t| t.iter().any(|v| *v != 0.0)).collect();
    let fitted = y - residual;
    Ok(FitResult {
        theta,
        b,
        active,
        objective_trace: trace,
        sweeps,
        converged,
        fitted,
    })
}

/// Stationarity residual of one group at a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KktCheck {
    /// `‖(1 + (1−α)λ)θ_j − U_jᵀr_j/n + αλŵ_j θ_j/‖θ_j‖‖_∞`.
    Active { violation: f64 },
    /// `‖U_jᵀ r_j‖₂` against the threshold `nαλŵ_j`.
    Inactive { norm: f64, threshold: f64 },
}

impl KktCheck {
    pub fn holds(&self, tol: f64) -> bool {
        match *self {
            KktCheck::Active { violation } => violation < tol,
            KktCheck::Inactive { norm, threshold } => norm <= threshold * (1.0 + tol),
        }
    }
}

/// Optimality conditions of each group, using partial residuals at the final iterate.
pub fn kkt_checks(orth: &OrthogonalizedDesign, y: &DVector<f64>, penalty: &PenaltySpec, result: &FitResult) -> Vec<KktCheck> {
    let n = orth.n();
    let nf = n as f64;
    let mut residual = y.clone();
    for (u, t) in orth.u.iter().zip(&result.theta) {
        residual -= u * t;
    }
    (0..orth.n_groups())
        .map(|j| {
            let theta = &result.theta[j];
            let partial = &residual + &orth.u[j] * theta;
            let corr = orth.u[j].tr_mul(&partial);
            let w = penalty.weights[j];
            let norm = theta.norm();
            if norm > 0.0 {
                let grad = theta * (1.0 + (1.0 - penalty.alpha) * penalty.lambda) - &corr / nf
                    + theta * (penalty.alpha * penalty.lambda * w / norm);
                KktCheck::Active { violation: grad.amax() }
            } else {
                KktCheck::Inactive {
                    norm: corr.norm(),
                    threshold: group_threshold(n, penalty.alpha, penalty.lambda, w),
                }
            }
        })
        .collect()
}
