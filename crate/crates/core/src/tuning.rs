//! BIC selection of `(λ, α, m₂)`.
//!
//! For every `m₂` the design is rebuilt and orthogonalized once; for every
//! `α` a descending λ path is fitted with warm starts. Each fit is scored by
//!
//! ```text
//! BIC = n log σ̂² + df log n,   σ̂² = RSS / n
//! df  = Σ_{j active} d_j / (1 + αλŵ_j/‖θ̂_j‖ + (1 − α)λ)
//! ```
//!
//! and the global minimizer is returned together with the full report.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::VcflmDesign;
use crate::error::{Error, Result};
use crate::solver::{
    adaptive_weights, fit_from, lambda_max, orthogonalize, FitOptions, FitResult, OrthogonalizedDesign, PenaltySpec,
    PilotEstimate,
};

/// Floor applied to σ̂² before taking logs.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Which coefficient norm enters the shrinkage factor of the df formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DfNorm {
    /// `‖θ̂_j‖`, the coordinates the penalty acts on.
    #[default]
    Theta,
    /// `‖b̂_j‖`.
    B,
}

pub fn effective_df(fit: &FitResult, penalty: &PenaltySpec, norm: DfNorm) -> f64 {
    fit.theta
        .iter()
        .enumerate()
        .filter(|(j, _)| fit.active[*j])
        .map(|(j, theta)| {
            let size = match norm {
                DfNorm::Theta => theta.norm(),
                DfNorm::B => fit.b[j].norm(),
            };
            let shrink = penalty.alpha * penalty.lambda * penalty.weights[j] / size + (1.0 - penalty.alpha) * penalty.lambda;
            theta.len() as f64 / (1.0 + shrink)
        })
        .sum()
}

/// `(BIC, σ̂²)` from a residual sum of squares.
pub fn bic_from_rss(rss: f64, n: usize, df: f64) -> (f64, f64) {
    let nf = n as f64;
    let sigma2 = (rss / nf).max(SIGMA2_FLOOR);
    (nf * sigma2.ln() + df * nf.ln(), sigma2)
}

pub fn bic(fit: &FitResult, y: &DVector<f64>, df: f64) -> f64 {
    bic_from_rss(fit.rss(y), y.len(), df).0
}

/// Geometric sequence from `λ_max` down to `ratio · λ_max`.
pub fn default_lambda_grid(
    orth: &OrthogonalizedDesign,
    y: &DVector<f64>,
    weights: &[f64],
    alpha: f64,
    n_points: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::InvalidInput("a lambda grid needs at least 2 points".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!("lambda ratio {ratio} must lie in (0, 1)")));
    }
    let top = lambda_max(orth, y, weights, alpha)?;
    if !(top > 0.0) {
        return Err(Error::InvalidInput("response is orthogonal to every group; lambda_max is 0".into()));
    }
    let last = n_points - 1;
    Ok((0..n_points)
        .map(|k| match k {
            0 => top,
            k if k == last => top * ratio,
            k => top * ratio.powf(k as f64 / last as f64),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaGrid {
    /// `n_points` values from `λ_max` down to `ratio · λ_max`, per `(m₂, α)`.
    Geometric { n_points: usize, ratio: f64 },
    /// Fixed values, strictly descending and positive.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub lambdas: LambdaGrid,
    pub alphas: Vec<f64>,
    pub m2_values: Vec<usize>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            lambdas: LambdaGrid::Geometric { n_points: 50, ratio: 1e-3 },
            alphas: vec![0.5, 0.9, 1.0],
            m2_values: vec![1, 4, 6, 8],
        }
    }
}

impl TuningGrid {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.m2_values.is_empty() {
            return Err(Error::InvalidInput("tuning grid has an empty axis".into()));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return Err(Error::InvalidInput(format!("alpha {a} must lie in (0, 1]")));
        }
        if self.m2_values.contains(&0) {
            return Err(Error::InvalidInput("m2 values must be at least 1".into()));
        }
        match &self.lambdas {
            LambdaGrid::Geometric { n_points, ratio } => {
                if *n_points < 2 || !(*ratio > 0.0 && *ratio < 1.0) {
                    return Err(Error::InvalidInput("geometric grid needs n_points >= 2 and ratio in (0, 1)".into()));
                }
            }
            LambdaGrid::Explicit(values) => {
                if values.is_empty() || values.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(Error::InvalidInput("explicit lambdas must be nonempty, positive and finite".into()));
                }
                if values.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(Error::InvalidInput("explicit lambdas must be strictly descending".into()));
                }
            }
        }
        Ok(())
    }

    fn lambdas_for(&self, orth: &OrthogonalizedDesign, y: &DVector<f64>, weights: &[f64], alpha: f64) -> Result<Vec<f64>> {
        match &self.lambdas {
            LambdaGrid::Geometric { n_points, ratio } => default_lambda_grid(orth, y, weights, alpha, *n_points, *ratio),
            LambdaGrid::Explicit(values) => Ok(values.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningOptions {
    /// Adaptive weights from a least-squares pilot; otherwise all weights are 1.
    pub adaptive: bool,
    pub pilot: PilotEstimate,
    pub df_norm: DfNorm,
    /// A λ path stops at the first fit whose effective df reaches this
    /// fraction of n. Off (infinite) by default; useful when the design has
    /// more columns than rows and the path runs into interpolating fits.
    pub max_df_fraction: f64,
    pub fit: FitOptions,
}

impl Default for TuningOptions {
    fn default() -> Self {
        Self {
            adaptive: true,
            pilot: PilotEstimate::Joint,
            df_norm: DfNorm::Theta,
            max_df_fraction: f64::INFINITY,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub m2: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub bic: f64,
    pub sigma2: f64,
    pub df: f64,
    pub n_active: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningReport {
    pub rows: Vec<TuningRow>,
    /// Index of the BIC minimizer (ties go to the larger λ, then the earlier row).
    pub best: usize,
}

impl TuningReport {
    pub fn from_rows(rows: Vec<TuningRow>) -> Result<Self> {
        let best = argmin(&rows).ok_or_else(|| Error::InvalidInput("empty tuning report".into()))?;
        Ok(Self { rows, best })
    }

    pub fn best_row(&self) -> &TuningRow {
        &self.rows[self.best]
    }
}

fn better(candidate: &TuningRow, incumbent: &TuningRow) -> bool {
    candidate.bic < incumbent.bic || (candidate.bic == incumbent.bic && candidate.lambda > incumbent.lambda)
}

fn argmin(rows: &[TuningRow]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, row) in rows.iter().enumerate() {
        if best.is_none_or(|b| better(row, &rows[b])) {
            best = Some(k);
        }
    }
    best
}

/// Best model found by [`select`].
#[derive(Debug, Clone)]
pub struct Selection {
    pub fit: FitResult,
    pub penalty: PenaltySpec,
    pub m2: usize,
    pub design: VcflmDesign,
    pub orth: OrthogonalizedDesign,
    pub report: TuningReport,
    /// Grid points or `m₂` values that could not be fitted.
    pub failures: Vec<String>,
}

struct PathOutcome {
    rows: Vec<TuningRow>,
    best: Option<(usize, FitResult, PenaltySpec)>,
    failures: Vec<String>,
}

fn run_path(
    orth: &OrthogonalizedDesign,
    y: &DVector<f64>,
    weights: &[f64],
    alpha: f64,
    m2: usize,
    grid: &TuningGrid,
    options: &TuningOptions,
) -> PathOutcome {
    let mut out = PathOutcome {
        rows: Vec::new(),
        best: None,
        failures: Vec::new(),
    };
    let lambdas = match grid.lambdas_for(orth, y, weights, alpha) {
        Ok(l) => l,
        Err(e) => {
            out.failures.push(format!("m2={m2} alpha={alpha}: {e}"));
            return out;
        }
    };
    let mut warm: Option<Vec<DVector<f64>>> = None;
    for lambda in lambdas {
        let penalty = PenaltySpec {
            lambda,
            alpha,
            weights: weights.to_vec(),
        };
        let fit = match fit_from(orth, y, &penalty, &options.fit, warm.as_deref()) {
            Ok(f) => f,
            Err(e) => {
                out.failures.push(format!("m2={m2} alpha={alpha} lambda={lambda}: {e}"));
                continue;
            }
        };
        let df = effective_df(&fit, &penalty, options.df_norm);
        if df >= options.max_df_fraction * y.len() as f64 {
            break;
        }
        let (bic, sigma2) = bic_from_rss(fit.rss(y), y.len(), df);
        let row = TuningRow {
            m2,
            alpha,
            lambda,
            bic,
            sigma2,
            df,
            n_active: fit.n_active(),
        };
        let replace = match &out.best {
            None => true,
            Some((k, _, _)) => better(&row, &out.rows[*k]),
        };
        warm = Some(fit.theta.clone());
        out.rows.push(row);
        if replace {
            out.best = Some((out.rows.len() - 1, fit, penalty));
        }
    }
    out
}

struct M2Outcome {
    m2: usize,
    design: VcflmDesign,
    orth: OrthogonalizedDesign,
    paths: Vec<PathOutcome>,
}

/// Grid search over `(m₂, α, λ)` minimizing BIC.
///
/// `build` returns the design for a given `m₂`. Grid points are evaluated in
/// parallel; the report order (m₂, then α, then descending λ) and the
/// selected model do not depend on the thread count.
pub fn select<F>(build: F, grid: &TuningGrid, options: &TuningOptions) -> Result<Selection>
where
    F: Fn(usize) -> Result<VcflmDesign> + Sync,
{
    grid.validate()?;
    let outcomes: Vec<std::result::Result<M2Outcome, String>> = grid
        .m2_values
        .par_iter()
        .map(|&m2| {
            let prepare = || -> Result<(VcflmDesign, OrthogonalizedDesign, Vec<f64>)> {
                let design = build(m2)?;
                let orth = orthogonalize(&design)?;
                let weights = if options.adaptive {
                    adaptive_weights(&orth, &design.y, options.pilot)?
                } else {
                    vec![1.0; orth.n_groups()]
                };
                Ok((design, orth, weights))
            };
            let (design, orth, weights) = prepare().map_err(|e| format!("m2={m2}: {e}"))?;
            let paths = grid
                .alphas
                .par_iter()
                .map(|&alpha| run_path(&orth, &design.y, &weights, alpha, m2, grid, options))
                .collect();
            Ok(M2Outcome { m2, design, orth, paths })
        })
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut best: Option<(usize, FitResult, PenaltySpec, usize)> = None;
    let mut kept: Vec<M2Outcome> = Vec::new();
    for outcome in outcomes {
        match outcome {
            Err(msg) => failures.push(msg),
            Ok(mut m2_outcome) => {
                let slot = kept.len();
                for path in std::mem::take(&mut m2_outcome.paths) {
                    failures.extend(path.failures);
                    let offset = rows.len();
                    rows.extend(path.rows);
                    if let Some((k, fit, penalty)) = path.best {
                        let index = offset + k;
                        let replace = match &best {
                            None => true,
                            Some((b, ..)) => better(&rows[index], &rows[*b]),
                        };
                        if replace {
                            best = Some((index, fit, penalty, slot));
                        }
                    }
                }
                kept.push(m2_outcome);
            }
        }
    }
    let Some((best_index, fit, penalty, slot)) = best else {
        return Err(Error::AllFailed(failures));
    };
    let chosen = kept.swap_remove(slot);
    Ok(Selection {
        fit,
        penalty,
        m2: chosen.m2,
        design: chosen.design,
        orth: chosen.orth,
        report: TuningReport { rows, best: best_index },
        failures,
    })
}
