//! Monte-Carlo comparison of the varying-coefficient and scalar-coefficient
//! estimators, with and without adaptive weights.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{smooth_curve, BSplineBasis, RawCurve};
use crate::design::build_design;
use crate::error::{Error, Result};
use crate::fpca::{fpca_by_share, FpcaResult, FunctionalSample};
use crate::solver::{FitOptions, PilotEstimate};
use crate::tuning::{select, DfNorm, LambdaGrid, TuningGrid, TuningOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    /// Number of predictors; the first half carry signal.
    pub p: usize,
    pub m1_gen: usize,
    pub m2_gen: usize,
    pub generator_order: usize,
    /// Observations per curve, equally spaced on `[0, 1]`.
    pub n_points: usize,
    /// Response noise SD as a fraction of the range of `f`.
    pub noise_level: f64,
    /// Predictor noise SD as a fraction of each curve's range.
    pub predictor_noise_factor: f64,
    pub seed: u64,
    pub replicates: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 100,
            p: 6,
            m1_gen: 5,
            m2_gen: 4,
            generator_order: 4,
            n_points: 21,
            noise_level: 0.1,
            predictor_noise_factor: 0.1,
            seed: 1,
            replicates: 20,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p % 2 != 0 {
            return Err(Error::Config(format!("p = {} must be even and positive", self.p)));
        }
        if self.n < 2 {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if self.m1_gen == 0 || self.m2_gen == 0 || self.generator_order == 0 {
            return Err(Error::Config("generator basis sizes and order must be positive".into()));
        }
        if self.n_points < self.m1_gen || self.n_points < 2 {
            return Err(Error::Config(format!(
                "{} points per curve cannot support {} generator functions",
                self.n_points, self.m1_gen
            )));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::Config(format!("noise level {} must be finite and nonnegative", self.noise_level)));
        }
        if !(self.predictor_noise_factor >= 0.0 && self.predictor_noise_factor.is_finite()) {
            return Err(Error::Config("predictor noise factor must be finite and nonnegative".into()));
        }
        Ok(())
    }

    fn curve_basis(&self) -> Result<BSplineBasis> {
        BSplineBasis::uniform(0.0, 1.0, self.generator_order.min(self.m1_gen), self.m1_gen)
    }

    fn t_basis(&self) -> Result<BSplineBasis> {
        BSplineBasis::uniform(0.0, 1.0, self.generator_order.min(self.m2_gen), self.m2_gen)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// Observation points shared by all curves.
    pub grid: Vec<f64>,
    /// `curves[j][i]`: noisy observations of predictor `j` for subject `i`.
    pub curves: Vec<Vec<RawCurve>>,
    /// `curve_weights[j]` is `n × m1_gen`; row `i` holds the generator coefficients of subject `i`.
    pub curve_weights: Vec<DMatrix<f64>>,
    /// True coefficient matrices, `m1_gen × m2_gen`; zero for inactive predictors.
    pub coefficients: Vec<DMatrix<f64>>,
    pub curve_basis: BSplineBasis,
    pub t_basis: BSplineBasis,
    pub t: Vec<f64>,
    /// Noiseless signal.
    pub f: Vec<f64>,
    pub y: Vec<f64>,
    pub response_range: f64,
    pub noise_sd: f64,
    /// Zero-based indices of the signal-bearing predictors.
    pub true_active: Vec<usize>,
}

/// Replicate 0 of the configured study.
pub fn generate(config: &SimulationConfig) -> Result<SyntheticDataset> {
    generate_replicate(config, 0)
}

/// Replicate `r` draws from its own ChaCha stream, so it does not depend on
/// how many replicates run or in which order.
pub fn generate_replicate(config: &SimulationConfig, replicate: u64) -> Result<SyntheticDataset> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate);
    let (n, p) = (config.n, config.p);
    let curve_basis = config.curve_basis()?;
    let t_basis = config.t_basis()?;
    let active = p / 2;

    let coefficients: Vec<DMatrix<f64>> = (0..p)
        .map(|j| {
            if j < active {
                let draws: Vec<f64> = (0..config.m1_gen * config.m2_gen).map(|_| rng.sample(StandardNormal)).collect();
                DMatrix::from_vec(config.m1_gen, config.m2_gen, draws)
            } else {
                DMatrix::zeros(config.m1_gen, config.m2_gen)
            }
        })
        .collect();

    let last = (config.n_points - 1) as f64;
    let grid: Vec<f64> = (0..config.n_points).map(|a| a as f64 / last).collect();
    let phi = curve_basis.evaluate_many(&grid)?;
    let mut curve_weights = Vec::with_capacity(p);
    let mut curves = Vec::with_capacity(p);
    for _ in 0..p {
        let mut w = DMatrix::zeros(n, config.m1_gen);
        let mut set = Vec::with_capacity(n);
        for i in 0..n {
            let wi = DVector::from_fn(config.m1_gen, |_, _| rng.sample(StandardNormal));
            let clean = &phi * &wi;
            let range = clean.max() - clean.min();
            let sd = config.predictor_noise_factor * range;
            let values: Vec<f64> = clean.iter().map(|g| g + sd * rng.sample::<f64, _>(StandardNormal)).collect();
            set.push(RawCurve::new(grid.clone(), values)?);
            w.set_row(i, &wi.transpose());
        }
        curve_weights.push(w);
        curves.push(set);
    }

    let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let psi = t_basis.evaluate_many(&t)?;
    // ∫ g_ij(s) φ(s)ᵀ ds B_j ψ(t_i) = w_ijᵀ G B_j ψ(t_i), exact for splines
    let gram = curve_basis.gram_matrix();
    let mut f = DVector::zeros(n);
    for (w, b) in curve_weights.iter().zip(&coefficients).take(active) {
        let inner = w * &gram * b; // n × m2_gen
        f += inner.component_mul(&psi).column_sum();
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("generated signal is not finite".into()));
    }
    let response_range = f.max() - f.min();
    let noise_sd = config.noise_level * response_range;
    let y: Vec<f64> = f.iter().map(|fi| fi + noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();

    Ok(SyntheticDataset {
        grid,
        curves,
        curve_weights,
        coefficients,
        curve_basis,
        t_basis,
        t,
        f: f.iter().copied().collect(),
        y,
        response_range,
        noise_sd,
        true_active: (0..active).collect(),
    })
}

pub fn rmse(f_true: &[f64], f_hat: &[f64]) -> Result<f64> {
    if f_true.len() != f_hat.len() || f_true.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "rmse of vectors of length {} and {}",
            f_true.len(),
            f_hat.len()
        )));
    }
    let ss: f64 = f_true.iter().zip(f_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / f_true.len() as f64).sqrt())
}

/// `(APR %, ANR %)` for zero-based index sets within `0..p`.
pub fn apr_anr(true_active: &BTreeSet<usize>, est_active: &BTreeSet<usize>, p: usize) -> Result<(f64, f64)> {
    if let Some(j) = true_active.iter().chain(est_active).find(|j| **j >= p) {
        return Err(Error::InvalidInput(format!("index {j} outside 0..{p}")));
    }
    let positives = true_active.len();
    let negatives = p - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{positives} true positives and {negatives} true negatives among {p} predictors"
        )));
    }
    let hits = est_active.intersection(true_active).count();
    let correct_rejections = (0..p).filter(|j| !est_active.contains(j) && !true_active.contains(j)).count();
    Ok((
        100.0 * hits as f64 / positives as f64,
        100.0 * correct_rejections as f64 / negatives as f64,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SVCFLM")]
    Svcflm,
    #[serde(rename = "aSVCFLM")]
    AdaptiveSvcflm,
    #[serde(rename = "SFLM")]
    Sflm,
    #[serde(rename = "aSFLM")]
    AdaptiveSflm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Svcflm, Method::AdaptiveSvcflm, Method::Sflm, Method::AdaptiveSflm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Svcflm => "SVCFLM",
            Method::AdaptiveSvcflm => "aSVCFLM",
            Method::Sflm => "SFLM",
            Method::AdaptiveSflm => "aSFLM",
        }
    }

    pub fn adaptive(self) -> bool {
        matches!(self, Method::AdaptiveSvcflm | Method::AdaptiveSflm)
    }

    pub fn varying(self) -> bool {
        matches!(self, Method::Svcflm | Method::AdaptiveSvcflm)
    }
}

/// Estimator settings shared by all methods in a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorOptions {
    pub smoothing_order: usize,
    pub smoothing_n_basis: usize,
    pub variance_share: f64,
    /// `m₂` candidates for the varying-coefficient methods; the scalar methods use `m₂ = 1`.
    pub varying_m2_values: Vec<usize>,
    pub alphas: Vec<f64>,
    pub lambdas: LambdaGrid,
    pub pilot: PilotEstimate,
    pub df_norm: DfNorm,
    /// See [`TuningOptions::max_df_fraction`]; `None` disables the limit.
    pub max_df_fraction: Option<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        let grid = TuningGrid::default();
        Self {
            smoothing_order: 4,
            smoothing_n_basis: 8,
            variance_share: 0.99,
            varying_m2_values: grid.m2_values.iter().copied().filter(|m| *m > 1).collect(),
            alphas: grid.alphas,
            lambdas: grid.lambdas,
            pilot: PilotEstimate::Joint,
            df_norm: DfNorm::Theta,
            max_df_fraction: None,
            tol: FitOptions::default().tol,
            max_sweeps: FitOptions::default().max_sweeps,
        }
    }
}

impl EstimatorOptions {
    fn grid(&self, method: Method) -> TuningGrid {
        TuningGrid {
            lambdas: self.lambdas.clone(),
            alphas: self.alphas.clone(),
            m2_values: if method.varying() { self.varying_m2_values.clone() } else { vec![1] },
        }
    }

    fn tuning(&self, method: Method) -> TuningOptions {
        TuningOptions {
            adaptive: method.adaptive(),
            pilot: self.pilot,
            df_norm: self.df_norm,
            max_df_fraction: self.max_df_fraction.unwrap_or(f64::INFINITY),
            fit: FitOptions {
                tol: self.tol,
                max_sweeps: self.max_sweeps,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub rmse: f64,
    pub apr: f64,
    pub anr: f64,
    pub m2: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub selected: Vec<usize>,
}

/// Smooths every curve and runs FPCA per predictor.
pub fn fpca_of_dataset(data: &SyntheticDataset, options: &EstimatorOptions) -> Result<Vec<FpcaResult>> {
    let basis = BSplineBasis::uniform(0.0, 1.0, options.smoothing_order, options.smoothing_n_basis)?;
    data.curves
        .iter()
        .map(|set| {
            let mut coef = DMatrix::zeros(set.len(), basis.n_basis());
            for (i, curve) in set.iter().enumerate() {
                coef.set_row(i, &smooth_curve(curve, &basis)?.transpose());
            }
            fpca_by_share(&FunctionalSample::new(basis.clone(), coef)?, options.variance_share)
        })
        .collect()
}

/// Fits each method to one dataset.
pub fn evaluate_methods(data: &SyntheticDataset, methods: &[Method], options: &EstimatorOptions) -> Result<Vec<MethodOutcome>> {
    let fpcas = fpca_of_dataset(data, options)?;
    let (lower, upper) = data.t_basis.domain();
    let build = |m2: usize| build_design(&fpcas, &data.t, &BSplineBasis::cubic_or_lower(lower, upper, m2)?, &data.y);
    let truth: BTreeSet<usize> = data.true_active.iter().copied().collect();
    methods
        .iter()
        .map(|&method| {
            let sel = select(build, &options.grid(method), &options.tuning(method))?;
            let f_hat = sel.design.fitted_to_response(&sel.fit.fitted);
            let selected = sel.fit.active_set();
            let (apr, anr) = apr_anr(&truth, &selected.iter().copied().collect(), data.curves.len())?;
            Ok(MethodOutcome {
                method,
                rmse: rmse(&data.f, f_hat.as_slice())?,
                apr,
                anr,
                m2: sel.m2,
                alpha: sel.penalty.alpha,
                lambda: sel.penalty.lambda,
                selected,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub methods: Vec<MethodOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_rmse: f64,
    /// Sample SD across replicates (0 with a single replicate).
    pub sd_rmse: f64,
    pub mean_apr: f64,
    pub mean_anr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub n: usize,
    pub noise_level: f64,
    pub seed: u64,
    pub summaries: Vec<MethodSummary>,
    pub replicates: Vec<ReplicateOutcome>,
    /// `(replicate, message)` for replicates excluded from the summaries.
    pub failures: Vec<(usize, String)>,
}

impl StudyReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

fn summarize(method: Method, outcomes: &[ReplicateOutcome]) -> MethodSummary {
    let rows: Vec<&MethodOutcome> = outcomes
        .iter()
        .flat_map(|r| r.methods.iter().filter(|m| m.method == method))
        .collect();
    let k = rows.len() as f64;
    let mean = |f: fn(&MethodOutcome) -> f64| rows.iter().map(|m| f(m)).sum::<f64>() / k;
    let mean_rmse = mean(|m| m.rmse);
    let sd_rmse = if rows.len() > 1 {
        (rows.iter().map(|m| (m.rmse - mean_rmse).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    MethodSummary {
        method,
        mean_rmse,
        sd_rmse,
        mean_apr: mean(|m| m.apr),
        mean_anr: mean(|m| m.anr),
    }
}

/// Runs `config.replicates` independent replicates in parallel.
pub fn run_study(config: &SimulationConfig, methods: &[Method], options: &EstimatorOptions) -> Result<StudyReport> {
    config.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidInput("no methods requested".into()));
    }
    let results: Vec<Result<ReplicateOutcome>> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let data = generate_replicate(config, r as u64)?;
            Ok(ReplicateOutcome {
                replicate: r,
                methods: evaluate_methods(&data, methods, options)?,
            })
        })
        .collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => replicates.push(o),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if replicates.is_empty() {
        return Err(Error::AllFailed(failures.into_iter().map(|(r, m)| format!("replicate {r}: {m}")).collect()));
    }
    Ok(StudyReport {
        n: config.n,
        noise_level: config.noise_level,
        seed: config.seed,
        summaries: methods.iter().map(|&m| summarize(m, &replicates)).collect(),
        replicates,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimulationConfig {
        SimulationConfig {
            n: 40,
            replicates: 2,
            ..SimulationConfig::default()
        }
    }

    #[test]
    fn zero_noise_gives_exact_signal() {
        let d = generate(&SimulationConfig {
            noise_level: 0.0,
            ..small()
        })
        .unwrap();
        assert!(d.y.iter().zip(&d.f).all(|(y, f)| y == f));
    }

    #[test]
    fn inactive_predictors_carry_no_signal() {
        let mut d = generate(&small()).unwrap();
        assert!(d.coefficients[3..].iter().all(|b| b.iter().all(|v| *v == 0.0)));
        // perturbing an inactive predictor's curves leaves f unchanged
        let gram = d.curve_basis.gram_matrix();
        let psi = d.t_basis.evaluate_many(&d.t).unwrap();
        let recompute = |d: &SyntheticDataset| -> DVector<f64> {
            let mut f = DVector::zeros(d.t.len());
            for (w, b) in d.curve_weights.iter().zip(&d.coefficients) {
                f += (w * &gram * b).component_mul(&psi).column_sum();
            }
            f
        };
        let before = recompute(&d);
        d.curve_weights[4] *= 7.0;
        assert_eq!(recompute(&d), before);
        assert!((before - DVector::from_vec(d.f.clone())).amax() < 1e-12);
    }

    #[test]
    fn signal_matches_dense_quadrature() {
        let d = generate(&small()).unwrap();
        let (nodes, weights) = crate::quadrature::gauss_legendre(20);
        for i in 0..d.t.len() {
            let psi = d.t_basis.evaluate(d.t[i]).unwrap();
            let mut total = 0.0;
            for j in 0..d.coefficients.len() {
                let w = d.curve_weights[j].row(i).transpose();
                let beta_t = &d.coefficients[j] * &psi;
                for seg in 0..50 {
                    let (a, c) = (seg as f64 / 50.0, (seg + 1) as f64 / 50.0);
                    for (x, q) in nodes.iter().zip(&weights) {
                        let s = 0.5 * (a + c) + 0.5 * (c - a) * x;
                        let phi = d.curve_basis.evaluate(s).unwrap();
                        total += 0.5 * (c - a) * q * phi.dot(&w) * phi.dot(&beta_t);
                    }
                }
            }
            assert!((total - d.f[i]).abs() < 1e-9 * (1.0 + d.f[i].abs()), "subject {i}");
        }
    }

    #[test]
    fn ranges_match_brute_force() {
        let cfg = small();
        let d = generate(&cfg).unwrap();
        let max = d.f.iter().copied().fold(f64::MIN, f64::max);
        let min = d.f.iter().copied().fold(f64::MAX, f64::min);
        assert_eq!(d.response_range, max - min);
        assert_eq!(d.noise_sd, cfg.noise_level * (max - min));
        assert_eq!(d.curves.len(), 6);
        assert!(d.curves.iter().all(|s| s.len() == 40 && s.iter().all(|c| c.len() == 21)));
        assert!(d.t.iter().all(|t| (0.0..1.0).contains(t)));
    }

    #[test]
    fn replicate_streams_are_independent_of_count() {
        let cfg = small();
        let a = generate_replicate(&cfg, 3).unwrap();
        let b = generate_replicate(&SimulationConfig { replicates: 50, ..cfg.clone() }, 3).unwrap();
        assert_eq!(a.y, b.y);
        let c = generate_replicate(&cfg, 4).unwrap();
        assert_ne!(a.y, c.y);
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SimulationConfig { p: 5, ..small() }).is_err());
        assert!(generate(&SimulationConfig { n_points: 3, ..small() }).is_err());
        assert!(generate(&SimulationConfig {
            noise_level: -0.1,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[3.5, 4.5, 5.5]).unwrap(), 2.5);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), (12.5f64).sqrt());
        assert!(rmse(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn apr_anr_cases() {
        let set = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
        assert_eq!(apr_anr(&set(&[0, 1, 2]), &set(&[0, 1, 2]), 6).unwrap(), (100.0, 100.0));
        assert_eq!(apr_anr(&set(&[0, 1, 2]), &set(&[0, 1, 2, 3, 4, 5]), 6).unwrap(), (100.0, 0.0));
        assert_eq!(apr_anr(&set(&[0, 1]), &set(&[0, 2]), 4).unwrap(), (50.0, 50.0));
        assert!(matches!(apr_anr(&set(&[]), &set(&[1]), 4), Err(Error::UndefinedMetric(_))));
        assert!(matches!(apr_anr(&set(&[0, 1, 2, 3]), &set(&[1]), 4), Err(Error::UndefinedMetric(_))));
    }

    fn quick_options() -> EstimatorOptions {
        EstimatorOptions {
            lambdas: LambdaGrid::Geometric { n_points: 20, ratio: 1e-2 },
            alphas: vec![0.9],
            varying_m2_values: vec![4],
            ..EstimatorOptions::default()
        }
    }

    #[test]
    fn study_is_reproducible() {
        let cfg = SimulationConfig {
            replicates: 1,
            ..small()
        };
        let a = run_study(&cfg, &Method::ALL, &quick_options()).unwrap();
        let b = run_study(&cfg, &Method::ALL, &quick_options()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.summaries.len(), 4);
        for s in &a.summaries {
            assert!((0.0..=100.0).contains(&s.mean_apr) && (0.0..=100.0).contains(&s.mean_anr));
            assert_eq!(s.sd_rmse, 0.0);
        }
        assert!(a.replicates[0].methods.iter().filter(|m| !m.method.varying()).all(|m| m.m2 == 1));
    }

    #[test]
    fn strong_signal_recovers_true_set() {
        let cfg = SimulationConfig {
            n: 150,
            replicates: 5,
            ..SimulationConfig::default()
        };
        let report = run_study(&cfg, &[Method::AdaptiveSvcflm], &quick_options()).unwrap();
        let exact = report
            .replicates
            .iter()
            .filter(|r| r.methods[0].selected == vec![0, 1, 2])
            .count();
        assert!(exact >= 3, "true set recovered in {exact}/5");
    }
}
