//! Command-line front end: `simulate`, `study`, `fit`, `predict`, `export-surface`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::basis::BSplineBasis;
use crate::design::build_design;
use crate::error::{Error, Result};
use crate::fpca::{fpca, fpca_by_share, FpcaResult};
use crate::io;
use crate::model::FittedModel;
use crate::simulation::{self, EstimatorOptions, Method, SimulationConfig, StudyReport};
use crate::solver::{FitOptions, PilotEstimate};
use crate::tuning::{select, DfNorm, LambdaGrid, TuningGrid, TuningOptions};

#[derive(Debug, Parser)]
#[command(name = "svcflm", version, about = "Sparse varying-coefficient functional linear models")]
pub struct Cli {
    /// JSON run configuration; command-line flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic data set with known truth.
    Simulate(SimulateArgs),
    /// Monte-Carlo comparison of SVCFLM, aSVCFLM, SFLM and aSFLM.
    Study(StudyArgs),
    /// Fit a model to long-format predictors and a response table.
    Fit(FitArgs),
    /// Predict responses for new subjects from a fitted model.
    Predict(PredictArgs),
    /// Write coefficient-surface grids from a fitted model.
    ExportSurface(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    /// Response noise level `s`.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Which replicate stream of the seed to draw.
    #[arg(long, default_value_t = 0)]
    pub replicate: u64,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    #[arg(long, value_delimiter = ',')]
    pub n_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub noise_levels: Option<Vec<f64>>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Long-format predictor CSV (`subject,variable,time,value`).
    #[arg(long)]
    pub long: Option<PathBuf>,
    /// Response CSV (`subject,y,t`).
    #[arg(long)]
    pub response: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Fit summary written by `fit`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub long: Option<PathBuf>,
    /// `subject,t` (or `subject,y,t`) table of the new subjects.
    #[arg(long)]
    pub exog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Variables to export (default: all selected).
    #[arg(long)]
    pub variable: Vec<String>,
    #[arg(long)]
    pub grid_s: Option<usize>,
    #[arg(long)]
    pub grid_t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub long: Option<PathBuf>,
    pub response: Option<PathBuf>,
    pub exogenous: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothingConfig {
    pub order: usize,
    pub n_basis: usize,
    /// Defaults to the observed time range of the variable.
    pub domain: Option<[f64; 2]>,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            order: 4,
            n_basis: 8,
            domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasesConfig {
    pub smoothing: SmoothingConfig,
    /// Per-variable replacements for `smoothing`.
    pub variables: BTreeMap<String, SmoothingConfig>,
    /// Highest spline order for the exogenous basis; lowered when `m₂` is smaller.
    pub t_order: usize,
    /// Defaults to the observed range of `t`.
    pub t_domain: Option<[f64; 2]>,
}

impl Default for BasesConfig {
    fn default() -> Self {
        Self {
            smoothing: SmoothingConfig::default(),
            variables: BTreeMap::new(),
            t_order: 4,
            t_domain: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FpcaConfig {
    /// Fixed number of components; otherwise chosen by `variance_share`.
    pub m1: Option<usize>,
    pub variance_share: f64,
}

impl Default for FpcaConfig {
    fn default() -> Self {
        Self {
            m1: None,
            variance_share: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub lambdas: LambdaGrid,
    pub alphas: Vec<f64>,
    pub m2_values: Vec<usize>,
    pub adaptive: bool,
    pub pilot: PilotEstimate,
    pub df_norm: DfNorm,
    pub max_df_fraction: Option<f64>,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        let grid = TuningGrid::default();
        let tuning = TuningOptions::default();
        Self {
            lambdas: grid.lambdas,
            alphas: grid.alphas,
            m2_values: grid.m2_values,
            adaptive: tuning.adaptive,
            pilot: tuning.pilot,
            df_norm: tuning.df_norm,
            max_df_fraction: None,
            tol: tuning.fit.tol,
            max_sweeps: tuning.fit.max_sweeps,
        }
    }
}

impl PenaltyConfig {
    fn grid(&self) -> TuningGrid {
        TuningGrid {
            lambdas: self.lambdas.clone(),
            alphas: self.alphas.clone(),
            m2_values: self.m2_values.clone(),
        }
    }

    fn options(&self) -> TuningOptions {
        TuningOptions {
            adaptive: self.adaptive,
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
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Points along `s` and `t` for exported surfaces.
    pub surface_grid: [usize; 2],
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            surface_grid: [101, 101],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n_values: Vec<usize>,
    pub noise_levels: Vec<f64>,
    pub estimator: EstimatorOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n_values: vec![100, 200],
            noise_levels: vec![0.1, 0.3],
            estimator: EstimatorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub bases: BasesConfig,
    pub fpca: FpcaConfig,
    pub penalty: PenaltyConfig,
    pub output: OutputConfig,
    pub simulation: SimulationConfig,
    pub study: StudyConfig,
}

impl RunConfig {
    /// Parses a config file; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        resolve(&mut cfg.data.long);
        resolve(&mut cfg.data.response);
        resolve(&mut cfg.data.exogenous);
        resolve(&mut cfg.data.model);
        resolve(&mut cfg.output.dir);
        Ok(cfg)
    }
}

fn required(flag: Option<PathBuf>, config: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.or_else(|| config.clone())
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or config)")))
}

/// Parses arguments, configures the thread pool and runs the command.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("svcflm-out"));
    fs::create_dir_all(&out)?;
    match cli.command {
        Command::Simulate(args) => cmd_simulate(cfg, cli.seed, &out, args),
        Command::Study(args) => cmd_study(cfg, cli.seed, &out, args),
        Command::Fit(args) => cmd_fit(cfg, &out, args),
        Command::Predict(args) => cmd_predict(cfg, &out, args),
        Command::ExportSurface(args) => cmd_export(cfg, &out, args),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Ground truth written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub config: SimulationConfig,
    pub replicate: u64,
    /// One-based names of the signal-bearing variables.
    pub active: Vec<String>,
    pub subjects: Vec<String>,
    pub t: Vec<f64>,
    pub f: Vec<f64>,
    pub response_range: f64,
    pub noise_sd: f64,
    pub curve_basis: BSplineBasis,
    pub t_basis: BSplineBasis,
    /// Per variable, `m1_gen × m2_gen` coefficient matrix as rows.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    /// Per variable, one row of generator weights per subject.
    pub curve_weights: Vec<Vec<Vec<f64>>>,
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn variable_name(j: usize) -> String {
    format!("X{}", j + 1)
}

pub fn subject_name(i: usize, n: usize) -> String {
    let width = n.to_string().len();
    format!("s{:0width$}", i + 1)
}

fn cmd_simulate(mut cfg: RunConfig, seed: Option<u64>, out: &Path, args: SimulateArgs) -> Result<()> {
    let sim = &mut cfg.simulation;
    if let Some(s) = seed {
        sim.seed = s;
    }
    if let Some(n) = args.n {
        sim.n = n;
    }
    if let Some(p) = args.p {
        sim.p = p;
    }
    if let Some(s) = args.noise {
        sim.noise_level = s;
    }
    if let Some(k) = args.n_points {
        sim.n_points = k;
    }
    let data = simulation::generate_replicate(sim, args.replicate)?;
    let subjects: Vec<String> = (0..sim.n).map(|i| subject_name(i, sim.n)).collect();
    let mut rows = Vec::new();
    for (j, set) in data.curves.iter().enumerate() {
        for (i, curve) in set.iter().enumerate() {
            for (&time, &value) in curve.times().iter().zip(curve.values()) {
                rows.push(io::LongRow {
                    subject: subjects[i].clone(),
                    variable: variable_name(j),
                    time,
                    value,
                });
            }
        }
    }
    io::write_long_csv(&io::LongTable::new(rows)?, &out.join("long.csv"))?;
    let response = io::ResponseTable::new(
        subjects
            .iter()
            .zip(data.y.iter().zip(&data.t))
            .map(|(s, (&y, &t))| io::ResponseRow { subject: s.clone(), y, t })
            .collect(),
    )?;
    io::write_response_csv(&response, &out.join("response.csv"))?;
    let truth = Truth {
        config: sim.clone(),
        replicate: args.replicate,
        active: data.true_active.iter().map(|&j| variable_name(j)).collect(),
        subjects,
        t: data.t.clone(),
        f: data.f.clone(),
        response_range: data.response_range,
        noise_sd: data.noise_sd,
        curve_basis: data.curve_basis.clone(),
        t_basis: data.t_basis.clone(),
        coefficients: data.coefficients.iter().map(rows_of).collect(),
        curve_weights: data.curve_weights.iter().map(rows_of).collect(),
    };
    write_json(&truth, &out.join("truth.json"))
}

fn cmd_study(mut cfg: RunConfig, seed: Option<u64>, out: &Path, args: StudyArgs) -> Result<()> {
    if let Some(s) = seed {
        cfg.simulation.seed = s;
    }
    if let Some(r) = args.replicates {
        cfg.simulation.replicates = r;
    }
    if let Some(p) = args.p {
        cfg.simulation.p = p;
    }
    if let Some(v) = args.n_values {
        cfg.study.n_values = v;
    }
    if let Some(v) = args.noise_levels {
        cfg.study.noise_levels = v;
    }
    if cfg.study.n_values.is_empty() || cfg.study.noise_levels.is_empty() {
        return Err(Error::Config("study needs at least one n and one noise level".into()));
    }
    let mut reports: Vec<StudyReport> = Vec::new();
    for &n in &cfg.study.n_values {
        for &s in &cfg.study.noise_levels {
            let sim = SimulationConfig {
                n,
                noise_level: s,
                ..cfg.simulation.clone()
            };
            reports.push(simulation::run_study(&sim, &Method::ALL, &cfg.study.estimator)?);
        }
    }
    io::write_study_table(&reports, &out.join("study_table.csv"))?;
    io::write_replicate_log(&reports, &out.join("study_replicates.csv"))?;
    write_json(&reports, &out.join("study_summary.json"))
}

fn smoothing_basis(cfg: &BasesConfig, long: &io::LongTable, variable: &str) -> Result<BSplineBasis> {
    let spec = cfg.variables.get(variable).unwrap_or(&cfg.smoothing);
    let (lo, hi) = match spec.domain {
        Some([lo, hi]) => (lo, hi),
        None => long
            .time_range(variable)
            .ok_or_else(|| Error::InvalidInput(format!("no observations of {variable}")))?,
    };
    BSplineBasis::uniform(lo, hi, spec.order.min(spec.n_basis), spec.n_basis)
}

fn t_basis_for(cfg: &BasesConfig, domain: (f64, f64), m2: usize) -> Result<BSplineBasis> {
    BSplineBasis::uniform(domain.0, domain.1, cfg.t_order.min(m2).max(1), m2)
}

fn cmd_fit(cfg: RunConfig, out: &Path, args: FitArgs) -> Result<()> {
    let long = io::load_long_csv(&required(args.long, &cfg.data.long, "long-format data")?)?;
    let response = io::load_response_csv(&required(args.response, &cfg.data.response, "response table")?)?;
    let variables = long.variables();
    if let Some(unknown) = cfg.bases.variables.keys().find(|v| !variables.contains(v)) {
        return Err(Error::Config(format!("basis override for unknown variable {unknown}")));
    }
    let bases = variables
        .iter()
        .map(|v| Ok((v.clone(), smoothing_basis(&cfg.bases, &long, v)?)))
        .collect::<Result<Vec<_>>>()?;
    let assembled = io::assemble(&long, &response, &bases)?;
    let fpcas: Vec<FpcaResult> = assembled
        .samples()?
        .iter()
        .map(|s| match cfg.fpca.m1 {
            Some(m1) => fpca(s, m1.min(s.n_curves()).min(s.basis().n_basis())),
            None => fpca_by_share(s, cfg.fpca.variance_share),
        })
        .collect::<Result<_>>()?;
    let t_domain = match cfg.bases.t_domain {
        Some([lo, hi]) => (lo, hi),
        None => {
            let lo = assembled.t.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = assembled.t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    let build = |m2: usize| build_design(&fpcas, &assembled.t, &t_basis_for(&cfg.bases, t_domain, m2)?, &assembled.y);
    let selection = select(build, &cfg.penalty.grid(), &cfg.penalty.options())?;
    let t_basis = t_basis_for(&cfg.bases, t_domain, selection.m2)?;
    let model = FittedModel::from_selection(&selection, variables, fpcas, t_basis, assembled.subjects.clone())?;

    let mut listing = model.selected.join("\n");
    if !listing.is_empty() {
        listing.push('\n');
    }
    fs::write(out.join("selected_variables.txt"), listing)?;
    io::write_tuning_report(&selection.report, &out.join("tuning_report.csv"))?;
    export_surfaces(&model, &model.selected, cfg.output.surface_grid, out)?;
    write_json(&model, &out.join("fit_summary.json"))
}

fn export_surfaces(model: &FittedModel, variables: &[String], grid: [usize; 2], out: &Path) -> Result<()> {
    for v in variables {
        let j = model.variable_index(v)?;
        let grid_s = FittedModel::grid(&model.fpca[j].basis, grid[0]);
        let grid_t = FittedModel::grid(&model.t_basis, grid[1]);
        let surface = model.surface(j, &grid_s, &grid_t)?;
        io::export_surface_grid(&surface, &grid_s, &grid_t, &out.join(format!("surface_{v}.csv")))?;
    }
    Ok(())
}

fn cmd_predict(cfg: RunConfig, out: &Path, args: PredictArgs) -> Result<()> {
    let model: FittedModel = read_json(&required(args.model, &cfg.data.model, "model")?)?;
    let exog = io::load_exogenous_csv(&required(args.exog, &cfg.data.exogenous, "exogenous table")?)?;
    let (subjects, t): (Vec<String>, Vec<f64>) = exog.into_iter().unzip();
    let y_hat = if subjects.is_empty() {
        Vec::new()
    } else {
        let long = io::load_long_csv(&required(args.long, &cfg.data.long, "long-format data")?)?;
        let curves = long.collect_curves(&subjects, &model.variables)?;
        model.predict(&curves, &t)?
    };
    io::write_predictions(&subjects, &y_hat, &out.join("predictions.csv"))
}

fn cmd_export(cfg: RunConfig, out: &Path, args: ExportArgs) -> Result<()> {
    let model: FittedModel = read_json(&required(args.model, &cfg.data.model, "model")?)?;
    let variables = if args.variable.is_empty() {
        model.selected.clone()
    } else {
        args.variable
    };
    let grid = [
        args.grid_s.unwrap_or(cfg.output.surface_grid[0]),
        args.grid_t.unwrap_or(cfg.output.surface_grid[1]),
    ];
    export_surfaces(&model, &variables, grid, out)
}
