//! Command-line surface tying together simulation, estimation, selection,
//! penalty calibration, cross-validation, rate regression and diagnostics.
//!
//! Every subcommand accepts `--config <json>` carrying the same parameter
//! record the flags would build (flags are ignored when a config is given)
//! and `--save-config <json>` persisting the resolved record, so any run
//! can be reproduced exactly. All randomness flows from explicit seeds.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::{Array1, Array2};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::bases::{Basis, BasisKind};
use crate::calibration::{calibrate_cached, default_rho_grid, CalibrationMode};
use crate::crossval::{cv_select, CvConfig};
use crate::diagnostics::hdet_diagnostic;
use crate::error::{Error, Result};
use crate::leastsq::{ls_family, LsOptions, LsSweepConfig};
use crate::schema::{self, ObservationFormat};
use crate::selection::{
    align_family, default_reference_model, DistanceCache, EstimatorFamily, Method, Penalty,
    PenaltyShape, Variant,
};
use crate::simulation::{default_n_min, rate_regression, GroundTruth, RateFit};
use crate::spectral::{spectral_family, RetryRule, SweepConfig};

#[derive(Parser)]
#[command(
    name = "hmm-select",
    version,
    about = "Nonparametric HMM emission estimation with per-state model selection"
)]
struct Cli {
    /// Cap the worker pool used by parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample observations from a ground-truth HMM described by a config.
    Simulate(SimulateArgs),
    /// Estimate an emission family over a model grid from observations.
    Estimate(Configured<EstimateParams>),
    /// Select one model per hidden state from an estimator family.
    Select(Configured<SelectParams>),
    /// Trace dimension-jump curves and calibrate penalty constants.
    Calibrate(Configured<CalibrateParams>),
    /// Blocked cross-validation baseline selecting one common model.
    Cv(Configured<CvParams>),
    /// Convergence-rate regression over a campaign results file.
    Rates(Configured<RatesParams>),
    /// Numerical nondegeneracy diagnostic at a parameter point.
    Diagnose(Configured<DiagnoseParams>),
}

/// Wraps a parameter record with config load/save plumbing.
#[derive(Args)]
struct Configured<T: Args> {
    /// Read all parameters from this JSON record instead of the flags.
    #[arg(long, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Persist the resolved parameter record.
    #[arg(long, value_name = "JSON")]
    save_config: Option<PathBuf>,
    #[command(flatten)]
    params: T,
}

impl<T: Args + Serialize + DeserializeOwned> Configured<T> {
    fn resolve(&self) -> Result<T> {
        let params = match &self.config {
            Some(path) => serde_json::from_reader(BufReader::new(File::open(path)?))?,
            None => serde_json::from_value(serde_json::to_value(&self.params)?)?,
        };
        if let Some(path) = &self.save_config {
            serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &params)?;
        }
        Ok(params)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Simulation config: {"n": ..., "seed": ..., "truth": {...}?}.
    #[arg(long, value_name = "JSON")]
    config: PathBuf,
    /// Output observation file, one value per line.
    #[arg(long)]
    out: PathBuf,
    /// Optionally write the hidden path alongside.
    #[arg(long)]
    states_out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct EstimateParams {
    /// Observation file (one value per line, or CSV with --csv-column).
    #[arg(long)]
    obs: PathBuf,
    /// Zero-based CSV column holding the observations.
    #[arg(long)]
    csv_column: Option<usize>,
    #[arg(long, value_enum, default_value = "spectral")]
    method: Method,
    /// Number of hidden states.
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "trig")]
    basis_kind: BasisKind,
    /// Dimension of the first/third tensor slots of the spectral method.
    #[arg(long, default_value_t = 20)]
    edge_dim: usize,
    #[arg(long, default_value_t = 3)]
    m_min: usize,
    #[arg(long, default_value_t = 300)]
    m_max: usize,
    #[arg(long, default_value_t = 1)]
    m_step: usize,
    /// Fixed randomized-diagonalization retry count (default: a log-scaled
    /// rule in n and M).
    #[arg(long)]
    retries: Option<usize>,
    /// Euclidean bound on emission coefficient columns (least squares).
    #[arg(long, default_value_t = 10.0)]
    coeff_norm_bound: f64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip cross-model label alignment.
    #[arg(long, default_value_t = false)]
    #[serde(default)]
    no_align: bool,
    /// Alignment reference model (default: smallest grid model >= 4K).
    #[arg(long)]
    reference_model: Option<usize>,
    /// Output family JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct SelectParams {
    /// Estimator family JSON.
    #[arg(long)]
    family: PathBuf,
    #[arg(long, value_enum, default_value = "standard")]
    variant: Variant,
    /// Penalty shape (default: matches the family's method).
    #[arg(long, value_enum)]
    penalty_shape: Option<PenaltyShape>,
    /// Dimension-jump calibration policy (ignored when --rho is given).
    #[arg(long, value_enum, default_value = "eachjump")]
    calibration: CalibrationMode,
    /// Fixed penalty constant bypassing calibration.
    #[arg(long)]
    rho: Option<f64>,
    /// Output selection JSON.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV of the per-state curves (state, M, A, criterion).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct CalibrateParams {
    /// Estimator family JSON.
    #[arg(long)]
    family: PathBuf,
    #[arg(long, value_enum)]
    penalty_shape: Option<PenaltyShape>,
    #[arg(long, value_enum, default_value = "eachjump")]
    mode: CalibrationMode,
    /// Output CSV of the jump curves (state, rho, M_hat).
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON with the calibrated constants.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct CvParams {
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    csv_column: Option<usize>,
    #[arg(long)]
    k: usize,
    #[arg(long, value_enum, default_value = "trig")]
    basis_kind: BasisKind,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 30)]
    gap: usize,
    #[arg(long, default_value_t = 20)]
    edge_dim: usize,
    #[arg(long, default_value_t = 3)]
    m_min: usize,
    /// Largest cross-validated model; the held-out tensors are cubic in
    /// this, hence the modest default.
    #[arg(long, default_value_t = 60)]
    m_max: usize,
    #[arg(long, default_value_t = 3)]
    m_step: usize,
    #[arg(long)]
    retries: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV of the risk curve (M, E_VC).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Deserialize)]
struct RatesParams {
    /// Campaign results CSV.
    #[arg(long)]
    results: PathBuf,
    /// Regression threshold on n (default: 60th percentile of the n grid).
    #[arg(long)]
    nmin: Option<f64>,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
struct DiagnoseParams {
    /// Estimator family JSON to take parameters from.
    #[arg(long)]
    family: Option<PathBuf>,
    /// Model dimension within the family.
    #[arg(long)]
    model: Option<usize>,
    /// Use the benchmark ground truth projected at this dimension instead.
    #[arg(long)]
    benchmark_dim: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Output JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses the process arguments, runs the selected command and returns the
/// exit code; failures print a machine-readable error record on stderr.
pub fn run() -> i32 {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(err) => {
            let record = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{record}");
            1
        }
    }
}

impl Error {
    /// Stable machine-readable error category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Domain(_) => "domain",
            Error::Numerical(_) => "numerical",
            Error::InsufficientData(_) => "insufficient_data",
            Error::IllConditionedMoments(_) => "ill_conditioned_moments",
            Error::DiagonalizationFailure { .. } => "diagonalization_failure",
            Error::OptimizationStalled { .. } => "optimization_stalled",
            Error::NoUniqueStationary(_) => "no_unique_stationary",
            Error::UnalignedFamily => "unaligned_family",
            Error::SchemaVersion { .. } => "schema_version",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

fn dispatch(command: &Command) -> Result<()> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Estimate(c) => estimate(&c.resolve()?),
        Command::Select(c) => select(&c.resolve()?),
        Command::Calibrate(c) => calibrate_cmd(&c.resolve()?),
        Command::Cv(c) => cv(&c.resolve()?),
        Command::Rates(c) => rates(&c.resolve()?),
        Command::Diagnose(c) => diagnose(&c.resolve()?),
    }
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = schema::read_sim_config(&args.config)?;
    let truth = match &cfg.truth {
        None => GroundTruth::benchmark(),
        Some(spec) => {
            let k = spec.q.len();
            let flat: Vec<f64> = spec.q.iter().flatten().copied().collect();
            let q = Array2::from_shape_vec((k, k), flat)
                .map_err(|e| Error::invalid(e.to_string()))?;
            GroundTruth::new(q, spec.emissions.clone())?
        }
    };
    let (obs, states) = truth.sample_with_states(cfg.n, cfg.seed)?;
    schema::write_observations(&args.out, &obs)?;
    if let Some(path) = &args.states_out {
        use std::io::Write;
        let mut w = BufWriter::new(File::create(path)?);
        for s in states {
            writeln!(w, "{s}")?;
        }
    }
    println!(
        "{}",
        serde_json::json!({ "n": cfg.n, "observations": obs.len(), "out": args.out })
    );
    Ok(())
}

fn observation_format(csv_column: Option<usize>) -> ObservationFormat {
    match csv_column {
        Some(col) => ObservationFormat::CsvColumn(col),
        None => ObservationFormat::Lines,
    }
}

fn model_grid(m_min: usize, m_max: usize, m_step: usize) -> Result<Vec<usize>> {
    if m_min == 0 || m_step == 0 || m_max < m_min {
        return Err(Error::invalid(format!(
            "bad model grid: [{m_min}, {m_max}] step {m_step}"
        )));
    }
    Ok((m_min..=m_max).step_by(m_step).collect())
}

fn estimate(params: &EstimateParams) -> Result<()> {
    let obs = schema::read_observations(&params.obs, observation_format(params.csv_column))?;
    let grid = model_grid(params.m_min, params.m_max, params.m_step)?;
    let max_dim = *grid.last().unwrap();
    let basis = Basis::new(params.basis_kind, max_dim.max(params.edge_dim))?;
    let retries = match params.retries {
        Some(r) => RetryRule::Fixed(r),
        None => RetryRule::LogScaled,
    };
    let family = match params.method {
        Method::Spectral => {
            let cfg = SweepConfig {
                k: params.k,
                edge_dim: params.edge_dim,
                model_grid: grid,
                retries,
                seed: params.seed,
            };
            spectral_family(&obs, &basis, &cfg)?
        }
        Method::Ls => {
            let cfg = LsSweepConfig {
                k: params.k,
                model_grid: grid,
                coeff_norm_bound: params.coeff_norm_bound,
                options: LsOptions {
                    max_iters: params.max_iters,
                    tol: params.tol,
                    restarts: 3,
                    seed: params.seed,
                },
            };
            ls_family(&obs, &basis, &cfg)?
        }
    };
    let family = if params.no_align {
        family
    } else {
        let reference = params
            .reference_model
            .unwrap_or_else(|| default_reference_model(&family.model_grid(), params.k));
        align_family(family, reference)?
    };
    schema::write_family(&params.out, &family)?;
    println!(
        "{}",
        serde_json::json!({
            "models": family.models.len(),
            "n": family.n,
            "aligned": family.aligned,
            "reference_model": family.reference_model,
            "out": params.out,
        })
    );
    Ok(())
}

fn family_penalty_shape(family: &EstimatorFamily, requested: Option<PenaltyShape>) -> PenaltyShape {
    requested.unwrap_or(match family.method {
        Method::Spectral => PenaltyShape::Spectral,
        Method::Ls => PenaltyShape::Ls,
    })
}

fn select(params: &SelectParams) -> Result<()> {
    let family = schema::read_family(&params.family)?;
    let shape = family_penalty_shape(&family, params.penalty_shape);
    let cache = DistanceCache::new(&family)?;
    let penalty = match params.rho {
        Some(rho) => {
            if rho <= 0.0 {
                return Err(Error::invalid("penalty constant must be positive"));
            }
            Penalty::common(shape, rho, family.n)
        }
        None => {
            let rho_grid = default_rho_grid(&cache, shape, family.n);
            let cal = calibrate_cached(&cache, family.n, shape, params.calibration, &rho_grid)?;
            for curve in &cal.curves {
                if !curve.has_jump {
                    eprintln!(
                        "warning: state {} has a flat complexity curve; using unit constant",
                        curve.state
                    );
                }
            }
            cal.penalty(family.n)
        }
    };
    let result = cache.select(&penalty, params.variant);
    schema::write_selection(&params.out, &result)?;
    if let Some(csv) = &params.csv {
        schema::write_selection_csv(csv, &result)?;
    }
    let selected: Vec<usize> = result.per_state.iter().map(|s| s.m_hat).collect();
    println!(
        "{}",
        serde_json::json!({ "M_hat": selected, "rho": result.penalty.rho, "out": params.out })
    );
    Ok(())
}

fn calibrate_cmd(params: &CalibrateParams) -> Result<()> {
    let family = schema::read_family(&params.family)?;
    let shape = family_penalty_shape(&family, params.penalty_shape);
    let cache = DistanceCache::new(&family)?;
    let rho_grid = default_rho_grid(&cache, shape, family.n);
    let cal = calibrate_cached(&cache, family.n, shape, params.mode, &rho_grid)?;
    schema::write_jump_curves_csv(&params.out, &cal.curves)?;
    if let Some(path) = &params.json {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &cal)?;
    }
    let jumps: Vec<f64> = cal.curves.iter().map(|c| c.rho_jump).collect();
    println!(
        "{}",
        serde_json::json!({ "rho": cal.rho, "rho_jump": jumps, "out": params.out })
    );
    Ok(())
}

fn cv(params: &CvParams) -> Result<()> {
    let obs = schema::read_observations(&params.obs, observation_format(params.csv_column))?;
    let grid = model_grid(params.m_min, params.m_max, params.m_step)?;
    let basis = Basis::new(
        params.basis_kind,
        (*grid.last().unwrap()).max(params.edge_dim),
    )?;
    let cfg = CvConfig {
        edge_dim: params.edge_dim,
        retries: match params.retries {
            Some(r) => RetryRule::Fixed(r),
            None => RetryRule::LogScaled,
        },
        seed: params.seed,
    };
    let result = cv_select(
        &obs,
        &basis,
        &grid,
        params.k,
        params.folds,
        params.gap,
        &cfg,
    )?;
    schema::write_cv_csv(&params.out, &result)?;
    println!(
        "{}",
        serde_json::json!({ "M_hat_cv": result.m_hat, "out": params.out })
    );
    Ok(())
}

#[derive(Serialize)]
struct RateGroup {
    method: String,
    variant: String,
    calibration: String,
    state: usize,
    n_min: f64,
    fit: RateFit,
}

fn rates(params: &RatesParams) -> Result<()> {
    let records = schema::read_results_csv(&params.results)?;
    if records.is_empty() {
        return Err(Error::InsufficientData("results file is empty".into()));
    }
    let n_min = params.nmin.unwrap_or_else(|| {
        let ns: Vec<f64> = records.iter().map(|r| r.n as f64).collect();
        default_n_min(&ns)
    });
    let mut groups: BTreeMap<(String, String, String, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &records {
        groups
            .entry((
                r.method.clone(),
                r.variant.clone(),
                r.calibration.clone(),
                r.state,
            ))
            .or_default()
            .push((r.n as f64, r.l2_error));
    }
    let mut out = Vec::new();
    for ((method, variant, calibration, state), points) in groups {
        let fit = rate_regression(&points, n_min)?;
        out.push(RateGroup {
            method,
            variant,
            calibration,
            state,
            n_min,
            fit,
        });
    }
    write_json_or_stdout(params.out.as_deref(), &out)
}

fn diagnose(params: &DiagnoseParams) -> Result<()> {
    let hmm_params = match (&params.family, params.model, params.benchmark_dim) {
        (Some(path), Some(model), None) => {
            let family = schema::read_family(path)?;
            let est = family
                .model(model)
                .ok_or_else(|| Error::invalid(format!("model {model} not in the family grid")))?;
            crate::spectral::HmmParams {
                pi: Array1::from(est.pi.to_vec()),
                q: est.q.clone(),
                o: est.o.clone(),
            }
        }
        (None, None, Some(dim)) => {
            let truth = GroundTruth::benchmark();
            let basis = Basis::new(BasisKind::Trig, dim)?;
            truth.params(&basis, dim, crate::simulation::TRUTH_QUADRATURE_POINTS)?
        }
        _ => {
            return Err(Error::invalid(
                "pass either --family with --model, or --benchmark-dim",
            ))
        }
    };
    let report = hdet_diagnostic(&hmm_params, params.step)?;
    let file = schema::HdetFile {
        schema_version: schema::SCHEMA_VERSION.to_string(),
        dim: report.dim,
        det: report.determinant,
        min_eig: report.min_eigenvalue,
    };
    write_json_or_stdout(params.out.as_deref(), &file)
}

fn write_json_or_stdout<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(path) => {
            serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
        }
        None => println!("{}", serde_json::to_string_pretty(value)?),
    }
    Ok(())
}
