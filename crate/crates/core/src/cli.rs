//! `rmtcorr` command line: one subcommand per experiment family, each writing
//! plot-ready CSV/JSON plus the resolved `config.json` into `--out`.

use std::ffi::OsString;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use chrono::{Datelike, Days, NaiveDate, Weekday};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::cache;
use crate::correlation::{self, CorrelationMatrix, PricePanel, ReturnMatrix};
use crate::dynamics::{self, EpochStats};
use crate::ensembles::{self, DensityNorm, GeneratorSpec, SpectralDensity};
use crate::error::{Error, Result};
use crate::ingest;
use crate::modes;
use crate::output;
use crate::powermap;
use crate::states::{self, StatesConfig};
use crate::synth::{self, Structure};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_601;

const LOCK_FILE: &str = ".rmtcorr.lock";

const RECIPES: &str = "\
Recipes:
  Wishart spectrum against the Marchenko-Pastur law (Q = 10):
    rmtcorr ensembles --n 1024 --t 10240 --ensemble 200 --out out/mp
  Correlated Wishart spectra and element distributions:
    rmtcorr ensembles --n 1024 --t 10240 --u 0.1,0.3,0.8 --out out/wishart-u
  Emerging spectra of power-mapped short-epoch matrices:
    rmtcorr ensembles --n 1024 --m 64 --u 0.1,0.3,0.8 --epsilon 0.001 --out out/emerging
  Merging of the emerging cloud with the bulk:
    rmtcorr ensembles --n 256 --m 64 --u 0.1 --epsilon 0.1,0.4,0.8 --out out/merge
  Emerging-cloud shift as the epoch shrinks:
    rmtcorr powermap --n 256 --m 128,64,32 --epsilon 0.001 --out out/shift
  Emerging spectrum per epoch of a price panel:
    rmtcorr powermap --input prices.csv --m 20 --shift 10 --out out/pm
  Market, group and random modes (price panel or 10-block surrogate):
    rmtcorr modes --input prices.csv --sectors sectors.csv --out out/modes
    rmtcorr modes --blocks 10 --out out/modes-surrogate
  Rolling statistics for short epochs (M = 20, shift 10, eps = 0.01):
    rmtcorr dynamics --input prices.csv --out out/dyn
  Market states (eps = 0.6, k from 2 to 8, 500 restarts):
    rmtcorr states --input prices.csv --cache cache/ --out out/states
    rmtcorr states --out out/states-surrogate
  Synthetic price panel:
    rmtcorr synth --n 50 --t 1000 --u 0.1,0.7 --epochs 10 --out out/panel

Every flag can also be set through an environment variable named
RMTCORR_<FLAG>, for example RMTCORR_SEED=7.

Exit codes: 0 success, 1 runtime failure, 2 invalid usage.";

#[derive(Parser, Debug)]
#[command(
    name = "rmtcorr",
    version,
    about = "Random-matrix analysis of financial correlation matrices",
    after_help = RECIPES
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Wishart and correlated ensembles: spectra, element distributions, emerging spectra.
    Ensembles(EnsemblesArgs),
    /// Power-map emerging spectra: shift versus epoch length, or per epoch of a panel.
    Powermap(PowermapArgs),
    /// Market/group/random mode decomposition of a full-period correlation matrix.
    Modes(ModesArgs),
    /// Rolling moments, lambda_max, lambda_min and lag relations for short epochs.
    Dynamics(DynamicsArgs),
    /// Similarity, MDS, k-means market states and transition probabilities.
    States(StatesArgs),
    /// Writes a synthetic price panel.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Serialize)]
struct Common {
    /// Output directory, created if missing.
    #[arg(long, env = "RMTCORR_OUT")]
    #[serde(skip)]
    out: PathBuf,
    #[arg(long, env = "RMTCORR_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Format of tabular outputs. Matrices are always CSV.
    #[arg(long, env = "RMTCORR_FORMAT", value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug, Serialize)]
struct EnsemblesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "RMTCORR_N", default_value_t = 256)]
    n: usize,
    #[arg(long, env = "RMTCORR_T", default_value_t = 2560)]
    t: usize,
    /// Constant population correlations, comma separated.
    #[arg(long, env = "RMTCORR_U", value_delimiter = ',', default_values_t = vec![0.0])]
    u: Vec<f64>,
    /// Epoch length of the short-epoch matrices (used with --epsilon).
    #[arg(long, env = "RMTCORR_M", default_value_t = 64)]
    m: usize,
    /// Power-map distortions; when given, emerging spectra replace the Wishart spectra.
    #[arg(long, env = "RMTCORR_EPSILON", value_delimiter = ',')]
    epsilon: Vec<f64>,
    #[arg(long, env = "RMTCORR_ENSEMBLE", default_value_t = 200)]
    ensemble: usize,
    #[arg(long, env = "RMTCORR_BINS", default_value_t = 60)]
    bins: usize,
}

#[derive(Args, Debug, Serialize)]
struct PowermapArgs {
    #[command(flatten)]
    common: Common,
    /// Price CSV; without it a correlated ensemble is used.
    #[arg(long, env = "RMTCORR_INPUT")]
    input: Option<PathBuf>,
    #[arg(long, env = "RMTCORR_SECTORS")]
    sectors: Option<PathBuf>,
    #[arg(long, env = "RMTCORR_N", default_value_t = 256)]
    n: usize,
    /// Epoch lengths [default: 20 with --input, else 128,64,32].
    #[arg(long, env = "RMTCORR_M", value_delimiter = ',')]
    m: Vec<usize>,
    #[arg(long, env = "RMTCORR_SHIFT", default_value_t = 10)]
    shift: usize,
    #[arg(long, env = "RMTCORR_U", value_delimiter = ',', default_values_t = vec![0.0])]
    u: Vec<f64>,
    /// [default: 0.01 with --input, else 0.001]
    #[arg(long, env = "RMTCORR_EPSILON")]
    epsilon: Option<f64>,
    #[arg(long, env = "RMTCORR_ENSEMBLE", default_value_t = 200)]
    ensemble: usize,
    /// Directory for cached rolling correlation sequences.
    #[arg(long, env = "RMTCORR_CACHE")]
    #[serde(skip)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ModesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "RMTCORR_INPUT")]
    input: Option<PathBuf>,
    /// Asset,sector CSV used to order assets by sector.
    #[arg(long, env = "RMTCORR_SECTORS")]
    sectors: Option<PathBuf>,
    #[arg(long, env = "RMTCORR_N", default_value_t = 194)]
    n: usize,
    #[arg(long, env = "RMTCORR_T", default_value_t = 10000)]
    t: usize,
    /// Number of blocks in the surrogate.
    #[arg(long, env = "RMTCORR_BLOCKS", default_value_t = 10)]
    blocks: usize,
    /// Within-block correlations [default: evenly spaced from 0.15 to 0.6].
    #[arg(long, env = "RMTCORR_U", value_delimiter = ',')]
    u: Vec<f64>,
    /// Market plus group modes [default: count above the Marchenko-Pastur edge, minus one].
    #[arg(long, env = "RMTCORR_N_GROUP")]
    n_group: Option<usize>,
    #[arg(long, env = "RMTCORR_BINS", default_value_t = 60)]
    bins: usize,
}

#[derive(Args, Debug, Serialize)]
struct DynamicsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "RMTCORR_INPUT")]
    input: Option<PathBuf>,
    #[arg(long, env = "RMTCORR_SECTORS")]
    sectors: Option<PathBuf>,
    /// Surrogate series count.
    #[arg(long, env = "RMTCORR_N", default_value_t = 50)]
    n: usize,
    /// Surrogate length in days.
    #[arg(long, env = "RMTCORR_T", default_value_t = 2000)]
    t: usize,
    /// Surrogate regime correlations, visited in order with equal durations.
    #[arg(long, env = "RMTCORR_U", value_delimiter = ',', default_values_t = vec![0.1, 0.7])]
    u: Vec<f64>,
    #[arg(long, env = "RMTCORR_M", default_value_t = 20)]
    m: usize,
    #[arg(long, env = "RMTCORR_SHIFT", default_value_t = 10)]
    shift: usize,
    #[arg(long, env = "RMTCORR_EPSILON", default_value_t = powermap::EPSILON_DYNAMICS)]
    epsilon: f64,
    /// Rolling window of the lag-one t-statistic.
    #[arg(long, env = "RMTCORR_WINDOW", default_value_t = 50)]
    window: usize,
    /// Largest lag of the mean_c to mean_abs_c scatter.
    #[arg(long, env = "RMTCORR_MAX_LAG", default_value_t = 3)]
    max_lag: usize,
    #[arg(long, env = "RMTCORR_CACHE")]
    #[serde(skip)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct StatesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "RMTCORR_INPUT")]
    input: Option<PathBuf>,
    #[arg(long, env = "RMTCORR_SECTORS")]
    sectors: Option<PathBuf>,
    /// Epoch length [default: 20 with --input, else 2000].
    #[arg(long, env = "RMTCORR_M")]
    m: Option<usize>,
    #[arg(long, env = "RMTCORR_SHIFT", default_value_t = 10)]
    shift: usize,
    #[arg(long, env = "RMTCORR_EPSILON", default_value_t = powermap::EPSILON_STATES)]
    epsilon: f64,
    #[arg(long, env = "RMTCORR_K_MIN", default_value_t = 2)]
    k_min: usize,
    #[arg(long, env = "RMTCORR_K_MAX", default_value_t = 8)]
    k_max: usize,
    #[arg(long, env = "RMTCORR_N_INIT", default_value_t = 500)]
    n_init: usize,
    /// MDS dimensions.
    #[arg(long, env = "RMTCORR_DIMS", default_value_t = 3)]
    dims: usize,
    /// Surrogate series count.
    #[arg(long, env = "RMTCORR_N", default_value_t = 40)]
    n: usize,
    /// Surrogate regime correlations.
    #[arg(long, env = "RMTCORR_U", value_delimiter = ',', default_values_t = vec![0.1, 0.25, 0.4, 0.7])]
    u: Vec<f64>,
    /// Surrogate epoch count.
    #[arg(long, env = "RMTCORR_EPOCHS", default_value_t = 400)]
    epochs: usize,
    /// Surrogate probability of staying in the same regime.
    #[arg(long, env = "RMTCORR_STAY", default_value_t = 0.95)]
    stay: f64,
    #[arg(long, env = "RMTCORR_CACHE")]
    #[serde(skip)]
    cache: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "RMTCORR_N", default_value_t = 50)]
    n: usize,
    #[arg(long, env = "RMTCORR_T", default_value_t = 1000)]
    t: usize,
    /// Regime correlations; more than one value switches regimes along a sticky chain.
    #[arg(long, env = "RMTCORR_U", value_delimiter = ',', default_values_t = vec![0.0])]
    u: Vec<f64>,
    /// Regime count along the series (multiple --u values only).
    #[arg(long, env = "RMTCORR_EPOCHS", default_value_t = 10)]
    epochs: usize,
    #[arg(long, env = "RMTCORR_STAY", default_value_t = 0.95)]
    stay: f64,
    /// Daily return volatility.
    #[arg(long, env = "RMTCORR_SIGMA", default_value_t = 0.01)]
    sigma: f64,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter(msg) => CliError::Usage(msg),
            other => CliError::Run(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Ensembles(a) => cmd_ensembles(a),
        Command::Powermap(a) => cmd_powermap(a),
        Command::Modes(a) => cmd_modes(a),
        Command::Dynamics(a) => cmd_dynamics(a),
        Command::States(a) => cmd_states(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Exclusive claim on an output directory, released on drop.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::data(format!(
                "{} is locked by another run (remove {} if that run is dead)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Serialize)]
struct RunConfig<'a, A: Serialize> {
    command: &'a str,
    version: &'a str,
    params: &'a A,
}

fn write_config<A: Serialize>(dir: &Path, command: &str, params: &A) -> Result<()> {
    let cfg = RunConfig {
        command,
        version: env!("CARGO_PKG_VERSION"),
        params,
    };
    output::write_json(&dir.join("config.json"), &cfg)
}

/// One table cell.
enum Cell {
    F(f64),
    U(usize),
    S(String),
}

impl Cell {
    fn opt(v: Option<f64>) -> Self {
        Cell::F(v.unwrap_or(f64::NAN))
    }

    fn csv(&self) -> String {
        match self {
            Cell::F(x) => x.to_string(),
            Cell::U(x) => x.to_string(),
            Cell::S(s) => s.clone(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::F(x) => serde_json::Number::from_f64(*x)
                .map_or(serde_json::Value::Null, serde_json::Value::Number),
            Cell::U(x) => (*x).into(),
            Cell::S(s) => s.clone().into(),
        }
    }
}

/// Writes `dir/stem.csv` or `dir/stem.json` (array of row objects).
fn emit_table(
    dir: &Path,
    stem: &str,
    format: Format,
    header: &[&str],
    rows: Vec<Vec<Cell>>,
) -> Result<()> {
    match format {
        Format::Csv => output::write_rows_csv(
            &dir.join(format!("{stem}.csv")),
            header,
            rows.iter()
                .map(|r| r.iter().map(Cell::csv).collect::<Vec<_>>()),
        ),
        Format::Json => {
            let records: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .iter()
                .map(|r| {
                    header
                        .iter()
                        .zip(r)
                        .map(|(h, c)| (h.to_string(), c.json()))
                        .collect()
                })
                .collect();
            output::write_json(&dir.join(format!("{stem}.json")), &records)
        }
    }
}

fn emit_density(
    dir: &Path,
    stem: &str,
    format: Format,
    d: &SpectralDensity,
    reference: Option<&dyn Fn(f64) -> f64>,
) -> Result<()> {
    let rows = d
        .bin_centers()
        .into_iter()
        .zip(&d.density)
        .map(|(x, &y)| {
            vec![
                Cell::F(x),
                Cell::F(y),
                Cell::F(reference.map_or(f64::NAN, |f| f(x))),
            ]
        })
        .collect();
    emit_table(
        dir,
        stem,
        format,
        &["bin_center", "density", "reference"],
        rows,
    )
}

fn check_epsilon(eps: f64) -> CliResult<()> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(usage(format!("--epsilon must be >= 0, got {eps}")));
    }
    Ok(())
}

fn check_shift(shift: usize) -> CliResult<()> {
    if shift == 0 {
        return Err(usage("--shift must be at least 1"));
    }
    Ok(())
}

fn check_ensemble(k: usize) -> CliResult<()> {
    if k == 0 {
        return Err(usage("--ensemble must be at least 1"));
    }
    Ok(())
}

/// Loads prices, optionally sector-sorts them, and records dropped assets.
fn load_input(input: &Path, sectors: Option<&Path>, out: &Path) -> Result<PricePanel> {
    let loaded = ingest::load_prices(input)?;
    if !loaded.dropped.is_empty() {
        eprintln!(
            "warning: dropped {} asset(s), see dropped.csv",
            loaded.dropped.len()
        );
        output::write_rows_csv(
            &out.join("dropped.csv"),
            &["asset", "reason"],
            loaded
                .dropped
                .iter()
                .map(|d| vec![d.asset.clone(), d.reason.clone()]),
        )?;
    }
    match sectors {
        Some(path) => {
            let map = ingest::load_sectors(path)?;
            Ok(ingest::sector_sort(&loaded.panel, &map))
        }
        None => Ok(loaded.panel),
    }
}

fn rolling(
    returns: &ReturnMatrix,
    m: usize,
    shift: usize,
    cache_dir: Option<&Path>,
) -> Result<Vec<CorrelationMatrix>> {
    match cache_dir {
        Some(dir) => cache::rolling_correlations_cached(dir, returns, m, shift),
        None => correlation::rolling_correlations(returns, m, shift),
    }
}

fn cmd_ensembles(a: EnsemblesArgs) -> CliResult<()> {
    check_ensemble(a.ensemble)?;
    if a.u.is_empty() {
        return Err(usage("--u needs at least one value"));
    }
    for &eps in &a.epsilon {
        check_epsilon(eps)?;
    }
    let out = &a.common.out;
    let _lock = OutputLock::acquire(out)?;
    write_config(out, "ensembles", &a)?;
    let fmt = a.common.format;
    let seed = a.common.seed;

    if !a.epsilon.is_empty() {
        let mut rows = Vec::new();
        for &u in &a.u {
            let spec = GeneratorSpec::correlation(a.n, a.m, u);
            for &eps in &a.epsilon {
                let members = powermap::ensemble_emerging(&spec, eps, a.ensemble, seed)?;
                let pooled: Vec<f64> = members
                    .iter()
                    .flat_map(|s| s.emerging.iter().copied())
                    .collect();
                let bulk: Vec<f64> = members
                    .iter()
                    .flat_map(|s| s.bulk.iter().copied())
                    .collect();
                let hist =
                    SpectralDensity::from_samples(&pooled, a.bins, a.ensemble, DensityNorm::Unit)?;
                emit_density(out, &format!("emerging_u{u}_eps{eps}"), fmt, &hist, None)?;
                if !bulk.is_empty() {
                    let hist = SpectralDensity::from_samples(
                        &bulk,
                        a.bins,
                        a.ensemble,
                        DensityNorm::Unit,
                    )?;
                    emit_density(out, &format!("bulk_u{u}_eps{eps}"), fmt, &hist, None)?;
                }
                let row = powermap::summarize_members(a.m, &members);
                rows.push(vec![
                    Cell::F(u),
                    Cell::F(eps),
                    Cell::U(a.m),
                    Cell::F(row.mean_location),
                    Cell::F(row.lambda_min),
                    Cell::F(row.neg_count),
                    Cell::opt(row.pooled_kurtosis),
                    Cell::F(row.separated_fraction),
                ]);
            }
        }
        emit_table(
            out,
            "emerging_summary",
            fmt,
            &[
                "u",
                "epsilon",
                "m",
                "mean_location",
                "lambda_min",
                "neg_count",
                "kurtosis",
                "separated_fraction",
            ],
            rows,
        )?;
        return Ok(());
    }

    let q = a.t as f64 / a.n as f64;
    let (mp_lo, mp_hi) = ensembles::mp_bounds(q, 1.0);
    let mut rows = Vec::new();
    for &u in &a.u {
        let mut spec = GeneratorSpec::wishart(a.n, a.t);
        if u != 0.0 {
            spec.structure = Structure::Constant { u };
        }
        let eigen = ensembles::ensemble_eigenvalues(&spec, a.ensemble, seed)?.concat();
        let norm = if a.t < a.n {
            DensityNorm::ExcludeZeroMass
        } else {
            DensityNorm::Unit
        };
        let density = SpectralDensity::from_samples(&eigen, a.bins, a.ensemble, norm)?;
        let mp = |x: f64| ensembles::mp_density(x, q, 1.0);
        let reference: Option<&dyn Fn(f64) -> f64> = if u == 0.0 { Some(&mp) } else { None };
        emit_density(out, &format!("spectrum_u{u}"), fmt, &density, reference)?;
        let elements = ensembles::element_distribution(&spec, a.ensemble, a.bins, seed)?;
        emit_density(
            out,
            &format!("elements_u{u}"),
            fmt,
            &elements.histogram,
            None,
        )?;
        let nonzero: Vec<f64> = eigen
            .iter()
            .copied()
            .filter(|x| x.abs() >= crate::linalg::ZERO_EIGENVALUE_TOL)
            .collect();
        let lo = nonzero.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = nonzero.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rows.push(vec![
            Cell::F(u),
            Cell::U(a.n),
            Cell::U(a.t),
            Cell::F(q),
            Cell::F(lo),
            Cell::F(hi),
            Cell::F(mp_lo),
            Cell::F(mp_hi),
            Cell::F(if u == 0.0 {
                density.mean_abs_error(mp)
            } else {
                f64::NAN
            }),
            Cell::F(elements.mean),
            Cell::F(elements.variance),
        ]);
    }
    emit_table(
        out,
        "summary",
        fmt,
        &[
            "u",
            "n",
            "t",
            "q",
            "lambda_min",
            "lambda_max",
            "mp_lambda_min",
            "mp_lambda_max",
            "mp_mean_abs_error",
            "element_mean",
            "element_variance",
        ],
        rows,
    )?;
    Ok(())
}

fn cmd_powermap(mut a: PowermapArgs) -> CliResult<()> {
    let from_input = a.input.is_some();
    if a.m.is_empty() {
        a.m = if from_input {
            vec![20]
        } else {
            vec![128, 64, 32]
        };
    }
    let eps = *a.epsilon.get_or_insert(if from_input {
        powermap::EPSILON_DYNAMICS
    } else {
        powermap::EPSILON_ENSEMBLE
    });
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(usage(format!("--epsilon must lie in (0, 1], got {eps}")));
    }
    check_shift(a.shift)?;
    check_ensemble(a.ensemble)?;
    let out = a.common.out.clone();
    let _lock = OutputLock::acquire(&out)?;
    write_config(&out, "powermap", &a)?;
    let fmt = a.common.format;

    if let Some(input) = &a.input {
        let panel = load_input(input, a.sectors.as_deref(), &out)?;
        let returns = correlation::log_returns(&panel)?;
        let mut rows = Vec::new();
        for &m in &a.m {
            let seq = rolling(&returns, m, a.shift, a.cache.as_deref())?;
            for c in &seq {
                let s = powermap::emerging_spectrum(c, eps)?;
                rows.push(vec![
                    Cell::U(m),
                    Cell::U(c.tau),
                    Cell::S(c.label.clone()),
                    Cell::F(s.lambda_min),
                    Cell::U(s.neg_count),
                    Cell::F(s.mean()),
                    Cell::opt(s.kurtosis()),
                    Cell::U(s.separated as usize),
                ]);
            }
        }
        emit_table(
            &out,
            "emerging",
            fmt,
            &[
                "m",
                "tau",
                "label",
                "lambda_min",
                "neg_count",
                "mean_location",
                "kurtosis",
                "separated",
            ],
            rows,
        )?;
        return Ok(());
    }

    let mut rows = Vec::new();
    for &u in &a.u {
        for r in powermap::emerging_shift_vs_m(a.n, u, eps, &a.m, a.ensemble, a.common.seed)? {
            rows.push(vec![
                Cell::F(u),
                Cell::U(r.m),
                Cell::F(r.mean_location),
                Cell::F(r.lambda_min),
                Cell::F(r.neg_count),
                Cell::opt(r.pooled_kurtosis),
                Cell::F(r.separated_fraction),
            ]);
        }
    }
    emit_table(
        &out,
        "shift",
        fmt,
        &[
            "u",
            "m",
            "mean_location",
            "lambda_min",
            "neg_count",
            "kurtosis",
            "separated_fraction",
        ],
        rows,
    )?;
    Ok(())
}

/// Block sizes differing by at most one, larger blocks first.
fn split_blocks(n: usize, k: usize) -> Vec<usize> {
    (0..k).map(|b| n / k + usize::from(b < n % k)).collect()
}

fn cmd_modes(mut a: ModesArgs) -> CliResult<()> {
    if a.n_group == Some(0) {
        return Err(usage("--n-group must be at least 1"));
    }
    if a.input.is_none() {
        if a.blocks < 2 || a.blocks > a.n {
            return Err(usage(format!(
                "--blocks must lie in 2..={}, got {}",
                a.n, a.blocks
            )));
        }
        if a.u.is_empty() {
            let k = a.blocks;
            a.u = (0..k)
                .map(|b| 0.15 + 0.45 * b as f64 / (k - 1) as f64)
                .collect();
        }
        if a.u.len() != a.blocks {
            return Err(usage(format!(
                "--u needs one value per block ({}), got {}",
                a.blocks,
                a.u.len()
            )));
        }
    }
    let out = a.common.out.clone();
    let fmt = a.common.format;
    let _lock = OutputLock::acquire(&out)?;
    let (c, blocks) = match &a.input {
        Some(input) => {
            let panel = load_input(input, a.sectors.as_deref(), &out)?;
            let returns = correlation::log_returns(&panel)?;
            a.n = returns.n_assets();
            a.t = returns.n_days();
            (
                correlation::epoch_correlation(&returns, a.t - 1, a.t)?,
                None,
            )
        }
        None => {
            let sizes = split_blocks(a.n, a.blocks);
            let spec: Vec<(usize, f64)> = sizes.iter().copied().zip(a.u.iter().copied()).collect();
            let panel = synth::block_surrogate(a.n, &spec, a.t, a.common.seed)?;
            let returns = ReturnMatrix::from_matrix(panel.data)?;
            (
                correlation::epoch_correlation(&returns, a.t - 1, a.t)?,
                Some(sizes),
            )
        }
    };
    let q = a.t as f64 / a.n as f64;
    let pairs = modes::eigendecompose(&c)?;
    let suggested = modes::suggest_n_group(&pairs.values, q);
    let n_group = *a.n_group.get_or_insert(suggested);
    write_config(&out, "modes", &a)?;
    let dec = modes::decompose_modes(&c, n_group)?;
    let err = (dec.reconstruct() - &c.c).amax();
    if err > 1e-10 {
        return Err(CliError::Run(Error::numeric(format!(
            "mode reconstruction error {err:e} exceeds 1e-10"
        ))));
    }
    dec.export(&out, &c.asset_ids)?;
    output::write_matrix_csv(&out.join("correlation.csv"), &c.c, &c.asset_ids)?;
    let ladder = dec
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let mode = match i {
                0 => "market",
                i if i < n_group => "group",
                _ => "random",
            };
            vec![Cell::U(i + 1), Cell::F(l), Cell::S(mode.into())]
        })
        .collect();
    emit_table(&out, "ladder", fmt, &["rank", "eigenvalue", "mode"], ladder)?;
    let offdiag = |m: &nalgebra::DMatrix<f64>| correlation::upper_triangle(m);
    for (name, m) in [
        ("market", &dec.market),
        ("group", &dec.group),
        ("random", &dec.random),
    ] {
        let values = offdiag(m);
        let density = SpectralDensity::from_samples(&values, a.bins, 1, DensityNorm::Unit)?;
        emit_density(&out, &format!("{name}_elements"), fmt, &density, None)?;
    }
    let (mp_lo, mp_hi) = ensembles::mp_bounds(q, 1.0);
    let contrast = match &blocks {
        Some(sizes) => Some(modes::block_contrast(&dec.group, sizes)?),
        None => None,
    };
    let summary = ModesSummary {
        n: a.n,
        t: a.t,
        q,
        n_group,
        suggested_n_group: suggested,
        lambda_max: dec.eigenvalues[0],
        lambda_min: *dec.eigenvalues.last().expect("non-empty spectrum"),
        mp_lambda_min: mp_lo,
        mp_lambda_max: mp_hi,
        block_sizes: blocks,
        group_block_contrast: contrast,
    };
    output::write_json(&out.join("summary.json"), &summary)?;
    Ok(())
}

#[derive(Serialize)]
struct ModesSummary {
    n: usize,
    t: usize,
    q: f64,
    n_group: usize,
    suggested_n_group: usize,
    lambda_max: f64,
    lambda_min: f64,
    mp_lambda_min: f64,
    mp_lambda_max: f64,
    block_sizes: Option<Vec<usize>>,
    group_block_contrast: Option<f64>,
}

fn emit_stats(dir: &Path, format: Format, stats: &[EpochStats]) -> Result<()> {
    match format {
        Format::Csv => dynamics::write_stats_csv(&dir.join("stats.csv"), stats),
        Format::Json => output::write_json(&dir.join("stats.json"), stats),
    }
}

/// Regime chain visiting every level once, in order.
fn sequential_chain(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|a| {
            let mut row = vec![0.0; k];
            row[(a + 1).min(k - 1)] = 1.0;
            row
        })
        .collect()
}

/// Probability `stay` on the diagonal, the rest spread evenly.
fn sticky_chain(k: usize, stay: f64) -> Vec<Vec<f64>> {
    if k == 1 {
        return vec![vec![1.0]];
    }
    let off = (1.0 - stay) / (k - 1) as f64;
    (0..k)
        .map(|a| (0..k).map(|b| if a == b { stay } else { off }).collect())
        .collect()
}

fn cmd_dynamics(a: DynamicsArgs) -> CliResult<()> {
    check_shift(a.shift)?;
    check_epsilon(a.epsilon)?;
    if a.input.is_none() && (a.u.is_empty() || a.t < a.u.len()) {
        return Err(usage(
            "surrogate needs at least one --u value and --t >= its count",
        ));
    }
    let out = a.common.out.clone();
    let fmt = a.common.format;
    let _lock = OutputLock::acquire(&out)?;
    write_config(&out, "dynamics", &a)?;
    let returns = match &a.input {
        Some(input) => {
            let panel = load_input(input, a.sectors.as_deref(), &out)?;
            correlation::log_returns(&panel)?
        }
        None => {
            let k = a.u.len();
            let rp = synth::regime_surrogate(
                a.n,
                a.t / k,
                &a.u,
                &sequential_chain(k),
                k,
                a.common.seed,
            )?;
            ReturnMatrix::from_matrix(rp.panel.data)?
        }
    };
    let seq = rolling(&returns, a.m, a.shift, a.cache.as_deref())?;
    let stats = dynamics::stats_series(&seq, a.epsilon)?;
    emit_stats(&out, fmt, &stats)?;

    let labels: Vec<String> = stats.iter().map(|s| s.label.clone()).collect();
    let mean_c: Vec<f64> = stats.iter().map(|s| s.mean_c).collect();
    let mean_abs: Vec<f64> = stats.iter().map(|s| s.mean_abs_c).collect();
    let mut lag_rows = Vec::new();
    for lag in 0..=a.max_lag {
        if mean_c.len() <= lag + 2 {
            break;
        }
        let rel = dynamics::lagged_relation(&mean_c, &mean_abs, lag)?;
        match fmt {
            Format::Csv => rel.write_csv(&out.join(format!("lag{lag}.csv")), Some(&labels))?,
            Format::Json => output::write_json(&out.join(format!("lag{lag}.json")), &rel)?,
        }
        lag_rows.push(vec![
            Cell::U(lag),
            Cell::F(rel.pearson_r),
            Cell::U(rel.n_pairs),
            Cell::F(rel.residual_variance()),
        ]);
    }
    emit_table(
        &out,
        "lags",
        fmt,
        &["lag", "pearson_r", "n_pairs", "residual_variance"],
        lag_rows,
    )?;

    let lmin: Option<Vec<f64>> = stats.iter().map(|s| s.lambda_min_emerging).collect();
    match lmin {
        Some(lmin) if lmin.len() > a.window => {
            let t = dynamics::lag1_effect_tstat(&mean_c, &lmin, a.window)?;
            let rows = t
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let end = k + a.window;
                    vec![Cell::S(labels[end].clone()), Cell::F(v)]
                })
                .collect();
            emit_table(&out, "tstat", fmt, &["tau", "tstat"], rows)?;
        }
        _ => eprintln!(
            "note: no emerging spectrum or fewer than {} epochs; tstat skipped",
            a.window + 1
        ),
    }
    Ok(())
}

fn cmd_states(mut a: StatesArgs) -> CliResult<()> {
    check_shift(a.shift)?;
    check_epsilon(a.epsilon)?;
    if a.k_min < 1 || a.k_min > a.k_max {
        return Err(usage(format!(
            "need 1 <= --k-min <= --k-max, got {}..{}",
            a.k_min, a.k_max
        )));
    }
    if a.k_min < a.k_max && a.n_init < 2 {
        return Err(usage("--n-init must be at least 2 for an optimal-k search"));
    }
    if !(0.0..=1.0).contains(&a.stay) {
        return Err(usage(format!("--stay must lie in [0, 1], got {}", a.stay)));
    }
    let from_input = a.input.is_some();
    let m = *a.m.get_or_insert(if from_input { 20 } else { 2000 });
    let out = a.common.out.clone();
    let fmt = a.common.format;
    let _lock = OutputLock::acquire(&out)?;
    write_config(&out, "states", &a)?;
    let (seq, regimes) = match &a.input {
        Some(input) => {
            let panel = load_input(input, a.sectors.as_deref(), &out)?;
            let returns = correlation::log_returns(&panel)?;
            (rolling(&returns, m, a.shift, a.cache.as_deref())?, None)
        }
        None => {
            if a.u.is_empty() {
                return Err(usage("--u needs at least one value"));
            }
            let rp = synth::regime_surrogate(
                a.n,
                m,
                &a.u,
                &sticky_chain(a.u.len(), a.stay),
                a.epochs,
                a.common.seed,
            )?;
            let ends = rp.epoch_ends();
            let returns = ReturnMatrix::from_matrix(rp.panel.data)?;
            let seq = ends
                .iter()
                .map(|&tau| correlation::epoch_correlation(&returns, tau, m))
                .collect::<Result<Vec<_>>>()?;
            (seq, Some(rp.regimes))
        }
    };
    let config = StatesConfig {
        epsilon: a.epsilon,
        k_dim: a.dims,
        k_range: (a.k_min, a.k_max),
        n_init: a.n_init,
        seed: a.common.seed,
        ..StatesConfig::default()
    };
    let model = states::fit_market_states(&seq, &config)?;
    for (s, row) in model.transition.probs.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if model.transition.counts[s].iter().sum::<usize>() > 0 && (sum - 1.0).abs() > 1e-12 {
            return Err(CliError::Run(Error::numeric(format!(
                "transition row {s} sums to {sum}"
            ))));
        }
    }
    model.export(&out)?;
    let intra = model
        .intra_stats
        .iter()
        .map(|s| vec![Cell::U(s.k), Cell::F(s.mean), Cell::F(s.sd)])
        .collect();
    emit_table(&out, "intra_stats", fmt, &["k", "mean", "sd"], intra)?;
    let k = model.k;
    let mut header = vec!["from".to_string()];
    header.extend((1..=k).map(|b| format!("to{b}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = model
        .transition
        .probs
        .iter()
        .enumerate()
        .map(|(s, row)| {
            std::iter::once(Cell::U(s + 1))
                .chain(row.iter().map(|&p| Cell::F(p)))
                .collect()
        })
        .collect();
    emit_table(&out, "transition", fmt, &header_refs, rows)?;
    if let Some(regimes) = regimes {
        let rows = regimes
            .iter()
            .zip(&model.assignments)
            .zip(&model.labels)
            .map(|((&r, &s), l)| vec![Cell::S(l.clone()), Cell::U(r + 1), Cell::U(s + 1)])
            .collect();
        emit_table(&out, "regimes", fmt, &["tau", "regime", "state"], rows)?;
    }
    Ok(())
}

/// Consecutive weekdays starting on 2000-01-03, as ISO dates.
fn business_days(count: usize) -> Vec<String> {
    let mut day = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day.format("%Y-%m-%d").to_string());
        }
        day = day + Days::new(1);
    }
    out
}

fn cmd_synth(a: SynthArgs) -> CliResult<()> {
    if a.u.is_empty() {
        return Err(usage("--u needs at least one value"));
    }
    if !(0.0..=1.0).contains(&a.stay) {
        return Err(usage(format!("--stay must lie in [0, 1], got {}", a.stay)));
    }
    let out = a.common.out.clone();
    let fmt = a.common.format;
    let _lock = OutputLock::acquire(&out)?;
    write_config(&out, "synth", &a)?;
    let seed = a.common.seed;
    let (mut panel, regimes) = if a.u.len() == 1 {
        let structure = if a.u[0] == 0.0 {
            Structure::Identity
        } else {
            Structure::Constant { u: a.u[0] }
        };
        let target = synth::CorrelationTarget::from_structure(a.n, &structure)?;
        let base = synth::gaussian_panel(a.n, a.t, 1.0, seed)?;
        (synth::correlate_panel(&base, &target)?, None)
    } else {
        if a.epochs == 0 || a.t < a.epochs {
            return Err(usage("--epochs must lie in 1..=--t"));
        }
        let rp = synth::regime_surrogate(
            a.n,
            a.t / a.epochs,
            &a.u,
            &sticky_chain(a.u.len(), a.stay),
            a.epochs,
            seed,
        )?;
        (rp.panel.clone(), Some(rp))
    };
    if !(a.sigma > 0.0 && a.sigma.is_finite()) {
        return Err(usage(format!("--sigma must be positive, got {}", a.sigma)));
    }
    panel.data *= a.sigma;
    let prices = panel.to_prices(100.0);
    let dates = business_days(prices.ncols());
    let ids: Vec<String> = (0..a.n).map(|i| format!("S{i:03}")).collect();
    let pp = PricePanel::new(prices, ids, dates.clone())?;
    ingest::write_prices(&out.join("panel.csv"), &pp)?;
    if let Some(rp) = regimes {
        let rows = rp
            .regimes
            .iter()
            .zip(rp.epoch_ends())
            .map(|(&r, end)| {
                // Return index `end` ends on price date `end + 1`.
                vec![
                    Cell::S(dates[end + 1].clone()),
                    Cell::U(r + 1),
                    Cell::F(a.u[r]),
                ]
            })
            .collect();
        emit_table(&out, "regimes", fmt, &["epoch_end", "regime", "u"], rows)?;
    }
    Ok(())
}
