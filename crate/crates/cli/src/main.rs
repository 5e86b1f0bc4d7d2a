//! `eoq`: run, fit and calibrate blind randomized benchmarking simulations of
//! an exchange-only triple-dot qubit.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use eoq_core::blind_rb::run_experiment;
use eoq_core::bootstrap::{bootstrap_ci, DEFAULT_RESAMPLES};
use eoq_core::calibration::{calibrate, error_vs_overrotation, CalibrationError, SweepError};
use eoq_core::clifford::CliffordGroup;
use eoq_core::config::{parse_config, ConfigError, ConfigFile};
use eoq_core::fitting::{fit_blind_rb, BlindFitOptions, FitError, Weighting};
use eoq_core::io::{
    canonical_hash, clifford_table, dataset_to_csv_bytes, read_dataset, write_calibration_csv, write_sweep_csv,
    FitReport, IoError, RunManifest, SCHEMA_VERSION, TOOL_VERSION,
};

const CONFIG_HELP: &str = "\
Config file (TOML or JSON, chosen by extension). Unknown keys are rejected.

  lengths                 strictly increasing sequence lengths (required)
  K | sequences_per_length random sequences per length (required)
  N | shots_per_sequence   shots per sequence (required)
  seed                    master seed for every random draw (required)
  measurement_mode        \"analytic\" | \"sampled\"            [analytic]
  pairing                 \"paired\" | \"unpaired\"             [paired]
  [noise]
    sigma_b               per-dot field std dev per component   [0]
    uniform_b             common field [x, y, z]                [0, 0, 0]
    overrotation          {12 = eps, 23 = eps}                  [0, 0]
    pulse_duration        time per exchange pulse               [1]
    idle_duration         idle time after each pulse            [1]
    z_only                random fields along z only            [false]
    charge_jitter         per-pulse fractional angle std dev    [0]
    redraw                \"per_shot\" | \"per_sequence\"         [per_shot]
  [readout]
    visibility, offset    p -> visibility*p + offset            [1, 0]
  [calibration]
    theta_min, theta_max  scan range                            [0.05, 2pi-0.05]
    points                grid points                           [401]
    repeats               pulse repeat counts                   [1, 3, 5]
    shots                 realizations or shots per point       [1]
    measurement_mode                                            [analytic]
  [sweep]
    epsilons              overrotations                         [0.01, 0.02, 0.04, 0.08]
    bootstrap             resamples per point, 0 = none         [0]
  [fit]
    weighting             \"none\" | \"shot_noise\"               [none]
    d_offset              free asymptote for D(m)               [false]";

#[derive(Parser)]
#[command(
    name = "eoq",
    version,
    about = "Blind RB simulation and analysis for exchange-only qubits"
)]
struct Cli {
    /// Worker threads (default: all cores). Never changes output bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Blind randomized benchmarking.
    #[command(subcommand)]
    Rb(RbCommand),
    /// Repeated-pulse calibration of the (2,3) and then the (1,2) pi pulse.
    #[command(after_help = CONFIG_HELP)]
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Parameter sweeps.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Clifford group utilities.
    #[command(subcommand)]
    Clifford(CliffordCommand),
}

#[derive(Subcommand)]
enum RbCommand {
    /// Simulate an experiment; writes dataset.csv and manifest.json into DIR.
    #[command(after_help = CONFIG_HELP)]
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a dataset CSV and write a JSON report.
    Fit(FitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingArg {
    None,
    ShotNoise,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    weighting: WeightingArg,
    /// Fit D(m) with a free asymptote.
    #[arg(long)]
    d_offset: bool,
    /// Bootstrap resamples for confidence intervals (0 disables).
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    bootstrap: usize,
    /// Seed for the bootstrap resampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Fitted error per Clifford versus systematic overrotation.
    #[command(after_help = CONFIG_HELP)]
    Overrotation {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated overrotations (default: [sweep].epsilons).
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        eps: Option<Vec<f64>>,
        /// Bootstrap resamples per point (default: [sweep].bootstrap).
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CliffordCommand {
    /// Write the group, its multiplication table and compiled pulses as JSON.
    Table {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Data { path: PathBuf, source: IoError },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::File { .. } => "io",
            CliError::Data { .. } => "data",
            CliError::Fit(_) => "fit",
            CliError::Calibration(_) => "calibration",
            CliError::Sweep(_) => "sweep",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::File { .. } | CliError::Data { .. } => 3,
            CliError::Fit(_) | CliError::Calibration(_) | CliError::Sweep(_) => 4,
            CliError::Runtime(_) => 1,
        }
    }

    fn field(&self) -> Option<String> {
        match self {
            CliError::Config(e) => e.field().map(str::to_string),
            _ => None,
        }
    }
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, bytes).map_err(file_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<(), IoError>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(buf)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Context {
    threads: usize,
    started_at: String,
}

impl Context {
    fn manifest(&self, command: &str, config: &ConfigFile, outputs: &[&Path]) -> Result<RunManifest, CliError> {
        Ok(RunManifest {
            schema_version: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.into(),
            command: command.into(),
            config_sha256: canonical_hash(config).map_err(|e| CliError::Runtime(e.to_string()))?,
            seed: config.experiment.seed,
            threads: self.threads,
            started_at: self.started_at.clone(),
            finished_at: now(),
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        })
    }
}

fn rb_run(ctx: &Context, config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = parse_config(config_path)?;
    let data = run_experiment(&config.experiment, CliffordGroup::shared()).map_err(ConfigError::from)?;
    let csv_path = out.join("dataset.csv");
    write_file(&csv_path, &dataset_to_csv_bytes(&data))?;
    let manifest_path = out.join("manifest.json");
    let manifest = ctx.manifest("rb run", &config, &[&csv_path, &manifest_path])?;
    write_json(&manifest_path, &manifest)?;
    println!("wrote {} records to {}", data.records.len(), csv_path.display());
    Ok(())
}

fn rb_fit(args: &FitArgs) -> Result<(), CliError> {
    let bytes = fs::read(&args.data).map_err(file_err(&args.data))?;
    let data = read_dataset(bytes.as_slice()).map_err(|source| CliError::Data {
        path: args.data.clone(),
        source,
    })?;
    let options = BlindFitOptions {
        weighting: match args.weighting {
            WeightingArg::None => Weighting::None,
            WeightingArg::ShotNoise => Weighting::ShotNoise,
        },
        d_offset: args.d_offset,
    };
    let fit = fit_blind_rb(&data, &options)?;
    let ci = if args.bootstrap > 0 {
        Some((args.seed, bootstrap_ci(&data, args.bootstrap, args.seed, &options)?))
    } else {
        None
    };
    let report = FitReport::new(&bytes, &data, options, &fit, ci);
    write_json(&args.out, &report)?;
    println!(
        "r = {:.6e} +/- {:.2e}, leakage = {:.6e} +/- {:.2e} (raw {:.6e})",
        fit.error_per_clifford.value,
        fit.error_per_clifford.sigma,
        fit.leakage_per_clifford.value,
        fit.leakage_per_clifford.sigma,
        fit.leakage_raw.value
    );
    Ok(())
}

fn run_calibrate(ctx: &Context, config_path: &Path, out: &Path) -> Result<(), CliError> {
    let config = parse_config(config_path)?;
    let settings = config.calibration.settings(config.experiment.seed);
    let cal = calibrate(&settings, &config.experiment.noise)?;
    let csv_path = out.join("calibration.csv");
    write_file(
        &csv_path,
        &csv_bytes(|b| write_calibration_csv(&[&cal.p23, &cal.p12], b))?,
    )?;
    let json_path = out.join("calibration.json");
    write_json(&json_path, &cal)?;
    let manifest_path = out.join("manifest.json");
    let manifest = ctx.manifest("calibrate", &config, &[&csv_path, &json_path, &manifest_path])?;
    write_json(&manifest_path, &manifest)?;
    for scan in [&cal.p23, &cal.p12] {
        println!(
            "pair {}: theta_pi = {:.9} +/- {:.2e}",
            scan.pair, scan.theta_pi, scan.sigma
        );
    }
    Ok(())
}

fn run_sweep(
    ctx: &Context,
    config_path: &Path,
    eps: Option<&[f64]>,
    bootstrap: Option<usize>,
    out: &Path,
) -> Result<(), CliError> {
    let config = parse_config(config_path)?;
    let epsilons = eps.unwrap_or(&config.sweep.epsilons);
    let resamples = bootstrap.unwrap_or(config.sweep.bootstrap);
    let sweep = error_vs_overrotation(
        epsilons,
        &config.experiment,
        CliffordGroup::shared(),
        &config.fit,
        resamples,
    )?;
    let csv_path = out.join("sweep.csv");
    write_file(&csv_path, &csv_bytes(|b| write_sweep_csv(&sweep, b))?)?;
    let json_path = out.join("sweep.json");
    write_json(&json_path, &sweep)?;
    let manifest_path = out.join("manifest.json");
    let manifest = ctx.manifest("sweep overrotation", &config, &[&csv_path, &json_path, &manifest_path])?;
    write_json(&manifest_path, &manifest)?;
    for row in &sweep.rows {
        println!("eps = {:+.4}: r = {:.6e}", row.epsilon, row.error_per_clifford.value);
    }
    match sweep.slope {
        Some(s) => println!("log-log slope = {s:.4}"),
        None => println!("log-log slope undefined (need two nonzero epsilons with r > 0)"),
    }
    Ok(())
}

fn dispatch(ctx: &Context, command: Command) -> Result<(), CliError> {
    match command {
        Command::Rb(RbCommand::Run { config, out }) => rb_run(ctx, &config, &out),
        Command::Rb(RbCommand::Fit(args)) => rb_fit(&args),
        Command::Calibrate { config, out } => run_calibrate(ctx, &config, &out),
        Command::Sweep(SweepCommand::Overrotation {
            config,
            eps,
            bootstrap,
            out,
        }) => run_sweep(ctx, &config, eps.as_deref(), bootstrap, &out),
        Command::Clifford(CliffordCommand::Table { out }) => {
            write_json(&out, &clifford_table(CliffordGroup::shared()))?;
            println!("wrote 24 Clifford elements to {}", out.display());
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Runtime("--threads must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Runtime(e.to_string()))?;
    let ctx = Context {
        threads: pool.current_num_threads(),
        started_at: now(),
    };
    pool.install(|| dispatch(&ctx, cli.command))
}

#[derive(Serialize)]
struct ErrorReport {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport {
                kind: e.kind(),
                message: e.to_string(),
                field: e.field(),
            };
            let line = serde_json::to_string(&serde_json::json!({ "error": report }))
                .unwrap_or_else(|_| format!("{{\"error\":{{\"message\":{:?}}}}}", e.to_string()));
            eprintln!("{line}");
            ExitCode::from(e.exit_code())
        }
    }
}
