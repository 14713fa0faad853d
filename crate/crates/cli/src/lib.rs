//! Command implementations behind the `eglass` binary.
//!
//! Every command writes into one output directory and finishes with a
//! `manifest.json` describing the run. Commands return a process exit code:
//! 0 on success, 2 on a partial result, 1 on error.

pub mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use eglass_core::bench::{correlation_report, prepare, residual_contrast, run_timing, ExperimentConfig};
use eglass_core::exploration::explore;
use eglass_core::inversion::{invert, StopReason};
use eglass_core::metrics::SpectraReport;
use eglass_core::{Error as CoreError, LatentVector};
use serde::Serialize;

pub use manifest::{config_hash, FileEntry, OutputDir, RunManifest, MANIFEST_NAME};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "eglass", version, about = "Explore the solution space of generative-prior inverse problems")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Default, Args)]
pub struct GlobalOpts {
    /// Replace every seed in the config with this base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel sections (bench requires 1).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Suppress progress output on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a latent code to the measurements.
    Invert {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate measurement-consistent, perceptually distinct solutions.
    Explore {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        z0: PathBuf,
        /// Number of solutions (defaults to the config's n_solutions).
        #[arg(long)]
        n: Option<usize>,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time exploration against the multi-restart baseline.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write metric spectra, anisotropy profiles and the coupling matrix.
    Spectra {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP exploration API.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Allowed browser origin; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
}

fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Parses and validates a config file, then applies the seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading config {}", path.display())))?;
    let config = parse_config(&text).map_err(|message| CliError::Config {
        path: path.display().to_string(),
        message,
    })?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

/// Parses config JSON. Errors carry the line, column and offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, String> {
    let config: ExperimentConfig =
        serde_json::from_str(text).map_err(|e| format!("line {} column {}: {e}", e.line(), e.column()))?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

struct Run<'a> {
    command: &'static str,
    global: &'a GlobalOpts,
    config: ExperimentConfig,
    started_at: String,
    out: OutputDir,
}

impl<'a> Run<'a> {
    fn start(command: &'static str, global: &'a GlobalOpts, config: ExperimentConfig, out: Option<&Path>) -> Result<Self, CliError> {
        let out = match (out, &config.output_dir) {
            (Some(o), _) => o.to_path_buf(),
            (None, Some(o)) => PathBuf::from(o),
            (None, None) => return Err(CliError::Usage("no --out given and the config has no output_dir".into())),
        };
        let out = OutputDir::create(&out).map_err(io_err(format!("creating output directory {}", out.display())))?;
        Ok(Self {
            command,
            global,
            config,
            started_at: now(),
            out,
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.out.write(name, bytes).map_err(io_err(format!("writing {name}")))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.out.write_json(name, value).map_err(io_err(format!("writing {name}")))
    }

    fn finish(self, exit_code: i32) -> Result<i32, CliError> {
        let manifest = RunManifest {
            tool: "eglass".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: self.command.into(),
            config_hash: config_hash(&self.config),
            seeds: self.config.seeds(),
            config: self.config,
            threads: self.global.threads,
            started_at: self.started_at,
            finished_at: now(),
            exit_code,
            files: vec![],
        };
        self.out.finish(manifest).map_err(io_err("writing manifest"))?;
        Ok(exit_code)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn note(global: &GlobalOpts, msg: impl AsRef<str>) {
    if !global.quiet {
        eprintln!("{}", msg.as_ref());
    }
}

#[derive(Debug, Serialize)]
struct InversionSummary {
    stop_reason: StopReason,
    converged: bool,
    iterations: usize,
    final_residual: f64,
    wall_seconds: f64,
}

pub fn cmd_invert(global: &GlobalOpts, config: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    let config = load_config(config, global.seed)?;
    let instance = config.build()?;
    let mut run = Run::start("invert", global, config, out)?;
    let p = &instance.problem;
    let (z0, trace) = invert(&p.y, &p.operator, &p.generator, &run.config.inversion)?;
    run.write_json("z0.json", &z0.as_slice())?;
    let mut jsonl = Vec::new();
    trace.write_jsonl(&mut jsonl)?;
    run.write("trace.jsonl", &jsonl)?;
    run.write_json(
        "inversion.json",
        &InversionSummary {
            stop_reason: trace.stop_reason,
            converged: trace.converged,
            iterations: trace.iterations.len().saturating_sub(1),
            final_residual: trace.final_residual(),
            wall_seconds: trace.wall_seconds,
        },
    )?;
    note(
        global,
        format!(
            "inversion stopped ({:?}) at residual {:e}",
            trace.stop_reason,
            trace.final_residual()
        ),
    );
    run.finish(if trace.converged { EXIT_OK } else { EXIT_PARTIAL })
}

/// Reads a latent vector stored as a JSON array of numbers.
pub fn read_z0(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading z0 {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: format!("line {} column {}: {e}", e.line(), e.column()),
    })
}

#[derive(Debug, Serialize)]
struct DirectionsFile<'a> {
    directions: &'a [eglass_core::exploration::DirectionSummary],
    skipped: &'a [eglass_core::exploration::SkippedDirection],
    infeasible_candidates: usize,
    diagnostic: &'a Option<String>,
}

pub fn cmd_explore(global: &GlobalOpts, config: &Path, z0: &Path, n: Option<usize>, out: Option<&Path>) -> Result<i32, CliError> {
    let config = load_config(config, global.seed)?;
    let z = read_z0(z0)?;
    let instance = config.build()?;
    let p = &instance.problem;
    if z.len() != p.latent_dim() {
        return Err(CoreError::DimensionMismatch {
            context: "z0 file",
            expected: p.latent_dim(),
            found: z.len(),
        }
        .into());
    }
    let z = LatentVector::new(z)?;
    let n = n.unwrap_or(config.n_solutions);
    let mut run = Run::start("explore", global, config, out)?;
    let outcome = explore(p, &z, &run.config.exploration, n)?;
    let mut jsonl = Vec::new();
    outcome.write_solutions_jsonl(&mut jsonl)?;
    run.write("solutions.jsonl", &jsonl)?;
    let mut csv = Vec::new();
    outcome.write_summary_csv(&mut csv)?;
    run.write("summary.csv", &csv)?;
    run.write_json(
        "directions.json",
        &DirectionsFile {
            directions: &outcome.directions,
            skipped: &outcome.skipped,
            infeasible_candidates: outcome.infeasible_candidates,
            diagnostic: &outcome.diagnostic,
        },
    )?;
    let complete = outcome.is_complete(n);
    if let Some(d) = &outcome.diagnostic {
        eprintln!("{d}");
    }
    note(global, format!("{} of {n} solutions written", outcome.records.len()));
    run.finish(if complete { EXIT_OK } else { EXIT_PARTIAL })
}

pub fn cmd_bench(global: &GlobalOpts, config: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    if let Some(t) = global.threads.filter(|&t| t != 1) {
        return Err(CliError::Usage(format!("bench requires --threads 1 (got {t})")));
    }
    let config = load_config(config, global.seed)?;
    let mut run = Run::start("bench", global, config, out)?;
    let (timing, outcome) = run_timing(&run.config)?;
    run.write_json("timing.json", &timing)?;
    run.write_json("bench_eglass.json", &timing.eglass)?;
    run.write_json("bench_baseline.json", &timing.baseline)?;
    let mut jsonl = Vec::new();
    outcome.write_solutions_jsonl(&mut jsonl)?;
    run.write("solutions.jsonl", &jsonl)?;

    let prepared = prepare(&run.config)?;
    let (corr, _) = correlation_report(&prepared.metrics, &run.config.exploration)?;
    run.write("correlation.csv", corr.to_csv()?.as_bytes())?;
    let contrast = residual_contrast(
        &prepared.instance.problem,
        &prepared.base,
        &prepared.metrics,
        &run.config.exploration,
    )?;
    run.write("contrast.csv", contrast.to_csv()?.as_bytes())?;
    match timing.speedup {
        Some(s) => note(global, format!("speedup {s:.2}x")),
        None => note(global, "speedup undefined (one method found too few solutions)"),
    }
    run.finish(if outcome.is_complete(timing.n_solutions) { EXIT_OK } else { EXIT_PARTIAL })
}

fn coupling_csv(report: &SpectraReport) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let n = report.coupling.len();
    let header: Vec<String> = std::iter::once("i".to_string())
        .chain((1..=n).map(|j| format!("v{j}")))
        .collect();
    let csv_io = |e: csv::Error| CliError::Io {
        context: "writing coupling.csv".into(),
        source: std::io::Error::other(e),
    };
    w.write_record(&header).map_err(csv_io)?;
    for (i, row) in report.coupling.iter().enumerate() {
        let rec: Vec<String> = std::iter::once((i + 1).to_string())
            .chain(row.iter().map(f64::to_string))
            .collect();
        w.write_record(&rec).map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io {
        context: "writing coupling.csv".into(),
        source: e.into_error(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn cmd_spectra(global: &GlobalOpts, config: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    let config = load_config(config, global.seed)?;
    let mut run = Run::start("spectra", global, config, out)?;
    let prepared = prepare(&run.config)?;
    let report = SpectraReport::new(&prepared.metrics);
    run.write_json("spectra.json", &report)?;
    run.write("anisotropy_y.csv", report.anisotropy_y.to_csv()?.as_bytes())?;
    run.write("anisotropy_x.csv", report.anisotropy_x.to_csv()?.as_bytes())?;
    run.write("coupling.csv", coupling_csv(&report)?.as_bytes())?;
    run.write_json("z0.json", &prepared.base.z0.as_slice())?;
    note(
        global,
        format!(
            "participation ratios: measurement {:.3}, perceptual {:.3}",
            report.anisotropy_y.participation_ratio, report.anisotropy_x.participation_ratio
        ),
    );
    run.finish(EXIT_OK)
}

pub fn cmd_serve(
    global: &GlobalOpts,
    config: &Path,
    host: &str,
    port: u16,
    cors_origin: Option<String>,
) -> Result<i32, CliError> {
    let config = load_config(config, global.seed)?;
    let ip: std::net::IpAddr = host
        .parse()
        .map_err(|e| CliError::Usage(format!("invalid host {host:?}: {e}")))?;
    let addr = std::net::SocketAddr::new(ip, port);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(io_err("starting runtime"))?;
    note(global, format!("listening on http://{addr}"));
    rt.block_on(eglass_service::serve(addr, config, cors_origin))
        .map_err(io_err(format!("serving on {addr}")))?;
    Ok(EXIT_OK)
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let g = &cli.global;
    if let Some(t) = g.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return EXIT_ERROR;
        }
        // A second call in the same process keeps the existing pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let start = Instant::now();
    let result = match &cli.command {
        Command::Invert { config, out } => cmd_invert(g, config, out.as_deref()),
        Command::Explore { config, z0, n, out } => cmd_explore(g, config, z0, *n, out.as_deref()),
        Command::Bench { config, out } => cmd_bench(g, config, out.as_deref()),
        Command::Spectra { config, out } => cmd_spectra(g, config, out.as_deref()),
        Command::Serve {
            config,
            port,
            host,
            cors_origin,
        } => cmd_serve(g, config, host, *port, cors_origin.clone()),
    };
    match result {
        Ok(code) => {
            note(g, format!("done in {:.2}s", start.elapsed().as_secs_f64()));
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}
