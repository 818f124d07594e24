//! `finsleroid check` runs residual suites from a config file;
//! `finsleroid transport` integrates vectors along a curve.
//!
//! Exit status: 0 when everything passes, 1 when a check or a transport
//! run fails, 2 for configuration and usage errors.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use finsleroid::background::{geometry, Level};
use finsleroid::config::{parse_curve, ConfigError, Format, OutputConfig, SuiteConfig, SuiteName};
use finsleroid::sampling::Sampler;
use finsleroid::suites::{self, RunError};
use finsleroid::transport::{convergence_study, holonomy_report, transport, TransportFailure, TransportRun};

#[derive(Parser, Debug)]
#[command(name = "finsleroid", version, about = "Residual checks for the angle-preserving Finsleroid connection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run verification suites and report residuals.
    Check {
        #[arg(long)]
        config: PathBuf,
        /// Suite to run; repeat for several. Overrides the config list.
        #[arg(long = "suite", value_parser = parse_suite)]
        suites: Vec<SuiteName>,
        /// Report file. Overrides `[output]` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_parser = parse_format, requires = "out")]
        format: Option<Format>,
    },
    /// Parallel-transport vectors along a curve and report drifts.
    Transport {
        #[arg(long)]
        config: PathBuf,
        /// `circle:R[:P,Q]` around the sampling center, or `line:X0,..:X1,..`.
        #[arg(long)]
        curve: String,
        /// Step count, or increasing counts for a convergence study.
        #[arg(long, value_delimiter = ',', required = true)]
        steps: Vec<usize>,
        /// Trajectory CSV of the finest run; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_suite(s: &str) -> Result<SuiteName, String> {
    SuiteName::parse(s).map_err(|e| e.to_string())
}

fn parse_format(s: &str) -> Result<Format, String> {
    Format::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
}

impl CliError {
    fn write(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
        move |source| CliError::Write { path: path.to_path_buf(), source }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Check { config, suites, out, format } => check(&config, suites, out, format),
        Command::Transport { config, curve, steps, out } => run_transport(&config, &curve, &steps, out),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn check(path: &Path, suites: Vec<SuiteName>, out: Option<PathBuf>, format: Option<Format>) -> Result<bool, CliError> {
    let mut cfg = SuiteConfig::load(path)?;
    if !suites.is_empty() {
        cfg.suites = suites;
    }
    if let Some(path) = out {
        let format = format.or_else(|| format_from_extension(&path)).unwrap_or(Format::Json);
        cfg.output = Some(OutputConfig { path, format });
    }
    let report = suites::run(&cfg).map_err(|e| match e {
        RunError::Config(c) => CliError::Config(c),
        RunError::Sampling(g) => CliError::Usage(format!("sampling failed: {g}")),
    })?;
    if let Some(o) = &cfg.output {
        let file = File::create(&o.path).map_err(CliError::write(&o.path))?;
        let mut w = BufWriter::new(file);
        match o.format {
            Format::Json => w.write_all(report.to_json().as_bytes()),
            Format::Csv => report.write_csv(&mut w),
        }
        .and_then(|_| w.flush())
        .map_err(CliError::write(&o.path))?;
    }
    print!("{}", report.summary());
    Ok(report.pass)
}

fn format_from_extension(path: &Path) -> Option<Format> {
    path.extension().and_then(|e| e.to_str()).and_then(|e| Format::parse(e).ok())
}

fn run_transport(path: &Path, spec: &str, steps: &[usize], out: Option<PathBuf>) -> Result<bool, CliError> {
    let cfg = SuiteConfig::load(path)?;
    let model = cfg.model()?;
    let center = cfg.sampling.center.clone().unwrap_or_else(|| vec![0.0; model.dim]);
    let curve = parse_curve(spec, &center)?;
    if steps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Usage("--steps must increase".into()));
    }
    let vectors = match &cfg.transport.vectors {
        Some(v) => v.clone(),
        None => {
            let start = curve.point(0.0);
            let geo = geometry(&model, &start, Level::Connection).map_err(|e| CliError::Usage(e.to_string()))?;
            let mut sampler = Sampler::new(&model, &cfg.sampling, cfg.seed);
            (0..2).map(|_| sampler.direction(&geo)).collect::<Result<_, _>>().map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    // Summary goes to stderr when the trajectory takes standard output.
    let mut summary: Box<dyn Write> = if out.is_some() { Box::new(io::stdout()) } else { Box::new(io::stderr()) };
    let finest = *steps.last().expect("clap requires steps");

    let _ = writeln!(summary, "model {} (N = {}, c = {}, g = {}), curve {spec}", model.kind.label(), model.dim, model.c, model.g);
    for (i, v) in vectors.iter().enumerate() {
        let _ = writeln!(summary, "vector {i}: {v:?}");
    }

    let run = match transport(&model, &curve, &vectors, finest) {
        Ok(run) => run,
        Err(TransportFailure { error, partial }) => {
            let _ = writeln!(summary, "transport failed: {error}");
            if let Some(p) = partial {
                let _ = writeln!(summary, "partial trajectory up to s = {}", p.last().s);
                write_trajectory(&p, out.as_deref())?;
            }
            return Ok(false);
        }
    };

    let _ = writeln!(summary, "{:>8}  {:>12}  {:>12}  {:>12}", "steps", "K drift", "alpha drift", "transitivity");
    if steps.len() > 1 {
        let study = match convergence_study(&model, &curve, &vectors, steps) {
            Ok(s) => s,
            Err(e) => {
                let _ = writeln!(summary, "convergence study failed: {}", e.error);
                return Ok(false);
            }
        };
        for (k, d) in study.steps.iter().zip(&study.drifts) {
            let _ = writeln!(summary, "{k:>8}  {:>12.3e}  {:>12.3e}  {:>12.3e}", d.k, d.alpha, d.transitivity);
        }
        let fmt = |o: Option<f64>| o.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        let _ = writeln!(summary, "observed order (K, alpha, transitivity), '-' at rounding level:");
        for (w, o) in study.steps.windows(2).zip(&study.orders) {
            let _ = writeln!(summary, "  {:>6} -> {:<6}  {:>6}  {:>6}  {:>6}", w[0], w[1], fmt(o.k), fmt(o.alpha), fmt(o.transitivity));
        }
    } else {
        let d = run.drift;
        let _ = writeln!(summary, "{finest:>8}  {:>12.3e}  {:>12.3e}  {:>12.3e}", d.k, d.alpha, d.transitivity);
    }

    if curve.closed() {
        match holonomy_report(&model, &curve, &vectors, finest) {
            Ok(h) => {
                let _ = writeln!(summary, "holonomy over area {:.6}:", h.area);
                for (i, v) in h.vector.iter().enumerate() {
                    let _ = writeln!(summary, "  vector {i}: |y(1) - y(0)| / |y(0)| = {v:.6e}, K change {:.3e}", h.k_delta[i]);
                }
                let worst = h.alpha_delta.iter().copied().fold(0.0, f64::max);
                let _ = writeln!(summary, "  largest angle change {worst:.3e}");
            }
            Err(e) => {
                let _ = writeln!(summary, "holonomy failed: {}", e.error);
                return Ok(false);
            }
        }
    }
    drop(summary);
    write_trajectory(&run, out.as_deref())?;
    Ok(true)
}

fn write_trajectory(run: &TransportRun, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let file = File::create(path).map_err(CliError::write(path))?;
            run.write_csv(BufWriter::new(file)).map_err(CliError::write(path))
        }
        None => run.write_csv(io::stdout().lock()).map_err(CliError::write(Path::new("<stdout>"))),
    }
}
