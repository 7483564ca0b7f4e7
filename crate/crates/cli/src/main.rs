//! `pcrit`: critical arrival probability of a Kalman filter over an erasure
//! channel.
//!
//! Exit codes: 0 success, 2 usage (unknown verb, missing flag), 3 I/O,
//! 4 malformed system file, 5 modelling assumption violated, 6 numeric
//! failure, 7 inconclusive sweep, 8 invalid override value.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use pcrit::critical::DEFAULT_MAX_DENOMINATOR;
use pcrit::harness::{DEFAULT_HORIZON, DEFAULT_RESOLUTION, DEFAULT_SEED, DEFAULT_TRIALS};
use pcrit::report::{analyze, report_json, write_summary_csv, write_sweep_csv};
use pcrit::system::DEFAULT_RANK_TOL;
use pcrit::{critical_value, empirical_pc, estimate, load_system, validate, AnalysisOptions, Error, TrialConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_STRUCTURE: u8 = 4;
const EXIT_ASSUMPTION: u8 = 5;
const EXIT_NUMERIC: u8 = 6;
const EXIT_INCONCLUSIVE: u8 = 7;
const EXIT_OVERRIDE: u8 = 8;

#[derive(Parser)]
#[command(name = "pcrit", version, about = "Critical arrival probability for Kalman filtering with packet loss")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Validation, spectral form, equi-blocks and the analytic critical value.
    Analyze {
        #[command(flatten)]
        io: Io,
        #[arg(long, default_value_t = DEFAULT_MAX_DENOMINATOR)]
        max_denominator: u64,
    },
    /// Monte Carlo summary of trace(P_k) at a fixed arrival probability.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        p: f64,
        #[command(flatten)]
        budget: Budget,
    },
    /// Bisection for the empirical critical value.
    Sweep {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        budget: Budget,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_DENOMINATOR)]
        max_denominator: u64,
    },
    /// Detectability, diagonalizability and noise definiteness only.
    Validate {
        #[command(flatten)]
        io: Io,
    },
}

#[derive(Args)]
struct Io {
    /// System spec (JSON).
    #[arg(long)]
    input: PathBuf,
    /// Report destination; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    jobs: Option<u32>,
}

#[derive(Args)]
struct Budget {
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    moment_order: u32,
}

impl Budget {
    fn config(&self, p: f64) -> pcrit::Result<TrialConfig> {
        TrialConfig::new(p, self.horizon, self.trials, self.seed)?.with_moment_order(self.moment_order)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Csv(_) => EXIT_IO,
        Error::Parse(_) | Error::Dimension(_) | Error::AngleHintMismatch { .. } => EXIT_STRUCTURE,
        Error::Assumption(_) | Error::NotDiagonalizable(_) | Error::NotDetectable(_) => EXIT_ASSUMPTION,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Inconclusive(_) | Error::UndeterminedAngle => EXIT_INCONCLUSIVE,
        Error::Precondition(_) => EXIT_OVERRIDE,
    }
}

fn emit(output: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> pcrit::Result<()>) -> pcrit::Result<()> {
    let io_err = |path: &Path, source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    match output {
        Some(path) => {
            let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
            write(&mut file)?;
            file.flush().map_err(|e| io_err(path, e))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
            lock.flush().map_err(|e| io_err(Path::new("<stdout>"), e))
        }
    }
}

fn text(s: String) -> impl FnOnce(&mut dyn Write) -> pcrit::Result<()> {
    move |w| {
        w.write_all(s.as_bytes()).map_err(|source| Error::Io {
            path: PathBuf::from("<output>"),
            source,
        })
    }
}

fn set_jobs(jobs: Option<u32>) -> pcrit::Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| Error::Precondition(format!("cannot start {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn options(max_denominator: u64) -> pcrit::Result<AnalysisOptions> {
    if max_denominator < 2 {
        return Err(Error::Precondition("max-denominator must be at least 2".into()));
    }
    Ok(AnalysisOptions {
        max_denominator,
        ..AnalysisOptions::default()
    })
}

fn run(verb: Verb) -> pcrit::Result<u8> {
    match verb {
        Verb::Validate { io } => {
            set_jobs(io.jobs)?;
            let sys = load_system(&io.input)?;
            let report = validate(&sys, DEFAULT_RANK_TOL);
            let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
            emit(io.output.as_deref(), text(json))?;
            if report.admissible() {
                return Ok(0);
            }
            for m in &report.messages {
                eprintln!("pcrit: {m}");
            }
            Ok(EXIT_ASSUMPTION)
        }
        Verb::Analyze { io, max_denominator } => {
            set_jobs(io.jobs)?;
            let opts = options(max_denominator)?;
            let sys = load_system(&io.input)?;
            let report = analyze(&sys, &opts)?;
            let cv = &report.critical_value;
            match (cv.exact, cv.upper) {
                (Some(x), _) => eprintln!("p_c = {x}"),
                (None, Some(u)) => eprintln!("p_c in [{}, {u}]", cv.lower),
                (None, None) => eprintln!("p_c >= {}", cv.lower),
            }
            emit(io.output.as_deref(), text(report_json(&sys, &report)?))?;
            Ok(0)
        }
        Verb::Simulate { io, p, budget } => {
            set_jobs(io.jobs)?;
            let cfg = budget.config(p)?;
            let sys = load_system(&io.input)?;
            validate(&sys, DEFAULT_RANK_TOL).into_result()?;
            let summary = estimate(&sys, &cfg)?;
            eprintln!(
                "verdict {} log_slope {} diverged_fraction {}",
                summary.verdict, summary.log_slope, summary.diverged_fraction
            );
            emit(io.output.as_deref(), |w| write_summary_csv(w, &summary))?;
            Ok(0)
        }
        Verb::Sweep {
            io,
            budget,
            resolution,
            max_denominator,
        } => {
            set_jobs(io.jobs)?;
            let opts = options(max_denominator)?;
            let template = budget.config(1.0)?;
            let sys = load_system(&io.input)?;
            validate(&sys, DEFAULT_RANK_TOL).into_result()?;
            let mut result = empirical_pc(&sys, resolution, &template)?;
            result.analytic_pc = critical_value(&sys, &opts)?.exact;
            eprintln!(
                "empirical p_c {} bracket ({}, {})",
                result.estimated_pc, result.bracket.0, result.bracket.1
            );
            for a in &result.anomalies {
                eprintln!("pcrit: anomaly: {a}");
            }
            emit(io.output.as_deref(), |w| write_sweep_csv(w, &result))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::InvalidValue | ErrorKind::ValueValidation => EXIT_OVERRIDE,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.verb) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("pcrit: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
