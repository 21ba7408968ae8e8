//! `ebgolf`: empirical Bayes skill estimation and FDR-controlled testing
//! for strokes-gained data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

mod config;
mod failure;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use ebgolf::{ColumnMapping, VarianceMode};

use crate::config::{Layer, Preset, RunConfig};
use crate::failure::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "ebgolf",
    about = "Empirical Bayes skill estimates and FDR-controlled significance tests for strokes-gained data",
    disable_version_flag = true,
    after_help = "Every option can also be set in a TOML file given by --config, using the long option \
                  name with underscores (alpha becomes `alphas = [...]`). Precedence: flags and EBGOLF_* \
                  environment variables, then the config file, then built-in defaults."
)]
struct Cli {
    /// Print name and version as JSON and exit.
    #[arg(long)]
    version: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest shot CSVs, fit each stroke category and write posterior skill estimates.
    Fit {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Test each posterior against zero skill and apply Benjamini-Hochberg.
    Test {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        test: TestArgs,
    },
    /// Run a synthetic study with known skills and report FDR, power and recovery.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        test: TestArgs,
    },
    /// Write histograms, shrinkage rows, leaderboards, BH plot data and effect sizes.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Run fit, test and report in sequence.
    All {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        test: TestArgs,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, env = "EBGOLF_CONFIG", value_name = "FILE")]
    config: Option<PathBuf>,

    /// Output directory [default: out].
    #[arg(long, env = "EBGOLF_OUT", value_name = "DIR")]
    out: Option<PathBuf>,

    /// Seed for all random draws.
    #[arg(long, env = "EBGOLF_SEED")]
    seed: Option<u64>,

    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    config_dump: bool,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Input")]
struct InputArgs {
    /// Shot-level CSV file; repeat for several files.
    #[arg(long, env = "EBGOLF_INPUT", value_name = "FILE", value_delimiter = ',')]
    input: Vec<PathBuf>,

    /// Column names as field=column pairs, e.g. `golfer_season=player,strokes_gained=sg`.
    #[arg(long, env = "EBGOLF_SCHEMA", value_parser = parse_schema)]
    schema: Option<ColumnMapping>,

    /// Minimum distinct holes played to keep a golfer-season [default: 150].
    #[arg(long, env = "EBGOLF_MIN_HOLES", value_parser = clap::value_parser!(u64).range(1..))]
    min_holes: Option<u64>,

    /// Fail on the first malformed row and on EM non-convergence.
    #[arg(long, env = "EBGOLF_STRICT")]
    strict: bool,

    /// Write the EM log-likelihood trace to fit/diagnostics.json.
    #[arg(long, env = "EBGOLF_DIAGNOSTICS")]
    diagnostics: bool,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Fitting")]
struct FitArgs {
    /// Relative change of (mu, tau2) at which EM stops [default: 1e-10].
    #[arg(long, env = "EBGOLF_TOL", value_parser = parse_positive)]
    tol: Option<f64>,

    /// EM iteration cap [default: 10000].
    #[arg(long, env = "EBGOLF_MAX_ITER", value_parser = clap::value_parser!(u64).range(1..))]
    max_iter: Option<u64>,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Testing")]
struct TestArgs {
    /// FDR level in (0, 1); repeat for a sweep [default: 0.01 0.05 0.10 0.15].
    #[arg(long, env = "EBGOLF_ALPHA", value_parser = parse_alpha, value_delimiter = ',')]
    alpha: Vec<f64>,

    /// Variance used to standardise posterior means: mean-adjusted or plug-in [default: mean-adjusted].
    #[arg(long, env = "EBGOLF_VARIANCE", value_parser = parse_variance)]
    variance: Option<VarianceMode>,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Report")]
struct ReportArgs {
    /// Histogram bins [default: 30].
    #[arg(long, env = "EBGOLF_BINS", value_parser = clap::value_parser!(u64).range(1..))]
    bins: Option<u64>,

    /// Leaderboard length per category [default: 7].
    #[arg(long, env = "EBGOLF_TOP_K", value_parser = clap::value_parser!(u64).range(1..))]
    top_k: Option<u64>,

    /// Holes per tournament for the cumulative effect size [default: 72].
    #[arg(long, env = "EBGOLF_HOLES_PER_TOURNAMENT", value_parser = parse_positive)]
    holes_per_tournament: Option<f64>,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Simulation")]
struct SimArgs {
    /// Number of independent replications [default: 200].
    #[arg(long, env = "EBGOLF_REPLICATIONS", value_parser = clap::value_parser!(u64).range(1..))]
    replications: Option<u64>,

    /// Synthetic cohort description (JSON, or TOML by extension); overrides --preset.
    #[arg(long, env = "EBGOLF_STUDY", value_name = "FILE")]
    study: Option<PathBuf>,

    /// Built-in cohort shape [default: study].
    #[arg(long, env = "EBGOLF_PRESET", value_enum)]
    preset: Option<Preset>,

    /// Also write replication 0 as a shot-level CSV usable as `fit --input`.
    #[arg(long, env = "EBGOLF_EMIT_SHOTS")]
    emit_shots: bool,
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let a: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if a > 0.0 && a < 1.0 {
        Ok(a)
    } else {
        Err(format!("{a} is outside the open interval (0, 1)"))
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn parse_schema(s: &str) -> Result<ColumnMapping, String> {
    s.parse().map_err(|e: ebgolf::Error| e.to_string())
}

fn parse_variance(s: &str) -> Result<VarianceMode, String> {
    s.parse()
}

fn some_if(flag: bool) -> Option<bool> {
    flag.then_some(true)
}

impl CommonArgs {
    fn apply(&self, l: &mut Layer) {
        l.out = self.out.clone();
        l.seed = self.seed;
    }
}

impl InputArgs {
    fn apply(&self, l: &mut Layer) {
        l.input = (!self.input.is_empty()).then(|| self.input.clone());
        l.schema = self.schema.clone();
        l.min_holes = self.min_holes.map(|v| v as usize);
        l.strict = some_if(self.strict);
        l.diagnostics = some_if(self.diagnostics);
    }
}

impl FitArgs {
    fn apply(&self, l: &mut Layer) {
        l.tol = self.tol;
        l.max_iter = self.max_iter.map(|v| v as usize);
    }
}

impl TestArgs {
    fn apply(&self, l: &mut Layer) {
        l.alphas = (!self.alpha.is_empty()).then(|| self.alpha.clone());
        l.variance = self.variance;
    }
}

impl ReportArgs {
    fn apply(&self, l: &mut Layer) {
        l.bins = self.bins.map(|v| v as usize);
        l.top_k = self.top_k.map(|v| v as usize);
        l.holes_per_tournament = self.holes_per_tournament;
    }
}

impl SimArgs {
    fn apply(&self, l: &mut Layer) {
        l.replications = self.replications;
        l.study = self.study.clone();
        l.preset = self.preset;
        l.emit_shots = some_if(self.emit_shots);
    }
}

fn resolve(common: &CommonArgs, flags: Layer) -> CliResult<RunConfig> {
    let file = match &common.config {
        Some(path) => Layer::from_file(path)?,
        None => Layer::default(),
    };
    RunConfig::resolve(flags.over(file))
}

fn dump(cfg: &RunConfig) -> CliResult<()> {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| Failure::internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn version_json() -> String {
    serde_json::json!({
        "name": env!("CARGO_BIN_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
    })
    .to_string()
}

fn run(command: Command) -> CliResult<()> {
    let mut flags = Layer::default();
    match command {
        Command::Fit { common, input, fit } => {
            common.apply(&mut flags);
            input.apply(&mut flags);
            fit.apply(&mut flags);
            let cfg = resolve(&common, flags)?;
            if common.config_dump {
                return dump(&cfg);
            }
            stages::fit(&cfg)
        }
        Command::Test { common, test } => {
            common.apply(&mut flags);
            test.apply(&mut flags);
            let cfg = resolve(&common, flags)?;
            if common.config_dump {
                return dump(&cfg);
            }
            stages::test(&cfg)
        }
        Command::Report { common, report } => {
            common.apply(&mut flags);
            report.apply(&mut flags);
            let cfg = resolve(&common, flags)?;
            if common.config_dump {
                return dump(&cfg);
            }
            stages::report(&cfg)
        }
        Command::Simulate { common, sim, fit, test } => {
            common.apply(&mut flags);
            sim.apply(&mut flags);
            fit.apply(&mut flags);
            test.apply(&mut flags);
            let mut cfg = resolve(&common, flags)?;
            if common.config_dump {
                return dump(&cfg);
            }
            let synthetic = stages::study_config(&mut cfg)?;
            stages::simulate(&cfg, &synthetic)
        }
        Command::All {
            common,
            input,
            fit,
            test,
            report,
        } => {
            common.apply(&mut flags);
            input.apply(&mut flags);
            fit.apply(&mut flags);
            test.apply(&mut flags);
            report.apply(&mut flags);
            let cfg = resolve(&common, flags)?;
            if common.config_dump {
                return dump(&cfg);
            }
            stages::fit(&cfg)?;
            stages::test(&cfg)?;
            stages::report(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    if cli.version {
        println!("{}", version_json());
        return ExitCode::SUCCESS;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required (fit, test, simulate, report, all); see --help");
        return ExitCode::from(1);
    };

    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EBGOLF_LOG", "info"))
        .format_timestamp(None)
        .format_target(false)
        .init();

    match std::panic::catch_unwind(|| run(command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("error: {:#}", failure.error);
            failure.exit_code()
        }
        Err(_) => ExitCode::from(3),
    }
}
