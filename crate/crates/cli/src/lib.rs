//! `csl`: run circle-survival experiments from the command line and render
//! their reports.

pub mod report;
pub mod svg;

use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csl_core::harness::{self, ExperimentSpec, Protocol, Store};
use csl_core::par::Execution;
use csl_core::Error;

/// Output root used when neither `--out`, `CSL_OUT` nor the spec names one.
pub const DEFAULT_OUT: &str = "results";
pub const OUT_ENV: &str = "CSL_OUT";

#[derive(Debug, Parser)]
#[command(name = "csl", version, about = "Circle-survival experiments on modular-addition MLPs")]
pub struct Cli {
    /// More logging (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Default training runs (baseline protocol).
    Train(RunArgs),
    /// Grid sweep over p, d or weight decay, or the frozen-embedding sweep.
    Sweep {
        /// Which sweep; defaults to the protocol named in `--spec`.
        #[arg(long, value_enum)]
        kind: Option<SweepKind>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Rescale one initial frequency and measure its survival.
    Perturb(RunArgs),
    /// Two-frequency constructed embeddings over a ratio grid.
    Construct(RunArgs),
    /// Retrain on the top-n trained circles with the embedding frozen.
    Ablate(RunArgs),
    /// Keep only one or two frequencies at initialization (variants A-D).
    Forced(RunArgs),
    /// Fit dense, Lasso and quadratic ODEs to baseline signal trajectories.
    FitOde(RunArgs),
    /// Initial-signal and gradient fitness statistics.
    Fitness(RunArgs),
    /// Render SVG/CSV reports for a results directory.
    Report {
        /// Results root or protocol directory [default: $CSL_OUT or ./results].
        dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    P,
    D,
    Wd,
    Freeze,
}

impl SweepKind {
    pub fn protocol(self) -> Protocol {
        match self {
            SweepKind::P => Protocol::PSweep,
            SweepKind::D => Protocol::DSweep,
            SweepKind::Wd => Protocol::WdSweep,
            SweepKind::Freeze => Protocol::FreezeSweep,
        }
    }
}

/// A flag value kept alongside the text it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Override<T> {
    pub raw: String,
    pub value: T,
}

fn parse_one<T: FromStr>(s: &str) -> Result<Override<T>, String>
where
    T::Err: std::fmt::Display,
{
    let value = s.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    Ok(Override { raw: s.to_string(), value })
}

/// Comma-separated list, e.g. `--p 17,31,59`.
fn parse_list<T: FromStr>(s: &str) -> Result<Override<Vec<T>>, String>
where
    T::Err: std::fmt::Display,
{
    let value = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|e| format!("`{x}`: {e}")))
        .collect::<Result<Vec<T>, String>>()?;
    Ok(Override { raw: s.to_string(), value })
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON experiment spec; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output root [default: $CSL_OUT, else the spec's `out`, else ./results].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available parallelism].
    #[arg(long)]
    pub workers: Option<NonZeroUsize>,
    /// Modulus (comma-separated list for sweeps).
    #[arg(long, value_parser = parse_list::<usize>)]
    pub p: Option<Override<Vec<usize>>>,
    /// Embedding dimension (comma-separated list for sweeps).
    #[arg(long, value_parser = parse_list::<usize>)]
    pub d: Option<Override<Vec<usize>>>,
    /// Weight decay (comma-separated list for sweeps).
    #[arg(long, value_parser = parse_list::<f64>)]
    pub wd: Option<Override<Vec<f64>>>,
    /// Training steps per run.
    #[arg(long, value_parser = parse_one::<usize>)]
    pub steps: Option<Override<usize>>,
    /// Master seed.
    #[arg(long, value_parser = parse_one::<u64>)]
    pub seed: Option<Override<u64>>,
    /// Trials per grid cell.
    #[arg(long, value_parser = parse_one::<usize>)]
    pub trials: Option<Override<usize>>,
    /// Lasso penalty for `fit-ode` [default: 1e-3 · max|Xᵀ dX/dt| per target].
    #[arg(long, value_parser = parse_one::<f64>)]
    pub lambda: Option<Override<f64>>,
}

/// Fully resolved invocation of a training subcommand.
#[derive(Debug, Clone)]
pub struct CliConfig {
    pub protocol: Protocol,
    pub spec_path: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: Option<NonZeroUsize>,
    pub verbosity: u8,
    /// Flag overrides exactly as typed, keyed by flag name.
    pub overrides: BTreeMap<String, String>,
    pub spec: ExperimentSpec,
}

/// Failure of a CLI invocation, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

/// `--out`, then `$CSL_OUT`, then the spec's `out`, then `./results`.
pub fn resolve_out(flag: Option<&Path>, env: Option<&std::ffi::OsStr>, spec: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| spec.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn load_spec(path: &Path) -> Result<(ExperimentSpec, Option<Protocol>), Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec = ExperimentSpec::from_json(&text).map_err(|e| Error::domain(format!("{}: {e}", path.display())))?;
    let named = serde_json::from_str::<serde_json::Value>(&text)
        .ok()
        .and_then(|v| v.get("protocol").cloned())
        .map(|_| spec.protocol);
    Ok((spec, named))
}

impl CliConfig {
    /// Resolve subcommand, spec file, overrides and output root.
    pub fn resolve(
        protocol: Option<Protocol>,
        args: &RunArgs,
        verbosity: u8,
        env_out: Option<&std::ffi::OsStr>,
    ) -> Result<CliConfig, CliError> {
        let (mut spec, named) = match &args.spec {
            Some(path) => load_spec(path)?,
            None => (ExperimentSpec::default(), None),
        };
        let protocol = match (protocol, named) {
            (Some(p), Some(n)) if p != n => {
                return Err(CliError::Run(Error::domain(format!(
                    "spec names protocol `{n}` but this subcommand runs `{p}`"
                ))))
            }
            (Some(p), _) => p,
            (None, Some(n)) if SWEEPS.contains(&n) => n,
            (None, _) => {
                return Err(CliError::Usage(
                    "sweep needs --kind <p|d|wd|freeze> (or a spec naming a sweep protocol)".into(),
                ))
            }
        };
        spec.protocol = protocol;

        let mut overrides = BTreeMap::new();
        if let Some(o) = &args.p {
            spec.p = o.value.clone();
            overrides.insert("--p".into(), o.raw.clone());
        }
        if let Some(o) = &args.d {
            spec.d = o.value.clone();
            overrides.insert("--d".into(), o.raw.clone());
        }
        if let Some(o) = &args.wd {
            spec.weight_decay = o.value.clone();
            overrides.insert("--wd".into(), o.raw.clone());
        }
        if let Some(o) = &args.steps {
            spec.steps = o.value;
            overrides.insert("--steps".into(), o.raw.clone());
        }
        if let Some(o) = &args.seed {
            spec.seed = o.value;
            overrides.insert("--seed".into(), o.raw.clone());
        }
        if let Some(o) = &args.trials {
            spec.trials = o.value;
            overrides.insert("--trials".into(), o.raw.clone());
        }
        if let Some(o) = &args.lambda {
            spec.lambda = Some(o.value);
            overrides.insert("--lambda".into(), o.raw.clone());
        }
        let out = resolve_out(args.out.as_deref(), env_out, spec.out.as_deref());
        spec.out = Some(out.clone());
        spec.validate()?;
        Ok(CliConfig {
            protocol,
            spec_path: args.spec.clone(),
            out,
            workers: args.workers,
            verbosity,
            overrides,
            spec,
        })
    }

    pub fn execution(&self) -> Execution {
        match self.workers {
            Some(n) => Execution::Workers(n.get()),
            None => Execution::Parallel,
        }
    }

    pub fn run(&self) -> Result<harness::ExperimentResult, Error> {
        let store = Store::at(&self.out).with_overrides(self.overrides.clone());
        harness::run(&self.spec, &store, self.execution())
    }
}

const SWEEPS: [Protocol; 4] = [Protocol::PSweep, Protocol::DSweep, Protocol::WdSweep, Protocol::FreezeSweep];

/// Execute a parsed command line.
pub fn dispatch(cli: &Cli, env_out: Option<&std::ffi::OsStr>) -> Result<(), CliError> {
    let (protocol, args) = match &cli.command {
        Command::Report { dir } => {
            let dir = dir.clone().unwrap_or_else(|| resolve_out(None, env_out, None));
            let written = report::render_report(&dir)?;
            println!("wrote {} report files under {}", written.len(), dir.display());
            return Ok(());
        }
        Command::Train(a) => (Some(Protocol::Baseline), a),
        Command::Sweep { kind, run } => (kind.map(SweepKind::protocol), run),
        Command::Perturb(a) => (Some(Protocol::Perturb), a),
        Command::Construct(a) => (Some(Protocol::Construct), a),
        Command::Ablate(a) => (Some(Protocol::AblateCircles), a),
        Command::Forced(a) => (Some(Protocol::ForcedCircles), a),
        Command::FitOde(a) => (Some(Protocol::OdeFit), a),
        Command::Fitness(a) => (Some(Protocol::FitnessStats), a),
    };
    let cfg = CliConfig::resolve(protocol, args, cli.verbose, env_out)?;
    let result = cfg.run()?;
    println!(
        "{}: {} cells × {} trials -> {}",
        cfg.protocol,
        result.cells.len(),
        cfg.spec.trials,
        cfg.out.join(cfg.protocol.name()).display()
    );
    Ok(())
}
