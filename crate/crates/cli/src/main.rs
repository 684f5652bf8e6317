//! `incomedist`: one executable for every simulator, writing reproducible
//! run directories (data files plus a `manifest.json` written last).

mod cmd;
mod error;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::error::{CliError, Result};
use crate::output::{Artifacts, Format, IterationStats, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "incomedist", version, about = "Factor income distribution simulators")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory. Defaults to `$INCOMEDIST_OUT/<subcommand>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Format for tabular outputs.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Step the heterogeneous economy period by period.
    Simulate(Common),
    /// Group-level wealth dynamics, single run or parameter sweep.
    Asympt(Common),
    /// Partition households into near-market groups.
    Partition(Common),
    /// Solve the two-period capital-goods example.
    GeExample(Common),
    /// Realized versus theoretical equity premium.
    Empirical(Common),
    /// Run the built-in invariant checks.
    Selftest(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Asympt(_) => "asympt",
            Command::Partition(_) => "partition",
            Command::GeExample(_) => "ge-example",
            Command::Empirical(_) => "empirical",
            Command::Selftest(_) => "selftest",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c)
            | Command::Asympt(c)
            | Command::Partition(c)
            | Command::GeExample(c)
            | Command::Empirical(c)
            | Command::Selftest(c) => c,
        }
    }
}

/// Inputs shared by every subcommand.
pub struct Context {
    pub config: Option<String>,
    pub base_dir: PathBuf,
    pub seed: Option<u64>,
    pub format: Format,
}

impl Context {
    pub fn require_config(&self) -> Result<&str> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::Usage("--config is required for this subcommand".into()))
    }
}

/// What a subcommand hands back for the manifest.
#[derive(Default)]
pub struct Outcome {
    pub artifacts: Artifacts,
    pub seed: Option<u64>,
    pub iterations: IterationStats,
    pub parameters: Value,
    /// Set when the run completed but a check failed.
    pub failure: Option<CliError>,
}

fn out_dir(common: &Common, name: &str) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    let root = std::env::var_os("INCOMEDIST_OUT").map_or_else(|| PathBuf::from("."), PathBuf::from);
    root.join(name)
}

fn dispatch(command: &Command, ctx: &Context) -> Result<Outcome> {
    match command {
        Command::Simulate(_) => cmd::simulate::run(ctx),
        Command::Asympt(_) => cmd::asympt::run(ctx),
        Command::Partition(_) => cmd::partition::run(ctx),
        Command::GeExample(_) => cmd::ge::run(ctx),
        Command::Empirical(_) => cmd::empirical::run(ctx),
        Command::Selftest(_) => cmd::selftest::run(ctx),
    }
}

fn manifest(name: &str, config: Option<&Path>, digest: Option<String>) -> RunManifest {
    RunManifest {
        subcommand: name.to_string(),
        status: "ok",
        error: None,
        version: env!("CARGO_PKG_VERSION"),
        config: config.map(Path::to_path_buf),
        config_sha256: digest,
        seed: None,
        duration_seconds: 0.0,
        iterations: IterationStats::default(),
        parameters: Value::Null,
        outputs: Vec::new(),
    }
}

fn fail(name: &str, dir: &Path, mut m: RunManifest, err: CliError, started: Instant) -> ExitCode {
    eprintln!("error [{name}]: {err}");
    m.status = "failed";
    m.error = Some(err.to_string());
    m.duration_seconds = started.elapsed().as_secs_f64();
    if let Err(e) = output::commit_failure(dir, &m) {
        eprintln!("error [{name}]: could not write failure manifest: {e}");
    }
    err.exit_code()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(error::EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(error::EXIT_USAGE);
        }
    }

    let name = cli.command.name();
    let common = cli.command.common();
    let dir = out_dir(common, name);
    let started = Instant::now();

    let text = match &common.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => Some(t),
            Err(e) => {
                let err = CliError::Usage(format!("cannot read {}: {e}", p.display()));
                return fail(name, &dir, manifest(name, Some(p), None), err, started);
            }
        },
        None => None,
    };
    let digest = text.as_deref().map(|t| output::sha256_hex(t.as_bytes()));
    let mut m = manifest(name, common.config.as_deref(), digest);
    let base_dir = common
        .config
        .as_deref()
        .and_then(Path::parent)
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    let ctx = Context {
        config: text,
        base_dir,
        seed: common.seed,
        format: common.format,
    };

    let outcome = match dispatch(&cli.command, &ctx) {
        Ok(o) => o,
        Err(e) => return fail(name, &dir, m, e, started),
    };
    m.seed = outcome.seed;
    m.iterations = outcome.iterations;
    m.parameters = outcome.parameters;
    if let Some(err) = outcome.failure {
        return fail(name, &dir, m, err, started);
    }
    m.duration_seconds = started.elapsed().as_secs_f64();
    if let Err(e) = output::commit(&dir, &outcome.artifacts, &mut m) {
        m.outputs.clear();
        return fail(name, &dir, m, e.into(), started);
    }
    for f in outcome.artifacts.names() {
        log::info!("wrote {}", dir.join(f).display());
    }
    ExitCode::SUCCESS
}
