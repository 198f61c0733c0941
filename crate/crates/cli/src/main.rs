//! `wcbf`: run scenarios, sweep parameters, run the checks, serve the
//! teleoperation bridge.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad configuration or
//! arguments, 3 runtime fault.

mod sweep;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wrench_cbf::sim::trace::write_run;
use wrench_cbf::sim::{run_scenario_logged, scenarios, ScenarioConfig};
use wrench_cbf::validate::{self, CriterionResult};
use wrench_cbf_teleop::{replay, Pacing, ServeError, SessionLog};

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_FAULT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "wcbf",
    version,
    about = "Wrench-limited compliant control: simulate, sweep, check, serve"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario JSON file.
    config: PathBuf,
    /// Override a field, e.g. `controller.params.alpha_force=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Replace the noise seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig, Failure> {
        let mut config = ScenarioConfig::from_path_with_overrides(&self.config, &self.overrides)
            .map_err(Failure::config)?;
        if let Some(seed) = self.seed {
            config.rng_seed = seed;
        }
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write `<name>.trace.csv` and `<name>.summary.json`.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(short, long, default_value = "out")]
        output_dir: PathBuf,
        /// Also write the raw sensor wrench and the plant-rate pose.
        #[arg(short, long)]
        verbose: bool,
    },
    /// Run every combination of the grid values, one output set per cell,
    /// plus `<name>.sweep.csv`.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// `key=[v1,v2,...]` (JSON array) or `key=v1,v2,...`. Repeatable.
        #[arg(long = "grid", value_name = "KEY=VALUES", required = true)]
        grid: Vec<String>,
        #[arg(short, long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Run the built-in checks, or check the given scenarios against the
    /// wrench limits.
    Validate {
        /// Check these scenario files instead of running the built-in suite.
        #[arg(long = "scenario", value_name = "FILE")]
        scenarios: Vec<PathBuf>,
        /// Run only these checks (1 to 7). Repeatable.
        #[arg(long = "only", value_name = "ID")]
        only: Vec<u8>,
        /// Print one JSON document instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run an interactive scenario in real time behind a WebSocket at `/ws`.
    Serve {
        /// Scenario file; the built-in interactive scenario when omitted.
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: SocketAddr,
        /// Step as fast as possible instead of at the control rate.
        #[arg(long)]
        turbo: bool,
        /// On shutdown, write the session trace and command log here.
        #[arg(long, value_name = "DIR")]
        record: Option<PathBuf>,
    },
    /// Re-run a recorded session from its `<name>.commands.json`.
    Replay {
        log: PathBuf,
        #[arg(short, long, default_value = "out")]
        output_dir: PathBuf,
    },
}

/// A message for stderr and the exit code that goes with it.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    pub message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: format!("configuration error: {e}"),
        }
    }

    fn fault(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_FAULT,
            message: format!("runtime fault: {e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            output_dir,
            verbose,
        } => run(&scenario, &output_dir, verbose),
        Command::Sweep {
            scenario,
            grid,
            output_dir,
        } => scenario
            .load()
            .and_then(|base| sweep::sweep(&base, &grid, &output_dir)),
        Command::Validate {
            scenarios,
            only,
            json,
        } => validate_cmd(&scenarios, &only, json),
        Command::Serve {
            config,
            overrides,
            seed,
            bind,
            turbo,
            record,
        } => serve(config, &overrides, seed, bind, turbo, record.as_deref()),
        Command::Replay { log, output_dir } => replay_cmd(&log, &output_dir),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("wcbf: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn check_trace(
    config: &ScenarioConfig,
    trace: &[wrench_cbf::sim::TraceRecord],
) -> Result<(), Failure> {
    match trace
        .iter()
        .find(|r| !r.pose.is_finite() || !r.wrench.is_finite())
    {
        Some(r) => Err(Failure::fault(format!(
            "{}: state became non-finite at t = {}",
            config.name, r.t
        ))),
        None => Ok(()),
    }
}

fn run(args: &ScenarioArgs, output_dir: &Path, verbose: bool) -> Result<u8, Failure> {
    let config = args.load()?;
    let out = run_scenario_logged(&config, verbose).map_err(Failure::config)?;
    check_trace(&config, &out.trace)?;
    write_run(
        output_dir,
        &out.trace,
        &out.summary,
        &out.plant_log,
        verbose,
    )
    .map_err(|e| Failure::fault(format!("writing {}: {e}", output_dir.display())))?;
    println!("{}", out.summary.to_json_pretty());
    Ok(0)
}

fn print_results(results: &[CriterionResult], json: bool) {
    if json {
        let passed = results.iter().all(|r| r.passed);
        let doc = serde_json::json!({ "passed": passed, "results": results });
        println!(
            "{}",
            serde_json::to_string_pretty(&doc).expect("plain data")
        );
    } else {
        for r in results {
            println!("{r}");
        }
        let failed = results.iter().filter(|r| !r.passed).count();
        println!("{} passed, {failed} failed", results.len() - failed);
    }
}

fn validate_cmd(files: &[PathBuf], only: &[u8], json: bool) -> Result<u8, Failure> {
    let results: Vec<CriterionResult> = if files.is_empty() {
        if only.is_empty() {
            validate::run_all()
        } else {
            only.iter()
                .map(|&id| {
                    validate::run_one(id)
                        .ok_or_else(|| Failure::config(format!("no check {id} (expected 1 to 7)")))
                })
                .collect::<Result<_, _>>()?
        }
    } else {
        let configs = files
            .iter()
            .map(|f| ScenarioConfig::from_path(f).map_err(Failure::config))
            .collect::<Result<Vec<_>, _>>()?;
        configs.iter().map(validate::check_scenario).collect()
    };
    print_results(&results, json);
    Ok(if results.iter().all(|r| r.passed) {
        0
    } else {
        EXIT_CHECK_FAILED
    })
}

fn serve(
    config: Option<PathBuf>,
    overrides: &[String],
    seed: Option<u64>,
    bind: SocketAddr,
    turbo: bool,
    record: Option<&Path>,
) -> Result<u8, Failure> {
    let mut config = match config {
        Some(path) => ScenarioConfig::from_path_with_overrides(path, overrides),
        None => scenarios::interactive().with_overrides(overrides),
    }
    .map_err(Failure::config)?;
    if let Some(seed) = seed {
        config.rng_seed = seed;
    }
    let pacing = if turbo {
        Pacing::Turbo
    } else {
        Pacing::RealTime
    };
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::fault)?;
    runtime
        .block_on(wrench_cbf_teleop::serve(config, bind, pacing, record))
        .map_err(|e| match e {
            ServeError::Session(e) => Failure::config(e),
            e => Failure::fault(e),
        })?;
    Ok(0)
}

fn replay_cmd(path: &Path, output_dir: &Path) -> Result<u8, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let log = SessionLog::from_json_str(&text).map_err(Failure::config)?;
    let session = replay(&log).map_err(Failure::config)?;
    session
        .record(output_dir)
        .map_err(|e| Failure::fault(format!("writing {}: {e}", output_dir.display())))?;
    println!("{}", session.summary().to_json_pretty());
    Ok(0)
}
