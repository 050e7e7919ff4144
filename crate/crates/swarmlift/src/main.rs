//! Command-line front end. Everything substantive lives in the library; this
//! binary parses arguments, resolves the configuration, and maps errors onto
//! stable exit codes (2 config, 3 I/O, 4 runtime).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swarmlift::cli::{export_runs, inspect_text, write_manifest};
use swarmlift::config::Config;
use swarmlift::eval::{
    ablation_suite, run_scenario, AblationKind, NMPC_ATT_RMSE_DEG, NMPC_POS_RMSE_M,
    NMPC_SOLVE_TIME_MS, NMPC_TIME_TO_TARGET_S,
};
use swarmlift::marl::{Policy, Trainer};
use swarmlift::{Error, Result};

#[derive(Parser)]
#[command(
    name = "swarmlift",
    version,
    about = "Decentralized full-pose control of a cable-suspended load: \
             training, evaluation, and run tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the subcommands that resolve a configuration.
#[derive(Args)]
struct CommonArgs {
    /// Configuration file (TOML). Omitting it uses built-in defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Dotted key=value override applied on top of the file, e.g.
    /// `--override marl.envs=8` (repeatable; overrides win).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Root random seed; every per-component stream derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Worker threads. Environments are stepped sequentially so runs stay
    /// bit-reproducible; values above 1 are accepted but unused.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes manifest.toml, metrics.csv, and checkpoints.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Output directory.
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
        /// Suppress per-iteration progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Roll out a trained checkpoint on a scripted scenario.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint produced by `train`.
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Scenario name: setpoint_step, hover, figure_eight, mav_failure,
        /// heterogeneous, or load_mismatch. Wins over the config's
        /// eval.scenario; the default is setpoint_step.
        #[arg(long)]
        scenario: Option<String>,
        /// Output directory for metrics and time-series CSVs.
        #[arg(long, default_value = "runs/eval")]
        out: PathBuf,
    },
    /// Train and evaluate matched variants along one design axis.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// Axis to sweep: action_space, observation_space, history_length,
        /// or critic.
        #[arg(long)]
        kind: AblationKind,
        /// Output directory; each variant trains into a subdirectory.
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
        /// Suppress per-iteration progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Print a human-readable summary of a checkpoint.
    Inspect {
        /// Checkpoint file to summarize.
        checkpoint: PathBuf,
    },
    /// Merge metrics from a tree of runs into consolidated summary tables.
    Export {
        /// Directory containing one or more run outputs.
        run_dir: PathBuf,
        /// Where to write the tables (default: RUN_DIR/export).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<Config> {
    if common.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    if common.threads > 1 {
        eprintln!(
            "note: --threads {} requested; stepping sequentially for reproducibility",
            common.threads
        );
    }
    match &common.config {
        Some(path) => Config::load(path, &common.overrides),
        None => Config::parse("", &common.overrides),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train { common, out, quiet } => {
            let config = load_config(&common)?;
            let env = config.env_params()?;
            let params = config.trainer_params()?;
            write_manifest(&out, "train", common.seed, common.threads, &config)?;
            let mut trainer = Trainer::new(env, params, common.seed)?;
            let report = trainer.train(&out, quiet)?;
            println!(
                "trained {} iterations / {} env steps in {:.1}s \
                 (mean return {:.3} -> {:.3})",
                report.iterations,
                report.env_steps,
                report.wall_s,
                report.first_return,
                report.final_return,
            );
            println!("metrics:    {}", report.metrics_path.display());
            println!("checkpoint: {}", report.checkpoint_path.display());
        }
        Command::Eval { common, checkpoint, scenario, out } => {
            let mut config = load_config(&common)?;
            if let Some(name) = scenario {
                config.eval.scenario = Some(name);
            }
            let policy = Policy::from_checkpoint(&checkpoint)?;
            // Without an explicit system/task section the checkpoint defines
            // the environment; with one, a mismatch is an error, not a fixup.
            let structural = common.config.is_some()
                || common.overrides.iter().any(|o| {
                    let key = o.split('=').next().unwrap_or("").trim();
                    key.starts_with("system.") || key.starts_with("env.")
                });
            let env = if structural {
                config.env_params()?
            } else {
                policy.env_params()?
            };
            let name = config.eval.scenario.clone().unwrap_or_else(|| "setpoint_step".into());
            let scenario = config.scenario_for(&env, common.seed)?;
            write_manifest(&out, "eval", common.seed, common.threads, &config)?;
            let report = run_scenario(&policy, &env, &scenario, Some(&out))?;
            let s = &report.summary;
            println!(
                "{name}: {} runs, {} completed, {} reached target",
                s.runs, s.completed, s.reached
            );
            println!(
                "pos RMSE {:.3} m, att RMSE {:.2} deg, time-to-target {:.2} s",
                s.pos_rmse, s.att_rmse_deg, s.time_to_target
            );
            println!(
                "offboard NMPC reference: {NMPC_POS_RMSE_M} m / {NMPC_ATT_RMSE_DEG} deg / \
                 {NMPC_TIME_TO_TARGET_S} s at {NMPC_SOLVE_TIME_MS} ms per solve"
            );
            if let Some(path) = &report.metrics_path {
                println!("metrics: {}", path.display());
            }
        }
        Command::Ablate { common, kind, out, quiet } => {
            let config = load_config(&common)?;
            let env = config.env_params()?;
            let params = config.trainer_params()?;
            let scenario = config.scenario_for(&env, common.seed)?;
            write_manifest(&out, "ablate", common.seed, common.threads, &config)?;
            let table = ablation_suite(kind, &env, &params, &scenario, common.seed, &out, quiet)?;
            println!("comparison table: {}", table.display());
        }
        Command::Inspect { checkpoint } => {
            print!("{}", inspect_text(&checkpoint)?);
        }
        Command::Export { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("export"));
            let report = export_runs(&run_dir, &out)?;
            if report.written.is_empty() {
                println!("nothing to export: no metrics found under {}", run_dir.display());
            } else {
                println!("merged {} sources", report.sources);
                for path in &report.written {
                    println!("wrote {}", path.display());
                }
            }
        }
    }
    Ok(())
}
