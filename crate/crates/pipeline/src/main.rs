use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gaitrt::commands;
use gaitrt::config::Config;
use gaitrt::driver::record_dump;
use gaitrt::PipelineError;

#[derive(Parser)]
#[command(name = "gaitrt", version, about = "Real-time gait estimation from insoles and IMUs")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort to a dataset directory.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate and fit one model configuration.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Output model file.
        #[arg(long)]
        model: PathBuf,
        /// Directory for the metric report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model on a dataset, or run the configured protocol.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Live session from UDP.
    Run {
        #[arg(long)]
        listen: String,
        /// Directory holding GRF.model, W4.model and M_5joint.model.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Session from a dump file.
    Replay {
        dump: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        as_fast_as_possible: bool,
    },
    /// Record UDP packets, or synthesise them from a dataset trial.
    Dump {
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        listen: Option<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output dump file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare session logs with the reference dataset.
    Report {
        logs: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(out: Option<&Path>, name: &str, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let seed = cli.seed;
    match cli.command {
        Command::Generate { out } => {
            commands::generate(&config, seed, &out)?;
        }
        Command::Train { dataset, model, out } => {
            let text = commands::train_command(&config, seed, &dataset, &model, out.as_deref())?;
            print!("{text}");
        }
        Command::Eval { dataset, model, out } => {
            let text = commands::eval_command(&config, seed, &dataset, model.as_deref())?;
            print!("{text}");
            write_text(out.as_deref(), "eval.txt", &text)?;
        }
        Command::Run { listen, model, out } => {
            let o = commands::run_command(&config, &listen, &model, &out)?;
            println!("{}", serde_json::to_string_pretty(&o.latency)?);
        }
        Command::Replay {
            dump,
            model,
            out,
            as_fast_as_possible,
        } => {
            let o = commands::replay_command(&config, &dump, &model, &out, as_fast_as_possible)?;
            println!("{}", serde_json::to_string_pretty(&o.latency)?);
        }
        Command::Dump { listen, dataset, out } => {
            let n = match (listen, dataset) {
                (Some(addr), _) => record_dump(&addr, &config.realtime, &out)? as usize,
                (None, Some(dir)) => commands::synth_dump_command(&config, &dir, &out)?,
                (None, None) => unreachable!("clap requires one source"),
            };
            println!("{n} packets written to {}", out.display());
        }
        Command::Report { logs, dataset, out } => {
            let r = commands::report_command(&config, &logs, &dataset, out.as_deref())?;
            print!("{}", r.table_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAITRT_LOG_LEVEL", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            if !usage {
                return ExitCode::SUCCESS;
            }
            eprintln!("code: E_USAGE");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.downcast_ref::<PipelineError>().map_or("E_RUNTIME", PipelineError::code);
            eprintln!("error[{code}]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
