//! `coolkws`: prepare data, pretrain, build streams, run learners and report.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coolkws::online::RunMode;

use commands::Common;
use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "coolkws", version, about = "Keyword spotting with conditional online learning")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true, default_value = "coolkws.json")]
    config: PathBuf,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Args, Debug)]
struct Tasks {
    /// Restrict to these target words (comma separated).
    #[arg(long, value_delimiter = ',', alias = "words")]
    task: Option<Vec<String>>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a config with every default to the --config path.
    Init {
        /// Speech Commands root.
        #[arg(long)]
        gsc_root: PathBuf,
        /// Noise recordings as SCENARIO=PATH (repeatable).
        #[arg(long, value_parser = parse_noise)]
        noise: Vec<(String, PathBuf)>,
    },
    /// Scan the corpus, write the manifest and one task per word.
    PrepareData(Tasks),
    /// Train the base model of each task.
    Pretrain(Tasks),
    /// Build per-scenario and sequential streams from each task's test clips.
    BuildStream {
        #[command(flatten)]
        tasks: Tasks,
        /// Clean, BabyCrying, GlassBreak, GunShot or Sequential (comma separated).
        #[arg(long, value_delimiter = ',')]
        scenario: Option<Vec<String>>,
    },
    /// Run learners over streams, each from the task's base model.
    Run {
        #[command(flatten)]
        tasks: Tasks,
        /// Streams to run on (comma separated); defaults to every stream on disk.
        #[arg(long, value_delimiter = ',')]
        scenario: Option<Vec<String>>,
        /// frozen, naive, cool (comma separated); defaults to the config's modes.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        mode: Option<Vec<RunMode>>,
    },
    /// Write tables and curves from run logs.
    Report {
        #[command(flatten)]
        tasks: Tasks,
        /// Run logs to use instead of every log under the output directory.
        logs: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<RunMode, String> {
    RunMode::parse(s).ok_or_else(|| format!("unknown mode {s:?}; expected frozen, naive or cool"))
}

fn parse_noise(s: &str) -> Result<(String, PathBuf), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected SCENARIO=PATH, got {s:?}"))?;
    Ok((k.to_string(), PathBuf::from(v)))
}

fn init(global: &Global, gsc_root: PathBuf, noise: Vec<(String, PathBuf)>) -> anyhow::Result<Vec<PathBuf>> {
    if global.config.exists() && !global.force {
        return Err(exit::usage(format!(
            "{} already exists; pass --force to overwrite",
            global.config.display()
        )));
    }
    let mut cfg = ExperimentConfig::new(gsc_root, global.out.clone().unwrap_or_else(|| "out".into()));
    cfg.seed = global.seed.unwrap_or(0);
    cfg.dcase = noise.into_iter().collect();
    cfg.validate()?;
    cfg.save(&global.config)?;
    Ok(vec![global.config.clone()])
}

fn execute(cli: Cli) -> anyhow::Result<Vec<PathBuf>> {
    if let Command::Init { gsc_root, noise } = cli.command {
        return init(&cli.global, gsc_root, noise);
    }
    let mut cfg = ExperimentConfig::load(&cli.global.config)?;
    if let Some(seed) = cli.global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.global.out {
        cfg.output_dir = out;
    }
    let common = |t: Tasks| Common {
        words: t.task,
        force: cli.global.force,
    };
    match cli.command {
        Command::PrepareData(t) => commands::prepare_data(&cfg, &common(t)),
        Command::Pretrain(t) => commands::pretrain_models(&cfg, &common(t)),
        Command::BuildStream { tasks, scenario } => commands::build_streams(&cfg, &common(tasks), scenario.as_deref()),
        Command::Run { tasks, scenario, mode } => {
            commands::run_learners(&cfg, &common(tasks), scenario.as_deref(), mode.as_deref())
        }
        Command::Report { tasks, logs } => commands::report(&cfg, &common(tasks), &logs),
        Command::Init { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli) {
        Ok(written) => {
            for p in written {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_of(&e) as u8)
        }
    }
}
