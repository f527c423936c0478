//! `haicmp`: batch driver for the pipeline. Each subcommand runs one stage
//! into a run directory; stages whose inputs are unchanged are skipped.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use haicmp_core::config::PipelineConfig;
use serde::Serialize;

use stages::{CliError, Run, Stage};

#[derive(Parser)]
#[command(name = "haicmp", version, about = "HAI prediction pipeline: synthetic data, labels, cohorts, models, evaluation")]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for all stage outputs.
    #[arg(long, global = true, default_value = "haicmp-run")]
    out: PathBuf,
    /// Overrides the pipeline seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = "HAICMP_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the synthetic scenario's tables to <out>/data.
    Generate,
    /// Label every stay for both targets.
    Label,
    /// Build the common cohort and the repeated split manifests.
    Cohort,
    /// Sample prediction times and write feature and mask matrices.
    Featurize,
    /// Select hyperparameters and fit one model per plan and split.
    Train,
    /// Evaluate the trained models and write the report and plots.
    Evaluate,
    /// Run every stage in order.
    Experiment,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    kind: &'a str,
    stage: Option<&'a str>,
    message: String,
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: ErrorBody<'a>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let invalid = |e: haicmp_core::Error| CliError::Config(e.to_string());
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_path(p).map_err(invalid)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.check().map_err(invalid)?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs.filter(|&j| j > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    }
    let cfg = load_config(cli)?;
    let run = Run::open(&cli.out, cfg)?;
    let stages: &[Stage] = match cli.command {
        Command::Generate => &[Stage::Generate],
        Command::Label => &[Stage::Label],
        Command::Cohort => &[Stage::Cohort],
        Command::Featurize => &[Stage::Featurize],
        Command::Train => &[Stage::Train],
        Command::Evaluate => &[Stage::Evaluate],
        Command::Experiment => {
            if run.external_data() {
                &[Stage::Label, Stage::Cohort, Stage::Featurize, Stage::Train, Stage::Evaluate]
            } else {
                &[Stage::Generate, Stage::Label, Stage::Cohort, Stage::Featurize, Stage::Train, Stage::Evaluate]
            }
        }
    };
    for &s in stages {
        run.stage(s)?;
    }
    if matches!(cli.command, Command::Evaluate | Command::Experiment) {
        print!("{}", run.summary_table()?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_target(false).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = ErrorReport { error: ErrorBody { kind: e.kind(), stage: e.stage(), message: e.to_string() } };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(e.exit_code())
        }
    }
}
