use std::path::PathBuf;
use std::process::ExitCode;

use ce_cli::{Overrides, Run, Stage};
use clap::{CommandFactory, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ce-eval", version, about = "Evaluate how culturally expressive model responses are")]
struct Cli {
    /// Run configuration (TOML); relative paths inside it resolve against its directory.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Seed for sampling, bootstrap, projection and fine-tuning; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output root; the run lands in `<out>/<run-id>/`. Overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Collect question titles and draw the evaluated subset
    Scrape,
    /// Pick the two representative user answers for every question
    Aggregate,
    /// Ask every configured model the evaluated questions
    Collect,
    /// Compute metrics.csv, per-question values and stats.json
    Evaluate,
    /// Grid-search the CE weights against human annotations
    Calibrate,
    /// Train a low-rank adapter and compare before and after
    Finetune,
    /// Write tables, figures and projections
    Report,
    /// Run every stage in order
    RunAll,
}

fn stage(command: Command) -> Option<Stage> {
    Some(match command {
        Command::Scrape => Stage::Scrape,
        Command::Aggregate => Stage::Aggregate,
        Command::Collect => Stage::Collect,
        Command::Evaluate => Stage::Evaluate,
        Command::Calibrate => Stage::Calibrate,
        Command::Finetune => Stage::Finetune,
        Command::Report => Stage::Report,
        Command::RunAll => return None,
    })
}

fn one_line(e: &anyhow::Error) -> String {
    format!("{e:#}").split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let Some(config) = cli.config else {
        let _ = Cli::command()
            .error(clap::error::ErrorKind::MissingRequiredArgument, "--config <FILE> is required")
            .print();
        return ExitCode::from(2);
    };
    let overrides = Overrides { seed: cli.seed, out: cli.out };
    let result = Run::open(&config, &overrides).and_then(|mut run| {
        let r = match stage(cli.command) {
            Some(s) => run.run_stage(s),
            None => run.run_all(),
        };
        if r.is_ok() {
            println!("run {}: {}", run.run_id(), run.dir.display());
        }
        r
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::FAILURE
        }
    }
}
