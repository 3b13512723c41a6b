use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use debias::config::{PipelineConfig, OUT_DIR_ENV};
use debias::stages::Runner;

#[derive(Parser)]
#[command(name = "debias", version, about = "Predicate annotation debiasing for scene graph datasets")]
struct Cli {
    /// Flat TOML config file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the file and DEBIAS_OUT_DIR).
    #[arg(short, long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override any config key, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    stage: Stage,
}

#[derive(Subcommand, Clone, Copy)]
enum Stage {
    /// Generate a synthetic biased corpus with known truth.
    Synth,
    /// Risk table and transfer targets.
    InferTargets,
    /// Train the projection head; writes model and loss traces.
    Train,
    /// Loss-variance filtration.
    Filter,
    /// Relabel targets toward rarer, similar predicates.
    Transfer,
    /// Recall metrics of input and output corpora.
    Evaluate,
    /// All stages in order.
    Pipeline,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::InferTargets => "infer-targets",
            Stage::Train => "train",
            Stage::Filter => "filter",
            Stage::Transfer => "transfer",
            Stage::Evaluate => "evaluate",
            Stage::Pipeline => "pipeline",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(t) = cli.threads {
        overrides.push(format!("threads={t}"));
    }
    let mut cfg = PipelineConfig::resolve(cli.config.as_deref(), std::env::var(OUT_DIR_ENV).ok(), &overrides)?;
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring worker threads")?;
    }
    let runner = Runner::new(cfg);
    for m in runner.run(cli.stage.name())? {
        println!("{}: {}", m.stage, debias::manifest::manifest_path(&runner.cfg.out_dir, &m.stage).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("debias: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
