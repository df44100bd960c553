//! `tckit`: the TCK pipeline from synthetic or raw MTS to a classification
//! report. Each subcommand reads and writes plain files in a run directory.

mod commands;
mod config;
mod table;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use crate::config::{DrMethod, PipelineConfig};

#[derive(Parser)]
#[command(name = "tckit", version, about = "Time series cluster kernel pipeline")]
struct Cli {
    /// TOML pipeline configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TCKIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort (`data.csv`, `ground_truth.csv`).
    Synth {
        /// Generator spec (TOML, or JSON by extension); default is the two-moons fixture.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Window, split and balance a raw CSV (`train.csv`, `test.csv`).
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Fit the kernel ensemble (`tck_model.json`, `kernel_{train,test}.csv`).
    Tck,
    /// Reduce kernel rows (or raw values) and embed them in 2-D (`repr_*`, `embedding_*`).
    Embed {
        /// pca, kpca, ae or all.
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Cross-validate and test every classifier (`report.csv`, `report.txt`).
    Classify,
    /// Consolidate reports and summarise a selected cluster.
    Report {
        /// Run directories to consolidate (default: the `--out` directory).
        runs: Vec<PathBuf>,
        /// Ids, one per line, or a JSON polygon in embedding coordinates.
        #[arg(long)]
        selection: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("TCKIT_LOG", "info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    let out = cfg.output_dir.clone();

    match cli.command {
        Command::Synth { spec } => commands::synth(&cfg, &out, spec.as_deref(), cli.seed),
        Command::Ingest { input } => commands::ingest(&cfg, &out, input.as_deref()),
        Command::Tck => commands::tck(&cfg, &out),
        Command::Embed { method } => {
            let methods = if method == "all" { cfg.dimred.methods.clone() } else { vec![method.parse::<DrMethod>()?] };
            commands::embed(&cfg, &out, &methods)
        }
        Command::Classify => {
            let report = commands::classify(&cfg, &out)?;
            print!("{}", report.render_table());
            Ok(())
        }
        Command::Report { runs, selection } => {
            let runs = if runs.is_empty() { vec![out.clone()] } else { runs };
            let report = commands::report(&cfg, &out, &runs, selection.as_deref())?;
            print!("{}", report.render_table());
            Ok(())
        }
    }
}
