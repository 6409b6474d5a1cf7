//! `dmage`: precompute similarities, train embeddings, evaluate and ablate.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dmage_core::eval::F1Variant;

use commands::{parse_seeds, ClusterArgs, ScorerArg};
use config::load_run_config;
use error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "dmage", version, about = "Attributed graph embedding by geodesic similarity matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    #[value(name = "paper_clustering")]
    PaperClustering,
    #[value(name = "viz_2d")]
    Viz2d,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::PaperClustering => "paper_clustering",
            Preset::Viz2d => "viz_2d",
        }
    }
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Task {
    Cluster,
    Linkpred,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute and cache the input similarity matrices.
    Precompute(RunArgs),
    /// Train and write embeddings.tsv, loss.tsv and a checkpoint.
    Train(RunArgs),
    /// Clustering or link-prediction evaluation over several seeds.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long)]
        out: PathBuf,
        /// Seeds as a list and/or half-open ranges, e.g. `0..20` or `1,4,9`.
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Embeddings to cluster (cluster task).
        #[arg(long, required_if_eq("task", "cluster"))]
        embeddings: Option<PathBuf>,
        /// One label per line (cluster task).
        #[arg(long, required_if_eq("task", "cluster"))]
        labels: Option<PathBuf>,
        /// k-means restarts per seed.
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, value_enum, default_value = "macro")]
        f1: F1Arg,
        /// Run config to re-train on each split (linkpred task).
        #[arg(long, required_if_eq("task", "linkpred"))]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "t_kernel")]
        scorer: ScorerArg,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
    },
    /// Train the ablation variants and a Q_p / nu_latent grid, comparing clustering scores.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value = "0")]
        seeds: String,
        /// Comma-separated Q_p values.
        #[arg(long, value_delimiter = ',')]
        q_p_grid: Vec<f64>,
        /// Comma-separated nu_latent values.
        #[arg(long, value_delimiter = ',')]
        nu_latent_grid: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum F1Arg {
    Macro,
    Micro,
}

fn seeds(text: &str) -> CliResult<Vec<u64>> {
    parse_seeds(text).map_err(error::CliError::Config)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Precompute(a) => {
            let cfg = load_run_config(&a.config, a.preset.map(Preset::name), a.seed)?;
            commands::precompute_cmd(&cfg, &a.out)
        }
        Command::Train(a) => {
            let cfg = load_run_config(&a.config, a.preset.map(Preset::name), a.seed)?;
            commands::train_cmd(&cfg, &a.out)
        }
        Command::Eval {
            task,
            out,
            seeds: seed_text,
            embeddings,
            labels,
            restarts,
            f1,
            config,
            scorer,
            preset,
        } => {
            let seeds = seeds(&seed_text)?;
            match task {
                Task::Cluster => {
                    let (Some(embeddings), Some(labels)) = (embeddings, labels) else {
                        unreachable!("clap enforces both paths for the cluster task");
                    };
                    let f1 = match f1 {
                        F1Arg::Macro => F1Variant::Macro,
                        F1Arg::Micro => F1Variant::Micro,
                    };
                    commands::eval_cluster_cmd(
                        &ClusterArgs {
                            embeddings: &embeddings,
                            labels: &labels,
                            seeds: &seeds,
                            restarts,
                            f1,
                        },
                        &out,
                    )
                }
                Task::Linkpred => {
                    let config = config.expect("clap enforces --config for linkpred");
                    let cfg = load_run_config(&config, preset.map(Preset::name), None)?;
                    commands::eval_linkpred_cmd(&cfg, &seeds, scorer, &out)
                }
            }
        }
        Command::Ablate {
            run,
            seeds: seed_text,
            q_p_grid,
            nu_latent_grid,
        } => {
            let cfg = load_run_config(&run.config, run.preset.map(Preset::name), run.seed)?;
            commands::ablate_cmd(&cfg, &seeds(&seed_text)?, &q_p_grid, &nu_latent_grid, &run.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
