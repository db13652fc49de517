use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ealstm::commands::{
    cmd_analyze_cluster, cmd_analyze_compare, cmd_analyze_embed, cmd_analyze_robustness,
    cmd_analyze_sensitivity, cmd_evaluate, cmd_gridsearch, cmd_synth, cmd_train, EvalPeriod,
    RunManifest,
};
use ealstm::config::TrainingConfig;
use ealstm::data::SynthOptions;
use ealstm::error::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ealstm",
    version,
    about = "Entity-aware LSTM toolkit for multi-basin rainfall-runoff modeling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's data root.
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's seed list (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the config's epoch count.
    #[arg(long)]
    epochs: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<TrainingConfig> {
        let mut config = TrainingConfig::load(&self.config)?;
        if let Some(root) = &self.data_root {
            config.data_root = root.clone();
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(seeds) = &self.seeds {
            config.seeds = seeds.clone();
        }
        if let Some(epochs) = self.epochs {
            config.epochs = epochs;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one checkpoint per seed and write the run manifest.
    Train(ConfigArgs),
    /// Evaluate the checkpoints of a run over a period.
    Evaluate {
        /// Path to a run manifest (manifest.json).
        #[arg(long)]
        manifest: PathBuf,
        /// Evaluation period: validation | training.
        #[arg(long, default_value = "validation")]
        period: String,
    },
    /// Post-hoc analyses on a trained run.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
    /// Basin-wise k-fold hyperparameter search.
    Gridsearch {
        #[command(flatten)]
        config: ConfigArgs,
        /// JSON file with a `candidates` array.
        #[arg(long)]
        space: PathBuf,
        /// Number of basin folds.
        #[arg(long, default_value_t = 4)]
        folds: usize,
    },
    /// Emit a synthetic linear-reservoir fixture in the data-root layout.
    Synth {
        /// Output data root.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        basins: usize,
        #[arg(long, default_value_t = 1200)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone)]
struct ManifestArgs {
    /// Path to a run manifest (manifest.json).
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint seed to analyze (default: first in the manifest).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Attribute sensitivity ranking from exact prediction gradients.
    Sensitivity(ManifestArgs),
    /// NSE degradation under attribute noise.
    Robustness {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Noise standard deviations (comma separated; default 0.1..1.0).
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 50)]
        draws: usize,
        /// Root seed for the noise draws.
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
    },
    /// Export the catchment embedding matrix.
    Embed(ManifestArgs),
    /// Silhouette sweep plus clustering artifacts.
    Cluster {
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        cluster_seed: u64,
    },
    /// Paired Wilcoxon test and effect size between two evaluation tables.
    Compare {
        #[arg(long)]
        report_a: PathBuf,
        #[arg(long)]
        report_b: PathBuf,
        /// Optional output table path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let config = args.load()?;
            let manifest = cmd_train(&config)?;
            println!(
                "trained {} checkpoint(s) into {}",
                manifest.checkpoints.len(),
                config.out_dir.display()
            );
        }
        Command::Evaluate { manifest, period } => {
            let manifest = RunManifest::load(&manifest)?;
            let period = EvalPeriod::parse(&period)?;
            let out = cmd_evaluate(&manifest, period)?;
            for (seed, eval) in &out.per_seed {
                let a = &eval.aggregate;
                println!(
                    "seed {seed}: median NSE {:.4}, mean NSE {:.4}, NSE<=0 in {} of {} basins",
                    a.nse_median, a.nse_mean, a.n_nse_nonpositive, a.n_basins
                );
                for w in &eval.warnings {
                    eprintln!("warning: {w}");
                }
            }
            let a = &out.ensemble.aggregate;
            println!(
                "ensemble: median NSE {:.4}, mean NSE {:.4}, NSE<=0 in {} of {} basins",
                a.nse_median, a.nse_mean, a.n_nse_nonpositive, a.n_basins
            );
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Analyze { what } => match what {
            AnalyzeCommand::Sensitivity(args) => {
                let manifest = RunManifest::load(&args.manifest)?;
                let (table, files) = cmd_analyze_sensitivity(&manifest, args.seed)?;
                let mut order: Vec<usize> = (0..table.attribute_names.len()).collect();
                order.sort_by_key(|&j| table.rank[j]);
                for &j in order.iter().take(5) {
                    println!(
                        "{}. {} ({:.3})",
                        table.rank[j], table.attribute_names[j], table.global_score[j]
                    );
                }
                for f in &files {
                    println!("wrote {}", f.display());
                }
            }
            AnalyzeCommand::Robustness {
                manifest,
                sigmas,
                draws,
                noise_seed,
            } => {
                let run = RunManifest::load(&manifest.manifest)?;
                let (results, files) =
                    cmd_analyze_robustness(&run, manifest.seed, sigmas, draws, noise_seed)?;
                for level in &results {
                    println!(
                        "sigma {:.2}: median NSE {:.4}",
                        level.sigma,
                        level.median_nse()
                    );
                }
                for f in &files {
                    println!("wrote {}", f.display());
                }
            }
            AnalyzeCommand::Embed(args) => {
                let manifest = RunManifest::load(&args.manifest)?;
                let (embedding, files) = cmd_analyze_embed(&manifest, args.seed)?;
                println!(
                    "embedding: {} basins x {} units",
                    embedding.matrix.nrows(),
                    embedding.matrix.ncols()
                );
                for f in &files {
                    println!("wrote {}", f.display());
                }
            }
            AnalyzeCommand::Cluster {
                manifest,
                k_min,
                k_max,
                restarts,
                cluster_seed,
            } => {
                if k_min < 2 || k_max < k_min {
                    return Err(Error::Config(format!(
                        "invalid cluster range {k_min}..{k_max}"
                    )));
                }
                let run = RunManifest::load(&manifest.manifest)?;
                let out = cmd_analyze_cluster(
                    &run,
                    manifest.seed,
                    k_min..=k_max,
                    restarts,
                    cluster_seed,
                )?;
                for (k, emb_mean, _, attr_mean, _) in &out.silhouettes {
                    println!(
                        "k={k}: mean silhouette embedding {emb_mean:.4}, attributes {attr_mean:.4}"
                    );
                }
                println!("best k on the embedding: {}", out.best_k_embedding);
                for f in &out.files {
                    println!("wrote {}", f.display());
                }
            }
            AnalyzeCommand::Compare {
                report_a,
                report_b,
                out,
            } => {
                let result = cmd_analyze_compare(&report_a, &report_b, out.as_deref())?;
                println!(
                    "n={} W={} p={:.3e} d={:.4}",
                    result.n_used, result.w_statistic, result.p_value, result.effect_size
                );
            }
        },
        Command::Gridsearch {
            config,
            space,
            folds,
        } => {
            let config = config.load()?;
            let (best, files) = cmd_gridsearch(&config, &space, folds)?;
            println!(
                "best candidate: {}",
                best.describe(&config.train_options(config.seeds[0]))
            );
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
        Command::Synth {
            out,
            basins,
            days,
            seed,
        } => {
            let files = cmd_synth(
                &out,
                SynthOptions {
                    n_basins: basins,
                    n_days: days,
                    seed,
                    ..SynthOptions::default()
                },
            )?;
            println!("wrote {} files under {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
