use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use lpgan_core::advtrain::Strategy;
use lpgan_core::checkpoint::load_checkpoint;
use lpgan_core::config::{load_config, ExperimentConfig};
use lpgan_core::data::write_idx;
use lpgan_core::experiment::{
    emit_sample_grid, evaluate, prepare_data, pretrain, pretrained, read_metrics_csv, run_experiment,
    run_strategy, seed_dir, strategy_dir, summary_table, RunResult, METRICS_HEADER,
};
use lpgan_core::metrics::render_table;
use lpgan_core::{Error, Result};

/// Imbalanced image classification with latent-prior GAN oversampling.
///
/// Every command reads a TOML config (sections [data], [model], [slppl],
/// [prior], [adversarial], [run]); unknown keys are rejected. Defaults:
/// data.root = "data", data.val_per_class = 100, model.dropout = 0.3,
/// model.leaky_slope = 0.2, slppl.epochs = 20, slppl.batch_size = 64,
/// slppl.lr = 2e-4, prior.epsilon = 1e-4, adversarial.epochs = 20,
/// adversarial.lr_{dis,gen,clf} = 2e-4, adversarial.beta1 = 0.5,
/// adversarial.beta2 = 0.999, adversarial.gp_gamma = 10,
/// adversarial.ratio = [1, 1, 1], adversarial.functional = "vanilla",
/// adversarial.g_cls_term = "ce", run.seeds = [1], run.out = "runs",
/// run.grid_rows = 8. Per-class counts and latent size follow the preset.
///
/// Exit codes: 2 invalid config, 3 missing input file, 4 training
/// divergence, 1 any other failure.
#[derive(Parser)]
#[command(name = "lpgan", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run only this seed instead of run.seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory, overriding run.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the imbalanced split and validation holdout, report class
    /// counts and imbalance ratio, and write them as IDX files.
    PrepareData {
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain encoder and decoder, fit the class priors and save them.
    TrainSlppl {
        #[command(flatten)]
        common: Common,
    },
    /// Train one strategy from the pretrained weights (pretraining first if needed).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Evaluate a checkpoint on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        /// Defaults to <out>/seed-<seed>/<strategy>/best.nbnd.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a PGM grid of generated samples, one row per class.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Tiles per class (defaults to run.grid_rows).
        #[arg(long)]
        rows: Option<usize>,
        /// Output file (defaults to grid.pgm next to the checkpoint).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pretrain once per seed, then run ADSO, AMO and DSO and summarise.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = load_config(path)?;
    if let Some(seed) = common.seed {
        cfg.run.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        cfg.run.out = out.clone();
    }
    std::fs::create_dir_all(&cfg.run.out).map_err(|e| io_err(&cfg.run.out, e))?;
    let snapshot = cfg.run.out.join("config.snapshot");
    std::fs::write(&snapshot, cfg.to_toml()).map_err(|e| io_err(&snapshot, e))?;
    Ok(cfg)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Merge `runs` into `<out>/metrics.csv`, replacing rows with the same seed and strategy.
fn merge_metrics(cfg: &ExperimentConfig, runs: &[RunResult]) -> Result<()> {
    let path = cfg.run.out.join("metrics.csv");
    let mut rows: Vec<String> = match read_metrics_csv(&path) {
        Ok(existing) => existing
            .into_iter()
            .filter(|(seed, s, _)| !runs.iter().any(|r| r.seed == *seed && r.strategy == *s))
            .map(|(seed, s, m)| format!("{seed},{s},{}", m.csv_row()))
            .collect(),
        Err(_) => Vec::new(),
    };
    rows.extend(runs.iter().map(RunResult::csv_row));
    let text = format!("{METRICS_HEADER}\n{}\n", rows.join("\n"));
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn checkpoint_path(cfg: &ExperimentConfig, strategy: Option<Strategy>, explicit: Option<PathBuf>) -> (u64, PathBuf) {
    let seed = cfg.run.seeds[0];
    let path = explicit
        .unwrap_or_else(|| strategy_dir(cfg, seed, strategy.unwrap_or(cfg.run.strategy)).join("best.nbnd"));
    (seed, path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData { common } => {
            let cfg = load(&common)?;
            for &seed in &cfg.run.seeds {
                let data = prepare_data(&cfg, seed)?;
                let dir = seed_dir(&cfg, seed).join("data");
                std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                write_idx(&data.train.base, &dir.join("train-images-idx3-ubyte"), &dir.join("train-labels-idx1-ubyte"))?;
                if let Some(v) = &data.validation {
                    write_idx(v, &dir.join("val-images-idx3-ubyte"), &dir.join("val-labels-idx1-ubyte"))?;
                }
                println!(
                    "seed {seed}: {} training samples, counts {:?}, IR = {}, test {}",
                    data.train.len(),
                    data.train.per_class_counts,
                    data.train.imbalance_ratio(),
                    data.test.len()
                );
            }
        }
        Command::TrainSlppl { common } => {
            let cfg = load(&common)?;
            for &seed in &cfg.run.seeds {
                let data = prepare_data(&cfg, seed)?;
                let (_, _, history) = pretrain(&cfg, &data, seed)?;
                if let Some(last) = history.epochs.last() {
                    println!(
                        "seed {seed}: L_rec {:.4}  L_bce {:.4}  L_SLPPL {:.4}",
                        last.l_rec, last.l_bce, last.l_slppl
                    );
                }
            }
        }
        Command::Train { common, strategy } => {
            let cfg = load(&common)?;
            let strategy = strategy.unwrap_or(cfg.run.strategy);
            let mut runs = Vec::new();
            for &seed in &cfg.run.seeds {
                let data = prepare_data(&cfg, seed)?;
                let (bundle, priors) = pretrained(&cfg, &data, seed)?;
                runs.push(run_strategy(&cfg, strategy, seed, &data, &bundle, &priors)?);
            }
            merge_metrics(&cfg, &runs)?;
            print!("{}", summary_table(&runs));
        }
        Command::Eval {
            common,
            strategy,
            checkpoint,
        } => {
            let cfg = load(&common)?;
            let (seed, path) = checkpoint_path(&cfg, strategy, checkpoint);
            let (bundle, _) = load_checkpoint(&path, &cfg.architecture(), seed)?;
            let data = prepare_data(&cfg, seed)?;
            let (cm, report) = evaluate(&bundle, &data.test, &data.train.per_class_counts)?;
            println!("confusion (rows = true class):");
            for row in cm.rows() {
                println!("  {}", row.iter().map(|v| format!("{v:>5}")).collect::<String>());
            }
            print!("{}", render_table(&[(path.display().to_string(), report)]));
        }
        Command::Grid {
            common,
            strategy,
            checkpoint,
            rows,
            output,
        } => {
            let cfg = load(&common)?;
            let (seed, path) = checkpoint_path(&cfg, strategy, checkpoint);
            let (bundle, priors) = load_checkpoint(&path, &cfg.architecture(), seed)?;
            let priors = priors.ok_or_else(|| Error::Checkpoint(format!("{} holds no priors", path.display())))?;
            let output = output.unwrap_or_else(|| path.with_file_name("grid.pgm"));
            emit_sample_grid(&bundle, &priors, rows.unwrap_or(cfg.run.grid_rows), seed, &output)?;
            println!("wrote {}", output.display());
        }
        Command::RunAll { common } => {
            let cfg = load(&common)?;
            let summary = run_experiment(&cfg, &Strategy::ALL)?;
            info!("metrics written to {}", cfg.run.out.join("metrics.csv").display());
            print!("{}", summary.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
