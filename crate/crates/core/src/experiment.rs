//! End-to-end experiment pipeline: data, pretraining, priors, adversarial
//! training, evaluation and artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use crate::advtrain::{train_adversarial, EvalSets, HistoryRow, Strategy, TrainHistory};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{ExperimentConfig, Preset};
use crate::data::{holdout_split, load_idx, make_imbalanced, synthetic_blobs, ImbalancedDataset, LabeledImageSet};
use crate::metrics::{confusion, render_table, ConfusionMatrix, MetricsReport};
use crate::nets::{build_networks, transfer_init, NetworkBundle};
use crate::rng::{self, streams};
use crate::slppl::{fit_class_priors, train_slppl, ClassPriors, SlpplHistory};
use crate::{Error, Result};

pub const METRICS_HEADER: &str = "seed,strategy,acsa,f_macro,g_macro,r_min,p_maj";

/// Training split, optional validation holdout and the full test set.
pub struct PreparedData {
    pub train: ImbalancedDataset,
    pub validation: Option<LabeledImageSet>,
    pub test: LabeledImageSet,
}

/// `name` or `name.gz` inside `dir`, whichever exists (plain preferred).
fn idx_file(dir: &Path, name: &str) -> PathBuf {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    if !plain.exists() && gz.exists() {
        gz
    } else {
        plain
    }
}

/// Load the preset's pool and test set.
pub fn load_sets(cfg: &ExperimentConfig, seed: u64) -> Result<(LabeledImageSet, LabeledImageSet)> {
    match cfg.data.preset {
        Preset::Synthetic => {
            let val = cfg.data.val_per_class;
            let pool_counts: Vec<usize> = cfg.counts().iter().map(|&n| n + val).collect();
            let pool = synthetic_blobs(&pool_counts, cfg.data.side, seed);
            // Independent draw for the test set.
            let test = synthetic_blobs(&vec![cfg.data.test_per_class; cfg.num_classes()], cfg.data.side, !seed);
            Ok((pool, test))
        }
        Preset::Mnist | Preset::Fmnist => {
            let dir = cfg.dataset_dir();
            let pool = load_idx(
                idx_file(&dir, "train-images-idx3-ubyte"),
                idx_file(&dir, "train-labels-idx1-ubyte"),
            )?;
            let test = load_idx(
                idx_file(&dir, "t10k-images-idx3-ubyte"),
                idx_file(&dir, "t10k-labels-idx1-ubyte"),
            )?;
            for (what, set) in [("training", &pool), ("test", &test)] {
                if set.num_classes() != cfg.num_classes() || set.image_shape() != (28, 28, 1) {
                    return Err(Error::Dataset(format!(
                        "{} {what} set has {} classes of {:?} images, expected {} classes of 28x28x1",
                        cfg.data.preset,
                        set.num_classes(),
                        set.image_shape(),
                        cfg.num_classes()
                    )));
                }
            }
            Ok((pool, test))
        }
    }
}

pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData> {
    let (pool, test) = load_sets(cfg, seed)?;
    let train = make_imbalanced(&pool, cfg.counts(), seed)?;
    info!(
        "{} training split: {} samples, counts {:?}, IR = {}",
        cfg.data.preset,
        train.len(),
        train.per_class_counts,
        train.imbalance_ratio()
    );
    let validation = match cfg.data.val_per_class {
        0 => None,
        k => Some(holdout_split(&pool, &train, k, seed)?),
    };
    Ok(PreparedData { train, validation, test })
}

/// Confusion matrix and metrics of the classifier on `set`, with majority and
/// minority classes taken from `training_counts`.
pub fn evaluate(
    bundle: &NetworkBundle<f32>,
    set: &LabeledImageSet,
    training_counts: &[usize],
) -> Result<(ConfusionMatrix, MetricsReport)> {
    let pred = bundle.predict(set.images(), 256)?;
    let cm = confusion(set.labels(), &pred, bundle.num_classes)?.with_class_order(training_counts)?;
    let report = MetricsReport::from_confusion(&cm)?;
    Ok((cm, report))
}

/// Binary PGM with one row of `per_class` generated tiles per class.
pub fn render_sample_grid(
    bundle: &NetworkBundle<f32>,
    priors: &ClassPriors,
    per_class: usize,
    seed: u64,
) -> Result<Vec<u8>> {
    let [h, w, c] = bundle.plan().input_shape;
    if c != 1 {
        return Err(Error::Shape(format!("sample grids need 1-channel images, got {c}")));
    }
    let classes = priors.num_classes();
    let q = priors.latent_dim();
    let mut rng = rng::stream(seed, streams::GRID);
    let (width, height) = (per_class * w, classes * h);
    let mut pixels = vec![0u8; width * height];
    for class in 0..classes {
        let mut z = vec![0.0f64; per_class * q];
        for row in z.chunks_mut(q) {
            priors.draw_into(class, &mut rng, row);
        }
        let images = bundle.generate(&lpgan_autodiff::Tensor::from_vec(&[per_class, q], z)?.cast())?;
        for (tile, img) in images.data().chunks(h * w).enumerate() {
            for (i, &v) in img.iter().enumerate() {
                let (y, x) = (class * h + i / w, tile * w + i % w);
                pixels[y * width + x] = (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn emit_sample_grid(
    bundle: &NetworkBundle<f32>,
    priors: &ClassPriors,
    per_class: usize,
    seed: u64,
    path: &Path,
) -> Result<()> {
    let bytes = render_sample_grid(bundle, priors, per_class, seed)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.run.out.join(format!("seed-{seed}"))
}

pub fn pretrained_path(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    seed_dir(cfg, seed).join("pretrained.nbnd")
}

pub fn strategy_dir(cfg: &ExperimentConfig, seed: u64, strategy: Strategy) -> PathBuf {
    seed_dir(cfg, seed).join(strategy.name())
}

/// SLPPL pretraining and prior fitting; writes `slppl.csv` and
/// `pretrained.nbnd` (networks plus priors) under the seed directory.
pub fn pretrain(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    seed: u64,
) -> Result<(NetworkBundle<f32>, ClassPriors, SlpplHistory)> {
    let dir = seed_dir(cfg, seed);
    create_dir(&dir)?;
    let bundle = build_networks::<f32>(&cfg.architecture(), cfg.num_classes(), seed)?;
    let (bundle, history) = train_slppl(&data.train, bundle, &cfg.slppl, seed)?;
    if let Some(last) = history.epochs.last() {
        info!(
            "seed {seed}: SLPPL done, L_rec {:.4} L_bce {:.4}",
            last.l_rec, last.l_bce
        );
    }
    let priors = fit_class_priors(&data.train, &bundle, cfg.prior.epsilon, cfg.prior.diagonal)?;
    write(&dir.join("slppl.csv"), history.to_csv())?;
    save_checkpoint(&pretrained_path(cfg, seed), &bundle, Some(&priors))?;
    Ok((bundle, priors, history))
}

/// Pretrained networks and priors, from `pretrained.nbnd` when present.
pub fn pretrained(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<(NetworkBundle<f32>, ClassPriors)> {
    let path = pretrained_path(cfg, seed);
    if path.exists() {
        if let (bundle, Some(priors)) = load_checkpoint(&path, &cfg.architecture(), seed)? {
            info!("seed {seed}: reusing {}", path.display());
            return Ok((bundle, priors));
        }
    }
    let (bundle, priors, _) = pretrain(cfg, data, seed)?;
    Ok((bundle, priors))
}

/// Result of one strategy on one seed.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub strategy: Strategy,
    pub report: MetricsReport,
    pub best_epoch: usize,
    pub history: TrainHistory,
    pub dir: PathBuf,
}

impl RunResult {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.seed, self.strategy, self.report.csv_row())
    }
}

/// Train one strategy from pretrained weights and write its artifacts:
/// `history.csv`, `best.nbnd`, `last.nbnd`, optional `epoch-N.nbnd`,
/// `grid.pgm`, `confusion.csv` and a one-row `metrics.csv`.
pub fn run_strategy(
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
    data: &PreparedData,
    pretrained: &NetworkBundle<f32>,
    priors: &ClassPriors,
) -> Result<RunResult> {
    let dir = strategy_dir(cfg, seed, strategy);
    create_dir(&dir)?;
    let bundle = transfer_init(pretrained)?;
    let every = cfg.run.checkpoint_every;
    let history_path = dir.join("history.csv");
    let mut partial = TrainHistory::default();
    let mut hook = |row: &HistoryRow, b: &NetworkBundle<f32>| -> Result<()> {
        info!(
            "seed {seed} {strategy} epoch {}: L_G {:.4} L_Dis {:.4} L_Q {:.4} gp {:.4} ACSA {:.4}",
            row.epoch, row.l_g, row.l_dis, row.l_q, row.gp, row.acsa
        );
        partial.rows.push(*row);
        write(&history_path, partial.to_csv())?;
        save_checkpoint(&dir.join("last.nbnd"), b, Some(priors))?;
        if every > 0 && row.epoch.is_multiple_of(every) {
            save_checkpoint(&dir.join(format!("epoch-{}.nbnd", row.epoch)), b, Some(priors))?;
        }
        Ok(())
    };
    let eval = EvalSets {
        test: &data.test,
        validation: data.validation.as_ref(),
    };
    let outcome = train_adversarial(strategy, &data.train, priors, bundle, &cfg.adversarial, seed, eval, &mut hook)?;
    save_checkpoint(&dir.join("best.nbnd"), &outcome.best, Some(priors))?;
    let (cm, report) = evaluate(&outcome.best, &data.test, &data.train.per_class_counts)?;
    emit_sample_grid(&outcome.best, priors, cfg.run.grid_rows, seed, &dir.join("grid.pgm"))?;
    let cm_csv: String = cm
        .rows()
        .iter()
        .map(|r| r.iter().map(u64::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    write(&dir.join("confusion.csv"), cm_csv)?;
    let result = RunResult {
        seed,
        strategy,
        report,
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        dir: dir.clone(),
    };
    write(&dir.join("metrics.csv"), format!("{METRICS_HEADER}\n{}\n", result.csv_row()))?;
    info!("seed {seed} {strategy}: best epoch {}: {report}", result.best_epoch);
    Ok(result)
}

/// All runs of an experiment plus the rendered summary.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub runs: Vec<RunResult>,
    pub table: String,
}

pub fn metrics_csv(runs: &[RunResult]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in runs {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Per-run rows, then mean, min and max per strategy over seeds.
pub fn summary_table(runs: &[RunResult]) -> String {
    let mut rows = Vec::new();
    for r in runs {
        rows.push((format!("{} seed {}", r.strategy, r.seed), r.report));
    }
    let mut strategies: Vec<Strategy> = Vec::new();
    for r in runs {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy);
        }
    }
    for s in strategies {
        let reports: Vec<MetricsReport> = runs.iter().filter(|r| r.strategy == s).map(|r| r.report).collect();
        if let Some([mean, min, max]) = MetricsReport::aggregate(&reports) {
            rows.push((format!("{s} mean (n={})", reports.len()), mean));
            rows.push((format!("{s} min"), min));
            rows.push((format!("{s} max"), max));
        }
    }
    render_table(&rows)
}

/// Run `strategies` for every configured seed, sharing one pretraining per
/// seed. Writes `config.snapshot`, `metrics.csv` and `summary.txt` under
/// `run.out`.
pub fn run_experiment(cfg: &ExperimentConfig, strategies: &[Strategy]) -> Result<ExperimentSummary> {
    create_dir(&cfg.run.out)?;
    write(&cfg.run.out.join("config.snapshot"), cfg.to_toml())?;
    let mut runs = Vec::new();
    for &seed in &cfg.run.seeds {
        let data = prepare_data(cfg, seed)?;
        let (bundle, priors, _) = pretrain(cfg, &data, seed)?;
        for &strategy in strategies {
            runs.push(run_strategy(cfg, strategy, seed, &data, &bundle, &priors)?);
            write(&cfg.run.out.join("metrics.csv"), metrics_csv(&runs))?;
        }
    }
    let table = summary_table(&runs);
    let mut summary = String::new();
    let _ = writeln!(summary, "{} (IR {})", cfg.data.preset, crate::data::imbalance_ratio(cfg.counts()));
    summary.push_str(&table);
    write(&cfg.run.out.join("summary.txt"), &summary)?;
    Ok(ExperimentSummary { runs, table: summary })
}

/// Parse a `metrics.csv` written by [`metrics_csv`].
pub fn read_metrics_csv(path: &Path) -> Result<Vec<(u64, Strategy, MetricsReport)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Dataset(format!("{}: unexpected header", path.display())));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Dataset(format!("{}: malformed row {line:?}", path.display()));
            if f.len() != 7 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse()?,
                MetricsReport {
                    acsa: num(2)?,
                    f_macro: num(3)?,
                    g_macro: num(4)?,
                    r_min: num(5)?,
                    p_maj: num(6)?,
                },
            ))
        })
        .collect()
}
