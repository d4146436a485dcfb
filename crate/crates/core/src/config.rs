//! Strict TOML experiment configuration.
//!
//! Sections: `[data]`, `[model]`, `[slppl]`, `[prior]`, `[adversarial]`,
//! `[run]`. Unknown keys are rejected. Preset-dependent values left out of
//! the file are filled in on load, so a written snapshot re-parses to an
//! equal configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advtrain::{AdvConfig, Strategy};
use crate::data::TABLE_MNIST_COUNTS;
use crate::nets::{ArchitectureSpec, ConvSpec};
use crate::slppl::SlpplConfig;
use crate::{Error, Result};

/// Environment variable that overrides `data.root`.
pub const DATA_ROOT_ENV: &str = "DATA_ROOT";

/// Fashion-MNIST training counts, in class order.
pub const TABLE_FMNIST_COUNTS: [usize; 10] = TABLE_MNIST_COUNTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Mnist,
    Fmnist,
    Synthetic,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Mnist => "mnist",
            Preset::Fmnist => "fmnist",
            Preset::Synthetic => "synthetic",
        }
    }

    pub fn default_counts(self) -> Vec<usize> {
        match self {
            Preset::Mnist => TABLE_MNIST_COUNTS.to_vec(),
            Preset::Fmnist => TABLE_FMNIST_COUNTS.to_vec(),
            Preset::Synthetic => vec![200, 20],
        }
    }

    pub fn architecture(self) -> ArchitectureSpec {
        match self {
            Preset::Mnist | Preset::Fmnist => ArchitectureSpec::mnist(),
            Preset::Synthetic => ArchitectureSpec::synthetic(),
        }
    }

    /// Fixed class count, if the preset has one.
    pub fn classes(self) -> Option<usize> {
        match self {
            Preset::Mnist | Preset::Fmnist => Some(10),
            Preset::Synthetic => None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub preset: Preset,
    #[serde(default = "default_root")]
    pub root: PathBuf,
    /// Training samples per class; defaults to the preset's split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_counts: Option<Vec<usize>>,
    /// Balanced validation samples per class, drawn from pool samples unused
    /// for training. 0 disables validation-based model selection.
    #[serde(default = "default_val")]
    pub val_per_class: usize,
    /// Synthetic preset only: test samples per class and image side.
    #[serde(default = "default_test")]
    pub test_per_class: usize,
    #[serde(default = "default_side")]
    pub side: usize,
}

fn default_root() -> PathBuf {
    PathBuf::from("data")
}
fn default_val() -> usize {
    100
}
fn default_test() -> usize {
    200
}
fn default_side() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_layers: Option<Vec<ConvSpec>>,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
}

fn default_slope() -> f64 {
    0.2
}
fn default_dropout() -> f64 {
    0.3
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            encoder_layers: None,
            leaky_slope: default_slope(),
            dropout: default_dropout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub epsilon: f64,
    pub diagonal: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            diagonal: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Generated tiles per class in the sample grid.
    #[serde(default = "default_grid_rows")]
    pub grid_rows: usize,
    /// Also checkpoint every this many epochs; 0 keeps only best and last.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}
fn default_strategy() -> Strategy {
    Strategy::Adso
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_grid_rows() -> usize {
    8
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: default_out(),
            strategy: default_strategy(),
            seeds: default_seeds(),
            grid_rows: default_grid_rows(),
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub slppl: SlpplConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub adversarial: AdvConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    /// Defaults for `preset` with every preset-dependent value filled in.
    pub fn for_preset(preset: Preset) -> Self {
        let mut cfg = Self {
            data: DataConfig {
                preset,
                root: default_root(),
                per_class_counts: None,
                val_per_class: default_val(),
                test_per_class: default_test(),
                side: default_side(),
            },
            model: ModelConfig::default(),
            slppl: SlpplConfig::default(),
            prior: PriorConfig::default(),
            adversarial: AdvConfig::default(),
            run: RunConfig::default(),
        };
        cfg.resolve();
        cfg
    }

    /// Parse TOML text, fill preset defaults and validate. Does not consult
    /// the environment.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve(&mut self) {
        let preset = self.data.preset;
        if self.data.per_class_counts.is_none() {
            self.data.per_class_counts = Some(preset.default_counts());
        }
        let arch = preset.architecture();
        self.model.latent_dim.get_or_insert(arch.latent_dim);
        self.model.encoder_layers.get_or_insert(arch.encoder_layers);
    }

    pub fn counts(&self) -> &[usize] {
        self.data.per_class_counts.as_deref().unwrap_or_default()
    }

    pub fn num_classes(&self) -> usize {
        self.counts().len()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self.data.preset {
            Preset::Synthetic => [self.data.side, self.data.side, 1],
            _ => [28, 28, 1],
        }
    }

    pub fn architecture(&self) -> ArchitectureSpec {
        let base = self.data.preset.architecture();
        let mut arch = ArchitectureSpec::mirrored(
            self.input_shape(),
            self.model.latent_dim.unwrap_or(base.latent_dim),
            self.model.encoder_layers.clone().unwrap_or(base.encoder_layers),
        );
        arch.leaky_slope = self.model.leaky_slope;
        arch.classifier_dropout_rate = self.model.dropout;
        arch
    }

    pub fn validate(&self) -> Result<()> {
        let counts = self.counts();
        if let Some(c) = self.data.preset.classes() {
            if counts.len() != c {
                return Err(Error::Config(format!(
                    "data.per_class_counts has {} entries but preset {} has {c} classes",
                    counts.len(),
                    self.data.preset
                )));
            }
        }
        if counts.len() < 2 {
            return Err(Error::Config("data.per_class_counts needs at least two classes".into()));
        }
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("data.per_class_counts: class {c} has no samples")));
        }
        if self.model.latent_dim == Some(0) {
            return Err(Error::Config("model.latent_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!("model.dropout must lie in [0, 1), got {}", self.model.dropout)));
        }
        if self.data.preset == Preset::Synthetic && (self.data.side < 4 || self.data.test_per_class == 0) {
            return Err(Error::Config("synthetic data needs side >= 4 and test_per_class >= 1".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must list at least one seed".into()));
        }
        if self.slppl.batch_size == 0 {
            return Err(Error::Config("slppl.batch_size must be at least 1".into()));
        }
        if self.prior.epsilon <= 0.0 {
            return Err(Error::Config(format!("prior.epsilon must be positive, got {}", self.prior.epsilon)));
        }
        self.adversarial.validate()?;
        self.architecture().plan().map_err(|e| Error::Config(format!("model: {e}")))?;
        Ok(())
    }

    /// Directory holding the preset's IDX files.
    pub fn dataset_dir(&self) -> PathBuf {
        self.data.root.join(self.data.preset.name())
    }
}

/// Read `path`, then apply the `DATA_ROOT` override.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Config(format!("{}: no such config file", path.display())),
        _ => Error::io(path, e),
    })?;
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    if let Some(root) = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()) {
        cfg.data.root = PathBuf::from(root);
    }
    Ok(cfg)
}
