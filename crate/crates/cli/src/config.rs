//! Experiment configuration: TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sccnn::nn::{ModelConfig, Variant};
use serde::{Deserialize, Serialize};

pub const DEFAULT_MIRROR: &str = "https://storage.googleapis.com/cvdf-datasets/mnist/";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Variant trained by `train`.
    pub variant: Variant,
    /// Variants compared by `ablation`, in output order.
    pub variants: Vec<Variant>,
    pub kernel: usize,
    pub stride: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    /// Embedding width shared by all three face dimensions.
    pub embed: usize,
    pub conv_channels: usize,
    pub hidden: usize,
    pub seeds: Vec<u64>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub output: PathBuf,
    pub mirror_url: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let data = PathBuf::from("data/mnist");
        Self {
            variant: Variant::ScconvConv1dFc,
            variants: Variant::ALL.to_vec(),
            kernel: 4,
            stride: 4,
            epochs: 300,
            batch_size: 8,
            lr: 1e-4,
            dropout: 0.10,
            embed: 32,
            conv_channels: 16,
            hidden: 32,
            seeds: vec![1, 2, 3, 4, 5],
            train_per_class: 100,
            test_per_class: 100,
            train_images: data.join("train-images-idx3-ubyte"),
            train_labels: data.join("train-labels-idx1-ubyte"),
            test_images: data.join("t10k-images-idx3-ubyte"),
            test_labels: data.join("t10k-labels-idx1-ubyte"),
            output: PathBuf::from("results"),
            mirror_url: DEFAULT_MIRROR.to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(config)
    }

    /// Points all four data paths at the standard file names inside `dir`.
    pub fn set_data_dir(&mut self, dir: &Path) {
        self.train_images = dir.join("train-images-idx3-ubyte");
        self.train_labels = dir.join("train-labels-idx1-ubyte");
        self.test_images = dir.join("t10k-images-idx3-ubyte");
        self.test_labels = dir.join("t10k-labels-idx1-ubyte");
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kernel", self.kernel),
            ("stride", self.stride),
            ("batch_size", self.batch_size),
            ("embed", self.embed),
            ("conv_channels", self.conv_channels),
            ("hidden", self.hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if self.kernel > 28 {
            bail!("kernel {} exceeds the 28x28 image", self.kernel);
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bail!("lr must be a positive number, got {}", self.lr);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!("dropout must lie in [0, 1), got {}", self.dropout);
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if self.variants.is_empty() {
            bail!("at least one variant is required");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_features: self.kernel * self.kernel,
            embed: [self.embed; 3],
            conv_channels: self.conv_channels,
            hidden: self.hidden,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }

    /// True when two configs describe the same experiment (paths aside).
    pub fn same_protocol(&self, other: &Self) -> bool {
        let strip = |c: &Self| Self {
            variant: Variant::ScconvConv1dFc,
            variants: Vec::new(),
            seeds: Vec::new(),
            train_images: PathBuf::new(),
            train_labels: PathBuf::new(),
            test_images: PathBuf::new(),
            test_labels: PathBuf::new(),
            output: PathBuf::new(),
            mirror_url: String::new(),
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}
