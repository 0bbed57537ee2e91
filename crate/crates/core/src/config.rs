//! Run configuration: one JSON file, every key optional.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::segmentation::{DEFAULT_STRIDE, DEFAULT_THRESHOLD, DEFAULT_WINDOW};
use crate::training::{default_config, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub window: usize,
    /// Taken from the data when absent.
    pub input_dim: Option<usize>,
    /// Taken from the data when absent.
    pub classes: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            layers: 12,
            heads: 8,
            d_model: 128,
            d_ff: 512,
            window: DEFAULT_WINDOW,
            input_dim: None,
            classes: None,
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, input_dim: usize, classes: usize) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            window: self.window,
            input_dim: self.input_dim.unwrap_or(input_dim),
            classes: self.classes.unwrap_or(classes),
        }
    }
}

/// Training hyperparameters. The seed is not configurable here; it is
/// derived from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub early_stop_patience: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let d = default_config();
        TrainingSection {
            batch_size: d.batch_size,
            lr0: d.lr0,
            lr_decay_every: d.lr_decay_every,
            lr_decay_factor: d.lr_decay_factor,
            max_epochs: d.max_epochs,
            weight_decay: d.weight_decay,
            beta1: d.beta1,
            beta2: d.beta2,
            adam_eps: d.adam_eps,
            early_stop_patience: d.early_stop_patience,
        }
    }
}

impl TrainingSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            lr0: self.lr0,
            lr_decay_every: self.lr_decay_every,
            lr_decay_factor: self.lr_decay_factor,
            max_epochs: self.max_epochs,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            early_stop_patience: self.early_stop_patience,
            seed,
        }
    }
}

/// Where the data comes from. With no manifest the synthetic generator is
/// used with the parameters below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Isolated-sign manifest (`[{"file": ..., "label": ...}]`).
    pub manifest: Option<PathBuf>,
    /// Continuous-stream manifest (`[{"file": ..., "labels": [...]}]`).
    pub streams_manifest: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub noise: f64,
    /// Fraction of each class used for training + validation; the rest is
    /// the test set.
    pub train_fraction: f64,
    /// Fraction of the training partition held out for validation.
    pub val_fraction: f64,
    pub streams: usize,
    pub signs_per_stream: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            manifest: None,
            streams_manifest: None,
            classes: 10,
            per_class: 20,
            dim: 12,
            noise: 0.05,
            train_fraction: 0.8,
            val_fraction: 0.1,
            streams: 20,
            signs_per_stream: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationSection {
    pub window: usize,
    pub stride: usize,
    pub threshold: f64,
}

impl Default for SegmentationSection {
    fn default() -> Self {
        SegmentationSection {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSection {
    pub layers: Vec<usize>,
    pub heads: Vec<usize>,
}

impl Default for AblationSection {
    fn default() -> Self {
        AblationSection {
            layers: vec![1, 2, 3, 4, 8, 12],
            heads: vec![4, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub training: TrainingSection,
    pub data: DataSection,
    pub segmentation: SegmentationSection,
    pub ablation: AblationSection,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelSection::default(),
            training: TrainingSection::default(),
            data: DataSection::default(),
            segmentation: SegmentationSection::default(),
            ablation: AblationSection::default(),
            output_dir: PathBuf::from("out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        // Data-dependent sizes are placeholders here; they are checked again
        // once the data is known.
        self.model.resolve(1, 2).validate()?;
        self.training.to_train_config(self.seed).validate()?;
        let d = &self.data;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::Config(format!("data.train_fraction must be in (0, 1), got {}", d.train_fraction)));
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return Err(Error::Config(format!("data.val_fraction must be in (0, 1), got {}", d.val_fraction)));
        }
        if !(d.noise >= 0.0) {
            return Err(Error::Config(format!("data.noise must be non-negative, got {}", d.noise)));
        }
        let s = &self.segmentation;
        if s.stride < 1 {
            return Err(Error::Config("segmentation.stride must be at least 1".into()));
        }
        if !(s.threshold > 0.0 && s.threshold < 1.0) {
            return Err(Error::Config(format!("segmentation.threshold must be in (0, 1), got {}", s.threshold)));
        }
        if s.window != self.model.window {
            return Err(Error::Config(format!(
                "segmentation.window {} must equal model.window {}",
                s.window, self.model.window
            )));
        }
        if self.ablation.layers.is_empty() || self.ablation.heads.is_empty() {
            return Err(Error::Config("ablation grid must not be empty".into()));
        }
        Ok(())
    }
}

/// Parses a JSON run configuration, filling every missing key with its
/// default and rejecting unknown keys.
pub fn load_config(bytes: &[u8]) -> Result<RunConfig> {
    let cfg: RunConfig = serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}
