//! Run configuration: a JSON key tree in which every key is optional.
//!
//! ```json
//! {
//!   "data":       { "num_classes": 10, "n_max": 500, "imbalance_ratio": 100, ... },
//!   "model":      { "hidden_dims": [256, 256], "norm_variant": "dar_bn", "precision": "f32" },
//!   "train":      { "epochs": 60, "defer_epoch": 40, "learning_rate": 0.1, ... },
//!   "open":       { "delta": 0.333, "mode": "longtail", "batch_size": 128, "noise": { "kind": "pure" } },
//!   "experiment": { "seeds": [0, 1, 2, 3, 4], "sigmas": [0.0, 0.1], "probe_batches": 100 }
//! }
//! ```
//!
//! Unknown keys are rejected at every level. [`RunConfig::resolved`] fills in
//! derived defaults so the written-out config reproduces a run on its own.

use std::path::Path;

use anyhow::{bail, Context, Result};
use noisebalance::data::{LongTailSpec, SyntheticSpec};
use noisebalance::model::ModelConfig;
use noisebalance::norm::NormVariant;
use noisebalance::optim::{LrStep, OptimizerConfig};
use noisebalance::sampler::OpenConfig;
use noisebalance::train::TrainConfig;
use noisebalance::Precision;
use serde::{Deserialize, Serialize};

/// Gap between `defer_epoch` and `epochs` when the former is not given.
pub const DEFAULT_OPEN_EPOCHS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub open: OpenConfig,
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub prototype_seed: u64,
    pub within_class_std: f64,
    pub prototype_contrast: Option<f64>,
    pub shift_range: usize,
    pub test_per_class: usize,
    pub n_max: usize,
    pub imbalance_ratio: f64,
    /// Seed for sampling images and for the long-tail subset.
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticSpec::default();
        Self {
            num_classes: s.num_classes,
            channels: s.channels,
            height: s.height,
            width: s.width,
            prototype_seed: s.prototype_seed,
            within_class_std: s.within_class_std,
            prototype_contrast: s.prototype_contrast,
            shift_range: s.shift_range,
            test_per_class: s.test_per_class,
            n_max: 500,
            imbalance_ratio: 100.0,
            seed: 0,
        }
    }
}

impl DataSection {
    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_classes: self.num_classes,
            channels: self.channels,
            height: self.height,
            width: self.width,
            prototype_seed: self.prototype_seed,
            within_class_std: self.within_class_std,
            prototype_contrast: self.prototype_contrast,
            shift_range: self.shift_range,
            test_per_class: self.test_per_class,
        }
    }

    pub fn longtail(&self) -> LongTailSpec {
        LongTailSpec { num_classes: self.num_classes, n_max: self.n_max, imbalance_ratio: self.imbalance_ratio }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden_dims: Vec<usize>,
    pub norm_variant: NormVariant,
    pub precision: Precision,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { hidden_dims: vec![256, 256], norm_variant: NormVariant::DarBn, precision: Precision::F32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    /// First epoch of balanced loading with noise; `epochs − 20` if absent.
    pub defer_epoch: Option<usize>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: Vec<LrStep>,
    pub augment_flip: bool,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        Self {
            epochs: 60,
            defer_epoch: None,
            learning_rate: opt.learning_rate,
            momentum: opt.momentum,
            weight_decay: opt.weight_decay,
            lr_schedule: opt.lr_schedule,
            augment_flip: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SigmaUnits {
    /// Sigmas are pixel-intensity standard deviations on the [0, 1] scale.
    #[default]
    Absolute,
    /// Sigmas are multiples of the training set's pixel standard deviation.
    DatasetStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Training seeds for multi-seed commands.
    pub seeds: Vec<u64>,
    pub sigmas: Vec<f64>,
    pub sigma_units: SigmaUnits,
    pub probe_batches: usize,
    pub probe_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            sigmas: vec![0.0, 0.05, 0.1, 0.2, 0.4, 0.8],
            sigma_units: SigmaUnits::Absolute,
            probe_batches: 100,
            probe_seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Defaults, or the file at `path` when given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    /// Copy with derived defaults written out.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.train.defer_epoch = Some(self.defer_epoch());
        c
    }

    pub fn defer_epoch(&self) -> usize {
        self.train.defer_epoch.unwrap_or_else(|| self.train.epochs.saturating_sub(DEFAULT_OPEN_EPOCHS))
    }

    pub fn model_config(&self) -> ModelConfig {
        let s = self.data.synthetic();
        ModelConfig {
            input_dim: s.shape().pixels(),
            hidden_dims: self.model.hidden_dims.clone(),
            num_classes: s.num_classes,
            norm_variant: self.model.norm_variant,
            precision: self.model.precision,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            defer_epoch: self.defer_epoch(),
            optimizer: OptimizerConfig {
                learning_rate: self.train.learning_rate,
                momentum: self.train.momentum,
                weight_decay: self.train.weight_decay,
                lr_schedule: self.train.lr_schedule.clone(),
            },
            open: self.open.clone(),
            augment_flip: self.train.augment_flip,
            master_seed: self.train.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.synthetic().validate()?;
        self.data.longtail().validate()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.experiment.seeds.is_empty() {
            bail!("experiment.seeds must not be empty");
        }
        if self.experiment.sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            bail!("experiment.sigmas must be finite and nonnegative");
        }
        if self.experiment.probe_batches == 0 {
            bail!("experiment.probe_batches must be positive");
        }
        Ok(())
    }

    /// Serialized with a trailing newline.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_resolve() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!(c.defer_epoch(), 40);
        assert_eq!(c.resolved().train.defer_epoch, Some(40));
        assert_eq!(c.train_config(), TrainConfig::default());
    }

    #[test]
    fn empty_object_is_default_and_round_trips() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        let r = c.resolved();
        let back: RunConfig = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in [
            r#"{"bogus": 1}"#,
            r#"{"train": {"epoch": 3}}"#,
            r#"{"data": {"classes": 3}}"#,
            r#"{"open": {"detla": 0.1}}"#,
            r#"{"experiment": {"seed": 1}}"#,
            r#"{"model": {"norm_variant": "group_norm"}}"#,
        ] {
            assert!(serde_json::from_str::<RunConfig>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn partial_override() {
        let c: RunConfig = serde_json::from_str(
            r#"{"data": {"num_classes": 4, "height": 8}, "train": {"epochs": 10}, "open": {"noise": {"kind": "additive", "sigma": 0.2}}}"#,
        )
        .unwrap();
        assert_eq!(c.data.num_classes, 4);
        assert_eq!(c.data.width, 16);
        assert_eq!(c.defer_epoch(), 0);
        assert_eq!(c.model_config().input_dim, 8 * 16);
        c.validate().unwrap();
        let bad: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 5, "defer_epoch": 6}}"#).unwrap();
        assert!(bad.validate().is_err());
    }
}
