//! Training loop with deferred re-balancing, plus evaluation, the
//! per-class gradient probe, multi-seed runs and checkpoints.
//!
//! Epochs `[0, defer_epoch)` are plain empirical risk minimization over
//! shuffled passes of the imbalanced data. From `defer_epoch` on, batches
//! come from the class-balanced loader and go through noise replacement,
//! with the noise mask routed to every normalization layer.

mod checkpoint;
mod eval;
mod probe;
mod runs;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{channel_stats, Dataset};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::layers::softmax_cross_entropy;
use crate::model::{Mlp, ModelConfig};
use crate::norm::{Mode, NoiseMask};
use crate::optim::{sgd_step, OptimizerConfig};
use crate::rng;
use crate::sampler::{apply_open, gather, random_hflip, BalancedLoader, Batch, OpenConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use eval::{class_groups, evaluate, EvalReport, NUM_GROUPS};
pub use probe::{grad_probe, ClassGradStats, GradProbeReport};
pub use runs::{additive_noise_sweep, dataset_std, run_experiment, run_seeds, Metrics, RunOutcome, SweepRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub defer_epoch: usize,
    pub optimizer: OptimizerConfig,
    pub open: OpenConfig,
    /// Random horizontal flips of natural images.
    pub augment_flip: bool,
    pub master_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            defer_epoch: 40,
            optimizer: OptimizerConfig::default(),
            open: OpenConfig::default(),
            augment_flip: true,
            master_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.defer_epoch > self.epochs {
            return Err(Error::invalid("defer_epoch must not exceed epochs"));
        }
        self.optimizer.validate()?;
        self.open.validate()
    }

    /// Short label for the training regime.
    pub fn variant_label(&self) -> &'static str {
        if self.defer_epoch >= self.epochs {
            "erm"
        } else if self.open.delta == 0.0 && self.open.mode == crate::sampler::OpenMode::Longtail {
            "oversampling"
        } else {
            "open"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub noise_fraction: f64,
    pub batches: usize,
}

fn to_scalar<T: Scalar>(t: &Tensor<f32>) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&v| T::from_f32(v)).collect()).expect("same layout")
}

/// One SGD step on `batch`; returns the batch loss.
fn step<T: Scalar>(
    model: &mut Mlp<T>,
    batch: &Batch,
    opt: &OptimizerConfig,
    epoch: usize,
    index: usize,
) -> Result<f64> {
    model.zero_grad();
    let x = to_scalar::<T>(&batch.images);
    let logits = model.forward(&x, &batch.noise_mask, Mode::Train)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, batch: index, lr: opt.lr_at(epoch) });
    }
    model.backward(&dlogits)?;
    sgd_step(model.params_mut(), opt, epoch);
    Ok(loss)
}

/// Trains a freshly initialised model on `data`.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    data: &Dataset,
    exec: Exec,
) -> Result<(Mlp<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if model_cfg.input_dim != data.shape().pixels() || model_cfg.num_classes != data.num_classes() {
        return Err(Error::invalid(format!(
            "model expects {} inputs / {} classes, data has {} / {}",
            model_cfg.input_dim,
            model_cfg.num_classes,
            data.shape().pixels(),
            data.num_classes()
        )));
    }
    let mut model = Mlp::<T>::new(model_cfg.clone(), cfg.master_seed)?.with_exec(exec);
    let stats = channel_stats(data)?;
    let bs = cfg.open.batch_size;
    let seed = cfg.master_seed;
    let mut shuffle_rng = rng::stream(seed, rng::SHUFFLE);
    let mut balanced_rng = rng::stream(seed, rng::BALANCED);
    let mut augment_rng = rng::stream(seed, rng::AUGMENT);
    let mut noise_rng = rng::stream(seed, rng::NOISE_IMAGES);
    let loader = if cfg.defer_epoch < cfg.epochs { Some(BalancedLoader::new(data)?) } else { None };

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut loss_sum = 0.0;
        let mut slots = 0usize;
        let mut noise = 0usize;
        let mut batches = 0usize;
        if let (true, Some(loader)) = (epoch >= cfg.defer_epoch, &loader) {
            for b in 0..loader.epoch_len(bs) {
                let (mut images, labels) = loader.sample(bs, &mut balanced_rng);
                if cfg.augment_flip {
                    random_hflip(&mut images, &mut augment_rng);
                }
                let batch = apply_open(images, labels, data, &stats, &cfg.open, &mut noise_rng)?;
                noise += batch.noise_mask.noise_count();
                slots += batch.len();
                loss_sum += step(&mut model, &batch, &cfg.optimizer, epoch, b)?;
                batches += 1;
            }
        } else {
            order.shuffle(&mut shuffle_rng);
            for (b, chunk) in order.chunks(bs).enumerate() {
                if chunk.len() < 2 {
                    continue;
                }
                let (mut images, labels) = gather(data, chunk);
                if cfg.augment_flip {
                    random_hflip(&mut images, &mut augment_rng);
                }
                let batch = Batch { noise_mask: NoiseMask::all_natural(labels.len()), images, labels };
                slots += batch.len();
                loss_sum += step(&mut model, &batch, &cfg.optimizer, epoch, b)?;
                batches += 1;
            }
        }
        let record = EpochRecord {
            epoch,
            lr: cfg.optimizer.lr_at(epoch),
            train_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            noise_fraction: if slots > 0 { noise as f64 / slots as f64 } else { 0.0 },
            batches,
        };
        log::debug!("epoch {epoch}: loss {:.4} lr {} noise {:.3}", record.train_loss, record.lr, record.noise_fraction);
        history.push(record);
    }
    Ok((model, history))
}
