//! Class-balanced oversampling and pure-noise replacement (OPeN).
//!
//! A batch is drawn by picking a class uniformly and then an example of
//! that class uniformly, with replacement. Each slot is then independently
//! replaced by a freshly sampled noise image with probability
//! `(1 − ρ_c)·δ`, where `ρ_c = n_c / n_max`. Replaced slots keep their label
//! and are flagged in the batch's [`NoiseMask`].

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{ChannelStats, Dataset, ImageShape};
use crate::error::{Error, Result};
use crate::norm::NoiseMask;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OpenMode {
    /// Replacement probability depends on the class size.
    #[default]
    Longtail,
    /// Every slot is replaced with the same probability.
    FixedRatio,
}

/// What a selected slot is replaced with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NoiseKind {
    /// A pure noise image drawn from the dataset's channel statistics.
    #[default]
    Pure,
    /// The original image plus i.i.d. `N(0, sigma²)` pixel noise.
    Additive { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpenConfig {
    pub delta: f64,
    pub mode: OpenMode,
    pub fixed_noise_fraction: f64,
    pub batch_size: usize,
    pub noise: NoiseKind,
}

impl Default for OpenConfig {
    fn default() -> Self {
        Self {
            delta: 1.0 / 3.0,
            mode: OpenMode::Longtail,
            fixed_noise_fraction: 0.2,
            batch_size: 128,
            noise: NoiseKind::Pure,
        }
    }
}

impl OpenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::invalid("delta must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.fixed_noise_fraction) {
            return Err(Error::invalid("fixed_noise_fraction must lie in [0, 1)"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        if let NoiseKind::Additive { sigma } = self.noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::invalid("additive noise sigma must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `B×C×H×W`.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
    pub noise_mask: NoiseMask,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub(crate) fn batch_tensor(shape: ImageShape, b: usize, data: Vec<f32>) -> Tensor<f32> {
    Tensor::new(vec![b, shape.channels, shape.height, shape.width], data).expect("batch layout")
}

/// Class-uniform sampler with replacement over a possibly imbalanced dataset.
#[derive(Debug, Clone)]
pub struct BalancedLoader<'a> {
    data: &'a Dataset,
    by_class: Vec<Vec<usize>>,
}

impl<'a> BalancedLoader<'a> {
    pub fn new(data: &'a Dataset) -> Result<Self> {
        let by_class = data.indices_by_class();
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("class {c} has no examples to oversample")));
        }
        Ok(Self { data, by_class })
    }

    /// Batches per balanced epoch: `ceil(C·n_max / batch_size)`.
    pub fn epoch_len(&self, batch_size: usize) -> usize {
        (self.by_class.len() * self.data.n_max()).div_ceil(batch_size)
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<usize> {
        let classes = Uniform::new(0, self.by_class.len()).expect("nonempty");
        (0..batch_size)
            .map(|_| {
                let members = &self.by_class[classes.sample(rng)];
                members[rng.random_range(0..members.len())]
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> (Tensor<f32>, Vec<usize>) {
        gather(self.data, &self.sample_indices(batch_size, rng))
    }
}

/// Copies the given examples into a `B×C×H×W` tensor plus labels.
pub fn gather(d: &Dataset, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
    let mut data = Vec::with_capacity(indices.len() * d.shape().pixels());
    for &i in indices {
        data.extend_from_slice(d.image(i));
    }
    let labels = indices.iter().map(|&i| d.labels()[i]).collect();
    (batch_tensor(d.shape(), indices.len(), data), labels)
}

pub fn sample_balanced_batch<R: Rng + ?Sized>(
    d: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    Ok(BalancedLoader::new(d)?.sample(batch_size, rng))
}

/// Probability `(1 − ρ)·δ` of replacing an example of a class with
/// representation ratio `ρ`.
pub fn replacement_probability(rho: f64, delta: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid(format!("representation ratio {rho} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid(format!("delta {delta} outside [0, 1]")));
    }
    Ok((1.0 - rho) * delta)
}

fn channel_normals(stats: &ChannelStats) -> Vec<Normal<f64>> {
    stats.mean.iter().zip(&stats.std).map(|(&m, &s)| Normal::new(m, s).expect("finite, nonnegative std")).collect()
}

/// Noise pixels before clamping, `N(mean_l, std_l²)` for channel `l`.
pub fn sample_noise_raw<R: Rng + ?Sized>(stats: &ChannelStats, shape: ImageShape, rng: &mut R) -> Vec<f64> {
    assert_eq!(stats.channels(), shape.channels, "channel count mismatch");
    let mut out = Vec::with_capacity(shape.pixels());
    for dist in channel_normals(stats) {
        out.extend((0..shape.plane()).map(|_| dist.sample(rng)));
    }
    out
}

/// A pure noise image, clamped to `[0, 1]`.
pub fn sample_noise_image<R: Rng + ?Sized>(stats: &ChannelStats, shape: ImageShape, rng: &mut R) -> Vec<f32> {
    sample_noise_raw(stats, shape, rng).into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect()
}

/// Mirrors each image left-to-right with probability 1/2.
pub fn random_hflip<R: Rng + ?Sized>(images: &mut Tensor<f32>, rng: &mut R) {
    let s = images.shape().to_vec();
    let (h, w) = (s[2], s[3]);
    let per = images.row_len();
    for img in images.data_mut().chunks_mut(per) {
        if rng.random::<bool>() {
            for row in img.chunks_mut(w).take(s[1] * h) {
                row.reverse();
            }
        }
    }
}

/// Replaces batch slots with noise according to `cfg`.
///
/// One uniform draw decides every slot, so the stream position after the
/// call depends only on the batch size and on which slots were replaced.
pub fn apply_open<R: Rng + ?Sized>(
    mut images: Tensor<f32>,
    labels: Vec<usize>,
    d: &Dataset,
    stats: &ChannelStats,
    cfg: &OpenConfig,
    rng: &mut R,
) -> Result<Batch> {
    cfg.validate()?;
    let shape = d.shape();
    if images.shape() != [labels.len(), shape.channels, shape.height, shape.width] {
        return Err(Error::ShapeMismatch {
            op: "apply_open",
            left: images.shape().to_vec(),
            right: vec![labels.len(), shape.channels, shape.height, shape.width],
        });
    }
    if stats.channels() != shape.channels {
        return Err(Error::invalid("channel statistics do not match the dataset"));
    }
    let rho = d.representation_ratios();
    let mut probs = Vec::with_capacity(labels.len());
    for &y in &labels {
        let p = match cfg.mode {
            OpenMode::Longtail => {
                let r = *rho.get(y).ok_or_else(|| Error::invalid(format!("label {y} out of range")))?;
                replacement_probability(r, cfg.delta)?
            }
            OpenMode::FixedRatio => cfg.fixed_noise_fraction,
        };
        probs.push(p);
    }

    let per = shape.pixels();
    let mut flags = vec![false; labels.len()];
    for (j, &p) in probs.iter().enumerate() {
        if rng.random::<f64>() >= p {
            continue;
        }
        flags[j] = true;
        let slot = &mut images.data_mut()[j * per..(j + 1) * per];
        match cfg.noise {
            NoiseKind::Pure => slot.copy_from_slice(&sample_noise_image(stats, shape, rng)),
            NoiseKind::Additive { sigma } => {
                let n = Normal::new(0.0, sigma).expect("validated sigma");
                for v in slot.iter_mut() {
                    *v = (*v as f64 + n.sample(rng)).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Ok(Batch { images, labels, noise_mask: NoiseMask::new(flags) })
}
