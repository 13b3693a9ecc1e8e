//! Per-class gradient statistics of the final linear layer.
//!
//! For each probe batch the cross-entropy gradient with respect to the
//! output weights is split by label: class `c`'s component keeps only the
//! rows labelled `c` (the components sum to the full batch gradient). Per
//! class we report the mean Frobenius norm of its component and the
//! direction variance: the trace of the sample covariance of the
//! unit-normalized components across batches, `n/(n−1)·(1 − ‖ū‖²) ∈ [0, 2]`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{channel_stats, Dataset};
use crate::error::Result;
use crate::layers::softmax_cross_entropy;
use crate::model::Mlp;
use crate::norm::Mode;
use crate::rng;
use crate::sampler::{apply_open, BalancedLoader, OpenConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGradStats {
    pub mean_magnitude: f64,
    pub direction_variance: f64,
    /// Probe batches that contained the class.
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradProbeReport {
    pub delta: f64,
    pub num_batches: usize,
    /// Keyed by class index; classes never sampled are absent.
    pub classes: BTreeMap<usize, ClassGradStats>,
}

impl GradProbeReport {
    pub fn direction_variance(&self, class: usize) -> Option<f64> {
        self.classes.get(&class).map(|s| s.direction_variance)
    }
}

/// Sum of per-coordinate sample variances of the unit-normalized vectors.
pub(crate) fn direction_variance(unit_vectors: &[Vec<f64>]) -> f64 {
    let n = unit_vectors.len();
    if n < 2 {
        return 0.0;
    }
    let dim = unit_vectors[0].len();
    let mut total = 0.0;
    for k in 0..dim {
        let mean = unit_vectors.iter().map(|u| u[k]).sum::<f64>() / n as f64;
        let ss: f64 = unit_vectors.iter().map(|u| (u[k] - mean).powi(2)).sum();
        total += ss / (n - 1) as f64;
    }
    total
}

/// Probes `num_batches` balanced batches drawn with `open` applied. With
/// `repeat_first` every probe batch is a copy of the first one.
///
/// The model is not modified: each batch runs through a train-mode copy so
/// normalization layers see batch statistics and the noise routing.
pub fn grad_probe<T: Scalar>(
    model: &Mlp<T>,
    data: &Dataset,
    open: &OpenConfig,
    num_batches: usize,
    seed: u64,
    repeat_first: bool,
) -> Result<GradProbeReport> {
    open.validate()?;
    let stats = channel_stats(data)?;
    let loader = BalancedLoader::new(data)?;
    let mut sample_rng = rng::stream(seed, rng::PROBE);
    let mut noise_rng = rng::stream(seed, rng::NOISE_IMAGES);
    let classes = data.num_classes();
    let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); classes];
    let mut mags: Vec<Vec<f64>> = vec![Vec::new(); classes];

    let mut first = None;
    for _ in 0..num_batches {
        let batch = match (&first, repeat_first) {
            (Some(b), true) => Clone::clone(b),
            _ => {
                let (images, labels) = loader.sample(open.batch_size, &mut sample_rng);
                let b = apply_open(images, labels, data, &stats, open, &mut noise_rng)?;
                if first.is_none() {
                    first = Some(b.clone());
                }
                b
            }
        };
        let mut probe = model.clone();
        let x =
            Tensor::new(batch.images.shape().to_vec(), batch.images.data().iter().map(|&v| T::from_f32(v)).collect())?;
        let logits = probe.forward(&x, &batch.noise_mask, Mode::Train)?;
        let (_, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
        let feats = probe.last_features().expect("train-mode forward caches features");
        let (din, dout) = (feats.row_len(), dlogits.row_len());

        let mut per_class = vec![vec![0.0f64; din * dout]; classes];
        let mut present = vec![false; classes];
        for (r, &y) in batch.labels.iter().enumerate() {
            present[y] = true;
            let g = &mut per_class[y];
            let (h, d) = (feats.row(r), dlogits.row(r));
            for i in 0..din {
                let hi = h[i].as_f64();
                for j in 0..dout {
                    g[i * dout + j] += hi * d[j].as_f64();
                }
            }
        }
        for c in 0..classes {
            if !present[c] {
                continue;
            }
            let g = std::mem::take(&mut per_class[c]);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            mags[c].push(norm);
            let unit = if norm > 0.0 { g.iter().map(|v| v / norm).collect() } else { g };
            grads[c].push(unit);
        }
    }

    let classes = (0..classes)
        .filter(|&c| !mags[c].is_empty())
        .map(|c| {
            let n = mags[c].len();
            let s = ClassGradStats {
                mean_magnitude: mags[c].iter().sum::<f64>() / n as f64,
                direction_variance: direction_variance(&grads[c]),
                batches: n,
            };
            (c, s)
        })
        .collect();
    Ok(GradProbeReport { delta: open.delta, num_batches, classes })
}
