//! Labelled image datasets and their per-channel statistics.

mod format;
mod longtail;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use format::{
    expected_file_size, load_dataset, load_manifest, manifest_path, save_dataset, save_manifest, DatasetManifest,
    HEADER_LEN, MAGIC,
};
pub use longtail::{build_longtail, longtail_sizes, LongTailSpec};
pub use synth::{synth_generate, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Images with values in `[0, 1]`, stored `N×C×H×W` row-major, and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    shape: ImageShape,
    num_classes: usize,
    images: Vec<f32>,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        shape: ImageShape,
        num_classes: usize,
        images: Vec<f32>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if shape.pixels() == 0 || num_classes == 0 {
            return Err(Error::invalid("dataset needs a nonzero image shape and class count"));
        }
        if images.len() != labels.len() * shape.pixels() {
            return Err(Error::invalid(format!(
                "{} labels need {} pixel values, got {}",
                labels.len(),
                labels.len() * shape.pixels(),
                images.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::invalid(format!("label {y} out of range for {num_classes} classes")));
        }
        if let Some(p) = images.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        let mut class_counts = vec![0; num_classes];
        for &y in &labels {
            class_counts[y] += 1;
        }
        Ok(Self { name: name.into(), shape, num_classes, images, labels, class_counts })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &[f32] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.shape.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn n_max(&self) -> usize {
        self.class_counts.iter().copied().max().unwrap_or(0)
    }

    /// `n_c / n_max` for every class.
    pub fn representation_ratios(&self) -> Vec<f64> {
        let n_max = self.n_max().max(1) as f64;
        self.class_counts.iter().map(|&n| n as f64 / n_max).collect()
    }

    pub fn imbalance_ratio(&self) -> f64 {
        let n_min = self.class_counts.iter().copied().min().unwrap_or(0);
        self.n_max() as f64 / n_min as f64
    }

    pub fn is_balanced(&self) -> bool {
        self.class_counts.windows(2).all(|w| w[0] == w[1])
    }

    /// Indices of the examples of every class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        by_class
    }

    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Self {
        let p = self.shape.pixels();
        let mut images = Vec::with_capacity(indices.len() * p);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self::new(name, self.shape, self.num_classes, images, labels).expect("subset of a valid dataset")
    }
}

/// Per-channel mean and population standard deviation over all pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Single-pass (Welford) per-channel statistics.
pub fn channel_stats(d: &Dataset) -> Result<ChannelStats> {
    if d.is_empty() {
        return Err(Error::invalid("channel statistics of an empty dataset"));
    }
    let shape = d.shape();
    let plane = shape.plane();
    let mut mean = vec![0.0f64; shape.channels];
    let mut m2 = vec![0.0f64; shape.channels];
    let mut count = 0u64;
    for i in 0..d.len() {
        let img = d.image(i);
        for (l, chan) in img.chunks(plane).enumerate() {
            let mut k = count;
            for &v in chan {
                k += 1;
                let v = v as f64;
                let delta = v - mean[l];
                mean[l] += delta / k as f64;
                m2[l] += delta * (v - mean[l]);
            }
        }
        count += plane as u64;
    }
    let std = m2.iter().map(|&s| (s / count as f64).max(0.0).sqrt()).collect();
    Ok(ChannelStats { mean, std })
}
