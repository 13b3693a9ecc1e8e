//! Deterministic synthetic image classification data.
//!
//! Each class owns a smooth random prototype. A sample is its class
//! prototype, circularly shifted by a random offset, plus i.i.d. Gaussian
//! pixel noise, clamped to `[0, 1]`. Small shifts make the task easy with
//! plenty of data, while a handful of samples only covers a few of the
//! possible offsets.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::{Dataset, ImageShape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub prototype_seed: u64,
    pub within_class_std: f64,
    /// Per-pixel std each smoothed prototype is rescaled to (around 0.5).
    /// `None` keeps the raw smoothed values.
    pub prototype_contrast: Option<f64>,
    pub shift_range: usize,
    pub test_per_class: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            channels: 1,
            height: 16,
            width: 16,
            prototype_seed: 0,
            within_class_std: 0.15,
            prototype_contrast: Some(0.12),
            shift_range: 2,
            test_per_class: 100,
        }
    }
}

impl SyntheticSpec {
    pub fn shape(&self) -> ImageShape {
        ImageShape::new(self.channels, self.height, self.width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.shape().pixels() == 0 || self.test_per_class == 0 {
            return Err(Error::invalid("synthetic spec needs positive classes, image size and test_per_class"));
        }
        if !(self.within_class_std >= 0.0 && self.within_class_std.is_finite()) {
            return Err(Error::invalid("within_class_std must be finite and nonnegative"));
        }
        if let Some(c) = self.prototype_contrast {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("prototype_contrast must be finite and positive"));
            }
        }
        if 2 * self.shift_range >= self.height.min(self.width) {
            return Err(Error::invalid("shift_range too large for the image size"));
        }
        Ok(())
    }
}

/// 3×3 box filter with wrap-around borders, applied per channel plane.
fn box_blur(img: &mut [f64], shape: ImageShape) {
    let (h, w) = (shape.height, shape.width);
    let mut tmp = vec![0.0; h * w];
    for plane in img.chunks_mut(h * w) {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in [h - 1, 0, 1] {
                    for dx in [w - 1, 0, 1] {
                        s += plane[((y + dy) % h) * w + (x + dx) % w];
                    }
                }
                tmp[y * w + x] = s / 9.0;
            }
        }
        plane.copy_from_slice(&tmp);
    }
}

/// Affine map to mean 0.5 and population std `contrast`, clamped to [0, 1].
/// Constant images are left at 0.5.
fn rescale(img: &mut [f64], contrast: f64) {
    let n = img.len() as f64;
    let mean = img.iter().sum::<f64>() / n;
    let std = (img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { contrast / std } else { 0.0 };
    for v in img.iter_mut() {
        *v = (0.5 + (*v - mean) * scale).clamp(0.0, 1.0);
    }
}

pub(crate) fn prototypes(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = rng::stream(spec.prototype_seed, rng::PROTOTYPES);
    let shape = spec.shape();
    (0..spec.num_classes)
        .map(|_| {
            let mut img: Vec<f64> = (0..shape.pixels()).map(|_| rng.random::<f64>()).collect();
            box_blur(&mut img, shape);
            box_blur(&mut img, shape);
            if let Some(contrast) = spec.prototype_contrast {
                rescale(&mut img, contrast);
            }
            img
        })
        .collect()
}

fn draw_sample<R: Rng + ?Sized>(proto: &[f64], spec: &SyntheticSpec, rng: &mut R, out: &mut Vec<f32>) {
    let shape = spec.shape();
    let (h, w) = (shape.height as i64, shape.width as i64);
    let r = spec.shift_range as i64;
    let shift = Uniform::new_inclusive(-r, r).expect("valid range");
    let dy = shift.sample(rng);
    let dx = shift.sample(rng);
    let noise = Normal::new(0.0, spec.within_class_std).expect("validated std");
    for plane in proto.chunks(shape.plane()) {
        for y in 0..h {
            for x in 0..w {
                let sy = (y - dy).rem_euclid(h);
                let sx = (x - dx).rem_euclid(w);
                let mut v = plane[(sy * w + sx) as usize];
                if spec.within_class_std > 0.0 {
                    v += noise.sample(rng);
                }
                out.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
}

fn draw_split(spec: &SyntheticSpec, protos: &[Vec<f64>], sizes: &[usize], mut rng: rng::Rng, name: String) -> Dataset {
    let total: usize = sizes.iter().sum();
    let mut images = Vec::with_capacity(total * spec.shape().pixels());
    let mut labels = Vec::with_capacity(total);
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            draw_sample(&protos[c], spec, &mut rng, &mut images);
            labels.push(c);
        }
    }
    Dataset::new(name, spec.shape(), spec.num_classes, images, labels).expect("generated data is valid")
}

/// Generates a training split with `sizes[c]` examples of class `c` and a
/// balanced test split with `test_per_class` examples per class.
pub fn synth_generate(spec: &SyntheticSpec, sizes: &[usize], seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if sizes.len() != spec.num_classes {
        return Err(Error::invalid(format!("{} class sizes given for {} classes", sizes.len(), spec.num_classes)));
    }
    let protos = prototypes(spec);
    let train = draw_split(spec, &protos, sizes, rng::stream(seed, rng::TRAIN_SAMPLING), "synthetic-train".into());
    let test = draw_split(
        spec,
        &protos,
        &vec![spec.test_per_class; spec.num_classes],
        rng::stream(seed, rng::TEST_SAMPLING),
        "synthetic-test".into(),
    );
    Ok((train, test))
}
