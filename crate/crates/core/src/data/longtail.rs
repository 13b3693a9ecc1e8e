use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub num_classes: usize,
    pub n_max: usize,
    pub imbalance_ratio: f64,
}

impl LongTailSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("long-tail construction needs at least 2 classes"));
        }
        if self.n_max == 0 {
            return Err(Error::invalid("n_max must be positive"));
        }
        if !(self.imbalance_ratio >= 1.0 && self.imbalance_ratio.is_finite()) {
            return Err(Error::invalid("imbalance ratio must be a finite value >= 1"));
        }
        if round_half_up(self.n_max as f64 / self.imbalance_ratio) < 1 {
            return Err(Error::invalid(format!(
                "n_max {} with IR {} leaves an empty smallest class",
                self.n_max, self.imbalance_ratio
            )));
        }
        Ok(())
    }
}

fn round_half_up(v: f64) -> usize {
    (v + 0.5).floor() as usize
}

/// Exponentially decaying class sizes `n_i = n_max · IR^(−i/(C−1))`,
/// `i = 0..C`, rounded half-up and clamped to at least one.
pub fn longtail_sizes(spec: &LongTailSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let last = (spec.num_classes - 1) as f64;
    Ok((0..spec.num_classes)
        .map(|i| {
            let n = spec.n_max as f64 * spec.imbalance_ratio.powf(-(i as f64) / last);
            round_half_up(n).max(1)
        })
        .collect())
}

/// Keeps, for every class `i`, the first `n_i` of its examples under a
/// seeded permutation. Retained examples stay in dataset order.
pub fn build_longtail(balanced: &Dataset, spec: &LongTailSpec, seed: u64) -> Result<Dataset> {
    if balanced.num_classes() != spec.num_classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, spec asks for {}",
            balanced.num_classes(),
            spec.num_classes
        )));
    }
    let sizes = longtail_sizes(spec)?;
    let mut rng = rng::stream(seed, rng::LONGTAIL);
    let mut keep = Vec::with_capacity(sizes.iter().sum());
    for (c, mut idx) in balanced.indices_by_class().into_iter().enumerate() {
        if idx.len() < sizes[c] {
            return Err(Error::invalid(format!("class {c} has {} examples, {} required", idx.len(), sizes[c])));
        }
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..sizes[c]]);
    }
    keep.sort_unstable();
    let name = format!("{}-lt{}", balanced.name, spec.imbalance_ratio);
    Ok(balanced.subset(&keep, name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;

    fn spec(c: usize, n: usize, ir: f64) -> LongTailSpec {
        LongTailSpec { num_classes: c, n_max: n, imbalance_ratio: ir }
    }

    #[test]
    fn published_endpoints() {
        let s = longtail_sizes(&spec(10, 5000, 100.0)).unwrap();
        assert_eq!((s[0], s[9]), (5000, 50));
        let s = longtail_sizes(&spec(100, 500, 100.0)).unwrap();
        assert_eq!((s[0], s[99]), (500, 5));
    }

    #[test]
    fn desk_scale_sizes() {
        // 500·100^(−i/9): 500, 299.7, 179.6, 107.7, 64.6, 38.7, 23.2, 13.9, 8.3, 5
        assert_eq!(longtail_sizes(&spec(10, 500, 100.0)).unwrap(), vec![500, 300, 180, 108, 65, 39, 23, 14, 8, 5]);
        assert_eq!(longtail_sizes(&spec(4, 7, 1.0)).unwrap(), vec![7; 4]);
    }

    #[test]
    fn invalid_specs() {
        assert!(longtail_sizes(&spec(1, 10, 2.0)).is_err());
        assert!(longtail_sizes(&spec(3, 10, 0.5)).is_err());
        assert!(longtail_sizes(&spec(3, 10, 100.0)).is_err());
    }

    fn balanced(per_class: usize, classes: usize) -> Dataset {
        let labels: Vec<usize> = (0..classes).flat_map(|c| vec![c; per_class]).collect();
        let images = (0..labels.len()).map(|i| (i % 97) as f32 / 96.0).collect();
        Dataset::new("b", ImageShape::new(1, 1, 1), classes, images, labels).unwrap()
    }

    #[test]
    fn build_matches_sizes_and_is_deterministic() {
        let b = balanced(50, 5);
        let s = spec(5, 50, 10.0);
        let a = build_longtail(&b, &s, 3).unwrap();
        let again = build_longtail(&b, &s, 3).unwrap();
        assert_eq!(a, again);
        let mut recount = vec![0; 5];
        for &y in a.labels() {
            recount[y] += 1;
        }
        assert_eq!(recount, longtail_sizes(&s).unwrap());
        assert_ne!(a, build_longtail(&b, &s, 4).unwrap());

        let flat = build_longtail(&b, &spec(5, 50, 1.0), 3).unwrap();
        assert_eq!(flat.class_counts(), &[50; 5]);
        assert!(build_longtail(&b, &spec(5, 60, 2.0), 3).is_err());
    }
}
