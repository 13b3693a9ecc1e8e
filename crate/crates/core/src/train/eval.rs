use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Mlp;
use crate::sampler::gather;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NUM_GROUPS: usize = 5;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Correct predictions over all test examples.
    pub overall_accuracy: f64,
    /// `None` for classes with no test examples.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Mean per-class accuracy of each size group; group 0 holds the
    /// smallest training classes.
    pub group_accuracy: Vec<Option<f64>>,
    pub groups: Vec<Vec<usize>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub test_counts: Vec<usize>,
}

impl EvalReport {
    pub fn minority_group_accuracy(&self) -> Option<f64> {
        self.group_accuracy.first().copied().flatten()
    }
}

/// Splits classes into [`NUM_GROUPS`] groups by training-set size.
///
/// Classes are ordered by size, largest first (ties by index), cut into
/// equal consecutive chunks, and returned smallest group first.
pub fn class_groups(train_counts: &[usize]) -> Vec<Vec<usize>> {
    let c = train_counts.len();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| train_counts[b].cmp(&train_counts[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> =
        (0..NUM_GROUPS).map(|g| order[g * c / NUM_GROUPS..(g + 1) * c / NUM_GROUPS].to_vec()).collect();
    groups.reverse();
    groups
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Eval-mode accuracy on `test`. `train_counts` defines the size groups.
pub fn evaluate<T: Scalar>(model: &Mlp<T>, test: &Dataset, train_counts: &[usize], exec: Exec) -> Result<EvalReport> {
    let c = test.num_classes();
    if train_counts.len() != c || model.config().num_classes != c {
        return Err(Error::invalid("class count mismatch between model, test set and training counts"));
    }
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    if !test.is_balanced() {
        log::warn!("test set {} is not class-balanced", test.name);
    }
    let chunks: Vec<Vec<usize>> =
        (0..test.len()).collect::<Vec<_>>().chunks(EVAL_CHUNK).map(<[usize]>::to_vec).collect();
    let preds = exec.map(chunks, |idx| -> Result<Vec<usize>> {
        let (images, _) = gather(test, &idx);
        let x = Tensor::new(images.shape().to_vec(), images.data().iter().map(|&v| T::from_f32(v)).collect())?;
        let logits = model.predict(&x)?;
        Ok((0..logits.batch()).map(|r| argmax(logits.row(r))).collect())
    });

    let mut confusion = vec![vec![0usize; c]; c];
    let mut i = 0;
    for chunk in preds {
        for p in chunk? {
            confusion[test.labels()[i]][p] += 1;
            i += 1;
        }
    }
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let test_counts = test.class_counts().to_vec();
    let per_class_accuracy: Vec<Option<f64>> =
        (0..c).map(|k| (test_counts[k] > 0).then(|| confusion[k][k] as f64 / test_counts[k] as f64)).collect();
    let groups = class_groups(train_counts);
    let group_accuracy = groups
        .iter()
        .map(|g| {
            let accs: Vec<f64> = g.iter().filter_map(|&k| per_class_accuracy[k]).collect();
            (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
        })
        .collect();
    Ok(EvalReport {
        overall_accuracy: correct as f64 / test.len() as f64,
        per_class_accuracy,
        group_accuracy,
        groups,
        confusion,
        test_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_classes_make_pairs_smallest_first() {
        let counts = [500, 300, 180, 108, 65, 39, 23, 14, 8, 5];
        let g = class_groups(&counts);
        assert_eq!(g.len(), 5);
        assert!(g.iter().all(|grp| grp.len() == 2));
        assert_eq!(g[0], vec![8, 9]);
        assert_eq!(g[4], vec![0, 1]);
    }

    #[test]
    fn hundred_classes_make_groups_of_twenty() {
        let counts: Vec<usize> = (0..100).map(|k| 500 - 4 * k).collect();
        let g = class_groups(&counts);
        assert!(g.iter().all(|grp| grp.len() == 20));
        assert!(g[0].contains(&99) && g[4].contains(&0));
    }
}
