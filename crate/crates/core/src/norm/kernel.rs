//! Per-channel normalization of a subset of batch rows.
//!
//! Input is `N×d` or `N×d×H×W`; a "row" is one batch example and the
//! statistics of channel `j` are taken over the selected rows and all
//! spatial positions. Reductions always run rows-in-order, then spatial
//! positions in order, so a split covering the whole batch reproduces
//! plain batch norm exactly.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::BatchNormState;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl Layout {
    pub fn of<T: Scalar>(x: &Tensor<T>) -> Result<Self> {
        let s = x.shape();
        match s.len() {
            2 => Ok(Self { batch: s[0], channels: s[1], spatial: 1 }),
            4 => Ok(Self { batch: s[0], channels: s[1], spatial: s[2] * s[3] }),
            _ => Err(Error::invalid(format!("batch norm expects 2-D or 4-D input, got {s:?}"))),
        }
    }

    #[inline]
    fn offset(&self, row: usize, channel: usize) -> usize {
        (row * self.channels + channel) * self.spatial
    }
}

/// Saved forward quantities for one split.
#[derive(Debug, Clone)]
pub(crate) struct SplitCache<T> {
    pub rows: Vec<usize>,
    /// Normalized values, indexed like the input restricted to `rows`.
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

pub(crate) struct SplitStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

/// Normalizes `rows` of `x` with their own batch statistics and writes
/// `gamma·x̂ + beta` into the same positions of `out`.
pub(crate) fn normalize_split<T: Scalar>(
    x: &[T],
    layout: Layout,
    rows: Vec<usize>,
    state: &BatchNormState<T>,
    out: &mut [T],
) -> (SplitCache<T>, SplitStats<T>) {
    let d = layout.channels;
    let s = layout.spatial;
    let count = rows.len() * s;
    let inv_count = T::one() / T::from_f64(count as f64);
    let eps = T::from_f64(state.eps);
    let gamma = state.gamma.value.data();
    let beta = state.beta.value.data();

    let mut mean = vec![T::zero(); d];
    let mut var = vec![T::zero(); d];
    let mut inv_std = vec![T::zero(); d];
    let mut xhat = vec![T::zero(); count * d];

    for j in 0..d {
        let mut sum = T::zero();
        for &r in &rows {
            let o = layout.offset(r, j);
            for &v in &x[o..o + s] {
                sum = sum + v;
            }
        }
        let m = sum * inv_count;
        let mut sq = T::zero();
        for &r in &rows {
            let o = layout.offset(r, j);
            for &v in &x[o..o + s] {
                let c = v - m;
                sq = sq + c * c;
            }
        }
        let v = sq * inv_count;
        let is = T::one() / (v + eps).sqrt();
        mean[j] = m;
        var[j] = v;
        inv_std[j] = is;

        for (k, &r) in rows.iter().enumerate() {
            let o = layout.offset(r, j);
            let ho = (k * d + j) * s;
            for t in 0..s {
                let h = (x[o + t] - m) * is;
                xhat[ho + t] = h;
                out[o + t] = gamma[j] * h + beta[j];
            }
        }
    }
    (SplitCache { rows, xhat, inv_std }, SplitStats { mean, var, count })
}

/// Exponential moving average update of the running statistics; the
/// variance fed in is the unbiased estimate.
pub(crate) fn update_running<T: Scalar>(state: &mut BatchNormState<T>, stats: &SplitStats<T>) {
    let eta = T::from_f64(state.momentum);
    let keep = T::one() - eta;
    let n = T::from_f64(stats.count as f64);
    let correction = n / (n - T::one());
    for j in 0..stats.mean.len() {
        state.running_mean[j] = eta * stats.mean[j] + keep * state.running_mean[j];
        let unbiased = stats.var[j] * correction;
        state.running_var[j] = (eta * unbiased + keep * state.running_var[j]).max(T::zero());
    }
}

/// Back-propagates `upstream` through one split. Writes `dL/dx` for the
/// split's rows into `dx`; when `accumulate_affine` is set, adds the split's
/// contribution to the gradients of `gamma` and `beta`.
pub(crate) fn backward_split<T: Scalar>(
    cache: &SplitCache<T>,
    layout: Layout,
    state: &mut BatchNormState<T>,
    upstream: &[T],
    dx: &mut [T],
    accumulate_affine: bool,
) {
    let d = layout.channels;
    let s = layout.spatial;
    let count = T::from_f64((cache.rows.len() * s) as f64);
    for j in 0..d {
        let g = state.gamma.value.data()[j];
        let mut sum_up = T::zero();
        let mut sum_up_xhat = T::zero();
        for (k, &r) in cache.rows.iter().enumerate() {
            let o = layout.offset(r, j);
            let ho = (k * d + j) * s;
            for t in 0..s {
                let u = upstream[o + t];
                sum_up = sum_up + u;
                sum_up_xhat = sum_up_xhat + u * cache.xhat[ho + t];
            }
        }
        if accumulate_affine {
            let gg = &mut state.gamma.grad.data_mut()[j];
            *gg = *gg + sum_up_xhat;
            let gb = &mut state.beta.grad.data_mut()[j];
            *gb = *gb + sum_up;
        }
        let scale = cache.inv_std[j] / count;
        let sum_dxhat = g * sum_up;
        let sum_dxhat_xhat = g * sum_up_xhat;
        for (k, &r) in cache.rows.iter().enumerate() {
            let o = layout.offset(r, j);
            let ho = (k * d + j) * s;
            for t in 0..s {
                let dxhat = g * upstream[o + t];
                dx[o + t] = scale * (count * dxhat - sum_dxhat - cache.xhat[ho + t] * sum_dxhat_xhat);
            }
        }
    }
}

/// Eval-mode normalization with the running statistics.
pub(crate) fn normalize_eval<T: Scalar>(x: &[T], layout: Layout, state: &BatchNormState<T>) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    let eps = T::from_f64(state.eps);
    let gamma = state.gamma.value.data();
    let beta = state.beta.value.data();
    for j in 0..layout.channels {
        let m = state.running_mean[j];
        let is = T::one() / (state.running_var[j] + eps).sqrt();
        for r in 0..layout.batch {
            let o = layout.offset(r, j);
            for t in 0..layout.spatial {
                out[o + t] = gamma[j] * ((x[o + t] - m) * is) + beta[j];
            }
        }
    }
    out
}
