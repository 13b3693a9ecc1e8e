//! Batch normalization variants: standard BN, distribution-aware routing
//! BN (DAR-BN) and auxiliary BN.
//!
//! All three share one kernel that normalizes a subset of batch rows with
//! that subset's own statistics. The variants only differ in how rows are
//! routed to kernels, which affine parameters receive gradient, and which
//! rows feed the running statistics:
//!
//! | variant  | statistics          | affine grads from | running stats from |
//! |----------|---------------------|-------------------|--------------------|
//! | standard | whole batch         | all rows          | all rows           |
//! | DAR-BN   | per split           | natural rows      | natural rows       |
//! | aux      | per split           | own split's state | own split's state  |
//!
//! The affine map is `gamma·x̂ + beta`. Batch statistics use the biased
//! variance; running variance is tracked with the unbiased one.

mod kernel;
mod mask;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Param;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use kernel::{backward_split, normalize_eval, normalize_split, update_running, Layout, SplitCache};
pub use mask::NoiseMask;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormVariant {
    None,
    StandardBn,
    AuxBn,
    #[default]
    DarBn,
}

impl NormVariant {
    pub fn name(self) -> &'static str {
        match self {
            NormVariant::None => "none",
            NormVariant::StandardBn => "standard_bn",
            NormVariant::AuxBn => "aux_bn",
            NormVariant::DarBn => "dar_bn",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    /// EMA factor `η`: `running ← η·batch + (1−η)·running`.
    pub momentum: f64,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_params(channels, DEFAULT_EPS, DEFAULT_MOMENTUM)
    }

    pub fn with_params(channels: usize, eps: f64, momentum: f64) -> Self {
        assert!(eps > 0.0, "eps must be positive");
        assert!(momentum > 0.0 && momentum <= 1.0, "momentum must lie in (0, 1]");
        Self {
            gamma: Param::new(Tensor::filled(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn zero_grad(&mut self) {
        self.gamma.zero_grad();
        self.beta.zero_grad();
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }

    fn layout_for(&self, x: &Tensor<T>) -> Result<Layout> {
        let layout = Layout::of(x)?;
        if layout.channels != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "batch_norm",
                left: x.shape().to_vec(),
                right: vec![self.channels()],
            });
        }
        if !x.all_finite() {
            return Err(Error::NonFiniteInput { op: "batch_norm" });
        }
        Ok(layout)
    }

    fn eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let layout = self.layout_for(x)?;
        Tensor::new(x.shape().to_vec(), normalize_eval(x.data(), layout, self))
    }
}

#[derive(Debug, Clone)]
struct Routed<T> {
    shape: Vec<usize>,
    layout: Layout,
    /// (split cache, index of the state it used, whether affine grads flow)
    splits: Vec<(SplitCache<T>, usize, bool)>,
}

impl<T: Scalar> Routed<T> {
    fn check_upstream(&self, upstream: &Tensor<T>, op: &'static str) -> Result<()> {
        if upstream.shape() != self.shape.as_slice() {
            return Err(Error::ShapeMismatch { op, left: upstream.shape().to_vec(), right: self.shape.clone() });
        }
        Ok(())
    }

    fn backward(&self, states: &mut [&mut BatchNormState<T>], upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let mut dx = vec![T::zero(); upstream.len()];
        for (cache, idx, affine) in &self.splits {
            backward_split(cache, self.layout, states[*idx], upstream.data(), &mut dx, *affine);
        }
        Tensor::new(self.shape.clone(), dx)
    }
}

/// Normalizes one split during training. Returns `None` for an empty split.
fn train_split<T: Scalar>(
    x: &Tensor<T>,
    layout: Layout,
    rows: Vec<usize>,
    state: &mut BatchNormState<T>,
    out: &mut [T],
    update_stats: bool,
    label: &str,
) -> Option<SplitCache<T>> {
    if rows.is_empty() {
        return None;
    }
    if rows.len() == 1 {
        warn!("{label} split has a single example; its normalized output is degenerate");
    }
    let enough = rows.len() >= 2;
    let (cache, stats) = normalize_split(x.data(), layout, rows, state, out);
    if update_stats && enough {
        update_running(state, &stats);
    }
    Some(cache)
}

/// Standard batch normalization.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub state: BatchNormState<T>,
    cache: Option<Routed<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(state: BatchNormState<T>) -> Self {
        Self { state, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.cache = None;
        if mode == Mode::Eval {
            return self.state.eval(x);
        }
        let layout = self.state.layout_for(x)?;
        if layout.batch < 2 {
            return Err(Error::invalid("train-mode batch norm needs a batch of at least 2"));
        }
        let mut out = vec![T::zero(); x.len()];
        let rows: Vec<usize> = (0..layout.batch).collect();
        let (cache, stats) = normalize_split(x.data(), layout, rows, &self.state, &mut out);
        update_running(&mut self.state, &stats);
        self.cache = Some(Routed { shape: x.shape().to_vec(), layout, splits: vec![(cache, 0, true)] });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let routed = self.cache.take().ok_or(Error::MissingForward("bn_backward"))?;
        routed.check_upstream(upstream, "bn_backward")?;
        routed.backward(&mut [&mut self.state], upstream)
    }
}

/// Distribution-aware routing batch norm.
///
/// In training, natural and noise rows are normalized with separate batch
/// statistics and both are scaled and shifted by the same `gamma`/`beta`.
/// Only natural rows contribute to the affine gradients and the running
/// statistics; input gradients flow through both splits. Eval mode is
/// plain batch norm with the running statistics.
#[derive(Debug, Clone)]
pub struct DarBatchNorm<T> {
    pub state: BatchNormState<T>,
    cache: Option<Routed<T>>,
}

impl<T: Scalar> DarBatchNorm<T> {
    pub fn new(state: BatchNormState<T>) -> Self {
        Self { state, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mask: &NoiseMask, mode: Mode) -> Result<Tensor<T>> {
        self.cache = None;
        mask.check_len(x.batch())?;
        if mode == Mode::Eval {
            return self.state.eval(x);
        }
        let layout = self.state.layout_for(x)?;
        let mut out = vec![T::zero(); x.len()];
        let mut splits = Vec::with_capacity(2);
        if let Some(c) = train_split(x, layout, mask.natural_rows(), &mut self.state, &mut out, true, "natural") {
            splits.push((c, 0, true));
        }
        if let Some(c) = train_split(x, layout, mask.noise_rows(), &mut self.state, &mut out, false, "noise") {
            splits.push((c, 0, false));
        }
        self.cache = Some(Routed { shape: x.shape().to_vec(), layout, splits });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let routed = self.cache.take().ok_or(Error::MissingForward("dar_bn_backward"))?;
        routed.check_upstream(upstream, "dar_bn_backward")?;
        routed.backward(&mut [&mut self.state], upstream)
    }
}

/// Two fully independent batch norms, one per input distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxBnState<T> {
    pub natural: BatchNormState<T>,
    pub noise: BatchNormState<T>,
}

impl<T: Scalar> AuxBnState<T> {
    pub fn new(channels: usize) -> Self {
        Self { natural: BatchNormState::new(channels), noise: BatchNormState::new(channels) }
    }
}

#[derive(Debug, Clone)]
pub struct AuxBatchNorm<T> {
    pub state: AuxBnState<T>,
    cache: Option<Routed<T>>,
}

impl<T: Scalar> AuxBatchNorm<T> {
    pub fn new(state: AuxBnState<T>) -> Self {
        Self { state, cache: None }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mask: &NoiseMask, mode: Mode) -> Result<Tensor<T>> {
        self.cache = None;
        mask.check_len(x.batch())?;
        if mode == Mode::Eval {
            return self.state.natural.eval(x);
        }
        let layout = self.state.natural.layout_for(x)?;
        let mut out = vec![T::zero(); x.len()];
        let mut splits = Vec::with_capacity(2);
        if let Some(c) = train_split(x, layout, mask.natural_rows(), &mut self.state.natural, &mut out, true, "natural")
        {
            splits.push((c, 0, true));
        }
        if let Some(c) = train_split(x, layout, mask.noise_rows(), &mut self.state.noise, &mut out, true, "noise") {
            splits.push((c, 1, true));
        }
        self.cache = Some(Routed { shape: x.shape().to_vec(), layout, splits });
        Tensor::new(x.shape().to_vec(), out)
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        let routed = self.cache.take().ok_or(Error::MissingForward("aux_bn_backward"))?;
        routed.check_upstream(upstream, "aux_bn_backward")?;
        let AuxBnState { natural, noise } = &mut self.state;
        routed.backward(&mut [natural, noise], upstream)
    }
}

/// A normalization layer of any variant behind one interface.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum NormLayer<T> {
    Standard(BatchNorm<T>),
    Dar(DarBatchNorm<T>),
    Aux(AuxBatchNorm<T>),
}

impl<T: Scalar> NormLayer<T> {
    pub fn new(variant: NormVariant, channels: usize) -> Option<Self> {
        match variant {
            NormVariant::None => None,
            NormVariant::StandardBn => Some(Self::Standard(BatchNorm::new(BatchNormState::new(channels)))),
            NormVariant::DarBn => Some(Self::Dar(DarBatchNorm::new(BatchNormState::new(channels)))),
            NormVariant::AuxBn => Some(Self::Aux(AuxBatchNorm::new(AuxBnState::new(channels)))),
        }
    }

    /// Standard BN ignores the mask apart from its length.
    pub fn forward(&mut self, x: &Tensor<T>, mask: &NoiseMask, mode: Mode) -> Result<Tensor<T>> {
        match self {
            NormLayer::Standard(bn) => {
                mask.check_len(x.batch())?;
                bn.forward(x, mode)
            }
            NormLayer::Dar(bn) => bn.forward(x, mask, mode),
            NormLayer::Aux(bn) => bn.forward(x, mask, mode),
        }
    }

    pub fn backward(&mut self, upstream: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            NormLayer::Standard(bn) => bn.backward(upstream),
            NormLayer::Dar(bn) => bn.backward(upstream),
            NormLayer::Aux(bn) => bn.backward(upstream),
        }
    }

    /// All batch-norm states, natural first for the auxiliary variant.
    pub fn states(&self) -> Vec<&BatchNormState<T>> {
        match self {
            NormLayer::Standard(bn) => vec![&bn.state],
            NormLayer::Dar(bn) => vec![&bn.state],
            NormLayer::Aux(bn) => vec![&bn.state.natural, &bn.state.noise],
        }
    }

    pub fn states_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        match self {
            NormLayer::Standard(bn) => vec![&mut bn.state],
            NormLayer::Dar(bn) => vec![&mut bn.state],
            NormLayer::Aux(bn) => vec![&mut bn.state.natural, &mut bn.state.noise],
        }
    }
}
