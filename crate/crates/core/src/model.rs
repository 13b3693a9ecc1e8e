//! A multilayer perceptron with an optional normalization layer after every
//! hidden linear layer: `[Linear → Norm → ReLU]* → Linear`.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::layers::{linear_backward_with, linear_forward_with, relu_backward, relu_forward, LayerParams};
use crate::norm::{Mode, NoiseMask, NormLayer, NormVariant};
use crate::optim::Param;
use crate::rng;
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;

/// Hidden layers draw weights from `U(−a, a)`, `a = sqrt(6 / fan_in)`.
pub const HIDDEN_INIT_GAIN: f64 = 2.449_489_742_783_178;
/// The output layer uses `a = 1 / sqrt(fan_in)`.
pub const OUTPUT_INIT_GAIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub norm_variant: NormVariant,
    pub precision: Precision,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes < 2 {
            return Err(Error::invalid("model needs a positive input size and at least 2 classes"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if self.hidden_dims.is_empty() && self.norm_variant != NormVariant::None {
            return Err(Error::invalid("a normalization variant needs at least one hidden layer"));
        }
        Ok(())
    }

    /// First eight bytes of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[derive(Debug, Clone)]
struct Hidden<T> {
    linear: LayerParams<T>,
    norm: Option<NormLayer<T>>,
    input: Option<Tensor<T>>,
    pre_relu: Option<Tensor<T>>,
}

/// Named tensor as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    config: ModelConfig,
    hidden: Vec<Hidden<T>>,
    output: LayerParams<T>,
    output_input: Option<Tensor<T>>,
    exec: Exec,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.precision != T::PRECISION {
            return Err(Error::invalid(format!(
                "config asks for {:?} but the model is built with {:?}",
                config.precision,
                T::PRECISION
            )));
        }
        let mut r = rng::stream(seed, rng::INIT);
        let mut fan_in = config.input_dim;
        let mut hidden = Vec::with_capacity(config.hidden_dims.len());
        for &width in &config.hidden_dims {
            hidden.push(Hidden {
                linear: LayerParams::init_uniform(fan_in, width, HIDDEN_INIT_GAIN, &mut r),
                norm: NormLayer::new(config.norm_variant, width),
                input: None,
                pre_relu: None,
            });
            fan_in = width;
        }
        let output = LayerParams::init_uniform(fan_in, config.num_classes, OUTPUT_INIT_GAIN, &mut r);
        Ok(Self { config, hidden, output, output_input: None, exec: Exec::default() })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn set_exec(&mut self, exec: Exec) {
        self.exec = exec;
    }

    fn flatten(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.ndim() < 2 || x.row_len() != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "mlp_forward",
                left: x.shape().to_vec(),
                right: vec![x.shape().first().copied().unwrap_or(0), self.config.input_dim],
            });
        }
        x.clone().reshape(vec![x.batch(), self.config.input_dim])
    }

    /// Forward pass. Train mode caches what [`Mlp::backward`] needs and
    /// updates normalization statistics; eval mode touches no state.
    pub fn forward(&mut self, x: &Tensor<T>, mask: &NoiseMask, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.flatten(x)?;
        mask.check_len(h.batch())?;
        let train = mode == Mode::Train;
        for layer in &mut self.hidden {
            let z = linear_forward_with(self.exec, &h, &layer.linear)?;
            let z = match &mut layer.norm {
                Some(norm) => norm.forward(&z, mask, mode)?,
                None => z,
            };
            let a = relu_forward(&z);
            if train {
                layer.input = Some(h);
                layer.pre_relu = Some(z);
            } else {
                layer.input = None;
                layer.pre_relu = None;
            }
            h = a;
        }
        let logits = linear_forward_with(self.exec, &h, &self.output)?;
        self.output_input = train.then_some(h);
        Ok(logits)
    }

    /// Eval-mode logits without touching any cached state.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.flatten(x)?;
        let mask = NoiseMask::all_natural(h.batch());
        for layer in &self.hidden {
            let z = linear_forward_with(self.exec, &h, &layer.linear)?;
            let z = match &layer.norm {
                Some(norm) => {
                    // eval forward of a clone never mutates the original state
                    let mut n = norm.clone();
                    n.forward(&z, &mask, Mode::Eval)?
                }
                None => z,
            };
            h = relu_forward(&z);
        }
        linear_forward_with(self.exec, &h, &self.output)
    }

    /// Back-propagates `dlogits`, accumulating every parameter gradient, and
    /// returns the gradient with respect to the flattened input.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.output_input.take().ok_or(Error::MissingForward("mlp_backward"))?;
        let mut g = linear_backward_with(self.exec, &h, &mut self.output, dlogits)?;
        for layer in self.hidden.iter_mut().rev() {
            let z = layer.pre_relu.take().ok_or(Error::MissingForward("mlp_backward"))?;
            let x = layer.input.take().ok_or(Error::MissingForward("mlp_backward"))?;
            g = relu_backward(&z, &g)?;
            if let Some(norm) = &mut layer.norm {
                g = norm.backward(&g)?;
            }
            g = linear_backward_with(self.exec, &x, &mut layer.linear, &g)?;
        }
        Ok(g)
    }

    /// Input to the final linear layer from the last train-mode forward.
    pub fn last_features(&self) -> Option<&Tensor<T>> {
        self.output_input.as_ref()
    }

    pub fn output_layer(&self) -> &LayerParams<T> {
        &self.output
    }

    pub fn norm_layers(&self) -> impl Iterator<Item = &NormLayer<T>> {
        self.hidden.iter().filter_map(|h| h.norm.as_ref())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for layer in &mut self.hidden {
            out.extend(layer.linear.params_mut());
            if let Some(norm) = &mut layer.norm {
                for s in norm.states_mut() {
                    out.extend(s.params_mut());
                }
            }
        }
        out.extend(self.output.params_mut());
        out
    }

    /// Every parameter and running statistic, in a fixed order.
    pub fn state_tensors(&self) -> Vec<NamedTensor<T>> {
        let mut out = Vec::new();
        let mut push = |name: String, shape: &[usize], data: &[T]| {
            out.push(NamedTensor { name, shape: shape.to_vec(), data: data.to_vec() });
        };
        for (i, layer) in self.hidden.iter().enumerate() {
            let w = &layer.linear.weights.value;
            let b = &layer.linear.bias.value;
            push(format!("hidden.{i}.weight"), w.shape(), w.data());
            push(format!("hidden.{i}.bias"), b.shape(), b.data());
            if let Some(norm) = &layer.norm {
                for (k, s) in norm.states().into_iter().enumerate() {
                    let tag = if k == 0 { "norm" } else { "norm_noise" };
                    let d = [s.channels()];
                    push(format!("hidden.{i}.{tag}.gamma"), &d, s.gamma.value.data());
                    push(format!("hidden.{i}.{tag}.beta"), &d, s.beta.value.data());
                    push(format!("hidden.{i}.{tag}.running_mean"), &d, &s.running_mean);
                    push(format!("hidden.{i}.{tag}.running_var"), &d, &s.running_var);
                }
            }
        }
        push("output.weight".into(), self.output.weights.value.shape(), self.output.weights.value.data());
        push("output.bias".into(), self.output.bias.value.shape(), self.output.bias.value.data());
        out
    }

    /// Restores tensors produced by [`Mlp::state_tensors`] of an identically
    /// configured model.
    pub fn load_state_tensors(&mut self, tensors: &[NamedTensor<T>]) -> Result<()> {
        let expected = self.state_tensors();
        if expected.len() != tensors.len() {
            return Err(Error::invalid(format!("expected {} state tensors, got {}", expected.len(), tensors.len())));
        }
        for (e, t) in expected.iter().zip(tensors) {
            if e.name != t.name || e.shape != t.shape || t.data.len() != e.data.len() {
                return Err(Error::invalid(format!("state tensor {} does not match {}{:?}", t.name, e.name, e.shape)));
            }
        }
        let mut it = tensors.iter().map(|t| t.data.as_slice());
        let mut next = || it.next().expect("length checked");
        for layer in &mut self.hidden {
            layer.linear.weights.value.data_mut().copy_from_slice(next());
            layer.linear.bias.value.data_mut().copy_from_slice(next());
            if let Some(norm) = &mut layer.norm {
                for s in norm.states_mut() {
                    s.gamma.value.data_mut().copy_from_slice(next());
                    s.beta.value.data_mut().copy_from_slice(next());
                    s.running_mean.copy_from_slice(next());
                    s.running_var.copy_from_slice(next());
                }
            }
        }
        self.output.weights.value.data_mut().copy_from_slice(next());
        self.output.bias.value.data_mut().copy_from_slice(next());
        Ok(())
    }

    /// SHA-256 over every state tensor, for detecting mutation.
    pub fn state_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for t in self.state_tensors() {
            h.update(t.name.as_bytes());
            let mut buf = Vec::with_capacity(t.data.len() * 8);
            for v in &t.data {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finalize().into()
    }
}
