//! Linear, ReLU and softmax cross-entropy with explicit backward passes.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::optim::Param;
use crate::scalar::Scalar;
use crate::tensor::{accumulate_transpose_a, matmul_bias, matmul_transpose_b, Tensor};

/// Weights (`din×dout`) and bias (`dout`) of a fully connected layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub weights: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weights.ndim() != 2 || bias.ndim() != 1 || bias.len() != weights.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "linear params",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weights: Param::new(weights), bias: Param::new(bias) })
    }

    /// Uniform `[-a, a]` weights with `a = gain / sqrt(fan_in)`, zero bias.
    pub fn init_uniform<R: Rng + ?Sized>(din: usize, dout: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain / (din as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = (0..din * dout).map(|_| T::from_f64(dist.sample(rng))).collect();
        Self {
            weights: Param::new(Tensor::new(vec![din, dout], w).expect("consistent shape")),
            bias: Param::new(Tensor::zeros(&[dout])),
        }
    }

    pub fn din(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn dout(&self) -> usize {
        self.weights.value.shape()[1]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weights, &mut self.bias]
    }

    pub fn zero_grad(&mut self) {
        self.weights.zero_grad();
        self.bias.zero_grad();
    }
}

fn check_linear_input<T: Scalar>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<()> {
    if x.ndim() != 2 || x.shape()[1] != p.din() {
        return Err(Error::ShapeMismatch {
            op: "linear_forward",
            left: x.shape().to_vec(),
            right: p.weights.value.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn linear_forward<T: Scalar>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<Tensor<T>> {
    linear_forward_with(Exec::default(), x, p)
}

pub fn linear_forward_with<T: Scalar>(exec: Exec, x: &Tensor<T>, p: &LayerParams<T>) -> Result<Tensor<T>> {
    check_linear_input(x, p)?;
    let (n, din, dout) = (x.batch(), p.din(), p.dout());
    let out = matmul_bias(exec, x.data(), p.weights.value.data(), p.bias.value.data(), n, din, dout);
    Tensor::new(vec![n, dout], out)
}

/// Returns `dL/dx` and accumulates `dL/dW`, `dL/db` into `p`.
pub fn linear_backward<T: Scalar>(x: &Tensor<T>, p: &mut LayerParams<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    linear_backward_with(Exec::default(), x, p, upstream)
}

pub fn linear_backward_with<T: Scalar>(
    exec: Exec,
    x: &Tensor<T>,
    p: &mut LayerParams<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>> {
    check_linear_input(x, p)?;
    let (n, din, dout) = (x.batch(), p.din(), p.dout());
    if upstream.shape() != [n, dout] {
        return Err(Error::ShapeMismatch {
            op: "linear_backward",
            left: upstream.shape().to_vec(),
            right: vec![n, dout],
        });
    }
    let up = upstream.data();
    accumulate_transpose_a(exec, p.weights.grad.data_mut(), x.data(), up, n, din, dout);
    let gb = p.bias.grad.data_mut();
    for r in 0..n {
        for (g, &u) in gb.iter_mut().zip(&up[r * dout..(r + 1) * dout]) {
            *g = *g + u;
        }
    }
    let dx = matmul_transpose_b(exec, up, p.weights.value.data(), n, din, dout);
    Tensor::new(vec![n, din], dx)
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    out
}

/// Passes `upstream` where `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    x.check_same_shape(upstream, "relu_backward")?;
    let mut dx = upstream.clone();
    for (d, &xi) in dx.data_mut().iter_mut().zip(x.data()) {
        if xi <= T::zero() {
            *d = T::zero();
        }
    }
    Ok(dx)
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    if logits.ndim() != 2 || logits.batch() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    let (n, c) = (logits.batch(), logits.shape()[1]);
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!("label {bad} out of range for {c} classes")));
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = vec![T::zero(); n * c];
    let mut loss = T::zero();
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let g = &mut grad[r * c..(r + 1) * c];
        let mut sum = T::zero();
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp();
            sum = sum + *gi;
        }
        loss = loss + (sum.ln() - (row[y] - max));
        for gi in g.iter_mut() {
            *gi = *gi / sum * inv_n;
        }
        g[y] = g[y] - inv_n;
    }
    Ok((loss * inv_n, Tensor::new(vec![n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn linear_identity_and_hand_cases() {
        let p = LayerParams::new(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(linear_forward(&t(&[1, 2], &[1.0, 2.0]), &p).unwrap().data(), &[1.0, 2.0]);

        let p = LayerParams::new(t(&[2, 1], &[1.0, -1.0]), t(&[1], &[0.5])).unwrap();
        assert_eq!(linear_forward(&t(&[1, 2], &[1.0, 1.0]), &p).unwrap().data(), &[0.5]);

        let p =
            LayerParams::new(t(&[4, 2], &[0.3, -2.0, 1.0, 4.0, 5.0, 6.0, -7.0, 8.0]), t(&[2], &[1.5, -2.5])).unwrap();
        let out = linear_forward(&Tensor::zeros(&[3, 4]), &p).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), &[1.5, -2.5]);
        }
    }

    #[test]
    fn linear_shape_errors_name_both_shapes() {
        let p = LayerParams::new(t(&[2, 1], &[1.0, -1.0]), t(&[1], &[0.5])).unwrap();
        let err = linear_forward(&t(&[1, 3], &[1.0, 1.0, 1.0]), &p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 1]"), "{msg}");
        assert!(LayerParams::new(t(&[2, 2], &[0.0; 4]), t(&[3], &[0.0; 3])).is_err());
    }

    #[test]
    fn linear_backward_scalar_chain_rule() {
        let mut p = LayerParams::new(t(&[1, 1], &[3.0]), t(&[1], &[0.0])).unwrap();
        let dx = linear_backward(&t(&[1, 1], &[2.0]), &mut p, &t(&[1, 1], &[1.0])).unwrap();
        assert_eq!(dx.data(), &[3.0]);
        assert_eq!(p.weights.grad.data(), &[2.0]);
        assert_eq!(p.bias.grad.data(), &[1.0]);
    }

    #[test]
    fn linear_backward_zero_upstream() {
        let mut p = LayerParams::new(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]), t(&[2], &[0.0, 0.0])).unwrap();
        let dx = linear_backward(&t(&[1, 2], &[5.0, 6.0]), &mut p, &Tensor::zeros(&[1, 2])).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!(p.weights.grad.data().iter().all(|&v| v == 0.0));
        assert!(p.bias.grad.data().iter().all(|&v| v == 0.0));
        assert!(linear_backward(&t(&[1, 2], &[5.0, 6.0]), &mut p, &Tensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu_forward(&t(&[3], &[-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let dx = relu_backward(&t(&[2], &[-1.0, 2.0]), &t(&[2], &[5.0, 5.0])).unwrap();
        assert_eq!(dx.data(), &[0.0, 5.0]);
        assert_eq!(relu_backward(&t(&[1], &[0.0]), &t(&[1], &[1.0])).unwrap().data(), &[0.0]);
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, _) = softmax_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let (loss, g) = softmax_cross_entropy(&t(&[1, 2], &[1000.0, 0.0]), &[0]).unwrap();
        assert!(loss.abs() < 1e-12 && loss.is_finite());
        assert!(g.all_finite());
        assert!(softmax_cross_entropy(&t(&[1, 2], &[0.0, 0.0]), &[2]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let logits = t(&[2, 3], &[0.3, -1.0, 2.0, 5.0, 5.0, -5.0]);
        let (_, g) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        for r in 0..2 {
            assert!(g.row(r).iter().sum::<f64>().abs() < 1e-15);
        }
    }
}
