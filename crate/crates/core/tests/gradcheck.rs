//! Backward passes against central finite differences in double precision.

use noisebalance::gradcheck::{central_difference, relative_error, DEFAULT_STEP};
use noisebalance::layers::{
    linear_backward, linear_forward, relu_backward, relu_forward, softmax_cross_entropy, LayerParams,
};
use noisebalance::model::{Mlp, ModelConfig};
use noisebalance::norm::{
    AuxBatchNorm, AuxBnState, BatchNorm, BatchNormState, DarBatchNorm, Mode, NoiseMask, NormVariant,
};
use noisebalance::{Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const SEEDS: u64 = 32;
const FLOOR: f64 = 1e-8;

fn randn(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect()
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// 2-D or 4-D input shape with a batch of `n`.
fn random_shape(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let c = rng.random_range(1..4);
    if rng.random::<bool>() {
        vec![n, c]
    } else {
        vec![n, c, rng.random_range(1..3), rng.random_range(1..3)]
    }
}

/// A mask with at least two rows in each split.
fn mixed_mask(rng: &mut ChaCha8Rng, n: usize) -> NoiseMask {
    assert!(n >= 4);
    loop {
        let flags: Vec<bool> = (0..n).map(|_| rng.random::<bool>()).collect();
        let noise = flags.iter().filter(|&&f| f).count();
        if noise >= 2 && n - noise >= 2 {
            return NoiseMask::new(flags);
        }
    }
}

fn probe_loss(y: &Tensor<f64>, u: &[f64]) -> f64 {
    y.data().iter().zip(u).map(|(a, b)| a * b).sum()
}

/// Rows of a `N×…` upstream tensor zeroed where `keep` is false.
fn mask_rows(u: &[f64], row_len: usize, keep: impl Fn(usize) -> bool) -> Vec<f64> {
    u.chunks(row_len)
        .enumerate()
        .flat_map(|(r, row)| if keep(r) { row.to_vec() } else { vec![0.0; row.len()] })
        .collect()
}

fn random_state(rng: &mut ChaCha8Rng, channels: usize) -> BatchNormState<f64> {
    let mut s = BatchNormState::new(channels);
    s.gamma.value = tensor(&[channels], (0..channels).map(|_| rng.random_range(0.5..2.0)).collect());
    s.beta.value = tensor(&[channels], randn(rng, channels, 1.0));
    s
}

#[test]
fn linear_relu_and_cross_entropy() {
    let mut checked = 0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, din, dout) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(2..5));
        let mut params = LayerParams::new(
            tensor(&[din, dout], randn(&mut rng, din * dout, 1.0)),
            tensor(&[dout], randn(&mut rng, dout, 1.0)),
        )
        .unwrap();
        let mut xs = randn(&mut rng, n * din, 2.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..dout)).collect();
        // loss = CE(relu(x W + b)); keep pre-activations away from the kink
        let loss = |x: &[f64], p: &LayerParams<f64>| {
            let z = linear_forward(&tensor(&[n, din], x.to_vec()), p).unwrap();
            softmax_cross_entropy(&relu_forward(&z), &labels).unwrap().0
        };
        let x = tensor(&[n, din], xs.clone());
        let z = linear_forward(&x, &params).unwrap();
        if z.data().iter().any(|v| v.abs() < 1e-3) {
            continue;
        }
        let (_, dlogits) = softmax_cross_entropy(&relu_forward(&z), &labels).unwrap();
        let dz = relu_backward(&z, &dlogits).unwrap();
        let dx = linear_backward(&x, &mut params, &dz).unwrap();

        let fd_x = central_difference(&mut xs, DEFAULT_STEP, |v| loss(v, &params));
        assert!(relative_error(dx.data(), &fd_x, FLOOR) <= TOL, "seed {seed}: dx");

        let mut w = params.weights.value.data().to_vec();
        let fd_w = central_difference(&mut w, DEFAULT_STEP, |v| {
            let mut p = params.clone();
            p.weights.value = tensor(&[din, dout], v.to_vec());
            loss(x.data(), &p)
        });
        assert!(relative_error(params.weights.grad.data(), &fd_w, FLOOR) <= TOL, "seed {seed}: dW");

        let mut b = params.bias.value.data().to_vec();
        let fd_b = central_difference(&mut b, DEFAULT_STEP, |v| {
            let mut p = params.clone();
            p.bias.value = tensor(&[dout], v.to_vec());
            loss(x.data(), &p)
        });
        assert!(relative_error(params.bias.grad.data(), &fd_b, FLOOR) <= TOL, "seed {seed}: db");
        checked += 1;
    }
    assert!(checked >= 20, "only {checked} seeds away from the ReLU kink");
}

#[test]
fn standard_bn() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n = rng.random_range(2..8);
        let shape = random_shape(&mut rng, n);
        let len: usize = shape.iter().product();
        let mut xs = randn(&mut rng, len, 3.0);
        let u = randn(&mut rng, len, 1.0);
        let state = random_state(&mut rng, shape[1]);

        let mut bn = BatchNorm::new(state.clone());
        bn.forward(&tensor(&shape, xs.clone()), Mode::Train).unwrap();
        let dx = bn.backward(&tensor(&shape, u.clone())).unwrap();

        let eval = |x: &[f64], s: &BatchNormState<f64>| {
            let mut b = BatchNorm::new(s.clone());
            probe_loss(&b.forward(&tensor(&shape, x.to_vec()), Mode::Train).unwrap(), &u)
        };
        let fd = central_difference(&mut xs, DEFAULT_STEP, |v| eval(v, &state));
        assert!(relative_error(dx.data(), &fd, FLOOR) <= TOL, "seed {seed}: dx");
        let fd_g = affine_fd(&state, true, |s| eval(&xs, s));
        let fd_b = affine_fd(&state, false, |s| eval(&xs, s));
        assert!(relative_error(bn.state.gamma.grad.data(), &fd_g, FLOOR) <= TOL, "seed {seed}: dgamma");
        assert!(relative_error(bn.state.beta.grad.data(), &fd_b, FLOOR) <= TOL, "seed {seed}: dbeta");
    }
}

/// Finite differences of `f` with respect to gamma (or beta) of `state`.
fn affine_fd(state: &BatchNormState<f64>, gamma: bool, f: impl Fn(&BatchNormState<f64>) -> f64) -> Vec<f64> {
    let mut v = if gamma { state.gamma.value.data().to_vec() } else { state.beta.value.data().to_vec() };
    let c = v.len();
    central_difference(&mut v, DEFAULT_STEP, |p| {
        let mut s = state.clone();
        let t = tensor(&[c], p.to_vec());
        if gamma {
            s.gamma.value = t;
        } else {
            s.beta.value = t;
        }
        f(&s)
    })
}

#[test]
fn dar_bn_mixed_masks() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = rng.random_range(4..9);
        let shape = random_shape(&mut rng, n);
        let len: usize = shape.iter().product();
        let row = len / n;
        let mut xs = randn(&mut rng, len, 3.0);
        let u = randn(&mut rng, len, 1.0);
        let mask = mixed_mask(&mut rng, n);
        let state = random_state(&mut rng, shape[1]);

        let mut bn = DarBatchNorm::new(state.clone());
        bn.forward(&tensor(&shape, xs.clone()), &mask, Mode::Train).unwrap();
        let dx = bn.backward(&tensor(&shape, u.clone())).unwrap();

        let eval = |x: &[f64], s: &BatchNormState<f64>, up: &[f64]| {
            let mut b = DarBatchNorm::new(s.clone());
            probe_loss(&b.forward(&tensor(&shape, x.to_vec()), &mask, Mode::Train).unwrap(), up)
        };
        // input gradients are exact through both splits
        let fd = central_difference(&mut xs, DEFAULT_STEP, |v| eval(v, &state, &u));
        assert!(relative_error(dx.data(), &fd, FLOOR) <= TOL, "seed {seed}: dx");
        // affine gradients see only the natural rows' share of the loss
        let u_nat = mask_rows(&u, row, |r| !mask.is_noise(r));
        let fd_g = affine_fd(&state, true, |s| eval(&xs, s, &u_nat));
        let fd_b = affine_fd(&state, false, |s| eval(&xs, s, &u_nat));
        assert!(relative_error(bn.state.gamma.grad.data(), &fd_g, FLOOR) <= TOL, "seed {seed}: dgamma");
        assert!(relative_error(bn.state.beta.grad.data(), &fd_b, FLOOR) <= TOL, "seed {seed}: dbeta");
    }
}

#[test]
fn aux_bn_mixed_masks() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let n = rng.random_range(4..9);
        let shape = random_shape(&mut rng, n);
        let len: usize = shape.iter().product();
        let mut xs = randn(&mut rng, len, 3.0);
        let u = randn(&mut rng, len, 1.0);
        let mask = mixed_mask(&mut rng, n);
        let state = AuxBnState { natural: random_state(&mut rng, shape[1]), noise: random_state(&mut rng, shape[1]) };

        let mut bn = AuxBatchNorm::new(state.clone());
        bn.forward(&tensor(&shape, xs.clone()), &mask, Mode::Train).unwrap();
        let dx = bn.backward(&tensor(&shape, u.clone())).unwrap();

        let eval = |x: &[f64], s: &AuxBnState<f64>| {
            let mut b = AuxBatchNorm::new(s.clone());
            probe_loss(&b.forward(&tensor(&shape, x.to_vec()), &mask, Mode::Train).unwrap(), &u)
        };
        let fd = central_difference(&mut xs, DEFAULT_STEP, |v| eval(v, &state));
        assert!(relative_error(dx.data(), &fd, FLOOR) <= TOL, "seed {seed}: dx");
        for noise in [false, false, true, true] {
            let pick = |s: &AuxBnState<f64>| if noise { s.noise.clone() } else { s.natural.clone() };
            let put = |s: &BatchNormState<f64>| {
                let mut all = state.clone();
                *(if noise { &mut all.noise } else { &mut all.natural }) = s.clone();
                eval(&xs, &all)
            };
            let got = pick(&bn.state);
            let fd_g = affine_fd(&pick(&state), true, put);
            let fd_b = affine_fd(&pick(&state), false, put);
            assert!(relative_error(got.gamma.grad.data(), &fd_g, FLOOR) <= TOL, "seed {seed}: dgamma noise={noise}");
            assert!(relative_error(got.beta.grad.data(), &fd_b, FLOOR) <= TOL, "seed {seed}: dbeta noise={noise}");
        }
    }
}

/// Mean cross-entropy over the rows selected by `keep`, divided by the full
/// batch size; computed directly from the logits.
fn ce_oracle(logits: &Tensor<f64>, labels: &[usize], keep: impl Fn(usize) -> bool) -> f64 {
    let n = labels.len();
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        if !keep(r) {
            continue;
        }
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / n as f64
}

/// (param index, is a DAR affine parameter) in `params_mut` order.
fn param_roles(variant: NormVariant, hidden: usize) -> Vec<bool> {
    let norm_params = match variant {
        NormVariant::None => 0,
        NormVariant::StandardBn | NormVariant::DarBn => 2,
        NormVariant::AuxBn => 4,
    };
    let mut roles = Vec::new();
    for _ in 0..hidden {
        roles.extend([false, false]);
        roles.extend(std::iter::repeat_n(variant == NormVariant::DarBn, norm_params));
    }
    roles.extend([false, false]);
    roles
}

#[test]
fn whole_mlp() {
    let variants = [NormVariant::None, NormVariant::StandardBn, NormVariant::DarBn, NormVariant::AuxBn];
    let mut checked = [0usize; 4];
    for seed in 0..SEEDS {
        for (vi, variant) in variants.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let n = 6;
            let cfg = ModelConfig {
                input_dim: 5,
                hidden_dims: vec![4, 3],
                num_classes: 3,
                norm_variant: variant,
                precision: Precision::F64,
            };
            let mut model = Mlp::<f64>::new(cfg, seed).unwrap();
            // move the norm affine parameters off their identity init
            for p in model.params_mut() {
                if p.value.ndim() == 1 {
                    let v: Vec<f64> = p.value.data().iter().map(|b| b + rng.random_range(-0.5..0.5)).collect();
                    p.value = tensor(&[v.len()], v);
                }
            }
            let mut xs = randn(&mut rng, n * 5, 1.0);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            let mask = if variant == NormVariant::None || variant == NormVariant::StandardBn {
                NoiseMask::all_natural(n)
            } else {
                mixed_mask(&mut rng, n)
            };

            let loss_of = |m: &Mlp<f64>, x: &[f64], natural_only: bool| {
                let mut m = m.clone();
                let logits = m.forward(&tensor(&[n, 5], x.to_vec()), &mask, Mode::Train).unwrap();
                ce_oracle(&logits, &labels, |r| !natural_only || !mask.is_noise(r))
            };

            let mut trained = model.clone();
            trained.zero_grad();
            let logits = trained.forward(&tensor(&[n, 5], xs.clone()), &mask, Mode::Train).unwrap();
            let (_, dlogits) = softmax_cross_entropy(&logits, &labels).unwrap();
            let dx = trained.backward(&dlogits).unwrap();

            // skip draws that land next to a ReLU kink
            let fd_x = central_difference(&mut xs, DEFAULT_STEP, |v| loss_of(&model, v, false));
            let fd_x_coarse = central_difference(&mut xs, 1e-3, |v| loss_of(&model, v, false));
            if relative_error(&fd_x, &fd_x_coarse, FLOOR) > 1e-3 {
                continue;
            }
            assert!(relative_error(dx.data(), &fd_x, FLOOR) <= TOL, "{variant:?} seed {seed}: dx");

            let roles = param_roles(variant, 2);
            let grads: Vec<Vec<f64>> = trained.params_mut().iter().map(|p| p.grad.data().to_vec()).collect();
            assert_eq!(grads.len(), roles.len());
            for (i, natural_only) in roles.into_iter().enumerate() {
                let mut values = model.params_mut()[i].value.data().to_vec();
                let shape = model.params_mut()[i].value.shape().to_vec();
                let fd = central_difference(&mut values, DEFAULT_STEP, |v| {
                    let mut m = model.clone();
                    m.params_mut()[i].value = tensor(&shape, v.to_vec());
                    loss_of(&m, &xs, natural_only)
                });
                assert!(
                    relative_error(&grads[i], &fd, FLOOR) <= TOL,
                    "{variant:?} seed {seed}: param {i} ({:e})",
                    relative_error(&grads[i], &fd, FLOOR)
                );
            }
            checked[vi] += 1;
        }
    }
    assert!(checked.iter().all(|&c| c >= 20), "seeds checked per variant: {checked:?}");
}
