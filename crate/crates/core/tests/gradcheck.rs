//! Backprop gradients against central finite differences of the forward pass.

use mohqa_core::dqn::{body_layers, QNetwork, OBS_SHAPE};
use mohqa_core::nn::{LayerSpec, Network, Shape};
use mohqa_core::rng::{stream_rng, Rng};
use rand::Rng as _;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that gradients which are zero up to rounding are
/// compared in absolute terms.
const FLOOR: f64 = 1e-6;

/// Scalar probe loss `Σ c_k · out_k`.
fn probe_loss(net: &Network, input: &[f64], batch: usize, coeffs: &[f64]) -> f64 {
    let acts = net.forward(input, batch).unwrap();
    acts.output().iter().zip(coeffs).map(|(o, c)| o * c).sum()
}

fn finite_difference(net: &Network, input: &[f64], batch: usize, coeffs: &[f64]) -> Vec<f64> {
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut grads = Vec::with_capacity(base.len());
    let mut params = base.clone();
    for i in 0..base.len() {
        params[i] = base[i] + STEP;
        probe.set_flat_params(&params).unwrap();
        let plus = probe_loss(&probe, input, batch, coeffs);
        params[i] = base[i] - STEP;
        probe.set_flat_params(&params).unwrap();
        let minus = probe_loss(&probe, input, batch, coeffs);
        params[i] = base[i];
        grads.push((plus - minus) / (2.0 * STEP));
    }
    grads
}

/// True when every ReLU input sits far enough from the kink that a
/// parameter perturbation of `STEP` cannot cross it.
fn away_from_kinks(net: &Network, input: &[f64], batch: usize) -> bool {
    let acts = net.forward(input, batch).unwrap();
    let specs = net.layer_specs();
    (1..specs.len())
        .filter(|&i| specs[i] == LayerSpec::Relu)
        .all(|i| acts.layer_output(i - 1).iter().all(|v| v.abs() > 1e-3))
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn max_relative_error(net: &Network, rng: &mut Rng, batch: usize) -> f64 {
    let in_len = net.input_shape().len();
    let input = loop {
        let x = random_vec(rng, batch * in_len);
        if away_from_kinks(net, &x, batch) {
            break x;
        }
    };
    let coeffs = random_vec(rng, batch * net.output_shape().len());
    let analytic = net.backward(&net.forward(&input, batch).unwrap(), &coeffs).unwrap().tape.flat();
    let numeric = finite_difference(net, &input, batch, &coeffs);
    analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)).fold(0.0, f64::max)
}

fn randomize_biases(net: &mut Network, rng: &mut Rng) {
    let params: Vec<f64> =
        net.flat_params().iter().map(|&p| if p == 0.0 { rng.random_range(-0.3..0.3) } else { p }).collect();
    net.set_flat_params(&params).unwrap();
}

fn check(input: Shape, specs: &[LayerSpec], seed: u64, batch: usize) {
    let mut rng = stream_rng(seed, 99);
    let mut net = Network::new(input, specs, &mut rng).unwrap();
    randomize_biases(&mut net, &mut rng);
    let err = max_relative_error(&net, &mut rng, batch);
    assert!(err < TOLERANCE, "{specs:?}: max relative error {err:e}");
}

#[test]
fn dense_layer() {
    for seed in 0..5 {
        check(Shape::flat(5), &[LayerSpec::Dense { out_dim: 4 }], seed, 3);
    }
}

#[test]
fn conv_layer_stride_one_and_two() {
    for seed in 0..5 {
        check(Shape::new(2, 6, 6), &[LayerSpec::Conv2d { out_channels: 3, kernel: 3, stride: 1 }], seed, 2);
        check(Shape::new(2, 7, 7), &[LayerSpec::Conv2d { out_channels: 3, kernel: 3, stride: 2 }], seed, 2);
    }
}

#[test]
fn relu_and_flatten_layers() {
    for seed in 0..5 {
        check(
            Shape::flat(6),
            &[LayerSpec::Dense { out_dim: 5 }, LayerSpec::Relu, LayerSpec::Dense { out_dim: 2 }],
            seed,
            3,
        );
        check(
            Shape::new(1, 5, 5),
            &[
                LayerSpec::Conv2d { out_channels: 2, kernel: 2, stride: 1 },
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: 3 },
            ],
            seed,
            2,
        );
    }
}

#[test]
fn dqn_body_composed() {
    check(OBS_SHAPE, &body_layers(), 7, 1);
}

#[test]
fn full_q_network() {
    let mut rng = stream_rng(3, 99);
    let q = QNetwork::new(3, &mut rng).unwrap();
    let mut net = q.network().clone();
    randomize_biases(&mut net, &mut rng);
    let err = max_relative_error(&net, &mut rng, 2);
    assert!(err < TOLERANCE, "max relative error {err:e}");
}
