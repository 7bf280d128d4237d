//! Minimal differentiable network stack: 2-D valid convolution, dense
//! layers, ReLU and flatten, all in f64 with batched forward and backward
//! passes.
//!
//! Tensors are flat `Vec<f64>` buffers. A batch is `batch` samples laid out
//! back to back, each sample in channel-major `C × H × W` order.

mod gemm;
mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng as _;

use crate::rng::Rng;
use crate::{Error, Result};
use gemm::{gemm, View};

pub use optim::{Optimizer, OptimizerKind, UpdateStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub const fn flat(len: usize) -> Self {
        Self::new(len, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerSpec {
    /// Valid (unpadded) convolution with a square kernel.
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Flatten,
    Dense {
        out_dim: usize,
    },
}

#[derive(Debug, Clone)]
struct Layer {
    spec: LayerSpec,
    input: Shape,
    output: Shape,
    params: Vec<f64>,
}

impl Layer {
    fn new(spec: LayerSpec, input: Shape) -> Result<Self> {
        let (output, n_params) = match spec {
            LayerSpec::Conv2d { out_channels, kernel, stride } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::config(format!("degenerate conv layer {spec:?}")));
                }
                if kernel > input.height || kernel > input.width {
                    return Err(Error::config(format!("kernel {kernel} larger than input {input:?}")));
                }
                let out =
                    Shape::new(out_channels, (input.height - kernel) / stride + 1, (input.width - kernel) / stride + 1);
                (out, out_channels * input.channels * kernel * kernel + out_channels)
            }
            LayerSpec::Relu => (input, 0),
            LayerSpec::Flatten => (Shape::flat(input.len()), 0),
            LayerSpec::Dense { out_dim } => {
                if out_dim == 0 {
                    return Err(Error::config("dense layer with zero outputs"));
                }
                (Shape::flat(out_dim), out_dim * input.len() + out_dim)
            }
        };
        Ok(Self { spec, input, output, params: vec![0.0; n_params] })
    }

    fn fan_in(&self) -> usize {
        match self.spec {
            LayerSpec::Conv2d { kernel, .. } => self.input.channels * kernel * kernel,
            LayerSpec::Dense { .. } => self.input.len(),
            _ => 0,
        }
    }

    /// Number of leading entries of `params` that are weights (the rest are biases).
    fn weight_count(&self) -> usize {
        match self.spec {
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => self.params.len() - self.output.channels,
            _ => 0,
        }
    }
}

static NEXT_NETWORK_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_NETWORK_ID.fetch_add(1, Ordering::Relaxed)
}

/// An ordered stack of layers with their parameters.
///
/// Each instance carries an identity and a parameter version; activations
/// remember both so that a backward pass against the wrong network or
/// against parameters changed since the forward pass is rejected.
#[derive(Debug)]
pub struct Network {
    input: Shape,
    layers: Vec<Layer>,
    id: u64,
    version: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Self { input: self.input, layers: self.layers.clone(), id: fresh_id(), version: 0 }
    }
}

impl PartialEq for Network {
    /// Structural equality: same input shape, layer specs and parameter bits.
    fn eq(&self, other: &Self) -> bool {
        self.input == other.input
            && self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                a.spec == b.spec && a.params.iter().map(|v| v.to_bits()).eq(b.params.iter().map(|v| v.to_bits()))
            })
    }
}

impl Network {
    /// Network with all parameters zero.
    pub fn zeros(input: Shape, specs: &[LayerSpec]) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::config("network input shape is empty"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input;
        for &spec in specs {
            let layer = Layer::new(spec, shape)?;
            shape = layer.output;
            layers.push(layer);
        }
        Ok(Self { input, layers, id: fresh_id(), version: 0 })
    }

    /// He-style uniform initialisation: weights in `±sqrt(6 / fan_in)`,
    /// biases zero.
    pub fn new(input: Shape, specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(input, specs)?;
        for layer in &mut net.layers {
            let fan_in = layer.fan_in();
            if fan_in == 0 {
                continue;
            }
            let bound = (6.0 / fan_in as f64).sqrt();
            let nw = layer.weight_count();
            for w in &mut layer.params[..nw] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_shape(&self) -> Shape {
        self.layers.last().map_or(self.input, |l| l.output)
    }

    pub fn layer_output_shape(&self, layer: usize) -> Shape {
        self.layers[layer].output
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.len()).sum()
    }

    pub fn params(&self, layer: usize) -> &[f64] {
        &self.layers[layer].params
    }

    pub fn params_mut(&mut self, layer: usize) -> &mut [f64] {
        self.version += 1;
        &mut self.layers[layer].params
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::usage(format!("expected {} parameters, got {}", self.param_count(), values.len())));
        }
        let mut rest = values;
        for layer in &mut self.layers {
            let (head, tail) = rest.split_at(layer.params.len());
            layer.params.copy_from_slice(head);
            rest = tail;
        }
        self.version += 1;
        Ok(())
    }

    /// Copies every parameter of `other` into `self`; architectures must match.
    pub fn copy_params_from(&mut self, other: &Network) -> Result<()> {
        if self.input != other.input || self.layer_specs() != other.layer_specs() {
            return Err(Error::usage("cannot copy parameters between different architectures"));
        }
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.params.copy_from_slice(&src.params);
        }
        self.version += 1;
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.params.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Activations> {
        if batch == 0 || input.len() != batch * self.input.len() {
            return Err(Error::usage(format!(
                "input of length {} does not match batch {batch} × {:?}",
                input.len(),
                self.input
            )));
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut cols = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x: &[f64] = if i == 0 { input } else { &outputs[i - 1] };
            let (y, c) = layer_forward(layer, x, batch);
            outputs.push(y);
            cols.push(c);
        }
        Ok(Activations { batch, net_id: self.id, version: self.version, input: input.to_vec(), outputs, cols })
    }

    /// Gradients of a scalar loss given `d loss / d output` for every output
    /// element of the batch. Parameter gradients are summed over the batch.
    pub fn backward(&self, acts: &Activations, output_grad: &[f64]) -> Result<Backward> {
        if acts.net_id != self.id || acts.version != self.version {
            return Err(Error::usage("activations are stale or came from a different network"));
        }
        let batch = acts.batch;
        if output_grad.len() != batch * self.output_shape().len() {
            return Err(Error::usage(format!(
                "output gradient of length {} does not match batch {batch} × {:?}",
                output_grad.len(),
                self.output_shape()
            )));
        }
        let mut tape = GradientTape::zeros_for(self);
        let mut grad = output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let x: &[f64] = if i == 0 { &acts.input } else { &acts.outputs[i - 1] };
            grad =
                layer_backward(&self.layers[i], x, &acts.outputs[i], &acts.cols[i], &grad, batch, &mut tape.grads[i]);
        }
        Ok(Backward { tape, input_grad: grad })
    }
}

/// Cached per-layer results of a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    batch: usize,
    net_id: u64,
    version: u64,
    input: Vec<f64>,
    outputs: Vec<Vec<f64>>,
    cols: Vec<Vec<f64>>,
}

impl Activations {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn output(&self) -> &[f64] {
        self.outputs.last().map_or(&self.input, |o| o)
    }

    pub fn layer_output(&self, layer: usize) -> &[f64] {
        &self.outputs[layer]
    }
}

/// Per-layer parameter gradients aligned with [`Network`] layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    grads: Vec<Vec<f64>>,
}

impl GradientTape {
    pub fn zeros_for(net: &Network) -> Self {
        Self { grads: net.layers.iter().map(|l| vec![0.0; l.params.len()]).collect() }
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.grads[layer]
    }

    pub fn num_layers(&self) -> usize {
        self.grads.len()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.grads.iter().flatten().copied().collect()
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.is_finite())
    }

    pub fn matches(&self, net: &Network) -> bool {
        self.grads.len() == net.layers.len()
            && self.grads.iter().zip(&net.layers).all(|(g, l)| g.len() == l.params.len())
    }

    /// Tape whose flat layout follows `net` and whose values come from `flat`.
    pub fn from_flat(net: &Network, flat: &[f64]) -> Result<Self> {
        if flat.len() != net.param_count() {
            return Err(Error::usage("flat gradient length does not match network"));
        }
        let mut rest = flat;
        let grads = net
            .layers
            .iter()
            .map(|l| {
                let (head, tail) = rest.split_at(l.params.len());
                rest = tail;
                head.to_vec()
            })
            .collect();
        Ok(Self { grads })
    }
}

#[derive(Debug, Clone)]
pub struct Backward {
    pub tape: GradientTape,
    /// Gradient with respect to the network input, same layout as the input.
    pub input_grad: Vec<f64>,
}

fn layer_forward(layer: &Layer, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
    let in_len = layer.input.len();
    let out_len = layer.output.len();
    match layer.spec {
        LayerSpec::Conv2d { kernel, stride, .. } => {
            let k = layer.input.channels * kernel * kernel;
            let p = layer.output.height * layer.output.width;
            let cout = layer.output.channels;
            let (w, bias) = layer.params.split_at(cout * k);
            let mut cols = vec![0.0; batch * k * p];
            let mut y = vec![0.0; batch * out_len];
            for b in 0..batch {
                let cols_b = &mut cols[b * k * p..(b + 1) * k * p];
                im2col(&x[b * in_len..(b + 1) * in_len], layer.input, layer.output, kernel, stride, cols_b);
                let y_b = &mut y[b * out_len..(b + 1) * out_len];
                gemm(cout, k, p, View::row_major(w, k), View::row_major(cols_b, p), 0.0, y_b);
                for (row, &bo) in y_b.chunks_mut(p).zip(bias) {
                    row.iter_mut().for_each(|v| *v += bo);
                }
            }
            (y, cols)
        }
        LayerSpec::Dense { out_dim } => {
            let (w, bias) = layer.params.split_at(out_dim * in_len);
            let mut y = vec![0.0; batch * out_dim];
            gemm(batch, in_len, out_dim, View::row_major(x, in_len), View::transposed(w, in_len), 0.0, &mut y);
            for row in y.chunks_mut(out_dim) {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
            (y, Vec::new())
        }
        LayerSpec::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), Vec::new()),
        LayerSpec::Flatten => (x.to_vec(), Vec::new()),
    }
}

/// Accumulates parameter gradients into `grad_params` and returns the input gradient.
fn layer_backward(
    layer: &Layer,
    x: &[f64],
    y: &[f64],
    cols: &[f64],
    dy: &[f64],
    batch: usize,
    grad_params: &mut [f64],
) -> Vec<f64> {
    let in_len = layer.input.len();
    let out_len = layer.output.len();
    match layer.spec {
        LayerSpec::Conv2d { kernel, stride, .. } => {
            let k = layer.input.channels * kernel * kernel;
            let p = layer.output.height * layer.output.width;
            let cout = layer.output.channels;
            let w = &layer.params[..cout * k];
            let (gw, gb) = grad_params.split_at_mut(cout * k);
            let mut dx = vec![0.0; batch * in_len];
            let mut dcols = vec![0.0; k * p];
            for b in 0..batch {
                let cols_b = &cols[b * k * p..(b + 1) * k * p];
                let dy_b = &dy[b * out_len..(b + 1) * out_len];
                gemm(cout, p, k, View::row_major(dy_b, p), View::transposed(cols_b, p), 1.0, gw);
                for (g, row) in gb.iter_mut().zip(dy_b.chunks(p)) {
                    *g += row.iter().sum::<f64>();
                }
                gemm(k, cout, p, View::transposed(w, k), View::row_major(dy_b, p), 0.0, &mut dcols);
                col2im(&dcols, layer.input, layer.output, kernel, stride, &mut dx[b * in_len..(b + 1) * in_len]);
            }
            dx
        }
        LayerSpec::Dense { out_dim } => {
            let w = &layer.params[..out_dim * in_len];
            let (gw, gb) = grad_params.split_at_mut(out_dim * in_len);
            gemm(out_dim, batch, in_len, View::transposed(dy, out_dim), View::row_major(x, in_len), 1.0, gw);
            for row in dy.chunks(out_dim) {
                gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
            }
            let mut dx = vec![0.0; batch * in_len];
            gemm(batch, out_dim, in_len, View::row_major(dy, out_dim), View::row_major(w, in_len), 0.0, &mut dx);
            dx
        }
        LayerSpec::Relu => dy.iter().zip(y).map(|(&d, &v)| if v > 0.0 { d } else { 0.0 }).collect(),
        LayerSpec::Flatten => dy.to_vec(),
    }
}

/// Unrolls kernel windows into a `(C·k·k) × (H_out·W_out)` matrix.
fn im2col(x: &[f64], input: Shape, output: Shape, kernel: usize, stride: usize, cols: &mut [f64]) {
    let p = output.height * output.width;
    let mut row = 0;
    for c in 0..input.channels {
        let plane = &x[c * input.height * input.width..(c + 1) * input.height * input.width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..output.height {
                    let src = &plane[(oy * stride + ky) * input.width + kx..];
                    for ox in 0..output.width {
                        dst[oy * output.width + ox] = src[ox * stride];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(cols: &[f64], input: Shape, output: Shape, kernel: usize, stride: usize, dx: &mut [f64]) {
    let p = output.height * output.width;
    let mut row = 0;
    for c in 0..input.channels {
        let plane = &mut dx[c * input.height * input.width..(c + 1) * input.height * input.width];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..output.height {
                    let base = (oy * stride + ky) * input.width + kx;
                    for ox in 0..output.width {
                        plane[base + ox * stride] += src[oy * output.width + ox];
                    }
                }
                row += 1;
            }
        }
    }
}

/// Mean squared error over all elements and its gradient `2 (p - t) / n`.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if prediction.len() != target.len() || prediction.is_empty() {
        return Err(Error::usage("mse_loss needs equal, non-empty inputs"));
    }
    let n = prediction.len() as f64;
    let loss = prediction.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let grad = prediction.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect();
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn identity_dense_passes_input_through() {
        let mut net = Network::zeros(Shape::flat(3), &[LayerSpec::Dense { out_dim: 3 }]).unwrap();
        let p = net.params_mut(0);
        for i in 0..3 {
            p[i * 3 + i] = 1.0;
        }
        let x = [0.3, -1.5, 2.0];
        assert_eq!(net.forward(&x, 1).unwrap().output(), &x);
    }

    #[test]
    fn all_ones_conv_sums_window() {
        let mut net =
            Network::zeros(Shape::new(1, 4, 4), &[LayerSpec::Conv2d { out_channels: 1, kernel: 3, stride: 1 }])
                .unwrap();
        net.params_mut(0)[..9].fill(1.0);
        let acts = net.forward(&[1.0; 16], 1).unwrap();
        assert_eq!(net.output_shape(), Shape::new(1, 2, 2));
        assert_eq!(acts.output(), &[9.0; 4]);
    }

    #[test]
    fn strided_conv_output_shape() {
        let net =
            Network::zeros(Shape::new(16, 10, 10), &[LayerSpec::Conv2d { out_channels: 32, kernel: 3, stride: 2 }])
                .unwrap();
        assert_eq!(net.output_shape(), Shape::new(32, 4, 4));
    }

    #[test]
    fn relu_clamps_negatives() {
        let net = Network::zeros(Shape::flat(3), &[LayerSpec::Relu]).unwrap();
        assert_eq!(net.forward(&[-1.0, 0.0, 2.0], 1).unwrap().output(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let net = Network::zeros(Shape::flat(3), &[LayerSpec::Dense { out_dim: 2 }]).unwrap();
        assert!(matches!(net.forward(&[1.0, 2.0], 1), Err(Error::Usage(_))));
        let acts = net.forward(&[1.0, 2.0, 3.0], 1).unwrap();
        assert!(matches!(net.backward(&acts, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn stale_activations_are_rejected() {
        let mut net = Network::zeros(Shape::flat(2), &[LayerSpec::Dense { out_dim: 1 }]).unwrap();
        let acts = net.forward(&[1.0, 2.0], 1).unwrap();
        let other = net.clone();
        assert!(matches!(other.backward(&acts, &[1.0]), Err(Error::Usage(_))));
        net.params_mut(0)[0] = 0.5;
        assert!(matches!(net.backward(&acts, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_output_gradient_gives_zero_tape() {
        let mut rng = stream_rng(1, 1);
        let net = Network::new(
            Shape::new(1, 6, 6),
            &[
                LayerSpec::Conv2d { out_channels: 2, kernel: 3, stride: 1 },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { out_dim: 2 },
            ],
            &mut rng,
        )
        .unwrap();
        let x: Vec<f64> = (0..72).map(|i| (i as f64 * 0.37).sin()).collect();
        let acts = net.forward(&x, 2).unwrap();
        let back = net.backward(&acts, &[0.0; 4]).unwrap();
        assert!(back.tape.flat().iter().all(|&g| g == 0.0));
        assert!(back.input_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batched_forward_equals_per_sample() {
        let mut rng = stream_rng(2, 1);
        let net = Network::new(
            Shape::new(1, 7, 7),
            &[
                LayerSpec::Conv2d { out_channels: 3, kernel: 3, stride: 2 },
                LayerSpec::Relu,
                LayerSpec::Dense { out_dim: 4 },
            ],
            &mut rng,
        )
        .unwrap();
        let x: Vec<f64> = (0..3 * 49).map(|i| (i as f64 * 0.11).cos()).collect();
        let all = net.forward(&x, 3).unwrap();
        for b in 0..3 {
            let one = net.forward(&x[b * 49..(b + 1) * 49], 1).unwrap();
            assert_eq!(one.output(), &all.output()[b * 4..(b + 1) * 4]);
        }
    }

    #[test]
    fn mse_gradient_is_two_residual_over_n() {
        let (loss, grad) = mse_loss(&[1.0, 3.0], &[0.0, 1.0]).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(grad, vec![1.0, 2.0]);
    }

    #[test]
    fn init_is_reproducible_and_bounded() {
        let specs = [LayerSpec::Dense { out_dim: 5 }];
        let a = Network::new(Shape::flat(6), &specs, &mut stream_rng(9, 10)).unwrap();
        let b = Network::new(Shape::flat(6), &specs, &mut stream_rng(9, 10)).unwrap();
        assert_eq!(a, b);
        let bound = (6.0f64 / 6.0).sqrt();
        assert!(a.params(0)[..30].iter().all(|w| w.abs() <= bound));
        assert!(a.params(0)[30..].iter().all(|&b| b == 0.0));
    }
}
