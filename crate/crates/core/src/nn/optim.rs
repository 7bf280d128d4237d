use super::{GradientTape, Network};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Magnitude of the parameter change applied by one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub max_abs: f64,
    pub l2: f64,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, net: &Network) -> Self {
        let zeros: Vec<Vec<f64>> = (0..net.num_layers()).map(|i| vec![0.0; net.params(i).len()]).collect();
        Self { kind, learning_rate, first_moment: zeros.clone(), second_moment: zeros, steps: 0 }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.learning_rate = lr;
    }

    /// Applies one descent step. A tape containing NaN or infinity aborts
    /// before any parameter is touched.
    pub fn step(&mut self, net: &mut Network, tape: &GradientTape) -> Result<UpdateStats> {
        if !tape.matches(net) {
            return Err(Error::usage("gradient tape does not match network parameters"));
        }
        if !tape.all_finite() {
            return Err(Error::numeric("non-finite value in gradient tape"));
        }
        self.steps += 1;
        let lr = self.learning_rate;
        let mut stats = UpdateStats::default();
        let mut sq = 0.0;
        for layer in 0..tape.num_layers() {
            let grads = tape.layer(layer);
            if grads.is_empty() {
                continue;
            }
            let params = net.params_mut(layer);
            match self.kind {
                OptimizerKind::Sgd => {
                    for (p, g) in params.iter_mut().zip(grads) {
                        let delta = -lr * g;
                        *p += delta;
                        stats.max_abs = stats.max_abs.max(delta.abs());
                        sq += delta * delta;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.steps as i32);
                    let c2 = 1.0 - beta2.powi(self.steps as i32);
                    let m = &mut self.first_moment[layer];
                    let v = &mut self.second_moment[layer];
                    for i in 0..params.len() {
                        let g = grads[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                        let delta = -lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        params[i] += delta;
                        stats.max_abs = stats.max_abs.max(delta.abs());
                        sq += delta * delta;
                    }
                }
            }
        }
        stats.l2 = sq.sqrt();
        if !net.all_finite() {
            return Err(Error::numeric("parameters became non-finite after optimizer step"));
        }
        Ok(stats)
    }
}
