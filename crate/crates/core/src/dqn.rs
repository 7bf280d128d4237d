//! DQN building blocks: the Q-network (body + linear head), replay memory,
//! epsilon-greedy exploration and the periodically synced target network.

use std::collections::VecDeque;

use rand::Rng as _;

use crate::ctgraph::{Observation, OBS_SIDE};
use crate::nn::{Activations, LayerSpec, Network, Shape};
use crate::rng::Rng;
use crate::{Error, Result};

/// Width of the body's feature vector shared by the DQN and MOHN heads.
pub const FEATURE_DIM: usize = 64;

pub const OBS_SHAPE: Shape = Shape::new(1, OBS_SIDE, OBS_SIDE);

/// Body layers: two convolutions and a dense layer producing the feature vector.
pub fn body_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { out_channels: 16, kernel: 3, stride: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { out_channels: 32, kernel: 3, stride: 2 },
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense { out_dim: FEATURE_DIM },
        LayerSpec::Relu,
    ]
}

/// Body followed by the linear Q head.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    net: Network,
    feature_layer: usize,
}

impl QNetwork {
    pub fn new(num_actions: usize, rng: &mut Rng) -> Result<Self> {
        let mut layers = body_layers();
        let feature_layer = layers.len() - 1;
        layers.push(LayerSpec::Dense { out_dim: num_actions });
        Ok(Self { net: Network::new(OBS_SHAPE, &layers, rng)?, feature_layer })
    }

    /// Wraps an arbitrary network whose layer `feature_layer` is the feature
    /// output and whose final layer emits one value per action.
    pub fn from_network(net: Network, feature_layer: usize) -> Result<Self> {
        if feature_layer + 1 >= net.num_layers() {
            return Err(Error::usage("feature layer must precede the head"));
        }
        Ok(Self { net, feature_layer })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn feature_layer(&self) -> usize {
        self.feature_layer
    }

    pub fn num_actions(&self) -> usize {
        self.net.output_shape().len()
    }

    pub fn feature_dim(&self) -> usize {
        self.net.layer_output_shape(self.feature_layer).len()
    }

    pub fn forward(&self, input: &[f64], batch: usize) -> Result<QForward> {
        Ok(QForward {
            acts: self.net.forward(input, batch)?,
            feature_layer: self.feature_layer,
            num_actions: self.num_actions(),
            feature_dim: self.feature_dim(),
        })
    }

    pub fn forward_obs(&self, obs: &Observation) -> Result<QForward> {
        self.forward(obs.pixels(), 1)
    }
}

/// Forward pass results split into Q-values and body features.
#[derive(Debug, Clone)]
pub struct QForward {
    pub acts: Activations,
    feature_layer: usize,
    num_actions: usize,
    feature_dim: usize,
}

impl QForward {
    pub fn q_values(&self) -> &[f64] {
        self.acts.output()
    }

    pub fn features(&self) -> &[f64] {
        self.acts.layer_output(self.feature_layer)
    }

    pub fn q_row(&self, b: usize) -> &[f64] {
        &self.q_values()[b * self.num_actions..(b + 1) * self.num_actions]
    }

    pub fn feature_row(&self, b: usize) -> &[f64] {
        &self.features()[b * self.feature_dim..(b + 1) * self.feature_dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
}

/// FIFO ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buffer: VecDeque<Transition>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self { capacity, buffer: VecDeque::with_capacity(capacity.min(1 << 16)) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn push(&mut self, transition: Transition) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(transition);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.buffer.iter()
    }

    /// Whether enough transitions are stored for the learner to draw a
    /// minibatch of `batch_size`.
    pub fn ready_for(&self, batch_size: usize) -> bool {
        batch_size > 0 && self.buffer.len() >= batch_size
    }

    /// Uniform sample with replacement. `None` (not ready) only when the
    /// memory is empty; batches larger than the memory are allowed.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Option<Vec<Transition>> {
        if batch_size == 0 || self.buffer.is_empty() {
            return None;
        }
        let n = self.buffer.len();
        Some((0..batch_size).map(|_| self.buffer[rng.random_range(0..n)].clone()).collect())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// With probability `epsilon` a uniform action, otherwise the argmax.
/// One uniform draw is consumed per call regardless of the outcome.
pub fn epsilon_greedy(q_values: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
    if q_values.is_empty() {
        return Err(Error::usage("epsilon_greedy on an empty value vector"));
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::usage(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if rng.random::<f64>() < epsilon {
        Ok(rng.random_range(0..q_values.len()))
    } else {
        Ok(argmax(q_values).expect("non-empty"))
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            self.end
        } else {
            self.start + (self.end - self.start) * (step as f64 / self.decay_steps as f64)
        }
    }
}

pub trait ParamSync {
    fn sync_from(&mut self, source: &Self) -> Result<()>;
}

impl ParamSync for Network {
    fn sync_from(&mut self, source: &Self) -> Result<()> {
        self.copy_params_from(source)
    }
}

impl ParamSync for QNetwork {
    fn sync_from(&mut self, source: &Self) -> Result<()> {
        self.net.copy_params_from(&source.net)
    }
}

/// Online parameters and their delayed copy, synced every `sync_period` calls.
#[derive(Debug, Clone)]
pub struct TargetNetworkPair<N> {
    pub online: N,
    target: N,
    sync_period: u64,
    steps_since_sync: u64,
}

impl<N: Clone + ParamSync> TargetNetworkPair<N> {
    pub fn new(online: N, sync_period: u64) -> Result<Self> {
        if sync_period == 0 {
            return Err(Error::config("target sync period must be positive"));
        }
        Ok(Self { target: online.clone(), online, sync_period, steps_since_sync: 0 })
    }

    pub fn target(&self) -> &N {
        &self.target
    }

    pub fn sync_period(&self) -> u64 {
        self.sync_period
    }

    /// Counts one call; every `sync_period`-th call copies online → target.
    pub fn maybe_sync(&mut self) -> Result<bool> {
        self.steps_since_sync += 1;
        if self.steps_since_sync < self.sync_period {
            return Ok(false);
        }
        self.target.sync_from(&self.online)?;
        self.steps_since_sync = 0;
        Ok(true)
    }
}
