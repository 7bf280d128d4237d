//! Modulated Hebbian network (MOHN) head.
//!
//! A linear map from body features to one score per action, learned without
//! gradients. Each step the presynaptic input that drove an action is paired
//! with the postsynaptic one-hot of that action; the most positive and most
//! negative `θ%` of those products become ±1 Hebbian terms, which feed a
//! decaying eligibility trace. Weights move by `(reward + baseline) · trace`
//! and stay clipped to `[-1, 1]`.
//!
//! The five update rules are free functions so they can be tested in
//! isolation; [`MohnState`] strings them together.

use serde::{Deserialize, Serialize};

use crate::dqn::argmax;
use crate::{Error, Result};

/// Which postsynaptic activity pairs with the previous input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostSynaptic {
    /// One-hot of the action actually executed (differs on exploration steps).
    ExecutedAction,
    /// One-hot produced by the MOHN itself.
    MohnOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MohnConfig {
    /// Percentage of products marked +1 (and separately −1), in (0, 50).
    pub theta_pct: f64,
    /// Trace time constant, in steps; must exceed 1.
    pub tau_e: f64,
    /// Constant added to the reward in the modulatory signal.
    pub baseline: f64,
    /// Rate of the exponential running average subtracted from the features.
    pub running_avg_alpha: f64,
    pub post_synaptic: PostSynaptic,
}

impl Default for MohnConfig {
    fn default() -> Self {
        Self {
            theta_pct: 5.0,
            tau_e: 20.0,
            baseline: -0.01,
            running_avg_alpha: 0.05,
            post_synaptic: PostSynaptic::ExecutedAction,
        }
    }
}

impl MohnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_pct > 0.0 && self.theta_pct < 50.0) {
            return Err(Error::config(format!("theta_pct must lie in (0, 50), got {}", self.theta_pct)));
        }
        if self.tau_e.is_nan() || self.tau_e <= 1.0 || !self.tau_e.is_finite() {
            return Err(Error::config(format!("tau_e must be a finite value > 1, got {}", self.tau_e)));
        }
        if !self.baseline.is_finite() {
            return Err(Error::config("baseline must be finite"));
        }
        if !(self.running_avg_alpha > 0.0 && self.running_avg_alpha <= 1.0) {
            return Err(Error::config(format!("running_avg_alpha must lie in (0, 1], got {}", self.running_avg_alpha)));
        }
        Ok(())
    }
}

/// Subtracts the running average from `features`, then folds `features`
/// into the average: `avg ← (1 − α)·avg + α·features`.
///
/// Returns `(v_mi, updated_avg)`.
pub fn mohn_input(features: &[f64], running_avg: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if features.len() != running_avg.len() {
        return Err(Error::usage(format!(
            "feature vector has {} entries, running average has {}",
            features.len(),
            running_avg.len()
        )));
    }
    let v_mi = features.iter().zip(running_avg).map(|(f, a)| f - a).collect();
    let avg = features.iter().zip(running_avg).map(|(f, a)| (1.0 - alpha) * a + alpha * f).collect();
    Ok((v_mi, avg))
}

/// Number of entries marked in each direction: `ceil(θ% · count)`.
pub fn hebbian_count(theta_pct: f64, count: usize) -> usize {
    (((theta_pct * count as f64) / 100.0).ceil() as usize).min(count)
}

/// Thresholded Hebbian terms for the `post.len() × pre.len()` product
/// matrix `P[i][j] = pre[j] · post[i]`, row-major.
///
/// The `ceil(θ%·count)` largest products map to +1 and as many smallest to
/// −1; equal values are taken in ascending flat-index order and +1 wins if
/// the two sets overlap. When every product is equal there is no meaningful
/// percentile and the result is all zero.
pub fn hebbian_terms(pre: &[f64], post: &[f64], theta_pct: f64) -> Vec<i8> {
    let products: Vec<f64> = post.iter().flat_map(|&o| pre.iter().map(move |&i| i * o)).collect();
    let count = products.len();
    let mut terms = vec![0i8; count];
    let Some(first) = products.first() else {
        return terms;
    };
    if products.iter().all(|p| p == first) {
        return terms;
    }
    let n = hebbian_count(theta_pct, count);
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&a, &b| products[a].total_cmp(&products[b]).then(a.cmp(&b)));
    for &i in &order[..n] {
        terms[i] = -1;
    }
    order.sort_by(|&a, &b| products[b].total_cmp(&products[a]).then(a.cmp(&b)));
    for &i in &order[..n] {
        terms[i] = 1;
    }
    terms
}

/// One forward-Euler step (unit time step) of `dE/dt = −E/τ + Θ`.
pub fn update_traces(traces: &[f64], terms: &[i8], tau_e: f64) -> Result<Vec<f64>> {
    if tau_e.is_nan() || tau_e <= 1.0 {
        return Err(Error::config(format!("tau_e must exceed 1, got {tau_e}")));
    }
    if traces.len() != terms.len() {
        return Err(Error::usage("trace and Hebbian term shapes differ"));
    }
    let keep = 1.0 - 1.0 / tau_e;
    Ok(traces.iter().zip(terms).map(|(&e, &t)| e * keep + f64::from(t)).collect())
}

/// `w ← clip(w + (r + baseline)·E, −1, 1)`.
pub fn modulate_weights(weights: &[f64], traces: &[f64], reward: f64, baseline: f64) -> Result<Vec<f64>> {
    if weights.len() != traces.len() {
        return Err(Error::usage("weight and trace shapes differ"));
    }
    let m = reward + baseline;
    Ok(weights.iter().zip(traces).map(|(&w, &e)| (w + m * e).clamp(-1.0, 1.0)).collect())
}

/// Per-action scores `w · v_mi` for a row-major `actions × features` matrix.
pub fn mohn_scores(weights: &[f64], v_mi: &[f64]) -> Result<Vec<f64>> {
    if v_mi.is_empty() || !weights.len().is_multiple_of(v_mi.len()) || weights.is_empty() {
        return Err(Error::usage("weight matrix does not match input width"));
    }
    Ok(weights.chunks(v_mi.len()).map(|row| row.iter().zip(v_mi).map(|(w, v)| w * v).sum()).collect())
}

/// One-hot at the highest score, lowest index on ties.
pub fn mohn_output(weights: &[f64], v_mi: &[f64]) -> Result<Vec<f64>> {
    let scores = mohn_scores(weights, v_mi)?;
    Ok(one_hot(argmax(&scores).expect("non-empty scores"), scores.len()))
}

pub fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Weights, traces and input statistics of the Hebbian head.
#[derive(Debug, Clone, PartialEq)]
pub struct MohnState {
    config: MohnConfig,
    num_actions: usize,
    num_features: usize,
    weights: Vec<f64>,
    traces: Vec<f64>,
    running_avg: Vec<f64>,
    prev_input: Option<Vec<f64>>,
}

impl MohnState {
    /// Zero weights, zero traces, zero running average.
    pub fn new(config: MohnConfig, num_actions: usize, num_features: usize) -> Result<Self> {
        config.validate()?;
        if num_actions == 0 || num_features == 0 {
            return Err(Error::config("MOHN needs at least one action and one feature"));
        }
        let size = num_actions * num_features;
        Ok(Self {
            config,
            num_actions,
            num_features,
            weights: vec![0.0; size],
            traces: vec![0.0; size],
            running_avg: vec![0.0; num_features],
            prev_input: None,
        })
    }

    pub fn config(&self) -> &MohnConfig {
        &self.config
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    /// Row-major `actions × features`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, action: usize, feature: usize) -> f64 {
        self.weights[action * self.num_features + feature]
    }

    pub fn traces(&self) -> &[f64] {
        &self.traces
    }

    pub fn trace(&self, action: usize, feature: usize) -> f64 {
        self.traces[action * self.num_features + feature]
    }

    pub fn running_avg(&self) -> &[f64] {
        &self.running_avg
    }

    pub fn prev_input(&self) -> Option<&[f64]> {
        self.prev_input.as_deref()
    }

    /// Replaces the weights, clipping into `[-1, 1]`.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.weights.len() {
            return Err(Error::usage("weight matrix shape mismatch"));
        }
        self.weights.iter_mut().zip(weights).for_each(|(w, &v)| *w = v.clamp(-1.0, 1.0));
        Ok(())
    }

    /// Computes `v_mi` for the current step, updates the running average and
    /// remembers `v_mi` as the presynaptic activity for the next trace update.
    pub fn input(&mut self, features: &[f64]) -> Result<Vec<f64>> {
        let (v_mi, avg) = mohn_input(features, &self.running_avg, self.config.running_avg_alpha)?;
        self.running_avg = avg;
        self.prev_input = Some(v_mi.clone());
        Ok(v_mi)
    }

    /// `features − running_avg` without touching any state.
    pub fn peek_input(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(mohn_input(features, &self.running_avg, self.config.running_avg_alpha)?.0)
    }

    pub fn scores(&self, v_mi: &[f64]) -> Result<Vec<f64>> {
        if v_mi.len() != self.num_features {
            return Err(Error::usage("MOHN input width mismatch"));
        }
        mohn_scores(&self.weights, v_mi)
    }

    pub fn output(&self, v_mi: &[f64]) -> Result<Vec<f64>> {
        let scores = self.scores(v_mi)?;
        Ok(one_hot(argmax(&scores).expect("non-empty"), self.num_actions))
    }

    /// Forms the Hebbian terms between the stored presynaptic input and
    /// `post`, then advances the traces. With no stored input (start of an
    /// episode) the terms are zero and the traces only decay.
    pub fn update_traces(&mut self, post: &[f64]) -> Result<Vec<i8>> {
        if post.len() != self.num_actions {
            return Err(Error::usage("postsynaptic vector width mismatch"));
        }
        let terms = match &self.prev_input {
            Some(pre) => hebbian_terms(pre, post, self.config.theta_pct),
            None => vec![0; self.traces.len()],
        };
        self.traces = update_traces(&self.traces, &terms, self.config.tau_e)?;
        Ok(terms)
    }

    pub fn modulate(&mut self, reward: f64) -> Result<()> {
        self.weights = modulate_weights(&self.weights, &self.traces, reward, self.config.baseline)?;
        Ok(())
    }

    /// Zeroes the traces and forgets the presynaptic input. Weights and the
    /// running average persist across episodes.
    pub fn reset_traces(&mut self) {
        self.traces.iter_mut().for_each(|e| *e = 0.0);
        self.prev_input = None;
    }

    pub(crate) fn from_parts(
        config: MohnConfig,
        num_actions: usize,
        num_features: usize,
        weights: Vec<f64>,
        traces: Vec<f64>,
        running_avg: Vec<f64>,
        prev_input: Option<Vec<f64>>,
    ) -> Result<Self> {
        let size = num_actions * num_features;
        if weights.len() != size || traces.len() != size || running_avg.len() != num_features {
            return Err(Error::Format("MOHN state arrays do not match their dimensions".into()));
        }
        if prev_input.as_ref().is_some_and(|p| p.len() != num_features) {
            return Err(Error::Format("MOHN previous input has the wrong width".into()));
        }
        config.validate()?;
        Ok(Self { config, num_actions, num_features, weights, traces, running_avg, prev_input })
    }
}
