use rand::Rng as _;

use super::{CTGraphConfig, Env};
use crate::rng::{self, Rng};
use crate::Result;

/// Probability that a policy choosing uniformly among all `1 + b` actions at
/// every step collects the reward in one episode.
///
/// Each of the `d + 1` wait stages is eventually left forward with
/// probability `(1 - p) / (A - p)` (the wait-action is drawn with
/// probability `1/A`, and self-loops restart the draw), and each of the `d`
/// decision points must pick the rewarded branch with probability `1/A`.
pub fn random_policy_success_prob(config: &CTGraphConfig) -> Result<f64> {
    config.validate()?;
    let actions = config.num_actions() as f64;
    let p = config.delay_prob;
    let d = config.depth as i32;
    let leave_wait = (1.0 - p) / (actions - p);
    Ok(leave_wait.powi(d + 1) * actions.recip().powi(d))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub episodes: u64,
    pub successes: u64,
    pub total_steps: u64,
}

impl MonteCarloEstimate {
    pub fn frequency(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }

    /// `k`-sigma binomial interval around `p` for this many episodes.
    pub fn binomial_interval(&self, p: f64, k: f64) -> (f64, f64) {
        let sigma = (p * (1.0 - p) / self.episodes as f64).sqrt();
        (p - k * sigma, p + k * sigma)
    }

    pub fn mean_steps(&self) -> f64 {
        self.total_steps as f64 / self.episodes as f64
    }
}

/// Runs `episodes` uniformly random episodes through the real environment.
pub fn monte_carlo_success(config: &CTGraphConfig, episodes: u64, seed: u64) -> Result<MonteCarloEstimate> {
    let mut env = Env::with_dynamics_seed(config.clone(), seed)?;
    let mut policy: Rng = rng::stream_rng(seed, rng::stream::EXPLORATION);
    let actions = env.num_actions();
    let mut est = MonteCarloEstimate { episodes, successes: 0, total_steps: 0 };
    for _ in 0..episodes {
        env.reset();
        loop {
            let step = env.step(policy.random_range(0..actions))?;
            est.total_steps += 1;
            if step.done {
                if step.reward > 0.0 {
                    est.successes += 1;
                }
                break;
            }
        }
    }
    Ok(est)
}
