use std::fmt;

use mohqa_core::ctgraph::{monte_carlo_success, random_policy_success_prob, CTGraphConfig, MonteCarloEstimate};

use crate::Result;

#[derive(Debug, Clone)]
pub struct OracleReport {
    pub config: CTGraphConfig,
    pub probability: f64,
    pub monte_carlo: Option<MonteCarloEstimate>,
}

impl OracleReport {
    pub fn episodes_per_reward(&self) -> f64 {
        self.probability.recip()
    }

    /// Whether the Monte-Carlo frequency falls inside the 3σ binomial interval.
    pub fn consistent(&self) -> Option<bool> {
        self.monte_carlo.map(|mc| {
            let (lo, hi) = mc.binomial_interval(self.probability, 3.0);
            (lo..=hi).contains(&mc.frequency())
        })
    }
}

/// Closed-form random-policy success probability, plus a Monte-Carlo
/// estimate when `mc_episodes > 0`.
pub fn oracle_report(config: &CTGraphConfig, mc_episodes: u64, seed: u64) -> Result<OracleReport> {
    let probability = random_policy_success_prob(config)?;
    let monte_carlo = if mc_episodes > 0 { Some(monte_carlo_success(config, mc_episodes, seed)?) } else { None };
    Ok(OracleReport { config: config.clone(), probability, monte_carlo })
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(f, "ct-graph b={} d={} p={} mode={:?}", c.branch_factor, c.depth, c.delay_prob, c.obs_mode)?;
        writeln!(f, "random-policy success probability: {:.6e}", self.probability)?;
        writeln!(f, "episodes per reward: {:.4e}", self.episodes_per_reward())?;
        if let Some(mc) = &self.monte_carlo {
            let (lo, hi) = mc.binomial_interval(self.probability, 3.0);
            writeln!(
                f,
                "monte carlo: {} / {} episodes = {:.6e} (3-sigma interval [{:.6e}, {:.6e}], mean length {:.3})",
                mc.successes,
                mc.episodes,
                mc.frequency(),
                lo.max(0.0),
                hi,
                mc.mean_steps()
            )?;
            let verdict = if self.consistent() == Some(true) { "consistent" } else { "INCONSISTENT" };
            writeln!(f, "monte carlo vs closed form: {verdict}")?;
        }
        Ok(())
    }
}
