//! Experiment configuration, read from a TOML file with `[env]`, `[agent]`,
//! `[mohn]` and `[run]` sections.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::ctgraph::CTGraphConfig;
use crate::dqn::EpsilonSchedule;
use crate::mohn::MohnConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub lr: f64,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between gradient steps.
    pub learn_every: u64,
    /// Environment steps between target-network syncs.
    pub target_sync: u64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_steps: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            gamma: 0.99,
            replay_capacity: 50_000,
            batch_size: 32,
            learn_every: 4,
            target_sync: 1_000,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_steps: 50_000,
        }
    }
}

impl AgentConfig {
    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule { start: self.eps_start, end: self.eps_end, decay_steps: self.eps_decay_steps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if self.replay_capacity == 0 || self.batch_size == 0 || self.learn_every == 0 || self.target_sync == 0 {
            return Err(Error::config("replay_capacity, batch_size, learn_every and target_sync must be positive"));
        }
        for (name, eps) in [("eps_start", self.eps_start), ("eps_end", self.eps_end)] {
            if !(0.0..=1.0).contains(&eps) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {eps}")));
            }
        }
        if self.eps_end > self.eps_start {
            return Err(Error::config("eps_end must not exceed eps_start"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Plain DQN: the Hebbian head is disabled.
    Dqn,
    Mohqa,
}

impl AgentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AgentKind::Dqn => "dqn",
            AgentKind::Mohqa => "mohqa",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub episodes: usize,
    pub max_steps_per_episode: usize,
    pub seeds: Vec<u64>,
    /// One kind or a list; `agent_kind = "mohqa"` and
    /// `agent_kind = ["dqn", "mohqa"]` are both accepted.
    #[serde(deserialize_with = "one_or_many")]
    pub agent_kind: Vec<AgentKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            episodes: 1_000,
            max_steps_per_episode: 100,
            seeds: (0..6).collect(),
            agent_kind: vec![AgentKind::Dqn, AgentKind::Mohqa],
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.max_steps_per_episode == 0 {
            return Err(Error::config("episodes and max_steps_per_episode must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("seeds must be distinct"));
        }
        if self.agent_kind.is_empty() {
            return Err(Error::config("at least one agent_kind is required"));
        }
        Ok(())
    }
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<AgentKind>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(AgentKind),
        Many(Vec<AgentKind>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(k) => vec![k],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: CTGraphConfig,
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub mohn: MohnConfig,
    #[serde(default)]
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn new(env: CTGraphConfig) -> Self {
        Self { env, agent: AgentConfig::default(), mohn: MohnConfig::default(), run: RunConfig::default() }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.agent.validate()?;
        self.mohn.validate()?;
        self.run.validate()
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctgraph::ObsMode;

    const FULL: &str = r#"
[env]
branch_factor = 2
depth = 2
delay_prob = 0.5
wait_obs_set_size = 64
obs_mode = "confounding"
reward_leaf = "seeded"
env_seed = 3

[agent]
lr = 0.0005
gamma = 0.9
replay_capacity = 1000
batch_size = 16
learn_every = 2
target_sync = 100
eps_start = 1.0
eps_end = 0.01
eps_decay_steps = 5000

[mohn]
theta_pct = 5.0
tau_e = 20.0
baseline = -0.01
running_avg_alpha = 0.05

[run]
episodes = 200
max_steps_per_episode = 50
seeds = [1, 2, 3]
agent_kind = "mohqa"
"#;

    #[test]
    fn parses_all_sections() {
        let cfg = ExperimentConfig::from_toml_str(FULL).unwrap();
        assert_eq!(cfg.env.obs_mode, ObsMode::Confounding);
        assert_eq!(cfg.agent.batch_size, 16);
        assert_eq!(cfg.run.agent_kind, vec![AgentKind::Mohqa]);
        assert_eq!(cfg.mohn.tau_e, 20.0);
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ExperimentConfig::from_toml_str(
            "[env]\nbranch_factor = 2\ndepth = 1\ndelay_prob = 0.0\nobs_mode = \"unique\"\n",
        )
        .unwrap();
        assert_eq!(cfg.agent, AgentConfig::default());
        assert_eq!(cfg.run.seeds.len(), 6);
        assert_eq!(cfg.run.agent_kind, vec![AgentKind::Dqn, AgentKind::Mohqa]);
    }

    #[test]
    fn rejects_bad_values() {
        let dup = FULL.replace("seeds = [1, 2, 3]", "seeds = [1, 1]");
        assert!(matches!(ExperimentConfig::from_toml_str(&dup), Err(Error::Config(_))));
        let p = FULL.replace("delay_prob = 0.5", "delay_prob = 1.0");
        assert!(matches!(ExperimentConfig::from_toml_str(&p), Err(Error::Config(_))));
        let unknown = FULL.replace("gamma = 0.9", "gamma = 0.9\nmomentum = 0.1");
        assert!(matches!(ExperimentConfig::from_toml_str(&unknown), Err(Error::Config(_))));
    }

    #[test]
    fn round_trip_and_hash_stability() {
        let cfg = ExperimentConfig::from_toml_str(FULL).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 16);
        let mut other = cfg.clone();
        other.agent.lr = 0.001;
        assert_ne!(cfg.hash(), other.hash());
    }
}
