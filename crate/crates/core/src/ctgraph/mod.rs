//! The configurable tree-graph (CT-graph) POMDP.
//!
//! An episode walks from the home wait state through `depth` decision points
//! to one of `branch_factor^depth` leaves. One wait stage precedes every
//! decision point and one precedes the leaf, so there are `depth + 1` wait
//! stages. Action 0 is the wait-action; actions `1..=branch_factor` are the
//! act-actions that pick a branch at a decision point. Any other choice ends
//! the episode with reward 0, and only the configured reward leaf pays 1.

mod observation;
mod oracle;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Rng};
use crate::{Error, Result};

pub use observation::{render_pattern, Observation, BASE_SIDE, LEVELS, OBS_LEN, OBS_SIDE, UPSCALE};
pub use oracle::{monte_carlo_success, random_policy_success_prob, MonteCarloEstimate};

/// Upper bound on `branch_factor^depth`; every leaf needs its own pattern.
pub const MAX_LEAVES: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsMode {
    /// Every hidden state has its own fixed observation.
    Unique,
    /// Wait states draw from a shared set on every visit.
    Confounding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLeaf", into = "RawLeaf")]
pub enum RewardLeaf {
    Index(usize),
    /// Drawn uniformly from the leaves using `env_seed`.
    Seeded,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawLeaf {
    Index(usize),
    Name(String),
}

impl TryFrom<RawLeaf> for RewardLeaf {
    type Error = String;

    fn try_from(raw: RawLeaf) -> Result<Self, String> {
        match raw {
            RawLeaf::Index(i) => Ok(RewardLeaf::Index(i)),
            RawLeaf::Name(s) if s.eq_ignore_ascii_case("seeded") => Ok(RewardLeaf::Seeded),
            RawLeaf::Name(s) => Err(format!("reward_leaf must be an index or \"seeded\", got {s:?}")),
        }
    }
}

impl From<RewardLeaf> for RawLeaf {
    fn from(leaf: RewardLeaf) -> Self {
        match leaf {
            RewardLeaf::Index(i) => RawLeaf::Index(i),
            RewardLeaf::Seeded => RawLeaf::Name("seeded".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CTGraphConfig {
    pub branch_factor: usize,
    pub depth: usize,
    pub delay_prob: f64,
    #[serde(default = "default_wait_obs_set_size")]
    pub wait_obs_set_size: usize,
    pub obs_mode: ObsMode,
    #[serde(default = "default_reward_leaf")]
    pub reward_leaf: RewardLeaf,
    #[serde(default)]
    pub env_seed: u64,
}

fn default_wait_obs_set_size() -> usize {
    64
}

fn default_reward_leaf() -> RewardLeaf {
    RewardLeaf::Seeded
}

impl CTGraphConfig {
    pub fn new(branch_factor: usize, depth: usize, delay_prob: f64, obs_mode: ObsMode) -> Self {
        Self {
            branch_factor,
            depth,
            delay_prob,
            wait_obs_set_size: default_wait_obs_set_size(),
            obs_mode,
            reward_leaf: default_reward_leaf(),
            env_seed: 0,
        }
    }

    pub fn with_reward_leaf(mut self, leaf: usize) -> Self {
        self.reward_leaf = RewardLeaf::Index(leaf);
        self
    }

    pub fn with_seed(mut self, env_seed: u64) -> Self {
        self.env_seed = env_seed;
        self
    }

    pub fn with_wait_obs_set_size(mut self, n: usize) -> Self {
        self.wait_obs_set_size = n;
        self
    }

    /// `1 + branch_factor`: the wait-action plus one act-action per branch.
    pub fn num_actions(&self) -> usize {
        1 + self.branch_factor
    }

    pub fn num_leaves(&self) -> usize {
        self.branch_factor.checked_pow(self.depth as u32).unwrap_or(usize::MAX)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch_factor < 2 {
            return Err(Error::config(format!("branch_factor must be >= 2, got {}", self.branch_factor)));
        }
        if self.depth < 1 {
            return Err(Error::config("depth must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.delay_prob) {
            return Err(Error::config(format!("delay_prob must lie in [0, 1), got {}", self.delay_prob)));
        }
        if self.wait_obs_set_size < 1 {
            return Err(Error::config("wait_obs_set_size must be >= 1"));
        }
        let leaves = self.num_leaves();
        if leaves > MAX_LEAVES {
            return Err(Error::config(format!("branch_factor^depth exceeds the supported {MAX_LEAVES} leaves")));
        }
        if let RewardLeaf::Index(i) = self.reward_leaf {
            if i >= leaves {
                return Err(Error::config(format!("reward_leaf {i} out of range for {leaves} leaves")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StateKind {
    Wait,
    Decision,
    Leaf,
    Terminated,
}

/// The true MDP state. `path` holds the branch chosen at each decision so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HiddenState {
    pub kind: StateKind,
    pub stage: usize,
    pub path: Vec<usize>,
}

impl HiddenState {
    pub fn home() -> Self {
        Self { kind: StateKind::Wait, stage: 0, path: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

/// Precomputed observations. Node indices within a stage are the path read
/// as a base-`branch_factor` number.
struct ObservationTables {
    /// Unique mode: one entry per wait node, stage-major.
    wait_nodes: Vec<Observation>,
    /// Confounding mode: the shared wait set.
    wait_set: Vec<Observation>,
    decisions: Vec<Observation>,
    leaves: Vec<Observation>,
    terminated: Observation,
}

pub struct Env {
    config: CTGraphConfig,
    reward_leaf: usize,
    tables: ObservationTables,
    dynamics: Rng,
    state: Option<HiddenState>,
    done: bool,
    steps: usize,
}

impl Env {
    /// Builds the environment; wait-state dynamics use a stream derived from
    /// `env_seed` alone.
    pub fn new(config: CTGraphConfig) -> Result<Self> {
        let seed = config.env_seed;
        Self::with_dynamics_seed(config, seed)
    }

    /// Like [`Env::new`] but with a separate seed for the per-step randomness
    /// (delays and confounding draws). Observation tables and the reward leaf
    /// still depend only on `env_seed`.
    pub fn with_dynamics_seed(config: CTGraphConfig, dynamics_seed: u64) -> Result<Self> {
        config.validate()?;
        let b = config.branch_factor;
        let d = config.depth;

        let mut table_rng = rng::stream_rng(config.env_seed, rng::stream::ENV_TABLES);
        let mut source = observation::PatternSource::new(&mut table_rng);
        let nodes_through = |stages: usize| (0..stages).map(|i| b.pow(i as u32)).sum::<usize>();
        let (wait_nodes, wait_set) = match config.obs_mode {
            ObsMode::Unique => (source.take(nodes_through(d + 1)), Vec::new()),
            ObsMode::Confounding => (Vec::new(), source.take(config.wait_obs_set_size)),
        };
        let decisions = source.take(nodes_through(d));
        let leaves = source.take(config.num_leaves());
        let terminated = source.next_unique();

        let reward_leaf = match config.reward_leaf {
            RewardLeaf::Index(i) => i,
            RewardLeaf::Seeded => {
                rng::stream_rng(config.env_seed, rng::stream::ENV_REWARD_LEAF).random_range(0..config.num_leaves())
            }
        };
        let dynamics = rng::stream_rng(rng::mix_seeds(config.env_seed, dynamics_seed), rng::stream::ENV_DYNAMICS);

        Ok(Self {
            config,
            reward_leaf,
            tables: ObservationTables { wait_nodes, wait_set, decisions, leaves, terminated },
            dynamics,
            state: None,
            done: true,
            steps: 0,
        })
    }

    pub fn config(&self) -> &CTGraphConfig {
        &self.config
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions()
    }

    pub fn num_leaves(&self) -> usize {
        self.config.num_leaves()
    }

    pub fn reward_leaf(&self) -> usize {
        self.reward_leaf
    }

    /// Distinct non-terminal state types along one root-to-leaf path:
    /// `depth + 1` wait stages, `depth` decision points and the leaf.
    pub fn state_templates(&self) -> usize {
        2 * self.config.depth + 2
    }

    /// The shared wait-observation set (empty in Unique mode).
    pub fn wait_observation_set(&self) -> &[Observation] {
        &self.tables.wait_set
    }

    pub fn hidden_state(&self) -> Option<&HiddenState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn reset(&mut self) -> Observation {
        let home = HiddenState::home();
        let obs = self.observe(&home);
        self.state = Some(home);
        self.done = false;
        self.steps = 0;
        obs
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::usage("step called on a finished (or never reset) episode"));
        }
        let num_actions = self.num_actions();
        if action >= num_actions {
            return Err(Error::usage(format!("action {action} out of range 0..{num_actions}")));
        }
        let mut state = self.state.take().expect("active episode has a state");
        self.steps += 1;

        match state.kind {
            StateKind::Wait if action == 0 => {
                if self.config.delay_prob > 0.0 && self.dynamics.random::<f64>() < self.config.delay_prob {
                    // self-loop
                } else if state.stage == self.config.depth {
                    state.kind = StateKind::Leaf;
                } else {
                    state.kind = StateKind::Decision;
                }
            }
            StateKind::Decision if action != 0 => {
                state.path.push(action - 1);
                state.kind = StateKind::Wait;
                state.stage += 1;
            }
            StateKind::Wait | StateKind::Decision => state.kind = StateKind::Terminated,
            StateKind::Leaf | StateKind::Terminated => unreachable!("terminal states end the episode"),
        }

        let (reward, done) = match state.kind {
            StateKind::Leaf => {
                let hit = self.leaf_index(&state.path) == self.reward_leaf;
                (if hit { 1.0 } else { 0.0 }, true)
            }
            StateKind::Terminated => (0.0, true),
            _ => (0.0, false),
        };
        let observation = self.observe(&state);
        self.state = Some(state);
        self.done = done;
        Ok(StepResult { observation, reward, done })
    }

    /// Observation emitted for `state`. Wait states in Confounding mode draw
    /// a fresh sample from the shared set on every call.
    pub fn observe(&mut self, state: &HiddenState) -> Observation {
        let t = &self.tables;
        match state.kind {
            StateKind::Wait => match self.config.obs_mode {
                ObsMode::Unique => t.wait_nodes[self.node_index(state.stage, &state.path)].clone(),
                ObsMode::Confounding => {
                    let i = self.dynamics.random_range(0..t.wait_set.len());
                    t.wait_set[i].clone()
                }
            },
            StateKind::Decision => t.decisions[self.node_index(state.stage, &state.path)].clone(),
            StateKind::Leaf => t.leaves[self.leaf_index(&state.path)].clone(),
            StateKind::Terminated => t.terminated.clone(),
        }
    }

    /// Leaf number of a complete path, most significant branch first.
    pub fn leaf_index(&self, path: &[usize]) -> usize {
        path.iter().fold(0, |acc, &p| acc * self.config.branch_factor + p)
    }

    fn node_index(&self, stage: usize, path: &[usize]) -> usize {
        let b = self.config.branch_factor;
        let offset: usize = (0..stage).map(|i| b.pow(i as u32)).sum();
        offset + self.leaf_index(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(env: &mut Env, actions: &[usize]) -> Vec<StepResult> {
        env.reset();
        actions.iter().map(|&a| env.step(a).unwrap()).collect()
    }

    #[test]
    fn smallest_graph_has_two_leaves_and_four_templates() {
        let env = Env::new(CTGraphConfig::new(2, 1, 0.0, ObsMode::Unique)).unwrap();
        assert_eq!(env.num_leaves(), 2);
        assert_eq!(env.state_templates(), 4);
        assert_eq!(env.num_actions(), 3);
    }

    #[test]
    fn two_decision_confounding_graph() {
        let env = Env::new(CTGraphConfig::new(2, 2, 0.9, ObsMode::Confounding)).unwrap();
        assert_eq!(env.num_leaves(), 4);
        assert_eq!(env.wait_observation_set().len(), 64);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            CTGraphConfig::new(2, 1, 1.0, ObsMode::Unique),
            CTGraphConfig::new(1, 1, 0.0, ObsMode::Unique),
            CTGraphConfig::new(2, 0, 0.0, ObsMode::Unique),
            CTGraphConfig::new(2, 1, -0.1, ObsMode::Unique),
            CTGraphConfig::new(2, 1, f64::NAN, ObsMode::Unique),
            CTGraphConfig::new(2, 1, 0.0, ObsMode::Unique).with_reward_leaf(2),
            CTGraphConfig::new(2, 1, 0.0, ObsMode::Confounding).with_wait_obs_set_size(0),
            CTGraphConfig::new(2, 40, 0.0, ObsMode::Unique),
        ];
        for cfg in bad {
            assert!(matches!(Env::new(cfg.clone()), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn reset_is_home_with_empty_path() {
        let mut env = Env::new(CTGraphConfig::new(2, 2, 0.3, ObsMode::Unique)).unwrap();
        let a = env.reset();
        assert_eq!(env.hidden_state(), Some(&HiddenState::home()));
        env.step(0).unwrap();
        let b = env.reset();
        assert_eq!(a, b);
        assert_eq!(env.steps(), 0);
    }

    #[test]
    fn confounding_reset_draws_from_wait_set() {
        let mut env = Env::new(CTGraphConfig::new(2, 1, 0.5, ObsMode::Confounding)).unwrap();
        for _ in 0..20 {
            let obs = env.reset();
            assert!(env.wait_observation_set().contains(&obs));
        }
    }

    #[test]
    fn wrong_actions_terminate() {
        let cfg = CTGraphConfig::new(2, 1, 0.0, ObsMode::Unique).with_reward_leaf(0);
        let mut env = Env::new(cfg).unwrap();
        let r = run(&mut env, &[1]);
        assert_eq!((r[0].reward, r[0].done), (0.0, true));
        assert_eq!(env.hidden_state().unwrap().kind, StateKind::Terminated);
        let r = run(&mut env, &[0, 0]);
        assert_eq!((r[1].reward, r[1].done), (0.0, true));
    }

    #[test]
    fn optimal_and_suboptimal_sequences() {
        let cfg = CTGraphConfig::new(2, 1, 0.0, ObsMode::Unique).with_reward_leaf(0);
        let mut env = Env::new(cfg).unwrap();
        let r = run(&mut env, &[0, 1, 0]);
        assert_eq!((r[2].reward, r[2].done), (1.0, true));
        assert!(!r[0].done && !r[1].done);
        let r = run(&mut env, &[0, 2, 0]);
        assert_eq!((r[2].reward, r[2].done), (0.0, true));
        assert_eq!(env.hidden_state().unwrap().kind, StateKind::Leaf);
    }

    #[test]
    fn stepping_finished_episode_or_bad_action_is_usage_error() {
        let mut env = Env::new(CTGraphConfig::new(2, 1, 0.0, ObsMode::Unique)).unwrap();
        assert!(matches!(env.step(0), Err(Error::Usage(_))));
        env.reset();
        assert!(matches!(env.step(3), Err(Error::Usage(_))));
        env.step(1).unwrap();
        assert!(matches!(env.step(0), Err(Error::Usage(_))));
    }

    #[test]
    fn hidden_state_invariants_along_a_path() {
        let cfg = CTGraphConfig::new(3, 3, 0.4, ObsMode::Unique).with_reward_leaf(5);
        let mut env = Env::new(cfg).unwrap();
        env.reset();
        let mut decisions = 0;
        while !env.is_done() {
            let s = env.hidden_state().unwrap().clone();
            match s.kind {
                StateKind::Wait | StateKind::Decision => assert_eq!(s.path.len(), s.stage),
                _ => unreachable!(),
            }
            let a = if s.kind == StateKind::Decision {
                decisions += 1;
                1 + decisions % 3
            } else {
                0
            };
            env.step(a).unwrap();
        }
        let s = env.hidden_state().unwrap();
        assert_eq!(s.kind, StateKind::Leaf);
        assert_eq!(s.path.len(), 3);
    }

    #[test]
    fn unique_mode_is_injective_over_reachable_states() {
        let cfg = CTGraphConfig::new(2, 3, 0.0, ObsMode::Unique);
        let mut env = Env::new(cfg).unwrap();
        let mut states = vec![];
        for stage in 0..=3 {
            for leaf in 0..2usize.pow(stage as u32) {
                let path: Vec<usize> = (0..stage).rev().map(|k| (leaf >> k) & 1).collect();
                states.push(HiddenState { kind: StateKind::Wait, stage, path: path.clone() });
                if stage < 3 {
                    states.push(HiddenState { kind: StateKind::Decision, stage, path: path.clone() });
                } else {
                    states.push(HiddenState { kind: StateKind::Leaf, stage, path });
                }
            }
        }
        let obs: Vec<_> = states.iter().map(|s| env.observe(s)).collect();
        for i in 0..obs.len() {
            assert_eq!(obs[i], env.observe(&states[i]));
            for j in i + 1..obs.len() {
                assert_ne!(obs[i], obs[j], "{:?} vs {:?}", states[i], states[j]);
            }
        }
    }

    #[test]
    fn decision_points_have_distinct_observations() {
        let mut env = Env::new(CTGraphConfig::new(2, 2, 0.5, ObsMode::Confounding)).unwrap();
        let first = HiddenState { kind: StateKind::Decision, stage: 0, path: vec![] };
        let second = HiddenState { kind: StateKind::Decision, stage: 1, path: vec![0] };
        let (a, b) = (env.observe(&first), env.observe(&second));
        assert_ne!(a, b);
        assert_eq!(a, env.observe(&first));
        assert!(!env.wait_observation_set().contains(&a));
    }

    #[test]
    fn seeded_reward_leaf_depends_on_seed_only() {
        let leaf =
            |seed| Env::new(CTGraphConfig::new(2, 3, 0.0, ObsMode::Unique).with_seed(seed)).unwrap().reward_leaf();
        assert_eq!(leaf(11), leaf(11));
        let distinct: std::collections::HashSet<_> = (0..40).map(leaf).collect();
        assert!(distinct.len() > 1);
        assert!(distinct.iter().all(|&l| l < 8));
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: CTGraphConfig = toml::from_str(
            "branch_factor = 2\ndepth = 2\ndelay_prob = 0.9\nobs_mode = \"confounding\"\nreward_leaf = \"seeded\"\nenv_seed = 4",
        )
        .unwrap();
        assert_eq!(cfg.reward_leaf, RewardLeaf::Seeded);
        assert_eq!(cfg.wait_obs_set_size, 64);
        let cfg: CTGraphConfig =
            toml::from_str("branch_factor = 2\ndepth = 1\ndelay_prob = 0.0\nobs_mode = \"unique\"\nreward_leaf = 1")
                .unwrap();
        assert_eq!(cfg.reward_leaf, RewardLeaf::Index(1));
        assert!(toml::from_str::<CTGraphConfig>(
            "branch_factor = 2\ndepth = 1\ndelay_prob = 0.0\nobs_mode = \"unique\"\nreward_leaf = \"left\""
        )
        .is_err());
    }
}
