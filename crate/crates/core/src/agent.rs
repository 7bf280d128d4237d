//! MOHQA integration: the DQN head and the Hebbian head are summed to pick
//! actions and to form bootstrapped TD targets. With the Hebbian head
//! switched off the same code is a plain DQN.

use std::ops::ControlFlow;

use crate::config::{AgentConfig, AgentKind, ExperimentConfig};
use crate::ctgraph::{Env, Observation};
use crate::dqn::{
    argmax, epsilon_greedy, EpsilonSchedule, QForward, QNetwork, ReplayMemory, TargetNetworkPair, Transition,
};
use crate::mohn::{one_hot, MohnConfig, MohnState, PostSynaptic};
use crate::nn::{GradientTape, Optimizer, OptimizerKind, UpdateStats};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Outputs of both heads for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutputs {
    /// Q-values of the DQN head.
    pub v_do: Vec<f64>,
    /// One-hot output of the Hebbian head (all zero for plain DQN).
    pub v_mo: Vec<f64>,
    /// `v_do + v_mo`.
    pub v_o: Vec<f64>,
}

pub fn combined_q(v_do: &[f64], v_mo: &[f64]) -> Result<Vec<f64>> {
    if v_do.len() != v_mo.len() {
        return Err(Error::usage(format!("head widths differ: {} vs {}", v_do.len(), v_mo.len())));
    }
    Ok(v_do.iter().zip(v_mo).map(|(d, m)| d + m).collect())
}

pub fn select_action(v_o: &[f64], epsilon: f64, rng: &mut Rng) -> Result<usize> {
    epsilon_greedy(v_o, epsilon, rng)
}

#[derive(Debug, Clone)]
pub struct TdLoss {
    pub loss: f64,
    /// Gradient of `loss` with respect to the online network parameters.
    pub tape: GradientTape,
    pub targets: Vec<f64>,
    pub predictions: Vec<f64>,
}

/// Batch observations stacked into one input buffer.
fn stack<'a>(obs: impl Iterator<Item = &'a Observation>) -> Vec<f64> {
    obs.flat_map(|o| o.pixels().iter().copied()).collect()
}

/// Mean squared TD error with targets
/// `r + γ · max_a [Q_target(s', a) + v_mo(s', a)]` (just `r` when done).
///
/// `v_mo(s')` uses the current Hebbian weights on the target body's
/// features. Targets are constants: the gradient reaches only the online
/// parameters through `Q(s, a)`, and never the Hebbian weights.
pub fn td_loss(
    batch: &[Transition],
    online: &QNetwork,
    target: &QNetwork,
    mohn: Option<&MohnState>,
    gamma: f64,
) -> Result<TdLoss> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::usage("td_loss on an empty batch"));
    }
    let actions = online.num_actions();
    let current = online.forward(&stack(batch.iter().map(|t| &t.obs)), n)?;
    let next = target.forward(&stack(batch.iter().map(|t| &t.next_obs)), n)?;

    let mut targets = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    let mut out_grad = vec![0.0; n * actions];
    let mut loss = 0.0;
    for (i, t) in batch.iter().enumerate() {
        if t.action >= actions {
            return Err(Error::usage(format!("transition action {} out of range", t.action)));
        }
        let y = if t.done {
            t.reward
        } else {
            let q_next = next.q_row(i);
            let best = match mohn {
                Some(m) => {
                    let v_mo = m.output(&m.peek_input(next.feature_row(i))?)?;
                    let v_o = combined_q(q_next, &v_mo)?;
                    v_o[argmax(&v_o).expect("non-empty")]
                }
                None => q_next[argmax(q_next).expect("non-empty")],
            };
            t.reward + gamma * best
        };
        let pred = current.q_row(i)[t.action];
        loss += (y - pred).powi(2);
        out_grad[i * actions + t.action] = 2.0 * (pred - y) / n as f64;
        targets.push(y);
        predictions.push(pred);
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("TD loss is {loss}")));
    }
    let tape = online.network().backward(&current.acts, &out_grad)?.tape;
    Ok(TdLoss { loss, tape, targets, predictions })
}

/// What the agent decided for one observation.
#[derive(Debug, Clone)]
pub struct Decision {
    pub action: usize,
    pub epsilon: f64,
    pub outputs: AgentOutputs,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LearnStats {
    pub loss: f64,
    pub update: UpdateStats,
}

/// DQN or MOHQA agent with its replay memory, networks and random streams.
pub struct Agent {
    kind: AgentKind,
    config: AgentConfig,
    schedule: EpsilonSchedule,
    networks: TargetNetworkPair<QNetwork>,
    optimizer: Optimizer,
    memory: ReplayMemory,
    mohn: Option<MohnState>,
    explore_rng: Rng,
    replay_rng: Rng,
    steps: u64,
    last_learn: Option<LearnStats>,
}

impl Agent {
    pub fn new(
        kind: AgentKind,
        num_actions: usize,
        config: &AgentConfig,
        mohn: &MohnConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let online = QNetwork::new(num_actions, &mut rng::stream_rng(seed, rng::stream::NET_INIT))?;
        let mohn = match kind {
            AgentKind::Dqn => None,
            AgentKind::Mohqa => Some(MohnState::new(mohn.clone(), num_actions, online.feature_dim())?),
        };
        let optimizer = Optimizer::new(OptimizerKind::adam(), config.lr, online.network());
        Ok(Self {
            kind,
            config: config.clone(),
            schedule: config.epsilon_schedule(),
            networks: TargetNetworkPair::new(online, config.target_sync)?,
            optimizer,
            memory: ReplayMemory::new(config.replay_capacity)?,
            mohn,
            explore_rng: rng::stream_rng(seed, rng::stream::EXPLORATION),
            replay_rng: rng::stream_rng(seed, rng::stream::REPLAY),
            steps: 0,
            last_learn: None,
        })
    }

    pub fn kind(&self) -> AgentKind {
        self.kind
    }

    pub fn online(&self) -> &QNetwork {
        &self.networks.online
    }

    pub fn target(&self) -> &QNetwork {
        self.networks.target()
    }

    pub fn mohn(&self) -> Option<&MohnState> {
        self.mohn.as_ref()
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.value(self.steps)
    }

    pub fn last_learn(&self) -> Option<LearnStats> {
        self.last_learn
    }

    /// Head outputs without side effects on the Hebbian state.
    pub fn evaluate(&self, obs: &Observation) -> Result<(AgentOutputs, QForward)> {
        let fwd = self.networks.online.forward_obs(obs)?;
        let v_do = fwd.q_values().to_vec();
        let v_mo = match &self.mohn {
            Some(m) => m.output(&m.peek_input(fwd.features())?)?,
            None => vec![0.0; v_do.len()],
        };
        let v_o = combined_q(&v_do, &v_mo)?;
        Ok((AgentOutputs { v_do, v_mo, v_o }, fwd))
    }

    /// Computes both heads for `obs` and picks an ε-greedy action on their
    /// sum. For MOHQA this also advances the feature running average and
    /// stores the Hebbian input that drove the action.
    pub fn act(&mut self, obs: &Observation) -> Result<Decision> {
        let fwd = self.networks.online.forward_obs(obs)?;
        let v_do = fwd.q_values().to_vec();
        let v_mo = match &mut self.mohn {
            Some(m) => {
                let v_mi = m.input(fwd.features())?;
                m.output(&v_mi)?
            }
            None => vec![0.0; v_do.len()],
        };
        let v_o = combined_q(&v_do, &v_mo)?;
        let epsilon = self.epsilon();
        let action = select_action(&v_o, epsilon, &mut self.explore_rng)?;
        Ok(Decision { action, epsilon, outputs: AgentOutputs { v_do, v_mo, v_o } })
    }

    /// Everything that follows an environment step, in order: Hebbian
    /// traces, Hebbian weights, replay storage, the periodic gradient step
    /// and the periodic target sync.
    pub fn observe(&mut self, decision: &Decision, transition: Transition) -> Result<()> {
        if let Some(m) = &mut self.mohn {
            let post = match m.config().post_synaptic {
                PostSynaptic::ExecutedAction => one_hot(decision.action, decision.outputs.v_do.len()),
                PostSynaptic::MohnOutput => decision.outputs.v_mo.clone(),
            };
            m.update_traces(&post)?;
            m.modulate(transition.reward)?;
        }
        self.memory.push(transition);
        self.steps += 1;
        if self.steps.is_multiple_of(self.config.learn_every) && self.memory.ready_for(self.config.batch_size) {
            self.learn()?;
        }
        self.networks.maybe_sync()?;
        Ok(())
    }

    /// One gradient step on a uniformly sampled minibatch.
    pub fn learn(&mut self) -> Result<Option<LearnStats>> {
        let Some(batch) = self.memory.sample(self.config.batch_size, &mut self.replay_rng) else {
            return Ok(None);
        };
        let td = td_loss(&batch, &self.networks.online, self.networks.target(), self.mohn.as_ref(), self.config.gamma)?;
        let update = self.optimizer.step(self.networks.online.network_mut(), &td.tape)?;
        let stats = LearnStats { loss: td.loss, update };
        self.last_learn = Some(stats);
        Ok(Some(stats))
    }

    pub fn end_episode(&mut self) {
        if let Some(m) = &mut self.mohn {
            m.reset_traces();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub reward: f64,
    pub length: usize,
    /// Exploration rate after the episode's last step.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub kind: AgentKind,
    pub seed: u64,
    pub config_hash: String,
    pub episodes: Vec<EpisodeRecord>,
}

/// Runs up to `episodes` episodes of at most `max_steps` steps each. The
/// callback sees every finished episode and may stop the run early.
pub fn train<F>(
    episodes: usize,
    max_steps: usize,
    env: &mut Env,
    agent: &mut Agent,
    mut on_episode: F,
) -> Result<Vec<EpisodeRecord>>
where
    F: FnMut(&EpisodeRecord) -> ControlFlow<()>,
{
    let mut records = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut obs = env.reset();
        let mut total = 0.0;
        let mut length = 0;
        while length < max_steps {
            let decision = agent.act(&obs)?;
            let step = env.step(decision.action)?;
            total += step.reward;
            length += 1;
            let done = step.done;
            agent.observe(
                &decision,
                Transition {
                    obs,
                    action: decision.action,
                    reward: step.reward,
                    next_obs: step.observation.clone(),
                    done,
                },
            )?;
            obs = step.observation;
            if done {
                break;
            }
        }
        agent.end_episode();
        let record = EpisodeRecord { episode, reward: total, length, epsilon: agent.epsilon() };
        records.push(record);
        if on_episode(&record).is_break() {
            break;
        }
    }
    Ok(records)
}

/// Builds the environment and agent for one `(kind, seed)` pair and trains
/// for `config.run.episodes` episodes.
///
/// Each run seed gets its own graph instance: the observation tables and
/// rewarded leaf are drawn from `env_seed + seed`.
pub fn run_seed<F>(config: &ExperimentConfig, kind: AgentKind, seed: u64, on_episode: F) -> Result<RunRecord>
where
    F: FnMut(&EpisodeRecord) -> ControlFlow<()>,
{
    config.validate()?;
    let mut env_cfg = config.env.clone();
    env_cfg.env_seed = env_cfg.env_seed.wrapping_add(seed);
    let mut env = Env::with_dynamics_seed(env_cfg, seed)?;
    let mut agent = Agent::new(kind, env.num_actions(), &config.agent, &config.mohn, seed)?;
    let episodes = train(config.run.episodes, config.run.max_steps_per_episode, &mut env, &mut agent, on_episode)?;
    Ok(RunRecord { kind, seed, config_hash: config.hash(), episodes })
}
