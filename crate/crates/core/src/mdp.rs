//! Episodic MDP contract, rollouts, and exhaustive trajectory enumeration.
//!
//! An [`Environment`] is an immutable instance of a deterministic episodic
//! task: it owns the transition rule, reward, legality predicate, and the
//! feature encoding of its states. Policies never see states directly; they
//! see the encoder's view of the episode (current state, action history, or
//! the full interleaved history depending on the conditioning mode).
//!
//! Rollouts are seeded and single-threaded, so a `(config, seed)` pair
//! reproduces an episode exactly. `enumerate_trajectories` walks the full
//! action tree of small instances and returns every trajectory with its exact
//! probability, which is what the oracle and theory checks are built on.

use serde::{Deserialize, Serialize};

use crate::policy::{Encoder, Policy, PolicyError, SparseInput};
use crate::rng::{rng_from_seed, Fnv1a};
use rand_chacha::ChaCha8Rng;

/// How the policy input is conditioned on the episode so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeVariant {
    /// Input is the current state only.
    Markov,
    /// Input is the initial state plus the sequence of past actions.
    ActionSeq,
    /// Input is the full interleaved state/action history.
    StateActionSeq,
}

impl ModeVariant {
    pub fn tag(self) -> &'static str {
        match self {
            ModeVariant::Markov => "markov",
            ModeVariant::ActionSeq => "action-seq",
            ModeVariant::StateActionSeq => "state-action-seq",
        }
    }

    pub fn is_markov(self) -> bool {
        matches!(self, ModeVariant::Markov)
    }

    pub fn parse_tag(s: &str) -> Option<ModeVariant> {
        match s {
            "markov" => Some(ModeVariant::Markov),
            "action-seq" => Some(ModeVariant::ActionSeq),
            "state-action-seq" => Some(ModeVariant::StateActionSeq),
            _ => None,
        }
    }
}

/// Where the Markov conditioning gets its state chain from.
///
/// Only meaningful for [`ModeVariant::Markov`]; the sequence modes always
/// read the true history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionSource {
    ExactEnv,
    LearnedModel,
}

/// Full conditioning mode: variant plus transition source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditioningMode {
    pub variant: ModeVariant,
    pub transition_source: TransitionSource,
}

impl ConditioningMode {
    pub fn exact(variant: ModeVariant) -> Self {
        ConditioningMode { variant, transition_source: TransitionSource::ExactEnv }
    }
}

/// Deterministic episodic environment instance.
///
/// Actions are dense indices in `0..action_count()`; `step` may only be
/// called on legal actions. The feature methods define the one-hot encoding
/// used by every policy input layout.
pub trait Environment {
    type State: Clone + PartialEq + std::fmt::Debug;

    /// Step-count cap. Episodes are truncated once this many actions ran.
    fn horizon_max(&self) -> usize;

    /// Initial state distribution; probabilities must sum to 1 within 1e-12.
    fn initial_dist(&self) -> Vec<(Self::State, f64)>;

    fn action_count(&self) -> usize;

    fn is_action_legal(&self, state: &Self::State, action: usize) -> bool;

    /// Deterministic transition and reward for a legal `(state, action)`.
    fn step(&self, state: &Self::State, action: usize) -> (Self::State, f64);

    fn is_solved(&self, state: &Self::State) -> bool;

    /// Terminal means no further action can be taken (solved, dead, or
    /// complete). Defaults to the solved predicate.
    fn is_terminal(&self, state: &Self::State) -> bool {
        self.is_solved(state)
    }

    /// Stable digest of a state, used in trajectory logs and replay checks.
    fn state_digest(&self, state: &Self::State) -> u64;

    /// Length of the one-hot feature block for a single state.
    fn feature_len(&self) -> usize;

    /// Append the active feature indices of `state`, shifted by `offset`.
    fn push_state_features(&self, state: &Self::State, offset: u32, out: &mut Vec<u32>);

    /// Produce a different well-formed state, used by the corrupted
    /// transition-model fixture. Must never return `state` itself.
    fn perturb_state(&self, state: &Self::State, rng: &mut ChaCha8Rng) -> Self::State;

    /// Transition extended to actions illegal in `state`, used by learned
    /// transition models whose shadow chain can drift into states where the
    /// executed action no longer applies. Defaults to a no-op.
    fn apply_action_lenient(&self, state: &Self::State, action: usize) -> Self::State {
        if self.is_action_legal(state, action) {
            self.step(state, action).0
        } else {
            state.clone()
        }
    }

    /// Environment-specific per-episode diagnostic (the lock reports the
    /// furthest chain position reached before the first incorrect action).
    fn episode_metric(&self, _states: &[Self::State], _actions: &[usize]) -> Option<f64> {
        None
    }
}

/// Sample an initial state from the environment's initial distribution.
pub fn sample_initial<E: Environment>(env: &E, rng: &mut ChaCha8Rng) -> E::State {
    let dist = env.initial_dist();
    debug_assert!((dist.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
    if dist.len() == 1 {
        return dist.into_iter().next().unwrap().0;
    }
    use rand::Rng;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, p) in &dist {
        acc += p;
        if u < acc {
            return s.clone();
        }
    }
    dist.into_iter().last().unwrap().0
}

/// How an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Terminal state satisfied the solved predicate.
    Solved,
    /// Illegal action emitted, or terminal state reached without solving.
    Failed,
    /// Horizon cap hit before a terminal state.
    Truncated,
}

/// One logged step: state digest, action, reward, and a digest of the exact
/// policy input (enough to verify a replay without storing the vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub state_digest: u64,
    pub action: usize,
    pub reward: f64,
    pub input_digest: u64,
}

/// Compact, serializable record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub seed: u64,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Discounted return `sum_h gamma^(h-1) r_h`.
pub fn trajectory_return(traj: &Trajectory, gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut scale = 1.0;
    for step in &traj.steps {
        acc += scale * step.reward;
        scale *= gamma;
    }
    acc
}

/// Full-fidelity rollout record used by training and evaluation.
///
/// `states` holds `s_1 ..= s_{T+1}` (one more entry than `actions`) except
/// when the episode ended on an illegal action, in which case the offending
/// state is the last entry.
#[derive(Debug, Clone)]
pub struct RichRollout<S> {
    pub states: Vec<S>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub inputs: Vec<SparseInput>,
    pub log_probs: Vec<f64>,
    pub outcome: Outcome,
    pub seed: u64,
}

impl<S> RichRollout<S> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn terminal_reward(&self) -> f64 {
        self.rewards.last().copied().unwrap_or(0.0)
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RolloutError {
    #[error("encoder/env shape mismatch: {0}")]
    Configuration(String),
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
}

/// Determine the outcome for a finished episode.
fn closing_outcome<E: Environment>(env: &E, state: &E::State, steps: usize) -> Outcome {
    if env.is_solved(state) {
        Outcome::Solved
    } else if env.is_terminal(state) {
        Outcome::Failed
    } else {
        debug_assert!(steps >= env.horizon_max());
        Outcome::Truncated
    }
}

/// Run one episode with the given conditioning encoder.
///
/// The policy samples from its softmax head at every step. An illegal action
/// ends the episode immediately with [`Outcome::Failed`] and reward 0 for
/// that step. Deterministic per `(env, policy, encoder, seed)`.
pub fn rollout_rich<E: Environment>(
    env: &E,
    policy: &Policy,
    encoder: &Encoder,
    seed: u64,
) -> Result<RichRollout<E::State>, RolloutError> {
    let mut rng = rng_from_seed(seed);
    rollout_rich_with_rng(env, policy, encoder, seed, &mut rng)
}

/// [`rollout_rich`] drawing from a caller-owned stream; `seed` is recorded
/// in the result but the randomness comes from `rng`.
pub fn rollout_rich_with_rng<E: Environment>(
    env: &E,
    policy: &Policy,
    encoder: &Encoder,
    seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<RichRollout<E::State>, RolloutError> {
    encoder.check_env(env).map_err(RolloutError::Configuration)?;
    if policy.input_dim() != encoder.input_dim() {
        return Err(RolloutError::Configuration(format!(
            "policy expects input dim {}, encoder produces {}",
            policy.input_dim(),
            encoder.input_dim()
        )));
    }
    if policy.action_count() as usize != env.action_count() {
        return Err(RolloutError::Configuration(format!(
            "policy has {} actions, env has {}",
            policy.action_count(),
            env.action_count()
        )));
    }

    let initial = sample_initial(env, rng);
    let mut states = vec![initial.clone()];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut inputs = Vec::new();
    let mut log_probs = Vec::new();
    let mut history: Vec<(E::State, usize)> = Vec::new();
    let mut state = initial.clone();

    let outcome = loop {
        if env.is_terminal(&state) {
            break closing_outcome(env, &state, actions.len());
        }
        if actions.len() >= env.horizon_max() {
            break Outcome::Truncated;
        }
        let input = encoder
            .encode(env, &initial, &history, &state)
            .map_err(RolloutError::Configuration)?;
        let (action, logp) = policy.act(&input, rng)?;
        inputs.push(input);
        log_probs.push(logp);
        actions.push(action);
        if !env.is_action_legal(&state, action) {
            rewards.push(0.0);
            break Outcome::Failed;
        }
        let (next, reward) = env.step(&state, action);
        rewards.push(reward);
        history.push((state.clone(), action));
        states.push(next.clone());
        state = next;
    };

    Ok(RichRollout { states, actions, rewards, inputs, log_probs, outcome, seed })
}

/// Compact-trajectory view of [`rollout_rich`].
pub fn rollout<E: Environment>(
    env: &E,
    policy: &Policy,
    encoder: &Encoder,
    seed: u64,
) -> Result<Trajectory, RolloutError> {
    let rich = rollout_rich(env, policy, encoder, seed)?;
    Ok(trajectory_of(env, &rich))
}

/// Build the compact trajectory record for a rich rollout.
pub fn trajectory_of<E: Environment>(env: &E, rich: &RichRollout<E::State>) -> Trajectory {
    let steps = rich
        .actions
        .iter()
        .enumerate()
        .map(|(h, &action)| StepRecord {
            state_digest: env.state_digest(&rich.states[h]),
            action,
            reward: rich.rewards[h],
            input_digest: rich.inputs[h].digest(),
        })
        .collect();
    Trajectory { steps, outcome: rich.outcome, seed: rich.seed }
}

/// Default cap on the number of enumerated trajectories.
pub const ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, thiserror::Error)]
pub enum EnumerateError {
    #[error("trajectory count exceeds cap {cap} (at least {seen} found, upper bound {bound:.3e})")]
    CapExceeded { cap: usize, seen: usize, bound: f64 },
    #[error("rollout error: {0}")]
    Rollout(#[from] RolloutError),
    #[error("encoder error: {0}")]
    Encode(String),
}

/// Exhaustively enumerate every trajectory and its exact probability.
///
/// Branches over all actions with positive policy probability, so softmax
/// policies branch over the full action set. Probabilities sum to 1 within
/// 1e-12; refuses with a count estimate when the tree exceeds `cap`.
pub fn enumerate_trajectories<E: Environment>(
    env: &E,
    policy: &Policy,
    encoder: &Encoder,
    cap: usize,
) -> Result<Vec<(Trajectory, f64)>, EnumerateError> {
    encoder.check_env(env).map_err(EnumerateError::Encode)?;
    let bound = (env.action_count() as f64).powi(env.horizon_max() as i32);
    let mut out = Vec::new();
    let initial_dist = env.initial_dist();

    struct Frame<S> {
        state: S,
        prob: f64,
        history: Vec<(S, usize)>,
        steps: Vec<StepRecord>,
    }

    for (initial, rho) in initial_dist {
        if rho == 0.0 {
            continue;
        }
        let mut stack = vec![Frame {
            state: initial.clone(),
            prob: rho,
            history: Vec::new(),
            steps: Vec::new(),
        }];
        while let Some(frame) = stack.pop() {
            let Frame { state, prob, history, steps } = frame;
            let done = env.is_terminal(&state) || steps.len() >= env.horizon_max();
            if done {
                let outcome = closing_outcome(env, &state, steps.len());
                out.push((Trajectory { steps, outcome, seed: 0 }, prob));
                if out.len() > cap {
                    return Err(EnumerateError::CapExceeded { cap, seen: out.len(), bound });
                }
                continue;
            }
            let input = encoder
                .encode(env, &initial, &history, &state)
                .map_err(EnumerateError::Encode)?;
            let input_digest = input.digest();
            let probs = policy.action_probs(&input).map_err(RolloutError::Policy)?;
            for (action, &p) in probs.iter().enumerate() {
                if p <= 0.0 {
                    continue;
                }
                let state_digest = env.state_digest(&state);
                if !env.is_action_legal(&state, action) {
                    let mut steps = steps.clone();
                    steps.push(StepRecord { state_digest, action, reward: 0.0, input_digest });
                    out.push((Trajectory { steps, outcome: Outcome::Failed, seed: 0 }, prob * p));
                    if out.len() > cap {
                        return Err(EnumerateError::CapExceeded { cap, seen: out.len(), bound });
                    }
                    continue;
                }
                let (next, reward) = env.step(&state, action);
                let mut steps = steps.clone();
                steps.push(StepRecord { state_digest, action, reward, input_digest });
                let mut history = history.clone();
                history.push((state.clone(), action));
                stack.push(Frame { state: next, prob: prob * p, history, steps });
            }
        }
    }
    Ok(out)
}

/// Exact expected (undiscounted) return over an enumeration.
pub fn expected_return(trajectories: &[(Trajectory, f64)]) -> f64 {
    trajectories.iter().map(|(t, p)| p * t.total_reward()).sum()
}

/// One line of the JSONL trajectory log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryLogRecord {
    pub episode: u64,
    pub seed: u64,
    pub mode: String,
    pub outcome: Outcome,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryLogRecord {
    pub fn new(episode: u64, mode: ModeVariant, traj: &Trajectory) -> Self {
        TrajectoryLogRecord {
            episode,
            seed: traj.seed,
            mode: mode.tag().to_string(),
            outcome: traj.outcome,
            steps: traj.steps.clone(),
        }
    }
}

/// Write trajectory records as one JSON object per line.
pub fn write_trajectory_log<W: std::io::Write>(
    w: &mut W,
    records: &[TrajectoryLogRecord],
) -> std::io::Result<()> {
    for rec in records {
        let line = serde_json::to_string(rec).expect("trajectory records serialize");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Digest of a whole trajectory, for replay-identity assertions.
pub fn trajectory_digest(traj: &Trajectory) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(traj.seed);
    for s in &traj.steps {
        h.write_u64(s.state_digest);
        h.write_u64(s.action as u64);
        h.write_u64(s.reward.to_bits());
        h.write_u64(s.input_digest);
    }
    h.write_u64(match traj.outcome {
        Outcome::Solved => 1,
        Outcome::Failed => 2,
        Outcome::Truncated => 3,
    });
    h.finish()
}
