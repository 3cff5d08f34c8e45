//! Combination Lock: an H-chain with one advancing action per position.
//!
//! The agent starts at position 1. At position h, the correct action moves
//! it to h+1 (reaching the goal from position H ends the episode with reward
//! 0); the incorrect action resets it to position 1. Every non-goal
//! transition costs -1, so the optimal return for horizon H is -(H-1).
//!
//! The correct action string is drawn uniformly from a seed and is never
//! serialized in clear: benchmark files carry `{horizon, seed}` only and
//! regenerate it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{Environment, ModeVariant};
use crate::rng::{derive_rng, Fnv1a};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockSpec {
    pub horizon: usize,
    pub seed: u64,
    correct: Vec<u8>,
}

/// Serialized form: the correct actions are regenerated from the seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LockSpecFile {
    pub horizon: usize,
    pub seed: u64,
}

impl LockSpec {
    pub fn generate(horizon: usize, seed: u64) -> Self {
        assert!(horizon >= 1);
        let mut rng = derive_rng(seed, "lock-spec", &[horizon as u64]);
        let correct = (0..horizon).map(|_| rng.gen_range(0..2u8)).collect();
        LockSpec { horizon, seed, correct }
    }

    pub fn from_file(file: &LockSpecFile) -> Self {
        LockSpec::generate(file.horizon, file.seed)
    }

    pub fn to_file(&self) -> LockSpecFile {
        LockSpecFile { horizon: self.horizon, seed: self.seed }
    }

    pub fn correct_action(&self, position: usize) -> u8 {
        self.correct[position - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LockState {
    /// Chain position in `1..=H`.
    At(u32),
    /// Goal reached; no further steps allowed.
    Done,
}

#[derive(Debug, thiserror::Error)]
pub enum LockError {
    #[error("step on terminal lock state")]
    StepOnTerminal,
}

/// One lock transition. The correct action at position h advances (position
/// H advances to the goal with reward 0); anything else resets to position 1
/// with reward -1.
pub fn lock_step(
    state: LockState,
    action: u8,
    spec: &LockSpec,
) -> Result<(LockState, f64), LockError> {
    let h = match state {
        LockState::Done => return Err(LockError::StepOnTerminal),
        LockState::At(h) => h as usize,
    };
    if action == spec.correct_action(h) {
        if h == spec.horizon {
            Ok((LockState::Done, 0.0))
        } else {
            Ok((LockState::At(h as u32 + 1), -1.0))
        }
    } else {
        Ok((LockState::At(1), -1.0))
    }
}

/// Lock instance as an episodic environment.
#[derive(Debug, Clone)]
pub struct LockEnv {
    pub spec: LockSpec,
    horizon_max: usize,
}

impl LockEnv {
    /// Default step cap of `20 * H`, which guarantees termination without
    /// changing solvability.
    pub fn new(spec: LockSpec) -> Self {
        let horizon_max = 20 * spec.horizon;
        LockEnv { spec, horizon_max }
    }

    /// Explicit step cap, e.g. `H` for single-attempt enumeration.
    pub fn with_horizon_max(spec: LockSpec, horizon_max: usize) -> Self {
        LockEnv { spec, horizon_max }
    }
}

impl Environment for LockEnv {
    type State = LockState;

    fn horizon_max(&self) -> usize {
        self.horizon_max
    }

    fn initial_dist(&self) -> Vec<(LockState, f64)> {
        vec![(LockState::At(1), 1.0)]
    }

    fn action_count(&self) -> usize {
        2
    }

    fn is_action_legal(&self, state: &LockState, action: usize) -> bool {
        !matches!(state, LockState::Done) && action < 2
    }

    fn step(&self, state: &LockState, action: usize) -> (LockState, f64) {
        lock_step(*state, action as u8, &self.spec).expect("step on terminal state")
    }

    fn is_solved(&self, state: &LockState) -> bool {
        matches!(state, LockState::Done)
    }

    fn state_digest(&self, state: &LockState) -> u64 {
        let mut h = Fnv1a::new();
        h.write_bytes(b"lock");
        h.write_u64(match state {
            LockState::At(i) => *i as u64,
            LockState::Done => 0,
        });
        h.finish()
    }

    fn feature_len(&self) -> usize {
        self.spec.horizon
    }

    fn push_state_features(&self, state: &LockState, offset: u32, out: &mut Vec<u32>) {
        if let LockState::At(i) = state {
            out.push(offset + i - 1);
        }
    }

    fn perturb_state(&self, state: &LockState, rng: &mut ChaCha8Rng) -> LockState {
        let current = match state {
            LockState::At(i) => *i,
            LockState::Done => 0,
        };
        if self.spec.horizon == 1 {
            // Only one non-terminal position; flip between it and Done.
            return if current == 1 { LockState::Done } else { LockState::At(1) };
        }
        loop {
            let i = rng.gen_range(1..=self.spec.horizon as u32);
            if i != current {
                return LockState::At(i);
            }
        }
    }

    fn episode_metric(&self, states: &[LockState], actions: &[usize]) -> Option<f64> {
        Some(furthest_state(&self.spec, states, actions) as f64)
    }
}

/// Furthest chain position reached before the first incorrect action (the
/// full horizon H when no incorrect action is ever taken).
pub fn furthest_state(spec: &LockSpec, states: &[LockState], actions: &[usize]) -> u32 {
    let mut furthest = 1u32;
    for (state, &action) in states.iter().zip(actions) {
        let h = match state {
            LockState::At(h) => *h,
            LockState::Done => break,
        };
        furthest = furthest.max(h);
        if action as u8 != spec.correct_action(h as usize) {
            break;
        }
    }
    furthest
}

impl crate::transition::GridDynamicsTask for LockEnv {
    fn grid_shape(&self) -> Option<(usize, u8)> {
        None
    }

    fn state_cells(&self, _state: &LockState) -> Vec<u8> {
        Vec::new()
    }

    fn state_with_cells(&self, template: &LockState, _cells: &[u8]) -> LockState {
        *template
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CountError {
    #[error("distinct-input enumeration exceeds cap {cap}")]
    CapExceeded { cap: usize },
    #[error("up_to_step {step} exceeds horizon cap {horizon_max}")]
    BeyondHorizon { step: usize, horizon_max: usize },
}

/// Count the distinct policy inputs reachable within `up_to_step` decisions
/// under the given conditioning, by exhaustive walk of the action tree.
///
/// For the Markov view this is the number of reachable chain positions; for
/// the sequence views it is the number of distinct histories, which grows as
/// `2^h` per step.
pub fn distinct_input_count(
    spec: &LockSpec,
    mode: ModeVariant,
    up_to_step: usize,
    cap: usize,
) -> Result<u64, CountError> {
    let env = LockEnv::new(spec.clone());
    if up_to_step > env.horizon_max() {
        return Err(CountError::BeyondHorizon { step: up_to_step, horizon_max: env.horizon_max() });
    }
    let encoder = crate::policy::Encoder::new(
        mode,
        crate::policy::MaskOption::Full,
        env.feature_len() as u32,
        2,
        up_to_step.max(1) as u32,
    );
    let mut seen = std::collections::BTreeSet::new();
    // Frontier of (state, history); histories share structure via cloning,
    // which is fine at the sizes the cap admits.
    let initial = LockState::At(1);
    let mut frontier: Vec<(LockState, Vec<(LockState, usize)>)> = vec![(initial, Vec::new())];
    for _step in 1..=up_to_step {
        let mut next = Vec::new();
        for (state, history) in frontier {
            if env.is_terminal(&state) {
                continue;
            }
            let input = encoder
                .encode(&env, &initial, &history, &state)
                .expect("capacity sized to up_to_step");
            seen.insert(input.digest());
            if seen.len() > cap {
                return Err(CountError::CapExceeded { cap });
            }
            for action in 0..2usize {
                let (s2, _) = env.step(&state, action);
                let mut h2 = history.clone();
                h2.push((state, action));
                next.push((s2, h2));
            }
            if next.len() > cap {
                return Err(CountError::CapExceeded { cap });
            }
        }
        frontier = next;
    }
    Ok(seen.len() as u64)
}
