//! Input encoders and softmax policies.
//!
//! All policy inputs are sparse binary vectors: one-hot planes for grid
//! cells, a one-hot chain index for the lock, one-hot action blocks for
//! histories. [`SparseInput`] stores only the active indices, which keeps the
//! replay buffer small and makes the first MLP layer cost proportional to the
//! number of set bits rather than the layout width.
//!
//! The three conditioning layouts:
//!
//! - `Markov`: `[ current state ]`
//! - `ActionSeq`: `[ initial state | a_1 | a_2 | ... | a_C ]`
//! - `StateActionSeq`: `[ s_1 | a_1 | s_2 | a_2 | ... | s_C ]`
//!
//! where `C` is the layout capacity in decision steps. Blocks are
//! chronological and padding positions stay zero. The diagnostic masks zero
//! blocks at encode time: `history_only` drops the current-state block,
//! `last_state_only` keeps only the current-state block.

mod mlp;

pub use mlp::{grad_check, Adam, LossProbe, Mlp, MlpGrads, Optimizer, Sgd};

use serde::{Deserialize, Serialize};

use crate::mdp::{Environment, ModeVariant};
use crate::rng::{rng_from_seed, Fnv1a};
use rand_chacha::ChaCha8Rng;

/// Sparse binary feature vector: `dim` total positions, `active` set to 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseInput {
    pub dim: u32,
    pub active: Vec<u32>,
}

impl SparseInput {
    pub fn new(dim: u32, mut active: Vec<u32>) -> Self {
        active.sort_unstable();
        active.dedup();
        debug_assert!(active.iter().all(|&i| i < dim));
        SparseInput { dim, active }
    }

    /// Dense `f64` view, for gradient checks and tests.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim as usize];
        for &i in &self.active {
            v[i as usize] = 1.0;
        }
        v
    }

    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u32(self.dim);
        for &i in &self.active {
            h.write_u32(i);
        }
        h.finish()
    }
}

/// Eval-time input masks for the ablation of history vs current state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskOption {
    Full,
    /// Zero the current-state block; the policy sees only the past.
    HistoryOnly,
    /// Zero everything except the most recent state block.
    LastStateOnly,
}

/// Fixed-length input layout for one (environment, mode) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub variant: ModeVariant,
    pub mask: MaskOption,
    pub state_dim: u32,
    pub action_count: u32,
    /// Maximum number of decision steps the layout can represent.
    pub capacity: u32,
}

impl Encoder {
    pub fn new(
        variant: ModeVariant,
        mask: MaskOption,
        state_dim: u32,
        action_count: u32,
        capacity: u32,
    ) -> Self {
        assert!(capacity >= 1);
        Encoder { variant, mask, state_dim, action_count, capacity }
    }

    /// Layout sized for a specific environment instance (capacity = horizon).
    pub fn for_env<E: Environment>(env: &E, variant: ModeVariant, mask: MaskOption) -> Self {
        Encoder::new(
            variant,
            mask,
            env.feature_len() as u32,
            env.action_count() as u32,
            env.horizon_max() as u32,
        )
    }

    /// Layout covering a whole instance set: capacity is the maximum
    /// horizon. All instances must share feature and action dimensions.
    pub fn for_instances<E: Environment>(
        envs: &[E],
        variant: ModeVariant,
        mask: MaskOption,
    ) -> Self {
        assert!(!envs.is_empty());
        let state_dim = envs[0].feature_len() as u32;
        let action_count = envs[0].action_count() as u32;
        let capacity = envs.iter().map(|e| e.horizon_max()).max().unwrap() as u32;
        for env in envs {
            assert_eq!(env.feature_len() as u32, state_dim, "feature dims must match");
            assert_eq!(env.action_count() as u32, action_count, "action spaces must match");
        }
        Encoder::new(variant, mask, state_dim, action_count, capacity)
    }

    pub fn input_dim(&self) -> u32 {
        match self.variant {
            ModeVariant::Markov => self.state_dim,
            ModeVariant::ActionSeq => self.state_dim + self.capacity * self.action_count,
            ModeVariant::StateActionSeq => {
                self.capacity * self.state_dim + (self.capacity - 1) * self.action_count
            }
        }
    }

    pub fn check_env<E: Environment>(&self, env: &E) -> Result<(), String> {
        if env.feature_len() as u32 != self.state_dim {
            return Err(format!(
                "encoder state_dim {} != env feature_len {}",
                self.state_dim,
                env.feature_len()
            ));
        }
        if env.action_count() as u32 != self.action_count {
            return Err(format!(
                "encoder action_count {} != env action_count {}",
                self.action_count,
                env.action_count()
            ));
        }
        Ok(())
    }

    /// Offset of interleaved block `j` (0-based decision step).
    fn sas_state_offset(&self, j: u32) -> u32 {
        j * (self.state_dim + self.action_count)
    }

    fn sas_action_offset(&self, j: u32) -> u32 {
        self.sas_state_offset(j) + self.state_dim
    }

    /// Encode the policy input for the current decision.
    ///
    /// `history` lists the `(state, action)` pairs already taken, oldest
    /// first; `current` is the state the next action will be chosen from.
    pub fn encode<E: Environment>(
        &self,
        env: &E,
        initial: &E::State,
        history: &[(E::State, usize)],
        current: &E::State,
    ) -> Result<SparseInput, String> {
        let h = history.len() as u32; // current decision index, 0-based
        let mut active = Vec::new();
        match self.variant {
            ModeVariant::Markov => {
                if self.mask != MaskOption::HistoryOnly {
                    env.push_state_features(current, 0, &mut active);
                }
            }
            ModeVariant::ActionSeq => {
                if h > self.capacity {
                    return Err(format!(
                        "history length {h} exceeds layout capacity {}",
                        self.capacity
                    ));
                }
                env.push_state_features(initial, 0, &mut active);
                for (j, (_, action)) in history.iter().enumerate() {
                    let off = self.state_dim + (j as u32) * self.action_count;
                    active.push(off + *action as u32);
                }
            }
            ModeVariant::StateActionSeq => {
                if h + 1 > self.capacity {
                    return Err(format!(
                        "history length {h} exceeds layout capacity {} (needs {} state blocks)",
                        self.capacity,
                        h + 1
                    ));
                }
                let keep_past = self.mask != MaskOption::LastStateOnly;
                let keep_current = self.mask != MaskOption::HistoryOnly;
                if keep_past {
                    for (j, (state, action)) in history.iter().enumerate() {
                        let j = j as u32;
                        env.push_state_features(state, self.sas_state_offset(j), &mut active);
                        active.push(self.sas_action_offset(j) + *action as u32);
                    }
                }
                if keep_current {
                    env.push_state_features(current, self.sas_state_offset(h), &mut active);
                }
            }
        }
        Ok(SparseInput::new(self.input_dim(), active))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("input dim {got} does not match policy dim {want}")]
    InputDim { got: u32, want: u32 },
    #[error("non-finite logits")]
    NonFiniteLogits,
}

/// Below this temperature, `act` degenerates to a deterministic argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-9;

/// Tabular softmax policy keyed by the input digest.
///
/// Unseen inputs fall back to all-zero logits (uniform). Used to build
/// matched policies across conditioning modes in equivalence tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub table: std::collections::BTreeMap<u64, Vec<f64>>,
}

/// Parameterized softmax action distribution over encoded inputs.
#[derive(Debug, Clone)]
pub struct Policy {
    kind: PolicyKind,
    input_dim: u32,
    action_count: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
enum PolicyKind {
    Tabular(TabularPolicy),
    Mlp(Mlp),
}

impl Policy {
    /// Fresh MLP policy. `hidden` Layers use tanh; the output head is linear.
    pub fn mlp(input_dim: u32, hidden: &[u32], action_count: u32, seed: u64) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_count);
        Policy {
            kind: PolicyKind::Mlp(Mlp::new(&dims, seed)),
            input_dim,
            action_count,
            temperature: 1.0,
        }
    }

    /// MLP policy whose output layer starts at zero: the initial action
    /// distribution is exactly uniform at every input.
    pub fn mlp_uniform_init(input_dim: u32, hidden: &[u32], action_count: u32, seed: u64) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_count);
        Policy {
            kind: PolicyKind::Mlp(Mlp::new_zero_head(&dims, seed)),
            input_dim,
            action_count,
            temperature: 1.0,
        }
    }

    pub fn tabular(input_dim: u32, action_count: u32, table: TabularPolicy) -> Self {
        Policy { kind: PolicyKind::Tabular(table), input_dim, action_count, temperature: 1.0 }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        assert!(temperature >= 0.0);
        self.temperature = temperature;
        self
    }

    pub fn input_dim(&self) -> u32 {
        self.input_dim
    }

    pub fn action_count(&self) -> u32 {
        self.action_count
    }

    pub fn net(&self) -> Option<&Mlp> {
        match &self.kind {
            PolicyKind::Mlp(net) => Some(net),
            PolicyKind::Tabular(_) => None,
        }
    }

    pub fn net_mut(&mut self) -> Option<&mut Mlp> {
        match &mut self.kind {
            PolicyKind::Mlp(net) => Some(net),
            PolicyKind::Tabular(_) => None,
        }
    }

    pub fn logits(&self, input: &SparseInput) -> Result<Vec<f64>, PolicyError> {
        if input.dim != self.input_dim {
            return Err(PolicyError::InputDim { got: input.dim, want: self.input_dim });
        }
        let logits = match &self.kind {
            PolicyKind::Mlp(net) => net.forward(&input.active),
            PolicyKind::Tabular(t) => t
                .table
                .get(&input.digest())
                .cloned()
                .unwrap_or_else(|| vec![0.0; self.action_count as usize]),
        };
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteLogits);
        }
        Ok(logits)
    }

    /// Softmax action probabilities at the policy temperature.
    pub fn action_probs(&self, input: &SparseInput) -> Result<Vec<f64>, PolicyError> {
        let logits = self.logits(input)?;
        if self.temperature < GREEDY_TEMPERATURE {
            let best = argmax(&logits);
            let mut p = vec![0.0; logits.len()];
            p[best] = 1.0;
            return Ok(p);
        }
        Ok(softmax_scaled(&logits, self.temperature))
    }

    /// Sample an action; returns `(action, log_prob)` under the sampling
    /// distribution.
    pub fn act(
        &self,
        input: &SparseInput,
        rng: &mut ChaCha8Rng,
    ) -> Result<(usize, f64), PolicyError> {
        let probs = self.action_probs(input)?;
        use rand::Rng;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (a, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = a;
                break;
            }
        }
        Ok((chosen, probs[chosen].max(f64::MIN_POSITIVE).ln()))
    }

    pub fn log_prob(&self, input: &SparseInput, action: usize) -> Result<f64, PolicyError> {
        let probs = self.action_probs(input)?;
        Ok(probs[action].max(f64::MIN_POSITIVE).ln())
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of `logits / temperature`.
pub fn softmax_scaled(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
    softmax(&scaled)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Serialized policy: architecture header plus exact parameters.
///
/// JSON floats round-trip exactly (shortest-representation printing), so a
/// checkpoint reloads bit-identical parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub version: u32,
    pub kind: String,
    pub input_dim: u32,
    pub action_count: u32,
    pub temperature: f64,
    pub encoder: Encoder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_dims: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_params: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TabularPolicy>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Policy {
    pub fn to_checkpoint(&self, encoder: &Encoder) -> PolicyCheckpoint {
        let (kind, mlp_dims, mlp_params, table) = match &self.kind {
            PolicyKind::Mlp(net) => (
                "mlp".to_string(),
                Some(net.dims.clone()),
                Some(net.export_params()),
                None,
            ),
            PolicyKind::Tabular(t) => ("tabular".to_string(), None, None, Some(t.clone())),
        };
        PolicyCheckpoint {
            version: CHECKPOINT_VERSION,
            kind,
            input_dim: self.input_dim,
            action_count: self.action_count,
            temperature: self.temperature,
            encoder: encoder.clone(),
            mlp_dims,
            mlp_params,
            table,
        }
    }

    pub fn from_checkpoint(ckpt: &PolicyCheckpoint) -> Result<(Policy, Encoder), CheckpointError> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(ckpt.version));
        }
        let kind = match ckpt.kind.as_str() {
            "mlp" => {
                let dims = ckpt
                    .mlp_dims
                    .as_ref()
                    .ok_or_else(|| CheckpointError::Malformed("missing mlp_dims".into()))?;
                let params = ckpt
                    .mlp_params
                    .as_ref()
                    .ok_or_else(|| CheckpointError::Malformed("missing mlp_params".into()))?;
                let mut net = Mlp::new(dims, 0);
                net.import_params(params)
                    .map_err(CheckpointError::Malformed)?;
                PolicyKind::Mlp(net)
            }
            "tabular" => PolicyKind::Tabular(
                ckpt.table
                    .clone()
                    .ok_or_else(|| CheckpointError::Malformed("missing table".into()))?,
            ),
            other => return Err(CheckpointError::Malformed(format!("unknown kind {other}"))),
        };
        let policy = Policy {
            kind,
            input_dim: ckpt.input_dim,
            action_count: ckpt.action_count,
            temperature: ckpt.temperature,
        };
        Ok((policy, ckpt.encoder.clone()))
    }
}

/// Deterministic RNG helper for policy sampling in tests.
pub fn policy_rng(seed: u64) -> ChaCha8Rng {
    rng_from_seed(seed)
}
