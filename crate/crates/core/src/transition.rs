//! Learned and corrupted state-transition models.
//!
//! A [`TransitionModel`] stands in for the environment's deterministic
//! transition when the policy runs in approximate-Markov mode: the policy
//! sees the model's state chain while the true environment still executes
//! actions and judges the outcome. The `Corrupted` fixture perturbs the
//! exact transition with a given probability and is the controlled way to
//! dial the model error rate; corrupted states are other well-formed states,
//! so policy inputs stay in-domain.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{Environment, Outcome, RichRollout, RolloutError};
use crate::policy::{softmax, Adam, Encoder, Mlp, MlpGrads, Policy};
use crate::rng::{derive_rng, rng_from_seed};

/// Next-state predictor.
pub enum TransitionModel<E: Environment> {
    /// The true transition.
    Exact,
    /// Memorized `(state, action) -> next` pairs with rule-based fallback.
    Table(HashMap<(u64, usize), E::State>),
    /// Small network predicting per-cell contents (grid tasks).
    Network(GridDynamicsNet),
    /// Exact transition perturbed with probability `rate`.
    Corrupted { rate: f64 },
}

impl<E: Environment + GridDynamicsTask> TransitionModel<E> {
    /// Predict the next state for a `(state, action)` pair. Total on all
    /// pairs: actions illegal for `state` fall back to the lenient
    /// transition (the shadow chain can drift into states where the chosen
    /// action no longer applies).
    pub fn predict(
        &self,
        env: &E,
        state: &E::State,
        action: usize,
        rng: &mut ChaCha8Rng,
    ) -> E::State {
        match self {
            TransitionModel::Exact => lenient_step(env, state, action),
            TransitionModel::Table(table) => table
                .get(&(env.state_digest(state), action))
                .cloned()
                .unwrap_or_else(|| lenient_step(env, state, action)),
            TransitionModel::Network(net) => net.predict(env, state, action),
            TransitionModel::Corrupted { rate } => {
                let exact = lenient_step(env, state, action);
                if rng.gen::<f64>() < *rate {
                    env.perturb_state(&exact, rng)
                } else {
                    exact
                }
            }
        }
    }
}

/// True transition extended to illegal actions: the state is left unchanged
/// unless the environment provides a more specific lenient rule.
fn lenient_step<E: Environment>(env: &E, state: &E::State, action: usize) -> E::State {
    if env.is_action_legal(state, action) {
        env.step(state, action).0
    } else {
        env.apply_action_lenient(state, action)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FitError {
    #[error("conflicting triplets: same (state, action) maps to two different next states")]
    Conflict,
    #[error("model kind not supported for this task: {0}")]
    Unsupported(String),
    #[error("no triplets provided")]
    Empty,
}

/// Which model family [`fit_transition`] should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Table,
    Network,
}

/// Fit a transition model from `(state, action, next)` triplets.
pub fn fit_transition<E: Environment + GridDynamicsTask>(
    env: &E,
    triplets: &[(E::State, usize, E::State)],
    kind: ModelKind,
    seed: u64,
) -> Result<TransitionModel<E>, FitError> {
    if triplets.is_empty() {
        return Err(FitError::Empty);
    }
    match kind {
        ModelKind::Table => {
            let mut table = HashMap::new();
            for (s, a, next) in triplets {
                let key = (env.state_digest(s), *a);
                if let Some(prev) = table.get(&key) {
                    if prev != next {
                        return Err(FitError::Conflict);
                    }
                } else {
                    table.insert(key, next.clone());
                }
            }
            Ok(TransitionModel::Table(table))
        }
        ModelKind::Network => {
            let net = GridDynamicsNet::fit(env, triplets, seed)?;
            Ok(TransitionModel::Network(net))
        }
    }
}

/// Grid-task hook for the network dynamics model: boards expose their cells
/// as a flat `0..=size` vector.
pub trait GridDynamicsTask: Environment {
    /// `None` for tasks without a per-cell state (the network model is then
    /// unsupported).
    fn grid_shape(&self) -> Option<(usize, u8)>;
    fn state_cells(&self, state: &Self::State) -> Vec<u8>;
    fn state_with_cells(&self, template: &Self::State, cells: &[u8]) -> Self::State;
}

/// Per-cell categorical predictor of the next board.
///
/// Input: current state features plus a one-hot action block; output: one
/// `(size + 1)`-way head per cell, trained with cross-entropy on observed
/// transitions and read out by per-cell argmax.
pub struct GridDynamicsNet {
    net: Mlp,
    cells: usize,
    values: u8,
    action_count: usize,
    state_dim: u32,
}

impl GridDynamicsNet {
    fn encode<E: Environment>(env: &E, state: &E::State, action: usize, state_dim: u32) -> Vec<u32> {
        let mut active = Vec::new();
        env.push_state_features(state, 0, &mut active);
        active.push(state_dim + action as u32);
        active
    }

    pub fn fit<E: Environment + GridDynamicsTask>(
        env: &E,
        triplets: &[(E::State, usize, E::State)],
        seed: u64,
    ) -> Result<Self, FitError> {
        let (cells, values) = env
            .grid_shape()
            .ok_or_else(|| FitError::Unsupported("network model needs a cell grid".into()))?;
        let state_dim = env.feature_len() as u32;
        let action_count = env.action_count();
        let input_dim = state_dim + action_count as u32;
        let out_dim = (cells * (values as usize + 1)) as u32;
        let mut net = Mlp::new(&[input_dim, out_dim], seed);
        let mut opt = Adam::new(&net, 5e-2);
        let mut rng = derive_rng(seed, "dyn-fit", &[]);
        let epochs = 30;
        let heads = values as usize + 1;
        for _ in 0..epochs {
            let mut order: Vec<usize> = (0..triplets.len()).collect();
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng);
            for batch in order.chunks(32) {
                let mut grads = MlpGrads::zeros_like(&net);
                for &i in batch {
                    let (s, a, next) = &triplets[i];
                    let active = Self::encode(env, s, *a, state_dim);
                    let cache = net.forward_cached(&active);
                    let out = cache.output();
                    let target = env.state_cells(next);
                    let mut dout = vec![0.0; out.len()];
                    for c in 0..cells {
                        let head = &out[c * heads..(c + 1) * heads];
                        let mut p = softmax(head);
                        p[target[c] as usize] -= 1.0;
                        for (k, &g) in p.iter().enumerate() {
                            dout[c * heads + k] = g / batch.len() as f64;
                        }
                    }
                    net.backward(&active, &cache, &dout, &mut grads);
                }
                opt.step(&mut net, &grads);
            }
        }
        Ok(GridDynamicsNet { net, cells, values, action_count, state_dim })
    }

    pub fn predict<E: Environment + GridDynamicsTask>(
        &self,
        env: &E,
        state: &E::State,
        action: usize,
    ) -> E::State {
        debug_assert_eq!(env.action_count(), self.action_count);
        let active = Self::encode(env, state, action, self.state_dim);
        let out = self.net.forward(&active);
        let heads = self.values as usize + 1;
        let mut cells = vec![0u8; self.cells];
        for c in 0..self.cells {
            let head = &out[c * heads..(c + 1) * heads];
            let mut best = 0;
            for (k, &v) in head.iter().enumerate() {
                if v > head[best] {
                    best = k;
                }
            }
            cells[c] = best as u8;
        }
        env.state_with_cells(state, &cells)
    }
}

/// Mismatch-rate estimate with a Wilson 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub mismatches: usize,
    pub trials: usize,
    pub rate: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error("empty held-out set")]
    Empty,
}

/// Fraction of held-out legal `(state, action)` pairs where the model's
/// prediction disagrees with the exact transition.
pub fn measure_epsilon<E: Environment + GridDynamicsTask>(
    model: &TransitionModel<E>,
    env: &E,
    heldout: &[(E::State, usize)],
    seed: u64,
) -> Result<EpsilonEstimate, MeasureError> {
    if heldout.is_empty() {
        return Err(MeasureError::Empty);
    }
    let mut rng = rng_from_seed(seed);
    let mut mismatches = 0;
    for (s, a) in heldout {
        debug_assert!(env.is_action_legal(s, *a));
        let predicted = model.predict(env, s, *a, &mut rng);
        let (exact, _) = env.step(s, *a);
        if predicted != exact {
            mismatches += 1;
        }
    }
    let (lo, hi) = wilson_interval(mismatches, heldout.len(), 1.96);
    Ok(EpsilonEstimate {
        mismatches,
        trials: heldout.len(),
        rate: mismatches as f64 / heldout.len() as f64,
        lo,
        hi,
    })
}

/// Rollout where the policy sees the model's state chain.
#[derive(Debug, Clone)]
pub struct ApproxRollout<S> {
    pub rollout: RichRollout<S>,
    /// Shadow states the policy conditioned on, one per step.
    pub approx_states: Vec<S>,
    /// Steps at which the shadow state differed from the true state.
    pub divergence_steps: usize,
    /// Earliest step index (0-based) with a diverged shadow state.
    pub first_divergence: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum ApproxRolloutError {
    #[error("approximate rollouts require Markov conditioning")]
    NotMarkov,
    #[error(transparent)]
    Rollout(#[from] RolloutError),
}

/// Run one episode with the policy conditioned on the model's state chain
/// (`shadow_1 = s_1`, `shadow_{h+1} = model(shadow_h, a_h)`).
///
/// The true environment executes every action and judges legality and the
/// outcome; the shadow chain only feeds the policy.
pub fn approx_rollout<E: Environment + GridDynamicsTask>(
    env: &E,
    policy: &Policy,
    encoder: &Encoder,
    model: &TransitionModel<E>,
    seed: u64,
) -> Result<ApproxRollout<E::State>, ApproxRolloutError> {
    if !encoder.variant.is_markov() {
        return Err(ApproxRolloutError::NotMarkov);
    }
    encoder
        .check_env(env)
        .map_err(RolloutError::Configuration)?;
    let mut rng = rng_from_seed(seed);
    let initial = crate::mdp::sample_initial(env, &mut rng);
    let mut state = initial.clone();
    let mut shadow = initial.clone();
    let mut states = vec![initial.clone()];
    let mut approx_states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut inputs = Vec::new();
    let mut log_probs = Vec::new();
    let mut divergence_steps = 0;
    let mut first_divergence = None;

    let outcome = loop {
        if env.is_terminal(&state) {
            break if env.is_solved(&state) { Outcome::Solved } else { Outcome::Failed };
        }
        if actions.len() >= env.horizon_max() {
            break Outcome::Truncated;
        }
        if shadow != state {
            divergence_steps += 1;
            first_divergence.get_or_insert(actions.len());
        }
        approx_states.push(shadow.clone());
        let input = encoder
            .encode(env, &initial, &[], &shadow)
            .map_err(RolloutError::Configuration)?;
        let (action, logp) = policy.act(&input, &mut rng).map_err(RolloutError::Policy)?;
        inputs.push(input);
        log_probs.push(logp);
        actions.push(action);
        if !env.is_action_legal(&state, action) {
            rewards.push(0.0);
            break Outcome::Failed;
        }
        let (next, reward) = env.step(&state, action);
        rewards.push(reward);
        shadow = model.predict(env, &shadow, action, &mut rng);
        states.push(next.clone());
        state = next;
    };

    Ok(ApproxRollout {
        rollout: RichRollout { states, actions, rewards, inputs, log_probs, outcome, seed },
        approx_states,
        divergence_steps,
        first_divergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout_rich, ModeVariant};
    use crate::policy::MaskOption;
    use crate::puzzles::{generate, DifficultyConfig, PuzzleInstance, Split, SudokuEnv, Task};

    fn mini_sudoku(seed: u64, split: Split) -> SudokuEnv {
        let cfg = DifficultyConfig::mini(Task::Sudoku, split);
        let PuzzleInstance::Sudoku(b) = generate(&cfg, seed).unwrap() else { panic!() };
        SudokuEnv::new(b)
    }

    fn legal_pairs(env: &SudokuEnv, n: usize, seed: u64) -> Vec<(crate::puzzles::SudokuBoard, usize)> {
        // Walk random legal fills collecting (state, action) pairs.
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::new();
        while out.len() < n {
            let mut state = env.initial_dist().remove(0).0;
            loop {
                let legal: Vec<usize> =
                    (0..env.action_count()).filter(|&a| env.is_action_legal(&state, a)).collect();
                if legal.is_empty() {
                    break;
                }
                let a = legal[rng.gen_range(0..legal.len())];
                out.push((state.clone(), a));
                if out.len() == n {
                    break;
                }
                state = env.step(&state, a).0;
            }
        }
        out
    }

    #[test]
    fn table_memorizes_and_rejects_conflicts() {
        let env = mini_sudoku(1, Split::Id);
        let pairs = legal_pairs(&env, 100, 0);
        let triplets: Vec<_> =
            pairs.iter().map(|(s, a)| (s.clone(), *a, env.step(s, *a).0)).collect();
        let model = fit_transition(&env, &triplets, ModelKind::Table, 0).unwrap();
        let mut rng = rng_from_seed(5);
        for (s, a, next) in &triplets {
            assert_eq!(&model.predict(&env, s, *a, &mut rng), next);
        }
        // Same (state, action), different next state.
        let mut bad = triplets.clone();
        let (s0, a0, _) = bad[0].clone();
        let other = env.perturb_state(&bad[0].2.clone(), &mut rng);
        bad.push((s0, a0, other));
        assert!(matches!(
            fit_transition(&env, &bad, ModelKind::Table, 0),
            Err(FitError::Conflict)
        ));
    }

    #[test]
    fn epsilon_estimates_cover_the_three_regimes() {
        let env = mini_sudoku(2, Split::Id);
        let pairs = legal_pairs(&env, 2_000, 1);
        let exact = TransitionModel::<SudokuEnv>::Exact;
        let est = measure_epsilon(&exact, &env, &pairs, 0).unwrap();
        assert_eq!(est.mismatches, 0);
        assert_eq!(est.rate, 0.0);

        // Corrupted(0.10) on 10,000 pairs recovers the rate.
        let pairs10k = legal_pairs(&env, 10_000, 2);
        let corrupted = TransitionModel::<SudokuEnv>::Corrupted { rate: 0.10 };
        let est = measure_epsilon(&corrupted, &env, &pairs10k, 3).unwrap();
        assert!(
            est.lo <= 0.10 && 0.10 <= est.hi,
            "Wilson interval [{}, {}] must cover 0.10",
            est.lo,
            est.hi
        );

        // A learned table evaluated on its own training pairs is exact.
        let triplets: Vec<_> =
            pairs.iter().map(|(s, a)| (s.clone(), *a, env.step(s, *a).0)).collect();
        let table = fit_transition(&env, &triplets, ModelKind::Table, 0).unwrap();
        let est = measure_epsilon(&table, &env, &pairs, 4).unwrap();
        assert_eq!(est.rate, 0.0);
    }

    #[test]
    fn corruption_rate_is_consistent_across_levels() {
        let env = mini_sudoku(3, Split::Id);
        for p in [0.01, 0.05, 0.1] {
            let pairs = legal_pairs(&env, 10_000, 7);
            let model = TransitionModel::<SudokuEnv>::Corrupted { rate: p };
            let est = measure_epsilon(&model, &env, &pairs, 8).unwrap();
            assert!(est.lo <= p && p <= est.hi, "p={p}: [{}, {}]", est.lo, est.hi);
        }
    }

    #[test]
    fn exact_model_rollout_matches_the_plain_rollout() {
        let env = mini_sudoku(4, Split::Id);
        let encoder = Encoder::for_env(&env, ModeVariant::Markov, MaskOption::Full);
        let policy = Policy::mlp(encoder.input_dim(), &[16], env.action_count() as u32, 3);
        let plain = rollout_rich(&env, &policy, &encoder, 42).unwrap();
        let model = TransitionModel::<SudokuEnv>::Exact;
        let approx = approx_rollout(&env, &policy, &encoder, &model, 42).unwrap();
        assert_eq!(approx.rollout.actions, plain.actions);
        assert_eq!(approx.rollout.rewards, plain.rewards);
        assert_eq!(approx.divergence_steps, 0);
    }

    #[test]
    fn full_corruption_diverges_at_the_second_step() {
        // With rate 1.0 the shadow state differs from the true state from
        // step 2 onward (step 1 shares the initial state by definition).
        let env = mini_sudoku(9, Split::Ood);
        let encoder = Encoder::for_env(&env, ModeVariant::Markov, MaskOption::Full);
        let policy = Policy::mlp(encoder.input_dim(), &[16], env.action_count() as u32, 3);
        let model = TransitionModel::<SudokuEnv>::Corrupted { rate: 1.0 };
        for seed in 0..20 {
            let approx = approx_rollout(&env, &policy, &encoder, &model, seed).unwrap();
            if approx.rollout.actions.len() >= 2 {
                assert_eq!(approx.first_divergence, Some(1));
            }
        }
    }

    #[test]
    fn divergence_probability_matches_the_analytic_binomial() {
        // H = 6 episodes under Corrupted(p): the shadow chain is queried
        // after each of the first H-1 decisions, so
        // P(any divergence) = 1 - (1-p)^(H-1) when the episode runs full
        // length. Use a policy that always plays legal fills.
        let env = mini_sudoku_with_blanks(6, 11);
        let encoder = Encoder::for_env(&env, ModeVariant::Markov, MaskOption::Full);
        // Oracle-guided tabular policy would be overkill: sample until the
        // episode runs the full horizon, which legal-biased play mostly does.
        let policy = legal_biased_policy(&env, &encoder);
        let p = 0.05;
        let model = TransitionModel::<SudokuEnv>::Corrupted { rate: p };
        let episodes = 10_000;
        // The legal-biased policy never fails while the chains agree, and a
        // divergence is flagged before any post-divergence failure can end
        // the episode, so counting over all episodes is unbiased.
        let mut diverged = 0;
        for seed in 0..episodes {
            let approx = approx_rollout(&env, &policy, &encoder, &model, seed).unwrap();
            if approx.divergence_steps > 0 {
                diverged += 1;
            }
        }
        let expected = 1.0 - (1.0 - p).powi(5);
        let rate = diverged as f64 / episodes as f64;
        let se = (expected * (1.0 - expected) / episodes as f64).sqrt();
        assert!(
            (rate - expected).abs() <= 4.0 * se,
            "divergence rate {rate:.4} vs analytic {expected:.4} (se {se:.4})"
        );
    }

    #[test]
    fn shadow_error_compounds_at_most_additively() {
        // Union bound: P(shadow_h != s_h) <= h * eps_P.
        let env = mini_sudoku_with_blanks(6, 13);
        let encoder = Encoder::for_env(&env, ModeVariant::Markov, MaskOption::Full);
        let policy = legal_biased_policy(&env, &encoder);
        let p = 0.05;
        let model = TransitionModel::<SudokuEnv>::Corrupted { rate: p };
        let episodes = 10_000;
        let horizon = env.horizon_max();
        let mut diverged_at = vec![0usize; horizon];
        let mut reached = vec![0usize; horizon];
        for seed in 0..episodes {
            let approx = approx_rollout(&env, &policy, &encoder, &model, seed).unwrap();
            for h in 0..approx.approx_states.len() {
                reached[h] += 1;
                if approx.approx_states[h] != approx.rollout.states[h] {
                    diverged_at[h] += 1;
                }
            }
        }
        for h in 0..horizon {
            if reached[h] == 0 {
                continue;
            }
            let rate = diverged_at[h] as f64 / reached[h] as f64;
            let bound = (h as f64 + 1.0) * p;
            let se = (bound * (1.0 - bound.min(1.0)) / reached[h] as f64).sqrt();
            assert!(
                rate <= bound + 3.0 * se + 1e-9,
                "step {h}: divergence {rate:.4} exceeds union bound {bound:.4}"
            );
        }
    }

    #[test]
    fn network_model_learns_mini_sudoku_dynamics() {
        let env = mini_sudoku(21, Split::Id);
        let train_pairs = legal_pairs(&env, 2_000, 31);
        let triplets: Vec<_> =
            train_pairs.iter().map(|(s, a)| (s.clone(), *a, env.step(s, *a).0)).collect();
        let model = fit_transition(&env, &triplets, ModelKind::Network, 17).unwrap();
        let heldout = legal_pairs(&env, 500, 99);
        let est = measure_epsilon(&model, &env, &heldout, 5).unwrap();
        // Exact-match rate is 1 - epsilon; the copy-plus-delta rule is an
        // easy supervised target at this size.
        assert!(
            est.rate <= 0.05,
            "held-out mismatch rate {} should be small",
            est.rate
        );
    }

    // -- helpers -----------------------------------------------------------

    fn mini_sudoku_with_blanks(blanks: usize, seed: u64) -> SudokuEnv {
        let cfg = DifficultyConfig::grid(Task::Sudoku, Split::Id, 4, (blanks, blanks));
        let PuzzleInstance::Sudoku(b) = generate(&cfg, seed).unwrap() else { panic!() };
        SudokuEnv::new(b)
    }

    /// Tabular policy strongly preferring legal fills (uniform over them).
    fn legal_biased_policy(env: &SudokuEnv, encoder: &Encoder) -> Policy {
        let mut table = std::collections::BTreeMap::new();
        let initial = env.initial_dist().remove(0).0;
        let mut stack = vec![initial.clone()];
        let mut seen = std::collections::HashSet::new();
        seen.insert(env.state_digest(&initial));
        while let Some(state) = stack.pop() {
            if env.is_terminal(&state) {
                continue;
            }
            let input = encoder.encode(env, &initial, &[], &state).unwrap();
            let mut logits = vec![-1e9; env.action_count()];
            for a in 0..env.action_count() {
                if env.is_action_legal(&state, a) {
                    logits[a] = 0.0;
                    let next = env.step(&state, a).0;
                    if seen.insert(env.state_digest(&next)) {
                        stack.push(next);
                    }
                }
            }
            table.insert(input.digest(), logits);
        }
        Policy::tabular(
            encoder.input_dim(),
            env.action_count() as u32,
            crate::policy::TabularPolicy { table },
        )
    }
}
