//! Training algorithms and their shared estimator primitives.
//!
//! `group_advantage`, `clipped_surrogate`, `gae`, and `bellman_target` are
//! the unit-tested building blocks; `dqn` trains lock agents by Deep
//! Q-Learning and `grpo` runs group-relative policy optimization with either
//! group-normalized terminal rewards or exact per-step optimal advantages.

pub mod dqn;
pub mod grpo;

use serde::{Deserialize, Serialize};

pub use dqn::{dqn_train, DqnConfig, DqnError, DqnEvalPoint, DqnLog};
pub use grpo::{
    grpo_train, AdvantageSource, GroupRollout, GrpoConfig, IterationStats, OptimizerChoice,
    TrainedPolicy,
};

/// Shared optimization knobs. The KL coefficient and group size follow the
/// published defaults (0.001 and 8); learning rate and batch size are scaled
/// to desk size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub kl_coef: f64,
    pub clip_eps: f64,
    pub group_size: usize,
    pub batch_instances: usize,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            kl_coef: 0.001,
            clip_eps: 0.2,
            group_size: 8,
            batch_instances: 8,
            learning_rate: 0.01,
            iterations: 300,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.kl_coef < 0.0 {
            return Err("kl_coef must be >= 0".into());
        }
        if !(0.0 < self.clip_eps && self.clip_eps < 1.0) {
            return Err("clip_eps must lie in (0, 1)".into());
        }
        if self.group_size < 2 {
            return Err("group_size must be >= 2".into());
        }
        if self.batch_instances == 0 || self.iterations == 0 || self.learning_rate <= 0.0 {
            return Err("batch_instances, iterations, learning_rate must be positive".into());
        }
        Ok(())
    }
}

/// Group-normalized advantages: `(r_i - mean) / std` with population std.
///
/// Degenerate groups (std below 1e-8) yield all-zero advantages, the only
/// choice that leaves the policy untouched on uninformative groups.
pub fn group_advantage(rewards: &[f64]) -> Vec<f64> {
    debug_assert!(rewards.len() >= 2);
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < 1e-8 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// PPO/GRPO pessimistic surrogate `min(ratio * adv, clip(ratio) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    debug_assert!(ratio > 0.0);
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Debug, thiserror::Error)]
pub enum GaeError {
    #[error("values must have exactly one more entry than rewards ({rewards} + 1 != {values})")]
    LengthMismatch { rewards: usize, values: usize },
}

/// Generalized advantage estimation.
///
/// `values` carries one trailing bootstrap entry (zero at terminal states);
/// `A_t = delta_t + gamma * lambda * A_{t+1}` with
/// `delta_t = r_t + gamma * V_{t+1} - V_t`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, GaeError> {
    if values.len() != rewards.len() + 1 {
        return Err(GaeError::LengthMismatch { rewards: rewards.len(), values: values.len() });
    }
    let mut advantages = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}

/// One-step Q-learning target: `r` at terminal transitions, else
/// `r + gamma * max_a Q(s', a)`.
pub fn bellman_target(reward: f64, next_q: &[f64], gamma: f64, terminal: bool) -> f64 {
    if terminal {
        return reward;
    }
    let best = next_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    reward + gamma * best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn group_advantage_matches_hand_arithmetic() {
        assert_eq!(group_advantage(&[1.0, 0.0, 0.0, 1.0]), vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(group_advantage(&[1.0, 1.0, 1.0, 1.0]), vec![0.0; 4]);
        assert_eq!(group_advantage(&[1.0, 0.0]), vec![1.0, -1.0]);
    }

    #[test]
    fn group_advantage_is_standardized_on_random_groups() {
        let mut rng = crate::rng::rng_from_seed(31);
        for _ in 0..500 {
            let n = rng.gen_range(2..12);
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let adv = group_advantage(&rewards);
            let mean: f64 = adv.iter().sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-12);
            let std = (adv.iter().map(|a| a * a).sum::<f64>() / n as f64).sqrt();
            if adv.iter().any(|&a| a != 0.0) {
                assert!((std - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clipped_surrogate_matches_hand_arithmetic() {
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-12);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-12);
        for adv in [-2.0, -0.3, 0.0, 0.7, 3.0] {
            assert_eq!(clipped_surrogate(1.0, adv, 0.2), adv);
        }
    }

    #[test]
    fn clipped_surrogate_is_a_pessimistic_bound() {
        let mut rng = crate::rng::rng_from_seed(32);
        for _ in 0..1000 {
            let ratio = rng.gen_range(0.01..3.0);
            let adv = rng.gen_range(-2.0..2.0);
            let eps = rng.gen_range(0.05..0.5);
            let s = clipped_surrogate(ratio, adv, eps);
            assert!(s <= ratio * adv + 1e-12);
            if (ratio - 1.0).abs() <= eps {
                assert!((s - ratio * adv).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gae_matches_hand_recursions() {
        assert_eq!(gae(&[1.0], &[0.0, 0.0], 1.0, 1.0).unwrap(), vec![1.0]);
        let two = gae(&[1.0, 0.0], &[0.5, 0.5, 0.0], 1.0, 1.0).unwrap();
        assert!((two[0] - 0.5).abs() < 1e-12);
        assert!((two[1] + 0.5).abs() < 1e-12);
        // lambda = 0 collapses to one-step TD residuals.
        let rewards = [0.3, -0.2, 1.0];
        let values = [0.1, 0.4, -0.3, 0.0];
        let collapsed = gae(&rewards, &values, 0.9, 0.0).unwrap();
        for t in 0..3 {
            let delta = rewards[t] + 0.9 * values[t + 1] - values[t];
            assert!((collapsed[t] - delta).abs() < 1e-12);
        }
        assert!(gae(&rewards, &values[..3], 0.9, 0.5).is_err());
    }

    #[test]
    fn gae_with_unit_discount_and_zero_values_is_reward_to_go() {
        let mut rng = crate::rng::rng_from_seed(33);
        for _ in 0..100 {
            let n = rng.gen_range(1..10);
            let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let values = vec![0.0; n + 1];
            let adv = gae(&rewards, &values, 1.0, 1.0).unwrap();
            for t in 0..n {
                let to_go: f64 = rewards[t..].iter().sum();
                assert!((adv[t] - to_go).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bellman_target_matches_hand_arithmetic() {
        assert!((bellman_target(-1.0, &[0.2, 0.7], 1.0, false) + 0.3).abs() < 1e-12);
        assert_eq!(bellman_target(0.0, &[5.0, -2.0], 0.9, true), 0.0);
        assert!((bellman_target(-1.0, &[-3.0, -2.0], 0.9, false) + 2.8).abs() < 1e-12);
    }
}
