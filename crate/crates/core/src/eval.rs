//! Benchmark runner and metrics: Avg@k, Pass@k, success counts, and the
//! lock's furthest-state diagnostic.
//!
//! Pass@k uses the unbiased combinatorial estimator
//! `1 - C(n-c, k) / C(n, k)` computed with overflow-safe running products.
//! Avg@k and Pass@k are macro-averaged: per instance first, then across
//! instances (the two coincide when every instance gets the same k).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mdp::{rollout_rich, Environment, Outcome};
use crate::policy::{Encoder, Policy};
use crate::rng::derive_seed;
use crate::transition::{approx_rollout, GridDynamicsTask, TransitionModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("pass_at_k needs 0 <= c <= n and 1 <= k <= n (got n={n}, c={c}, k={k})")]
    BadPassAtK { n: usize, c: usize, k: usize },
    #[error("benchmark needs at least one instance and one sample")]
    EmptySuite,
    #[error("rollout failed: {0}")]
    Rollout(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Unbiased Pass@k estimator from `c` successes in `n` samples.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, EvalError> {
    if c > n || k == 0 || k > n {
        return Err(EvalError::BadPassAtK { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    // 1 - prod_{i=0}^{k-1} (n - c - i) / (n - i), never overflowing and
    // never leaving [0, 1].
    let mut prod = 1.0;
    for i in 0..k {
        prod *= (n - c - i) as f64 / (n - i) as f64;
    }
    Ok(1.0 - prod)
}

/// Aggregated metrics for one (approach, suite) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub approach: String,
    pub task: String,
    pub split: String,
    pub seed: u64,
    pub n_instances: usize,
    pub samples_per_instance: usize,
    /// Per-instance success counts out of `samples_per_instance`.
    pub success_counts: Vec<usize>,
    /// Mean per-sample success (macro-averaged over instances).
    pub avg_at_k: f64,
    /// `(k, pass_at_k)` over the requested k grid, macro-averaged.
    pub pass_curve: Vec<(usize, f64)>,
    /// Mean and max furthest-state over all rollouts (lock only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub furthest_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub furthest_max: Option<f64>,
}

impl MetricsRow {
    pub fn pass_at(&self, k: usize) -> Option<f64> {
        self.pass_curve.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

/// Doubling k grid `1, 2, 4, ..., k_max` (always ending at `k_max`).
pub fn k_grid(k_max: usize) -> Vec<usize> {
    let mut ks = Vec::new();
    let mut k = 1;
    while k < k_max {
        ks.push(k);
        k *= 2;
    }
    ks.push(k_max);
    ks
}

/// How the Markov policy gets its state chain at evaluation time.
pub enum EvalTransition<'a, E: Environment + GridDynamicsTask> {
    Env,
    Model(&'a TransitionModel<E>),
}

/// Run `k` seeded rollouts per instance and aggregate.
#[allow(clippy::too_many_arguments)]
pub fn run_benchmark<E: Environment + GridDynamicsTask>(
    approach: &str,
    task: &str,
    split: &str,
    instances: &[E],
    policy: &Policy,
    encoder: &Encoder,
    transition: EvalTransition<'_, E>,
    k: usize,
    ks: &[usize],
    seed: u64,
) -> Result<MetricsRow, EvalError> {
    if instances.is_empty() || k == 0 {
        return Err(EvalError::EmptySuite);
    }
    let mut success_counts = Vec::with_capacity(instances.len());
    let mut furthest_sum = 0.0;
    let mut furthest_max = f64::NEG_INFINITY;
    let mut furthest_n = 0usize;
    for (i, env) in instances.iter().enumerate() {
        let mut successes = 0;
        for j in 0..k {
            let rollout_seed = derive_seed(seed, "bench", &[i as u64, j as u64]);
            let rich = match &transition {
                EvalTransition::Env => rollout_rich(env, policy, encoder, rollout_seed)
                    .map_err(|e| EvalError::Rollout(e.to_string()))?,
                EvalTransition::Model(model) => {
                    approx_rollout(env, policy, encoder, model, rollout_seed)
                        .map_err(|e| EvalError::Rollout(e.to_string()))?
                        .rollout
                }
            };
            if rich.outcome == Outcome::Solved {
                successes += 1;
            }
            if let Some(m) = env.episode_metric(&rich.states, &rich.actions) {
                furthest_sum += m;
                furthest_max = furthest_max.max(m);
                furthest_n += 1;
            }
        }
        success_counts.push(successes);
    }
    let avg_at_k = success_counts.iter().map(|&c| c as f64 / k as f64).sum::<f64>()
        / instances.len() as f64;
    let mut pass_curve = Vec::with_capacity(ks.len());
    for &kk in ks {
        let mean: f64 = success_counts
            .iter()
            .map(|&c| pass_at_k(k, c, kk))
            .collect::<Result<Vec<_>, _>>()?
            .iter()
            .sum::<f64>()
            / instances.len() as f64;
        pass_curve.push((kk, mean));
    }
    Ok(MetricsRow {
        approach: approach.to_string(),
        task: task.to_string(),
        split: split.to_string(),
        seed,
        n_instances: instances.len(),
        samples_per_instance: k,
        success_counts,
        avg_at_k,
        pass_curve,
        furthest_mean: (furthest_n > 0).then(|| furthest_sum / furthest_n as f64),
        furthest_max: (furthest_n > 0).then_some(furthest_max),
    })
}

/// Write `metrics.csv` (one line per approach and k), a JSON sidecar with
/// the full rows, and one two-column curve file per approach. Byte-stable
/// across re-runs with identical inputs.
pub fn emit_metrics(rows: &[MetricsRow], dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from(
        "approach,task,split,k,avg_at_k,pass_at_k,n_instances,n_samples,seed\n",
    );
    for row in rows {
        for (k, pass) in &row.pass_curve {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.approach,
                row.task,
                row.split,
                k,
                row.avg_at_k,
                pass,
                row.n_instances,
                row.samples_per_instance,
                row.seed
            ));
        }
    }
    std::fs::write(dir.join("metrics.csv"), csv)?;
    let sidecar = serde_json::to_string_pretty(rows).expect("metrics rows serialize");
    std::fs::write(dir.join("metrics.json"), sidecar)?;
    let curves = dir.join("curves");
    std::fs::create_dir_all(&curves)?;
    for row in rows {
        let mut f = std::fs::File::create(
            curves.join(format!("{}-{}-{}.csv", row.approach, row.task, row.split)),
        )?;
        writeln!(f, "k,pass_at_k")?;
        for (k, pass) in &row.pass_curve {
            writeln!(f, "{k},{pass}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lock::{LockEnv, LockSpec};
    use crate::mdp::ModeVariant;
    use crate::policy::MaskOption;

    #[test]
    fn pass_at_k_matches_hand_cases() {
        assert_eq!(pass_at_k(4, 4, 1).unwrap(), 1.0);
        assert!((pass_at_k(4, 2, 2).unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(pass_at_k(128, 0, 128).unwrap(), 0.0);
        assert!(pass_at_k(4, 5, 1).is_err());
        assert!(pass_at_k(4, 2, 0).is_err());
        assert!(pass_at_k(4, 2, 5).is_err());
    }

    #[test]
    fn pass_at_k_matches_exhaustive_subset_enumeration() {
        // For n <= 12: enumerate all C(n, k) subsets and count those hitting
        // at least one of the c successes.
        for n in 1..=12usize {
            for c in 0..=n {
                for k in 1..=n {
                    let estimate = pass_at_k(n, c, k).unwrap();
                    let mut subsets_with_hit = 0usize;
                    let mut total = 0usize;
                    for mask in 0..(1u32 << n) {
                        if mask.count_ones() as usize != k {
                            continue;
                        }
                        total += 1;
                        // successes occupy the low c indices
                        if (mask & ((1u32 << c) - 1)) != 0 {
                            subsets_with_hit += 1;
                        }
                    }
                    let exact = subsets_with_hit as f64 / total as f64;
                    assert!(
                        (estimate - exact).abs() < 1e-12,
                        "n={n} c={c} k={k}: {estimate} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn pass_at_k_is_monotone_in_k() {
        for (n, c) in [(8, 3), (12, 1), (10, 10), (9, 0)] {
            let mut prev = 0.0;
            for k in 1..=n {
                let p = pass_at_k(n, c, k).unwrap();
                assert!(p >= prev - 1e-15);
                prev = p;
            }
        }
    }

    #[test]
    fn avg_at_k_equals_pass_at_one() {
        // Both derive from the same per-instance c/n.
        for (n, c) in [(16usize, 4usize), (32, 0), (8, 8)] {
            let avg = c as f64 / n as f64;
            assert!((pass_at_k(n, c, 1).unwrap() - avg).abs() < 1e-12);
        }
    }

    #[test]
    fn lock_benchmark_reports_furthest_state_and_is_deterministic() {
        let envs: Vec<LockEnv> = (0..5)
            .map(|i| LockEnv::with_horizon_max(LockSpec::generate(3, 100 + i), 6))
            .collect();
        let encoder = Encoder::for_instances(&envs, ModeVariant::Markov, MaskOption::Full);
        let policy = Policy::mlp(encoder.input_dim(), &[8], 2, 1);
        let run = || {
            run_benchmark(
                "mlp",
                "lock",
                "id",
                &envs,
                &policy,
                &encoder,
                EvalTransition::Env,
                128,
                &k_grid(128),
                7,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "same suite + checkpoint + seeds must be identical");
        assert!(a.furthest_mean.is_some());
        assert!(a.furthest_max.unwrap() <= 3.0);
        assert!(a.pass_curve.len() == 8 && a.pass_curve.last().unwrap().0 == 128);
    }

    #[test]
    fn uniform_policy_on_lock_h3_hits_the_analytic_rate() {
        // Single-attempt H=3 lock: success probability 1/8 per sample.
        let envs: Vec<LockEnv> =
            (0..20).map(|i| LockEnv::with_horizon_max(LockSpec::generate(3, i), 3)).collect();
        let encoder = Encoder::for_instances(&envs, ModeVariant::Markov, MaskOption::Full);
        let policy = Policy::mlp(encoder.input_dim(), &[], 2, 0).with_temperature(1e12);
        let row = run_benchmark(
            "uniform",
            "lock",
            "id",
            &envs,
            &policy,
            &encoder,
            EvalTransition::Env,
            128,
            &[1, 128],
            3,
        )
        .unwrap();
        let n = (20 * 128) as f64;
        let se = (0.125 * 0.875 / n).sqrt();
        assert!(
            (row.avg_at_k - 0.125).abs() <= 3.0 * se,
            "Avg@128 {} should be within 3 SE of 1/8",
            row.avg_at_k
        );
    }

    #[test]
    fn emit_metrics_is_byte_identical_across_reruns() {
        let rows = vec![MetricsRow {
            approach: "markov".into(),
            task: "sudoku".into(),
            split: "id".into(),
            seed: 5,
            n_instances: 2,
            samples_per_instance: 4,
            success_counts: vec![3, 1],
            avg_at_k: 0.5,
            pass_curve: k_grid(4).into_iter().map(|k| (k, 0.5 + k as f64 * 0.1)).collect(),
            furthest_mean: None,
            furthest_max: None,
        }];
        let dir = std::env::temp_dir().join(format!("markovlab-emit-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        emit_metrics(&rows, &dir).unwrap();
        let csv1 = std::fs::read(dir.join("metrics.csv")).unwrap();
        let json1 = std::fs::read(dir.join("metrics.json")).unwrap();
        let curve1 = std::fs::read(dir.join("curves/markov-sudoku-id.csv")).unwrap();
        emit_metrics(&rows, &dir).unwrap();
        assert_eq!(csv1, std::fs::read(dir.join("metrics.csv")).unwrap());
        assert_eq!(json1, std::fs::read(dir.join("metrics.json")).unwrap());
        assert_eq!(curve1, std::fs::read(dir.join("curves/markov-sudoku-id.csv")).unwrap());
        let text = String::from_utf8(csv1).unwrap();
        assert_eq!(text.lines().count(), 1 + 3, "header plus one line per k");
        let _ = std::fs::remove_dir_all(&dir);
    }
}

#[cfg(test)]
mod perfect_policy_tests {
    use super::*;
    use crate::lock::{LockEnv, LockSpec, LockState};
    use crate::mdp::ModeVariant;
    use crate::policy::{Encoder, MaskOption, Policy, TabularPolicy};

    #[test]
    fn perfect_policy_scores_one_everywhere() {
        let envs: Vec<LockEnv> =
            (0..5).map(|i| LockEnv::new(LockSpec::generate(4, 200 + i))).collect();
        let encoder = Encoder::for_instances(&envs, ModeVariant::Markov, MaskOption::Full);
        // One shared tabular policy that plays the correct action of each
        // instance cannot exist (the correct bits differ), so evaluate each
        // instance with its own perfect policy and pool the rows.
        for env in &envs {
            let mut table = std::collections::BTreeMap::new();
            for pos in 1..=4u32 {
                let input = encoder
                    .encode(env, &LockState::At(1), &[], &LockState::At(pos))
                    .unwrap();
                let mut logits = vec![-1e9; 2];
                logits[env.spec.correct_action(pos as usize) as usize] = 0.0;
                table.insert(input.digest(), logits);
            }
            let policy = Policy::tabular(encoder.input_dim(), 2, TabularPolicy { table })
                .with_temperature(0.0);
            let row = run_benchmark(
                "perfect",
                "lock",
                "id",
                std::slice::from_ref(env),
                &policy,
                &encoder,
                EvalTransition::Env,
                16,
                &[1, 16],
                9,
            )
            .unwrap();
            assert_eq!(row.avg_at_k, 1.0);
            assert_eq!(row.pass_at(1), Some(1.0));
            assert_eq!(row.furthest_mean, Some(4.0));
        }
    }
}
