//! Group Relative Policy Optimization over puzzle environments.
//!
//! Each iteration samples a batch of instances, rolls out `G` trajectories
//! per instance with the current policy, forms advantages either by
//! normalizing terminal rewards within the group (broadcast to every step of
//! the trajectory, with per-step 1/length weighting) or from the exact
//! per-step optimal advantage, then applies a single clipped-surrogate
//! gradient step with a KL penalty toward the frozen reference policy.
//!
//! An optional behavior-cloning warm start on oracle solution paths stands
//! in for the SFT warm-up stage at desk scale; oracle-advantage runs start
//! from a raw policy, matching the published pipeline split.

use serde::{Deserialize, Serialize};

use crate::mdp::{rollout_rich_with_rng, Environment, Outcome, RichRollout};
use crate::oracle::{DemoOracle, StepOracle};
use crate::policy::{softmax, Adam, Encoder, MlpGrads, Optimizer, Policy, SparseInput};
use crate::rng::derive_rng;

use super::{group_advantage, LearnConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageSource {
    /// Terminal rewards normalized within the group.
    GroupNormalized,
    /// Exact per-step optimal advantages from the task oracle.
    OracleAstar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub learn: LearnConfig,
    pub advantage_source: AdvantageSource,
    pub temperature: f64,
    /// Hidden layer widths for freshly created policies.
    pub hidden: Vec<u32>,
    /// Behavior-cloning episodes before RL; 0 trains from the raw policy.
    pub warm_start_episodes: usize,
    pub warm_start_lr: f64,
    pub optimizer: OptimizerChoice,
    /// Keep a policy snapshot every this many iterations (0 = none).
    pub checkpoint_every: usize,
}

/// Which first-order optimizer drives the policy updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerChoice {
    Adam,
    Sgd { momentum: f64 },
}

impl OptimizerChoice {
    fn build(self, net: &crate::policy::Mlp, lr: f64) -> Optimizer {
        match self {
            OptimizerChoice::Adam => Optimizer::adam(net, lr),
            OptimizerChoice::Sgd { momentum } => Optimizer::sgd(net, lr, momentum),
        }
    }
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            learn: LearnConfig::default(),
            advantage_source: AdvantageSource::GroupNormalized,
            temperature: 1.0,
            hidden: vec![128, 128],
            warm_start_episodes: 0,
            warm_start_lr: 3e-3,
            optimizer: OptimizerChoice::Adam,
            checkpoint_every: 100,
        }
    }
}

/// One sampled episode with everything the gradient step needs.
#[derive(Debug, Clone)]
pub struct CollectedEpisode {
    pub inputs: Vec<SparseInput>,
    pub actions: Vec<usize>,
    pub logp_old: Vec<f64>,
    pub total_reward: f64,
    pub solved: bool,
    /// Per-step exact advantages (oracle-advantage runs only).
    pub step_astar: Option<Vec<f64>>,
}

/// `G` episodes sharing one initial instance.
#[derive(Debug, Clone)]
pub struct GroupRollout {
    pub instance: usize,
    pub episodes: Vec<CollectedEpisode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub solved_frac: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub mean_len: f64,
    pub wall_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum GrpoError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("GRPO training requires an MLP policy")]
    NotMlp,
    #[error("rollout failed: {0}")]
    Rollout(#[from] crate::mdp::RolloutError),
}

/// Training result: final policy plus the frozen reference and the
/// per-iteration log.
#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub policy: Policy,
    pub reference: Policy,
    pub stats: Vec<IterationStats>,
    /// `(iteration, policy)` snapshots taken every `checkpoint_every`
    /// iterations.
    pub snapshots: Vec<(usize, Policy)>,
}

fn episode_from_rich<E: Environment, O: StepOracle<E>>(
    env: &E,
    rich: RichRollout<E::State>,
    oracle: Option<&mut O>,
) -> CollectedEpisode {
    let step_astar = oracle.map(|oracle| {
        (0..rich.actions.len())
            .map(|h| oracle.astar_total(env, &rich.states[h], rich.actions[h]))
            .collect()
    });
    CollectedEpisode {
        total_reward: rich.total_reward(),
        solved: rich.outcome == Outcome::Solved,
        inputs: rich.inputs,
        actions: rich.actions,
        logp_old: rich.log_probs,
        step_astar,
    }
}

/// Sample `G` episodes from one instance.
pub fn collect_group<E: Environment, O: StepOracle<E>>(
    env: &E,
    instance: usize,
    policy: &Policy,
    encoder: &Encoder,
    group_size: usize,
    oracle: Option<&mut O>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<GroupRollout, GrpoError> {
    let mut episodes = Vec::with_capacity(group_size);
    let mut oracle = oracle;
    for _ in 0..group_size {
        let rich = rollout_rich_with_rng(env, policy, encoder, 0, rng)?;
        episodes.push(episode_from_rich(env, rich, oracle.as_deref_mut()));
    }
    Ok(GroupRollout { instance, episodes })
}

/// Accumulated diagnostics from one gradient computation.
#[derive(Debug, Clone, Default)]
pub struct GradientStats {
    pub kl_sum: f64,
    pub clip_count: usize,
    pub step_count: usize,
    pub reward_sum: f64,
    pub solved: usize,
    pub episodes: usize,
}

/// Ascent gradient of the GRPO objective over the collected groups,
/// returned as a descent-ready loss gradient.
///
/// With a single gradient step per collection the importance ratio is 1 and
/// clipping never binds, but the derivative handles stale `logp_old`
/// correctly: steps pushed outside the trust band contribute nothing.
pub fn grpo_gradient(
    policy: &Policy,
    reference: &Policy,
    groups: &[GroupRollout],
    config: &GrpoConfig,
) -> Result<(MlpGrads, GradientStats), GrpoError> {
    let net = policy.net().ok_or(GrpoError::NotMlp)?;
    let mut grads = MlpGrads::zeros_like(net);
    let mut stats = GradientStats::default();
    let total_episodes: usize = groups.iter().map(|g| g.episodes.len()).sum();
    if total_episodes == 0 {
        return Ok((grads, stats));
    }
    let beta = config.learn.kl_coef;
    let eps = config.learn.clip_eps;
    let temp = policy.temperature;

    for group in groups {
        let rewards: Vec<f64> = group.episodes.iter().map(|e| e.total_reward).collect();
        let group_adv = match config.advantage_source {
            AdvantageSource::GroupNormalized => Some(group_advantage(&rewards)),
            AdvantageSource::OracleAstar => None,
        };
        for (i, episode) in group.episodes.iter().enumerate() {
            stats.reward_sum += episode.total_reward;
            stats.solved += episode.solved as usize;
            stats.episodes += 1;
            let len = episode.actions.len();
            if len == 0 {
                continue;
            }
            let w = 1.0 / (total_episodes as f64 * len as f64);
            for h in 0..len {
                let advantage = match &group_adv {
                    Some(adv) => adv[i],
                    None => episode.step_astar.as_ref().expect("oracle advantages collected")[h],
                };
                let input = &episode.inputs[h];
                let action = episode.actions[h];
                let cache = net.forward_cached(&input.active);
                let probs = softmax(&cache.output().iter().map(|l| l / temp).collect::<Vec<_>>());
                let logp = probs[action].max(f64::MIN_POSITIVE).ln();
                let logp_ref = reference.log_prob(input, action).map_err(crate::mdp::RolloutError::Policy)?;
                let ratio = (logp - episode.logp_old[h]).exp();
                stats.kl_sum += logp - logp_ref;
                stats.step_count += 1;
                let outside = (ratio - 1.0).abs() > eps;
                if outside {
                    stats.clip_count += 1;
                }
                // min(r*A, clip(r)*A) has zero derivative once the ratio is
                // pushed past the band in the favorable direction.
                let surrogate_active =
                    !((ratio > 1.0 + eps && advantage > 0.0) || (ratio < 1.0 - eps && advantage < 0.0));
                let surrogate_coef = if surrogate_active { advantage * ratio } else { 0.0 };
                // KL penalty in the differentiable exp(ref - p) - (ref - p) - 1 form.
                let kl_coef = beta * (1.0 - (logp_ref - logp).exp());
                let obj_coef = surrogate_coef - kl_coef;
                if obj_coef == 0.0 {
                    continue;
                }
                let mut dout = probs;
                for (a, d) in dout.iter_mut().enumerate() {
                    let onehot = if a == action { 1.0 } else { 0.0 };
                    // Descent gradient of the negated objective.
                    *d = -(w * obj_coef) * (onehot - *d) / temp;
                }
                net.backward(&input.active, &cache, &dout, &mut grads);
            }
        }
    }
    Ok((grads, stats))
}

/// Collect one batch and apply one gradient step.
#[allow(clippy::too_many_arguments)]
pub fn grpo_iteration<E: Environment, O: StepOracle<E>>(
    instances: &[E],
    iteration: usize,
    policy: &mut Policy,
    encoder: &Encoder,
    reference: &Policy,
    oracle: &mut O,
    opt: &mut Optimizer,
    config: &GrpoConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<IterationStats, GrpoError> {
    use rand::Rng;
    let start = std::time::Instant::now();
    let want_oracle = config.advantage_source == AdvantageSource::OracleAstar;
    let mut groups = Vec::with_capacity(config.learn.batch_instances);
    for _ in 0..config.learn.batch_instances {
        let idx = rng.gen_range(0..instances.len());
        let group = collect_group(
            &instances[idx],
            idx,
            policy,
            encoder,
            config.learn.group_size,
            want_oracle.then_some(&mut *oracle),
            rng,
        )?;
        groups.push(group);
    }
    let (grads, stats) = grpo_gradient(policy, reference, &groups, config)?;
    let net = policy.net_mut().ok_or(GrpoError::NotMlp)?;
    opt.step(net, &grads);
    let episodes = stats.episodes.max(1) as f64;
    let steps = stats.step_count.max(1) as f64;
    let total_len: usize = groups.iter().flat_map(|g| &g.episodes).map(|e| e.actions.len()).sum();
    Ok(IterationStats {
        iteration,
        mean_reward: stats.reward_sum / episodes,
        solved_frac: stats.solved as f64 / episodes,
        kl: stats.kl_sum / steps,
        clip_fraction: stats.clip_count as f64 / steps,
        mean_len: total_len as f64 / episodes,
        wall_ms: start.elapsed().as_millis() as u64,
    })
}

/// Behavior cloning on oracle solution paths: cross-entropy on the demo
/// action at every step of a demonstrated episode, one Adam step per
/// episode. Desk-scale stand-in for the SFT warm-up; not part of the RL
/// algorithm itself.
pub fn warm_start<E: Environment, O: DemoOracle<E>>(
    instances: &[E],
    policy: &mut Policy,
    encoder: &Encoder,
    oracle: &mut O,
    episodes: usize,
    lr: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(), GrpoError> {
    use rand::Rng;
    let net = policy.net().ok_or(GrpoError::NotMlp)?;
    let mut opt = Adam::new(net, lr);
    for _ in 0..episodes {
        let idx = rng.gen_range(0..instances.len());
        let env = &instances[idx];
        let actions = oracle.solution_actions(env, rng);
        let initial = env.initial_dist().into_iter().next().unwrap().0;
        let mut state = initial.clone();
        let mut history = Vec::new();
        let net = policy.net().unwrap();
        let mut grads = MlpGrads::zeros_like(net);
        let n = actions.len().max(1) as f64;
        for &action in &actions {
            let input = encoder
                .encode(env, &initial, &history, &state)
                .map_err(GrpoError::BadConfig)?;
            let cache = net.forward_cached(&input.active);
            let mut dout = softmax(cache.output());
            dout[action] -= 1.0;
            for d in dout.iter_mut() {
                *d /= n;
            }
            net.backward(&input.active, &cache, &dout, &mut grads);
            let (next, _) = env.step(&state, action);
            history.push((state.clone(), action));
            state = next;
        }
        opt.step(policy.net_mut().unwrap(), &grads);
    }
    Ok(())
}

/// Full training run: optional warm start, reference snapshot, then
/// `iterations` GRPO steps. Reproducible per seed.
pub fn grpo_train<E, O>(
    instances: &[E],
    policy: &mut Policy,
    encoder: &Encoder,
    oracle: &mut O,
    config: &GrpoConfig,
    seed: u64,
) -> Result<TrainedPolicy, GrpoError>
where
    E: Environment,
    O: StepOracle<E> + DemoOracle<E>,
{
    config.learn.validate().map_err(GrpoError::BadConfig)?;
    if instances.is_empty() {
        return Err(GrpoError::BadConfig("no training instances".into()));
    }
    let mut rng = derive_rng(seed, "grpo", &[instances.len() as u64]);
    if config.warm_start_episodes > 0 {
        warm_start(
            instances,
            policy,
            encoder,
            oracle,
            config.warm_start_episodes,
            config.warm_start_lr,
            &mut rng,
        )?;
    }
    let reference = policy.clone();
    let mut opt = config
        .optimizer
        .build(policy.net().ok_or(GrpoError::NotMlp)?, config.learn.learning_rate);
    let mut stats = Vec::with_capacity(config.learn.iterations);
    let mut snapshots = Vec::new();
    for iteration in 0..config.learn.iterations {
        stats.push(grpo_iteration(
            instances,
            iteration,
            policy,
            encoder,
            &reference,
            oracle,
            &mut opt,
            config,
            &mut rng,
        )?);
        if config.checkpoint_every > 0 && (iteration + 1) % config.checkpoint_every == 0 {
            snapshots.push((iteration + 1, policy.clone()));
        }
    }
    Ok(TrainedPolicy { policy: policy.clone(), reference, stats, snapshots })
}
