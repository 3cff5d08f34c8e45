//! Run configuration, run directories, and experiment orchestration.
//!
//! One experiment writes one immutable run directory containing the echoed
//! config, a version fingerprint, logs, metrics, and checkpoints — enough to
//! replay the run bit for bit. Re-running into an existing directory is
//! refused unless `resume` is set and the echoed config matches exactly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eval::{emit_metrics, k_grid, run_benchmark, EvalTransition, MetricsRow};
use crate::learn::dqn::{dqn_train, DqnConfig};
use crate::learn::grpo::{grpo_train, GrpoConfig};
use crate::learn::AdvantageSource;
use crate::lock::{LockEnv, LockSpec};
use crate::mdp::{Environment, ModeVariant, TrajectoryLogRecord};
use crate::oracle::{annotate_sokoban_level, AdvantageRecord, GridStepOracle, SokobanStepOracle};
use crate::policy::{Encoder, MaskOption, Policy, PolicyCheckpoint};
use crate::puzzles::{
    generate, parse_instance_file, write_instance_file, DifficultyConfig, FutoshikiEnv,
    PuzzleInstance, SokobanEnv, Split, SudokuEnv, Task,
};
use crate::rng::derive_seed;
use crate::theory::protocol::{
    report_csv_header, report_csv_line, run_protocol, Paradigm, ProtocolConfig,
};
use crate::theory::TabularMdp;
use crate::transition::{fit_transition, measure_epsilon, ModelKind, TransitionModel};

/// Environment variable naming the default output root (fallback `./runs`).
pub const OUTPUT_ROOT_ENV: &str = "MARKOVLAB_RUNS";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("validation: {0}")]
    Validation(String),
    #[error("runtime: {0}")]
    Runtime(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// CLI exit code: 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) => 1,
            HarnessError::Runtime(_) | HarnessError::Io(_) => 2,
        }
    }
}

fn runtime<E: std::fmt::Display>(err: E) -> HarnessError {
    HarnessError::Runtime(err.to_string())
}

/// Top-level run configuration: one command plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RunConfig {
    /// Generate a benchmark instance set plus manifest.
    Gen { task: Task, split: Split, mini: bool, n: usize, seed: u64 },
    /// Solve one instance file and write the solution or verdict.
    Solve { instance: PathBuf },
    /// Batch-annotate explicit action lists with exact advantages.
    Oracle { instance: PathBuf, actions: Vec<usize> },
    /// Train lock DQN agents.
    TrainDqn {
        horizon: usize,
        mode: ModeVariant,
        seed: u64,
        #[serde(default)]
        config: Option<DqnConfig>,
    },
    /// Train a puzzle policy with GRPO.
    TrainGrpo {
        task: Task,
        mini: bool,
        mode: ModeVariant,
        advantage_source: AdvantageSource,
        seed: u64,
        train_instances: usize,
        #[serde(default)]
        hidden: Option<Vec<u32>>,
        #[serde(default)]
        config: Option<GrpoConfig>,
    },
    /// Fit a transition model from on-policy triplets and report epsilon.
    FitTransition { task: Task, mini: bool, kind: ModelKind, triplets: usize, seed: u64 },
    /// Evaluate a checkpoint on a benchmark suite.
    Eval {
        checkpoint: PathBuf,
        task: Task,
        mini: bool,
        split: Split,
        n_instances: usize,
        samples: usize,
        seed: u64,
        #[serde(default)]
        mask: Option<MaskOption>,
        #[serde(default)]
        corrupt_rate: Option<f64>,
        #[serde(default)]
        log_trajectories: bool,
    },
    /// Randomized theory trials; writes the aggregate bound-report CSV.
    Theory { trials: usize, seed: u64, mode: TheoryMode },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TheoryMode {
    ActionSeq,
    Markov,
    Both,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: &str| Err(HarnessError::Validation(msg.to_string()));
        match self {
            RunConfig::Gen { n, .. } => {
                if *n == 0 {
                    return fail("gen: n must be positive");
                }
            }
            RunConfig::TrainDqn { horizon, config, .. } => {
                if *horizon == 0 || *horizon > 24 {
                    return fail("train-dqn: horizon must lie in 1..=24");
                }
                if let Some(c) = config {
                    if c.total_steps == 0 {
                        return fail("train-dqn: total_steps must be positive");
                    }
                }
            }
            RunConfig::TrainGrpo { train_instances, config, .. } => {
                if *train_instances == 0 {
                    return fail("train-grpo: train_instances must be positive");
                }
                if let Some(c) = config {
                    c.learn.validate().map_err(HarnessError::Validation)?;
                }
            }
            RunConfig::FitTransition { triplets, .. } => {
                if *triplets == 0 {
                    return fail("fit-transition: triplets must be positive");
                }
            }
            RunConfig::Eval { n_instances, samples, .. } => {
                if *n_instances == 0 || *samples == 0 {
                    return fail("eval: n_instances and samples must be positive");
                }
            }
            RunConfig::Theory { trials, .. } if *trials == 0 => {
                return fail("theory: trials must be positive");
            }
            _ => {}
        }
        Ok(())
    }

    pub fn command_tag(&self) -> &'static str {
        match self {
            RunConfig::Gen { .. } => "gen",
            RunConfig::Solve { .. } => "solve",
            RunConfig::Oracle { .. } => "oracle",
            RunConfig::TrainDqn { .. } => "train-dqn",
            RunConfig::TrainGrpo { .. } => "train-grpo",
            RunConfig::FitTransition { .. } => "fit-transition",
            RunConfig::Eval { .. } => "eval",
            RunConfig::Theory { .. } => "theory",
        }
    }
}

/// Default per-task GRPO recipes; recorded here rather than published
/// values, since the source experiments are LLM-scale.
pub fn default_grpo_config(task: Task, advantage_source: AdvantageSource) -> GrpoConfig {
    use crate::learn::{LearnConfig, OptimizerChoice};
    match (task, advantage_source) {
        (_, AdvantageSource::OracleAstar) => GrpoConfig {
            advantage_source,
            learn: LearnConfig {
                learning_rate: 0.06,
                batch_instances: 512,
                group_size: 2,
                kl_coef: 0.015,
                ..LearnConfig::default()
            },
            hidden: vec![],
            warm_start_episodes: 0,
            optimizer: OptimizerChoice::Adam,
            ..GrpoConfig::default()
        },
        (Task::Sokoban, AdvantageSource::GroupNormalized) => GrpoConfig {
            advantage_source,
            learn: LearnConfig {
                learning_rate: 0.01,
                batch_instances: 128,
                ..LearnConfig::default()
            },
            hidden: vec![64, 64],
            warm_start_episodes: 2000,
            optimizer: OptimizerChoice::Adam,
            ..GrpoConfig::default()
        },
        (_, AdvantageSource::GroupNormalized) => GrpoConfig {
            advantage_source,
            learn: LearnConfig {
                learning_rate: 0.02,
                batch_instances: 16,
                ..LearnConfig::default()
            },
            hidden: vec![],
            warm_start_episodes: 1000,
            optimizer: OptimizerChoice::Adam,
            ..GrpoConfig::default()
        },
    }
}

/// Instance pool for training or evaluation; seeds are disjoint between the
/// two streams by construction.
pub fn instance_seeds(base: u64, stream: &str, n: usize) -> Vec<u64> {
    (0..n).map(|i| derive_seed(base, stream, &[i as u64])).collect()
}

pub fn build_suite(
    task: Task,
    mini: bool,
    split: Split,
    seeds: &[u64],
) -> Result<Vec<PuzzleInstance>, HarnessError> {
    let cfg = if mini { DifficultyConfig::mini(task, split) } else { DifficultyConfig::paper(task, split) };
    seeds.iter().map(|&s| generate(&cfg, s).map_err(runtime)).collect()
}

fn fingerprint(config_json: &str) -> String {
    let mut h = crate::rng::Fnv1a::new();
    h.write_bytes(config_json.as_bytes());
    format!(
        "{{\"crate_version\":\"{}\",\"config_digest\":\"{:016x}\"}}\n",
        env!("CARGO_PKG_VERSION"),
        h.finish()
    )
}

/// Execute a validated config into `run_dir`.
///
/// Refuses an existing non-empty directory unless `resume` is set and the
/// echoed config matches; reruns are deterministic, so resuming simply
/// recomputes.
pub fn execute(config: &RunConfig, run_dir: &Path, resume: bool) -> Result<(), HarnessError> {
    config.validate()?;
    let config_json =
        serde_json::to_string_pretty(config).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let echo_path = run_dir.join("config.json");
    if run_dir.exists() && echo_path.exists() {
        if !resume {
            return Err(HarnessError::Validation(format!(
                "run directory {} already holds a run; pass --resume to recompute",
                run_dir.display()
            )));
        }
        let prior = std::fs::read_to_string(&echo_path)?;
        if prior != config_json {
            return Err(HarnessError::Validation(
                "resume refused: config does not match the existing run".to_string(),
            ));
        }
    }
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(&echo_path, &config_json)?;
    std::fs::write(run_dir.join("run_info.json"), fingerprint(&config_json))?;

    match config {
        RunConfig::Gen { task, split, mini, n, seed } => {
            let seeds = instance_seeds(*seed, "bench", *n);
            let instances = build_suite(*task, *mini, *split, &seeds)?;
            let mut manifest = Vec::with_capacity(*n);
            for (i, inst) in instances.iter().enumerate() {
                let name = format!("{}-{}-{:04}.txt", task.tag(), split.tag(), i);
                std::fs::write(run_dir.join(&name), write_instance_file(inst, *split, seeds[i]))?;
                manifest.push(name);
            }
            let manifest_json = serde_json::json!({
                "task": task.tag(),
                "split": split.tag(),
                "mini": mini,
                "seed": seed,
                "files": manifest,
            });
            std::fs::write(
                run_dir.join("manifest.json"),
                serde_json::to_string_pretty(&manifest_json).unwrap(),
            )?;
        }
        RunConfig::Solve { instance } => {
            let text = std::fs::read_to_string(instance)?;
            let (inst, _, _) = parse_instance_file(&text).map_err(runtime)?;
            let report = match &inst {
                PuzzleInstance::Sudoku(b) => {
                    let (sol, count) = crate::puzzles::sudoku::solve_counting(b, 2);
                    match sol {
                        Some(s) => format!("solutions {count}\n{}", s.serialize()),
                        None => "unsolvable\n".to_string(),
                    }
                }
                PuzzleInstance::Futoshiki(b) => {
                    let (sol, count) = crate::puzzles::futoshiki::solve_counting(b, 2);
                    match sol {
                        Some(s) => format!("solutions {count}\n{}", s.serialize()),
                        None => "unsolvable\n".to_string(),
                    }
                }
                PuzzleInstance::Sokoban(l) => match crate::puzzles::sokoban::solve_bfs(l) {
                    crate::puzzles::SolveResult::Solved(path) => {
                        let names: Vec<&str> = path
                            .iter()
                            .map(|&d| crate::puzzles::sokoban::DIR_NAMES[d])
                            .collect();
                        format!("min_steps {}\n{}\n", path.len(), names.join(" "))
                    }
                    crate::puzzles::SolveResult::Unsolvable => "unsolvable\n".to_string(),
                },
            };
            std::fs::write(run_dir.join("solution.txt"), report)?;
        }
        RunConfig::Oracle { instance, actions } => {
            let text = std::fs::read_to_string(instance)?;
            let (inst, _, _) = parse_instance_file(&text).map_err(runtime)?;
            let records: Vec<AdvantageRecord> = match &inst {
                PuzzleInstance::Sokoban(level) => {
                    annotate_sokoban_level(level, actions).map_err(runtime)?
                }
                PuzzleInstance::Sudoku(board) => {
                    let env = SudokuEnv::new(board.clone());
                    annotate_grid(&env, board.clone(), actions).map_err(runtime)?
                }
                PuzzleInstance::Futoshiki(board) => {
                    let env = FutoshikiEnv::new(board.clone());
                    annotate_grid_futoshiki(&env, board.clone(), actions).map_err(runtime)?
                }
            };
            let mut out = String::new();
            for r in &records {
                out.push_str(&serde_json::to_string(r).unwrap());
                out.push('\n');
            }
            std::fs::write(run_dir.join("advantages.jsonl"), out)?;
        }
        RunConfig::TrainDqn { horizon, mode, seed, config: dqn_config } => {
            let env = LockEnv::new(LockSpec::generate(*horizon, derive_seed(*seed, "lock", &[])));
            let cfg = dqn_config.clone().unwrap_or_default();
            let log = dqn_train(&env, *mode, &cfg, *seed).map_err(runtime)?;
            let mut csv = String::from("env_steps,success,furthest,greedy_return\n");
            for e in &log.evals {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    e.env_steps, e.success as u8, e.furthest, e.greedy_return
                ));
            }
            std::fs::write(run_dir.join("training.csv"), csv)?;
            std::fs::write(
                run_dir.join("log.json"),
                serde_json::to_string_pretty(&log).unwrap(),
            )?;
        }
        RunConfig::TrainGrpo {
            task,
            mini,
            mode,
            advantage_source,
            seed,
            train_instances,
            hidden,
            config: grpo_config,
        } => {
            let mut cfg = grpo_config
                .clone()
                .unwrap_or_else(|| default_grpo_config(*task, *advantage_source));
            cfg.advantage_source = *advantage_source;
            if let Some(h) = hidden {
                cfg.hidden = h.clone();
            }
            let seeds = instance_seeds(*seed, "train", *train_instances);
            let (trained, encoder) = match task {
                Task::Sudoku => {
                    let envs: Vec<SudokuEnv> = build_suite(*task, *mini, Split::Id, &seeds)?
                        .into_iter()
                        .map(|i| match i {
                            PuzzleInstance::Sudoku(b) => SudokuEnv::new(b),
                            _ => unreachable!(),
                        })
                        .collect();
                    train_grpo_generic(&envs, *mode, &cfg, *seed, &mut GridStepOracle)?
                }
                Task::Futoshiki => {
                    let envs: Vec<FutoshikiEnv> = build_suite(*task, *mini, Split::Id, &seeds)?
                        .into_iter()
                        .map(|i| match i {
                            PuzzleInstance::Futoshiki(b) => FutoshikiEnv::new(b),
                            _ => unreachable!(),
                        })
                        .collect();
                    train_grpo_generic(&envs, *mode, &cfg, *seed, &mut GridStepOracle)?
                }
                Task::Sokoban => {
                    let envs: Vec<SokobanEnv> = build_suite(*task, *mini, Split::Id, &seeds)?
                        .into_iter()
                        .map(|i| match i {
                            PuzzleInstance::Sokoban(l) => {
                                SokobanEnv::new(l).expect("generated levels are solvable")
                            }
                            _ => unreachable!(),
                        })
                        .collect();
                    train_grpo_generic(&envs, *mode, &cfg, *seed, &mut SokobanStepOracle::new())?
                }
            };
            let mut csv =
                String::from("iteration,mean_reward,solved_frac,kl,clip_fraction,mean_len,wall_ms\n");
            for s in &trained.stats {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    s.iteration, s.mean_reward, s.solved_frac, s.kl, s.clip_fraction, s.mean_len, s.wall_ms
                ));
            }
            std::fs::write(run_dir.join("training.csv"), csv)?;
            for (iteration, snapshot) in &trained.snapshots {
                std::fs::write(
                    run_dir.join(format!("checkpoint-{iteration:04}.json")),
                    serde_json::to_string(&snapshot.to_checkpoint(&encoder)).unwrap(),
                )?;
            }
            std::fs::write(
                run_dir.join("checkpoint.json"),
                serde_json::to_string(&trained.policy.to_checkpoint(&encoder)).unwrap(),
            )?;
        }
        RunConfig::FitTransition { task, mini, kind, triplets, seed } => {
            if *task != Task::Sudoku {
                // Tables work everywhere, but the triplet collection below is
                // grid-shaped; keep the CLI surface on the grid tasks.
                if *kind == ModelKind::Network && *task == Task::Sokoban {
                    return Err(HarnessError::Validation(
                        "fit-transition: network models support grid tasks only".to_string(),
                    ));
                }
            }
            match task {
                Task::Sudoku => {
                    let env_seed = instance_seeds(*seed, "train", 1)[0];
                    let cfg = if *mini {
                        DifficultyConfig::mini(*task, Split::Id)
                    } else {
                        DifficultyConfig::paper(*task, Split::Id)
                    };
                    let PuzzleInstance::Sudoku(board) = generate(&cfg, env_seed).map_err(runtime)? else {
                        unreachable!()
                    };
                    let env = SudokuEnv::new(board);
                    let (train, heldout) = collect_triplets(&env, *triplets, *seed);
                    let model = fit_transition(&env, &train, *kind, *seed).map_err(runtime)?;
                    let est = measure_epsilon(&model, &env, &heldout, derive_seed(*seed, "eps", &[]))
                        .map_err(runtime)?;
                    std::fs::write(
                        run_dir.join("epsilon.json"),
                        serde_json::to_string_pretty(&est).unwrap(),
                    )?;
                }
                _ => {
                    return Err(HarnessError::Validation(
                        "fit-transition: only sudoku is wired through the CLI".to_string(),
                    ))
                }
            }
        }
        RunConfig::Eval {
            checkpoint,
            task,
            mini,
            split,
            n_instances,
            samples,
            seed,
            mask,
            corrupt_rate,
            log_trajectories,
        } => {
            let text = std::fs::read_to_string(checkpoint)?;
            let ckpt: PolicyCheckpoint =
                serde_json::from_str(&text).map_err(|e| HarnessError::Validation(e.to_string()))?;
            let (policy, mut encoder) = Policy::from_checkpoint(&ckpt)
                .map_err(|e| HarnessError::Validation(e.to_string()))?;
            if let Some(mask) = mask {
                encoder.mask = *mask;
            }
            let seeds = instance_seeds(*seed, "bench", *n_instances);
            let rows = match task {
                Task::Sudoku => {
                    let envs: Vec<SudokuEnv> = build_suite(*task, *mini, *split, &seeds)?
                        .into_iter()
                        .map(|i| match i {
                            PuzzleInstance::Sudoku(b) => SudokuEnv::new(b),
                            _ => unreachable!(),
                        })
                        .collect();
                    eval_generic(&envs, &policy, &encoder, task, split, *samples, *seed, *corrupt_rate, *log_trajectories, run_dir)?
                }
                Task::Futoshiki => {
                    let envs: Vec<FutoshikiEnv> = build_suite(*task, *mini, *split, &seeds)?
                        .into_iter()
                        .map(|i| match i {
                            PuzzleInstance::Futoshiki(b) => FutoshikiEnv::new(b),
                            _ => unreachable!(),
                        })
                        .collect();
                    eval_generic(&envs, &policy, &encoder, task, split, *samples, *seed, *corrupt_rate, *log_trajectories, run_dir)?
                }
                Task::Sokoban => {
                    let envs: Vec<SokobanEnv> = build_suite(*task, *mini, *split, &seeds)?
                        .into_iter()
                        .map(|i| match i {
                            PuzzleInstance::Sokoban(l) => {
                                SokobanEnv::new(l).expect("generated levels are solvable")
                            }
                            _ => unreachable!(),
                        })
                        .collect();
                    eval_generic(&envs, &policy, &encoder, task, split, *samples, *seed, *corrupt_rate, *log_trajectories, run_dir)?
                }
            };
            emit_metrics(&rows, run_dir).map_err(runtime)?;
        }
        RunConfig::Theory { trials, seed, mode } => {
            let mut csv = String::from(report_csv_header());
            csv.push('\n');
            let mut all_hold = true;
            let mut reports = Vec::new();
            for trial in 0..*trials {
                let paradigm = match mode {
                    TheoryMode::ActionSeq => Paradigm::ActionSeq,
                    TheoryMode::Markov => {
                        Paradigm::ApproxMarkov { eps_p: [0.0, 0.01, 0.05][trial % 3] }
                    }
                    TheoryMode::Both => {
                        if trial % 2 == 0 {
                            Paradigm::ActionSeq
                        } else {
                            Paradigm::ApproxMarkov { eps_p: [0.0, 0.01, 0.05][(trial / 2) % 3] }
                        }
                    }
                };
                let trial_seed = derive_seed(*seed, "theory-trial", &[trial as u64]);
                let mdp = TabularMdp::random(
                    2 + (trial % 3),
                    5,
                    2 + (trial % 2),
                    false,
                    trial_seed,
                );
                let config = ProtocolConfig {
                    paradigm,
                    iterations: 5,
                    step_size: 1.5,
                    noise: 0.05,
                };
                let report = run_protocol(&mdp, &config, trial_seed);
                all_hold &= report.holds;
                csv.push_str(&report_csv_line(trial, &report));
                csv.push('\n');
                reports.push(report);
            }
            std::fs::write(run_dir.join("bound_reports.csv"), csv)?;
            std::fs::write(
                run_dir.join("bound_reports.json"),
                serde_json::to_string_pretty(&reports).unwrap(),
            )?;
            if !all_hold {
                return Err(HarnessError::Runtime(
                    "a proposition inequality failed; see bound_reports.csv".to_string(),
                ));
            }
        }
    }
    Ok(())
}

fn annotate_grid(
    env: &SudokuEnv,
    mut state: crate::puzzles::SudokuBoard,
    actions: &[usize],
) -> Result<Vec<AdvantageRecord>, crate::oracle::OracleError> {
    let mut out = Vec::new();
    for &a in actions {
        let (r, c, v) = env.decode_action(a);
        let mut rec = crate::oracle::astar_grid(&state, r, c, v)?;
        rec.action = a;
        state = state
            .apply_fill(r, c, v)
            .map_err(|e| crate::oracle::OracleError::IllegalAction(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn annotate_grid_futoshiki(
    env: &FutoshikiEnv,
    mut state: crate::puzzles::FutoshikiBoard,
    actions: &[usize],
) -> Result<Vec<AdvantageRecord>, crate::oracle::OracleError> {
    let mut out = Vec::new();
    for &a in actions {
        let (r, c, v) = env.decode_action(a);
        let mut rec = crate::oracle::astar_grid(&state, r, c, v)?;
        rec.action = a;
        state = state
            .apply_fill(r, c, v)
            .map_err(|e| crate::oracle::OracleError::IllegalAction(e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn train_grpo_generic<E, O>(
    envs: &[E],
    mode: ModeVariant,
    cfg: &GrpoConfig,
    seed: u64,
    oracle: &mut O,
) -> Result<(crate::learn::TrainedPolicy, Encoder), HarnessError>
where
    E: Environment,
    O: crate::oracle::StepOracle<E> + crate::oracle::DemoOracle<E>,
{
    if envs.is_empty() {
        return Err(HarnessError::Validation("no training instances".to_string()));
    }
    let encoder = Encoder::for_instances(envs, mode, MaskOption::Full);
    let mut policy = Policy::mlp_uniform_init(
        encoder.input_dim(),
        &cfg.hidden,
        envs[0].action_count() as u32,
        derive_seed(seed, "policy-init", &[]),
    );
    let trained =
        grpo_train(envs, &mut policy, &encoder, oracle, cfg, seed).map_err(runtime)?;
    Ok((trained, encoder))
}

#[allow(clippy::too_many_arguments)]
fn eval_generic<E>(
    envs: &[E],
    policy: &Policy,
    encoder: &Encoder,
    task: &Task,
    split: &Split,
    samples: usize,
    seed: u64,
    corrupt_rate: Option<f64>,
    log_trajectories: bool,
    run_dir: &Path,
) -> Result<Vec<MetricsRow>, HarnessError>
where
    E: Environment + crate::transition::GridDynamicsTask,
{
    let model = corrupt_rate.map(|rate| TransitionModel::<E>::Corrupted { rate });
    let transition = match &model {
        Some(m) => EvalTransition::Model(m),
        None => EvalTransition::Env,
    };
    let approach = format!("{}-{:?}", encoder.variant.tag(), encoder.mask)
        .to_lowercase()
        .replace("full", "full-mask");
    let row = run_benchmark(
        &approach,
        task.tag(),
        split.tag(),
        envs,
        policy,
        encoder,
        transition,
        samples,
        &k_grid(samples),
        seed,
    )
    .map_err(runtime)?;
    if log_trajectories {
        let mut records = Vec::new();
        for (i, env) in envs.iter().enumerate() {
            let rollout_seed = derive_seed(seed, "bench", &[i as u64, 0]);
            let traj =
                crate::mdp::rollout(env, policy, encoder, rollout_seed).map_err(runtime)?;
            records.push(TrajectoryLogRecord::new(i as u64, encoder.variant, &traj));
        }
        let mut buf = Vec::new();
        crate::mdp::write_trajectory_log(&mut buf, &records)?;
        std::fs::write(run_dir.join("trajectories.jsonl"), buf)?;
    }
    Ok(vec![row])
}

/// Collect `(state, action, next)` triplets by random legal play, split into
/// train/held-out halves.
#[allow(clippy::type_complexity)]
fn collect_triplets(
    env: &SudokuEnv,
    n: usize,
    seed: u64,
) -> (
    Vec<(crate::puzzles::SudokuBoard, usize, crate::puzzles::SudokuBoard)>,
    Vec<(crate::puzzles::SudokuBoard, usize)>,
) {
    use rand::Rng;
    let mut rng = crate::rng::derive_rng(seed, "triplets", &[]);
    let mut triplets = Vec::with_capacity(n);
    let mut heldout = Vec::with_capacity(n / 4);
    while triplets.len() < n || heldout.len() < (n / 4).max(1) {
        let mut state = env.initial_dist().remove(0).0;
        loop {
            let legal: Vec<usize> =
                (0..env.action_count()).filter(|&a| env.is_action_legal(&state, a)).collect();
            if legal.is_empty() {
                break;
            }
            let a = legal[rng.gen_range(0..legal.len())];
            let next = env.step(&state, a).0;
            if triplets.len() < n {
                triplets.push((state.clone(), a, next.clone()));
            } else if heldout.len() < (n / 4).max(1) {
                heldout.push((state.clone(), a));
            } else {
                break;
            }
            state = next;
        }
    }
    (triplets, heldout)
}
