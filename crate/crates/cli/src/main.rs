//! Command-line harness: one subcommand per experiment type, each writing
//! an immutable run directory. Flags override fields of an optional JSON
//! config file (`--config`); the effective config is echoed into the run
//! directory. Exit codes: 0 success, 1 validation, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use markovlab::harness::{execute, HarnessError, RunConfig, TheoryMode, OUTPUT_ROOT_ENV};
use markovlab::learn::AdvantageSource;
use markovlab::mdp::ModeVariant;
use markovlab::policy::MaskOption;
use markovlab::puzzles::{Split, Task};
use markovlab::transition::ModelKind;

#[derive(Parser)]
#[command(name = "markovlab", version, about = "Puzzle-MDP policy conditioning laboratory")]
struct Cli {
    /// Run directory (defaults to <output root>/<command>-<config digest>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow recomputing into an existing run directory with an identical
    /// config.
    #[arg(long, global = true, default_value_t = false)]
    resume: bool,
    /// JSON run config; explicit flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Sudoku,
    Futoshiki,
    Sokoban,
}

impl From<TaskArg> for Task {
    fn from(value: TaskArg) -> Task {
        match value {
            TaskArg::Sudoku => Task::Sudoku,
            TaskArg::Futoshiki => Task::Futoshiki,
            TaskArg::Sokoban => Task::Sokoban,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Id,
    Ood,
}

impl From<SplitArg> for Split {
    fn from(value: SplitArg) -> Split {
        match value {
            SplitArg::Id => Split::Id,
            SplitArg::Ood => Split::Ood,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Markov,
    ActionSeq,
    StateActionSeq,
}

impl From<ModeArg> for ModeVariant {
    fn from(value: ModeArg) -> ModeVariant {
        match value {
            ModeArg::Markov => ModeVariant::Markov,
            ModeArg::ActionSeq => ModeVariant::ActionSeq,
            ModeArg::StateActionSeq => ModeVariant::StateActionSeq,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AdvantageArg {
    GroupNormalized,
    OracleAstar,
}

impl From<AdvantageArg> for AdvantageSource {
    fn from(value: AdvantageArg) -> AdvantageSource {
        match value {
            AdvantageArg::GroupNormalized => AdvantageSource::GroupNormalized,
            AdvantageArg::OracleAstar => AdvantageSource::OracleAstar,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Full,
    HistoryOnly,
    LastStateOnly,
}

impl From<MaskArg> for MaskOption {
    fn from(value: MaskArg) -> MaskOption {
        match value {
            MaskArg::Full => MaskOption::Full,
            MaskArg::HistoryOnly => MaskOption::HistoryOnly,
            MaskArg::LastStateOnly => MaskOption::LastStateOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TheoryModeArg {
    ActionSeq,
    Markov,
    Both,
}

impl From<TheoryModeArg> for TheoryMode {
    fn from(value: TheoryModeArg) -> TheoryMode {
        match value {
            TheoryModeArg::ActionSeq => TheoryMode::ActionSeq,
            TheoryModeArg::Markov => TheoryMode::Markov,
            TheoryModeArg::Both => TheoryMode::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKindArg {
    Table,
    Network,
}

impl From<ModelKindArg> for ModelKind {
    fn from(value: ModelKindArg) -> ModelKind {
        match value {
            ModelKindArg::Table => ModelKind::Table,
            ModelKindArg::Network => ModelKind::Network,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    task: Option<TaskArg>,
    #[arg(long)]
    split: Option<SplitArg>,
    /// Use the small non-benchmark configurations.
    #[arg(long)]
    mini: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainDqnArgs {
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    total_steps: Option<usize>,
}

#[derive(Args)]
struct TrainGrpoArgs {
    #[arg(long)]
    task: Option<TaskArg>,
    #[arg(long)]
    mini: bool,
    #[arg(long)]
    mode: Option<ModeArg>,
    #[arg(long)]
    advantage_source: Option<AdvantageArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_instances: Option<usize>,
    /// Comma-separated hidden layer widths; empty string for linear.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    task: Option<TaskArg>,
    #[arg(long)]
    mini: bool,
    #[arg(long)]
    split: Option<SplitArg>,
    #[arg(long)]
    n_instances: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mask: Option<MaskArg>,
    /// Evaluate through a corrupted transition model at this rate.
    #[arg(long)]
    corrupt_rate: Option<f64>,
    #[arg(long)]
    log_trajectories: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark instance set.
    Gen(GenArgs),
    /// Solve one instance file.
    Solve {
        #[arg(long)]
        instance: Option<PathBuf>,
    },
    /// Annotate an action list with exact optimal advantages.
    Oracle {
        #[arg(long)]
        instance: Option<PathBuf>,
        /// Comma-separated action indices.
        #[arg(long)]
        actions: Option<String>,
    },
    /// Train a lock DQN agent.
    TrainDqn(TrainDqnArgs),
    /// Train a puzzle policy with GRPO.
    TrainGrpo(TrainGrpoArgs),
    /// Fit a transition model and report its error rate.
    FitTransition {
        #[arg(long)]
        task: Option<TaskArg>,
        #[arg(long)]
        mini: bool,
        #[arg(long)]
        kind: Option<ModelKindArg>,
        #[arg(long)]
        triplets: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a benchmark suite.
    Eval(EvalArgs),
    /// Run randomized theory trials (bound reports).
    Theory {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<TheoryModeArg>,
    },
}

fn load_base(config: &Option<PathBuf>) -> Result<Option<RunConfig>, HarnessError> {
    match config {
        None => Ok(None),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Validation(format!("config file: {e}")))?;
            let parsed: RunConfig = serde_json::from_str(&text)
                .map_err(|e| HarnessError::Validation(format!("config file: {e}")))?;
            Ok(Some(parsed))
        }
    }
}

fn required<T>(value: Option<T>, name: &str) -> Result<T, HarnessError> {
    value.ok_or_else(|| {
        HarnessError::Validation(format!("missing --{name} (and no config file value)"))
    })
}

fn parse_hidden(spec: &str) -> Result<Vec<u32>, HarnessError> {
    if spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<u32>()
                .map_err(|_| HarnessError::Validation(format!("bad hidden width {t:?}")))
        })
        .collect()
}

/// Merge CLI flags over the optional config-file base into a full config.
fn build_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let base = load_base(&cli.config)?;
    let config = match (&cli.command, base) {
        (Command::Gen(args), base) => {
            let b = match base {
                Some(RunConfig::Gen { task, split, mini, n, seed }) => {
                    Some((task, split, mini, n, seed))
                }
                Some(other) => {
                    return Err(HarnessError::Validation(format!(
                        "config file holds a {} config",
                        other.command_tag()
                    )))
                }
                None => None,
            };
            RunConfig::Gen {
                task: required(args.task.map(Task::from).or(b.map(|x| x.0)), "task")?,
                split: args.split.map(Split::from).or(b.map(|x| x.1)).unwrap_or(Split::Id),
                mini: args.mini || b.map(|x| x.2).unwrap_or(false),
                n: required(args.n.or(b.map(|x| x.3)), "n")?,
                seed: args.seed.or(b.map(|x| x.4)).unwrap_or(0),
            }
        }
        (Command::Solve { instance }, base) => RunConfig::Solve {
            instance: required(
                instance.clone().or(match base {
                    Some(RunConfig::Solve { instance }) => Some(instance),
                    _ => None,
                }),
                "instance",
            )?,
        },
        (Command::Oracle { instance, actions }, base) => {
            let (b_instance, b_actions) = match base {
                Some(RunConfig::Oracle { instance, actions }) => (Some(instance), Some(actions)),
                _ => (None, None),
            };
            let actions = match actions {
                Some(spec) => spec
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| {
                        t.trim().parse::<usize>().map_err(|_| {
                            HarnessError::Validation(format!("bad action index {t:?}"))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?,
                None => required(b_actions, "actions")?,
            };
            RunConfig::Oracle {
                instance: required(instance.clone().or(b_instance), "instance")?,
                actions,
            }
        }
        (Command::TrainDqn(args), base) => {
            let b = match base {
                Some(RunConfig::TrainDqn { horizon, mode, seed, config }) => {
                    Some((horizon, mode, seed, config))
                }
                _ => None,
            };
            let mut config = b.as_ref().and_then(|x| x.3.clone());
            if let Some(steps) = args.total_steps {
                let mut c = config.unwrap_or_default();
                c.total_steps = steps;
                config = Some(c);
            }
            RunConfig::TrainDqn {
                horizon: required(args.horizon.or(b.as_ref().map(|x| x.0)), "horizon")?,
                mode: required(
                    args.mode.map(ModeVariant::from).or(b.as_ref().map(|x| x.1)),
                    "mode",
                )?,
                seed: args.seed.or(b.as_ref().map(|x| x.2)).unwrap_or(0),
                config,
            }
        }
        (Command::TrainGrpo(args), base) => {
            let b = match base {
                Some(RunConfig::TrainGrpo {
                    task,
                    mini,
                    mode,
                    advantage_source,
                    seed,
                    train_instances,
                    hidden,
                    config,
                }) => Some((
                    task,
                    mini,
                    mode,
                    advantage_source,
                    seed,
                    train_instances,
                    hidden,
                    config,
                )),
                _ => None,
            };
            let task = required(args.task.map(Task::from).or(b.as_ref().map(|x| x.0)), "task")?;
            let advantage_source = args
                .advantage_source
                .map(AdvantageSource::from)
                .or(b.as_ref().map(|x| x.3))
                .unwrap_or(AdvantageSource::GroupNormalized);
            let mut config = b.as_ref().and_then(|x| x.7.clone());
            if let Some(iterations) = args.iterations {
                let mut c = config.unwrap_or_else(|| {
                    markovlab::harness::default_grpo_config(task, advantage_source)
                });
                c.learn.iterations = iterations;
                config = Some(c);
            }
            RunConfig::TrainGrpo {
                task,
                mini: args.mini || b.as_ref().map(|x| x.1).unwrap_or(false),
                mode: required(
                    args.mode.map(ModeVariant::from).or(b.as_ref().map(|x| x.2)),
                    "mode",
                )?,
                advantage_source,
                seed: args.seed.or(b.as_ref().map(|x| x.4)).unwrap_or(0),
                train_instances: args.train_instances.or(b.as_ref().map(|x| x.5)).unwrap_or(1000),
                hidden: match &args.hidden {
                    Some(spec) => Some(parse_hidden(spec)?),
                    None => b.as_ref().and_then(|x| x.6.clone()),
                },
                config,
            }
        }
        (Command::FitTransition { task, mini, kind, triplets, seed }, base) => {
            let b = match base {
                Some(RunConfig::FitTransition { task, mini, kind, triplets, seed }) => {
                    Some((task, mini, kind, triplets, seed))
                }
                _ => None,
            };
            RunConfig::FitTransition {
                task: required(task.map(Task::from).or(b.map(|x| x.0)), "task")?,
                mini: *mini || b.map(|x| x.1).unwrap_or(false),
                kind: kind.map(ModelKind::from).or(b.map(|x| x.2)).unwrap_or(ModelKind::Table),
                triplets: triplets.or(b.map(|x| x.3)).unwrap_or(1000),
                seed: seed.or(b.map(|x| x.4)).unwrap_or(0),
            }
        }
        (Command::Eval(args), base) => {
            let b = match base {
                Some(RunConfig::Eval {
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
                }) => Some((
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
                )),
                _ => None,
            };
            RunConfig::Eval {
                checkpoint: required(
                    args.checkpoint.clone().or(b.as_ref().map(|x| x.0.clone())),
                    "checkpoint",
                )?,
                task: required(args.task.map(Task::from).or(b.as_ref().map(|x| x.1)), "task")?,
                mini: args.mini || b.as_ref().map(|x| x.2).unwrap_or(false),
                split: args
                    .split
                    .map(Split::from)
                    .or(b.as_ref().map(|x| x.3))
                    .unwrap_or(Split::Id),
                n_instances: args.n_instances.or(b.as_ref().map(|x| x.4)).unwrap_or(100),
                samples: args.samples.or(b.as_ref().map(|x| x.5)).unwrap_or(32),
                seed: args.seed.or(b.as_ref().map(|x| x.6)).unwrap_or(0),
                mask: args.mask.map(MaskOption::from).or(b.as_ref().and_then(|x| x.7)),
                corrupt_rate: args.corrupt_rate.or(b.as_ref().and_then(|x| x.8)),
                log_trajectories: args.log_trajectories
                    || b.as_ref().map(|x| x.9).unwrap_or(false),
            }
        }
        (Command::Theory { trials, seed, mode }, base) => {
            let b = match base {
                Some(RunConfig::Theory { trials, seed, mode }) => Some((trials, seed, mode)),
                _ => None,
            };
            RunConfig::Theory {
                trials: required(trials.or(b.map(|x| x.0)), "trials")?,
                seed: seed.or(b.map(|x| x.1)).unwrap_or(0),
                mode: mode.map(TheoryMode::from).or(b.map(|x| x.2)).unwrap_or(TheoryMode::Both),
            }
        }
    };
    Ok(config)
}

fn run_dir_for(cli: &Cli, config: &RunConfig) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    let root = std::env::var(OUTPUT_ROOT_ENV).unwrap_or_else(|_| "runs".to_string());
    let digest = {
        let json = serde_json::to_string(config).expect("config serializes");
        let mut h = markovlab::rng::Fnv1a::new();
        h.write_bytes(json.as_bytes());
        h.finish()
    };
    PathBuf::from(root).join(format!("{}-{digest:016x}", config.command_tag()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; anything else is a
            // validation failure.
            use clap::error::ErrorKind;
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let config = match build_config(&cli) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    let run_dir = run_dir_for(&cli, &config);
    match execute(&config, &run_dir, cli.resume) {
        Ok(()) => {
            println!("run written to {}", run_dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
