//! Desk-scale reinforcement-learning laboratory for contrasting Markov,
//! action-sequence, and state-action-sequence policy conditioning on
//! exactly solvable puzzle MDPs.
//!
//! The environments (a combination lock, Sudoku, Futoshiki, Sokoban) are
//! small enough for exact oracles and exhaustive enumeration, which makes
//! the questions that are usually empirical — how much harder is learning
//! from action histories than from states, what does an approximate state
//! chain cost, when does RL beat its reference policy — checkable to
//! numerical precision:
//!
//! - [`mdp`] defines the environment contract and the history/Markov
//!   rollout loops;
//! - [`lock`] and [`puzzles`] provide the tasks with generators and exact
//!   solvers;
//! - [`oracle`] computes exact optimal advantages (backtracking for grids,
//!   breadth-first search for Sokoban);
//! - [`policy`] holds the input encoders for the three conditioning modes
//!   and a small MLP with a hand-rolled backward pass;
//! - [`learn`] trains agents (lock DQN, GRPO with group-normalized or
//!   oracle advantages);
//! - [`transition`] supplies learned and corrupted transition models for
//!   approximate-Markov rollouts;
//! - [`eval`] runs benchmarks and computes Avg@k / Pass@k;
//! - [`theory`] verifies the regret bounds and occupancy-ratio separations
//!   on enumerable MDPs;
//! - [`harness`] orchestrates experiments into reproducible run
//!   directories.

pub mod eval;
pub mod harness;
pub mod learn;
pub mod lock;
pub mod mdp;
pub mod oracle;
pub mod policy;
pub mod puzzles;
pub mod rng;
pub mod theory;
pub mod transition;
