//! Puzzle tasks: Sudoku, Futoshiki, and Sokoban.
//!
//! Each generated instance is wrapped in an environment adapter that fixes
//! the action space and the sparse terminal reward (1 for solving, 0
//! otherwise). Grid actions are flat `(row, col, value)` indices; Sokoban
//! actions are the four directions. Horizon caps: number of blanks for the
//! grids, four times the BFS-minimal move count for Sokoban.
//!
//! Instance files carry a `task size split seed` header line followed by the
//! text grid (plus `rA cA < rB cB` inequality lines for Futoshiki).

pub mod futoshiki;
pub mod sokoban;
pub mod sudoku;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::Environment;
use crate::rng::derive_rng;

pub use futoshiki::FutoshikiBoard;
pub use sokoban::{SokobanLevel, SolveResult};
pub use sudoku::SudokuBoard;

/// An action rejected by the rules (occupied cell, out-of-range value, wall
/// bump, blocked push). The environment turns these into failed episodes.
#[derive(Debug, Clone, thiserror::Error)]
#[error("illegal action: {0}")]
pub struct IllegalAction(pub String);

#[derive(Debug, Clone, thiserror::Error)]
#[error("parse error at line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn at(line: usize, column: usize, message: String) -> Self {
        ParseError { line, column, message }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Sudoku,
    Futoshiki,
    Sokoban,
}

impl Task {
    pub fn tag(self) -> &'static str {
        match self {
            Task::Sudoku => "sudoku",
            Task::Futoshiki => "futoshiki",
            Task::Sokoban => "sokoban",
        }
    }

    pub fn parse_tag(s: &str) -> Option<Task> {
        match s {
            "sudoku" => Some(Task::Sudoku),
            "futoshiki" => Some(Task::Futoshiki),
            "sokoban" => Some(Task::Sokoban),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Id,
    Ood,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Id => "id",
            Split::Ood => "ood",
        }
    }

    pub fn parse_tag(s: &str) -> Option<Split> {
        match s {
            "id" => Some(Split::Id),
            "ood" => Some(Split::Ood),
            _ => None,
        }
    }
}

/// Instance-generation parameters for one task and split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyConfig {
    pub task: Task,
    pub split: Split,
    /// Grid side for Sudoku/Futoshiki; full grid side for Sokoban.
    pub board_size: u8,
    /// Inclusive blank-count range for the grid tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blanks: Option<(usize, usize)>,
    /// Inclusive BFS-minimal move-count range for Sokoban.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_steps: Option<(usize, usize)>,
    /// Box count for Sokoban.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<usize>,
}

impl DifficultyConfig {
    /// Benchmark configurations at the published difficulty table.
    pub fn paper(task: Task, split: Split) -> Self {
        match (task, split) {
            (Task::Sudoku, Split::Id) => Self::grid(Task::Sudoku, Split::Id, 9, (6, 6)),
            (Task::Sudoku, Split::Ood) => Self::grid(Task::Sudoku, Split::Ood, 9, (10, 10)),
            (Task::Futoshiki, Split::Id) => Self::grid(Task::Futoshiki, Split::Id, 5, (8, 10)),
            (Task::Futoshiki, Split::Ood) => Self::grid(Task::Futoshiki, Split::Ood, 5, (12, 14)),
            (Task::Sokoban, Split::Id) => Self::sokoban(Split::Id, 9, 2, (6, 10)),
            (Task::Sokoban, Split::Ood) => Self::sokoban(Split::Ood, 9, 2, (12, 14)),
        }
    }

    /// Small non-benchmark configurations for brute-force oracles and fast
    /// training runs. Mini-Sokoban follows the lower-complexity step ranges
    /// (2-4 in distribution, out-of-distribution capped at 6).
    pub fn mini(task: Task, split: Split) -> Self {
        match (task, split) {
            (Task::Sudoku, Split::Id) => Self::grid(Task::Sudoku, Split::Id, 4, (3, 3)),
            (Task::Sudoku, Split::Ood) => Self::grid(Task::Sudoku, Split::Ood, 4, (5, 6)),
            (Task::Futoshiki, Split::Id) => Self::grid(Task::Futoshiki, Split::Id, 4, (3, 4)),
            (Task::Futoshiki, Split::Ood) => Self::grid(Task::Futoshiki, Split::Ood, 4, (5, 6)),
            (Task::Sokoban, Split::Id) => Self::sokoban(Split::Id, 7, 2, (2, 4)),
            (Task::Sokoban, Split::Ood) => Self::sokoban(Split::Ood, 7, 2, (5, 6)),
        }
    }

    pub fn grid(task: Task, split: Split, board_size: u8, blanks: (usize, usize)) -> Self {
        DifficultyConfig { task, split, board_size, blanks: Some(blanks), min_steps: None, boxes: None }
    }

    pub fn sokoban(split: Split, board_size: u8, boxes: usize, min_steps: (usize, usize)) -> Self {
        DifficultyConfig {
            task: Task::Sokoban,
            split,
            board_size,
            blanks: None,
            min_steps: Some(min_steps),
            boxes: Some(boxes),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.task {
            Task::Sudoku => {
                if self.board_size != 4 && self.board_size != 9 {
                    return Err(format!("sudoku size {} unsupported", self.board_size));
                }
                let (lo, hi) = self.blanks.ok_or("sudoku config needs blanks")?;
                if lo == 0 || lo > hi || hi >= (self.board_size as usize).pow(2) {
                    return Err(format!("bad blanks range ({lo}, {hi})"));
                }
            }
            Task::Futoshiki => {
                if self.board_size != 4 && self.board_size != 5 {
                    return Err(format!("futoshiki size {} unsupported", self.board_size));
                }
                let (lo, hi) = self.blanks.ok_or("futoshiki config needs blanks")?;
                if lo == 0 || lo > hi || hi >= (self.board_size as usize).pow(2) {
                    return Err(format!("bad blanks range ({lo}, {hi})"));
                }
            }
            Task::Sokoban => {
                let (lo, hi) = self.min_steps.ok_or("sokoban config needs min_steps")?;
                if lo == 0 || lo > hi {
                    return Err(format!("bad min_steps range ({lo}, {hi})"));
                }
                let boxes = self.boxes.ok_or("sokoban config needs boxes")?;
                if boxes == 0 || boxes > 4 {
                    return Err(format!("box count {boxes} unsupported"));
                }
                if self.board_size < 4 {
                    return Err("sokoban grid side must be at least 4".to_string());
                }
            }
        }
        Ok(())
    }
}

/// One generated puzzle instance.
#[derive(Debug, Clone, PartialEq)]
pub enum PuzzleInstance {
    Sudoku(SudokuBoard),
    Futoshiki(FutoshikiBoard),
    Sokoban(SokobanLevel),
}

impl PuzzleInstance {
    pub fn task(&self) -> Task {
        match self {
            PuzzleInstance::Sudoku(_) => Task::Sudoku,
            PuzzleInstance::Futoshiki(_) => Task::Futoshiki,
            PuzzleInstance::Sokoban(_) => Task::Sokoban,
        }
    }

    pub fn body(&self) -> String {
        match self {
            PuzzleInstance::Sudoku(b) => b.serialize(),
            PuzzleInstance::Futoshiki(b) => b.serialize(),
            PuzzleInstance::Sokoban(l) => l.serialize(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GenerateError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("generation retry budget exhausted for {task} {split} size {size} ({detail})")]
    BudgetExhausted { task: &'static str, split: &'static str, size: u8, detail: String },
}

const RETRY_BUDGET: usize = 200_000;

/// Generate one instance satisfying the config's difficulty window.
pub fn generate(config: &DifficultyConfig, seed: u64) -> Result<PuzzleInstance, GenerateError> {
    config.validate().map_err(GenerateError::InvalidConfig)?;
    let mut rng: ChaCha8Rng = derive_rng(seed, "puzzle-gen", &[config.board_size as u64]);
    use rand::Rng;
    match config.task {
        Task::Sudoku => {
            let (lo, hi) = config.blanks.unwrap();
            let blanks = rng.gen_range(lo..=hi);
            sudoku::generate_puzzle(config.board_size, blanks, &mut rng, 1_000)
                .map(PuzzleInstance::Sudoku)
                .ok_or(GenerateError::BudgetExhausted {
                    task: config.task.tag(),
                    split: config.split.tag(),
                    size: config.board_size,
                    detail: format!("blanks={blanks}"),
                })
        }
        Task::Futoshiki => {
            let (lo, hi) = config.blanks.unwrap();
            let blanks = rng.gen_range(lo..=hi);
            futoshiki::generate_puzzle(config.board_size, blanks, &mut rng, 1_000)
                .map(PuzzleInstance::Futoshiki)
                .ok_or(GenerateError::BudgetExhausted {
                    task: config.task.tag(),
                    split: config.split.tag(),
                    size: config.board_size,
                    detail: format!("blanks={blanks}"),
                })
        }
        Task::Sokoban => {
            let steps = config.min_steps.unwrap();
            sokoban::generate_level(
                config.board_size,
                config.board_size,
                config.boxes.unwrap(),
                steps,
                &mut rng,
                RETRY_BUDGET,
            )
            .map(PuzzleInstance::Sokoban)
            .ok_or(GenerateError::BudgetExhausted {
                task: config.task.tag(),
                split: config.split.tag(),
                size: config.board_size,
                detail: format!("min_steps={steps:?}"),
            })
        }
    }
}

/// Render an instance file: header `task size split seed`, then the body.
pub fn write_instance_file(instance: &PuzzleInstance, split: Split, seed: u64) -> String {
    let (task, size) = match instance {
        PuzzleInstance::Sudoku(b) => (Task::Sudoku, b.size),
        PuzzleInstance::Futoshiki(b) => (Task::Futoshiki, b.size),
        PuzzleInstance::Sokoban(l) => (Task::Sokoban, l.width),
    };
    format!("{} {} {} {}\n{}", task.tag(), size, split.tag(), seed, instance.body())
}

/// Parse an instance file produced by [`write_instance_file`].
pub fn parse_instance_file(text: &str) -> Result<(PuzzleInstance, Split, u64), ParseError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| ParseError::at(1, 1, "empty file".to_string()))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 4 {
        return Err(ParseError::at(1, 1, "header must be `task size split seed`".to_string()));
    }
    let task = Task::parse_tag(tokens[0])
        .ok_or_else(|| ParseError::at(1, 1, format!("unknown task {:?}", tokens[0])))?;
    let split = Split::parse_tag(tokens[2])
        .ok_or_else(|| ParseError::at(1, 3, format!("unknown split {:?}", tokens[2])))?;
    let seed: u64 = tokens[3]
        .parse()
        .map_err(|_| ParseError::at(1, 4, format!("bad seed {:?}", tokens[3])))?;
    let body: String = lines.collect::<Vec<_>>().join("\n");
    let instance = match task {
        Task::Sudoku => PuzzleInstance::Sudoku(SudokuBoard::parse(&body)?),
        Task::Futoshiki => PuzzleInstance::Futoshiki(FutoshikiBoard::parse(&body)?),
        Task::Sokoban => PuzzleInstance::Sokoban(SokobanLevel::parse(&body)?),
    };
    Ok((instance, split, seed))
}

// --- Environment adapters -------------------------------------------------

/// Sudoku as an episodic environment: actions are flat `(row, col, value)`
/// indices, horizon equals the blank count, terminal reward 1 for the
/// correct completion.
#[derive(Debug, Clone)]
pub struct SudokuEnv {
    pub initial: SudokuBoard,
    horizon: usize,
}

impl SudokuEnv {
    pub fn new(initial: SudokuBoard) -> Self {
        let horizon = initial.blanks();
        SudokuEnv { initial, horizon }
    }

    pub fn decode_action(&self, action: usize) -> (usize, usize, u8) {
        let n = self.initial.size as usize;
        let v = (action % n) as u8 + 1;
        let cell = action / n;
        (cell / n, cell % n, v)
    }

    pub fn encode_action(&self, r: usize, c: usize, v: u8) -> usize {
        let n = self.initial.size as usize;
        (r * n + c) * n + (v as usize - 1)
    }
}

impl Environment for SudokuEnv {
    type State = SudokuBoard;

    fn horizon_max(&self) -> usize {
        self.horizon
    }

    fn initial_dist(&self) -> Vec<(SudokuBoard, f64)> {
        vec![(self.initial.clone(), 1.0)]
    }

    fn action_count(&self) -> usize {
        let n = self.initial.size as usize;
        n * n * n
    }

    fn is_action_legal(&self, state: &SudokuBoard, action: usize) -> bool {
        if action >= self.action_count() {
            return false;
        }
        let (r, c, _) = self.decode_action(action);
        state.get(r, c) == 0
    }

    fn step(&self, state: &SudokuBoard, action: usize) -> (SudokuBoard, f64) {
        let (r, c, v) = self.decode_action(action);
        let next = state.apply_fill(r, c, v).expect("step requires a legal action");
        let reward = if next.is_solved() { 1.0 } else { 0.0 };
        (next, reward)
    }

    fn is_solved(&self, state: &SudokuBoard) -> bool {
        state.is_solved()
    }

    fn is_terminal(&self, state: &SudokuBoard) -> bool {
        state.is_complete()
    }

    fn state_digest(&self, state: &SudokuBoard) -> u64 {
        state.digest()
    }

    fn feature_len(&self) -> usize {
        let n = self.initial.size as usize;
        n * n * (n + 1)
    }

    fn push_state_features(&self, state: &SudokuBoard, offset: u32, out: &mut Vec<u32>) {
        let planes = self.initial.size as u32 + 1;
        for (i, &v) in state.cells.iter().enumerate() {
            out.push(offset + i as u32 * planes + v as u32);
        }
    }

    fn perturb_state(&self, state: &SudokuBoard, rng: &mut ChaCha8Rng) -> SudokuBoard {
        sudoku::perturb(state, rng)
    }

    fn apply_action_lenient(&self, state: &SudokuBoard, action: usize) -> SudokuBoard {
        // Overwrite semantics: a shadow-chain fill lands even if the cell is
        // occupied in the (possibly drifted) shadow state.
        let (r, c, v) = self.decode_action(action.min(self.action_count() - 1));
        let mut next = state.clone();
        next.cells[r * self.initial.size as usize + c] = v;
        next
    }
}

/// Futoshiki environment; like Sudoku plus four inequality feature channels
/// per cell (less-than/greater-than toward the right and downward
/// neighbors).
#[derive(Debug, Clone)]
pub struct FutoshikiEnv {
    pub initial: FutoshikiBoard,
    horizon: usize,
}

impl FutoshikiEnv {
    pub fn new(initial: FutoshikiBoard) -> Self {
        let horizon = initial.blanks();
        FutoshikiEnv { initial, horizon }
    }

    pub fn decode_action(&self, action: usize) -> (usize, usize, u8) {
        let n = self.initial.size as usize;
        let v = (action % n) as u8 + 1;
        let cell = action / n;
        (cell / n, cell % n, v)
    }

    pub fn encode_action(&self, r: usize, c: usize, v: u8) -> usize {
        let n = self.initial.size as usize;
        (r * n + c) * n + (v as usize - 1)
    }
}

impl Environment for FutoshikiEnv {
    type State = FutoshikiBoard;

    fn horizon_max(&self) -> usize {
        self.horizon
    }

    fn initial_dist(&self) -> Vec<(FutoshikiBoard, f64)> {
        vec![(self.initial.clone(), 1.0)]
    }

    fn action_count(&self) -> usize {
        let n = self.initial.size as usize;
        n * n * n
    }

    fn is_action_legal(&self, state: &FutoshikiBoard, action: usize) -> bool {
        if action >= self.action_count() {
            return false;
        }
        let (r, c, _) = self.decode_action(action);
        state.get(r, c) == 0
    }

    fn step(&self, state: &FutoshikiBoard, action: usize) -> (FutoshikiBoard, f64) {
        let (r, c, v) = self.decode_action(action);
        let next = state.apply_fill(r, c, v).expect("step requires a legal action");
        let reward = if next.is_solved() { 1.0 } else { 0.0 };
        (next, reward)
    }

    fn is_solved(&self, state: &FutoshikiBoard) -> bool {
        state.is_solved()
    }

    fn is_terminal(&self, state: &FutoshikiBoard) -> bool {
        state.is_complete()
    }

    fn state_digest(&self, state: &FutoshikiBoard) -> u64 {
        state.digest()
    }

    fn feature_len(&self) -> usize {
        let n = self.initial.size as usize;
        n * n * (n + 1) + n * n * 4
    }

    fn push_state_features(&self, state: &FutoshikiBoard, offset: u32, out: &mut Vec<u32>) {
        let n = self.initial.size as u32;
        let planes = n + 1;
        for (i, &v) in state.cells.iter().enumerate() {
            out.push(offset + i as u32 * planes + v as u32);
        }
        let ineq_base = offset + n * n * planes;
        for ineq in &state.ineqs {
            let (ar, ac) = (ineq.a.0 as u32, ineq.a.1 as u32);
            let cell = ar * n + ac;
            // Channels: 0 = a<right, 1 = a>right, 2 = a<down, 3 = a>down.
            let channel = if ineq.b.0 == ineq.a.0 {
                if ineq.less { 0 } else { 1 }
            } else if ineq.less {
                2
            } else {
                3
            };
            out.push(ineq_base + cell * 4 + channel);
        }
    }

    fn perturb_state(&self, state: &FutoshikiBoard, rng: &mut ChaCha8Rng) -> FutoshikiBoard {
        futoshiki::perturb(state, rng)
    }

    fn apply_action_lenient(&self, state: &FutoshikiBoard, action: usize) -> FutoshikiBoard {
        let (r, c, v) = self.decode_action(action.min(self.action_count() - 1));
        let mut next = state.clone();
        next.cells[r * self.initial.size as usize + c] = v;
        next
    }
}

/// Sokoban environment: four direction actions, horizon four times the
/// BFS-minimal move count, terminal reward 1 when every box sits on a goal.
#[derive(Debug, Clone)]
pub struct SokobanEnv {
    pub initial: SokobanLevel,
    pub min_steps: usize,
    horizon: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("sokoban level is unsolvable")]
pub struct UnsolvableLevel;

impl SokobanEnv {
    pub fn new(initial: SokobanLevel) -> Result<Self, UnsolvableLevel> {
        match sokoban::solve_bfs(&initial) {
            SolveResult::Solved(path) => {
                let min_steps = path.len().max(1);
                Ok(SokobanEnv { initial, min_steps, horizon: 4 * min_steps })
            }
            SolveResult::Unsolvable => Err(UnsolvableLevel),
        }
    }
}

impl Environment for SokobanEnv {
    type State = SokobanLevel;

    fn horizon_max(&self) -> usize {
        self.horizon
    }

    fn initial_dist(&self) -> Vec<(SokobanLevel, f64)> {
        vec![(self.initial.clone(), 1.0)]
    }

    fn action_count(&self) -> usize {
        4
    }

    fn is_action_legal(&self, state: &SokobanLevel, action: usize) -> bool {
        action < 4 && state.move_legal(action)
    }

    fn step(&self, state: &SokobanLevel, action: usize) -> (SokobanLevel, f64) {
        let next = state.apply_move(action).expect("step requires a legal action");
        let reward = if next.is_solved() { 1.0 } else { 0.0 };
        (next, reward)
    }

    fn is_solved(&self, state: &SokobanLevel) -> bool {
        state.is_solved()
    }

    fn state_digest(&self, state: &SokobanLevel) -> u64 {
        state.digest()
    }

    fn feature_len(&self) -> usize {
        // Planes: wall, box, goal, player.
        4 * self.initial.width as usize * self.initial.height as usize
    }

    fn push_state_features(&self, state: &SokobanLevel, offset: u32, out: &mut Vec<u32>) {
        let cells = state.width as u32 * state.height as u32;
        for (i, &w) in state.walls.iter().enumerate() {
            if w {
                out.push(offset + i as u32);
            }
        }
        for &b in &state.boxes {
            out.push(offset + cells + b as u32);
        }
        for &g in &state.goals {
            out.push(offset + 2 * cells + g as u32);
        }
        out.push(offset + 3 * cells + state.player as u32);
    }

    fn perturb_state(&self, state: &SokobanLevel, rng: &mut ChaCha8Rng) -> SokobanLevel {
        sokoban::perturb(state, rng)
    }
}

impl crate::transition::GridDynamicsTask for SudokuEnv {
    fn grid_shape(&self) -> Option<(usize, u8)> {
        let n = self.initial.size as usize;
        Some((n * n, self.initial.size))
    }

    fn state_cells(&self, state: &SudokuBoard) -> Vec<u8> {
        state.cells.clone()
    }

    fn state_with_cells(&self, template: &SudokuBoard, cells: &[u8]) -> SudokuBoard {
        let mut next = template.clone();
        next.cells = cells.to_vec();
        next
    }
}

impl crate::transition::GridDynamicsTask for FutoshikiEnv {
    fn grid_shape(&self) -> Option<(usize, u8)> {
        let n = self.initial.size as usize;
        Some((n * n, self.initial.size))
    }

    fn state_cells(&self, state: &FutoshikiBoard) -> Vec<u8> {
        state.cells.clone()
    }

    fn state_with_cells(&self, template: &FutoshikiBoard, cells: &[u8]) -> FutoshikiBoard {
        let mut next = template.clone();
        next.cells = cells.to_vec();
        next
    }
}

impl crate::transition::GridDynamicsTask for SokobanEnv {
    fn grid_shape(&self) -> Option<(usize, u8)> {
        None
    }

    fn state_cells(&self, _state: &SokobanLevel) -> Vec<u8> {
        Vec::new()
    }

    fn state_with_cells(&self, template: &SokobanLevel, _cells: &[u8]) -> SokobanLevel {
        template.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, Outcome};
    use crate::policy::{Encoder, MaskOption, Policy};
    use crate::mdp::ModeVariant;

    #[test]
    fn paper_and_mini_difficulty_windows_are_disjoint() {
        for task in [Task::Sudoku, Task::Futoshiki, Task::Sokoban] {
            for cfg in [DifficultyConfig::paper, DifficultyConfig::mini] {
                let id = cfg(task, Split::Id);
                let ood = cfg(task, Split::Ood);
                id.validate().unwrap();
                ood.validate().unwrap();
                let (id_range, ood_range) = match task {
                    Task::Sokoban => (id.min_steps.unwrap(), ood.min_steps.unwrap()),
                    _ => (id.blanks.unwrap(), ood.blanks.unwrap()),
                };
                assert!(
                    id_range.1 < ood_range.0,
                    "{task:?}: ID {id_range:?} must end below OOD {ood_range:?}"
                );
            }
        }
    }

    #[test]
    fn generate_respects_the_difficulty_window() {
        let cfg = DifficultyConfig::mini(Task::Sokoban, Split::Id);
        for seed in 0u64..5 {
            let inst = generate(&cfg, seed).unwrap();
            if let PuzzleInstance::Sokoban(level) = inst {
                let n = sokoban::solve_bfs(&level).min_steps().unwrap();
                assert!((2..=4).contains(&n), "min steps {n}");
            } else {
                panic!("expected sokoban");
            }
        }
        let cfg = DifficultyConfig::paper(Task::Sudoku, Split::Id);
        let inst = generate(&cfg, 7).unwrap();
        if let PuzzleInstance::Sudoku(board) = inst {
            assert_eq!(board.blanks(), 6);
            let (_, count) = sudoku::solve_counting(&board, 2);
            assert_eq!(count, 1);
        } else {
            panic!("expected sudoku");
        }
    }

    #[test]
    fn instance_files_round_trip() {
        for (task, seed) in [(Task::Sudoku, 3u64), (Task::Futoshiki, 4), (Task::Sokoban, 5)] {
            let cfg = DifficultyConfig::mini(task, Split::Id);
            let inst = generate(&cfg, seed).unwrap();
            let text = write_instance_file(&inst, Split::Id, seed);
            let (parsed, split, parsed_seed) = parse_instance_file(&text).unwrap();
            assert_eq!(parsed, inst);
            assert_eq!(split, Split::Id);
            assert_eq!(parsed_seed, seed);
        }
    }

    #[test]
    fn sudoku_env_rewards_only_the_correct_completion() {
        let cfg = DifficultyConfig::mini(Task::Sudoku, Split::Id);
        let inst = generate(&cfg, 11).unwrap();
        let PuzzleInstance::Sudoku(board) = inst else { panic!() };
        let (solution, _) = sudoku::solve_counting(&board, 2);
        let solution = solution.unwrap();
        let env = SudokuEnv::new(board.clone());
        // Walk the solution path: fill each blank with the solution value.
        let n = board.size as usize;
        let mut state = board.clone();
        let mut last_reward = 0.0;
        for r in 0..n {
            for c in 0..n {
                if state.get(r, c) == 0 {
                    let action = env.encode_action(r, c, solution.get(r, c));
                    assert!(env.is_action_legal(&state, action));
                    let (next, reward) = env.step(&state, action);
                    state = next;
                    last_reward = reward;
                }
            }
        }
        assert!(env.is_solved(&state));
        assert_eq!(last_reward, 1.0);
    }

    #[test]
    fn illegal_fill_ends_the_episode_failed() {
        let cfg = DifficultyConfig::mini(Task::Sudoku, Split::Id);
        let PuzzleInstance::Sudoku(board) = generate(&cfg, 2).unwrap() else { panic!() };
        let env = SudokuEnv::new(board.clone());
        // Force the policy to pick a fill on an occupied cell.
        let n = board.size as usize;
        let occupied = (0..n * n).find(|&i| board.cells[i] != 0).unwrap();
        let action = occupied * n; // value 1 at an occupied cell
        let encoder = Encoder::for_env(&env, ModeVariant::Markov, MaskOption::Full);
        let mut table = std::collections::BTreeMap::new();
        let input = encoder.encode(&env, &board, &[], &board).unwrap();
        let mut logits = vec![-1e9; env.action_count()];
        logits[action] = 0.0;
        table.insert(input.digest(), logits);
        let policy = Policy::tabular(
            encoder.input_dim(),
            env.action_count() as u32,
            crate::policy::TabularPolicy { table },
        );
        let traj = rollout(&env, &policy, &encoder, 0).unwrap();
        assert_eq!(traj.outcome, Outcome::Failed);
        assert_eq!(traj.steps.len(), 1);
        assert_eq!(traj.steps[0].reward, 0.0);
    }

    #[test]
    fn apply_action_is_pure_and_deterministic() {
        let cfg = DifficultyConfig::mini(Task::Sokoban, Split::Id);
        let PuzzleInstance::Sokoban(level) = generate(&cfg, 9).unwrap() else { panic!() };
        let env = SokobanEnv::new(level.clone()).unwrap();
        for dir in 0..4 {
            if env.is_action_legal(&level, dir) {
                let (a, ra) = env.step(&level, dir);
                let (b, rb) = env.step(&level, dir);
                assert_eq!(a, b);
                assert_eq!(ra, rb);
            }
        }
    }

    #[test]
    fn markov_features_are_injective_on_mini_boards() {
        // Distinct reachable states must encode to distinct feature sets.
        let cfg = DifficultyConfig::mini(Task::Sudoku, Split::Id);
        let PuzzleInstance::Sudoku(board) = generate(&cfg, 21).unwrap() else { panic!() };
        let env = SudokuEnv::new(board.clone());
        let mut seen = std::collections::BTreeMap::new();
        // Enumerate all states reachable by legal fills (small: 3 blanks).
        let mut stack = vec![board.clone()];
        while let Some(state) = stack.pop() {
            let mut feats = Vec::new();
            env.push_state_features(&state, 0, &mut feats);
            feats.sort_unstable();
            if let Some(prev) = seen.insert(feats, state.clone()) {
                assert_eq!(prev, state, "feature collision between distinct states");
            }
            if !env.is_terminal(&state) {
                for a in 0..env.action_count() {
                    if env.is_action_legal(&state, a) {
                        stack.push(env.step(&state, a).0);
                    }
                }
            }
        }
        assert!(seen.len() > 1);
    }
}
