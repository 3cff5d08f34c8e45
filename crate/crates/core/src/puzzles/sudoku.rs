//! Sudoku boards (4x4 with 2x2 boxes, 9x9 with 3x3 boxes).
//!
//! Boards are value types; filling a cell clones. Play allows any in-range
//! fill of a blank cell, including constraint-violating ones (the

//! environment's sparse reward only pays out for a complete consistent
//! board), so consistency is a property of generated puzzles and solver
//! inputs rather than of every reachable state.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::Fnv1a;

use super::{IllegalAction, ParseError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SudokuBoard {
    pub size: u8,
    /// Row-major cells; 0 is blank, values are `1..=size`.
    pub cells: Vec<u8>,
}

pub(crate) fn box_dims(size: u8) -> (u8, u8) {
    match size {
        4 => (2, 2),
        9 => (3, 3),
        _ => unreachable!("sizes are validated at construction"),
    }
}

impl SudokuBoard {
    pub fn empty(size: u8) -> Self {
        assert!(size == 4 || size == 9, "supported sizes are 4 and 9");
        SudokuBoard { size, cells: vec![0; size as usize * size as usize] }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.size as usize + c]
    }

    fn set(&mut self, r: usize, c: usize, v: u8) {
        self.cells[r * self.size as usize + c] = v;
    }

    pub fn blanks(&self) -> usize {
        self.cells.iter().filter(|&&v| v == 0).count()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().all(|&v| v != 0)
    }

    /// No duplicate among filled cells in any row, column, or box.
    pub fn is_consistent(&self) -> bool {
        let n = self.size as usize;
        let (bw, bh) = box_dims(self.size);
        let mut seen = vec![false; n + 1];
        for r in 0..n {
            seen.iter_mut().for_each(|s| *s = false);
            for c in 0..n {
                let v = self.get(r, c) as usize;
                if v != 0 {
                    if seen[v] {
                        return false;
                    }
                    seen[v] = true;
                }
            }
        }
        for c in 0..n {
            seen.iter_mut().for_each(|s| *s = false);
            for r in 0..n {
                let v = self.get(r, c) as usize;
                if v != 0 {
                    if seen[v] {
                        return false;
                    }
                    seen[v] = true;
                }
            }
        }
        for br in (0..n).step_by(bh as usize) {
            for bc in (0..n).step_by(bw as usize) {
                seen.iter_mut().for_each(|s| *s = false);
                for r in br..br + bh as usize {
                    for c in bc..bc + bw as usize {
                        let v = self.get(r, c) as usize;
                        if v != 0 {
                            if seen[v] {
                                return false;
                            }
                            seen[v] = true;
                        }
                    }
                }
            }
        }
        true
    }

    pub fn is_solved(&self) -> bool {
        self.is_complete() && self.is_consistent()
    }

    /// Fill a blank cell. Constraint-violating values are allowed; filling a
    /// non-blank cell or an out-of-range value is an [`IllegalAction`].
    pub fn apply_fill(&self, r: usize, c: usize, v: u8) -> Result<Self, IllegalAction> {
        let n = self.size as usize;
        if r >= n || c >= n {
            return Err(IllegalAction(format!("cell ({r}, {c}) out of bounds for size {n}")));
        }
        if v == 0 || v > self.size {
            return Err(IllegalAction(format!("value {v} out of range 1..={}", self.size)));
        }
        if self.get(r, c) != 0 {
            return Err(IllegalAction(format!("cell ({r}, {c}) is already filled")));
        }
        let mut next = self.clone();
        next.set(r, c, v);
        Ok(next)
    }

    /// Values that do not conflict with any filled peer of cell `(r, c)`.
    pub fn candidates(&self, r: usize, c: usize) -> Vec<u8> {
        let n = self.size as usize;
        let (bw, bh) = box_dims(self.size);
        let mut blocked = vec![false; n + 1];
        for i in 0..n {
            blocked[self.get(r, i) as usize] = true;
            blocked[self.get(i, c) as usize] = true;
        }
        let br = r / bh as usize * bh as usize;
        let bc = c / bw as usize * bw as usize;
        for rr in br..br + bh as usize {
            for cc in bc..bc + bw as usize {
                blocked[self.get(rr, cc) as usize] = true;
            }
        }
        (1..=self.size).filter(|&v| !blocked[v as usize]).collect()
    }

    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_bytes(b"sudoku");
        h.write_bytes(&[self.size]);
        h.write_bytes(&self.cells);
        h.finish()
    }

    pub fn serialize(&self) -> String {
        let n = self.size as usize;
        let mut out = String::new();
        for r in 0..n {
            let row: Vec<String> = (0..n)
                .map(|c| {
                    let v = self.get(r, c);
                    if v == 0 { "_".to_string() } else { v.to_string() }
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parse a space-separated grid with `_` blanks. Errors carry the
    /// offending line/column (1-based, relative to the grid text).
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let n = rows.len();
        if n != 4 && n != 9 {
            return Err(ParseError::at(1, 1, format!("unsupported grid size {n} (expected 4 or 9)")));
        }
        let mut board = SudokuBoard::empty(n as u8);
        for (r, line) in rows.iter().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != n {
                return Err(ParseError::at(r + 1, 1, format!("expected {n} cells, found {}", tokens.len())));
            }
            for (c, tok) in tokens.iter().enumerate() {
                if *tok == "_" {
                    continue;
                }
                let v: u8 = tok.parse().map_err(|_| {
                    ParseError::at(r + 1, c + 1, format!("bad cell token {tok:?}"))
                })?;
                if v == 0 || v as usize > n {
                    return Err(ParseError::at(r + 1, c + 1, format!("value {v} out of range 1..={n}")));
                }
                board.set(r, c, v);
            }
        }
        Ok(board)
    }
}

/// Count completions up to `cap`, returning the first solution found.
///
/// Naked-single propagation plus backtracking on a minimum-candidate cell.
/// An inconsistent input has zero completions by definition.
pub fn solve_counting(board: &SudokuBoard, cap: usize) -> (Option<SudokuBoard>, usize) {
    if !board.is_consistent() {
        return (None, 0);
    }
    let mut work = board.clone();
    let mut solution = None;
    let mut count = 0;
    count_rec(&mut work, cap, &mut solution, &mut count);
    (solution, count)
}

fn count_rec(
    board: &mut SudokuBoard,
    cap: usize,
    solution: &mut Option<SudokuBoard>,
    count: &mut usize,
) {
    if *count >= cap {
        return;
    }
    // Find the blank with the fewest candidates; propagate trivially by
    // always branching on singles first.
    let n = board.size as usize;
    let mut best: Option<(usize, usize, Vec<u8>)> = None;
    for r in 0..n {
        for c in 0..n {
            if board.get(r, c) != 0 {
                continue;
            }
            let cands = board.candidates(r, c);
            if cands.is_empty() {
                return; // dead end
            }
            let better = match &best {
                None => true,
                Some((_, _, b)) => cands.len() < b.len(),
            };
            if better {
                let single = cands.len() == 1;
                best = Some((r, c, cands));
                if single {
                    break;
                }
            }
        }
        if matches!(&best, Some((_, _, c)) if c.len() == 1) {
            break;
        }
    }
    match best {
        None => {
            *count += 1;
            if solution.is_none() {
                *solution = Some(board.clone());
            }
        }
        Some((r, c, cands)) => {
            for v in cands {
                board.set(r, c, v);
                count_rec(board, cap, solution, count);
                board.set(r, c, 0);
                if *count >= cap {
                    return;
                }
            }
        }
    }
}

/// Build a complete valid board by randomized backtracking.
pub fn generate_full(size: u8, rng: &mut ChaCha8Rng) -> SudokuBoard {
    let mut board = SudokuBoard::empty(size);
    let filled = fill_rec(&mut board, 0, rng);
    debug_assert!(filled);
    board
}

fn fill_rec(board: &mut SudokuBoard, idx: usize, rng: &mut ChaCha8Rng) -> bool {
    let n = board.size as usize;
    if idx == n * n {
        return true;
    }
    let (r, c) = (idx / n, idx % n);
    let mut cands = board.candidates(r, c);
    cands.shuffle(rng);
    for v in cands {
        board.set(r, c, v);
        if fill_rec(board, idx + 1, rng) {
            return true;
        }
        board.set(r, c, 0);
    }
    false
}

/// Carve a unique-solution puzzle with exactly `blanks` blanks.
///
/// Removes cells in random order, keeping a removal only while the solution
/// count stays at 1. Returns `None` when this solution admits no such
/// carving (the caller retries with a fresh full board).
pub fn carve_unique(
    full: &SudokuBoard,
    blanks: usize,
    rng: &mut ChaCha8Rng,
) -> Option<SudokuBoard> {
    let n = full.size as usize;
    let mut board = full.clone();
    let mut order: Vec<usize> = (0..n * n).collect();
    order.shuffle(rng);
    let mut removed = 0;
    for idx in order {
        if removed == blanks {
            break;
        }
        let prev = board.cells[idx];
        if prev == 0 {
            continue;
        }
        board.cells[idx] = 0;
        let (_, count) = solve_counting(&board, 2);
        if count == 1 {
            removed += 1;
        } else {
            board.cells[idx] = prev;
        }
    }
    (removed == blanks).then_some(board)
}

/// Generate a unique-solution board with `blanks` blanks.
pub fn generate_puzzle(
    size: u8,
    blanks: usize,
    rng: &mut ChaCha8Rng,
    retry_budget: usize,
) -> Option<SudokuBoard> {
    for _ in 0..retry_budget {
        let full = generate_full(size, rng);
        if let Some(puzzle) = carve_unique(&full, blanks, rng) {
            return Some(puzzle);
        }
    }
    None
}

/// Perturbation used by the corrupted transition-model fixture: one random
/// cell changes to a different value (possibly blank). Always well-formed,
/// never equal to the input.
pub fn perturb(board: &SudokuBoard, rng: &mut ChaCha8Rng) -> SudokuBoard {
    let mut next = board.clone();
    let idx = rng.gen_range(0..next.cells.len());
    let old = next.cells[idx];
    loop {
        let v = rng.gen_range(0..=next.size);
        if v != old {
            next.cells[idx] = v;
            return next;
        }
    }
}
