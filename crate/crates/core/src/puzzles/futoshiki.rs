//! Futoshiki: Latin squares with inequality constraints on adjacent cells.
//!
//! Inequalities are sampled from the hidden solution at roughly one per
//! three adjacent pairs, which keeps generated instances solvable by
//! propagation plus shallow search. Like Sudoku, play allows bad fills; the
//! constraints gate the terminal reward and the solver.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::Fnv1a;

use super::{IllegalAction, ParseError};

/// `value(a) < value(b)` when `less`, else `value(a) > value(b)`.
/// Endpoints are orthogonally adjacent cells in `(row, col)` form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Ineq {
    pub a: (u8, u8),
    pub b: (u8, u8),
    pub less: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FutoshikiBoard {
    pub size: u8,
    /// Row-major; 0 is blank.
    pub cells: Vec<u8>,
    /// Canonically sorted.
    pub ineqs: Vec<Ineq>,
}

impl FutoshikiBoard {
    pub fn empty(size: u8) -> Self {
        assert!(size == 4 || size == 5, "supported sizes are 4 and 5");
        FutoshikiBoard { size, cells: vec![0; size as usize * size as usize], ineqs: Vec::new() }
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

    /// Latin row/column uniqueness among filled cells, plus every
    /// inequality whose endpoints are both filled.
    pub fn is_consistent(&self) -> bool {
        let n = self.size as usize;
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
        for ineq in &self.ineqs {
            let va = self.get(ineq.a.0 as usize, ineq.a.1 as usize);
            let vb = self.get(ineq.b.0 as usize, ineq.b.1 as usize);
            if va != 0 && vb != 0 {
                let ok = if ineq.less { va < vb } else { va > vb };
                if !ok {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_solved(&self) -> bool {
        self.is_complete() && self.is_consistent()
    }

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

    /// Values that keep the board consistent at cell `(r, c)`.
    pub fn candidates(&self, r: usize, c: usize) -> Vec<u8> {
        let n = self.size as usize;
        let mut blocked = vec![false; n + 1];
        for i in 0..n {
            blocked[self.get(r, i) as usize] = true;
            blocked[self.get(i, c) as usize] = true;
        }
        blocked[0] = true;
        let mut out = Vec::new();
        'vals: for v in 1..=self.size {
            if blocked[v as usize] {
                continue;
            }
            for ineq in &self.ineqs {
                let (here, other, less_here) = if ineq.a == (r as u8, c as u8) {
                    (v, self.get(ineq.b.0 as usize, ineq.b.1 as usize), ineq.less)
                } else if ineq.b == (r as u8, c as u8) {
                    (v, self.get(ineq.a.0 as usize, ineq.a.1 as usize), !ineq.less)
                } else {
                    continue;
                };
                if other != 0 {
                    let ok = if less_here { here < other } else { here > other };
                    if !ok {
                        continue 'vals;
                    }
                }
            }
            out.push(v);
        }
        out
    }

    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_bytes(b"futoshiki");
        h.write_bytes(&[self.size]);
        h.write_bytes(&self.cells);
        for ineq in &self.ineqs {
            h.write_bytes(&[ineq.a.0, ineq.a.1, ineq.b.0, ineq.b.1, ineq.less as u8]);
        }
        h.finish()
    }

    /// Grid lines first, then one `rA cA < rB cB` line per inequality.
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
        for ineq in &self.ineqs {
            let op = if ineq.less { "<" } else { ">" };
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                ineq.a.0, ineq.a.1, op, ineq.b.0, ineq.b.1
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        // Grid rows have n tokens without comparison operators; inequality
        // lines contain < or >.
        let grid_rows: Vec<&str> = lines
            .iter()
            .take_while(|l| !l.contains('<') && !l.contains('>'))
            .copied()
            .collect();
        let n = grid_rows.len();
        if n != 4 && n != 5 {
            return Err(ParseError::at(1, 1, format!("unsupported grid size {n} (expected 4 or 5)")));
        }
        let mut board = FutoshikiBoard::empty(n as u8);
        for (r, line) in grid_rows.iter().enumerate() {
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
        for (i, line) in lines.iter().enumerate().skip(n) {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 5 {
                return Err(ParseError::at(i + 1, 1, "inequality lines need 5 tokens".to_string()));
            }
            let parse_coord = |tok: &str, col: usize| -> Result<u8, ParseError> {
                tok.parse::<u8>()
                    .map_err(|_| ParseError::at(i + 1, col, format!("bad coordinate {tok:?}")))
            };
            let a = (parse_coord(tokens[0], 1)?, parse_coord(tokens[1], 2)?);
            let less = match tokens[2] {
                "<" => true,
                ">" => false,
                other => {
                    return Err(ParseError::at(i + 1, 3, format!("bad comparator {other:?}")));
                }
            };
            let b = (parse_coord(tokens[3], 4)?, parse_coord(tokens[4], 5)?);
            let adjacent = (a.0 == b.0 && a.0 < n as u8 && a.1.abs_diff(b.1) == 1)
                || (a.1 == b.1 && a.1 < n as u8 && a.0.abs_diff(b.0) == 1);
            if !adjacent || a.0 >= n as u8 || a.1 >= n as u8 || b.0 >= n as u8 || b.1 >= n as u8 {
                return Err(ParseError::at(i + 1, 1, format!("inequality endpoints {a:?} {b:?} not adjacent in-bounds cells")));
            }
            board.ineqs.push(Ineq { a, b, less });
        }
        board.ineqs.sort();
        Ok(board)
    }
}

/// Count completions up to `cap`, returning the first solution.
pub fn solve_counting(board: &FutoshikiBoard, cap: usize) -> (Option<FutoshikiBoard>, usize) {
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
    board: &mut FutoshikiBoard,
    cap: usize,
    solution: &mut Option<FutoshikiBoard>,
    count: &mut usize,
) {
    if *count >= cap {
        return;
    }
    let n = board.size as usize;
    let mut best: Option<(usize, usize, Vec<u8>)> = None;
    for r in 0..n {
        for c in 0..n {
            if board.get(r, c) != 0 {
                continue;
            }
            let cands = board.candidates(r, c);
            if cands.is_empty() {
                return;
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

/// Random complete Latin square by backtracking.
fn generate_latin(size: u8, rng: &mut ChaCha8Rng) -> FutoshikiBoard {
    let mut board = FutoshikiBoard::empty(size);
    let filled = fill_rec(&mut board, 0, rng);
    debug_assert!(filled);
    board
}

fn fill_rec(board: &mut FutoshikiBoard, idx: usize, rng: &mut ChaCha8Rng) -> bool {
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

/// Generate a unique-solution instance with `blanks` blanks.
///
/// Samples inequalities from the hidden solution (each adjacent pair kept
/// with probability 1/3), then removes cells while uniqueness holds.
pub fn generate_puzzle(
    size: u8,
    blanks: usize,
    rng: &mut ChaCha8Rng,
    retry_budget: usize,
) -> Option<FutoshikiBoard> {
    let n = size as usize;
    for _ in 0..retry_budget {
        let solution = generate_latin(size, rng);
        let mut ineqs = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let here = solution.get(r, c);
                if c + 1 < n && rng.gen_range(0..3) == 0 {
                    let right = solution.get(r, c + 1);
                    ineqs.push(Ineq {
                        a: (r as u8, c as u8),
                        b: (r as u8, c as u8 + 1),
                        less: here < right,
                    });
                }
                if r + 1 < n && rng.gen_range(0..3) == 0 {
                    let down = solution.get(r + 1, c);
                    ineqs.push(Ineq {
                        a: (r as u8, c as u8),
                        b: (r as u8 + 1, c as u8),
                        less: here < down,
                    });
                }
            }
        }
        ineqs.sort();
        let mut board = solution.clone();
        board.ineqs = ineqs;

        let mut order: Vec<usize> = (0..n * n).collect();
        order.shuffle(rng);
        let mut removed = 0;
        for idx in order {
            if removed == blanks {
                break;
            }
            let prev = board.cells[idx];
            board.cells[idx] = 0;
            let (_, count) = solve_counting(&board, 2);
            if count == 1 {
                removed += 1;
            } else {
                board.cells[idx] = prev;
            }
        }
        if removed == blanks {
            return Some(board);
        }
    }
    None
}

/// One random cell changes to a different value; inequalities are fixed
/// instance structure and never perturbed.
pub fn perturb(board: &FutoshikiBoard, rng: &mut ChaCha8Rng) -> FutoshikiBoard {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn generated_instances_are_unique_and_round_trip() {
        for seed in 0..10 {
            let mut rng = rng_from_seed(seed);
            let board = generate_puzzle(4, 4, &mut rng, 100).unwrap();
            assert_eq!(board.blanks(), 4);
            let (_, count) = solve_counting(&board, 2);
            assert_eq!(count, 1);
            let text = board.serialize();
            assert_eq!(FutoshikiBoard::parse(&text).unwrap(), board);
        }
    }

    #[test]
    fn inequalities_constrain_candidates() {
        let mut board = FutoshikiBoard::empty(4);
        board.ineqs.push(Ineq { a: (0, 0), b: (0, 1), less: true });
        let with_right = board.apply_fill(0, 1, 2).unwrap();
        // (0,0) < 2 rules out 2, 3, 4 (and 2 by the row constraint anyway).
        assert_eq!(with_right.candidates(0, 0), vec![1]);
        let bad = with_right.apply_fill(0, 0, 3).unwrap();
        assert!(!bad.is_consistent());
        let good = with_right.apply_fill(0, 0, 1).unwrap();
        assert!(good.is_consistent());
    }

    #[test]
    fn solver_respects_inequalities() {
        // A 4x4 instance whose unique solution is forced by inequalities.
        let mut rng = rng_from_seed(99);
        let board = generate_puzzle(5, 8, &mut rng, 100).unwrap();
        let (solution, count) = solve_counting(&board, 2);
        assert_eq!(count, 1);
        let solution = solution.unwrap();
        assert!(solution.is_solved());
        for ineq in &board.ineqs {
            let va = solution.get(ineq.a.0 as usize, ineq.a.1 as usize);
            let vb = solution.get(ineq.b.0 as usize, ineq.b.1 as usize);
            assert!(if ineq.less { va < vb } else { va > vb });
        }
    }

    #[test]
    fn parse_rejects_malformed_inequalities() {
        let text = "1 2 3 4\n3 4 1 2\n2 1 4 3\n4 3 2 1\n0 0 < 3 3\n";
        let err = FutoshikiBoard::parse(text).unwrap_err();
        assert!(err.to_string().contains("not adjacent"));
    }
}
