//! Sokoban levels, push rules, and exact breadth-first search.
//!
//!`SokobanLevel` doubles as the level description and the game state (boxes
//! and player move, walls and goals are fixed). The solver is a plain BFS
//! over `(player, boxes)` states counting moves, which at these sizes also
//! serves as the deadlock detector: a state is dead exactly when the goal
//! configuration is unreachable from it.
//!
//! Text format (community conventions): `#` wall, `-` floor, `@` player,
//! `$` box, `.` goal, `*` box on goal, `+` player on goal.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::Fnv1a;

use super::{IllegalAction, ParseError};

/// Move directions, also the action indices of the environment.
pub const DIRS: [(i32, i32); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
pub const DIR_NAMES: [&str; 4] = ["up", "down", "left", "right"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SokobanLevel {
    pub width: u8,
    pub height: u8,
    /// Row-major wall mask.
    pub walls: Vec<bool>,
    /// Sorted goal cell indices.
    pub goals: Vec<u16>,
    /// Sorted box cell indices.
    pub boxes: Vec<u16>,
    pub player: u16,
}

impl SokobanLevel {
    pub fn cell(&self, r: usize, c: usize) -> u16 {
        (r * self.width as usize + c) as u16
    }

    fn offset(&self, cell: u16, dir: usize) -> Option<u16> {
        let (dr, dc) = DIRS[dir];
        let r = cell as i32 / self.width as i32 + dr;
        let c = cell as i32 % self.width as i32 + dc;
        if r < 0 || c < 0 || r >= self.height as i32 || c >= self.width as i32 {
            return None;
        }
        Some((r * self.width as i32 + c) as u16)
    }

    pub fn is_wall(&self, cell: u16) -> bool {
        self.walls[cell as usize]
    }

    pub fn has_box(&self, cell: u16) -> bool {
        self.boxes.binary_search(&cell).is_ok()
    }

    pub fn is_goal(&self, cell: u16) -> bool {
        self.goals.binary_search(&cell).is_ok()
    }

    pub fn is_solved(&self) -> bool {
        self.boxes.iter().all(|&b| self.is_goal(b))
    }

    /// A move is legal when the destination is not a wall and any pushed box
    /// lands on a free non-wall cell.
    pub fn move_legal(&self, dir: usize) -> bool {
        let Some(dest) = self.offset(self.player, dir) else { return false };
        if self.is_wall(dest) {
            return false;
        }
        if self.has_box(dest) {
            let Some(beyond) = self.offset(dest, dir) else { return false };
            if self.is_wall(beyond) || self.has_box(beyond) {
                return false;
            }
        }
        true
    }

    pub fn apply_move(&self, dir: usize) -> Result<Self, IllegalAction> {
        if dir >= 4 {
            return Err(IllegalAction(format!("direction {dir} out of range")));
        }
        if !self.move_legal(dir) {
            return Err(IllegalAction(format!(
                "move {} blocked for player at {}",
                DIR_NAMES[dir], self.player
            )));
        }
        let dest = self.offset(self.player, dir).unwrap();
        let mut next = self.clone();
        if next.has_box(dest) {
            let beyond = next.offset(dest, dir).unwrap();
            let idx = next.boxes.binary_search(&dest).unwrap();
            next.boxes.remove(idx);
            let at = next.boxes.binary_search(&beyond).unwrap_err();
            next.boxes.insert(at, beyond);
        }
        next.player = dest;
        Ok(next)
    }

    /// Packed `(player, boxes)` search key. Supports up to 4 boxes on grids
    /// of at most 4096 cells.
    pub fn state_key(&self) -> u64 {
        debug_assert!(self.boxes.len() <= 4);
        let mut key = self.player as u64 + 1;
        for &b in &self.boxes {
            key = (key << 12) | (b as u64 + 1);
        }
        key
    }

    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_bytes(b"sokoban");
        h.write_bytes(&[self.width, self.height]);
        for (i, &w) in self.walls.iter().enumerate() {
            if w {
                h.write_u32(i as u32);
            }
        }
        for &g in &self.goals {
            h.write_u32(g as u32 + 10_000);
        }
        for &b in &self.boxes {
            h.write_u32(b as u32 + 20_000);
        }
        h.write_u32(self.player as u32 + 30_000);
        h.finish()
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for r in 0..self.height as usize {
            for c in 0..self.width as usize {
                let cell = self.cell(r, c);
                let ch = if self.is_wall(cell) {
                    '#'
                } else if cell == self.player {
                    if self.is_goal(cell) { '+' } else { '@' }
                } else if self.has_box(cell) {
                    if self.is_goal(cell) { '*' } else { '$' }
                } else if self.is_goal(cell) {
                    '.'
                } else {
                    '-'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let height = rows.len();
        if height < 3 {
            return Err(ParseError::at(1, 1, "level needs at least 3 rows".to_string()));
        }
        let width = rows[0].chars().count();
        let mut walls = vec![false; width * height];
        let mut goals = Vec::new();
        let mut boxes = Vec::new();
        let mut player = None;
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(ParseError::at(r + 1, 1, format!("ragged row: expected width {width}")));
            }
            for (c, ch) in row.chars().enumerate() {
                let cell = (r * width + c) as u16;
                match ch {
                    '#' => walls[cell as usize] = true,
                    '-' | ' ' => {}
                    '@' => player = Some(cell),
                    '+' => {
                        player = Some(cell);
                        goals.push(cell);
                    }
                    '$' => boxes.push(cell),
                    '*' => {
                        boxes.push(cell);
                        goals.push(cell);
                    }
                    '.' => goals.push(cell),
                    other => {
                        return Err(ParseError::at(r + 1, c + 1, format!("bad cell {other:?}")));
                    }
                }
            }
        }
        let player = player.ok_or_else(|| ParseError::at(1, 1, "missing player".to_string()))?;
        goals.sort_unstable();
        boxes.sort_unstable();
        if boxes.len() != goals.len() {
            return Err(ParseError::at(1, 1, format!("{} boxes vs {} goals", boxes.len(), goals.len())));
        }
        if boxes.len() > 4 {
            return Err(ParseError::at(1, 1, "at most 4 boxes supported".to_string()));
        }
        Ok(SokobanLevel { width: width as u8, height: height as u8, walls, goals, boxes, player })
    }
}

/// Result of an exhaustive search from one state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveResult {
    /// Minimal move sequence (direction indices) reaching the goal.
    Solved(Vec<usize>),
    /// The goal configuration is unreachable: a deadlock.
    Unsolvable,
}

impl SolveResult {
    pub fn min_steps(&self) -> Option<usize> {
        match self {
            SolveResult::Solved(path) => Some(path.len()),
            SolveResult::Unsolvable => None,
        }
    }
}

/// BFS over `(player, boxes)` states counting moves; returns a minimal
/// solving move sequence or `Unsolvable` after exhausting the reachable
/// graph.
pub fn solve_bfs(level: &SokobanLevel) -> SolveResult {
    if level.is_solved() {
        return SolveResult::Solved(Vec::new());
    }
    let mut parent: HashMap<u64, (u64, usize)> = HashMap::new();
    let mut queue = VecDeque::new();
    let start_key = level.state_key();
    parent.insert(start_key, (start_key, usize::MAX));
    queue.push_back(level.clone());
    while let Some(state) = queue.pop_front() {
        let key = state.state_key();
        for dir in 0..4 {
            if !state.move_legal(dir) {
                continue;
            }
            let next = state.apply_move(dir).unwrap();
            let next_key = next.state_key();
            if parent.contains_key(&next_key) {
                continue;
            }
            parent.insert(next_key, (key, dir));
            if next.is_solved() {
                // Reconstruct the move sequence.
                let mut path = vec![dir];
                let mut cursor = key;
                while cursor != start_key {
                    let (prev, d) = parent[&cursor];
                    path.push(d);
                    cursor = prev;
                }
                path.reverse();
                return SolveResult::Solved(path);
            }
            queue.push_back(next);
        }
    }
    SolveResult::Unsolvable
}

/// Exact distance-to-goal for every state reachable from `level`.
///
/// Forward BFS enumerates the reachable `(player, boxes)` graph, then a
/// reverse BFS from all solved states labels each with its minimal move
/// count. States missing from the returned map are deadlocked.
pub fn distance_map(level: &SokobanLevel) -> HashMap<u64, u32> {
    let mut states: HashMap<u64, SokobanLevel> = HashMap::new();
    let mut reverse: HashMap<u64, Vec<u64>> = HashMap::new();
    let mut queue = VecDeque::new();
    states.insert(level.state_key(), level.clone());
    queue.push_back(level.clone());
    while let Some(state) = queue.pop_front() {
        if state.is_solved() {
            continue; // terminal: no outgoing moves
        }
        let key = state.state_key();
        for dir in 0..4 {
            if !state.move_legal(dir) {
                continue;
            }
            let next = state.apply_move(dir).unwrap();
            let next_key = next.state_key();
            reverse.entry(next_key).or_default().push(key);
            if let std::collections::hash_map::Entry::Vacant(slot) = states.entry(next_key) {
                slot.insert(next.clone());
                queue.push_back(next);
            }
        }
    }
    let mut dist: HashMap<u64, u32> = HashMap::new();
    let mut frontier = VecDeque::new();
    for (key, state) in &states {
        if state.is_solved() {
            dist.insert(*key, 0);
            frontier.push_back(*key);
        }
    }
    while let Some(key) = frontier.pop_front() {
        let d = dist[&key];
        if let Some(preds) = reverse.get(&key) {
            for &p in preds {
                if let std::collections::hash_map::Entry::Vacant(slot) = dist.entry(p) {
                    slot.insert(d + 1);
                    frontier.push_back(p);
                }
            }
        }
    }
    dist
}

/// BFS capped at `max_depth` moves: `Some(path)` when the goal is within
/// reach, `None` when the minimum exceeds the cap (or the level is
/// unsolvable). Keeps level generation cheap on large boards.
pub fn solve_bfs_bounded(level: &SokobanLevel, max_depth: usize) -> Option<Vec<usize>> {
    if level.is_solved() {
        return Some(Vec::new());
    }
    let mut parent: HashMap<u64, (u64, usize)> = HashMap::new();
    let mut queue = VecDeque::new();
    let start_key = level.state_key();
    parent.insert(start_key, (start_key, usize::MAX));
    queue.push_back((level.clone(), 0usize));
    while let Some((state, depth)) = queue.pop_front() {
        if depth >= max_depth {
            continue;
        }
        let key = state.state_key();
        for dir in 0..4 {
            if !state.move_legal(dir) {
                continue;
            }
            let next = state.apply_move(dir).unwrap();
            let next_key = next.state_key();
            if parent.contains_key(&next_key) {
                continue;
            }
            parent.insert(next_key, (key, dir));
            if next.is_solved() {
                let mut path = vec![dir];
                let mut cursor = key;
                while cursor != start_key {
                    let (prev, d) = parent[&cursor];
                    path.push(d);
                    cursor = prev;
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back((next, depth + 1));
        }
    }
    None
}

/// Generate a level whose BFS-minimal move count lies in `steps`.
///
/// Boxes are placed near goals so that short-solution levels are reachable
/// by rejection sampling at realistic rates; the bounded BFS makes a
/// rejected layout cheap.
pub fn generate_level(
    width: u8,
    height: u8,
    n_boxes: usize,
    steps: (usize, usize),
    rng: &mut ChaCha8Rng,
    retry_budget: usize,
) -> Option<SokobanLevel> {
    let (w, h) = (width as usize, height as usize);
    'attempt: for _ in 0..retry_budget {
        let mut walls = vec![false; w * h];
        for r in 0..h {
            for c in 0..w {
                // Border cells must not consume an rng draw: merging the
                // branches would shift every downstream sample.
                #[allow(clippy::if_same_then_else)]
                if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                    walls[r * w + c] = true;
                } else if rng.gen_range(0..5) == 0 {
                    walls[r * w + c] = true;
                }
            }
        }
        let floor: Vec<u16> = (0..(w * h) as u16).filter(|&i| !walls[i as usize]).collect();
        if floor.len() < 2 * n_boxes + 1 {
            continue;
        }
        let mut used: Vec<u16> = Vec::new();
        let mut goals: Vec<u16> = Vec::new();
        for _ in 0..n_boxes {
            let g = floor[rng.gen_range(0..floor.len())];
            if used.contains(&g) {
                continue 'attempt;
            }
            used.push(g);
            goals.push(g);
        }
        // Boxes within a couple of cells of some goal.
        let mut boxes: Vec<u16> = Vec::new();
        for &g in &goals {
            let (gr, gc) = (g as i32 / w as i32, g as i32 % w as i32);
            let mut placed = false;
            for _ in 0..10 {
                let dr = rng.gen_range(-2i32..=2);
                let dc = rng.gen_range(-2i32..=2);
                let (r, c) = (gr + dr, gc + dc);
                if r < 1 || c < 1 || r >= h as i32 - 1 || c >= w as i32 - 1 {
                    continue;
                }
                let cell = (r * w as i32 + c) as u16;
                if walls[cell as usize] || used.contains(&cell) {
                    continue;
                }
                used.push(cell);
                boxes.push(cell);
                placed = true;
                break;
            }
            if !placed {
                continue 'attempt;
            }
        }
        // Player near the first box.
        let b0 = boxes[0];
        let (br, bc) = (b0 as i32 / w as i32, b0 as i32 % w as i32);
        let mut player = None;
        for _ in 0..10 {
            let dr = rng.gen_range(-2i32..=2);
            let dc = rng.gen_range(-2i32..=2);
            let (r, c) = (br + dr, bc + dc);
            if r < 1 || c < 1 || r >= h as i32 - 1 || c >= w as i32 - 1 {
                continue;
            }
            let cell = (r * w as i32 + c) as u16;
            if walls[cell as usize] || used.contains(&cell) {
                continue;
            }
            player = Some(cell);
            break;
        }
        let Some(player) = player else { continue 'attempt };
        goals.sort_unstable();
        boxes.sort_unstable();
        let level = SokobanLevel { width, height, walls, goals, boxes, player };
        if level.is_solved() {
            continue;
        }
        if let Some(path) = solve_bfs_bounded(&level, steps.1) {
            if path.len() >= steps.0 && path.len() <= steps.1 {
                return Some(level);
            }
        }
    }
    None
}

/// Move the player to a different random floor cell (not onto a box). Boxes
/// and structure stay put, so the result is always a well-formed state.
pub fn perturb(level: &SokobanLevel, rng: &mut ChaCha8Rng) -> SokobanLevel {
    let candidates: Vec<u16> = (0..(level.width as usize * level.height as usize) as u16)
        .filter(|&c| !level.is_wall(c) && !level.has_box(c) && c != level.player)
        .collect();
    let mut next = level.clone();
    if candidates.is_empty() {
        // Degenerate layout; fall back to swapping a box off its cell.
        return next;
    }
    next.player = candidates[rng.gen_range(0..candidates.len())];
    next
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn push_rule_moves_player_and_box() {
        let level = SokobanLevel::parse("#####\n#@$.#\n#####\n").unwrap();
        assert!(level.move_legal(3));
        let next = level.apply_move(3).unwrap();
        assert_eq!(next.player, level.cell(1, 2));
        assert_eq!(next.boxes, vec![level.cell(1, 3)]);
        assert!(next.is_solved());
    }

    #[test]
    fn blocked_moves_are_illegal() {
        let level = SokobanLevel::parse("#####\n#@$##\n#.--#\n#####\n").unwrap();
        // Pushing right shoves the box into a wall.
        assert!(!level.move_legal(3));
        assert!(level.apply_move(3).is_err());
        // Moving up is a wall bump.
        assert!(!level.move_legal(0));
        // Down is free floor.
        assert!(level.move_legal(1));
    }

    #[test]
    fn single_push_level_has_min_steps_one() {
        let level = SokobanLevel::parse("#####\n#@$.#\n#####\n").unwrap();
        match solve_bfs(&level) {
            SolveResult::Solved(path) => assert_eq!(path.len(), 1),
            SolveResult::Unsolvable => panic!("level is solvable"),
        }
    }

    #[test]
    fn box_in_a_corner_is_unsolvable() {
        let level = SokobanLevel::parse("#####\n#$--#\n#--.#\n#--@#\n#####\n").unwrap();
        assert_eq!(solve_bfs(&level), SolveResult::Unsolvable);
    }

    #[test]
    fn bfs_length_is_minimal_over_all_enumerated_solving_paths() {
        let level = SokobanLevel::parse("######\n#-@--#\n#-$--#\n#-.--#\n######\n").unwrap();
        let bfs_len = solve_bfs(&level).min_steps().unwrap();
        // Exhaustive DFS over all move sequences up to bfs_len: none shorter
        // may solve, and at least one of exactly bfs_len must.
        fn dfs(state: &SokobanLevel, depth: usize, best: &mut Option<usize>, used: usize) {
            if state.is_solved() {
                *best = Some(match best {
                    None => used,
                    Some(b) => (*b).min(used),
                });
                return;
            }
            if used == depth {
                return;
            }
            for dir in 0..4 {
                if state.move_legal(dir) {
                    dfs(&state.apply_move(dir).unwrap(), depth, best, used + 1);
                }
            }
        }
        let mut best = None;
        dfs(&level, bfs_len, &mut best, 0);
        assert_eq!(best, Some(bfs_len));
    }

    #[test]
    fn distance_map_matches_single_source_bfs() {
        let mut rng = rng_from_seed(5);
        let level = generate_level(6, 6, 1, (2, 6), &mut rng, 10_000).unwrap();
        let dist = distance_map(&level);
        let n0 = dist[&level.state_key()] as usize;
        assert_eq!(n0, solve_bfs(&level).min_steps().unwrap());
        // Walking the optimal path decrements the distance by one per move.
        let mut state = level.clone();
        if let SolveResult::Solved(path) = solve_bfs(&level) {
            for (i, dir) in path.iter().enumerate() {
                state = state.apply_move(*dir).unwrap();
                assert_eq!(dist[&state.state_key()] as usize, n0 - i - 1);
            }
            assert!(state.is_solved());
        }
    }

    #[test]
    fn solvability_is_preserved_along_the_optimal_path() {
        for seed in 0..10 {
            let mut rng = rng_from_seed(seed);
            let level = generate_level(6, 6, 1, (2, 5), &mut rng, 10_000).unwrap();
            let mut state = level.clone();
            if let SolveResult::Solved(path) = solve_bfs(&level) {
                for dir in path {
                    state = state.apply_move(dir).unwrap();
                    assert!(matches!(solve_bfs(&state), SolveResult::Solved(_)) || state.is_solved());
                }
            } else {
                panic!("generated level must be solvable");
            }
        }
    }

    #[test]
    fn serialize_parse_round_trip() {
        let mut rng = rng_from_seed(12);
        let level = generate_level(7, 6, 2, (4, 12), &mut rng, 20_000).unwrap();
        let text = level.serialize();
        assert_eq!(SokobanLevel::parse(&text).unwrap(), level);
    }
}
