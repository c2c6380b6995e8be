//! 4x4 Mini-Sudoku generation with a uniqueness guarantee.
//!
//! A full grid is built by randomized backtracking, then clues are removed
//! one at a time, keeping a removal only while the puzzle still has exactly
//! one solution. The target clue count is drawn from [6, 10].

use super::Task;
use crate::verify::Grid;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

const QUESTION_TEMPLATE: &str = include_str!("../../templates/tasks/mini_sudoku_question.txt");

fn placement_ok(grid: &Grid, row: usize, col: usize, val: u8) -> bool {
    for i in 0..4 {
        if grid.cells[row][i] == val || grid.cells[i][col] == val {
            return false;
        }
    }
    let (br, bc) = (row / 2 * 2, col / 2 * 2);
    for r in br..br + 2 {
        for c in bc..bc + 2 {
            if grid.cells[r][c] == val {
                return false;
            }
        }
    }
    true
}

fn fill_grid(grid: &mut Grid, cell: usize, rng: &mut ChaCha8Rng) -> bool {
    if cell == 16 {
        return true;
    }
    let (row, col) = (cell / 4, cell % 4);
    let mut digits = [1u8, 2, 3, 4];
    digits.shuffle(rng);
    for val in digits {
        if placement_ok(grid, row, col, val) {
            grid.cells[row][col] = val;
            if fill_grid(grid, cell + 1, rng) {
                return true;
            }
            grid.cells[row][col] = 0;
        }
    }
    false
}

/// Count completions of the puzzle, stopping at `limit`.
pub fn count_solutions(grid: &Grid, limit: usize) -> usize {
    fn go(grid: &mut Grid, limit: usize, count: &mut usize) {
        if *count >= limit {
            return;
        }
        let blank = (0..16).find(|&i| grid.cells[i / 4][i % 4] == 0);
        let Some(cell) = blank else {
            *count += 1;
            return;
        };
        let (row, col) = (cell / 4, cell % 4);
        for val in 1..=4 {
            if placement_ok(grid, row, col, val) {
                grid.cells[row][col] = val;
                go(grid, limit, count);
                grid.cells[row][col] = 0;
            }
        }
    }
    let mut work = *grid;
    let mut count = 0;
    go(&mut work, limit, &mut count);
    count
}

/// Generate a Mini-Sudoku task. Deterministic in the seed; the ground truth
/// is the unique completion of the emitted puzzle.
pub fn gen_mini_sudoku(seed: u64) -> Task {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solution = Grid::new([[0; 4]; 4]);
    assert!(fill_grid(&mut solution, 0, &mut rng), "4x4 grid fill cannot fail");

    let target_clues: usize = rng.gen_range(6..=10);
    let mut puzzle = solution;
    let mut positions: Vec<usize> = (0..16).collect();
    positions.shuffle(&mut rng);
    let mut clues = 16;
    for pos in positions {
        if clues <= target_clues {
            break;
        }
        let (r, c) = (pos / 4, pos % 4);
        let saved = puzzle.cells[r][c];
        puzzle.cells[r][c] = 0;
        if count_solutions(&puzzle, 2) == 1 {
            clues -= 1;
        } else {
            puzzle.cells[r][c] = saved;
        }
    }

    let question = QUESTION_TEMPLATE.replace("{grid}", &puzzle.to_string()).trim_end().to_string();
    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), serde_json::json!("mini-sudoku"));
    meta.insert("seed".to_string(), serde_json::json!(seed));
    meta.insert("clues".to_string(), serde_json::json!(clues));
    meta.insert("puzzle".to_string(), serde_json::json!(puzzle.to_string()));
    Task {
        id: format!("mini-sudoku-{seed}"),
        question,
        ground_truth: solution.to_string(),
        kind: crate::verify::AnswerKind::SudokuGrid,
        meta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::verify_sudoku;

    #[test]
    fn generated_puzzle_is_verifier_consistent() {
        for seed in 0..20 {
            let task = gen_mini_sudoku(seed);
            let puzzle = Grid::parse(task.meta["puzzle"].as_str().unwrap()).unwrap();
            let solution = Grid::parse(&task.ground_truth).unwrap();
            assert!(verify_sudoku(&puzzle, &solution), "seed {seed}");
        }
    }

    #[test]
    fn generated_puzzle_has_unique_solution() {
        for seed in 0..20 {
            let task = gen_mini_sudoku(seed);
            let puzzle = Grid::parse(task.meta["puzzle"].as_str().unwrap()).unwrap();
            assert_eq!(count_solutions(&puzzle, 3), 1, "seed {seed}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_mini_sudoku(123);
        let b = gen_mini_sudoku(123);
        assert_eq!(a.question, b.question);
        assert_eq!(a.ground_truth, b.ground_truth);
    }

    #[test]
    fn clue_count_in_declared_range() {
        for seed in 0..20 {
            let task = gen_mini_sudoku(seed);
            let clues = task.meta["clues"].as_u64().unwrap();
            assert!((6..=10).contains(&clues), "seed {seed}: {clues} clues");
        }
    }

    #[test]
    fn question_renders_blanks() {
        let task = gen_mini_sudoku(7);
        assert!(task.question.contains('_'));
        assert!(task.question.contains("2x2 box"));
    }
}
