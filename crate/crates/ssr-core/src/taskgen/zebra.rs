//! Zebra-puzzle synthesis with a uniqueness guarantee.
//!
//! A hidden bijective assignment of attribute values to line positions is
//! sampled, true clues are emitted until a propagation-plus-backtracking
//! solver proves the assignment is the unique model, and the clue set is
//! then greedily pruned. The question asks for one attribute of one person;
//! the clue set and solution are stored in task metadata so an independent
//! checker can re-derive everything.

use super::{Task, TaskgenError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const QUESTION_TEMPLATE: &str = include_str!("../../templates/tasks/zebra_question.txt");

/// Category names and value pools; supports up to 5 entities x 5 attributes.
pub const CATEGORIES: [(&str, [&str; 5]); 5] = [
    ("name", ["Alice", "Bob", "Carol", "Dave", "Erin"]),
    ("color", ["red", "blue", "green", "yellow", "white"]),
    ("drink", ["tea", "coffee", "milk", "juice", "water"]),
    ("pet", ["dog", "cat", "bird", "fish", "horse"]),
    ("sport", ["chess", "tennis", "golf", "soccer", "hockey"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZebraSpec {
    pub num_entities: usize,
    pub num_attributes: usize,
    pub seed: u64,
}

impl Default for ZebraSpec {
    fn default() -> Self {
        ZebraSpec { num_entities: 3, num_attributes: 3, seed: 0 }
    }
}

/// Clue over (category, value) atoms. Positions are 0-based internally and
/// rendered 1-based. `LeftNeighbor` means pos(a) + 1 == pos(b).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Clue {
    SameEntity { cat_a: usize, val_a: usize, cat_b: usize, val_b: usize },
    DirectPosition { cat: usize, val: usize, pos: usize },
    LeftNeighbor { cat_a: usize, val_a: usize, cat_b: usize, val_b: usize },
    NotSameEntity { cat_a: usize, val_a: usize, cat_b: usize, val_b: usize },
    NotAtPosition { cat: usize, val: usize, pos: usize },
}

/// `assignment[cat][val]` = 0-based position of that value's owner.
pub type Assignment = Vec<Vec<usize>>;

/// Direct semantics of a clue against a full assignment. This is the
/// definition both the generator's solver and any external checker share.
pub fn clue_holds(clue: &Clue, assignment: &Assignment) -> bool {
    match *clue {
        Clue::SameEntity { cat_a, val_a, cat_b, val_b } => {
            assignment[cat_a][val_a] == assignment[cat_b][val_b]
        }
        Clue::DirectPosition { cat, val, pos } => assignment[cat][val] == pos,
        Clue::LeftNeighbor { cat_a, val_a, cat_b, val_b } => {
            assignment[cat_a][val_a] + 1 == assignment[cat_b][val_b]
        }
        Clue::NotSameEntity { cat_a, val_a, cat_b, val_b } => {
            assignment[cat_a][val_a] != assignment[cat_b][val_b]
        }
        Clue::NotAtPosition { cat, val, pos } => assignment[cat][val] != pos,
    }
}

// ---------------------------------------------------------------------------
// Propagation + backtracking solver
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct SolverState {
    /// masks[cat][val]: bitmask of still-possible positions.
    masks: Vec<Vec<u32>>,
    n: usize,
}

impl SolverState {
    fn fresh(n: usize, m: usize) -> Self {
        let full = (1u32 << n) - 1;
        SolverState { masks: vec![vec![full; n]; m], n }
    }

    /// Run clue filtering and per-category singles to a fixpoint.
    /// Returns false on contradiction (some value has no position left).
    fn propagate(&mut self, clues: &[Clue]) -> bool {
        loop {
            let before = self.masks.clone();
            for clue in clues {
                match *clue {
                    Clue::DirectPosition { cat, val, pos } => {
                        self.masks[cat][val] &= 1 << pos;
                    }
                    Clue::NotAtPosition { cat, val, pos } => {
                        self.masks[cat][val] &= !(1 << pos);
                    }
                    Clue::SameEntity { cat_a, val_a, cat_b, val_b } => {
                        let joint = self.masks[cat_a][val_a] & self.masks[cat_b][val_b];
                        self.masks[cat_a][val_a] = joint;
                        self.masks[cat_b][val_b] = joint;
                    }
                    Clue::NotSameEntity { cat_a, val_a, cat_b, val_b } => {
                        let a = self.masks[cat_a][val_a];
                        let b = self.masks[cat_b][val_b];
                        if a.count_ones() == 1 {
                            self.masks[cat_b][val_b] &= !a;
                        }
                        if b.count_ones() == 1 {
                            self.masks[cat_a][val_a] &= !b;
                        }
                    }
                    Clue::LeftNeighbor { cat_a, val_a, cat_b, val_b } => {
                        let full = (1u32 << self.n) - 1;
                        let b = self.masks[cat_b][val_b];
                        self.masks[cat_a][val_a] &= b >> 1;
                        let a = self.masks[cat_a][val_a];
                        self.masks[cat_b][val_b] &= (a << 1) & full;
                    }
                }
            }
            for cat in 0..self.masks.len() {
                // singleton elimination within the category
                for val in 0..self.n {
                    let mask = self.masks[cat][val];
                    if mask == 0 {
                        return false;
                    }
                    if mask.count_ones() == 1 {
                        for other in 0..self.n {
                            if other != val {
                                self.masks[cat][other] &= !mask;
                            }
                        }
                    }
                }
                // hidden singles: a position only one value can still take
                for pos in 0..self.n {
                    let bit = 1u32 << pos;
                    let holders: Vec<usize> =
                        (0..self.n).filter(|&v| self.masks[cat][v] & bit != 0).collect();
                    if holders.is_empty() {
                        return false;
                    }
                    if holders.len() == 1 {
                        self.masks[cat][holders[0]] = bit;
                    }
                }
            }
            if self.masks == before {
                return true;
            }
        }
    }

    fn fully_assigned(&self) -> bool {
        self.masks.iter().flatten().all(|m| m.count_ones() == 1)
    }

    fn to_assignment(&self) -> Assignment {
        self.masks
            .iter()
            .map(|cat| cat.iter().map(|m| m.trailing_zeros() as usize).collect())
            .collect()
    }
}

/// Count models of the clue set, stopping at `limit`. Returns the models
/// found (up to the limit).
pub fn solve(clues: &[Clue], n: usize, m: usize, limit: usize) -> Vec<Assignment> {
    fn go(state: SolverState, clues: &[Clue], limit: usize, found: &mut Vec<Assignment>) {
        if found.len() >= limit {
            return;
        }
        let mut state = state;
        if !state.propagate(clues) {
            return;
        }
        if state.fully_assigned() {
            found.push(state.to_assignment());
            return;
        }
        // branch on the most constrained undecided value
        let mut pick: Option<(usize, usize, u32)> = None;
        for (cat, vals) in state.masks.iter().enumerate() {
            for (val, &mask) in vals.iter().enumerate() {
                if mask.count_ones() > 1
                    && pick.is_none_or(|(_, _, best)| mask.count_ones() < best.count_ones())
                {
                    pick = Some((cat, val, mask));
                }
            }
        }
        let (cat, val, mask) = pick.expect("undecided value exists");
        for pos in 0..state.n {
            if mask & (1 << pos) != 0 {
                let mut branch = state.clone();
                branch.masks[cat][val] = 1 << pos;
                go(branch, clues, limit, found);
                if found.len() >= limit {
                    return;
                }
            }
        }
    }
    let mut found = Vec::new();
    go(SolverState::fresh(n, m), clues, limit, &mut found);
    found
}

fn is_unique(clues: &[Clue], n: usize, m: usize) -> bool {
    solve(clues, n, m, 2).len() == 1
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

fn value_at(assignment: &Assignment, cat: usize, pos: usize) -> usize {
    assignment[cat].iter().position(|&p| p == pos).expect("bijective assignment")
}

fn sample_true_clue(rng: &mut ChaCha8Rng, hidden: &Assignment, n: usize, m: usize) -> Clue {
    loop {
        match rng.gen_range(0..5) {
            0 if m >= 2 => {
                let cat_a = rng.gen_range(0..m);
                let mut cat_b = rng.gen_range(0..m);
                while cat_b == cat_a {
                    cat_b = rng.gen_range(0..m);
                }
                let val_a = rng.gen_range(0..n);
                let val_b = value_at(hidden, cat_b, hidden[cat_a][val_a]);
                return Clue::SameEntity { cat_a, val_a, cat_b, val_b };
            }
            1 => {
                let cat = rng.gen_range(0..m);
                let val = rng.gen_range(0..n);
                return Clue::DirectPosition { cat, val, pos: hidden[cat][val] };
            }
            2 => {
                let pos = rng.gen_range(1..n);
                let cat_a = rng.gen_range(0..m);
                let cat_b = rng.gen_range(0..m);
                let val_a = value_at(hidden, cat_a, pos - 1);
                let val_b = value_at(hidden, cat_b, pos);
                return Clue::LeftNeighbor { cat_a, val_a, cat_b, val_b };
            }
            3 if m >= 2 => {
                let cat_a = rng.gen_range(0..m);
                let mut cat_b = rng.gen_range(0..m);
                while cat_b == cat_a {
                    cat_b = rng.gen_range(0..m);
                }
                let val_a = rng.gen_range(0..n);
                let mut val_b = rng.gen_range(0..n);
                while hidden[cat_b][val_b] == hidden[cat_a][val_a] {
                    val_b = rng.gen_range(0..n);
                }
                return Clue::NotSameEntity { cat_a, val_a, cat_b, val_b };
            }
            4 => {
                let cat = rng.gen_range(0..m);
                let val = rng.gen_range(0..n);
                let mut pos = rng.gen_range(0..n);
                while pos == hidden[cat][val] {
                    pos = rng.gen_range(0..n);
                }
                return Clue::NotAtPosition { cat, val, pos };
            }
            _ => {}
        }
    }
}

fn clue_text(clue: &Clue) -> String {
    let name = |cat: usize, val: usize| {
        format!("{} {}", CATEGORIES[cat].0, CATEGORIES[cat].1[val])
    };
    match *clue {
        Clue::SameEntity { cat_a, val_a, cat_b, val_b } => format!(
            "The person whose {} is the same person whose {}.",
            name(cat_a, val_a),
            name(cat_b, val_b)
        ),
        Clue::DirectPosition { cat, val, pos } => {
            format!("The person whose {} is at position {}.", name(cat, val), pos + 1)
        }
        Clue::LeftNeighbor { cat_a, val_a, cat_b, val_b } => format!(
            "The person whose {} is immediately to the left of the person whose {}.",
            name(cat_a, val_a),
            name(cat_b, val_b)
        ),
        Clue::NotSameEntity { cat_a, val_a, cat_b, val_b } => format!(
            "The person whose {} is not the same person whose {}.",
            name(cat_a, val_a),
            name(cat_b, val_b)
        ),
        Clue::NotAtPosition { cat, val, pos } => {
            format!("The person whose {} is not at position {}.", name(cat, val), pos + 1)
        }
    }
}

const MAX_CLUE_ROUNDS: usize = 500;

/// Generate a zebra task. Deterministic in the spec; the emitted clue set
/// has the hidden assignment as its unique model.
pub fn gen_zebra(spec: &ZebraSpec) -> Result<Task, TaskgenError> {
    let (n, m) = (spec.num_entities, spec.num_attributes);
    if !(2..=5).contains(&n) || !(2..=5).contains(&m) {
        return Err(TaskgenError::InvalidSpec(format!(
            "zebra spec requires 2..=5 entities and attributes, got {n}x{m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // hidden assignment: a random permutation per category
    let mut hidden: Assignment = Vec::with_capacity(m);
    for _ in 0..m {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        hidden.push(perm);
    }

    let mut clues: Vec<Clue> = Vec::new();
    let mut rounds = 0;
    while !is_unique(&clues, n, m) {
        rounds += 1;
        if rounds > MAX_CLUE_ROUNDS {
            return Err(TaskgenError::GenerationTimeout { rounds });
        }
        let clue = sample_true_clue(&mut rng, &hidden, n, m);
        debug_assert!(clue_holds(&clue, &hidden));
        if !clues.contains(&clue) {
            clues.push(clue);
        }
    }
    // greedy prune: drop any clue whose removal preserves uniqueness
    let mut i = 0;
    while i < clues.len() {
        let mut reduced = clues.clone();
        reduced.remove(i);
        if is_unique(&reduced, n, m) {
            clues = reduced;
        } else {
            i += 1;
        }
    }

    // ask for one attribute of one person
    let anchor_cat = rng.gen_range(0..m);
    let mut target_cat = rng.gen_range(0..m);
    while target_cat == anchor_cat {
        target_cat = rng.gen_range(0..m);
    }
    let anchor_val = rng.gen_range(0..n);
    let target_val = value_at(&hidden, target_cat, hidden[anchor_cat][anchor_val]);
    let ground_truth = CATEGORIES[target_cat].1[target_val].to_string();

    let category_lines: Vec<String> = (0..m)
        .map(|c| format!("- {}: {}", CATEGORIES[c].0, CATEGORIES[c].1[..n].join(", ")))
        .collect();
    let clue_lines: Vec<String> =
        clues.iter().enumerate().map(|(i, c)| format!("{}. {}", i + 1, clue_text(c))).collect();
    let question = QUESTION_TEMPLATE
        .replace("{num_entities}", &n.to_string())
        .replace("{category_lines}", &category_lines.join("\n"))
        .replace("{clue_lines}", &clue_lines.join("\n"))
        .replace("{target_category}", CATEGORIES[target_cat].0)
        .replace("{anchor_category}", CATEGORIES[anchor_cat].0)
        .replace("{anchor_value}", CATEGORIES[anchor_cat].1[anchor_val])
        .trim_end()
        .to_string();

    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), serde_json::json!("zebra"));
    meta.insert("seed".to_string(), serde_json::json!(spec.seed));
    meta.insert("entities".to_string(), serde_json::json!(n));
    meta.insert("attributes".to_string(), serde_json::json!(m));
    meta.insert("clues".to_string(), serde_json::to_value(&clues).expect("clues serialize"));
    meta.insert("solution".to_string(), serde_json::to_value(&hidden).expect("solution serializes"));
    meta.insert(
        "query".to_string(),
        serde_json::json!({ "anchor_cat": anchor_cat, "anchor_val": anchor_val, "target_cat": target_cat }),
    );
    Ok(Task {
        id: format!("zebra-{n}x{m}-{}", spec.seed),
        question,
        ground_truth,
        kind: crate::verify::AnswerKind::ExactString,
        meta,
    })
}
