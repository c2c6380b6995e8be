//! Answer normalization, equivalence, voting, and rule-based verifiers.
//!
//! This is the ground-truth checking layer shared by the metrics and by the
//! engine's reference-set equivalence classes. Numeric answers are compared
//! as exact rationals whenever both sides parse exactly; decimal renderings
//! fall back to an absolute tolerance of 1e-9. Text that does not parse as a
//! number at all (symbolic expressions, stray prose) is compared as a
//! whitespace-collapsed, case-folded string.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Pow, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance for inexact numeric comparisons.
pub const NUMERIC_ABS_TOL: f64 = 1e-9;

/// How a task's ground-truth answer is matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerKind {
    /// Numbers: integers, decimals, simple fractions, scientific notation.
    Numeric,
    /// Case-insensitive, whitespace-collapsed string match.
    ExactString,
    /// A fully filled 4x4 grid, compared cell-wise.
    SudokuGrid,
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("unparseable {kind:?} answer: {text:?}")]
    Unparseable { kind: AnswerKind, text: String },
}

/// Parsed numeric payload: exact rational when the rendering allows it,
/// floating approximation otherwise (e.g. astronomically large exponents).
#[derive(Debug, Clone, PartialEq)]
pub enum NumericValue {
    Exact(BigRational),
    Approx(f64),
}

impl NumericValue {
    pub fn to_f64(&self) -> Option<f64> {
        match self {
            NumericValue::Exact(r) => r.to_f64(),
            NumericValue::Approx(f) => Some(*f),
        }
    }
}

/// The result of [`normalize`]: a canonical rendering plus, for numeric
/// answers, the parsed value used for equality.
#[derive(Debug, Clone)]
pub struct CanonicalAnswer {
    pub kind: AnswerKind,
    pub canonical: String,
    pub numeric_value: Option<NumericValue>,
}

/// Strip wrappers that models habitually put around a final answer:
/// `\boxed{...}`, TeX math delimiters, backticks, quotes, and trailing
/// periods. Applied repeatedly until the text stops shrinking.
fn strip_markup(text: &str) -> String {
    let mut s = text.trim().to_string();
    loop {
        let before = s.len();
        s = s.trim().to_string();
        for (open, close) in [("$", "$"), ("\\(", "\\)"), ("\\[", "\\]"), ("`", "`")] {
            if s.len() > open.len() + close.len() && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len()..s.len() - close.len()].trim().to_string();
            }
        }
        if let Some(rest) = s.strip_prefix("\\boxed{") {
            if let Some(inner) = rest.strip_suffix('}') {
                s = inner.trim().to_string();
            }
        }
        for q in ['"', '\''] {
            if s.len() > 1 && s.starts_with(q) && s.ends_with(q) {
                s = s[1..s.len() - 1].trim().to_string();
            }
        }
        while s.ends_with('.') && !s[..s.len() - 1].ends_with(|c: char| c.is_ascii_digit()) {
            s.pop();
            s = s.trim_end().to_string();
        }
        // A single trailing period after digits is sentence punctuation,
        // not a decimal point ("42." means 42).
        if s.ends_with('.') && s[..s.len() - 1].chars().all(|c| c.is_ascii_digit() || c == '-' || c == '+') {
            s.pop();
        }
        if s.len() == before {
            break;
        }
    }
    s
}

/// Remove thousands separators: commas flanked by digits on both sides.
fn strip_digit_commas(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = String::with_capacity(s.len());
    for (i, ch) in s.char_indices() {
        if ch == ','
            && i > 0
            && bytes[i - 1].is_ascii_digit()
            && i + 1 < bytes.len()
            && bytes[i + 1].is_ascii_digit()
        {
            continue;
        }
        out.push(ch);
    }
    out
}

fn parse_big_int(s: &str) -> Option<BigInt> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    s.parse::<BigInt>().ok()
}

/// Parse a decimal mantissa ("12", "12.5", ".5", "5.") into an exact rational.
fn parse_decimal(s: &str) -> Option<BigRational> {
    let s = s.trim();
    let (sign, digits) = match s.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    if digits.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit()) || !frac_part.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let joined = format!("{}{}", int_part, frac_part);
    let numer: BigInt = if joined.is_empty() { BigInt::zero() } else { joined.parse().ok()? };
    let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
    Some(BigRational::new(numer * sign, denom))
}

/// Exponents beyond this magnitude are evaluated as f64 approximations
/// rather than exact rationals.
const MAX_EXACT_EXPONENT: i64 = 300;

fn parse_numeric_value(s: &str) -> Option<NumericValue> {
    let s = strip_digit_commas(s.trim());
    let mut s = s.trim();
    // sentence-final period after a digit ("3.5." means 3.5)
    if let Some(rest) = s.strip_suffix('.') {
        if rest.ends_with(|c: char| c.is_ascii_digit()) {
            s = rest;
        }
    }
    if s.is_empty() {
        return None;
    }
    // Simple fraction a/b over integers.
    if let Some((num, den)) = s.split_once('/') {
        let n = parse_big_int(num)?;
        let d = parse_big_int(den)?;
        if d.is_zero() {
            return None;
        }
        return Some(NumericValue::Exact(BigRational::new(n, d)));
    }
    // Scientific notation.
    if let Some(pos) = s.find(['e', 'E']) {
        let mantissa = parse_decimal(&s[..pos])?;
        let exp: i64 = s[pos + 1..].trim().parse().ok()?;
        if exp.abs() > MAX_EXACT_EXPONENT {
            return s.parse::<f64>().ok().filter(|f| f.is_finite()).map(NumericValue::Approx);
        }
        let ten = BigRational::from_integer(BigInt::from(10u32));
        let scale = ten.pow(exp as i32);
        return Some(NumericValue::Exact(mantissa * scale));
    }
    parse_decimal(s).map(NumericValue::Exact)
}

fn canonical_rational(r: &BigRational) -> String {
    if r.denom() == &BigInt::from(1u32) {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn collapse_fold(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Normalize a raw answer string under the given kind.
pub fn normalize(text: &str, kind: AnswerKind) -> Result<CanonicalAnswer, VerifyError> {
    match kind {
        AnswerKind::Numeric => {
            let stripped = strip_markup(text);
            let value = parse_numeric_value(&stripped).ok_or_else(|| VerifyError::Unparseable {
                kind,
                text: text.to_string(),
            })?;
            let canonical = match &value {
                NumericValue::Exact(r) => canonical_rational(r),
                NumericValue::Approx(f) => format!("{f}"),
            };
            Ok(CanonicalAnswer { kind, canonical, numeric_value: Some(value) })
        }
        AnswerKind::ExactString => Ok(CanonicalAnswer {
            kind,
            canonical: collapse_fold(&strip_markup(text)),
            numeric_value: None,
        }),
        AnswerKind::SudokuGrid => {
            let grid = Grid::parse(text).ok_or_else(|| VerifyError::Unparseable {
                kind,
                text: text.to_string(),
            })?;
            Ok(CanonicalAnswer { kind, canonical: grid.to_string(), numeric_value: None })
        }
    }
}

fn numeric_equal(a: &NumericValue, b: &NumericValue) -> bool {
    match (a, b) {
        (NumericValue::Exact(x), NumericValue::Exact(y)) => x == y,
        _ => match (a.to_f64(), b.to_f64()) {
            (Some(x), Some(y)) => (x - y).abs() <= NUMERIC_ABS_TOL,
            _ => false,
        },
    }
}

/// Total equivalence check between two raw answer strings.
///
/// Numeric: exact rational equality when both sides parse exactly, otherwise
/// absolute tolerance on floats. When exactly one side parses the answers are
/// not equivalent; when neither parses, both are treated as opaque
/// expressions and compared as normalized strings.
pub fn equivalent(a: &str, b: &str, kind: AnswerKind) -> bool {
    match kind {
        AnswerKind::Numeric => {
            let va = parse_numeric_value(&strip_markup(a));
            let vb = parse_numeric_value(&strip_markup(b));
            match (va, vb) {
                (Some(x), Some(y)) => numeric_equal(&x, &y),
                (None, None) => {
                    let fa = collapse_fold(&strip_markup(a));
                    !fa.is_empty() && fa == collapse_fold(&strip_markup(b))
                }
                _ => false,
            }
        }
        AnswerKind::ExactString => {
            collapse_fold(&strip_markup(a)) == collapse_fold(&strip_markup(b))
        }
        AnswerKind::SudokuGrid => match (Grid::parse(a), Grid::parse(b)) {
            (Some(ga), Some(gb)) => ga == gb,
            _ => false,
        },
    }
}

/// Greedy equivalence-class partition preserving first-appearance order.
/// Each element joins the first class whose representative it matches.
pub fn partition_classes(answers: &[String], kind: AnswerKind) -> Vec<Vec<usize>> {
    let mut classes: Vec<Vec<usize>> = Vec::new();
    'outer: for (i, ans) in answers.iter().enumerate() {
        for class in classes.iter_mut() {
            let rep = &answers[class[0]];
            if equivalent(ans, rep, kind) {
                class.push(i);
                continue 'outer;
            }
        }
        classes.push(vec![i]);
    }
    classes
}

/// Majority vote: representative of the largest equivalence class and its
/// share of the list. Ties go to the earliest-appearing class.
pub fn majority_answer(answers: &[String], kind: AnswerKind) -> Option<(String, f64)> {
    if answers.is_empty() {
        return None;
    }
    let classes = partition_classes(answers, kind);
    // strictly-greater keeps the earliest class on ties
    let mut best: &Vec<usize> = classes.first()?;
    for class in &classes {
        if class.len() > best.len() {
            best = class;
        }
    }
    let share = best.len() as f64 / answers.len() as f64;
    Some((answers[best[0]].clone(), share))
}

/// Weighted best-of-N: classes weighted by the sum of member scores, the
/// max-weight class wins. When every score is zero the weights carry no
/// signal and the vote falls back to plain majority.
pub fn weighted_best_of_n(candidates: &[(String, u32)], kind: AnswerKind) -> Option<String> {
    if candidates.is_empty() {
        return None;
    }
    if candidates.iter().all(|(_, s)| *s == 0) {
        let answers: Vec<String> = candidates.iter().map(|(a, _)| a.clone()).collect();
        return majority_answer(&answers, kind).map(|(a, _)| a);
    }
    let answers: Vec<String> = candidates.iter().map(|(a, _)| a.clone()).collect();
    let classes = partition_classes(&answers, kind);
    let mut best: Option<(u64, &Vec<usize>)> = None;
    for class in &classes {
        let weight: u64 = class.iter().map(|&i| candidates[i].1 as u64).sum();
        match best {
            Some((w, _)) if weight <= w => {}
            _ => best = Some((weight, class)),
        }
    }
    best.map(|(_, class)| candidates[class[0]].0.clone())
}

// ---------------------------------------------------------------------------
// 4x4 grids
// ---------------------------------------------------------------------------

/// A 4x4 grid of cells in 1..=4, with 0 marking a blank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub cells: [[u8; 4]; 4],
}

impl Grid {
    pub fn new(cells: [[u8; 4]; 4]) -> Self {
        Grid { cells }
    }

    /// Parse rows of digits separated by whitespace or newlines. Blanks may
    /// be written as `0`, `.`, `_`, or `*`. Any other non-separator
    /// character makes the text unparseable.
    pub fn parse(text: &str) -> Option<Grid> {
        let mut flat = Vec::with_capacity(16);
        for ch in text.chars() {
            match ch {
                '1'..='4' => flat.push(ch as u8 - b'0'),
                '0' | '.' | '_' | '*' => flat.push(0),
                c if c.is_whitespace() || c == '|' || c == ',' => {}
                _ => return None,
            }
        }
        if flat.len() != 16 {
            return None;
        }
        let mut cells = [[0u8; 4]; 4];
        for (i, v) in flat.into_iter().enumerate() {
            cells[i / 4][i % 4] = v;
        }
        Some(Grid { cells })
    }

    pub fn is_complete(&self) -> bool {
        self.cells.iter().flatten().all(|&c| c != 0)
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (r, row) in self.cells.iter().enumerate() {
            if r > 0 {
                writeln!(f)?;
            }
            let line: Vec<String> = row
                .iter()
                .map(|&c| if c == 0 { "_".to_string() } else { c.to_string() })
                .collect();
            write!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

fn group_is_permutation(vals: [u8; 4]) -> bool {
    let mut seen = [false; 5];
    for v in vals {
        if !(1..=4).contains(&v) || seen[v as usize] {
            return false;
        }
        seen[v as usize] = true;
    }
    true
}

/// Rule-based 4x4 sudoku verifier: the candidate must be fully filled, agree
/// with every given clue, and have every row, column, and 2x2 box a
/// permutation of {1,2,3,4}.
pub fn verify_sudoku(puzzle: &Grid, candidate: &Grid) -> bool {
    if !candidate.is_complete() {
        return false;
    }
    for r in 0..4 {
        for c in 0..4 {
            let clue = puzzle.cells[r][c];
            if clue != 0 && candidate.cells[r][c] != clue {
                return false;
            }
        }
    }
    for i in 0..4 {
        let row = candidate.cells[i];
        let col = [
            candidate.cells[0][i],
            candidate.cells[1][i],
            candidate.cells[2][i],
            candidate.cells[3][i],
        ];
        if !group_is_permutation(row) || !group_is_permutation(col) {
            return false;
        }
    }
    for br in [0, 2] {
        for bc in [0, 2] {
            let boxv = [
                candidate.cells[br][bc],
                candidate.cells[br][bc + 1],
                candidate.cells[br + 1][bc],
                candidate.cells[br + 1][bc + 1],
            ];
            if !group_is_permutation(boxv) {
                return false;
            }
        }
    }
    true
}

/// Exact-string verification for zebra-puzzle answers.
pub fn verify_zebra(ground_truth: &str, candidate: &str) -> bool {
    equivalent(ground_truth, candidate, AnswerKind::ExactString)
}
