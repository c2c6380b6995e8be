//! Benchmark task loading and synthesis.
//!
//! Tasks arrive either from JSONL files (one `{id, question, answer, kind,
//! meta?}` object per line) or from the seed-driven puzzle generators in
//! [`sudoku`] and [`zebra`], both of which construct puzzles with a provably
//! unique solution.

pub mod sudoku;
pub mod zebra;

pub use sudoku::gen_mini_sudoku;
pub use zebra::{gen_zebra, ZebraSpec};

use crate::verify::{self, AnswerKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

/// One benchmark problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub ground_truth: String,
    pub kind: AnswerKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum TaskgenError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema mismatch at line {line}: {message}")]
    SchemaMismatch { line: usize, message: String },
    #[error("ground truth for task {id} does not normalize under {kind:?}")]
    InvalidGroundTruth { id: String, kind: AnswerKind },
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("puzzle generation did not converge after {rounds} rounds")]
    GenerationTimeout { rounds: usize },
}

/// Load tasks in file order, validating each ground truth.
pub fn load_jsonl(path: &Path) -> Result<Vec<Task>, TaskgenError> {
    let file = std::fs::File::open(path).map_err(|source| TaskgenError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = std::io::BufReader::new(file);
    let mut tasks = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| TaskgenError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(&line).map_err(|e| TaskgenError::SchemaMismatch {
            line: line_no,
            message: e.to_string(),
        })?;
        validate_task(&task)?;
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn validate_task(task: &Task) -> Result<(), TaskgenError> {
    if verify::normalize(&task.ground_truth, task.kind).is_err() {
        return Err(TaskgenError::InvalidGroundTruth { id: task.id.clone(), kind: task.kind });
    }
    Ok(())
}

/// Write tasks as JSONL, one record per line.
pub fn write_jsonl(path: &Path, tasks: &[Task]) -> Result<(), TaskgenError> {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| TaskgenError::Io {
        path: path.display().to_string(),
        source,
    })
}
