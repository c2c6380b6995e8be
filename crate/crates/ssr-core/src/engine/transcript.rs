//! Persisted record of one refinement run.
//!
//! One transcript serializes to one JSONL record. Everything a metric needs
//! is in here; recomputation from disk must reproduce in-memory results, so
//! the record carries the full per-iteration state and the call log.

use crate::prompts::PromptKind;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Cot,
    SelfRefine,
    SsrLin,
    SsrAda,
    SsrPlan,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cot" => Ok(Method::Cot),
            "self-refine" => Ok(Method::SelfRefine),
            "ssr-lin" => Ok(Method::SsrLin),
            "ssr-ada" => Ok(Method::SsrAda),
            "ssr-plan" => Ok(Method::SsrPlan),
            other => Err(format!(
                "unknown method {other:?} (expected cot, self-refine, ssr-lin, ssr-ada, ssr-plan)"
            )),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Cot => "cot",
            Method::SelfRefine => "self-refine",
            Method::SsrLin => "ssr-lin",
            Method::SsrAda => "ssr-ada",
            Method::SsrPlan => "ssr-plan",
        };
        f.write_str(name)
    }
}

/// Which refinement path an iteration took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    /// Initial CoT, or a socratic pass that found nothing to change.
    None,
    SelfRefine,
    Socratic,
    Plan,
}

/// One backend exchange as seen from the engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallRecord {
    pub prompt_kind: PromptKind,
    pub cache_hit: bool,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub route: Route,
    pub trace: String,
    pub answer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<super::SocraticStep>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<super::StepConfidence>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback: Option<super::SocraticFeedback>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge_score: Option<i32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_changed: Option<bool>,
    pub calls: Vec<CallRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl IterationRecord {
    pub fn new(k: usize, route: Route, trace: String, answer: String) -> Self {
        IterationRecord {
            k,
            route,
            trace,
            answer,
            decomposition: None,
            confidences: None,
            feedback: None,
            judge_score: None,
            plan_changed: None,
            calls: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub calls: u64,
    pub cached_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: String,
    pub task_id: String,
    pub method: Method,
    pub seed: u64,
    pub repeat: u32,
    pub slot: u32,
    pub config: serde_json::Value,
    pub iterations: Vec<IterationRecord>,
    pub totals: Totals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_score: Option<i32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub final_eval_calls: Vec<CallRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Transcript {
    pub fn new(
        task_id: String,
        method: Method,
        seed: u64,
        repeat: u32,
        slot: u32,
        config: serde_json::Value,
    ) -> Self {
        Transcript {
            schema_version: SCHEMA_VERSION.to_string(),
            task_id,
            method,
            seed,
            repeat,
            slot,
            config,
            iterations: Vec::new(),
            totals: Totals::default(),
            final_score: None,
            final_eval_calls: Vec::new(),
            error: None,
        }
    }

    /// Answer of the last iteration, if any iteration completed.
    pub fn final_answer(&self) -> Option<&str> {
        self.iterations.last().map(|it| it.answer.as_str())
    }

    pub fn total_tokens(&self) -> u64 {
        self.totals.prompt_tokens + self.totals.completion_tokens
    }

    pub fn recompute_totals(&mut self) {
        let mut totals = Totals::default();
        let all_calls =
            self.iterations.iter().flat_map(|it| it.calls.iter()).chain(self.final_eval_calls.iter());
        for call in all_calls {
            totals.calls += 1;
            if call.cache_hit {
                totals.cached_calls += 1;
            }
            totals.prompt_tokens += call.prompt_tokens;
            totals.completion_tokens += call.completion_tokens;
        }
        self.totals = totals;
    }
}
