//! Prompt templates and structured-response parsing.
//!
//! Templates are verbatim text resources with `{slot}` placeholders
//! (literal braces escaped as `{{` / `}}`), one file per kind per domain.
//! The parsing half pulls XML-style tags, 0-5 scores, and the decomposition
//! JSON back out of model responses, tolerating the prose and code fences
//! real models wrap around them.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// The eleven instruction templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptKind {
    Cot,
    Verification,
    RefineNormal,
    DecomposeSsr,
    DecomposeAot,
    SolveSubQuestion,
    ConfidenceEstimate,
    Reflection,
    RefineSsr,
    Ensemble,
    HleJudge,
}

impl PromptKind {
    pub const ALL: [PromptKind; 11] = [
        PromptKind::Cot,
        PromptKind::Verification,
        PromptKind::RefineNormal,
        PromptKind::DecomposeSsr,
        PromptKind::DecomposeAot,
        PromptKind::SolveSubQuestion,
        PromptKind::ConfidenceEstimate,
        PromptKind::Reflection,
        PromptKind::RefineSsr,
        PromptKind::Ensemble,
        PromptKind::HleJudge,
    ];

    /// Slot names the template requires, in no particular order.
    pub fn slots(self) -> &'static [&'static str] {
        match self {
            PromptKind::Cot => &["question"],
            PromptKind::Verification => &["question", "response"],
            PromptKind::RefineNormal => &["question", "original_cot_response", "judge_response"],
            PromptKind::DecomposeSsr | PromptKind::DecomposeAot => {
                &["question", "trajectory", "answer"]
            }
            PromptKind::SolveSubQuestion => {
                &["question", "socratic_reasoning_trajectory", "next_sub_question"]
            }
            PromptKind::ConfidenceEstimate => &["prediction", "answers"],
            PromptKind::Reflection => &["wrong_question", "wrong_answer", "revised_answer"],
            PromptKind::RefineSsr => &["cot_instruction", "cot_reasoning_trace", "reflection"],
            PromptKind::Ensemble => &["question", "solutions"],
            PromptKind::HleJudge => &["question", "correct_answer", "candidate_answer"],
        }
    }
}

impl std::fmt::Display for PromptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            PromptKind::Cot => "cot",
            PromptKind::Verification => "verification",
            PromptKind::RefineNormal => "refine-normal",
            PromptKind::DecomposeSsr => "decompose-ssr",
            PromptKind::DecomposeAot => "decompose-aot",
            PromptKind::SolveSubQuestion => "solve-sub-question",
            PromptKind::ConfidenceEstimate => "confidence-estimate",
            PromptKind::Reflection => "reflection",
            PromptKind::RefineSsr => "refine-ssr",
            PromptKind::Ensemble => "ensemble",
            PromptKind::HleJudge => "hle-judge",
        };
        f.write_str(name)
    }
}

/// Selects the role line: precise math problem solver vs precise logical
/// reasoning problem solver. Everything else in a template is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskDomain {
    Math,
    Logic,
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("missing slot: {0}")]
    MissingSlot(String),
    #[error("unknown slot: {0}")]
    UnknownSlot(String),
    #[error("tag <{0}> not found")]
    TagMissing(String),
    #[error("tag <{0}> opened but never closed")]
    TagUnclosed(String),
    #[error("not an integer: {0:?}")]
    NotAnInteger(String),
    #[error("score out of range: {0}")]
    OutOfRange(i64),
    #[error("no JSON object with a \"sub-questions\" key found")]
    JsonNotFound,
    #[error("decomposition schema mismatch at {0}")]
    SchemaMismatch(String),
    #[error("decomposition contains zero steps")]
    EmptyDecomposition,
    #[error("malformed template: {0}")]
    Template(String),
}

macro_rules! template_pair {
    ($name:literal) => {
        (
            include_str!(concat!("../../templates/", $name, "__math.txt")),
            include_str!(concat!("../../templates/", $name, "__logic.txt")),
        )
    };
}

/// Raw template text for a kind/domain pair.
pub fn template_text(kind: PromptKind, domain: TaskDomain) -> &'static str {
    let (math, logic) = match kind {
        PromptKind::Cot => template_pair!("cot"),
        PromptKind::Verification => template_pair!("verification"),
        PromptKind::RefineNormal => template_pair!("refine_normal"),
        PromptKind::DecomposeSsr => template_pair!("decompose_ssr"),
        PromptKind::DecomposeAot => template_pair!("decompose_aot"),
        PromptKind::SolveSubQuestion => template_pair!("solve_sub_question"),
        PromptKind::ConfidenceEstimate => template_pair!("confidence_estimate"),
        PromptKind::Reflection => template_pair!("reflection"),
        PromptKind::RefineSsr => template_pair!("refine_ssr"),
        PromptKind::Ensemble => template_pair!("ensemble"),
        PromptKind::HleJudge => template_pair!("hle_judge"),
    };
    match domain {
        TaskDomain::Math => math,
        TaskDomain::Logic => logic,
    }
}

/// Substitute `{slot}` placeholders. Every placeholder must be provided and
/// every provided slot must be consumed; `{{`/`}}` escape literal braces.
fn substitute(template: &str, slots: &BTreeMap<String, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut used: Vec<&str> = Vec::new();
    let bytes = template.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' => {
                if bytes.get(i + 1) == Some(&b'{') {
                    out.push('{');
                    i += 2;
                } else {
                    let end = template[i + 1..]
                        .find('}')
                        .map(|j| i + 1 + j)
                        .ok_or_else(|| PromptError::Template("unterminated placeholder".into()))?;
                    let name = &template[i + 1..end];
                    if name.is_empty() || !name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                        return Err(PromptError::Template(format!("bad placeholder {{{name}}}")));
                    }
                    let value = slots
                        .get(name)
                        .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?;
                    out.push_str(value);
                    if !used.contains(&name) {
                        used.push(name);
                    }
                    i = end + 1;
                }
            }
            b'}' => {
                if bytes.get(i + 1) == Some(&b'}') {
                    out.push('}');
                    i += 2;
                } else {
                    return Err(PromptError::Template("stray '}' in template".into()));
                }
            }
            _ => {
                let ch = template[i..].chars().next().unwrap();
                out.push(ch);
                i += ch.len_utf8();
            }
        }
    }
    for key in slots.keys() {
        if !used.iter().any(|u| u == key) {
            return Err(PromptError::UnknownSlot(key.clone()));
        }
    }
    Ok(out.trim_end().to_string())
}

/// Render a template with the given slots.
pub fn render(
    kind: PromptKind,
    domain: TaskDomain,
    slots: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    substitute(template_text(kind, domain), slots)
}

/// Convenience for building the slot map.
pub fn slots<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

const DECOMPOSE_STANDARD_SENTENCE: &str =
    "Break down the reasoning process into a series of sub-questions.";

fn decompose_capped_sentence(max_steps: u32) -> String {
    format!(
        "Identify the most important milestones of the reasoning process and break it down \
         into a series of sub-questions, with the number of sub-questions less than or equal \
         to {max_steps}."
    )
}

/// Render the decomposition prompt, optionally with the milestone-capped
/// instruction that bounds the number of sub-questions.
pub fn render_decompose_capped(
    domain: TaskDomain,
    question: &str,
    trajectory: &str,
    answer: &str,
    max_steps: Option<u32>,
) -> Result<String, PromptError> {
    if max_steps == Some(0) {
        return Err(PromptError::OutOfRange(0));
    }
    let mut template = template_text(PromptKind::DecomposeSsr, domain).to_string();
    if let Some(cap) = max_steps {
        template = template.replacen(DECOMPOSE_STANDARD_SENTENCE, &decompose_capped_sentence(cap), 1);
    }
    substitute(
        &template,
        &slots([("question", question), ("trajectory", trajectory), ("answer", answer)]),
    )
}

/// Content of the last well-formed `<tag>...</tag>` pair, trimmed.
pub fn extract_tag(text: &str, tag: &str) -> Result<String, PromptError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut result: Option<String> = None;
    let mut saw_open = false;
    let mut from = 0;
    while let Some(rel) = text[from..].find(&open) {
        saw_open = true;
        let start = from + rel + open.len();
        match text[start..].find(&close) {
            Some(relc) => {
                result = Some(text[start..start + relc].trim().to_string());
                from = start + relc + close.len();
            }
            None => break,
        }
    }
    match (result, saw_open) {
        (Some(r), _) => Ok(r),
        (None, true) => Err(PromptError::TagUnclosed(tag.to_string())),
        (None, false) => Err(PromptError::TagMissing(tag.to_string())),
    }
}

/// Scores used by the verification and confidence-estimate templates:
/// 0..=5, or -1 for "cannot determine". Anything else is an error.
pub fn parse_score(text: &str) -> Result<i32, PromptError> {
    let raw = extract_tag(text, "answer")?;
    let value: i64 = raw
        .trim()
        .parse()
        .map_err(|_| PromptError::NotAnInteger(raw.clone()))?;
    if (-1..=5).contains(&value) {
        Ok(value as i32)
    } else {
        Err(PromptError::OutOfRange(value))
    }
}

/// One parsed step from the decomposition JSON.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedStep {
    pub description: String,
    pub answer: String,
}

/// Result of [`parse_decomposition`]: ordered steps plus the template's
/// trailing top-level "answer" field when present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedDecomposition {
    pub steps: Vec<ParsedStep>,
    pub declared_answer: Option<String>,
}

fn json_value_to_text(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Strip fenced code blocks' fence lines, keeping their content.
fn strip_fences(text: &str) -> String {
    text.lines()
        .filter(|line| !line.trim_start().starts_with("```"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Find balanced `{...}` spans, earliest-start (outermost) first.
fn balanced_object_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut starts: Vec<usize> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => starts.push(i),
            b'}' => {
                if let Some(start) = starts.pop() {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans.sort();
    spans
}

/// Extract and validate the decomposition JSON from a model response,
/// tolerating surrounding prose and Markdown fences. Trailing commas (the
/// template's own example contains one) are repaired before parsing.
pub fn parse_decomposition(text: &str) -> Result<ParsedDecomposition, PromptError> {
    let cleaned = strip_fences(text);
    let mut parsed: Option<serde_json::Value> = None;
    for (start, end) in balanced_object_spans(&cleaned) {
        let span = &cleaned[start..end];
        if !span.contains("sub-questions") {
            continue;
        }
        let candidate = repair_trailing_commas(span);
        if let Ok(v) = serde_json::from_str::<serde_json::Value>(&candidate) {
            if v.get("sub-questions").is_some() {
                parsed = Some(v);
                break;
            }
        }
    }
    let root = parsed.ok_or(PromptError::JsonNotFound)?;
    let subs = root
        .get("sub-questions")
        .and_then(|v| v.as_array())
        .ok_or_else(|| PromptError::SchemaMismatch("sub-questions".into()))?;
    let mut steps = Vec::with_capacity(subs.len());
    for (i, item) in subs.iter().enumerate() {
        let obj = item
            .as_object()
            .ok_or_else(|| PromptError::SchemaMismatch(format!("sub-questions[{i}]")))?;
        let description = obj
            .get("description")
            .and_then(json_value_to_text)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| PromptError::SchemaMismatch(format!("sub-questions[{i}].description")))?;
        let answer = obj
            .get("answer")
            .and_then(json_value_to_text)
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| PromptError::SchemaMismatch(format!("sub-questions[{i}].answer")))?;
        // "depend" is accepted when present but carries no meaning here:
        // the refinement loop treats steps as a linear chain.
        steps.push(ParsedStep { description, answer });
    }
    if steps.is_empty() {
        return Err(PromptError::EmptyDecomposition);
    }
    let declared_answer = root.get("answer").and_then(json_value_to_text);
    Ok(ParsedDecomposition { steps, declared_answer })
}

/// Remove commas that sit directly before a closing bracket/brace.
fn repair_trailing_commas(json: &str) -> String {
    let bytes = json.as_bytes();
    let mut out = String::with_capacity(json.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            out.push(b as char);
            continue;
        }
        match b {
            b'"' => {
                in_string = true;
                out.push('"');
            }
            b',' => {
                let rest = &json[i + 1..];
                let next = rest.trim_start().as_bytes().first();
                if matches!(next, Some(b'}') | Some(b']')) {
                    continue;
                }
                out.push(',');
            }
            _ => out.push(b as char),
        }
    }
    out
}
