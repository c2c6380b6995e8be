//! The iterative refinement engine.
//!
//! Each run starts from a chain-of-thought response and then applies one of
//! five methods: plain CoT, Self-Refine (judge + holistic rewrite), or the
//! socratic family, which decomposes the response into (sub-question,
//! sub-answer) steps, re-solves every sub-question M times to obtain a
//! reference set, scores each step's confidence against its references,
//! and rewrites the response around the weakest step's majority-vote answer.
//!
//! Socratic variants: `ssr-lin` runs the full pipeline every iteration;
//! `ssr-ada` gates it behind Self-Refine and only escalates when the judge
//! returns the maximum score (no mistakes identified); `ssr-plan` prepends a
//! single plan-refinement round to `ssr-ada`.

mod transcript;

pub use transcript::{
    CallRecord, IterationRecord, Method, Route, Totals, Transcript, SCHEMA_VERSION,
};

use crate::gateway::{ChatMessage, ChatRequest, Gateway, GatewayError};
use crate::prompts::{
    self, extract_tag, parse_decomposition, parse_score, render, render_decompose_capped,
    PromptError, PromptKind, TaskDomain,
};
use crate::taskgen::Task;
use crate::verify::{self, AnswerKind};
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// One (sub-question, sub-answer) pair, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocraticStep {
    pub index: usize,
    pub sub_question: String,
    pub sub_answer: String,
}

/// An ordered decomposition of a reasoning trace. The last step's answer is
/// equivalent to `source_answer` (enforced at construction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub steps: Vec<SocraticStep>,
    pub source_trace: String,
    pub source_answer: String,
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// M independent re-solutions of one sub-question. `None` marks a sample
/// whose answer tag never parsed; those group into a single trailing class.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    pub step_index: usize,
    pub samples: Vec<Option<String>>,
    pub classes: Vec<Vec<usize>>,
}

impl ReferenceSet {
    pub fn new(step_index: usize, samples: Vec<Option<String>>, kind: AnswerKind) -> Self {
        let mut classes: Vec<Vec<usize>> = Vec::new();
        'outer: for (i, sample) in samples.iter().enumerate() {
            let Some(text) = sample else { continue };
            for class in classes.iter_mut() {
                let rep = samples[class[0]].as_deref().expect("class reps are parsed samples");
                if sub_answer_equivalent(text, rep, kind) {
                    class.push(i);
                    continue 'outer;
                }
            }
            classes.push(vec![i]);
        }
        let unparseable: Vec<usize> =
            samples.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
        if !unparseable.is_empty() {
            classes.push(unparseable);
        }
        ReferenceSet { step_index, samples, classes }
    }

    pub fn m(&self) -> usize {
        self.samples.len()
    }
}

/// Equivalence used for reference classes and exact-match confidence.
///
/// Sub-answers are free-form expressions even on grid tasks, so the grid
/// kind falls back to collapsed case-folded string equality whenever either
/// side is not itself a full grid.
pub fn sub_answer_equivalent(a: &str, b: &str, kind: AnswerKind) -> bool {
    match kind {
        AnswerKind::Numeric | AnswerKind::ExactString => verify::equivalent(a, b, kind),
        AnswerKind::SudokuGrid => {
            verify::equivalent(a, b, AnswerKind::SudokuGrid)
                || verify::equivalent(a, b, AnswerKind::ExactString)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceMode {
    ExactMatch,
    LlmJudged,
}

/// Config-level confidence selection; `Auto` picks per answer kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceSetting {
    Auto,
    ExactMatch,
    LlmJudged,
}

/// Normalized step confidence in [0, 1]: match-count / M for exact
/// matching, judge-score / 5 for LLM judging, so weakest-step selection is
/// mode-agnostic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StepConfidence {
    pub step_index: usize,
    pub raw_score: i32,
    pub normalized: f64,
    pub mode: ConfidenceMode,
}

/// The triplet injected into the refinement prompt: the weakest
/// sub-question, its original answer, and the majority-vote revision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocraticFeedback {
    pub sub_question: String,
    pub original_answer: String,
    pub revised_answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextFormat {
    Natural,
    Socratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Completeness {
    Reflection,
    Intervention,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineConfig {
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Prompt domain; `None` selects by answer kind (numeric -> math).
    pub domain: Option<TaskDomain>,
    /// Refinement iterations K.
    pub iterations: usize,
    /// Re-solves per sub-question M.
    pub samples_per_step: usize,
    pub confidence: ConfidenceSetting,
    pub context_format: ContextFormat,
    pub completeness: Completeness,
    /// Milestone cap on decomposition length.
    pub max_steps: Option<u32>,
    /// Skip the refinement call when every step is unanimous and the
    /// weakest step's majority answer equals its original answer. Turn off
    /// to refine unconditionally.
    pub skip_unanimous: bool,
    /// Overwrite a mismatched final sub-answer with the response answer
    /// instead of failing the decomposition.
    pub overwrite_final_mismatch: bool,
    /// Fan-out for reference-set sampling.
    pub parallelism: usize,
    /// Issue one extra verification of the final trace and record its score
    /// (used for weighted best-of-N aggregation).
    pub final_self_eval: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            model_id: "mock-model".into(),
            temperature: 0.6,
            max_tokens: 16384,
            domain: None,
            iterations: 3,
            samples_per_step: 5,
            confidence: ConfidenceSetting::Auto,
            context_format: ContextFormat::Natural,
            completeness: Completeness::Reflection,
            max_steps: None,
            skip_unanimous: true,
            overwrite_final_mismatch: false,
            parallelism: 8,
            final_self_eval: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("decomposition final sub-answer {got:?} is not equivalent to the response answer {expected:?}")]
    DecompositionMismatch { expected: String, got: String },
    #[error("all {m} reference samples for step {step} were unparseable")]
    AllUnparseable { step: usize, m: usize },
}

/// Deterministic per-unit seed from the run seed and unit coordinates, so
/// every (task, repeat, slot) cell draws its own sample stream.
pub fn unit_seed(base: u64, task_id: &str, repeat: u32, slot: u32) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update((task_id.len() as u64).to_le_bytes());
    hasher.update(task_id.as_bytes());
    hasher.update(repeat.to_le_bytes());
    hasher.update(slot.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Deterministic sample-index allocator for one run. The run seed occupies
/// the high 32 bits so distinct runs draw distinct samples through the
/// cache, while the low bits count logical calls in program order, which
/// keeps cache keys stable across runs sharing a prefix (e.g. the same run
/// at a larger iteration budget).
#[derive(Debug, Clone)]
pub struct SampleSpace {
    hi: u64,
    next: u64,
}

impl SampleSpace {
    pub fn new(seed: u64) -> Self {
        let folded = (seed ^ (seed >> 32)) as u32;
        SampleSpace { hi: (folded as u64) << 32, next: 0 }
    }

    fn next_index(&mut self) -> u64 {
        let idx = self.hi | (self.next & 0xffff_ffff);
        self.next += 1;
        idx
    }
}

/// Renders steps `0..upto` as the Q/A list the prompts embed.
pub fn render_socratic_prefix(steps: &[SocraticStep], upto: usize) -> String {
    steps[..upto.min(steps.len())]
        .iter()
        .map(|s| {
            format!(
                "Sub-question {}: {}\nSub-answer {}: {}",
                s.index + 1,
                s.sub_question,
                s.index + 1,
                s.sub_answer
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prose rendering of the same prefix, for natural-format intervention.
fn render_natural_prefix(steps: &[SocraticStep], upto: usize) -> String {
    steps[..upto.min(steps.len())]
        .iter()
        .map(|s| format!("Step {}: {} The answer is {}.", s.index + 1, s.sub_question, s.sub_answer))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The re-solve prompt for step `t`: original question, steps before `t`,
/// and sub-question `t`. Later steps and the raw trace never appear.
pub fn build_solve_prompt(
    domain: TaskDomain,
    question: &str,
    steps: &[SocraticStep],
    t: usize,
) -> Result<String, PromptError> {
    render(
        PromptKind::SolveSubQuestion,
        domain,
        &prompts::slots([
            ("question", question),
            ("socratic_reasoning_trajectory", &render_socratic_prefix(steps, t)),
            ("next_sub_question", &steps[t].sub_question),
        ]),
    )
}

/// The confidence prompt sees only the prediction and the reference
/// answers: no question, no trace, no step context.
pub fn build_confidence_prompt(
    domain: TaskDomain,
    prediction: &str,
    references: &[Option<String>],
) -> Result<String, PromptError> {
    let answers = references
        .iter()
        .enumerate()
        .map(|(i, r)| format!("{}. {}", i + 1, r.as_deref().unwrap_or("UNPARSEABLE")))
        .collect::<Vec<_>>()
        .join("\n");
    render(
        PromptKind::ConfidenceEstimate,
        domain,
        &prompts::slots([("prediction", prediction), ("answers", &answers)]),
    )
}

/// Lowest-confidence step index; ties break to the earliest step.
pub fn select_weakest(confidences: &[StepConfidence]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for conf in confidences {
        match best {
            Some((_, lowest)) if conf.normalized >= lowest => {}
            _ => best = Some((conf.step_index, conf.normalized)),
        }
    }
    best.map(|(idx, _)| idx)
}

/// Representative of the largest parsed equivalence class; ties break to
/// the class whose first sample came earliest.
pub fn majority_sub_answer(refs: &ReferenceSet) -> Result<String, EngineError> {
    let mut best: Option<&Vec<usize>> = None;
    for class in &refs.classes {
        if refs.samples[class[0]].is_none() {
            continue;
        }
        match best {
            Some(b) if class.len() <= b.len() => {}
            _ => best = Some(class),
        }
    }
    match best {
        Some(class) => Ok(refs.samples[class[0]].clone().expect("parsed class")),
        None => Err(EngineError::AllUnparseable { step: refs.step_index, m: refs.m() }),
    }
}

struct PlanOutcome {
    trace: String,
    answer: String,
    changed: bool,
    judge_score: i32,
}

struct SocraticPass {
    trace: String,
    answer: String,
    decomposition: Vec<SocraticStep>,
    confidences: Vec<StepConfidence>,
    feedback: Option<SocraticFeedback>,
    refined: bool,
}

pub struct Engine {
    gateway: Arc<Gateway>,
    config: EngineConfig,
}

impl Engine {
    pub fn new(gateway: Arc<Gateway>, config: EngineConfig) -> Self {
        Engine { gateway, config }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn domain_for(&self, task: &Task) -> TaskDomain {
        self.config.domain.unwrap_or(match task.kind {
            AnswerKind::Numeric => TaskDomain::Math,
            _ => TaskDomain::Logic,
        })
    }

    pub fn confidence_mode_for(&self, task: &Task) -> ConfidenceMode {
        match self.config.confidence {
            ConfidenceSetting::ExactMatch => ConfidenceMode::ExactMatch,
            ConfidenceSetting::LlmJudged => ConfidenceMode::LlmJudged,
            // Numeric and string sub-answers check deterministically; grid
            // tasks produce free-form intermediate answers, so judge those.
            ConfidenceSetting::Auto => match task.kind {
                AnswerKind::Numeric | AnswerKind::ExactString => ConfidenceMode::ExactMatch,
                AnswerKind::SudokuGrid => ConfidenceMode::LlmJudged,
            },
        }
    }

    fn request(&self, prompt: String, sample_index: u64) -> ChatRequest {
        ChatRequest {
            model_id: self.config.model_id.clone(),
            messages: vec![ChatMessage::user(prompt)],
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
            sample_index,
        }
    }

    async fn ask(
        &self,
        kind: PromptKind,
        prompt: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<String, EngineError> {
        let request = self.request(prompt.to_string(), space.next_index());
        let response = self.gateway.complete(&request).await?;
        calls.push(CallRecord {
            prompt_kind: kind,
            cache_hit: response.cached,
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
        });
        Ok(response.text)
    }

    /// Ask and parse, re-issuing the same prompt once with a fresh sample
    /// before surfacing a parse failure.
    async fn ask_parsed<T>(
        &self,
        kind: PromptKind,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, PromptError>,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<T, EngineError> {
        let text = self.ask(kind, prompt, space, calls).await?;
        match parse(&text) {
            Ok(value) => Ok(value),
            Err(_) => {
                let retry = self.ask(kind, prompt, space, calls).await?;
                parse(&retry).map_err(EngineError::Prompt)
            }
        }
    }

    /// One CoT call; returns (full trace, extracted answer).
    pub async fn generate_cot(
        &self,
        task: &Task,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<(String, String), EngineError> {
        let prompt = render(
            PromptKind::Cot,
            self.domain_for(task),
            &prompts::slots([("question", task.question.as_str())]),
        )?;
        self.ask_parsed(
            PromptKind::Cot,
            &prompt,
            |text| extract_tag(text, "answer").map(|a| (text.to_string(), a)),
            space,
            calls,
        )
        .await
    }

    async fn decompose_inner(
        &self,
        task: &Task,
        trace: &str,
        answer: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Vec<SocraticStep>, EngineError> {
        let prompt = render_decompose_capped(
            self.domain_for(task),
            &task.question,
            trace,
            answer,
            self.config.max_steps,
        )?;
        let parsed = self
            .ask_parsed(PromptKind::DecomposeSsr, &prompt, parse_decomposition, space, calls)
            .await?;
        Ok(parsed
            .steps
            .into_iter()
            .enumerate()
            .map(|(index, s)| SocraticStep { index, sub_question: s.description, sub_answer: s.answer })
            .collect())
    }

    /// Decompose a response into socratic steps, enforcing that the last
    /// sub-answer agrees with the response's final answer.
    pub async fn decompose(
        &self,
        task: &Task,
        trace: &str,
        answer: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
        warnings: &mut Vec<String>,
    ) -> Result<Decomposition, EngineError> {
        let mut steps = self.decompose_inner(task, trace, answer, space, calls).await?;
        let last = steps.last().expect("parser rejects empty decompositions");
        if !sub_answer_equivalent(&last.sub_answer, answer, task.kind) {
            if self.config.overwrite_final_mismatch {
                warnings.push(format!(
                    "decomposition final sub-answer {:?} overwritten with response answer {:?}",
                    last.sub_answer, answer
                ));
                steps.last_mut().expect("non-empty").sub_answer = answer.to_string();
            } else {
                return Err(EngineError::DecompositionMismatch {
                    expected: answer.to_string(),
                    got: last.sub_answer.clone(),
                });
            }
        }
        Ok(Decomposition {
            steps,
            source_trace: trace.to_string(),
            source_answer: answer.to_string(),
        })
    }

    /// Re-solve sub-questions for steps in `range`, M samples each, fanned
    /// out through the gateway. Results are slotted by (step, sample) so
    /// concurrency never affects the outcome. A sample whose answer tag
    /// fails to parse is re-asked once, then recorded as unparseable.
    async fn sample_steps(
        &self,
        task: &Task,
        decomposition: &Decomposition,
        range: std::ops::Range<usize>,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Vec<ReferenceSet>, EngineError> {
        let m = self.config.samples_per_step;
        let domain = self.domain_for(task);
        let mut prompts_by_step = Vec::new();
        let mut requests = Vec::new();
        for t in range.clone() {
            let prompt = build_solve_prompt(domain, &task.question, &decomposition.steps, t)?;
            for _ in 0..m {
                requests.push(self.request(prompt.clone(), space.next_index()));
            }
            prompts_by_step.push(prompt);
        }
        let responses = self.gateway.complete_many(&requests, self.config.parallelism).await?;
        for response in &responses {
            calls.push(CallRecord {
                prompt_kind: PromptKind::SolveSubQuestion,
                cache_hit: response.cached,
                prompt_tokens: response.prompt_tokens,
                completion_tokens: response.completion_tokens,
            });
        }
        let mut sets = Vec::new();
        for (offset, t) in range.enumerate() {
            let mut samples = Vec::with_capacity(m);
            for i in 0..m {
                let text = &responses[offset * m + i].text;
                match extract_tag(text, "answer") {
                    Ok(ans) => samples.push(Some(ans)),
                    Err(_) => {
                        let retry = self
                            .ask(PromptKind::SolveSubQuestion, &prompts_by_step[offset], space, calls)
                            .await?;
                        samples.push(extract_tag(&retry, "answer").ok());
                    }
                }
            }
            sets.push(ReferenceSet::new(t, samples, task.kind));
        }
        Ok(sets)
    }

    /// Reference set for a single step.
    pub async fn sample_reference_set(
        &self,
        task: &Task,
        decomposition: &Decomposition,
        t: usize,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<ReferenceSet, EngineError> {
        let mut sets = self.sample_steps(task, decomposition, t..t + 1, space, calls).await?;
        Ok(sets.remove(0))
    }

    /// Reference sets for every step of the decomposition.
    pub async fn sample_reference_sets(
        &self,
        task: &Task,
        decomposition: &Decomposition,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Vec<ReferenceSet>, EngineError> {
        self.sample_steps(task, decomposition, 0..decomposition.len(), space, calls).await
    }

    /// Confidence of `sub_answer` against its reference set, in the given
    /// mode. The LLM judge sees only the prediction and references; a -1
    /// ("cannot determine") answer is re-asked once and then treated as 0.
    pub async fn estimate_confidence(
        &self,
        task: &Task,
        sub_answer: &str,
        refs: &ReferenceSet,
        mode: ConfidenceMode,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<StepConfidence, EngineError> {
        match mode {
            ConfidenceMode::ExactMatch => {
                let matches = refs
                    .samples
                    .iter()
                    .flatten()
                    .filter(|s| sub_answer_equivalent(sub_answer, s, task.kind))
                    .count();
                Ok(StepConfidence {
                    step_index: refs.step_index,
                    raw_score: matches as i32,
                    normalized: matches as f64 / refs.m() as f64,
                    mode,
                })
            }
            ConfidenceMode::LlmJudged => {
                let prompt =
                    build_confidence_prompt(self.domain_for(task), sub_answer, &refs.samples)?;
                let mut score = 0;
                for attempt in 0..2 {
                    let text =
                        self.ask(PromptKind::ConfidenceEstimate, &prompt, space, calls).await?;
                    match parse_score(&text) {
                        Ok(-1) if attempt == 0 => continue,
                        Ok(-1) => {
                            score = 0;
                            break;
                        }
                        Ok(s) => {
                            score = s;
                            break;
                        }
                        Err(_) if attempt == 0 => continue,
                        Err(e) => return Err(EngineError::Prompt(e)),
                    }
                }
                Ok(StepConfidence {
                    step_index: refs.step_index,
                    raw_score: score,
                    normalized: score as f64 / 5.0,
                    mode,
                })
            }
        }
    }

    /// Rewrite the response around the socratic feedback triplet.
    #[allow(clippy::too_many_arguments)]
    pub async fn refine_with_feedback(
        &self,
        task: &Task,
        trace: &str,
        decomposition: &Decomposition,
        weakest: usize,
        feedback: &SocraticFeedback,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
        warnings: &mut Vec<String>,
    ) -> Result<(String, String), EngineError> {
        let domain = self.domain_for(task);
        let cot_instruction = render(
            PromptKind::Cot,
            domain,
            &prompts::slots([("question", task.question.as_str())]),
        )?;
        let prompt = match self.config.completeness {
            Completeness::Reflection => {
                let context = match self.config.context_format {
                    ContextFormat::Natural => trace.to_string(),
                    ContextFormat::Socratic => {
                        render_socratic_prefix(&decomposition.steps, decomposition.len())
                    }
                };
                let reflection = render(
                    PromptKind::Reflection,
                    domain,
                    &prompts::slots([
                        ("wrong_question", feedback.sub_question.as_str()),
                        ("wrong_answer", feedback.original_answer.as_str()),
                        ("revised_answer", feedback.revised_answer.as_str()),
                    ]),
                )?;
                render(
                    PromptKind::RefineSsr,
                    domain,
                    &prompts::slots([
                        ("cot_instruction", cot_instruction.as_str()),
                        ("cot_reasoning_trace", context.as_str()),
                        ("reflection", reflection.as_str()),
                    ]),
                )?
            }
            Completeness::Intervention => {
                // Context stops strictly before the weakest step; the
                // corrected sub-answer is injected and the model continues
                // from there. Nothing at or after the weakest step appears.
                let prefix = match self.config.context_format {
                    ContextFormat::Natural => render_natural_prefix(&decomposition.steps, weakest),
                    ContextFormat::Socratic => render_socratic_prefix(&decomposition.steps, weakest),
                };
                let corrected = format!(
                    "Sub-question {}: {}\nSub-answer {} (corrected): {}",
                    weakest + 1,
                    feedback.sub_question,
                    weakest + 1,
                    feedback.revised_answer
                );
                format!(
                    "{cot_instruction}\n\nReasoning so far:\n{prefix}\n\n{corrected}\n\n\
                     Continue the reasoning from the corrected sub-answer above and solve the \
                     original question. Enclose the final answer within <answer></answer> tags."
                )
            }
        };
        let (text, answer) = self
            .ask_parsed(
                PromptKind::RefineSsr,
                &prompt,
                |text| extract_tag(text, "answer").map(|a| (text.to_string(), a)),
                space,
                calls,
            )
            .await?;
        if self.config.completeness == Completeness::Reflection
            && extract_tag(&text, "evaluation").is_err()
        {
            warnings.push("refinement response missing <evaluation> tag".to_string());
        }
        Ok((text, answer))
    }

    /// Judge the current response; returns (judge text, 0-5 score).
    pub async fn verify_response(
        &self,
        task: &Task,
        trace: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<(String, i32), EngineError> {
        let prompt = render(
            PromptKind::Verification,
            self.domain_for(task),
            &prompts::slots([("question", task.question.as_str()), ("response", trace)]),
        )?;
        self.ask_parsed(
            PromptKind::Verification,
            &prompt,
            |text| parse_score(text).map(|s| (text.to_string(), s)),
            space,
            calls,
        )
        .await
    }

    /// Holistic rewrite addressing the judge's feedback.
    pub async fn refine_normal(
        &self,
        task: &Task,
        trace: &str,
        judge_response: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<(String, String), EngineError> {
        let prompt = render(
            PromptKind::RefineNormal,
            self.domain_for(task),
            &prompts::slots([
                ("question", task.question.as_str()),
                ("original_cot_response", trace),
                ("judge_response", judge_response),
            ]),
        )?;
        self.ask_parsed(
            PromptKind::RefineNormal,
            &prompt,
            |text| extract_tag(text, "answer").map(|a| (text.to_string(), a)),
            space,
            calls,
        )
        .await
    }

    /// Judge-synthesized best answer over multiple candidate solutions
    /// (the ensemble prompt). Used by best-of-K scoring.
    pub async fn ensemble_choice(
        &self,
        task: &Task,
        solutions: &[&str],
        space: &mut SampleSpace,
    ) -> Result<String, EngineError> {
        let rendered = solutions
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Solution {}:\n{}", i + 1, s))
            .collect::<Vec<_>>()
            .join("\n\n");
        let prompt = render(
            PromptKind::Ensemble,
            self.domain_for(task),
            &prompts::slots([("question", task.question.as_str()), ("solutions", rendered.as_str())]),
        )?;
        let mut calls = Vec::new();
        self.ask_parsed(
            PromptKind::Ensemble,
            &prompt,
            |text| extract_tag(text, "answer"),
            space,
            &mut calls,
        )
        .await
    }

    /// One Self-Refine round: judge, then rewrite against the judge text.
    pub async fn self_refine_round(
        &self,
        task: &Task,
        trace: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<(String, String, i32), EngineError> {
        let (judge_text, score) = self.verify_response(task, trace, space, calls).await?;
        let (new_trace, new_answer) =
            self.refine_normal(task, trace, &judge_text, space, calls).await?;
        Ok((new_trace, new_answer, score))
    }

    /// One round of plan refinement: extract the sub-question sequence,
    /// judge whether the high-level plan is sound, and rewrite once if not.
    async fn plan_refine(
        &self,
        task: &Task,
        trace: &str,
        answer: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
    ) -> Result<PlanOutcome, EngineError> {
        let steps = self.decompose_inner(task, trace, answer, space, calls).await?;
        let plan_text = steps
            .iter()
            .map(|s| format!("{}. {}", s.index + 1, s.sub_question))
            .collect::<Vec<_>>()
            .join("\n");
        let plan_response = format!(
            "High-level plan extracted from the current solution (the sequence of sub-questions \
             it answers, in order):\n{plan_text}"
        );
        let prompt = render(
            PromptKind::Verification,
            self.domain_for(task),
            &prompts::slots([
                ("question", task.question.as_str()),
                ("response", plan_response.as_str()),
            ]),
        )?;
        let (judge_text, score) = self
            .ask_parsed(
                PromptKind::Verification,
                &prompt,
                |text| parse_score(text).map(|s| (text.to_string(), s)),
                space,
                calls,
            )
            .await?;
        if score >= 5 {
            return Ok(PlanOutcome {
                trace: trace.to_string(),
                answer: answer.to_string(),
                changed: false,
                judge_score: score,
            });
        }
        let (new_trace, new_answer) =
            self.refine_normal(task, trace, &judge_text, space, calls).await?;
        Ok(PlanOutcome { trace: new_trace, answer: new_answer, changed: true, judge_score: score })
    }

    /// Full socratic pipeline for one iteration: decompose, re-solve every
    /// step, estimate confidences, pick the weakest step, majority-vote its
    /// revision, and refine — unless everything is unanimous and unchanged.
    async fn socratic_pass(
        &self,
        task: &Task,
        trace: &str,
        answer: &str,
        space: &mut SampleSpace,
        calls: &mut Vec<CallRecord>,
        warnings: &mut Vec<String>,
    ) -> Result<SocraticPass, EngineError> {
        let decomposition = self.decompose(task, trace, answer, space, calls, warnings).await?;
        let sets = self.sample_reference_sets(task, &decomposition, space, calls).await?;
        let mode = self.confidence_mode_for(task);
        let mut confidences = Vec::with_capacity(sets.len());
        for (step, refs) in decomposition.steps.iter().zip(&sets) {
            let conf =
                self.estimate_confidence(task, &step.sub_answer, refs, mode, space, calls).await?;
            confidences.push(conf);
        }
        let weakest = select_weakest(&confidences).expect("decomposition is non-empty");
        let revised = majority_sub_answer(&sets[weakest])?;
        let original = decomposition.steps[weakest].sub_answer.clone();
        let unanimous = confidences.iter().all(|c| c.normalized == 1.0);
        if self.config.skip_unanimous
            && unanimous
            && sub_answer_equivalent(&revised, &original, task.kind)
        {
            return Ok(SocraticPass {
                trace: trace.to_string(),
                answer: answer.to_string(),
                decomposition: decomposition.steps,
                confidences,
                feedback: None,
                refined: false,
            });
        }
        let feedback = SocraticFeedback {
            sub_question: decomposition.steps[weakest].sub_question.clone(),
            original_answer: original,
            revised_answer: revised,
        };
        let (new_trace, new_answer) = self
            .refine_with_feedback(
                task,
                trace,
                &decomposition,
                weakest,
                &feedback,
                space,
                calls,
                warnings,
            )
            .await?;
        Ok(SocraticPass {
            trace: new_trace,
            answer: new_answer,
            decomposition: decomposition.steps,
            confidences,
            feedback: Some(feedback),
            refined: true,
        })
    }

    /// Run a method over one task. Fatal errors abort the loop but the
    /// partial transcript (with the error message) is still returned.
    pub async fn run(
        &self,
        task: &Task,
        method: Method,
        seed: u64,
        repeat: u32,
        slot: u32,
        config_snapshot: serde_json::Value,
    ) -> Transcript {
        let mut transcript =
            Transcript::new(task.id.clone(), method, seed, repeat, slot, config_snapshot);
        let mut space = SampleSpace::new(seed);
        if let Err(e) = self.run_inner(task, method, &mut space, &mut transcript).await {
            transcript.error = Some(e.to_string());
        }
        transcript.recompute_totals();
        transcript
    }

    async fn run_inner(
        &self,
        task: &Task,
        method: Method,
        space: &mut SampleSpace,
        transcript: &mut Transcript,
    ) -> Result<(), EngineError> {
        let mut calls = Vec::new();
        let (cot_trace, cot_answer) = self.generate_cot(task, space, &mut calls).await?;
        let mut record = IterationRecord::new(0, Route::None, cot_trace.clone(), cot_answer.clone());
        record.calls = calls;
        transcript.iterations.push(record);
        let mut trace = cot_trace;
        let mut answer = cot_answer;

        if method == Method::SsrPlan {
            let mut calls = Vec::new();
            let outcome = self.plan_refine(task, &trace, &answer, space, &mut calls).await?;
            let mut record = IterationRecord::new(
                transcript.iterations.len(),
                Route::Plan,
                outcome.trace.clone(),
                outcome.answer.clone(),
            );
            record.judge_score = Some(outcome.judge_score);
            record.plan_changed = Some(outcome.changed);
            record.calls = calls;
            transcript.iterations.push(record);
            trace = outcome.trace;
            answer = outcome.answer;
        }

        if method != Method::Cot {
            for _ in 1..=self.config.iterations {
                let k = transcript.iterations.len();
                let mut calls = Vec::new();
                let mut warnings = Vec::new();
                let mut record = match method {
                    Method::Cot => unreachable!("handled above"),
                    Method::SelfRefine => {
                        let (new_trace, new_answer, score) =
                            self.self_refine_round(task, &trace, space, &mut calls).await?;
                        trace = new_trace;
                        answer = new_answer;
                        let mut rec =
                            IterationRecord::new(k, Route::SelfRefine, trace.clone(), answer.clone());
                        rec.judge_score = Some(score);
                        rec
                    }
                    Method::SsrLin => {
                        let pass = self
                            .socratic_pass(task, &trace, &answer, space, &mut calls, &mut warnings)
                            .await?;
                        trace = pass.trace.clone();
                        answer = pass.answer.clone();
                        let route = if pass.refined { Route::Socratic } else { Route::None };
                        let mut rec = IterationRecord::new(k, route, pass.trace, pass.answer);
                        rec.decomposition = Some(pass.decomposition);
                        rec.confidences = Some(pass.confidences);
                        rec.feedback = pass.feedback;
                        rec
                    }
                    Method::SsrAda | Method::SsrPlan => {
                        let (judge_text, score) =
                            self.verify_response(task, &trace, space, &mut calls).await?;
                        if score < 5 {
                            let (new_trace, new_answer) = self
                                .refine_normal(task, &trace, &judge_text, space, &mut calls)
                                .await?;
                            trace = new_trace;
                            answer = new_answer;
                            let mut rec = IterationRecord::new(
                                k,
                                Route::SelfRefine,
                                trace.clone(),
                                answer.clone(),
                            );
                            rec.judge_score = Some(score);
                            rec
                        } else {
                            let pass = self
                                .socratic_pass(task, &trace, &answer, space, &mut calls, &mut warnings)
                                .await?;
                            trace = pass.trace.clone();
                            answer = pass.answer.clone();
                            let route = if pass.refined { Route::Socratic } else { Route::None };
                            let mut rec = IterationRecord::new(k, route, pass.trace, pass.answer);
                            rec.judge_score = Some(score);
                            rec.decomposition = Some(pass.decomposition);
                            rec.confidences = Some(pass.confidences);
                            rec.feedback = pass.feedback;
                            rec
                        }
                    }
                };
                record.calls = calls;
                record.warnings = warnings;
                transcript.iterations.push(record);
            }
        }

        if self.config.final_self_eval {
            let mut calls = Vec::new();
            let (_, score) = self.verify_response(task, &trace, space, &mut calls).await?;
            transcript.final_score = Some(score);
            transcript.final_eval_calls = calls;
        }
        Ok(())
    }
}
