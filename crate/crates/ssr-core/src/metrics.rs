//! Evaluation metrics over persisted transcripts.
//!
//! Everything here is a pure function of (tasks, transcripts): last-round
//! accuracy, majority voting over parallel slots, pass@K, judge-selected
//! best-of-K, step-score aggregation, incorrect-trace detection quality
//! (AUROC and precision/recall at the optimal threshold), and scaling
//! series. Unparseable or missing final answers count as incorrect
//! everywhere; spread is the sample standard deviation across repeats.

use crate::engine::{Engine, EngineError, SampleSpace, Transcript};
use crate::taskgen::Task;
use crate::verify::{self, AnswerKind};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("run set is empty")]
    EmptyRunSet,
    #[error("transcript references unknown task {0:?}")]
    UnknownTask(String),
    #[error("grouping incomplete: no transcript for task {task_id:?} repeat {repeat} slot {slot}")]
    IncompleteGrouping { task_id: String, repeat: u32, slot: u32 },
    #[error("duplicate transcript for task {task_id:?} repeat {repeat} slot {slot}")]
    DuplicateCell { task_id: String, repeat: u32, slot: u32 },
    #[error("requested k={k} exceeds parallel width {n}")]
    InsufficientParallelism { k: u32, n: u32 },
    #[error("judge quality needs at least one positive and one negative label")]
    DegenerateLabels,
    #[error("confidence list is empty")]
    EmptyConfidences,
    #[error("no run set for budget {0}")]
    MissingBudget(u32),
    #[error("transcript schema version {found:?} incompatible with {expected:?}")]
    SchemaVersionMismatch { found: String, expected: String },
    #[error("failed to read transcripts from {path}: {message}")]
    Load { path: String, message: String },
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
}

/// mean ± std over repeats (sample standard deviation; 0 for one repeat).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn mean_std(values: &[f64]) -> MetricValue {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MetricValue { mean, std, n }
}

/// Transcripts grouped by (task, repeat, slot), plus the tasks that ground
/// them. The grouping must be total: every cell of the
/// task x repeat x slot cube is present exactly once.
pub struct RunSet {
    pub tasks: BTreeMap<String, Task>,
    pub task_ids: Vec<String>,
    pub transcripts: BTreeMap<(String, u32, u32), Transcript>,
    pub repeats: u32,
    pub parallel: u32,
}

impl RunSet {
    pub fn new(tasks: Vec<Task>, transcripts: Vec<Transcript>) -> Result<Self, MetricsError> {
        if transcripts.is_empty() {
            return Err(MetricsError::EmptyRunSet);
        }
        let tasks: BTreeMap<String, Task> =
            tasks.into_iter().map(|t| (t.id.clone(), t)).collect();
        let mut keyed = BTreeMap::new();
        let mut repeats = 0;
        let mut parallel = 0;
        let mut task_ids: Vec<String> = Vec::new();
        for t in transcripts {
            if !tasks.contains_key(&t.task_id) {
                return Err(MetricsError::UnknownTask(t.task_id));
            }
            repeats = repeats.max(t.repeat + 1);
            parallel = parallel.max(t.slot + 1);
            if !task_ids.contains(&t.task_id) {
                task_ids.push(t.task_id.clone());
            }
            let key = (t.task_id.clone(), t.repeat, t.slot);
            if keyed.insert(key.clone(), t).is_some() {
                return Err(MetricsError::DuplicateCell {
                    task_id: key.0,
                    repeat: key.1,
                    slot: key.2,
                });
            }
        }
        for id in &task_ids {
            for r in 0..repeats {
                for s in 0..parallel {
                    if !keyed.contains_key(&(id.clone(), r, s)) {
                        return Err(MetricsError::IncompleteGrouping {
                            task_id: id.clone(),
                            repeat: r,
                            slot: s,
                        });
                    }
                }
            }
        }
        task_ids.sort();
        Ok(RunSet { tasks, task_ids, transcripts: keyed, repeats, parallel })
    }

    fn get(&self, task_id: &str, repeat: u32, slot: u32) -> &Transcript {
        &self.transcripts[&(task_id.to_string(), repeat, slot)]
    }

    fn kind(&self, task_id: &str) -> AnswerKind {
        self.tasks[task_id].kind
    }

    fn ground_truth(&self, task_id: &str) -> &str {
        &self.tasks[task_id].ground_truth
    }

    fn answer_correct(&self, task_id: &str, answer: Option<&str>) -> bool {
        match answer {
            Some(a) => verify::equivalent(a, self.ground_truth(task_id), self.kind(task_id)),
            None => false,
        }
    }
}

fn lr_acc_filtered(runset: &RunSet, slot: Option<u32>) -> MetricValue {
    let slots: Vec<u32> = match slot {
        Some(s) => vec![s],
        None => (0..runset.parallel).collect(),
    };
    let per_repeat: Vec<f64> = (0..runset.repeats)
        .map(|r| {
            let mut correct = 0usize;
            let mut total = 0usize;
            for id in &runset.task_ids {
                for &s in &slots {
                    let t = runset.get(id, r, s);
                    total += 1;
                    if runset.answer_correct(id, t.final_answer()) {
                        correct += 1;
                    }
                }
            }
            correct as f64 / total as f64
        })
        .collect();
    mean_std(&per_repeat)
}

/// Fraction of runs whose final-iteration answer matches ground truth.
pub fn lr_acc(runset: &RunSet) -> MetricValue {
    lr_acc_filtered(runset, None)
}

/// `lr_acc` restricted to one parallel slot.
pub fn lr_acc_slot(runset: &RunSet, slot: u32) -> MetricValue {
    lr_acc_filtered(runset, Some(slot))
}

/// Majority vote over the first k parallel slots' final answers, per task
/// per repeat. Missing answers abstain; an all-abstain vote counts wrong.
pub fn lr_maj_at_k(runset: &RunSet, k: u32) -> Result<MetricValue, MetricsError> {
    if k == 0 || k > runset.parallel {
        return Err(MetricsError::InsufficientParallelism { k, n: runset.parallel });
    }
    let per_repeat: Vec<f64> = (0..runset.repeats)
        .map(|r| {
            let mut correct = 0usize;
            for id in &runset.task_ids {
                let answers: Vec<String> = (0..k)
                    .filter_map(|s| runset.get(id, r, s).final_answer().map(str::to_string))
                    .collect();
                if let Some((winner, _)) = verify::majority_answer(&answers, runset.kind(id)) {
                    if runset.answer_correct(id, Some(&winner)) {
                        correct += 1;
                    }
                }
            }
            correct as f64 / runset.task_ids.len() as f64
        })
        .collect();
    Ok(mean_std(&per_repeat))
}

/// A run counts correct if ANY iteration's answer (iteration 0 included)
/// matches ground truth.
pub fn pass_at_k(runset: &RunSet) -> MetricValue {
    let per_repeat: Vec<f64> = (0..runset.repeats)
        .map(|r| {
            let mut correct = 0usize;
            let mut total = 0usize;
            for id in &runset.task_ids {
                for s in 0..runset.parallel {
                    let t = runset.get(id, r, s);
                    total += 1;
                    if t.iterations
                        .iter()
                        .any(|it| runset.answer_correct(id, Some(it.answer.as_str())))
                    {
                        correct += 1;
                    }
                }
            }
            correct as f64 / total as f64
        })
        .collect();
    mean_std(&per_repeat)
}

/// Best-of-K accuracy: an LLM judge synthesizes the best answer from the
/// run's iterations via the ensemble prompt. Judge failures count wrong.
pub async fn bok_acc(runset: &RunSet, engine: &Engine) -> Result<MetricValue, MetricsError> {
    let mut per_repeat = Vec::with_capacity(runset.repeats as usize);
    for r in 0..runset.repeats {
        let mut correct = 0usize;
        let mut total = 0usize;
        for id in &runset.task_ids {
            let task = &runset.tasks[id.as_str()];
            for s in 0..runset.parallel {
                let t = runset.get(id, r, s);
                total += 1;
                let solutions: Vec<&str> =
                    t.iterations.iter().map(|it| it.trace.as_str()).collect();
                if solutions.is_empty() {
                    continue;
                }
                let mut space = SampleSpace::new(t.seed ^ 0xb0c0_ffee);
                match engine.ensemble_choice(task, &solutions, &mut space).await {
                    Ok(choice) => {
                        if runset.answer_correct(id, Some(&choice)) {
                            correct += 1;
                        }
                    }
                    Err(EngineError::Prompt(_)) => {} // unparseable twice: wrong
                    Err(e) => return Err(e.into()),
                }
            }
        }
        per_repeat.push(correct as f64 / total as f64);
    }
    Ok(mean_std(&per_repeat))
}

/// How step confidences collapse into one response-level score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    Min,
    Mean,
    MeanLog,
}

/// Collapse step confidences. `MeanLog` is the mean of natural logs with
/// zeros floored at 1/(5*M*10) so a single zero-confidence step stays
/// finite but dominates.
pub fn aggregate_step_scores(
    confidences: &[f64],
    mode: Aggregation,
    samples_per_step: usize,
) -> Result<f64, MetricsError> {
    if confidences.is_empty() {
        return Err(MetricsError::EmptyConfidences);
    }
    Ok(match mode {
        Aggregation::Min => confidences.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Mean => confidences.iter().sum::<f64>() / confidences.len() as f64,
        Aggregation::MeanLog => {
            let eps = 1.0 / (5.0 * samples_per_step as f64 * 10.0);
            confidences.iter().map(|c| c.max(eps).ln()).sum::<f64>() / confidences.len() as f64
        }
    })
}

/// One scored response for incorrect-trace detection. Incorrect responses
/// are the positive label; low confidence should predict them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeSample {
    pub score: f64,
    pub is_incorrect: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdCriterion {
    F1,
    YoudenJ,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeQuality {
    pub auroc: f64,
    pub precision_star: f64,
    pub recall_star: f64,
    pub threshold_star: f64,
}

/// Detection quality of a confidence signal. AUROC is the rank statistic
/// with tie correction: the fraction of (positive, negative) pairs where
/// the positive (incorrect) sample scores LOWER confidence, ties counting
/// half. The optimal threshold maximizes the chosen criterion over all
/// distinct score cut-points, classifying `score <= threshold` as positive.
pub fn judge_quality(
    samples: &[JudgeSample],
    criterion: ThresholdCriterion,
) -> Result<JudgeQuality, MetricsError> {
    let positives: Vec<f64> =
        samples.iter().filter(|s| s.is_incorrect).map(|s| s.score).collect();
    let negatives: Vec<f64> =
        samples.iter().filter(|s| !s.is_incorrect).map(|s| s.score).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(MetricsError::DegenerateLabels);
    }
    let mut pair_sum = 0.0;
    for p in &positives {
        for n in &negatives {
            if p < n {
                pair_sum += 1.0;
            } else if p == n {
                pair_sum += 0.5;
            }
        }
    }
    let auroc = pair_sum / (positives.len() as f64 * negatives.len() as f64);

    let mut thresholds: Vec<f64> = samples.iter().map(|s| s.score).collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    thresholds.dedup();
    let mut best: Option<(f64, f64, f64, f64)> = None; // (criterion value, thr, prec, rec)
    for &thr in &thresholds {
        let tp = positives.iter().filter(|&&s| s <= thr).count() as f64;
        let fp = negatives.iter().filter(|&&s| s <= thr).count() as f64;
        let fn_ = positives.len() as f64 - tp;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = tp / positives.len() as f64;
        let value = match criterion {
            ThresholdCriterion::F1 => {
                if 2.0 * tp + fp + fn_ > 0.0 {
                    2.0 * tp / (2.0 * tp + fp + fn_)
                } else {
                    0.0
                }
            }
            ThresholdCriterion::YoudenJ => {
                let tpr = recall;
                let fpr = fp / negatives.len() as f64;
                tpr - fpr
            }
        };
        match best {
            Some((v, _, _, _)) if value <= v => {}
            _ => best = Some((value, thr, precision, recall)),
        }
    }
    let (_, threshold_star, precision_star, recall_star) = best.expect("thresholds non-empty");
    Ok(JudgeQuality { auroc, precision_star, recall_star, threshold_star })
}

/// Build judge samples from a run set: each transcript's last iteration
/// carrying step confidences is aggregated into one score; its label is
/// whether the final answer is incorrect. Transcripts without confidences
/// are skipped.
pub fn collect_judge_samples(
    runset: &RunSet,
    mode: Aggregation,
    samples_per_step: usize,
) -> Vec<JudgeSample> {
    let mut out = Vec::new();
    for t in runset.transcripts.values() {
        let confs = t.iterations.iter().rev().find_map(|it| it.confidences.as_ref());
        let Some(confs) = confs else { continue };
        let values: Vec<f64> = confs.iter().map(|c| c.normalized).collect();
        let Ok(score) = aggregate_step_scores(&values, mode, samples_per_step) else { continue };
        let is_incorrect = !runset.answer_correct(&t.task_id, t.final_answer());
        out.push(JudgeSample { score, is_incorrect });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParallelAggregation {
    MajN,
    Wbon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingMode {
    /// Budgets are iteration counts K; accuracy is last-round accuracy.
    Sequential,
    /// Budgets are parallel widths N; slot answers aggregate by majority
    /// vote or score-weighted best-of-N (final self-eval scores).
    Parallel(ParallelAggregation),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub budget: u32,
    pub accuracy: f64,
    pub std: f64,
    pub est_tokens: f64,
}

/// One row per requested budget, with token totals from transcript cost
/// counters. Parallel budgets price all N slots of a vote.
pub fn scaling_series(
    runsets: &BTreeMap<u32, RunSet>,
    budgets: &[u32],
    mode: ScalingMode,
) -> Result<Vec<ScalingRow>, MetricsError> {
    let mut rows = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let runset = runsets.get(&budget).ok_or(MetricsError::MissingBudget(budget))?;
        let row = match mode {
            ScalingMode::Sequential => {
                let acc = lr_acc(runset);
                let tokens: Vec<f64> =
                    runset.transcripts.values().map(|t| t.total_tokens() as f64).collect();
                ScalingRow {
                    budget,
                    accuracy: acc.mean,
                    std: acc.std,
                    est_tokens: tokens.iter().sum::<f64>() / tokens.len() as f64,
                }
            }
            ScalingMode::Parallel(agg) => {
                let per_repeat: Vec<f64> = (0..runset.repeats)
                    .map(|r| {
                        let mut correct = 0usize;
                        for id in &runset.task_ids {
                            let kind = runset.kind(id);
                            let winner = match agg {
                                ParallelAggregation::MajN => {
                                    let answers: Vec<String> = (0..runset.parallel)
                                        .filter_map(|s| {
                                            runset.get(id, r, s).final_answer().map(str::to_string)
                                        })
                                        .collect();
                                    verify::majority_answer(&answers, kind).map(|(a, _)| a)
                                }
                                ParallelAggregation::Wbon => {
                                    let candidates: Vec<(String, u32)> = (0..runset.parallel)
                                        .filter_map(|s| {
                                            let t = runset.get(id, r, s);
                                            t.final_answer().map(|a| {
                                                (
                                                    a.to_string(),
                                                    t.final_score.unwrap_or(0).max(0) as u32,
                                                )
                                            })
                                        })
                                        .collect();
                                    verify::weighted_best_of_n(&candidates, kind)
                                }
                            };
                            if runset.answer_correct(id, winner.as_deref()) {
                                correct += 1;
                            }
                        }
                        correct as f64 / runset.task_ids.len() as f64
                    })
                    .collect();
                let acc = mean_std(&per_repeat);
                let per_vote_tokens: Vec<f64> = (0..runset.repeats)
                    .flat_map(|r| {
                        runset.task_ids.iter().map(move |id| (r, id))
                    })
                    .map(|(r, id)| {
                        (0..runset.parallel)
                            .map(|s| runset.get(id, r, s).total_tokens() as f64)
                            .sum()
                    })
                    .collect();
                ScalingRow {
                    budget,
                    accuracy: acc.mean,
                    std: acc.std,
                    est_tokens: per_vote_tokens.iter().sum::<f64>() / per_vote_tokens.len() as f64,
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Load transcripts from a JSONL file, refusing incompatible schema majors.
pub fn load_transcripts(path: &std::path::Path) -> Result<Vec<Transcript>, MetricsError> {
    let text = std::fs::read_to_string(path).map_err(|e| MetricsError::Load {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let expected_major = crate::engine::SCHEMA_VERSION.split('.').next().unwrap_or("1");
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(line).map_err(|e| MetricsError::Load {
            path: path.display().to_string(),
            message: format!("line {}: {e}", i + 1),
        })?;
        let major = t.schema_version.split('.').next().unwrap_or("");
        if major != expected_major {
            return Err(MetricsError::SchemaVersionMismatch {
                found: t.schema_version.clone(),
                expected: crate::engine::SCHEMA_VERSION.to_string(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{IterationRecord, Method, Route};

    fn task(id: &str, gt: &str) -> Task {
        Task {
            id: id.into(),
            question: format!("{id}?"),
            ground_truth: gt.into(),
            kind: AnswerKind::Numeric,
            meta: BTreeMap::new(),
        }
    }

    fn transcript(task_id: &str, repeat: u32, slot: u32, answers: &[&str]) -> Transcript {
        let mut t = Transcript::new(
            task_id.into(),
            Method::Cot,
            (repeat as u64) << 8 | slot as u64,
            repeat,
            slot,
            serde_json::json!({}),
        );
        for (k, a) in answers.iter().enumerate() {
            t.iterations.push(IterationRecord::new(
                k,
                Route::None,
                format!("trace {k}"),
                a.to_string(),
            ));
        }
        t
    }

    #[test]
    fn lr_acc_single_repeat() {
        let tasks = vec![task("a", "1"), task("b", "2")];
        let transcripts =
            vec![transcript("a", 0, 0, &["1"]), transcript("b", 0, 0, &["9"])];
        let rs = RunSet::new(tasks, transcripts).unwrap();
        let v = lr_acc(&rs);
        assert_eq!(v.mean, 0.5);
        assert_eq!(v.std, 0.0);
        assert_eq!(v.n, 1);
    }

    #[test]
    fn lr_acc_hand_computed_std() {
        // two repeats with accuracies 1.0 and 0.0: mean 0.5, sample std
        // sqrt(((0.5)^2 + (0.5)^2) / 1) = sqrt(1/2) = 0.7071...
        let tasks = vec![task("a", "1")];
        let transcripts = vec![transcript("a", 0, 0, &["1"]), transcript("a", 1, 0, &["7"])];
        let rs = RunSet::new(tasks, transcripts).unwrap();
        let v = lr_acc(&rs);
        assert_eq!(v.mean, 0.5);
        assert!((v.std - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_final_counts_wrong() {
        let tasks = vec![task("a", "1")];
        let mut t = transcript("a", 0, 0, &[]);
        t.error = Some("parse failure".into());
        let rs = RunSet::new(tasks, vec![t]).unwrap();
        assert_eq!(lr_acc(&rs).mean, 0.0);
    }

    #[test]
    fn maj_at_k_votes_over_slots() {
        let tasks = vec![task("a", "7")];
        let transcripts = vec![
            transcript("a", 0, 0, &["7"]),
            transcript("a", 0, 1, &["7"]),
            transcript("a", 0, 2, &["3"]),
            transcript("a", 0, 3, &["7"]),
            transcript("a", 0, 4, &["5"]),
        ];
        let rs = RunSet::new(tasks, transcripts).unwrap();
        assert_eq!(lr_maj_at_k(&rs, 5).unwrap().mean, 1.0);
        assert!(matches!(
            lr_maj_at_k(&rs, 6),
            Err(MetricsError::InsufficientParallelism { k: 6, n: 5 })
        ));
    }

    #[test]
    fn maj_tie_earliest_class_decides() {
        // slots split 2-2: earliest class ("9", wrong) wins the tie
        let tasks = vec![task("a", "7")];
        let transcripts = vec![
            transcript("a", 0, 0, &["9"]),
            transcript("a", 0, 1, &["7"]),
            transcript("a", 0, 2, &["9"]),
            transcript("a", 0, 3, &["7"]),
        ];
        let rs = RunSet::new(tasks, transcripts).unwrap();
        assert_eq!(lr_maj_at_k(&rs, 4).unwrap().mean, 0.0);
    }

    #[test]
    fn maj_at_1_equals_slot0_lr_acc() {
        let tasks = vec![task("a", "7"), task("b", "1")];
        let transcripts = vec![
            transcript("a", 0, 0, &["7"]),
            transcript("a", 0, 1, &["3"]),
            transcript("b", 0, 0, &["2"]),
            transcript("b", 0, 1, &["1"]),
        ];
        let rs = RunSet::new(tasks, transcripts).unwrap();
        assert_eq!(lr_maj_at_k(&rs, 1).unwrap().mean, lr_acc_slot(&rs, 0).mean);
    }

    #[test]
    fn pass_at_k_any_iteration() {
        let tasks = vec![task("a", "7"), task("b", "7")];
        let transcripts = vec![
            transcript("a", 0, 0, &["3", "7", "4"]),
            transcript("b", 0, 0, &["3", "4", "5"]),
        ];
        let rs = RunSet::new(tasks, transcripts).unwrap();
        assert_eq!(pass_at_k(&rs).mean, 0.5);
        assert_eq!(lr_acc(&rs).mean, 0.0);
    }

    #[test]
    fn pass_at_k_dominates_lr_acc_on_random_fixtures() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let tasks = vec![task("a", "1"), task("b", "2"), task("c", "3")];
            let mut transcripts = Vec::new();
            for id in ["a", "b", "c"] {
                for r in 0..2 {
                    let answers: Vec<String> =
                        (0..4).map(|_| rng.gen_range(1..=3).to_string()).collect();
                    let refs: Vec<&str> = answers.iter().map(|s| s.as_str()).collect();
                    transcripts.push(transcript(id, r, 0, &refs));
                }
            }
            let rs = RunSet::new(tasks, transcripts).unwrap();
            assert!(pass_at_k(&rs).mean >= lr_acc(&rs).mean - 1e-12);
        }
    }

    #[test]
    fn aggregation_modes() {
        let confs = [1.0, 0.4, 0.8];
        assert_eq!(aggregate_step_scores(&confs, Aggregation::Min, 5).unwrap(), 0.4);
        let mean = aggregate_step_scores(&confs, Aggregation::Mean, 5).unwrap();
        assert!((mean - (2.2 / 3.0)).abs() < 1e-12);
        let ml = aggregate_step_scores(&[0.5, 0.5], Aggregation::MeanLog, 5).unwrap();
        assert!((ml - 0.5f64.ln()).abs() < 1e-12);
        let one = [1.0];
        assert_eq!(aggregate_step_scores(&one, Aggregation::Min, 5).unwrap(), 1.0);
        assert_eq!(aggregate_step_scores(&one, Aggregation::Mean, 5).unwrap(), 1.0);
        assert_eq!(aggregate_step_scores(&one, Aggregation::MeanLog, 5).unwrap(), 0.0);
        assert!(matches!(
            aggregate_step_scores(&[], Aggregation::Min, 5),
            Err(MetricsError::EmptyConfidences)
        ));
        // zero floored at 1/(5*M*10)
        let floored = aggregate_step_scores(&[0.0], Aggregation::MeanLog, 5).unwrap();
        assert!((floored - (1.0f64 / 250.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn judge_quality_perfect_separation() {
        let samples = [
            JudgeSample { score: 5.0, is_incorrect: false },
            JudgeSample { score: 1.0, is_incorrect: true },
        ];
        let q = judge_quality(&samples, ThresholdCriterion::F1).unwrap();
        assert_eq!(q.auroc, 1.0);
        assert_eq!(q.precision_star, 1.0);
        assert_eq!(q.recall_star, 1.0);
        assert_eq!(q.threshold_star, 1.0);
    }

    #[test]
    fn judge_quality_all_ties_is_half() {
        let samples = [
            JudgeSample { score: 3.0, is_incorrect: false },
            JudgeSample { score: 3.0, is_incorrect: true },
            JudgeSample { score: 3.0, is_incorrect: false },
        ];
        assert_eq!(judge_quality(&samples, ThresholdCriterion::F1).unwrap().auroc, 0.5);
    }

    #[test]
    fn judge_quality_matches_pairwise_oracle() {
        // 4-sample mixed case, pairwise counted by hand:
        // positives (incorrect): 2.0, 4.0; negatives: 3.0, 5.0
        // pairs: (2,3)=1, (2,5)=1, (4,3)=0, (4,5)=1 -> 3/4
        let samples = [
            JudgeSample { score: 2.0, is_incorrect: true },
            JudgeSample { score: 4.0, is_incorrect: true },
            JudgeSample { score: 3.0, is_incorrect: false },
            JudgeSample { score: 5.0, is_incorrect: false },
        ];
        assert_eq!(judge_quality(&samples, ThresholdCriterion::F1).unwrap().auroc, 0.75);
    }

    #[test]
    fn judge_quality_degenerate_labels() {
        let samples = [JudgeSample { score: 1.0, is_incorrect: true }];
        assert!(matches!(
            judge_quality(&samples, ThresholdCriterion::F1),
            Err(MetricsError::DegenerateLabels)
        ));
    }

    #[test]
    fn scaling_sequential_row_uses_lr_acc() {
        let tasks = vec![task("a", "1")];
        let rs0 = RunSet::new(tasks.clone(), vec![transcript("a", 0, 0, &["1"])]).unwrap();
        let rs1 =
            RunSet::new(tasks, vec![transcript("a", 0, 0, &["1", "2"])]).unwrap();
        let mut map = BTreeMap::new();
        map.insert(0u32, rs0);
        map.insert(1u32, rs1);
        let rows = scaling_series(&map, &[0, 1], ScalingMode::Sequential).unwrap();
        assert_eq!(rows[0].accuracy, 1.0);
        assert_eq!(rows[1].accuracy, 0.0);
        assert!(matches!(
            scaling_series(&map, &[0, 2], ScalingMode::Sequential),
            Err(MetricsError::MissingBudget(2))
        ));
    }

    #[test]
    fn scaling_parallel_majority_recomputes_maj_n() {
        let tasks = vec![task("a", "7")];
        let transcripts = vec![
            transcript("a", 0, 0, &["7"]),
            transcript("a", 0, 1, &["3"]),
            transcript("a", 0, 2, &["7"]),
        ];
        let rs = RunSet::new(tasks, transcripts).unwrap();
        let expected = lr_maj_at_k(&rs, 3).unwrap().mean;
        let mut map = BTreeMap::new();
        map.insert(3u32, rs);
        let rows =
            scaling_series(&map, &[3], ScalingMode::Parallel(ParallelAggregation::MajN)).unwrap();
        assert_eq!(rows[0].accuracy, expected);
    }

    #[test]
    fn scaling_wbon_equal_scores_matches_majority() {
        let tasks = vec![task("a", "7")];
        let mut transcripts = vec![
            transcript("a", 0, 0, &["7"]),
            transcript("a", 0, 1, &["3"]),
            transcript("a", 0, 2, &["7"]),
        ];
        for t in &mut transcripts {
            t.final_score = Some(4);
        }
        let rs = RunSet::new(tasks, transcripts).unwrap();
        let mut map = BTreeMap::new();
        map.insert(3u32, rs);
        let maj =
            scaling_series(&map, &[3], ScalingMode::Parallel(ParallelAggregation::MajN)).unwrap();
        let wbon =
            scaling_series(&map, &[3], ScalingMode::Parallel(ParallelAggregation::Wbon)).unwrap();
        assert_eq!(maj[0].accuracy, wbon[0].accuracy);
    }

    #[test]
    fn runset_rejects_gaps_and_unknowns() {
        let tasks = vec![task("a", "1")];
        let transcripts = vec![transcript("a", 0, 0, &["1"]), transcript("a", 0, 2, &["1"])];
        assert!(matches!(
            RunSet::new(tasks.clone(), transcripts),
            Err(MetricsError::IncompleteGrouping { .. })
        ));
        let transcripts = vec![transcript("zzz", 0, 0, &["1"])];
        assert!(matches!(RunSet::new(tasks, transcripts), Err(MetricsError::UnknownTask(_))));
    }
}
