//! Operator surface: configure a backend and method, run experiments over a
//! dataset, persist transcripts as JSONL, and score them.
//!
//! Commands: `run`, `report`, `judge-eval`, `scale`, `gen`. Flags override
//! the TOML config file. Every run writes `transcripts.jsonl` (one record
//! per task x repeat x slot) and `summary.json` into the output directory.

pub mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{BackendKind, RunConfig};
use futures::stream::{self, StreamExt};
use serde_json::json;
use ssr_core::engine::{unit_seed, Engine, Method, Transcript};
use ssr_core::gateway::{Gateway, GatewayConfig, HttpBackend, MockBackend, MockScript, RetryPolicy};
use ssr_core::metrics::{
    self, Aggregation, MetricValue, ParallelAggregation, RunSet, ScalingMode, ThresholdCriterion,
};
use ssr_core::taskgen::{self, Task, ZebraSpec};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

#[derive(Parser, Debug)]
#[command(name = "ssr", about = "Socratic self-refine reasoning harness", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run a refinement method over a dataset and persist transcripts.
    Run(RunArgs),
    /// Compute metrics from persisted transcripts.
    Report(ReportArgs),
    /// Evaluate confidence signals as incorrect-trace detectors.
    JudgeEval(JudgeEvalArgs),
    /// Run a budget series (sequential iterations or parallel samples).
    Scale(ScaleArgs),
    /// Generate a synthetic puzzle dataset.
    Gen(GenArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<String>,
    /// JSONL task file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Refinement iterations K.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Re-solves per sub-question M.
    #[arg(long)]
    pub samples_per_step: Option<usize>,
    /// Parallel slots N per (task, repeat).
    #[arg(long)]
    pub parallel: Option<u32>,
    /// Independent repeats R.
    #[arg(long)]
    pub repeats: Option<u32>,
    #[arg(long)]
    pub context_format: Option<String>,
    #[arg(long)]
    pub completeness: Option<String>,
    /// auto | exact-match | llm-judged
    #[arg(long)]
    pub confidence: Option<String>,
    /// Cap on decomposition length.
    #[arg(long)]
    pub max_steps: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// mock | http
    #[arg(long)]
    pub backend: Option<String>,
    /// Script file for the mock backend (JSON).
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// general (t=0.6) | reasoning (t=1.0)
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Disable the response cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Global in-flight backend call limit.
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// Refine even when every step is unanimous and unchanged.
    #[arg(long)]
    pub strict_refine: bool,
    /// Repair decomposition final-answer mismatches instead of failing.
    #[arg(long)]
    pub overwrite_final_mismatch: bool,
    /// Score the final trace once for weighted best-of-N.
    #[arg(long)]
    pub final_self_eval: bool,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Transcript JSONL files.
    #[arg(long, required = true, num_args = 1..)]
    pub transcripts: Vec<PathBuf>,
    /// Dataset the transcripts were produced from (for ground truths).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated: lr-acc, lr-maj@K, pass-at-k, bok-acc.
    #[arg(long, default_value = "lr-acc,pass-at-k")]
    pub metrics: String,
    /// Mock script for the bok-acc judge backend.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct JudgeEvalArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub transcripts: Vec<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated: min, mean, mean-log.
    #[arg(long, default_value = "min,mean,mean-log")]
    pub aggregations: String,
    /// f1 | youden-j
    #[arg(long, default_value = "f1")]
    pub criterion: String,
    /// M used when flooring zero confidences in mean-log.
    #[arg(long, default_value_t = 5)]
    pub samples_per_step: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// sequential (vary K) | parallel (vary N)
    #[arg(long)]
    pub axis: String,
    /// Ascending budgets, comma-separated.
    #[arg(long)]
    pub budgets: String,
    /// Parallel-axis aggregation: maj-n | wbon.
    #[arg(long, default_value = "maj-n")]
    pub aggregation: String,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// mini-sudoku | zebra
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub entities: usize,
    #[arg(long, default_value_t = 3)]
    pub attributes: usize,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
}

fn build_gateway(config: &RunConfig, cache_dir: Option<PathBuf>) -> Result<Gateway> {
    let gw_config = GatewayConfig {
        sample_distinct: config.sample_distinct,
        token_ceiling: config.token_ceiling,
        retry: if config.backend == BackendKind::Mock {
            RetryPolicy::immediate()
        } else {
            RetryPolicy::default()
        },
        cache_dir,
        max_in_flight: Some(config.concurrency),
    };
    let gateway = match config.backend {
        BackendKind::Mock => {
            let path = config
                .mock_script
                .as_ref()
                .context("mock backend requires a mock_script path")?;
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading mock script {}", path.display()))?;
            let script: MockScript = serde_json::from_str(&text)
                .with_context(|| format!("parsing mock script {}", path.display()))?;
            Gateway::new(Arc::new(MockBackend::new(script)), gw_config)?
        }
        BackendKind::Http => {
            let http = config.http_config();
            let backend = HttpBackend::new(&http).map_err(|e| anyhow::anyhow!(e))?;
            Gateway::new(Arc::new(backend), gw_config)?
        }
    };
    Ok(gateway)
}

fn load_dataset(config: &RunConfig) -> Result<Vec<Task>> {
    let path = config.dataset.as_ref().context("no dataset configured")?;
    let tasks = taskgen::load_jsonl(path)?;
    if tasks.is_empty() {
        bail!("dataset {} contains no tasks", path.display());
    }
    Ok(tasks)
}

#[derive(Debug)]
pub struct RunOutput {
    pub transcripts: Vec<Transcript>,
    pub transcript_path: PathBuf,
    pub summary: serde_json::Value,
}

/// Execute a run: method over tasks x repeats x slots, bounded global
/// concurrency, one JSONL record per unit in deterministic order.
pub async fn cmd_run(args: &RunArgs) -> Result<RunOutput> {
    let config = RunConfig::resolve(args)?;
    let method: Method = config.method.parse().map_err(|e: String| anyhow::anyhow!(e))?;
    let tasks = load_dataset(&config)?;
    let out_dir = config.out.clone();
    std::fs::create_dir_all(&out_dir)?;
    let cache_dir = if config.no_cache {
        None
    } else {
        Some(config.cache_dir.clone().unwrap_or_else(|| out_dir.join("cache")))
    };
    let gateway = Arc::new(build_gateway(&config, cache_dir)?);
    let engine = Arc::new(Engine::new(gateway.clone(), config.engine_config()));
    let snapshot = config.snapshot();

    // unit order is the on-disk order: task (file order) / repeat / slot
    let mut units: Vec<(usize, u32, u32)> = Vec::new();
    for task_idx in 0..tasks.len() {
        for repeat in 0..config.repeats {
            for slot in 0..config.parallel {
                units.push((task_idx, repeat, slot));
            }
        }
    }
    let tasks = Arc::new(tasks);
    let unit_concurrency = config.concurrency.max(1);
    // stream in unit order; each completed transcript is appended and
    // flushed immediately, so an interrupted run loses at most the
    // in-flight tail
    let transcript_path = out_dir.join("transcripts.jsonl");
    let mut file = std::fs::File::create(&transcript_path)?;
    let mut results = stream::iter(units.into_iter().map(|(ti, r, s)| {
        let engine = engine.clone();
        let tasks = tasks.clone();
        let snapshot = snapshot.clone();
        let base_seed = config.seed;
        async move {
            let task = &tasks[ti];
            let seed = unit_seed(base_seed, &task.id, r, s);
            engine.run(task, method, seed, r, s, snapshot).await
        }
    }))
    .buffered(unit_concurrency);
    let mut transcripts: Vec<Transcript> = Vec::new();
    while let Some(transcript) = results.next().await {
        serde_json::to_writer(&mut file, &transcript)?;
        file.write_all(b"\n")?;
        file.flush()?;
        transcripts.push(transcript);
    }
    drop(results);

    let failures = transcripts.iter().filter(|t| t.error.is_some()).count();
    let runset = RunSet::new(tasks.as_ref().clone(), transcripts.clone())?;
    let acc = metrics::lr_acc(&runset);
    let cost = gateway.cost();
    let summary = json!({
        "method": config.method,
        "tasks": tasks.len(),
        "repeats": config.repeats,
        "parallel": config.parallel,
        "units": transcripts.len(),
        "failures": failures,
        "lr_acc": {"mean": acc.mean, "std": acc.std, "n": acc.n},
        "cost": cost,
    });
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!(
        "run complete: {} units, lr-acc {:.4} ± {:.4}, live calls {}, cache hits {}",
        transcripts.len(),
        acc.mean,
        acc.std,
        cost.live_calls,
        cost.cache_hits
    );
    if failures > 0 {
        eprintln!("warning: {failures} unit(s) recorded a fatal error in their transcript");
    }
    Ok(RunOutput { transcripts, transcript_path, summary })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum MetricSpec {
    LrAcc,
    LrMajAt(u32),
    PassAtK,
    BokAcc,
}

fn parse_metric_list(text: &str) -> Result<Vec<MetricSpec>> {
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let spec = match item {
            "lr-acc" => MetricSpec::LrAcc,
            "pass-at-k" => MetricSpec::PassAtK,
            "bok-acc" => MetricSpec::BokAcc,
            other => match other.strip_prefix("lr-maj@") {
                Some(k) => MetricSpec::LrMajAt(
                    k.parse().with_context(|| format!("bad k in metric {other:?}"))?,
                ),
                None => bail!(
                    "unknown metric {other:?} (expected lr-acc, lr-maj@K, pass-at-k, bok-acc)"
                ),
            },
        };
        out.push(spec);
    }
    if out.is_empty() {
        bail!("empty metric list");
    }
    Ok(out)
}

fn load_transcript_files(paths: &[PathBuf]) -> Result<Vec<Transcript>> {
    let mut all = Vec::new();
    for path in paths {
        all.extend(metrics::load_transcripts(path)?);
    }
    if all.is_empty() {
        bail!("no transcripts found in the given files");
    }
    Ok(all)
}

fn metric_table(rows: &[(String, MetricValue)]) -> String {
    let mut out = format!("{:<16} {:>10} {:>10} {:>6}\n", "metric", "mean", "std", "n");
    for (name, v) in rows {
        out.push_str(&format!("{:<16} {:>10.4} {:>10.4} {:>6}\n", name, v.mean, v.std, v.n));
    }
    out
}

pub async fn cmd_report(args: &ReportArgs) -> Result<serde_json::Value> {
    let specs = parse_metric_list(&args.metrics)?;
    let tasks = taskgen::load_jsonl(&args.dataset)?;
    let transcripts = load_transcript_files(&args.transcripts)?;
    let runset = RunSet::new(tasks, transcripts)?;
    let mut rows: Vec<(String, MetricValue)> = Vec::new();
    for spec in &specs {
        match spec {
            MetricSpec::LrAcc => rows.push(("lr-acc".into(), metrics::lr_acc(&runset))),
            MetricSpec::LrMajAt(k) => {
                rows.push((format!("lr-maj@{k}"), metrics::lr_maj_at_k(&runset, *k)?))
            }
            MetricSpec::PassAtK => rows.push(("pass-at-k".into(), metrics::pass_at_k(&runset))),
            MetricSpec::BokAcc => {
                let script_path = args
                    .mock_script
                    .as_ref()
                    .context("bok-acc needs --mock-script for the judge backend")?;
                let run_args = RunArgs {
                    backend: Some("mock".into()),
                    mock_script: Some(script_path.clone()),
                    ..Default::default()
                };
                let config = RunConfig::resolve(&run_args)?;
                let gateway = Arc::new(build_gateway(&config, None)?);
                let engine = Engine::new(gateway, config.engine_config());
                rows.push(("bok-acc".into(), metrics::bok_acc(&runset, &engine).await?));
            }
        }
    }
    let table = metric_table(&rows);
    print!("{table}");
    let report = serde_json::Value::Object(
        rows.iter()
            .map(|(name, v)| (name.clone(), json!({"mean": v.mean, "std": v.std, "n": v.n})))
            .collect(),
    );
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(out.join("report.txt"), table)?;
    }
    Ok(report)
}

pub fn cmd_judge_eval(args: &JudgeEvalArgs) -> Result<serde_json::Value> {
    let tasks = taskgen::load_jsonl(&args.dataset)?;
    let transcripts = load_transcript_files(&args.transcripts)?;
    let runset = RunSet::new(tasks, transcripts)?;
    let criterion = match args.criterion.as_str() {
        "f1" => ThresholdCriterion::F1,
        "youden-j" => ThresholdCriterion::YoudenJ,
        other => bail!("unknown criterion {other:?} (expected f1 or youden-j)"),
    };
    let mut report = serde_json::Map::new();
    let mut table = format!(
        "{:<10} {:>8} {:>11} {:>8} {:>11} {:>8}\n",
        "agg", "auroc", "precision*", "recall*", "threshold*", "n"
    );
    for item in args.aggregations.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mode = match item {
            "min" => Aggregation::Min,
            "mean" => Aggregation::Mean,
            "mean-log" => Aggregation::MeanLog,
            other => bail!("unknown aggregation {other:?} (expected min, mean, mean-log)"),
        };
        let samples = metrics::collect_judge_samples(&runset, mode, args.samples_per_step);
        if samples.is_empty() {
            bail!("no transcripts carry step confidences; run a socratic method first");
        }
        let q = metrics::judge_quality(&samples, criterion)?;
        table.push_str(&format!(
            "{:<10} {:>8.4} {:>11.4} {:>8.4} {:>11.4} {:>8}\n",
            item,
            q.auroc,
            q.precision_star,
            q.recall_star,
            q.threshold_star,
            samples.len()
        ));
        report.insert(
            item.to_string(),
            json!({
                "auroc": q.auroc,
                "precision_star": q.precision_star,
                "recall_star": q.recall_star,
                "threshold_star": q.threshold_star,
                "n": samples.len(),
            }),
        );
    }
    print!("{table}");
    let report = serde_json::Value::Object(report);
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("judge_eval.json"), serde_json::to_string_pretty(&report)?)?;
        std::fs::write(out.join("judge_eval.txt"), table)?;
    }
    Ok(report)
}

pub async fn cmd_scale(args: &ScaleArgs) -> Result<Vec<metrics::ScalingRow>> {
    let budgets: Vec<u32> = args
        .budgets
        .split(',')
        .map(|b| b.trim().parse::<u32>().with_context(|| format!("bad budget {b:?}")))
        .collect::<Result<_>>()?;
    if budgets.is_empty() {
        bail!("no budgets given");
    }
    if !budgets.windows(2).all(|w| w[0] < w[1]) {
        bail!("budgets must be strictly ascending, got {budgets:?}");
    }
    let mode = match args.axis.as_str() {
        "sequential" => ScalingMode::Sequential,
        "parallel" => match args.aggregation.as_str() {
            "maj-n" => ScalingMode::Parallel(ParallelAggregation::MajN),
            "wbon" => ScalingMode::Parallel(ParallelAggregation::Wbon),
            other => bail!("unknown aggregation {other:?} (expected maj-n or wbon)"),
        },
        other => bail!("unknown axis {other:?} (expected sequential or parallel)"),
    };
    let base_out = args.run.out.clone().unwrap_or_else(|| PathBuf::from("scale-out"));
    std::fs::create_dir_all(&base_out)?;
    // one cache for the whole series: shared prefixes replay across budgets
    let shared_cache = args.run.cache_dir.clone().unwrap_or_else(|| base_out.join("cache"));

    let mut runsets: BTreeMap<u32, RunSet> = BTreeMap::new();
    for &budget in &budgets {
        let mut run_args = args.run.clone();
        run_args.cache_dir = Some(shared_cache.clone());
        run_args.out = Some(base_out.join(format!("budget-{budget}")));
        match mode {
            ScalingMode::Sequential => run_args.iterations = Some(budget as usize),
            ScalingMode::Parallel(agg) => {
                run_args.parallel = Some(budget.max(1));
                if agg == ParallelAggregation::Wbon {
                    run_args.final_self_eval = true;
                }
            }
        }
        let output = cmd_run(&run_args).await?;
        let config = RunConfig::resolve(&run_args)?;
        let tasks = load_dataset(&config)?;
        runsets.insert(budget, RunSet::new(tasks, output.transcripts)?);
    }
    let rows = metrics::scaling_series(&runsets, &budgets, mode)?;
    let mut csv = String::from("budget,accuracy,std,est_tokens\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{:.6},{:.6},{:.1}\n",
            row.budget, row.accuracy, row.std, row.est_tokens
        ));
    }
    std::fs::write(base_out.join("scaling.csv"), &csv)?;
    std::fs::write(base_out.join("scaling.json"), serde_json::to_string_pretty(&rows)?)?;
    print!("{csv}");
    Ok(rows)
}

pub fn cmd_gen(args: &GenArgs) -> Result<Vec<Task>> {
    let mut tasks = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let task = match args.kind.as_str() {
            "mini-sudoku" => taskgen::gen_mini_sudoku(seed),
            "zebra" => taskgen::gen_zebra(&ZebraSpec {
                num_entities: args.entities,
                num_attributes: args.attributes,
                seed,
            })?,
            other => bail!("unknown generator kind {other:?} (expected mini-sudoku or zebra)"),
        };
        tasks.push(task);
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    taskgen::write_jsonl(&args.out, &tasks)?;
    println!("wrote {} task(s) to {}", tasks.len(), args.out.display());
    Ok(tasks)
}

pub async fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            cmd_run(&args).await?;
        }
        Command::Report(args) => {
            cmd_report(&args).await?;
        }
        Command::JudgeEval(args) => {
            cmd_judge_eval(&args)?;
        }
        Command::Scale(args) => {
            cmd_scale(&args).await?;
        }
        Command::Gen(args) => {
            cmd_gen(&args)?;
        }
    }
    Ok(())
}
