//! Run configuration: TOML file merged with command-line overrides.
//!
//! The resolved config is snapshot into every transcript, so a run is
//! reproducible from the snapshot plus the response cache.

use crate::RunArgs;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use ssr_core::engine::{
    Completeness, ConfidenceSetting, ContextFormat, EngineConfig,
};
use ssr_core::gateway::HttpConfig;
use ssr_core::prompts::TaskDomain;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Mock,
    Http,
}

/// Temperature/token profile per backend family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// General-purpose models: temperature 0.6.
    General,
    /// Reasoning models: temperature 1.0.
    Reasoning,
}

impl Profile {
    pub fn temperature(self) -> f64 {
        match self {
            Profile::General => 0.6,
            Profile::Reasoning => 1.0,
        }
    }
}

fn default_method() -> String {
    "ssr-ada".into()
}
fn default_iterations() -> usize {
    3
}
fn default_samples() -> usize {
    5
}
fn default_one() -> u32 {
    1
}
fn default_concurrency() -> usize {
    16
}
fn default_max_tokens() -> u32 {
    16384
}
fn default_model_id() -> String {
    "mock-model".into()
}
fn default_true() -> bool {
    true
}
fn default_context_format() -> String {
    "natural".into()
}
fn default_completeness() -> String {
    "reflection".into()
}
fn default_confidence() -> String {
    "auto".into()
}
fn default_profile() -> Profile {
    Profile::General
}
fn default_backend() -> BackendKind {
    BackendKind::Mock
}
fn default_out() -> PathBuf {
    PathBuf::from("ssr-out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_method")]
    pub method: String,
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_samples")]
    pub samples_per_step: usize,
    #[serde(default = "default_one")]
    pub parallel: u32,
    #[serde(default = "default_one")]
    pub repeats: u32,
    #[serde(default = "default_context_format")]
    pub context_format: String,
    #[serde(default = "default_completeness")]
    pub completeness: String,
    #[serde(default = "default_confidence")]
    pub confidence: String,
    #[serde(default)]
    pub max_steps: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default)]
    pub mock_script: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_profile")]
    pub profile: Profile,
    /// Explicit temperature wins over the profile.
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub no_cache: bool,
    #[serde(default = "default_true")]
    pub sample_distinct: bool,
    #[serde(default)]
    pub token_ceiling: Option<u64>,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub strict_refine: bool,
    #[serde(default)]
    pub overwrite_final_mismatch: bool,
    #[serde(default)]
    pub final_self_eval: bool,
    #[serde(default)]
    pub domain: Option<TaskDomain>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize from the empty document")
    }
}

impl RunConfig {
    /// Load the TOML file named in the args (if any) and apply flag
    /// overrides on top.
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let mut config = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(m) = &args.method {
            config.method = m.clone();
        }
        if let Some(d) = &args.dataset {
            config.dataset = Some(d.clone());
        }
        if let Some(k) = args.iterations {
            config.iterations = k;
        }
        if let Some(m) = args.samples_per_step {
            config.samples_per_step = m;
        }
        if let Some(n) = args.parallel {
            config.parallel = n;
        }
        if let Some(r) = args.repeats {
            config.repeats = r;
        }
        if let Some(f) = &args.context_format {
            config.context_format = f.clone();
        }
        if let Some(c) = &args.completeness {
            config.completeness = c.clone();
        }
        if let Some(c) = &args.confidence {
            config.confidence = c.clone();
        }
        if args.max_steps.is_some() {
            config.max_steps = args.max_steps;
        }
        if let Some(s) = args.seed {
            config.seed = s;
        }
        if let Some(b) = &args.backend {
            config.backend = match b.as_str() {
                "mock" => BackendKind::Mock,
                "http" => BackendKind::Http,
                other => bail!("unknown backend {other:?} (expected mock or http)"),
            };
        }
        if let Some(p) = &args.mock_script {
            config.mock_script = Some(p.clone());
        }
        if let Some(u) = &args.base_url {
            config.base_url = Some(u.clone());
        }
        if let Some(m) = &args.model_id {
            config.model_id = m.clone();
        }
        if let Some(e) = &args.api_key_env {
            config.api_key_env = Some(e.clone());
        }
        if let Some(p) = &args.profile {
            config.profile = match p.as_str() {
                "general" => Profile::General,
                "reasoning" => Profile::Reasoning,
                other => bail!("unknown profile {other:?} (expected general or reasoning)"),
            };
        }
        if args.temperature.is_some() {
            config.temperature = args.temperature;
        }
        if let Some(t) = args.max_tokens {
            config.max_tokens = t;
        }
        if let Some(c) = &args.cache_dir {
            config.cache_dir = Some(c.clone());
        }
        if args.no_cache {
            config.no_cache = true;
        }
        if let Some(c) = args.concurrency {
            config.concurrency = c;
        }
        if args.strict_refine {
            config.strict_refine = true;
        }
        if args.overwrite_final_mismatch {
            config.overwrite_final_mismatch = true;
        }
        if args.final_self_eval {
            config.final_self_eval = true;
        }
        if let Some(o) = &args.out {
            config.out = o.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        if self.samples_per_step == 0 {
            bail!("samples_per_step must be >= 1");
        }
        if self.parallel == 0 || self.repeats == 0 {
            bail!("parallel and repeats must be >= 1");
        }
        if self.max_steps == Some(0) {
            bail!("max_steps must be >= 1 when set");
        }
        self.parse_context_format()?;
        self.parse_completeness()?;
        self.parse_confidence()?;
        Ok(())
    }

    fn parse_context_format(&self) -> Result<ContextFormat> {
        match self.context_format.as_str() {
            "natural" => Ok(ContextFormat::Natural),
            "socratic" => Ok(ContextFormat::Socratic),
            other => bail!("unknown context format {other:?} (expected natural or socratic)"),
        }
    }

    fn parse_completeness(&self) -> Result<Completeness> {
        match self.completeness.as_str() {
            "reflection" => Ok(Completeness::Reflection),
            "intervention" => Ok(Completeness::Intervention),
            other => bail!("unknown completeness {other:?} (expected reflection or intervention)"),
        }
    }

    fn parse_confidence(&self) -> Result<ConfidenceSetting> {
        match self.confidence.as_str() {
            "auto" => Ok(ConfidenceSetting::Auto),
            "exact-match" => Ok(ConfidenceSetting::ExactMatch),
            "llm-judged" => Ok(ConfidenceSetting::LlmJudged),
            other => {
                bail!("unknown confidence mode {other:?} (expected auto, exact-match, llm-judged)")
            }
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            model_id: self.model_id.clone(),
            temperature: self.temperature.unwrap_or_else(|| self.profile.temperature()),
            max_tokens: self.max_tokens,
            domain: self.domain,
            iterations: self.iterations,
            samples_per_step: self.samples_per_step,
            confidence: self.parse_confidence().expect("validated"),
            context_format: self.parse_context_format().expect("validated"),
            completeness: self.parse_completeness().expect("validated"),
            max_steps: self.max_steps,
            skip_unanimous: !self.strict_refine,
            overwrite_final_mismatch: self.overwrite_final_mismatch,
            parallelism: self.concurrency,
            final_self_eval: self.final_self_eval,
        }
    }

    pub fn http_config(&self) -> HttpConfig {
        HttpConfig {
            base_url: self.base_url.clone().unwrap_or_else(|| "https://api.openai.com".into()),
            path: "/v1/chat/completions".into(),
            api_key_env: self.api_key_env.clone().unwrap_or_else(|| "OPENAI_API_KEY".into()),
            timeout_secs: 300,
        }
    }

    /// The snapshot embedded in every transcript. Output locations are
    /// runtime concerns, not part of what a run computed, so they are
    /// stripped: the same experiment written to two directories yields
    /// byte-identical transcripts.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
            map.remove("cache_dir");
            map.remove("no_cache");
        }
        value
    }
}
