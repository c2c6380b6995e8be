//! Deterministic scripted backend.
//!
//! A script is an ordered list of rules; the first rule whose matchers all
//! appear in the rendered prompt wins, and its response list is cycled by
//! `sample_index`. Prompts matching no rule roll a failure deterministically
//! from (seed, prompt, sample_index) against `fallback_error_rate`, which is
//! how retry and error paths get exercised without a network.

use super::{Backend, BackendError, BackendReply, ChatRequest};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    /// Substrings that must all appear in the rendered prompt.
    pub match_all: Vec<String>,
    /// Canned responses, cycled by `sample_index % len`.
    pub responses: Vec<String>,
}

impl MockRule {
    pub fn new<M, R>(match_all: M, responses: R) -> Self
    where
        M: IntoIterator,
        M::Item: Into<String>,
        R: IntoIterator,
        R::Item: Into<String>,
    {
        MockRule {
            match_all: match_all.into_iter().map(Into::into).collect(),
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        !self.responses.is_empty() && self.match_all.iter().all(|m| prompt.contains(m))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback_error_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockScript { rules, fallback_error_rate: 0.0, seed: 0 }
    }

    pub fn with_fallback(mut self, error_rate: f64, seed: u64) -> Self {
        self.fallback_error_rate = error_rate;
        self.seed = seed;
        self
    }
}

/// Sentinel text returned when no rule matches and the failure roll passes.
pub const MOCK_FALLBACK_TEXT: &str = "MOCK FALLBACK: no rule matched.";

pub struct MockBackend {
    script: MockScript,
    invocations: AtomicU64,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script, invocations: AtomicU64::new(0) }
    }

    /// Number of times `complete` was invoked (retries included).
    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::Relaxed)
    }
}

/// Deterministic value in [0, 1) from (seed, prompt, sample_index).
fn unit_roll(seed: u64, prompt: &str, sample_index: u64) -> f64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(sample_index.to_le_bytes());
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
}

fn estimate_tokens(text: &str) -> u64 {
    (text.len() as u64) / 4 + 1
}

#[async_trait]
impl Backend for MockBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        self.invocations.fetch_add(1, Ordering::Relaxed);
        let prompt = request.rendered_prompt();
        for rule in &self.script.rules {
            if rule.matches(&prompt) {
                let idx = (request.sample_index % rule.responses.len() as u64) as usize;
                let text = rule.responses[idx].clone();
                return Ok(BackendReply {
                    prompt_tokens: estimate_tokens(&prompt),
                    completion_tokens: estimate_tokens(&text),
                    text,
                });
            }
        }
        let roll = unit_roll(self.script.seed, &prompt, request.sample_index);
        if roll < self.script.fallback_error_rate {
            return Err(BackendError::Transient("mock scripted transient failure".into()));
        }
        Ok(BackendReply {
            prompt_tokens: estimate_tokens(&prompt),
            completion_tokens: estimate_tokens(MOCK_FALLBACK_TEXT),
            text: MOCK_FALLBACK_TEXT.to_string(),
        })
    }

    fn id(&self) -> &str {
        "mock"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn req(content: &str, sample_index: u64) -> ChatRequest {
        ChatRequest {
            model_id: "m".into(),
            messages: vec![ChatMessage::user(content)],
            temperature: 0.0,
            max_tokens: 16,
            sample_index,
        }
    }

    #[tokio::test]
    async fn first_matching_rule_wins() {
        let backend = MockBackend::new(MockScript::new(vec![
            MockRule::new(["needle", "haystack"], ["both"]),
            MockRule::new(["needle"], ["just one"]),
        ]));
        let r = backend.complete(&req("needle in a haystack", 0)).await.unwrap();
        assert_eq!(r.text, "both");
        let r = backend.complete(&req("needle alone", 0)).await.unwrap();
        assert_eq!(r.text, "just one");
    }

    #[tokio::test]
    async fn fallback_roll_is_deterministic() {
        let backend = MockBackend::new(MockScript::new(vec![]).with_fallback(0.5, 42));
        let mut pattern = Vec::new();
        for i in 0..20 {
            pattern.push(backend.complete(&req("x", i)).await.is_ok());
        }
        let backend2 = MockBackend::new(MockScript::new(vec![]).with_fallback(0.5, 42));
        for (i, expect) in pattern.iter().enumerate() {
            assert_eq!(backend2.complete(&req("x", i as u64)).await.is_ok(), *expect);
        }
        // not all the same outcome at rate 0.5 over 20 draws
        assert!(pattern.iter().any(|b| *b) && pattern.iter().any(|b| !*b));
    }

    #[test]
    fn unit_roll_in_range() {
        for i in 0..100 {
            let r = unit_roll(7, "prompt", i);
            assert!((0.0..1.0).contains(&r));
        }
    }
}
