//! OpenAI-style chat-completions backend over HTTPS.
//!
//! Request body: `{model, messages[{role,content}], temperature, max_tokens}`.
//! Response: `choices[0].message.content` plus `usage` token counts. The
//! bearer token comes from the environment variable named in the config.

use super::{Backend, BackendError, BackendReply, ChatRequest, Role};
use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    #[serde(default = "default_path")]
    pub path: String,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_path() -> String {
    "/v1/chat/completions".to_string()
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_timeout_secs() -> u64 {
    300
}

pub struct HttpBackend {
    client: reqwest::Client,
    url: String,
    api_key: String,
    id: String,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: WireUsage,
}

impl HttpBackend {
    /// Fails fast when the API key environment variable is unset so a
    /// misconfigured live run dies before issuing work.
    pub fn new(config: &HttpConfig) -> Result<Self, String> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            format!("environment variable {} is not set (required for the live backend)", config.api_key_env)
        })?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| format!("failed to build HTTP client: {e}"))?;
        let url = format!("{}{}", config.base_url.trim_end_matches('/'), config.path);
        Ok(HttpBackend { client, id: format!("http:{url}"), url, api_key })
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<BackendReply, BackendError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    content: &m.content,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let result = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await;
        let response = match result {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() => {
                return Err(BackendError::Transient(format!("transport: {e}")))
            }
            Err(e) => return Err(BackendError::Fatal(format!("transport: {e}"))),
        };
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = response.text().await.unwrap_or_default();
            return Err(BackendError::Fatal(format!("HTTP {status}: {body}")));
        }
        let wire: WireResponse = response
            .json()
            .await
            .map_err(|e| BackendError::Malformed(format!("bad JSON payload: {e}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("response has no choices".into()))?;
        Ok(BackendReply {
            text: choice.message.content,
            prompt_tokens: wire.usage.prompt_tokens,
            completion_tokens: wire.usage.completion_tokens,
        })
    }

    fn id(&self) -> &str {
        &self.id
    }
}
