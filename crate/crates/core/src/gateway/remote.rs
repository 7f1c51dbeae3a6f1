use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendResponse, Capabilities, ClassifierBackend, ClassifyRequest, TransportError};

pub const BACKEND_TOKEN_ENV: &str = "HYPERMOD_BACKEND_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_max_tokens() -> u32 {
    8
}

fn default_timeout_secs() -> u64 {
    30
}

#[derive(Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionReply {
    #[serde(default)]
    choices: Vec<Choice>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

#[derive(Deserialize)]
struct Usage {
    total_tokens: u64,
}

/// Text-completion service reached over HTTP(S) with a bearer token.
pub struct RemoteBackend {
    config: RemoteConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    /// Builds a client, reading the bearer token from `HYPERMOD_BACKEND_TOKEN`.
    pub fn new(config: RemoteConfig) -> Result<Self, TransportError> {
        let token = std::env::var(BACKEND_TOKEN_ENV).ok();
        Self::with_token(config, token)
    }

    pub fn with_token(config: RemoteConfig, token: Option<String>) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(RemoteBackend { config, token, client })
    }
}

impl ClassifierBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        "remote"
    }

    fn model_version(&self) -> &str {
        &self.config.model
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { returns_scores: false }
    }

    fn complete(&self, _request: &ClassifyRequest, prompt: &str) -> Result<BackendResponse, TransportError> {
        let body = CompletionBody {
            model: &self.config.model,
            prompt,
            max_tokens: self.config.max_tokens,
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(TransportError(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        let reply: CompletionReply = resp.json().map_err(|e| TransportError(format!("bad response body: {e}")))?;
        let raw = reply
            .choices
            .into_iter()
            .next()
            .map(|c| c.text)
            .or(reply.text)
            .ok_or_else(|| TransportError("response carries no completion text".into()))?;
        Ok(BackendResponse {
            raw,
            scores: None,
            total_tokens: reply.usage.map(|u| u.total_tokens),
        })
    }
}
