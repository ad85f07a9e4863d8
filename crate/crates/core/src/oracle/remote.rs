//! Remote chat-completion adapter. Each unit task becomes one user message;
//! the credential is read from a configured environment variable; transient
//! failures (network, 429, 5xx) are retried with exponential backoff. Parse
//! retries for well-formed but unusable replies belong to the session layer.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendKind, Oracle, OracleError, RawResponse};
use crate::template::UnitTask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Environment variable holding the bearer credential; None sends no
    /// Authorization header.
    pub credential_var: Option<String>,
    pub timeout_secs: u64,
    /// Total attempts per call, the first included.
    pub max_attempts: u32,
    /// Base backoff, doubled after each failed attempt.
    pub backoff_ms: u64,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: String::new(),
            model_name: String::new(),
            temperature: 0.0,
            max_output_tokens: 256,
            credential_var: None,
            timeout_secs: 30,
            max_attempts: 3,
            backoff_ms: 250,
        }
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    max_tokens: u32,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceBody,
}

#[derive(Deserialize)]
struct ChatChoiceBody {
    content: String,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

pub struct RemoteOracle {
    config: RemoteConfig,
    credential: Option<String>,
    client: reqwest::blocking::Client,
    fingerprint: String,
}

impl RemoteOracle {
    /// Resolves the credential and builds the HTTP client. Fails fast when
    /// the configured credential variable is unset.
    pub fn new(config: RemoteConfig) -> Result<Self, OracleError> {
        let credential = match &config.credential_var {
            Some(var) => Some(
                std::env::var(var).map_err(|_| OracleError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| OracleError::Endpoint(e.to_string()))?;
        let mut hasher = Sha256::new();
        hasher.update(config.endpoint.as_bytes());
        hasher.update([0]);
        hasher.update(config.model_name.as_bytes());
        hasher.update([0]);
        hasher.update(config.temperature.to_le_bytes());
        hasher.update(config.max_output_tokens.to_le_bytes());
        let digest = hasher.finalize();
        let hex: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
        Ok(RemoteOracle { config, credential, client, fingerprint: format!("remote-{hex}") })
    }

    fn post_once(&self, task: &UnitTask) -> Result<RawResponse, RetryableError> {
        let request = ChatRequest {
            model: &self.config.model_name,
            temperature: self.config.temperature,
            max_tokens: self.config.max_output_tokens,
            messages: [ChatMessage { role: "user", content: &task.rendered_text }],
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&request);
        if let Some(credential) = &self.credential {
            builder = builder.bearer_auth(credential);
        }
        let response = builder
            .send()
            .map_err(|e| RetryableError { message: e.to_string(), transient: true })?;
        let status = response.status();
        if !status.is_success() {
            let transient = status.as_u16() == 429 || status.is_server_error();
            let body = response.text().unwrap_or_default();
            return Err(RetryableError {
                message: format!("{status} from {}: {}", self.config.endpoint, body.trim()),
                transient,
            });
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| RetryableError { message: e.to_string(), transient: false })?;
        let choice = parsed.choices.into_iter().next().ok_or(RetryableError {
            message: "response carried no choices".to_owned(),
            transient: false,
        })?;
        let usage = parsed.usage;
        Ok(RawResponse {
            text: choice.message.content,
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

struct RetryableError {
    message: String,
    transient: bool,
}

impl Oracle for RemoteOracle {
    fn invoke(&self, task: &UnitTask) -> Result<RawResponse, OracleError> {
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.post_once(task) {
                Ok(raw) => return Ok(raw),
                Err(err) => {
                    if !err.transient {
                        return Err(OracleError::Endpoint(err.message));
                    }
                    last = err.message;
                    if attempt + 1 < attempts && self.config.backoff_ms > 0 {
                        std::thread::sleep(Duration::from_millis(
                            self.config.backoff_ms << attempt,
                        ));
                    }
                }
            }
        }
        Err(OracleError::Endpoint(format!("{attempts} attempts failed; last: {last}")))
    }

    fn backend(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }
}
