use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::retry::{with_retry, RetryPolicy};
use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError, Usage};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    /// e.g. `https://api.openai.com/v1`; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token. `None` for
    /// unauthenticated local servers.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_timeout() -> u64 {
    120
}

/// Client for hosted chat-completion endpoints.
pub struct HttpProvider {
    config: EndpointConfig,
    endpoint_id: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: EndpointConfig) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| ProviderError::MissingCredential(var.clone()))?,
            ),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        let endpoint_id = format!("{}#{}", config.base_url.trim_end_matches('/'), config.model);
        Ok(Self {
            config,
            endpoint_id,
            api_key,
            agent,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn body(&self, request: &ChatRequest) -> Value {
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": request.user_content}));
        json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    fn send_once(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let mut call = self.agent.post(&self.url());
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        match call.send_json(self.body(request)) {
            Ok(resp) => {
                let value: Value = resp
                    .into_json()
                    .map_err(|e| ProviderError::Decode(e.to_string()))?;
                parse_completion(&value)
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if status >= 500 {
                    Err(ProviderError::Upstream5xx { status, body })
                } else {
                    Err(ProviderError::Upstream4xx { status, body })
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("Timeout") {
                    Err(ProviderError::Timeout)
                } else {
                    Err(ProviderError::Transport(msg))
                }
            }
        }
    }
}

fn parse_completion(value: &Value) -> Result<ChatResponse, ProviderError> {
    let text = value
        .pointer("/choices/0/message/content")
        .ok_or_else(|| ProviderError::Decode("missing choices[0].message.content".into()))?;
    // Some servers send null content for empty completions.
    let text = text.as_str().unwrap_or_default().to_string();
    let usage = Usage {
        prompt_tokens: value
            .pointer("/usage/prompt_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
        completion_tokens: value
            .pointer("/usage/completion_tokens")
            .and_then(Value::as_u64)
            .unwrap_or(0),
    };
    Ok(ChatResponse::fresh(text, usage))
}

impl ChatProvider for HttpProvider {
    fn endpoint_id(&self) -> &str {
        &self.endpoint_id
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let response = with_retry(&self.config.retry, std::thread::sleep, |_| {
            self.send_once(request)
        })?;
        tracing::debug!(
            role = %request.role,
            prompt_tokens = response.usage.prompt_tokens,
            completion_tokens = response.usage.completion_tokens,
            "model call completed"
        );
        Ok(response)
    }
}
