//! Chat-completion backed splitting.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{finish_sentence, PromptError, PromptRequest};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key; the key itself is never
    /// stored or logged.
    pub api_key_env: String,
    pub timeout_secs: f64,
    /// Extra attempts after a transport failure.
    pub max_retries: usize,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 2,
        }
    }
}

/// Anything that can answer a single-turn chat request.
pub trait CompletionClient {
    fn complete(&self, user_message: &str) -> Result<String, PromptError>;
}

impl<C: CompletionClient + ?Sized> CompletionClient for &C {
    fn complete(&self, user_message: &str) -> Result<String, PromptError> {
        (**self).complete(user_message)
    }
}

/// Blocking client for an OpenAI-style `/chat/completions` endpoint.
pub struct HttpChatClient {
    config: LlmClientConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

impl HttpChatClient {
    /// Builds a client, reading the API key from the configured variable.
    /// A missing key is allowed for endpoints that need none.
    pub fn new(config: LlmClientConfig) -> Result<Self, PromptError> {
        if !(config.timeout_secs > 0.0 && config.timeout_secs.is_finite()) {
            return Err(PromptError::InvalidRequest(format!(
                "timeout must be positive, got {}",
                config.timeout_secs
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!(
                "{} is not set; sending requests without authorization",
                config.api_key_env
            );
        }
        Ok(Self {
            config,
            agent,
            api_key,
        })
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, PromptError> {
        let mut req = self
            .agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| PromptError::Unreachable {
            attempts: 1,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| PromptError::Unreachable {
                attempts: 1,
                message: e.to_string(),
            })?;
        log::debug!("completion response ({status}): {text}");
        if !(200..300).contains(&status) {
            return Err(PromptError::Http { status, body: text });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| PromptError::Malformed(format!("response body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| PromptError::Malformed("response has no choices".into()))
    }
}

impl CompletionClient for HttpChatClient {
    fn complete(&self, user_message: &str) -> Result<String, PromptError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": user_message}],
        });
        log::debug!("completion request to {}: {body}", self.config.endpoint);
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.send_once(&body) {
                Err(PromptError::Unreachable { message, .. }) => {
                    log::warn!("completion attempt {attempt}/{attempts} failed: {message}");
                    last = message;
                }
                Err(PromptError::Http { status, body }) if status >= 500 || status == 429 => {
                    log::warn!("completion attempt {attempt}/{attempts} got HTTP {status}");
                    last = format!("HTTP {status}: {body}");
                }
                other => return other,
            }
        }
        Err(PromptError::Unreachable {
            attempts,
            message: last,
        })
    }
}

/// Extracts the items of a `1. ...` / `1) ...` list, requiring exactly
/// `expected` items numbered consecutively from 1. Non-list lines are
/// ignored.
pub fn parse_numbered_list(text: &str, expected: usize) -> Result<Vec<String>, PromptError> {
    let mut items = Vec::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['*', '-']).trim();
        let digits: String = line.chars().take_while(char::is_ascii_digit).collect();
        if digits.is_empty() {
            continue;
        }
        let rest = &line[digits.len()..];
        let Some(body) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) else {
            continue;
        };
        let number: usize = digits
            .parse()
            .map_err(|_| PromptError::Malformed(format!("bad item number {digits}")))?;
        if number != items.len() + 1 {
            return Err(PromptError::Malformed(format!(
                "item {number} out of order"
            )));
        }
        let body = body.trim().trim_matches('"');
        if body.is_empty() {
            return Err(PromptError::Malformed(format!("item {number} is empty")));
        }
        items.push(finish_sentence(body));
    }
    if items.len() != expected {
        return Err(PromptError::Malformed(format!(
            "expected {expected} numbered items, found {}",
            items.len()
        )));
    }
    Ok(items)
}

/// Splits the story with `client`, re-asking once when the answer cannot be
/// parsed into the requested number of prompts.
pub fn split_scenario<C: CompletionClient + ?Sized>(
    req: &PromptRequest,
    client: &C,
) -> Result<Vec<String>, PromptError> {
    req.validate()?;
    if req.num_prompts == 1 {
        let single = vec![finish_sentence(&req.story)];
        req.check_output(&single)?;
        return Ok(single);
    }
    let instruction = req.render_instruction();
    let first = client.complete(&instruction)?;
    let err = match parse_numbered_list(&first, req.num_prompts)
        .and_then(|p| req.check_output(&p).map(|_| p))
    {
        Ok(p) => return Ok(p),
        Err(e) => e,
    };
    log::warn!("completion rejected ({err}); asking again");
    let retry = format!(
        "{instruction}\n\nYour previous answer could not be used ({err}). Reply with exactly {} numbered lines.",
        req.num_prompts
    );
    let second = client.complete(&retry)?;
    let prompts = parse_numbered_list(&second, req.num_prompts)?;
    req.check_output(&prompts)?;
    Ok(prompts)
}
