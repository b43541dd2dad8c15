//! Language-model providers and SQL extraction from their replies.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::prompt::PromptBundle;
use crate::text::lookup_key;

pub const DEFAULT_PROVIDER_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("provider transport failure: {0}")]
    Transport(String),
    #[error("provider returned an invalid response: {0}")]
    BadResponse(String),
}

/// One model call. `attempt` starts at 1; `feedback` carries the guard's
/// rejection reason on retries.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub bundle: &'a PromptBundle,
    pub attempt: usize,
    pub feedback: Option<&'a str>,
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: CompletionRequest<'_>) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub model: String,
    pub temperature: f32,
    pub max_output_tokens: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

/// Test double whose reply depends only on the question section and the
/// attempt number. Attempt `n` gets the `n`-th scripted reply, or the last
/// one when the script is shorter.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    script: BTreeMap<String, Vec<String>>,
    fallback: Option<String>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, question: &str, replies: &[&str]) -> Self {
        self.insert(question, replies.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn insert(&mut self, question: &str, replies: Vec<String>) {
        self.script.insert(lookup_key(question), replies);
    }

    /// Reply for questions not in the script.
    pub fn with_fallback(mut self, reply: &str) -> Self {
        self.fallback = Some(reply.to_string());
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmProvider for ScriptedProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: CompletionRequest<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = lookup_key(&request.bundle.question_section);
        match self.script.get(&key) {
            Some(replies) if !replies.is_empty() => {
                Ok(replies[(request.attempt - 1).min(replies.len() - 1)].clone())
            }
            _ => self.fallback.clone().ok_or_else(|| {
                ProviderError::BadResponse(format!("no scripted reply for `{key}`"))
            }),
        }
    }
}

/// Test double that depends on the retrieved examples: it answers with the
/// SQL of the most similar example when that example is similar enough,
/// and otherwise guesses a query against a table that does not exist.
#[derive(Debug)]
pub struct ExampleEchoProvider {
    pub min_similarity: f64,
    calls: AtomicUsize,
}

/// The echo provider's reply when no example is close enough.
pub const UNGROUNDED_GUESS: &str = "SELECT COUNT(*) FROM staff_records";

impl ExampleEchoProvider {
    pub fn new(min_similarity: f64) -> Self {
        Self {
            min_similarity,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmProvider for ExampleEchoProvider {
    fn name(&self) -> &str {
        "example-echo"
    }

    fn complete(&self, request: CompletionRequest<'_>) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let sql = request
            .bundle
            .examples_section
            .first()
            .filter(|e| e.similarity >= self.min_similarity)
            .map_or(UNGROUNDED_GUESS, |e| e.sql.as_str());
        Ok(format!("```sql\n{sql}\n```"))
    }
}

/// Adapter for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpChatProvider {
    endpoint: String,
    api_key: Option<String>,
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpChatProvider {
    pub fn new(endpoint: impl Into<String>, config: ProviderConfig, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            config,
            agent,
        }
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl LlmProvider for HttpChatProvider {
    fn name(&self) -> &str {
        &self.config.model
    }

    fn complete(&self, request: CompletionRequest<'_>) -> Result<String, ProviderError> {
        let m = request.bundle.messages_with_feedback(request.feedback);
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_output_tokens,
            "messages": [
                { "role": "system", "content": m.system },
                { "role": "user", "content": m.user },
            ],
        });
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::BadResponse("no message content".into()))
    }
}

/// The first SQL statement in a model reply: the content of the first
/// non-empty fenced block, else the text from the first `SELECT` or `WITH`
/// keyword to the end of its paragraph. One trailing semicolon is removed.
pub fn extract_sql(text: &str) -> Option<String> {
    let mut rest = text;
    while let Some(start) = rest.find("```") {
        let after = &rest[start + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let info = after[..body_start].trim();
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        let candidate = body[..end].trim();
        if !candidate.is_empty() && (info.is_empty() || info.eq_ignore_ascii_case("sql")) {
            return Some(strip_semicolon(candidate));
        }
        rest = &body[(end + 3).min(body.len())..];
    }
    let select = keyword_position(text, "select");
    // A bare WITH only starts a statement when a SELECT follows in the same paragraph.
    let with = keyword_position(text, "with").filter(|&w| {
        let para = &text[w..];
        let para = &para[..para.find("\n\n").unwrap_or(para.len())];
        keyword_position(para, "select").is_some()
    });
    let start = select.into_iter().chain(with).min()?;
    let tail = &text[start..];
    let end = tail.find("\n\n").unwrap_or(tail.len());
    let candidate = tail[..end].trim();
    (!candidate.is_empty()).then(|| strip_semicolon(candidate))
}

fn strip_semicolon(s: &str) -> String {
    s.strip_suffix(';').unwrap_or(s).trim_end().to_string()
}

fn keyword_position(text: &str, keyword: &str) -> Option<usize> {
    let lower = text.to_ascii_lowercase();
    let mut from = 0;
    while let Some(i) = lower[from..].find(keyword) {
        let at = from + i;
        let before_ok = at == 0 || !lower.as_bytes()[at - 1].is_ascii_alphanumeric();
        let after = at + keyword.len();
        let after_ok = after >= lower.len()
            || !lower.as_bytes()[after].is_ascii_alphanumeric() && lower.as_bytes()[after] != b'_';
        if before_ok && after_ok {
            return Some(at);
        }
        from = after;
    }
    None
}
