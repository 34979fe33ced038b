//! HTTP adapters. Credentials come from environment variables named in the roster.

use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatRequest, Endpoint, Provider, ProviderError, ProviderOutput, Role};

const FILTER_MARKERS: &[&str] = &[
    "content_filter",
    "content_policy",
    "prohibited_content",
    "safety",
    "data_inspection_failed",
];

fn agent(timeout: Option<u64>) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout.unwrap_or(300))))
        .http_status_as_error(false)
        .build()
        .new_agent()
}

fn credential(ep: &Endpoint) -> Result<Option<String>, ProviderError> {
    match &ep.api_key_env {
        None => Ok(None),
        Some(var) => std::env::var(var)
            .map(Some)
            .map_err(|_| ProviderError::MissingCredential(var.clone())),
    }
}

fn map_transport(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

/// Classifies a non-2xx response.
pub(crate) fn classify_status(status: u16, body: &str) -> ProviderError {
    let lower = body.to_lowercase();
    match status {
        429 => ProviderError::RateLimited,
        400..=499 if FILTER_MARKERS.iter().any(|m| lower.contains(m)) => {
            ProviderError::ContentFiltered(body.chars().take(500).collect())
        }
        _ => ProviderError::Http {
            status,
            body: body.chars().take(2000).collect(),
        },
    }
}

fn post(agent: &ureq::Agent, url: &str, headers: &[(&str, String)], body: &Value) -> Result<(u16, String), ProviderError> {
    let mut req = agent.post(url);
    for (k, v) in headers {
        req = req.header(*k, v.as_str());
    }
    let resp = req.send_json(body).map_err(map_transport)?;
    let status = resp.status().as_u16();
    let text = resp
        .into_body()
        .read_to_string()
        .map_err(map_transport)?;
    Ok((status, text))
}

/// Any `/chat/completions` endpoint speaking the OpenAI wire format.
pub struct OpenAiCompatible {
    url: String,
    model: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiCompatible {
    pub fn from_endpoint(ep: &Endpoint) -> Result<Self, ProviderError> {
        Ok(Self {
            url: format!("{}/chat/completions", ep.base_url.trim_end_matches('/')),
            model: ep.model.clone(),
            key: credential(ep)?,
            agent: agent(ep.timeout_secs),
        })
    }
}

pub(crate) fn openai_body(model: &str, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .map(|m| json!({"role": m.role, "content": m.content}))
        .collect();
    let mut body = json!({"model": model, "messages": messages});
    if let Some(n) = request.max_tokens {
        body["max_tokens"] = json!(n);
    }
    if let Some(t) = request.temperature {
        body["temperature"] = json!(t);
    }
    body
}

pub(crate) fn parse_openai(raw: &str) -> Result<String, ProviderError> {
    let v: Value = serde_json::from_str(raw).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ProviderError::Malformed("no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(ProviderError::ContentFiltered("finish_reason=content_filter".into()));
    }
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::Malformed("no message content".into()))
}

impl Provider for OpenAiCompatible {
    fn call(&self, request: &ChatRequest) -> Result<ProviderOutput, ProviderError> {
        let mut headers = Vec::new();
        if let Some(k) = &self.key {
            headers.push(("Authorization", format!("Bearer {k}")));
        }
        let (status, raw) = post(&self.agent, &self.url, &headers, &openai_body(&self.model, request))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &raw));
        }
        Ok(ProviderOutput {
            text: parse_openai(&raw)?,
            raw: Some(raw),
        })
    }
}

/// Anthropic Messages API.
pub struct Anthropic {
    url: String,
    model: String,
    key: Option<String>,
    agent: ureq::Agent,
}

impl Anthropic {
    pub fn from_endpoint(ep: &Endpoint) -> Result<Self, ProviderError> {
        Ok(Self {
            url: format!("{}/messages", ep.base_url.trim_end_matches('/')),
            model: ep.model.clone(),
            key: credential(ep)?,
            agent: agent(ep.timeout_secs),
        })
    }
}

pub(crate) fn anthropic_body(model: &str, request: &ChatRequest) -> Value {
    let messages: Vec<Value> = request
        .messages
        .iter()
        .filter(|m| m.role != Role::System)
        .map(|m| json!({"role": m.role, "content": m.content}))
        .collect();
    // max_tokens is mandatory on this API
    let mut body = json!({
        "model": model,
        "max_tokens": request.max_tokens.unwrap_or(4096),
        "messages": messages,
    });
    if let Some(system) = request.system_text() {
        body["system"] = json!(system);
    }
    if let Some(t) = request.temperature {
        body["temperature"] = json!(t);
    }
    body
}

pub(crate) fn parse_anthropic(raw: &str) -> Result<String, ProviderError> {
    let v: Value = serde_json::from_str(raw).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    if v.get("stop_reason").and_then(Value::as_str) == Some("refusal") {
        return Err(ProviderError::ContentFiltered("stop_reason=refusal".into()));
    }
    let blocks = v
        .get("content")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Malformed("no content".into()))?;
    Ok(blocks
        .iter()
        .filter_map(|b| b.get("text").and_then(Value::as_str))
        .collect::<Vec<_>>()
        .join(""))
}

impl Provider for Anthropic {
    fn call(&self, request: &ChatRequest) -> Result<ProviderOutput, ProviderError> {
        let mut headers = vec![("anthropic-version", "2023-06-01".to_string())];
        if let Some(k) = &self.key {
            headers.push(("x-api-key", k.clone()));
        }
        let (status, raw) = post(&self.agent, &self.url, &headers, &anthropic_body(&self.model, request))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &raw));
        }
        Ok(ProviderOutput {
            text: parse_anthropic(&raw)?,
            raw: Some(raw),
        })
    }
}
