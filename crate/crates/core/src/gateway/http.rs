//! `POST /v1/chat/completions` transport with bearer auth.

use super::{ChatRequest, Completion, ContentPart, Endpoint, Role, Transport, TransportError};
use serde_json::{json, Value};
use std::time::Duration;

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .connect_timeout(timeout.min(Duration::from_secs(10)))
            .build()
            .map_err(|e| e.to_string())?;
        Ok(HttpTransport { client })
    }
}

/// Endpoint URL for chat completions; tolerates base URLs with or without `/v1`.
pub fn completions_url(base_url: &str) -> String {
    let base = base_url.trim_end_matches('/');
    if base.ends_with("/v1") {
        format!("{base}/chat/completions")
    } else {
        format!("{base}/v1/chat/completions")
    }
}

/// Request body in the chat-completions wire format. Single-text messages use
/// a plain string; messages with frames use content parts.
pub fn wire_body(req: &ChatRequest) -> Value {
    let messages: Vec<Value> = req
        .messages
        .iter()
        .map(|m| {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let content = match m.content.as_slice() {
                [ContentPart::Text { text }] => Value::String(text.clone()),
                parts => Value::Array(
                    parts
                        .iter()
                        .map(|p| match p {
                            ContentPart::Text { text } => json!({"type": "text", "text": text}),
                            ContentPart::ImageUrl { url } => {
                                json!({"type": "image_url", "image_url": {"url": url}})
                            }
                        })
                        .collect(),
                ),
            };
            json!({"role": role, "content": content})
        })
        .collect();
    let mut body = json!({
        "model": req.model,
        "messages": messages,
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if let Some(seed) = req.seed {
        body["seed"] = json!(seed);
    }
    body
}

/// Pull the first choice's text and the usage counters out of a response body.
pub fn parse_completion(body: &Value) -> Result<Completion, TransportError> {
    let content = &body["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(TransportError::BadResponse(format!(
                "no choices[0].message.content in {body}"
            )))
        }
    };
    Ok(Completion {
        text,
        prompt_tokens: body["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
        completion_tokens: body["usage"]["completion_tokens"].as_u64().unwrap_or(0),
    })
}

impl Transport for HttpTransport {
    fn send(&self, endpoint: &Endpoint, req: &ChatRequest) -> Result<Completion, TransportError> {
        let mut builder = self
            .client
            .post(completions_url(&endpoint.base_url))
            .json(&wire_body(req));
        if let Some(token) = endpoint.auth.token() {
            builder = builder.bearer_auth(token);
        }
        let resp = builder.send().map_err(|e| {
            if e.is_status() {
                TransportError::BadResponse(e.to_string())
            } else {
                TransportError::Connect(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Status {
                code: status.as_u16(),
                body: text,
            });
        }
        let body: Value =
            serde_json::from_str(&text).map_err(|e| TransportError::BadResponse(e.to_string()))?;
        parse_completion(&body)
    }
}
