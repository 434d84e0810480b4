use std::time::Duration;

use serde_json::Value;

use super::{EndpointConfig, Transport, TransportError};

/// Chat-completions transport over HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
        }
    }
}

/// Maps an HTTP status to a transport failure; `None` for success.
pub fn classify_status(status: u16, body: &str) -> Option<TransportError> {
    let detail = || format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
    match status {
        200..=299 => None,
        413 => Some(TransportError::TooLarge(detail())),
        408 | 409 | 425 | 429 | 500..=599 => Some(TransportError::Transient(detail())),
        _ => Some(TransportError::Permanent(detail())),
    }
}

/// Pulls `choices[0].message.content` out of a chat-completions response.
/// Content given as a list of parts is concatenated.
pub fn extract_content(body: &Value) -> Option<String> {
    let content = body.pointer("/choices/0/message/content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

impl Transport for HttpTransport {
    fn complete(&self, endpoint: &EndpointConfig, body: &Value) -> Result<String, TransportError> {
        let mut request = self.agent.post(&endpoint.url);
        if let Some(token) = endpoint.api_key() {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        if let Some(err) = classify_status(status, &text) {
            return Err(err);
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| TransportError::Permanent(format!("response is not JSON: {e}")))?;
        extract_content(&json)
            .ok_or_else(|| TransportError::Permanent("response has no choices[0].message.content".into()))
    }
}
