//! Chat-completions transport for OpenAI-compatible endpoints.

use std::time::Duration;

use serde_json::{json, Value};

use crate::labeling::{Transport, TransportError};

pub struct ChatTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    temperature: f64,
}

impl ChatTransport {
    /// `endpoint` is the full URL of the chat-completions route.
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, temperature: f64, timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            temperature,
        }
    }
}

impl Transport for ChatTransport {
    fn send(&self, model: &str, prompt: &str) -> Result<String, TransportError> {
        let body = json!({
            "model": model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response = self
            .agent
            .post(&self.endpoint)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body);
        let value: Value = match response {
            Ok(r) => r
                .into_json()
                .map_err(|e| TransportError::Transient(format!("unreadable body: {e}")))?,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
                return Err(if code == 429 || code >= 500 {
                    TransportError::Transient(msg)
                } else {
                    TransportError::Fatal(msg)
                });
            }
            Err(e) => return Err(TransportError::Transient(e.to_string())),
        };
        extract_content(&value).ok_or_else(|| TransportError::Transient("reply has no message content".into()))
    }
}

fn extract_content(value: &Value) -> Option<String> {
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_owned)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_is_taken_from_first_choice() {
        let v = json!({"choices": [{"message": {"role": "assistant", "content": "Educational score: 2"}}]});
        assert_eq!(extract_content(&v).as_deref(), Some("Educational score: 2"));
        assert_eq!(extract_content(&json!({"choices": []})), None);
    }
}
