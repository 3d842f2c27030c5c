use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde_json::{json, Value};

use crate::InferError;

/// Request body layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WireFormat {
    /// `POST {base_url}/chat/completions` with a message list.
    #[default]
    Chat,
    /// `POST {base_url}/completions` with a raw prompt.
    Completion,
}

impl FromStr for WireFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chat" => Ok(WireFormat::Chat),
            "completion" => Ok(WireFormat::Completion),
            _ => Err(format!("unknown wire format {s:?} (expected chat or completion)")),
        }
    }
}

impl fmt::Display for WireFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WireFormat::Chat => "chat",
            WireFormat::Completion => "completion",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    /// e.g. `http://127.0.0.1:8000/v1`
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Delay before the first retry; doubled on every further attempt.
    pub backoff: Duration,
    pub parallelism: usize,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub wire: WireFormat,
    pub system_prompt: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: String::new(),
            temperature: 0.0,
            max_tokens: 128,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            backoff: Duration::from_millis(500),
            parallelism: 4,
            api_key_env: "DSCRE_API_KEY".into(),
            wire: WireFormat::Chat,
            system_prompt: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), InferError> {
        let bad = |m: &str| Err(InferError::Backend(m.to_string()));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return bad("base_url must be an http(s) URL");
        }
        if self.model_name.trim().is_empty() {
            return bad("model_name is empty");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a finite value >= 0");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        if self.max_retries > 16 {
            return bad("max_retries must be at most 16");
        }
        Ok(())
    }

    pub(crate) fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        match self.wire {
            WireFormat::Chat => format!("{base}/chat/completions"),
            WireFormat::Completion => format!("{base}/completions"),
        }
    }

    pub(crate) fn request_body(&self, prompt: &str) -> Value {
        match self.wire {
            WireFormat::Chat => {
                let mut messages = Vec::new();
                if let Some(sys) = &self.system_prompt {
                    messages.push(json!({"role": "system", "content": sys}));
                }
                messages.push(json!({"role": "user", "content": prompt}));
                json!({
                    "model": self.model_name,
                    "messages": messages,
                    "temperature": self.temperature,
                    "max_tokens": self.max_tokens,
                })
            }
            WireFormat::Completion => json!({
                "model": self.model_name,
                "prompt": prompt,
                "temperature": self.temperature,
                "max_tokens": self.max_tokens,
            }),
        }
    }
}

/// Pulls the answer text out of a raw response body.
pub fn extract_answer(body: &str, wire: WireFormat) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let choice = &v["choices"][0];
    let text = match wire {
        WireFormat::Chat => &choice["message"]["content"],
        WireFormat::Completion => &choice["text"],
    };
    text.as_str()
        .map(str::to_string)
        .ok_or_else(|| "response has no answer text".to_string())
}

pub(crate) struct HttpBackend {
    agent: ureq::Agent,
    cfg: BackendConfig,
    api_key: Option<String>,
}

pub(crate) enum CallError {
    Retryable(String),
    Fatal(String),
}

impl HttpBackend {
    pub(crate) fn new(cfg: &BackendConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(cfg.timeout).build();
        let api_key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
        Self {
            agent,
            cfg: cfg.clone(),
            api_key,
        }
    }

    fn call_once(&self, prompt: &str) -> Result<String, CallError> {
        let mut req = self.agent.post(&self.cfg.endpoint());
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(self.cfg.request_body(prompt)) {
            Ok(resp) => resp
                .into_string()
                .map_err(|e| CallError::Retryable(format!("reading response: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", body.chars().take(200).collect::<String>());
                if code >= 500 {
                    Err(CallError::Retryable(msg))
                } else {
                    Err(CallError::Fatal(msg))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(CallError::Retryable(t.to_string())),
        }
    }

    /// Calls with retries; returns the raw body and the number of requests made.
    pub(crate) fn call(&self, prompt: &str) -> (Result<String, String>, usize) {
        let mut delay = self.cfg.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.call_once(prompt) {
                Ok(body) => return (Ok(body), attempts),
                Err(CallError::Fatal(m)) => return (Err(m), attempts),
                Err(CallError::Retryable(m)) => {
                    if attempts > self.cfg.max_retries as usize {
                        return (Err(format!("giving up after {attempts} attempts: {m}")), attempts);
                    }
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_are_read_from_both_wire_formats() {
        let chat = r#"{"choices":[{"message":{"role":"assistant","content":"([a], r, [b])"}}]}"#;
        assert_eq!(extract_answer(chat, WireFormat::Chat).unwrap(), "([a], r, [b])");
        let comp = r#"{"choices":[{"text":"x"}]}"#;
        assert_eq!(extract_answer(comp, WireFormat::Completion).unwrap(), "x");
        assert!(extract_answer(comp, WireFormat::Chat).is_err());
        assert!(extract_answer("<html>", WireFormat::Chat).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = BackendConfig {
            model_name: "m".into(),
            ..Default::default()
        };
        ok.validate().unwrap();
        for bad in [
            BackendConfig {
                parallelism: 0,
                ..ok.clone()
            },
            BackendConfig {
                temperature: -0.1,
                ..ok.clone()
            },
            BackendConfig {
                max_tokens: 0,
                ..ok.clone()
            },
            BackendConfig {
                base_url: "localhost".into(),
                ..ok.clone()
            },
            BackendConfig {
                model_name: " ".into(),
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn endpoint_joins_cleanly() {
        let c = BackendConfig {
            base_url: "http://h:1/v1/".into(),
            ..Default::default()
        };
        assert_eq!(c.endpoint(), "http://h:1/v1/chat/completions");
    }
}
