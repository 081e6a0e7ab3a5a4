use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, GatewayError};

/// Chat-completion client: POSTs `{model, messages, temperature}` and reads
/// `choices[0].message.content`.
pub struct HttpChatBackend {
    endpoint: String,
    bearer: Option<String>,
    agent: ureq::Agent,
    max_retries: u32,
    backoff_base: Duration,
}

impl HttpChatBackend {
    pub fn new(
        endpoint: String,
        bearer: Option<String>,
        timeout: Duration,
        max_retries: u32,
    ) -> Self {
        HttpChatBackend {
            endpoint,
            bearer,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            max_retries,
            backoff_base: Duration::from_millis(500),
        }
    }

    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base
            .saturating_mul(1 << attempt.min(6))
            .min(Duration::from_secs(30))
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let response = match req.send_json(body.clone()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                let msg = format!("HTTP {code}: {}", truncate(&text, 300));
                return Err(if code >= 500 || code == 429 {
                    Attempt::Retry(msg)
                } else {
                    Attempt::Fatal(GatewayError::Transport(msg))
                });
            }
            Err(ureq::Error::Transport(t)) => return Err(Attempt::Retry(t.to_string())),
        };
        let value: Value = response
            .into_json()
            .map_err(|e| Attempt::Fatal(GatewayError::Protocol(format!("bad JSON body: {e}"))))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                Attempt::Fatal(GatewayError::Protocol(
                    "response has no choices[0].message.content".into(),
                ))
            })
    }
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, GatewayError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let Some(seed) = request.seed {
            body["seed"] = json!(seed);
        }
        let mut last = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("chat request attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(GatewayError::Transport(format!(
            "gave up after {} attempt(s): {last}",
            self.max_retries + 1
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{AgentConfig, AgentRole, ChatMessage, Gateway, Transcript};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Minimal HTTP/1.1 server answering each request with the next canned
    /// (status, body) pair; records request bodies.
    fn stub_server(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        thread::spawn(move || {
            for (status, body) in replies {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = line.trim().to_string();
                    }
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                seen2
                    .lock()
                    .unwrap()
                    .push(format!("{auth}\n{}", String::from_utf8_lossy(&buf)));
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), seen)
    }

    fn completion(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn transcript() -> Transcript {
        let mut t = Transcript::new(AgentRole::Code, "You write Verilog.");
        t.push(ChatMessage::user("2-to-1 mux"));
        t
    }

    #[test]
    fn passes_completion_through() {
        let (url, seen) = stub_server(vec![(200, completion("module mux; endmodule"))]);
        let gw = Gateway::from_config(&AgentConfig::http(url, "gpt-test")).unwrap();
        let reply = gw.send_chat(&transcript()).unwrap();
        assert_eq!(reply.content, "module mux; endmodule");
        let body = seen.lock().unwrap()[0].clone();
        let json: Value = serde_json::from_str(body.lines().nth(1).unwrap()).unwrap();
        assert_eq!(json["model"], "gpt-test");
        assert_eq!(json["messages"][1]["content"], "2-to-1 mux");
        assert_eq!(json["messages"][0]["role"], "system");
        assert!((json["temperature"].as_f64().unwrap() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn review_role_runs_at_zero_temperature_with_bearer() {
        let (url, seen) = stub_server(vec![(200, completion("ok"))]);
        std::env::set_var("VERILOOP_TEST_KEY_A", "sekret");
        let mut cfg = AgentConfig::http(url, "m");
        if let crate::gateway::ProviderConfig::HttpChat { api_key_env, .. } = &mut cfg.provider {
            *api_key_env = Some("VERILOOP_TEST_KEY_A".into());
        }
        let gw = Gateway::from_config(&cfg).unwrap();
        let mut t = transcript();
        t.agent_role = AgentRole::Review;
        gw.send_chat(&t).unwrap();
        let body = seen.lock().unwrap()[0].clone();
        assert!(body.starts_with("Authorization: Bearer sekret") || body.starts_with("authorization: Bearer sekret"));
        let json: Value = serde_json::from_str(body.lines().nth(1).unwrap()).unwrap();
        assert_eq!(json["temperature"].as_f64(), Some(0.0));
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let (url, seen) = stub_server(vec![
            (500, "{}".into()),
            (503, "{}".into()),
            (200, completion("third time")),
        ]);
        let backend = HttpChatBackend::new(url, None, Duration::from_secs(5), 2)
            .with_backoff_base(Duration::from_millis(5));
        let gw = Gateway::with_backend(Box::new(backend), "m");
        assert_eq!(gw.send_chat(&transcript()).unwrap().content, "third time");
        assert_eq!(seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn exhausted_retries_is_transport_error() {
        let (url, _) = stub_server(vec![(500, "{}".into()), (500, "{}".into())]);
        let backend = HttpChatBackend::new(url, None, Duration::from_secs(5), 1)
            .with_backoff_base(Duration::from_millis(1));
        let gw = Gateway::with_backend(Box::new(backend), "m");
        assert!(matches!(gw.send_chat(&transcript()), Err(GatewayError::Transport(_))));
    }

    #[test]
    fn malformed_body_is_protocol_error() {
        let (url, _) = stub_server(vec![(200, "{\"choices\": []}".into())]);
        let backend = HttpChatBackend::new(url, None, Duration::from_secs(5), 3);
        let gw = Gateway::with_backend(Box::new(backend), "m");
        assert!(matches!(gw.send_chat(&transcript()), Err(GatewayError::Protocol(_))));
    }

    #[test]
    fn missing_api_key_variable_is_config_error() {
        let mut cfg = AgentConfig::http("http://127.0.0.1:9/x", "m");
        if let crate::gateway::ProviderConfig::HttpChat { api_key_env, .. } = &mut cfg.provider {
            *api_key_env = Some("VERILOOP_TEST_KEY_UNSET_123".into());
        }
        assert!(matches!(Gateway::from_config(&cfg), Err(GatewayError::Config(_))));
    }
}
