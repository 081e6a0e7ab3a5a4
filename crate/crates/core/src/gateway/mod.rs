//! Uniform chat interface to any LLM backend.
//!
//! Two providers ship: an HTTP chat-completion client and a replay provider
//! that serves canned responses from a directory, in lexicographic filename
//! order, one per call. A [`Gateway`] can also tee every response it receives
//! into a replay directory so live runs can be rerun offline.

mod extract;
mod http;
mod replay;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_rtl_bundle, ExtractError};
pub use http::HttpChatBackend;
pub use replay::ReplayBackend;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("replay exhausted after {consumed} response(s) from {source_name}")]
    ReplayExhausted { source_name: String, consumed: usize },
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Code,
    Review,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub agent_role: AgentRole,
    pub messages: Vec<ChatMessage>,
}

impl Transcript {
    pub fn new(agent_role: AgentRole, system_prompt: impl Into<String>) -> Self {
        Transcript {
            agent_role,
            messages: vec![ChatMessage::system(system_prompt)],
        }
    }

    pub fn push(&mut self, message: ChatMessage) {
        self.messages.push(message);
    }

    pub fn last(&self) -> Option<&ChatMessage> {
        self.messages.last()
    }

    pub fn byte_len(&self) -> usize {
        self.messages.iter().map(|m| m.content.len()).sum()
    }

    /// System prefix first, then strictly alternating User/Assistant turns
    /// starting with User.
    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |why: &str| Err(GatewayError::InvalidTranscript(why.to_string()));
        if self.messages.first().map(|m| m.role) != Some(Role::System) {
            return bad("first message must be a system message");
        }
        let mut expected = Role::User;
        let mut in_prefix = true;
        for m in &self.messages {
            if in_prefix && m.role == Role::System {
                continue;
            }
            in_prefix = false;
            if m.role != expected {
                return bad("user and assistant turns must alternate");
            }
            if m.content.is_empty() {
                return bad("user and assistant messages must be non-empty");
            }
            expected = if expected == Role::User { Role::Assistant } else { Role::User };
        }
        Ok(())
    }

    /// Drops the oldest exchange (assistant reply + following user turn)
    /// after the opening request until the transcript fits `max_bytes`.
    /// The system prefix, the opening request and the newest turn stay.
    pub fn evict_to(&mut self, max_bytes: usize) {
        let prefix = self
            .messages
            .iter()
            .take_while(|m| m.role == Role::System)
            .count();
        // prefix + opening user turn, then pairs, then the pending user turn.
        while self.byte_len() > max_bytes && self.messages.len() >= prefix + 4 {
            self.messages.drain(prefix + 1..prefix + 3);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    HttpChat {
        endpoint: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
    },
    Replay {
        replay_dir: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub provider: ProviderConfig,
    #[serde(default = "default_model_id")]
    pub model_id: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_request_timeout")]
    pub request_timeout_seconds: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_model_id() -> String {
    "replay".to_string()
}
fn default_request_timeout() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}

/// Default sampling temperature for the Code role; Review always runs at 0.
pub const DEFAULT_CODE_TEMPERATURE: f64 = 0.2;

impl AgentConfig {
    pub fn replay(dir: impl Into<PathBuf>) -> Self {
        AgentConfig {
            provider: ProviderConfig::Replay { replay_dir: dir.into() },
            model_id: default_model_id(),
            temperature: 0.0,
            request_timeout_seconds: default_request_timeout(),
            max_retries: 0,
        }
    }

    pub fn http(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        AgentConfig {
            provider: ProviderConfig::HttpChat {
                endpoint: endpoint.into(),
                api_key_env: None,
            },
            model_id: model_id.into(),
            temperature: DEFAULT_CODE_TEMPERATURE,
            request_timeout_seconds: default_request_timeout(),
            max_retries: default_max_retries(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.request_timeout_seconds == 0 {
            return Err(GatewayError::Config("request_timeout_seconds must be positive".into()));
        }
        match &self.provider {
            ProviderConfig::HttpChat { endpoint, .. } if endpoint.trim().is_empty() => {
                Err(GatewayError::Config("http_chat provider needs an endpoint".into()))
            }
            ProviderConfig::Replay { replay_dir } if replay_dir.as_os_str().is_empty() => {
                Err(GatewayError::Config("replay provider needs replay_dir".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_live(&self) -> bool {
        matches!(self.provider, ProviderConfig::HttpChat { .. })
    }
}

/// What a backend is asked to complete.
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: &'a [ChatMessage],
    pub temperature: f64,
    pub seed: Option<u64>,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, GatewayError>;
}

struct Recorder {
    dir: PathBuf,
    next: Mutex<u32>,
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    model_id: String,
    temperature: f64,
    seed: Option<u64>,
    recorder: Option<Recorder>,
}

impl Gateway {
    pub fn from_config(config: &AgentConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Box<dyn ChatBackend> = match &config.provider {
            ProviderConfig::Replay { replay_dir } => Box::new(ReplayBackend::from_dir(replay_dir)?),
            ProviderConfig::HttpChat { endpoint, api_key_env } => {
                let token = match api_key_env {
                    Some(var) => Some(std::env::var(var).map_err(|_| {
                        GatewayError::Config(format!("environment variable {var} is not set"))
                    })?),
                    None => None,
                };
                Box::new(HttpChatBackend::new(
                    endpoint.clone(),
                    token,
                    Duration::from_secs(config.request_timeout_seconds),
                    config.max_retries,
                ))
            }
        };
        Ok(Gateway {
            backend,
            model_id: config.model_id.clone(),
            temperature: config.temperature,
            seed: None,
            recorder: None,
        })
    }

    /// Serves `responses` in order, as if read from a replay directory.
    pub fn scripted<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::with_backend(Box::new(ReplayBackend::from_responses(responses)), "replay")
    }

    pub fn with_backend(backend: Box<dyn ChatBackend>, model_id: impl Into<String>) -> Self {
        Gateway {
            backend,
            model_id: model_id.into(),
            temperature: 0.0,
            seed: None,
            recorder: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Saves every response as `NNN.txt` under `dir`.
    pub fn recording_to(mut self, dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        self.recorder = Some(Recorder { dir, next: Mutex::new(1) });
        Ok(self)
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    /// Sends the transcript and returns the assistant reply. The transcript
    /// is not modified; the caller appends the reply.
    pub fn send_chat(&self, transcript: &Transcript) -> Result<ChatMessage, GatewayError> {
        transcript.validate()?;
        if transcript.last().map(|m| m.role) != Some(Role::User) {
            return Err(GatewayError::InvalidTranscript(
                "transcript must end with a user message".into(),
            ));
        }
        let temperature = match transcript.agent_role {
            AgentRole::Review => 0.0,
            AgentRole::Code => self.temperature,
        };
        let content = self.backend.complete(&ChatRequest {
            model: &self.model_id,
            messages: &transcript.messages,
            temperature,
            seed: self.seed,
        })?;
        if content.trim().is_empty() {
            return Err(GatewayError::Protocol("empty completion".into()));
        }
        if let Some(rec) = &self.recorder {
            let mut next = rec.next.lock().unwrap_or_else(|e| e.into_inner());
            fs::write(rec.dir.join(format!("{:03}.txt", *next)), &content)?;
            *next += 1;
        }
        Ok(ChatMessage::assistant(content))
    }
}

/// Writes the transcript as `transcript_NNN.json` under `dir`, using the
/// first free number.
pub fn record_transcript(transcript: &Transcript, dir: &Path) -> Result<PathBuf, GatewayError> {
    if !dir.is_dir() {
        return Err(GatewayError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        )));
    }
    let body = crate::model::to_canonical_json(transcript);
    for n in 1u32.. {
        let path = dir.join(format!("transcript_{n:03}.json"));
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                f.write_all(body.as_bytes())?;
                return Ok(path);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("transcript numbering overflowed")
}

pub fn load_transcript(path: &Path) -> Result<Transcript, GatewayError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| GatewayError::Protocol(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convo() -> Transcript {
        let mut t = Transcript::new(AgentRole::Code, "sys");
        t.push(ChatMessage::user("make an adder"));
        t
    }

    #[test]
    fn transcript_validation() {
        let mut t = convo();
        assert!(t.validate().is_ok());
        t.push(ChatMessage::user("again"));
        assert!(t.validate().is_err());
        let no_system = Transcript {
            agent_role: AgentRole::Code,
            messages: vec![ChatMessage::user("x")],
        };
        assert!(no_system.validate().is_err());
    }

    #[test]
    fn send_requires_trailing_user_turn() {
        let gw = Gateway::scripted(["module m; endmodule"]);
        let mut t = convo();
        t.push(ChatMessage::assistant("ok"));
        assert!(matches!(gw.send_chat(&t), Err(GatewayError::InvalidTranscript(_))));
    }

    #[test]
    fn eviction_keeps_opening_request_and_newest_turn() {
        let mut t = convo();
        for i in 0..4 {
            t.push(ChatMessage::assistant(format!("answer {i} {}", "x".repeat(100))));
            t.push(ChatMessage::user(format!("review {i}")));
        }
        t.evict_to(150);
        assert!(t.validate().is_ok());
        assert_eq!(t.messages[1].content, "make an adder");
        assert_eq!(t.last().unwrap().content, "review 3");
        assert!(t.messages.len() < 10);
    }

    #[test]
    fn config_validation() {
        let mut c = AgentConfig::http("http://localhost:1/v1/chat/completions", "m");
        assert!(c.validate().is_ok());
        c.temperature = 2.5;
        assert!(c.validate().is_err());
        let c = AgentConfig::http(" ", "m");
        assert!(c.validate().is_err());
    }

    #[test]
    fn provider_specific_fields_only() {
        let ok: AgentConfig = toml::from_str(
            "model_id = \"x\"\n[provider]\nkind = \"replay\"\nreplay_dir = \"r\"\n",
        )
        .unwrap();
        assert!(!ok.is_live());
        let bad = toml::from_str::<AgentConfig>(
            "[provider]\nkind = \"replay\"\nreplay_dir = \"r\"\nendpoint = \"http://x\"\n",
        );
        assert!(bad.is_err());
    }

    #[test]
    fn record_transcript_numbers_monotonically() {
        let dir = tempfile::tempdir().unwrap();
        let t = convo();
        let p1 = record_transcript(&t, dir.path()).unwrap();
        let p2 = record_transcript(&t, dir.path()).unwrap();
        assert_eq!(p1.file_name().unwrap(), "transcript_001.json");
        assert_eq!(p2.file_name().unwrap(), "transcript_002.json");
        assert_eq!(load_transcript(&p1).unwrap(), t);
    }

    #[test]
    fn recording_tees_responses() {
        let dir = tempfile::tempdir().unwrap();
        let gw = Gateway::scripted(["one", "two"]).recording_to(dir.path()).unwrap();
        let t = convo();
        gw.send_chat(&t).unwrap();
        gw.send_chat(&t).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("002.txt")).unwrap(), "two");
    }
}
