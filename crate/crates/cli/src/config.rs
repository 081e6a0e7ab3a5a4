//! Run configuration: built-in defaults, then a TOML file, then
//! `VERILOOP_<SECTION>__<KEY>` environment variables, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};
use veriloop_core::autodv::{AutoDVConfig, DEFAULT_COVERAGE_THRESHOLD};
use veriloop_core::autoreview::AutoReviewConfig;
use veriloop_core::eda::ToolProfile;
use veriloop_core::gateway::{AgentConfig, ProviderConfig};
use veriloop_core::Budget;

pub const ENV_PREFIX: &str = "VERILOOP_";
pub const DEFAULT_CONFIG_FILE: &str = "veriloop.toml";
/// Holds the provider token unless a config names another variable.
pub const DEFAULT_API_KEY_ENV: &str = "VERILOOP_API_KEY";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    HttpChat,
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub provider: Provider,
    pub endpoint: String,
    pub replay_dir: Option<PathBuf>,
    pub model: String,
    pub temperature: f64,
    pub request_timeout_seconds: u64,
    pub max_retries: u32,
    /// Name of the variable holding the token, never the token itself.
    pub api_key_env: String,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            provider: Provider::HttpChat,
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            replay_dir: None,
            model: "gpt-4o".into(),
            temperature: 0.2,
            request_timeout_seconds: 120,
            max_retries: 3,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
        }
    }
}

impl AgentSection {
    pub fn to_agent(&self) -> Result<AgentConfig> {
        let mut agent = match self.provider {
            Provider::HttpChat => {
                let mut a = AgentConfig::http(self.endpoint.clone(), self.model.clone());
                if let ProviderConfig::HttpChat { api_key_env, .. } = &mut a.provider {
                    // The default variable is optional; a configured one is required.
                    let name = &self.api_key_env;
                    let wanted = !name.is_empty()
                        && (name != DEFAULT_API_KEY_ENV || std::env::var_os(name).is_some());
                    *api_key_env = wanted.then(|| name.clone());
                }
                a
            }
            Provider::Replay => {
                let Some(dir) = &self.replay_dir else {
                    bail!("replay provider needs replay_dir");
                };
                let mut a = AgentConfig::replay(dir.clone());
                a.model_id = self.model.clone();
                a
            }
        };
        agent.temperature = self.temperature;
        agent.request_timeout_seconds = self.request_timeout_seconds;
        agent.max_retries = self.max_retries;
        Ok(agent)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolsSection {
    /// `icarus`, `stub`, or a path to a profile file.
    pub profile: String,
    pub rules_dir: Option<PathBuf>,
}

impl Default for ToolsSection {
    fn default() -> Self {
        ToolsSection {
            profile: "icarus".into(),
            rules_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetSection {
    pub max_iterations: u32,
    pub max_agent_calls: u32,
    pub tool_timeout_seconds: u64,
}

impl Default for BudgetSection {
    fn default() -> Self {
        let b = Budget::default();
        BudgetSection {
            max_iterations: b.max_iterations,
            max_agent_calls: b.max_agent_calls,
            tool_timeout_seconds: b.tool_timeout_seconds,
        }
    }
}

impl BudgetSection {
    fn to_budget(&self, what: &str) -> Result<Budget> {
        Budget::new(self.max_iterations, self.max_agent_calls, self.tool_timeout_seconds)
            .with_context(|| format!("[{what}]"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub coverage_threshold: f64,
    pub max_iterations: u32,
    pub max_agent_calls: u32,
    pub regenerate_testbench: bool,
}

impl Default for VerifySection {
    fn default() -> Self {
        let b = Budget::default();
        VerifySection {
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
            max_iterations: b.max_iterations,
            max_agent_calls: b.max_agent_calls,
            regenerate_testbench: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub workspace: PathBuf,
    pub jobs: usize,
    /// error, warn, info, debug or trace.
    pub log_level: String,
    pub interactive: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            workspace: PathBuf::from("veriloop-runs"),
            jobs: 4,
            log_level: "warn".into(),
            interactive: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub code_agent: AgentSection,
    /// Present means a separate Review Agent analyses tool feedback.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub review_agent: Option<AgentSection>,
    pub tools: ToolsSection,
    pub budget: BudgetSection,
    pub verify: VerifySection,
    pub run: RunSection,
}

fn merge(into: &mut Table, from: Table) {
    for (key, value) in from {
        match (into.get_mut(&key), value) {
            (Some(Value::Table(dst)), Value::Table(src)) => merge(dst, src),
            (_, value) => {
                into.insert(key, value);
            }
        }
    }
}

/// Environment values are read as TOML scalars when they parse as one
/// (`3`, `0.5`, `true`) and as plain strings otherwise.
fn env_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .filter(|v| !matches!(v, Value::Table(_) | Value::Array(_)))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

pub fn env_overrides<I>(vars: I) -> Table
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut out = Table::new();
    for (name, raw) in vars {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else { continue };
        let Some((section, key)) = rest.split_once("__") else { continue };
        let section = section.to_ascii_lowercase();
        let key = key.to_ascii_lowercase();
        let entry = out
            .entry(section)
            .or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = entry {
            t.insert(key, env_value(&raw));
        }
    }
    out
}

impl RunConfig {
    /// Defaults, then `file` (or `./veriloop.toml` when present), then the
    /// given environment. Unknown keys anywhere are an error.
    pub fn layered<I>(file: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = Table::try_from(RunConfig::default()).expect("defaults serialize");
        let implicit = Path::new(DEFAULT_CONFIG_FILE);
        let path = file.or_else(|| implicit.is_file().then_some(implicit));
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let parsed: Table = text
                .parse()
                .with_context(|| format!("parsing config {}", path.display()))?;
            merge(&mut table, parsed);
        }
        merge(&mut table, env_overrides(env));
        Value::Table(table)
            .try_into()
            .context("invalid configuration")
    }

    pub fn tool_profile(&self) -> Result<ToolProfile> {
        if let Some(p) = ToolProfile::builtin(&self.tools.profile) {
            return Ok(p);
        }
        let path = Path::new(&self.tools.profile);
        let text = fs::read_to_string(path)
            .with_context(|| format!("tool profile {:?} is neither built in nor a readable file", self.tools.profile))?;
        toml::from_str(&text).with_context(|| format!("parsing tool profile {}", path.display()))
    }

    pub fn review_config(&self) -> Result<AutoReviewConfig> {
        let mut c = AutoReviewConfig::new(self.code_agent.to_agent()?, self.tool_profile()?);
        c.budget = self.budget.to_budget("budget")?;
        if let Some(r) = &self.review_agent {
            c.review_agent = Some(r.to_agent()?);
        }
        c.rules_dir = self.tools.rules_dir.clone();
        c.interactive = self.run.interactive;
        Ok(c)
    }

    pub fn dv_config(&self) -> Result<AutoDVConfig> {
        let mut dv = AutoDVConfig::new(self.review_config()?);
        dv.coverage_threshold = self.verify.coverage_threshold;
        dv.dv_budget = BudgetSection {
            max_iterations: self.verify.max_iterations,
            max_agent_calls: self.verify.max_agent_calls,
            tool_timeout_seconds: self.budget.tool_timeout_seconds,
        }
        .to_budget("verify")?;
        dv.regenerate_testbench = self.verify.regenerate_testbench;
        Ok(dv)
    }

    /// Points both agents at a replay directory; the review agent reads
    /// `<dir>/review`.
    pub fn use_replay(&mut self, dir: &Path) {
        self.code_agent.provider = Provider::Replay;
        self.code_agent.replay_dir = Some(dir.to_path_buf());
        if let Some(r) = &mut self.review_agent {
            r.provider = Provider::Replay;
            r.replay_dir = Some(dir.join("review"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::layered(Some(Path::new("/nonexistent/never")), vec![]);
        assert!(c.is_err());
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.toml");
        fs::write(&empty, "").unwrap();
        assert_eq!(RunConfig::layered(Some(&empty), vec![]).unwrap(), RunConfig::default());
    }

    #[test]
    fn env_beats_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[budget]\nmax_iterations = 7\nmax_agent_calls = 9\n[code_agent]\nmodel = \"a\"\n").unwrap();
        let env = vars(&[
            ("VERILOOP_BUDGET__MAX_ITERATIONS", "3"),
            ("VERILOOP_CODE_AGENT__MODEL", "b-1.5"),
            ("VERILOOP_VERIFY__COVERAGE_THRESHOLD", "0.75"),
            ("VERILOOP_API_KEY", "secret"),
            ("HOME", "/root"),
        ]);
        let c = RunConfig::layered(Some(&path), env).unwrap();
        assert_eq!(c.budget.max_iterations, 3);
        assert_eq!(c.budget.max_agent_calls, 9);
        assert_eq!(c.code_agent.model, "b-1.5");
        assert_eq!(c.verify.coverage_threshold, 0.75);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "[budget]\nmax_iteration = 7\n").unwrap();
        assert!(RunConfig::layered(Some(&path), vec![]).is_err());
        fs::write(&path, "[code_agent]\napi_key = \"sk-live\"\n").unwrap();
        assert!(RunConfig::layered(Some(&path), vec![]).is_err());
        assert!(RunConfig::layered(None::<&Path>.or(Some(&dir.path().join("missing"))), vec![]).is_err());
        let env = vars(&[("VERILOOP_NOPE__X", "1")]);
        fs::write(&path, "").unwrap();
        assert!(RunConfig::layered(Some(&path), env).is_err());
    }

    #[test]
    fn env_values_keep_strings() {
        assert_eq!(env_value("4"), Value::Integer(4));
        assert_eq!(env_value("true"), Value::Boolean(true));
        assert_eq!(env_value("gpt-4o"), Value::String("gpt-4o".into()));
        assert_eq!(env_value("[1]"), Value::String("[1]".into()));
    }

    #[test]
    fn replay_sections_build_agents() {
        let mut c = RunConfig::default();
        c.review_agent = Some(AgentSection::default());
        c.tools.profile = "stub".into();
        c.use_replay(Path::new("/tmp/r"));
        let rc = c.review_config().unwrap();
        assert!(matches!(&rc.code_agent.provider, ProviderConfig::Replay { replay_dir } if replay_dir == Path::new("/tmp/r")));
        assert!(matches!(&rc.review_agent.unwrap().provider, ProviderConfig::Replay { replay_dir } if replay_dir == Path::new("/tmp/r/review")));
    }
}
