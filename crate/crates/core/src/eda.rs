//! Tool-agnostic compile / simulate / coverage adapters.
//!
//! Each stage is a list of argument vectors (never a shell string) with
//! placeholders, run inside a workspace directory under a timeout with a
//! scrubbed environment. Timeouts kill the whole process group and are
//! reported in-band so the loops can react to them.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::{Condvar, LazyLock, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::{self, DistillError};
use crate::hdl;
use crate::model::{
    is_filesystem_safe, Category, CompileReport, CoverageReport, Diagnostic, FailedAssertion,
    RtlBundle, Severity, SimReport,
};
use crate::rules::{RuleError, RuleSet};

pub const DESIGN_FILE: &str = "design.v";
pub const TESTBENCH_FILE: &str = "testbench.v";
pub const OUT_DIR: &str = "out";

/// Placeholders a command template may use.
pub const PLACEHOLDERS: &[&str] = &[
    "design",
    "testbench",
    "out",
    "workdir",
    "top",
    "tb_top",
    "dut_instance",
];

const LOG_HEAD_BYTES: usize = 4 << 20;
const LOG_TAIL_BYTES: usize = 4 << 20;
const KILL_GRACE: Duration = Duration::from_secs(1);

const STUB_COMPILE: &str = include_str!("../tools/stub/stub_compile.py");
const STUB_SIM: &str = include_str!("../tools/stub/stub_sim.py");
const STUB_COVER: &str = include_str!("../tools/stub/stub_cover.py");

#[derive(Debug, Error)]
pub enum EdaError {
    #[error("tool binary {binary:?} not found on PATH")]
    ToolNotFound { binary: String },
    #[error("design source is empty")]
    EmptyDesign,
    #[error("missing artifact {0}; run the previous stage first")]
    MissingArtifact(String),
    #[error("coverage output could not be parsed")]
    ParseFailure { raw: String },
    #[error("{stage} timed out after {seconds} s")]
    Timeout { stage: &'static str, seconds: u64, raw: String },
    #[error("profile {profile}: {why}")]
    BadProfile { profile: String, why: String },
    #[error("task id {0:?} is not filesystem-safe")]
    BadTaskId(String),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl EdaError {
    /// Raw tool output carried by the error, if any.
    pub fn raw_log(&self) -> Option<&str> {
        match self {
            EdaError::ParseFailure { raw } | EdaError::Timeout { raw, .. } => Some(raw),
            _ => None,
        }
    }
}

pub type CommandTemplate = Vec<String>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolProfile {
    pub tool_id: String,
    /// Name of the parse rule set (see [`RuleSet::resolve`]).
    pub rules: String,
    pub compile_cmd: Vec<CommandTemplate>,
    pub sim_cmd: Vec<CommandTemplate>,
    #[serde(default)]
    pub coverage_cmd: Vec<CommandTemplate>,
    /// File the compile stage must leave behind for simulation.
    pub compiled_artifact: String,
    /// File simulation must leave behind for coverage.
    #[serde(default)]
    pub coverage_input: Option<String>,
    #[serde(default = "default_compile_timeout")]
    pub compile_timeout_seconds: u64,
    #[serde(default = "default_sim_timeout")]
    pub sim_timeout_seconds: u64,
    #[serde(default = "default_compile_timeout")]
    pub coverage_timeout_seconds: u64,
    /// Environment variables passed through besides PATH.
    #[serde(default)]
    pub env_allow: Vec<String>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

fn default_compile_timeout() -> u64 {
    60
}
fn default_sim_timeout() -> u64 {
    120
}

fn argv(parts: &[&str]) -> CommandTemplate {
    parts.iter().map(|s| s.to_string()).collect()
}

impl ToolProfile {
    /// Icarus Verilog for compile and simulation, Covered for coverage.
    pub fn icarus() -> Self {
        ToolProfile {
            tool_id: "icarus".into(),
            rules: "icarus-covered".into(),
            compile_cmd: vec![argv(&[
                "iverilog", "-g2012", "-o", "{out}/sim.vvp", "{design}", "{testbench}",
            ])],
            sim_cmd: vec![argv(&["vvp", "-n", "{out}/sim.vvp"])],
            coverage_cmd: vec![
                argv(&[
                    "covered", "score", "-t", "{top}", "-i", "{tb_top}.{dut_instance}", "-v",
                    "{design}", "-vcd", "dump.vcd", "-o", "{out}/cov.cdd",
                ]),
                argv(&["covered", "report", "-m", "ltcf", "-d", "s", "{out}/cov.cdd"]),
            ],
            compiled_artifact: "{out}/sim.vvp".into(),
            coverage_input: Some("dump.vcd".into()),
            compile_timeout_seconds: 60,
            sim_timeout_seconds: 120,
            coverage_timeout_seconds: 60,
            env_allow: vec![],
            env: BTreeMap::new(),
        }
    }

    /// Fake tools (python3 scripts) that speak the Icarus/Covered log
    /// formats; lets the whole pipeline run on machines without EDA tools.
    pub fn stub() -> Self {
        ToolProfile {
            tool_id: "stub".into(),
            rules: "icarus-covered".into(),
            compile_cmd: vec![argv(&[
                "python3", "-c", STUB_COMPILE, "{out}/sim.stub", "{design}", "{testbench}",
            ])],
            sim_cmd: vec![argv(&["python3", "-c", STUB_SIM, "{out}/sim.stub"])],
            coverage_cmd: vec![argv(&["python3", "-c", STUB_COVER, "{out}/sim.stub"])],
            compiled_artifact: "{out}/sim.stub".into(),
            coverage_input: Some("dump.vcd".into()),
            compile_timeout_seconds: 60,
            sim_timeout_seconds: 120,
            coverage_timeout_seconds: 60,
            env_allow: vec![],
            env: BTreeMap::new(),
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "icarus" => Some(Self::icarus()),
            "stub" => Some(Self::stub()),
            _ => None,
        }
    }

    pub fn with_timeouts(mut self, seconds: u64) -> Self {
        self.compile_timeout_seconds = seconds;
        self.sim_timeout_seconds = seconds;
        self.coverage_timeout_seconds = seconds;
        self
    }

    /// Caps every stage timeout at `seconds`.
    pub fn capped_timeouts(mut self, seconds: u64) -> Self {
        self.compile_timeout_seconds = self.compile_timeout_seconds.min(seconds);
        self.sim_timeout_seconds = self.sim_timeout_seconds.min(seconds);
        self.coverage_timeout_seconds = self.coverage_timeout_seconds.min(seconds);
        self
    }

    pub fn validate(&self) -> Result<(), EdaError> {
        let bad = |why: String| EdaError::BadProfile {
            profile: self.tool_id.clone(),
            why,
        };
        if self.compile_cmd.is_empty() || self.sim_cmd.is_empty() {
            return Err(bad("compile_cmd and sim_cmd need at least one command".into()));
        }
        for (stage, t) in [
            ("compile", self.compile_timeout_seconds),
            ("sim", self.sim_timeout_seconds),
            ("coverage", self.coverage_timeout_seconds),
        ] {
            if t == 0 {
                return Err(bad(format!("{stage} timeout must be positive")));
            }
        }
        let templates = self
            .compile_cmd
            .iter()
            .chain(&self.sim_cmd)
            .chain(&self.coverage_cmd);
        for cmd in templates {
            if cmd.first().is_none_or(|p| p.is_empty()) {
                return Err(bad("empty command".into()));
            }
            for arg in cmd {
                check_placeholders(arg).map_err(&bad)?;
            }
        }
        check_placeholders(&self.compiled_artifact).map_err(&bad)?;
        if let Some(input) = &self.coverage_input {
            check_placeholders(input).map_err(&bad)?;
        }
        Ok(())
    }
}

fn placeholder_names(arg: &str) -> impl Iterator<Item = &str> {
    arg.match_indices('{').filter_map(move |(i, _)| {
        let rest = &arg[i + 1..];
        let end = rest.find('}')?;
        let name = &rest[..end];
        (!name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_')).then_some(name)
    })
}

fn check_placeholders(arg: &str) -> Result<(), String> {
    for name in placeholder_names(arg) {
        if !PLACEHOLDERS.contains(&name) {
            return Err(format!("undeclared placeholder {{{name}}} in {arg:?}"));
        }
    }
    Ok(())
}

/// Values substituted into command templates for one bundle.
struct Substitutions {
    values: BTreeMap<&'static str, String>,
    has_testbench: bool,
}

impl Substitutions {
    fn new(bundle: Option<&RtlBundle>, workdir: &Path) -> Self {
        let mut values = BTreeMap::new();
        values.insert("design", DESIGN_FILE.to_string());
        values.insert("testbench", TESTBENCH_FILE.to_string());
        values.insert("out", OUT_DIR.to_string());
        values.insert("workdir", workdir.display().to_string());
        let (top, tb_top, dut) = match bundle {
            Some(b) => {
                let tb_top = hdl::first_module_name(&b.testbench_source).unwrap_or_default();
                let dut = hdl::instances_of(&b.testbench_source, &b.top_module)
                    .into_iter()
                    .next()
                    .unwrap_or_else(|| "dut".to_string());
                (b.top_module.clone(), tb_top, dut)
            }
            None => Default::default(),
        };
        values.insert("top", top);
        values.insert("tb_top", tb_top);
        values.insert("dut_instance", dut);
        Substitutions {
            values,
            has_testbench: bundle.is_some_and(RtlBundle::has_testbench),
        }
    }

    fn expand_arg(&self, arg: &str) -> String {
        let mut out = arg.to_string();
        for (name, value) in &self.values {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }

    fn expand(&self, template: &[String]) -> Vec<String> {
        template
            .iter()
            .filter(|a| self.has_testbench || a.as_str() != "{testbench}")
            .map(|a| self.expand_arg(a))
            .collect()
    }
}

/// Bounds how many external tool processes run at once, process-wide.
pub struct ProcessSlots {
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

impl ProcessSlots {
    fn new(limit: usize) -> Self {
        ProcessSlots {
            state: Mutex::new((0, limit.max(1))),
            freed: Condvar::new(),
        }
    }

    pub fn set_limit(&self, limit: usize) {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        s.1 = limit.max(1);
        self.freed.notify_all();
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        while s.0 >= s.1 {
            s = self.freed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        s.0 += 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a ProcessSlots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let mut s = self.0.state.lock().unwrap_or_else(|e| e.into_inner());
        s.0 -= 1;
        self.0.freed.notify_one();
    }
}

pub static PROCESS_SLOTS: LazyLock<ProcessSlots> = LazyLock::new(|| {
    ProcessSlots::new(thread::available_parallelism().map(|n| n.get()).unwrap_or(4))
});

#[derive(Debug)]
struct RunOutput {
    log: String,
    success: bool,
    exit_code: Option<i32>,
    timed_out: bool,
}

/// Head and tail of a byte stream; the middle is dropped past the limits.
struct BoundedLog {
    head: Vec<u8>,
    tail: VecDeque<u8>,
    dropped: usize,
}

impl BoundedLog {
    fn new() -> Self {
        BoundedLog { head: Vec::new(), tail: VecDeque::new(), dropped: 0 }
    }

    fn push(&mut self, mut bytes: &[u8]) {
        let room = LOG_HEAD_BYTES.saturating_sub(self.head.len());
        let take = room.min(bytes.len());
        self.head.extend_from_slice(&bytes[..take]);
        bytes = &bytes[take..];
        self.tail.extend(bytes);
        while self.tail.len() > LOG_TAIL_BYTES {
            let excess = self.tail.len() - LOG_TAIL_BYTES;
            self.tail.drain(..excess);
            self.dropped += excess;
        }
    }

    fn into_string(self) -> String {
        let mut s = String::from_utf8_lossy(&self.head).into_owned();
        if self.dropped > 0 {
            s.push_str(&format!("\n[... {} bytes of output dropped ...]\n", self.dropped));
        }
        let tail: Vec<u8> = self.tail.into_iter().collect();
        s.push_str(&String::from_utf8_lossy(&tail));
        s
    }
}

fn scrubbed_env(profile: &ToolProfile) -> Vec<(String, String)> {
    let mut env = Vec::new();
    if let Ok(path) = std::env::var("PATH") {
        env.push(("PATH".to_string(), path));
    }
    for key in &profile.env_allow {
        if let Ok(v) = std::env::var(key) {
            env.push((key.clone(), v));
        }
    }
    env.extend(profile.env.iter().map(|(k, v)| (k.clone(), v.clone())));
    env
}

fn kill_group(pid: u32) {
    // The child leads its own process group, so this reaps grandchildren too.
    unsafe {
        libc::kill(-(pid as i32), libc::SIGKILL);
    }
}

fn run_command(
    args: &[String],
    cwd: &Path,
    env: &[(String, String)],
    timeout: Duration,
) -> Result<RunOutput, EdaError> {
    let _slot = PROCESS_SLOTS.acquire();
    let (mut reader, writer) = std::io::pipe()?;
    let mut cmd = Command::new(&args[0]);
    cmd.args(&args[1..])
        .current_dir(cwd)
        .env_clear()
        .envs(env.iter().map(|(k, v)| (k, v)))
        .stdin(Stdio::null())
        .stdout(writer.try_clone()?)
        .stderr(writer)
        .process_group(0);
    let spawned = cmd.spawn();
    // Release our copies of the pipe's write end.
    drop(cmd);
    let mut child = match spawned {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(EdaError::ToolNotFound { binary: args[0].clone() })
        }
        Err(e) => return Err(e.into()),
    };
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut log = BoundedLog::new();
        let mut buf = [0u8; 8192];
        loop {
            match reader.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => log.push(&buf[..n]),
            }
        }
        let _ = tx.send(log.into_string());
    });

    let deadline = Instant::now() + timeout;
    let mut timed_out = false;
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if Instant::now() >= deadline {
            timed_out = true;
            kill_group(child.id());
            break child.wait()?;
        }
        thread::sleep(Duration::from_millis(5));
    };
    if !timed_out {
        // Stragglers in the group still hold the pipe open; do not wait on them.
        kill_group(child.id());
    }
    let log = rx.recv_timeout(KILL_GRACE).unwrap_or_default();
    Ok(RunOutput {
        log,
        success: status.success() && !timed_out,
        exit_code: status.code(),
        timed_out,
    })
}

/// Runs commands in order, concatenating output, stopping at the first
/// failure or timeout.
fn run_stage(
    commands: &[CommandTemplate],
    subs: &Substitutions,
    cwd: &Path,
    env: &[(String, String)],
    timeout_seconds: u64,
) -> Result<(RunOutput, Duration), EdaError> {
    let started = Instant::now();
    let deadline = started + Duration::from_secs(timeout_seconds);
    let mut combined = RunOutput {
        log: String::new(),
        success: true,
        exit_code: Some(0),
        timed_out: false,
    };
    for template in commands {
        let args = subs.expand(template);
        let remaining = deadline.saturating_duration_since(Instant::now());
        if remaining.is_zero() {
            combined.timed_out = true;
            combined.success = false;
            break;
        }
        log::debug!("running {:?} in {}", args.first(), cwd.display());
        let out = run_command(&args, cwd, env, remaining)?;
        combined.log.push_str(&out.log);
        combined.success = out.success;
        combined.exit_code = out.exit_code;
        combined.timed_out = out.timed_out;
        if !out.success {
            break;
        }
    }
    Ok((combined, started.elapsed()))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
    pub task_id: String,
}

impl Workspace {
    /// `root/<name>`, created if missing.
    pub fn subdir(&self, name: &str) -> Result<PathBuf, EdaError> {
        let dir = self.root.join(name);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn iteration_dir(&self, index: u32) -> Result<PathBuf, EdaError> {
        self.subdir(&format!("iter_{index:03}"))
    }
}

/// Creates `base_dir/<task_id>/run_NNN` with the next free number.
pub fn make_workspace(task_id: &str, base_dir: &Path) -> Result<Workspace, EdaError> {
    if !is_filesystem_safe(task_id) {
        return Err(EdaError::BadTaskId(task_id.to_string()));
    }
    let task_dir = base_dir.join(task_id);
    fs::create_dir_all(&task_dir)?;
    let task_dir = task_dir.canonicalize()?;
    for n in 1u32.. {
        let root = task_dir.join(format!("run_{n:03}"));
        match fs::create_dir(&root) {
            Ok(()) => {
                return Ok(Workspace {
                    root,
                    task_id: task_id.to_string(),
                })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e.into()),
        }
    }
    unreachable!("run counter overflowed")
}

/// A tool profile bound to its parse rules.
pub struct Toolchain {
    pub profile: ToolProfile,
    rules: RuleSet,
}

impl Toolchain {
    pub fn new(profile: ToolProfile, rules: RuleSet) -> Result<Self, EdaError> {
        profile.validate()?;
        Ok(Toolchain { profile, rules })
    }

    /// Resolves the profile's rule set from `rules_dir` or the built-ins.
    pub fn from_profile(profile: ToolProfile, rules_dir: Option<&Path>) -> Result<Self, EdaError> {
        let rules = RuleSet::resolve(&profile.rules, rules_dir)?;
        Self::new(profile, rules)
    }

    pub fn stub() -> Self {
        Self::from_profile(ToolProfile::stub(), None).expect("built-in stub profile is valid")
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    /// Writes the bundle's sources into `dir` and compiles them.
    pub fn compile(&self, bundle: &RtlBundle, dir: &Path) -> Result<CompileReport, EdaError> {
        if bundle.design_source.trim().is_empty() {
            return Err(EdaError::EmptyDesign);
        }
        fs::create_dir_all(dir.join(OUT_DIR))?;
        fs::write(dir.join(DESIGN_FILE), &bundle.design_source)?;
        let tb_path = dir.join(TESTBENCH_FILE);
        if bundle.has_testbench() {
            fs::write(&tb_path, &bundle.testbench_source)?;
        } else if tb_path.exists() {
            fs::remove_file(&tb_path)?;
        }
        let subs = Substitutions::new(Some(bundle), dir);
        let artifact = dir.join(subs.expand_arg(&self.profile.compiled_artifact));
        if artifact.exists() {
            fs::remove_file(&artifact)?;
        }
        let env = scrubbed_env(&self.profile);
        let timeout = self.profile.compile_timeout_seconds;
        let (out, wall) = run_stage(&self.profile.compile_cmd, &subs, dir, &env, timeout)?;
        let mut diagnostics = distill::parse_compile_log(&self.rules, &out.log, out.success);
        if out.timed_out {
            diagnostics.push(Diagnostic::file_level(
                Severity::Error,
                Category::Other,
                format!("compile timed out after {timeout} s"),
            ));
        }
        Ok(CompileReport::new(
            diagnostics,
            out.success,
            out.log,
            self.profile.tool_id.clone(),
            wall.as_secs_f64(),
        ))
    }

    /// Simulates the artifact a previous compile left in `dir`.
    pub fn simulate(&self, bundle: &RtlBundle, dir: &Path) -> Result<SimReport, EdaError> {
        let subs = Substitutions::new(Some(bundle), dir);
        let artifact = subs.expand_arg(&self.profile.compiled_artifact);
        if !dir.join(&artifact).exists() {
            return Err(EdaError::MissingArtifact(artifact));
        }
        let env = scrubbed_env(&self.profile);
        let (out, _) = run_stage(
            &self.profile.sim_cmd,
            &subs,
            dir,
            &env,
            self.profile.sim_timeout_seconds,
        )?;
        let report = distill::parse_sim_log(&self.rules, &out.log, out.timed_out);
        if report.passed && !out.success {
            let mut failures = report.failed_assertions;
            failures.push(FailedAssertion {
                label: "simulator-exit".into(),
                sim_time: None,
                message: format!(
                    "simulator exited with status {}",
                    out.exit_code.map_or("unknown".to_string(), |c| c.to_string())
                ),
            });
            return Ok(SimReport::new(failures, report.mismatch_count, false, report.raw_log));
        }
        Ok(report)
    }

    /// Runs the coverage commands over the simulation dump in `dir`.
    pub fn measure_coverage(&self, bundle: &RtlBundle, dir: &Path) -> Result<CoverageReport, EdaError> {
        if self.profile.coverage_cmd.is_empty() {
            return Err(EdaError::ParseFailure {
                raw: "no coverage command configured".into(),
            });
        }
        let subs = Substitutions::new(Some(bundle), dir);
        if let Some(input) = &self.profile.coverage_input {
            let input = subs.expand_arg(input);
            if !dir.join(&input).exists() {
                return Err(EdaError::MissingArtifact(input));
            }
        }
        let env = scrubbed_env(&self.profile);
        let seconds = self.profile.coverage_timeout_seconds;
        let (out, _) = run_stage(&self.profile.coverage_cmd, &subs, dir, &env, seconds)?;
        if out.timed_out {
            return Err(EdaError::Timeout {
                stage: "coverage",
                seconds,
                raw: out.log,
            });
        }
        distill::parse_coverage_report(&self.rules, &out.log).map_err(|e| match e {
            DistillError::ParseFailure { raw } => EdaError::ParseFailure { raw },
            DistillError::NothingToDistill => unreachable!("coverage parsing never distills"),
        })
    }
}

/// Convenience wrappers mirroring the stage names.
pub fn compile(tools: &Toolchain, bundle: &RtlBundle, ws: &Workspace) -> Result<CompileReport, EdaError> {
    tools.compile(bundle, &ws.root)
}

pub fn simulate(tools: &Toolchain, bundle: &RtlBundle, ws: &Workspace) -> Result<SimReport, EdaError> {
    tools.simulate(bundle, &ws.root)
}

pub fn measure_coverage(
    tools: &Toolchain,
    bundle: &RtlBundle,
    ws: &Workspace,
) -> Result<CoverageReport, EdaError> {
    tools.measure_coverage(bundle, &ws.root)
}
