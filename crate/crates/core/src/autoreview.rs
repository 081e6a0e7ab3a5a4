//! The syntax-repair loop: generate a bundle, compile it, distill the errors
//! and re-prompt the Code Agent until the compile is clean or the budget is
//! spent.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::{self, DistillOptions, DEFAULT_EXCERPT_BYTES, DEFAULT_ISSUE_CAP};
use crate::eda::{EdaError, ToolProfile, Toolchain, Workspace};
use crate::gateway::{
    extract_rtl_bundle, record_transcript, AgentConfig, AgentRole, ChatMessage, ExtractError,
    Gateway, GatewayError, Transcript,
};
use crate::hdl;
use crate::model::{
    to_canonical_json, Budget, DesignTask, IterationRecord, LoopOutcome, LoopStatus, ModelError,
    PromptCase, ReviewFeedback, RtlBundle, Stage,
};

pub const OUTCOME_FILE: &str = "outcome.json";
pub const TRANSCRIPT_DIR: &str = "transcripts";
pub const READY_MARKER: &str = "READY";
pub const MAX_CLARIFICATION_ROUNDS: u32 = 3;
pub const DEFAULT_CONTEXT_BUDGET_BYTES: usize = 96 * 1024;

pub const CODE_SYSTEM_PROMPT: &str = "You are the Code Agent of an RTL design flow. You write \
synthesizable Verilog-2005 and self-checking testbenches. Always return complete source files in \
```verilog fenced blocks, one module file per block. Feedback from the compiler, simulator and \
coverage tools will follow; revise the code to address it.";

const ELICIT_SYSTEM_PROMPT: &str = "You are preparing to write Verilog for a hardware designer \
whose request leaves details open. Ask the few questions whose answers change the design (widths, \
ports, reset behaviour, timing). Ask them all in one message. When you have enough information, \
reply with the single word READY.";

const GENERATION_INSTRUCTIONS: &str = "Write the design in one ```verilog fenced block. Then \
write a self-checking testbench in a second ```verilog block: a port-less module named tb_<top> \
that instantiates the design as `dut`, calls $dumpfile(\"dump.vcd\") and $dumpvars(0, tb_<top>), \
prints a line starting with \"ERROR:\" for every failed check, and ends with $finish.";

const ASSUMPTIONS_NOTE: &str = "Some details are unspecified. Choose reasonable defaults and \
state your assumptions as comments at the top of the design.";

const DISAMBIGUATION_PROMPT: &str = "I could not tell which code block is the testbench. Reply \
again with exactly two ```verilog blocks: the complete design first, then the testbench, whose \
module name starts with tb_.";

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("clarification needs an interactive session")]
    InteractionUnavailable,
    #[error("invalid input: {0}")]
    Invalid(#[from] ModelError),
    #[error("agent: {0}")]
    Agent(#[from] GatewayError),
    #[error("tools: {0}")]
    Tool(#[from] EdaError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

static IMPERATIVE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(compile|compiles|verify|verification|test|simulate|lint|check)\b").unwrap()
});
static PORT_TOKEN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(inputs?|outputs?|inouts?|ports?)\b|\[\s*\d+\s*:\s*\d+\s*\]").unwrap()
});
static BEHAVIOUR: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?xi)\b(
            resets?|counts?|counting|increments?|decrements?|adds?|sums?|subtracts?|multipl\w*|
            divid\w*|shifts?|selects?|compares?|when|whenever|if|else|assigns?|drives?|sets?|
            clears?|loads?|stores?|holds?|wraps?|toggles?|enables?|equals?|computes?|implements?|
            returns?|generates?|produces?|detects?|transitions?|latch\w*|rising|falling|posedge|
            negedge|synchronous|asynchronous|xor|invert\w*|mux\w*|multiplex\w*|
            encod\w*|decod\w*|accumulat\w*|register\w*
        )\b|[=<>]",
    )
    .unwrap()
});

fn has_embedded_module(text: &str) -> bool {
    hdl::modules(text)
        .iter()
        .any(|m| text[m.span.clone()].trim_end().ends_with("endmodule"))
}

/// Sorts a request into Detailed, Vague or TaskBased.
pub fn classify_prompt(prompt: &str, provided_rtl: Option<&str>) -> PromptCase {
    if provided_rtl.is_some_and(|r| !r.trim().is_empty())
        || (IMPERATIVE.is_match(prompt) && has_embedded_module(prompt))
    {
        return PromptCase::TaskBased;
    }
    if PORT_TOKEN.is_match(prompt) && BEHAVIOUR.is_match(prompt) {
        return PromptCase::Detailed;
    }
    PromptCase::Vague
}

/// Module source embedded in a prompt, if any.
pub fn embedded_rtl(prompt: &str) -> Option<String> {
    let spans: Vec<String> = hdl::modules(prompt)
        .into_iter()
        .map(|m| prompt[m.span].trim_end().to_string())
        .filter(|s| s.ends_with("endmodule"))
        .collect();
    (!spans.is_empty()).then(|| spans.join("\n\n") + "\n")
}

/// Where answers to clarifying questions come from.
pub trait AnswerChannel {
    /// `None` ends the dialogue.
    fn answer(&mut self, questions: &str) -> Option<String>;
}

pub struct ScriptedAnswers(VecDeque<String>);

impl ScriptedAnswers {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedAnswers(answers.into_iter().map(Into::into).collect())
    }
}

impl AnswerChannel for ScriptedAnswers {
    fn answer(&mut self, _questions: &str) -> Option<String> {
        self.0.pop_front()
    }
}

/// Shows questions on stderr and reads one answer line from stdin; an
/// empty line or end of input ends the dialogue.
pub struct TerminalAnswers;

impl AnswerChannel for TerminalAnswers {
    fn answer(&mut self, questions: &str) -> Option<String> {
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "\n{}\n> ", questions.trim());
        let _ = err.flush();
        let mut line = String::new();
        std::io::stdin().lock().read_line(&mut line).ok()?;
        let line = line.trim();
        (!line.is_empty()).then(|| line.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Elicitation {
    pub prompt: String,
    pub agent_calls: u32,
    pub transcript: Transcript,
}

fn signals_ready(reply: &str) -> bool {
    reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .is_some_and(|l| l.trim_end_matches('.').eq_ignore_ascii_case(READY_MARKER))
}

/// Clarifying Q&A with the Code Agent, at most three rounds and at most
/// `max_calls` agent calls.
pub fn elicit_details(
    prompt: &str,
    gateway: &Gateway,
    answers: Option<&mut dyn AnswerChannel>,
    interactive: bool,
    max_calls: u32,
) -> Result<Elicitation, EngineError> {
    let answers = match answers {
        Some(a) if interactive => a,
        _ => return Err(EngineError::InteractionUnavailable),
    };
    let mut t = Transcript::new(AgentRole::Code, ELICIT_SYSTEM_PROMPT);
    t.push(ChatMessage::user(format!("Design request:\n{}", prompt.trim())));
    let mut exchanges = Vec::new();
    let mut calls = 0;
    for _ in 0..MAX_CLARIFICATION_ROUNDS.min(max_calls) {
        let reply = gateway.send_chat(&t)?;
        calls += 1;
        t.push(reply.clone());
        if signals_ready(&reply.content) {
            break;
        }
        let Some(answer) = answers.answer(&reply.content) else {
            break;
        };
        exchanges.push((reply.content.trim().to_string(), answer.trim().to_string()));
        t.push(ChatMessage::user(answer));
    }
    let mut enriched = prompt.trim().to_string();
    if !exchanges.is_empty() {
        enriched.push_str("\n\nClarifications:\n");
        for (q, a) in &exchanges {
            let _ = writeln!(enriched, "Q: {q}\nA: {a}");
        }
    }
    Ok(Elicitation {
        prompt: enriched,
        agent_calls: calls,
        transcript: t,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoReviewConfig {
    pub budget: Budget,
    pub code_agent: AgentConfig,
    /// Without a review agent the distilled issues go to the Code Agent
    /// as they are.
    #[serde(default)]
    pub review_agent: Option<AgentConfig>,
    pub tool_profile: ToolProfile,
    #[serde(default)]
    pub rules_dir: Option<PathBuf>,
    #[serde(default)]
    pub interactive: bool,
    #[serde(default = "default_issue_cap")]
    pub issue_cap: usize,
    #[serde(default = "default_excerpt")]
    pub log_excerpt_bytes: usize,
    #[serde(default = "default_context_budget")]
    pub context_budget_bytes: usize,
}

fn default_issue_cap() -> usize {
    DEFAULT_ISSUE_CAP
}
fn default_excerpt() -> usize {
    DEFAULT_EXCERPT_BYTES
}
fn default_context_budget() -> usize {
    DEFAULT_CONTEXT_BUDGET_BYTES
}

impl AutoReviewConfig {
    pub fn new(code_agent: AgentConfig, tool_profile: ToolProfile) -> Self {
        AutoReviewConfig {
            budget: Budget::default(),
            code_agent,
            review_agent: None,
            tool_profile,
            rules_dir: None,
            interactive: false,
            issue_cap: DEFAULT_ISSUE_CAP,
            log_excerpt_bytes: DEFAULT_EXCERPT_BYTES,
            context_budget_bytes: DEFAULT_CONTEXT_BUDGET_BYTES,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.budget.validate()?;
        self.code_agent.validate()?;
        if let Some(r) = &self.review_agent {
            r.validate()?;
        }
        self.tool_profile.validate()?;
        Ok(())
    }

    pub(crate) fn toolchain(&self) -> Result<Toolchain, EdaError> {
        let profile = self
            .tool_profile
            .clone()
            .capped_timeouts(self.budget.tool_timeout_seconds);
        Toolchain::from_profile(profile, self.rules_dir.as_deref())
    }
}

/// The live handles a loop talks to.
pub struct Agents {
    pub code: Gateway,
    pub review: Option<Gateway>,
    pub answers: Option<Box<dyn AnswerChannel + Send>>,
}

impl Agents {
    pub fn new(code: Gateway) -> Self {
        Agents {
            code,
            review: None,
            answers: None,
        }
    }

    pub fn with_review(mut self, review: Gateway) -> Self {
        self.review = Some(review);
        self
    }

    pub fn with_answers(mut self, answers: Box<dyn AnswerChannel + Send>) -> Self {
        self.answers = Some(answers);
        self
    }

    pub fn from_config(config: &AutoReviewConfig) -> Result<Self, EngineError> {
        let mut agents = Agents::new(Gateway::from_config(&config.code_agent)?);
        if let Some(r) = &config.review_agent {
            agents.review = Some(Gateway::from_config(r)?);
        }
        if config.interactive {
            agents.answers = Some(Box::new(TerminalAnswers));
        }
        Ok(agents)
    }
}

/// Why a loop stopped short of success.
#[derive(Debug)]
pub(crate) enum Halt {
    Budget(String),
    Agent(String),
    Tool(String),
}

impl Halt {
    fn status(&self) -> LoopStatus {
        match self {
            Halt::Budget(_) => LoopStatus::BudgetExhausted,
            Halt::Agent(_) => LoopStatus::AgentFailure,
            Halt::Tool(_) => LoopStatus::ToolFailure,
        }
    }

    fn detail(self) -> String {
        match self {
            Halt::Budget(s) | Halt::Agent(s) | Halt::Tool(s) => s,
        }
    }
}

impl From<EdaError> for Halt {
    fn from(e: EdaError) -> Self {
        Halt::Tool(e.to_string())
    }
}

impl From<std::io::Error> for Halt {
    fn from(e: std::io::Error) -> Self {
        Halt::Tool(format!("workspace i/o: {e}"))
    }
}

pub(crate) enum Start {
    /// Compile this bundle without asking the agent.
    Bundle(RtlBundle),
    Prompt {
        text: String,
        previous: Option<RtlBundle>,
    },
}

enum Request {
    Halt(Halt),
    NoBundle(String),
}

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<(), Halt> {
    fs::write(dir.join(name), content).map_err(Halt::from)
}

/// Splits loose RTL into design and testbench; RTL that defies the
/// testbench rules is all design.
pub fn bundle_from_rtl(rtl: &str) -> Result<RtlBundle, ExtractError> {
    let fenced: String = hdl::modules(rtl)
        .into_iter()
        .map(|m| format!("```verilog\n{}\n```\n", rtl[m.span].trim_end()))
        .collect();
    match extract_rtl_bundle(&ChatMessage::assistant(fenced)) {
        Err(ExtractError::AmbiguousBundle(_)) => Ok(RtlBundle::from_sources(rtl, "")?),
        other => other,
    }
}

/// Folds a revision into the previous bundle. A reply carrying only a
/// testbench keeps the design; a reply carrying only a design keeps the
/// testbench. Testbench changes are dropped unless `tb_editable`.
pub(crate) fn merge_revision(
    previous: Option<&RtlBundle>,
    revised: RtlBundle,
    tb_editable: bool,
) -> Result<RtlBundle, ModelError> {
    let Some(prev) = previous else {
        return Ok(revised);
    };
    if revised.has_testbench() {
        if tb_editable {
            return Ok(revised);
        }
        return RtlBundle::from_sources(revised.design_source, prev.testbench_source.clone());
    }
    let declared: Vec<String> = hdl::modules(&revised.design_source)
        .into_iter()
        .map(|m| m.name)
        .collect();
    let prev_tb = hdl::first_module_name(&prev.testbench_source);
    let is_testbench = !declared.contains(&prev.top_module)
        && (prev_tb.is_some_and(|tb| declared.contains(&tb))
            || hdl::instantiates(&revised.design_source, &prev.top_module));
    if is_testbench {
        if !tb_editable {
            return Ok(prev.clone());
        }
        return RtlBundle::from_sources(prev.design_source.clone(), revised.design_source);
    }
    RtlBundle::from_sources(revised.design_source, prev.testbench_source.clone())
}

pub(crate) fn generation_prompt(request: &str, case: PromptCase, elicited: bool) -> String {
    let mut p = format!("Design request:\n{}\n\n", request.trim());
    if case == PromptCase::Vague && !elicited {
        p.push_str(ASSUMPTIONS_NOTE);
        p.push_str("\n\n");
    }
    p.push_str(GENERATION_INSTRUCTIONS);
    p
}

fn retry_prompt(why: &str) -> String {
    format!(
        "Your previous reply could not be used: {why}. Reply with the complete Verilog source in \
         ```verilog fenced blocks, the design first and the testbench (if any) second."
    )
}

pub(crate) fn testbench_prompt(bundle: &RtlBundle) -> String {
    let top = &bundle.top_module;
    format!(
        "The design below compiles. Write a self-checking testbench for it in one ```verilog \
         block: a port-less module named tb_{top} that instantiates `{top}` as `dut`, calls \
         $dumpfile(\"dump.vcd\") and $dumpvars(0, tb_{top}), exercises every input, prints a \
         line starting with \"ERROR:\" for every failed check, and ends with $finish.\n\n\
         ```verilog\n{}\n```",
        bundle.design_source.trim_end()
    )
}

/// State shared by both loops for one task.
pub(crate) struct Session<'a> {
    pub task: &'a DesignTask,
    pub config: &'a AutoReviewConfig,
    pub agents: &'a mut Agents,
    pub tools: Toolchain,
    pub ws: &'a Workspace,
    /// The request as the agents see it, after any clarification.
    pub request: String,
    pub transcript: Transcript,
    pub side_transcripts: Vec<Transcript>,
    pub trace: Vec<IterationRecord>,
    pub calls_used: u32,
    pub call_cap: u32,
    pending_calls: u32,
}

impl<'a> Session<'a> {
    pub fn new(
        task: &'a DesignTask,
        config: &'a AutoReviewConfig,
        agents: &'a mut Agents,
        ws: &'a Workspace,
        call_cap: u32,
    ) -> Result<Self, EngineError> {
        task.validate()?;
        config.validate()?;
        let tools = config.toolchain()?;
        Ok(Session {
            task,
            config,
            agents,
            tools,
            ws,
            request: task.user_prompt.clone(),
            transcript: Transcript::new(AgentRole::Code, CODE_SYSTEM_PROMPT),
            side_transcripts: Vec::new(),
            trace: Vec::new(),
            calls_used: 0,
            call_cap,
            pending_calls: 0,
        })
    }

    pub fn options(&self, coverage_threshold: f64) -> DistillOptions {
        DistillOptions {
            cap: self.config.issue_cap,
            coverage_threshold,
        }
    }

    fn calls_left(&self) -> u32 {
        self.call_cap.saturating_sub(self.calls_used)
    }

    pub fn next_record(&mut self, stage: Stage) -> IterationRecord {
        let mut rec = IterationRecord::new(self.trace.len() as u32 + 1, stage);
        rec.agent_calls = std::mem::take(&mut self.pending_calls);
        rec
    }

    /// First step of phase A: provided RTL, or a generation prompt.
    pub fn initial_start(&mut self) -> Result<Start, Halt> {
        let case = self.task.case;
        if case == PromptCase::TaskBased {
            if let Some(rtl) = &self.task.provided_rtl {
                match bundle_from_rtl(rtl) {
                    Ok(bundle) => return Ok(Start::Bundle(bundle)),
                    Err(e) => log::warn!("provided RTL unusable ({e}); generating instead"),
                }
            }
        }
        let mut elicited = false;
        if case == PromptCase::Vague && self.config.interactive {
            let max_calls = self.calls_left().saturating_sub(1);
            let answers = self.agents.answers.as_deref_mut().map(|a| a as &mut dyn AnswerChannel);
            match elicit_details(&self.request, &self.agents.code, answers, true, max_calls) {
                Ok(e) => {
                    self.calls_used += e.agent_calls;
                    self.pending_calls += e.agent_calls;
                    self.request = e.prompt;
                    self.side_transcripts.push(e.transcript);
                    elicited = true;
                }
                Err(EngineError::InteractionUnavailable) => {
                    log::warn!("no answer channel; continuing with stated assumptions")
                }
                Err(e) => return Err(Halt::Agent(e.to_string())),
            }
        }
        let mut text = generation_prompt(&self.request, case, elicited);
        if case == PromptCase::TaskBased {
            if let Some(rtl) = &self.task.provided_rtl {
                let _ = write!(text, "\n\nProvided code:\n```\n{}\n```", rtl.trim_end());
            }
        }
        Ok(Start::Prompt {
            text,
            previous: None,
        })
    }

    fn ask_code(&mut self, text: String, rec: &mut IterationRecord) -> Result<ChatMessage, Halt> {
        if self.calls_left() == 0 {
            return Err(Halt::Budget(format!(
                "agent call budget of {} exhausted",
                self.call_cap
            )));
        }
        self.transcript.push(ChatMessage::user(text));
        self.transcript.evict_to(self.config.context_budget_bytes);
        self.calls_used += 1;
        rec.agent_calls += 1;
        match self.agents.code.send_chat(&self.transcript) {
            Ok(reply) => {
                self.transcript.push(reply.clone());
                Ok(reply)
            }
            Err(e) => {
                // Keep the transcript well-formed for the record.
                self.transcript.messages.pop();
                Err(Halt::Agent(e.to_string()))
            }
        }
    }

    fn request_bundle(
        &mut self,
        text: String,
        previous: Option<&RtlBundle>,
        tb_editable: bool,
        rec: &mut IterationRecord,
        dir: &Path,
    ) -> Result<RtlBundle, Request> {
        let reply = self.ask_code(text, rec).map_err(Request::Halt)?;
        rec.agent_response = reply.content.clone();
        write_artifact(dir, "response.txt", &reply.content).map_err(Request::Halt)?;
        let extracted = match extract_rtl_bundle(&reply) {
            Err(ExtractError::AmbiguousBundle(why)) => {
                log::info!("ambiguous reply ({why}); asking once to disambiguate");
                let again = self
                    .ask_code(DISAMBIGUATION_PROMPT.to_string(), rec)
                    .map_err(Request::Halt)?;
                let _ = write!(rec.agent_response, "\n\n----- after disambiguation -----\n\n{}", again.content);
                write_artifact(dir, "response_2.txt", &again.content).map_err(Request::Halt)?;
                extract_rtl_bundle(&again)
            }
            other => other,
        };
        let bundle = extracted.map_err(|e| Request::NoBundle(e.to_string()))?;
        merge_revision(previous, bundle, tb_editable).map_err(|e| Request::NoBundle(e.to_string()))
    }

    /// Optional Review Agent pass; keeps at least one call for the Code Agent.
    pub fn consult_reviewer(
        &mut self,
        feedback: &ReviewFeedback,
        raw_log: &str,
        rec: &mut IterationRecord,
        dir: &Path,
    ) -> Result<Option<String>, Halt> {
        if self.agents.review.is_none() || self.calls_left() <= 1 {
            return Ok(None);
        }
        let mut t = distill::review_transcript(
            feedback,
            &self.request,
            raw_log,
            self.config.log_excerpt_bytes,
        );
        self.calls_used += 1;
        rec.agent_calls += 1;
        let gateway = self.agents.review.as_ref().expect("checked above");
        let reply = gateway.send_chat(&t).map_err(|e| Halt::Agent(format!("review agent: {e}")))?;
        write_artifact(dir, "review.txt", &reply.content)?;
        let analysis = reply.content.clone();
        t.push(reply);
        self.side_transcripts.push(t);
        Ok(Some(analysis))
    }

    /// Compile-repair iterations until a clean compile, at most
    /// `max_iterations` records.
    pub fn compile_gate(
        &mut self,
        start: Start,
        max_iterations: u32,
        tb_editable: bool,
    ) -> Result<RtlBundle, Halt> {
        let mut next = start;
        for n in 1..=max_iterations {
            let mut rec = self.next_record(Stage::Review);
            let dir = self.ws.iteration_dir(rec.index)?;
            let bundle = match next {
                Start::Bundle(b) => b,
                Start::Prompt { text, previous } => {
                    rec.prompt_sent = text.clone();
                    write_artifact(&dir, "prompt.txt", &text)?;
                    match self.request_bundle(text, previous.as_ref(), tb_editable, &mut rec, &dir) {
                        Ok(b) => b,
                        Err(Request::Halt(h)) => {
                            rec.note = Some(format!("stopped: {h:?}"));
                            self.trace.push(rec);
                            return Err(h);
                        }
                        Err(Request::NoBundle(why)) => {
                            rec.note = Some(format!("no usable code: {why}"));
                            self.trace.push(rec);
                            next = Start::Prompt {
                                text: retry_prompt(&why),
                                previous,
                            };
                            continue;
                        }
                    }
                }
            };
            rec.bundle = Some(bundle.clone());
            let report = match self.tools.compile(&bundle, &dir) {
                Ok(r) => r,
                Err(e) => {
                    rec.note = Some(format!("compile could not run: {e}"));
                    self.trace.push(rec);
                    return Err(e.into());
                }
            };
            write_artifact(&dir, "compile.log", &report.raw_log)?;
            let errors = report.error_count();
            rec.compile = Some(report.clone());
            if errors == 0 {
                self.trace.push(rec);
                return Ok(bundle);
            }
            let feedback = match distill::distill(Some(&report), None, None, self.options(1.0)) {
                Ok(f) => f,
                Err(e) => {
                    self.trace.push(rec);
                    return Err(Halt::Tool(format!("could not distill compile errors: {e}")));
                }
            };
            if n == max_iterations {
                rec.feedback = Some(feedback);
                self.trace.push(rec);
                break;
            }
            let analysis = match self.consult_reviewer(&feedback, &report.raw_log, &mut rec, &dir) {
                Ok(a) => a,
                Err(h) => {
                    rec.feedback = Some(feedback);
                    self.trace.push(rec);
                    return Err(h);
                }
            };
            let text = distill::render_review_prompt(&feedback, &bundle, analysis.as_deref());
            rec.feedback = Some(feedback);
            self.trace.push(rec);
            next = Start::Prompt {
                text,
                previous: Some(bundle),
            };
        }
        Err(Halt::Budget(format!(
            "compile still failing after {max_iterations} iteration(s)"
        )))
    }

    /// Builds the outcome and writes it, with transcripts, to the workspace.
    pub fn finish(mut self, result: Result<RtlBundle, Halt>) -> Result<LoopOutcome, EngineError> {
        let (status, bundle, detail) = match result {
            Ok(b) => (LoopStatus::Success, Some(b), None),
            Err(h) => {
                let last = self.trace.iter().rev().find_map(|r| r.bundle.clone());
                (h.status(), last, Some(h.detail()))
            }
        };
        // Elicitation calls made before any record are still accounted.
        if self.pending_calls > 0 {
            let mut rec = self.next_record(Stage::Review);
            rec.note = Some("clarification only".into());
            self.trace.push(rec);
        }
        let outcome = LoopOutcome::new(status, bundle, self.trace, detail);
        fs::write(self.ws.root.join(OUTCOME_FILE), to_canonical_json(&outcome))?;
        let dir = self.ws.subdir(TRANSCRIPT_DIR)?;
        for t in self.side_transcripts.iter().chain(std::iter::once(&self.transcript)) {
            if t.messages.len() > 1 {
                record_transcript(t, &dir)?;
            }
        }
        Ok(outcome)
    }
}

/// Runs the loop with agents built from `config`.
pub fn run_autoreview(
    task: &DesignTask,
    config: &AutoReviewConfig,
    ws: &Workspace,
) -> Result<LoopOutcome, EngineError> {
    let mut agents = Agents::from_config(config)?;
    run_autoreview_with(task, config, ws, &mut agents)
}

/// Tool and agent failures end up in the outcome's status; `Err` means the
/// task or configuration was unusable.
pub fn run_autoreview_with(
    task: &DesignTask,
    config: &AutoReviewConfig,
    ws: &Workspace,
    agents: &mut Agents,
) -> Result<LoopOutcome, EngineError> {
    let mut session = Session::new(task, config, agents, ws, config.budget.max_agent_calls)?;
    let result = session
        .initial_start()
        .and_then(|start| session.compile_gate(start, config.budget.max_iterations, true));
    session.finish(result)
}
