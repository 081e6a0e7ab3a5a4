//! Shared domain types: tasks, bundles, normalized tool reports, review
//! feedback, budgets and the per-iteration audit trail.
//!
//! Every type here is an immutable value once built and serializes to a
//! canonical JSON form (fields in declaration order, maps ordered by key) so
//! run artifacts diff cleanly.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hdl;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("task id {0:?} is empty or not filesystem-safe")]
    BadTaskId(String),
    #[error("task {0} is task-based but carries no RTL")]
    MissingProvidedRtl(String),
    #[error("design source is empty")]
    EmptyDesign,
    #[error("{0:?} is not a valid HDL identifier")]
    BadIdentifier(String),
    #[error("budget field {0} must be strictly positive")]
    NonPositiveBudget(&'static str),
    #[error("{0}")]
    OutOfRange(&'static str),
}

/// How much the user told us up front.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptCase {
    Detailed,
    Vague,
    TaskBased,
}

impl PromptCase {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptCase::Detailed => "detailed",
            PromptCase::Vague => "vague",
            PromptCase::TaskBased => "task_based",
        }
    }
}

impl fmt::Display for PromptCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True for names that are safe to use as a single path component.
pub fn is_filesystem_safe(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.len() <= 200
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignTask {
    pub task_id: String,
    pub user_prompt: String,
    pub case: PromptCase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provided_rtl: Option<String>,
    /// Only ever read by the benchmark scorer; never shown to an agent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub golden_testbench: Option<String>,
}

impl DesignTask {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !is_filesystem_safe(&self.task_id) {
            return Err(ModelError::BadTaskId(self.task_id.clone()));
        }
        if self.case == PromptCase::TaskBased
            && self.provided_rtl.as_deref().is_none_or(|s| s.trim().is_empty())
        {
            return Err(ModelError::MissingProvidedRtl(self.task_id.clone()));
        }
        Ok(())
    }
}

/// A design plus (possibly empty) testbench, the unit both loops revise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtlBundle {
    pub design_source: String,
    pub testbench_source: String,
    pub top_module: String,
}

impl RtlBundle {
    pub fn new(
        design_source: impl Into<String>,
        testbench_source: impl Into<String>,
        top_module: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let bundle = RtlBundle {
            design_source: design_source.into(),
            testbench_source: testbench_source.into(),
            top_module: top_module.into(),
        };
        if bundle.design_source.trim().is_empty() {
            return Err(ModelError::EmptyDesign);
        }
        if !hdl::is_identifier(&bundle.top_module) {
            return Err(ModelError::BadIdentifier(bundle.top_module));
        }
        Ok(bundle)
    }

    /// Builds a bundle, inferring the top module from the sources.
    pub fn from_sources(
        design_source: impl Into<String>,
        testbench_source: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let design_source = design_source.into();
        let testbench_source = testbench_source.into();
        let top = hdl::top_module(&design_source, &testbench_source).ok_or(ModelError::EmptyDesign)?;
        Self::new(design_source, testbench_source, top)
    }

    pub fn has_testbench(&self) -> bool {
        !self.testbench_source.trim().is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Syntax,
    Elaboration,
    Other,
}

/// One normalized compiler message. `file` is empty and `line` absent for
/// messages that do not point into a source file.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub line: Option<u32>,
    pub severity: Severity,
    pub category: Category,
    pub message: String,
}

impl Diagnostic {
    pub fn file_level(severity: Severity, category: Category, message: impl Into<String>) -> Self {
        Diagnostic {
            file: String::new(),
            line: None,
            severity,
            category,
            message: message.into(),
        }
    }

    pub fn location(&self) -> String {
        match (self.file.is_empty(), self.line) {
            (true, _) => "(global)".to_string(),
            (false, Some(line)) => format!("{}:{}", self.file, line),
            (false, None) => self.file.clone(),
        }
    }

    /// Counts toward the syntax-error totals reported by the benchmark.
    pub fn is_syntax_class_error(&self) -> bool {
        self.severity == Severity::Error
            && matches!(self.category, Category::Syntax | Category::Elaboration)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompileReport {
    pub diagnostics: Vec<Diagnostic>,
    pub exit_ok: bool,
    pub raw_log: String,
    pub tool_id: String,
    pub wall_seconds: f64,
}

impl CompileReport {
    /// `exit_ok` is forced to false when any Error diagnostic is present.
    pub fn new(
        diagnostics: Vec<Diagnostic>,
        exit_ok: bool,
        raw_log: String,
        tool_id: impl Into<String>,
        wall_seconds: f64,
    ) -> Self {
        let has_errors = diagnostics.iter().any(|d| d.severity == Severity::Error);
        CompileReport {
            diagnostics,
            exit_ok: exit_ok && !has_errors,
            raw_log,
            tool_id: tool_id.into(),
            wall_seconds: wall_seconds.max(0.0),
        }
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
    }

    pub fn syntax_error_count(&self) -> usize {
        self.diagnostics
            .iter()
            .filter(|d| d.is_syntax_class_error())
            .count()
    }

    pub fn is_clean(&self) -> bool {
        self.exit_ok && self.error_count() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FailedAssertion {
    pub label: String,
    pub sim_time: Option<u64>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimReport {
    pub failed_assertions: Vec<FailedAssertion>,
    pub mismatch_count: u64,
    pub passed: bool,
    pub timed_out: bool,
    pub raw_log: String,
}

impl SimReport {
    /// `passed` is derived, never supplied.
    pub fn new(
        failed_assertions: Vec<FailedAssertion>,
        mismatch_count: u64,
        timed_out: bool,
        raw_log: String,
    ) -> Self {
        let passed = failed_assertions.is_empty() && mismatch_count == 0 && !timed_out;
        SimReport {
            failed_assertions,
            mismatch_count,
            passed,
            timed_out,
            raw_log,
        }
    }
}

/// Coverage metric kinds, in tie-break order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMetric {
    Line,
    Toggle,
    Combinational,
    Fsm,
}

impl CoverageMetric {
    pub const ALL: [CoverageMetric; 4] = [
        CoverageMetric::Line,
        CoverageMetric::Toggle,
        CoverageMetric::Combinational,
        CoverageMetric::Fsm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CoverageMetric::Line => "line",
            CoverageMetric::Toggle => "toggle",
            CoverageMetric::Combinational => "combinational",
            CoverageMetric::Fsm => "fsm",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "line" | "lines" => Some(CoverageMetric::Line),
            "toggle" | "toggles" => Some(CoverageMetric::Toggle),
            "combinational" | "comb" | "logic" | "expression" => {
                Some(CoverageMetric::Combinational)
            }
            "fsm" | "state" | "arc" => Some(CoverageMetric::Fsm),
            _ => None,
        }
    }
}

impl fmt::Display for CoverageMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCount {
    pub covered: u64,
    pub total: u64,
}

impl PointCount {
    pub fn ratio(self) -> Option<f64> {
        (self.total > 0).then(|| self.covered as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub metrics: BTreeMap<CoverageMetric, PointCount>,
    pub aggregate: f64,
    #[serde(default)]
    pub raw_log: String,
}

impl CoverageReport {
    /// Clamps `covered` to `total` per metric and derives the aggregate.
    pub fn from_metrics(metrics: BTreeMap<CoverageMetric, PointCount>, raw_log: String) -> Self {
        let metrics: BTreeMap<_, _> = metrics
            .into_iter()
            .map(|(m, p)| {
                (
                    m,
                    PointCount {
                        covered: p.covered.min(p.total),
                        total: p.total,
                    },
                )
            })
            .collect();
        let aggregate = aggregate_coverage(&metrics);
        CoverageReport {
            metrics,
            aggregate,
            raw_log,
        }
    }

    /// Metric with the lowest covered/total ratio; ties resolve in
    /// [`CoverageMetric::ALL`] order. Metrics without points are skipped.
    pub fn weakest_metric(&self) -> Option<(CoverageMetric, PointCount)> {
        let mut best: Option<(CoverageMetric, PointCount, f64)> = None;
        for (&metric, &points) in &self.metrics {
            let Some(ratio) = points.ratio() else { continue };
            match best {
                Some((_, _, r)) if r <= ratio => {}
                _ => best = Some((metric, points, ratio)),
            }
        }
        best.map(|(m, p, _)| (m, p))
    }
}

/// Summed covered points over summed total points; 1.0 when nothing is
/// instrumented.
pub fn aggregate_coverage(metrics: &BTreeMap<CoverageMetric, PointCount>) -> f64 {
    let (covered, total) = metrics
        .values()
        .filter(|p| p.total > 0)
        .fold((0u128, 0u128), |(c, t), p| {
            (c + p.covered.min(p.total) as u128, t + p.total as u128)
        });
    if total == 0 {
        1.0
    } else {
        covered as f64 / total as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewPhase {
    SyntaxRepair,
    FunctionalRepair,
    CoverageImprovement,
}

impl ReviewPhase {
    pub fn title(self) -> &'static str {
        match self {
            ReviewPhase::SyntaxRepair => "syntax repair",
            ReviewPhase::FunctionalRepair => "functional repair",
            ReviewPhase::CoverageImprovement => "coverage improvement",
        }
    }
}

/// Which report entry an issue was distilled from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IssueOrigin {
    Diagnostic(Diagnostic),
    Assertion {
        label: String,
        sim_time: Option<u64>,
        message: String,
    },
    Mismatches {
        count: u64,
    },
    SimTimeout,
    Coverage {
        metric: CoverageMetric,
        covered: u64,
        total: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub origin: IssueOrigin,
    pub explanation: String,
    pub focus_hint: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewFeedback {
    pub phase: ReviewPhase,
    pub issues: Vec<Issue>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub max_iterations: u32,
    pub max_agent_calls: u32,
    pub tool_timeout_seconds: u64,
}

impl Budget {
    pub fn new(
        max_iterations: u32,
        max_agent_calls: u32,
        tool_timeout_seconds: u64,
    ) -> Result<Self, ModelError> {
        let budget = Budget {
            max_iterations,
            max_agent_calls,
            tool_timeout_seconds,
        };
        budget.validate()?;
        Ok(budget)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_iterations == 0 {
            return Err(ModelError::NonPositiveBudget("max_iterations"));
        }
        if self.max_agent_calls == 0 {
            return Err(ModelError::NonPositiveBudget("max_agent_calls"));
        }
        if self.tool_timeout_seconds == 0 {
            return Err(ModelError::NonPositiveBudget("tool_timeout_seconds"));
        }
        Ok(())
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_iterations: 5,
            max_agent_calls: 15,
            tool_timeout_seconds: 120,
        }
    }
}

/// Which loop produced a trace record.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Generation or syntax repair, gated by a compile.
    Review,
    /// Simulation plus coverage of an already clean bundle.
    Verify,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: u32,
    pub stage: Stage,
    /// Prompt that produced the bundle evaluated here; empty when the bundle
    /// was carried over.
    pub prompt_sent: String,
    pub agent_response: String,
    /// Agent calls spent producing this record, including review-agent
    /// consultations and clarification rounds.
    pub agent_calls: u32,
    pub bundle: Option<RtlBundle>,
    pub compile: Option<CompileReport>,
    pub sim: Option<SimReport>,
    pub coverage: Option<CoverageReport>,
    pub feedback: Option<ReviewFeedback>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl IterationRecord {
    pub fn new(index: u32, stage: Stage) -> Self {
        IterationRecord {
            index,
            stage,
            prompt_sent: String::new(),
            agent_response: String::new(),
            agent_calls: 0,
            bundle: None,
            compile: None,
            sim: None,
            coverage: None,
            feedback: None,
            note: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Success,
    BudgetExhausted,
    ToolFailure,
    AgentFailure,
}

impl fmt::Display for LoopStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoopStatus::Success => "success",
            LoopStatus::BudgetExhausted => "budget_exhausted",
            LoopStatus::ToolFailure => "tool_failure",
            LoopStatus::AgentFailure => "agent_failure",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopOutcome {
    pub status: LoopStatus,
    pub iterations_used: u32,
    pub final_bundle: Option<RtlBundle>,
    pub trace: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl LoopOutcome {
    pub fn new(
        status: LoopStatus,
        final_bundle: Option<RtlBundle>,
        trace: Vec<IterationRecord>,
        detail: Option<String>,
    ) -> Self {
        LoopOutcome {
            status,
            iterations_used: trace.len() as u32,
            final_bundle,
            trace,
            detail,
        }
    }

    pub fn last_compile(&self) -> Option<&CompileReport> {
        self.trace.iter().rev().find_map(|r| r.compile.as_ref())
    }

    pub fn total_agent_calls(&self) -> u32 {
        self.trace.iter().map(|r| r.agent_calls).sum()
    }

    pub fn verify_iterations(&self) -> usize {
        self.trace.iter().filter(|r| r.stage == Stage::Verify).count()
    }
}

/// Iterations and agent calls left, clamped at zero.
pub fn budget_remaining(budget: &Budget, trace: &[IterationRecord]) -> (u32, u32) {
    let used_iterations = trace.len() as u32;
    let used_calls: u32 = trace.iter().map(|r| r.agent_calls).sum();
    (
        budget.max_iterations.saturating_sub(used_iterations),
        budget.max_agent_calls.saturating_sub(used_calls),
    )
}

/// Canonical, line-stable JSON for any run artifact.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("model types always serialize");
    text.push('\n');
    text
}
