//! The mechanical half of the Review Agent: turn raw tool logs into reports,
//! reports into a short ranked issue list, and issues into a review prompt.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::eda::TESTBENCH_FILE;
use crate::gateway::{AgentRole, ChatMessage, Transcript};
use crate::model::{
    Category, CompileReport, CoverageMetric, CoverageReport, Diagnostic, FailedAssertion, Issue,
    IssueOrigin, PointCount, ReviewFeedback, ReviewPhase, RtlBundle, Severity, SimReport,
};
use crate::rules::RuleSet;

#[derive(Debug, Error, PartialEq)]
pub enum DistillError {
    #[error("coverage output not recognized ({} bytes)", raw.len())]
    ParseFailure { raw: String },
    #[error("all reports are clean; nothing to distill")]
    NothingToDistill,
}

pub const DEFAULT_ISSUE_CAP: usize = 10;
pub const DEFAULT_EXCERPT_BYTES: usize = 8 * 1024;

fn log_lines(raw: &str) -> impl Iterator<Item = &str> {
    raw.lines().map(|l| l.trim_end_matches('\r')).filter(|l| !l.trim().is_empty())
}

fn non_empty_or(message: &str, line: &str) -> String {
    let m = message.trim();
    if m.is_empty() { line.trim().to_string() } else { m.to_string() }
}

/// One diagnostic per matched line. Unmatched lines mentioning "error"
/// are kept as category Other. A failed run that yields no Error gets a
/// synthesized file-level one so failure is never silent.
pub fn parse_compile_log(rules: &RuleSet, raw: &str, exit_ok: bool) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for line in log_lines(raw) {
        if rules.compile_ignore.is_match(line) {
            continue;
        }
        if let Some((index, caps)) = rules.compile.first_match(line) {
            let (severity, mut category) = rules.compile_meta[index];
            let file = caps
                .name("file")
                .map(|m| m.as_str().trim().trim_start_matches("./").to_string())
                .unwrap_or_default();
            let line_no = match caps.name("line") {
                None => None,
                Some(m) => match m.as_str().parse::<u32>() {
                    Ok(n) if n > 0 => Some(n),
                    _ => {
                        category = Category::Other;
                        None
                    }
                },
            };
            out.push(Diagnostic {
                file,
                line: line_no,
                severity,
                category,
                message: non_empty_or(caps.name("message").map_or("", |m| m.as_str()), line),
            });
        } else if line.to_ascii_lowercase().contains("error") {
            out.push(Diagnostic::file_level(
                if exit_ok { Severity::Warning } else { Severity::Error },
                Category::Other,
                line.trim(),
            ));
        }
    }
    if !exit_ok && !out.iter().any(|d| d.severity == Severity::Error) {
        let tail = log_lines(raw).last().unwrap_or("no output");
        out.push(Diagnostic::file_level(
            Severity::Error,
            Category::Other,
            format!("compiler exited with failure status ({})", tail.trim()),
        ));
    }
    out
}

pub fn parse_sim_log(rules: &RuleSet, raw: &str, timed_out: bool) -> SimReport {
    let mut failures = Vec::new();
    let mut mismatches: u64 = 0;
    for line in log_lines(raw) {
        if let Some((_, caps)) = rules.assertion.first_match(line) {
            let message = non_empty_or(caps.name("message").map_or("", |m| m.as_str()), line);
            let label = caps
                .name("label")
                .map(|m| m.as_str().trim().to_string())
                .filter(|l| !l.is_empty())
                .unwrap_or_else(|| message.clone());
            failures.push(FailedAssertion {
                label,
                sim_time: caps.name("time").and_then(|m| m.as_str().parse().ok()),
                message,
            });
        } else if let Some((_, caps)) = rules.mismatch.first_match(line) {
            let n = match caps.name("count") {
                Some(m) => m.as_str().parse::<u64>().unwrap_or(u64::MAX),
                None => 1,
            };
            mismatches = mismatches.saturating_add(n);
        }
    }
    SimReport::new(failures, mismatches, timed_out, raw.to_string())
}

/// Per-metric covered/total rows. A row's metric comes from its own
/// `metric` capture or from the most recent section header.
pub fn parse_coverage_report(rules: &RuleSet, raw: &str) -> Result<CoverageReport, DistillError> {
    let mut section: Option<CoverageMetric> = None;
    let mut metrics = BTreeMap::new();
    for line in log_lines(raw) {
        if let Some((index, _)) = rules.coverage_section.first_match(line) {
            section = rules.section_metric[index];
            continue;
        }
        let Some((_, caps)) = rules.coverage_row.first_match(line) else {
            continue;
        };
        let metric = match caps.name("metric") {
            Some(m) => CoverageMetric::parse(m.as_str()),
            None => section,
        };
        let Some(metric) = metric else { continue };
        let num = |name: &str| -> u64 {
            caps.name(name)
                .and_then(|m| m.as_str().parse().ok())
                .unwrap_or(0)
        };
        metrics.insert(
            metric,
            PointCount {
                covered: num("covered").saturating_add(num("covered2")),
                total: num("total").saturating_add(num("total2")),
            },
        );
    }
    if metrics.is_empty() && !raw.trim().is_empty() {
        return Err(DistillError::ParseFailure { raw: raw.to_string() });
    }
    Ok(CoverageReport::from_metrics(metrics, raw.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillOptions {
    pub cap: usize,
    pub coverage_threshold: f64,
}

impl Default for DistillOptions {
    fn default() -> Self {
        DistillOptions {
            cap: DEFAULT_ISSUE_CAP,
            coverage_threshold: 0.90,
        }
    }
}

fn diagnostic_issue(d: &Diagnostic) -> Issue {
    let location = d.location();
    let (kind, hint) = match d.category {
        Category::Syntax => (
            "Syntax error",
            format!(
                "Look at {location} for a missing or stray token (';', 'end', 'endmodule', a parenthesis) near: {}",
                d.message
            ),
        ),
        Category::Elaboration => (
            "Elaboration error",
            format!(
                "Check the declarations, port names and widths referenced at {location}: {}",
                d.message
            ),
        ),
        Category::Other => (
            "Tool error",
            format!("Resolve the condition reported at {location}: {}", d.message),
        ),
    };
    Issue {
        origin: IssueOrigin::Diagnostic(d.clone()),
        explanation: format!("{kind} at {location}: {}", d.message),
        focus_hint: hint,
    }
}

fn at_time(t: Option<u64>) -> String {
    t.map(|t| format!(" at time {t}")).unwrap_or_default()
}

fn assertion_issue(a: &FailedAssertion) -> Issue {
    Issue {
        origin: IssueOrigin::Assertion {
            label: a.label.clone(),
            sim_time: a.sim_time,
            message: a.message.clone(),
        },
        explanation: format!("Simulation check failed{}: {}", at_time(a.sim_time), a.message),
        focus_hint: format!(
            "Trace the logic driving the signals checked by \"{}\"{} and make the design produce the expected value.",
            a.label,
            at_time(a.sim_time)
        ),
    }
}

fn metric_advice(metric: CoverageMetric) -> &'static str {
    match metric {
        CoverageMetric::Line => "add stimulus that executes every statement and branch",
        CoverageMetric::Toggle => "drive every input and internal bit through both 0->1 and 1->0",
        CoverageMetric::Combinational => "exercise each condition of every combinational expression both ways",
        CoverageMetric::Fsm => "visit every state and take every transition",
    }
}

/// Phase precedence is strict: any compile error wins, then any simulation
/// failure, then coverage below threshold.
pub fn distill(
    compile: Option<&CompileReport>,
    sim: Option<&SimReport>,
    coverage: Option<&CoverageReport>,
    options: DistillOptions,
) -> Result<ReviewFeedback, DistillError> {
    let cap = options.cap.max(1);
    if let Some(report) = compile {
        if report.error_count() > 0 || !report.exit_ok {
            let mut seen = HashSet::new();
            let mut errors: Vec<&Diagnostic> = report
                .errors()
                .filter(|d| seen.insert((d.file.as_str(), d.line, d.message.as_str())))
                .collect();
            errors.sort_by(|a, b| (a.severity, &a.file, a.line).cmp(&(b.severity, &b.file, b.line)));
            let issues: Vec<Issue> = errors.into_iter().take(cap).map(diagnostic_issue).collect();
            if !issues.is_empty() {
                return Ok(ReviewFeedback { phase: ReviewPhase::SyntaxRepair, issues });
            }
        }
    }
    if let Some(sim) = sim.filter(|s| !s.passed) {
        let mut seen = HashSet::new();
        let mut issues: Vec<Issue> = sim
            .failed_assertions
            .iter()
            .filter(|a| seen.insert((a.label.as_str(), a.message.as_str())))
            .map(assertion_issue)
            .collect();
        if sim.mismatch_count > 0 {
            issues.push(Issue {
                origin: IssueOrigin::Mismatches { count: sim.mismatch_count },
                explanation: format!(
                    "The testbench reported {} output mismatch(es) against expected values.",
                    sim.mismatch_count
                ),
                focus_hint: "Compare the design's output logic with the intended behavior for the mismatching samples.".into(),
            });
        }
        if sim.timed_out {
            issues.push(Issue {
                origin: IssueOrigin::SimTimeout,
                explanation: "Simulation did not finish before the timeout.".into(),
                focus_hint: "Make sure the testbench calls $finish and that no loop runs without bound.".into(),
            });
        }
        issues.truncate(cap);
        return Ok(ReviewFeedback { phase: ReviewPhase::FunctionalRepair, issues });
    }
    if let Some(cov) = coverage.filter(|c| c.aggregate < options.coverage_threshold) {
        if let Some((metric, points)) = cov.weakest_metric() {
            let pct = points.ratio().unwrap_or(0.0) * 100.0;
            return Ok(ReviewFeedback {
                phase: ReviewPhase::CoverageImprovement,
                issues: vec![Issue {
                    origin: IssueOrigin::Coverage {
                        metric,
                        covered: points.covered,
                        total: points.total,
                    },
                    explanation: format!(
                        "Total coverage is {:.1}% (target {:.1}%); {metric} coverage is the weakest at {}/{} points ({pct:.1}%).",
                        cov.aggregate * 100.0,
                        options.coverage_threshold * 100.0,
                        points.covered,
                        points.total,
                    ),
                    focus_hint: format!("Extend the testbench: {}.", metric_advice(metric)),
                }],
            });
        }
    }
    Err(DistillError::NothingToDistill)
}

fn phase_goal(phase: ReviewPhase) -> &'static str {
    match phase {
        ReviewPhase::SyntaxRepair => "Make the sources compile without errors.",
        ReviewPhase::FunctionalRepair => "Make the design pass every simulation check.",
        ReviewPhase::CoverageImprovement => {
            "Raise total coverage to the target by strengthening the testbench."
        }
    }
}

fn closing_instruction(phase: ReviewPhase) -> &'static str {
    match phase {
        ReviewPhase::SyntaxRepair => {
            "Return the complete corrected source of every file you change, each in its own ```verilog fenced block. Do not omit unchanged parts of a file."
        }
        ReviewPhase::FunctionalRepair => {
            "Return the complete corrected design in a ```verilog fenced block. Change the testbench only if one of its checks is itself wrong, and return it in a separate block."
        }
        ReviewPhase::CoverageImprovement => {
            "Return the complete revised testbench in a ```verilog fenced block. Keep the design unchanged. The testbench must still report every check it performs."
        }
    }
}

fn issue_touches_testbench(issue: &Issue) -> bool {
    matches!(&issue.origin, IssueOrigin::Diagnostic(d) if d.file.ends_with(TESTBENCH_FILE))
}

/// Deterministic review prompt for the Code Agent.
pub fn render_review_prompt(
    feedback: &ReviewFeedback,
    bundle: &RtlBundle,
    review_analysis: Option<&str>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Review feedback: {}", feedback.phase.title());
    let _ = writeln!(out);
    let _ = writeln!(out, "Goal: {}", phase_goal(feedback.phase));
    let _ = writeln!(out);
    let _ = writeln!(out, "## Issues");
    for (i, issue) in feedback.issues.iter().enumerate() {
        let _ = writeln!(out, "{}. {}", i + 1, issue.explanation);
        let _ = writeln!(out, "   Focus: {}", issue.focus_hint);
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "## Current design (top module `{}`)", bundle.top_module);
    let _ = writeln!(out, "```verilog\n{}\n```", bundle.design_source.trim_end());
    let show_tb = bundle.has_testbench()
        && (feedback.phase != ReviewPhase::SyntaxRepair
            || feedback.issues.iter().any(issue_touches_testbench));
    if show_tb {
        let _ = writeln!(out);
        let _ = writeln!(out, "## Current testbench");
        let _ = writeln!(out, "```verilog\n{}\n```", bundle.testbench_source.trim_end());
    }
    if let Some(analysis) = review_analysis.map(str::trim).filter(|a| !a.is_empty()) {
        let _ = writeln!(out);
        let _ = writeln!(out, "## Reviewer analysis");
        let _ = writeln!(out, "{analysis}");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{}", closing_instruction(feedback.phase));
    out
}

/// The last `max_bytes` of `raw` (tools print the decisive errors last).
pub fn log_excerpt(raw: &str, max_bytes: usize) -> String {
    if raw.len() <= max_bytes {
        return raw.to_string();
    }
    let mut start = raw.len() - max_bytes;
    while !raw.is_char_boundary(start) {
        start += 1;
    }
    format!("[... {} earlier bytes omitted ...]\n{}", start, &raw[start..])
}

pub const REVIEW_SYSTEM_PROMPT: &str = "You are the Review Agent in an RTL design loop. You receive \
issues distilled from EDA tool logs for a Verilog design. Explain the root cause of each issue and \
say precisely what must change. Be concise. Do not rewrite the whole design.";

/// Review-role transcript: the user's original request goes into the system
/// context; the distilled issues and a tail-biased log excerpt form the ask.
pub fn review_transcript(
    feedback: &ReviewFeedback,
    original_prompt: &str,
    raw_log: &str,
    excerpt_bytes: usize,
) -> Transcript {
    let mut system = String::from(REVIEW_SYSTEM_PROMPT);
    let _ = write!(system, "\n\nThe designer's original request was:\n{}", original_prompt.trim());
    let mut t = Transcript::new(AgentRole::Review, system);
    let mut ask = format!("Phase: {}\n\nIssues:\n", feedback.phase.title());
    for (i, issue) in feedback.issues.iter().enumerate() {
        let _ = writeln!(ask, "{}. {}", i + 1, issue.explanation);
    }
    let excerpt = log_excerpt(raw_log, excerpt_bytes);
    if !excerpt.trim().is_empty() {
        let _ = write!(ask, "\nTool log excerpt:\n```\n{}\n```\n", excerpt.trim_end());
    }
    t.push(ChatMessage::user(ask));
    t
}
