//! The verification loop: once a bundle compiles, simulate it, measure
//! coverage and revise until every check passes and coverage meets the
//! threshold.

use std::fmt::Write as _;
use std::fs;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoreview::{testbench_prompt, Agents, AutoReviewConfig, EngineError, Halt, Session, Start};
use crate::distill;
use crate::eda::{EdaError, Workspace};
use crate::model::{
    Budget, CoverageMetric, DesignTask, LoopOutcome, LoopStatus, ReviewPhase, RtlBundle, Stage,
};

pub const SUMMARY_FILE: &str = "summary.txt";
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.90;
pub const COVERAGE_UNAVAILABLE: &str = "coverage output unrecognizable; functional verification passed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoDVConfig {
    pub review_config: AutoReviewConfig,
    #[serde(default = "default_threshold")]
    pub coverage_threshold: f64,
    #[serde(default)]
    pub dv_budget: Budget,
    #[serde(default = "default_true")]
    pub regenerate_testbench: bool,
}

fn default_threshold() -> f64 {
    DEFAULT_COVERAGE_THRESHOLD
}
fn default_true() -> bool {
    true
}

impl AutoDVConfig {
    pub fn new(review_config: AutoReviewConfig) -> Self {
        AutoDVConfig {
            review_config,
            coverage_threshold: DEFAULT_COVERAGE_THRESHOLD,
            dv_budget: Budget::default(),
            regenerate_testbench: true,
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.review_config.validate()?;
        self.dv_budget.validate()?;
        if !(self.coverage_threshold > 0.0 && self.coverage_threshold <= 1.0) {
            return Err(EngineError::Invalid(crate::model::ModelError::OutOfRange(
                "coverage_threshold must be in (0, 1]",
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VerdictError {
    #[error("the run never reached simulation")]
    MissingReports,
}

/// `(met_coverage, functional_pass)` read from the last simulated record.
pub fn verification_verdict(outcome: &LoopOutcome, threshold: f64) -> Result<(bool, bool), VerdictError> {
    let rec = outcome
        .trace
        .iter()
        .rev()
        .find(|r| r.sim.is_some())
        .ok_or(VerdictError::MissingReports)?;
    let passed = rec.sim.as_ref().is_some_and(|s| s.passed);
    let met = rec.coverage.as_ref().is_some_and(|c| c.aggregate >= threshold);
    Ok((met, passed))
}

fn percent(x: f64) -> String {
    format!("{:.2}%", x * 100.0)
}

/// Plain-text account of a verification run.
pub fn verification_summary(task_id: &str, outcome: &LoopOutcome, threshold: f64) -> String {
    let mut s = String::new();
    let review = outcome.trace.iter().filter(|r| r.stage == Stage::Review).count();
    let _ = writeln!(s, "task: {task_id}");
    let _ = writeln!(s, "status: {}", outcome.status);
    let _ = writeln!(
        s,
        "iterations: {} ({} verification, {} compile)",
        outcome.iterations_used,
        outcome.verify_iterations(),
        review
    );
    let _ = writeln!(s, "agent calls: {}", outcome.total_agent_calls());
    if let Some(top) = outcome.final_bundle.as_ref().map(|b| &b.top_module) {
        let _ = writeln!(s, "top module: {top}");
    }
    let last = outcome.trace.iter().rev().find(|r| r.sim.is_some());
    match last.and_then(|r| r.sim.as_ref()) {
        None => {
            let _ = writeln!(s, "functional: not simulated");
        }
        Some(sim) => {
            let verdict = if sim.passed { "PASS" } else { "FAIL" };
            let _ = write!(
                s,
                "functional: {verdict} ({} failed check(s), {} mismatch(es)",
                sim.failed_assertions.len(),
                sim.mismatch_count
            );
            if sim.timed_out {
                s.push_str(", timed out");
            }
            s.push_str(")\n");
            for f in sim.failed_assertions.iter().take(5) {
                let _ = writeln!(s, "  - {}", f.message);
            }
        }
    }
    match last.and_then(|r| r.coverage.as_ref()) {
        None => {
            let _ = writeln!(s, "coverage: unavailable (threshold {})", percent(threshold));
        }
        Some(cov) => {
            let met = if cov.aggregate >= threshold { "met" } else { "not met" };
            let _ = writeln!(
                s,
                "coverage: {} (threshold {}, {met})",
                percent(cov.aggregate),
                percent(threshold)
            );
            for metric in CoverageMetric::ALL {
                if let Some(p) = cov.metrics.get(&metric).filter(|p| p.total > 0) {
                    let _ = writeln!(
                        s,
                        "  {:<14}{:>6}/{:<6}{:>8}",
                        metric.as_str(),
                        p.covered,
                        p.total,
                        percent(p.covered as f64 / p.total as f64)
                    );
                }
            }
        }
    }
    if let Some(detail) = &outcome.detail {
        let _ = writeln!(s, "detail: {detail}");
    }
    s
}

impl Session<'_> {
    fn ensure_testbench(&mut self, bundle: RtlBundle) -> Result<RtlBundle, Halt> {
        if bundle.has_testbench() {
            return Ok(bundle);
        }
        let text = testbench_prompt(&bundle);
        let iterations = self.config.budget.max_iterations;
        self.compile_gate(Start::Prompt { text, previous: Some(bundle) }, iterations, true)
    }

    fn verify_phase(&mut self, dv: &AutoDVConfig, mut bundle: RtlBundle) -> Result<RtlBundle, Halt> {
        let threshold = dv.coverage_threshold;
        let max = dv.dv_budget.max_iterations;
        for n in 1..=max {
            let mut rec = self.next_record(Stage::Verify);
            let dir = self.ws.iteration_dir(rec.index)?;
            rec.bundle = Some(bundle.clone());
            let compile = match self.tools.compile(&bundle, &dir) {
                Ok(c) => c,
                Err(e) => {
                    self.trace.push(rec);
                    return Err(e.into());
                }
            };
            fs::write(dir.join("compile.log"), &compile.raw_log)?;
            let clean = compile.error_count() == 0;
            rec.compile = Some(compile.clone());
            if !clean {
                self.trace.push(rec);
                return Err(Halt::Tool("a bundle that compiled cleanly failed to recompile".into()));
            }
            let sim = match self.tools.simulate(&bundle, &dir) {
                Ok(s) => s,
                Err(e) => {
                    self.trace.push(rec);
                    return Err(e.into());
                }
            };
            fs::write(dir.join("sim.log"), &sim.raw_log)?;
            rec.sim = Some(sim.clone());
            let coverage = if sim.timed_out {
                None
            } else {
                match self.tools.measure_coverage(&bundle, &dir) {
                    Ok(c) => {
                        fs::write(dir.join("coverage.log"), &c.raw_log)?;
                        Some(c)
                    }
                    Err(e @ (EdaError::ParseFailure { .. } | EdaError::MissingArtifact(_))) => {
                        if let Some(raw) = e.raw_log() {
                            fs::write(dir.join("coverage.log"), raw)?;
                        }
                        rec.note = Some(format!("coverage unavailable: {e}"));
                        None
                    }
                    Err(e) => {
                        self.trace.push(rec);
                        return Err(e.into());
                    }
                }
            };
            rec.coverage = coverage.clone();
            if sim.passed {
                match &coverage {
                    Some(c) if c.aggregate >= threshold => {
                        self.trace.push(rec);
                        return Ok(bundle);
                    }
                    None => {
                        self.trace.push(rec);
                        return Err(Halt::Tool(COVERAGE_UNAVAILABLE.into()));
                    }
                    Some(_) => {}
                }
            }
            let feedback = match distill::distill(
                Some(&compile),
                Some(&sim),
                coverage.as_ref(),
                self.options(threshold),
            ) {
                Ok(f) => f,
                Err(e) => {
                    self.trace.push(rec);
                    return Err(Halt::Tool(format!("nothing to revise: {e}")));
                }
            };
            if n == max {
                rec.feedback = Some(feedback);
                self.trace.push(rec);
                break;
            }
            let raw = match feedback.phase {
                ReviewPhase::CoverageImprovement => coverage.as_ref().map_or("", |c| c.raw_log.as_str()),
                _ => sim.raw_log.as_str(),
            };
            let analysis = match self.consult_reviewer(&feedback, raw, &mut rec, &dir) {
                Ok(a) => a,
                Err(h) => {
                    rec.feedback = Some(feedback);
                    self.trace.push(rec);
                    return Err(h);
                }
            };
            let text = distill::render_review_prompt(&feedback, &bundle, analysis.as_deref());
            let tb_editable =
                dv.regenerate_testbench || feedback.phase == ReviewPhase::CoverageImprovement;
            rec.feedback = Some(feedback);
            self.trace.push(rec);
            bundle = self.compile_gate(
                Start::Prompt { text, previous: Some(bundle) },
                self.config.budget.max_iterations,
                tb_editable,
            )?;
        }
        Err(Halt::Budget(format!(
            "verification goals not met after {max} iteration(s)"
        )))
    }
}

/// Runs the loop with agents built from the configuration.
pub fn run_autodv(task: &DesignTask, config: &AutoDVConfig, ws: &Workspace) -> Result<LoopOutcome, EngineError> {
    let mut agents = Agents::from_config(&config.review_config)?;
    run_autodv_with(task, config, ws, &mut agents)
}

pub fn run_autodv_with(
    task: &DesignTask,
    config: &AutoDVConfig,
    ws: &Workspace,
    agents: &mut Agents,
) -> Result<LoopOutcome, EngineError> {
    config.validate()?;
    let review = &config.review_config;
    let cap = review
        .budget
        .max_agent_calls
        .saturating_add(config.dv_budget.max_agent_calls);
    let mut session = Session::new(task, review, agents, ws, cap)?;
    let result = session
        .initial_start()
        .and_then(|start| session.compile_gate(start, review.budget.max_iterations, true))
        .and_then(|bundle| session.ensure_testbench(bundle))
        .and_then(|bundle| session.verify_phase(config, bundle));
    let outcome = session.finish(result)?;
    fs::write(
        ws.root.join(SUMMARY_FILE),
        verification_summary(&task.task_id, &outcome, config.coverage_threshold),
    )?;
    Ok(outcome)
}

/// Status a run ends with, folding in the verdict for callers that need
/// to tell "functional only" apart.
pub fn is_functional_only(outcome: &LoopOutcome, threshold: f64) -> bool {
    outcome.status != LoopStatus::Success
        && verification_verdict(outcome, threshold) == Ok((false, true))
}
