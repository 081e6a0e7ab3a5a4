mod common;

use std::fs;

use common::*;
use veriloop_core::autoreview::{run_autoreview, run_autoreview_with, Agents};
use veriloop_core::bench::*;
use veriloop_core::eda::{make_workspace, Toolchain};
use veriloop_core::gateway::{AgentConfig, Gateway};
use veriloop_core::{LoopOutcome, LoopStatus};

fn manifest() -> serde_json::Value {
    serde_json::from_str(&fixture("suite/manifest.json")).unwrap()
}

fn clean_outcome(design: &str) -> LoopOutcome {
    let base = tempfile::tempdir().unwrap();
    let mut task = adder_task();
    task.case = veriloop_core::PromptCase::TaskBased;
    task.provided_rtl = Some(design.to_string());
    let ws = make_workspace("adder", base.path()).unwrap();
    let config = review_config(AgentConfig::replay(base.path()));
    let mut agents = Agents::new(Gateway::scripted(Vec::<String>::new()));
    run_autoreview_with(&task, &config, &ws, &mut agents).unwrap()
}

#[test]
fn golden_testbench_scores_correct_design() {
    let outcome = clean_outcome(&fixture("rtl/adder.v"));
    assert_eq!(outcome.status, LoopStatus::Success);
    let dir = tempfile::tempdir().unwrap();
    let r = score_sample("adder", 1, &outcome, &fixture("rtl/tb_adder_golden.v"), &Toolchain::stub(), dir.path(), 0.9).unwrap();
    assert!(r.syntax_ok && r.functional_ok);
    assert_eq!(r.golden_failures, 0);
    assert_eq!(r.syntax_error_count, 0);
}

#[test]
fn golden_testbench_rejects_mutant() {
    let outcome = clean_outcome(&fixture("rtl/adder_inverted.v"));
    let dir = tempfile::tempdir().unwrap();
    let r = score_sample("adder", 1, &outcome, &fixture("rtl/tb_adder_golden.v"), &Toolchain::stub(), dir.path(), 0.9).unwrap();
    assert!(r.syntax_ok);
    assert!(!r.functional_ok);
    assert!(r.golden_failures >= 1);
}

#[test]
fn exhausted_compile_scores_nothing() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let mut config = review_config(AgentConfig::replay(replay_dir("review_exhaust")));
    config.budget = veriloop_core::Budget::new(3, 15, 60).unwrap();
    let outcome = run_autoreview(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::BudgetExhausted);
    let dir = tempfile::tempdir().unwrap();
    let r = score_sample("adder", 1, &outcome, &fixture("rtl/tb_adder_golden.v"), &Toolchain::stub(), dir.path(), 0.9).unwrap();
    assert!(!r.syntax_ok && !r.functional_ok);
    assert!(r.syntax_error_count >= 1);
}

#[test]
fn mini_suite_matches_manifest() {
    let tasks = load_dataset(&suite_dir().join("dataset.jsonl")).unwrap();
    assert_eq!(tasks.len(), 6);
    let base = tempfile::tempdir().unwrap();
    let report = run_suite(&tasks, &suite_options(SuiteMode::AutoReview, base.path(), 4)).unwrap();
    let m = manifest();
    for (id, stats) in &report.per_task {
        let want = &m["tasks"][id];
        assert_eq!(stats.n, 3, "{id}");
        assert_eq!(stats.c_syntax as u64, want["c_syntax"].as_u64().unwrap(), "{id}");
        assert_eq!(stats.c_functional as u64, want["c_functional"].as_u64().unwrap(), "{id}");
    }
    for s in &report.samples {
        let want = &m["tasks"][&s.task_id]["samples"][s.sample_index as usize - 1];
        assert_eq!(s.syntax_ok, want["syntax_ok"].as_bool().unwrap(), "{s:?}");
        assert_eq!(s.functional_ok, want["functional_ok"].as_bool().unwrap(), "{s:?}");
        assert!(!s.functional_ok || s.syntax_ok);
        assert!(s.error.is_none(), "{s:?}");
    }
    assert!((report.pass_at_k_syntax - 5.0 / 6.0).abs() < 1e-12);
    assert!((report.pass_at_k_functional - 10.0 / 18.0).abs() < 1e-12);
    assert_eq!(report.total_syntax_errors, m["expected"]["total_syntax_errors"].as_u64().unwrap());
    assert!(report.verification_success_rate.is_none());
}

#[test]
fn mini_suite_report_is_reproducible() {
    let tasks = load_dataset(&suite_dir().join("dataset.jsonl")).unwrap();
    let base = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let first = run_suite(&tasks, &suite_options(SuiteMode::AutoReview, base.path(), 1)).unwrap();
    let a = fs::read(emit_report(&first, ReportFormat::Json, &out.path().join("a")).unwrap()).unwrap();
    let second = run_suite(&tasks, &suite_options(SuiteMode::AutoReview, base.path(), 6)).unwrap();
    let b = fs::read(emit_report(&second, ReportFormat::Json, &out.path().join("b")).unwrap()).unwrap();
    assert_eq!(a, b);
    let md = fs::read_to_string(emit_report(&second, ReportFormat::MarkdownTable, out.path()).unwrap()).unwrap();
    assert!(md.contains("| autoreview | replay | 83.33% | 55.56% | 1 | n/a |"), "{md}");
}

#[test]
fn mini_suite_keeps_golden_testbenches_out_of_transcripts() {
    let tasks = load_dataset(&suite_dir().join("dataset.jsonl")).unwrap();
    let base = tempfile::tempdir().unwrap();
    run_suite(&tasks, &suite_options(SuiteMode::AutoReview, base.path(), 4)).unwrap();
    assert!(audit_golden_quarantine(&tasks, base.path()).unwrap().is_empty());

    // The audit itself does find a leak.
    let leak = base.path().join("autoreview/adder4/run_001/iter_001/prompt.txt");
    fs::write(&leak, &tasks[0].golden_testbench).unwrap();
    let hits = audit_golden_quarantine(&tasks, base.path()).unwrap();
    assert_eq!(hits, vec![(leak, "adder4".to_string())]);
}

#[test]
fn baseline_makes_one_call_per_sample() {
    let tasks = load_dataset(&suite_dir().join("dataset.jsonl")).unwrap();
    let base = tempfile::tempdir().unwrap();
    let report = run_suite(&tasks, &suite_options(SuiteMode::Baseline, base.path(), 4)).unwrap();
    let adder = &report.per_task["adder4"];
    // The first adder sample needs a repair the baseline never asks for.
    assert_eq!((adder.c_syntax, adder.c_functional), (2, 2));
    assert!(report.samples.iter().all(|s| s.iterations_used == 1));
    assert!((report.pass_at_k_syntax - 13.0 / 18.0).abs() < 1e-12);
}

#[test]
fn macro_average_over_two_tasks() {
    let tasks: Vec<BenchmarkTask> = load_dataset(&suite_dir().join("dataset.jsonl"))
        .unwrap()
        .into_iter()
        .filter(|t| t.task_id == "adder4" || t.task_id == "parity")
        .collect();
    let base = tempfile::tempdir().unwrap();
    let mut options = suite_options(SuiteMode::AutoReview, base.path(), 2);
    options.n_samples = 1;
    let report = run_suite(&tasks, &options).unwrap();
    assert_eq!(report.pass_at_k_functional, 0.5);
}

#[test]
fn k_above_n_is_rejected() {
    let tasks = load_dataset(&suite_dir().join("dataset.jsonl")).unwrap();
    let base = tempfile::tempdir().unwrap();
    let mut options = suite_options(SuiteMode::AutoReview, base.path(), 1);
    options.k = 4;
    assert!(matches!(run_suite(&tasks, &options), Err(BenchError::Domain { .. })));
}

#[test]
fn missing_replay_is_a_failed_sample() {
    let mut tasks = load_dataset(&suite_dir().join("dataset.jsonl")).unwrap();
    tasks.truncate(1);
    tasks[0].task_id = "nowhere".into();
    let base = tempfile::tempdir().unwrap();
    let mut options = suite_options(SuiteMode::AutoReview, base.path(), 1);
    options.n_samples = 1;
    let report = run_suite(&tasks, &options).unwrap();
    assert_eq!(report.pass_at_k_syntax, 0.0);
    assert!(!report.samples[0].syntax_ok);
}
