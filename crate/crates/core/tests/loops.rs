mod common;

use common::*;
use veriloop_core::autodv::{run_autodv, verification_verdict, COVERAGE_UNAVAILABLE};
use veriloop_core::autoreview::{run_autoreview, run_autoreview_with, Agents, OUTCOME_FILE};
use veriloop_core::eda::{make_workspace, Toolchain};
use veriloop_core::gateway::{AgentConfig, Gateway};
use veriloop_core::{
    Budget, DesignTask, LoopOutcome, LoopStatus, PromptCase, ReviewPhase, RtlBundle, Stage,
};

fn decisions(o: &LoopOutcome) -> Vec<(Stage, Option<usize>, Option<bool>, Option<ReviewPhase>)> {
    o.trace
        .iter()
        .map(|r| {
            (
                r.stage,
                r.compile.as_ref().map(|c| c.error_count()),
                r.sim.as_ref().map(|s| s.passed),
                r.feedback.as_ref().map(|f| f.phase),
            )
        })
        .collect()
}

#[test]
fn review_converges_in_two_iterations() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let config = review_config(AgentConfig::replay(replay_dir("review_converge")));
    let outcome = run_autoreview(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::Success);
    assert_eq!(outcome.iterations_used, 2);
    assert!(outcome.last_compile().unwrap().is_clean());

    // Second prompt carries the distilled error from the first compile.
    let first = &outcome.trace[0];
    let err = first.compile.as_ref().unwrap().errors().next().unwrap().clone();
    assert_eq!(err.line, Some(3));
    assert!(outcome.trace[1].prompt_sent.contains("design.v:3"));
    assert!(outcome.trace[1].prompt_sent.contains("## Issues"));

    // Recompiling the final bundle elsewhere reproduces a clean compile.
    let fresh = tempfile::tempdir().unwrap();
    let bundle = outcome.final_bundle.clone().unwrap();
    assert!(bundle.has_testbench());
    assert!(Toolchain::stub().compile(&bundle, fresh.path()).unwrap().exit_ok);

    assert!(ws.root.join(OUTCOME_FILE).is_file());
    assert!(ws.root.join("iter_001/prompt.txt").is_file());
    assert!(ws.root.join("iter_002/compile.log").is_file());
    assert!(ws.root.join("transcripts/transcript_001.json").is_file());
}

#[test]
fn review_exhausts_budget() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let mut config = review_config(AgentConfig::replay(replay_dir("review_exhaust")));
    config.budget = Budget::new(3, 15, 60).unwrap();
    let outcome = run_autoreview(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::BudgetExhausted);
    assert_eq!(outcome.trace.len(), 3);
    let indices: Vec<u32> = outcome.trace.iter().map(|r| r.index).collect();
    assert_eq!(indices, [1, 2, 3]);
}

#[test]
fn clean_provided_rtl_needs_no_agent() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let task = DesignTask {
        task_id: "adder".into(),
        user_prompt: "compile this".into(),
        case: PromptCase::TaskBased,
        provided_rtl: Some(fixture("rtl/adder.v")),
        golden_testbench: None,
    };
    let config = review_config(AgentConfig::replay(replay_dir("review_exhaust")));
    let mut agents = Agents::new(Gateway::scripted(Vec::<String>::new()));
    let outcome = run_autoreview_with(&task, &config, &ws, &mut agents).unwrap();
    assert_eq!(outcome.status, LoopStatus::Success);
    assert_eq!(outcome.iterations_used, 1);
    assert_eq!(outcome.total_agent_calls(), 0);
    assert!(outcome.trace[0].prompt_sent.is_empty());
    assert!(outcome.trace[0].feedback.is_none());
}

#[test]
fn missing_tool_is_tool_failure() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let mut config = review_config(AgentConfig::replay(replay_dir("review_converge")));
    config.tool_profile.compile_cmd[0][0] = "no-such-compiler-xyz".into();
    let outcome = run_autoreview(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::ToolFailure);
    assert!(outcome.detail.unwrap().contains("no-such-compiler-xyz"));
}

#[test]
fn ambiguous_reply_gets_one_disambiguation() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("mux", base.path()).unwrap();
    let ambiguous = "```verilog\nmodule half(input a, output y);\n  assign y = a;\nendmodule\n```\n```verilog\nmodule top(input a, output y);\n  half h0(.a(a), .y(y));\nendmodule\n```\n";
    let clear = format!("```verilog\n{}```", fixture("rtl/adder.v"));
    let config = review_config(AgentConfig::replay(replay_dir("review_converge")));
    let mut agents = Agents::new(Gateway::scripted([ambiguous.to_string(), clear]));
    let outcome = run_autoreview_with(&adder_task(), &config, &ws, &mut agents).unwrap();
    assert_eq!(outcome.status, LoopStatus::Success);
    assert_eq!(outcome.iterations_used, 1);
    assert_eq!(outcome.trace[0].agent_calls, 2);
}

#[test]
fn prose_reply_counts_as_failed_iteration() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let config = review_config(AgentConfig::replay(replay_dir("review_converge")));
    let clear = format!("```verilog\n{}```", fixture("rtl/adder.v"));
    let mut agents = Agents::new(Gateway::scripted(["I need more details.".to_string(), clear]));
    let outcome = run_autoreview_with(&adder_task(), &config, &ws, &mut agents).unwrap();
    assert_eq!(outcome.status, LoopStatus::Success);
    assert_eq!(outcome.iterations_used, 2);
    assert!(outcome.trace[0].bundle.is_none());
    assert!(outcome.trace[0].note.as_deref().unwrap().contains("no usable code"));
}

#[test]
fn review_agent_analysis_reaches_the_prompt() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let config = review_config(AgentConfig::replay(replay_dir("review_converge")));
    let mut agents = Agents::new(Gateway::from_config(&config.code_agent).unwrap())
        .with_review(Gateway::scripted(["Line 2 lacks a terminating semicolon."]));
    let outcome = run_autoreview_with(&adder_task(), &config, &ws, &mut agents).unwrap();
    assert_eq!(outcome.status, LoopStatus::Success);
    assert!(outcome.trace[1].prompt_sent.contains("## Reviewer analysis"));
    assert!(outcome.trace[1].prompt_sent.contains("lacks a terminating semicolon"));
    assert_eq!(outcome.total_agent_calls(), 3);
    let review_t = ws.root.join("transcripts/transcript_001.json");
    assert!(std::fs::read_to_string(review_t).unwrap().contains("\"review\""));
}

#[test]
fn replay_and_http_make_identical_decisions() {
    let dir = replay_dir("dv_syntax_detour");
    let base = tempfile::tempdir().unwrap();
    let ws_a = make_workspace("adder", base.path()).unwrap();
    let ws_b = make_workspace("adder", base.path()).unwrap();
    let replay = run_autodv(&adder_task(), &dv_config(AgentConfig::replay(&dir)), &ws_a).unwrap();
    let url = http_replay_server(&dir);
    let http = run_autodv(&adder_task(), &dv_config(AgentConfig::http(url, "other-model")), &ws_b).unwrap();
    assert_eq!(replay.status, http.status);
    assert_eq!(decisions(&replay), decisions(&http));
    assert_eq!(replay.final_bundle, http.final_bundle);
}

#[test]
fn dv_reaches_threshold_on_second_iteration() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let config = dv_config(AgentConfig::replay(replay_dir("dv_threshold")));
    let outcome = run_autodv(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::Success, "{:?}", outcome.detail);
    assert_eq!(outcome.verify_iterations(), 2);
    let verify: Vec<f64> = outcome
        .trace
        .iter()
        .filter_map(|r| r.coverage.as_ref().map(|c| c.aggregate))
        .collect();
    assert!((verify[0] - 0.40).abs() < 1e-12);
    assert!((verify[1] - 0.92).abs() < 1e-12);
    assert_eq!(verification_verdict(&outcome, 0.90), Ok((true, true)));
    let first_feedback = outcome.trace[1].feedback.as_ref().unwrap();
    assert_eq!(first_feedback.phase, ReviewPhase::CoverageImprovement);
    assert!(ws.root.join("summary.txt").is_file());
}

#[test]
fn dv_capped_coverage_exhausts_budget() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let config = dv_config(AgentConfig::replay(replay_dir("dv_capped")));
    let outcome = run_autodv(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::BudgetExhausted);
    assert_eq!(outcome.verify_iterations(), 5);
    assert_eq!(verification_verdict(&outcome, 0.90), Ok((false, true)));
}

#[test]
fn dv_repairs_a_revision_that_breaks_syntax() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let config = dv_config(AgentConfig::replay(replay_dir("dv_syntax_detour")));
    let outcome = run_autodv(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::Success);
    let stages: Vec<Stage> = outcome.trace.iter().map(|r| r.stage).collect();
    assert_eq!(
        stages,
        [Stage::Review, Stage::Verify, Stage::Review, Stage::Review, Stage::Verify]
    );
    let broken = outcome.trace[2].compile.as_ref().unwrap();
    assert!(broken.errors().next().unwrap().file.ends_with("testbench.v"));
    // The repair prompt shows the broken testbench.
    assert!(outcome.trace[3].prompt_sent.contains("## Current testbench"));
}

#[test]
fn dv_always_failing_stays_in_functional_repair() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let mut config = dv_config(AgentConfig::replay(replay_dir("dv_always_failing")));
    config.dv_budget = Budget::new(3, 15, 60).unwrap();
    let outcome = run_autodv(&adder_task(), &config, &ws).unwrap();
    assert_eq!(outcome.status, LoopStatus::BudgetExhausted);
    let phases: Vec<ReviewPhase> = outcome
        .trace
        .iter()
        .filter(|r| r.stage == Stage::Verify)
        .map(|r| r.feedback.as_ref().unwrap().phase)
        .collect();
    assert_eq!(phases, [ReviewPhase::FunctionalRepair; 3]);
}

#[test]
fn every_simulated_bundle_compiled_cleanly_first() {
    for name in ["dv_threshold", "dv_capped", "dv_syntax_detour", "dv_always_failing"] {
        let base = tempfile::tempdir().unwrap();
        let ws = make_workspace("adder", base.path()).unwrap();
        let outcome = run_autodv(&adder_task(), &dv_config(AgentConfig::replay(replay_dir(name))), &ws).unwrap();
        for r in outcome.trace.iter().filter(|r| r.sim.is_some()) {
            assert_eq!(r.compile.as_ref().unwrap().error_count(), 0, "{name}");
        }
        if outcome.status == LoopStatus::Success {
            assert_eq!(verification_verdict(&outcome, 0.90), Ok((true, true)));
        }
        assert!(outcome.total_agent_calls() <= 30);
    }
}

#[test]
fn testbench_frozen_outside_coverage_phase() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let design = fixture("rtl/adder.v");
    let tb_fail = fixture("rtl/tb_adder.v").replace("endmodule", "  // stub-sim: ERROR: wrong sum\nendmodule");
    let first = format!("```verilog\n{design}```\n```verilog\n{tb_fail}```");
    // The revision tries to drop the failing check from the testbench.
    let revision = format!("```verilog\n{design}```\n```verilog\n{}```", fixture("rtl/tb_adder.v"));
    let mut config = dv_config(AgentConfig::replay(replay_dir("dv_threshold")));
    config.regenerate_testbench = false;
    config.dv_budget = Budget::new(2, 15, 60).unwrap();
    let mut agents = Agents::new(Gateway::scripted([first, revision]));
    let outcome =
        veriloop_core::autodv::run_autodv_with(&adder_task(), &config, &ws, &mut agents).unwrap();
    assert_eq!(outcome.status, LoopStatus::BudgetExhausted);
    let tbs: Vec<&str> = outcome
        .trace
        .iter()
        .filter_map(|r| r.bundle.as_ref().map(|b: &RtlBundle| b.testbench_source.as_str()))
        .collect();
    assert!(tbs.iter().all(|tb| tb.contains("wrong sum")));
}

#[test]
fn unparseable_coverage_downgrades_to_functional_only() {
    let base = tempfile::tempdir().unwrap();
    let ws = make_workspace("adder", base.path()).unwrap();
    let tb = fixture("rtl/tb_adder.v").replace("stub-coverage:", "no-coverage-here:");
    let reply = format!("```verilog\n{}```\n```verilog\n{tb}```", fixture("rtl/adder.v"));
    let config = dv_config(AgentConfig::replay(replay_dir("dv_threshold")));
    let mut agents = Agents::new(Gateway::scripted([reply]));
    let outcome =
        veriloop_core::autodv::run_autodv_with(&adder_task(), &config, &ws, &mut agents).unwrap();
    assert_eq!(outcome.status, LoopStatus::ToolFailure);
    assert_eq!(outcome.detail.as_deref(), Some(COVERAGE_UNAVAILABLE));
    assert_eq!(verification_verdict(&outcome, 0.90), Ok((false, true)));
}
