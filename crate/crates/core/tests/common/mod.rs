#![allow(dead_code)]

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread;

use veriloop_core::autodv::AutoDVConfig;
use veriloop_core::autoreview::AutoReviewConfig;
use veriloop_core::eda::ToolProfile;
use veriloop_core::gateway::AgentConfig;
use veriloop_core::{DesignTask, PromptCase};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn fixture(rel: &str) -> String {
    fs::read_to_string(fixtures().join(rel)).unwrap()
}

pub fn replay_dir(name: &str) -> PathBuf {
    fixtures().join("replay").join(name)
}

pub fn adder_task() -> DesignTask {
    DesignTask {
        task_id: "adder".into(),
        user_prompt: "4-bit adder with inputs a[3:0], b[3:0] and output sum[4:0] that adds a and b".into(),
        case: PromptCase::Detailed,
        provided_rtl: None,
        golden_testbench: None,
    }
}

pub fn review_config(agent: AgentConfig) -> AutoReviewConfig {
    AutoReviewConfig::new(agent, ToolProfile::stub())
}

pub fn dv_config(agent: AgentConfig) -> AutoDVConfig {
    AutoDVConfig::new(review_config(agent))
}

/// Serves the files of a replay directory, in name order, as
/// chat-completion responses over HTTP.
pub fn http_replay_server(dir: &Path) -> String {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let bodies: Vec<String> = files
        .iter()
        .map(|p| {
            serde_json::json!({
                "choices": [{"message": {"role": "assistant", "content": fs::read_to_string(p).unwrap()}}]
            })
            .to_string()
        })
        .collect();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for body in bodies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            let _ = reader.read_exact(&mut buf);
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

pub fn suite_dir() -> PathBuf {
    fixtures().join("suite")
}

/// Options for the replay mini-suite with stub tools.
pub fn suite_options(mode: veriloop_core::bench::SuiteMode, base: &Path, jobs: usize) -> veriloop_core::bench::SuiteOptions {
    let mut dv = dv_config(AgentConfig::replay(suite_dir().join("replay")));
    dv.review_config.budget = veriloop_core::Budget::new(3, 15, 60).unwrap();
    veriloop_core::bench::SuiteOptions {
        mode,
        n_samples: 3,
        k: 1,
        jobs,
        dv,
        workspace_base: base.to_path_buf(),
    }
}

/// Parses one corpus log the way its golden file says, returning the
/// parser output in the golden file's shape.
pub fn parse_as_golden(
    rules: &veriloop_core::rules::RuleSet,
    raw: &str,
    golden: &serde_json::Value,
) -> serde_json::Value {
    use serde_json::json;
    use veriloop_core::distill::{parse_compile_log, parse_coverage_report, parse_sim_log};
    match golden["kind"].as_str().unwrap() {
        "compile" => {
            let exit_ok = golden["exit_ok"].as_bool().unwrap();
            json!({"kind": "compile", "exit_ok": exit_ok, "diagnostics": parse_compile_log(rules, raw, exit_ok)})
        }
        "sim" => {
            let timed_out = golden["timed_out"].as_bool().unwrap();
            let r = parse_sim_log(rules, raw, timed_out);
            json!({
                "kind": "sim",
                "timed_out": r.timed_out,
                "failed_assertions": r.failed_assertions,
                "mismatch_count": r.mismatch_count,
                "passed": r.passed,
            })
        }
        "coverage" => match parse_coverage_report(rules, raw) {
            Ok(r) => json!({"kind": "coverage", "metrics": r.metrics, "aggregate": r.aggregate}),
            Err(_) => json!({"kind": "coverage", "parse_failure": true}),
        },
        other => panic!("unknown golden kind {other}"),
    }
}

/// Every `<name>.log` in the corpus with its `<name>.golden.json`.
pub fn golden_corpus() -> Vec<(String, String, serde_json::Value)> {
    let dir = fixtures().join("logs");
    let mut out = Vec::new();
    let mut names: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "log"))
        .collect();
    names.sort();
    for log in names {
        let stem = log.file_stem().unwrap().to_str().unwrap().to_string();
        let raw = fs::read_to_string(&log).unwrap();
        let golden = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.golden.json"))).unwrap()).unwrap();
        out.push((stem, raw, golden));
    }
    out
}

/// Golden equality with a tolerance on the one float field.
pub fn matches_golden(got: &serde_json::Value, want: &serde_json::Value) -> bool {
    match (got.get("aggregate"), want.get("aggregate")) {
        (Some(a), Some(b)) => {
            let close = (a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-12;
            let strip = |v: &serde_json::Value| {
                let mut v = v.clone();
                v.as_object_mut().unwrap().remove("aggregate");
                v
            };
            close && strip(got) == strip(want)
        }
        _ => got == want,
    }
}
