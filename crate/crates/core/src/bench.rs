//! Benchmark harness: dataset ingestion, n-sample suite runs, pass@k and
//! report rendering.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autodv::{run_autodv_with, verification_verdict, AutoDVConfig};
use crate::autoreview::{run_autoreview_with, Agents, AutoReviewConfig, TRANSCRIPT_DIR};
use crate::eda::{make_workspace, EdaError, Toolchain};
use crate::gateway::{AgentConfig, Gateway, ProviderConfig};
use crate::model::{
    is_filesystem_safe, to_canonical_json, Budget, DesignTask, LoopOutcome, RtlBundle,
};
use crate::autoreview::classify_prompt;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n (got n={n}, c={c}, k={k})")]
    Domain { n: u64, c: u64, k: u64 },
    #[error("line {line}: {why}")]
    Format { line: usize, why: String },
    #[error("duplicate task id {task_id:?} on line {line}")]
    DuplicateTaskId { task_id: String, line: usize },
    #[error("report: {0}")]
    Report(String),
    #[error("unrecognized dataset layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Tool(#[from] EdaError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Unbiased pass@k: `1 - C(n-c, k) / C(n, k)`, as a running product.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, BenchError> {
    if c > n || k == 0 || k > n {
        return Err(BenchError::Domain { n, c, k });
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    if n - c < k {
        return Ok(1.0);
    }
    let mut fail = 1.0f64;
    for i in (n - c + 1)..=n {
        fail *= 1.0 - k as f64 / i as f64;
    }
    Ok((1.0 - fail).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub prompt: String,
    pub golden_testbench: String,
    #[serde(default, alias = "reference_design", skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl BenchmarkTask {
    /// The agent-facing task; the golden testbench stays behind.
    pub fn design_task(&self) -> DesignTask {
        DesignTask {
            task_id: self.task_id.clone(),
            user_prompt: self.prompt.clone(),
            case: classify_prompt(&self.prompt, None),
            provided_rtl: None,
            golden_testbench: None,
        }
    }
}

/// One JSON object per line; blank lines are skipped.
pub fn parse_dataset(text: &str) -> Result<Vec<BenchmarkTask>, BenchError> {
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let task: BenchmarkTask = serde_json::from_str(line).map_err(|e| BenchError::Format {
            line: line_no,
            why: e.to_string(),
        })?;
        let bad = |why: &str| BenchError::Format {
            line: line_no,
            why: why.to_string(),
        };
        if !is_filesystem_safe(&task.task_id) {
            return Err(bad("task_id must be non-empty and use only [A-Za-z0-9_.-]"));
        }
        if task.prompt.trim().is_empty() {
            return Err(bad("prompt is empty"));
        }
        if task.golden_testbench.trim().is_empty() {
            return Err(bad("golden_testbench is empty"));
        }
        if !seen.insert(task.task_id.clone()) {
            return Err(BenchError::DuplicateTaskId {
                task_id: task.task_id,
                line: line_no,
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn load_dataset(path: &Path) -> Result<Vec<BenchmarkTask>, BenchError> {
    parse_dataset(&fs::read_to_string(path)?)
}

pub fn write_dataset(tasks: &[BenchmarkTask], path: &Path) -> Result<(), BenchError> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t).expect("tasks serialize"));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Deserialize)]
struct V1Problem {
    task_id: String,
    prompt: String,
    #[serde(default)]
    canonical_solution: String,
    test: String,
    #[serde(default)]
    detail_description: Option<String>,
}

#[derive(Deserialize)]
struct V1Description {
    task_id: String,
    detail_description: String,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, BenchError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| BenchError::Format {
                line: i + 1,
                why: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn safe_id(raw: &str) -> String {
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.') { c } else { '_' })
        .collect()
}

/// Imports a VerilogEval distribution: the original problem JSONL (with
/// descriptions either inline or in a sibling description file), or the
/// later one-directory layout of `*_prompt.txt` / `*_test.sv` / `*_ref.sv`.
pub fn convert_verilogeval(input: &Path, descriptions: Option<&Path>) -> Result<Vec<BenchmarkTask>, BenchError> {
    if input.is_dir() {
        return convert_prompt_directory(input);
    }
    let problems: Vec<V1Problem> = read_jsonl(input)?;
    let mut described: BTreeMap<String, String> = BTreeMap::new();
    let sibling = input
        .parent()
        .map(|p| p.join("descriptions").join("VerilogDescription_Human.jsonl"));
    let desc_path = descriptions
        .map(Path::to_path_buf)
        .or(sibling.filter(|p| p.is_file()));
    if let Some(path) = desc_path {
        for d in read_jsonl::<V1Description>(&path)? {
            described.insert(d.task_id, d.detail_description);
        }
    }
    let mut tasks = Vec::new();
    for p in problems {
        let description = described
            .remove(&p.task_id)
            .or(p.detail_description)
            .ok_or_else(|| BenchError::Layout(format!("no description for {}", p.task_id)))?;
        let header = p.prompt.trim_end();
        tasks.push(BenchmarkTask {
            task_id: safe_id(&p.task_id),
            prompt: format!("{}\n\nImplement this module interface:\n{header}\n", description.trim()),
            golden_testbench: p.test,
            reference: Some(format!("{header}\n{}", p.canonical_solution)),
        });
    }
    Ok(tasks)
}

fn convert_prompt_directory(dir: &Path) -> Result<Vec<BenchmarkTask>, BenchError> {
    let mut stems: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_prompt.txt"))
                .map(str::to_string)
        })
        .collect();
    if stems.is_empty() {
        return Err(BenchError::Layout(format!(
            "{} has no *_prompt.txt files",
            dir.display()
        )));
    }
    stems.sort();
    let mut tasks = Vec::new();
    for stem in stems {
        let read = |suffix: &str| fs::read_to_string(dir.join(format!("{stem}{suffix}")));
        let prompt = read("_prompt.txt")?;
        let test = read("_test.sv")
            .map_err(|_| BenchError::Layout(format!("{stem}: missing {stem}_test.sv")))?;
        let reference = read("_ref.sv").ok();
        // The test bench instantiates the reference module, so it travels along.
        let golden = match &reference {
            Some(r) => format!("{}\n{}", test.trim_end(), r),
            None => test,
        };
        tasks.push(BenchmarkTask {
            task_id: safe_id(&stem),
            prompt,
            golden_testbench: golden,
            reference,
        });
    }
    Ok(tasks)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleResult {
    pub task_id: String,
    pub sample_index: u32,
    pub syntax_ok: bool,
    pub functional_ok: bool,
    pub coverage_met: bool,
    pub syntax_error_count: u64,
    pub iterations_used: u32,
    /// Failed checks plus mismatches reported by the golden testbench.
    pub golden_failures: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SampleResult {
    fn failed(task_id: &str, sample_index: u32, error: String) -> Self {
        SampleResult {
            task_id: task_id.to_string(),
            sample_index,
            syntax_ok: false,
            functional_ok: false,
            coverage_met: false,
            syntax_error_count: 0,
            iterations_used: 0,
            golden_failures: 0,
            error: Some(error),
        }
    }
}

/// Scores a finished run against the golden testbench in `sandbox`.
pub fn score_sample(
    task_id: &str,
    sample_index: u32,
    outcome: &LoopOutcome,
    golden_testbench: &str,
    tools: &Toolchain,
    sandbox: &Path,
    coverage_threshold: f64,
) -> Result<SampleResult, BenchError> {
    let syntax_error_count = outcome
        .trace
        .first()
        .and_then(|r| r.compile.as_ref())
        .map_or(0, |c| c.error_count() as u64);
    let syntax_ok = outcome.final_bundle.is_some()
        && outcome.last_compile().is_some_and(|c| c.error_count() == 0);
    let mut functional_ok = false;
    let mut golden_failures = 0;
    if let (true, Some(bundle)) = (syntax_ok, &outcome.final_bundle) {
        let scored = RtlBundle::from_sources(bundle.design_source.clone(), golden_testbench)
            .map_err(|e| BenchError::Report(e.to_string()))?;
        fs::create_dir_all(sandbox)?;
        let compile = tools.compile(&scored, sandbox)?;
        if compile.error_count() == 0 {
            let sim = tools.simulate(&scored, sandbox)?;
            golden_failures = sim.failed_assertions.len() as u64 + sim.mismatch_count;
            functional_ok = sim.passed;
        } else {
            golden_failures = compile.error_count() as u64;
        }
    }
    let coverage_met = verification_verdict(outcome, coverage_threshold).is_ok_and(|(met, _)| met);
    Ok(SampleResult {
        task_id: task_id.to_string(),
        sample_index,
        syntax_ok,
        functional_ok,
        coverage_met,
        syntax_error_count,
        iterations_used: outcome.iterations_used,
        golden_failures,
        error: None,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteMode {
    Baseline,
    AutoReview,
    AutoDV,
}

impl SuiteMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SuiteMode::Baseline => "baseline",
            SuiteMode::AutoReview => "autoreview",
            SuiteMode::AutoDV => "autodv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub mode: SuiteMode,
    pub n_samples: u32,
    pub k: u32,
    pub jobs: usize,
    /// Agents, tools and budgets; the review part drives the non-DV modes.
    pub dv: AutoDVConfig,
    pub workspace_base: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskStats {
    pub n: u32,
    pub c_syntax: u32,
    pub c_functional: u32,
    pub coverage_met_any: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub mode: SuiteMode,
    pub model: String,
    pub n_samples: u32,
    pub k: u32,
    pub per_task: BTreeMap<String, TaskStats>,
    pub pass_at_k_syntax: f64,
    pub pass_at_k_functional: f64,
    /// Errors in each task's first sample, first compile.
    pub total_syntax_errors: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_success_rate: Option<f64>,
    pub config_fingerprint: String,
    pub samples: Vec<SampleResult>,
}

/// Hash of everything that influences results (not `jobs` or paths of
/// scratch space).
pub fn config_fingerprint(options: &SuiteOptions) -> String {
    let material = serde_json::json!({
        "mode": options.mode,
        "n_samples": options.n_samples,
        "k": options.k,
        "dv": options.dv,
    });
    hex::encode(Sha256::digest(to_canonical_json(&material).as_bytes()))
}

pub fn sample_seed(task_id: &str, sample_index: u32, fingerprint: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(task_id.as_bytes());
    h.update([0]);
    h.update(sample_index.to_le_bytes());
    h.update(fingerprint.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}

/// Replay directories are laid out per task, optionally per sample:
/// `<dir>/<task>/sample_<i>/` falling back to `<dir>/<task>/`.
fn sample_agent(config: &AgentConfig, task_id: &str, sample_index: u32) -> AgentConfig {
    let mut config = config.clone();
    if let ProviderConfig::Replay { replay_dir } = &mut config.provider {
        let task_dir = replay_dir.join(task_id);
        let sample_dir = task_dir.join(format!("sample_{sample_index}"));
        *replay_dir = if sample_dir.is_dir() { sample_dir } else { task_dir };
    }
    config
}

fn sample_agents(review: &AutoReviewConfig, task_id: &str, index: u32, seed: u64) -> Result<Agents, String> {
    let code_cfg = sample_agent(&review.code_agent, task_id, index);
    let code = Gateway::from_config(&code_cfg).map_err(|e| e.to_string())?;
    let mut agents = Agents::new(code.with_seed(Some(seed)));
    if let Some(r) = &review.review_agent {
        let g = Gateway::from_config(&sample_agent(r, task_id, index)).map_err(|e| e.to_string())?;
        agents = agents.with_review(g.with_seed(Some(seed)));
    }
    Ok(agents)
}

fn run_sample(
    task: &BenchmarkTask,
    index: u32,
    options: &SuiteOptions,
    fingerprint: &str,
    tools: &Toolchain,
) -> SampleResult {
    let result = (|| -> Result<SampleResult, String> {
        let base = options.workspace_base.join(options.mode.as_str());
        let ws = make_workspace(&task.task_id, &base).map_err(|e| e.to_string())?;
        let seed = sample_seed(&task.task_id, index, fingerprint);
        let dv = &options.dv;
        let mut review = dv.review_config.clone();
        // Samples never block on a terminal.
        review.interactive = false;
        let design_task = task.design_task();
        let outcome = match options.mode {
            SuiteMode::Baseline => {
                review.budget = Budget {
                    max_iterations: 1,
                    max_agent_calls: 1,
                    ..review.budget
                };
                review.review_agent = None;
                let mut agents = sample_agents(&review, &task.task_id, index, seed)?;
                run_autoreview_with(&design_task, &review, &ws, &mut agents)
            }
            SuiteMode::AutoReview => {
                let mut agents = sample_agents(&review, &task.task_id, index, seed)?;
                run_autoreview_with(&design_task, &review, &ws, &mut agents)
            }
            SuiteMode::AutoDV => {
                let mut agents = sample_agents(&review, &task.task_id, index, seed)?;
                let dv = AutoDVConfig {
                    review_config: review.clone(),
                    ..dv.clone()
                };
                run_autodv_with(&design_task, &dv, &ws, &mut agents)
            }
        }
        .map_err(|e| e.to_string())?;
        score_sample(
            &task.task_id,
            index,
            &outcome,
            &task.golden_testbench,
            tools,
            &ws.root.join("golden"),
            dv.coverage_threshold,
        )
        .map_err(|e| e.to_string())
    })();
    result.unwrap_or_else(|e| SampleResult::failed(&task.task_id, index, e))
}

/// Runs every task × sample on a pool of `jobs` workers and folds the
/// results in (task, sample) order.
pub fn run_suite(tasks: &[BenchmarkTask], options: &SuiteOptions) -> Result<SuiteReport, BenchError> {
    let (n, k) = (options.n_samples, options.k);
    if k == 0 || k > n {
        return Err(BenchError::Domain { n: n as u64, c: 0, k: k as u64 });
    }
    if tasks.is_empty() {
        return Err(BenchError::Report("dataset has no tasks".into()));
    }
    let fingerprint = config_fingerprint(options);
    let tools = options.dv.review_config.toolchain()?;
    let units: Vec<(&BenchmarkTask, u32)> = tasks
        .iter()
        .flat_map(|t| (1..=n).map(move |i| (t, i)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| BenchError::Report(e.to_string()))?;
    let mut samples: Vec<SampleResult> = pool.install(|| {
        units
            .par_iter()
            .map(|(task, i)| run_sample(task, *i, options, &fingerprint, &tools))
            .collect()
    });
    samples.sort_by(|a, b| (&a.task_id, a.sample_index).cmp(&(&b.task_id, b.sample_index)));
    aggregate(options, fingerprint, samples)
}

fn aggregate(options: &SuiteOptions, fingerprint: String, samples: Vec<SampleResult>) -> Result<SuiteReport, BenchError> {
    let mut per_task: BTreeMap<String, TaskStats> = BTreeMap::new();
    let mut total_syntax_errors = 0;
    for s in &samples {
        let stats = per_task.entry(s.task_id.clone()).or_insert(TaskStats {
            n: 0,
            c_syntax: 0,
            c_functional: 0,
            coverage_met_any: false,
        });
        stats.n += 1;
        stats.c_syntax += s.syntax_ok as u32;
        stats.c_functional += s.functional_ok as u32;
        stats.coverage_met_any |= s.coverage_met;
        if s.sample_index == 1 {
            total_syntax_errors += s.syntax_error_count;
        }
    }
    let k = options.k as u64;
    let mean = |f: &dyn Fn(&TaskStats) -> u32| -> Result<f64, BenchError> {
        let mut sum = 0.0;
        for stats in per_task.values() {
            sum += pass_at_k(stats.n as u64, f(stats) as u64, k)?;
        }
        Ok(sum / per_task.len() as f64)
    };
    let pass_at_k_syntax = mean(&|s| s.c_syntax)?;
    let pass_at_k_functional = mean(&|s| s.c_functional)?;
    let verification_success_rate = (options.mode == SuiteMode::AutoDV).then(|| {
        per_task.values().filter(|s| s.coverage_met_any).count() as f64 / per_task.len() as f64
    });
    Ok(SuiteReport {
        mode: options.mode,
        model: options.dv.review_config.code_agent.model_id.clone(),
        n_samples: options.n_samples,
        k: options.k,
        per_task,
        pass_at_k_syntax,
        pass_at_k_functional,
        total_syntax_errors,
        verification_success_rate,
        config_fingerprint: fingerprint,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    MarkdownTable,
}

pub fn format_rate(rate: f64) -> String {
    format!("{:.2}%", rate * 100.0)
}

pub fn markdown_table(report: &SuiteReport) -> String {
    summary_table(std::slice::from_ref(report))
}

/// One row per report. When two or more reports carry a coverage success
/// rate, a final row holds their mean.
pub fn summary_table(reports: &[SuiteReport]) -> String {
    let k = reports.first().map_or(1, |r| r.k);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "| mode | model | pass@{k} syntax | pass@{k} functional | total syntax errors | coverage success rate |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|");
    for report in reports {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            report.mode.as_str(),
            report.model,
            format_rate(report.pass_at_k_syntax),
            format_rate(report.pass_at_k_functional),
            report.total_syntax_errors,
            report
                .verification_success_rate
                .map_or_else(|| "n/a".to_string(), format_rate)
        );
    }
    if let Some(mean) = mean_success_rate(reports) {
        let _ = writeln!(s, "| mean | | | | | {} |", format_rate(mean));
    }
    s
}

/// Mean coverage success rate over the reports that have one; `None` for
/// fewer than two.
pub fn mean_success_rate(reports: &[SuiteReport]) -> Option<f64> {
    let rates: Vec<f64> = reports.iter().filter_map(|r| r.verification_success_rate).collect();
    (rates.len() >= 2).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}

pub fn render_report(report: &SuiteReport, format: ReportFormat) -> Result<String, BenchError> {
    if report.per_task.is_empty() {
        return Err(BenchError::Report("suite report has no tasks".into()));
    }
    Ok(match format {
        ReportFormat::Json => to_canonical_json(report),
        ReportFormat::MarkdownTable => markdown_table(report),
    })
}

/// Writes `report.json` or `report.md` into `out_dir`.
pub fn emit_report(report: &SuiteReport, format: ReportFormat, out_dir: &Path) -> Result<PathBuf, BenchError> {
    let body = render_report(report, format)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join(match format {
        ReportFormat::Json => "report.json",
        ReportFormat::MarkdownTable => "report.md",
    });
    fs::write(&path, body)?;
    Ok(path)
}

/// Agent-visible files under `root` that contain a golden testbench.
pub fn audit_golden_quarantine(
    tasks: &[BenchmarkTask],
    root: &Path,
) -> Result<Vec<(PathBuf, String)>, BenchError> {
    let mut files = Vec::new();
    collect_agent_files(root, &mut files)?;
    files.sort();
    let mut hits = Vec::new();
    for path in files {
        let text = fs::read_to_string(&path)?;
        for t in tasks {
            let golden = t.golden_testbench.trim();
            if !golden.is_empty() && text.contains(golden) {
                hits.push((path.clone(), t.task_id.clone()));
            }
        }
    }
    Ok(hits)
}

fn is_agent_file(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let in_transcripts = path
        .parent()
        .and_then(Path::file_name)
        .is_some_and(|p| p == TRANSCRIPT_DIR);
    (in_transcripts && name.ends_with(".json"))
        || name == "prompt.txt"
        || name == "review.txt"
        || name.starts_with("response")
}

fn collect_agent_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), BenchError> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_agent_files(&path, out)?;
        } else if is_agent_file(&path) {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binom(n: u64, k: u64) -> f64 {
        if k > n {
            return 0.0;
        }
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(1, 1, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(5, 2, 1).unwrap(), 0.4);
        assert!((pass_at_k(10, 3, 2).unwrap() - (1.0 - 21.0 / 45.0)).abs() < 1e-12);
        assert!((pass_at_k(10, 3, 2).unwrap() - (1.0 - binom(7, 2) / binom(10, 2))).abs() < 1e-12);
        assert_eq!(pass_at_k(10, 0, 5).unwrap(), 0.0);
        assert_eq!(pass_at_k(10, 8, 3).unwrap(), 1.0);
    }

    #[test]
    fn pass_at_k_domain() {
        assert!(matches!(pass_at_k(3, 4, 1), Err(BenchError::Domain { .. })));
        assert!(matches!(pass_at_k(3, 1, 0), Err(BenchError::Domain { .. })));
        assert!(matches!(pass_at_k(3, 1, 4), Err(BenchError::Domain { .. })));
    }

    #[test]
    fn large_n_stays_finite() {
        let v = pass_at_k(10_000, 37, 100).unwrap();
        assert!(v.is_finite() && v > 0.0 && v < 1.0);
    }

    const GOOD: &str = r#"{"task_id":"a","prompt":"p","golden_testbench":"module tb; endmodule"}"#;

    #[test]
    fn dataset_parsing() {
        let two = format!("{GOOD}\n\n{}\n", GOOD.replace("\"a\"", "\"b\""));
        let tasks = parse_dataset(&two).unwrap();
        assert_eq!(tasks.iter().map(|t| t.task_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);

        let missing = format!("{GOOD}\n{{\"task_id\":\"c\",\"prompt\":\"p\"}}\n");
        match parse_dataset(&missing) {
            Err(BenchError::Format { line, why }) => {
                assert_eq!(line, 2);
                assert!(why.contains("golden_testbench"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_dataset(&format!("{GOOD}\n{GOOD}\n")),
            Err(BenchError::DuplicateTaskId { line: 2, .. })
        ));
    }

    #[test]
    fn design_task_hides_golden() {
        let t = parse_dataset(GOOD).unwrap().remove(0);
        let d = t.design_task();
        assert!(d.golden_testbench.is_none());
        assert!(!to_canonical_json(&d).contains("module tb"));
    }

    #[test]
    fn seeds_differ_per_sample() {
        let a = sample_seed("t", 1, "f");
        assert_eq!(a, sample_seed("t", 1, "f"));
        assert_ne!(a, sample_seed("t", 2, "f"));
        assert_ne!(a, sample_seed("u", 1, "f"));
        assert_ne!(a, sample_seed("t", 1, "g"));
    }

    fn report(rate: Option<f64>) -> SuiteReport {
        let mut per_task = BTreeMap::new();
        per_task.insert(
            "a".to_string(),
            TaskStats { n: 1, c_syntax: 1, c_functional: 1, coverage_met_any: true },
        );
        SuiteReport {
            mode: SuiteMode::AutoDV,
            model: "m".into(),
            n_samples: 1,
            k: 1,
            per_task,
            pass_at_k_syntax: 1.0,
            pass_at_k_functional: 0.5,
            total_syntax_errors: 3,
            verification_success_rate: rate,
            config_fingerprint: "x".into(),
            samples: vec![],
        }
    }

    #[test]
    fn markdown_rates() {
        let table = markdown_table(&report(Some(0.8846)));
        assert!(table.contains("| 88.46% |"), "{table}");
        assert!(table.contains("| 100.00% | 50.00% | 3 |"));
    }

    #[test]
    fn summary_has_mean_row() {
        let reports = [report(Some(0.8)), report(Some(0.95)), report(None)];
        let table = summary_table(&reports);
        assert_eq!(table.lines().count(), 6);
        assert!(table.ends_with("| mean | | | | | 87.50% |\n"), "{table}");
        assert_eq!(mean_success_rate(&reports[..1]), None);
        assert!(!markdown_table(&reports[0]).contains("mean"));
    }

    #[test]
    fn json_round_trips() {
        let r = report(Some(0.5));
        let text = render_report(&r, ReportFormat::Json).unwrap();
        assert_eq!(serde_json::from_str::<SuiteReport>(&text).unwrap(), r);
    }

    #[test]
    fn empty_report_is_rejected() {
        let mut r = report(None);
        r.per_task.clear();
        assert!(matches!(render_report(&r, ReportFormat::Json), Err(BenchError::Report(_))));
    }

    #[test]
    fn verilogeval_prompt_directory() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::write(p.join("Prob001_zero_prompt.txt"), "Build a circuit that outputs zero.\n").unwrap();
        fs::write(p.join("Prob001_zero_test.sv"), "module tb(); RefModule r(); TopModule t(); endmodule\n").unwrap();
        fs::write(p.join("Prob001_zero_ref.sv"), "module RefModule(output zero); assign zero = 0; endmodule\n").unwrap();
        fs::write(p.join("Prob001_zero_ifc.txt"), "module TopModule(output zero);\n").unwrap();
        let tasks = convert_verilogeval(p, None).unwrap();
        assert_eq!(tasks.len(), 1);
        assert_eq!(tasks[0].task_id, "Prob001_zero");
        assert!(tasks[0].golden_testbench.contains("module RefModule"));
        assert!(!tasks[0].prompt.contains("RefModule"));
    }

    #[test]
    fn verilogeval_jsonl_with_descriptions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        fs::create_dir(p.join("descriptions")).unwrap();
        fs::write(
            p.join("VerilogEval_Human.jsonl"),
            r#"{"task_id":"zero","prompt":"module top_module(output zero);","canonical_solution":"assign zero = 0;\nendmodule","test":"module tb; endmodule"}"#,
        )
        .unwrap();
        fs::write(
            p.join("descriptions/VerilogDescription_Human.jsonl"),
            r#"{"task_id":"zero","detail_description":"Output a constant zero."}"#,
        )
        .unwrap();
        let tasks = convert_verilogeval(&p.join("VerilogEval_Human.jsonl"), None).unwrap();
        assert!(tasks[0].prompt.starts_with("Output a constant zero."));
        assert!(tasks[0].prompt.contains("module top_module(output zero);"));
        assert_eq!(tasks[0].golden_testbench, "module tb; endmodule");
    }
}
