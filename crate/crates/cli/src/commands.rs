use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use veriloop_core::autodv::{
    is_functional_only, run_autodv_with, verification_summary, AutoDVConfig,
};
use veriloop_core::autoreview::{
    classify_prompt, run_autoreview_with, Agents, AutoReviewConfig, TerminalAnswers, OUTCOME_FILE,
};
use veriloop_core::bench::{
    convert_verilogeval, emit_report, load_dataset, markdown_table, run_suite, write_dataset,
    summary_table, ReportFormat, SuiteMode, SuiteOptions, SuiteReport,
};
use veriloop_core::eda::{make_workspace, Workspace, DESIGN_FILE, TESTBENCH_FILE};
use veriloop_core::gateway::Gateway;
use veriloop_core::{is_filesystem_safe, DesignTask, LoopOutcome, LoopStatus, PromptCase};

use crate::config::{Provider, RunConfig};
use crate::{Cli, Command, GlobalArgs, PromptArgs, RecordInput};

pub const EXIT_SUCCESS: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_BUDGET: u8 = 2;
pub const EXIT_FUNCTIONAL_ONLY: u8 = 3;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_DATA: u8 = 65;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(anyhow::Error),
    Failure(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Failure(_) => EXIT_FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Data(e) | CliError::Failure(e) => write!(f, "{e:#}"),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn failure(e: impl Into<anyhow::Error>) -> CliError {
    CliError::Failure(e.into())
}

/// Exit status for a finished loop.
pub fn exit_code(status: LoopStatus, functional_only: bool) -> u8 {
    match status {
        LoopStatus::Success => EXIT_SUCCESS,
        _ if functional_only => EXIT_FUNCTIONAL_ONLY,
        LoopStatus::BudgetExhausted => EXIT_BUDGET,
        LoopStatus::ToolFailure | LoopStatus::AgentFailure => EXIT_FAILURE,
    }
}

fn init_logging(config: &RunConfig, global: &GlobalArgs) {
    let levels = ["error", "warn", "info", "debug", "trace"];
    let base = levels
        .iter()
        .position(|l| l.eq_ignore_ascii_case(&config.run.log_level))
        .unwrap_or(1);
    let level = if global.quiet { 0 } else { (base + global.verbose as usize).min(4) };
    let _ = env_logger::Builder::new()
        .parse_filters(levels[level])
        .target(env_logger::Target::Stderr)
        .try_init();
}

fn resolve_config(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut c = RunConfig::layered(global.config.as_deref(), std::env::vars())
        .map_err(|e| usage(format!("{e:#}")))?;
    if let Some(w) = &global.workspace {
        c.run.workspace = w.clone();
    }
    if let Some(p) = &global.tool_profile {
        c.tools.profile = p.clone();
    }
    if let Some(e) = &global.endpoint {
        c.code_agent.endpoint = e.clone();
        if let Some(r) = &mut c.review_agent {
            r.endpoint = e.clone();
        }
    }
    if let Some(m) = &global.model {
        c.code_agent.model = m.clone();
    }
    if global.review_agent && c.review_agent.is_none() {
        let mut review = c.code_agent.clone();
        review.temperature = 0.0;
        c.review_agent = Some(review);
    }
    if let Some(dir) = &global.replay {
        c.use_replay(dir);
    }
    if let Some(n) = global.max_iterations {
        c.budget.max_iterations = n;
    }
    if let Some(n) = global.max_agent_calls {
        c.budget.max_agent_calls = n;
    }
    if let Some(s) = global.tool_timeout {
        c.budget.tool_timeout_seconds = s;
    }
    c.run.interactive |= global.interactive;
    Ok(c)
}

fn set_threshold(config: &mut RunConfig, flag: Option<f64>) -> Result<(), CliError> {
    if let Some(t) = flag {
        config.verify.coverage_threshold = t;
    }
    let t = config.verify.coverage_threshold;
    if !(t > 0.0 && t <= 1.0) {
        return Err(usage(format!("coverage threshold {t} must be in (0, 1]")));
    }
    Ok(())
}

fn read_prompt(input: &PromptArgs) -> Result<String, CliError> {
    let text = match (&input.prompt, &input.prompt_file) {
        (Some(p), None) => p.clone(),
        (None, Some(f)) => fs::read_to_string(f)
            .with_context(|| format!("reading {}", f.display()))
            .map_err(|e| usage(format!("{e:#}")))?,
        _ => return Err(usage("give exactly one of --prompt or --prompt-file")),
    };
    if text.trim().is_empty() {
        return Err(usage("the prompt is empty"));
    }
    Ok(text)
}

fn check_task_id(id: &str) -> Result<(), CliError> {
    if is_filesystem_safe(id) {
        Ok(())
    } else {
        Err(usage(format!("task id {id:?} may only use letters, digits, '_', '-' and '.'")))
    }
}

fn is_source(p: &Path) -> bool {
    p.extension().is_some_and(|e| e == "v" || e == "sv")
}

/// RTL text from a file, a directory of sources, or a previous run
/// workspace's final bundle.
fn read_rtl(input: &Path) -> Result<String, CliError> {
    let bad = |e: std::io::Error| usage(format!("cannot read {}: {e}", input.display()));
    if input.is_file() {
        return fs::read_to_string(input).map_err(bad);
    }
    let outcome_path = input.join(OUTCOME_FILE);
    if outcome_path.is_file() {
        let outcome: LoopOutcome = serde_json::from_str(&fs::read_to_string(&outcome_path).map_err(bad)?)
            .map_err(|e| usage(format!("{}: {e}", outcome_path.display())))?;
        let bundle = outcome
            .final_bundle
            .ok_or_else(|| usage(format!("{} has no final design", input.display())))?;
        return Ok(format!("{}\n{}", bundle.design_source, bundle.testbench_source));
    }
    let mut sources: Vec<PathBuf> = fs::read_dir(input)
        .map_err(bad)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_source(p))
        .collect();
    sources.sort();
    if sources.is_empty() {
        return Err(usage(format!("no .v or .sv files in {}", input.display())));
    }
    let mut text = String::new();
    for p in sources {
        text.push_str(&fs::read_to_string(&p).map_err(bad)?);
        text.push('\n');
    }
    Ok(text)
}

fn verify_task(
    input: &Path,
    testbench: Option<&Path>,
    prompt: Option<&str>,
    task_id: Option<&str>,
) -> Result<DesignTask, CliError> {
    let mut rtl = read_rtl(input)?;
    if let Some(tb) = testbench {
        let text = fs::read_to_string(tb).map_err(|e| usage(format!("cannot read {}: {e}", tb.display())))?;
        rtl.push('\n');
        rtl.push_str(&text);
    }
    let task_id = match task_id {
        Some(id) => id.to_string(),
        None => input
            .file_stem()
            .and_then(|s| s.to_str())
            .map(|s| s.chars().map(|c| if c.is_ascii_alphanumeric() || "_-.".contains(c) { c } else { '_' }).collect())
            .filter(|s: &String| is_filesystem_safe(s))
            .unwrap_or_else(|| "design".into()),
    };
    check_task_id(&task_id)?;
    Ok(DesignTask {
        task_id,
        user_prompt: prompt
            .unwrap_or("Compile and verify the provided RTL, fixing any problems found.")
            .to_string(),
        case: PromptCase::TaskBased,
        provided_rtl: Some(rtl),
        golden_testbench: None,
    })
}

fn generate_task(prompt: String, task_id: &str) -> Result<DesignTask, CliError> {
    check_task_id(task_id)?;
    Ok(DesignTask {
        task_id: task_id.to_string(),
        case: classify_prompt(&prompt, None),
        user_prompt: prompt,
        provided_rtl: None,
        golden_testbench: None,
    })
}

fn workspace(config: &RunConfig, task_id: &str) -> Result<Workspace, CliError> {
    make_workspace(task_id, &config.run.workspace).map_err(failure)
}

/// Copies the final sources next to the outcome for easy pickup.
fn save_final(ws: &Workspace, outcome: &LoopOutcome) -> Result<(), CliError> {
    if let Some(b) = &outcome.final_bundle {
        let dir = ws.root.join("final");
        fs::create_dir_all(&dir).map_err(failure)?;
        fs::write(dir.join(DESIGN_FILE), &b.design_source).map_err(failure)?;
        if b.has_testbench() {
            fs::write(dir.join(TESTBENCH_FILE), &b.testbench_source).map_err(failure)?;
        }
    }
    Ok(())
}

fn generation_summary(ws: &Workspace, outcome: &LoopOutcome) -> String {
    let errors = outcome.last_compile().map_or(0, |c| c.error_count());
    let mut s = format!(
        "workspace: {}\nstatus: {}\niterations: {}, errors: {}\nagent calls: {}\n",
        ws.root.display(),
        outcome.status,
        outcome.iterations_used,
        errors,
        outcome.total_agent_calls()
    );
    if outcome.final_bundle.is_some() {
        s.push_str(&format!("design: {}\n", ws.root.join("final").join(DESIGN_FILE).display()));
    }
    if let Some(d) = &outcome.detail {
        s.push_str(&format!("detail: {d}\n"));
    }
    s
}

fn engine_error(e: veriloop_core::autoreview::EngineError) -> CliError {
    use veriloop_core::autoreview::EngineError;
    match e {
        EngineError::Invalid(_) | EngineError::InteractionUnavailable => usage(e.to_string()),
        other => failure(other),
    }
}

fn agents_for(review: &AutoReviewConfig, record: Option<&Path>) -> Result<Agents, CliError> {
    let mut code = Gateway::from_config(&review.code_agent).map_err(|e| usage(e.to_string()))?;
    if let Some(dir) = record {
        code = code.recording_to(dir).map_err(failure)?;
    }
    let mut agents = Agents::new(code);
    if let Some(r) = &review.review_agent {
        let mut g = Gateway::from_config(r).map_err(|e| usage(e.to_string()))?;
        if let Some(dir) = record {
            g = g.recording_to(dir.join("review")).map_err(failure)?;
        }
        agents = agents.with_review(g);
    }
    if review.interactive {
        agents = agents.with_answers(Box::new(TerminalAnswers));
    }
    Ok(agents)
}

fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    let _ = out.flush();
}

fn run_generate(config: &RunConfig, task: &DesignTask, record: Option<&Path>) -> Result<u8, CliError> {
    let review = config.review_config().map_err(|e| usage(format!("{e:#}")))?;
    let mut agents = agents_for(&review, record)?;
    let ws = workspace(config, &task.task_id)?;
    eprintln!("running compile-repair loop in {}", ws.root.display());
    let outcome = run_autoreview_with(task, &review, &ws, &mut agents).map_err(engine_error)?;
    save_final(&ws, &outcome)?;
    print(&generation_summary(&ws, &outcome));
    Ok(exit_code(outcome.status, false))
}

fn run_verify(config: &RunConfig, task: &DesignTask, record: Option<&Path>) -> Result<u8, CliError> {
    let dv: AutoDVConfig = config.dv_config().map_err(|e| usage(format!("{e:#}")))?;
    let mut agents = agents_for(&dv.review_config, record)?;
    let ws = workspace(config, &task.task_id)?;
    eprintln!("running verification loop in {}", ws.root.display());
    let outcome = run_autodv_with(task, &dv, &ws, &mut agents).map_err(engine_error)?;
    save_final(&ws, &outcome)?;
    let threshold = dv.coverage_threshold;
    print(&format!("workspace: {}\n", ws.root.display()));
    print(&verification_summary(&task.task_id, &outcome, threshold));
    Ok(exit_code(outcome.status, is_functional_only(&outcome, threshold)))
}

fn prepare_record_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    let occupied = dir.is_file()
        || (dir.is_dir() && fs::read_dir(dir).map_err(failure)?.next().is_some());
    if occupied {
        if !force {
            return Err(usage(format!(
                "{} is not empty; pass --force to replace it",
                dir.display()
            )));
        }
        if dir.is_file() {
            fs::remove_file(dir).map_err(failure)?;
        } else {
            fs::remove_dir_all(dir).map_err(failure)?;
        }
    }
    fs::create_dir_all(dir).map_err(failure)?;
    Ok(())
}

fn count_files(dir: &Path) -> usize {
    fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok()).filter(|e| e.path().is_file()).count())
        .unwrap_or(0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_record(
    mut config: RunConfig,
    out: &Path,
    force: bool,
    input: &RecordInput,
    verify: bool,
    threshold: Option<f64>,
    task_id: &str,
) -> Result<u8, CliError> {
    let live = config.code_agent.provider == Provider::HttpChat
        && config.review_agent.as_ref().is_none_or(|r| r.provider == Provider::HttpChat);
    if !live {
        return Err(usage("record needs live (http_chat) agents, not replay"));
    }
    set_threshold(&mut config, threshold)?;
    let task = match &input.rtl {
        Some(rtl) => verify_task(rtl, None, None, Some(task_id))?,
        None => generate_task(
            read_prompt(&PromptArgs {
                prompt: input.prompt.clone(),
                prompt_file: input.prompt_file.clone(),
            })?,
            task_id,
        )?,
    };
    prepare_record_dir(out, force)?;
    let code = if verify || input.rtl.is_some() {
        run_verify(&config, &task, Some(out))?
    } else {
        run_generate(&config, &task, Some(out))?
    };
    let mut n = count_files(out);
    if config.review_agent.is_some() {
        n += count_files(&out.join("review"));
    }
    print(&format!("recorded {n} response(s) to {}\n", out.display()));
    Ok(code)
}

fn cmd_bench(
    mut config: RunConfig,
    dataset: &Path,
    mode: SuiteMode,
    n: u32,
    k: u32,
    jobs: Option<usize>,
    out: Option<PathBuf>,
    threshold: Option<f64>,
) -> Result<u8, CliError> {
    if n == 0 || k == 0 || k > n {
        return Err(usage(format!("need 1 <= k <= n (got n={n}, k={k})")));
    }
    if jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    set_threshold(&mut config, threshold)?;
    let tasks = load_dataset(dataset)
        .with_context(|| format!("dataset {}", dataset.display()))
        .map_err(CliError::Data)?;
    if tasks.is_empty() {
        return Err(CliError::Data(anyhow::anyhow!("dataset {} has no tasks", dataset.display())));
    }
    let options = SuiteOptions {
        mode,
        n_samples: n,
        k,
        jobs: jobs.unwrap_or(config.run.jobs).max(1),
        dv: config.dv_config().map_err(|e| usage(format!("{e:#}")))?,
        workspace_base: config.run.workspace.join("bench"),
    };
    eprintln!(
        "running {} task(s) x {n} sample(s) in {} mode on {} worker(s)",
        tasks.len(),
        mode.as_str(),
        options.jobs
    );
    let report = run_suite(&tasks, &options).map_err(failure)?;
    let out = out.unwrap_or_else(|| config.run.workspace.join("reports").join(mode.as_str()));
    let json = emit_report(&report, ReportFormat::Json, &out).map_err(failure)?;
    let md = emit_report(&report, ReportFormat::MarkdownTable, &out).map_err(failure)?;
    eprintln!("wrote {} and {}", json.display(), md.display());
    print(&markdown_table(&report));
    Ok(EXIT_SUCCESS)
}

fn cmd_convert(input: &Path, descriptions: Option<&Path>, out: &Path) -> Result<u8, CliError> {
    let tasks = convert_verilogeval(input, descriptions)
        .with_context(|| format!("converting {}", input.display()))
        .map_err(CliError::Data)?;
    write_dataset(&tasks, out).map_err(failure)?;
    print(&format!("wrote {} task(s) to {}\n", tasks.len(), out.display()));
    Ok(EXIT_SUCCESS)
}

fn cmd_summarize(reports: &[PathBuf]) -> Result<u8, CliError> {
    let mut loaded = Vec::with_capacity(reports.len());
    for path in reports {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(CliError::Data)?;
        let report: SuiteReport = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(CliError::Data)?;
        loaded.push(report);
    }
    print(&summary_table(&loaded));
    Ok(EXIT_SUCCESS)
}

pub fn run(cli: Cli) -> Result<u8, CliError> {
    let mut config = resolve_config(&cli.global)?;
    init_logging(&config, &cli.global);
    match cli.command {
        Command::Generate { input, task_id } => {
            let task = generate_task(read_prompt(&input)?, &task_id)?;
            run_generate(&config, &task, None)
        }
        Command::Verify { input, testbench, prompt, coverage_threshold, task_id } => {
            set_threshold(&mut config, coverage_threshold)?;
            let task = verify_task(&input, testbench.as_deref(), prompt.as_deref(), task_id.as_deref())?;
            run_verify(&config, &task, None)
        }
        Command::Bench { dataset, mode, n, k, jobs, out, coverage_threshold } => {
            cmd_bench(config, &dataset, mode.into(), n, k, jobs, out, coverage_threshold)
        }
        Command::Record { out, force, input, verify, coverage_threshold, task_id } => {
            cmd_record(config, &out, force, &input, verify, coverage_threshold, &task_id)
        }
        Command::Convert { input, descriptions, out } => cmd_convert(&input, descriptions.as_deref(), &out),
        Command::Summarize { reports } => cmd_summarize(&reports),
    }
}
