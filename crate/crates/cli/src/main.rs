mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "veriloop",
    version,
    about = "Generate and verify Verilog with an LLM in a compile/simulate/coverage feedback loop",
    after_help = "Configuration is read from ./veriloop.toml (or --config), then VERILOOP_<SECTION>__<KEY> \
environment variables, then flags. The provider token is read from VERILOOP_API_KEY only."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
#[command(next_help_heading = "Global options")]
pub struct GlobalArgs {
    /// Configuration file (default: ./veriloop.toml when present)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Directory that receives run workspaces
    #[arg(long, global = true, value_name = "DIR")]
    pub workspace: Option<PathBuf>,
    /// Tool profile: icarus, stub, or a profile file
    #[arg(long, global = true, value_name = "NAME|FILE")]
    pub tool_profile: Option<String>,
    /// Serve agent responses from recorded files instead of a live endpoint
    #[arg(long, global = true, value_name = "DIR")]
    pub replay: Option<PathBuf>,
    /// Chat-completions endpoint for the live agents
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    /// Model identifier for the code agent
    #[arg(long, global = true, value_name = "ID")]
    pub model: Option<String>,
    /// Run a separate review agent over tool feedback
    #[arg(long, global = true)]
    pub review_agent: bool,
    /// Compile-repair iterations per loop
    #[arg(long, global = true, value_name = "N")]
    pub max_iterations: Option<u32>,
    /// Agent calls per run
    #[arg(long, global = true, value_name = "N")]
    pub max_agent_calls: Option<u32>,
    /// Upper bound on any single tool invocation, in seconds
    #[arg(long, global = true, value_name = "SECONDS")]
    pub tool_timeout: Option<u64>,
    /// Ask clarifying questions on the terminal for vague prompts
    #[arg(long, global = true)]
    pub interactive: bool,
    /// More log output on stderr (repeatable)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    /// Only errors on stderr
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PromptArgs {
    /// Design request text
    #[arg(long, value_name = "TEXT")]
    pub prompt: Option<String>,
    /// File holding the design request
    #[arg(long, value_name = "FILE")]
    pub prompt_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct RecordInput {
    /// Design request text
    #[arg(long, value_name = "TEXT")]
    pub prompt: Option<String>,
    /// File holding the design request
    #[arg(long, value_name = "FILE")]
    pub prompt_file: Option<PathBuf>,
    /// Existing RTL to verify instead of a request
    #[arg(long, value_name = "PATH")]
    pub rtl: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Baseline,
    Autoreview,
    Autodv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate RTL from a request and repair it until it compiles
    Generate {
        #[command(flatten)]
        input: PromptArgs,
        /// Name for the run workspace
        #[arg(long, value_name = "ID", default_value = "design")]
        task_id: String,
    },
    /// Compile, simulate and measure coverage of existing RTL, repairing it until it verifies
    Verify {
        /// Verilog file, directory of sources, or a previous run workspace
        input: PathBuf,
        /// Testbench to verify with (otherwise one is taken from INPUT or generated)
        #[arg(long, value_name = "FILE")]
        testbench: Option<PathBuf>,
        /// What the design is supposed to do
        #[arg(long, value_name = "TEXT")]
        prompt: Option<String>,
        /// Required aggregate coverage, in (0, 1]
        #[arg(long, value_name = "FRACTION")]
        coverage_threshold: Option<f64>,
        /// Name for the run workspace (default: input file stem)
        #[arg(long, value_name = "ID")]
        task_id: Option<String>,
    },
    /// Run a benchmark dataset and report pass@k
    Bench {
        /// Dataset file, one JSON task per line
        dataset: PathBuf,
        #[arg(long, value_enum, default_value = "autoreview")]
        mode: Mode,
        /// Samples per task
        #[arg(long, value_name = "N", default_value_t = 1)]
        n: u32,
        /// k in pass@k
        #[arg(long, value_name = "K", default_value_t = 1)]
        k: u32,
        /// Parallel workers
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        /// Report directory (default: <workspace>/reports/<mode>)
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Required aggregate coverage in autodv mode, in (0, 1]
        #[arg(long, value_name = "FRACTION")]
        coverage_threshold: Option<f64>,
    },
    /// Run generate or verify against a live agent, saving every response for replay
    Record {
        /// Directory that receives the numbered responses
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Replace an existing recording directory
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        input: RecordInput,
        /// Run the verification loop after generation
        #[arg(long)]
        verify: bool,
        /// Required aggregate coverage, in (0, 1]
        #[arg(long, value_name = "FRACTION")]
        coverage_threshold: Option<f64>,
        /// Name for the run workspace
        #[arg(long, value_name = "ID", default_value = "design")]
        task_id: String,
    },
    /// Import a VerilogEval problem set into the dataset format
    Convert {
        /// Problem JSONL file or a directory of *_prompt.txt/*_test.sv/*_ref.sv
        input: PathBuf,
        /// Description JSONL (default: descriptions/VerilogDescription_Human.jsonl next to INPUT)
        #[arg(long, value_name = "FILE")]
        descriptions: Option<PathBuf>,
        /// Output dataset file
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Tabulate several bench reports side by side with their mean success rate
    Summarize {
        /// report.json files written by `bench`
        #[arg(required = true, value_name = "REPORT")]
        reports: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("veriloop: {e:#}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<Mode> for veriloop_core::bench::SuiteMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Baseline => Self::Baseline,
            Mode::Autoreview => Self::AutoReview,
            Mode::Autodv => Self::AutoDV,
        }
    }
}
