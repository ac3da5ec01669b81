//! Command-line front end: `validate`, `generate`, `execute`, `evaluate`,
//! `report` and `run`.
//!
//! Exit codes: 0 success, 1 invalid input, 2 failure while executing.

use std::ffi::OsString;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use tracing::{info, warn};

use crate::gateway::mock::MockProvider;
use crate::gateway::{Gateway, ProviderRegistry, RetryPolicy};
use crate::generation::{generate_plan, GenerationOptions, Plan};
use crate::library::{load_library_file, load_library_str, PromptTemplate, SEED_LIBRARY};
use crate::pipeline::{
    aggregate, evaluate_records, execute_plan, EvaluationRecord, ExecutionOptions, ExecutionRecord,
    PipelineError, DEFAULT_CONCURRENCY,
};
use crate::report::{write_json, write_reports, ReportBundle};
use crate::requirements::{
    load_requirements, load_scenario, EthicalRequirement, TestScenarioConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_EXECUTION: i32 = 2;

pub const PLAN_FILE: &str = "plan.json";
pub const RECORDS_FILE: &str = "records.json";
pub const EVALUATIONS_FILE: &str = "evaluations.json";

#[derive(Debug, Parser)]
#[command(
    name = "biasprobe",
    version,
    about = "Test LLMs for bias against ethical requirements"
)]
pub struct Cli {
    /// Log filter for progress messages on stderr (e.g. info, debug, biasprobe=trace)
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check requirements, scenario and library without contacting any model
    Validate(ValidateArgs),
    /// Expand templates into concrete prompts and write plan.json
    Generate(GenerateArgs),
    /// Send the plan's prompts to every scenario model and write records.json
    Execute(ExecuteArgs),
    /// Judge recorded responses with the oracles and write evaluations.json
    Evaluate(EvaluateArgs),
    /// Aggregate evaluations and write the three timestamped CSV reports
    Report(ReportArgs),
    /// generate, execute, evaluate and report in one go
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Ethical requirements (JSON)
    #[arg(long)]
    pub requirements: PathBuf,
    /// Test scenario configuration (JSON)
    #[arg(long)]
    pub scenario: PathBuf,
    /// Template library (CSV); the bundled seed library when omitted
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Refuse plans with more prompts than this
    #[arg(long, default_value_t = crate::generation::DEFAULT_MAX_CASES)]
    pub max_cases: usize,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    /// Scripted responses for the offline `mock` provider (JSON)
    #[arg(long)]
    pub mock_rules: Option<PathBuf>,
    /// Base delay between retries, in milliseconds
    #[arg(long, default_value_t = 1000)]
    pub retry_base_ms: u64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Ethical requirements (JSON)
    #[arg(long)]
    pub requirements: PathBuf,
    /// Test scenario configuration (JSON)
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Template library (CSV); the bundled seed library when omitted
    #[arg(long)]
    pub library: Option<PathBuf>,
    /// Scripted responses for the offline `mock` provider (JSON)
    #[arg(long)]
    pub mock_rules: Option<PathBuf>,
    /// Refuse plans with more prompts than this
    #[arg(long, default_value_t = crate::generation::DEFAULT_MAX_CASES)]
    pub max_cases: usize,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExecuteArgs {
    /// Test scenario configuration (JSON)
    #[arg(long)]
    pub scenario: PathBuf,
    /// Plan written by `generate`
    #[arg(long)]
    pub plan: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
    /// Concurrent requests per provider
    #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
    pub concurrency: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Test scenario configuration (JSON)
    #[arg(long)]
    pub scenario: PathBuf,
    /// Plan written by `generate`
    #[arg(long)]
    pub plan: PathBuf,
    /// Records written by `execute`
    #[arg(long)]
    pub records: PathBuf,
    #[command(flatten)]
    pub providers: ProviderArgs,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Ethical requirements (JSON), for the tolerances
    #[arg(long)]
    pub requirements: PathBuf,
    /// Records written by `execute`
    #[arg(long)]
    pub records: PathBuf,
    /// Evaluations written by `evaluate`
    #[arg(long)]
    pub evaluations: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub providers: ProviderArgs,
    /// Concurrent requests per provider
    #[arg(long, default_value_t = DEFAULT_CONCURRENCY)]
    pub concurrency: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

/// A failure carrying the stage it happened in and its exit code.
#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub message: String,
    pub code: i32,
}

impl CliError {
    fn invalid(stage: &'static str, message: impl Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
            code: EXIT_INVALID,
        }
    }

    fn execution(stage: &'static str, message: impl Display) -> Self {
        Self {
            stage,
            message: message.to_string(),
            code: EXIT_EXECUTION,
        }
    }

    fn file(stage: &'static str, path: &Path, message: impl Display) -> Self {
        Self::invalid(stage, format!("{}: {message}", path.display()))
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let stage = match &e {
            PipelineError::Generate(_) => "generate",
            PipelineError::Execute(_) => "execute",
            PipelineError::Grader(_) | PipelineError::IncompleteRecords(_) => "evaluate",
            PipelineError::UnknownRequirement(_) => "aggregate",
            PipelineError::Report(_) => "report",
        };
        let code = match &e {
            PipelineError::Generate(_)
            | PipelineError::IncompleteRecords(_)
            | PipelineError::UnknownRequirement(_) => EXIT_INVALID,
            _ => EXIT_EXECUTION,
        };
        // Drop the stage prefix the pipeline error already carries.
        let text = e.to_string();
        let message = text
            .split_once(": ")
            .map_or(text.clone(), |(_, m)| m.to_owned());
        Self {
            stage,
            message,
            code,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read(stage: &'static str, path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::file(stage, path, e))
}

fn read_json<T: DeserializeOwned>(stage: &'static str, path: &Path) -> CliResult<T> {
    serde_json::from_str(&read(stage, path)?).map_err(|e| CliError::file(stage, path, e))
}

fn requirements(stage: &'static str, path: &Path) -> CliResult<Vec<EthicalRequirement>> {
    load_requirements(&read(stage, path)?).map_err(|e| CliError::file(stage, path, e))
}

fn scenario(stage: &'static str, path: &Path) -> CliResult<TestScenarioConfig> {
    load_scenario(&read(stage, path)?).map_err(|e| CliError::file(stage, path, e))
}

fn library(stage: &'static str, path: Option<&Path>) -> CliResult<Vec<PromptTemplate>> {
    match path {
        Some(p) => load_library_file(p).map_err(|e| CliError::file(stage, p, e)),
        None => load_library_str(SEED_LIBRARY)
            .map_err(|e| CliError::invalid(stage, format!("seed library: {e}"))),
    }
}

fn plan(stage: &'static str, path: &Path) -> CliResult<Plan> {
    Plan::from_json(&read(stage, path)?).map_err(|e| CliError::file(stage, path, e))
}

fn register_mock(
    stage: &'static str,
    registry: &ProviderRegistry,
    rules: Option<&Path>,
) -> CliResult<()> {
    let Some(path) = rules else { return Ok(()) };
    let mock =
        MockProvider::from_json(&read(stage, path)?).map_err(|e| CliError::file(stage, path, e))?;
    registry
        .register_provider("mock", Arc::new(mock))
        .map_err(|e| CliError::invalid(stage, e))
}

/// Every scenario model must name a registered provider. Checked without
/// creating any client.
fn check_providers(
    stage: &'static str,
    registry: &ProviderRegistry,
    scenario: &TestScenarioConfig,
) -> CliResult<()> {
    let known = registry.providers();
    let grader = scenario.use_llm_eval.then_some(&scenario.grader_llm);
    for model in scenario.llms.iter().chain(grader) {
        if !known.contains(&model.provider) {
            let hint = if model.provider == "mock" {
                " (pass --mock-rules)"
            } else {
                ""
            };
            return Err(CliError::invalid(
                stage,
                format!(
                    "model `{model}`: unknown provider `{}`{hint}",
                    model.provider
                ),
            ));
        }
    }
    Ok(())
}

fn gateway(registry: &Arc<ProviderRegistry>, providers: &ProviderArgs) -> Gateway {
    Gateway::new(registry.clone()).with_retry_policy(
        RetryPolicy::default().with_base(Duration::from_millis(providers.retry_base_ms)),
    )
}

fn save<T: serde::Serialize + ?Sized>(
    stage: &'static str,
    value: &T,
    path: &Path,
) -> CliResult<()> {
    write_json(value, path).map_err(|e| CliError::execution(stage, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn save_plan(plan: &Plan, out: &Path) -> CliResult<()> {
    for w in &plan.warnings {
        warn!("{w}");
    }
    let path = out.join(PLAN_FILE);
    save("generate", &plan.groups, &path)?;
    info!(
        groups = plan.groups.len(),
        prompts = plan.case_count(),
        "plan ready"
    );
    Ok(())
}

fn announce(bundle: &ReportBundle) {
    for p in [
        &bundle.responses_path,
        &bundle.evaluations_path,
        &bundle.global_path,
    ] {
        info!("wrote {}", p.display());
    }
}

fn validate(args: &ValidateArgs, registry: &ProviderRegistry) -> CliResult<()> {
    let reqs = requirements("validate", &args.requirements)?;
    let lib = library("validate", args.library.as_deref())?;
    register_mock("validate", registry, args.mock_rules.as_deref())?;
    info!(
        requirements = reqs.len(),
        templates = lib.len(),
        "inputs are valid"
    );
    if let Some(path) = &args.scenario {
        let sc = scenario("validate", path)?;
        check_providers("validate", registry, &sc)?;
        let plan = generate_plan(
            &reqs,
            &sc,
            &lib,
            GenerationOptions {
                max_cases: args.max_cases,
            },
        )
        .map_err(|e| CliError::invalid("validate", e))?;
        for w in &plan.warnings {
            warn!("{w}");
        }
        info!(
            groups = plan.groups.len(),
            prompts = plan.case_count() * sc.llms.len(),
            "scenario would send this many prompts"
        );
    }
    Ok(())
}

fn generate(args: &GenerateArgs) -> CliResult<()> {
    let reqs = requirements("generate", &args.input.requirements)?;
    let sc = scenario("generate", &args.input.scenario)?;
    let lib = library("generate", args.input.library.as_deref())?;
    let plan = generate_plan(
        &reqs,
        &sc,
        &lib,
        GenerationOptions {
            max_cases: args.input.max_cases,
        },
    )
    .map_err(PipelineError::from)?;
    save_plan(&plan, &args.out)
}

fn execute(args: &ExecuteArgs, registry: &Arc<ProviderRegistry>) -> CliResult<()> {
    let sc = scenario("execute", &args.scenario)?;
    let plan = plan("execute", &args.plan)?;
    register_mock("execute", registry, args.providers.mock_rules.as_deref())?;
    check_providers("execute", registry, &sc)?;
    let gw = gateway(registry, &args.providers);
    let records = execute_plan(
        &plan.groups,
        &sc,
        &gw,
        ExecutionOptions {
            concurrency: args.concurrency,
        },
    )?;
    save("execute", &records, &args.out.join(RECORDS_FILE))
}

fn evaluate(args: &EvaluateArgs, registry: &Arc<ProviderRegistry>) -> CliResult<()> {
    let sc = scenario("evaluate", &args.scenario)?;
    let plan = plan("evaluate", &args.plan)?;
    let records: Vec<ExecutionRecord> = read_json("evaluate", &args.records)?;
    register_mock("evaluate", registry, args.providers.mock_rules.as_deref())?;
    let gw = gateway(registry, &args.providers);
    let evaluations = evaluate_records(&records, &plan.groups, &sc, &gw)?;
    save("evaluate", &evaluations, &args.out.join(EVALUATIONS_FILE))
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let reqs = requirements("report", &args.requirements)?;
    let records: Vec<ExecutionRecord> = read_json("report", &args.records)?;
    let evaluations: Vec<EvaluationRecord> = read_json("report", &args.evaluations)?;
    let globals = aggregate(&evaluations, &reqs)?;
    let bundle = write_reports(&records, &evaluations, &globals, &args.out, Utc::now())
        .map_err(PipelineError::from)?;
    announce(&bundle);
    Ok(())
}

fn run(args: &RunArgs, registry: &Arc<ProviderRegistry>) -> CliResult<()> {
    let reqs = requirements("run", &args.input.requirements)?;
    let sc = scenario("run", &args.input.scenario)?;
    let lib = library("run", args.input.library.as_deref())?;
    register_mock("run", registry, args.providers.mock_rules.as_deref())?;
    check_providers("run", registry, &sc)?;
    let gw = gateway(registry, &args.providers);

    let plan = generate_plan(
        &reqs,
        &sc,
        &lib,
        GenerationOptions {
            max_cases: args.input.max_cases,
        },
    )
    .map_err(PipelineError::from)?;
    save_plan(&plan, &args.out)?;
    let records = execute_plan(
        &plan.groups,
        &sc,
        &gw,
        ExecutionOptions {
            concurrency: args.concurrency,
        },
    )?;
    save("execute", &records, &args.out.join(RECORDS_FILE))?;
    let evaluations = evaluate_records(&records, &plan.groups, &sc, &gw)?;
    save("evaluate", &evaluations, &args.out.join(EVALUATIONS_FILE))?;
    let globals = aggregate(&evaluations, &reqs)?;
    let bundle = write_reports(&records, &evaluations, &globals, &args.out, Utc::now())
        .map_err(PipelineError::from)?;
    announce(&bundle);
    Ok(())
}

fn init_logging(filter: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(filter).unwrap_or_else(|_| "info".into());
    // A second call (tests running several commands) keeps the first subscriber.
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .try_init();
}

/// Parses `args` (including the program name) and runs the command against
/// `registry`. Returns the process exit code; diagnostics go to stderr.
pub fn run_cli<I, T>(args: I, registry: Arc<ProviderRegistry>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    init_logging(&cli.log_level);
    let result = match &cli.command {
        Command::Validate(a) => validate(a, &registry),
        Command::Generate(a) => generate(a),
        Command::Execute(a) => execute(a, &registry),
        Command::Evaluate(a) => evaluate(a, &registry),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a, &registry),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}: {}", e.stage, e.message);
            e.code
        }
    }
}
