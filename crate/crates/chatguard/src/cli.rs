//! Command-line driver: `moderate`, `serve`, `eval`, `augment`, and
//! `policy validate`, all thin wrappers over the library.
//!
//! Exit codes: 0 success, 1 validation failure, 2 backend failure,
//! 64 usage error.

use std::collections::BTreeMap;
use std::io::Read;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::augment::{emit_training_records, write_training_records, AugmentConfig};
use crate::backend::{
    binarize_severity_sweep, CategoryScoreProvider, CompletionBackend, FixtureScoreAdapter,
    HttpBackend, HttpBackendConfig, MockBackend, ScoreKind,
};
use crate::eval::{
    category_stats, evaluate_one_vs_all, evaluate_one_vs_benign, evaluate_overall_binary,
    load_dataset, load_dataset_with_adapter, metrics_report, render_text_table, AdapterManifest,
    AnnotatedExample, EvalConfig, MetricsReport, ModelUnderTest, ScoredPrediction,
};
use crate::gateway::{Gateway, GatewayError, ModerationMode, ModerationRequest, ModerationTarget};
use crate::policy::{builtin_policy, load_policy, Policy, PolicyRegistry};
use crate::prompt::{Message, Target};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_BACKEND: u8 = 2;
pub const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "chatguard",
    version,
    about = "Policy-driven input/output safety gateway for conversational AI"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Moderate a single conversation from a file or stdin.
    Moderate(ModerateArgs),
    /// Run the HTTP moderation service.
    Serve(ServeArgs),
    /// Evaluate a classifier backend against an annotated dataset.
    Eval(EvalArgs),
    /// Emit augmented instruction-format training records.
    Augment(AugmentArgs),
    /// Policy management.
    Policy(PolicyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Mock,
    Http,
}

#[derive(Args)]
struct BackendArgs {
    /// Classifier backend to drive.
    #[arg(long, value_enum, default_value = "mock")]
    backend: BackendKind,
    /// Base URL of an OpenAI-completions-compatible endpoint.
    #[arg(long, env = "GUARD_BACKEND_URL")]
    backend_url: Option<String>,
    /// Bearer token for the endpoint.
    #[arg(long, env = "GUARD_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    /// Model name to request from multi-model servers.
    #[arg(long)]
    model: Option<String>,
}

impl BackendArgs {
    fn build(&self) -> Result<Arc<dyn CompletionBackend>, CliError> {
        match self.backend {
            BackendKind::Mock => Ok(Arc::new(MockBackend::new())),
            BackendKind::Http => {
                let url = self.backend_url.clone().ok_or_else(|| {
                    CliError::validation(
                        "--backend http requires --backend-url (or GUARD_BACKEND_URL)",
                    )
                })?;
                let mut config = HttpBackendConfig::new(url);
                if self.api_key.is_some() {
                    config.api_key = self.api_key.clone();
                }
                config.model = self.model.clone();
                let backend = HttpBackend::new(config).map_err(CliError::backend)?;
                Ok(Arc::new(backend))
            }
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Prompt,
    Response,
    Both,
}

#[derive(Args)]
struct ModerateArgs {
    /// Conversation JSON ({"messages": [...]}); '-' reads stdin.
    #[arg(long, default_value = "-")]
    input: String,
    /// Policy file to moderate against (default: built-in taxonomy).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "prompt")]
    target: TargetArg,
    /// binary, or per-category verdicts via one subset task per category.
    #[arg(long, value_enum, default_value = "binary")]
    mode: ModeArg,
    /// Echo the raw classifier output in the verdict document.
    #[arg(long)]
    audit: bool,
    /// Write the verdict document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Binary,
    PerCategory,
}

#[derive(Args)]
struct ServeArgs {
    /// Bind address.
    #[arg(long, env = "GUARD_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    /// Additional policy files to register next to the built-in taxonomy.
    #[arg(long)]
    policy: Vec<PathBuf>,
    /// Maximum concurrent backend calls.
    #[arg(long, default_value_t = 16)]
    concurrency: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMethod {
    /// Overall binary classification over the full policy.
    Overall,
    /// Per-category subset tasks; other categories' positives count negative.
    OneVsAll,
    /// Per-category with other categories' positives dropped (score
    /// fixtures required).
    OneVsBenign,
}

#[derive(Args)]
struct EvalArgs {
    /// Dataset file (JSONL).
    #[arg(long)]
    dataset: PathBuf,
    /// Adapter manifest for foreign dataset formats.
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Policy file (default: built-in taxonomy).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "prompt")]
    target: EvalTargetArg,
    #[arg(long, value_enum, default_value = "overall")]
    mode: EvalMethod,
    /// Per-category score fixture (JSONL) for a fixed-taxonomy API.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// How to read the score fixture.
    #[arg(long, value_enum, default_value = "probability")]
    scores_kind: ScoresKindArg,
    /// Decision threshold for P/R/F1.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Maximum concurrent backend calls.
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also print a plain-text results table.
    #[arg(long)]
    table: bool,
    /// Print dataset category statistics before evaluating.
    #[arg(long)]
    stats: bool,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTargetArg {
    Prompt,
    Response,
}

impl EvalTargetArg {
    fn target(self) -> Target {
        match self {
            EvalTargetArg::Prompt => Target::Prompt,
            EvalTargetArg::Response => Target::Response,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScoresKindArg {
    Probability,
    Severity,
}

impl ScoresKindArg {
    fn kind(self) -> ScoreKind {
        match self {
            ScoresKindArg::Probability => ScoreKind::Probability,
            ScoresKindArg::Severity => ScoreKind::Severity,
        }
    }
}

#[derive(Args)]
struct AugmentArgs {
    /// Dataset file (JSONL).
    #[arg(long)]
    dataset: PathBuf,
    /// Policy file (default: built-in taxonomy).
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Targets to emit records for (default: both).
    #[arg(long, value_enum, value_delimiter = ',')]
    targets: Vec<EvalTargetArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability of dropping unviolated categories.
    #[arg(long, default_value_t = 0.5)]
    p_drop_unviolated: f64,
    /// Probability of adding a flipped-to-safe view of an unsafe record.
    #[arg(long, default_value_t = 0.15)]
    p_flip_safe: f64,
    /// Probability of shuffling category indices.
    #[arg(long, default_value_t = 1.0)]
    p_shuffle: f64,
    /// Replace the original record with the flipped view instead of adding it.
    #[arg(long)]
    replace_flipped: bool,
    /// Output training file (JSONL); '-' writes stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct PolicyArgs {
    #[command(subcommand)]
    action: PolicyAction,
}

#[derive(Subcommand)]
enum PolicyAction {
    /// Validate a policy file, naming the first violation found.
    Validate { file: PathBuf },
}

/// An error carrying its process exit code.
#[derive(Debug)]
struct CliError {
    message: String,
    exit: u8,
}

impl CliError {
    fn validation(message: impl std::fmt::Display) -> Self {
        Self {
            message: message.to_string(),
            exit: EXIT_VALIDATION,
        }
    }

    fn backend(message: impl std::fmt::Display) -> Self {
        Self {
            message: message.to_string(),
            exit: EXIT_BACKEND,
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match &e {
            GatewayError::Invalid { .. } => CliError::validation(e),
            _ => CliError::backend(e),
        }
    }
}

impl From<crate::eval::EvalError> for CliError {
    fn from(e: crate::eval::EvalError) -> Self {
        CliError::validation(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::validation(e)
    }
}

fn load_policy_arg(path: &Option<PathBuf>) -> Result<Policy, CliError> {
    match path {
        None => Ok(builtin_policy().clone()),
        Some(path) => {
            let contents = std::fs::read_to_string(path).map_err(|e| {
                CliError::validation(format!("cannot read policy {}: {e}", path.display()))
            })?;
            load_policy(&contents)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
        }
    }
}

fn load_dataset_arg(
    dataset: &PathBuf,
    adapter: &Option<PathBuf>,
) -> Result<Vec<AnnotatedExample>, CliError> {
    match adapter {
        None => Ok(load_dataset(dataset)?),
        Some(manifest_path) => {
            let manifest = AdapterManifest::from_path(manifest_path)?;
            let file = std::fs::File::open(dataset)?;
            Ok(load_dataset_with_adapter(
                std::io::BufReader::new(file),
                &manifest,
            )?)
        }
    }
}

fn write_output(out: &Option<PathBuf>, contents: &str) -> Result<(), CliError> {
    match out {
        None => {
            println!("{contents}");
            Ok(())
        }
        Some(path) => {
            std::fs::write(path, contents)?;
            Ok(())
        }
    }
}

async fn run_moderate(args: ModerateArgs) -> Result<(), CliError> {
    let raw = if args.input == "-" {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        std::fs::read_to_string(&args.input)?
    };
    #[derive(serde::Deserialize)]
    struct ConversationDoc {
        messages: Vec<Message>,
    }
    let doc: ConversationDoc = serde_json::from_str(&raw)
        .map_err(|e| CliError::validation(format!("conversation document: {e}")))?;

    let registry = PolicyRegistry::with_builtin();
    let policy = load_policy_arg(&args.policy)?;
    let policy_id = registry.register(policy).id().to_string();

    let gateway = Gateway::new(args.backend.build()?, registry);
    let request = ModerationRequest {
        messages: doc.messages,
        policy_id,
        target: match args.target {
            TargetArg::Prompt => ModerationTarget::Prompt,
            TargetArg::Response => ModerationTarget::Response,
            TargetArg::Both => ModerationTarget::Both,
        },
        mode: match args.mode {
            ModeArg::Binary => ModerationMode::Binary,
            ModeArg::PerCategory => ModerationMode::PerCategory1Vall,
        },
    };
    let response = gateway.moderate(&request, args.audit).await?;
    let rendered = serde_json::to_string_pretty(&response)
        .expect("moderation response serializes");
    write_output(&args.out, &rendered)
}

async fn run_serve(args: ServeArgs) -> Result<(), CliError> {
    let bind: SocketAddr = args
        .bind
        .parse()
        .map_err(|e| CliError::validation(format!("invalid bind address {:?}: {e}", args.bind)))?;
    let registry = PolicyRegistry::with_builtin();
    for path in &args.policy {
        let policy = load_policy_arg(&Some(path.clone()))?;
        registry.register(policy);
    }
    let gateway = Arc::new(
        Gateway::new(args.backend.build()?, registry).with_max_in_flight(args.concurrency),
    );
    crate::gateway::serve(gateway, bind)
        .await
        .map_err(|e| CliError::validation(format!("server failed to start: {e}")))
}

#[derive(Serialize)]
struct EvalDocument {
    method: &'static str,
    target: Target,
    threshold: f64,
    backend: String,
    /// Present for severity-kind score backends: the AP-maximizing
    /// binarization threshold chosen by the sweep.
    #[serde(skip_serializing_if = "Option::is_none")]
    severity_threshold: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    overall: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_category: Option<BTreeMap<usize, MetricsReport>>,
}

/// Overall evaluation of an integer-severity API: sweep the binarization
/// threshold for the highest AP, then report metrics over the binarized
/// scores.
fn severity_overall(
    adapter: &FixtureScoreAdapter,
    dataset: &[AnnotatedExample],
    config: &EvalConfig,
) -> Result<(MetricsReport, u8), CliError> {
    let mut pairs = Vec::with_capacity(dataset.len());
    for example in dataset {
        let annotation = example.annotation(config.target).ok_or_else(|| {
            CliError::validation(format!(
                "example {} lacks {} annotations",
                example.id(),
                config.target
            ))
        })?;
        let scores = adapter
            .scores_for(example.id())
            .map_err(|e| CliError::validation(e.to_string()))?;
        pairs.push((scores, annotation.label == crate::parse::Label::Unsafe));
    }
    let sweep = binarize_severity_sweep(&pairs).map_err(|e| CliError::validation(e.to_string()))?;
    let mut preds: Vec<ScoredPrediction> = dataset
        .iter()
        .zip(&sweep.binary_scores)
        .zip(&pairs)
        .map(|((example, &score), (_, gold))| {
            ScoredPrediction::scored(example.id(), score, *gold).expect("binary score is 0 or 1")
        })
        .collect();
    preds.sort_by(|a, b| a.example_id().cmp(b.example_id()));
    let report = metrics_report(&preds, config.threshold)?;
    Ok((report, sweep.threshold))
}

async fn run_eval(args: EvalArgs) -> Result<(), CliError> {
    let policy = load_policy_arg(&args.policy)?;
    let dataset = load_dataset_arg(&args.dataset, &args.adapter)?;
    if args.stats {
        eprintln!("{}", category_stats(&dataset, &policy).to_text_table());
    }
    let config = EvalConfig {
        target: args.target.target(),
        threshold: args.threshold,
        concurrency: args.concurrency,
    };

    let adapter = match &args.scores {
        Some(path) => Some(
            FixtureScoreAdapter::from_jsonl_path("score-fixture", args.scores_kind.kind(), path)
                .map_err(|e| CliError::validation(e.to_string()))?,
        ),
        None => None,
    };

    let document = match args.mode {
        EvalMethod::Overall => {
            let mut severity_threshold = None;
            let report = match &adapter {
                Some(adapter) if matches!(args.scores_kind, ScoresKindArg::Severity) => {
                    let (report, threshold) = severity_overall(adapter, &dataset, &config)?;
                    eprintln!("severity sweep chose binarization threshold {threshold}");
                    severity_threshold = Some(threshold);
                    report
                }
                Some(adapter) => {
                    evaluate_overall_binary(
                        &ModelUnderTest::PerCategory(adapter),
                        &dataset,
                        &policy,
                        &config,
                    )
                    .await?
                }
                None => {
                    let backend = args.backend.build()?;
                    evaluate_overall_binary(
                        &ModelUnderTest::Completion(backend.as_ref()),
                        &dataset,
                        &policy,
                        &config,
                    )
                    .await?
                }
            };
            eprintln!(
                "overall: AUPRC {:.4}  P {:.4}  R {:.4}  F1 {:.4}  (n={}, positives={}, malformed={})",
                report.auprc,
                report.precision,
                report.recall,
                report.f1,
                report.n_examples,
                report.n_positives,
                report.n_malformed
            );
            if args.table {
                eprintln!(
                    "{}",
                    render_text_table(&[("Overall".to_string(), &report)])
                );
            }
            EvalDocument {
                method: "overall",
                target: config.target,
                threshold: config.threshold,
                backend: backend_label(&args, adapter.is_some()),
                severity_threshold,
                overall: Some(report),
                per_category: None,
            }
        }
        EvalMethod::OneVsAll => {
            if adapter.is_some() {
                return Err(CliError::validation(
                    "--mode one-vs-all drives a promptable backend; fixed-taxonomy score \
                     fixtures go through --mode one-vs-benign",
                ));
            }
            let backend = args.backend.build()?;
            let reports =
                evaluate_one_vs_all(backend.as_ref(), &dataset, &policy, &config).await?;
            print_per_category(&policy, &reports, args.table);
            EvalDocument {
                method: "one-vs-all",
                target: config.target,
                threshold: config.threshold,
                backend: backend_label(&args, false),
                severity_threshold: None,
                overall: None,
                per_category: Some(reports),
            }
        }
        EvalMethod::OneVsBenign => {
            let Some(adapter) = &adapter else {
                return Err(CliError::validation(
                    "--mode one-vs-benign requires --scores with a per-category score fixture",
                ));
            };
            if matches!(args.scores_kind, ScoresKindArg::Severity) {
                return Err(CliError::validation(
                    "--mode one-vs-benign needs probability scores; severity fixtures are \
                     binarized via the overall sweep instead",
                ));
            }
            let reports = evaluate_one_vs_benign(adapter, &dataset, &policy, &config, None)?;
            print_per_category(&policy, &reports, args.table);
            EvalDocument {
                method: "one-vs-benign",
                target: config.target,
                threshold: config.threshold,
                backend: backend_label(&args, true),
                severity_threshold: None,
                overall: None,
                per_category: Some(reports),
            }
        }
    };

    let rendered =
        serde_json::to_string_pretty(&document).expect("evaluation report serializes");
    match &args.out {
        Some(path) => std::fs::write(path, rendered)?,
        None => println!("{rendered}"),
    }
    Ok(())
}

fn backend_label(args: &EvalArgs, scored_by_fixture: bool) -> String {
    if scored_by_fixture {
        "score-fixture".to_string()
    } else {
        match args.backend.backend {
            BackendKind::Mock => "mock".to_string(),
            BackendKind::Http => "http".to_string(),
        }
    }
}

fn print_per_category(
    policy: &Policy,
    reports: &BTreeMap<usize, MetricsReport>,
    table: bool,
) {
    for (k, report) in reports {
        let name = policy.get(*k).map(|c| c.name.as_str()).unwrap_or("?");
        eprintln!(
            "category {k} ({name}): AUPRC {:.4}  P {:.4}  R {:.4}  F1 {:.4}  (n={}, positives={})",
            report.auprc, report.precision, report.recall, report.f1,
            report.n_examples, report.n_positives
        );
    }
    if table {
        let rows: Vec<(String, &MetricsReport)> = reports
            .iter()
            .map(|(k, report)| {
                let name = policy.get(*k).map(|c| c.name.clone()).unwrap_or_default();
                (format!("{k} {name}"), report)
            })
            .collect();
        eprintln!("{}", render_text_table(&rows));
    }
}

fn run_augment(args: AugmentArgs) -> Result<(), CliError> {
    let policy = load_policy_arg(&args.policy)?;
    let dataset = load_dataset_arg(&args.dataset, &None)?;
    let targets = if args.targets.is_empty() {
        vec![Target::Prompt, Target::Response]
    } else {
        args.targets.iter().map(|t| t.target()).collect()
    };
    let config = AugmentConfig {
        targets,
        p_drop_unviolated: args.p_drop_unviolated,
        p_flip_safe: args.p_flip_safe,
        p_shuffle: args.p_shuffle,
        seed: args.seed,
        flip_replaces: args.replace_flipped,
    };
    let run = emit_training_records(&dataset, &policy, &config)
        .map_err(|e| CliError::validation(e.to_string()))?;
    if args.out == "-" {
        let stdout = std::io::stdout();
        write_training_records(&run.records, stdout.lock())?;
    } else {
        let file = std::fs::File::create(&args.out)?;
        write_training_records(&run.records, std::io::BufWriter::new(file))?;
    }
    eprintln!(
        "emitted {} records ({} units skipped, {} flips skipped)",
        run.records.len(),
        run.skipped_units,
        run.skipped_flips
    );
    Ok(())
}

fn run_policy(args: PolicyArgs) -> Result<(), CliError> {
    match args.action {
        PolicyAction::Validate { file } => {
            let contents = std::fs::read_to_string(&file).map_err(|e| {
                CliError::validation(format!("cannot read {}: {e}", file.display()))
            })?;
            let policy = load_policy(&contents)
                .map_err(|e| CliError::validation(format!("{}: {e}", file.display())))?;
            println!(
                "ok: policy '{}' with {} categories (code letter '{}')",
                policy.id(),
                policy.len(),
                policy.code_letter()
            );
            Ok(())
        }
    }
}

async fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Moderate(args) => run_moderate(args).await,
        Command::Serve(args) => run_serve(args).await,
        Command::Eval(args) => run_eval(args).await,
        Command::Augment(args) => run_augment(args),
        Command::Policy(args) => run_policy(args),
    }
}

/// Entry point used by the `chatguard` binary.
pub fn main() -> ExitCode {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .try_init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(runtime) => runtime,
        Err(e) => {
            eprintln!("error: cannot start async runtime: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.exit)
        }
    }
}
