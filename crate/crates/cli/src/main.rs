use std::io::{BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use bimassist_core::datastore::{generate_fixture, FixtureSpec};
use bimassist_core::eval::{self, report, EvalConfig, LabelMap, Scenario};
use bimassist_core::llm::{
    open_replay, Backend, ConcurrencyLimit, RecordingBackend, RemoteBackend, RemoteConfig, ScriptedBackend,
};
use bimassist_core::pipeline::{run_query_observed, Answer, PipelineConfig};
use bimassist_core::prompt::{PromptComposition, DEFAULT_BUDGET};
use bimassist_core::Store;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bimassist", version, about = "Natural-language retrieval over building-object data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic store document.
    GenFixture(GenFixtureArgs),
    /// Score the interpretation stages on an annotated dataset.
    Eval(EvalArgs),
    /// Score each of the four prompt compositions.
    Ablate(AblateArgs),
    /// Answer queries from stdin or --query.
    Chat(ChatArgs),
    /// Run the HTTP and WebSocket service.
    Serve(ServeArgs),
    /// Answer queries from a recorded cassette, fully offline.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct GenFixtureArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 6)]
    categories: usize,
    #[arg(long, default_value_t = 600)]
    records: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Remote,
    Script,
    Replay,
}

#[derive(Args, Debug)]
struct BackendArgs {
    /// Defaults to replay with --cassette, script with --script, else remote.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Cassette file for the replay backend.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// JSON array of replies for the script backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Save every exchange to this cassette file.
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long, env = "BIMASSIST_ENDPOINT", default_value = "https://api.openai.com/v1/chat/completions")]
    endpoint: String,
    /// Falls back to OPENAI_API_KEY.
    #[arg(long, env = "BIMASSIST_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    #[arg(long, env = "BIMASSIST_MODEL", default_value = "gpt-3.5-turbo")]
    model: String,
    #[arg(long, env = "BIMASSIST_TIMEOUT_SECS", default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long, env = "BIMASSIST_RETRIES", default_value_t = 3)]
    retries: u32,
    /// Generations in flight at once against the remote backend.
    #[arg(long, env = "BIMASSIST_MAX_IN_FLIGHT", default_value_t = 4)]
    max_in_flight: usize,
}

#[derive(Args, Debug)]
struct PromptArgs {
    /// Comma list of SYS, DB, TASK, FEW.
    #[arg(long, default_value = "SYS,DB,TASK,FEW", value_parser = parse_composition)]
    composition: PromptComposition,
    /// Prompt budget in characters.
    #[arg(long, env = "BIMASSIST_BUDGET", default_value_t = DEFAULT_BUDGET)]
    budget: usize,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    #[arg(long, env = "BIMASSIST_STORE")]
    store: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    label_map: PathBuf,
    #[arg(long, default_value = "few", value_parser = parse_scenario)]
    scenario: Scenario,
    #[arg(long, default_value_t = 0.02)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Score every applicable row, not only rows the previous task got right.
    #[arg(long)]
    no_gating: bool,
    /// Leave few-shot rows out of the test set.
    #[arg(long)]
    exclude_exemplars: bool,
    /// Rows evaluated at once.
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Print JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// Also write the confusion matrix as CSV.
    #[arg(long)]
    confusion_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long, env = "BIMASSIST_BUDGET", default_value_t = DEFAULT_BUDGET)]
    budget: usize,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
struct ChatArgs {
    #[arg(long, env = "BIMASSIST_STORE")]
    store: PathBuf,
    /// Answer this query and exit instead of reading stdin.
    #[arg(long)]
    query: Option<String>,
    /// Print stage summaries to stderr.
    #[arg(long)]
    trace: bool,
    /// Print each answer as JSON.
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, env = "BIMASSIST_STORE")]
    store: PathBuf,
    #[arg(long, env = "BIMASSIST_BIND", default_value = "127.0.0.1:8080")]
    bind: String,
    /// Directory served at the root path.
    #[arg(long, env = "BIMASSIST_STATIC_DIR")]
    static_dir: Option<PathBuf>,
    /// Keep prompt texts in stage details.
    #[arg(long)]
    include_prompts: bool,
    #[command(flatten)]
    prompt: PromptArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    #[arg(long, env = "BIMASSIST_STORE")]
    store: PathBuf,
    #[arg(long)]
    cassette: PathBuf,
    /// Answer this query and exit instead of reading stdin.
    #[arg(long)]
    query: Option<String>,
    /// List the cassette entries and exit.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    prompt: PromptArgs,
}

fn parse_composition(s: &str) -> Result<PromptComposition, String> {
    s.parse()
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse()
}

fn usage_error(kind: ErrorKind, message: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, message).exit()
}

type Recorder = Arc<RecordingBackend<Arc<dyn Backend>>>;

/// The resolved backend and, when recording, the recorder to save.
struct ResolvedBackend {
    backend: Arc<dyn Backend>,
    recorder: Option<(Recorder, PathBuf)>,
}

impl ResolvedBackend {
    fn save(&self) -> Result<()> {
        if let Some((rec, path)) = &self.recorder {
            rec.save(path).with_context(|| format!("writing cassette {}", path.display()))?;
            log::info!("recorded {} exchanges to {}", rec.cassette().len(), path.display());
        }
        Ok(())
    }
}

fn resolve_backend(args: &BackendArgs) -> Result<ResolvedBackend> {
    let kind = args.backend.unwrap_or(match (&args.cassette, &args.script) {
        (Some(_), None) => BackendKind::Replay,
        (None, Some(_)) => BackendKind::Script,
        (Some(_), Some(_)) => usage_error(ErrorKind::ArgumentConflict, "--cassette and --script are exclusive"),
        (None, None) => BackendKind::Remote,
    });
    let base: Arc<dyn Backend> = match kind {
        BackendKind::Replay => {
            if args.script.is_some() {
                usage_error(ErrorKind::ArgumentConflict, "--script does not apply to the replay backend");
            }
            let path = args.cassette.as_ref().unwrap_or_else(|| {
                usage_error(ErrorKind::MissingRequiredArgument, "--backend replay needs --cassette")
            });
            Arc::new(open_replay(path).with_context(|| format!("opening cassette {}", path.display()))?)
        }
        BackendKind::Script => {
            if args.cassette.is_some() {
                usage_error(ErrorKind::ArgumentConflict, "--cassette does not apply to the script backend");
            }
            let path = args
                .script
                .as_ref()
                .unwrap_or_else(|| usage_error(ErrorKind::MissingRequiredArgument, "--backend script needs --script"));
            Arc::new(ScriptedBackend::load(path).with_context(|| format!("loading script {}", path.display()))?)
        }
        BackendKind::Remote => {
            if args.cassette.is_some() || args.script.is_some() {
                usage_error(ErrorKind::ArgumentConflict, "--cassette and --script do not apply to the remote backend");
            }
            let config = RemoteConfig {
                endpoint: args.endpoint.clone(),
                api_key: args.api_key.clone().or_else(|| std::env::var("OPENAI_API_KEY").ok()),
                model: args.model.clone(),
                timeout: Duration::from_secs(args.timeout_secs),
                max_retries: args.retries,
                max_in_flight: args.max_in_flight,
                ..RemoteConfig::default()
            };
            if config.api_key.is_none() {
                log::warn!("no API key set (BIMASSIST_API_KEY or OPENAI_API_KEY)");
            }
            Arc::new(ConcurrencyLimit::new(RemoteBackend::new(config)?, args.max_in_flight))
        }
    };
    Ok(match &args.record {
        Some(path) => {
            let rec = Arc::new(RecordingBackend::new(base));
            ResolvedBackend { backend: rec.clone(), recorder: Some((rec, path.clone())) }
        }
        None => ResolvedBackend { backend: base, recorder: None },
    })
}

fn load_store(path: &Path) -> Result<Store> {
    Store::load_path(path).with_context(|| format!("loading store {}", path.display()))
}

fn pipeline_config(prompt: &PromptArgs) -> PipelineConfig {
    PipelineConfig { composition: prompt.composition.clone(), budget: prompt.budget, ..PipelineConfig::default() }
}

fn eval_config(data: &DatasetArgs, composition: PromptComposition, budget: usize) -> Result<EvalConfig> {
    if !(data.fraction > 0.0 && data.fraction <= 1.0) {
        usage_error(ErrorKind::ValueValidation, format!("--fraction must be in (0, 1], got {}", data.fraction));
    }
    Ok(EvalConfig {
        scenario: data.scenario,
        fewshot_fraction: data.fraction,
        seed: data.seed,
        composition,
        gated: !data.no_gating,
        exclude_exemplars: data.exclude_exemplars,
        concurrency: data.concurrency,
        budget,
        ..EvalConfig::default()
    })
}

fn load_eval_inputs(data: &DatasetArgs) -> Result<(Store, Vec<eval::LabeledQuery>, LabelMap)> {
    let store = load_store(&data.store)?;
    let dataset =
        eval::load_dataset(&data.dataset).with_context(|| format!("loading dataset {}", data.dataset.display()))?;
    let labels =
        LabelMap::load(&data.label_map).with_context(|| format!("loading label map {}", data.label_map.display()))?;
    Ok((store, dataset, labels))
}

fn describe(config: &EvalConfig) -> String {
    format!(
        "scenario {} | fraction {} | seed {} | {} | composition {}",
        config.scenario,
        config.fewshot_fraction,
        config.seed,
        if config.gated { "gated" } else { "ungated" },
        config.composition.label()
    )
}

async fn cmd_eval(args: EvalArgs) -> Result<()> {
    let backend = resolve_backend(&args.backend)?;
    let (store, dataset, labels) = load_eval_inputs(&args.data)?;
    let config = eval_config(&args.data, args.prompt.composition.clone(), args.prompt.budget)?;
    let run = eval::run_eval_detailed(&store, &*backend.backend, &dataset, &labels, &config).await?;
    backend.save()?;
    let failed = run.outcomes.iter().filter(|o| !o.errors.is_empty()).count();
    if failed > 0 {
        log::warn!("{failed} row(s) had stage failures");
    }
    if let Some(path) = &args.confusion_csv {
        std::fs::write(path, report::confusion_csv(&run.metrics))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if args.data.json {
        emit(&format!("{}\n", report::metrics_json(&run.metrics)))
    } else {
        emit(&format!(
            "{}\n\n{}\n{}",
            describe(&config),
            report::metrics_table(&run.metrics),
            report::per_category_table(&run.metrics)
        ))
    }
}

async fn cmd_ablate(args: AblateArgs) -> Result<()> {
    let backend = resolve_backend(&args.backend)?;
    let (store, dataset, labels) = load_eval_inputs(&args.data)?;
    let config = eval_config(&args.data, PromptComposition::full(), args.budget)?;
    let rows = eval::ablation_matrix(&store, &*backend.backend, &dataset, &labels, &config).await?;
    backend.save()?;
    if args.data.json {
        emit(&format!("{}\n", report::ablation_json(&rows)))
    } else {
        emit(&report::ablation_table(&rows))
    }
}

/// Write to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn print_answer(answer: &Answer, json: bool) -> Result<()> {
    if json {
        return emit(&format!("{}\n", serde_json::to_string(answer)?));
    }
    let mut text = format!("{}\n", answer.text);
    if !answer.retrieved_ids.is_empty() {
        text += &format!("ids: {}\n", answer.retrieved_ids.join(", "));
    }
    emit(&text)
}

async fn chat_loop(
    store: &Store,
    backend: &dyn Backend,
    config: &PipelineConfig,
    query: Option<String>,
    trace: bool,
    json: bool,
) -> Result<bool> {
    let mut all_ok = true;
    let mut ask = async |text: &str| -> Result<()> {
        let answer = run_query_observed(store, backend, config, text, &mut |stage| {
            if trace {
                eprintln!("[{}] {}", stage.name, stage.summary_line());
            }
        })
        .await;
        all_ok &= answer.ok;
        print_answer(&answer, json)
    };
    if let Some(q) = query {
        ask(&q).await?;
        return Ok(all_ok);
    }
    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    loop {
        if interactive {
            eprint!("> ");
        }
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        ask(text).await?;
    }
    Ok(all_ok)
}

async fn cmd_chat(args: ChatArgs) -> Result<()> {
    let backend = resolve_backend(&args.backend)?;
    let store = load_store(&args.store)?;
    let config = pipeline_config(&args.prompt);
    let ok = chat_loop(&store, &*backend.backend, &config, args.query.clone(), args.trace, args.json).await;
    backend.save()?;
    if !ok? && args.query.is_some() {
        anyhow::bail!("the query could not be answered");
    }
    Ok(())
}

async fn cmd_replay(args: ReplayArgs) -> Result<()> {
    if args.list {
        let cassette = bimassist_core::llm::Cassette::load(&args.cassette)?;
        let mut text = String::new();
        for e in &cassette.entries {
            let kind = e.meta.get("prompt_kind").and_then(|k| k.as_str()).unwrap_or("?");
            text += &format!("{}  {:<9}  {}\n", &e.prompt_hash[..12], kind, e.response_text.replace('\n', " "));
        }
        return emit(&text);
    }
    let store = load_store(&args.store)?;
    let backend = open_replay(&args.cassette).with_context(|| format!("opening {}", args.cassette.display()))?;
    let config = pipeline_config(&args.prompt);
    let ok = chat_loop(&store, &backend, &config, args.query.clone(), args.trace, args.json).await?;
    if !ok && args.query.is_some() {
        anyhow::bail!("the query could not be answered");
    }
    Ok(())
}

async fn cmd_serve(args: ServeArgs) -> Result<()> {
    if args.backend.record.is_some() {
        usage_error(ErrorKind::ArgumentConflict, "--record is not supported by serve");
    }
    let backend = resolve_backend(&args.backend)?;
    let store = load_store(&args.store)?;
    let mut state = bimassist_service::AppState::new(store, backend.backend, pipeline_config(&args.prompt));
    state.include_prompts = args.include_prompts;
    let listener = bimassist_service::bind(&args.bind).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    bimassist_service::serve(listener, state, args.static_dir).await?;
    Ok(())
}

fn cmd_gen_fixture(args: GenFixtureArgs) -> Result<()> {
    let doc = generate_fixture(FixtureSpec { categories: args.categories, records: args.records, seed: args.seed });
    let text = serde_json::to_string_pretty(&doc)? + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => emit(&text)?,
    }
    Ok(())
}

async fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenFixture(a) => cmd_gen_fixture(a),
        Command::Eval(a) => cmd_eval(a).await,
        Command::Ablate(a) => cmd_ablate(a).await,
        Command::Chat(a) => cmd_chat(a).await,
        Command::Serve(a) => cmd_serve(a).await,
        Command::Replay(a) => cmd_replay(a).await,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
