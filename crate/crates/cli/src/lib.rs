//! Command-line and HTTP interface over the memory engine. Both go through
//! the same [`run_query`] path, so a query issued over either surface
//! produces byte-identical JSON.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use chronomem::engine::IngestReport;
use chronomem::eval::{self, EvalReport};
use chronomem::model::{ChatTurn, Query, Speaker};
use chronomem::retrieve::{AblationFlags, RetrievalResult};
use chronomem::time::TimePoint;
use chronomem::{Engine, EngineConfig, MemoryError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SNAPSHOT: i32 = 3;

#[derive(Parser)]
#[command(name = "chronomem", about = "Temporal-semantic memory engine", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum IngestFormat {
    /// One `ChatTurn` JSON object per line.
    Jsonl,
    /// Session array: `{session_id, date, messages: [{role, content}]}`.
    Longmemeval,
    /// LoCoMo export: `{conversation: {session_N: [...], session_N_date_time}}`.
    Locomo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AblationArg {
    DisableTemporal,
    DisableDurative,
    NaiveRag,
}

fn flags_from(args: &[AblationArg]) -> AblationFlags {
    AblationFlags {
        disable_temporal: args.contains(&AblationArg::DisableTemporal),
        disable_durative: args.contains(&AblationArg::DisableDurative),
        naive_rag: args.contains(&AblationArg::NaiveRag),
    }
}

#[derive(Args)]
struct StoreArgs {
    /// Snapshot directory. Created on first write.
    #[arg(long)]
    store: PathBuf,
    /// Engine config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest turns from a file and save the snapshot.
    Ingest {
        #[command(flatten)]
        store: StoreArgs,
        /// Input file.
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = IngestFormat::Jsonl)]
        format: IngestFormat,
    },
    /// Ask a question against the stored memory.
    Query {
        #[command(flatten)]
        store: StoreArgs,
        question: String,
        /// Query issue time (YYYY-MM-DD or ISO timestamp).
        #[arg(long)]
        now: String,
        /// Print the full retrieval result as JSON.
        #[arg(long)]
        json: bool,
        #[arg(long, value_enum, value_delimiter = ',')]
        ablate: Vec<AblationArg>,
    },
    /// Run sleep-time consolidation and save.
    Consolidate {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long)]
        now: String,
        /// Rebuild dirty slices even if no trigger fired.
        #[arg(long)]
        force: bool,
    },
    /// Print a snapshot summary.
    Snapshot {
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Run the built-in deterministic eval suites.
    Eval {
        /// Which suite to run.
        #[arg(long, default_value = "synthetic")]
        suite: String,
        #[arg(long, default_value_t = 20)]
        size: usize,
        #[arg(long)]
        json: bool,
        #[arg(long, value_enum, value_delimiter = ',')]
        ablate: Vec<AblationArg>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        store: StoreArgs,
        #[arg(long, default_value = "127.0.0.1:7450")]
        addr: String,
    },
}

pub fn run() {
    let cli = Cli::parse();
    std::process::exit(dispatch(cli.command));
}

fn exit_code(err: &MemoryError) -> i32 {
    match err {
        MemoryError::CorruptSnapshot(_) | MemoryError::MigrationRequired { .. } => EXIT_SNAPSHOT,
        MemoryError::Config(_) | MemoryError::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

fn fail(err: MemoryError) -> i32 {
    eprintln!("error: {err}");
    exit_code(&err)
}

fn load_config(path: &Option<PathBuf>) -> Result<EngineConfig, MemoryError> {
    match path {
        Some(p) => EngineConfig::from_file(p),
        None => Ok(EngineConfig::default()),
    }
}

fn open_engine(store: &StoreArgs) -> Result<Engine, MemoryError> {
    let config = load_config(&store.config)?;
    if store.store.join("manifest.json").exists() {
        Engine::load(config, &store.store)
    } else {
        Engine::new(config)
    }
}

/// The one query path shared by the CLI and the HTTP service.
pub fn run_query(
    engine: &Engine,
    text: &str,
    issued_at: TimePoint,
    ablation: Option<AblationFlags>,
) -> Result<RetrievalResult, MemoryError> {
    engine.query(&Query { text: text.to_string(), issued_at }, ablation)
}

fn dispatch(command: Command) -> i32 {
    match command {
        Command::Ingest { store, file, format } => {
            let turns = match read_turns(&file, format) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let mut engine = match open_engine(&store) {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            match engine.ingest_turns(turns).and_then(|report| {
                engine.save(&store.store)?;
                Ok(report)
            }) {
                Ok(report) => {
                    println!("{}", serde_json::to_string_pretty(&report).unwrap());
                    EXIT_OK
                }
                Err(e) => fail(e),
            }
        }
        Command::Query { store, question, now, json, ablate } => {
            let issued_at = match TimePoint::parse(&now) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let engine = match open_engine(&store) {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            match run_query(&engine, &question, issued_at, Some(flags_from(&ablate))) {
                Ok(result) => {
                    if json {
                        println!("{}", serde_json::to_string(&result).unwrap());
                    } else {
                        println!("{}", result.answer.as_deref().unwrap_or("(no answer)"));
                    }
                    EXIT_OK
                }
                Err(e) => fail(e),
            }
        }
        Command::Consolidate { store, now, force } => {
            let now = match TimePoint::parse(&now) {
                Ok(t) => t,
                Err(e) => return fail(e),
            };
            let mut engine = match open_engine(&store) {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            match engine.consolidate(now, force).and_then(|rebuilt| {
                engine.save(&store.store)?;
                Ok(rebuilt)
            }) {
                Ok(rebuilt) => {
                    println!("{{\"rebuilt\": {}}}", rebuilt.len());
                    EXIT_OK
                }
                Err(e) => fail(e),
            }
        }
        Command::Snapshot { store } => match open_engine(&store) {
            Ok(engine) => {
                println!("{}", serde_json::to_string_pretty(&snapshot_summary(&engine)).unwrap());
                EXIT_OK
            }
            Err(e) => fail(e),
        },
        Command::Eval { suite, size, json, ablate, config } => {
            let config = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let cases = match suite.as_str() {
                "synthetic" => eval::generate_synthetic_suite(config.provider.embedding_dim, size),
                "temporal" => eval::generate_temporal_suite(config.provider.embedding_dim, size),
                other => {
                    eprintln!("error: unknown suite {other:?} (expected synthetic or temporal)");
                    return EXIT_USAGE;
                }
            };
            match eval::run_eval(&cases, &config, flags_from(&ablate)) {
                Ok(report) => {
                    print_eval(&report, json);
                    EXIT_OK
                }
                Err(e) => fail(e),
            }
        }
        Command::Serve { store, addr } => {
            let engine = match open_engine(&store) {
                Ok(e) => e,
                Err(e) => return fail(e),
            };
            let addr: SocketAddr = match addr.parse() {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: bad address: {e}");
                    return EXIT_USAGE;
                }
            };
            match serve(engine, store.store.clone(), addr) {
                Ok(()) => EXIT_OK,
                Err(e) => fail(e),
            }
        }
    }
}

fn print_eval(report: &EvalReport, json: bool) {
    if json {
        println!("{}", serde_json::to_string_pretty(report).unwrap());
        return;
    }
    println!(
        "cases: {}  judged: {}  errored: {}  accuracy: {:.2}%",
        report.total,
        report.judged,
        report.errored,
        report.overall_accuracy * 100.0
    );
    for (category, score) in &report.per_category {
        println!("  {category}: {}/{} ({:.2}%)", score.correct, score.total, score.accuracy() * 100.0);
    }
}

#[derive(Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub turns: usize,
    pub entities: usize,
    pub facts: usize,
    pub open_facts: usize,
    pub durative: usize,
    pub dirty_slices: usize,
}

fn snapshot_summary(engine: &Engine) -> SnapshotSummary {
    let store = &engine.store;
    SnapshotSummary {
        turns: store.turns().len(),
        entities: store.tkg.entities().len(),
        facts: store.tkg.facts().len(),
        open_facts: store.tkg.facts().values().filter(|f| f.is_open()).count(),
        durative: store.durative().len(),
        dirty_slices: store.dirty_slices().len(),
    }
}

// ---------------------------------------------------------------------------
// Ingest formats

fn read_turns(path: &Path, format: IngestFormat) -> Result<Vec<ChatTurn>, MemoryError> {
    let raw = std::fs::read_to_string(path)?;
    match format {
        IngestFormat::Jsonl => raw
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str::<ChatTurn>(l).map_err(MemoryError::from))
            .collect(),
        IngestFormat::Longmemeval => convert_longmemeval(&raw),
        IngestFormat::Locomo => convert_locomo(&raw),
    }
}

#[derive(Deserialize)]
struct LmeSession {
    session_id: String,
    date: String,
    messages: Vec<LmeMessage>,
}

#[derive(Deserialize)]
struct LmeMessage {
    role: String,
    content: String,
}

fn convert_longmemeval(raw: &str) -> Result<Vec<ChatTurn>, MemoryError> {
    let sessions: Vec<LmeSession> = serde_json::from_str(raw)?;
    let mut turns = Vec::new();
    for s in sessions {
        let date = TimePoint::parse(&s.date)?;
        for (i, m) in s.messages.iter().enumerate() {
            turns.push(ChatTurn {
                turn_id: format!("{}-{i:04}", s.session_id),
                session_id: s.session_id.clone(),
                dialogue_time: date,
                speaker: if m.role == "assistant" { Speaker::Assistant } else { Speaker::User },
                text: m.content.clone(),
            });
        }
    }
    Ok(turns)
}

#[derive(Deserialize)]
struct LocomoMessage {
    speaker: String,
    text: String,
    #[serde(default)]
    dia_id: Option<String>,
}

fn convert_locomo(raw: &str) -> Result<Vec<ChatTurn>, MemoryError> {
    let value: serde_json::Value = serde_json::from_str(raw)?;
    let conv = value
        .get("conversation")
        .and_then(|c| c.as_object())
        .ok_or_else(|| MemoryError::InvalidArgument("missing conversation object".into()))?;
    let mut turns = Vec::new();
    let mut session_keys: Vec<&String> = conv
        .keys()
        .filter(|k| k.starts_with("session_") && !k.ends_with("_date_time"))
        .collect();
    session_keys.sort_by_key(|k| {
        k.trim_start_matches("session_").parse::<u64>().unwrap_or(u64::MAX)
    });
    for key in session_keys {
        let date = match conv.get(&format!("{key}_date_time")).and_then(|d| d.as_str()) {
            Some(s) => parse_locomo_datetime(s)?,
            None => {
                return Err(MemoryError::InvalidArgument(format!("missing {key}_date_time")));
            }
        };
        let messages: Vec<LocomoMessage> = serde_json::from_value(conv[key].clone())?;
        for (i, m) in messages.iter().enumerate() {
            let id = m.dia_id.clone().unwrap_or_else(|| format!("{key}-{i:04}"));
            turns.push(ChatTurn {
                turn_id: id,
                session_id: key.clone(),
                dialogue_time: date,
                // Both sides are humans in this format; keep the speaker
                // name in the text and treat every message as user input.
                speaker: Speaker::User,
                text: format!("{}: {}", m.speaker, m.text),
            });
        }
    }
    Ok(turns)
}

/// Parses timestamps like `"1:56 pm on 8 May, 2023"`; the date part is what
/// the engine keeps.
fn parse_locomo_datetime(s: &str) -> Result<TimePoint, MemoryError> {
    let date_part = s.split(" on ").last().unwrap_or(s).trim();
    chrono::NaiveDate::parse_from_str(date_part, "%d %B, %Y")
        .or_else(|_| chrono::NaiveDate::parse_from_str(date_part, "%B %d, %Y"))
        .map(TimePoint::new)
        .map_err(|e| MemoryError::InvalidArgument(format!("unparseable date {date_part:?}: {e}")))
}

// ---------------------------------------------------------------------------
// HTTP service

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<RwLock<Engine>>,
    pub store_path: Arc<PathBuf>,
}

#[derive(Serialize, Deserialize)]
pub struct QueryBody {
    pub text: String,
    pub issued_at: TimePoint,
    #[serde(default)]
    pub ablation: Option<AblationFlags>,
}

#[derive(Serialize, Deserialize)]
pub struct TurnsBody {
    pub turns: Vec<ChatTurn>,
}

#[derive(Serialize, Deserialize)]
pub struct ConsolidateBody {
    pub now: TimePoint,
    #[serde(default)]
    pub force: bool,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

type HttpResult<T> = Result<Json<T>, (StatusCode, Json<ErrorBody>)>;

fn http_err<T>(err: MemoryError) -> HttpResult<T> {
    let status = match exit_code(&err) {
        EXIT_USAGE => StatusCode::BAD_REQUEST,
        EXIT_SNAPSHOT => StatusCode::CONFLICT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    Err((status, Json(ErrorBody { error: err.to_string() })))
}

pub fn build_router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/turns", post(post_turns))
        .route("/v1/query", post(post_query))
        .route("/v1/consolidate", post(post_consolidate))
        .route("/v1/snapshot", get(get_snapshot))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn post_turns(State(state): State<AppState>, Json(body): Json<TurnsBody>) -> HttpResult<IngestReport> {
    let mut engine = state.engine.write().unwrap();
    match engine.ingest_turns(body.turns).and_then(|report| {
        engine.save(&state.store_path)?;
        Ok(report)
    }) {
        Ok(report) => Ok(Json(report)),
        Err(e) => http_err(e),
    }
}

async fn post_query(State(state): State<AppState>, Json(body): Json<QueryBody>) -> HttpResult<RetrievalResult> {
    let engine = state.engine.read().unwrap();
    match run_query(&engine, &body.text, body.issued_at, body.ablation) {
        Ok(result) => Ok(Json(result)),
        Err(e) => http_err(e),
    }
}

async fn post_consolidate(
    State(state): State<AppState>,
    Json(body): Json<ConsolidateBody>,
) -> HttpResult<serde_json::Value> {
    let mut engine = state.engine.write().unwrap();
    match engine.consolidate(body.now, body.force).and_then(|rebuilt| {
        engine.save(&state.store_path)?;
        Ok(rebuilt)
    }) {
        Ok(rebuilt) => Ok(Json(serde_json::json!({"rebuilt": rebuilt.len()}))),
        Err(e) => http_err(e),
    }
}

async fn get_snapshot(State(state): State<AppState>) -> Json<SnapshotSummary> {
    let engine = state.engine.read().unwrap();
    Json(snapshot_summary(&engine))
}

fn serve(engine: Engine, store_path: PathBuf, addr: SocketAddr) -> Result<(), MemoryError> {
    let state = AppState { engine: Arc::new(RwLock::new(engine)), store_path: Arc::new(store_path) };
    let router = build_router(state);
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| MemoryError::Protocol(format!("runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| MemoryError::Protocol(format!("bind {addr}: {e}")))?;
        eprintln!("listening on {addr}");
        axum::serve(listener, router)
            .await
            .map_err(|e| MemoryError::Protocol(format!("serve: {e}")))
    })
}

/// Starts the HTTP service on an ephemeral port in a background thread and
/// returns the bound address. Used by tests.
pub fn spawn_server(engine: Engine, store_path: PathBuf) -> std::io::Result<SocketAddr> {
    let state = AppState { engine: Arc::new(RwLock::new(engine)), store_path: Arc::new(store_path) };
    let router = build_router(state);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
            tx.send(listener.local_addr().expect("addr")).expect("send addr");
            axum::serve(listener, router).await.expect("serve");
        });
    });
    Ok(rx.recv().expect("server address"))
}
