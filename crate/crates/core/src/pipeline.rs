//! End-to-end runs: catalog, sessions, reasoning, evaluation, report.
//!
//! Every stage writes its output atomically and is skipped when that output
//! already exists, so an interrupted run resumes where it stopped.
//!
//! All randomness derives from [`RunConfig::seed`]:
//! catalog seed = `derive_seed(seed, "catalog")`, oracle seed =
//! `derive_seed(seed, "sessions")`, random-agent seed =
//! `derive_seed(seed, "agent")`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{Agent, EndpointAgent, EndpointSettings, RandomAgent, ReplayAgent, TerminateAgent};
use crate::client::{CompletionClient, HttpChatClient, TemplateClient};
use crate::eval::{run_evaluation, EvalConfig, EvalReport};
use crate::jsonl::{self, JsonlError};
use crate::oracle::{generate_dataset, OracleConfig};
use crate::session::{read_sessions, write_sessions, Session};
use crate::shop::{gen_catalog, Catalog, Shop};
use crate::synth::{DatasetMeta, SynthCache, Synthesizer};

/// `seed` mixed with a stage label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Replay,
    Random,
    Terminate,
    Endpoint,
}

impl std::str::FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "replay" => Ok(AgentKind::Replay),
            "random" => Ok(AgentKind::Random),
            "terminate" => Ok(AgentKind::Terminate),
            "endpoint" => Ok(AgentKind::Endpoint),
            _ => Err(format!("unknown agent `{s}` (expected replay, random, terminate or endpoint)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SynthSource {
    /// Offline templated rationales.
    #[default]
    Stub,
    Endpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Full URL of the chat-completions route.
    pub url: Option<String>,
    pub model: String,
    #[serde(flatten)]
    pub agent: EndpointSettings,
    /// Requests in flight at once.
    pub concurrency: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: None,
            model: "default".into(),
            agent: EndpointSettings::default(),
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub catalog: PathBuf,
    pub sessions: PathBuf,
    pub reasoned: PathBuf,
    /// Directory for report.json, steps.jsonl and summary.txt.
    pub reports: PathBuf,
    /// Rationale cache directory; none keeps the cache in memory.
    pub cache: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths::under(Path::new("run"))
    }
}

impl Paths {
    pub fn under(dir: &Path) -> Self {
        Paths {
            catalog: dir.join("catalog.jsonl"),
            sessions: dir.join("sessions.jsonl"),
            reasoned: dir.join("reasoned.jsonl"),
            reports: dir.join("reports"),
            cache: Some(dir.join("cache")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub n_products: usize,
    /// Oracle parameters. Its `seed` field is ignored in favor of the
    /// derived one.
    pub oracle: OracleConfig,
    pub paths: Paths,
    pub synthesizer: SynthSource,
    pub agent: AgentKind,
    pub endpoint: EndpointConfig,
    /// Simulation and evaluation threads; 0 means one per CPU.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_products: 2000,
            oracle: OracleConfig::default(),
            paths: Paths::default(),
            synthesizer: SynthSource::Stub,
            agent: AgentKind::Replay,
            endpoint: EndpointConfig::default(),
            workers: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
}

impl RunConfig {
    /// Defaults overlaid with the JSON file at `path`.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig {
            seed: derive_seed(self.seed, "sessions"),
            ..self.oracle.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    GenCatalog,
    GenSessions,
    SynthesizeReasoning,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::GenCatalog,
        Stage::GenSessions,
        Stage::SynthesizeReasoning,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenCatalog => "gen-catalog",
            Stage::GenSessions => "gen-sessions",
            Stage::SynthesizeReasoning => "synthesize-reasoning",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage}: {message}\n  hint: {hint}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
    pub hint: String,
}

impl StageError {
    pub fn new(stage: Stage, message: impl ToString, hint: impl Into<String>) -> Self {
        StageError {
            stage: stage.name(),
            message: message.to_string(),
            hint: hint.into(),
        }
    }
}

fn require(stage: Stage, path: &Path, flag: &str) -> Result<(), StageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(StageError::new(
            stage,
            format!("input file {} does not exist", path.display()),
            format!("pass an existing file with {flag}, or run the stage that produces it"),
        ))
    }
}

fn io_err(stage: Stage, e: JsonlError) -> StageError {
    StageError::new(stage, e, "check that the path is writable and the file is not corrupt")
}

pub fn stage_gen_catalog(seed: u64, n_products: usize, out: &Path) -> Result<Catalog, StageError> {
    let catalog = gen_catalog(seed, n_products);
    catalog.write(out).map_err(|e| {
        StageError::new(Stage::GenCatalog, e, "check that the output path is writable")
    })?;
    Ok(catalog)
}

fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
        .install(f)
}

pub fn stage_gen_sessions(
    catalog: &Path,
    oracle: &OracleConfig,
    out: &Path,
    workers: usize,
) -> Result<Vec<Session>, StageError> {
    let st = Stage::GenSessions;
    require(st, catalog, "--catalog")?;
    let catalog = Catalog::read(catalog).map_err(|e| {
        StageError::new(st, e, "regenerate the catalog with gen-catalog")
    })?;
    let shop = Shop::new(Arc::new(catalog));
    let sessions = with_workers(workers, || generate_dataset(&shop, oracle))
        .map_err(|e| StageError::new(st, e, "fix the oracle parameters in the config file"))?;
    write_sessions(&sessions, out).map_err(|e| io_err(st, e))?;
    Ok(sessions)
}

pub fn make_client(endpoint: &EndpointConfig, stage: Stage) -> Result<Arc<dyn CompletionClient>, StageError> {
    let url = endpoint.url.as_ref().ok_or_else(|| {
        StageError::new(stage, "no endpoint URL configured", "pass --endpoint URL or set endpoint.url")
    })?;
    let c = HttpChatClient::new(url.clone(), endpoint.model.clone())
        .map_err(|e| StageError::new(stage, e, "check the endpoint URL"))?;
    Ok(Arc::new(c))
}

pub fn stage_synthesize(
    input: &Path,
    out: &Path,
    client: Arc<dyn CompletionClient>,
    cache: Option<&Path>,
    concurrency: usize,
) -> Result<Vec<Session>, StageError> {
    let st = Stage::SynthesizeReasoning;
    require(st, input, "--in")?;
    let sessions = read_sessions(input).map_err(|e| io_err(st, e))?;
    let cache = match cache {
        Some(d) => SynthCache::on_disk(d),
        None => SynthCache::in_memory(),
    };
    let syn = Synthesizer::new(client, cache);
    let reasoned = syn.synthesize_all(&sessions, concurrency).map_err(|e| {
        StageError::new(
            st,
            e,
            "rerun the same command; finished rationales are cached and will not be requested again",
        )
    })?;
    write_sessions(&reasoned, out).map_err(|e| io_err(st, e))?;
    DatasetMeta::new(syn.model(), reasoned.len())
        .write(out)
        .map_err(|e| io_err(st, e))?;
    Ok(reasoned)
}

pub fn build_agent(
    kind: AgentKind,
    dataset: &[Session],
    seed: u64,
    endpoint: &EndpointConfig,
) -> Result<Box<dyn Agent>, StageError> {
    Ok(match kind {
        AgentKind::Replay => Box::new(ReplayAgent::new(dataset)),
        AgentKind::Random => Box::new(RandomAgent::new(seed)),
        AgentKind::Terminate => Box::new(TerminateAgent),
        AgentKind::Endpoint => Box::new(EndpointAgent::new(
            make_client(endpoint, Stage::Evaluate)?,
            endpoint.agent.clone(),
        )),
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const SUMMARY_FILE: &str = "summary.txt";
const CHECKPOINT_FILE: &str = "checkpoint.jsonl";

/// Evaluates `agent` over the sessions in `dataset` and writes the report
/// and the per-step dump into `out_dir`.
pub fn stage_evaluate(
    agent: &dyn Agent,
    dataset: &[Session],
    out_dir: &Path,
    workers: usize,
    seed: Option<u64>,
) -> Result<EvalReport, StageError> {
    let st = Stage::Evaluate;
    let checkpoint = out_dir.join(CHECKPOINT_FILE);
    let cfg = EvalConfig {
        workers,
        checkpoint: Some(checkpoint.clone()),
        seed,
    };
    let run = run_evaluation(agent, dataset, &cfg).map_err(|e| {
        StageError::new(st, e, "rerun the same command; finished sessions are checkpointed")
    })?;
    jsonl::write(&out_dir.join(STEPS_FILE), &run.results).map_err(|e| io_err(st, e))?;
    jsonl::write_json(&out_dir.join(REPORT_FILE), &run.report).map_err(|e| io_err(st, e))?;
    let _ = fs::remove_file(checkpoint);
    Ok(run.report)
}

pub fn write_summary(report: &EvalReport, out_dir: &Path) -> Result<(), JsonlError> {
    let path = out_dir.join(SUMMARY_FILE);
    jsonl::write_atomic(&path, |w| {
        use std::io::Write;
        w.write_all(report.summary().as_bytes())
    })
}

pub fn read_report(path: &Path) -> Result<EvalReport, StageError> {
    let st = Stage::Report;
    require(st, path, "--a/--b")?;
    let text = fs::read_to_string(path).map_err(|e| StageError::new(st, e, "check file permissions"))?;
    serde_json::from_str(&text).map_err(|e| {
        StageError::new(st, format!("{}: {e}", path.display()), "pass a report.json written by evaluate")
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Skipped,
}

/// Runs every stage whose output is missing. With `force`, runs all.
pub fn run_pipeline(cfg: &RunConfig, force: bool) -> Result<Vec<(Stage, StageStatus)>, StageError> {
    let p = &cfg.paths;
    let mut log = Vec::new();
    let todo = |path: &Path| force || !path.exists();

    if todo(&p.catalog) {
        stage_gen_catalog(derive_seed(cfg.seed, "catalog"), cfg.n_products, &p.catalog)?;
        log.push((Stage::GenCatalog, StageStatus::Ran));
    } else {
        log.push((Stage::GenCatalog, StageStatus::Skipped));
    }

    if todo(&p.sessions) {
        stage_gen_sessions(&p.catalog, &cfg.oracle_config(), &p.sessions, cfg.workers)?;
        log.push((Stage::GenSessions, StageStatus::Ran));
    } else {
        log.push((Stage::GenSessions, StageStatus::Skipped));
    }

    if todo(&p.reasoned) {
        let client: Arc<dyn CompletionClient> = match cfg.synthesizer {
            SynthSource::Stub => Arc::new(TemplateClient::new()),
            SynthSource::Endpoint => make_client(&cfg.endpoint, Stage::SynthesizeReasoning)?,
        };
        stage_synthesize(
            &p.sessions,
            &p.reasoned,
            client,
            p.cache.as_deref(),
            cfg.endpoint.concurrency,
        )?;
        log.push((Stage::SynthesizeReasoning, StageStatus::Ran));
    } else {
        log.push((Stage::SynthesizeReasoning, StageStatus::Skipped));
    }

    let report_path = p.reports.join(REPORT_FILE);
    if todo(&report_path) {
        require(Stage::Evaluate, &p.reasoned, "--dataset")?;
        let dataset = read_sessions(&p.reasoned).map_err(|e| io_err(Stage::Evaluate, e))?;
        let agent_seed = derive_seed(cfg.seed, "agent");
        let agent = build_agent(cfg.agent, &dataset, agent_seed, &cfg.endpoint)?;
        let workers = match cfg.agent {
            AgentKind::Endpoint => cfg.endpoint.concurrency,
            _ => cfg.workers,
        };
        let seed = (cfg.agent == AgentKind::Random).then_some(agent_seed);
        stage_evaluate(agent.as_ref(), &dataset, &p.reports, workers, seed)?;
        log.push((Stage::Evaluate, StageStatus::Ran));
    } else {
        log.push((Stage::Evaluate, StageStatus::Skipped));
    }

    let summary_path = p.reports.join(SUMMARY_FILE);
    if todo(&summary_path) {
        let report = read_report(&report_path)?;
        write_summary(&report, &p.reports).map_err(|e| io_err(Stage::Report, e))?;
        log.push((Stage::Report, StageStatus::Ran));
    } else {
        log.push((Stage::Report, StageStatus::Skipped));
    }
    Ok(log)
}
