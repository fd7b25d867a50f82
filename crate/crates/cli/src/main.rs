use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shopbench::agents::{export_training_examples, missing_reasoning};
use shopbench::client::{CompletionClient, TemplateClient, API_KEY_ENV};
use shopbench::eval::{compare, summary_table};
use shopbench::jsonl;
use shopbench::pipeline::{
    build_agent, derive_seed, make_client, read_report, run_pipeline, stage_evaluate,
    stage_gen_catalog, stage_gen_sessions, stage_synthesize, AgentKind, Paths, RunConfig, Stage,
    StageStatus, SynthSource,
};
use shopbench::session::read_sessions;

/// Simulated shopping sessions, reasoning synthesis and next-action
/// evaluation.
#[derive(Parser, Debug)]
#[command(name = "shopbench", version, after_help = endpoint_help())]
struct Cli {
    /// JSON run configuration. Flags override it; it overrides defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

fn endpoint_help() -> String {
    format!("Endpoint credentials are read from the {API_KEY_ENV} environment variable.")
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic product catalog.
    GenCatalog {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_products: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate shopper sessions against a catalog.
    GenSessions(GenSessions),
    /// Attach a synthesized rationale to every step.
    SynthesizeReasoning(Synthesize),
    /// Score an agent's next-action predictions.
    Evaluate(Evaluate),
    /// Summarize one report, or compare two with McNemar tests.
    Report {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: Option<PathBuf>,
        /// Run McNemar tests between --a and --b.
        #[arg(long, requires = "b")]
        mcnemar: bool,
        /// Also write the comparison as JSON.
        #[arg(long, requires = "b")]
        out: Option<PathBuf>,
    },
    /// Write loss-masked training sequences.
    ExportTraining {
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage whose output is missing.
    Pipeline(Pipeline),
}

#[derive(Args, Debug)]
struct GenSessions {
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_sessions: Option<usize>,
    #[arg(long)]
    mean_searches: Option<f64>,
    #[arg(long)]
    purchase_rate: Option<f64>,
    #[arg(long)]
    typo_prob: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct EndpointFlags {
    /// URL of a chat-completions route.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Requests in flight at once.
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args, Debug)]
struct Synthesize {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointFlags,
    /// Use offline templated rationales instead of an endpoint.
    #[arg(long, conflicts_with = "endpoint")]
    stub: bool,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Evaluate {
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Reasoned sessions to evaluate on.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Output directory for report.json and steps.jsonl.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    endpoint: EndpointFlags,
    /// Ask endpoint agents for the rationale and the action in two calls.
    #[arg(long)]
    two_phase: bool,
}

#[derive(Args, Debug)]
struct Pipeline {
    /// Put every artifact under this directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    agent: Option<AgentKind>,
    #[arg(long)]
    n_products: Option<usize>,
    #[arg(long)]
    n_sessions: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Synthesize reasoning through the endpoint instead of the offline stub.
    #[arg(long)]
    synthesize_with_endpoint: bool,
    #[command(flatten)]
    endpoint: EndpointFlags,
    /// Rerun stages even when their outputs exist.
    #[arg(long)]
    force: bool,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_endpoint(cfg: &mut RunConfig, f: EndpointFlags) {
    if f.endpoint.is_some() {
        cfg.endpoint.url = f.endpoint;
    }
    set(&mut cfg.endpoint.model, f.model);
    set(&mut cfg.endpoint.concurrency, f.concurrency);
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::from_file(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::GenCatalog { seed, n_products, out } => {
            set(&mut cfg.seed, seed);
            set(&mut cfg.n_products, n_products);
            set(&mut cfg.paths.catalog, out);
            let c = stage_gen_catalog(derive_seed(cfg.seed, "catalog"), cfg.n_products, &cfg.paths.catalog)?;
            println!("wrote {} products to {}", c.len(), cfg.paths.catalog.display());
        }
        Cmd::GenSessions(g) => {
            set(&mut cfg.seed, g.seed);
            set(&mut cfg.paths.catalog, g.catalog);
            set(&mut cfg.paths.sessions, g.out);
            set(&mut cfg.oracle.n_sessions, g.n_sessions);
            set(&mut cfg.oracle.mean_searches_per_session, g.mean_searches);
            set(&mut cfg.oracle.purchase_rate, g.purchase_rate);
            set(&mut cfg.oracle.typo_prob, g.typo_prob);
            set(&mut cfg.workers, g.workers);
            let s = stage_gen_sessions(&cfg.paths.catalog, &cfg.oracle_config(), &cfg.paths.sessions, cfg.workers)?;
            let st = shopbench::oracle::DatasetStats::of(&s);
            println!(
                "wrote {} sessions to {} ({:.3} searches/session, purchase rate {:.4}, search:filter {:.2})",
                st.sessions,
                cfg.paths.sessions.display(),
                st.mean_searches(),
                st.purchase_rate(),
                st.search_to_filter()
            );
        }
        Cmd::SynthesizeReasoning(s) => {
            set(&mut cfg.paths.sessions, s.input);
            set(&mut cfg.paths.reasoned, s.out);
            if s.cache_dir.is_some() {
                cfg.paths.cache = s.cache_dir;
            }
            if s.endpoint.endpoint.is_some() {
                cfg.synthesizer = SynthSource::Endpoint;
            }
            if s.stub {
                cfg.synthesizer = SynthSource::Stub;
            }
            apply_endpoint(&mut cfg, s.endpoint);
            let client: Arc<dyn CompletionClient> = match cfg.synthesizer {
                SynthSource::Stub => Arc::new(TemplateClient::new()),
                SynthSource::Endpoint => make_client(&cfg.endpoint, Stage::SynthesizeReasoning)?,
            };
            let out = stage_synthesize(
                &cfg.paths.sessions,
                &cfg.paths.reasoned,
                client,
                cfg.paths.cache.as_deref(),
                cfg.endpoint.concurrency,
            )?;
            println!("wrote {} reasoned sessions to {}", out.len(), cfg.paths.reasoned.display());
        }
        Cmd::Evaluate(e) => {
            set(&mut cfg.agent, e.agent);
            set(&mut cfg.paths.reasoned, e.dataset);
            set(&mut cfg.paths.reports, e.out);
            set(&mut cfg.seed, e.seed);
            set(&mut cfg.workers, e.workers);
            if e.two_phase {
                cfg.endpoint.agent.two_phase = true;
            }
            apply_endpoint(&mut cfg, e.endpoint);
            let path = &cfg.paths.reasoned;
            if !path.exists() {
                bail!("dataset {} does not exist (set --dataset or paths.reasoned)", path.display());
            }
            let dataset = read_sessions(path)?;
            let agent_seed = derive_seed(cfg.seed, "agent");
            let agent = build_agent(cfg.agent, &dataset, agent_seed, &cfg.endpoint)?;
            let workers = if cfg.agent == AgentKind::Endpoint {
                cfg.endpoint.concurrency
            } else {
                cfg.workers
            };
            let seed = (cfg.agent == AgentKind::Random).then_some(agent_seed);
            let report = stage_evaluate(agent.as_ref(), &dataset, &cfg.paths.reports, workers, seed)?;
            print!("{}", report.summary());
        }
        Cmd::Report { a, b, mcnemar, out } => {
            let ra = read_report(&a)?;
            match b {
                None => print!("{}", ra.summary()),
                Some(b) => {
                    let rb = read_report(&b)?;
                    print!("{}", summary_table(&[&ra, &rb]));
                    if mcnemar || out.is_some() {
                        let c = compare(&ra, &rb)?;
                        if mcnemar {
                            print!("\n{}", c.summary());
                        }
                        if let Some(out) = out {
                            jsonl::write_json(&out, &c)?;
                        }
                    }
                }
            }
        }
        Cmd::ExportTraining { input, out } => {
            set(&mut cfg.paths.reasoned, input);
            let path = &cfg.paths.reasoned;
            if !path.exists() {
                bail!("reasoned sessions {} do not exist (set --in or paths.reasoned)", path.display());
            }
            let sessions = read_sessions(path)?;
            let missing = missing_reasoning(&sessions);
            if !missing.is_empty() {
                let mut ids: Vec<&str> = missing.iter().map(|m| m.session_id.as_str()).collect();
                ids.dedup();
                bail!(
                    "{} steps lack reasoning, in sessions: {}\nrun synthesize-reasoning first",
                    missing.len(),
                    ids.join(", ")
                );
            }
            let examples = export_training_examples(&sessions)?;
            jsonl::write(&out, &examples)?;
            let (masked, trained) = examples
                .iter()
                .map(|e| e.char_counts())
                .fold((0, 0), |(m, t), (a, b)| (m + a, t + b));
            println!(
                "wrote {} examples to {}: {masked} masked context chars, {trained} trained chars",
                examples.len(),
                out.display()
            );
        }
        Cmd::Pipeline(p) => {
            if let Some(dir) = p.out_dir {
                cfg.paths = Paths::under(&dir);
            }
            set(&mut cfg.seed, p.seed);
            set(&mut cfg.agent, p.agent);
            set(&mut cfg.n_products, p.n_products);
            set(&mut cfg.oracle.n_sessions, p.n_sessions);
            set(&mut cfg.workers, p.workers);
            if p.synthesize_with_endpoint {
                cfg.synthesizer = SynthSource::Endpoint;
            }
            apply_endpoint(&mut cfg, p.endpoint);
            let log = run_pipeline(&cfg, p.force)?;
            for (stage, status) in log {
                let s = match status {
                    StageStatus::Ran => "done",
                    StageStatus::Skipped => "skipped (output exists)",
                };
                println!("{:<22}{s}", stage.name());
            }
            let summary = cfg.paths.reports.join(shopbench::pipeline::SUMMARY_FILE);
            let text = std::fs::read_to_string(&summary).with_context(|| format!("reading {}", summary.display()))?;
            print!("\n{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
