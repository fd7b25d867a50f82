//! Teacher-forced next-action evaluation and its metrics.

mod mcnemar;
mod metrics;
mod report;

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

pub use mcnemar::{exact_two_sided, from_discordant, mcnemar, McNemar, McNemarMethod, EXACT_BELOW};
pub use metrics::{
    action_distribution, final_steps, macro_accuracy, micro_accuracy, outcome_f1,
    per_session_accuracy, predicts_purchase, ActionDistribution, Confusion, OutcomeScore,
};
pub use report::{compare, dataset_digest, summary_table, Comparison, EvalReport, ReportMeta, StepKey};

use crate::agents::{Agent, AgentError, Prediction, StepInput};
use crate::session::{Action, Session};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("nothing to score: no session has a step after the first")]
    Empty,
    #[error("paired inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reports are not over the same steps: {0}")]
    Misaligned(String),
    #[error("session {session_id}, step {step}: {source}")]
    Agent {
        session_id: String,
        step: usize,
        source: AgentError,
    },
    #[error("checkpoint {path}: {source}")]
    Checkpoint {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    DidntTerminate,
    DidntClick,
    DidntSearch,
    SearchedWrongKeyword,
    ClickedWrongButton,
    Illegal,
    None,
}

impl ErrorType {
    /// The five types that describe a wrong but legal action.
    pub const TYPED: [ErrorType; 5] = [
        ErrorType::DidntTerminate,
        ErrorType::DidntClick,
        ErrorType::DidntSearch,
        ErrorType::SearchedWrongKeyword,
        ErrorType::ClickedWrongButton,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorType::DidntTerminate => "didn't terminate",
            ErrorType::DidntClick => "didn't click",
            ErrorType::DidntSearch => "didn't search",
            ErrorType::SearchedWrongKeyword => "searched wrong keyword",
            ErrorType::ClickedWrongButton => "clicked wrong button",
            ErrorType::Illegal => "illegal",
            ErrorType::None => "match",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub session_id: String,
    pub step_index: usize,
    pub gold: Action,
    pub predicted: Prediction,
    #[serde(rename = "match")]
    pub is_match: bool,
    pub error_type: ErrorType,
}

fn normalize(text: &str) -> String {
    text.nfc().collect::<String>().trim().to_owned()
}

/// Same kind, same target and, for searches, the same text after NFC
/// normalization and trimming.
pub fn exact_match(pred: &Action, gold: &Action) -> bool {
    match (pred, gold) {
        (Action::Terminate, Action::Terminate) => true,
        (Action::Click { name: a }, Action::Click { name: b }) => a == b,
        (
            Action::TypeAndSubmit { name: a, text: ta },
            Action::TypeAndSubmit { name: b, text: tb },
        ) => a == b && normalize(ta) == normalize(tb),
        _ => false,
    }
}

pub fn classify_error(pred: &Prediction, gold: &Action) -> ErrorType {
    let Some(pred) = pred.action() else {
        return ErrorType::Illegal;
    };
    if exact_match(pred, gold) {
        return ErrorType::None;
    }
    match (gold, pred) {
        (Action::TypeAndSubmit { .. }, Action::TypeAndSubmit { .. }) => ErrorType::SearchedWrongKeyword,
        (Action::Click { .. }, Action::Click { .. }) => ErrorType::ClickedWrongButton,
        (Action::Terminate, _) => ErrorType::DidntTerminate,
        (Action::Click { .. }, _) => ErrorType::DidntClick,
        (Action::TypeAndSubmit { .. }, _) => ErrorType::DidntSearch,
    }
}

pub fn score_step(session_id: &str, step_index: usize, gold: &Action, predicted: Prediction) -> StepResult {
    let error_type = classify_error(&predicted, gold);
    StepResult {
        session_id: session_id.to_owned(),
        step_index,
        gold: gold.clone(),
        predicted,
        is_match: error_type == ErrorType::None,
        error_type,
    }
}

/// Scores steps 1..N of `session`, each given the recorded history before
/// it. The first step is never scored.
pub fn evaluate_session(agent: &dyn Agent, session: &Session) -> Result<Vec<StepResult>, EvalError> {
    (1..session.steps.len())
        .map(|t| {
            let p = agent
                .generate_step(&StepInput::at(session, t))
                .map_err(|source| EvalError::Agent {
                    session_id: session.session_id.clone(),
                    step: t,
                    source,
                })?;
            Ok(score_step(&session.session_id, t, &session.steps[t].action, p))
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct EvalConfig {
    /// Worker threads; 0 means one per CPU.
    pub workers: usize,
    /// Finished sessions are appended here and skipped on rerun.
    pub checkpoint: Option<PathBuf>,
    /// Seed of the agent, if any, recorded in the report.
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointLine {
    session_id: String,
    results: Vec<StepResult>,
}

fn load_checkpoint(path: &PathBuf) -> Result<BTreeMap<String, Vec<StepResult>>, EvalError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(source) => {
            return Err(EvalError::Checkpoint {
                path: path.clone(),
                source,
            })
        }
    };
    // A line cut short by an interrupted run is ignored.
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str::<CheckpointLine>(l).ok())
        .map(|c| (c.session_id, c.results))
        .collect())
}

pub struct EvalRun {
    pub report: EvalReport,
    /// Every scored step, sorted by (session id, step index).
    pub results: Vec<StepResult>,
}

pub fn run_evaluation(
    agent: &dyn Agent,
    sessions: &[Session],
    config: &EvalConfig,
) -> Result<EvalRun, EvalError> {
    let done = match &config.checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => BTreeMap::new(),
    };
    let sink = match &config.checkpoint {
        Some(p) => {
            let io = |source| EvalError::Checkpoint {
                path: p.clone(),
                source,
            };
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(io)?;
            }
            let mut f = OpenOptions::new().create(true).append(true).open(p).map_err(io)?;
            // Start on a fresh line if the previous run was cut mid-line.
            if fs::read(p).map_err(io)?.last().is_some_and(|b| *b != b'\n') {
                f.write_all(b"\n").map_err(io)?;
            }
            Some(Mutex::new(f))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .expect("thread pool");
    let per_session: Vec<Vec<StepResult>> = pool.install(|| {
        sessions
            .par_iter()
            .map(|s| {
                if let Some(r) = done.get(&s.session_id) {
                    return Ok(r.clone());
                }
                let r = evaluate_session(agent, s)?;
                if let (Some(sink), Some(path)) = (&sink, &config.checkpoint) {
                    let line = serde_json::to_string(&CheckpointLine {
                        session_id: s.session_id.clone(),
                        results: r.clone(),
                    })
                    .expect("results serialize");
                    let mut f = sink.lock().expect("checkpoint lock");
                    writeln!(f, "{line}").map_err(|source| EvalError::Checkpoint {
                        path: path.clone(),
                        source,
                    })?;
                }
                Ok(r)
            })
            .collect::<Result<_, EvalError>>()
    })?;

    let mut results: Vec<StepResult> = per_session.into_iter().flatten().collect();
    results.sort_by(|a, b| {
        (a.session_id.as_str(), a.step_index).cmp(&(b.session_id.as_str(), b.step_index))
    });
    let report = EvalReport::build(agent.id(), sessions, &results, config.seed)?;
    Ok(EvalRun { report, results })
}

/// Session ids that appear more than once.
pub fn duplicate_ids(sessions: &[Session]) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut dups: Vec<String> = sessions
        .iter()
        .filter(|s| !seen.insert(s.session_id.as_str()))
        .map(|s| s.session_id.clone())
        .collect();
    dups.sort();
    dups.dedup();
    dups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentResponse, IllegalCause, IllegalOutput, ReplayAgent, TerminateAgent};
    use crate::html::{simplify, SimplifiedContext};

    fn legal(a: Action) -> Prediction {
        Prediction::Legal(AgentResponse {
            rationale: String::new(),
            action: a,
        })
    }

    fn session(id: &str, buy: bool, k: usize) -> Session {
        let mut s = Session::new(id, "u");
        let ctx = simplify(
            r#"<div name="search_bar"><input name="search_input"></div><div name="product_page"><button name="buy_now">Buy</button></div><a name="p">P</a>"#,
        );
        s.push(ctx.clone(), Action::type_and_submit("search_bar.search_input", "tee"));
        for _ in 2..k {
            s.push(ctx.clone(), Action::click("p"));
        }
        s.push(
            ctx,
            if buy {
                Action::click("product_page.buy_now")
            } else {
                Action::Terminate
            },
        );
        s
    }

    #[test]
    fn exact_match_rules() {
        assert!(exact_match(&Action::Terminate, &Action::Terminate));
        let g = Action::type_and_submit("search_bar.search_input", "disney gift card");
        assert!(exact_match(&g, &g.clone()));
        assert!(exact_match(
            &Action::type_and_submit("search_bar.search_input", " disney gift card\n"),
            &g
        ));
        assert!(!exact_match(
            &Action::type_and_submit("search_bar.search_input", "tee connector"),
            &Action::type_and_submit("search_bar.search_input", "tee conector"),
        ));
        // Composed and decomposed forms of the same text match.
        assert!(exact_match(
            &Action::type_and_submit("q", "caf\u{e9}"),
            &Action::type_and_submit("q", "cafe\u{301}"),
        ));
        assert!(!exact_match(&Action::click("A"), &Action::click("a")));
    }

    #[test]
    fn error_types() {
        let buy = Action::click("product_page.buy_now");
        assert_eq!(classify_error(&legal(buy.clone()), &Action::Terminate), ErrorType::DidntTerminate);
        assert_eq!(
            classify_error(
                &legal(Action::type_and_submit("search_bar.search_input", "disney gifts")),
                &Action::type_and_submit("search_bar.search_input", "disney gift card"),
            ),
            ErrorType::SearchedWrongKeyword
        );
        assert_eq!(
            classify_error(&legal(Action::click("results.a.view_product")), &Action::click("results.b.view_product")),
            ErrorType::ClickedWrongButton
        );
        assert_eq!(classify_error(&legal(Action::Terminate), &buy), ErrorType::DidntClick);
        assert_eq!(
            classify_error(&legal(Action::Terminate), &Action::type_and_submit("q", "x")),
            ErrorType::DidntSearch
        );
        let ill = Prediction::Illegal(IllegalOutput {
            raw: String::new(),
            cause: IllegalCause::NotJson,
        });
        assert_eq!(classify_error(&ill, &buy), ErrorType::Illegal);
        assert_eq!(classify_error(&legal(buy.clone()), &buy), ErrorType::None);
    }

    #[test]
    fn step_counts() {
        let agent = ReplayAgent::new(&[session("a", true, 4), session("b", false, 1)]);
        assert_eq!(evaluate_session(&agent, &session("a", true, 4)).unwrap().len(), 3);
        let one = {
            let mut s = Session::new("b", "u");
            s.push(SimplifiedContext::default(), Action::Terminate);
            s
        };
        assert!(evaluate_session(&agent, &one).unwrap().is_empty());
    }

    #[test]
    fn replay_is_perfect_and_terminate_is_not() {
        let data: Vec<Session> = (0..10).map(|i| session(&format!("s{i}"), i % 3 == 0, 3 + i % 4)).collect();
        let run = run_evaluation(&ReplayAgent::new(&data), &data, &EvalConfig::default()).unwrap();
        assert_eq!(run.report.macro_accuracy, 1.0);
        assert_eq!(run.report.outcome_f1, 1.0);
        assert!(run.report.error_histogram.values().all(|v| *v == 0));

        let run = run_evaluation(&TerminateAgent, &data, &EvalConfig::default()).unwrap();
        assert_eq!(run.report.outcome_f1, 0.0);
        assert!(run.report.outcome_f1_degenerate);
        assert!(run.report.error_histogram[&ErrorType::DidntClick] > 0);
    }

    #[test]
    fn checkpoint_resume() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("ck.jsonl");
        let data: Vec<Session> = (0..6).map(|i| session(&format!("s{i}"), i % 2 == 0, 4)).collect();
        let cfg = EvalConfig {
            workers: 2,
            checkpoint: Some(ck.clone()),
            seed: None,
        };
        let first = run_evaluation(&ReplayAgent::new(&data), &data, &cfg).unwrap();
        // Drop a session from the checkpoint and truncate the last line.
        let text = fs::read_to_string(&ck).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(0);
        let last = lines.pop().unwrap();
        let cut = format!("{}\n{}", lines.join("\n"), &last[..last.len() / 2]);
        fs::write(&ck, cut).unwrap();
        let second = run_evaluation(&ReplayAgent::new(&data), &data, &cfg).unwrap();
        assert_eq!(first.results, second.results);
        assert_eq!(first.report, second.report);
        assert_eq!(load_checkpoint(&ck).unwrap().len(), 6);
    }

    #[test]
    fn reports_independent_of_parallelism() {
        let data: Vec<Session> = (0..30).map(|i| session(&format!("s{i}"), i % 2 == 0, 2 + i % 5)).collect();
        let agent = crate::agents::RandomAgent::new(9);
        let a = run_evaluation(&agent, &data, &EvalConfig { workers: 1, ..Default::default() }).unwrap();
        let b = run_evaluation(&agent, &data, &EvalConfig { workers: 7, ..Default::default() }).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }
}
