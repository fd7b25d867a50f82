use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    action_distribution, final_steps, macro_accuracy, mcnemar, micro_accuracy, outcome_f1,
    per_session_accuracy, ActionDistribution, Confusion, ErrorType, EvalError, McNemar, StepResult,
};
use crate::session::Session;

/// Hex SHA-256 of the sessions' JSON lines.
pub fn dataset_digest(sessions: &[Session]) -> String {
    let mut h = Sha256::new();
    for s in sessions {
        h.update(serde_json::to_vec(s).expect("sessions serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Conventions the numbers depend on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub positive_class: String,
    pub illegal_final_step: String,
    pub text_comparison: String,
    pub scored_steps: String,
    /// The caller asserts the agent was not tuned on this dataset.
    pub held_out: String,
}

impl Default for ReportMeta {
    fn default() -> Self {
        ReportMeta {
            positive_class: "purchase".into(),
            illegal_final_step: "counted as a non-purchase prediction".into(),
            text_comparison: "NFC-normalized, surrounding whitespace trimmed".into(),
            scored_steps: "every step after the first, with recorded history".into(),
            held_out: "assumed; not checked".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepKey {
    pub session_id: String,
    pub step_index: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent_id: String,
    pub dataset_digest: String,
    pub seed: Option<u64>,
    pub meta: ReportMeta,
    /// Sessions with at least one scored step.
    pub n_sessions: usize,
    pub n_steps: usize,
    pub macro_accuracy: f64,
    /// Pooled over steps; reported alongside, never used for ranking.
    pub micro_accuracy: f64,
    pub outcome_f1: f64,
    pub outcome_f1_degenerate: bool,
    pub outcome_confusion: Confusion,
    /// The five typed errors. Illegal outputs are counted separately.
    pub error_histogram: BTreeMap<ErrorType, usize>,
    pub illegal: usize,
    pub matches: usize,
    /// Categories of the predicted (legal) actions.
    pub action_distribution: ActionDistribution,
    pub gold_action_distribution: ActionDistribution,
    pub per_session_accuracy: BTreeMap<String, f64>,
    pub step_correct: Vec<StepKey>,
    pub outcome_correct: BTreeMap<String, bool>,
}

impl EvalReport {
    /// `results` must be sorted by (session id, step index).
    pub fn build(
        agent_id: String,
        sessions: &[Session],
        results: &[StepResult],
        seed: Option<u64>,
    ) -> Result<Self, EvalError> {
        let finals = final_steps(results);
        let outcome = outcome_f1(finals.values().map(|r| (&r.gold, &r.predicted)));
        let mut error_histogram: BTreeMap<ErrorType, usize> =
            ErrorType::TYPED.iter().map(|t| (*t, 0)).collect();
        let (mut illegal, mut matches) = (0, 0);
        for r in results {
            match r.error_type {
                ErrorType::Illegal => illegal += 1,
                ErrorType::None => matches += 1,
                t => *error_histogram.entry(t).or_default() += 1,
            }
        }
        Ok(EvalReport {
            agent_id,
            dataset_digest: dataset_digest(sessions),
            seed,
            meta: ReportMeta::default(),
            n_sessions: finals.len(),
            n_steps: results.len(),
            macro_accuracy: macro_accuracy(results)?,
            micro_accuracy: micro_accuracy(results)?,
            outcome_f1: outcome.f1,
            outcome_f1_degenerate: outcome.degenerate,
            outcome_confusion: outcome.confusion,
            error_histogram,
            illegal,
            matches,
            action_distribution: action_distribution(results.iter().filter_map(|r| r.predicted.action())),
            gold_action_distribution: action_distribution(results.iter().map(|r| &r.gold)),
            per_session_accuracy: per_session_accuracy(results),
            step_correct: results
                .iter()
                .map(|r| StepKey {
                    session_id: r.session_id.clone(),
                    step_index: r.step_index,
                    correct: r.is_match,
                })
                .collect(),
            outcome_correct: finals
                .iter()
                .map(|(k, r)| {
                    let hit = r.gold.is_buy_now() == super::predicts_purchase(&r.predicted);
                    (k.to_string(), hit)
                })
                .collect(),
        })
    }

    /// Aligned text table with the two metric groups, then error counts.
    pub fn summary(&self) -> String {
        summary_table(&[self])
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Next-action accuracy and session-outcome F1 for each report, one row
/// per agent.
pub fn summary_table(reports: &[&EvalReport]) -> String {
    let w = reports
        .iter()
        .map(|r| r.agent_id.len())
        .chain([5])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:w$}  {:>21}  {:>15}", "", "Generated Next Action", "Session Outcome");
    let _ = writeln!(out, "{:w$}  {:>21}  {:>15}", "Agent", "Accuracy (%)", "F1 (%)");
    for r in reports {
        let f1 = if r.outcome_f1_degenerate {
            format!("{}*", pct(r.outcome_f1))
        } else {
            pct(r.outcome_f1)
        };
        let _ = writeln!(out, "{:w$}  {:>21}  {:>15}", r.agent_id, pct(r.macro_accuracy), f1);
    }
    if reports.iter().any(|r| r.outcome_f1_degenerate) {
        let _ = writeln!(out, "* no predicted or actual purchases; F1 set to 0");
    }
    for r in reports {
        let _ = writeln!(
            out,
            "\n{}: {} sessions, {} scored steps, {} matches, {} illegal",
            r.agent_id, r.n_sessions, r.n_steps, r.matches, r.illegal
        );
        for (t, n) in &r.error_histogram {
            let _ = writeln!(out, "  {:<24}{n:>8}", t.label());
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub agent_a: String,
    pub agent_b: String,
    pub macro_accuracy: (f64, f64),
    pub outcome_f1: (f64, f64),
    /// Over scored steps.
    pub steps: McNemar,
    /// Over sessions' purchase predictions.
    pub outcomes: McNemar,
}

/// McNemar tests between two reports over the same dataset.
pub fn compare(a: &EvalReport, b: &EvalReport) -> Result<Comparison, EvalError> {
    if a.dataset_digest != b.dataset_digest {
        return Err(EvalError::Misaligned(format!(
            "dataset digests differ ({} vs {})",
            a.dataset_digest, b.dataset_digest
        )));
    }
    let keys = |r: &EvalReport| -> Vec<(String, usize)> {
        r.step_correct
            .iter()
            .map(|k| (k.session_id.clone(), k.step_index))
            .collect()
    };
    if keys(a) != keys(b) {
        return Err(EvalError::Misaligned("scored steps differ".into()));
    }
    if a.outcome_correct.keys().ne(b.outcome_correct.keys()) {
        return Err(EvalError::Misaligned("scored sessions differ".into()));
    }
    let sa: Vec<bool> = a.step_correct.iter().map(|k| k.correct).collect();
    let sb: Vec<bool> = b.step_correct.iter().map(|k| k.correct).collect();
    let oa: Vec<bool> = a.outcome_correct.values().copied().collect();
    let ob: Vec<bool> = b.outcome_correct.values().copied().collect();
    Ok(Comparison {
        agent_a: a.agent_id.clone(),
        agent_b: b.agent_id.clone(),
        macro_accuracy: (a.macro_accuracy, b.macro_accuracy),
        outcome_f1: (a.outcome_f1, b.outcome_f1),
        steps: mcnemar(&sa, &sb)?,
        outcomes: mcnemar(&oa, &ob)?,
    })
}

impl Comparison {
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "A = {}  (accuracy {}%, F1 {}%)",
            self.agent_a,
            pct(self.macro_accuracy.0),
            pct(self.outcome_f1.0)
        );
        let _ = writeln!(
            out,
            "B = {}  (accuracy {}%, F1 {}%)",
            self.agent_b,
            pct(self.macro_accuracy.1),
            pct(self.outcome_f1.1)
        );
        for (label, m) in [("steps", &self.steps), ("outcomes", &self.outcomes)] {
            let _ = writeln!(
                out,
                "McNemar over {label}: b={} c={} p={:.3e} ({:?})",
                m.b, m.c, m.p_value, m.method
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Prediction, AgentResponse};
    use crate::session::Action;

    fn r(session: &str, step: usize, gold: Action, pred: Action) -> StepResult {
        super::super::score_step(
            session,
            step,
            &gold,
            Prediction::Legal(AgentResponse {
                rationale: String::new(),
                action: pred,
            }),
        )
    }

    #[test]
    fn histogram_partitions_steps() {
        let buy = Action::click("product_page.buy_now");
        let results = vec![
            r("a", 1, Action::click("x"), Action::click("y")),
            r("a", 2, buy.clone(), buy.clone()),
            r("b", 1, Action::Terminate, buy.clone()),
        ];
        let rep = EvalReport::build("t".into(), &[], &results, None).unwrap();
        let typed: usize = rep.error_histogram.values().sum();
        assert_eq!(typed + rep.illegal + rep.matches, rep.n_steps);
        assert_eq!(rep.outcome_confusion.total(), rep.n_sessions);
        assert_eq!(rep.outcome_confusion.tp, 1);
        assert_eq!(rep.outcome_confusion.fp, 1);
        assert_eq!(rep.macro_accuracy, (0.5 + 0.0) / 2.0);
        let s = rep.summary();
        assert!(s.contains("Generated Next Action"));
        assert!(s.contains("Session Outcome"));
    }

    #[test]
    fn compare_rejects_misaligned() {
        let a = EvalReport::build("a".into(), &[], &[r("s", 1, Action::Terminate, Action::Terminate)], None).unwrap();
        let b = EvalReport::build("b".into(), &[], &[r("t", 1, Action::Terminate, Action::Terminate)], None).unwrap();
        assert!(matches!(compare(&a, &b), Err(EvalError::Misaligned(_))));
        let c = compare(&a, &a).unwrap();
        assert_eq!(c.steps.p_value, 1.0);
    }
}
