use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, StepResult};
use crate::agents::Prediction;
use crate::session::{Action, ActionCategory};

/// Per-session accuracy: matches over scored steps.
pub fn per_session_accuracy(results: &[StepResult]) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in results {
        let c = counts.entry(&r.session_id).or_default();
        c.0 += usize::from(r.is_match);
        c.1 += 1;
    }
    counts
        .into_iter()
        .map(|(k, (m, n))| (k.to_owned(), m as f64 / n as f64))
        .collect()
}

/// Mean of per-session accuracies. Every session weighs the same no matter
/// how many steps it has.
pub fn macro_accuracy(results: &[StepResult]) -> Result<f64, EvalError> {
    let per = per_session_accuracy(results);
    if per.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(per.values().sum::<f64>() / per.len() as f64)
}

/// Pooled step-level accuracy, for comparison with [`macro_accuracy`].
pub fn micro_accuracy(results: &[StepResult]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(results.iter().filter(|r| r.is_match).count() as f64 / results.len() as f64)
}

/// Purchase is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `2PR / (P + R)`, or 0 when `P + R = 0`.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// True when F1 is 0 only because precision and recall are both 0.
    pub fn is_degenerate(&self) -> bool {
        self.precision() + self.recall() == 0.0
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScore {
    pub f1: f64,
    pub confusion: Confusion,
    pub degenerate: bool,
}

/// True if `p` predicts a purchase. Illegal outputs never do.
pub fn predicts_purchase(p: &Prediction) -> bool {
    p.action().is_some_and(Action::is_buy_now)
}

/// Outcome F1 over each session's final scored step, given as (gold,
/// prediction) pairs.
pub fn outcome_f1<'a, I>(finals: I) -> OutcomeScore
where
    I: IntoIterator<Item = (&'a Action, &'a Prediction)>,
{
    let mut c = Confusion::default();
    for (gold, pred) in finals {
        match (gold.is_buy_now(), predicts_purchase(pred)) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    OutcomeScore {
        f1: c.f1(),
        confusion: c,
        degenerate: c.is_degenerate(),
    }
}

/// Final scored step of every session in `results`, keyed by session id.
pub fn final_steps(results: &[StepResult]) -> BTreeMap<&str, &StepResult> {
    let mut out: BTreeMap<&str, &StepResult> = BTreeMap::new();
    for r in results {
        let e = out.entry(&r.session_id).or_insert(r);
        if r.step_index > e.step_index {
            *e = r;
        }
    }
    out
}

/// Counts per category, with every category present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionDistribution(pub BTreeMap<ActionCategory, usize>);

impl Default for ActionDistribution {
    fn default() -> Self {
        ActionDistribution(ActionCategory::ALL.iter().map(|c| (*c, 0)).collect())
    }
}

impl ActionDistribution {
    pub fn get(&self, c: ActionCategory) -> usize {
        self.0.get(&c).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

pub fn action_distribution<'a, I: IntoIterator<Item = &'a Action>>(actions: I) -> ActionDistribution {
    let mut d = ActionDistribution::default();
    for a in actions {
        *d.0.entry(ActionCategory::of(a)).or_default() += 1;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentResponse;
    use crate::eval::ErrorType;

    fn res(session: &str, step: usize, ok: bool) -> StepResult {
        let gold = Action::click("x");
        let pred = if ok { Action::click("x") } else { Action::click("y") };
        StepResult {
            session_id: session.into(),
            step_index: step,
            gold,
            predicted: Prediction::Legal(AgentResponse {
                rationale: String::new(),
                action: pred,
            }),
            is_match: ok,
            error_type: if ok { ErrorType::None } else { ErrorType::ClickedWrongButton },
        }
    }

    #[test]
    fn macro_arithmetic() {
        let r = vec![res("a", 1, true), res("a", 2, false), res("b", 1, true)];
        assert_eq!(macro_accuracy(&r).unwrap(), 0.75);
        let r = vec![res("a", 1, true), res("a", 2, false), res("a", 3, true), res("a", 4, false)];
        assert_eq!(macro_accuracy(&r).unwrap(), 0.5);
        assert!(matches!(macro_accuracy(&[]), Err(EvalError::Empty)));
    }

    #[test]
    fn macro_differs_from_pooled() {
        // Lengths 1 and 9: one perfect short session, one long session at 1/9.
        let mut r = vec![res("short", 1, true)];
        r.push(res("long", 1, true));
        for t in 2..=9 {
            r.push(res("long", t, false));
        }
        let macro_ = macro_accuracy(&r).unwrap();
        let pooled = micro_accuracy(&r).unwrap();
        assert_eq!(macro_, (1.0 + 1.0 / 9.0) / 2.0);
        assert_eq!(pooled, 2.0 / 10.0);
        assert_ne!(macro_, pooled);
    }

    #[test]
    fn f1_hand_computed() {
        let c = Confusion {
            tp: 2,
            fp: 1,
            fn_: 1,
            tn: 5,
        };
        let p = 2.0 / 3.0;
        assert!((c.f1() - 2.0 * p * p / (p + p)).abs() < 1e-15);
        let z = Confusion {
            tn: 4,
            ..Default::default()
        };
        assert_eq!(z.f1(), 0.0);
        assert!(z.is_degenerate());
    }

    #[test]
    fn illegal_final_is_negative() {
        let gold = Action::click("product_page.buy_now");
        let illegal = Prediction::Illegal(crate::agents::IllegalOutput {
            raw: "x".into(),
            cause: crate::agents::IllegalCause::NotJson,
        });
        let s = outcome_f1([(&gold, &illegal)]);
        assert_eq!(s.confusion.fn_, 1);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn distribution_of_short_session() {
        let acts = [
            Action::type_and_submit("search_bar.search_input", "socks"),
            Action::click("results.red_socks_p00001.view_product"),
            Action::click("product_page.buy_now"),
        ];
        let d = action_distribution(&acts);
        assert_eq!(d.get(ActionCategory::Search), 1);
        assert_eq!(d.get(ActionCategory::ViewProduct), 1);
        assert_eq!(d.get(ActionCategory::Purchase), 1);
        assert_eq!(d.get(ActionCategory::Filter), 0);
        assert_eq!(d.total(), 3);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"view_product\":1"));
    }
}
