//! Sessions, steps, actions and reasoning traces.
//!
//! Correspondence with the task formulation, where a model learns
//! `f(c_1..t, a_1..t-1, r_1..t-1) = (r_t, a_t)`:
//!
//! | symbol | here                                   |
//! |--------|----------------------------------------|
//! | `c_t`  | [`Step::context`]                      |
//! | `a_t`  | [`Step::action`]                       |
//! | `r_t`  | [`Step::reasoning`]                    |
//! | `N`    | `session.steps.len()`                  |
//! | `f`    | [`crate::agents::Agent::generate_step`] |

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::html::{SimplifiedContext, Tag};
use crate::jsonl::{self, JsonlError};

/// Final segment of a purchase control's name.
pub const BUY_NOW: &str = "buy_now";

/// True if `name`'s last dotted segment is `buy_now`.
pub fn is_buy_now_name(name: &str) -> bool {
    name.rsplit('.').next() == Some(BUY_NOW)
}

/// One browser operation. Serialized as `{"type": "click", "name": ...}`,
/// `{"type": "type_and_submit", "name": ..., "text": ...}` or
/// `{"type": "terminate"}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Click { name: String },
    TypeAndSubmit { name: String, text: String },
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    TypeAndSubmit,
    Terminate,
}

impl Action {
    pub fn click(name: impl Into<String>) -> Self {
        Action::Click { name: name.into() }
    }

    pub fn type_and_submit(name: impl Into<String>, text: impl Into<String>) -> Self {
        Action::TypeAndSubmit {
            name: name.into(),
            text: text.into(),
        }
    }

    pub fn kind(&self) -> ActionKind {
        match self {
            Action::Click { .. } => ActionKind::Click,
            Action::TypeAndSubmit { .. } => ActionKind::TypeAndSubmit,
            Action::Terminate => ActionKind::Terminate,
        }
    }

    pub fn target(&self) -> Option<&str> {
        match self {
            Action::Click { name } | Action::TypeAndSubmit { name, .. } => Some(name),
            Action::Terminate => None,
        }
    }

    pub fn text(&self) -> Option<&str> {
        match self {
            Action::TypeAndSubmit { text, .. } => Some(text),
            _ => None,
        }
    }

    pub fn is_buy_now(&self) -> bool {
        matches!(self, Action::Click { name } if is_buy_now_name(name))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("actions always serialize")
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Click { name } => write!(f, "click {name}"),
            Action::TypeAndSubmit { name, text } => write!(f, "type_and_submit {name} {text:?}"),
            Action::Terminate => f.write_str("terminate"),
        }
    }
}

/// Coarse action category, decided from target-name conventions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionCategory {
    Search,
    Filter,
    ViewProduct,
    Purchase,
    Terminate,
    Other,
}

impl ActionCategory {
    pub const ALL: [ActionCategory; 6] = [
        ActionCategory::Search,
        ActionCategory::Filter,
        ActionCategory::ViewProduct,
        ActionCategory::Purchase,
        ActionCategory::Terminate,
        ActionCategory::Other,
    ];

    pub fn of(action: &Action) -> Self {
        match action {
            Action::Terminate => ActionCategory::Terminate,
            Action::TypeAndSubmit { name, .. } if last_segment(name) == "search_input" => {
                ActionCategory::Search
            }
            Action::Click { name } if name.starts_with("results.filter.") => ActionCategory::Filter,
            Action::Click { name } if last_segment(name) == "view_product" => {
                ActionCategory::ViewProduct
            }
            Action::Click { name } if is_buy_now_name(name) => ActionCategory::Purchase,
            _ => ActionCategory::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionCategory::Search => "search",
            ActionCategory::Filter => "filter",
            ActionCategory::ViewProduct => "view_product",
            ActionCategory::Purchase => "purchase",
            ActionCategory::Terminate => "terminate",
            ActionCategory::Other => "other",
        }
    }
}

fn last_segment(name: &str) -> &str {
    name.rsplit('.').next().unwrap_or(name)
}

/// First-person rationale for an action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Reasoning(pub String);

impl Reasoning {
    pub fn new(text: impl Into<String>) -> Self {
        Reasoning(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    #[serde(skip)]
    pub index: usize,
    pub context: SimplifiedContext,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<Reasoning>,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "SessionRecord")]
pub struct Session {
    pub session_id: String,
    pub user_id: String,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
struct SessionRecord {
    session_id: String,
    user_id: String,
    steps: Vec<Step>,
}

impl From<SessionRecord> for Session {
    fn from(r: SessionRecord) -> Self {
        let mut s = Session {
            session_id: r.session_id,
            user_id: r.user_id,
            steps: r.steps,
        };
        s.renumber();
        s
    }
}

impl Session {
    pub fn new(session_id: impl Into<String>, user_id: impl Into<String>) -> Self {
        Session {
            session_id: session_id.into(),
            user_id: user_id.into(),
            steps: Vec::new(),
        }
    }

    pub fn push(&mut self, context: SimplifiedContext, action: Action) {
        let index = self.steps.len();
        self.steps.push(Step {
            index,
            context,
            reasoning: None,
            action,
        });
    }

    pub fn renumber(&mut self) {
        for (i, s) in self.steps.iter_mut().enumerate() {
            s.index = i;
        }
    }

    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|s| &s.action)
    }

    pub fn is_reasoned(&self) -> bool {
        self.steps.iter().all(|s| s.reasoning.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    Purchase,
    Termination,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    EmptySession,
    IndexMismatch,
    FirstActionNotSearch,
    EmptyTarget,
    EmptySearchText,
    TargetNotInContext,
    TerminateBeforeEnd,
    PurchaseBeforeEnd,
    FinalActionNotTerminal,
    EmptyReasoning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub step: Option<usize>,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(i) => write!(f, "step {i}: {:?}", self.kind),
            None => write!(f, "{:?}", self.kind),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("session `{0}` has no steps")]
    Empty(String),
    #[error("session `{session_id}` ends with `{last}`, which is neither buy-now nor terminate")]
    NotTerminal { session_id: String, last: String },
}

/// Every invariant violation of `s`, in step order. Empty means valid.
pub fn validate_session(s: &Session) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut at = |step: usize, kind| {
        out.push(Violation {
            step: Some(step),
            kind,
        })
    };
    if s.steps.is_empty() {
        return vec![Violation {
            step: None,
            kind: ViolationKind::EmptySession,
        }];
    }
    let last = s.steps.len() - 1;
    for (i, step) in s.steps.iter().enumerate() {
        if step.index != i {
            at(i, ViolationKind::IndexMismatch);
        }
        if let Some(name) = step.action.target() {
            if name.is_empty() {
                at(i, ViolationKind::EmptyTarget);
            } else if step.context.resolve(name).is_none() {
                at(i, ViolationKind::TargetNotInContext);
            }
        }
        if matches!(step.action.text(), Some(t) if t.trim().is_empty()) {
            at(i, ViolationKind::EmptySearchText);
        }
        if i == 0 {
            let is_search = matches!(&step.action, Action::TypeAndSubmit { name, .. }
                if step.context.resolve(name).is_some_and(|n| n.tag == Tag::Input));
            if !is_search {
                at(i, ViolationKind::FirstActionNotSearch);
            }
        }
        if i < last && step.action == Action::Terminate {
            at(i, ViolationKind::TerminateBeforeEnd);
        }
        if i < last && step.action.is_buy_now() {
            at(i, ViolationKind::PurchaseBeforeEnd);
        }
        if i == last && !(step.action == Action::Terminate || step.action.is_buy_now()) {
            at(i, ViolationKind::FinalActionNotTerminal);
        }
        if matches!(&step.reasoning, Some(r) if r.0.trim().is_empty()) {
            at(i, ViolationKind::EmptyReasoning);
        }
    }
    out
}

/// Purchase iff the final action clicks a buy-now control, Termination iff it
/// is `terminate`.
pub fn outcome_of(s: &Session) -> Result<SessionOutcome, SessionError> {
    let last = s
        .steps
        .last()
        .ok_or_else(|| SessionError::Empty(s.session_id.clone()))?;
    match &last.action {
        Action::Terminate => Ok(SessionOutcome::Termination),
        a if a.is_buy_now() => Ok(SessionOutcome::Purchase),
        a => Err(SessionError::NotTerminal {
            session_id: s.session_id.clone(),
            last: a.to_string(),
        }),
    }
}

pub fn read_sessions(path: &Path) -> Result<Vec<Session>, JsonlError> {
    jsonl::read(path)
}

pub fn write_sessions(sessions: &[Session], path: &Path) -> Result<(), JsonlError> {
    jsonl::write(path, sessions)
}
