use serde::{Deserialize, Serialize};

use crate::session::Session;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub text: String,
    /// False for context spans, which are excluded from the loss.
    pub train: bool,
}

/// One session serialized as a single training sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub session_id: String,
    pub segments: Vec<Segment>,
}

impl TrainingExample {
    pub fn text(&self) -> String {
        self.segments.iter().map(|s| s.text.as_str()).collect()
    }

    /// (masked, trained) character counts.
    pub fn char_counts(&self) -> (usize, usize) {
        self.segments.iter().fold((0, 0), |(m, t), s| {
            let n = s.text.chars().count();
            if s.train {
                (m, t + n)
            } else {
                (m + n, t)
            }
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("session {session_id} has no reasoning at step {step}")]
pub struct MissingReasoning {
    pub session_id: String,
    pub step: usize,
}

pub fn context_segment(rendered: &str) -> String {
    format!("<context>\n{rendered}\n</context>\n")
}

pub fn reasoning_segment(text: &str) -> String {
    format!("<reasoning>{text}</reasoning>\n")
}

pub fn action_segment(json: &str) -> String {
    format!("<action>{json}</action>\n")
}

pub fn export_session(s: &Session) -> Result<TrainingExample, MissingReasoning> {
    let mut segments = Vec::with_capacity(s.steps.len() * 3);
    for step in &s.steps {
        let r = step.reasoning.as_ref().ok_or_else(|| MissingReasoning {
            session_id: s.session_id.clone(),
            step: step.index,
        })?;
        segments.push(Segment {
            text: context_segment(&step.context.render()),
            train: false,
        });
        segments.push(Segment {
            text: reasoning_segment(r.as_str()),
            train: true,
        });
        segments.push(Segment {
            text: action_segment(&step.action.to_json()),
            train: true,
        });
    }
    Ok(TrainingExample {
        session_id: s.session_id.clone(),
        segments,
    })
}

/// One example per session. Fails on the first session lacking a
/// reasoning; [`missing_reasoning`] lists all of them.
pub fn export_training_examples(sessions: &[Session]) -> Result<Vec<TrainingExample>, MissingReasoning> {
    sessions.iter().map(export_session).collect()
}

/// Every (session, step) without a reasoning.
pub fn missing_reasoning(sessions: &[Session]) -> Vec<MissingReasoning> {
    sessions
        .iter()
        .flat_map(|s| {
            s.steps
                .iter()
                .filter(|st| st.reasoning.is_none())
                .map(|st| MissingReasoning {
                    session_id: s.session_id.clone(),
                    step: st.index,
                })
        })
        .collect()
}
