//! Next-action agents, strict output parsing and training export.

mod export;
mod parse;
mod prompt;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use export::{
    action_segment, context_segment, export_session, export_training_examples, missing_reasoning,
    reasoning_segment, MissingReasoning, Segment, TrainingExample,
};
pub use parse::{parse_agent_output, parse_agent_output_bytes, AgentResponse, IllegalCause, IllegalOutput};
pub use prompt::{build_baseline_prompt, BASELINE_PROMPT};

use crate::client::{ClientError, CompletionClient, CompletionRequest};
use crate::html::{InteractableKind, SimplifiedContext};
use crate::session::{Action, Session, Step};

/// What an agent sees when asked for step `history.len()` of a session.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub session_id: &'a str,
    /// Ground-truth steps before the current one.
    pub history: &'a [Step],
    pub context: &'a SimplifiedContext,
}

impl<'a> StepInput<'a> {
    /// Input for step `t` of `session`, with the recorded history.
    pub fn at(session: &'a Session, t: usize) -> Self {
        StepInput {
            session_id: &session.session_id,
            history: &session.steps[..t],
            context: &session.steps[t].context,
        }
    }

    pub fn step_index(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Prediction {
    Legal(AgentResponse),
    Illegal(IllegalOutput),
}

impl Prediction {
    pub fn action(&self) -> Option<&Action> {
        match self {
            Prediction::Legal(r) => Some(&r.action),
            Prediction::Illegal(_) => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("replay agent has no session `{0}`")]
    UnknownSession(String),
    #[error("replay agent has no step {step} for session `{session_id}`")]
    UnknownStep { session_id: String, step: usize },
}

/// True if `action` can be carried out in `ctx`: Terminate always, anything
/// else only when its target names an interactable there.
pub fn is_resolvable(action: &Action, ctx: &SimplifiedContext) -> bool {
    match action.target() {
        None => true,
        Some(t) => ctx.interactables().iter().any(|(n, _)| n.matches(t)),
    }
}

pub trait Agent: Send + Sync {
    /// Stable identifier used in reports.
    fn id(&self) -> String;

    /// Raw proposal, before the target is checked against the context.
    fn propose(&self, input: &StepInput<'_>) -> Result<Prediction, AgentError>;

    /// Reasoning and action for the current step. Actions whose target is not
    /// in the current context come back as illegal.
    fn generate_step(&self, input: &StepInput<'_>) -> Result<Prediction, AgentError> {
        Ok(match self.propose(input)? {
            Prediction::Legal(r) if !is_resolvable(&r.action, input.context) => {
                Prediction::Illegal(IllegalOutput {
                    raw: serde_json::to_string(&r).expect("responses serialize"),
                    cause: IllegalCause::UnresolvableTarget,
                })
            }
            p => p,
        })
    }
}

/// Plays back recorded sessions.
#[derive(Debug, Clone, Default)]
pub struct ReplayAgent {
    sessions: HashMap<String, Session>,
}

impl ReplayAgent {
    pub fn new(sessions: &[Session]) -> Self {
        ReplayAgent {
            sessions: sessions
                .iter()
                .map(|s| (s.session_id.clone(), s.clone()))
                .collect(),
        }
    }
}

impl Agent for ReplayAgent {
    fn id(&self) -> String {
        "replay".into()
    }

    fn propose(&self, input: &StepInput<'_>) -> Result<Prediction, AgentError> {
        let s = self
            .sessions
            .get(input.session_id)
            .ok_or_else(|| AgentError::UnknownSession(input.session_id.to_owned()))?;
        let t = input.step_index();
        let step = s.steps.get(t).ok_or_else(|| AgentError::UnknownStep {
            session_id: input.session_id.to_owned(),
            step: t,
        })?;
        Ok(Prediction::Legal(AgentResponse {
            rationale: step
                .reasoning
                .as_ref()
                .map(|r| r.as_str().to_owned())
                .unwrap_or_default(),
            action: step.action.clone(),
        }))
    }
}

/// Picks uniformly among the context's interactables and Terminate. Seeded
/// per (session, step), so results do not depend on evaluation order.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomAgent {
    pub seed: u64,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent { seed }
    }

    fn rng(&self, session_id: &str, step: usize) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((step as u64).to_le_bytes());
        h.update(session_id.as_bytes());
        let d = h.finalize();
        ChaCha8Rng::seed_from_u64(u64::from_le_bytes(d[..8].try_into().expect("8 bytes")))
    }
}

impl Agent for RandomAgent {
    fn id(&self) -> String {
        format!("random-{}", self.seed)
    }

    fn propose(&self, input: &StepInput<'_>) -> Result<Prediction, AgentError> {
        let mut rng = self.rng(input.session_id, input.step_index());
        let items = input.context.interactables();
        let pick = rng.random_range(0..=items.len());
        let action = match items.get(pick) {
            None => Action::Terminate,
            Some((name, InteractableKind::Input)) => {
                let words: Vec<String> = crate::shop::tokenize(&input.context.root.inner_text());
                let n = rng.random_range(1..=3);
                let text = (0..n)
                    .filter_map(|_| words.choose(&mut rng).cloned())
                    .collect::<Vec<_>>()
                    .join(" ");
                Action::type_and_submit(name.to_string(), if text.is_empty() { "item".into() } else { text })
            }
            Some((name, _)) => Action::click(name.to_string()),
        };
        Ok(Prediction::Legal(AgentResponse {
            rationale: "I'll try this.".into(),
            action,
        }))
    }
}

/// Always closes the window.
#[derive(Debug, Clone, Copy, Default)]
pub struct TerminateAgent;

impl Agent for TerminateAgent {
    fn id(&self) -> String {
        "terminate".into()
    }

    fn propose(&self, _: &StepInput<'_>) -> Result<Prediction, AgentError> {
        Ok(Prediction::Legal(AgentResponse {
            rationale: "Nothing here is for me.".into(),
            action: Action::Terminate,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointSettings {
    pub temperature: f64,
    pub max_tokens: u32,
    /// Ask for the rationale first, then for the action given that
    /// rationale, in two calls.
    pub two_phase: bool,
}

impl Default for EndpointSettings {
    fn default() -> Self {
        EndpointSettings {
            temperature: 0.0,
            max_tokens: 512,
            two_phase: false,
        }
    }
}

const RATIONALE_ONLY: &str = "\n\nBefore choosing the action, write only your rationale for the next action as a single first-person sentence. Do not output JSON.";

/// Prompt-only agent backed by a chat-completions endpoint.
pub struct EndpointAgent {
    client: Arc<dyn CompletionClient>,
    settings: EndpointSettings,
}

impl EndpointAgent {
    pub fn new(client: Arc<dyn CompletionClient>, settings: EndpointSettings) -> Self {
        EndpointAgent { client, settings }
    }

    fn call(&self, prompt: String) -> Result<String, ClientError> {
        self.client.complete(&CompletionRequest::single(
            prompt,
            self.settings.temperature,
            self.settings.max_tokens,
        ))
    }
}

impl Agent for EndpointAgent {
    fn id(&self) -> String {
        let mode = if self.settings.two_phase { "two-phase" } else { "single" };
        format!("endpoint:{}:{mode}", self.client.model())
    }

    fn propose(&self, input: &StepInput<'_>) -> Result<Prediction, AgentError> {
        let prompt = build_baseline_prompt(input.history, input.context);
        if !self.settings.two_phase {
            let raw = self.call(prompt)?;
            return Ok(match parse_agent_output(&raw) {
                Ok(r) => Prediction::Legal(r),
                Err(e) => Prediction::Illegal(e),
            });
        }
        let rationale = self.call(format!("{prompt}{RATIONALE_ONLY}"))?.trim().to_owned();
        let raw = self.call(format!(
            "{prompt}\n# Your Rationale\n{rationale}\n\nNow output the JSON object for the action that follows from this rationale."
        ))?;
        Ok(match parse_agent_output(&raw) {
            Ok(r) => Prediction::Legal(AgentResponse {
                rationale,
                action: r.action,
            }),
            Err(e) => Prediction::Illegal(e),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{FixedClient, FnClient};
    use crate::html::simplify;

    fn session() -> Session {
        let mut s = Session::new("s-1", "u-1");
        let c0 = simplify(r#"<div name="bar"><input name="q"></div>"#);
        let c1 = simplify(r#"<div name="bar"><input name="q"></div><button name="go">Go</button>"#);
        s.push(c0, Action::type_and_submit("bar.q", "red socks"));
        s.push(c1.clone(), Action::click("go"));
        s.push(c1, Action::Terminate);
        s
    }

    #[test]
    fn replay_reproduces_source() {
        let s = session();
        let agent = ReplayAgent::new(std::slice::from_ref(&s));
        for t in 0..s.steps.len() {
            let p = agent.generate_step(&StepInput::at(&s, t)).unwrap();
            assert_eq!(p.action(), Some(&s.steps[t].action));
        }
        let mut other = s.clone();
        other.session_id = "nope".into();
        assert!(matches!(
            agent.generate_step(&StepInput::at(&other, 0)),
            Err(AgentError::UnknownSession(_))
        ));
    }

    #[test]
    fn random_is_resolvable_and_seeded() {
        let s = session();
        let a = RandomAgent::new(3);
        for t in 0..3 {
            let input = StepInput::at(&s, t);
            let p = a.generate_step(&input).unwrap();
            let act = p.action().expect("random agent is always legal");
            assert!(is_resolvable(act, input.context));
            assert_eq!(p, a.generate_step(&input).unwrap());
        }
    }

    #[test]
    fn endpoint_unknown_target_is_illegal() {
        let s = session();
        let client = Arc::new(FixedClient::new(
            r#"{"action":{"type":"click","name":"product_page.buy_now"},"rationale":"buy"}"#,
        ));
        let agent = EndpointAgent::new(client, EndpointSettings::default());
        let p = agent.generate_step(&StepInput::at(&s, 1)).unwrap();
        assert!(matches!(
            p,
            Prediction::Illegal(IllegalOutput {
                cause: IllegalCause::UnresolvableTarget,
                ..
            })
        ));
    }

    #[test]
    fn endpoint_legal_and_garbage() {
        let s = session();
        let ok = EndpointAgent::new(
            Arc::new(FixedClient::new(r#"{"action":{"type":"click","name":"go"},"rationale":"go on"}"#)),
            EndpointSettings::default(),
        );
        let p = ok.generate_step(&StepInput::at(&s, 1)).unwrap();
        assert_eq!(p.action(), Some(&Action::click("go")));
        let bad = EndpointAgent::new(Arc::new(FixedClient::new("I think I'd click go")), EndpointSettings::default());
        assert!(matches!(
            bad.generate_step(&StepInput::at(&s, 1)).unwrap(),
            Prediction::Illegal(IllegalOutput {
                cause: IllegalCause::NotJson,
                ..
            })
        ));
    }

    #[test]
    fn two_phase_keeps_first_rationale() {
        let s = session();
        let client = Arc::new(FnClient::new("m", |n, req| {
            Ok(if n % 2 == 0 {
                assert!(req.prompt().ends_with("Do not output JSON."));
                "I want to continue.".to_owned()
            } else {
                assert!(req.prompt().contains("# Your Rationale\nI want to continue."));
                r#"{"action":{"type":"click","name":"go"},"rationale":"other"}"#.to_owned()
            })
        }));
        let agent = EndpointAgent::new(
            client.clone(),
            EndpointSettings {
                two_phase: true,
                ..Default::default()
            },
        );
        let p = agent.generate_step(&StepInput::at(&s, 1)).unwrap();
        let Prediction::Legal(r) = p else { panic!() };
        assert_eq!(r.rationale, "I want to continue.");
        assert_eq!(client.calls(), 2);
        assert_eq!(agent.id(), "endpoint:m:two-phase");
    }

    #[test]
    fn transport_errors_propagate() {
        let s = session();
        let agent = EndpointAgent::new(
            Arc::new(FnClient::new("m", |_, _| Err(ClientError::Other("down".into())))),
            EndpointSettings::default(),
        );
        assert!(matches!(
            agent.generate_step(&StepInput::at(&s, 1)),
            Err(AgentError::Client(_))
        ));
    }
}
