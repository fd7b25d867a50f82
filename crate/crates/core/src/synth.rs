//! Synthesized first-person rationales for recorded actions.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{ClientError, CompletionClient, CompletionRequest};
use crate::html::{simplify, SimplifiedContext};
use crate::session::{Action, Reasoning, Session};

/// Prompt template. `{example}` is replaced by the few-shot block.
pub const SYNTHESIS_PROMPT: &str = "You will be given a customer's shopping journey on one of the largest e-commerce platforms globally. you will be given the context (what the user is looking at), the action (what the user did), and your job is to predict the user's rationale for the action. The rationale should follow \n\
Here is an example:
{example}
For each action in the input, output a rationale.
If the action is \"terminate\", it means that you didn't find any desired product and you decided to leave the website by closing the browser window.";

/// Bumped whenever prompt construction changes, invalidating cached
/// rationales.
pub const PROMPT_VERSION: &str = "synth-v1";

pub const TEMPERATURE: f64 = 0.0;
pub const MAX_TOKENS: u32 = 200;

/// One ⟨context, action, rationale⟩ exemplar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShot {
    pub context: SimplifiedContext,
    pub action: Action,
    pub rationale: String,
}

/// Three hand-written exemplars.
pub fn default_few_shot() -> Vec<FewShot> {
    let results = simplify(
        r#"<div name="search_bar"><input name="search_input" type="text" value="flannel shirt"></div>
<div name="results"><h2>1-10 of 34 results for "flannel shirt"</h2>
<div name="filter"><button name="rating_4_up" aria-pressed="false">4 Stars &amp; Up</button></div>
<ul><li><div name="columbia_men_s_flannel_shirt_p00012"><a name="view_product">Columbia Men's Flannel Shirt</a><span>$39.99</span><span>3.5 out of 5 stars (212 ratings)</span></div></li></ul></div>"#,
    );
    let product = simplify(
        r#"<div name="product_page"><h1>Disney Holiday Gift Card</h1><p>by Disney</p>
<table><tr><th>Price</th><td>$25.00</td></tr><tr><th>Rating</th><td>4.5 out of 5 stars (1031 ratings)</td></tr></table>
<button name="buy_now">Buy Now</button><a name="back_to_results">Back to results</a></div>"#,
    );
    vec![
        FewShot {
            context: results.clone(),
            action: Action::click("results.filter.rating_4_up"),
            rationale: "These shirts have mixed reviews, so I want to narrow it down to ones rated 4 stars and up.".into(),
        },
        FewShot {
            context: product,
            action: Action::click("product_page.buy_now"),
            rationale: "This gift card is the amount I had in mind and it's well reviewed, so I'll buy it.".into(),
        },
        FewShot {
            context: results,
            action: Action::Terminate,
            rationale: "None of these shirts look right to me, so I'm done looking for now.".into(),
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisRequest {
    pub context: SimplifiedContext,
    pub action: Action,
    pub few_shot: Vec<FewShot>,
}

fn format_triple(context: &SimplifiedContext, action: &Action) -> String {
    format!("Context:\n{}\nAction: {}\n", context.render(), action.to_json())
}

pub fn build_synthesis_prompt(req: &SynthesisRequest) -> String {
    let examples: String = req
        .few_shot
        .iter()
        .map(|f| format!("{}Rationale: {}\n", format_triple(&f.context, &f.action), f.rationale))
        .collect::<Vec<_>>()
        .join("\n");
    let mut prompt = SYNTHESIS_PROMPT.replace("{example}", examples.trim_end());
    prompt.push_str("\n\nInput:\n");
    prompt.push_str(&format_triple(&req.context, &req.action));
    prompt.push_str("Rationale:");
    prompt
}

/// Hex SHA-256 over the rendered context, the action and the prompt
/// version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SynthesisCacheKey(pub String);

impl SynthesisCacheKey {
    pub fn of(context: &SimplifiedContext, action: &Action) -> Self {
        let mut h = Sha256::new();
        for part in [context.render(), action.to_json(), PROMPT_VERSION.to_owned()] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        SynthesisCacheKey(hex::encode(h.finalize()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("the endpoint returned an empty rationale")]
    EmptyCompletion,
    #[error("cache entry {path}: {source}")]
    Cache {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("session {session_id}, step {step}: {source}")]
    Step {
        session_id: String,
        step: usize,
        source: Box<SynthError>,
    },
}

/// Rationales keyed by [`SynthesisCacheKey`]; optionally mirrored to one
/// file per key in a directory.
#[derive(Debug, Default)]
pub struct SynthCache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<SynthesisCacheKey, String>>,
    inflight: Mutex<HashMap<SynthesisCacheKey, Arc<Mutex<()>>>>,
}

impl SynthCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        SynthCache {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    fn path(&self, key: &SynthesisCacheKey) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(&key.0))
    }

    pub fn get(&self, key: &SynthesisCacheKey) -> Result<Option<String>, SynthError> {
        if let Some(v) = self.mem.lock().expect("cache lock").get(key) {
            return Ok(Some(v.clone()));
        }
        let Some(path) = self.path(key) else { return Ok(None) };
        match fs::read_to_string(&path) {
            Ok(v) => {
                self.mem.lock().expect("cache lock").insert(key.clone(), v.clone());
                Ok(Some(v))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(source) => Err(SynthError::Cache { path, source }),
        }
    }

    pub fn put(&self, key: &SynthesisCacheKey, value: &str) -> Result<(), SynthError> {
        if let Some(path) = self.path(key) {
            let io = |source| SynthError::Cache {
                path: path.clone(),
                source,
            };
            fs::create_dir_all(path.parent().expect("cache entries live in a directory")).map_err(io)?;
            let tmp = path.with_extension("partial");
            fs::write(&tmp, value).map_err(io)?;
            fs::rename(&tmp, &path).map_err(io)?;
        }
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.clone(), value.to_owned());
        Ok(())
    }

    fn key_lock(&self, key: &SynthesisCacheKey) -> Arc<Mutex<()>> {
        self.inflight
            .lock()
            .expect("cache lock")
            .entry(key.clone())
            .or_default()
            .clone()
    }
}

pub struct Synthesizer {
    client: Arc<dyn CompletionClient>,
    cache: SynthCache,
    few_shot: Vec<FewShot>,
}

impl Synthesizer {
    pub fn new(client: Arc<dyn CompletionClient>, cache: SynthCache) -> Self {
        Synthesizer {
            client,
            cache,
            few_shot: default_few_shot(),
        }
    }

    pub fn with_few_shot(mut self, few_shot: Vec<FewShot>) -> Self {
        self.few_shot = few_shot;
        self
    }

    pub fn model(&self) -> &str {
        self.client.model()
    }

    pub fn request(&self, context: &SimplifiedContext, action: &Action) -> SynthesisRequest {
        SynthesisRequest {
            context: context.clone(),
            action: action.clone(),
            few_shot: self.few_shot.clone(),
        }
    }

    pub fn synthesize_step(&self, req: &SynthesisRequest) -> Result<Reasoning, SynthError> {
        let key = SynthesisCacheKey::of(&req.context, &req.action);
        if let Some(hit) = self.cache.get(&key)? {
            return Ok(Reasoning(hit));
        }
        let lock = self.cache.key_lock(&key);
        let _guard = lock.lock().expect("key lock");
        if let Some(hit) = self.cache.get(&key)? {
            return Ok(Reasoning(hit));
        }
        let prompt = build_synthesis_prompt(req);
        let out = self
            .client
            .complete(&CompletionRequest::single(prompt, TEMPERATURE, MAX_TOKENS))?;
        let text = out.trim();
        if text.is_empty() {
            return Err(SynthError::EmptyCompletion);
        }
        self.cache.put(&key, text)?;
        Ok(Reasoning(text.to_owned()))
    }

    /// Fills every missing reasoning in `session`. Steps are processed in
    /// order; each result is cached as soon as it arrives, so a rerun after
    /// a failure only calls the endpoint for unfinished steps.
    pub fn synthesize_session(&self, session: &Session) -> Result<Session, SynthError> {
        let mut out = session.clone();
        for step in out.steps.iter_mut().filter(|s| s.reasoning.is_none()) {
            let req = self.request(&step.context, &step.action);
            let r = self.synthesize_step(&req).map_err(|e| SynthError::Step {
                session_id: session.session_id.clone(),
                step: step.index,
                source: Box::new(e),
            })?;
            step.reasoning = Some(r);
        }
        Ok(out)
    }

    /// Synthesizes sessions with at most `concurrency` requests in flight.
    /// Output order follows input order.
    pub fn synthesize_all(
        &self,
        sessions: &[Session],
        concurrency: usize,
    ) -> Result<Vec<Session>, SynthError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(concurrency.max(1))
            .build()
            .expect("thread pool");
        pool.install(|| {
            sessions
                .par_iter()
                .map(|s| self.synthesize_session(s))
                .collect()
        })
    }
}

/// Sidecar describing a reasoned dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub model: String,
    pub prompt_version: String,
    /// Rationales are model-written, not recorded from shoppers.
    pub synthetic_reasoning: bool,
    pub n_sessions: usize,
}

impl DatasetMeta {
    pub fn new(model: &str, n_sessions: usize) -> Self {
        DatasetMeta {
            model: model.to_owned(),
            prompt_version: PROMPT_VERSION.to_owned(),
            synthetic_reasoning: true,
            n_sessions,
        }
    }

    /// `<dataset>.meta.json`.
    pub fn path_for(dataset: &Path) -> PathBuf {
        let mut s = dataset.as_os_str().to_owned();
        s.push(".meta.json");
        PathBuf::from(s)
    }

    pub fn write(&self, dataset: &Path) -> Result<(), crate::jsonl::JsonlError> {
        crate::jsonl::write_json(&Self::path_for(dataset), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{FixedClient, FnClient, TemplateClient};

    fn session(k: usize) -> Session {
        let mut s = Session::new("s-1", "u-1");
        let ctx = simplify(r#"<input name="q"><button name="go">Go</button>"#);
        s.push(ctx.clone(), Action::type_and_submit("q", "socks"));
        for i in 1..k - 1 {
            let ctx = simplify(&format!(r#"<input name="q"><button name="go">Go {i}</button>"#));
            s.push(ctx, Action::click("go"));
        }
        s.push(ctx, Action::Terminate);
        s
    }

    #[test]
    fn prompt_has_fixed_text_and_input() {
        let s = session(3);
        let req = SynthesisRequest {
            context: s.steps[2].context.clone(),
            action: Action::Terminate,
            few_shot: default_few_shot(),
        };
        let p = build_synthesis_prompt(&req);
        assert!(p.contains("predict the user's rationale"));
        assert!(p.contains("you decided to leave the website by closing the browser window"));
        assert!(!p.contains("{example}"));
        assert!(p.ends_with("Action: {\"type\":\"terminate\"}\nRationale:"));
        assert_eq!(p.matches("Rationale: ").count(), 3);
    }

    #[test]
    fn empty_few_shot_still_well_formed() {
        let req = SynthesisRequest {
            context: SimplifiedContext::default(),
            action: Action::Terminate,
            few_shot: vec![],
        };
        let p = build_synthesis_prompt(&req);
        assert!(p.contains("Here is an example:\n\nFor each action"));
    }

    #[test]
    fn few_shot_actions_resolve() {
        for f in default_few_shot() {
            if let Some(t) = f.action.target() {
                assert!(f.context.resolve(t).is_some(), "{t}");
            }
        }
    }

    #[test]
    fn cache_keys() {
        let s = session(3);
        let a = SynthesisCacheKey::of(&s.steps[0].context, &s.steps[0].action);
        assert_eq!(a, SynthesisCacheKey::of(&s.steps[0].context, &s.steps[0].action));
        assert_ne!(a, SynthesisCacheKey::of(&s.steps[0].context, &Action::Terminate));
        assert_eq!(a.0.len(), 64);
    }

    #[test]
    fn k_steps_cost_k_calls_then_none() {
        let client = Arc::new(FixedClient::new("  I want socks. "));
        let syn = Synthesizer::new(client.clone(), SynthCache::in_memory());
        let s = session(4);
        let out = syn.synthesize_session(&s).unwrap();
        assert_eq!(client.calls(), 4);
        assert!(out.is_reasoned());
        assert_eq!(out.steps[0].reasoning.as_ref().unwrap().as_str(), "I want socks.");
        for (a, b) in out.steps.iter().zip(&s.steps) {
            assert_eq!((&a.context, &a.action), (&b.context, &b.action));
        }
        let again = syn.synthesize_session(&s).unwrap();
        assert_eq!(client.calls(), 4);
        assert_eq!(again, out);
    }

    #[test]
    fn resume_after_crash_only_calls_remaining_steps() {
        let dir = tempfile::tempdir().unwrap();
        let s = session(5);
        let crashing = Arc::new(FnClient::new("m", |n, _| {
            if n < 2 {
                Ok(format!("r{n}"))
            } else {
                Err(ClientError::Other("boom".into()))
            }
        }));
        let syn = Synthesizer::new(crashing, SynthCache::on_disk(dir.path()));
        let err = syn.synthesize_session(&s).unwrap_err();
        assert!(matches!(err, SynthError::Step { step: 2, .. }), "{err}");

        let fresh = Arc::new(FixedClient::new("later"));
        let syn = Synthesizer::new(fresh.clone(), SynthCache::on_disk(dir.path()));
        let out = syn.synthesize_session(&s).unwrap();
        assert_eq!(fresh.calls(), 3);
        assert_eq!(out.steps[1].reasoning.as_ref().unwrap().as_str(), "r1");
    }

    #[test]
    fn empty_completion_is_an_error() {
        let syn = Synthesizer::new(Arc::new(FixedClient::new("   ")), SynthCache::in_memory());
        let s = session(2);
        let req = syn.request(&s.steps[0].context, &s.steps[0].action);
        assert!(matches!(syn.synthesize_step(&req), Err(SynthError::EmptyCompletion)));
    }

    #[test]
    fn rating_filter_rationale_mentions_high_ratings() {
        let syn = Synthesizer::new(Arc::new(TemplateClient::new()), SynthCache::in_memory());
        let f = &default_few_shot()[0];
        let req = syn.request(&f.context, &f.action);
        let r = syn.synthesize_step(&req).unwrap();
        assert!(r.as_str().contains("I'm looking for options with high ratings"));
    }

    #[test]
    fn parallel_synthesis_keeps_order_and_validity() {
        let client = Arc::new(TemplateClient::new());
        let syn = Synthesizer::new(client.clone(), SynthCache::in_memory());
        let sessions: Vec<Session> = (0..20)
            .map(|i| {
                let mut s = session(3 + i % 3);
                s.session_id = format!("s-{i}");
                s
            })
            .collect();
        let out = syn.synthesize_all(&sessions, 4).unwrap();
        assert_eq!(out.len(), 20);
        for (a, b) in out.iter().zip(&sessions) {
            assert_eq!(a.session_id, b.session_id);
            assert!(a.is_reasoned());
        }
        // Identical (context, action) pairs across sessions are requested once.
        let distinct: std::collections::HashSet<_> = sessions
            .iter()
            .flat_map(|s| s.steps.iter().map(|st| SynthesisCacheKey::of(&st.context, &st.action)))
            .collect();
        assert_eq!(client.calls(), distinct.len());
    }

    #[test]
    fn meta_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        DatasetMeta::new("stub-template", 3).write(&p).unwrap();
        let text = fs::read_to_string(dir.path().join("r.jsonl.meta.json")).unwrap();
        let m: DatasetMeta = serde_json::from_str(&text).unwrap();
        assert!(m.synthetic_reasoning);
        assert_eq!(m.model, "stub-template");
    }
}
