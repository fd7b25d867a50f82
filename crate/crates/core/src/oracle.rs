//! Scripted stochastic shoppers that produce ground-truth sessions.
//!
//! Aggregate behavior is calibrated by construction: the number of searches
//! in a session is `1 + Poisson(mean - 1)`, whether the shopper buys is a
//! Bernoulli draw at the purchase rate, and at most one filter click happens
//! per session with probability `mean / (1.5 * min_ratio)`.
//!
//! A shopper buys iff some product it inspected covers all of its target
//! tokens and is rated at least its satisfaction threshold. Buyers get the
//! rating of a real target product as threshold; non-buyers get a threshold
//! no matching product reaches, so both outcomes follow from the same rule.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::session::{Action, ActionCategory, Session, SessionOutcome};
use crate::shop::{
    tokenize, Control, FilterKind, Page, PriceBand, Product, Shop, ShopState, View,
    BACK_TO_RESULTS, BUY_NOW, NEXT_PAGE, SEARCH_INPUT,
};

/// Purchases over all sessions in the reference behavior logs (4,432 of
/// 31,865).
pub const REFERENCE_PURCHASE_RATE: f64 = 4432.0 / 31865.0;
/// Searches per session in the reference logs.
pub const REFERENCE_MEAN_SEARCHES: f64 = 2.82;
/// Searches outnumber filter clicks by more than this factor.
pub const REFERENCE_SEARCH_TO_FILTER: f64 = 7.0;
/// Users per session in the reference logs (3,526 users, 31,865 sessions).
const USERS_PER_SESSION: f64 = 3526.0 / 31865.0;

const P_NEXT_PAGE: f64 = 0.15;
const PATIENCE: std::ops::RangeInclusive<usize> = 40..=60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub mean_searches_per_session: f64,
    pub purchase_rate: f64,
    pub search_to_filter_ratio_min: f64,
    pub typo_prob: f64,
    pub seed: u64,
    pub n_sessions: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mean_searches_per_session: REFERENCE_MEAN_SEARCHES,
            purchase_rate: REFERENCE_PURCHASE_RATE,
            search_to_filter_ratio_min: REFERENCE_SEARCH_TO_FILTER,
            typo_prob: 0.25,
            seed: 0,
            n_sessions: 1000,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OracleError {
    #[error("{field} must be a probability, got {value}")]
    NotProbability { field: &'static str, value: f64 },
    #[error("mean searches per session must be at least 1, got {0}")]
    MeanSearches(f64),
    #[error("search-to-filter ratio must be positive, got {0}")]
    FilterRatio(f64),
    #[error("n_sessions must be at least 1")]
    NoSessions,
    #[error("the catalog is empty")]
    EmptyCatalog,
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        for (field, value) in [("purchase_rate", self.purchase_rate), ("typo_prob", self.typo_prob)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(OracleError::NotProbability { field, value });
            }
        }
        if !(self.mean_searches_per_session >= 1.0 && self.mean_searches_per_session.is_finite()) {
            return Err(OracleError::MeanSearches(self.mean_searches_per_session));
        }
        if !(self.search_to_filter_ratio_min > 0.0) {
            return Err(OracleError::FilterRatio(self.search_to_filter_ratio_min));
        }
        if self.n_sessions == 0 {
            return Err(OracleError::NoSessions);
        }
        Ok(())
    }

    /// Per-session probability of one filter click. Keeps the expected
    /// search:filter ratio at 1.5x the configured minimum.
    pub fn filter_prob(&self) -> f64 {
        (self.mean_searches_per_session / (1.5 * self.search_to_filter_ratio_min)).min(1.0)
    }
}

/// What a simulated shopper wants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentProfile {
    pub target_tokens: Vec<String>,
    /// Maximum number of actions in the session.
    pub patience: usize,
    pub satisfaction_threshold: f64,
}

impl IntentProfile {
    pub fn satisfied_by(&self, p: &Product) -> bool {
        p.rating >= self.satisfaction_threshold && {
            let toks = p.title_tokens();
            self.target_tokens.iter().all(|t| toks.contains(t))
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of session `index` under dataset seed `seed`:
/// `splitmix64(seed + (index + 1) * 0x9E3779B97F4A7C15)`.
pub fn session_seed(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

pub fn session_id(seed: u64, index: u64) -> String {
    format!("s-{seed}-{index}")
}

/// Every query reachable from `query` by deleting one character (not the
/// first) or swapping two adjacent distinct characters in a word of at least
/// four letters.
pub fn one_edit_typos(query: &str) -> Vec<String> {
    let words: Vec<&str> = query.split(' ').collect();
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (wi, w) in words.iter().enumerate() {
        let chars: Vec<char> = w.chars().collect();
        if chars.len() < 4 {
            continue;
        }
        let mut variants = Vec::new();
        for i in 1..chars.len() {
            let mut c = chars.clone();
            c.remove(i);
            variants.push(c);
        }
        for i in 1..chars.len() - 1 {
            if chars[i] != chars[i + 1] {
                let mut c = chars.clone();
                c.swap(i, i + 1);
                variants.push(c);
            }
        }
        for v in variants {
            let mut ws: Vec<String> = words.iter().map(|s| s.to_string()).collect();
            ws[wi] = v.into_iter().collect();
            let q = ws.join(" ");
            if q != query && seen.insert(q.clone()) {
                out.push(q);
            }
        }
    }
    out
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn dedup_tokens(tokens: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    tokens.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Query tokens for a target product: brand + item, modifier-ish + item, or
/// the item alone.
fn target_tokens(p: &Product, rng: &mut ChaCha8Rng) -> Vec<String> {
    let item = tokenize(&p.item);
    let brand = tokenize(&p.brand);
    let title = tokenize(&p.title);
    let toks = match sample_weighted(rng, &[0.45, 0.35, 0.20]) {
        0 => brand.into_iter().chain(item).collect(),
        1 => {
            // The title word right before the item phrase.
            let pos = title.len().saturating_sub(item.len() + 1);
            title.get(pos).cloned().into_iter().chain(item).collect()
        }
        _ => item,
    };
    dedup_tokens(toks)
}

/// A broader query that `next` refines.
fn broaden(next: &str, p: &Product, rng: &mut ChaCha8Rng) -> String {
    let toks: Vec<&str> = next.split(' ').collect();
    if toks.len() >= 2 {
        return if rng.random_bool(0.5) {
            toks[..toks.len() - 1].join(" ")
        } else {
            toks[1..].join(" ")
        };
    }
    let item = tokenize(&p.item);
    let pool = [
        item.last().cloned().unwrap_or_default(),
        p.category.label().to_lowercase(),
        tokenize(&p.brand).join(" "),
    ];
    pool.iter()
        .find(|q| !q.is_empty() && q.as_str() != next)
        .cloned()
        .unwrap_or_else(|| format!("{next} sale"))
}

struct Plan {
    intent: IntentProfile,
    buyer: bool,
    queries: Vec<String>,
    filter_at: Option<(usize, FilterKind)>,
}

fn plan(shop: &Shop, config: &OracleConfig, rng: &mut ChaCha8Rng) -> Plan {
    let products = shop.catalog().products();
    let buyer = rng.random_bool(config.purchase_rate);
    let target = products.choose(rng).expect("catalog checked non-empty");
    let tokens = target_tokens(target, rng);
    let satisfaction_threshold = if buyer {
        target.rating
    } else {
        let best = products
            .iter()
            .filter(|p| {
                let toks = p.title_tokens();
                tokens.iter().all(|t| toks.contains(t))
            })
            .map(|p| p.rating)
            .fold(0.0, f64::max);
        best + 0.5
    };

    let extra = config.mean_searches_per_session - 1.0;
    let n_searches = if extra > 0.0 {
        1 + Poisson::new(extra).expect("positive rate").sample(rng) as usize
    } else {
        1
    };
    let mut queries = vec![tokens.join(" ")];
    while queries.len() < n_searches {
        let q = broaden(queries.last().expect("non-empty"), target, rng);
        queries.push(q);
    }
    queries.reverse();
    if n_searches >= 2 && rng.random_bool(config.typo_prob) {
        if let Some(t) = one_edit_typos(&queries[1]).choose(rng) {
            queries[0] = t.clone();
        }
    }

    let filter_at = rng.random_bool(config.filter_prob()).then(|| {
        let at = rng.random_range(0..n_searches);
        let final_search = at + 1 == n_searches;
        let mut options = vec![FilterKind::PriceBand(PriceBand::of(target.price))];
        if !buyer || !final_search {
            options.extend(PriceBand::ALL.into_iter().map(FilterKind::PriceBand));
        }
        if target.rating >= 4.0 || !buyer || !final_search {
            options.push(FilterKind::MinRating { stars: 4 });
            options.push(FilterKind::MinRating { stars: 4 });
        }
        (at, *options.choose(rng).expect("non-empty"))
    });

    Plan {
        intent: IntentProfile {
            target_tokens: tokens,
            patience: rng.random_range(PATIENCE),
            satisfaction_threshold,
        },
        buyer,
        queries,
        filter_at,
    }
}

/// Drives the shop and records what the shopper saw and did.
struct Walker<'a> {
    shop: &'a Shop,
    state: ShopState,
    view: View,
    session: Session,
    patience: usize,
    done: bool,
}

impl Walker<'_> {
    /// Performs `action` unless patience only leaves room for the final
    /// terminate, in which case that is emitted instead.
    fn act(&mut self, action: Action) {
        if self.done {
            return;
        }
        let terminal = action == Action::Terminate || action.is_buy_now();
        let action = if !terminal && self.session.steps.len() + 2 > self.patience {
            Action::Terminate
        } else {
            action
        };
        let (state, view) = self
            .shop
            .step_view(&self.state, &self.view, &action)
            .expect("oracle only emits legal actions");
        let ctx = std::mem::replace(&mut self.view, view).context;
        self.session.push(ctx, action.clone());
        self.state = state;
        self.done = self.state.is_terminal();
    }

    fn listed(&self) -> Vec<&Product> {
        self.view
            .listed
            .iter()
            .filter_map(|id| self.shop.catalog().get(id))
            .collect()
    }

    fn page_info(&self) -> Option<(usize, usize)> {
        match &self.state.page {
            Page::Search(s) => Some((s.page_no, self.view.total_pages)),
            _ => None,
        }
    }

    fn view_product(&mut self, p: &Product) {
        let name = self
            .view
            .controls
            .iter()
            .find(|(_, c)| matches!(c, Control::ViewProduct(id) if *id == p.product_id))
            .map(|(n, _)| n.clone())
            .expect("listed products have a link");
        self.act(Action::click(name));
    }

    /// Views up to `n` listed products that do not satisfy the intent,
    /// returning to the results between views. Returns true if the shopper
    /// is left on a product page.
    fn browse(&mut self, n: usize, intent: &IntentProfile, rng: &mut ChaCha8Rng, back_after_last: bool) {
        for i in 0..n {
            if self.done {
                return;
            }
            let candidates: Vec<Product> = self
                .listed()
                .into_iter()
                .filter(|p| !intent.satisfied_by(p))
                .cloned()
                .collect();
            let Some(p) = candidates.choose(rng) else { return };
            self.view_product(p);
            if i + 1 < n || back_after_last {
                self.act(Action::click(BACK_TO_RESULTS));
            }
        }
    }
}

/// Generates the session with dataset index `index`. Reproducible in
/// isolation from `(catalog, config, index)`.
pub fn generate_session(shop: &Shop, config: &OracleConfig, index: u64) -> Session {
    let seed = session_seed(config.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = plan(shop, config, &mut rng);
    let n_users = ((config.n_sessions as f64 * USERS_PER_SESSION).round() as u64).max(1);
    let user_id = format!("u-{}", rng.random_range(0..n_users));
    run_plan(
        shop,
        plan,
        Session::new(session_id(config.seed, index), user_id),
        &mut rng,
    )
}

/// Generates a session for a fixed intent. The shopper buys if its
/// browsing turns up a product that satisfies `intent`.
pub fn generate_session_for(
    shop: &Shop,
    config: &OracleConfig,
    intent: IntentProfile,
    session_seed: u64,
) -> Session {
    let mut rng = ChaCha8Rng::seed_from_u64(session_seed);
    let mut p = plan(shop, config, &mut rng);
    p.buyer = shop.catalog().products().iter().any(|x| intent.satisfied_by(x));
    p.queries = vec![intent.target_tokens.join(" ")];
    p.filter_at = None;
    p.intent = intent;
    run_plan(
        shop,
        p,
        Session::new(format!("s-{}-x", config.seed), "u-0"),
        &mut rng,
    )
}

fn run_plan(shop: &Shop, plan: Plan, session: Session, rng: &mut ChaCha8Rng) -> Session {
    let (state, _) = shop.initial_state();
    let view = shop.view(&state);
    let mut w = Walker {
        shop,
        state,
        view,
        session,
        patience: plan.intent.patience.max(2),
        done: false,
    };
    let intent = &plan.intent;
    let last = plan.queries.len() - 1;
    for (i, q) in plan.queries.iter().enumerate() {
        w.act(Action::type_and_submit(SEARCH_INPUT, q.clone()));
        if let Some((at, kind)) = plan.filter_at {
            if at == i {
                let name = format!("results.filter.{}", filter_control(kind));
                w.act(Action::click(name));
            }
        }
        if i < last {
            if w.page_info().is_some_and(|(p, t)| p < t) && rng.random_bool(P_NEXT_PAGE) {
                w.act(Action::click(NEXT_PAGE));
            }
            let n = sample_weighted(rng, &[0.35, 0.45, 0.20]);
            let back = rng.random_bool(0.5);
            w.browse(n, intent, rng, back);
            continue;
        }
        if plan.buyer {
            let n = sample_weighted(rng, &[0.6, 0.4]);
            w.browse(n, intent, rng, true);
            loop {
                if w.done {
                    break;
                }
                let hit = w.listed().into_iter().find(|p| intent.satisfied_by(p)).cloned();
                if let Some(p) = hit {
                    w.view_product(&p);
                    w.act(Action::click(BUY_NOW));
                    break;
                }
                match w.page_info() {
                    Some((p, t)) if p < t => w.act(Action::click(NEXT_PAGE)),
                    _ => break,
                }
            }
        } else {
            let n = sample_weighted(rng, &[0.3, 0.45, 0.25]);
            let back = rng.random_bool(0.5);
            w.browse(n, intent, rng, back);
        }
    }
    w.act(Action::Terminate);
    w.session
}

fn filter_control(kind: FilterKind) -> String {
    crate::shop::supported_filters()
        .into_iter()
        .find(|f| f.kind == kind)
        .map(|f| f.control_name.last().to_owned())
        .expect("planned filters are supported")
}

/// `config.n_sessions` sessions, generated in parallel, ordered by index.
pub fn generate_dataset(shop: &Shop, config: &OracleConfig) -> Result<Vec<Session>, OracleError> {
    config.validate()?;
    if shop.catalog().is_empty() {
        return Err(OracleError::EmptyCatalog);
    }
    Ok((0..config.n_sessions as u64)
        .into_par_iter()
        .map(|i| generate_session(shop, config, i))
        .collect())
}

/// Counts used to check calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub sessions: usize,
    pub actions: usize,
    pub searches: usize,
    pub filters: usize,
    pub purchases: usize,
    pub terminations: usize,
}

impl DatasetStats {
    pub fn add(&mut self, s: &Session) {
        self.sessions += 1;
        self.actions += s.steps.len();
        for a in s.actions() {
            match ActionCategory::of(a) {
                ActionCategory::Search => self.searches += 1,
                ActionCategory::Filter => self.filters += 1,
                _ => {}
            }
        }
        match crate::session::outcome_of(s) {
            Ok(SessionOutcome::Purchase) => self.purchases += 1,
            Ok(SessionOutcome::Termination) => self.terminations += 1,
            Err(_) => {}
        }
    }

    pub fn merge(mut self, o: DatasetStats) -> Self {
        self.sessions += o.sessions;
        self.actions += o.actions;
        self.searches += o.searches;
        self.filters += o.filters;
        self.purchases += o.purchases;
        self.terminations += o.terminations;
        self
    }

    pub fn of<'a>(sessions: impl IntoIterator<Item = &'a Session>) -> Self {
        let mut st = DatasetStats::default();
        for s in sessions {
            st.add(s);
        }
        st
    }

    pub fn mean_searches(&self) -> f64 {
        self.searches as f64 / self.sessions.max(1) as f64
    }

    pub fn purchase_rate(&self) -> f64 {
        self.purchases as f64 / self.sessions.max(1) as f64
    }

    /// Infinite when no filter was clicked.
    pub fn search_to_filter(&self) -> f64 {
        self.searches as f64 / self.filters as f64
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::session::validate_session;
    use crate::shop::gen_catalog;

    fn shop() -> Shop {
        Shop::new(Arc::new(gen_catalog(7, 300)))
    }

    fn searches(s: &Session) -> Vec<String> {
        s.actions()
            .filter(|a| ActionCategory::of(a) == ActionCategory::Search)
            .map(|a| a.text().unwrap().to_owned())
            .collect()
    }

    #[test]
    fn sessions_are_valid_and_replayable() {
        let shop = shop();
        let cfg = OracleConfig {
            n_sessions: 300,
            seed: 3,
            ..Default::default()
        };
        for s in generate_dataset(&shop, &cfg).unwrap() {
            assert_eq!(validate_session(&s), vec![], "{}", s.session_id);
            let (mut st, ctx) = shop.initial_state();
            assert_eq!(ctx, s.steps[0].context);
            for (i, step) in s.steps.iter().enumerate() {
                let (next, ctx) = shop.step(&st, &step.action).unwrap();
                if let Some(n) = s.steps.get(i + 1) {
                    assert_eq!(n.context, ctx);
                }
                st = next;
            }
            assert!(st.is_terminal());
        }
    }

    #[test]
    fn reproducible_in_isolation() {
        let shop = shop();
        let cfg = OracleConfig {
            n_sessions: 20,
            seed: 11,
            ..Default::default()
        };
        let all = generate_dataset(&shop, &cfg).unwrap();
        assert_eq!(generate_session(&shop, &cfg, 13), all[13]);
        assert_eq!(all[13].session_id, "s-11-13");
        assert_eq!(generate_dataset(&shop, &cfg).unwrap(), all);
    }

    #[test]
    fn typo_table_example_is_reachable() {
        let t = one_edit_typos("tee connector");
        assert!(t.contains(&"tee conector".to_owned()));
        assert!(!t.contains(&"tee connector".to_owned()));
        // Short words are left alone.
        assert!(t.iter().all(|q| q.starts_with("tee ")));
        assert!(one_edit_typos("hat").is_empty());
    }

    #[test]
    fn typo_and_refinement_branches_appear() {
        let shop = shop();
        let cfg = OracleConfig {
            n_sessions: 400,
            seed: 5,
            typo_prob: 0.5,
            ..Default::default()
        };
        let data = generate_dataset(&shop, &cfg).unwrap();
        let mut typo_pairs = 0;
        let mut refinements = 0;
        for s in &data {
            let q = searches(s);
            for w in q.windows(2) {
                if one_edit_typos(&w[1]).contains(&w[0]) {
                    typo_pairs += 1;
                }
                let a: Vec<&str> = w[0].split(' ').collect();
                let b: Vec<&str> = w[1].split(' ').collect();
                if b.len() == a.len() + 1 && (b[..a.len()] == a[..] || b[1..] == a[..]) {
                    refinements += 1;
                }
            }
            // A typo only ever opens a session.
            for (i, w) in q.windows(2).enumerate() {
                if one_edit_typos(&w[1]).contains(&w[0]) {
                    assert_eq!(i, 0);
                }
            }
        }
        assert!(typo_pairs > 20, "{typo_pairs}");
        assert!(refinements > 20, "{refinements}");
    }

    #[test]
    fn exhausted_patience_without_satisfaction_terminates() {
        let shop = shop();
        let cfg = OracleConfig::default();
        let intent = IntentProfile {
            target_tokens: vec!["gift".into(), "card".into()],
            patience: 3,
            satisfaction_threshold: 6.0,
        };
        let s = generate_session_for(&shop, &cfg, intent, 99);
        assert!(s.steps.len() <= 3);
        assert_eq!(s.steps.last().unwrap().action, Action::Terminate);
        assert_eq!(validate_session(&s), vec![]);
    }

    #[test]
    fn satisfiable_intent_buys() {
        let shop = shop();
        let target = shop
            .catalog()
            .products()
            .iter()
            .find(|p| p.item == "Gift Card")
            .unwrap()
            .clone();
        let intent = IntentProfile {
            target_tokens: tokenize(&format!("{} {}", target.brand, target.item)),
            patience: 50,
            satisfaction_threshold: target.rating,
        };
        let s = generate_session_for(&shop, &OracleConfig::default(), intent.clone(), 1);
        assert_eq!(
            crate::session::outcome_of(&s),
            Ok(SessionOutcome::Purchase)
        );
        assert_eq!(s.steps[0].action.text(), Some(intent.target_tokens.join(" ").as_str()));
    }

    #[test]
    fn config_validation() {
        let bad = OracleConfig {
            purchase_rate: 1.5,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(OracleError::NotProbability { .. })));
        let bad = OracleConfig {
            mean_searches_per_session: 0.5,
            ..Default::default()
        };
        assert_eq!(bad.validate(), Err(OracleError::MeanSearches(0.5)));
        assert!(OracleConfig::default().validate().is_ok());
        assert!((OracleConfig::default().purchase_rate - 0.1391).abs() < 1e-4);
    }

    #[test]
    fn seed_mixing_is_spread() {
        let a: HashSet<u64> = (0..1000).map(|i| session_seed(1, i)).collect();
        assert_eq!(a.len(), 1000);
        assert_ne!(session_seed(1, 0), session_seed(2, 0));
    }
}
