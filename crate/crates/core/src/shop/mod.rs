//! Deterministic simulated storefront.
//!
//! A [`Shop`] is a pure state machine over a read-only [`Catalog`]: the
//! landing page, ranked search results with filters and pagination, and
//! product pages with a buy-now button. Each state renders to a
//! [`SimplifiedContext`] whose control names follow fixed conventions:
//!
//! - `search_bar.search_input`
//! - `results.filter.rating_4_up`, `results.filter.price_*`
//! - `results.prev_page`, `results.next_page`
//! - `results.<product_slug>.view_product`
//! - `product_page.buy_now`, `product_page.back_to_results`

mod catalog;
mod pages;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use catalog::{gen_catalog, rank, tokenize, Catalog, CatalogError, Category, Price, Product};

use crate::html::{NamePath, SimplifiedContext};
use crate::session::{Action, SessionOutcome};

/// Results per search page.
pub const PAGE_SIZE: usize = 10;

pub const SEARCH_INPUT: &str = "search_bar.search_input";
pub const BUY_NOW: &str = "product_page.buy_now";
pub const BACK_TO_RESULTS: &str = "product_page.back_to_results";
pub const NEXT_PAGE: &str = "results.next_page";
pub const PREV_PAGE: &str = "results.prev_page";
pub const FILTER_PREFIX: &str = "results.filter.";

/// Name of a product's result-card link.
pub fn view_product_name(p: &Product) -> String {
    format!("results.{}.view_product", p.slug())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceBand {
    Under25,
    From25To50,
    From50To100,
    Over100,
}

impl PriceBand {
    pub const ALL: [PriceBand; 4] = [
        PriceBand::Under25,
        PriceBand::From25To50,
        PriceBand::From50To100,
        PriceBand::Over100,
    ];

    /// Half-open bounds in cents; `hi = None` is unbounded.
    pub fn bounds(self) -> (u64, Option<u64>) {
        match self {
            PriceBand::Under25 => (0, Some(2_500)),
            PriceBand::From25To50 => (2_500, Some(5_000)),
            PriceBand::From50To100 => (5_000, Some(10_000)),
            PriceBand::Over100 => (10_000, None),
        }
    }

    pub fn contains(self, price: Price) -> bool {
        let (lo, hi) = self.bounds();
        price.cents() >= lo && hi.is_none_or(|h| price.cents() < h)
    }

    pub fn of(price: Price) -> PriceBand {
        PriceBand::ALL
            .into_iter()
            .find(|b| b.contains(price))
            .expect("bands cover all prices")
    }

    fn control(self) -> &'static str {
        match self {
            PriceBand::Under25 => "price_under_25",
            PriceBand::From25To50 => "price_25_to_50",
            PriceBand::From50To100 => "price_50_to_100",
            PriceBand::Over100 => "price_100_up",
        }
    }

    fn label(self) -> &'static str {
        match self {
            PriceBand::Under25 => "Under $25",
            PriceBand::From25To50 => "$25 to $50",
            PriceBand::From50To100 => "$50 to $100",
            PriceBand::Over100 => "$100 & Above",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    MinRating { stars: u8 },
    PriceBand(PriceBand),
}

impl FilterKind {
    pub fn admits(self, p: &Product) -> bool {
        match self {
            FilterKind::MinRating { stars } => p.rating >= f64::from(stars),
            FilterKind::PriceBand(b) => b.contains(p.price),
        }
    }

    fn control(self) -> &'static str {
        match self {
            FilterKind::MinRating { .. } => "rating_4_up",
            FilterKind::PriceBand(b) => b.control(),
        }
    }

    fn label(self) -> &'static str {
        match self {
            FilterKind::MinRating { .. } => "4 Stars & Up",
            FilterKind::PriceBand(b) => b.label(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub control_name: NamePath,
}

/// The filters offered on every search page.
pub fn supported_filters() -> Vec<FilterSpec> {
    std::iter::once(FilterKind::MinRating { stars: 4 })
        .chain(PriceBand::ALL.into_iter().map(FilterKind::PriceBand))
        .map(|kind| FilterSpec {
            kind,
            control_name: format!("{FILTER_PREFIX}{}", kind.control())
                .parse()
                .expect("control names are valid"),
        })
        .collect()
}

/// At most one rating and one price filter are active.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActiveFilters {
    pub min_rating: Option<u8>,
    pub price_band: Option<PriceBand>,
}

impl ActiveFilters {
    pub fn admits(&self, p: &Product) -> bool {
        self.min_rating
            .is_none_or(|stars| FilterKind::MinRating { stars }.admits(p))
            && self.price_band.is_none_or(|b| b.contains(p.price))
    }

    pub fn is_active(&self, kind: FilterKind) -> bool {
        match kind {
            FilterKind::MinRating { stars } => self.min_rating == Some(stars),
            FilterKind::PriceBand(b) => self.price_band == Some(b),
        }
    }

    /// Clicking an active filter clears it; a new price band replaces the old.
    pub fn toggle(mut self, kind: FilterKind) -> Self {
        match kind {
            FilterKind::MinRating { stars } => {
                self.min_rating = if self.min_rating == Some(stars) { None } else { Some(stars) };
            }
            FilterKind::PriceBand(b) => {
                self.price_band = if self.price_band == Some(b) { None } else { Some(b) };
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SearchView {
    pub query: String,
    pub filters: ActiveFilters,
    pub page_no: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "page", rename_all = "snake_case")]
pub enum Page {
    Landing,
    Search(SearchView),
    ProductDetail {
        product_id: String,
        back: Option<SearchView>,
    },
    Finished {
        outcome: SessionOutcome,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShopState {
    pub page: Page,
    /// Number of actions taken so far.
    pub history_depth: usize,
}

impl ShopState {
    pub fn is_terminal(&self) -> bool {
        matches!(self.page, Page::Finished { .. })
    }
}

/// What a named control does when clicked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Control {
    SearchInput,
    Filter(FilterKind),
    PrevPage,
    NextPage,
    ViewProduct(String),
    BuyNow,
    BackToResults,
}

/// A rendered state: the context plus the meaning of each control in it.
#[derive(Debug, Clone)]
pub struct View {
    pub context: SimplifiedContext,
    pub controls: HashMap<String, Control>,
    /// Products listed on a search page, in display order.
    pub listed: Vec<String>,
    pub total_pages: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum IllegalAction {
    #[error("`{0}` does not name a control on the current page")]
    UnknownTarget(String),
    #[error("cannot type into `{0}`, which is not an input")]
    TextToNonInput(String),
    #[error("the session already ended")]
    AfterTerminal,
}

#[derive(Debug, Clone)]
pub struct Shop {
    catalog: Arc<Catalog>,
}

impl Shop {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        Shop { catalog }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// The landing page, which offers only the search input.
    pub fn initial_state(&self) -> (ShopState, SimplifiedContext) {
        let state = ShopState {
            page: Page::Landing,
            history_depth: 0,
        };
        let ctx = self.view(&state).context;
        (state, ctx)
    }

    /// Ranked and filtered results for a search, before pagination.
    pub fn results(&self, search: &SearchView) -> Vec<&Product> {
        if search.query.trim().is_empty() {
            return Vec::new();
        }
        rank(&self.catalog, &search.query)
            .into_iter()
            .filter(|p| search.filters.admits(p))
            .collect()
    }

    pub fn view(&self, state: &ShopState) -> View {
        pages::render_state(self, state)
    }

    /// Applies `action` to `state`. Pure: the same inputs always give the
    /// same outputs.
    pub fn step(
        &self,
        state: &ShopState,
        action: &Action,
    ) -> Result<(ShopState, SimplifiedContext), IllegalAction> {
        let next = self.transition(state, &self.view(state), action)?;
        let ctx = self.view(&next).context;
        Ok((next, ctx))
    }

    /// Like [`Shop::step`] but reuses an already rendered view of `state`
    /// and returns the full next view.
    pub fn step_view(
        &self,
        state: &ShopState,
        view: &View,
        action: &Action,
    ) -> Result<(ShopState, View), IllegalAction> {
        let next = self.transition(state, view, action)?;
        let v = self.view(&next);
        Ok((next, v))
    }

    fn transition(
        &self,
        state: &ShopState,
        view: &View,
        action: &Action,
    ) -> Result<ShopState, IllegalAction> {
        if state.is_terminal() {
            return Err(IllegalAction::AfterTerminal);
        }
        let page = match action {
            Action::Terminate => Page::Finished {
                outcome: SessionOutcome::Termination,
            },
            Action::TypeAndSubmit { name, text } => match view.controls.get(name) {
                Some(Control::SearchInput) => Page::Search(SearchView {
                    query: text.clone(),
                    filters: ActiveFilters::default(),
                    page_no: 1,
                }),
                Some(_) => return Err(IllegalAction::TextToNonInput(name.clone())),
                None => return Err(IllegalAction::UnknownTarget(name.clone())),
            },
            Action::Click { name } => {
                let control = view
                    .controls
                    .get(name)
                    .ok_or_else(|| IllegalAction::UnknownTarget(name.clone()))?;
                self.click(state, view, control)
            }
        };
        Ok(ShopState {
            page,
            history_depth: state.history_depth + 1,
        })
    }

    fn click(&self, state: &ShopState, view: &View, control: &Control) -> Page {
        let current_search = match &state.page {
            Page::Search(s) => Some(s.clone()),
            _ => None,
        };
        match (control, current_search) {
            (Control::Filter(kind), Some(s)) => Page::Search(SearchView {
                filters: s.filters.toggle(*kind),
                page_no: 1,
                ..s
            }),
            (Control::NextPage, Some(s)) => Page::Search(SearchView {
                page_no: (s.page_no + 1).min(view.total_pages.max(1)),
                ..s
            }),
            (Control::PrevPage, Some(s)) => Page::Search(SearchView {
                page_no: s.page_no.saturating_sub(1).max(1),
                ..s
            }),
            (Control::ViewProduct(id), back) => Page::ProductDetail {
                product_id: id.clone(),
                back,
            },
            (Control::BuyNow, _) => Page::Finished {
                outcome: SessionOutcome::Purchase,
            },
            (Control::BackToResults, _) => match &state.page {
                Page::ProductDetail { back: Some(s), .. } => Page::Search(s.clone()),
                _ => Page::Landing,
            },
            // Focusing the search box, or a search control rendered outside a
            // search page, changes nothing.
            _ => state.page.clone(),
        }
    }
}
