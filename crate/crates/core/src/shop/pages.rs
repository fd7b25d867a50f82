use std::collections::HashMap;

use super::{
    supported_filters, view_product_name, Category, Control, Page, Product, SearchView, Shop,
    ShopState, View, BACK_TO_RESULTS, BUY_NOW, NEXT_PAGE, PAGE_SIZE, PREV_PAGE, SEARCH_INPUT,
};
use crate::html::{assign_names, ContextNode, SimplifiedContext, Tag};
use crate::session::SessionOutcome;

fn search_bar(query: &str) -> ContextNode {
    let mut input = ContextNode::new(Tag::Input)
        .named("search_input")
        .with_attr("placeholder", "Search products")
        .with_attr("type", "text");
    if !query.is_empty() {
        input = input.with_attr("value", query);
    }
    ContextNode::new(Tag::Div)
        .named("search_bar")
        .with_child(input)
}

fn rating_line(p: &Product) -> String {
    format!("{:.1} out of 5 stars ({} ratings)", p.rating, p.review_count)
}

fn result_card(p: &Product) -> ContextNode {
    ContextNode::new(Tag::Li).with_child(
        ContextNode::new(Tag::Div)
            .named(&p.slug())
            .with_child(
                ContextNode::new(Tag::A)
                    .named("view_product")
                    .with_text(&p.title),
            )
            .with_child(ContextNode::new(Tag::Span).with_text(&p.price.to_string()))
            .with_child(ContextNode::new(Tag::Span).with_text(&rating_line(p))),
    )
}

pub(super) fn render_state(shop: &Shop, state: &ShopState) -> View {
    let mut controls = HashMap::new();
    let mut listed = Vec::new();
    let mut total_pages = 0;
    let mut body = ContextNode::new(Tag::Body);

    match &state.page {
        Page::Landing => {
            controls.insert(SEARCH_INPUT.to_owned(), Control::SearchInput);
            body.push(search_bar(""));
            body.push(ContextNode::new(Tag::H1).with_text("What are you shopping for today?"));
            body.push(
                ContextNode::new(Tag::Ul).with_children(
                    Category::ALL
                        .iter()
                        .map(|c| ContextNode::new(Tag::Li).with_text(c.label())),
                ),
            );
        }
        Page::Search(sv) => {
            controls.insert(SEARCH_INPUT.to_owned(), Control::SearchInput);
            body.push(search_bar(&sv.query));
            let results = shop.results(sv);
            total_pages = results.len().div_ceil(PAGE_SIZE).max(1);
            let page_no = sv.page_no.clamp(1, total_pages);
            let shown: Vec<&Product> = results
                .iter()
                .skip((page_no - 1) * PAGE_SIZE)
                .take(PAGE_SIZE)
                .copied()
                .collect();
            body.push(search_results(sv, &shown, results.len(), page_no, total_pages));
            for f in supported_filters() {
                controls.insert(f.control_name.to_string(), Control::Filter(f.kind));
            }
            controls.insert(PREV_PAGE.to_owned(), Control::PrevPage);
            controls.insert(NEXT_PAGE.to_owned(), Control::NextPage);
            for p in &shown {
                controls.insert(view_product_name(p), Control::ViewProduct(p.product_id.clone()));
                listed.push(p.product_id.clone());
            }
        }
        Page::ProductDetail { product_id, back } => {
            controls.insert(SEARCH_INPUT.to_owned(), Control::SearchInput);
            controls.insert(BUY_NOW.to_owned(), Control::BuyNow);
            controls.insert(BACK_TO_RESULTS.to_owned(), Control::BackToResults);
            body.push(search_bar(back.as_ref().map(|b| b.query.as_str()).unwrap_or("")));
            let p = shop.catalog().get(product_id);
            body.push(product_page(p, product_id));
        }
        Page::Finished { outcome } => {
            let msg = match outcome {
                SessionOutcome::Purchase => "Thank you! Your order has been placed.",
                SessionOutcome::Termination => "The browser window was closed.",
            };
            body.push(ContextNode::new(Tag::H1).with_text(msg));
        }
    }

    let context = assign_names(SimplifiedContext::new(
        ContextNode::new(Tag::Html).with_child(body),
    ));
    debug_assert!(controls.keys().all(|n| context.resolve(n).is_some()));
    View {
        context,
        controls,
        listed,
        total_pages,
    }
}

fn search_results(
    sv: &SearchView,
    shown: &[&Product],
    n_results: usize,
    page_no: usize,
    total_pages: usize,
) -> ContextNode {
    let mut results = ContextNode::new(Tag::Div).named("results");
    if n_results == 0 {
        results.push(
            ContextNode::new(Tag::H2).with_text(&format!("No results for \"{}\"", sv.query)),
        );
    } else {
        let first = (page_no - 1) * PAGE_SIZE + 1;
        results.push(
            ContextNode::new(Tag::H2).with_text(&format!(
                "{first}-{} of {n_results} results for \"{}\"",
                first + shown.len() - 1,
                sv.query
            )),
        );
    }

    let mut filters = ContextNode::new(Tag::Div)
        .named("filter")
        .with_child(ContextNode::new(Tag::Span).with_text("Filter by"));
    for f in supported_filters() {
        let pressed = if sv.filters.is_active(f.kind) { "true" } else { "false" };
        filters.push(
            ContextNode::new(Tag::Button)
                .named(f.control_name.last())
                .with_attr("aria-pressed", pressed)
                .with_text(f.kind.label()),
        );
    }
    results.push(filters);

    if !shown.is_empty() {
        results.push(ContextNode::new(Tag::Ul).with_children(shown.iter().map(|p| result_card(p))));
    }

    let mut prev = ContextNode::new(Tag::Button)
        .named("prev_page")
        .with_text("Previous");
    if page_no <= 1 {
        prev = prev.with_attr("disabled", "");
    }
    let mut next = ContextNode::new(Tag::Button).named("next_page").with_text("Next");
    if page_no >= total_pages {
        next = next.with_attr("disabled", "");
    }
    results.push(
        ContextNode::new(Tag::Div)
            .with_child(ContextNode::new(Tag::Span).with_text(&format!("Page {page_no} of {total_pages}")))
            .with_child(prev)
            .with_child(next),
    );
    results
}

fn product_page(p: Option<&Product>, product_id: &str) -> ContextNode {
    let mut page = ContextNode::new(Tag::Div).named("product_page");
    match p {
        Some(p) => {
            page.push(ContextNode::new(Tag::H1).with_text(&p.title));
            page.push(ContextNode::new(Tag::P).with_text(&format!("by {}", p.brand)));
            page.push(
                ContextNode::new(Tag::Table)
                    .with_child(
                        ContextNode::new(Tag::Tr)
                            .with_child(ContextNode::new(Tag::Th).with_text("Price"))
                            .with_child(ContextNode::new(Tag::Td).with_text(&p.price.to_string())),
                    )
                    .with_child(
                        ContextNode::new(Tag::Tr)
                            .with_child(ContextNode::new(Tag::Th).with_text("Rating"))
                            .with_child(ContextNode::new(Tag::Td).with_text(&rating_line(p))),
                    )
                    .with_child(
                        ContextNode::new(Tag::Tr)
                            .with_child(ContextNode::new(Tag::Th).with_text("Category"))
                            .with_child(ContextNode::new(Tag::Td).with_text(p.category.label())),
                    ),
            );
            page.push(ContextNode::new(Tag::P).with_text(&p.description));
        }
        None => {
            page.push(ContextNode::new(Tag::H1).with_text(&format!("Product {product_id} is unavailable")));
        }
    }
    page.push(ContextNode::new(Tag::Button).named("buy_now").with_text("Buy Now"));
    page.push(
        ContextNode::new(Tag::A)
            .named("back_to_results")
            .with_text("Back to results"),
    );
    page
}
