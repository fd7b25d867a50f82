use std::collections::BTreeMap;

use super::naming::assign_names;
use super::parse::{parse, RawElement, RawNode};
use super::{collapse_whitespace, ContextNode, HtmlError, NamePath, SimplifiedContext, Tag};

/// Deepest level (root = 0) at which non-interactable elements are kept.
/// Below it, containers are flattened into their nearest kept ancestor.
pub const MAX_DEPTH: usize = 32;

/// Dropped together with everything inside them.
const DROPPED: &[&str] = &[
    "script", "style", "head", "title", "meta", "link", "base", "noscript", "template", "svg",
    "canvas", "iframe", "object", "embed", "video", "audio", "picture", "source", "track", "map",
    "math", "br", "hr", "wbr",
];

/// Attributes carried into the simplified tree.
const RETAINED_ATTRS: &[&str] = &[
    "aria-pressed",
    "checked",
    "colspan",
    "disabled",
    "placeholder",
    "rowspan",
    "selected",
    "type",
    "value",
];

/// Removed when they end up with neither text nor children.
fn prunable_when_empty(tag: Tag) -> bool {
    matches!(
        tag,
        Tag::Div
            | Tag::Span
            | Tag::P
            | Tag::H1
            | Tag::H2
            | Tag::H3
            | Tag::H4
            | Tag::H5
            | Tag::H6
            | Tag::Form
            | Tag::Label
    )
}

fn is_hidden(el: &RawElement) -> bool {
    el.attr("hidden").is_some()
        || el.attr("aria-hidden").is_some_and(|v| v.eq_ignore_ascii_case("true"))
        || (el.tag == "input" && el.attr("type").is_some_and(|v| v.eq_ignore_ascii_case("hidden")))
}

/// Simplifies markup: prune, then assign hierarchical names.
pub fn simplify(raw: &str) -> SimplifiedContext {
    assign_names(prune(raw))
}

/// Like [`simplify`], for bytes that may not be valid UTF-8.
pub fn simplify_bytes(raw: &[u8]) -> Result<SimplifiedContext, HtmlError> {
    Ok(simplify(std::str::from_utf8(raw)?))
}

/// Prunes markup to the allowed tag set without assigning final names.
/// Nodes carry their local names (from `name`, `id` or `aria-label`).
pub fn prune(raw: &str) -> SimplifiedContext {
    let doc = parse(raw);
    let mut root = ContextNode::new(Tag::Html);
    let mut text = Vec::new();
    convert_children(&doc, 1, &mut text, &mut root.children);
    root.text = collapse_whitespace(&text.join(" "));
    SimplifiedContext { root }
}

/// Converts `nodes` (children of an element kept at `depth - 1`) into
/// kept nodes, pushing text that belongs to the parent into `text`.
fn convert_children<'a>(
    nodes: &'a [RawNode],
    depth: usize,
    text: &mut Vec<&'a str>,
    out: &mut Vec<ContextNode>,
) {
    for node in nodes {
        match node {
            RawNode::Text(t) => text.push(t),
            RawNode::Element(el) => convert_element(el, depth, text, out),
        }
    }
}

fn convert_element<'a>(
    el: &'a RawElement,
    depth: usize,
    text: &mut Vec<&'a str>,
    out: &mut Vec<ContextNode>,
) {
    if DROPPED.contains(&el.tag.as_str()) || is_hidden(el) {
        return;
    }
    let tag = match Tag::from_name(&el.tag) {
        // The root is always synthetic; nested html elements are unwrapped.
        Some(Tag::Html) | None => None,
        Some(t) => Some(t),
    };
    let keep = match tag {
        Some(t) => t.is_interactable() || depth <= MAX_DEPTH,
        None => false,
    };
    if !keep {
        convert_children(&el.children, depth, text, out);
        return;
    }
    let tag = tag.expect("kept elements have a tag");

    if tag == Tag::Img {
        let alt = collapse_whitespace(el.attr("alt").unwrap_or_default());
        if !alt.is_empty() {
            let mut node = ContextNode::new(Tag::Img);
            node.text = alt;
            out.push(node);
        }
        return;
    }

    let mut node = ContextNode::new(tag);
    let mut own_text = Vec::new();
    convert_children(&el.children, depth + 1, &mut own_text, &mut node.children);
    node.text = collapse_whitespace(&own_text.join(" "));
    node.attrs = el
        .attrs
        .iter()
        .filter(|(k, _)| RETAINED_ATTRS.contains(&k.as_str()))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect::<BTreeMap<_, _>>();
    node.name = local_name(el);

    if !tag.is_interactable()
        && prunable_when_empty(tag)
        && node.text.is_empty()
        && node.children.is_empty()
    {
        return;
    }
    out.push(node);
}

/// Local name source priority: `name` (dotted), then `id`, then `aria-label`.
fn local_name(el: &RawElement) -> Option<NamePath> {
    if let Some(n) = el.attr("name").and_then(NamePath::sanitize_dotted) {
        return Some(n);
    }
    ["id", "aria-label"]
        .iter()
        .find_map(|k| el.attr(k).and_then(NamePath::sanitize_single))
}
