use std::collections::HashSet;

use super::{ContextNode, NamePath, SimplifiedContext, Tag};

/// Longest allowed name segment, including any collision suffix.
pub const MAX_SEGMENT_LEN: usize = 40;

/// Lowercases, maps every non-alphanumeric run to a single `_`, trims
/// underscores at both ends and truncates to [`MAX_SEGMENT_LEN`].
/// Identity on strings that are already valid segments of that length.
pub fn sanitize_segment(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len().min(MAX_SEGMENT_LEN + 1));
    let mut pending_sep = false;
    for c in raw.chars() {
        if c.is_ascii_alphanumeric() {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.push(c.to_ascii_lowercase());
            if out.len() >= MAX_SEGMENT_LEN {
                break;
            }
        } else {
            pending_sep = true;
        }
    }
    out.truncate(MAX_SEGMENT_LEN);
    while out.ends_with('_') {
        out.pop();
    }
    out
}

fn with_suffix(base: &str, k: usize) -> String {
    let suffix = format!("_{k}");
    let mut b = base.to_owned();
    b.truncate(MAX_SEGMENT_LEN.saturating_sub(suffix.len()));
    while b.ends_with('_') {
        b.pop();
    }
    b + &suffix
}

fn fallback_name(node: &ContextNode) -> NamePath {
    let from_text = NamePath::sanitize_single(&node.inner_text());
    let derived = match node.tag {
        Tag::Input => from_text
            .or_else(|| node.attrs.get("placeholder").and_then(|p| NamePath::sanitize_single(p)))
            .or_else(|| node.attrs.get("type").and_then(|t| NamePath::sanitize_single(t))),
        _ => from_text,
    };
    derived.unwrap_or_else(|| {
        let tag = match node.tag {
            Tag::A => "link",
            other => other.as_str(),
        };
        NamePath::from_segments([tag]).expect("tag names are valid segments")
    })
}

/// Gives every interactable a unique hierarchical name built from the local
/// names of its non-interactable ancestors plus its own local name (or one
/// derived from its text). Collisions get `_2`, `_3`, … suffixes in
/// document order. Container names are consumed and cleared.
///
/// Idempotent: a tree that already went through naming is returned
/// unchanged.
pub fn assign_names(mut ctx: SimplifiedContext) -> SimplifiedContext {
    let mut used = HashSet::new();
    let mut prefix = Vec::new();
    name_node(&mut ctx.root, &mut prefix, &mut used);
    ctx
}

fn name_node(node: &mut ContextNode, prefix: &mut Vec<String>, used: &mut HashSet<String>) {
    if node.tag.is_interactable() {
        let local = node.name.take().unwrap_or_else(|| fallback_name(node));
        let full = match NamePath::from_segments(prefix.iter().cloned()) {
            Some(p) => p.join(&local),
            None => local,
        };
        let mut candidate = full.clone();
        let mut k = 2;
        while !used.insert(candidate.to_string()) {
            candidate = full.with_last(with_suffix(full.last(), k));
            k += 1;
        }
        node.name = Some(candidate);
        for child in &mut node.children {
            name_node(child, prefix, used);
        }
    } else {
        let pushed = match node.name.take() {
            Some(local) => {
                let n = local.segments().len();
                prefix.extend(local.segments().iter().cloned());
                n
            }
            None => 0,
        };
        for child in &mut node.children {
            name_node(child, prefix, used);
        }
        prefix.truncate(prefix.len() - pushed);
    }
}
