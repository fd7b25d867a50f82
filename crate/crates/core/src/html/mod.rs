//! Simplified-HTML observation contexts.
//!
//! Raw markup is parsed leniently, pruned down to a small set of structural
//! and interactable tags, and every link, button and input receives a unique
//! hierarchical `name` built from the local names of its enclosing
//! containers (`columbia_shirt.view_product`). The canonical rendering is
//! plain indented HTML that parses back to the same tree.

mod naming;
mod parse;
mod render;
mod simplify;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use naming::{assign_names, sanitize_segment, MAX_SEGMENT_LEN};
pub use render::render;
pub use simplify::{prune, simplify, simplify_bytes, MAX_DEPTH};

#[derive(Debug, thiserror::Error)]
pub enum HtmlError {
    #[error("markup is not valid UTF-8: {0}")]
    InvalidUtf8(#[from] std::str::Utf8Error),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("invalid name path `{0}`")]
pub struct InvalidNamePath(pub String);

/// Tags that survive simplification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Html,
    Body,
    Div,
    Span,
    P,
    H1,
    H2,
    H3,
    H4,
    H5,
    H6,
    Ul,
    Ol,
    Li,
    Table,
    Tr,
    Td,
    Th,
    A,
    Button,
    Input,
    Form,
    Label,
    Img,
}

impl Tag {
    pub fn from_name(name: &str) -> Option<Tag> {
        Some(match name {
            "html" => Tag::Html,
            "body" => Tag::Body,
            "div" => Tag::Div,
            "span" => Tag::Span,
            "p" => Tag::P,
            "h1" => Tag::H1,
            "h2" => Tag::H2,
            "h3" => Tag::H3,
            "h4" => Tag::H4,
            "h5" => Tag::H5,
            "h6" => Tag::H6,
            "ul" => Tag::Ul,
            "ol" => Tag::Ol,
            "li" => Tag::Li,
            "table" => Tag::Table,
            "tr" => Tag::Tr,
            "td" => Tag::Td,
            "th" => Tag::Th,
            "a" => Tag::A,
            "button" => Tag::Button,
            "input" => Tag::Input,
            "form" => Tag::Form,
            "label" => Tag::Label,
            "img" => Tag::Img,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Html => "html",
            Tag::Body => "body",
            Tag::Div => "div",
            Tag::Span => "span",
            Tag::P => "p",
            Tag::H1 => "h1",
            Tag::H2 => "h2",
            Tag::H3 => "h3",
            Tag::H4 => "h4",
            Tag::H5 => "h5",
            Tag::H6 => "h6",
            Tag::Ul => "ul",
            Tag::Ol => "ol",
            Tag::Li => "li",
            Tag::Table => "table",
            Tag::Tr => "tr",
            Tag::Td => "td",
            Tag::Th => "th",
            Tag::A => "a",
            Tag::Button => "button",
            Tag::Input => "input",
            Tag::Form => "form",
            Tag::Label => "label",
            Tag::Img => "img",
        }
    }

    pub fn interactable_kind(self) -> Option<InteractableKind> {
        match self {
            Tag::A => Some(InteractableKind::Link),
            Tag::Button => Some(InteractableKind::Button),
            Tag::Input => Some(InteractableKind::Input),
            _ => None,
        }
    }

    pub fn is_interactable(self) -> bool {
        self.interactable_kind().is_some()
    }

    /// Elements rendered without a closing tag.
    pub fn is_void(self) -> bool {
        matches!(self, Tag::Input | Tag::Img)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractableKind {
    Link,
    Button,
    Input,
}

/// Dot-separated hierarchical element name. Every segment matches
/// `[a-z0-9_]+`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NamePath(Vec<String>);

impl NamePath {
    /// Builds a path from already-sanitized segments, skipping empty ones.
    /// Returns `None` if nothing remains.
    pub fn from_segments<I, S>(segments: I) -> Option<NamePath>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segs: Vec<String> = segments
            .into_iter()
            .map(Into::into)
            .filter(|s: &String| !s.is_empty())
            .collect();
        if segs.is_empty() || !segs.iter().all(|s| is_valid_segment(s)) {
            return None;
        }
        Some(NamePath(segs))
    }

    /// Sanitizes a dotted source string (e.g. a `name` attribute) segment by
    /// segment.
    pub fn sanitize_dotted(raw: &str) -> Option<NamePath> {
        NamePath::from_segments(raw.split('.').map(sanitize_segment))
    }

    /// Sanitizes free text into a single-segment path.
    pub fn sanitize_single(raw: &str) -> Option<NamePath> {
        NamePath::from_segments([sanitize_segment(raw)])
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn last(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or_default()
    }

    pub fn join(&self, other: &NamePath) -> NamePath {
        let mut segs = self.0.clone();
        segs.extend(other.0.iter().cloned());
        NamePath(segs)
    }

    pub(crate) fn with_last(&self, last: String) -> NamePath {
        let mut segs = self.0.clone();
        if let Some(l) = segs.last_mut() {
            *l = last;
        }
        NamePath(segs)
    }

    /// True if the rendered form equals `rendered`, without allocating.
    pub fn matches(&self, rendered: &str) -> bool {
        let mut parts = rendered.split('.');
        for seg in &self.0 {
            match parts.next() {
                Some(p) if p == seg => {}
                _ => return false,
            }
        }
        parts.next().is_none()
    }
}

fn is_valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl fmt::Display for NamePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            f.write_str(seg)?;
        }
        Ok(())
    }
}

impl FromStr for NamePath {
    type Err = InvalidNamePath;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let segs: Vec<String> = s.split('.').map(str::to_owned).collect();
        if segs.iter().all(|seg| is_valid_segment(seg)) {
            Ok(NamePath(segs))
        } else {
            Err(InvalidNamePath(s.to_owned()))
        }
    }
}

impl Serialize for NamePath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NamePath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One retained element of a simplified context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContextNode {
    pub tag: Tag,
    /// Local name before [`assign_names`]; the full hierarchical name on
    /// interactables afterwards. Containers carry no name once naming is done.
    pub name: Option<NamePath>,
    /// Whitespace-collapsed direct text (for `img`, the alt text).
    pub text: String,
    pub attrs: BTreeMap<String, String>,
    pub children: Vec<ContextNode>,
}

impl ContextNode {
    pub fn new(tag: Tag) -> Self {
        ContextNode {
            tag,
            name: None,
            text: String::new(),
            attrs: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    /// Sets a local name from a dotted string. Invalid characters are
    /// sanitized.
    pub fn named(mut self, name: &str) -> Self {
        self.name = NamePath::sanitize_dotted(name);
        self
    }

    pub fn with_text(mut self, text: &str) -> Self {
        self.text = collapse_whitespace(text);
        self
    }

    pub fn with_attr(mut self, key: &str, value: &str) -> Self {
        self.attrs.insert(key.to_owned(), value.to_owned());
        self
    }

    pub fn with_child(mut self, child: ContextNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn with_children<I: IntoIterator<Item = ContextNode>>(mut self, children: I) -> Self {
        self.children.extend(children);
        self
    }

    pub fn push(&mut self, child: ContextNode) {
        self.children.push(child);
    }

    /// Concatenated text of this node and all descendants, in document order.
    pub fn inner_text(&self) -> String {
        let mut parts = Vec::new();
        self.collect_text(&mut parts);
        parts.join(" ")
    }

    fn collect_text<'a>(&'a self, parts: &mut Vec<&'a str>) {
        if !self.text.is_empty() {
            parts.push(&self.text);
        }
        for c in &self.children {
            c.collect_text(parts);
        }
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ContextNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }
}

/// A pruned element tree rooted at `html`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplifiedContext {
    pub root: ContextNode,
}

impl Default for SimplifiedContext {
    fn default() -> Self {
        SimplifiedContext {
            root: ContextNode::new(Tag::Html),
        }
    }
}

impl SimplifiedContext {
    pub fn new(root: ContextNode) -> Self {
        SimplifiedContext { root }
    }

    /// Named interactables in document order.
    pub fn interactables(&self) -> Vec<(&NamePath, InteractableKind)> {
        let mut out = Vec::new();
        self.root.walk(&mut |n| {
            if let (Some(kind), Some(name)) = (n.tag.interactable_kind(), n.name.as_ref()) {
                out.push((name, kind));
            }
        });
        out
    }

    /// Exact, case-sensitive lookup of an interactable by rendered name.
    pub fn resolve(&self, name: &str) -> Option<&ContextNode> {
        let mut found = None;
        self.root.walk(&mut |n| {
            if found.is_none()
                && n.tag.is_interactable()
                && n.name.as_ref().is_some_and(|p| p.matches(name))
            {
                found = Some(n);
            }
        });
        found
    }

    pub fn render(&self) -> String {
        render(self)
    }

    /// Every node in document order.
    pub fn nodes(&self) -> Vec<&ContextNode> {
        let mut out = Vec::new();
        self.root.walk(&mut |n| out.push(n));
        out
    }
}

/// Named interactables in document order, as owned values.
pub fn list_interactables(ctx: &SimplifiedContext) -> Vec<(NamePath, InteractableKind)> {
    ctx.interactables()
        .into_iter()
        .map(|(n, k)| (n.clone(), k))
        .collect()
}

pub fn resolve<'a>(ctx: &'a SimplifiedContext, name: &str) -> Option<&'a ContextNode> {
    ctx.resolve(name)
}

impl Serialize for SimplifiedContext {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&render(self))
    }
}

impl<'de> Deserialize<'de> for SimplifiedContext {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(simplify(&s))
    }
}

pub(crate) fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}
