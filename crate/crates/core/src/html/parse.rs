//! Lenient HTML tokenizer and tree builder.
//!
//! This is not an HTML5 tree-construction implementation: there is no
//! foster parenting and no implied end tags. End tags close the nearest
//! matching open element and are otherwise ignored, which keeps the
//! canonical rendering a fixed point of parse.

use std::borrow::Cow;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum RawNode {
    Element(RawElement),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RawElement {
    pub tag: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<RawNode>,
}

impl RawElement {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

/// Elements whose content is not markup.
const RAW_TEXT: &[&str] = &[
    "script", "style", "textarea", "title", "xmp", "iframe", "noembed", "noframes", "noscript",
];

enum Token {
    Start {
        tag: String,
        attrs: Vec<(String, String)>,
        self_closing: bool,
    },
    End(String),
    Text(String),
}

struct Tokenizer<'a> {
    src: &'a str,
    pos: usize,
}

fn decode(s: &str) -> String {
    match html_escape::decode_html_entities(s) {
        Cow::Borrowed(b) => b.to_owned(),
        Cow::Owned(o) => o,
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '-' || c == ':' || c == '_'
}

impl<'a> Tokenizer<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_past(&mut self, pat: &str) {
        match self.rest().find(pat) {
            Some(i) => self.pos += i + pat.len(),
            None => self.pos = self.src.len(),
        }
    }

    fn next_token(&mut self) -> Option<Token> {
        loop {
            let rest = self.rest();
            if rest.is_empty() {
                return None;
            }
            if !rest.starts_with('<') {
                let end = rest.find('<').unwrap_or(rest.len());
                // A '<' that does not begin markup is literal text.
                let text = &rest[..end];
                self.pos += end;
                return Some(Token::Text(decode(text)));
            }
            if rest.starts_with("<!--") {
                self.pos += 4;
                self.skip_past("-->");
                continue;
            }
            if rest.starts_with("<!") || rest.starts_with("<?") {
                self.skip_past(">");
                continue;
            }
            if let Some(after) = rest.strip_prefix("</") {
                if after.starts_with(|c: char| c.is_ascii_alphabetic()) {
                    let name_len = after.find(|c: char| !is_name_char(c)).unwrap_or(after.len());
                    let name = after[..name_len].to_ascii_lowercase();
                    self.pos += 2 + name_len;
                    self.skip_past(">");
                    return Some(Token::End(name));
                }
                self.pos += 2;
                self.skip_past(">");
                continue;
            }
            let after = &rest[1..];
            if after.starts_with(|c: char| c.is_ascii_alphabetic()) {
                if let Some(tok) = self.start_tag() {
                    return Some(tok);
                }
                return None;
            }
            // Lone '<'.
            let end = after.find('<').map(|i| i + 1).unwrap_or(rest.len());
            self.pos += end;
            return Some(Token::Text(decode(&rest[..end])));
        }
    }

    /// Parses a start tag at `pos`. Returns `None` (and consumes the rest of
    /// the input) if the tag is unterminated.
    fn start_tag(&mut self) -> Option<Token> {
        let s = self.src;
        let mut i = self.pos + 1;
        let name_end = s[i..]
            .find(|c: char| !is_name_char(c))
            .map(|n| i + n)
            .unwrap_or(s.len());
        let tag = s[i..name_end].to_ascii_lowercase();
        i = name_end;
        let mut attrs: Vec<(String, String)> = Vec::new();
        let mut self_closing = false;
        loop {
            let rest = &s[i..];
            let trimmed = rest.trim_start();
            i += rest.len() - trimmed.len();
            let Some(c) = s[i..].chars().next() else {
                self.pos = s.len();
                return None;
            };
            match c {
                '>' => {
                    i += 1;
                    break;
                }
                '/' => {
                    i += 1;
                    if s[i..].starts_with('>') {
                        self_closing = true;
                        i += 1;
                        break;
                    }
                }
                _ => {
                    let key_end = s[i..]
                        .find(|c: char| c.is_whitespace() || c == '=' || c == '>' || c == '/')
                        .map(|n| i + n)
                        .unwrap_or(s.len());
                    // Always advance at least one char so stray quotes terminate.
                    let key_end = if key_end == i { i + c.len_utf8() } else { key_end };
                    let key = s[i..key_end].to_ascii_lowercase();
                    i = key_end;
                    let rest = &s[i..];
                    let trimmed = rest.trim_start();
                    let mut value = String::new();
                    if let Some(v) = trimmed.strip_prefix('=') {
                        i += rest.len() - trimmed.len() + 1;
                        let v_trim = v.trim_start();
                        i += v.len() - v_trim.len();
                        match v_trim.chars().next() {
                            Some(q @ ('"' | '\'')) => {
                                let body = &v_trim[1..];
                                match body.find(q) {
                                    Some(end) => {
                                        value = decode(&body[..end]);
                                        i += 1 + end + 1;
                                    }
                                    None => {
                                        self.pos = s.len();
                                        return None;
                                    }
                                }
                            }
                            Some(_) => {
                                let end = v_trim
                                    .find(|c: char| c.is_whitespace() || c == '>')
                                    .unwrap_or(v_trim.len());
                                value = decode(&v_trim[..end]);
                                i += end;
                            }
                            None => {}
                        }
                    }
                    if !key.is_empty() && !attrs.iter().any(|(k, _)| *k == key) {
                        attrs.push((key, value));
                    }
                }
            }
        }
        self.pos = i;
        Some(Token::Start {
            tag,
            attrs,
            self_closing,
        })
    }

    /// Consumes raw text up to the matching close tag of `tag`.
    fn raw_text(&mut self, tag: &str) -> String {
        let rest = self.rest();
        let lower = rest.to_ascii_lowercase();
        let needle = format!("</{tag}");
        let mut search_from = 0;
        while let Some(rel) = lower[search_from..].find(&needle) {
            let at = search_from + rel;
            let after = &lower[at + needle.len()..];
            if after.is_empty() || after.starts_with(|c: char| c.is_whitespace() || c == '>' || c == '/') {
                let text = rest[..at].to_owned();
                self.pos += at;
                self.skip_past(">");
                return text;
            }
            search_from = at + needle.len();
        }
        let text = rest.to_owned();
        self.pos = self.src.len();
        text
    }
}

/// Parses markup into a forest of raw nodes.
pub(crate) fn parse(src: &str) -> Vec<RawNode> {
    let mut tok = Tokenizer { src, pos: 0 };
    // stack[0] is the document.
    let mut stack: Vec<RawElement> = vec![RawElement {
        tag: String::new(),
        attrs: Vec::new(),
        children: Vec::new(),
    }];

    fn close_top(stack: &mut Vec<RawElement>) {
        let el = stack.pop().expect("non-empty stack");
        stack
            .last_mut()
            .expect("document stays on the stack")
            .children
            .push(RawNode::Element(el));
    }

    while let Some(t) = tok.next_token() {
        match t {
            Token::Text(text) => {
                if !text.is_empty() {
                    stack.last_mut().unwrap().children.push(RawNode::Text(text));
                }
            }
            Token::Start {
                tag,
                attrs,
                self_closing,
            } => {
                let mut el = RawElement {
                    tag,
                    attrs,
                    children: Vec::new(),
                };
                if VOID.contains(&el.tag.as_str()) || self_closing {
                    stack.last_mut().unwrap().children.push(RawNode::Element(el));
                } else if RAW_TEXT.contains(&el.tag.as_str()) {
                    let text = tok.raw_text(&el.tag);
                    let text = if el.tag == "textarea" || el.tag == "title" {
                        decode(&text)
                    } else {
                        text
                    };
                    if !text.is_empty() {
                        el.children.push(RawNode::Text(text));
                    }
                    stack.last_mut().unwrap().children.push(RawNode::Element(el));
                } else {
                    stack.push(el);
                }
            }
            Token::End(tag) => {
                if let Some(k) = stack.iter().rposition(|e| e.tag == tag) {
                    if k > 0 {
                        while stack.len() > k {
                            close_top(&mut stack);
                        }
                    }
                }
            }
        }
    }
    while stack.len() > 1 {
        close_top(&mut stack);
    }
    stack.pop().unwrap().children
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(node: &RawNode) -> &RawElement {
        match node {
            RawNode::Element(e) => e,
            RawNode::Text(t) => panic!("expected element, got text {t:?}"),
        }
    }

    #[test]
    fn nested_elements_and_attrs() {
        let doc = parse(r#"<div id=x class='a b'><a name="v" href=/p>Go</a></div>"#);
        assert_eq!(doc.len(), 1);
        let div = el(&doc[0]);
        assert_eq!(div.tag, "div");
        assert_eq!(div.attr("id"), Some("x"));
        assert_eq!(div.attr("class"), Some("a b"));
        let a = el(&div.children[0]);
        assert_eq!(a.attr("name"), Some("v"));
        assert_eq!(a.attr("href"), Some("/p"));
        assert_eq!(a.children, vec![RawNode::Text("Go".into())]);
    }

    #[test]
    fn script_content_is_raw() {
        let doc = parse("<script>if (a < b) { x = '</div>'; }</script><p>hi</p>");
        let script = el(&doc[0]);
        assert_eq!(script.tag, "script");
        assert_eq!(el(&doc[1]).tag, "p");
    }

    #[test]
    fn unmatched_end_tags_are_ignored_and_open_tags_closed_at_eof() {
        let doc = parse("<div><span>a</p>b</div><ul><li>c");
        let div = el(&doc[0]);
        assert_eq!(div.children.len(), 1);
        let span = el(&div.children[0]);
        assert_eq!(span.children.len(), 2);
        let ul = el(&doc[1]);
        assert_eq!(el(&ul.children[0]).tag, "li");
    }

    #[test]
    fn comments_doctype_and_entities() {
        let doc = parse("<!DOCTYPE html><!-- note --><p>a &amp; b &lt;c&gt;</p>");
        let p = el(&doc[0]);
        assert_eq!(p.children, vec![RawNode::Text("a & b <c>".into())]);
    }

    #[test]
    fn void_and_self_closing() {
        let doc = parse("<input name=q><br/><div/>tail");
        assert_eq!(el(&doc[0]).tag, "input");
        assert_eq!(el(&doc[1]).tag, "br");
        assert_eq!(el(&doc[2]).tag, "div");
        assert_eq!(doc[3], RawNode::Text("tail".into()));
    }

    #[test]
    fn truncated_input_does_not_panic() {
        for src in ["<", "<a", "<a href=\"x", "</", "<!--", "<div class=", "a < b", "<<>>", "<a b c=>"] {
            let _ = parse(src);
        }
    }
}
