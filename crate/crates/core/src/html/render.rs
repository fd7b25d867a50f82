use std::fmt::Write;

use super::{ContextNode, SimplifiedContext, Tag};

/// Canonical text form: one element per line, two-space indentation,
/// attributes in the order `name`, then retained attributes sorted by key.
/// Leaf elements put their text inline.
pub fn render(ctx: &SimplifiedContext) -> String {
    let mut out = String::new();
    render_node(&ctx.root, 0, &mut out);
    while out.ends_with('\n') {
        out.pop();
    }
    out
}

fn open_tag(node: &ContextNode, out: &mut String) {
    out.push('<');
    out.push_str(node.tag.as_str());
    if let Some(name) = &node.name {
        let _ = write!(out, " name=\"{name}\"");
    }
    for (k, v) in &node.attrs {
        let _ = write!(
            out,
            " {k}=\"{}\"",
            html_escape::encode_double_quoted_attribute(v)
        );
    }
    if node.tag == Tag::Img {
        let _ = write!(
            out,
            " alt=\"{}\"",
            html_escape::encode_double_quoted_attribute(&node.text)
        );
    }
    out.push('>');
}

fn render_node(node: &ContextNode, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    out.push_str(&pad);
    open_tag(node, out);
    if node.tag.is_void() {
        out.push('\n');
        return;
    }
    let text = html_escape::encode_text(&node.text);
    if node.children.is_empty() {
        let _ = writeln!(out, "{text}</{}>", node.tag);
        return;
    }
    out.push('\n');
    if !node.text.is_empty() {
        let _ = writeln!(out, "{pad}  {text}");
    }
    for child in &node.children {
        render_node(child, depth + 1, out);
    }
    let _ = writeln!(out, "{pad}</{}>", node.tag);
}

#[cfg(test)]
mod tests {
    use super::super::simplify;

    #[test]
    fn canonical_layout() {
        let ctx = simplify(
            r#"<body><div id="search_bar"><input type="text" name="search_input" placeholder="Search"></div>
               <ul><li>Tee &amp; <a id="view">View "it"</a></li></ul><img alt='A "red" shirt'></body>"#,
        );
        let expected = r#"<html>
  <body>
    <div>
      <input name="search_bar.search_input" placeholder="Search" type="text">
    </div>
    <ul>
      <li>
        Tee &amp;
        <a name="view">View "it"</a>
      </li>
    </ul>
    <img alt="A &quot;red&quot; shirt">
  </body>
</html>"#;
        assert_eq!(ctx.render(), expected);
        assert_eq!(simplify(expected), ctx);
        assert_eq!(simplify(&ctx.render()).render(), expected);
    }
}
