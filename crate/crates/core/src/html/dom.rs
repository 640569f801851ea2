//! Error-tolerant HTML tokenizer and tree builder.
//!
//! Builds only what the markup says: no implied `html`/`head`/`body`
//! elements are inserted, so the tree mirrors the source nesting. Void
//! elements never take children, `script`/`style` content is raw text,
//! stray end tags are ignored and anything left open at EOF is closed.

use serde::Serialize;

use crate::error::{Error, Result};

const VOID: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "keygen", "link", "meta", "param", "source", "track",
    "wbr",
];
const RAW_TEXT: &[&str] = &["script", "style", "textarea", "title", "xmp"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum NodeKind {
    Document,
    Element { tag: String, attrs: Vec<(String, String)> },
    Text(String),
    Comment(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomNode {
    pub kind: NodeKind,
    pub children: Vec<usize>,
}

/// Node arena; index 0 is the document root.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomTree {
    pub nodes: Vec<DomNode>,
}

impl DomTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn tag(&self, id: usize) -> Option<&str> {
        match &self.nodes[id].kind {
            NodeKind::Element { tag, .. } => Some(tag),
            _ => None,
        }
    }

    pub fn attrs(&self, id: usize) -> &[(String, String)] {
        match &self.nodes[id].kind {
            NodeKind::Element { attrs, .. } => attrs,
            _ => &[],
        }
    }

    /// Node ids in document order (pre-order), excluding the root.
    pub fn preorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack: Vec<usize> = self.nodes[0].children.iter().rev().copied().collect();
        while let Some(id) = stack.pop() {
            out.push(id);
            stack.extend(self.nodes[id].children.iter().rev());
        }
        out
    }

    pub fn elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.preorder().into_iter().filter(|&i| self.tag(i).is_some())
    }

    /// Element ids with the parent element of each (`None` at top level).
    fn with_parents(&self) -> Vec<(usize, Option<usize>)> {
        let mut parent = vec![None; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            for &c in &n.children {
                if i != 0 {
                    parent[c] = Some(i);
                }
            }
        }
        self.elements().map(|i| (i, parent[i])).collect()
    }

    /// One path per element in document order: the chain of tag names from
    /// its top-level ancestor down to itself.
    pub fn tag_paths(&self) -> Vec<Vec<String>> {
        let mut path_of: std::collections::HashMap<usize, Vec<String>> = Default::default();
        let mut out = Vec::new();
        for (id, parent) in self.with_parents() {
            let mut p = parent.and_then(|pid| path_of.get(&pid).cloned()).unwrap_or_default();
            p.push(self.tag(id).expect("element").to_string());
            path_of.insert(id, p.clone());
            out.push(p);
        }
        out
    }
}

struct Builder {
    nodes: Vec<DomNode>,
    open: Vec<usize>,
}

impl Builder {
    fn push(&mut self, kind: NodeKind) -> usize {
        let id = self.nodes.len();
        self.nodes.push(DomNode { kind, children: vec![] });
        let parent = *self.open.last().unwrap_or(&0);
        self.nodes[parent].children.push(id);
        id
    }

    fn text(&mut self, s: &str) {
        if s.is_empty() {
            return;
        }
        let parent = *self.open.last().unwrap_or(&0);
        if let Some(&last) = self.nodes[parent].children.last() {
            if let NodeKind::Text(t) = &mut self.nodes[last].kind {
                t.push_str(s);
                return;
            }
        }
        self.push(NodeKind::Text(s.to_string()));
    }

    fn close(&mut self, tag: &str) {
        if let Some(pos) = self
            .open
            .iter()
            .rposition(|&id| matches!(&self.nodes[id].kind, NodeKind::Element { tag: t, .. } if t == tag))
        {
            self.open.truncate(pos);
        }
    }
}

fn is_name_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '/' | '>' | '=' | '"' | '\'' | '<')
}

/// Parse `<tag attrs...>` starting just after `<`. Returns the tag, its
/// attributes, whether it was self-closed and the byte offset after `>`.
fn parse_start_tag(s: &str) -> (String, Vec<(String, String)>, bool, usize) {
    let b = s.as_bytes();
    let mut i = s.find(|c: char| !is_name_char(c)).unwrap_or(s.len());
    let tag = s[..i].to_ascii_lowercase();
    let mut attrs: Vec<(String, String)> = Vec::new();
    let mut self_closing = false;
    loop {
        while i < b.len() && (b[i] as char).is_ascii_whitespace() {
            i += 1;
        }
        if i >= b.len() {
            return (tag, attrs, self_closing, i);
        }
        match b[i] {
            b'>' => return (tag, attrs, self_closing, i + 1),
            b'/' => {
                self_closing = true;
                i += 1;
                continue;
            }
            _ => {}
        }
        self_closing = false;
        let start = i;
        while i < b.len() && (is_name_char(b[i] as char) || !b[i].is_ascii()) {
            i += 1;
        }
        if i == start {
            // stray quote or '=': skip it
            i += 1;
            continue;
        }
        let name = s[start..i].to_ascii_lowercase();
        while i < b.len() && (b[i] as char).is_ascii_whitespace() {
            i += 1;
        }
        let mut value = String::new();
        if i < b.len() && b[i] == b'=' {
            i += 1;
            while i < b.len() && (b[i] as char).is_ascii_whitespace() {
                i += 1;
            }
            if i < b.len() && (b[i] == b'"' || b[i] == b'\'') {
                let q = b[i] as char;
                let end = s[i + 1..].find(q).map_or(s.len(), |e| i + 1 + e);
                value = s[i + 1..end].to_string();
                i = (end + 1).min(s.len());
            } else {
                let end = s[i..]
                    .find(|c: char| c.is_whitespace() || c == '>')
                    .map_or(s.len(), |e| i + e);
                value = s[i..end].to_string();
                i = end;
            }
        }
        if !attrs.iter().any(|(n, _)| *n == name) {
            attrs.push((name, value));
        }
    }
}

fn find_ci(hay: &str, needle: &str) -> Option<usize> {
    let h = hay.as_bytes();
    let n = needle.as_bytes();
    (0..h.len().saturating_sub(n.len() - 1)).find(|&i| h[i..i + n.len()].eq_ignore_ascii_case(n))
}

/// Parse a document. Fails only when the bytes are not UTF-8.
pub fn parse_html(bytes: &[u8]) -> Result<DomTree> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Encoding(e.valid_up_to()))?;
    Ok(parse_str(text))
}

pub fn parse_str(text: &str) -> DomTree {
    let s = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut b = Builder {
        nodes: vec![DomNode {
            kind: NodeKind::Document,
            children: vec![],
        }],
        open: Vec::new(),
    };
    let mut i = 0;
    while i < s.len() {
        let rest = &s[i..];
        let Some(lt) = rest.find('<') else {
            b.text(rest);
            break;
        };
        b.text(&rest[..lt]);
        i += lt;
        let after = &s[i + 1..];
        if let Some(body) = after.strip_prefix("!--") {
            let end = body.find("-->");
            b.push(NodeKind::Comment(body[..end.unwrap_or(body.len())].to_string()));
            i += 4 + end.map_or(body.len(), |e| e + 3);
        } else if after.starts_with('!') || after.starts_with('?') {
            // doctype, CDATA, processing instruction: skipped
            i += 1 + after.find('>').map_or(after.len(), |e| e + 1);
        } else if let Some(close) = after.strip_prefix('/') {
            if close.starts_with(|c: char| c.is_ascii_alphabetic()) {
                let end = close.find('>').unwrap_or(close.len());
                let name: String = close[..end]
                    .chars()
                    .take_while(|c| is_name_char(*c))
                    .collect::<String>()
                    .to_ascii_lowercase();
                b.close(&name);
                i += 2 + (end + 1).min(close.len());
            } else {
                // "</>" or "</ junk": drop up to '>'
                i += 2 + close.find('>').map_or(close.len(), |e| e + 1);
            }
        } else if after.starts_with(|c: char| c.is_ascii_alphabetic()) {
            let (tag, attrs, self_closing, used) = parse_start_tag(after);
            i += 1 + used;
            let id = b.push(NodeKind::Element { tag: tag.clone(), attrs });
            if VOID.contains(&tag.as_str()) || self_closing {
                continue;
            }
            if RAW_TEXT.contains(&tag.as_str()) {
                let body = &s[i..];
                let end = find_ci(body, &format!("</{tag}")).unwrap_or(body.len());
                if end > 0 {
                    b.nodes.push(DomNode {
                        kind: NodeKind::Text(body[..end].to_string()),
                        children: vec![],
                    });
                    let t = b.nodes.len() - 1;
                    b.nodes[id].children.push(t);
                }
                i += end;
                if end < body.len() {
                    i += body[end..].find('>').map_or(body.len() - end, |e| e + 1);
                }
                continue;
            }
            b.open.push(id);
        } else {
            b.text("<");
            i += 1;
        }
    }
    DomTree { nodes: b.nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(t: &DomTree, id: usize) -> String {
        let kids: Vec<String> = t.nodes[id].children.iter().filter(|&&c| t.tag(c).is_some()).map(|&c| shape(t, c)).collect();
        let name = t.tag(id).unwrap_or("#");
        if kids.is_empty() {
            name.to_string()
        } else {
            format!("{name}({})", kids.join(","))
        }
    }

    #[test]
    fn nested_anchor() {
        let t = parse_str("<div><a></a></div>");
        assert_eq!(shape(&t, 0), "#(div(a))");
    }

    #[test]
    fn nested_tag_paths() {
        let t = parse_str("<div><a><img></a></div><img>");
        let paths: Vec<String> = t.tag_paths().iter().map(|p| p.join("/")).collect();
        assert_eq!(paths, ["div", "div/a", "div/a/img", "img"]);
    }

    #[test]
    fn tolerant_of_broken_markup() {
        let t = parse_str("<div><p>unclosed <b>bold</i> text</div></span><ul><li>x");
        assert_eq!(shape(&t, 0), "#(div(p(b)),ul(li))");
        let t = parse_str("a < b and <3 <!-- open comment");
        assert_eq!(t.elements().count(), 0);
        assert!(matches!(t.nodes.last().unwrap().kind, NodeKind::Comment(_)));
        parse_str("<");
        parse_str("<a href='x");
        parse_str("</");
        parse_str("<div a=>");
    }

    #[test]
    fn attributes_and_raw_text() {
        let t = parse_str(r#"<IMG SRC="a.png" alt=hi src='dup' disabled><script>if (a<b) {}</script><p/>"#);
        let img = t.elements().next().unwrap();
        assert_eq!(t.attrs(img), [("src".into(), "a.png".into()), ("alt".into(), "hi".into()), ("disabled".into(), String::new())]);
        let script = t.elements().nth(1).unwrap();
        assert_eq!(t.nodes[script].children.len(), 1);
        assert_eq!(t.nodes[t.nodes[script].children[0]].kind, NodeKind::Text("if (a<b) {}".into()));
        assert_eq!(t.elements().count(), 3);
    }

    #[test]
    fn encoding_error_and_determinism() {
        assert!(matches!(parse_html(b"<p>\xff</p>"), Err(Error::Encoding(3))));
        let doc = b"<html><body><div class=x>hi<!-- c --></div></body></html>";
        assert_eq!(parse_html(doc).unwrap(), parse_html(doc).unwrap());
        assert!(parse_str("").tag_paths().is_empty());
    }
}
