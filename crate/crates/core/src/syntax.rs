//! Bracketed constituency trees and head-driven dependency conversion.

use std::fmt;

use crate::error::{DiskError, Result};

/// A constituency tree node. Preterminals are nodes with a single word leaf.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tree {
    Word(String),
    Node { label: String, children: Vec<Tree> },
}

/// A dependency arc; `head == -1` marks a root.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DepEdge(pub i64, pub usize, pub String);

impl DepEdge {
    pub fn head(&self) -> i64 {
        self.0
    }
    pub fn dependent(&self) -> usize {
        self.1
    }
    pub fn relation(&self) -> &str {
        &self.2
    }
}

impl Tree {
    /// Parses Penn-style brackets such as `(S (NP (N john)) (VP (V ran)))`.
    pub fn parse(s: &str) -> Result<Tree> {
        let toks = lex(s);
        let mut pos = 0;
        let tree = parse_node(&toks, &mut pos)?;
        if pos != toks.len() {
            return Err(bad(format!("trailing input after tree at token {pos}")));
        }
        match tree {
            Tree::Word(_) => Err(bad("expected a bracketed tree".into())),
            t => Ok(t),
        }
    }

    pub fn label(&self) -> Option<&str> {
        match self {
            Tree::Word(_) => None,
            Tree::Node { label, .. } => Some(label),
        }
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Word(_) => &[],
            Tree::Node { children, .. } => children,
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Word(_) => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::leaf_count).sum(),
        }
    }

    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Tree::Word(w) => out.push(w),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Labels of preterminals in leaf order.
    pub fn preterminal_labels(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_pre(&mut out);
        out
    }

    fn collect_pre<'a>(&'a self, out: &mut Vec<&'a str>) {
        if let Tree::Node { label, children } = self {
            if let [Tree::Word(_)] = children.as_slice() {
                out.push(label);
            } else {
                children.iter().for_each(|c| c.collect_pre(out));
            }
        }
    }

    /// Maps every node label.
    pub fn map_labels(&self, f: &impl Fn(&str) -> String) -> Tree {
        match self {
            Tree::Word(w) => Tree::Word(w.clone()),
            Tree::Node { label, children } => {
                Tree::Node { label: f(label), children: children.iter().map(|c| c.map_labels(f)).collect() }
            }
        }
    }

    /// Maps every word.
    pub fn map_words(&self, f: &impl Fn(&str) -> String) -> Tree {
        match self {
            Tree::Word(w) => Tree::Word(f(w)),
            Tree::Node { label, children } => {
                Tree::Node { label: label.clone(), children: children.iter().map(|c| c.map_words(f)).collect() }
            }
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Word(w) => write!(f, "{w}"),
            Tree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

fn bad(msg: String) -> DiskError {
    DiskError::Parse { line: 0, msg: format!("malformed bracketing: {msg}") }
}

fn lex(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in s.char_indices() {
        match ch {
            '(' | ')' => {
                if let Some(st) = start.take() {
                    out.push(&s[st..i]);
                }
                out.push(&s[i..i + 1]);
            }
            c if c.is_whitespace() => {
                if let Some(st) = start.take() {
                    out.push(&s[st..i]);
                }
            }
            _ => {
                if start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(st) = start {
        out.push(&s[st..]);
    }
    out
}

fn parse_node(toks: &[&str], pos: &mut usize) -> Result<Tree> {
    match toks.get(*pos) {
        None => Err(bad("unexpected end of input".into())),
        Some(&")") => Err(bad(format!("unexpected ')' at token {pos}"))),
        Some(&"(") => {
            *pos += 1;
            let label = match toks.get(*pos) {
                Some(&t) if t != "(" && t != ")" => t.to_string(),
                _ => return Err(bad(format!("missing label at token {pos}"))),
            };
            *pos += 1;
            let mut children = Vec::new();
            loop {
                match toks.get(*pos) {
                    None => return Err(bad("unclosed '('".into())),
                    Some(&")") => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_node(toks, pos)?),
                }
            }
            if children.is_empty() {
                return Err(bad(format!("node {label} has no children")));
            }
            Ok(Tree::Node { label, children })
        }
        Some(&w) => {
            *pos += 1;
            Ok(Tree::Word(w.to_string()))
        }
    }
}

/// Strips a trailing `*` head marker.
pub fn strip_head(label: &str) -> &str {
    label.strip_suffix('*').unwrap_or(label)
}

/// Converts a head-marked tree (head children carry a `*` suffix on their
/// label) into dependency arcs. Children of the root node each become a
/// separate root (`head = -1`), one per sentence.
pub fn head_dependencies(tree: &Tree) -> Vec<DepEdge> {
    let mut edges = Vec::new();
    let mut next = 0usize;
    match tree {
        Tree::Word(_) => edges.push(DepEdge(-1, 0, "root".into())),
        Tree::Node { children, .. } => {
            for c in children {
                let h = walk(c, &mut next, &mut edges);
                edges.push(DepEdge(-1, h, "root".into()));
            }
        }
    }
    edges.sort_by_key(|e| e.1);
    edges
}

/// Returns the head token index of `t`, emitting arcs for its non-head children.
fn walk(t: &Tree, next: &mut usize, edges: &mut Vec<DepEdge>) -> usize {
    match t {
        Tree::Word(_) => {
            let i = *next;
            *next += 1;
            i
        }
        Tree::Node { children, .. } => {
            let heads: Vec<usize> = children.iter().map(|c| walk(c, next, edges)).collect();
            let hi = children
                .iter()
                .position(|c| c.label().is_some_and(|l| l.ends_with('*')))
                .unwrap_or(children.len() - 1);
            for (ci, c) in children.iter().enumerate() {
                if ci == hi {
                    continue;
                }
                let rel = relation(c.label().map(strip_head).unwrap_or(""), ci < hi);
                edges.push(DepEdge(heads[hi] as i64, heads[ci], rel.into()));
            }
            heads[hi]
        }
    }
}

fn relation(child: &str, left_of_head: bool) -> &'static str {
    match child {
        "NP" | "N" | "PRON" if left_of_head => "nsubj",
        "NP" | "N" | "PRON" => "obj",
        "PP" => "obl",
        "NUM" | "QP" => "nummod",
        "DET" => "det",
        "ADJ" | "ADJP" => "amod",
        "ADV" | "ADVP" => "advmod",
        "AUX" => "aux",
        "P" => "case",
        "PUNCT" => "punct",
        "CONJ" => "cc",
        "SYM" => "dep",
        "WH" | "WHNP" | "WHADJP" => "advmod",
        "S" | "SBAR" | "VP" => "ccomp",
        _ => "dep",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_roundtrip() {
        let s = "(ROOT (S (NP (N john)) (VP (V ran)) (PUNCT .)))";
        let t = Tree::parse(s).unwrap();
        assert_eq!(t.to_string(), s);
        assert_eq!(t.leaf_count(), 3);
        assert_eq!(t.leaves(), vec!["john", "ran", "."]);
        assert_eq!(t.preterminal_labels(), vec!["N", "V", "PUNCT"]);
    }

    #[test]
    fn malformed_bracketing_is_rejected() {
        for s in ["(S (N a)", "(S (N a)))", "", "word", "(S)", "( (N a))"] {
            assert!(Tree::parse(s).is_err(), "{s:?} should fail");
        }
    }

    #[test]
    fn heads_drive_dependencies() {
        let t = Tree::parse("(ROOT (S (NP (DET the) (N* dog)) (VP* (V* ran) (ADV fast)) (PUNCT .)))").unwrap();
        let deps = head_dependencies(&t);
        assert_eq!(
            deps,
            vec![
                DepEdge(1, 0, "det".into()),
                DepEdge(2, 1, "nsubj".into()),
                DepEdge(-1, 2, "root".into()),
                DepEdge(2, 3, "advmod".into()),
                DepEdge(2, 4, "punct".into()),
            ]
        );
    }
}
