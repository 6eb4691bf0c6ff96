//! Penn-style bracketed constituency trees.

use crate::error::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstNode {
    Phrase { label: String, children: Vec<usize> },
    /// A word; `token` indexes the sentence.
    Leaf { token: usize },
}

/// Phrase-structure tree stored as an arena; words sit only at leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConstTree {
    nodes: Vec<ConstNode>,
    root: usize,
}

impl ConstTree {
    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, id: usize) -> &ConstNode {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, ConstNode::Leaf { .. })).count()
    }

    /// Token indices of the leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                ConstNode::Leaf { token } => out.push(*token),
                ConstNode::Phrase { children, .. } => stack.extend(children.iter().rev()),
            }
        }
        out
    }

    /// Builds a tree from an arena, checking the structural invariants.
    pub fn from_nodes(nodes: Vec<ConstNode>, root: usize) -> Result<Self, String> {
        let tree = Self { nodes, root };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<(), String> {
        if self.root >= self.nodes.len() {
            return Err("root out of range".into());
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(format!("node {id} reachable twice"));
            }
            if let ConstNode::Phrase { children, .. } = &self.nodes[id] {
                if children.is_empty() {
                    return Err(format!("phrase node {id} has no children"));
                }
                for &c in children {
                    if c >= self.nodes.len() {
                        return Err(format!("child {c} out of range"));
                    }
                    stack.push(c);
                }
            }
        }
        let leaves = self.leaves();
        if leaves.is_empty() {
            return Err("tree has no leaves".into());
        }
        if leaves.iter().enumerate().any(|(i, &t)| i != t) {
            return Err("leaves are not numbered 0..n-1 left to right".into());
        }
        Ok(())
    }

    /// Canonical single-line rendering: `(LABEL child child)` with single spaces.
    pub fn to_bracketed(&self, tokens: &[String]) -> String {
        let mut out = String::new();
        self.write_node(self.root, tokens, &mut out);
        out
    }

    fn write_node(&self, id: usize, tokens: &[String], out: &mut String) {
        match &self.nodes[id] {
            ConstNode::Leaf { token } => out.push_str(&tokens[*token]),
            ConstNode::Phrase { label, children } => {
                out.push('(');
                out.push_str(label);
                for &c in children {
                    out.push(' ');
                    self.write_node(c, tokens, out);
                }
                out.push(')');
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        let rest = &self.text[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    /// Next token and its byte offset; `None` at end of input.
    fn next(&mut self) -> Option<(usize, Tok<'a>)> {
        self.skip_ws();
        let start = self.pos;
        let rest = &self.text[start..];
        let c = rest.chars().next()?;
        match c {
            '(' => {
                self.pos += 1;
                Some((start, Tok::Open))
            }
            ')' => {
                self.pos += 1;
                Some((start, Tok::Close))
            }
            _ => {
                let end = rest
                    .find(|ch: char| ch.is_whitespace() || ch == '(' || ch == ')')
                    .unwrap_or(rest.len());
                self.pos += end;
                Some((start, Tok::Atom(&rest[..end])))
            }
        }
    }

    fn peek(&mut self) -> Option<(usize, Tok<'a>)> {
        let save = self.pos;
        let t = self.next();
        self.pos = save;
        t
    }
}

fn err(offset: usize, message: impl Into<String>) -> ParseError {
    ParseError::Bracket {
        offset,
        message: message.into(),
    }
}

/// Parses one bracketed tree, returning it with the words in leaf order.
///
/// A PTB-style unlabeled wrapper `( (S ...) )` around a single tree is accepted and dropped.
pub fn parse_bracketed(text: &str) -> Result<(ConstTree, Vec<String>), ParseError> {
    let mut lx = Lexer { text, pos: 0 };
    let mut nodes = Vec::new();
    let mut tokens = Vec::new();
    match lx.next() {
        Some((_, Tok::Open)) => {}
        Some((o, _)) => return Err(err(o, "expected '('")),
        None => return Err(err(text.len(), "empty input")),
    }
    let root = if matches!(lx.peek(), Some((_, Tok::Open))) {
        // unlabeled wrapper
        let inner_start = lx.peek().map(|(o, _)| o).unwrap_or(0);
        lx.next();
        let inner = parse_phrase(&mut lx, &mut nodes, &mut tokens)?;
        match lx.next() {
            Some((_, Tok::Close)) => inner,
            Some((o, _)) => return Err(err(o, "unlabeled wrapper must hold exactly one tree")),
            None => return Err(err(text.len().max(inner_start), "unexpected end of input")),
        }
    } else {
        parse_phrase(&mut lx, &mut nodes, &mut tokens)?
    };
    if let Some((o, _)) = lx.next() {
        return Err(err(o, "trailing input after tree"));
    }
    let tree = ConstTree { nodes, root };
    if tree.leaf_count() == 0 {
        return Err(err(0, "tree has no leaves"));
    }
    Ok((tree, tokens))
}

/// Parses the remainder of a phrase whose '(' was consumed.
fn parse_phrase(
    lx: &mut Lexer<'_>,
    nodes: &mut Vec<ConstNode>,
    tokens: &mut Vec<String>,
) -> Result<usize, ParseError> {
    let end = lx.text.len();
    let label = match lx.next() {
        Some((_, Tok::Atom(a))) => a.to_string(),
        Some((o, Tok::Close)) => return Err(err(o, "empty node")),
        Some((o, Tok::Open)) => return Err(err(o, "expected phrase label")),
        None => return Err(err(end, "unexpected end of input")),
    };
    let id = nodes.len();
    nodes.push(ConstNode::Phrase {
        label,
        children: Vec::new(),
    });
    let mut children = Vec::new();
    loop {
        match lx.next() {
            Some((o, Tok::Close)) => {
                if children.is_empty() {
                    return Err(err(o, "phrase without children"));
                }
                break;
            }
            Some((_, Tok::Open)) => children.push(parse_phrase(lx, nodes, tokens)?),
            Some((_, Tok::Atom(a))) => {
                let leaf = nodes.len();
                nodes.push(ConstNode::Leaf { token: tokens.len() });
                tokens.push(a.to_string());
                children.push(leaf);
            }
            None => return Err(err(end, "unexpected end of input")),
        }
    }
    if let ConstNode::Phrase { children: slot, .. } = &mut nodes[id] {
        *slot = children;
    }
    Ok(id)
}
