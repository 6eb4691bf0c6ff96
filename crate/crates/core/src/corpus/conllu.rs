//! CoNLL-U dependency trees.
//!
//! Two layouts are read: the compact four-column `ID FORM HEAD DEPREL`, and
//! the standard ten-column layout (HEAD and DEPREL in columns 7 and 8).
//! Columns may be separated by tabs or runs of spaces. Comment lines,
//! multiword ranges (`1-2`) and empty nodes (`1.1`) are skipped.

use crate::error::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepNode {
    /// Token index of the head, `None` for the root.
    pub head: Option<usize>,
    pub deprel: String,
}

/// Dependency tree with one node per token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepTree {
    nodes: Vec<DepNode>,
    root: usize,
}

impl DepTree {
    /// Validates single-rootedness and acyclicity.
    pub fn from_nodes(nodes: Vec<DepNode>) -> Result<Self, String> {
        let roots: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].head.is_none()).collect();
        match roots.as_slice() {
            [root] => {
                if let Some(i) = (0..nodes.len()).find(|&i| nodes[i].head.is_some_and(|h| h >= nodes.len())) {
                    return Err(format!("head of token {i} out of range"));
                }
                if let Some(i) = find_cycle(&nodes) {
                    return Err(format!("cycle through token {i}"));
                }
                Ok(Self { nodes, root: *root })
            }
            [] => Err("no root".into()),
            _ => Err("multiple roots".into()),
        }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &DepNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[DepNode] {
        &self.nodes
    }

    /// Dependents of every token, in ascending token order.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(h) = n.head {
                out[h].push(i);
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.head.is_some()).count()
    }

    /// Ten-column CoNLL-U block, one line per token, each line newline-terminated.
    pub fn to_conllu(&self, forms: &[String]) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let head = n.head.map_or(0, |h| h + 1);
            out.push_str(&format!("{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n", i + 1, forms[i], head, n.deprel));
        }
        out
    }
}

fn find_cycle(nodes: &[DepNode]) -> Option<usize> {
    let n = nodes.len();
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(h) = nodes[cur].head {
            cur = h;
            steps += 1;
            if steps > n {
                return Some(start);
            }
        }
    }
    None
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Conllu {
        line,
        message: message.into(),
    }
}

/// Parses a single sentence block. Line numbers in errors are 1-based within `text`.
pub fn parse_conllu(text: &str) -> Result<(DepTree, Vec<String>), ParseError> {
    let mut blocks = parse_conllu_sentences(text)?;
    match blocks.len() {
        1 => Ok(blocks.remove(0)),
        0 => Err(err(1, "no tokens")),
        k => Err(err(1, format!("expected one sentence, found {k}"))),
    }
}

/// Parses every blank-line separated sentence block in `text`.
pub fn parse_conllu_sentences(text: &str) -> Result<Vec<(DepTree, Vec<String>)>, ParseError> {
    let mut out = Vec::new();
    let mut rows: Vec<(usize, usize, String, usize, String)> = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = raw.trim();
        if line.is_empty() {
            if !rows.is_empty() {
                out.push(finish(std::mem::take(&mut rows))?);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let (id, form, head, rel) = match cols.len() {
            4 => (cols[0], cols[1], cols[2], cols[3]),
            n if n >= 8 => (cols[0], cols[1], cols[6], cols[7]),
            n => return Err(err(line_no, format!("expected 4 or at least 8 columns, found {n}"))),
        };
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| err(line_no, format!("bad ID {id:?}")))?;
        let head: usize = head.parse().map_err(|_| err(line_no, format!("bad HEAD {head:?}")))?;
        if id != rows.len() + 1 {
            return Err(err(line_no, format!("expected ID {}, found {id}", rows.len() + 1)));
        }
        rows.push((line_no, id, form.to_string(), head, rel.to_string()));
    }
    if !rows.is_empty() {
        out.push(finish(rows)?);
    }
    Ok(out)
}

fn finish(rows: Vec<(usize, usize, String, usize, String)>) -> Result<(DepTree, Vec<String>), ParseError> {
    let n = rows.len();
    for r in &rows {
        if r.3 > n {
            return Err(err(r.0, format!("HEAD {} out of range 0..={n}", r.3)));
        }
        if r.3 == r.1 {
            return Err(err(r.0, "token is its own head"));
        }
    }
    let nodes: Vec<DepNode> = rows
        .iter()
        .map(|r| DepNode {
            head: (r.3 > 0).then(|| r.3 - 1),
            deprel: r.4.clone(),
        })
        .collect();
    if let Some(i) = find_cycle(&nodes) {
        return Err(err(rows[i].0, "cycle"));
    }
    let mut roots = (0..n).filter(|&i| nodes[i].head.is_none());
    // acyclic with in-range heads guarantees at least one root
    let root = roots.next().expect("acyclic forest has a root");
    if let Some(second) = roots.next() {
        return Err(err(rows[second].0, "multiple roots"));
    }
    let forms = rows.into_iter().map(|r| r.2).collect();
    Ok((DepTree { nodes, root }, forms))
}
