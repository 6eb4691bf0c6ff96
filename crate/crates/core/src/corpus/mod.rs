//! Pre-parsed corpora: documents of sentences carrying both syntax trees.
//!
//! The container format is JSON lines, one document per line:
//!
//! ```text
//! {"id": "d1", "labels": ["sport"], "sentences": [
//!     {"tokens": ["hi", "there"],
//!      "conllu": "1\thi\t_\t_\t_\t_\t0\troot\t_\t_\n2\tthere\t_\t_\t_\t_\t1\tdiscourse\t_\t_\n",
//!      "bracketed": "(S (UH hi) (RB there))"}]}
//! ```

pub mod bracket;
pub mod conllu;
pub mod embedding;
pub mod vocab;

pub use bracket::{parse_bracketed, ConstNode, ConstTree};
pub use conllu::{parse_conllu, parse_conllu_sentences, DepNode, DepTree};
pub use embedding::{label_embedding, label_embeddings, EmbeddingBackend, EmbeddingTable, INIT_STD};
pub use vocab::Vocab;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub dep: DepTree,
    pub cons: ConstTree,
}

impl Sentence {
    /// Checks that both trees cover exactly `tokens`.
    pub fn new(tokens: Vec<String>, dep: DepTree, cons: ConstTree) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Data("sentence without tokens".into()));
        }
        if dep.len() != tokens.len() {
            return Err(Error::Data(format!(
                "dependency tree has {} nodes for {} tokens",
                dep.len(),
                tokens.len()
            )));
        }
        if cons.leaf_count() != tokens.len() {
            return Err(Error::Data(format!(
                "constituency tree has {} leaves for {} tokens",
                cons.leaf_count(),
                tokens.len()
            )));
        }
        Ok(Self { tokens, dep, cons })
    }

    /// Parses both tree encodings and checks their words against `tokens`.
    pub fn parse(tokens: Vec<String>, conllu: &str, bracketed: &str) -> Result<Self> {
        let (dep, forms) = parse_conllu(conllu)?;
        let (cons, leaves) = parse_bracketed(bracketed)?;
        if forms != tokens {
            return Err(Error::Data(format!("conllu forms {forms:?} differ from tokens {tokens:?}")));
        }
        if leaves != tokens {
            return Err(Error::Data(format!("bracketed leaves {leaves:?} differ from tokens {tokens:?}")));
        }
        Self::new(tokens, dep, cons)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Sentence>,
    /// Gold label names.
    pub gold: Vec<String>,
}

impl Document {
    pub fn new(id: impl Into<String>, sentences: Vec<Sentence>, gold: Vec<String>) -> Result<Self> {
        let id = id.into();
        if sentences.is_empty() {
            return Err(Error::Data(format!("document {id} has no sentences")));
        }
        Ok(Self { id, sentences, gold })
    }

    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }
}

/// Ordered label inventory; a label's index is its position.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Data("empty label set".into()));
        }
        if let Some(bad) = names.iter().find(|n| n.split_whitespace().next().is_none()) {
            return Err(Error::Data(format!("label name {bad:?} has no words")));
        }
        let distinct: BTreeSet<_> = names.iter().collect();
        if distinct.len() != names.len() {
            return Err(Error::Data("duplicate label names".into()));
        }
        Ok(Self { names })
    }

    /// Sorted union of the gold labels of `docs`.
    pub fn from_documents(docs: &[Document]) -> Result<Self> {
        let set: BTreeSet<&String> = docs.iter().flat_map(|d| d.gold.iter()).collect();
        Self::new(set.into_iter().cloned().collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Gold label indices of `doc`; unknown labels are a data error.
    pub fn indices(&self, doc: &Document) -> Result<Vec<usize>> {
        doc.gold
            .iter()
            .map(|g| {
                self.index(g)
                    .ok_or_else(|| Error::Data(format!("document {}: unknown label {g:?}", doc.id)))
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSentence {
    tokens: Vec<String>,
    conllu: String,
    bracketed: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    id: String,
    labels: Vec<String>,
    sentences: Vec<RawSentence>,
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("corpus line {}: {e}", k + 1)))?;
        let sentences = raw
            .sentences
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                Sentence::parse(s.tokens, &s.conllu, &s.bracketed)
                    .map_err(|e| Error::Data(format!("corpus line {}, document {}, sentence {i}: {e}", k + 1, raw.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        docs.push(Document::new(raw.id, sentences, raw.labels)?);
    }
    Ok(docs)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Data(format!("{}: {e}", path.as_ref().display())))?;
    read_jsonl(std::io::BufReader::new(file))
}

pub fn write_jsonl<W: Write>(mut writer: W, docs: &[Document]) -> Result<()> {
    for d in docs {
        let raw = RawDocument {
            id: d.id.clone(),
            labels: d.gold.clone(),
            sentences: d
                .sentences
                .iter()
                .map(|s| RawSentence {
                    tokens: s.tokens.clone(),
                    conllu: s.dep.to_conllu(&s.tokens),
                    bracketed: s.cons.to_bracketed(&s.tokens),
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"d1","labels":["sport"],"sentences":[{"tokens":["hi","there"],"conllu":"1 hi 0 root\n2 there 1 discourse\n","bracketed":"(S (UH hi) (RB there))"}]}"#;

    #[test]
    fn reads_a_document() {
        let docs = read_jsonl(LINE.as_bytes()).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].sentences[0].tokens, vec!["hi", "there"]);
        assert_eq!(docs[0].gold, vec!["sport"]);
    }

    #[test]
    fn write_then_read() {
        let docs = read_jsonl(LINE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &docs).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), docs);
    }

    #[test]
    fn misaligned_trees_rejected() {
        let bad = LINE.replace("(RB there)", "(RB here)");
        assert!(matches!(read_jsonl(bad.as_bytes()), Err(Error::Data(_))));
        let unknown = LINE.replace(r#""id":"d1","#, r#""id":"d1","extra":1,"#);
        assert!(read_jsonl(unknown.as_bytes()).is_err());
        let empty = r#"{"id":"d","labels":[],"sentences":[]}"#;
        assert!(read_jsonl(empty.as_bytes()).is_err());
    }

    #[test]
    fn label_set_rules() {
        assert!(LabelSet::new(vec![]).is_err());
        assert!(LabelSet::new(vec!["  ".into()]).is_err());
        assert!(LabelSet::new(vec!["a".into(), "a".into()]).is_err());
        let l = LabelSet::new(vec!["x y".into(), "z".into()]).unwrap();
        assert_eq!(l.index("z"), Some(1));
    }
}
