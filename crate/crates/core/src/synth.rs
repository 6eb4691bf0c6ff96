//! Synthetic trees and planted-signal corpora for tests, demos and the acceptance suite.

use crate::corpus::{ConstNode, ConstTree, DepNode, DepTree, Document, Sentence};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PHRASES: [&str; 5] = ["S", "NP", "VP", "PP", "ADJP"];
const TAGS: [&str; 6] = ["NN", "VB", "DT", "JJ", "IN", "RB"];
const RELS: [&str; 5] = ["nsubj", "obj", "det", "amod", "obl"];

/// Right-branching dependency chain and flat constituency tree over `tokens`.
pub fn sentence_from_tokens(tokens: &[String]) -> Sentence {
    let n = tokens.len();
    let dep = DepTree::from_nodes(
        (0..n)
            .map(|i| DepNode {
                head: i.checked_sub(1),
                deprel: if i == 0 { "root".into() } else { "dep".into() },
            })
            .collect(),
    )
    .expect("chain is a tree");
    let mut nodes = vec![ConstNode::Phrase {
        label: "S".into(),
        children: (0..n).map(|i| 1 + 2 * i).collect(),
    }];
    for i in 0..n {
        nodes.push(ConstNode::Phrase {
            label: "X".into(),
            children: vec![nodes.len() + 1],
        });
        nodes.push(ConstNode::Leaf { token: i });
    }
    let cons = ConstTree::from_nodes(nodes, 0).expect("flat tree");
    Sentence::new(tokens.to_vec(), dep, cons).expect("aligned trees")
}

/// Uniformly attached random dependency tree on `n ≥ 1` nodes.
pub fn random_dep_tree<R: Rng>(n: usize, rng: &mut R) -> DepTree {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut nodes = vec![
        DepNode {
            head: None,
            deprel: "root".into()
        };
        n
    ];
    for k in 1..n {
        let head = order[rng.gen_range(0..k)];
        nodes[order[k]] = DepNode {
            head: Some(head),
            deprel: RELS[rng.gen_range(0..RELS.len())].into(),
        };
    }
    DepTree::from_nodes(nodes).expect("random attachment is a tree")
}

/// Random constituency tree with `n ≥ 1` leaves in order.
pub fn random_const_tree<R: Rng>(n: usize, rng: &mut R) -> ConstTree {
    let mut nodes = Vec::new();
    let root = build_span(0, n, true, &mut nodes, rng);
    ConstTree::from_nodes(nodes, root).expect("random tree is well formed")
}

fn build_span<R: Rng>(lo: usize, hi: usize, top: bool, nodes: &mut Vec<ConstNode>, rng: &mut R) -> usize {
    let len = hi - lo;
    let id = nodes.len();
    if len == 1 && (top || rng.gen_bool(0.7)) {
        nodes.push(ConstNode::Phrase {
            label: TAGS[rng.gen_range(0..TAGS.len())].into(),
            children: vec![id + 1],
        });
        nodes.push(ConstNode::Leaf { token: lo });
        return id;
    }
    if len == 1 {
        nodes.push(ConstNode::Leaf { token: lo });
        return id;
    }
    nodes.push(ConstNode::Phrase {
        label: PHRASES[rng.gen_range(0..PHRASES.len())].into(),
        children: Vec::new(),
    });
    let parts = rng.gen_range(2..=len.min(3));
    let mut cuts: Vec<usize> = (lo + 1..hi).collect();
    cuts.shuffle(rng);
    let mut cuts: Vec<usize> = cuts.into_iter().take(parts - 1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![lo];
    bounds.extend(cuts);
    bounds.push(hi);
    let children: Vec<usize> = bounds.windows(2).map(|w| build_span(w[0], w[1], false, nodes, rng)).collect();
    if let ConstNode::Phrase { children: slot, .. } = &mut nodes[id] {
        *slot = children;
    }
    id
}

pub fn random_sentence<R: Rng>(tokens: Vec<String>, rng: &mut R) -> Sentence {
    let n = tokens.len();
    Sentence::new(tokens, random_dep_tree(n, rng), random_const_tree(n, rng)).expect("aligned")
}

/// Where the class-indicating sentences are planted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlantRegion {
    Anywhere,
    FirstThird,
}

/// Recipe for a corpus whose class is revealed by planted indicator tokens.
#[derive(Clone, Debug)]
pub struct PlantedCorpus {
    pub docs: usize,
    /// Class names; each doubles as that class's indicator token.
    pub labels: Vec<String>,
    /// Total distinct tokens including the indicators.
    pub vocab: usize,
    pub sentences: (usize, usize),
    pub sentence_len: (usize, usize),
    pub region: PlantRegion,
    /// Planted sentences per document (at least one).
    pub planted: usize,
}

impl Default for PlantedCorpus {
    fn default() -> Self {
        Self {
            docs: 40,
            labels: vec!["alpha".into(), "beta".into()],
            vocab: 50,
            sentences: (3, 6),
            sentence_len: (3, 6),
            region: PlantRegion::Anywhere,
            planted: 2,
        }
    }
}

impl PlantedCorpus {
    /// Longer documents whose first-third sentences all carry the class token.
    pub fn first_third() -> Self {
        Self {
            region: PlantRegion::FirstThird,
            sentences: (6, 9),
            planted: 3,
            ..Default::default()
        }
    }

    pub fn filler(&self) -> Vec<String> {
        (0..self.vocab - self.labels.len()).map(|i| format!("w{i:02}")).collect()
    }

    /// Balanced corpus: document `k` belongs to class `k mod L`.
    pub fn generate(&self, seed: u64) -> Vec<Document> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let filler = self.filler();
        (0..self.docs)
            .map(|k| {
                let class = k % self.labels.len();
                let n = rng.gen_range(self.sentences.0..=self.sentences.1);
                let pool: Vec<usize> = match self.region {
                    PlantRegion::Anywhere => (0..n).collect(),
                    PlantRegion::FirstThird => (0..n.div_ceil(3)).collect(),
                };
                let mut planted: Vec<usize> = pool.choose_multiple(&mut rng, self.planted.clamp(1, pool.len())).copied().collect();
                planted.sort_unstable();
                let sentences = (0..n)
                    .map(|i| {
                        let len = rng.gen_range(self.sentence_len.0..=self.sentence_len.1);
                        let mut toks: Vec<String> = (0..len).map(|_| filler.choose(&mut rng).unwrap().clone()).collect();
                        if planted.contains(&i) {
                            let hits = rng.gen_range(1..=len.div_ceil(2));
                            for pos in rand::seq::index::sample(&mut rng, len, hits) {
                                toks[pos] = self.labels[class].clone();
                            }
                        }
                        random_sentence(toks, &mut rng)
                    })
                    .collect();
                Document::new(format!("doc{k:03}"), sentences, vec![self.labels[class].clone()]).expect("non-empty")
            })
            .collect()
    }
}
