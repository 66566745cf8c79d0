//! Textual and visual graphs, their ingestion, and node/edge embeddings.

mod embed;
mod io;
mod vocab;

pub use embed::{
    embed_edges, embed_nodes, EdgeEmbeddings, LabelTable, EmbeddingSource, Modality,
    NodeEmbeddings, PrecomputedEmbeddings,
};
pub use io::{
    load_scene_graph, load_sentences, parse_scene_graph, parse_sentence_line, RawObject,
    RawSceneGraph, RawSentence,
};
pub use vocab::{Interner, LabelId, LabelVocabulary, NO_RELATION, SELF_LABEL};

use ndarray::Array2;

use crate::error::{Error, Result};

/// A parsed sentence. Label ids refer to the owning [`LabelVocabulary`].
#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedSentence {
    tokens: Vec<String>,
    pos_tags: Vec<LabelId>,
    dep_heads: Vec<usize>,
    dep_labels: Vec<LabelId>,
}

impl TokenizedSentence {
    /// Validates lengths, head range, the single root, and that every token
    /// reaches the root by following heads.
    pub fn new(
        tokens: Vec<String>,
        pos_tags: Vec<LabelId>,
        dep_heads: Vec<usize>,
        dep_labels: Vec<LabelId>,
        max_tokens: usize,
    ) -> Result<Self> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Ingest("empty sentence".into()));
        }
        if n > max_tokens {
            return Err(Error::Ingest(format!(
                "sentence has {n} tokens, more than max_tokens {max_tokens}"
            )));
        }
        for (field, len) in [
            ("pos", pos_tags.len()),
            ("heads", dep_heads.len()),
            ("dep_labels", dep_labels.len()),
        ] {
            if len != n {
                return Err(Error::Ingest(format!(
                    "length mismatch: {n} tokens but {len} {field}"
                )));
            }
        }
        if let Some((i, &h)) = dep_heads.iter().enumerate().find(|(_, &h)| h >= n) {
            return Err(Error::Ingest(format!("head {h} of token {i} out of range")));
        }
        let roots = dep_heads.iter().enumerate().filter(|(i, &h)| *i == h).count();
        match roots {
            0 => return Err(Error::Ingest("no root".into())),
            1 => {}
            _ => return Err(Error::Ingest("multiple roots".into())),
        }
        for start in 0..n {
            let mut node = start;
            for _ in 0..n {
                node = dep_heads[node];
            }
            if dep_heads[node] != node {
                return Err(Error::Ingest(format!(
                    "token {start} does not reach the root (dependency cycle)"
                )));
            }
        }
        Ok(Self {
            tokens,
            pos_tags,
            dep_heads,
            dep_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pos_tags(&self) -> &[LabelId] {
        &self.pos_tags
    }

    pub fn dep_heads(&self) -> &[usize] {
        &self.dep_heads
    }

    pub fn dep_labels(&self) -> &[LabelId] {
        &self.dep_labels
    }

    pub fn root(&self) -> usize {
        self.dep_heads
            .iter()
            .enumerate()
            .find(|(i, &h)| *i == h)
            .map(|(i, _)| i)
            .expect("validated at construction")
    }
}

/// Symmetric self-loop adjacency with one label per edge. `None` marks
/// non-adjacent pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledAdjacency {
    adjacency: Array2<bool>,
    edge_labels: Array2<Option<LabelId>>,
}

impl LabeledAdjacency {
    /// `n` isolated nodes, each carrying a self-loop labelled `self_label`.
    pub fn self_loops(n: usize, self_label: LabelId) -> Self {
        let mut adjacency = Array2::from_elem((n, n), false);
        let mut edge_labels = Array2::from_elem((n, n), None);
        for i in 0..n {
            adjacency[[i, i]] = true;
            edge_labels[[i, i]] = Some(self_label);
        }
        Self {
            adjacency,
            edge_labels,
        }
    }

    /// Adds the undirected edge `i -- j`. An existing off-diagonal label is kept.
    pub fn connect(&mut self, i: usize, j: usize, label: LabelId) {
        if i == j || self.adjacency[[i, j]] {
            return;
        }
        for (a, b) in [(i, j), (j, i)] {
            self.adjacency[[a, b]] = true;
            self.edge_labels[[a, b]] = Some(label);
        }
    }

    pub fn len(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn adjacency(&self) -> &Array2<bool> {
        &self.adjacency
    }

    pub fn edge_labels(&self) -> &Array2<Option<LabelId>> {
        &self.edge_labels
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[[i, j]]
    }

    /// Off-diagonal neighbours of `i`, in index order.
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency
            .row(i)
            .into_iter()
            .enumerate()
            .filter(move |&(j, &a)| a && j != i)
            .map(|(j, _)| j)
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// Adjacency as a 0/1 matrix.
    pub fn mask(&self) -> Array2<f64> {
        self.adjacency.mapv(|a| if a { 1.0 } else { 0.0 })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextualGraph {
    pub edges: LabeledAdjacency,
}

impl TextualGraph {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// Dependency graph over the sentence tokens: every head-dependent arc becomes
/// an undirected edge carrying the dependent's label, plus a `SELF` loop on
/// every token.
pub fn build_textual_graph(sentence: &TokenizedSentence, vocab: &LabelVocabulary) -> TextualGraph {
    let self_label = vocab
        .dependency_labels
        .get(SELF_LABEL)
        .expect("dependency interner reserves SELF");
    let mut edges = LabeledAdjacency::self_loops(sentence.len(), self_label);
    for (dependent, (&head, &label)) in sentence
        .dep_heads()
        .iter()
        .zip(sentence.dep_labels())
        .enumerate()
    {
        edges.connect(dependent, head, label);
    }
    TextualGraph { edges }
}

/// Top-k object graph from a scene-graph detector.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualGraph {
    pub object_labels: Vec<LabelId>,
    pub object_scores: Vec<f64>,
    /// Position of each kept object in the original detector output.
    pub source_indices: Vec<usize>,
    pub edges: LabeledAdjacency,
}

impl VisualGraph {
    pub fn len(&self) -> usize {
        self.object_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object_labels.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sentence(
        vocab: &mut LabelVocabulary,
        tokens: &[&str],
        heads: &[usize],
        labels: &[&str],
    ) -> TokenizedSentence {
        let pos = tokens.iter().map(|_| vocab.pos_labels.intern("X")).collect();
        let deps = labels
            .iter()
            .map(|l| vocab.dependency_labels.intern(l))
            .collect();
        TokenizedSentence::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            pos,
            heads.to_vec(),
            deps,
            70,
        )
        .unwrap()
    }

    #[test]
    fn two_tokens_single_arc() {
        let mut vocab = LabelVocabulary::default();
        let s = sentence(&mut vocab, &["Curry", "smiles"], &[1, 1], &["nsubj", "ROOT"]);
        let g = build_textual_graph(&s, &vocab);
        assert_eq!(g.edges.mask(), ndarray::arr2(&[[1.0, 1.0], [1.0, 1.0]]));
        let nsubj = vocab.dependency_labels.get("nsubj");
        assert_eq!(g.edges.edge_labels()[[0, 1]], nsubj);
        assert_eq!(g.edges.edge_labels()[[1, 0]], nsubj);
        assert_eq!(g.edges.edge_labels()[[0, 0]], Some(LabelId(0)));
    }

    #[test]
    fn single_token_is_self_loop_only() {
        let mut vocab = LabelVocabulary::default();
        let s = sentence(&mut vocab, &["Hi"], &[0], &["ROOT"]);
        let g = build_textual_graph(&s, &vocab);
        assert_eq!(g.edges.mask(), ndarray::arr2(&[[1.0]]));
    }

    #[test]
    fn three_tokens_rooted_in_middle() {
        let mut vocab = LabelVocabulary::default();
        let s = sentence(&mut vocab, &["a", "b", "c"], &[1, 1, 1], &["x", "ROOT", "y"]);
        assert_eq!(s.root(), 1);
        let g = build_textual_graph(&s, &vocab);
        assert!(!g.edges.is_adjacent(0, 2));
        assert_eq!(g.edges.neighbours(1).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn validation_errors() {
        let mk = |heads: Vec<usize>| {
            let n = heads.len();
            TokenizedSentence::new(
                (0..n).map(|i| i.to_string()).collect(),
                vec![LabelId(0); n],
                heads,
                vec![LabelId(0); n],
                70,
            )
        };
        let err = mk(vec![0, 1]).unwrap_err().to_string();
        assert!(err.contains("multiple roots"), "{err}");
        assert!(mk(vec![1, 0]).unwrap_err().to_string().contains("no root"));
        assert!(mk(vec![0, 5]).unwrap_err().to_string().contains("out of range"));
        assert!(mk(vec![0, 2, 1]).unwrap_err().to_string().contains("cycle"));
        let long = TokenizedSentence::new(
            vec!["x".into(); 3],
            vec![LabelId(0); 3],
            vec![0, 0, 0],
            vec![LabelId(0); 3],
            2,
        );
        assert!(long.unwrap_err().to_string().contains("max_tokens"));
    }
}
