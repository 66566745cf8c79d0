use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabelVocabulary, LabeledAdjacency, TokenizedSentence, VisualGraph, SELF_LABEL};
use crate::error::{Error, Result};

/// Sentence fields of one corpus line. Unknown fields are ignored so the same
/// reader accepts full records.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RawSentence {
    #[serde(default)]
    pub id: Option<String>,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub heads: Vec<usize>,
    pub dep_labels: Vec<String>,
}

impl RawSentence {
    pub fn into_sentence(
        self,
        vocab: &mut LabelVocabulary,
        max_tokens: usize,
    ) -> Result<TokenizedSentence> {
        let pos = self.pos.iter().map(|p| vocab.pos_labels.intern(p)).collect();
        let deps = self
            .dep_labels
            .iter()
            .map(|l| vocab.dependency_labels.intern(l))
            .collect();
        TokenizedSentence::new(self.tokens, pos, self.heads, deps, max_tokens)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RawObject {
    pub label: String,
    pub score: f64,
}

/// Scene-graph detector output: objects plus `[subject, relation, object]`
/// triples indexing into `objects`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RawSceneGraph {
    pub objects: Vec<RawObject>,
    #[serde(default)]
    pub relations: Vec<(usize, String, usize)>,
}

/// Parses one corpus line into a sentence. `line` is 1-based and only used
/// for error messages.
pub fn parse_sentence_line(
    text: &str,
    line: usize,
    vocab: &mut LabelVocabulary,
    max_tokens: usize,
) -> Result<TokenizedSentence> {
    let raw: RawSentence = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let id = raw.id.clone();
    raw.into_sentence(vocab, max_tokens).map_err(|e| Error::Parse {
        line,
        message: match id {
            Some(id) => format!("record {id}: {e}"),
            None => e.to_string(),
        },
    })
}

/// Reads a line-delimited corpus and validates every sentence.
pub fn load_sentences(
    path: &Path,
    vocab: &mut LabelVocabulary,
    max_tokens: usize,
) -> Result<Vec<TokenizedSentence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_sentence_line(&line, i + 1, vocab, max_tokens)?);
    }
    Ok(out)
}

/// Keeps the `k_max` highest-scoring objects (stable on ties) and the
/// relation triples among them. Triples whose subject equals the object are
/// ignored; when two triples link the same pair the first one wins.
pub fn parse_scene_graph(
    raw: &RawSceneGraph,
    k_max: usize,
    vocab: &mut LabelVocabulary,
) -> Result<VisualGraph> {
    if raw.objects.is_empty() {
        return Err(Error::EmptySceneGraph);
    }
    let total = raw.objects.len();
    for (i, obj) in raw.objects.iter().enumerate() {
        if !(0.0..=1.0).contains(&obj.score) {
            return Err(Error::Ingest(format!(
                "object {i} score {} outside [0, 1]",
                obj.score
            )));
        }
    }
    for (s, label, o) in &raw.relations {
        if *s >= total || *o >= total {
            return Err(Error::Ingest(format!(
                "relation ({s}, {label}, {o}) references an object outside 0..{total}"
            )));
        }
    }

    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&a, &b| raw.objects[b].score.total_cmp(&raw.objects[a].score));
    order.truncate(k_max);

    let mut position = vec![None; total];
    for (new, &old) in order.iter().enumerate() {
        position[old] = Some(new);
    }

    let self_label = vocab.visual_relation_labels.intern(SELF_LABEL);
    let mut edges = LabeledAdjacency::self_loops(order.len(), self_label);
    for (s, label, o) in &raw.relations {
        if let (Some(a), Some(b)) = (position[*s], position[*o]) {
            if a != b {
                let id = vocab.visual_relation_labels.intern(label);
                edges.connect(a, b, id);
            }
        }
    }

    Ok(VisualGraph {
        object_labels: order
            .iter()
            .map(|&i| vocab.object_labels.intern(&raw.objects[i].label))
            .collect(),
        object_scores: order.iter().map(|&i| raw.objects[i].score).collect(),
        source_indices: order,
        edges,
    })
}

pub fn load_scene_graph(
    path: &Path,
    k_max: usize,
    vocab: &mut LabelVocabulary,
) -> Result<VisualGraph> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawSceneGraph = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    parse_scene_graph(&raw, k_max, vocab)
}
