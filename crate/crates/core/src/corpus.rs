//! Sentence-image records: one JSON object per line.
//!
//! ```text
//! {"id": "r1", "tokens": [..], "pos": [..], "heads": [..], "dep_labels": [..],
//!  "scene_graph": {"objects": [..], "relations": [..]} or "path/to/graph.json",
//!  "gold_quintuples": [[0, 0, "PER", 2, 2, "PER", "peer"], ..]}
//! ```
//!
//! Scene-graph paths are relative to the corpus file.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    load_scene_graph, parse_scene_graph, LabelVocabulary, RawSceneGraph, RawSentence, TokenizedSentence,
    VisualGraph,
};
use crate::tagging::{canonicalize, encode_quintuples, quintuple_from_raw, Quintuple, RawQuintuple, TagSpace};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SceneGraphSource {
    Inline(RawSceneGraph),
    Path(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub heads: Vec<usize>,
    pub dep_labels: Vec<String>,
    pub scene_graph: SceneGraphSource,
    #[serde(default)]
    pub gold_quintuples: Vec<RawQuintuple>,
}

#[derive(Clone, Debug)]
pub struct Record {
    pub id: String,
    pub sentence: TokenizedSentence,
    pub visual: VisualGraph,
    /// Canonical order.
    pub gold: Vec<Quintuple>,
}

fn build_record(raw: RawRecord, base: &Path, vocab: &mut LabelVocabulary, max_tokens: usize, max_objects: usize) -> Result<Record> {
    let sentence = RawSentence {
        id: Some(raw.id.clone()),
        tokens: raw.tokens,
        pos: raw.pos,
        heads: raw.heads,
        dep_labels: raw.dep_labels,
    }
    .into_sentence(vocab, max_tokens)?;
    let visual = match &raw.scene_graph {
        SceneGraphSource::Inline(graph) => parse_scene_graph(graph, max_objects, vocab)?,
        SceneGraphSource::Path(p) => load_scene_graph(&base.join(p), max_objects, vocab)?,
    };
    let gold = raw
        .gold_quintuples
        .iter()
        .map(|q| quintuple_from_raw(q, vocab))
        .collect::<Result<Vec<_>>>()?;
    let gold = canonicalize(gold);
    // Rejects spans past the sentence end and inconsistent tag assignments.
    encode_quintuples(&gold, sentence.len(), TagSpace::of(vocab))
        .map_err(|e| Error::Ingest(format!("gold quintuples: {e}")))?;
    Ok(Record {
        id: raw.id,
        sentence,
        visual,
        gold,
    })
}

pub fn parse_record_line(
    text: &str,
    line: usize,
    base: &Path,
    vocab: &mut LabelVocabulary,
    max_tokens: usize,
    max_objects: usize,
) -> Result<Record> {
    let raw: RawRecord = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let id = raw.id.clone();
    build_record(raw, base, vocab, max_tokens, max_objects).map_err(|e| match e {
        Error::Io { .. } | Error::Parse { .. } => e.in_record(&id),
        other => Error::Parse {
            line,
            message: format!("record {id}: {other}"),
        },
    })
}

/// Reads and validates every record. Record ids must be unique.
pub fn load_corpus(path: &Path, vocab: &mut LabelVocabulary, max_tokens: usize, max_objects: usize) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_record_line(&line, i + 1, base, vocab, max_tokens, max_objects)?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("duplicate record id {}", record.id),
            });
        }
        out.push(record);
    }
    Ok(out)
}
