//! Synthetic data: sentence-image records with planted entities, relations
//! and scene graphs, plus a planted-feature corpus for head training.
//!
//! Record generation, per record:
//! - `tokens` words; entity mentions of 1-2 tokens cover roughly a quarter
//!   of them, each with a type drawn uniformly from the entity inventory;
//! - a random dependency tree: tokens are visited in random order, the first
//!   is the root and every later one attaches to an already visited token;
//! - every pair of mentions is related with probability `relation_rate`;
//! - `objects` detected objects with uniform scores and one relation triple
//!   per object pair with probability 0.3.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};

use crate::corpus::{RawRecord, SceneGraphSource};
use crate::error::Result;
use crate::graph::{LabelVocabulary, RawObject, RawSceneGraph};
use crate::rng::{stream, unit_symmetric};
use crate::tagging::{canonicalize, encode_quintuples, quintuple_to_raw, Quintuple, Span, TagSpace};
use crate::train::Example;

pub const ENTITY_TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];

/// One relation per unordered pair of distinct entity types.
pub const RELATION_TYPES: [&str; 6] = [
    "located_in",
    "member_of",
    "awarded",
    "part_of",
    "contain",
    "present_in",
];

const NAMES: [&[&str]; 4] = [
    &["Curry", "Thompson", "Durant", "Kobe", "Serena", "Messi"],
    &["Oakland", "Paris", "Texas", "London", "Tokyo"],
    &["NBA", "Warriors", "Lakers", "UN", "FIFA"],
    &["Trophy", "Olympics", "Oscars", "iPhone", "Grammys"],
];
const FILLER: [(&str, &str); 12] = [
    ("the", "DET"),
    ("of", "ADP"),
    ("says", "VERB"),
    ("lifted", "VERB"),
    ("with", "ADP"),
    ("great", "ADJ"),
    ("game", "NOUN"),
    ("and", "CCONJ"),
    ("at", "ADP"),
    ("night", "NOUN"),
    ("wins", "VERB"),
    ("a", "DET"),
];
const DEP_LABELS: [&str; 8] = ["nsubj", "dobj", "prep", "pobj", "det", "amod", "compound", "conj"];
const OBJECTS: [&str; 10] = ["man", "woman", "ball", "trophy", "shirt", "court", "hand", "hat", "flag", "crowd"];
const VISUAL_RELATIONS: [&str; 5] = ["near", "holding", "wearing", "on", "behind"];

pub fn synthetic_vocabulary() -> LabelVocabulary {
    LabelVocabulary::new(
        ENTITY_TYPES.map(String::from).to_vec(),
        RELATION_TYPES.map(String::from).to_vec(),
    )
    .expect("built-in inventory is valid")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    pub records: usize,
    pub tokens: usize,
    pub objects: usize,
    pub relation_rate: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            records: 20,
            tokens: 70,
            objects: 12,
            relation_rate: 0.3,
            seed: 0,
        }
    }
}

fn random_tree(rng: &mut impl RngCore, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![0; n];
    heads[order[0]] = order[0];
    for k in 1..n {
        heads[order[k]] = order[rng.random_range(0..k)];
    }
    heads
}

pub fn synthetic_record(index: usize, options: &SynthOptions, vocab: &LabelVocabulary) -> RawRecord {
    let mut rng = stream(options.seed, &format!("synth/record/{index}"));
    let n = options.tokens.max(1);
    let mut tokens = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    let mut mentions: Vec<(Span, usize)> = Vec::new();
    while tokens.len() < n {
        let i = tokens.len();
        if rng.random_bool(0.2) {
            let t = rng.random_range(0..ENTITY_TYPES.len());
            let len = if i + 1 < n && rng.random_bool(0.3) { 2 } else { 1 };
            for _ in 0..len {
                let names = NAMES[t];
                tokens.push(names[rng.random_range(0..names.len())].to_string());
                pos.push("PROPN".to_string());
            }
            mentions.push((Span::new(i, i + len - 1), t));
        } else {
            let (word, tag) = FILLER[rng.random_range(0..FILLER.len())];
            tokens.push(word.to_string());
            pos.push(tag.to_string());
        }
    }
    let heads = random_tree(&mut rng, n);
    let dep_labels = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            if i == h {
                "ROOT".to_string()
            } else {
                DEP_LABELS[rng.random_range(0..DEP_LABELS.len())].to_string()
            }
        })
        .collect();

    let mut quints = Vec::new();
    for a in 0..mentions.len() {
        for b in a + 1..mentions.len() {
            if rng.random_bool(options.relation_rate) {
                let (e1, t1) = mentions[a];
                let (e2, t2) = mentions[b];
                let r = rng.random_range(0..vocab.relation_types().len());
                quints.push(Quintuple { e1, t1, e2, t2, r });
            }
        }
    }

    let objects: Vec<RawObject> = (0..options.objects.max(1))
        .map(|_| RawObject {
            label: OBJECTS[rng.random_range(0..OBJECTS.len())].to_string(),
            score: (rng.random_range(0..1000) as f64) / 1000.0,
        })
        .collect();
    let mut relations = Vec::new();
    for s in 0..objects.len() {
        for o in 0..objects.len() {
            if s < o && rng.random_bool(0.3) {
                let label = VISUAL_RELATIONS[rng.random_range(0..VISUAL_RELATIONS.len())];
                relations.push((s, label.to_string(), o));
            }
        }
    }

    RawRecord {
        id: format!("synth-{index:04}"),
        tokens,
        pos,
        heads,
        dep_labels,
        scene_graph: SceneGraphSource::Inline(RawSceneGraph { objects, relations }),
        gold_quintuples: canonicalize(quints).iter().map(|q| quintuple_to_raw(q, vocab)).collect(),
    }
}

pub fn synthetic_corpus(options: &SynthOptions) -> (LabelVocabulary, Vec<RawRecord>) {
    let vocab = synthetic_vocabulary();
    let records = (0..options.records)
        .map(|i| synthetic_record(i, options, &vocab))
        .collect();
    (vocab, records)
}

/// Writes `corpus.jsonl` and `labels.txt` into `dir`.
pub fn write_synthetic_corpus(dir: &std::path::Path, options: &SynthOptions) -> Result<()> {
    let (vocab, records) = synthetic_corpus(options);
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("records serialise"));
        text.push('\n');
    }
    let corpus = dir.join("corpus.jsonl");
    std::fs::write(&corpus, text).map_err(|e| crate::Error::io(&corpus, e))?;
    let labels = dir.join("labels.txt");
    std::fs::write(&labels, vocab.to_config_text()).map_err(|e| crate::Error::io(&labels, e))
}

/// Relation planted between an earlier entity of type `a` and a later one of
/// type `b` (`a < b`): the index of the pair in lexicographic order.
pub fn planted_relation(a: usize, b: usize, types: usize) -> usize {
    debug_assert!(a < b && b < types);
    (0..a).map(|x| types - 1 - x).sum::<usize>() + (b - a - 1)
}

/// Word features that determine the tag grid through a linear rule.
///
/// Each sentence mentions every entity type at most once, in type order, so
/// a cell's tag is a function of the two words' types alone: the entity type
/// when both words share it, the planted relation below the diagonal when the
/// row word's type is later, `N` otherwise. A word's feature vector is the
/// one-hot code of its type (slot 0 for non-entity words) plus uniform noise
/// of amplitude `noise`.
pub fn planted_examples(seed: u64, records: usize, max_tokens: usize, noise: f64) -> Vec<Example> {
    let types = ENTITY_TYPES.len();
    let space = TagSpace::new(types, RELATION_TYPES.len());
    let dim = types + 1;
    (0..records)
        .map(|index| {
            let mut rng = stream(seed, &format!("planted/{index}"));
            let n = rng.random_range(4..=max_tokens.max(4));
            let mut word_type = vec![None; n];
            let mut spans = Vec::new();
            let mut i = 0;
            for t in 0..types {
                if i >= n || !rng.random_bool(0.7) {
                    continue;
                }
                i += rng.random_range(0..3);
                if i >= n {
                    break;
                }
                let len = if i + 1 < n && rng.random_bool(0.3) { 2 } else { 1 };
                for w in word_type.iter_mut().skip(i).take(len) {
                    *w = Some(t);
                }
                spans.push((Span::new(i, i + len - 1), t));
                i += len;
            }
            let mut quints = Vec::new();
            for a in 0..spans.len() {
                for b in a + 1..spans.len() {
                    let (e1, t1) = spans[a];
                    let (e2, t2) = spans[b];
                    quints.push(Quintuple { e1, t1, e2, t2, r: planted_relation(t1, t2, types) });
                }
            }
            let quints = canonicalize(quints);
            let s_rep = Array2::from_shape_fn((n, dim), |(w, c)| {
                let slot = word_type[w].map_or(0, |t| t + 1);
                f64::from(c == slot) + noise * unit_symmetric(&mut rng)
            });
            Example {
                id: format!("planted-{index:04}"),
                s_rep,
                gold: encode_quintuples(&quints, n, space).expect("planted spans are disjoint"),
                gold_quintuples: quints,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_corpus;

    #[test]
    fn planted_relations_are_a_bijection() {
        let mut seen = std::collections::BTreeSet::new();
        for a in 0..4 {
            for b in a + 1..4 {
                assert!(seen.insert(planted_relation(a, b, 4)));
            }
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn generated_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        let options = SynthOptions {
            records: 5,
            ..SynthOptions::default()
        };
        write_synthetic_corpus(dir.path(), &options).unwrap();
        let mut vocab = LabelVocabulary::load(&dir.path().join("labels.txt")).unwrap();
        let records = load_corpus(&dir.path().join("corpus.jsonl"), &mut vocab, 70, 10).unwrap();
        assert_eq!(records.len(), 5);
        assert!(records.iter().all(|r| r.sentence.len() == 70 && r.visual.len() == 10));
        assert!(records.iter().any(|r| !r.gold.is_empty()));
        let (_, again) = synthetic_corpus(&options);
        assert_eq!(again, synthetic_corpus(&options).1);
    }

    #[test]
    fn planted_examples_have_consistent_grids() {
        for ex in planted_examples(3, 20, 12, 0.1) {
            assert_eq!(crate::tagging::decode_grid(&ex.gold), ex.gold_quintuples);
            assert_eq!(ex.s_rep.nrows(), ex.gold.len());
        }
    }
}
