//! Word-pair tagging: quintuples are written into an `n x n` grid of tags,
//! predicted cell by cell, and read back out.
//!
//! Tag ids are `0` for `N`, then one id per entity type, then one per
//! relation type, in vocabulary order.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::LabelVocabulary;
use crate::nn::uniform_matrix;

pub type TagId = u16;

pub const N_TAG: TagId = 0;

/// Sizes of the entity and relation inventories.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TagSpace {
    pub entities: usize,
    pub relations: usize,
}

impl TagSpace {
    pub fn new(entities: usize, relations: usize) -> Self {
        Self { entities, relations }
    }

    pub fn of(vocab: &LabelVocabulary) -> Self {
        Self::new(vocab.entity_types().len(), vocab.relation_types().len())
    }

    pub fn len(&self) -> usize {
        1 + self.entities + self.relations
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn entity_tag(&self, entity: usize) -> TagId {
        debug_assert!(entity < self.entities);
        (1 + entity) as TagId
    }

    pub fn relation_tag(&self, relation: usize) -> TagId {
        debug_assert!(relation < self.relations);
        (1 + self.entities + relation) as TagId
    }

    pub fn as_entity(&self, tag: TagId) -> Option<usize> {
        let t = tag as usize;
        (1..=self.entities).contains(&t).then(|| t - 1)
    }

    pub fn as_relation(&self, tag: TagId) -> Option<usize> {
        let t = tag as usize;
        (t > self.entities && t < self.len()).then(|| t - 1 - self.entities)
    }
}

/// Name of `tag` in `vocab`.
pub fn tag_name(vocab: &LabelVocabulary, tag: TagId) -> &str {
    let space = TagSpace::of(vocab);
    if let Some(e) = space.as_entity(tag) {
        &vocab.entity_types()[e]
    } else if let Some(r) = space.as_relation(tag) {
        &vocab.relation_types()[r]
    } else {
        crate::graph::NO_RELATION
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagGrid {
    space: TagSpace,
    cells: Array2<TagId>,
}

impl TagGrid {
    pub fn empty(n: usize, space: TagSpace) -> Self {
        Self {
            space,
            cells: Array2::from_elem((n, n), N_TAG),
        }
    }

    pub fn from_cells(cells: Array2<TagId>, space: TagSpace) -> Result<Self> {
        if cells.nrows() != cells.ncols() {
            return Err(Error::shape("tag grid", "square", format!("{:?}", cells.dim())));
        }
        if let Some(((i, j), t)) = cells.indexed_iter().find(|(_, &t)| t as usize >= space.len()) {
            return Err(Error::Encoding(format!(
                "tag id {t} at cell ({i}, {j}) outside tag space of size {}",
                space.len()
            )));
        }
        Ok(Self { space, cells })
    }

    pub fn len(&self) -> usize {
        self.cells.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn space(&self) -> TagSpace {
        self.space
    }

    pub fn cells(&self) -> &Array2<TagId> {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> TagId {
        self.cells[[i, j]]
    }
}

/// Inclusive token range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn single(i: usize) -> Self {
        Self::new(i, i)
    }

    pub fn tokens(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// `(e1, t1, e2, t2, r)`. Types and relation are indices into the vocabulary's
/// entity and relation lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Quintuple {
    pub e1: Span,
    pub t1: usize,
    pub e2: Span,
    pub t2: usize,
    pub r: usize,
}

impl Quintuple {
    /// Swaps the entities so `e1` is the one appearing first.
    pub fn canonical(self) -> Self {
        if self.e2.start < self.e1.start {
            Self {
                e1: self.e2,
                t1: self.t2,
                e2: self.e1,
                t2: self.t1,
                r: self.r,
            }
        } else {
            self
        }
    }

    fn sort_key(&self) -> (usize, usize, usize, usize, usize, usize, usize) {
        (self.e1.start, self.e2.start, self.r, self.e1.end, self.e2.end, self.t1, self.t2)
    }
}

/// Canonical form of a quintuple list: entities ordered within each tuple,
/// duplicates removed, sorted by first-entity start, second-entity start,
/// relation.
pub fn canonicalize(quints: impl IntoIterator<Item = Quintuple>) -> Vec<Quintuple> {
    let mut out: Vec<Quintuple> = quints.into_iter().map(Quintuple::canonical).collect();
    out.sort_by_key(Quintuple::sort_key);
    out.dedup();
    out
}

fn set_cell(grid: &mut Array2<TagId>, i: usize, j: usize, tag: TagId, vocab_space: TagSpace) -> Result<()> {
    let cell = &mut grid[[i, j]];
    if *cell != N_TAG && *cell != tag {
        let describe = |t: TagId| match (vocab_space.as_entity(t), vocab_space.as_relation(t)) {
            (Some(e), _) => format!("entity type {e}"),
            (_, Some(r)) => format!("relation {r}"),
            _ => "N".to_string(),
        };
        return Err(Error::Encoding(format!(
            "conflicting tags at cell ({i}, {j}): {} vs {}",
            describe(*cell),
            describe(tag)
        )));
    }
    *cell = tag;
    Ok(())
}

/// Writes `quints` into an `n x n` grid: entity type on every cell inside an
/// entity's block, relation on every cell pairing a word of the later entity
/// (row) with a word of the earlier entity (column).
pub fn encode_quintuples(quints: &[Quintuple], n: usize, space: TagSpace) -> Result<TagGrid> {
    let mut entities: Vec<(Span, usize)> = Vec::new();
    for q in quints {
        for (span, t) in [(q.e1, q.t1), (q.e2, q.t2)] {
            if span.start > span.end || span.end >= n {
                return Err(Error::Encoding(format!(
                    "span [{}, {}] outside sentence of {n} tokens",
                    span.start, span.end
                )));
            }
            if t >= space.entities {
                return Err(Error::Encoding(format!("entity type {t} out of range")));
            }
            entities.push((span, t));
        }
        if q.r >= space.relations {
            return Err(Error::Encoding(format!("relation {} out of range", q.r)));
        }
        if q.e1.overlaps(&q.e2) {
            return Err(Error::Encoding(format!(
                "quintuple entities [{}, {}] and [{}, {}] overlap",
                q.e1.start, q.e1.end, q.e2.start, q.e2.end
            )));
        }
    }
    let spans: BTreeSet<Span> = entities.iter().map(|(s, _)| *s).collect();
    let spans: Vec<Span> = spans.into_iter().collect();
    for pair in spans.windows(2) {
        if pair[0].overlaps(&pair[1]) {
            return Err(Error::Encoding(format!(
                "entity spans [{}, {}] and [{}, {}] partially overlap",
                pair[0].start, pair[0].end, pair[1].start, pair[1].end
            )));
        }
    }
    let mut cells = Array2::from_elem((n, n), N_TAG);
    for (span, t) in &entities {
        let tag = space.entity_tag(*t);
        for i in span.tokens() {
            for j in span.tokens() {
                set_cell(&mut cells, i, j, tag, space)?;
            }
        }
    }
    for q in quints {
        let q = q.canonical();
        let tag = space.relation_tag(q.r);
        for i in q.e2.tokens() {
            for j in q.e1.tokens() {
                set_cell(&mut cells, i, j, tag, space)?;
            }
        }
    }
    Ok(TagGrid { space, cells })
}

/// Entity spans read off the diagonal. A run grows from `i` to `i + 1` while
/// the diagonal keeps the same type and the block cell `(start, i + 1)` agrees,
/// so two adjacent entities of one type stay separate.
pub fn decode_entities(grid: &TagGrid) -> Vec<(Span, usize)> {
    let n = grid.len();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let tag = grid.get(i, i);
        let Some(t) = grid.space.as_entity(tag) else {
            i += 1;
            continue;
        };
        let start = i;
        while i + 1 < n && grid.get(i + 1, i + 1) == tag && grid.get(start, i + 1) == tag {
            i += 1;
        }
        out.push((Span::new(start, i), t));
        i += 1;
    }
    out
}

/// Reads quintuples back out of a grid. Every ordered pair of decoded entities
/// takes the majority relation tag over its cross block (ties go to the lowest
/// id); pairs with no relation tag produce nothing. Cells matching neither
/// pattern are ignored.
pub fn decode_grid(grid: &TagGrid) -> Vec<Quintuple> {
    let entities = decode_entities(grid);
    let mut counts = vec![0usize; grid.space.relations];
    let mut out = Vec::new();
    for (a, &(e1, t1)) in entities.iter().enumerate() {
        for &(e2, t2) in &entities[a + 1..] {
            counts.iter_mut().for_each(|c| *c = 0);
            for i in e2.tokens() {
                for j in e1.tokens() {
                    if let Some(r) = grid.space.as_relation(grid.get(i, j)) {
                        counts[r] += 1;
                    }
                }
            }
            let best = counts
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .max_by(|(ra, ca), (rb, cb)| ca.cmp(cb).then(rb.cmp(ra)));
            if let Some((r, _)) = best {
                out.push(Quintuple { e1, t1, e2, t2, r });
            }
        }
    }
    canonicalize(out)
}

/// Linear map from a word-pair representation `[S_i; S_j]` to tag logits.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead {
    /// `d_y x 2 d_T`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl PredictionHead {
    pub fn init(rng: &mut impl RngCore, model_dim: usize, tags: usize) -> Self {
        let weight = uniform_matrix(rng, tags, 2 * model_dim, 2 * model_dim);
        let bias = uniform_matrix(rng, 1, tags, 2 * model_dim).into_shape_with_order(tags).unwrap();
        Self { weight, bias }
    }

    pub fn zeros(model_dim: usize, tags: usize) -> Self {
        Self {
            weight: Array2::zeros((tags, 2 * model_dim)),
            bias: Array1::zeros(tags),
        }
    }

    pub fn tags(&self) -> usize {
        self.weight.nrows()
    }

    pub fn model_dim(&self) -> usize {
        self.weight.ncols() / 2
    }

    /// Tag logits for every cell, `n x n x d_y`.
    pub fn logits(&self, s_rep: ArrayView2<f64>) -> Result<Array3<f64>> {
        let d = self.model_dim();
        if s_rep.ncols() != d || self.weight.ncols() != 2 * d {
            return Err(Error::shape("prediction head input", 2 * d, 2 * s_rep.ncols()));
        }
        if self.bias.len() != self.tags() {
            return Err(Error::shape("prediction head bias", self.tags(), self.bias.len()));
        }
        let n = s_rep.nrows();
        let left = s_rep.dot(&self.weight.slice(s![.., ..d]).t());
        let right = s_rep.dot(&self.weight.slice(s![.., d..]).t());
        let mut out = Array3::zeros((n, n, self.tags()));
        for i in 0..n {
            for j in 0..n {
                let mut cell = out.slice_mut(s![i, j, ..]);
                cell.assign(&left.row(i));
                cell += &right.row(j);
                cell += &self.bias;
            }
        }
        Ok(out)
    }
}

fn log_softmax_cells(mut logits: Array3<f64>) -> Array3<f64> {
    for mut cell in logits.lanes_mut(Axis(2)) {
        let max = cell.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + cell.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        cell.mapv_inplace(|v| v - lse);
    }
    logits
}

/// Per-cell tag distributions, `softmax(W_p [S_i; S_j] + b_p)`.
pub fn predict_grid(s_rep: ArrayView2<f64>, head: &PredictionHead) -> Result<Array3<f64>> {
    Ok(log_softmax_cells(head.logits(s_rep)?).mapv_into(f64::exp))
}

/// Highest-probability tag per cell; ties go to the lowest id.
pub fn argmax_grid(probs: &Array3<f64>, space: TagSpace) -> Result<TagGrid> {
    let (n, m, d) = probs.dim();
    if n != m || d != space.len() {
        return Err(Error::shape("tag probabilities", format!("({n}, {n}, {})", space.len()), format!("{:?}", probs.dim())));
    }
    let cells = Array2::from_shape_fn((n, n), |(i, j)| {
        let mut best = 0;
        for t in 1..d {
            if probs[[i, j, t]] > probs[[i, j, best]] {
                best = t;
            }
        }
        best as TagId
    });
    Ok(TagGrid { space, cells })
}

fn check_gold(n: usize, tags: usize, gold: &TagGrid) -> Result<()> {
    if gold.len() != n {
        return Err(Error::shape("gold grid", n, gold.len()));
    }
    if gold.space.len() != tags {
        return Err(Error::shape("tag space", tags, gold.space.len()));
    }
    Ok(())
}

/// Cross-entropy summed over all `n^2` cells.
pub fn main_loss(probs: &Array3<f64>, gold: &TagGrid) -> Result<f64> {
    let (n, _, d) = probs.dim();
    check_gold(n, d, gold)?;
    Ok(gold
        .cells
        .indexed_iter()
        .map(|((i, j), &t)| -probs[[i, j, t as usize]].ln())
        .sum())
}

/// `l_main + lambda * l_graph`.
pub fn joint_loss(l_main: f64, l_graph: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::config("lambda", format!("must be non-negative, got {lambda}")));
    }
    Ok(l_main + lambda * l_graph)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGradients {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Main loss and its gradient with respect to the head parameters.
///
/// With `D_ij = p_ij - onehot(gold_ij)`, the weight gradient is
/// `sum_ij D_ij [S_i; S_j]^T`, which splits into row and column sums of `D`.
pub fn head_loss_and_gradients(
    s_rep: ArrayView2<f64>,
    gold: &TagGrid,
    head: &PredictionHead,
) -> Result<(f64, HeadGradients)> {
    let n = s_rep.nrows();
    check_gold(n, head.tags(), gold)?;
    let log_probs = log_softmax_cells(head.logits(s_rep)?);
    let mut loss = 0.0;
    let mut delta = log_probs.mapv(f64::exp);
    for ((i, j), &t) in gold.cells.indexed_iter() {
        loss -= log_probs[[i, j, t as usize]];
        delta[[i, j, t as usize]] -= 1.0;
    }
    let by_row = delta.sum_axis(Axis(1));
    let by_col = delta.sum_axis(Axis(0));
    let d = head.model_dim();
    let mut weight = Array2::zeros(head.weight.dim());
    weight.slice_mut(s![.., ..d]).assign(&by_row.t().dot(&s_rep));
    weight.slice_mut(s![.., d..]).assign(&by_col.t().dot(&s_rep));
    let bias = by_row.sum_axis(Axis(0));
    Ok((loss, HeadGradients { weight, bias }))
}

pub fn head_gradients(s_rep: ArrayView2<f64>, gold: &TagGrid, head: &PredictionHead) -> Result<HeadGradients> {
    head_loss_and_gradients(s_rep, gold, head).map(|(_, g)| g)
}

/// Exact-match counts, summable across records.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl MatchCounts {
    pub fn of(pred: &[Quintuple], gold: &[Quintuple]) -> Self {
        let pred = canonicalize(pred.iter().copied());
        let gold = canonicalize(gold.iter().copied());
        let correct = pred.iter().filter(|q| gold.contains(q)).count();
        Self {
            correct,
            predicted: pred.len(),
            gold: gold.len(),
        }
    }

    pub fn add(&mut self, other: MatchCounts) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.correct, self.predicted);
        let recall = ratio(self.correct, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Metrics { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Metrics {
    /// `precision=0.6667` style lines.
    pub fn to_key_values(&self) -> String {
        format!(
            "precision={:.4}\nrecall={:.4}\nf1={:.4}\n",
            self.precision, self.recall, self.f1
        )
    }
}

pub fn evaluate(pred: &[Quintuple], gold: &[Quintuple]) -> Metrics {
    MatchCounts::of(pred, gold).metrics()
}

/// `[start1, end1, type1, start2, end2, type2, relation]` as stored on disk.
pub type RawQuintuple = (usize, usize, String, usize, usize, String, String);

/// One line of a quintuple file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuintupleRecord {
    pub id: String,
    pub quintuples: Vec<RawQuintuple>,
}

pub fn quintuple_from_raw(raw: &RawQuintuple, vocab: &LabelVocabulary) -> Result<Quintuple> {
    let (s1, e1, t1, s2, e2, t2, r) = raw;
    let entity = |name: &str| vocab.entity_index(name).ok_or_else(|| Error::UnknownLabel(name.to_string()));
    let q = Quintuple {
        e1: Span::new(*s1, *e1),
        t1: entity(t1)?,
        e2: Span::new(*s2, *e2),
        t2: entity(t2)?,
        r: vocab.relation_index(r).ok_or_else(|| Error::UnknownLabel(r.to_string()))?,
    };
    for span in [q.e1, q.e2] {
        if span.start > span.end {
            return Err(Error::Ingest(format!("span [{}, {}] is reversed", span.start, span.end)));
        }
    }
    if q.e1.overlaps(&q.e2) {
        return Err(Error::Ingest(format!(
            "quintuple entities [{s1}, {e1}] and [{s2}, {e2}] overlap"
        )));
    }
    Ok(q)
}

pub fn quintuple_to_raw(q: &Quintuple, vocab: &LabelVocabulary) -> RawQuintuple {
    (
        q.e1.start,
        q.e1.end,
        vocab.entity_types()[q.t1].clone(),
        q.e2.start,
        q.e2.end,
        vocab.entity_types()[q.t2].clone(),
        vocab.relation_types()[q.r].clone(),
    )
}

pub fn format_quintuple_line(id: &str, quints: &[Quintuple], vocab: &LabelVocabulary) -> String {
    let record = QuintupleRecord {
        id: id.to_string(),
        quintuples: quints.iter().map(|q| quintuple_to_raw(q, vocab)).collect(),
    };
    serde_json::to_string(&record).expect("quintuple records serialise")
}

pub fn load_quintuple_file(path: &Path, vocab: &LabelVocabulary) -> Result<Vec<(String, Vec<Quintuple>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: i + 1, message };
        let record: QuintupleRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let quints = record
            .quintuples
            .iter()
            .map(|raw| quintuple_from_raw(raw, vocab))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(format!("record {}: {e}", record.id)))?;
        out.push((record.id, canonicalize(quints)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn vocab() -> LabelVocabulary {
        LabelVocabulary::new(
            ["PER", "LOC", "ORG", "MISC"].map(String::from).to_vec(),
            ["peer", "member_of", "awarded"].map(String::from).to_vec(),
        )
        .unwrap()
    }

    fn q(e1: (usize, usize), t1: usize, e2: (usize, usize), t2: usize, r: usize) -> Quintuple {
        Quintuple {
            e1: Span::new(e1.0, e1.1),
            t1,
            e2: Span::new(e2.0, e2.1),
            t2,
            r,
        }
    }

    #[test]
    fn tag_ids() {
        let space = TagSpace::of(&vocab());
        assert_eq!(space.len(), 8);
        assert_eq!(space.entity_tag(0), 1);
        assert_eq!(space.relation_tag(0), 5);
        assert_eq!(space.as_entity(4), Some(3));
        assert_eq!(space.as_entity(5), None);
        assert_eq!(space.as_relation(7), Some(2));
        assert_eq!(space.as_relation(8), None);
        assert_eq!(tag_name(&vocab(), 6), "member_of");
        assert_eq!(tag_name(&vocab(), 0), "N");
    }

    #[test]
    fn example_sentence_cells() {
        // Curry says Thompson of the NBA lifted the O'Brien Trophy
        let v = vocab();
        let space = TagSpace::of(&v);
        let quints = vec![
            q((2, 2), 0, (0, 0), 0, 0),
            q((2, 2), 0, (5, 5), 2, 1),
            q((2, 2), 0, (8, 9), 3, 2),
        ];
        let grid = encode_quintuples(&quints, 10, space).unwrap();
        assert_eq!(tag_name(&v, grid.get(0, 0)), "PER");
        assert_eq!(tag_name(&v, grid.get(2, 0)), "peer");
        assert_eq!(grid.get(0, 2), N_TAG);
        assert_eq!(tag_name(&v, grid.get(8, 9)), "MISC");
        assert_eq!(tag_name(&v, grid.get(9, 2)), "awarded");
        let decoded = decode_grid(&grid);
        assert_eq!(decoded, canonicalize(quints));
        assert_eq!(decoded[0], q((0, 0), 0, (2, 2), 0, 0));
    }

    #[test]
    fn empty_and_garbage() {
        let space = TagSpace::new(2, 2);
        let grid = encode_quintuples(&[], 4, space).unwrap();
        assert!(grid.cells().iter().all(|&t| t == N_TAG));
        assert!(decode_grid(&grid).is_empty());
        let mut rng = stream(5, "garbage");
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let cells = Array2::from_shape_fn((n, n), |_| rng.random_range(0..space.len()) as TagId);
            let grid = TagGrid::from_cells(cells, space).unwrap();
            for quint in decode_grid(&grid) {
                assert!(quint.e1.end < quint.e2.start && quint.e2.end < n);
            }
        }
        assert!(TagGrid::from_cells(Array2::from_elem((2, 2), 9), space).is_err());
    }

    #[test]
    fn adjacent_same_type_entities_stay_separate() {
        let space = TagSpace::new(1, 1);
        let quints = vec![q((0, 0), 0, (1, 2), 0, 0)];
        let grid = encode_quintuples(&quints, 3, space).unwrap();
        assert_eq!(decode_grid(&grid), quints);
    }

    #[test]
    fn majority_vote_and_tie_break() {
        let space = TagSpace::new(1, 3);
        let mut cells = Array2::from_elem((4, 4), N_TAG);
        for i in 0..2 {
            cells[[i, i]] = 1;
        }
        cells[[0, 1]] = 1;
        cells[[1, 0]] = 1;
        cells[[2, 2]] = 1;
        cells[[3, 3]] = 1;
        cells[[2, 3]] = 1;
        cells[[3, 2]] = 1;
        // block rows 2..=3, cols 0..=1: two votes for relation 2, one each for 0 and 1
        cells[[2, 0]] = space.relation_tag(2);
        cells[[3, 1]] = space.relation_tag(2);
        cells[[2, 1]] = space.relation_tag(0);
        cells[[3, 0]] = space.relation_tag(1);
        let grid = TagGrid::from_cells(cells.clone(), space).unwrap();
        assert_eq!(decode_grid(&grid)[0].r, 2);
        cells[[3, 1]] = space.relation_tag(1);
        let grid = TagGrid::from_cells(cells, space).unwrap();
        assert_eq!(decode_grid(&grid)[0].r, 1);
    }

    #[test]
    fn encoding_errors() {
        let space = TagSpace::new(2, 2);
        let partial = [q((0, 1), 0, (3, 3), 0, 0), q((1, 2), 0, (3, 3), 0, 0)];
        let err = encode_quintuples(&partial, 5, space).unwrap_err().to_string();
        assert!(err.contains("partially overlap"), "{err}");
        let conflict = [q((0, 0), 0, (2, 2), 0, 0), q((2, 2), 0, (0, 0), 0, 1)];
        let err = encode_quintuples(&conflict, 5, space).unwrap_err().to_string();
        assert!(err.contains("cell (2, 0)"), "{err}");
        let retype = [q((0, 0), 0, (2, 2), 0, 0), q((0, 0), 1, (3, 3), 0, 0)];
        assert!(encode_quintuples(&retype, 5, space).is_err());
        assert!(encode_quintuples(&[q((0, 0), 0, (5, 5), 0, 0)], 5, space).is_err());
        assert!(encode_quintuples(&[q((0, 1), 0, (1, 1), 0, 0)], 5, space).is_err());
    }

    fn random_quintuples(seed: u64) -> (usize, Vec<Quintuple>, TagSpace) {
        let mut rng = stream(seed, "quintuples");
        let space = TagSpace::new(rng.random_range(1..5), rng.random_range(1..6));
        let n = rng.random_range(2..=70);
        let mut spans = Vec::new();
        let mut i = 0;
        while i < n {
            if rng.random_bool(0.3) {
                let len = rng.random_range(1..=3).min(n - i);
                spans.push((Span::new(i, i + len - 1), rng.random_range(0..space.entities)));
                i += len;
            } else {
                i += 1;
            }
        }
        let mut quints = Vec::new();
        for a in 0..spans.len() {
            for b in a + 1..spans.len() {
                if rng.random_bool(0.2) {
                    let (e1, t1) = spans[a];
                    let (e2, t2) = spans[b];
                    quints.push(Quintuple { e1, t1, e2, t2, r: rng.random_range(0..space.relations) });
                }
            }
        }
        (n, canonicalize(quints), space)
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(seed in any::<u64>()) {
            let (n, quints, space) = random_quintuples(seed);
            let grid = encode_quintuples(&quints, n, space).unwrap();
            prop_assert_eq!(decode_grid(&grid), quints);
        }

        #[test]
        fn cells_sum_to_one(seed in any::<u64>()) {
            let mut rng = stream(seed, "head");
            let head = PredictionHead::init(&mut rng, 4, 5);
            let s_rep = uniform_matrix(&mut rng, 3, 4, 1) * 3.0;
            let probs = predict_grid(s_rep.view(), &head).unwrap();
            for cell in probs.lanes(Axis(2)) {
                prop_assert!((cell.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_head_is_uniform_and_order_matters() {
        let mut rng = stream(1, "head");
        let s_rep = uniform_matrix(&mut rng, 3, 4, 1);
        let probs = predict_grid(s_rep.view(), &PredictionHead::zeros(4, 5)).unwrap();
        assert!(probs.iter().all(|&p| (p - 0.2).abs() < 1e-15));
        let head = PredictionHead::init(&mut rng, 4, 5);
        let probs = predict_grid(s_rep.view(), &head).unwrap();
        assert_ne!(probs.slice(s![0, 1, ..]), probs.slice(s![1, 0, ..]));
        assert!(predict_grid(uniform_matrix(&mut rng, 3, 5, 1).view(), &head).is_err());
    }

    #[test]
    fn loss_values() {
        let space = TagSpace::new(1, 1);
        let gold = TagGrid::from_cells(ndarray::arr2(&[[1, 0], [2, 1]]), space).unwrap();
        let onehot = Array3::from_shape_fn((2, 2, 3), |(i, j, t)| f64::from(gold.get(i, j) as usize == t));
        assert_eq!(main_loss(&onehot, &gold).unwrap(), 0.0);
        let uniform = Array3::from_elem((2, 2, 3), 1.0 / 3.0);
        assert!((main_loss(&uniform, &gold).unwrap() - 4.0 * 3f64.ln()).abs() < 1e-12);
        let mut probs = uniform.clone();
        probs.slice_mut(s![0, 0, ..]).assign(&ndarray::arr1(&[0.2, 0.5, 0.3]));
        probs.slice_mut(s![0, 1, ..]).assign(&ndarray::arr1(&[0.7, 0.2, 0.1]));
        probs.slice_mut(s![1, 0, ..]).assign(&ndarray::arr1(&[0.1, 0.1, 0.8]));
        probs.slice_mut(s![1, 1, ..]).assign(&ndarray::arr1(&[0.25, 0.5, 0.25]));
        let manual = -(0.5f64.ln() + 0.7f64.ln() + 0.8f64.ln() + 0.5f64.ln());
        assert!((main_loss(&probs, &gold).unwrap() - manual).abs() < 1e-12);
    }

    #[test]
    fn joint_loss_rules() {
        assert_eq!(joint_loss(1.25, 7.0, 0.0).unwrap(), 1.25);
        assert!((joint_loss(1.0, 0.5, 0.6).unwrap() - 1.3).abs() < 1e-15);
        assert_eq!(joint_loss(3.0, 0.5, 0.6).unwrap(), joint_loss(1.0, 0.5, 0.6).unwrap() + 2.0);
        let err = joint_loss(1.0, 1.0, -0.1).unwrap_err();
        assert!(err.to_string().contains("lambda"));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = stream(9, "grad");
        let space = TagSpace::new(2, 2);
        let head = PredictionHead::init(&mut rng, 4, space.len());
        let s_rep = uniform_matrix(&mut rng, 3, 4, 1);
        let cells = Array2::from_shape_fn((3, 3), |_| rng.random_range(0..space.len()) as TagId);
        let gold = TagGrid::from_cells(cells, space).unwrap();
        let grads = head_gradients(s_rep.view(), &gold, &head).unwrap();
        let loss = |h: &PredictionHead| main_loss(&predict_grid(s_rep.view(), h).unwrap(), &gold).unwrap();
        let step = 1e-5;
        for ((r, c), &g) in grads.weight.indexed_iter() {
            let mut plus = head.clone();
            plus.weight[[r, c]] += step;
            let mut minus = head.clone();
            minus.weight[[r, c]] -= step;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
            assert!((fd - g).abs() <= 1e-4 * fd.abs().max(1e-3), "{fd} vs {g}");
        }
        let cell_sum = (predict_grid(s_rep.view(), &head).unwrap().sum_axis(Axis(0)).sum_axis(Axis(0)))
            - Array1::from_shape_fn(space.len(), |t| gold.cells().iter().filter(|&&g| g as usize == t).count() as f64);
        for (a, b) in grads.bias.iter().zip(cell_sum.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_predictions_give_zero_gradient() {
        let space = TagSpace::new(1, 1);
        let gold = TagGrid::from_cells(ndarray::arr2(&[[1, 0], [2, 1]]), space).unwrap();
        // features select the gold tag with an overwhelming margin
        let s_rep = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let mut head = PredictionHead::zeros(2, 3);
        head.weight = ndarray::arr2(&[
            [2000.0, 0.0, 0.0, 2000.0],
            [1500.0, 1500.0, 1500.0, 1500.0],
            [0.0, 2000.0, 2000.0, 0.0],
        ]);
        let (loss, grads) = head_loss_and_gradients(s_rep.view(), &gold, &head).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.weight.iter().chain(grads.bias.iter()).all(|&g| g == 0.0));
    }

    #[test]
    fn evaluation_counts() {
        let a = q((0, 0), 0, (2, 2), 0, 0);
        let b = q((0, 0), 0, (4, 4), 1, 1);
        let c = q((2, 2), 0, (4, 4), 1, 1);
        let d = q((5, 6), 2, (8, 8), 1, 0);
        let wrong = q((0, 0), 0, (2, 2), 0, 1);
        assert_eq!(evaluate(&[a, b], &[a, b]), Metrics { precision: 1.0, recall: 1.0, f1: 1.0 });
        assert_eq!(evaluate(&[a], &[b]), Metrics::default());
        let m = evaluate(&[a, b, wrong], &[a, b, c, d]);
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 0.5).abs() < 1e-15);
        assert!((m.f1 - 4.0 / 7.0).abs() < 1e-15);
        let swapped = evaluate(&[a, b, c, d], &[a, b, wrong]);
        assert_eq!((swapped.precision, swapped.recall), (m.recall, m.precision));
        assert!((swapped.f1 - m.f1).abs() < 1e-15);
        assert_eq!(evaluate(&[], &[a]), Metrics::default());
        assert_eq!(m.to_key_values(), "precision=0.6667\nrecall=0.5000\nf1=0.5714\n");
    }

    #[test]
    fn quintuple_file_round_trip() {
        let v = vocab();
        let quints = canonicalize([q((2, 2), 0, (0, 0), 0, 0), q((2, 2), 0, (8, 9), 3, 2)]);
        let line = format_quintuple_line("r1", &quints, &v);
        assert_eq!(
            line,
            r#"{"id":"r1","quintuples":[[0,0,"PER",2,2,"PER","peer"],[2,2,"PER",8,9,"MISC","awarded"]]}"#
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        std::fs::write(&path, format!("{line}\n\n")).unwrap();
        assert_eq!(load_quintuple_file(&path, &v).unwrap(), vec![("r1".to_string(), quints)]);
        std::fs::write(&path, r#"{"id":"r2","quintuples":[[0,0,"PER",1,1,"PER","likes"]]}"#).unwrap();
        let err = load_quintuple_file(&path, &v).unwrap_err().to_string();
        assert!(err.contains("unknown label: likes"), "{err}");
    }
}
