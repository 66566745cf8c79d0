//! Multi-channel word-pair features: part-of-speech ranges, syntactic
//! distance and corpus co-occurrence, each pooled by a weighted GCN and then
//! fused by an MLP.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::graph::{Interner, LabelTable, TextualGraph, TokenizedSentence};
use crate::nn::{relu, softmax_in_place, uniform_matrix, uniform_vector, Mlp};
use crate::rng::hashed_vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelKind {
    Pos,
    Sd,
    Co,
}

/// Word-pair feature tensor `n x n x d_l`. Integer-valued channels keep the
/// underlying matrix next to its embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelTensor {
    pub kind: ChannelKind,
    pub values: Array3<f64>,
    pub matrix: Option<Array2<i64>>,
}

impl ChannelTensor {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[2]
    }
}

/// `R(i, j) = sum of pos vectors for tokens min(i,j)..=max(i,j)`.
pub fn build_pos_channel(
    sentence: &TokenizedSentence,
    table: &LabelTable,
    pos_labels: &Interner,
) -> Result<ChannelTensor> {
    let rows = sentence
        .pos_tags()
        .iter()
        .map(|&id| {
            table.get(id).ok_or_else(|| {
                Error::UnknownLabel(pos_labels.name(id).map_or_else(|| format!("#{}", id.0), str::to_string))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len();
    let mut values = Array3::zeros((n, n, table.dim()));
    for i in 0..n {
        let mut acc = Array1::<f64>::zeros(table.dim());
        for j in i..n {
            acc += rows[j];
            values.slice_mut(s![i, j, ..]).assign(&acc);
            values.slice_mut(s![j, i, ..]).assign(&acc);
        }
    }
    Ok(ChannelTensor {
        kind: ChannelKind::Pos,
        values,
        matrix: None,
    })
}

/// Hop counts between tokens over the dependency tree (self-loops ignored),
/// by breadth-first search from every token.
pub fn syntactic_distances(graph: &TextualGraph) -> Result<Array2<i64>> {
    let n = graph.len();
    let mut out = Array2::from_elem((n, n), -1i64);
    let neighbours: Vec<Vec<usize>> = (0..n).map(|i| graph.edges.neighbours(i).collect()).collect();
    for source in 0..n {
        out[[source, source]] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = out[[source, u]];
            for &v in &neighbours[u] {
                if out[[source, v]] < 0 {
                    out[[source, v]] = d + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    if let Some(((i, j), _)) = out.indexed_iter().find(|(_, &d)| d < 0) {
        return Err(Error::Numerical(format!(
            "dependency graph disconnected: no path between tokens {i} and {j}"
        )));
    }
    Ok(out)
}

/// Embedding table over a contiguous integer range `min..=max`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarTable {
    pub min: i64,
    pub rows: Array2<f64>,
}

impl ScalarTable {
    pub fn hashed(namespace: &str, min: i64, max: i64, seed: u64, dim: usize) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let count = (max - min + 1) as usize;
        let mut rows = Array2::zeros((count, dim));
        for (r, value) in (min..=max).enumerate() {
            let v = hashed_vector(&format!("{namespace}/{value}"), seed, dim);
            rows.row_mut(r).assign(&(Array1::from(v) * scale));
        }
        Self { min, rows }
    }

    pub fn max(&self) -> i64 {
        self.min + self.rows.nrows() as i64 - 1
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    /// Values outside the table range are clamped onto its ends.
    pub fn lookup(&self, value: i64) -> ndarray::ArrayView1<'_, f64> {
        let idx = (value.clamp(self.min, self.max()) - self.min) as usize;
        self.rows.row(idx)
    }
}

fn embed_matrix(kind: ChannelKind, matrix: Array2<i64>, table: &ScalarTable) -> ChannelTensor {
    let n = matrix.nrows();
    let mut values = Array3::zeros((n, n, table.dim()));
    for ((i, j), &v) in matrix.indexed_iter() {
        values.slice_mut(s![i, j, ..]).assign(&table.lookup(v));
    }
    ChannelTensor {
        kind,
        values,
        matrix: Some(matrix),
    }
}

/// Syntactic-distance channel. Distances above `cap` are clamped to `cap`.
pub fn build_sd_channel(graph: &TextualGraph, table: &ScalarTable, cap: i64) -> Result<ChannelTensor> {
    let matrix = syntactic_distances(graph)?.mapv_into(|d| d.min(cap));
    Ok(embed_matrix(ChannelKind::Sd, matrix, table))
}

/// Sentence-level co-occurrence counts over a corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PmiStats {
    pub sentences: u64,
    pub unigrams: HashMap<String, u64>,
    /// Keyed by the lexicographically ordered pair of distinct token types.
    pub pairs: HashMap<(String, String), u64>,
}

fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl PmiStats {
    pub fn from_corpus<'a>(corpus: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut stats = Self::default();
        for tokens in corpus {
            stats.sentences += 1;
            let types: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
            let types: Vec<&str> = types.into_iter().collect();
            for (i, a) in types.iter().enumerate() {
                *stats.unigrams.entry(a.to_string()).or_default() += 1;
                for b in &types[i + 1..] {
                    *stats.pairs.entry(pair_key(a, b)).or_default() += 1;
                }
            }
        }
        stats
    }

    fn joint(&self, a: &str, b: &str) -> u64 {
        if a == b {
            self.unigrams.get(a).copied().unwrap_or(0)
        } else {
            self.pairs.get(&pair_key(a, b)).copied().unwrap_or(0)
        }
    }

    /// `ln(p(a,b) / (p(a) p(b)))`, or `None` when the pair never co-occurs.
    pub fn pmi(&self, a: &str, b: &str) -> Option<f64> {
        let joint = self.joint(a, b);
        if joint == 0 {
            return None;
        }
        let ca = self.unigrams[a] as f64;
        let cb = self.unigrams[b] as f64;
        Some((joint as f64 * self.sentences as f64 / (ca * cb)).ln())
    }

    /// Integer co-occurrence value: `ceil(PMI)` for non-negative PMI, capped
    /// at `cap`; `-1` for negative PMI and for pairs never seen together.
    pub fn co_value(&self, a: &str, b: &str, cap: i64) -> i64 {
        let joint = self.joint(a, b);
        if joint == 0 {
            return -1;
        }
        let numerator = joint as u128 * self.sentences as u128;
        let denominator = self.unigrams[a] as u128 * self.unigrams[b] as u128;
        match numerator.cmp(&denominator) {
            std::cmp::Ordering::Less => -1,
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Greater => {
                let pmi = (numerator as f64 / denominator as f64).ln();
                (pmi.ceil() as i64).max(1).min(cap)
            }
        }
    }

    pub fn co_matrix(&self, tokens: &[String], cap: i64) -> Array2<i64> {
        let n = tokens.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.co_value(&tokens[i], &tokens[j], cap))
    }

    /// Tab-separated cache:
    ///
    /// ```text
    /// sentences\t<N>
    /// unigram\t<token>\t<count>
    /// pair\t<token-a>\t<token-b>\t<count>
    /// ```
    ///
    /// Lines are sorted so the file is byte-stable.
    pub fn to_cache_text(&self) -> String {
        let mut out = format!("sentences\t{}\n", self.sentences);
        let unigrams: BTreeMap<_, _> = self.unigrams.iter().collect();
        for (token, count) in unigrams {
            writeln!(out, "unigram\t{token}\t{count}").unwrap();
        }
        let pairs: BTreeMap<_, _> = self.pairs.iter().collect();
        for ((a, b), count) in pairs {
            writeln!(out, "pair\t{a}\t{b}\t{count}").unwrap();
        }
        out
    }

    pub fn parse_cache(text: &str) -> Result<Self> {
        let mut stats = Self::default();
        let bad = |line: usize, message: &str| Error::Parse {
            line,
            message: message.to_string(),
        };
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split('\t').collect();
            let count = |s: &str| s.parse::<u64>().map_err(|_| bad(i + 1, "invalid count"));
            match fields.as_slice() {
                ["sentences", n] => stats.sentences = count(n)?,
                ["unigram", token, n] => {
                    stats.unigrams.insert(token.to_string(), count(n)?);
                }
                ["pair", a, b, n] => {
                    stats.pairs.insert(pair_key(a, b), count(n)?);
                }
                [""] => {}
                _ => return Err(bad(i + 1, "unrecognised PMI cache line")),
            }
        }
        Ok(stats)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_cache_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_cache(&text)
    }
}

/// Co-occurrence channel for `sentence` under corpus statistics `stats`.
pub fn build_pmi_channel(
    stats: &PmiStats,
    sentence: &TokenizedSentence,
    table: &ScalarTable,
    cap: i64,
) -> ChannelTensor {
    embed_matrix(ChannelKind::Co, stats.co_matrix(sentence.tokens(), cap), table)
}

/// Parameters of one channel's weighted GCN.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelParams {
    /// Scores each pair feature: `1 x d_l`.
    pub r1: Array1<f64>,
    /// Scalar bias broadcast over positions.
    pub bias: f64,
    /// `d_T x d_T` projection of the contextual representation.
    pub r2: Array2<f64>,
}

impl ChannelParams {
    pub fn init(rng: &mut impl RngCore, channel_dim: usize, model_dim: usize) -> Self {
        Self {
            r1: uniform_vector(rng, channel_dim, channel_dim),
            bias: 0.0,
            r2: uniform_matrix(rng, model_dim, model_dim, model_dim),
        }
    }
}

#[derive(Clone, Debug)]
pub struct WgcnOutput {
    pub output: Array2<f64>,
    pub weights: Array2<f64>,
}

/// `S_i = softmax_j(ReLU(r1 . R_ij + b)) . (O W_r2^T)`.
pub fn w_gcn(channel: &ChannelTensor, contextual: ArrayView2<f64>, params: &ChannelParams) -> Result<WgcnOutput> {
    let n = channel.len();
    if contextual.nrows() != n {
        return Err(Error::shape("w-gcn rows", n, contextual.nrows()));
    }
    if channel.dim() != params.r1.len() {
        return Err(Error::shape("w-gcn channel width", params.r1.len(), channel.dim()));
    }
    if contextual.ncols() != params.r2.ncols() {
        return Err(Error::shape("w-gcn model width", params.r2.ncols(), contextual.ncols()));
    }
    let mut weights = Array2::zeros((n, n));
    for i in 0..n {
        let logits = channel.values.slice(s![i, .., ..]).dot(&params.r1);
        let mut row = weights.row_mut(i);
        row.assign(&logits.mapv(|v| relu(v + params.bias)));
        softmax_in_place(row);
    }
    let projected = contextual.dot(&params.r2.t());
    Ok(WgcnOutput {
        output: weights.dot(&projected),
        weights,
    })
}

/// Concatenates the three channel outputs per word and maps them through
/// the fusion MLP.
pub fn fuse_channels(
    pos: ArrayView2<f64>,
    sd: ArrayView2<f64>,
    co: ArrayView2<f64>,
    mlp: &Mlp,
) -> Result<Array2<f64>> {
    if pos.dim() != sd.dim() || pos.dim() != co.dim() {
        return Err(Error::shape(
            "channel fusion",
            format!("{:?}", pos.dim()),
            format!("{:?} / {:?}", sd.dim(), co.dim()),
        ));
    }
    let joined = ndarray::concatenate![ndarray::Axis(1), pos, sd, co];
    mlp.forward(joined.view())
}
