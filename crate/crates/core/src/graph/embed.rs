use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::Deserialize;

use super::{Interner, LabelId, LabeledAdjacency};
use crate::error::{Error, Result};
use crate::rng::hashed_vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Text,
    Visual,
}

/// Node feature matrix, one row per graph node.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeEmbeddings(Array2<f64>);

impl NodeEmbeddings {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), v)) = matrix.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite embedding entry {v} at ({r}, {c})"
            )));
        }
        Ok(Self(matrix))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> Array2<f64> {
        self.0
    }
}

#[derive(Debug, Deserialize)]
struct PrecomputedLine {
    id: String,
    #[serde(default)]
    text: BTreeMap<usize, Vec<f64>>,
    #[serde(default)]
    visual: BTreeMap<usize, Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
struct RecordVectors {
    text: BTreeMap<usize, Vec<f64>>,
    visual: BTreeMap<usize, Vec<f64>>,
}

/// Embeddings produced offline, keyed by record id and node index.
///
/// File format, one JSON object per line:
/// `{"id": "r1", "text": {"0": [..], "1": [..]}, "visual": {"0": [..]}}`.
/// Visual indices refer to object positions in the original detector output.
#[derive(Clone, Debug, Default)]
pub struct PrecomputedEmbeddings {
    records: HashMap<String, RecordVectors>,
}

impl PrecomputedEmbeddings {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: PrecomputedLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.insert(
                parsed.id,
                RecordVectors {
                    text: parsed.text,
                    visual: parsed.visual,
                },
            );
        }
        Ok(Self { records })
    }

    pub fn insert(&mut self, record_id: &str, modality: Modality, index: usize, vector: Vec<f64>) {
        let entry = self.records.entry(record_id.to_string()).or_default();
        match modality {
            Modality::Text => entry.text.insert(index, vector),
            Modality::Visual => entry.visual.insert(index, vector),
        };
    }

    fn lookup(&self, record_id: &str, modality: Modality, index: usize) -> Result<&[f64]> {
        let record = self
            .records
            .get(record_id)
            .ok_or_else(|| Error::MissingEmbedding(record_id.to_string()))?;
        let table = match modality {
            Modality::Text => &record.text,
            Modality::Visual => &record.visual,
        };
        table
            .get(&index)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding(index.to_string()))
    }
}

#[derive(Clone, Debug)]
pub enum EmbeddingSource {
    /// Deterministic pseudo-embeddings derived from the node's string.
    Hashed { seed: u64 },
    Precomputed(PrecomputedEmbeddings),
}

/// One row per node. `nodes` pairs each node's string (token or object
/// label, used by the hashed source) with its index in the source data (used
/// by the precomputed source).
pub fn embed_nodes(
    record_id: &str,
    modality: Modality,
    nodes: &[(&str, usize)],
    dim: usize,
    source: &EmbeddingSource,
) -> Result<NodeEmbeddings> {
    let mut matrix = Array2::zeros((nodes.len(), dim));
    for (row, &(key, index)) in nodes.iter().enumerate() {
        match source {
            EmbeddingSource::Hashed { seed } => {
                matrix
                    .row_mut(row)
                    .assign(&Array1::from(hashed_vector(key, *seed, dim)));
            }
            EmbeddingSource::Precomputed(table) => {
                let vector = table.lookup(record_id, modality, index)?;
                if vector.len() != dim {
                    return Err(Error::shape("precomputed embedding", dim, vector.len()));
                }
                matrix
                    .row_mut(row)
                    .assign(&ndarray::ArrayView1::from(vector));
            }
        }
    }
    NodeEmbeddings::new(matrix)
}

/// Edge feature tensor `rows x rows x d_z`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeEmbeddings(Array3<f64>);

impl EdgeEmbeddings {
    pub fn new(tensor: Array3<f64>) -> Self {
        Self(tensor)
    }

    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self(Array3::zeros((rows, rows, dim)))
    }

    pub fn tensor(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.0.shape()[2]
    }
}

/// Embedding table indexed by label id (edge types, POS tags).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelTable {
    dim: usize,
    rows: Vec<Option<Array1<f64>>>,
}

impl LabelTable {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            rows: Vec::new(),
        }
    }

    /// Seeded initialisation for every label currently in `labels`. Each row is
    /// derived from the label name, so the table does not depend on the order
    /// labels were interned in.
    pub fn hashed(labels: &Interner, namespace: &str, seed: u64, dim: usize) -> Self {
        let scale = 1.0 / (dim as f64).sqrt();
        let rows = labels
            .names()
            .iter()
            .map(|name| {
                let v = hashed_vector(&format!("{namespace}/{name}"), seed, dim);
                Some(Array1::from(v) * scale)
            })
            .collect();
        Self { dim, rows }
    }

    pub fn insert(&mut self, id: LabelId, vector: Array1<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape("label table row", self.dim, vector.len()));
        }
        if self.rows.len() <= id.index() {
            self.rows.resize(id.index() + 1, None);
        }
        self.rows[id.index()] = Some(vector);
        Ok(())
    }

    pub fn get(&self, id: LabelId) -> Option<&Array1<f64>> {
        self.rows.get(id.index()).and_then(Option::as_ref)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Looks up every adjacent pair's label in `table`; non-adjacent pairs get
/// the zero vector. `labels` is used only to name a missing label.
pub fn embed_edges(
    edges: &LabeledAdjacency,
    table: &LabelTable,
    labels: &Interner,
) -> Result<EdgeEmbeddings> {
    let n = edges.len();
    let mut tensor = Array3::zeros((n, n, table.dim()));
    for ((i, j), label) in edges.edge_labels().indexed_iter() {
        let Some(id) = label else { continue };
        let row = table.get(*id).ok_or_else(|| {
            Error::UnknownLabel(
                labels
                    .name(*id)
                    .map(str::to_string)
                    .unwrap_or_else(|| format!("#{id}")),
            )
        })?;
        tensor.slice_mut(ndarray::s![i, j, ..]).assign(row);
    }
    Ok(EdgeEmbeddings(tensor))
}
