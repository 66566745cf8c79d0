//! Attribute transformer over typed-edge graphs and image-to-text attention.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::RngCore;

use crate::error::{Error, Result};
use crate::graph::EdgeEmbeddings;
use crate::nn::{masked_softmax_in_place, softmax_in_place, uniform_matrix, FeedForward, LayerNorm, Linear};

/// Projections of one attribute-attention layer. Matrices act on column
/// vectors: `q_i = W_Q x_i`, and the edge maps `W_z`, `W_r` are `d x d_z`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_z: Array2<f64>,
    pub w_r: Array2<f64>,
}

impl AttentionParams {
    pub fn init(rng: &mut impl RngCore, dim: usize, edge_dim: usize) -> Self {
        Self {
            w_q: uniform_matrix(rng, dim, dim, dim),
            w_k: uniform_matrix(rng, dim, dim, dim),
            w_v: uniform_matrix(rng, dim, dim, dim),
            w_z: uniform_matrix(rng, dim, edge_dim, edge_dim),
            w_r: uniform_matrix(rng, dim, edge_dim, edge_dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn edge_dim(&self) -> usize {
        self.w_z.ncols()
    }

    fn check(&self, x: ArrayView2<f64>, z: &EdgeEmbeddings, adjacency: &Array2<bool>) -> Result<()> {
        let (n, d) = x.dim();
        if d != self.dim() {
            return Err(Error::shape("attribute attention input width", self.dim(), d));
        }
        if z.rows() != n || z.dim() != self.edge_dim() {
            return Err(Error::shape(
                "attribute attention edge tensor",
                format!("{n}x{n}x{}", self.edge_dim()),
                format!("{}x{}x{}", z.rows(), z.rows(), z.dim()),
            ));
        }
        if adjacency.dim() != (n, n) {
            return Err(Error::shape(
                "attribute attention adjacency",
                format!("{n}x{n}"),
                format!("{:?}", adjacency.dim()),
            ));
        }
        if let Some(i) = (0..n).find(|&i| !adjacency.row(i).iter().any(|&a| a)) {
            return Err(Error::shape("attribute attention adjacency row", "at least one edge", format!("row {i} empty")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub hidden: Array2<f64>,
    /// Row i is the distribution query i places over positions.
    pub weights: Array2<f64>,
}

/// Edge-aware masked self-attention.
///
/// Query i sees position j only where `adjacency[i][j]`. Its key and value
/// for j are `W_K x_j + W_z z_ij` and `W_V x_j + W_r z_ij`. Logits are
/// scaled by `1/sqrt(d)`; masked positions get weight exactly zero.
pub fn attribute_attention(
    x: ArrayView2<f64>,
    z: &EdgeEmbeddings,
    adjacency: &Array2<bool>,
    params: &AttentionParams,
) -> Result<AttentionOutput> {
    params.check(x, z, adjacency)?;
    let n = x.nrows();
    let scale = 1.0 / (params.dim() as f64).sqrt();

    let q = x.dot(&params.w_q.t());
    let k = x.dot(&params.w_k.t());
    let v = x.dot(&params.w_v.t());
    // (W_z^T q_i) . z_ij == q_i . (W_z z_ij)
    let q_edge = q.dot(&params.w_z);
    let zt = z.tensor();

    let mut weights = q.dot(&k.t());
    for i in 0..n {
        let z_i = zt.slice(s![i, .., ..]);
        let edge_logits = z_i.dot(&q_edge.row(i));
        let mut row = weights.row_mut(i);
        row += &edge_logits;
        row *= scale;
        masked_softmax_in_place(row, adjacency.row(i));
    }

    let mut edge_mix = Array2::zeros((n, params.edge_dim()));
    for i in 0..n {
        let z_i = zt.slice(s![i, .., ..]);
        edge_mix.row_mut(i).assign(&weights.row(i).dot(&z_i));
    }
    let hidden = weights.dot(&v) + edge_mix.dot(&params.w_r.t());
    Ok(AttentionOutput { hidden, weights })
}

/// One post-norm transformer layer built around [`attribute_attention`]:
/// `h = LN(x + attn(x))`, `out = LN(h + FFN(h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTransformer {
    pub attention: AttentionParams,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl AttributeTransformer {
    pub fn init(rng: &mut impl RngCore, dim: usize, edge_dim: usize, ffn_dim: usize) -> Self {
        Self {
            attention: AttentionParams::init(rng, dim, edge_dim),
            attention_norm: LayerNorm::new(dim),
            ffn: FeedForward::init(rng, dim, ffn_dim, dim),
            ffn_norm: LayerNorm::new(dim),
        }
    }

    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        z: &EdgeEmbeddings,
        adjacency: &Array2<bool>,
    ) -> Result<Array2<f64>> {
        let attended = attribute_attention(x, z, adjacency, &self.attention)?;
        let h = self.attention_norm.forward((&x + &attended.hidden).view())?;
        let ff = self.ffn.forward(h.view())?;
        self.ffn_norm.forward((h + ff).view())
    }
}

/// Runs a stack of attribute transformer layers.
pub fn transformer_stack(
    layers: &[AttributeTransformer],
    x: ArrayView2<f64>,
    z: &EdgeEmbeddings,
    adjacency: &Array2<bool>,
) -> Result<Array2<f64>> {
    let mut h = x.to_owned();
    for layer in layers {
        h = layer.forward(h.view(), z, adjacency)?;
    }
    Ok(h)
}

/// Dimension-matching map from detector features to the text width:
/// linear, ReLU, linear.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualProjection(pub FeedForward);

impl VisualProjection {
    pub fn init(rng: &mut impl RngCore, input: usize, output: usize) -> Self {
        Self(FeedForward::init(rng, input, output, output))
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.0.forward(x)
    }
}

/// Multi-head attention with text queries and object keys/values, followed
/// by a residual connection and layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossModalAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct CrossModalOutput {
    /// Attention output before the residual, `n x d`.
    pub attended: Array2<f64>,
    /// Final contextual representation `LN(H_T + attended)`.
    pub fused: Array2<f64>,
    /// One `n x k` weight matrix per head.
    pub head_weights: Vec<Array2<f64>>,
}

impl CrossModalAttention {
    pub fn init(rng: &mut impl RngCore, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::config("heads", format!("{heads} heads do not divide width {dim}")));
        }
        Ok(Self {
            heads,
            query: Linear::init_no_bias(rng, dim, dim),
            key: Linear::init_no_bias(rng, dim, dim),
            value: Linear::init_no_bias(rng, dim, dim),
            output: Linear::init_no_bias(rng, dim, dim),
            norm: LayerNorm::new(dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.query.output_dim()
    }

    pub fn forward(&self, text: ArrayView2<f64>, visual: ArrayView2<f64>) -> Result<CrossModalOutput> {
        let dim = self.dim();
        if self.heads == 0 || dim % self.heads != 0 {
            return Err(Error::config("heads", format!("{} heads do not divide width {dim}", self.heads)));
        }
        if visual.nrows() == 0 {
            return Err(Error::shape("cross-modal keys", "at least one object", 0));
        }
        let head_dim = dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let q = self.query.forward(text)?;
        let k = self.key.forward(visual)?;
        let v = self.value.forward(visual)?;

        let mut concat = Array2::zeros((text.nrows(), dim));
        let mut head_weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let mut w = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for row in w.axis_iter_mut(Axis(0)) {
                softmax_in_place(row);
            }
            concat.slice_mut(cols).assign(&w.dot(&v.slice(cols)));
            head_weights.push(w);
        }
        let attended = self.output.forward(concat.view())?;
        let fused = self.norm.forward((&text + &attended).view())?;
        Ok(CrossModalOutput {
            attended,
            fused,
            head_weights,
        })
    }
}
