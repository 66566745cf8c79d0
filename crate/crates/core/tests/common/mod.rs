//! Reference implementations used to check the library from the outside.
//! Each one takes the direct, slow route: enumeration, dynamic programming
//! over all pairs, or plain counting.

#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(lo..hi))
}

/// Positive weights normalised to sum to one.
pub fn random_marginal(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    let w = Array1::from_shape_fn(len, |_| rng.random_range(0.2..1.0));
    let total = w.sum();
    w / total
}

/// Exact optimal transport cost. A vertex of the transport polytope is
/// supported on a spanning tree of the bipartite row/column graph, so every
/// support of `k + n - 1` cells is tried: the plan on a tree support is forced
/// by repeatedly settling a line with a single open cell.
pub fn exact_ot(cost: &Array2<f64>, mu: &[f64], nu: &[f64]) -> f64 {
    let (k, n) = cost.dim();
    let cells = k * n;
    assert!(cells <= 20, "enumeration is exponential in the cell count");
    let support_size = k + n - 1;
    let mut best = f64::INFINITY;
    for mask in 0u32..(1u32 << cells) {
        if mask.count_ones() as usize != support_size {
            continue;
        }
        if let Some(plan) = tree_plan(mask, k, n, mu, nu) {
            let c: f64 = plan.iter().enumerate().map(|(c, &x)| x * cost[[c / n, c % n]]).sum();
            best = best.min(c);
        }
    }
    best
}

fn tree_plan(mask: u32, k: usize, n: usize, mu: &[f64], nu: &[f64]) -> Option<Vec<f64>> {
    let mut open: Vec<bool> = (0..k * n).map(|c| mask >> c & 1 == 1).collect();
    let mut row = mu.to_vec();
    let mut col = nu.to_vec();
    let mut plan = vec![0.0; k * n];
    loop {
        let row_leaf = (0..k).find_map(|i| {
            let cells: Vec<usize> = (0..n).map(|j| i * n + j).filter(|&c| open[c]).collect();
            (cells.len() == 1).then(|| cells[0])
        });
        let leaf = row_leaf.map(|c| (c, true)).or_else(|| {
            (0..n).find_map(|j| {
                let cells: Vec<usize> = (0..k).map(|i| i * n + j).filter(|&c| open[c]).collect();
                (cells.len() == 1).then(|| (cells[0], false))
            })
        });
        match leaf {
            Some((c, by_row)) => {
                let (i, j) = (c / n, c % n);
                let x = if by_row { row[i] } else { col[j] };
                plan[c] = x;
                row[i] -= x;
                col[j] -= x;
                open[c] = false;
            }
            None if open.iter().any(|&o| o) => return None,
            None => break,
        }
    }
    let feasible = plan.iter().all(|&x| x >= -1e-12) && row.iter().chain(&col).all(|r| r.abs() <= 1e-12);
    feasible.then_some(plan)
}

/// All permutations of `0..m`.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(m - 1) {
        for slot in 0..=p.len() {
            let mut q = p.clone();
            q.insert(slot, m - 1);
            out.push(q);
        }
    }
    out
}

/// Random labelled tree on `n` nodes from a Pruefer sequence, as an edge list.
pub fn random_tree_edges(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    if n < 2 {
        return Vec::new();
    }
    let code: Vec<usize> = (0..n - 2).map(|_| rng.random_range(0..n)).collect();
    let mut degree = vec![1usize; n];
    for &c in &code {
        degree[c] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &c in &code {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf remains");
        edges.push((leaf, c));
        degree[leaf] -= 1;
        degree[c] -= 1;
    }
    let last: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
    edges.push((last[0], last[1]));
    edges
}

/// Orients tree edges towards `root`: `heads[v]` is the parent, the root
/// heads itself.
pub fn heads_from_edges(n: usize, edges: &[(usize, usize)], root: usize) -> Vec<usize> {
    let mut heads = vec![usize::MAX; n];
    heads[root] = root;
    let mut frontier = vec![root];
    while let Some(u) = frontier.pop() {
        for &(a, b) in edges {
            for (x, y) in [(a, b), (b, a)] {
                if x == u && heads[y] == usize::MAX {
                    heads[y] = u;
                    frontier.push(y);
                }
            }
        }
    }
    heads
}

/// All-pairs shortest path lengths by Floyd-Warshall.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<i64>> {
    const INF: i64 = i64::MAX / 4;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(a, b) in edges {
        d[a][b] = 1;
        d[b][a] = 1;
    }
    for m in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][m] + d[m][j] < d[i][j] {
                    d[i][j] = d[i][m] + d[m][j];
                }
            }
        }
    }
    d
}

/// Sentence-level co-occurrence value by scanning the corpus: the ceiling
/// of the PMI capped at `cap`, `-1` for negative PMI or no co-occurrence.
pub fn co_value_by_counting(corpus: &[Vec<String>], a: &str, b: &str, cap: i64) -> i64 {
    let has = |s: &Vec<String>, w: &str| s.iter().any(|t| t == w);
    let total = corpus.len() as f64;
    let count_a = corpus.iter().filter(|s| has(s, a)).count() as f64;
    let count_b = corpus.iter().filter(|s| has(s, b)).count() as f64;
    let joint = corpus.iter().filter(|s| has(s, a) && has(s, b)).count() as f64;
    if joint == 0.0 {
        return -1;
    }
    let pmi = ((joint / total) / ((count_a / total) * (count_b / total))).ln();
    if pmi.abs() < 1e-12 {
        0
    } else if pmi < 0.0 {
        -1
    } else {
        (pmi.ceil() as i64).min(cap)
    }
}

/// Scaled dot-product self-attention with every position visible.
/// Matrices act on column vectors.
pub fn plain_attention(
    x: &Array2<f64>,
    w_q: &Array2<f64>,
    w_k: &Array2<f64>,
    w_v: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let n = x.nrows();
    let d = w_q.nrows();
    let project = |w: &Array2<f64>, i: usize| -> Vec<f64> {
        (0..w.nrows())
            .map(|r| (0..w.ncols()).map(|c| w[[r, c]] * x[[i, c]]).sum())
            .collect()
    };
    let q: Vec<Vec<f64>> = (0..n).map(|i| project(w_q, i)).collect();
    let k: Vec<Vec<f64>> = (0..n).map(|i| project(w_k, i)).collect();
    let v: Vec<Vec<f64>> = (0..n).map(|i| project(w_v, i)).collect();
    let mut weights = Array2::zeros((n, n));
    let mut out = Array2::zeros((n, w_v.nrows()));
    for i in 0..n {
        let logits: Vec<f64> = (0..n)
            .map(|j| q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = exp.iter().sum();
        for j in 0..n {
            weights[[i, j]] = exp[j] / z;
            for c in 0..w_v.nrows() {
                out[[i, c]] += weights[[i, j]] * v[j][c];
            }
        }
    }
    (out, weights)
}

/// `(start1, end1, type1, start2, end2, type2, relation)`.
pub type Tuple = (usize, usize, usize, usize, usize, usize, usize);

/// A valid quintuple set over a sentence of `n` tokens: disjoint entity
/// spans of 1-3 tokens, each pair related at most once. Entities are listed
/// earlier-first.
pub fn random_quintuple_set(rng: &mut ChaCha8Rng, n: usize, entity_types: usize, relations: usize) -> Vec<Tuple> {
    let mut spans = Vec::new();
    let mut i = rng.random_range(0..3usize);
    while i < n {
        let len = rng.random_range(1..=3usize).min(n - i);
        spans.push((i, i + len - 1, rng.random_range(0..entity_types)));
        i += len + rng.random_range(0..4usize);
    }
    let mut out = Vec::new();
    for a in 0..spans.len() {
        for b in a + 1..spans.len() {
            if rng.random_bool(0.15) {
                let (s1, e1, t1) = spans[a];
                let (s2, e2, t2) = spans[b];
                out.push((s1, e1, t1, s2, e2, t2, rng.random_range(0..relations)));
            }
        }
    }
    out
}

pub fn tuple_set(tuples: impl IntoIterator<Item = Tuple>) -> BTreeSet<Tuple> {
    tuples.into_iter().collect()
}

/// The running example: "Curry says Thompson of the NBA lifted the
/// O'Brien Trophy" with its dependency tree.
pub struct ExampleSentence {
    pub tokens: Vec<&'static str>,
    pub pos: Vec<&'static str>,
    pub heads: Vec<usize>,
    pub dep_labels: Vec<&'static str>,
}

pub fn example_sentence() -> ExampleSentence {
    ExampleSentence {
        tokens: vec!["Curry", "says", "Thompson", "of", "the", "NBA", "lifted", "the", "O'Brien", "Trophy"],
        pos: vec!["PROPN", "VERB", "PROPN", "ADP", "DET", "PROPN", "VERB", "DET", "PROPN", "PROPN"],
        heads: vec![1, 1, 6, 2, 5, 3, 1, 9, 9, 6],
        dep_labels: vec!["nsubj", "ROOT", "nsubj", "prep", "det", "pobj", "ccomp", "det", "compound", "dobj"],
    }
}
