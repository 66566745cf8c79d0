//! Edge-enhanced graph optimal transport.
//!
//! Node matching uses a Wasserstein term with cosine ground cost; edge
//! matching uses a Gromov-Wasserstein term restricted to adjacent node pairs.
//! Both share a single plan, optimised by alternating a fused linear cost
//! with log-domain Sinkhorn.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostKind {
    Node,
    GwPseudo,
    Fused,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    pub kind: CostKind,
}

/// Cosine distance between every row of `visual` (k x d) and every row of
/// `text` (n x d): `1 - <a, b> / (|a| |b|)`, clamped to `[0, 2]`.
pub fn cosine_cost(visual: ArrayView2<f64>, text: ArrayView2<f64>) -> Result<CostMatrix> {
    if visual.ncols() != text.ncols() {
        return Err(Error::shape("cosine cost widths", visual.ncols(), text.ncols()));
    }
    let a = normalized_rows(visual, "visual")?;
    let b = normalized_rows(text, "text")?;
    let values = (1.0 - a.dot(&b.t())).mapv_into(|v| v.clamp(0.0, 2.0));
    Ok(CostMatrix {
        values,
        kind: CostKind::Node,
    })
}

/// Pairwise cosine distances among the rows of `h`, with an exact zero
/// diagonal.
pub fn cosine_self_distance(h: ArrayView2<f64>, side: &'static str) -> Result<Array2<f64>> {
    let a = normalized_rows(h, side)?;
    let mut d = (1.0 - a.dot(&a.t())).mapv_into(|v| v.clamp(0.0, 2.0));
    d.diag_mut().fill(0.0);
    Ok(d)
}

fn normalized_rows(h: ArrayView2<f64>, side: &'static str) -> Result<Array2<f64>> {
    let mut out = h.to_owned();
    for (index, mut row) in out.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::ZeroNorm { side, index });
        }
        row /= norm;
    }
    Ok(out)
}

/// Uniform distribution over `len` nodes.
pub fn uniform_marginal(len: usize) -> Array1<f64> {
    Array1::from_elem(len, 1.0 / len as f64)
}

/// Non-negative coupling with its target marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub values: Array2<f64>,
    pub row_marginals: Array1<f64>,
    pub col_marginals: Array1<f64>,
    pub iterations: usize,
}

impl TransportPlan {
    /// Independent coupling `mu nu^T`.
    pub fn product(mu: ArrayView1<f64>, nu: ArrayView1<f64>) -> Self {
        let values = Array2::from_shape_fn((mu.len(), nu.len()), |(i, j)| mu[i] * nu[j]);
        Self {
            values,
            row_marginals: mu.to_owned(),
            col_marginals: nu.to_owned(),
            iterations: 0,
        }
    }

    /// Largest absolute deviation of any row or column sum from its marginal.
    pub fn marginal_residual(&self) -> f64 {
        let rows = self.values.sum_axis(ndarray::Axis(1));
        let cols = self.values.sum_axis(ndarray::Axis(0));
        let r = rows
            .iter()
            .zip(&self.row_marginals)
            .map(|(a, b)| (a - b).abs());
        let c = cols
            .iter()
            .zip(&self.col_marginals)
            .map(|(a, b)| (a - b).abs());
        r.chain(c).fold(0.0, f64::max)
    }

    /// `<T, C>`.
    pub fn cost(&self, cost: &Array2<f64>) -> f64 {
        (&self.values * cost).sum()
    }
}

fn check_problem(cost: &Array2<f64>, mu: ArrayView1<f64>, nu: ArrayView1<f64>, epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::config("epsilon", format!("must be positive, got {epsilon}")));
    }
    if cost.dim() != (mu.len(), nu.len()) {
        return Err(Error::shape(
            "sinkhorn cost",
            format!("{}x{}", mu.len(), nu.len()),
            format!("{}x{}", cost.nrows(), cost.ncols()),
        ));
    }
    if cost.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite transport cost".into()));
    }
    for (field, m) in [("mu", mu), ("nu", nu)] {
        if m.is_empty() || m.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::config(
                field,
                "marginal entries must be strictly positive",
            ));
        }
        let total = m.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                field,
                format!("marginal sums to {total}, expected 1"),
            ));
        }
    }
    Ok(())
}

/// Log-domain Sinkhorn state: dual potentials `f`, `g` with
/// `T_ij = exp((f_i + g_j - C_ij) / eps)`.
struct LogSinkhorn<'a> {
    cost: &'a Array2<f64>,
    log_mu: Array1<f64>,
    log_nu: Array1<f64>,
    epsilon: f64,
    f: Array1<f64>,
    g: Array1<f64>,
}

impl<'a> LogSinkhorn<'a> {
    fn new(cost: &'a Array2<f64>, mu: ArrayView1<f64>, nu: ArrayView1<f64>, epsilon: f64) -> Self {
        Self {
            cost,
            log_mu: mu.mapv(f64::ln),
            log_nu: nu.mapv(f64::ln),
            epsilon,
            f: Array1::zeros(mu.len()),
            g: Array1::zeros(nu.len()),
        }
    }

    fn step(&mut self) {
        let eps = self.epsilon;
        for (i, fi) in self.f.iter_mut().enumerate() {
            let row = self.cost.row(i);
            let lse = log_sum_exp(row.iter().zip(&self.g).map(|(c, g)| (g - c) / eps));
            *fi = eps * (self.log_mu[i] - lse);
        }
        for (j, gj) in self.g.iter_mut().enumerate() {
            let col = self.cost.column(j);
            let lse = log_sum_exp(col.iter().zip(&self.f).map(|(c, f)| (f - c) / eps));
            *gj = eps * (self.log_nu[j] - lse);
        }
    }

    fn plan_values(&self) -> Array2<f64> {
        let eps = self.epsilon;
        let mut out = self.cost.clone();
        Zip::indexed(&mut out).for_each(|(i, j), c| {
            *c = ((self.f[i] + self.g[j] - *c) / eps).exp();
        });
        out
    }

    /// After a full step the column sums are exact, so only rows can deviate.
    fn row_residual(&self) -> f64 {
        let eps = self.epsilon;
        (0..self.f.len())
            .map(|i| {
                let lse = log_sum_exp(
                    self.cost
                        .row(i)
                        .iter()
                        .zip(&self.g)
                        .map(|(c, g)| (self.f[i] + g - c) / eps),
                );
                (lse.exp() - self.log_mu[i].exp()).abs()
            })
            .fold(0.0, f64::max)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT by `iterations` alternating row/column scalings, computed in
/// the log domain. The returned plan is `diag(u) exp(-C/eps) diag(v)`.
pub fn sinkhorn(
    cost: &Array2<f64>,
    mu: ArrayView1<f64>,
    nu: ArrayView1<f64>,
    epsilon: f64,
    iterations: usize,
) -> Result<TransportPlan> {
    check_problem(cost, mu, nu, epsilon)?;
    let mut state = LogSinkhorn::new(cost, mu, nu, epsilon);
    for _ in 0..iterations {
        state.step();
    }
    finish(&state, mu, nu, iterations)
}

/// Iterates until the marginal residual is at most `tolerance` or
/// `max_iterations` is reached, whichever comes first.
pub fn sinkhorn_to_tolerance(
    cost: &Array2<f64>,
    mu: ArrayView1<f64>,
    nu: ArrayView1<f64>,
    epsilon: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<TransportPlan> {
    check_problem(cost, mu, nu, epsilon)?;
    let mut state = LogSinkhorn::new(cost, mu, nu, epsilon);
    let mut done = 0;
    while done < max_iterations {
        state.step();
        done += 1;
        if done % 10 == 0 && state.row_residual() <= tolerance {
            break;
        }
    }
    finish(&state, mu, nu, done)
}

/// Dual objective `<f, mu> + <g, nu> - eps * sum exp((f_i + g_j - C_ij) / eps)`
/// after each full scaling step. Each half step maximises it exactly over one
/// block of potentials, so the trace is non-decreasing; at convergence it
/// meets [`regularized_objective`] of the plan.
pub fn sinkhorn_dual_trace(
    cost: &Array2<f64>,
    mu: ArrayView1<f64>,
    nu: ArrayView1<f64>,
    epsilon: f64,
    iterations: usize,
) -> Result<Vec<f64>> {
    check_problem(cost, mu, nu, epsilon)?;
    let mut state = LogSinkhorn::new(cost, mu, nu, epsilon);
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        state.step();
        let mass = state.plan_values().sum();
        trace.push(state.f.dot(&mu) + state.g.dot(&nu) - epsilon * mass);
    }
    Ok(trace)
}

/// `<T, C> - eps * H(T)` with `H(T) = -sum T (ln T - 1)`.
pub fn regularized_objective(plan: &Array2<f64>, cost: &Array2<f64>, epsilon: f64) -> f64 {
    let transport = (plan * cost).sum();
    let entropy: f64 = plan
        .iter()
        .map(|&t| if t > 0.0 { -t * (t.ln() - 1.0) } else { 0.0 })
        .sum();
    transport - epsilon * entropy
}

fn finish(state: &LogSinkhorn, mu: ArrayView1<f64>, nu: ArrayView1<f64>, iterations: usize) -> Result<TransportPlan> {
    let values = state.plan_values();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("sinkhorn produced a non-finite plan".into()));
    }
    Ok(TransportPlan {
        values,
        row_marginals: mu.to_owned(),
        col_marginals: nu.to_owned(),
        iterations,
    })
}

/// Linearised Gromov-Wasserstein cost restricted to adjacent pairs:
///
/// `G[i][j] = sum over i' ~ i, j' ~ j of |Ci[i][i'] - Ct[j][j']| * plan[i'][j']`
///
/// where `~` is adjacency including the self-loop.
pub fn gw_pseudo_cost(
    plan: &Array2<f64>,
    intra_visual: &Array2<f64>,
    intra_text: &Array2<f64>,
    adjacency_visual: &Array2<bool>,
    adjacency_text: &Array2<bool>,
) -> Result<CostMatrix> {
    let (k, n) = plan.dim();
    for (context, m) in [("visual intra cost", intra_visual.dim()), ("visual adjacency", adjacency_visual.dim())] {
        if m != (k, k) {
            return Err(Error::shape(context, format!("{k}x{k}"), format!("{}x{}", m.0, m.1)));
        }
    }
    for (context, m) in [("text intra cost", intra_text.dim()), ("text adjacency", adjacency_text.dim())] {
        if m != (n, n) {
            return Err(Error::shape(context, format!("{n}x{n}"), format!("{}x{}", m.0, m.1)));
        }
    }
    let nbr_v = neighbour_lists(adjacency_visual);
    let nbr_t = neighbour_lists(adjacency_text);
    let mut values = Array2::zeros((k, n));
    for i in 0..k {
        for j in 0..n {
            let mut acc = 0.0;
            for &ip in &nbr_v[i] {
                let ci = intra_visual[[i, ip]];
                for &jp in &nbr_t[j] {
                    acc += (ci - intra_text[[j, jp]]).abs() * plan[[ip, jp]];
                }
            }
            values[[i, j]] = acc;
        }
    }
    Ok(CostMatrix {
        values,
        kind: CostKind::GwPseudo,
    })
}

fn neighbour_lists(adjacency: &Array2<bool>) -> Vec<Vec<usize>> {
    adjacency
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter(|(_, &a)| a)
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Edge-restricted GW objective `sum_ij plan_ij * G(plan)_ij`.
pub fn gw_objective(
    plan: &Array2<f64>,
    intra_visual: &Array2<f64>,
    intra_text: &Array2<f64>,
    adjacency_visual: &Array2<bool>,
    adjacency_text: &Array2<bool>,
) -> Result<f64> {
    let g = gw_pseudo_cost(plan, intra_visual, intra_text, adjacency_visual, adjacency_text)?;
    Ok((plan * &g.values).sum())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignParams {
    /// Weight of the node (Wasserstein) term; `1 - alpha` weighs the edge term.
    pub alpha: f64,
    pub epsilon: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

impl Default for AlignParams {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            epsilon: 0.1,
            outer_iterations: 5,
            inner_iterations: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    pub plan: TransportPlan,
    pub node_cost: CostMatrix,
    pub fused_cost: CostMatrix,
    pub wd_cost: f64,
    pub gwd_cost: f64,
    pub loss_graph: f64,
    pub iterations_run: usize,
}

/// Graph alignment loss `alpha * wd + (1 - alpha) * gwd`.
pub fn graph_loss(alpha: f64, wd_cost: f64, gwd_cost: f64) -> f64 {
    alpha * wd_cost + (1.0 - alpha) * gwd_cost
}

/// Aligns visual nodes (rows) with text nodes (columns) under uniform
/// marginals. Starting from the product plan, each outer round forms
/// `alpha * C_node + (1 - alpha) * G(plan)` and re-solves it with Sinkhorn.
pub fn fused_align(
    visual: ArrayView2<f64>,
    text: ArrayView2<f64>,
    adjacency_visual: &Array2<bool>,
    adjacency_text: &Array2<bool>,
    params: &AlignParams,
) -> Result<AlignmentResult> {
    if !(0.0..=1.0).contains(&params.alpha) {
        return Err(Error::config("alpha", format!("{} outside [0, 1]", params.alpha)));
    }
    let node_cost = cosine_cost(visual, text)?;
    let intra_visual = cosine_self_distance(visual, "visual")?;
    let intra_text = cosine_self_distance(text, "text")?;
    let mu = uniform_marginal(visual.nrows());
    let nu = uniform_marginal(text.nrows());

    let mut plan = TransportPlan::product(mu.view(), nu.view());
    let mut fused = CostMatrix {
        values: node_cost.values.clone(),
        kind: CostKind::Fused,
    };
    let mut iterations_run = 0;
    for _ in 0..params.outer_iterations {
        let g = gw_pseudo_cost(&plan.values, &intra_visual, &intra_text, adjacency_visual, adjacency_text)?;
        fused.values = &node_cost.values * params.alpha + &g.values * (1.0 - params.alpha);
        plan = sinkhorn(&fused.values, mu.view(), nu.view(), params.epsilon, params.inner_iterations)?;
        iterations_run += params.inner_iterations;
    }

    let wd_cost = plan.cost(&node_cost.values);
    let gwd_cost = gw_objective(&plan.values, &intra_visual, &intra_text, adjacency_visual, adjacency_text)?;
    plan.iterations = iterations_run;
    Ok(AlignmentResult {
        loss_graph: graph_loss(params.alpha, wd_cost, gwd_cost),
        plan,
        node_cost,
        fused_cost: fused,
        wd_cost,
        gwd_cost,
        iterations_run,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::uniform_matrix;
    use crate::rng::{stream, unit_symmetric};
    use ndarray::{arr1, arr2};

    #[test]
    fn cosine_extremes() {
        let a = arr2(&[[1.0, 0.0], [0.0, 2.0], [-3.0, 0.0]]);
        let b = arr2(&[[2.0, 0.0]]);
        let c = cosine_cost(a.view(), b.view()).unwrap().values;
        assert_eq!(c[[0, 0]], 0.0);
        assert!((c[[1, 0]] - 1.0).abs() < 1e-15);
        assert_eq!(c[[2, 0]], 2.0);
    }

    #[test]
    fn cosine_zero_row_is_error() {
        let a = arr2(&[[1.0, 0.0], [0.0, 0.0]]);
        let err = cosine_cost(a.view(), a.view()).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { side: "visual", index: 1 }));
    }

    #[test]
    fn one_by_one_plan() {
        let p = sinkhorn(&arr2(&[[0.7]]), arr1(&[1.0]).view(), arr1(&[1.0]).view(), 0.1, 3).unwrap();
        assert!((p.values[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_cost_gives_product() {
        let mu = arr1(&[0.2, 0.3, 0.5]);
        let nu = arr1(&[0.6, 0.4]);
        let p = sinkhorn(&Array2::from_elem((3, 2), 0.8), mu.view(), nu.view(), 0.05, 5).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert!((p.values[[i, j]] - mu[i] * nu[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_cost_concentrates() {
        let c = arr2(&[[0.0, 1.0], [1.0, 0.0]]);
        let u = uniform_marginal(2);
        let p = sinkhorn(&c, u.view(), u.view(), 1e-3, 200).unwrap();
        assert!(p.cost(&c) < 1e-3);
    }

    #[test]
    fn config_errors() {
        let c = arr2(&[[0.0, 1.0]]);
        let mu = arr1(&[1.0]);
        let nu = uniform_marginal(2);
        assert!(matches!(sinkhorn(&c, mu.view(), nu.view(), 0.0, 1), Err(Error::Config { field: "epsilon", .. })));
        assert!(matches!(
            sinkhorn(&c, mu.view(), arr1(&[0.3, 0.3]).view(), 0.1, 1),
            Err(Error::Config { field: "nu", .. })
        ));
        assert!(sinkhorn(&c, nu.view(), nu.view(), 0.1, 1).is_err());
    }

    #[test]
    fn converges_on_random_costs() {
        let mut rng = stream(5, "ot");
        for _ in 0..5 {
            let c = uniform_matrix(&mut rng, 10, 70, 1).mapv(|v| v + 1.0);
            let p = sinkhorn_to_tolerance(&c, uniform_marginal(10).view(), uniform_marginal(70).view(), 0.1, 1e-9, 10_000).unwrap();
            assert!(p.marginal_residual() <= 1e-8);
            assert!((p.values.sum() - 1.0).abs() < 1e-9);
            assert!(p.values.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn permuting_rows_permutes_plan() {
        let mut rng = stream(6, "ot");
        let c = uniform_matrix(&mut rng, 4, 6, 1).mapv(|v| v + 1.0);
        let perm = [2, 0, 3, 1];
        let cp = Array2::from_shape_fn((4, 6), |(i, j)| c[[perm[i], j]]);
        let u4 = uniform_marginal(4);
        let u6 = uniform_marginal(6);
        let a = sinkhorn(&c, u4.view(), u6.view(), 0.1, 50).unwrap();
        let b = sinkhorn(&cp, u4.view(), u6.view(), 0.1, 50).unwrap();
        for i in 0..4 {
            for j in 0..6 {
                assert!((b.values[[i, j]] - a.values[[perm[i], j]]).abs() < 1e-12);
            }
        }
    }

    fn random_adjacency(rng: &mut impl rand::RngCore, n: usize) -> Array2<bool> {
        let mut a = Array2::from_elem((n, n), false);
        for i in 0..n {
            a[[i, i]] = true;
            for j in i + 1..n {
                let e = unit_symmetric(rng) > 0.0;
                a[[i, j]] = e;
                a[[j, i]] = e;
            }
        }
        a
    }

    #[test]
    fn pseudo_cost_is_linear_in_plan() {
        let mut rng = stream(7, "ot");
        let (k, n) = (3, 5);
        let ci = cosine_self_distance(uniform_matrix(&mut rng, k, 4, 1).view(), "v").unwrap();
        let ct = cosine_self_distance(uniform_matrix(&mut rng, n, 4, 1).view(), "t").unwrap();
        let ai = random_adjacency(&mut rng, k);
        let at = random_adjacency(&mut rng, n);
        let p1 = uniform_matrix(&mut rng, k, n, 1).mapv(f64::abs);
        let p2 = uniform_matrix(&mut rng, k, n, 1).mapv(f64::abs);
        let (a, b) = (0.3, -1.7);
        let lhs = gw_pseudo_cost(&(&p1 * a + &p2 * b), &ci, &ct, &ai, &at).unwrap().values;
        let g1 = gw_pseudo_cost(&p1, &ci, &ct, &ai, &at).unwrap().values;
        let g2 = gw_pseudo_cost(&p2, &ci, &ct, &ai, &at).unwrap().values;
        let rhs = g1 * a + g2 * b;
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let zero = gw_pseudo_cost(&Array2::zeros((k, n)), &ci, &ct, &ai, &at).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edgeless_graphs_have_zero_pseudo_cost() {
        let eye = |n: usize| Array2::from_shape_fn((n, n), |(i, j)| i == j);
        let plan = Array2::from_elem((2, 3), 1.0 / 6.0);
        let g = gw_pseudo_cost(&plan, &Array2::zeros((2, 2)), &Array2::zeros((3, 3)), &eye(2), &eye(3)).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
        assert!(gw_pseudo_cost(&plan, &Array2::zeros((3, 3)), &Array2::zeros((3, 3)), &eye(3), &eye(3)).is_err());
    }

    #[test]
    fn alpha_endpoints() {
        let mut rng = stream(8, "ot");
        let v = uniform_matrix(&mut rng, 3, 6, 1);
        let t = uniform_matrix(&mut rng, 5, 6, 1);
        let av = random_adjacency(&mut rng, 3);
        let at = random_adjacency(&mut rng, 5);
        let mut params = AlignParams { alpha: 1.0, ..AlignParams::default() };
        let node_only = fused_align(v.view(), t.view(), &av, &at, &params).unwrap();
        let c = cosine_cost(v.view(), t.view()).unwrap();
        let plain = sinkhorn(&c.values, uniform_marginal(3).view(), uniform_marginal(5).view(), params.epsilon, params.inner_iterations).unwrap();
        assert_eq!(node_only.plan.values, plain.values);
        assert_eq!(node_only.loss_graph, node_only.wd_cost);

        params.alpha = 0.0;
        let edge_only = fused_align(v.view(), t.view(), &av, &at, &params).unwrap();
        assert_eq!(edge_only.loss_graph, edge_only.gwd_cost);

        params.alpha = 0.4;
        let mixed = fused_align(v.view(), t.view(), &av, &at, &params).unwrap();
        let recomputed = 0.4 * mixed.wd_cost + 0.6 * mixed.gwd_cost;
        assert!((mixed.loss_graph - recomputed).abs() < 1e-12);
        assert_eq!(mixed.iterations_run, 100);

        params.alpha = 1.5;
        assert!(matches!(
            fused_align(v.view(), t.view(), &av, &at, &params),
            Err(Error::Config { field: "alpha", .. })
        ));
    }

    #[test]
    fn dual_objective_rises_to_the_primal() {
        for seed in 0..20 {
            let mut rng = stream(seed, "dual");
            let c = uniform_matrix(&mut rng, 5, 7, 1).mapv(|v| v + 1.0);
            let mu = uniform_marginal(5);
            let nu = uniform_marginal(7);
            let trace = sinkhorn_dual_trace(&c, mu.view(), nu.view(), 0.1, 300).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
            }
            let plan = sinkhorn(&c, mu.view(), nu.view(), 0.1, 300).unwrap();
            let primal = regularized_objective(&plan.values, &c, 0.1);
            assert!((primal - trace[299]).abs() < 1e-9, "{primal} vs {}", trace[299]);
        }
    }

    #[test]
    fn two_node_graphs_keep_the_product_plan_at_alpha_zero() {
        // Both two-node graphs share their single intra distance, so the
        // pseudo-cost of the product plan is constant and Sinkhorn returns
        // the product plan again: the pure edge alignment never leaves it.
        let visual = arr2(&[[1.0, 0.2], [0.3, -1.0]]);
        let text = arr2(&[[0.3, -1.0], [1.0, 0.2]]);
        let adjacency = Array2::from_elem((2, 2), true);
        let params = AlignParams {
            alpha: 0.0,
            epsilon: 0.01,
            outer_iterations: 20,
            inner_iterations: 200,
        };
        let result = fused_align(visual.view(), text.view(), &adjacency, &adjacency, &params).unwrap();
        for v in &result.plan.values {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let c = cosine_self_distance(visual.view(), "visual").unwrap()[[0, 1]];
        assert!((result.gwd_cost - c / 2.0).abs() < 1e-12);
    }
}
