//! Relation edges between events and relation-aware self-attention,
//! producing the global event vectors `b`.

use uts_numerics::{Scalar, Var};

use super::Net;

#[derive(Debug, Clone)]
pub struct GlobalEvents {
    /// `[T_e × H]`.
    pub b: Var,
    /// Edge `r(i,j)` at row `i·T_e + j`, `[T_e² × H]`.
    pub edges: Option<Var>,
    /// Attention weights, one `[1 × T_e]` row per event.
    pub alpha: Vec<Var>,
}

/// `r(i,j) = W2·tanh(W1·[a_i; a_j] + b1) + b2` for every ordered pair.
pub fn compute_edges<S: Scalar>(net: &Net<'_, S>, a: Var) -> Var {
    let t = net.t;
    let n = t.shape(a)[0];
    let first: Vec<usize> = (0..n * n).map(|k| k / n).collect();
    let second: Vec<usize> = (0..n * n).map(|k| k % n).collect();
    let pairs = t.concat_cols(&[t.gather_rows(a, &first), t.gather_rows(a, &second)]);
    let hidden = t.tanh(t.add(t.matmul(pairs, net.w("graph.mlp.w1")), net.w("graph.mlp.b1")));
    t.add(t.matmul(hidden, net.w("graph.mlp.w2")), net.w("graph.mlp.b2"))
}

/// `b_i = Σ_j softmax_j((a_i·Wq)(a_j·Wk + r_ij)ᵀ / √d) · (a_j·Wv + r_ij)`.
pub fn relation_attention<S: Scalar>(net: &Net<'_, S>, a: Var, edges: Var) -> GlobalEvents {
    let t = net.t;
    let n = t.shape(a)[0];
    let d = net.cfg.hidden_dim as f64;
    let q = t.matmul(a, net.w("graph.wq"));
    let k = t.matmul(a, net.w("graph.wk"));
    let v = t.matmul(a, net.w("graph.wv"));
    let mut rows = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    for i in 0..n {
        let r = t.slice_rows(edges, i * n, n);
        let scores = t.scale(t.matmul_t(t.row(q, i), t.add(k, r)), S::lit(1.0 / d.sqrt()));
        let w = t.softmax(scores);
        rows.push(t.matmul(w, t.add(v, r)));
        alpha.push(w);
    }
    let mut b = t.stack_rows(&rows);
    if net.cfg.re_residual {
        b = t.add(b, a);
    }
    GlobalEvents { b, edges: Some(edges), alpha }
}

/// Global event vectors, or the local ones when the graph is disabled.
pub fn global_events<S: Scalar>(net: &Net<'_, S>, a: Var) -> GlobalEvents {
    if net.cfg.use_graph {
        let edges = compute_edges(net, a);
        relation_attention(net, a, edges)
    } else {
        GlobalEvents { b: a, edges: None, alpha: Vec::new() }
    }
}
