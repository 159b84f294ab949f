//! Recurrent cells shared by the encoders, the decoder and the extractor.

use uts_numerics::{Scalar, Var};

use super::Net;

#[derive(Debug, Clone, Copy)]
pub(crate) struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl<S: Scalar> Net<'_, S> {
    pub(crate) fn lstm_zero(&self) -> LstmState {
        let z = self.zeros_row(self.cfg.hidden_dim);
        LstmState { h: z, c: z }
    }

    /// `x·Wx + b` for every row of `x`; the part of the gates that does
    /// not depend on the recurrent state.
    pub(crate) fn lstm_input(&self, prefix: &str, x: Var) -> Var {
        let t = self.t;
        t.add(t.matmul(x, self.w(&format!("{prefix}.wx"))), self.w(&format!("{prefix}.b")))
    }

    /// One LSTM step from a precomputed input projection. Gate blocks are
    /// ordered input, forget, output, candidate.
    pub(crate) fn lstm_step(&self, prefix: &str, x_proj: Var, s: LstmState) -> LstmState {
        let t = self.t;
        let h = self.cfg.hidden_dim;
        let gates = t.add(x_proj, t.matmul(s.h, self.w(&format!("{prefix}.wh"))));
        let i = t.sigmoid(t.slice_cols(gates, 0, h));
        let f = t.sigmoid(t.slice_cols(gates, h, h));
        let o = t.sigmoid(t.slice_cols(gates, 2 * h, h));
        let g = t.tanh(t.slice_cols(gates, 3 * h, h));
        let c = t.add(t.mul(f, s.c), t.mul(i, g));
        LstmState { h: t.mul(o, t.tanh(c)), c }
    }

    /// Bidirectional LSTM over the rows of `x`; row t of the result is the
    /// sum of the forward and backward states at t.
    pub(crate) fn bilstm(&self, fwd: &str, bwd: &str, x: Var) -> Var {
        let t = self.t;
        let n = t.shape(x)[0];
        let xf = self.lstm_input(fwd, x);
        let xb = self.lstm_input(bwd, x);
        let mut forward = Vec::with_capacity(n);
        let mut s = self.lstm_zero();
        for i in 0..n {
            s = self.lstm_step(fwd, t.row(xf, i), s);
            forward.push(s.h);
        }
        let mut backward = vec![forward[0]; n];
        let mut s = self.lstm_zero();
        for i in (0..n).rev() {
            s = self.lstm_step(bwd, t.row(xb, i), s);
            backward[i] = s.h;
        }
        let rows: Vec<Var> = forward.iter().zip(&backward).map(|(&f, &b)| t.add(f, b)).collect();
        t.stack_rows(&rows)
    }

    /// Selective reading over the rows of `xs` from a zero state:
    ///
    /// ```text
    /// r = σ(x·Wr + s·Ur + br)
    /// z = σ(x·Wz + s·Uz + g·Vz + bz)
    /// s̃ = tanh(x·Ws + (r∘s)·Us + bs)
    /// s ← z∘s + (1 − z)∘s̃
    /// ```
    ///
    /// `g` conditions the update gate on a coarse summary vector. Returns
    /// every state, one per row.
    pub(crate) fn sru(&self, prefix: &str, xs: Var, g: Var) -> Var {
        let t = self.t;
        let w = |n: &str| self.w(&format!("{prefix}.{n}"));
        let n = t.shape(xs)[0];
        let xr = t.add(t.matmul(xs, w("wr")), w("br"));
        let xz = t.add(t.add(t.matmul(xs, w("wz")), w("bz")), t.matmul(g, w("vz")));
        let xs_ = t.add(t.matmul(xs, w("ws")), w("bs"));
        let (ur, uz, us) = (w("ur"), w("uz"), w("us"));
        let mut s = self.zeros_row(self.cfg.hidden_dim);
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            let r = t.sigmoid(t.add(t.row(xr, i), t.matmul(s, ur)));
            let z = t.sigmoid(t.add(t.row(xz, i), t.matmul(s, uz)));
            let cand = t.tanh(t.add(t.row(xs_, i), t.matmul(t.mul(r, s), us)));
            s = t.add(t.mul(z, s), t.mul(t.one_minus(z), cand));
            states.push(s);
        }
        t.stack_rows(&states)
    }

    /// GRU step with the same gate convention as [`Net::sru`].
    pub(crate) fn gru_step(&self, prefix: &str, x: Var, h: Var) -> Var {
        let t = self.t;
        let w = |n: &str| self.w(&format!("{prefix}.{n}"));
        let gate = |g: &str, state: Var| {
            t.add(t.add(t.matmul(x, w(&format!("w{g}"))), t.matmul(state, w(&format!("u{g}")))), w(&format!("b{g}")))
        };
        let r = t.sigmoid(gate("r", h));
        let z = t.sigmoid(gate("z", h));
        let n = t.tanh(gate("n", t.mul(r, h)));
        t.add(t.mul(z, h), t.mul(t.one_minus(z), n))
    }
}
