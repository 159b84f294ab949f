//! The abstractive decoder: two-level attention, memory-guided state
//! fusion, output projection, copy mixture, the teacher-forced loss and
//! greedy/beam decoding.
//!
//! Step t, from the fused state h'(t−1):
//!
//! 1. word attention α over every source word (one softmax over the whole
//!    document) and event attention β, both scored from h'(t−1);
//! 2. γ = α·β(event of word), c = Σγ·h, e = Σβ·a;
//! 3. c feeds LSTM_dec together with e(y(t−1)), giving h'(t);
//! 4. memory read with (h'(t), c), then h'(t) ← g2∘h'(t) + (1 − g2)∘m2;
//! 5. P_v = softmax(W_v[m1; h'; c; e] + b_v);
//! 6. final = p_gen·P_v + (1 − p_gen)·copy(γ̂), γ̂ = γ / Σγ.

use std::cmp::Ordering;

use uts_numerics::{Scalar, Tensor, Var};

use super::cells::LstmState;
use super::event_encoder::{encode_events, EventEncoding};
use super::graph_encoder::{global_events, GlobalEvents};
use super::memory::{build_memory, read, MemoryReadout, TimeEventMemory};
use super::{EncodedExample, Net};
use crate::corpus::{BOS, EOS};
use crate::error::Result;

pub const LOG_FLOOR: f64 = 1e-10;

/// Everything the decoder reads; built once per example.
#[derive(Debug, Clone)]
pub struct AbsEncoding {
    pub events: EventEncoding,
    pub global: GlobalEvents,
    pub memory: TimeEventMemory,
    word_keys: Var,
    event_keys: Var,
}

pub fn encode_abs<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample) -> Result<AbsEncoding> {
    let t = net.t;
    let events = encode_events(net, ex)?;
    let global = global_events(net, events.local);
    let memory = build_memory(net, events.time_pos, events.local, global.b);
    Ok(AbsEncoding {
        word_keys: t.matmul(events.all_words, net.w("attn_word.Wh")),
        event_keys: t.matmul(events.local, net.w("attn_event.Wd")),
        events,
        global,
        memory,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub cell: Var,
    /// Extended id of the previously emitted token.
    pub prev_token: usize,
    pub step: usize,
}

/// `h'_0`: one LSTM_ini step over the concatenated event vectors
/// (zero-padded to `max_events`), starting from the learned prior `h_c`.
pub fn init_state<S: Scalar>(net: &Net<'_, S>, ae: &AbsEncoding) -> DecoderState {
    let t = net.t;
    let n = t.shape(ae.events.local)[0];
    let h = net.cfg.hidden_dim;
    let mut parts: Vec<Var> = (0..n).map(|i| t.row(ae.events.local, i)).collect();
    if n < net.cfg.max_events {
        parts.push(net.zeros_row((net.cfg.max_events - n) * h));
    }
    let x = net.lstm_input("decoder.init", t.concat_cols(&parts));
    let prior = LstmState { h: net.w("decoder.init.hc"), c: net.zeros_row(h) };
    let s = net.lstm_step("decoder.init", x, prior);
    DecoderState { h: s.h, cell: s.c, prev_token: BOS, step: 0 }
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub state: DecoderState,
    /// `[1 × N]`, normalized over all source words.
    pub alpha: Var,
    /// `[1 × T_e]`.
    pub beta: Var,
    pub gamma: Var,
    pub gamma_hat: Var,
    pub readout: MemoryReadout,
    pub context: Var,
    pub event_context: Var,
    /// `[1 × 1]`.
    pub p_gen: Var,
    /// `[1 × V]`.
    pub vocab_dist: Var,
}

pub fn decode_step<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample, ae: &AbsEncoding, state: &DecoderState) -> StepOutput {
    let t = net.t;
    let attend = |keys: Var, q: Var, v: Var| t.softmax(t.transpose(t.matmul(t.tanh(t.add(keys, q)), v)));
    let alpha = attend(ae.word_keys, t.matmul(state.h, net.w("attn_word.Wb")), net.w("attn_word.wa"));
    let beta = attend(ae.event_keys, t.matmul(state.h, net.w("attn_event.Wc")), net.w("attn_event.We"));
    let gamma = t.mul(alpha, t.gather_cols(beta, &ex.word_event));
    let context = t.matmul(gamma, ae.events.all_words);
    let event_context = t.matmul(beta, ae.events.local);

    let x = t.gather_rows(net.w("embed.E"), &[ex.input_id(state.prev_token)]);
    let lstm_in = net.lstm_input("decoder.lstm", t.concat_cols(&[context, x]));
    let dec = net.lstm_step("decoder.lstm", lstm_in, LstmState { h: state.h, c: state.cell });
    let readout = read(net, &ae.memory, dec.h, context);
    let h = readout.fused;

    let proj_in = t.concat_cols(&[readout.m1, h, context, event_context]);
    let vocab_dist = t.softmax(t.add(t.matmul(proj_in, net.w("out.Wv")), net.w("out.bv")));
    let gen_logit = t.add(
        t.add(t.matmul(context, net.w("copy.wc")), t.matmul(h, net.w("copy.wh"))),
        t.add(t.matmul(x, net.w("copy.wx")), net.w("copy.b")),
    );
    StepOutput {
        state: DecoderState { h, cell: dec.c, prev_token: state.prev_token, step: state.step + 1 },
        alpha,
        beta,
        gamma,
        gamma_hat: t.normalize_rows(gamma),
        readout,
        context,
        event_context,
        p_gen: t.sigmoid(gen_logit),
        vocab_dist,
    }
}

/// Final distribution over the extended vocabulary, `[1 × V_ext]`.
pub fn copy_mixture<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample, out: &StepOutput) -> Var {
    let t = net.t;
    let width = ex.ext_vocab_size();
    let gen = if width > ex.vocab_size {
        let ids: Vec<usize> = (0..ex.vocab_size).collect();
        t.scatter_cols(out.vocab_dist, &ids, width)
    } else {
        out.vocab_dist
    };
    let copy = t.scatter_cols(out.gamma_hat, &ex.source_ext, width);
    t.add(t.mul(gen, out.p_gen), t.mul(copy, t.one_minus(out.p_gen)))
}

/// `final[y]` without materializing the whole distribution.
pub fn target_prob<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample, out: &StepOutput, y: usize) -> Var {
    let t = net.t;
    let positions: Vec<usize> = (0..ex.n_words()).filter(|&k| ex.source_ext[k] == y).collect();
    let copy = (!positions.is_empty()).then(|| t.mul(t.sum(t.gather_cols(out.gamma_hat, &positions)), t.one_minus(out.p_gen)));
    let gen = (y < ex.vocab_size).then(|| t.mul(t.pick(out.vocab_dist, 0, y), out.p_gen));
    match (gen, copy) {
        (Some(g), Some(c)) => t.add(g, c),
        (Some(g), None) => g,
        (None, Some(c)) => c,
        (None, None) => t.constant(Tensor::scalar(S::zero())),
    }
}

/// Teacher-forced pass over the reference summary.
#[derive(Debug, Clone)]
pub struct AbsForward {
    /// `−Σ log max(final[y_t], 1e-10)`.
    pub loss: Var,
    pub steps: Vec<StepOutput>,
    /// Event attention per step, `[T_y × T_e]`.
    pub betas: Var,
    pub n_tokens: usize,
}

pub fn abs_forward<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample, ae: &AbsEncoding) -> AbsForward {
    let t = net.t;
    assert!(!ex.target.is_empty(), "empty reference");
    let mut state = init_state(net, ae);
    let mut steps = Vec::with_capacity(ex.target.len());
    let mut terms = Vec::with_capacity(ex.target.len());
    for &y in &ex.target {
        let out = decode_step(net, ex, ae, &state);
        terms.push(t.log_floor(target_prob(net, ex, &out, y), S::lit(LOG_FLOOR)));
        state = DecoderState { prev_token: y, ..out.state };
        steps.push(out);
    }
    let betas = t.stack_rows(&steps.iter().map(|s| s.beta).collect::<Vec<_>>());
    AbsForward {
        loss: t.scale(t.sum(t.concat_cols(&terms)), S::lit(-1.0)),
        steps,
        betas,
        n_tokens: ex.target.len(),
    }
}

/// Attention and output values of one decoding step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceRow {
    pub token: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_hat: Vec<f64>,
    pub pi: Vec<f64>,
    pub p_gen: f64,
    pub vocab_dist: Vec<f64>,
    pub final_dist: Vec<f64>,
}

impl TraceRow {
    fn capture<S: Scalar>(net: &Net<'_, S>, out: &StepOutput, final_dist: Vec<f64>, token: usize) -> Self {
        Self {
            token,
            alpha: net.values(out.alpha),
            beta: net.values(out.beta),
            gamma: net.values(out.gamma),
            gamma_hat: net.values(out.gamma_hat),
            pi: net.values(out.readout.pi),
            p_gen: net.scalar(out.p_gen),
            vocab_dist: net.values(out.vocab_dist),
            final_dist,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecoderTrace {
    /// Event of each source word, to lay α/γ out per event.
    pub word_event: Vec<usize>,
    pub rows: Vec<TraceRow>,
}

impl DecoderTrace {
    /// A flat per-word row as `[T_e × max T_w]`, zero-padded.
    pub fn by_event(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let n_events = self.word_event.iter().max().map_or(0, |m| m + 1);
        let mut out: Vec<Vec<f64>> = vec![Vec::new(); n_events];
        for (v, &e) in flat.iter().zip(&self.word_event) {
            out[e].push(*v);
        }
        let width = out.iter().map(Vec::len).max().unwrap_or(0);
        for row in &mut out {
            row.resize(width, 0.0);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Extended ids, without the closing EOS.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub trace: DecoderTrace,
}

fn ln(p: f64) -> f64 {
    p.max(1e-300).ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding; ties go to the lower id.
pub fn greedy_decode<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample, ae: &AbsEncoding, max_len: usize) -> Decoded {
    let mut state = init_state(net, ae);
    let mut trace = DecoderTrace { word_event: ex.word_event.clone(), rows: Vec::new() };
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let out = decode_step(net, ex, ae, &state);
        let dist = net.values(copy_mixture(net, ex, &out));
        let y = argmax(&dist);
        log_prob += ln(dist[y]);
        trace.rows.push(TraceRow::capture(net, &out, dist, y));
        if y == EOS {
            break;
        }
        tokens.push(y);
        state = DecoderState { prev_token: y, ..out.state };
    }
    Decoded { tokens, log_prob, trace }
}

struct Hyp {
    tokens: Vec<usize>,
    log_prob: f64,
    state: DecoderState,
    /// Last trace row in the arena.
    trace: Option<usize>,
}

/// Higher log-probability first, then the lexicographically lower sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Length-wise beam search over the final distribution. Hypotheses end at
/// EOS or after `max_len` steps; the search stops once `beam` hypotheses
/// have ended.
pub fn beam_decode<S: Scalar>(
    net: &Net<'_, S>,
    ex: &EncodedExample,
    ae: &AbsEncoding,
    beam: usize,
    max_len: usize,
) -> Decoded {
    assert!(beam >= 1, "beam size must be at least 1");
    let mut arena: Vec<(Option<usize>, TraceRow)> = Vec::new();
    let mut alive = vec![Hyp { tokens: Vec::new(), log_prob: 0.0, state: init_state(net, ae), trace: None }];
    let mut done: Vec<Hyp> = Vec::new();
    for _ in 0..max_len {
        // (parent, token, score, trace row, next state)
        let mut cands: Vec<(usize, usize, f64, usize, DecoderState)> = Vec::new();
        for (hi, hyp) in alive.iter().enumerate() {
            let out = decode_step(net, ex, ae, &hyp.state);
            let dist = net.values(copy_mixture(net, ex, &out));
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
            for &y in order.iter().take(beam) {
                let row = TraceRow::capture(net, &out, dist.clone(), y);
                arena.push((hyp.trace, row));
                cands.push((hi, y, hyp.log_prob + ln(dist[y]), arena.len() - 1, out.state));
            }
        }
        let seq = |c: &(usize, usize, f64, usize, DecoderState)| {
            let mut s = alive[c.0].tokens.clone();
            s.push(c.1);
            s
        };
        cands.sort_by(|a, b| rank((a.2, &seq(a)), (b.2, &seq(b))));
        let mut next = Vec::new();
        for c in cands.iter().take(beam) {
            let tokens = seq(c);
            let hyp = Hyp {
                state: DecoderState { prev_token: c.1, ..c.4 },
                log_prob: c.2,
                trace: Some(c.3),
                tokens,
            };
            if c.1 == EOS {
                done.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        alive = next;
        if done.len() >= beam || alive.is_empty() {
            break;
        }
    }
    done.extend(alive);
    let best = done
        .into_iter()
        .min_by(|a, b| rank((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)))
        .expect("at least one hypothesis");
    let mut rows = Vec::new();
    let mut cur = best.trace;
    while let Some(i) = cur {
        rows.push(std::mem::take(&mut arena[i].1));
        cur = arena[i].0;
    }
    rows.reverse();
    let mut tokens = best.tokens;
    if tokens.last() == Some(&EOS) {
        tokens.pop();
    }
    Decoded {
        tokens,
        log_prob: best.log_prob,
        trace: DecoderTrace { word_event: ex.word_event.clone(), rows },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests_support::{toy_config, toy_example};
    use crate::model::{init_params, ModelConfig};
    use approx::assert_abs_diff_eq;
    use uts_numerics::{ParamStore, Tape};

    /// Plain-loop linear algebra for the straight-line oracle.
    struct Lin<'a>(&'a ParamStore<f64>);

    impl Lin<'_> {
        fn m(&self, name: &str) -> (usize, usize, &[f64]) {
            let t = self.0.get(name).unwrap();
            (t.rows(), t.cols(), t.data())
        }
        /// `x · W` for a row vector x.
        fn vm(&self, x: &[f64], name: &str) -> Vec<f64> {
            let (r, c, d) = self.m(name);
            assert_eq!(x.len(), r);
            (0..c).map(|j| (0..r).map(|i| x[i] * d[i * c + j]).sum()).collect()
        }
        fn v(&self, name: &str) -> Vec<f64> {
            self.0.get(name).unwrap().data().to_vec()
        }
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }
    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }
    fn softmax(x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }
    fn weighted(w: &[f64], rows: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; rows[0].len()];
        for (wi, r) in w.iter().zip(rows) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += wi * v;
            }
        }
        out
    }
    fn rows_of(t: &Tensor<f64>) -> Vec<Vec<f64>> {
        (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
    }

    /// One decoder step written out line by line, independent of the tape.
    #[allow(clippy::too_many_arguments)]
    fn straight_line_step(
        p: &ParamStore<f64>,
        cfg: &ModelConfig,
        ex: &EncodedExample,
        words: &[Vec<f64>],
        local: &[Vec<f64>],
        keys: &[Vec<f64>],
        global: &[Vec<f64>],
        h_prev: &[f64],
        c_prev: &[f64],
        prev_token: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = Lin(p);
        let h = cfg.hidden_dim;
        let score = |keys: &[Vec<f64>], wk: &str, wq: &str, v: &str| -> Vec<f64> {
            let q = l.vm(h_prev, wq);
            softmax(&keys.iter().map(|k| {
                let hk = l.vm(k, wk);
                let z: Vec<f64> = add(&hk, &q).iter().map(|x| x.tanh()).collect();
                l.vm(&z, v)[0]
            }).collect::<Vec<_>>())
        };
        let alpha = score(words, "attn_word.Wh", "attn_word.Wb", "attn_word.wa");
        let beta = score(local, "attn_event.Wd", "attn_event.Wc", "attn_event.We");
        let gamma: Vec<f64> = alpha.iter().zip(&ex.word_event).map(|(a, &e)| a * beta[e]).collect();
        let c = weighted(&gamma, words);
        let x = p.get("embed.E").unwrap().row_slice(ex.input_id(prev_token)).to_vec();
        let inp: Vec<f64> = c.iter().chain(&x).copied().collect();
        let gates = add(&add(&l.vm(&inp, "decoder.lstm.wx"), &l.v("decoder.lstm.b")), &l.vm(h_prev, "decoder.lstm.wh"));
        let mut cell = vec![0.0; h];
        let mut hd = vec![0.0; h];
        for j in 0..h {
            let (i, f, o, g) = (sig(gates[j]), sig(gates[h + j]), sig(gates[2 * h + j]), gates[3 * h + j].tanh());
            cell[j] = f * c_prev[j] + i * g;
            hd[j] = o * cell[j].tanh();
        }
        let e_ctx = weighted(&beta, local);
        let pi = softmax(&keys.iter().map(|k| {
            let q = l.vm(&hd, "memory.We");
            q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>()
        }).collect::<Vec<_>>());
        let m1_raw = weighted(&pi, local);
        let m2 = l.vm(&weighted(&pi, global), "memory.w_down");
        let cat = |m: &[f64]| hd.iter().chain(&c).chain(m).copied().collect::<Vec<f64>>();
        let g1: Vec<f64> = add(&l.vm(&cat(&m1_raw), "memory.wo"), &l.v("memory.bo")).into_iter().map(sig).collect();
        let g2: Vec<f64> = add(&l.vm(&cat(&m2), "memory.wn"), &l.v("memory.bn")).into_iter().map(sig).collect();
        let m1: Vec<f64> = g1.iter().zip(&m1_raw).map(|(a, b)| a * b).collect();
        let hf: Vec<f64> = (0..h).map(|j| g2[j] * hd[j] + (1.0 - g2[j]) * m2[j]).collect();
        let proj: Vec<f64> = m1.iter().chain(&hf).chain(&c).chain(&e_ctx).copied().collect();
        let pv = softmax(&add(&l.vm(&proj, "out.Wv"), &l.v("out.bv")));
        let pg = sig(l.vm(&c, "copy.wc")[0] + l.vm(&hf, "copy.wh")[0] + l.vm(&x, "copy.wx")[0] + l.v("copy.b")[0]);
        let gsum: f64 = gamma.iter().sum();
        let mut fin = vec![0.0; ex.ext_vocab_size()];
        for (k, v) in pv.iter().enumerate() {
            fin[k] += pg * v;
        }
        for (k, g) in gamma.iter().enumerate() {
            fin[ex.source_ext[k]] += (1.0 - pg) * g / gsum;
        }
        (fin, hf, cell)
    }

    fn setup() -> (ModelConfig, ParamStore<f64>, EncodedExample) {
        let cfg = toy_config();
        let p = init_params(&cfg, 11).unwrap();
        let mut ex = toy_example(&[&[4, 5, 6], &[7, 4], &[8, 9, 10, 11]], cfg.vocab_size);
        // Word 6 is out of vocabulary: it reads as UNK and copies as id 12.
        ex.events[0][2] = crate::corpus::UNK;
        ex.source_ext[2] = cfg.vocab_size;
        ex.oov = vec!["zork".into()];
        (cfg, p, ex)
    }

    #[test]
    fn step_matches_straight_line_oracle() {
        let (cfg, p, ex) = setup();
        let t = Tape::new();
        let net = Net::new(&t, &p, &cfg);
        let ae = encode_abs(&net, &ex).unwrap();
        let words = rows_of(&t.value(ae.events.all_words));
        let local = rows_of(&t.value(ae.events.local));
        let keys = rows_of(&t.value(ae.memory.keys));
        let global = rows_of(&t.value(ae.memory.global));
        let mut state = init_state(&net, &ae);
        for &y in &[5, cfg.vocab_size, 3] {
            let h_prev = t.value(state.h).into_data();
            let c_prev = t.value(state.cell).into_data();
            let out = decode_step(&net, &ex, &ae, &state);
            let fin = t.value(copy_mixture(&net, &ex, &out));
            let (expect, hf, cell) =
                straight_line_step(&p, &cfg, &ex, &words, &local, &keys, &global, &h_prev, &c_prev, state.prev_token);
            for (a, b) in fin.data().iter().zip(&expect) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
            for (a, b) in t.value(out.state.h).data().iter().zip(&hf) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
            for (a, b) in t.value(out.state.cell).data().iter().zip(&cell) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
            let direct = t.item(target_prob(&net, &ex, &out, y));
            assert_abs_diff_eq!(direct, expect[y], epsilon = 1e-14);
            state = DecoderState { prev_token: y, ..out.state };
        }
    }

    #[test]
    fn normalization_and_copy_accounting() {
        let (cfg, p, ex) = setup();
        let t = Tape::new();
        let net = Net::new(&t, &p, &cfg);
        let ae = encode_abs(&net, &ex).unwrap();
        let out = decode_step(&net, &ex, &ae, &init_state(&net, &ae));
        let sum = |v: Var| t.value(v).sum();
        assert_abs_diff_eq!(sum(out.alpha), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sum(out.beta), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sum(out.gamma_hat), 1.0, epsilon = 1e-12);
        assert!(sum(out.gamma) <= 1.0 + 1e-12);
        let fin = t.value(copy_mixture(&net, &ex, &out));
        assert_abs_diff_eq!(fin.sum(), 1.0, epsilon = 1e-12);
        // The OOV slot holds exactly (1 − p_gen)·γ̂ of its single source position.
        let pg = t.item(out.p_gen);
        assert_eq!(fin.data()[cfg.vocab_size], (1.0 - pg) * t.value(out.gamma_hat).data()[2]);
    }

    #[test]
    fn copy_endpoints() {
        let cfg = toy_config();
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let mut ex = toy_example(&[&[4, 4, 5]], cfg.vocab_size);
        ex.word_event = vec![0, 0, 0];
        let t = Tape::new();
        let net = Net::new(&t, &p, &cfg);
        let ae = encode_abs(&net, &ex).unwrap();
        let mut out = decode_step(&net, &ex, &ae, &init_state(&net, &ae));
        out.gamma_hat = t.constant(Tensor::row(vec![0.5, 0.3, 0.2]));
        out.p_gen = t.constant(Tensor::scalar(0.0));
        let fin = t.value(copy_mixture(&net, &ex, &out));
        assert_abs_diff_eq!(fin.data()[4], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(fin.data()[5], 0.2, epsilon = 1e-15);
        out.p_gen = t.constant(Tensor::scalar(1.0));
        assert_eq!(t.value(copy_mixture(&net, &ex, &out)), t.value(out.vocab_dist));
    }

    #[test]
    fn single_event_beta_is_one_and_gamma_is_alpha() {
        let cfg = toy_config();
        let p = init_params::<f64>(&cfg, 2).unwrap();
        let ex = toy_example(&[&[4, 5, 6]], cfg.vocab_size);
        let t = Tape::new();
        let net = Net::new(&t, &p, &cfg);
        let ae = encode_abs(&net, &ex).unwrap();
        let out = decode_step(&net, &ex, &ae, &init_state(&net, &ae));
        assert_eq!(t.value(out.beta).data(), [1.0]);
        assert_eq!(t.value(out.gamma), t.value(out.alpha));
    }

    #[test]
    fn init_state_is_deterministic_and_zero_for_zero_weights() {
        let cfg = toy_config();
        let mut p = init_params::<f64>(&cfg, 2).unwrap();
        let ex = toy_example(&[&[4, 5], &[6]], cfg.vocab_size);
        let h0 = |p: &ParamStore<f64>| {
            let t = Tape::new();
            let net = Net::new(&t, p, &cfg);
            let ae = encode_abs(&net, &ex).unwrap();
            t.value(init_state(&net, &ae).h)
        };
        assert_eq!(h0(&p), h0(&p));
        let names: Vec<String> = p.names().map(String::from).collect();
        for n in names {
            let shape = p.get(&n).unwrap().shape().to_vec();
            p.insert(n, Tensor::zeros(&shape));
        }
        assert!(h0(&p).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_and_certain_baselines() {
        let cfg = toy_config();
        let mut p = init_params::<f64>(&cfg, 3).unwrap();
        // Zero projection and a closed copy gate: P_v uniform, p_gen = 1.
        p.insert("out.Wv", Tensor::zeros(&[4 * cfg.hidden_dim, cfg.vocab_size]));
        for n in ["copy.wc", "copy.wh", "copy.wx"] {
            let s = p.get(n).unwrap().shape().to_vec();
            p.insert(n, Tensor::zeros(&s));
        }
        p.insert("copy.b", Tensor::scalar(800.0));
        let ex = toy_example(&[&[4, 5], &[6]], cfg.vocab_size);
        let t = Tape::new();
        let net = Net::new(&t, &p, &cfg);
        let ae = encode_abs(&net, &ex).unwrap();
        let f = abs_forward(&net, &ex, &ae);
        assert_abs_diff_eq!(t.item(f.loss), 3.0 * (cfg.vocab_size as f64).ln(), epsilon = 1e-10);

        // All mass on the target through the bias: loss 0 up to round-off.
        let mut bias = vec![-1e4; cfg.vocab_size];
        bias[crate::corpus::EOS] = 0.0;
        p.insert("out.bv", Tensor::row(bias));
        let mut ex2 = ex.clone();
        ex2.target = vec![crate::corpus::EOS];
        let t = Tape::new();
        let net = Net::new(&t, &p, &cfg);
        let ae = encode_abs(&net, &ex2).unwrap();
        assert_abs_diff_eq!(t.item(abs_forward(&net, &ex2, &ae).loss), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reordering_the_reference_changes_the_loss() {
        let (cfg, p, ex) = setup();
        let loss = |target: Vec<usize>| {
            let mut e = ex.clone();
            e.target = target;
            let t = Tape::new();
            let net = Net::new(&t, &p, &cfg);
            let ae = encode_abs(&net, &e).unwrap();
            t.item(abs_forward(&net, &e, &ae).loss)
        };
        assert_ne!(loss(vec![4, 5, 8, 9, EOS]), loss(vec![8, 9, 4, 5, EOS]));
    }

    #[test]
    fn beam_of_one_is_greedy() {
        let (cfg, p, ex) = setup();
        for seed in 0..5 {
            let p = if seed == 0 { p.clone() } else { init_params(&cfg, seed).unwrap() };
            let t = Tape::inference();
            let net = Net::new(&t, &p, &cfg);
            let ae = encode_abs(&net, &ex).unwrap();
            let g = greedy_decode(&net, &ex, &ae, 6);
            let b = beam_decode(&net, &ex, &ae, 1, 6);
            assert_eq!(g.tokens, b.tokens);
            assert_eq!(g.trace, b.trace);
        }
    }

    /// Log-probability of every sequence up to `max_len` steps.
    fn enumerate(net: &Net<'_, f64>, ex: &EncodedExample, ae: &AbsEncoding, max_len: usize) -> Vec<(Vec<usize>, f64)> {
        let mut out = Vec::new();
        let mut frontier = vec![(Vec::new(), 0.0, init_state(net, ae))];
        for step in 0..max_len {
            let mut next = Vec::new();
            for (seq, lp, state) in frontier {
                let o = decode_step(net, ex, ae, &state);
                let dist = net.values(copy_mixture(net, ex, &o));
                for (y, &pr) in dist.iter().enumerate() {
                    let mut s: Vec<usize> = seq.clone();
                    s.push(y);
                    let l = lp + pr.ln();
                    if y == EOS || step + 1 == max_len {
                        out.push((s, l));
                    } else {
                        next.push((s, l, DecoderState { prev_token: y, ..o.state }));
                    }
                }
            }
            frontier = next;
        }
        out
    }

    #[test]
    fn wide_beam_finds_exhaustive_optimum() {
        let mut cfg = toy_config();
        cfg.vocab_size = 9;
        for seed in 0..3 {
            let mut p = init_params::<f64>(&cfg, 40 + seed).unwrap();
            // Make EOS unlikely so that long sequences compete.
            let mut bias = vec![0.0; cfg.vocab_size];
            bias[EOS] = -3.0;
            p.insert("out.bv", Tensor::row(bias));
            let ex = toy_example(&[&[4, 5], &[6, 7, 8]], cfg.vocab_size);
            let t = Tape::inference();
            let net = Net::new(&t, &p, &cfg);
            let ae = encode_abs(&net, &ex).unwrap();
            let all = enumerate(&net, &ex, &ae, 4);
            let best = all
                .iter()
                .min_by(|a, b| rank((a.1, &a.0), (b.1, &b.0)))
                .unwrap();
            let found = beam_decode(&net, &ex, &ae, 32, 4);
            let mut seq = found.tokens.clone();
            if best.0.last() == Some(&EOS) {
                seq.push(EOS);
            }
            assert_eq!(seq, best.0, "seed {seed}");
            assert_abs_diff_eq!(found.log_prob, best.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn trace_layout_by_event() {
        let tr = DecoderTrace { word_event: vec![0, 0, 1], rows: vec![] };
        assert_eq!(tr.by_event(&[0.1, 0.2, 0.7]), vec![vec![0.1, 0.2], vec![0.7, 0.0]]);
    }
}
