//! Sentence encoding with iterative polishing, and the recurrent extractor.
//!
//! Polishing: D_1 = tanh(W·mean(ĥ) + b); iteration k runs selective reading
//! over the sentence vectors of the previous iteration conditioned on D_k,
//! then D_(k+1) = GRU(last sentence state, D_k).
//!
//! Extraction step t, from extractor state s_t (s_0 = D_(I+1)):
//! β̂ = softmax over sentences of v·tanh(U·â_i + W·s_t); c = Σβ̂·â;
//! s_(t+1) = LSTM_ext([c; â of the previous pick], s_t), with a learned
//! start vector at t = 0; the pick scores each sentence, plus a learned
//! STOP candidate, as w2·tanh(Ws·â_i + Wh·s_(t+1) + b).

use uts_numerics::{Scalar, Var};

use super::cells::LstmState;
use super::{EncodedExample, Net};
use crate::error::{Result, UtsError};

#[derive(Debug, Clone)]
pub struct SentenceEncoding {
    /// Final polished sentence vectors, `[S × H]`.
    pub sent_states: Var,
    /// `D_(I+1)`, `[1 × H]`.
    pub doc_state: Var,
    /// One `[S × H]` block per iteration, the first being the raw vectors.
    pub iterations: Vec<Var>,
}

pub fn encode_sentences<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample) -> Result<SentenceEncoding> {
    let t = net.t;
    let n = ex.sentences.len();
    if n == 0 {
        return Err(UtsError::Data(format!("{}: no document sentences", ex.id)));
    }
    let emb = net.w("embed.E");
    let mut lasts = Vec::with_capacity(n);
    for (i, ids) in ex.sentences.iter().enumerate() {
        if ids.is_empty() {
            return Err(UtsError::Data(format!("{}: sentence {i} is empty", ex.id)));
        }
        let states = net.bilstm("sent.fwd", "sent.bwd", t.gather_rows(emb, ids));
        lasts.push(t.row(states, ids.len() - 1));
    }
    let base = t.stack_rows(&lasts);
    let mean = t.scale(t.sum_rows(base), S::lit(1.0 / n as f64));
    let mut doc = t.tanh(t.add(t.matmul(mean, net.w("sent.doc.w")), net.w("sent.doc.b")));
    let mut cur = base;
    let mut iterations = vec![base];
    for _ in 0..net.cfg.polish_iters {
        cur = net.sru("sent.sru", cur, doc);
        doc = net.gru_step("sent.gru", t.row(cur, n - 1), doc);
        iterations.push(cur);
    }
    Ok(SentenceEncoding { sent_states: cur, doc_state: doc, iterations })
}

/// Per-example extractor inputs that do not change across steps.
struct ExtContext {
    keys: Var,
    candidates: Var,
}

fn context<S: Scalar>(net: &Net<'_, S>, se: &SentenceEncoding) -> ExtContext {
    let t = net.t;
    let all = t.stack_rows(&[se.sent_states, net.w("extractor.stop")]);
    ExtContext {
        keys: t.matmul(se.sent_states, net.w("extractor.att.U")),
        candidates: t.matmul(all, net.w("extractor.mlp.ws")),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExtStep {
    /// Sentence attention, `[1 × S]`.
    pub beta: Var,
    /// Scores for every sentence and STOP (last), `[1 × (S+1)]`.
    pub logits: Var,
    state: LstmState,
}

fn ext_step<S: Scalar>(net: &Net<'_, S>, se: &SentenceEncoding, cx: &ExtContext, state: LstmState, prev: Var) -> ExtStep {
    let t = net.t;
    let q = t.matmul(state.h, net.w("extractor.att.W"));
    let beta = t.softmax(t.transpose(t.matmul(t.tanh(t.add(cx.keys, q)), net.w("extractor.att.v"))));
    let c = t.matmul(beta, se.sent_states);
    let next = net.lstm_step("extractor.lstm", net.lstm_input("extractor.lstm", t.concat_cols(&[c, prev])), state);
    let query = t.add(t.matmul(next.h, net.w("extractor.mlp.wh")), net.w("extractor.mlp.b"));
    let hidden = t.tanh(t.add(cx.candidates, query));
    let logits = t.transpose(t.matmul(hidden, net.w("extractor.mlp.w2")));
    ExtStep { beta, logits, state: next }
}

fn initial<S: Scalar>(net: &Net<'_, S>, se: &SentenceEncoding) -> LstmState {
    LstmState { h: se.doc_state, c: net.zeros_row(net.cfg.hidden_dim) }
}

#[derive(Debug, Clone)]
pub struct ExtForward {
    pub loss: Var,
    /// Sentence attention at each oracle step (the STOP step excluded),
    /// `[T_sel × S]`; `None` when the oracle is empty.
    pub betas: Option<Var>,
    pub steps: Vec<ExtStep>,
}

/// Teacher-forced extraction loss: the targets are the oracle indices in
/// ascending order followed by STOP.
pub fn ext_forward<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample, se: &SentenceEncoding) -> Result<ExtForward> {
    let t = net.t;
    let oracle = ex
        .oracle
        .as_ref()
        .ok_or_else(|| UtsError::Data(format!("{}: missing oracle labels", ex.id)))?;
    let n = ex.sentences.len();
    if let Some(&bad) = oracle.iter().find(|&&i| i >= n) {
        return Err(UtsError::Data(format!("{}: oracle index {bad} out of range", ex.id)));
    }
    let mut targets = oracle.clone();
    targets.sort_unstable();
    targets.push(n);
    let cx = context(net, se);
    let mut state = initial(net, se);
    let mut prev = net.w("extractor.start");
    let mut steps = Vec::with_capacity(targets.len());
    let mut terms = Vec::with_capacity(targets.len());
    for &y in &targets {
        let step = ext_step(net, se, &cx, state, prev);
        terms.push(t.log_floor(t.pick(t.softmax(step.logits), 0, y), S::lit(super::abs_decoder::LOG_FLOOR)));
        state = step.state;
        if y < n {
            prev = t.row(se.sent_states, y);
        }
        steps.push(step);
    }
    let sel = &steps[..steps.len() - 1];
    let betas = (!sel.is_empty()).then(|| t.stack_rows(&sel.iter().map(|s| s.beta).collect::<Vec<_>>()));
    Ok(ExtForward {
        loss: t.scale(t.sum(t.concat_cols(&terms)), S::lit(-1.0)),
        betas,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractDecision {
    /// In selection order.
    pub selected: Vec<usize>,
    /// β̂ at each selection step.
    pub step_attention: Vec<Vec<f64>>,
}

impl ExtractDecision {
    pub fn sorted(&self) -> Vec<usize> {
        let mut s = self.selected.clone();
        s.sort_unstable();
        s
    }
}

/// Greedy selection loop over `n` sentences. `scores(prev)` returns the
/// `n + 1` logits of the next step (STOP last) given the previous pick;
/// picked sentences are masked out, ties go to the lower index.
pub fn select_loop(n: usize, max_selected: usize, mut scores: impl FnMut(Option<usize>) -> Vec<f64>) -> Vec<usize> {
    let mut selected: Vec<usize> = Vec::new();
    while selected.len() < max_selected {
        let logits = scores(selected.last().copied());
        assert_eq!(logits.len(), n + 1);
        let mut best: Option<usize> = None;
        for i in (0..=n).filter(|i| *i == n || !selected.contains(i)) {
            if best.is_none_or(|b| logits[i] > logits[b]) {
                best = Some(i);
            }
        }
        let best = best.expect("STOP is always available");
        if best == n {
            break;
        }
        selected.push(best);
    }
    selected
}

/// Free-running extraction.
pub fn extract<S: Scalar>(net: &Net<'_, S>, se: &SentenceEncoding, n: usize, max_selected: usize) -> ExtractDecision {
    let t = net.t;
    let cx = context(net, se);
    let mut state = initial(net, se);
    let mut attention = Vec::new();
    let selected = select_loop(n, max_selected, |prev| {
        let prev = match prev {
            Some(i) => t.row(se.sent_states, i),
            None => net.w("extractor.start"),
        };
        let step = ext_step(net, se, &cx, state, prev);
        state = step.state;
        attention.push(net.values(step.beta));
        net.values(step.logits)
    });
    attention.truncate(selected.len());
    ExtractDecision { selected, step_attention: attention }
}
