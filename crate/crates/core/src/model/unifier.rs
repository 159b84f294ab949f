//! Ties the two branches together: the decoder's event attention is pooled
//! down to one row per extraction step, spread over each event's sentences
//! and compared with the extractor's sentence attention.

use std::ops::Range;

use uts_numerics::{Scalar, Tape, Tensor, Var};

use super::abs_decoder::{abs_forward, encode_abs, AbsForward, LOG_FLOOR};
use super::ext_branch::{encode_sentences, ext_forward, ExtForward};
use super::{EncodedExample, Net};
use crate::error::{Result, UtsError};

/// Averaging windows over `t_y` decode steps for `n` output rows: width
/// `ceil(t_y / n)` with a shorter last window. When that would leave a
/// window empty (e.g. 5 steps into 4 rows) the steps are split as evenly
/// as possible instead.
pub fn pooling_windows(t_y: usize, n: usize) -> Vec<Range<usize>> {
    assert!(t_y >= 1 && n >= 1, "empty attention map");
    let w = t_y.div_ceil(n);
    if (n - 1) * w < t_y {
        (0..n).map(|i| i * w..((i + 1) * w).min(t_y)).collect()
    } else if t_y >= n {
        (0..n).map(|i| i * t_y / n..(i + 1) * t_y / n).collect()
    } else {
        // Fewer steps than rows: each row reads the step at its relative position.
        (0..n).map(|i| {
            let s = i * t_y / n;
            s..s + 1
        })
        .collect()
    }
}

/// `[T_y × T_e] → [n × T_e]`, rows renormalized.
pub fn compress<S: Scalar>(t: &Tape<S>, gen: Var, n: usize) -> Var {
    let t_y = t.shape(gen)[0];
    let windows = pooling_windows(t_y, n);
    let mut pool = Tensor::zeros(&[n, t_y]);
    for (i, w) in windows.iter().enumerate() {
        let v = S::lit(1.0 / w.len() as f64);
        for j in w.clone() {
            pool.data_mut()[i * t_y + j] = v;
        }
    }
    t.normalize_rows(t.matmul(t.constant(pool), gen))
}

/// Repeats each event column once per sentence of that event.
pub fn tile<S: Scalar>(t: &Tape<S>, compressed: Var, sentence_event: &[usize]) -> Var {
    t.gather_cols(compressed, sentence_event)
}

/// `−(1/T) Σ_t log( (1/K) Σ_{s ∈ top-K β̂_t} β̂_t[s]·tiled_t[s] )`, floored
/// at 1e-10 inside the log. `K` is clamped to the number of sentences.
pub fn loss_inc<S: Scalar>(t: &Tape<S>, tiled: Var, ext: Var, k: usize) -> Var {
    let shape = t.shape(ext);
    assert_eq!(t.shape(tiled), shape, "attention maps differ in shape");
    let (rows, cols) = (shape[0], shape[1]);
    let k = if k > cols {
        log::warn!("top-K of {k} exceeds {cols} sentences; using {cols}");
        cols
    } else {
        k.max(1)
    };
    let prod = t.mul(ext, tiled);
    let ext_values = t.value(ext);
    let mut terms = Vec::with_capacity(rows);
    for r in 0..rows {
        let top = top_k(ext_values.row_slice(r), k);
        let picked = t.gather_cols(t.row(prod, r), &top);
        terms.push(t.log_floor(t.mean(picked), S::lit(LOG_FLOOR)));
    }
    t.scale(t.sum(t.concat_cols(&terms)), S::lit(-1.0 / rows as f64))
}

/// Indices of the `k` largest values; ties go to the lower index.
pub fn top_k<S: PartialOrd + Copy>(values: &[S], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub lambda_inc: f64,
    pub top_k: usize,
}

impl Default for LossOptions {
    fn default() -> Self {
        Self { lambda_inc: 1.0, top_k: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub abs: f64,
    pub ext: f64,
    pub inc: f64,
    pub total: f64,
    pub abs_tokens: usize,
    /// Mean word/event consistency measure over decode steps (diagnostic only).
    pub consistency: f64,
}

#[derive(Debug, Clone)]
pub struct JointForward {
    pub total: Var,
    pub breakdown: LossBreakdown,
    pub abs: AbsForward,
    pub ext: ExtForward,
    pub inc: Option<Var>,
}

/// `L_abs + L_ext + λ·L_inc` from one forward pass.
pub fn joint_forward<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample, opts: &LossOptions) -> Result<JointForward> {
    let t = net.t;
    if ex.target.is_empty() {
        return Err(UtsError::Data(format!("{}: empty reference", ex.id)));
    }
    let ae = encode_abs(net, ex)?;
    let abs = abs_forward(net, ex, &ae);
    let se = encode_sentences(net, ex)?;
    let ext = ext_forward(net, ex, &se)?;
    let inc = ext.betas.map(|betas| {
        let n = t.shape(betas)[0];
        let tiled = tile(t, compress(t, abs.betas, n), &ex.sentence_event);
        loss_inc(t, tiled, betas, opts.top_k)
    });
    let mut total = t.add(abs.loss, ext.loss);
    if let Some(inc) = inc {
        total = t.add(total, t.scale(inc, S::lit(opts.lambda_inc)));
    }
    let alphas: Vec<Vec<f64>> = abs.steps.iter().map(|s| net.values(s.alpha)).collect();
    let betas: Vec<Vec<f64>> = abs.steps.iter().map(|s| net.values(s.beta)).collect();
    let breakdown = LossBreakdown {
        abs: net.scalar(abs.loss),
        ext: net.scalar(ext.loss),
        inc: inc.map_or(0.0, |v| net.scalar(v)),
        total: net.scalar(total),
        abs_tokens: abs.n_tokens,
        consistency: consistency_measure(&alphas, &betas, &ex.word_event, opts.top_k),
    };
    Ok(JointForward { total, breakdown, abs, ext, inc })
}

/// Word/event consistency. Per step, take the `k` words with the highest α,
/// weight each by `α̂_w·β_event(w)` where `α̂` is α renormalized within the
/// word's event, and report `−log` of their mean; averaged over steps.
pub fn consistency_measure(alphas: &[Vec<f64>], betas: &[Vec<f64>], word_event: &[usize], k: usize) -> f64 {
    if alphas.is_empty() {
        return 0.0;
    }
    let total: f64 = alphas
        .iter()
        .zip(betas)
        .map(|(a, b)| {
            let mut event_mass = vec![0.0; b.len()];
            for (&v, &e) in a.iter().zip(word_event) {
                event_mass[e] += v;
            }
            let top = top_k(a, k.min(a.len()));
            let mean = top
                .iter()
                .map(|&w| {
                    let e = word_event[w];
                    a[w] / event_mass[e].max(LOG_FLOOR) * b[e]
                })
                .sum::<f64>()
                / top.len() as f64;
            -mean.max(LOG_FLOOR).ln()
        })
        .sum();
    total / alphas.len() as f64
}
