//! Word embedding, time position vectors, the bidirectional word encoder
//! and selective reading into local event vectors.

use uts_numerics::{Scalar, Var};

use super::{EncodedExample, Net};
use crate::error::{Result, UtsError};

#[derive(Debug, Clone)]
pub struct EventEncoding {
    /// Word states of every event, one `[T_w × H]` block per event.
    pub word_states: Vec<Var>,
    /// All word states stacked in document order, `[N × H]`.
    pub all_words: Var,
    /// Local event vectors `a`, `[T_e × H]`.
    pub local: Var,
    /// Time position vectors `p`, `[T_e × key_dim]`.
    pub time_pos: Var,
}

pub fn encode_events<S: Scalar>(net: &Net<'_, S>, ex: &EncodedExample) -> Result<EventEncoding> {
    let t = net.t;
    let n_events = ex.n_events();
    if n_events == 0 {
        return Err(UtsError::Data(format!("{}: no events", ex.id)));
    }
    if n_events > net.cfg.max_events {
        return Err(UtsError::Data(format!(
            "{}: {n_events} events but only {} time positions",
            ex.id, net.cfg.max_events
        )));
    }
    let emb = net.w("embed.E");
    let pos = net.w("time_pos.P");
    let mut word_states = Vec::with_capacity(n_events);
    let mut local = Vec::with_capacity(n_events);
    for (i, ids) in ex.events.iter().enumerate() {
        if ids.is_empty() {
            return Err(UtsError::Data(format!("{}: event {i} is empty", ex.id)));
        }
        let x = t.concat_cols(&[t.gather_rows(emb, ids), t.gather_rows(pos, &vec![i; ids.len()])]);
        let states = net.bilstm("encoder.fwd", "encoder.bwd", x);
        local.push(selective_read(net, states));
        word_states.push(states);
    }
    Ok(EventEncoding {
        all_words: t.stack_rows(&word_states),
        word_states,
        local: t.stack_rows(&local),
        time_pos: t.slice_rows(pos, 0, n_events),
    })
}

/// Final selective-reading state over one event's word states, with the
/// last word state as the coarse event summary.
pub fn selective_read<S: Scalar>(net: &Net<'_, S>, word_states: Var) -> Var {
    let t = net.t;
    let n = t.shape(word_states)[0];
    let states = net.sru("encoder.sru", word_states, t.row(word_states, n - 1));
    t.row(states, n - 1)
}
