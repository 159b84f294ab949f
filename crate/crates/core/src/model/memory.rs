//! Time-event memory: keys are the time position vectors, local values the
//! event vectors `a`, global values the projected graph vectors `b·W_up`.

use uts_numerics::{Scalar, Var};

use super::Net;

#[derive(Debug, Clone, Copy)]
pub struct TimeEventMemory {
    /// `[T_e × key_dim]`.
    pub keys: Var,
    /// `[T_e × H]`.
    pub local: Var,
    /// `[T_e × global_dim]`.
    pub global: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct MemoryReadout {
    /// Time attention over memory slots, `[1 × T_e]`.
    pub pi: Var,
    pub m1_raw: Var,
    pub m1: Var,
    /// Global read before the down projection, `[1 × global_dim]`.
    pub m2_raw: Var,
    /// Global read projected to the state width.
    pub m2: Var,
    pub g1: Var,
    pub g2: Var,
    /// `g2∘h' + (1 − g2)∘m2`.
    pub fused: Var,
}

pub fn build_memory<S: Scalar>(net: &Net<'_, S>, time_pos: Var, local: Var, global: Var) -> TimeEventMemory {
    let t = net.t;
    let n = t.shape(time_pos)[0];
    assert_eq!(t.shape(local)[0], n, "memory rows differ");
    assert_eq!(t.shape(global)[0], n, "memory rows differ");
    TimeEventMemory {
        keys: time_pos,
        local,
        global: t.matmul(global, net.w("memory.w_up")),
    }
}

/// Reads the memory with the current decoder state `h` and context `c`.
pub fn read<S: Scalar>(net: &Net<'_, S>, mem: &TimeEventMemory, h: Var, c: Var) -> MemoryReadout {
    let t = net.t;
    let pi = t.softmax(t.matmul_t(t.matmul(h, net.w("memory.We")), mem.keys));
    let m1_raw = t.matmul(pi, mem.local);
    let m2_raw = t.matmul(pi, mem.global);
    let m2 = t.matmul(m2_raw, net.w("memory.w_down"));
    let g1 = t.sigmoid(t.add(t.matmul(t.concat_cols(&[h, c, m1_raw]), net.w("memory.wo")), net.w("memory.bo")));
    let g2 = t.sigmoid(t.add(t.matmul(t.concat_cols(&[h, c, m2]), net.w("memory.wn")), net.w("memory.bn")));
    MemoryReadout {
        pi,
        m1_raw,
        m1: t.mul(g1, m1_raw),
        m2_raw,
        m2,
        g1,
        g2,
        fused: fuse(net, h, m2, g2),
    }
}

pub fn fuse<S: Scalar>(net: &Net<'_, S>, h: Var, m2: Var, g2: Var) -> Var {
    let t = net.t;
    t.add(t.mul(g2, h), t.mul(t.one_minus(g2), m2))
}
