//! Finite-difference verification of the joint loss on a toy model.

use uts_numerics::{gradcheck, GradcheckConfig, GradcheckReport, ParamStore, Tape};

use crate::corpus::{EOS, RESERVED};
use crate::error::Result;
use crate::model::unifier::{joint_forward, LossOptions};
use crate::model::{init_params, EncodedExample, ModelConfig, Net};

/// Hidden 8, embed 4, ten-word vocabulary. The wide init range keeps every
/// unit away from the linear regime so the check exercises curvature.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        vocab_size: RESERVED.len() + 6,
        embed_dim: 4,
        hidden_dim: 8,
        key_dim: 4,
        global_dim: 6,
        local_dim: 8,
        max_events: 3,
        polish_iters: 2,
        use_graph: true,
        re_residual: true,
        init_range: 0.5,
    }
}

/// Two events of four words and three document sentences. The reference
/// copies one out-of-vocabulary source word.
pub fn toy_example(vocab_size: usize) -> EncodedExample {
    let w = |k: usize| RESERVED.len() + k;
    let oov = vocab_size;
    let unk = crate::corpus::UNK;
    let events = vec![vec![w(0), w(1), w(2), w(3)], vec![w(4), w(5), unk, w(1)]];
    EncodedExample {
        id: "toy".into(),
        word_event: vec![0, 0, 0, 0, 1, 1, 1, 1],
        source_ext: vec![w(0), w(1), w(2), w(3), w(4), w(5), oov, w(1)],
        events,
        oov: vec!["zyx".into()],
        sentences: vec![vec![w(0), w(1)], vec![w(2), w(3)], vec![w(4), w(5), unk, w(1)]],
        sentence_event: vec![0, 0, 1],
        target: vec![w(1), oov, w(4), EOS],
        oracle: Some(vec![0, 2]),
        vocab_size,
    }
}

/// Tolerance settings for the joint loss. Central differences on a loss of
/// order 10 carry round-off near `1e-10`, so gradients below `1e-5` are
/// compared on an absolute scale of `1e-9` instead of relatively.
pub fn joint_gradcheck_config() -> GradcheckConfig {
    GradcheckConfig {
        step: 1e-5,
        tolerance: 1e-4,
        floor: 1e-5,
    }
}

/// Checks every parameter coordinate of `L_abs + L_ext + λ·L_inc`.
pub fn gradcheck_joint(
    cfg: &ModelConfig,
    params: &ParamStore<f64>,
    ex: &EncodedExample,
    opts: &LossOptions,
    gc: GradcheckConfig,
) -> Result<GradcheckReport> {
    gradcheck(params, gc, |t: &Tape<f64>, p| {
        let net = Net::new(t, p, cfg);
        Ok(joint_forward(&net, ex, opts)?.total)
    })
}

/// The toy setup with parameters drawn from `seed`.
pub fn gradcheck_toy(seed: u64, gc: GradcheckConfig) -> Result<GradcheckReport> {
    let cfg = toy_config();
    let params = init_params::<f64>(&cfg, seed)?;
    let ex = toy_example(cfg.vocab_size);
    gradcheck_joint(&cfg, &params, &ex, &LossOptions::default(), gc)
}
