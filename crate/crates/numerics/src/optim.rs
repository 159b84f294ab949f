//! Global-norm gradient clipping and the Adagrad update.

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tape::Gradients;

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Rescales all gradients so their joint L2 norm is at most `clip_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<S: Scalar>(grads: &mut Gradients<S>, clip_norm: S) -> Result<S> {
    if !(clip_norm > S::zero()) {
        return Err(NumericsError::InvalidHyper(format!("clip_norm must be positive, got {clip_norm}")));
    }
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    Ok(norm)
}

/// One clipped Adagrad step:
/// `acc += g²; p -= lr · g / (sqrt(acc) + 1e-8)`.
///
/// Parameters without a gradient entry are treated as having zero gradient
/// and are left untouched. Returns the pre-clipping gradient norm.
pub fn adagrad_step<S: Scalar>(
    params: &mut ParamStore<S>,
    grads: &Gradients<S>,
    lr: S,
    clip_norm: S,
) -> Result<S> {
    if !(lr > S::zero()) {
        return Err(NumericsError::InvalidHyper(format!("lr must be positive, got {lr}")));
    }
    let mut grads = grads.clone();
    let norm = clip_global_norm(&mut grads, clip_norm)?;
    let eps = S::lit(ADAGRAD_EPS);
    for (name, g) in &grads.params {
        let (p, acc) = params
            .entry_and_accumulator_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.clone()))?;
        if p.shape() != g.shape() {
            return Err(NumericsError::Shape {
                op: "adagrad_step",
                detail: format!("{name}: param {:?} grad {:?}", p.shape(), g.shape()),
            });
        }
        for ((pv, av), &gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
            *av += gv * gv;
            *pv -= lr * gv / (av.sqrt() + eps);
        }
    }
    Ok(norm)
}
