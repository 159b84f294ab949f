//! Central finite-difference verification of tape gradients.

use crate::error::NumericsError;
use crate::params::ParamStore;
use crate::tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    /// Perturbation `h` in `(f(p + h) - f(p - h)) / 2h`.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Denominator floor: relative error is
    /// `|a - n| / max(|a|, |n|, floor)`, so near-zero gradients are
    /// compared on an absolute scale instead of amplifying round-off.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub param: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub per_param: Vec<ParamSummary>,
    /// Coordinates whose relative error exceeds the tolerance.
    pub failures: Vec<CoordinateCheck>,
    pub coordinates_checked: usize,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks every coordinate of every parameter in `params`.
///
/// `loss_fn` builds the loss on the given tape from the given parameters.
/// It is called once on a recording tape for the analytic gradient and
/// twice per coordinate on inference tapes.
pub fn gradcheck<F, E>(params: &ParamStore<f64>, config: GradcheckConfig, loss_fn: F) -> Result<GradcheckReport, E>
where
    F: Fn(&Tape<f64>, &ParamStore<f64>) -> Result<Var, E>,
    E: From<NumericsError>,
{
    let eval = |p: &ParamStore<f64>| -> Result<f64, E> {
        let tape = Tape::inference();
        let loss = loss_fn(&tape, p)?;
        tape.check()?;
        Ok(tape.item(loss))
    };

    let tape = Tape::new();
    let loss_var = loss_fn(&tape, params)?;
    let loss = tape.item(loss_var);
    let grads: Gradients<f64> = tape.backward(loss_var)?;

    let again = eval(params)?;
    if again.to_bits() != loss.to_bits() {
        return Err(NumericsError::NonDeterministic { first: loss, second: again }.into());
    }

    let mut work = params.clone();
    let mut per_param = Vec::new();
    let mut failures = Vec::new();
    let mut checked = 0;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let len = params.get(&name).map_or(0, |t| t.len());
        let analytic_all = grads.param(&name);
        let mut max_err: f64 = 0.0;
        for i in 0..len {
            let orig = work.get(&name).expect("present").data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = orig + config.step;
            let plus = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig - config.step;
            let minus = eval(&work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * config.step);
            let analytic = analytic_all.map_or(0.0, |g| g.data()[i]);
            let rel = relative_error(analytic, numeric, config.floor);
            max_err = max_err.max(rel);
            checked += 1;
            if rel > config.tolerance || !rel.is_finite() {
                failures.push(CoordinateCheck {
                    param: name.clone(),
                    index: i,
                    analytic,
                    numeric,
                    rel_error: rel,
                });
            }
        }
        per_param.push(ParamSummary {
            param: name,
            coordinates: len,
            max_rel_error: max_err,
        });
    }

    Ok(GradcheckReport {
        loss,
        tolerance: config.tolerance,
        per_param,
        failures,
        coordinates_checked: checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store() -> ParamStore<f64> {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap());
        p.insert("b", Tensor::row(vec![0.01, -0.02, 0.03]));
        p
    }

    fn small_net(t: &Tape<f64>, p: &ParamStore<f64>) -> Result<Var, NumericsError> {
        let x = t.constant(Tensor::row(vec![0.7, -1.3]));
        let w = t.param(p, "w");
        let b = t.param(p, "b");
        let h = t.tanh(t.add(t.matmul(x, w), b));
        let probs = t.softmax(h);
        Ok(t.scale(t.log(t.pick(probs, 0, 1)), -1.0))
    }

    #[test]
    fn small_network_passes() {
        let report = gradcheck(&store(), GradcheckConfig::default(), small_net).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        assert_eq!(report.coordinates_checked, 9);
    }

    #[test]
    fn constant_closure_has_zero_gradients() {
        let report = gradcheck(&store(), GradcheckConfig::default(), |t, _p| {
            Ok::<_, NumericsError>(t.constant(Tensor::scalar(4.2)))
        })
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn wrong_backward_rule_is_flagged() {
        let report = gradcheck(&store(), GradcheckConfig::default(), |t, p| {
            let w = t.param(p, "w");
            // square with a deliberately wrong derivative (x instead of 2x)
            let sq = t.custom_unary(w, |x| x.map(|v| v * v), |x, _y, g| g.zip_map(x, |u, v| u * v));
            Ok::<_, NumericsError>(t.sum(sq))
        })
        .unwrap();
        assert!(!report.passed());
        assert!(report.failures.iter().all(|f| f.param == "w"));
        assert_eq!(report.failures.len(), 6);
    }

    #[test]
    fn non_deterministic_closure_is_rejected() {
        let calls = std::cell::Cell::new(0.0);
        let err = gradcheck(&store(), GradcheckConfig::default(), |t, p| {
            calls.set(calls.get() + 1.0);
            let w = t.param(p, "w");
            let noise = t.constant(Tensor::scalar(calls.get()));
            Ok::<_, NumericsError>(t.add(t.sum(w), noise))
        })
        .unwrap_err();
        assert!(matches!(err, NumericsError::NonDeterministic { .. }));
    }
}
