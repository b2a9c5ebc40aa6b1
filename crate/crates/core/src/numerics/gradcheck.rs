//! Central-difference verification of analytic gradients.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

/// Gradients below this magnitude are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    /// Flat row-major index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GradCheckReport {
    pub step: f64,
    pub tol: f64,
    pub loss: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the analytic gradient written by `loss_fn` against central differences
/// for every scalar in `params`.
///
/// `loss_fn` must zero and then fill the gradient slots of the store it is given and
/// return the loss. It is called twice up front to confirm it is deterministic.
pub fn grad_check<F>(mut loss_fn: F, params: &mut ParamStore, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {step}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }

    let loss = loss_fn(params)?;
    let analytic = params.clone();
    let again = loss_fn(params)?;
    if loss.to_bits() != again.to_bits() {
        return Err(Error::Determinism(format!("loss {loss} then {again}")));
    }
    for (name, p) in params.iter() {
        if p.grad != analytic.get(name)?.grad {
            return Err(Error::Determinism(format!("gradient of {name} changed between calls")));
        }
    }

    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut checks = Vec::with_capacity(names.len());
    for name in names {
        let n = params.value(&name)?.data().len();
        let grad = analytic.grad(&name)?.data().to_vec();
        let mut worst = ParamCheck {
            name: name.clone(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            rel_error: 0.0,
        };
        for k in 0..n {
            let orig = params.value(&name)?.data()[k];
            params.get_mut(&name)?.value.data_mut()[k] = orig + step;
            let plus = loss_fn(params)?;
            params.get_mut(&name)?.value.data_mut()[k] = orig - step;
            let minus = loss_fn(params)?;
            params.get_mut(&name)?.value.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad[k], numeric);
            if err > worst.rel_error || k == 0 {
                worst = ParamCheck {
                    name: name.clone(),
                    worst_index: k,
                    analytic: grad[k],
                    numeric,
                    rel_error: err,
                };
            }
        }
        checks.push(worst);
    }
    // leave the store holding the analytic gradients at the unperturbed point
    loss_fn(params)?;

    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        step,
        tol,
        loss,
        max_rel_error,
        passed: max_rel_error <= tol,
        params: checks,
    })
}
