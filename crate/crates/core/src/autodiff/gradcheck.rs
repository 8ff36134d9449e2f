//! Central-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative error used by every gradient check:
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks the gradient of a scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let errs = grad_check_many(
        |g, ids| f(g, ids[0]),
        std::slice::from_ref(x),
        eps,
        false,
    )?;
    Ok(errs[0])
}

/// Checks gradients of a scalar function of several tensors; returns the
/// maximum relative error per input.
///
/// `corrupt` turns on the backward fault hook so callers can run a negative
/// control.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], eps: f64, corrupt: bool) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::contract("grad_check: eps must be positive"));
    }
    let mut g = Graph::new();
    if corrupt {
        g.corrupt_backward();
    }
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor> = ids.iter().map(|&id| grads.get(id)).collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = probe.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &ids)?;
        let v = g.value(loss).item()?;
        if v.is_nan() {
            return Err(Error::Numeric("grad_check: loss evaluated to NaN".into()));
        }
        Ok(v)
    };

    let mut probe = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for (ti, grad) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..inputs[ti].len() {
            let orig = inputs[ti].data()[j];
            probe[ti].data_mut()[j] = orig + eps;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig - eps;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            if a.is_nan() || numeric.is_nan() {
                return Err(Error::Numeric("grad_check: NaN gradient".into()));
            }
            worst = worst.max(relative_error(a, numeric));
        }
        out.push(worst);
    }
    Ok(out)
}
