use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::model::{Bound, ForwardNodes, ModelInput};

/// `Σ (x − x̂)²/σ + ln σ`.
pub fn uncertainty_loss(x: &[f64], x_hat: &[f64], sigma: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() || x.len() != sigma.len() {
        return Err(Error::dim(format!(
            "uncertainty_loss: lengths {}, {}, {}",
            x.len(),
            x_hat.len(),
            sigma.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::contract(format!("uncertainty_loss: sigma {s} is not positive")));
    }
    Ok(x.iter()
        .zip(x_hat)
        .zip(sigma)
        .map(|((a, b), s)| (a - b) * (a - b) / s + s.ln())
        .sum())
}

/// Plain sum of squared errors against the global signal.
pub fn trend_loss(x_g: &[f64], x_hat_t: &[f64]) -> Result<f64> {
    if x_g.len() != x_hat_t.len() {
        return Err(Error::dim(format!(
            "trend_loss: lengths {} and {}",
            x_g.len(),
            x_hat_t.len()
        )));
    }
    Ok(x_g.iter().zip(x_hat_t).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn total_loss(l_global: f64, l_local: f64, l_trend: f64, alpha: f64, beta: f64) -> f64 {
    l_global + alpha * l_local + beta * l_trend
}

/// Graph form of [`uncertainty_loss`].
pub fn uncertainty_loss_node(g: &mut Graph, x: NodeId, x_hat: NodeId, sigma: NodeId) -> Result<NodeId> {
    let r = g.sub(x, x_hat)?;
    let r2 = g.mul(r, r)?;
    let q = g.div(r2, sigma)?;
    let ls = g.log(sigma)?;
    let t = g.add(q, ls)?;
    g.sum(t)
}

/// Graph form of [`trend_loss`].
pub fn sse_node(g: &mut Graph, x: NodeId, x_hat: NodeId) -> Result<NodeId> {
    let r = g.sub(x, x_hat)?;
    let r2 = g.mul(r, r)?;
    g.sum(r2)
}

/// Loss nodes for one training pair.
#[derive(Debug, Clone, Copy)]
pub struct ItemLoss {
    pub total: NodeId,
    pub global: NodeId,
    pub local: NodeId,
    pub trend: Option<NodeId>,
    pub forward: ForwardNodes,
}

impl ItemLoss {
    /// `(global, local, trend, total)` values.
    pub fn values(&self, g: &Graph) -> [f64; 4] {
        let v = |id: NodeId| g.value(id).data()[0];
        [
            v(self.global),
            v(self.local),
            self.trend.map_or(0.0, v),
            v(self.total),
        ]
    }
}

/// Forward pass plus the weighted restoration loss against the unmasked
/// inputs.
pub fn item_loss(g: &mut Graph, bound: &Bound, input: &ModelInput, alpha: f64, beta: f64) -> Result<ItemLoss> {
    let fwd = bound.forward(g, input)?;
    let xg = g.constant(Tensor::new(vec![1, input.global.len()], input.global.to_vec())?);
    let xl = g.constant(Tensor::new(vec![1, input.beat.len()], input.beat.to_vec())?);
    let global = uncertainty_loss_node(g, xg, fwd.x_hat_g, fwd.sigma_g)?;
    let local = uncertainty_loss_node(g, xl, fwd.x_hat_l, fwd.sigma_l)?;
    let weighted_local = g.scale(local, alpha)?;
    let mut total = g.add(global, weighted_local)?;
    let trend = match fwd.x_hat_t {
        Some(xt) => {
            let lt = sse_node(g, xg, xt)?;
            let weighted = g.scale(lt, beta)?;
            total = g.add(total, weighted)?;
            Some(lt)
        }
        None => None,
    };
    Ok(ItemLoss {
        total,
        global,
        local,
        trend,
        forward: fwd,
    })
}
