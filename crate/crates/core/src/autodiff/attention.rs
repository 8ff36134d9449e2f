use super::graph::{Graph, NodeId};
use crate::error::{Error, Result};

/// Scaled dot-product attention `softmax(Q Kᵀ / √d_k) V` over row tokens.
pub fn attention(g: &mut Graph, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
    let (_, dq) = dims(g, q)?;
    let (nk, dk) = dims(g, k)?;
    let (nv, _) = dims(g, v)?;
    if dq != dk {
        return Err(Error::dim(format!(
            "attention: query width {dq} differs from key width {dk}"
        )));
    }
    if nk != nv {
        return Err(Error::dim(format!(
            "attention: {nk} keys but {nv} values"
        )));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let weights = g.softmax(scaled, 1)?;
    g.matmul(weights, v)
}

fn dims(g: &Graph, id: NodeId) -> Result<(usize, usize)> {
    match g.value(id).shape() {
        [n, d] => Ok((*n, *d)),
        s => Err(Error::dim(format!("attention: expected a matrix, got {s:?}"))),
    }
}
