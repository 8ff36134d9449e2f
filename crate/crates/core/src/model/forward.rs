use super::layout::{ConvLayer, Decoder, LinearLayer};
use super::{ModelParams, LEAKY_SLOPE, SIGMA_FLOOR};
use crate::autodiff::{attention, Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::signal::MaskSpec;

/// Unmasked inputs for one (global window, heartbeat) pair plus the masks
/// to apply.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub global: &'a [f64],
    pub beat: &'a [f64],
    pub global_mask: &'a MaskSpec,
    pub local_mask: &'a MaskSpec,
    pub trend: &'a [f64],
}

/// Encoder outputs (`C × L`) and their fused versions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePair {
    pub f_in_g: NodeId,
    pub f_in_l: NodeId,
    /// Joint attention output, `(L_g + L_l) × C`; absent when fusion is off.
    pub f_ca: Option<NodeId>,
    pub f_out_g: NodeId,
    pub f_out_l: NodeId,
}

/// Graph nodes of one forward pass; every output is `1 × len`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardNodes {
    pub features: FeaturePair,
    pub x_hat_g: NodeId,
    pub sigma_g: NodeId,
    pub x_hat_l: NodeId,
    pub sigma_l: NodeId,
    pub x_hat_t: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationOutput {
    pub x_hat_g: Vec<f64>,
    pub sigma_g: Vec<f64>,
    pub x_hat_l: Vec<f64>,
    pub sigma_l: Vec<f64>,
    pub x_hat_t: Option<Vec<f64>>,
}

impl RestorationOutput {
    pub fn from_nodes(g: &Graph, n: &ForwardNodes) -> Self {
        let v = |id: NodeId| g.value(id).data().to_vec();
        Self {
            x_hat_g: v(n.x_hat_g),
            sigma_g: v(n.sigma_g),
            x_hat_l: v(n.x_hat_l),
            sigma_l: v(n.sigma_l),
            x_hat_t: n.x_hat_t.map(v),
        }
    }
}

/// Parameters placed on a graph.
#[derive(Debug, Clone)]
pub struct Bound<'a> {
    pub params: &'a ModelParams,
    ids: Vec<NodeId>,
}

impl ModelParams {
    /// Adds every tensor to `g`, as trainable leaves or as constants.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound<'_> {
        let ids = self
            .tensors()
            .iter()
            .map(|t| g.leaf(t.clone(), trainable))
            .collect();
        Bound { params: self, ids }
    }

    /// Wraps nodes already holding these tensors, in storage order.
    pub fn bind_ids(&self, ids: Vec<NodeId>) -> Result<Bound<'_>> {
        if ids.len() != self.tensors().len() {
            return Err(Error::dim(format!(
                "{} nodes supplied for {} parameter tensors",
                ids.len(),
                self.tensors().len()
            )));
        }
        Ok(Bound { params: self, ids })
    }

    /// Forward pass on a throwaway graph.
    pub fn restore(&self, input: &ModelInput) -> Result<RestorationOutput> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let nodes = bound.forward(&mut g, input)?;
        Ok(RestorationOutput::from_nodes(&g, &nodes))
    }
}

fn signal_leaf(g: &mut Graph, x: &[f64], expected: usize, what: &str) -> Result<NodeId> {
    if x.len() != expected {
        return Err(Error::dim(format!("{what} has length {}, model expects {expected}", x.len())));
    }
    Ok(g.constant(Tensor::new(vec![1, expected], x.to_vec())?))
}

impl<'a> Bound<'a> {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn conv(&self, g: &mut Graph, x: NodeId, l: &ConvLayer) -> Result<NodeId> {
        let x = if l.upsample { g.upsample(x, 2)? } else { x };
        let y = g.conv1d(x, self.ids[l.w], Some(self.ids[l.b]), l.stride, l.padding())?;
        if l.activate {
            g.leaky_relu(y, LEAKY_SLOPE)
        } else {
            Ok(y)
        }
    }

    fn stack(&self, g: &mut Graph, mut x: NodeId, layers: &[ConvLayer]) -> Result<NodeId> {
        for l in layers {
            x = self.conv(g, x, l)?;
        }
        Ok(x)
    }

    fn mlp(&self, g: &mut Graph, x: NodeId, layers: &[LinearLayer; 2]) -> Result<NodeId> {
        let h = g.linear(x, self.ids[layers[0].w], Some(self.ids[layers[0].b]))?;
        let h = g.leaky_relu(h, LEAKY_SLOPE)?;
        g.linear(h, self.ids[layers[1].w], Some(self.ids[layers[1].b]))
    }

    fn check_signal(&self, g: &Graph, x: NodeId, len: usize, what: &str) -> Result<()> {
        if g.value(x).shape() != [1, len] {
            return Err(Error::dim(format!(
                "{what} has shape {:?}, expected [1, {len}]",
                g.value(x).shape()
            )));
        }
        Ok(())
    }

    /// Runs both encoders on already-masked `1 × D` and `1 × d` signals.
    pub fn encode(&self, g: &mut Graph, xg_masked: NodeId, xl_masked: NodeId) -> Result<(NodeId, NodeId)> {
        let cfg = &self.params.config;
        self.check_signal(g, xg_masked, cfg.global_len, "global input")?;
        self.check_signal(g, xl_masked, cfg.beat_len, "local input")?;
        let lay = &self.params.layout;
        let f_g = self.stack(g, xg_masked, &lay.enc_g)?;
        let f_l = self.stack(g, xl_masked, &lay.enc_l)?;
        Ok((f_g, f_l))
    }

    /// Self-attention over the concatenated token sequences, then each
    /// branch receives an MLP of the mean of the other branch's span.
    pub fn cross_attention_fuse(&self, g: &mut Graph, f_in_g: NodeId, f_in_l: NodeId) -> Result<FeaturePair> {
        if !self.params.config.cross_attention {
            return Ok(FeaturePair {
                f_in_g,
                f_in_l,
                f_ca: None,
                f_out_g: f_in_g,
                f_out_l: f_in_l,
            });
        }
        let (cg, lg) = match g.value(f_in_g).shape() {
            [c, l] => (*c, *l),
            s => return Err(Error::dim(format!("global feature shape {s:?} is not 2-d"))),
        };
        let (cl, ll) = match g.value(f_in_l).shape() {
            [c, l] => (*c, *l),
            s => return Err(Error::dim(format!("local feature shape {s:?} is not 2-d"))),
        };
        if cg != cl {
            return Err(Error::dim(format!(
                "global features are {cg} wide, local features {cl}"
            )));
        }
        let tg = g.transpose(f_in_g)?;
        let tl = g.transpose(f_in_l)?;
        let joint = g.concat(&[tg, tl], 0)?;
        let f_ca = attention(g, joint, joint, joint)?;

        let ca_g = g.slice(f_ca, 0, 0, lg)?;
        let ca_l = g.slice(f_ca, 0, lg, ll)?;
        let ctx_for_g = g.mean_axis(ca_l, 0)?;
        let ctx_for_l = g.mean_axis(ca_g, 0)?;

        let lay = &self.params.layout;
        let dg = self.mlp(g, ctx_for_g, &lay.phi_g)?;
        let dl = self.mlp(g, ctx_for_l, &lay.phi_l)?;
        let out_g = g.add_row(tg, dg)?;
        let out_l = g.add_row(tl, dl)?;
        Ok(FeaturePair {
            f_in_g,
            f_in_l,
            f_ca: Some(f_ca),
            f_out_g: g.transpose(out_g)?,
            f_out_l: g.transpose(out_l)?,
        })
    }

    fn decode(&self, g: &mut Graph, f: NodeId, dec: &Decoder) -> Result<(NodeId, NodeId)> {
        let h = self.stack(g, f, &dec.blocks)?;
        let x_hat = self.conv(g, h, &dec.head)?;
        let sigma = match (&dec.sigma_head, self.params.config.uncertainty) {
            (Some(head), true) => {
                let raw = self.conv(g, h, head)?;
                let sp = g.softplus(raw)?;
                g.add_scalar(sp, SIGMA_FLOOR)?
            }
            _ => {
                let shape = g.value(x_hat).shape().to_vec();
                g.constant(Tensor::ones(&shape))
            }
        };
        Ok((x_hat, sigma))
    }

    /// Global restoration and its uncertainty, both `1 × D`.
    pub fn decode_global(&self, g: &mut Graph, f_out_g: NodeId) -> Result<(NodeId, NodeId)> {
        self.decode(g, f_out_g, &self.params.layout.dec_g)
    }

    /// Heartbeat restoration and its uncertainty, both `1 × d`.
    pub fn decode_local(&self, g: &mut Graph, f_out_l: NodeId) -> Result<(NodeId, NodeId)> {
        self.decode(g, f_out_l, &self.params.layout.dec_l)
    }

    /// Restores the global signal from its trend and the fused global feature.
    pub fn tgm_forward(&self, g: &mut Graph, trend: NodeId, f_out_g: NodeId) -> Result<NodeId> {
        self.check_signal(g, trend, self.params.config.global_len, "trend")?;
        let lay = &self.params.layout;
        let e = self.stack(g, trend, &lay.enc_t)?;
        let joint = g.concat(&[e, f_out_g], 0)?;
        Ok(self.decode(g, joint, &lay.dec_t)?.0)
    }

    /// Masks the inputs, encodes, fuses, decodes both branches and runs
    /// the trend decoder when enabled.
    pub fn forward(&self, g: &mut Graph, input: &ModelInput) -> Result<ForwardNodes> {
        let cfg = &self.params.config;
        let xg = input.global_mask.apply(input.global)?;
        let xl = input.local_mask.apply(input.beat)?;
        let xg = signal_leaf(g, &xg, cfg.global_len, "global signal")?;
        let xl = signal_leaf(g, &xl, cfg.beat_len, "heartbeat")?;
        let (f_in_g, f_in_l) = self.encode(g, xg, xl)?;
        let features = self.cross_attention_fuse(g, f_in_g, f_in_l)?;
        let (x_hat_g, sigma_g) = self.decode_global(g, features.f_out_g)?;
        let (x_hat_l, sigma_l) = self.decode_local(g, features.f_out_l)?;
        let x_hat_t = if cfg.trend_module {
            let t = signal_leaf(g, input.trend, cfg.global_len, "trend")?;
            Some(self.tgm_forward(g, t, features.f_out_g)?)
        } else {
            None
        };
        Ok(ForwardNodes {
            features,
            x_hat_g,
            sigma_g,
            x_hat_l,
            sigma_l,
            x_hat_t,
        })
    }
}
