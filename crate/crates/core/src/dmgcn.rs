//! Dynamic multi-graph convolution: masked region convolutions over the
//! latent and distance graphs, region attention, and linear fusion.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphKind;
use crate::params::{Bindings, ParamStore};
use crate::region::RegionTensor;
use crate::tape::{Tape, Var};

/// What the region-attention MLP scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionInput {
    /// Sigmoid-activated region outputs (the same vectors that get mixed).
    #[default]
    Convolved,
    /// Region outputs before the sigmoid.
    PreActivation,
}

/// Mechanism switches; the ablation lattice is Basic ⊂ +Latent ⊂ +Dynamic ⊂ full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mechanisms {
    pub use_latent: bool,
    pub use_dynamic_regions: bool,
    pub use_mask: bool,
    #[serde(default)]
    pub attention_input: AttentionInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Basic,
    Latent,
    Dynamic,
    Full,
}

impl Variant {
    pub fn mechanisms(self) -> Mechanisms {
        let (use_latent, use_dynamic_regions, use_mask) = match self {
            Variant::Basic => (false, false, false),
            Variant::Latent => (true, false, false),
            Variant::Dynamic => (true, true, false),
            Variant::Full => (true, true, true),
        };
        Mechanisms {
            use_latent,
            use_dynamic_regions,
            use_mask,
            attention_input: AttentionInput::Convolved,
        }
    }
}

impl Default for Mechanisms {
    fn default() -> Self {
        Variant::Full.mechanisms()
    }
}

/// Adjacency support for both channels, already split into regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSet {
    pub distance: RegionTensor,
    pub latent: Option<RegionTensor>,
}

impl GraphSet {
    pub fn len(&self) -> usize {
        self.distance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distance.is_empty()
    }

    pub fn channel(&self, kind: GraphKind) -> Result<&RegionTensor> {
        match kind {
            GraphKind::Latent => self
                .latent
                .as_ref()
                .ok_or_else(|| Error::Config("latent graph required but not provided".into())),
            _ => Ok(&self.distance),
        }
    }
}

pub fn channel_name(kind: GraphKind) -> &'static str {
    match kind {
        GraphKind::Latent => "latent",
        _ => "distance",
    }
}

/// Parameter naming and shapes of one DMGCN block.
#[derive(Debug, Clone, PartialEq)]
pub struct DmgcnLayout {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub nodes: usize,
    pub mechanisms: Mechanisms,
    /// Region count per channel, in channel order.
    pub channels: Vec<(GraphKind, usize)>,
}

impl DmgcnLayout {
    pub fn new(prefix: impl Into<String>, in_dim: usize, out_dim: usize, graphs: &GraphSet, mechanisms: Mechanisms) -> Result<Self> {
        let mut kinds = vec![GraphKind::Distance];
        if mechanisms.use_latent {
            kinds.insert(0, GraphKind::Latent);
        }
        let channels = kinds
            .into_iter()
            .map(|k| {
                let g = graphs.channel(k)?;
                if g.len() != graphs.len() {
                    return Err(Error::shape("graph channels", &[g.len()], &[graphs.len()]));
                }
                let regions = if mechanisms.use_dynamic_regions { g.regions() } else { 1 };
                Ok((k, regions))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            prefix: prefix.into(),
            in_dim,
            out_dim,
            nodes: graphs.len(),
            mechanisms,
            channels,
        })
    }

    fn name(&self, kind: GraphKind, leaf: &str) -> String {
        format!("{}.{}.{}", self.prefix, channel_name(kind), leaf)
    }

    fn fuse_name(&self, leaf: &str) -> String {
        format!("{}.fuse.{leaf}", self.prefix)
    }

    /// Creates every parameter of this block in `store`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let (dh, d, n) = (self.in_dim, self.out_dim, self.nodes);
        for &(kind, _) in &self.channels {
            store.insert_uniform(self.name(kind, "w"), &[dh, d], dh, rng);
            if self.mechanisms.use_dynamic_regions {
                store.insert_uniform(self.name(kind, "att.w1"), &[d, d], d, rng);
                store.insert(self.name(kind, "att.b1"), crate::Tensor::zeros(&[d]));
                store.insert_uniform(self.name(kind, "att.w2"), &[d, 1], d, rng);
                store.insert(self.name(kind, "att.b2"), crate::Tensor::zeros(&[1]));
            }
            if self.mechanisms.use_mask {
                store.insert(self.name(kind, "mask"), crate::Tensor::ones(&[n, n]));
            }
        }
        if self.mechanisms.use_latent {
            store.insert_uniform(self.fuse_name("w1h"), &[dh, d], dh, rng);
            for leaf in ["w2h", "wl", "wd"] {
                store.insert_uniform(self.fuse_name(leaf), &[d, d], d, rng);
            }
        }
    }

    /// Names of mask parameters paired with their channel kind.
    pub fn mask_names(&self) -> Vec<(String, GraphKind)> {
        if !self.mechanisms.use_mask {
            return Vec::new();
        }
        self.channels
            .iter()
            .map(|&(k, _)| (self.name(k, "mask"), k))
            .collect()
    }

    /// Region tensor a channel actually convolves over (merged when regions are off).
    pub fn support(&self, kind: GraphKind, graphs: &GraphSet) -> Result<RegionTensor> {
        let g = graphs.channel(kind)?;
        let regions = self.channels.iter().find(|c| c.0 == kind).map_or(1, |c| c.1);
        Ok(if regions == g.regions() { g.clone() } else { g.merged() })
    }

    /// Normalised propagation matrices, one per region per channel.
    ///
    /// They depend only on masks and graphs, so one set serves every time step.
    pub fn propagators(&self, tape: &mut Tape, params: &Bindings, graphs: &GraphSet) -> Result<Vec<Vec<Var>>> {
        self.channels
            .iter()
            .map(|&(kind, regions)| {
                let g = graphs.channel(kind)?;
                let merged;
                let g = if regions == g.regions() {
                    g
                } else {
                    merged = g.merged();
                    &merged
                };
                let n = g.len();
                let mask = if self.mechanisms.use_mask {
                    Some(params.get(&self.name(kind, "mask"))?)
                } else {
                    None
                };
                (0..g.regions())
                    .map(|r| {
                        let support = tape.constant(&[n, n], g.slice(r).to_vec())?;
                        let adj = match mask {
                            Some(m) => tape.mul(m, support)?,
                            None => support,
                        };
                        tape.sym_norm_adjacency(adj)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Region attention weights captured during a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCapture {
    pub prefix: String,
    pub channel: GraphKind,
    /// `[..., N, R]` probabilities.
    pub shape: Vec<usize>,
    pub alpha: Vec<f64>,
}

/// Per-region convolution `σ(stack_r(P_r · h · W))`, shape `[..., N, R, d]`.
///
/// Also returns the pre-activation stack.
pub fn region_graph_conv(tape: &mut Tape, propagators: &[Var], h: Var, w: Var) -> Result<(Var, Var)> {
    let hw = tape.matmul(h, w)?;
    let convs = propagators
        .iter()
        .map(|&p| tape.left_matmul(p, hw))
        .collect::<Result<Vec<_>>>()?;
    let axis = tape.shape(hw).len() - 1;
    let pre = tape.stack(&convs, axis)?;
    let act = tape.sigmoid(pre)?;
    Ok((act, pre))
}

/// Softmax-weighted mix of region vectors; returns `(output [..., N, d], alpha [..., N, 1, R])`.
#[allow(clippy::too_many_arguments)]
pub fn region_attention(
    tape: &mut Tape,
    regions: Var,
    scored: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
) -> Result<(Var, Var)> {
    let shape = tape.shape(regions).to_vec();
    let rank = shape.len();
    if rank < 3 || tape.shape(scored) != shape.as_slice() {
        return Err(Error::shape("region_attention", &shape, tape.shape(scored)));
    }
    let r = shape[rank - 2];
    let z = tape.matmul(scored, w1)?;
    let z = tape.add_bias(z, b1)?;
    let z = tape.relu(z)?;
    let e = tape.matmul(z, w2)?;
    let e = tape.add_bias(e, b2)?;
    let alpha = attention_from_logits(tape, e, r)?;
    Ok((mix_regions(tape, alpha, regions)?, alpha))
}

/// Softmax over region logits `[..., N, R, 1]`, returned as `[..., N, 1, R]`.
pub fn attention_from_logits(tape: &mut Tape, logits: Var, regions: usize) -> Result<Var> {
    let mut s = tape.shape(logits).to_vec();
    let rank = s.len();
    s[rank - 2] = 1;
    s[rank - 1] = regions;
    let e = tape.reshape(logits, &s)?;
    tape.softmax(e, rank - 1)
}

/// `O_i = α_iᵀ h̃_i` per sensor.
pub fn mix_regions(tape: &mut Tape, alpha: Var, regions: Var) -> Result<Var> {
    let mixed = tape.bmm(alpha, regions)?;
    let mut shape = tape.shape(mixed).to_vec();
    shape.remove(shape.len() - 2);
    tape.reshape(mixed, &shape)
}

/// `W₂ʰ(W₁ʰ h) + Wˡ Oˡ + Wᵈ Oᵈ` with row-vector convention.
#[allow(clippy::too_many_arguments)]
pub fn fuse(tape: &mut Tape, h: Var, o_latent: Var, o_distance: Var, w1h: Var, w2h: Var, wl: Var, wd: Var) -> Result<Var> {
    let a = tape.matmul(h, w1h)?;
    let a = tape.matmul(a, w2h)?;
    let b = tape.matmul(o_latent, wl)?;
    let c = tape.matmul(o_distance, wd)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// One full DMGCN application to `h: [..., N, in_dim]`, giving `[..., N, out_dim]`.
/// Without the latent channel there is no fusion and the distance channel is
/// returned before the sigmoid, acting as the linear map inside the GRU.
pub fn dmgcn_forward(
    tape: &mut Tape,
    layout: &DmgcnLayout,
    params: &Bindings,
    propagators: &[Vec<Var>],
    h: Var,
    mut capture: Option<&mut Vec<AttentionCapture>>,
) -> Result<Var> {
    let hs = tape.shape(h).to_vec();
    if hs.len() < 2 || hs[hs.len() - 1] != layout.in_dim || hs[hs.len() - 2] != layout.nodes {
        return Err(Error::shape("dmgcn_forward", &hs, &[layout.nodes, layout.in_dim]));
    }
    let mut outputs = Vec::with_capacity(layout.channels.len());
    for (&(kind, regions), props) in layout.channels.iter().zip(propagators) {
        let w = params.get(&layout.name(kind, "w"))?;
        let out = if layout.mechanisms.use_dynamic_regions {
            let (act, pre) = region_graph_conv(tape, props, h, w)?;
            let scored = match layout.mechanisms.attention_input {
                AttentionInput::Convolved => act,
                AttentionInput::PreActivation => pre,
            };
            let mixed = if layout.mechanisms.use_latent { act } else { pre };
            let (o, alpha) = region_attention(
                tape,
                mixed,
                scored,
                params.get(&layout.name(kind, "att.w1"))?,
                params.get(&layout.name(kind, "att.b1"))?,
                params.get(&layout.name(kind, "att.w2"))?,
                params.get(&layout.name(kind, "att.b2"))?,
            )?;
            if let Some(cap) = capture.as_deref_mut() {
                let mut shape = tape.shape(alpha).to_vec();
                shape.remove(shape.len() - 2);
                cap.push(AttentionCapture {
                    prefix: layout.prefix.clone(),
                    channel: kind,
                    shape,
                    alpha: tape.value(alpha).to_vec(),
                });
            }
            debug_assert_eq!(regions, props.len());
            o
        } else {
            let hw = tape.matmul(h, w)?;
            let conv = tape.left_matmul(props[0], hw)?;
            if layout.mechanisms.use_latent {
                tape.sigmoid(conv)?
            } else {
                conv
            }
        };
        outputs.push(out);
    }
    if layout.mechanisms.use_latent {
        fuse(
            tape,
            h,
            outputs[0],
            outputs[1],
            params.get(&layout.fuse_name("w1h"))?,
            params.get(&layout.fuse_name("w2h"))?,
            params.get(&layout.fuse_name("wl"))?,
            params.get(&layout.fuse_name("wd"))?,
        )
    } else {
        Ok(outputs[0])
    }
}
