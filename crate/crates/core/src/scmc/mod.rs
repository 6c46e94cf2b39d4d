//! Mixture of cross-modal attention experts.
//!
//! Every expert enhances both modalities with its own STC gates and runs one
//! attention pass in each direction. A router computes per-frame softmax
//! weights over experts from the *other* modality, picks `k` from the weight
//! entropy and mixes the selected expert outputs with renormalised weights.

pub(crate) mod bca;
mod routing;
mod stc;

pub use bca::{bca, AttentionProj, Direction};
pub use routing::{
    dynamic_k, entropy_k, route_weights, sparsify, top_k_indices, EntropyK, RouteSide, RouterParams, RoutingDecision,
    ENTROPY_EPS, SIMPLEX_TOL,
};
pub use stc::{spatial_gate, stc_enhance, StcParams};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::RealTensor;

/// One attention expert: STC gates shared by both directions and a set of
/// projections per direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    pub stc_q: StcParams,
    pub stc_k: StcParams,
    pub stc_v: StcParams,
    pub a2v: AttentionProj,
    pub v2a: AttentionProj,
}

impl ExpertParams {
    pub fn validate(&self, channels: usize) -> Result<()> {
        for stc in [&self.stc_q, &self.stc_k, &self.stc_v] {
            stc.validate(channels)?;
        }
        for (dir, proj) in [("a2v", &self.a2v), ("v2a", &self.v2a)] {
            if let Some(w) = proj.all().into_iter().find(|w| w.shape() != [channels, channels]) {
                return Err(Error::Params(format!(
                    "expert {dir} projection has shape {:?}, expected [{channels}, {channels}]",
                    w.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScmcOptions {
    /// Use every expert with the dense softmax weights.
    pub force_dense: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmcOutput {
    pub visual: RealTensor,
    pub audio: RealTensor,
    pub routing_v: RoutingDecision,
    pub routing_a: RoutingDecision,
}

/// `Σ_e w[t, e] · outputs[e][t]` per frame, accumulated in ascending expert
/// order; zero weights are skipped, which leaves the sum unchanged.
pub fn mix_experts(outputs: &[Option<RealTensor>], weights: &RealTensor, shape: &[usize]) -> RealTensor {
    let ne = outputs.len();
    let t = shape[0];
    let frame_len: usize = shape[1..].iter().product();
    let mut out = RealTensor::zeros(shape.to_vec());
    for f in 0..t {
        let dst = &mut out.data_mut()[f * frame_len..(f + 1) * frame_len];
        for (e, fe) in outputs.iter().enumerate() {
            let w = weights.data()[f * ne + e];
            if w == 0.0 {
                continue;
            }
            let src = fe.as_ref().expect("selected expert was evaluated");
            let src = &src.data()[f * frame_len..(f + 1) * frame_len];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += w * s);
        }
    }
    out
}

fn expert_outputs(
    active: &[usize],
    n: usize,
    eval: impl Fn(usize) -> Result<RealTensor> + Sync + Send,
) -> Result<Vec<Option<RealTensor>>> {
    let computed = par::map_indices(active.len(), |i| eval(active[i]));
    let mut out: Vec<Option<RealTensor>> = vec![None; n];
    for (&e, r) in active.iter().zip(computed) {
        out[e] = Some(r?);
    }
    Ok(out)
}

/// Full cross-modal consistency pass. Experts that no frame selects are never
/// evaluated.
pub fn scmc_forward(
    v: &RealTensor,
    a: &RealTensor,
    experts: &[ExpertParams],
    router: &RouterParams,
    opts: ScmcOptions,
) -> Result<ScmcOutput> {
    if experts.is_empty() {
        return Err(Error::invalid("scmc_forward", "expert list is empty"));
    }
    if router.mlp_a.output_dim() != experts.len() || router.mlp_v.output_dim() != experts.len() {
        return Err(Error::Params(format!(
            "router emits {} weights for {} experts",
            router.mlp_a.output_dim(),
            experts.len()
        )));
    }
    let routing_v = RoutingDecision::from_weights(route_weights(a, router, RouteSide::ForVisual)?, opts.force_dense)?;
    let routing_a = RoutingDecision::from_weights(route_weights(v, router, RouteSide::ForAudio)?, opts.force_dense)?;

    let ne = experts.len();
    let out_v = expert_outputs(&routing_v.active_experts(), ne, |e| {
        bca(v, a, &experts[e], Direction::AudioToVisual)
    })?;
    let out_a = expert_outputs(&routing_a.active_experts(), ne, |e| {
        bca(a, v, &experts[e], Direction::VisualToAudio)
    })?;

    Ok(ScmcOutput {
        visual: mix_experts(&out_v, &routing_v.sparse_weights, v.shape()),
        audio: mix_experts(&out_a, &routing_a.sparse_weights, a.shape()),
        routing_v,
        routing_a,
    })
}
