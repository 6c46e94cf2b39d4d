//! Cross-wired softmax routing with entropy-driven dynamic top-k.

use crate::error::{Error, Result};
use crate::ops::{self, softmax_in_place, Mlp};
use crate::scmc::stc::{stc_enhance, StcParams};
use crate::tensor::RealTensor;

/// Stabiliser inside the entropy logarithm.
pub const ENTROPY_EPS: f64 = 1e-8;
/// Tolerance on `Σ w = 1` accepted by [`dynamic_k`].
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    pub stc_a: StcParams,
    pub stc_v: StcParams,
    /// `C → C/2 → N_e`, fed with audio features, weights the visual experts.
    pub mlp_a: Mlp,
    /// `C → C/2 → N_e`, fed with visual features, weights the audio experts.
    pub mlp_v: Mlp,
}

impl RouterParams {
    pub fn experts(&self) -> usize {
        self.mlp_a.output_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteSide {
    /// Weights for the visual experts, computed from audio features.
    ForVisual,
    /// Weights for the audio experts, computed from visual features.
    ForAudio,
}

/// `softmax(MLP(pool(STC(features))))` per frame, shape `[T, N_e]`.
///
/// The caller passes the *other* modality's features: audio for
/// [`RouteSide::ForVisual`], visual for [`RouteSide::ForAudio`].
pub fn route_weights(other_modality: &RealTensor, r: &RouterParams, side: RouteSide) -> Result<RealTensor> {
    let (stc, mlp) = match side {
        RouteSide::ForVisual => (&r.stc_a, &r.mlp_a),
        RouteSide::ForAudio => (&r.stc_v, &r.mlp_v),
    };
    let (t, c, _, _) = other_modality.dims4("route_weights")?;
    if mlp.input_dim() != c {
        return Err(Error::shape("route_weights", other_modality.shape(), mlp.w1.shape()));
    }
    let pooled = ops::global_avg_pool(&stc_enhance(other_modality, stc)?)?;
    let ne = mlp.output_dim();
    let mut data = Vec::with_capacity(t * ne);
    for row in pooled.data().chunks(c) {
        let mut logits = mlp.forward(row);
        softmax_in_place(&mut logits);
        data.extend(logits);
    }
    RealTensor::new(vec![t, ne], data)
}

/// Intermediate values of the dynamic-k rule for one routing row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyK {
    /// `-Σ w ln(w + ε)` in nats.
    pub entropy: f64,
    /// `entropy / ln(N_e)` clamped to `[0, 1]`.
    pub normalized: f64,
    /// `⌈N_e · normalized⌉`, before the floor at one expert.
    pub k_raw: usize,
    pub k_eff: usize,
}

impl EntropyK {
    pub fn clamped(&self) -> bool {
        self.k_raw != self.k_eff
    }
}

fn check_simplex(row: &[f64]) -> Result<()> {
    let sum: f64 = row.iter().sum();
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    if row.is_empty() || !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL || min < -SIMPLEX_TOL {
        return Err(Error::NotSimplex { sum, min });
    }
    Ok(())
}

/// Dynamic-k with `k_min = 0`, `k_max = N_e`, floored at one expert.
pub fn entropy_k(row: &[f64]) -> Result<EntropyK> {
    check_simplex(row)?;
    let ne = row.len();
    let entropy = -row.iter().map(|&w| w * (w + ENTROPY_EPS).ln()).sum::<f64>();
    let normalized = if ne > 1 {
        (entropy / (ne as f64).ln()).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let k_raw = (ne as f64 * normalized).ceil() as usize;
    let k_eff = k_raw.clamp(1, ne);
    if k_eff != k_raw {
        log::debug!("dynamic-k clamp: k_raw {k_raw} -> {k_eff} (entropy {entropy:.3e})");
    }
    Ok(EntropyK {
        entropy,
        normalized,
        k_raw,
        k_eff,
    })
}

/// `(k_eff, entropy)` for one routing row.
pub fn dynamic_k(weights_row: &[f64]) -> Result<(usize, f64)> {
    entropy_k(weights_row).map(|e| (e.k_eff, e.entropy))
}

/// Indices of the `k` largest weights, ties to the lower index, in ascending
/// index order.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Keeps the top `k` weights and renormalises them to sum to one. With
/// `k = N_e` the row is returned unchanged.
pub fn sparsify(weights_row: &[f64], k_eff: usize) -> Vec<f64> {
    let ne = weights_row.len();
    let k = k_eff.clamp(1, ne.max(1));
    if k >= ne {
        return weights_row.to_vec();
    }
    let keep = top_k_indices(weights_row, k);
    let mass: f64 = keep.iter().map(|&i| weights_row[i]).sum();
    let mut out = vec![0.0; ne];
    for &i in &keep {
        out[i] = weights_row[i] / mass;
    }
    out
}

/// Per-frame routing outcome for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    /// Dense softmax weights `[T, N_e]`.
    pub weights: RealTensor,
    pub entropy: Vec<f64>,
    pub k_eff: Vec<usize>,
    pub selected: Vec<Vec<usize>>,
    /// Renormalised top-k weights `[T, N_e]`.
    pub sparse_weights: RealTensor,
    /// Frames where the one-expert floor raised `k`.
    pub clamped: Vec<bool>,
}

impl RoutingDecision {
    /// Applies dynamic-k (or full support when `force_dense`) to every row.
    pub fn from_weights(weights: RealTensor, force_dense: bool) -> Result<Self> {
        let [t, ne] = weights.shape()[..] else {
            return Err(Error::invalid("RoutingDecision", "weights must be [T, N_e]"));
        };
        let mut out = Self {
            entropy: Vec::with_capacity(t),
            k_eff: Vec::with_capacity(t),
            selected: Vec::with_capacity(t),
            clamped: Vec::with_capacity(t),
            sparse_weights: RealTensor::zeros(vec![t, ne]),
            weights,
        };
        for f in 0..t {
            let row = &out.weights.data()[f * ne..(f + 1) * ne];
            let ek = entropy_k(row)?;
            let k = if force_dense { ne } else { ek.k_eff };
            let sparse = sparsify(row, k);
            out.selected.push(top_k_indices(row, k));
            out.entropy.push(ek.entropy);
            out.k_eff.push(k);
            out.clamped.push(!force_dense && ek.clamped());
            out.sparse_weights.data_mut()[f * ne..(f + 1) * ne].copy_from_slice(&sparse);
        }
        Ok(out)
    }

    pub fn frames(&self) -> usize {
        self.entropy.len()
    }

    pub fn experts(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn sparse_row(&self, f: usize) -> &[f64] {
        let ne = self.experts();
        &self.sparse_weights.data()[f * ne..(f + 1) * ne]
    }

    pub fn dense_row(&self, f: usize) -> &[f64] {
        let ne = self.experts();
        &self.weights.data()[f * ne..(f + 1) * ne]
    }

    /// Experts selected by at least one frame, ascending.
    pub fn active_experts(&self) -> Vec<usize> {
        let mut used = vec![false; self.experts()];
        self.selected.iter().flatten().for_each(|&e| used[e] = true);
        (0..used.len()).filter(|&e| used[e]).collect()
    }
}
