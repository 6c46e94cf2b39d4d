//! Spatial, temporal and channel gating of a `[T, C, H, W]` feature map.

use crate::error::{Error, Result};
use crate::ops::{self, sigmoid, Mlp};
use crate::tensor::RealTensor;

/// Weights of one spatial-temporal-channel enhancer.
#[derive(Debug, Clone, PartialEq)]
pub struct StcParams {
    /// `[1, k, k]` kernel over the channel-mean map.
    pub spatial: RealTensor,
    /// Per-frame gate `C → C/r → C`.
    pub temporal: Mlp,
    /// Clip-level gate `C → C/r → C`.
    pub channel: Mlp,
}

impl StcParams {
    pub fn zeros(channels: usize, reduction: usize, kernel: usize) -> Self {
        Self {
            spatial: RealTensor::zeros(vec![1, kernel, kernel]),
            temporal: Mlp::zeros(channels, channels / reduction, channels),
            channel: Mlp::zeros(channels, channels / reduction, channels),
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        match self.spatial.shape() {
            &[1, kh, kw] if kh % 2 == 1 && kw % 2 == 1 => {}
            s => return Err(Error::Params(format!("stc spatial kernel has shape {s:?}"))),
        }
        for mlp in [&self.temporal, &self.channel] {
            mlp.validate()?;
            if mlp.input_dim() != channels || mlp.output_dim() != channels || !channels.is_multiple_of(mlp.hidden_dim())
            {
                return Err(Error::Params(format!(
                    "stc gate {:?} does not match {channels} channels",
                    mlp.w1.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Spatial gate `sigmoid(conv(mean_c x))` of shape `[T, 1, H, W]`.
pub fn spatial_gate(x: &RealTensor, p: &StcParams) -> Result<RealTensor> {
    let (t, c, h, w) = x.dims4("stc_enhance")?;
    let plane = h * w;
    let mut mean = RealTensor::zeros(vec![t, 1, h, w]);
    for (f, dst) in mean.data_mut().chunks_mut(plane).enumerate() {
        for ch in 0..c {
            let src = &x.data()[(f * c + ch) * plane..(f * c + ch + 1) * plane];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
        dst.iter_mut().for_each(|d| *d /= c as f64);
    }
    Ok(ops::sigmoid_gate(&ops::depthwise_conv2d(&mean, &p.spatial)?))
}

/// Applies the spatial, temporal and channel gates in that order, each gate
/// computed from the output of the previous one.
pub fn stc_enhance(x: &RealTensor, p: &StcParams) -> Result<RealTensor> {
    let (t, c, h, w) = x.dims4("stc_enhance")?;
    if p.temporal.input_dim() != c || p.channel.input_dim() != c {
        return Err(Error::shape("stc_enhance", x.shape(), p.temporal.w1.shape()));
    }
    let plane = h * w;

    let gs = spatial_gate(x, p)?;
    let mut out = x.clone();
    for (idx, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let g = &gs.data()[(idx / c) * plane..(idx / c + 1) * plane];
        dst.iter_mut().zip(g).for_each(|(d, g)| *d *= g);
    }

    let pooled = ops::global_avg_pool(&out)?;
    for f in 0..t {
        let gate: Vec<f64> = p
            .temporal
            .forward(&pooled.data()[f * c..(f + 1) * c])
            .into_iter()
            .map(sigmoid)
            .collect();
        for (ch, g) in gate.iter().enumerate() {
            out.data_mut()[(f * c + ch) * plane..(f * c + ch + 1) * plane]
                .iter_mut()
                .for_each(|d| *d *= g);
        }
    }

    let mut global = vec![0.0; c];
    for (idx, src) in out.data().chunks(plane).enumerate() {
        global[idx % c] += src.iter().sum::<f64>();
    }
    global.iter_mut().for_each(|g| *g /= (t * plane) as f64);
    let gate: Vec<f64> = p.channel.forward(&global).into_iter().map(sigmoid).collect();
    for (idx, dst) in out.data_mut().chunks_mut(plane).enumerate() {
        let g = gate[idx % c];
        dst.iter_mut().for_each(|d| *d *= g);
    }
    Ok(out)
}
