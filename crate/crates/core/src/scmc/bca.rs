//! Bidirectional cross-modal attention.

use crate::error::{Error, Result};
use crate::ops::{matvec, softmax_in_place};
use crate::par;
use crate::scmc::stc::stc_enhance;
use crate::scmc::ExpertParams;
use crate::tensor::RealTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Visual tokens query audio tokens.
    AudioToVisual,
    /// Audio tokens query visual tokens.
    VisualToAudio,
}

/// `[C, C]` projections of one attention direction, applied as `y = W x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProj {
    pub q: RealTensor,
    pub k: RealTensor,
    pub v: RealTensor,
    pub out: RealTensor,
}

impl AttentionProj {
    pub fn zeros(channels: usize) -> Self {
        let z = RealTensor::zeros(vec![channels, channels]);
        Self {
            q: z.clone(),
            k: z.clone(),
            v: z.clone(),
            out: z,
        }
    }

    pub fn all(&self) -> [&RealTensor; 4] {
        [&self.q, &self.k, &self.v, &self.out]
    }
}

/// Gathers the channel vectors of frame `f` as row-major `[N, C]` tokens.
pub(crate) fn tokens(x: &RealTensor, f: usize) -> Vec<f64> {
    let (_, c, h, w) = x.dims4("tokens").expect("rank-4 input");
    let plane = h * w;
    let frame = &x.data()[f * c * plane..(f + 1) * c * plane];
    let mut out = vec![0.0; plane * c];
    for ch in 0..c {
        for i in 0..plane {
            out[i * c + ch] = frame[ch * plane + i];
        }
    }
    out
}

/// Projects each `C`-wide token by `w`.
pub(crate) fn project(tok: &[f64], w: &RealTensor, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; tok.len()];
    for (src, dst) in tok.chunks(c).zip(out.chunks_mut(c)) {
        matvec(w.data(), src, c, c, dst);
    }
    out
}

/// Scaled dot-product attention of `[Nq, C]` queries over `[Nk, C]` keys.
pub(crate) fn attend(q: &[f64], k: &[f64], v: &[f64], c: usize) -> Vec<f64> {
    let scale = 1.0 / (c as f64).sqrt();
    let nk = k.len() / c;
    let mut out = vec![0.0; q.len()];
    let mut scores = vec![0.0; nk];
    for (qi, oi) in q.chunks(c).zip(out.chunks_mut(c)) {
        for (s, kj) in scores.iter_mut().zip(k.chunks(c)) {
            *s = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        softmax_in_place(&mut scores);
        for (&a, vj) in scores.iter().zip(v.chunks(c)) {
            oi.iter_mut().zip(vj).for_each(|(o, v)| *o += a * v);
        }
    }
    out
}

/// One direction of cross-modal attention with a residual connection: target
/// tokens attend to source tokens frame by frame.
pub fn bca(target: &RealTensor, source: &RealTensor, e: &ExpertParams, direction: Direction) -> Result<RealTensor> {
    let (t, c, h, w) = target.dims4("bca")?;
    let (ts, cs, _, _) = source.dims4("bca")?;
    if c != cs || t != ts {
        return Err(Error::shape("bca", target.shape(), source.shape()));
    }
    let proj = match direction {
        Direction::AudioToVisual => &e.a2v,
        Direction::VisualToAudio => &e.v2a,
    };
    let tq = stc_enhance(target, &e.stc_q)?;
    let sk = stc_enhance(source, &e.stc_k)?;
    let sv = stc_enhance(source, &e.stc_v)?;
    let plane = h * w;

    let frames = par::map_indices(t, |f| {
        let q = project(&tokens(&tq, f), &proj.q, c);
        let k = project(&tokens(&sk, f), &proj.k, c);
        let v = project(&tokens(&sv, f), &proj.v, c);
        let o = project(&attend(&q, &k, &v, c), &proj.out, c);
        let base = &target.data()[f * c * plane..(f + 1) * c * plane];
        let mut frame = base.to_vec();
        for i in 0..plane {
            for ch in 0..c {
                frame[ch * plane + i] += o[i * c + ch];
            }
        }
        frame
    });
    RealTensor::new(target.shape().to_vec(), frames.concat())
}
