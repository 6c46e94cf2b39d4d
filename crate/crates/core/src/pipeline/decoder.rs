//! One-layer decoder stand-in: audio-derived queries attend to the final
//! visual tokens and produce dot-product mask logits.

use crate::error::{Error, Result};
use crate::ops::{self, Mlp};
use crate::par;
use crate::pipeline::params::DecoderParams;
use crate::scmc::bca::{attend, project, tokens};
use crate::tensor::RealTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `[T, N_q, H, W]`
    pub mask_logits: RealTensor,
    /// `[T, N_q, classes]`
    pub class_logits: RealTensor,
    /// `[T, H, W]` in {0, 1}.
    pub binary_mask: RealTensor,
}

/// Mask threshold; a pixel is foreground when the best query's probability
/// is strictly above it.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Pooled audio per frame through the channel MLP, broadcast over queries and
/// added to the learned embeddings. Returns `[T, N_q, C]`.
pub fn derive_queries(a_final: &RealTensor, learned_embed: &RealTensor, q_mlp: &Mlp) -> Result<RealTensor> {
    let (t, c, _, _) = a_final.dims4("derive_queries")?;
    if learned_embed.rank() != 2 || learned_embed.shape()[1] != c {
        return Err(Error::shape("derive_queries", a_final.shape(), learned_embed.shape()));
    }
    if q_mlp.input_dim() != c || q_mlp.output_dim() != c {
        return Err(Error::Params(format!(
            "query MLP maps {} -> {}, expected {c} -> {c}",
            q_mlp.input_dim(),
            q_mlp.output_dim()
        )));
    }
    let nq = learned_embed.shape()[0];
    let pooled = ops::global_avg_pool(a_final)?;
    let mut out = RealTensor::zeros(vec![t, nq, c]);
    for f in 0..t {
        let m = q_mlp.forward(&pooled.data()[f * c..(f + 1) * c]);
        let dst = &mut out.data_mut()[f * nq * c..(f + 1) * nq * c];
        for (row, emb) in dst.chunks_mut(c).zip(learned_embed.data().chunks(c)) {
            for ((d, &e), &mv) in row.iter_mut().zip(emb).zip(&m) {
                *d = mv + e;
            }
        }
    }
    Ok(out)
}

/// Cross-attention refinement, per-pixel embeddings, dot-product mask logits
/// upsampled to `(out_h, out_w)`, and a linear class head.
pub fn decode_masks(
    queries: &RealTensor,
    v_final: &RealTensor,
    head: &DecoderParams,
    out_h: usize,
    out_w: usize,
) -> Result<Prediction> {
    let (t, c, h, w) = v_final.dims4("decode_masks")?;
    if queries.rank() != 3 || queries.shape()[0] != t || queries.shape()[2] != c {
        return Err(Error::shape("decode_masks", queries.shape(), v_final.shape()));
    }
    if head.pixel_embed.shape() != [c, c] || head.class_head.rank() != 2 || head.class_head.shape()[0] != c {
        return Err(Error::Params(format!("decoder head does not match channel width {c}")));
    }
    let nq = queries.shape()[1];
    let classes = head.class_head.shape()[1];
    let plane = h * w;

    let per_frame = par::map_indices(t, |f| {
        let q_in = &queries.data()[f * nq * c..(f + 1) * nq * c];
        let x = tokens(v_final, f);
        let q = project(q_in, &head.attn.q, c);
        let k = project(&x, &head.attn.k, c);
        let v = project(&x, &head.attn.v, c);
        let attn = project(&attend(&q, &k, &v, c), &head.attn.out, c);
        let refined: Vec<f64> = q_in.iter().zip(&attn).map(|(a, b)| a + b).collect();

        let pix = project(&x, &head.pixel_embed, c);
        let mut logits = vec![0.0; nq * plane];
        for (qi, dst) in refined.chunks(c).zip(logits.chunks_mut(plane)) {
            for (d, p) in dst.iter_mut().zip(pix.chunks(c)) {
                *d = qi.iter().zip(p).map(|(a, b)| a * b).sum();
            }
        }
        let mut cls = vec![0.0; nq * classes];
        for (qi, dst) in refined.chunks(c).zip(cls.chunks_mut(classes)) {
            for (j, d) in dst.iter_mut().enumerate() {
                *d = (0..c).map(|i| qi[i] * head.class_head.data()[i * classes + j]).sum();
            }
        }
        (logits, cls)
    });

    let (mut logits, mut cls) = (Vec::with_capacity(t * nq * plane), Vec::with_capacity(t * nq * classes));
    for (l, k) in per_frame {
        logits.extend(l);
        cls.extend(k);
    }
    let low = RealTensor::new(vec![t, nq, h, w], logits)?;
    let mask_logits = ops::bilinear_resize(&low, out_h, out_w)?;
    let class_logits = RealTensor::new(vec![t, nq, classes], cls)?;
    let binary_mask = threshold_masks(&mask_logits)?;
    Ok(Prediction {
        mask_logits,
        class_logits,
        binary_mask,
    })
}

/// `max_q sigmoid(logits[t, q]) > 0.5`, `[T, N_q, H, W] → [T, H, W]`.
pub fn threshold_masks(mask_logits: &RealTensor) -> Result<RealTensor> {
    let (t, nq, h, w) = mask_logits.dims4("threshold_masks")?;
    let plane = h * w;
    let mut out = RealTensor::zeros(vec![t, h, w]);
    for f in 0..t {
        for i in 0..plane {
            let best = (0..nq)
                .map(|q| ops::sigmoid(mask_logits.data()[(f * nq + q) * plane + i]))
                .fold(f64::NEG_INFINITY, f64::max);
            if best > MASK_THRESHOLD {
                out.data_mut()[f * plane + i] = 1.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scmc::AttentionProj;

    fn zero_head(c: usize, classes: usize) -> DecoderParams {
        DecoderParams {
            query_embed: RealTensor::zeros(vec![1, c]),
            query_mlp: Mlp::zeros(c, c, c),
            attn: AttentionProj::zeros(c),
            pixel_embed: RealTensor::zeros(vec![c, c]),
            class_head: RealTensor::zeros(vec![c, classes]),
        }
    }

    fn ramp(shape: Vec<usize>, step: f64) -> RealTensor {
        RealTensor::from_fn(shape, |i| ((i * 7) % 11) as f64 * step - 0.3)
    }

    #[test]
    fn zero_audio_and_mlp_give_embeddings() {
        let embed = ramp(vec![3, 4], 0.1);
        let q = derive_queries(&RealTensor::zeros(vec![2, 4, 4, 4]), &embed, &Mlp::zeros(4, 2, 4)).unwrap();
        assert_eq!(q.shape(), [2, 3, 4]);
        assert_eq!(&q.data()[..12], embed.data());
        assert_eq!(&q.data()[12..], embed.data());
    }

    #[test]
    fn constant_audio_shares_queries_across_frames() {
        let mlp = Mlp::new(
            ramp(vec![4, 3], 0.2),
            RealTensor::full(vec![3], 0.1),
            ramp(vec![3, 4], 0.3),
            RealTensor::zeros(vec![4]),
        )
        .unwrap();
        let q = derive_queries(&RealTensor::full(vec![3, 4, 2, 2], 0.7), &ramp(vec![2, 4], 0.1), &mlp).unwrap();
        assert_eq!(&q.data()[..8], &q.data()[8..16]);
        assert_eq!(&q.data()[..8], &q.data()[16..]);
    }

    #[test]
    fn query_hand_case() {
        // C = 2, N_q = 2. Pooled audio (1, 2); MLP hidden relu([1,2]·I + [0,-1]) = (1, 1);
        // output (1,1)·[[1,0],[1,1]] + (0.5, 0) = (2.5, 1).
        let a = RealTensor::new(vec![1, 2, 1, 2], vec![0.0, 2.0, 1.0, 3.0]).unwrap();
        let mlp = Mlp::new(
            RealTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            RealTensor::new(vec![2], vec![0.0, -1.0]).unwrap(),
            RealTensor::new(vec![2, 2], vec![1.0, 0.0, 1.0, 1.0]).unwrap(),
            RealTensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
        )
        .unwrap();
        let embed = RealTensor::new(vec![2, 2], vec![0.0, 0.0, -1.0, 2.0]).unwrap();
        let q = derive_queries(&a, &embed, &mlp).unwrap();
        assert_eq!(q.data(), &[2.5, 1.0, 1.5, 3.0]);
    }

    #[test]
    fn zero_head_gives_empty_mask() {
        let head = zero_head(4, 2);
        let q = ramp(vec![2, 3, 4], 0.2);
        let v = ramp(vec![2, 4, 4, 4], 0.1);
        let p = decode_masks(&q, &v, &head, 16, 16).unwrap();
        assert_eq!(p.mask_logits.shape(), [2, 3, 16, 16]);
        assert_eq!(p.class_logits.shape(), [2, 3, 2]);
        assert_eq!(p.binary_mask.shape(), [2, 16, 16]);
        assert!(p.mask_logits.data().iter().all(|&v| v == 0.0));
        assert!(p.binary_mask.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aligned_query_marks_its_region() {
        // Pixel embedding is the identity, the left half carries direction e0,
        // the right half -e0, and the single query is e0.
        let c = 2;
        let mut head = zero_head(c, 1);
        head.pixel_embed = RealTensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = RealTensor::from_fn(vec![1, c, 4, 4], |i| {
            let (ch, x) = (i / 16, i % 4);
            if ch == 0 {
                if x < 2 {
                    3.0
                } else {
                    -3.0
                }
            } else {
                0.0
            }
        });
        let q = RealTensor::new(vec![1, 1, c], vec![1.0, 0.0]).unwrap();
        let p = decode_masks(&q, &v, &head, 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(p.binary_mask.data()[y * 4 + x], if x < 2 { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn permuting_queries_permutes_logits() {
        let c = 4;
        let head = DecoderParams {
            query_embed: RealTensor::zeros(vec![3, c]),
            query_mlp: Mlp::zeros(c, c, c),
            attn: AttentionProj {
                q: ramp(vec![c, c], 0.1),
                k: ramp(vec![c, c], 0.05),
                v: ramp(vec![c, c], 0.07),
                out: ramp(vec![c, c], 0.03),
            },
            pixel_embed: ramp(vec![c, c], 0.2),
            class_head: ramp(vec![c, 2], 0.1),
        };
        let v = ramp(vec![1, c, 4, 4], 0.13);
        let q = ramp(vec![1, 3, c], 0.17);
        let mut qp = q.clone();
        let perm = [2, 0, 1];
        for (dst, &src) in perm.iter().enumerate() {
            qp.data_mut()[dst * c..(dst + 1) * c].copy_from_slice(&q.data()[src * c..(src + 1) * c]);
        }
        let a = decode_masks(&q, &v, &head, 8, 8).unwrap();
        let b = decode_masks(&qp, &v, &head, 8, 8).unwrap();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(
                &b.mask_logits.data()[dst * 64..(dst + 1) * 64],
                &a.mask_logits.data()[src * 64..(src + 1) * 64]
            );
        }
        assert_eq!(a.binary_mask, b.binary_mask);
    }
}
