//! Mean Jaccard index and mean F-score over frames.

use crate::error::{Error, Result};
use crate::tensor::RealTensor;

/// Weight of precision against recall in the F-score.
pub const F_BETA_SQ: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn jaccard(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    /// `(1 + β²)·P·R / (β²·P + R)`; 0 when `P + R = 0`, 1 when both masks are empty.
    pub fn fscore(&self) -> f64 {
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        let p = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let r = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        if p + r == 0.0 {
            0.0
        } else {
            (1.0 + F_BETA_SQ) * p * r / (F_BETA_SQ * p + r)
        }
    }
}

/// Confusion counts per frame; the leading axis indexes frames and values
/// above 0.5 count as foreground.
pub fn frame_counts(pred: &RealTensor, gt: &RealTensor) -> Result<Vec<Counts>> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape("metric", pred.shape(), gt.shape()));
    }
    if pred.rank() < 2 {
        return Err(Error::invalid("metric", "masks must be [T, ...]"));
    }
    let frames = pred.shape()[0];
    let per = pred.len() / frames.max(1);
    Ok((0..frames)
        .map(|f| {
            let mut c = Counts::default();
            for (&p, &g) in pred.data()[f * per..(f + 1) * per]
                .iter()
                .zip(&gt.data()[f * per..(f + 1) * per])
            {
                match (p > 0.5, g > 0.5) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
            c
        })
        .collect())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn metric_jaccard(pred: &RealTensor, gt: &RealTensor) -> Result<f64> {
    Ok(mean(frame_counts(pred, gt)?.iter().map(Counts::jaccard)))
}

pub fn metric_fscore(pred: &RealTensor, gt: &RealTensor) -> Result<f64> {
    Ok(mean(frame_counts(pred, gt)?.iter().map(Counts::fscore)))
}
