//! 2D Fourier transforms, radial frequency geometry and residual band
//! decomposition.
//!
//! Conventions: the forward transform is unnormalised and the inverse carries
//! the `1 / (H·W)` factor, so `Σ|x|² · H·W = Σ|X|²`.

use std::f64::consts::{SQRT_2, TAU};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlannerScalar};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{ComplexTensor, RealTensor};

/// Largest `H·W` accepted by [`naive_dft2`].
pub const NAIVE_DFT_MAX_BINS: usize = 4096;

fn plane_dims(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [.., h, w] if shape.len() >= 2 => Ok((*h, *w)),
        _ => Err(Error::invalid(op, format!("need at least rank 2, got {shape:?}"))),
    }
}

struct Plan2 {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

impl Plan2 {
    // The scalar planner picks the same algorithm on every CPU, which keeps
    // the transform bit-reproducible across machines.
    fn new(h: usize, w: usize, direction: FftDirection) -> Self {
        let mut planner = FftPlannerScalar::new();
        Self {
            rows: planner.plan_fft(w, direction),
            cols: planner.plan_fft(h, direction),
        }
    }

    fn apply(&self, slice: &mut [Complex64], h: usize, w: usize) {
        self.rows.process(slice);
        let mut col = vec![Complex64::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                col[x * h + y] = slice[y * w + x];
            }
        }
        self.cols.process(&mut col);
        for x in 0..w {
            for y in 0..h {
                slice[y * w + x] = col[x * h + y];
            }
        }
    }
}

fn transform(mut data: ComplexTensor, direction: FftDirection, normalize: bool) -> Result<ComplexTensor> {
    let (h, w) = plane_dims("fft2", data.shape())?;
    if h == 0 || w == 0 {
        return Ok(data);
    }
    let plan = Plan2::new(h, w, direction);
    let scale = 1.0 / (h * w) as f64;
    par::for_each_chunk_mut(data.data_mut(), h * w, |_, slice| {
        plan.apply(slice, h, w);
        if normalize {
            slice.iter_mut().for_each(|z| *z *= scale);
        }
    });
    Ok(data)
}

/// Unnormalised forward DFT over the last two axes of a real tensor.
pub fn fft2(x: &RealTensor) -> Result<ComplexTensor> {
    transform(x.to_complex(), FftDirection::Forward, false)
}

/// Unnormalised forward DFT over the last two axes of a complex tensor.
pub fn fft2_complex(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x.clone(), FftDirection::Forward, false)
}

/// Inverse DFT over the last two axes with `1/(H·W)` normalisation.
pub fn ifft2(x: &ComplexTensor) -> Result<ComplexTensor> {
    transform(x.clone(), FftDirection::Inverse, true)
}

/// Direct double-sum DFT of one `H × W` plane; the reference for [`fft2`].
pub fn naive_dft2(x: &RealTensor) -> Result<ComplexTensor> {
    const OP: &str = "naive_dft2";
    let [h, w] = x.shape()[..] else {
        return Err(Error::invalid(OP, format!("expected [H,W], got {:?}", x.shape())));
    };
    if h * w > NAIVE_DFT_MAX_BINS {
        return Err(Error::invalid(
            OP,
            format!("{h}x{w} exceeds the {NAIVE_DFT_MAX_BINS}-bin guard"),
        ));
    }
    let src = x.data();
    let mut out = Vec::with_capacity(h * w);
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for y in 0..h {
                for xx in 0..w {
                    // Reduce the phase index mod N before scaling to keep the
                    // angle small and accurate.
                    let py = (u * y % h) as f64 / h as f64;
                    let px = (v * xx % w) as f64 / w as f64;
                    acc += Complex64::from_polar(src[y * w + xx], -TAU * (py + px));
                }
            }
            out.push(acc);
        }
    }
    ComplexTensor::new(vec![h, w], out)
}

/// Ordered thresholds `τ0 > τ1 > τ2 > τ3 ≥ 0` with `τ0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdLadder {
    taus: [f64; 4],
}

impl Default for ThresholdLadder {
    fn default() -> Self {
        Self {
            taus: [1.0, 0.6, 0.3, 0.1],
        }
    }
}

impl ThresholdLadder {
    pub fn new(taus: [f64; 4]) -> Result<Self> {
        let fail = |msg: &str| Error::InvalidLadder {
            taus: taus.to_vec(),
            msg: msg.to_string(),
        };
        if taus[0] != 1.0 {
            return Err(fail("tau0 must be 1.0"));
        }
        if !taus.windows(2).all(|p| p[0] > p[1]) {
            return Err(fail("thresholds must be strictly decreasing"));
        }
        if taus[3].is_nan() || taus[3] < 0.0 {
            return Err(fail("tau3 must be >= 0"));
        }
        Ok(Self { taus })
    }

    /// Parses `"1.0,0.6,0.3,0.1"`.
    pub fn parse(s: &str) -> Result<Self> {
        let vals: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidLadder {
                taus: vec![],
                msg: format!("cannot parse {s:?}: {e}"),
            })?;
        let taus: [f64; 4] = vals.as_slice().try_into().map_err(|_| Error::InvalidLadder {
            taus: vals.clone(),
            msg: "expected exactly four thresholds".into(),
        })?;
        Self::new(taus)
    }

    pub fn taus(&self) -> [f64; 4] {
        self.taus
    }

    /// Band index for a normalised radius: 0 high, 1 mid, 2 low, 3 residual.
    pub fn band_of(&self, radius: f64) -> usize {
        (1..4)
            .find(|&i| self.taus[i] < radius && radius <= self.taus[i - 1])
            .map_or(3, |i| i - 1)
    }
}

impl std::fmt::Display for ThresholdLadder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let t = self.taus;
        write!(f, "{},{},{},{}", t[0], t[1], t[2], t[3])
    }
}

/// Normalised radial frequency of every bin of an `H × W` spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialGrid {
    pub magnitudes: RealTensor,
}

fn signed_freq(u: usize, n: usize) -> f64 {
    let centered = if u <= n / 2 { u as f64 } else { u as f64 - n as f64 };
    centered / (n / 2).max(1) as f64
}

/// Bin `(u, v)` maps to `min(1, sqrt(fu² + fv²) / √2)` where `fu`, `fv` are the
/// signed frequencies divided by the Nyquist index, so the far corner is 1.
pub fn radial_grid(h: usize, w: usize) -> RadialGrid {
    let fv: Vec<f64> = (0..w).map(|v| signed_freq(v, w)).collect();
    let data = (0..h)
        .flat_map(|u| {
            let fu = signed_freq(u, h);
            fv.iter().map(move |&fv| ((fu * fu + fv * fv).sqrt() / SQRT_2).min(1.0))
        })
        .collect();
    RadialGrid {
        magnitudes: RealTensor::new(vec![h, w], data).expect("radial grid shape"),
    }
}

/// The four disjoint sub-spectra of a source spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    pub high: ComplexTensor,
    pub mid: ComplexTensor,
    pub low: ComplexTensor,
    pub residual: ComplexTensor,
    pub ladder: ThresholdLadder,
    pub source_shape: Vec<usize>,
}

impl BandSet {
    /// Bands in order high, mid, low, residual.
    pub fn bands(&self) -> [&ComplexTensor; 4] {
        [&self.high, &self.mid, &self.low, &self.residual]
    }

    /// `high + mid + low + residual`, summed in that order.
    pub fn recombine(&self) -> ComplexTensor {
        let mut out = self.high.clone();
        for band in [&self.mid, &self.low, &self.residual] {
            for (o, b) in out.data_mut().iter_mut().zip(band.data()) {
                *o += b;
            }
        }
        out
    }

    pub fn energies(&self) -> [f64; 4] {
        self.bands().map(band_energy)
    }
}

/// Splits a spectrum into high / mid / low / residual bands by iteratively
/// moving the bins with `τi < |ω| ≤ τ(i-1)` out of the remaining spectrum.
///
/// Masked-out bins hold `-0.0`, the additive identity of IEEE addition, so the
/// band sum reproduces the source bit for bit, signed zeros included.
pub fn residual_decompose(x: &ComplexTensor, ladder: &ThresholdLadder) -> Result<BandSet> {
    let ladder = ThresholdLadder::new(ladder.taus())?;
    let (h, w) = plane_dims("residual_decompose", x.shape())?;
    let grid = radial_grid(h, w);
    let assignment: Vec<usize> = grid.magnitudes.data().iter().map(|&r| ladder.band_of(r)).collect();

    let empty = Complex64::new(-0.0, -0.0);
    let mut remaining = x.clone();
    let mut bands: Vec<ComplexTensor> = Vec::with_capacity(3);
    for band in 0..3 {
        let mut extracted = ComplexTensor::zeros(x.shape().to_vec());
        extracted.data_mut().iter_mut().for_each(|z| *z = empty);
        if h * w > 0 {
            let rem = remaining.data_mut();
            for (k, (dst, src)) in extracted.data_mut().iter_mut().zip(rem.iter_mut()).enumerate() {
                if assignment[k % (h * w)] == band {
                    *dst = *src;
                    *src = empty;
                }
            }
        }
        bands.push(extracted);
    }
    let mut it = bands.into_iter();
    Ok(BandSet {
        high: it.next().unwrap(),
        mid: it.next().unwrap(),
        low: it.next().unwrap(),
        residual: remaining,
        ladder,
        source_shape: x.shape().to_vec(),
    })
}

/// `Σ |X_k|²` in row-major order.
pub fn band_energy(x: &ComplexTensor) -> f64 {
    x.data().iter().map(|z| z.norm_sqr()).sum()
}
