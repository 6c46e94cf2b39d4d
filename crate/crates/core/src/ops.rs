//! Convolution, pooling, resizing and gating primitives.
//!
//! Convolutions are cross-correlations with zero "same" padding, the usual
//! convention for learned filters. All loops accumulate in a fixed order so the
//! output of every primitive is independent of the thread count.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{ComplexTensor, RealTensor};

fn require_odd(op: &'static str, dims: &[usize]) -> Result<()> {
    if dims.iter().any(|&d| d % 2 == 0) {
        return Err(Error::invalid(op, format!("kernel extents must be odd, got {dims:?}")));
    }
    Ok(())
}

/// Correlates one `h × w` plane with a `kh × kw` kernel under zero padding.
fn correlate_plane(src: &[f64], h: usize, w: usize, k: &[f64], kh: usize, kw: usize, out: &mut [f64]) {
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..kh {
                let sy = y as isize + dy as isize - ph;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                let row = sy as usize * w;
                for dx in 0..kw {
                    let sx = x as isize + dx as isize - pw;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    acc += k[dy * kw + dx] * src[row + sx as usize];
                }
            }
            out[y * w + x] = acc;
        }
    }
}

/// Per-channel 2D convolution of `x[T,C,H,W]` with `kernels[C,kh,kw]`.
pub fn depthwise_conv2d(x: &RealTensor, kernels: &RealTensor) -> Result<RealTensor> {
    const OP: &str = "depthwise_conv2d";
    let (_, c, h, w) = x.dims4(OP)?;
    let [kc, kh, kw] = kernels.shape()[..] else {
        return Err(Error::invalid(
            OP,
            format!("kernels must be [C,kh,kw], got {:?}", kernels.shape()),
        ));
    };
    if kc != c {
        return Err(Error::shape(OP, x.shape(), kernels.shape()));
    }
    require_odd(OP, &[kh, kw])?;
    let plane = h * w;
    let mut out = RealTensor::zeros(x.shape().to_vec());
    let src = x.data();
    let kern = kernels.data();
    par::for_each_chunk_mut(out.data_mut(), plane, |idx, dst| {
        let ch = idx % c;
        correlate_plane(
            &src[idx * plane..(idx + 1) * plane],
            h,
            w,
            &kern[ch * kh * kw..(ch + 1) * kh * kw],
            kh,
            kw,
            dst,
        );
    });
    Ok(out)
}

/// Grouped 1×1 convolution: channel group `g` is mixed by `weights[g]`, a
/// `(C/G) × (C/G)` matrix acting as `y_i = Σ_j W[i][j] x_j` at every pixel.
pub fn grouped_pointwise_conv(x: &RealTensor, weights: &RealTensor) -> Result<RealTensor> {
    const OP: &str = "grouped_pointwise_conv";
    let (_, c, h, w) = x.dims4(OP)?;
    let [g, gi, go] = weights.shape()[..] else {
        return Err(Error::invalid(
            OP,
            format!("weights must be [G,C/G,C/G], got {:?}", weights.shape()),
        ));
    };
    if g == 0 || c % g != 0 {
        return Err(Error::invalid(
            OP,
            format!("{c} channels not divisible into {g} groups"),
        ));
    }
    let cg = c / g;
    if gi != cg || go != cg {
        return Err(Error::shape(OP, x.shape(), weights.shape()));
    }
    let plane = h * w;
    let src = x.data();
    let wt = weights.data();
    let mut out = RealTensor::zeros(x.shape().to_vec());
    par::for_each_chunk_mut(out.data_mut(), plane, |idx, dst| {
        let (frame, ch) = (idx / c, idx % c);
        let (group, row) = (ch / cg, ch % cg);
        let m = &wt[group * cg * cg + row * cg..group * cg * cg + (row + 1) * cg];
        for (j, &coef) in m.iter().enumerate() {
            let s = (frame * c + group * cg + j) * plane;
            for (d, &v) in dst.iter_mut().zip(&src[s..s + plane]) {
                *d += coef * v;
            }
        }
    });
    Ok(out)
}

/// Full 1×1 convolution with `weights[C_out, C_in]`.
pub fn pointwise_conv(x: &RealTensor, weights: &RealTensor) -> Result<RealTensor> {
    const OP: &str = "pointwise_conv";
    let (t, c, h, w) = x.dims4(OP)?;
    let [co, ci] = weights.shape()[..] else {
        return Err(Error::invalid(
            OP,
            format!("weights must be [C_out,C_in], got {:?}", weights.shape()),
        ));
    };
    if ci != c {
        return Err(Error::shape(OP, x.shape(), weights.shape()));
    }
    let plane = h * w;
    let src = x.data();
    let wt = weights.data();
    let mut out = RealTensor::zeros(vec![t, co, h, w]);
    par::for_each_chunk_mut(out.data_mut(), plane, |idx, dst| {
        let (frame, o) = (idx / co, idx % co);
        for j in 0..ci {
            let coef = wt[o * ci + j];
            let s = (frame * c + j) * plane;
            for (d, &v) in dst.iter_mut().zip(&src[s..s + plane]) {
                *d += coef * v;
            }
        }
    });
    Ok(out)
}

/// Depthwise 3D convolution over `(T, H, W)` of a complex tensor plus the input.
///
/// The real kernel `kernel[C,kt,kh,kw]` acts on the real and imaginary planes
/// independently, so the map is complex-linear with real coefficients.
pub fn conv3d_residual(x: &ComplexTensor, kernel: &RealTensor) -> Result<ComplexTensor> {
    const OP: &str = "conv3d_residual";
    let (t, c, h, w) = x.dims4(OP)?;
    let [kc, kt, kh, kw] = kernel.shape()[..] else {
        return Err(Error::invalid(
            OP,
            format!("kernel must be [C,kt,kh,kw], got {:?}", kernel.shape()),
        ));
    };
    if kc != c {
        return Err(Error::shape(OP, x.shape(), kernel.shape()));
    }
    require_odd(OP, &[kt, kh, kw])?;
    let plane = h * w;
    let ksz = kt * kh * kw;
    let src = x.data();
    let kern = kernel.data();
    let (pt, ph, pw) = ((kt / 2) as isize, (kh / 2) as isize, (kw / 2) as isize);
    let mut out = x.clone();
    par::for_each_chunk_mut(out.data_mut(), plane, |idx, dst| {
        let (frame, ch) = (idx / c, idx % c);
        let k = &kern[ch * ksz..(ch + 1) * ksz];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for dt in 0..kt {
                    let st = frame as isize + dt as isize - pt;
                    if st < 0 || st >= t as isize {
                        continue;
                    }
                    let base = (st as usize * c + ch) * plane;
                    for dy in 0..kh {
                        let sy = y as isize + dy as isize - ph;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..kw {
                            let sx = xx as isize + dx as isize - pw;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let coef = k[(dt * kh + dy) * kw + dx];
                            acc += src[base + sy as usize * w + sx as usize] * coef;
                        }
                    }
                }
                dst[y * w + xx] += acc;
            }
        }
    });
    Ok(out)
}

/// In-place max-subtracted softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax along the last axis.
pub fn softmax(x: &RealTensor) -> RealTensor {
    let n = *x.shape().last().expect("rank >= 1");
    let mut out = x.clone();
    if n > 0 {
        out.data_mut().chunks_mut(n).for_each(softmax_in_place);
    }
    out
}

/// Spatial mean of `x[T,C,H,W]`, returned as `[T,C]`. Sums run row-major.
pub fn global_avg_pool(x: &RealTensor) -> Result<RealTensor> {
    const OP: &str = "global_avg_pool";
    let (t, c, h, w) = x.dims4(OP)?;
    let plane = h * w;
    if plane == 0 {
        return Err(Error::invalid(OP, "empty spatial extent"));
    }
    let data = if plane == 1 {
        x.data().to_vec()
    } else {
        x.data()
            .chunks(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect()
    };
    RealTensor::new(vec![t, c], data)
}

fn source_coord(dst: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize with half-pixel centres (`align_corners = false`); source
/// coordinates below zero clamp to the first sample.
pub fn bilinear_resize(x: &RealTensor, out_h: usize, out_w: usize) -> Result<RealTensor> {
    const OP: &str = "bilinear_resize";
    let (t, c, h, w) = x.dims4(OP)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(OP, "output extents must be >= 1"));
    }
    if (out_h, out_w) == (h, w) {
        return Ok(x.clone());
    }
    let ys: Vec<_> = (0..out_h).map(|y| source_coord(y, h, out_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|x| source_coord(x, w, out_w)).collect();
    let src = x.data();
    let mut out = RealTensor::zeros(vec![t, c, out_h, out_w]);
    par::for_each_chunk_mut(out.data_mut(), out_h * out_w, |idx, dst| {
        let p = &src[idx * h * w..(idx + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    });
    Ok(out)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Element-wise logistic function.
pub fn sigmoid_gate(x: &RealTensor) -> RealTensor {
    x.map(sigmoid)
}

/// `y = W x` for a row-major `rows × cols` matrix.
pub fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize, y: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    for (i, yi) in y.iter_mut().enumerate().take(rows) {
        let r = &w[i * cols..(i + 1) * cols];
        *yi = r.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Two-layer perceptron `relu(x·W1 + b1)·W2 + b2` with `W1[in,hidden]` and
/// `W2[hidden,out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: RealTensor,
    pub b1: RealTensor,
    pub w2: RealTensor,
    pub b2: RealTensor,
}

impl Mlp {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: RealTensor::zeros(vec![input, hidden]),
            b1: RealTensor::zeros(vec![hidden]),
            w2: RealTensor::zeros(vec![hidden, output]),
            b2: RealTensor::zeros(vec![output]),
        }
    }

    pub fn new(w1: RealTensor, b1: RealTensor, w2: RealTensor, b2: RealTensor) -> Result<Self> {
        let mlp = Self { w1, b1, w2, b2 };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        const OP: &str = "Mlp";
        let (&[i, h1], &[h2, o]) = (self.w1.shape(), self.w2.shape()) else {
            return Err(Error::invalid(OP, "weights must be rank 2"));
        };
        if h1 != h2 || self.b1.shape() != [h1] || self.b2.shape() != [o] || i == 0 {
            return Err(Error::invalid(
                OP,
                format!(
                    "inconsistent shapes w1 {:?} b1 {:?} w2 {:?} b2 {:?}",
                    self.w1.shape(),
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.w2.shape()[1]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (i, h, o) = (self.input_dim(), self.hidden_dim(), self.output_dim());
        assert_eq!(x.len(), i, "Mlp::forward: input width");
        let (w1, w2) = (self.w1.data(), self.w2.data());
        let hidden: Vec<f64> = (0..h)
            .map(|j| {
                let mut acc = self.b1.data()[j];
                for (k, &xk) in x.iter().enumerate() {
                    acc += xk * w1[k * h + j];
                }
                acc.max(0.0)
            })
            .collect();
        (0..o)
            .map(|j| {
                let mut acc = self.b2.data()[j];
                for (k, &hk) in hidden.iter().enumerate() {
                    acc += hk * w2[k * o + j];
                }
                acc
            })
            .collect()
    }
}
