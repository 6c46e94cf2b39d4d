//! Synthetic audio-visual scenes and tensor I/O.
//!
//! A scene is one square object on a smooth, slightly noisy background. The
//! object is either a pixel-level checkerboard (all of its texture sits at the
//! Nyquist corner of the spectrum) or a smooth raised-cosine bump. Multi-scale
//! "backbone" features are seeded random projections of block-averaged frames.

mod ften;
mod mel;

pub use ften::{AnyTensor, TensorFile};
pub use mel::{mel_proxy, noise_region_energy, ridge_bins, MEL_BINS, MEL_FRAMES, NOISE_START};

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::init::{derive_seed, InitSpec, SplitMix64};
use crate::ops;
use crate::tensor::RealTensor;

/// Number of feature scales a fixture provides.
pub const FEATURE_LEVELS: usize = 3;
pub const AUDIO_GRID: usize = 4;
/// Half-width of the uniform background noise.
pub const NOISE_AMPLITUDE: f64 = 0.035;
const BACKGROUND_AMPLITUDE: f64 = 0.2;
const OBJECT_AMPLITUDE: [f64; 3] = [1.0, 0.8, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Texture {
    Checkerboard,
    Smooth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    Static,
    Linear,
}

impl fmt::Display for Texture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Texture::Checkerboard => "checkerboard",
            Texture::Smooth => "smooth",
        })
    }
}

impl FromStr for Texture {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "checkerboard" => Ok(Texture::Checkerboard),
            "smooth" => Ok(Texture::Smooth),
            _ => Err(Error::invalid("texture", format!("unknown texture {s:?}"))),
        }
    }
}

impl fmt::Display for Motion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Motion::Static => "static",
            Motion::Linear => "linear",
        })
    }
}

impl FromStr for Motion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(Motion::Static),
            "linear" => Ok(Motion::Linear),
            _ => Err(Error::invalid("motion", format!("unknown motion {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub texture: Texture,
    pub motion: Motion,
}

impl SceneSpec {
    pub fn new(seed: u64, frames: usize, size: usize, channels: usize, texture: Texture, motion: Motion) -> Self {
        Self {
            seed,
            frames,
            height: size,
            width: size,
            channels,
            texture,
            motion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("height", self.height), ("width", self.width)] {
            if v < 32 || !v.is_power_of_two() {
                return Err(Error::invalid(
                    "gen_scene",
                    format!("{name} {v} must be a power of two >= 32"),
                ));
            }
        }
        if self.frames == 0 || self.channels == 0 {
            return Err(Error::invalid("gen_scene", "frames and channels must be >= 1"));
        }
        Ok(())
    }

    pub fn object_size(&self) -> usize {
        3 * self.height.min(self.width) / 8
    }

    /// Top-left corner of the object in frame `t`.
    pub fn object_origin(&self, t: usize) -> (usize, usize) {
        let l = self.object_size();
        match self.motion {
            Motion::Static => ((self.height - l) / 2, (self.width - l) / 2),
            Motion::Linear => {
                let (y0, x0) = (self.height / 8, self.width / 8);
                ((y0 + 2 * t).min(self.height - l), (x0 + 3 * t).min(self.width - l))
            }
        }
    }

    pub fn tone_bin(&self) -> usize {
        8 + (self.seed % 16) as usize
    }

    pub fn audio_noise_level(&self) -> f64 {
        0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneFixture {
    pub spec: SceneSpec,
    /// `[T, 3, H, W]`, zero-centred intensities.
    pub frames: RealTensor,
    /// `[T, 96, 64]`
    pub spectrogram: RealTensor,
    /// `[T, H, W]` in {0, 1}.
    pub gt_masks: RealTensor,
    /// Level `i` (1-based) is `[T, C, H/2^(i+1), W/2^(i+1)]`.
    pub stage_features: Vec<RealTensor>,
    /// `[T, C, 4, 4]`
    pub audio_features: RealTensor,
}

fn background(spec: &SceneSpec, ch: usize, y: usize, x: usize) -> f64 {
    let (fy, fx) = (y as f64 / spec.height as f64, x as f64 / spec.width as f64);
    BACKGROUND_AMPLITUDE * (TAU * (fx + ch as f64 / 3.0)).sin() * (TAU * fy).cos()
}

/// Object contribution of channel `ch` at offset `(dy, dx)` inside the box.
fn object_value(spec: &SceneSpec, ch: usize, dy: usize, dx: usize) -> f64 {
    let amp = OBJECT_AMPLITUDE[ch];
    match spec.texture {
        Texture::Checkerboard => {
            if (dy + dx).is_multiple_of(2) {
                amp
            } else {
                -amp
            }
        }
        Texture::Smooth => {
            let l = spec.object_size() as f64;
            let by = (PI * (dy as f64 + 0.5) / l).sin();
            let bx = (PI * (dx as f64 + 0.5) / l).sin();
            amp * by * by * bx * bx
        }
    }
}

/// The object layer alone, `[T, 3, H, W]`, zero outside the box.
pub fn object_layer(spec: &SceneSpec) -> RealTensor {
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let l = spec.object_size();
    let mut out = RealTensor::zeros(vec![t, 3, h, w]);
    for f in 0..t {
        let (y0, x0) = spec.object_origin(f);
        for ch in 0..3 {
            let plane = &mut out.data_mut()[(f * 3 + ch) * h * w..(f * 3 + ch + 1) * h * w];
            for dy in 0..l {
                for dx in 0..l {
                    plane[(y0 + dy) * w + x0 + dx] = object_value(spec, ch, dy, dx);
                }
            }
        }
    }
    out
}

fn block_mean(x: &RealTensor, factor: usize) -> Result<RealTensor> {
    let (t, c, h, w) = x.dims4("block_mean")?;
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut out = RealTensor::zeros(vec![t, c, oh, ow]);
    for (idx, dst) in out.data_mut().chunks_mut(oh * ow).enumerate() {
        let src = &x.data()[idx * h * w..(idx + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for y in oy * factor..(oy + 1) * factor {
                    acc += src[y * w + ox * factor..y * w + (ox + 1) * factor].iter().sum::<f64>();
                }
                dst[oy * ow + ox] = acc / norm;
            }
        }
    }
    Ok(out)
}

/// Mean over colour channels of `|x - blur3x3(x)|`, `[T, 1, H, W]`.
fn detail_map(frames: &RealTensor) -> Result<RealTensor> {
    let (t, c, h, w) = frames.dims4("detail_map")?;
    let blur = ops::depthwise_conv2d(frames, &RealTensor::full(vec![c, 3, 3], 1.0 / 9.0))?;
    let mut out = RealTensor::zeros(vec![t, 1, h, w]);
    let plane = h * w;
    for f in 0..t {
        let dst = &mut out.data_mut()[f * plane..(f + 1) * plane];
        for ch in 0..c {
            let s = (f * c + ch) * plane;
            let (a, b) = (&frames.data()[s..s + plane], &blur.data()[s..s + plane]);
            for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
                *d += (x - y).abs() / c as f64;
            }
        }
    }
    Ok(out)
}

/// Mean and standard deviation of each `24 × 16` block of the spectrogram.
fn audio_descriptors(mel: &RealTensor) -> Result<RealTensor> {
    let t = mel.shape()[0];
    let (bh, bw) = (MEL_FRAMES / AUDIO_GRID, MEL_BINS / AUDIO_GRID);
    let n = (bh * bw) as f64;
    let mut out = RealTensor::zeros(vec![t, 2, AUDIO_GRID, AUDIO_GRID]);
    let cells = AUDIO_GRID * AUDIO_GRID;
    for f in 0..t {
        let src = &mel.data()[f * MEL_FRAMES * MEL_BINS..(f + 1) * MEL_FRAMES * MEL_BINS];
        for gy in 0..AUDIO_GRID {
            for gx in 0..AUDIO_GRID {
                let (mut s, mut s2) = (0.0, 0.0);
                for y in gy * bh..(gy + 1) * bh {
                    for &v in &src[y * MEL_BINS + gx * bw..y * MEL_BINS + (gx + 1) * bw] {
                        s += v;
                        s2 += v * v;
                    }
                }
                let mean = s / n;
                let std = (s2 / n - mean * mean).max(0.0).sqrt();
                let d = out.data_mut();
                d[f * 2 * cells + gy * AUDIO_GRID + gx] = mean;
                d[(f * 2 + 1) * cells + gy * AUDIO_GRID + gx] = std;
            }
        }
    }
    Ok(out)
}

fn project(x: &RealTensor, channels: usize, seed: u64, label: &str) -> Result<RealTensor> {
    let cin = x.shape()[1];
    let scale = 1.0 / (cin as f64).sqrt();
    let w = InitSpec::uniform(derive_seed(seed, label), scale).build(vec![channels, cin]);
    ops::pointwise_conv(x, &w)
}

/// Generates a scene. Pure function of the spec.
pub fn gen_scene(spec: SceneSpec) -> Result<SceneFixture> {
    spec.validate()?;
    let (t, h, w) = (spec.frames, spec.height, spec.width);
    let mut rng = SplitMix64::new(derive_seed(spec.seed, "frames.noise"));
    let mut frames = object_layer(&spec);
    for (i, v) in frames.data_mut().iter_mut().enumerate() {
        let ch = (i / (h * w)) % 3;
        let (y, x) = ((i / w) % h, i % w);
        *v += background(&spec, ch, y, x) + rng.next_symmetric(NOISE_AMPLITUDE);
    }

    let l = spec.object_size();
    let mut gt = RealTensor::zeros(vec![t, h, w]);
    for f in 0..t {
        let (y0, x0) = spec.object_origin(f);
        for y in y0..y0 + l {
            gt.data_mut()[f * h * w + y * w + x0..f * h * w + y * w + x0 + l].fill(1.0);
        }
    }

    let detail = detail_map(&frames)?;
    let inputs = frames.concat_channels(&detail)?;
    let stage_features = (1..=FEATURE_LEVELS)
        .map(|i| {
            let pooled = block_mean(&inputs, 1 << (i + 1))?;
            project(&pooled, spec.channels, spec.seed, &format!("stage{i}.proj"))
        })
        .collect::<Result<Vec<_>>>()?;

    let spectrogram = mel_proxy(
        spec.tone_bin(),
        spec.audio_noise_level(),
        derive_seed(spec.seed, "audio.noise"),
        t,
    )?;
    let audio_features = project(
        &audio_descriptors(&spectrogram)?,
        spec.channels,
        spec.seed,
        "audio.proj",
    )?;

    Ok(SceneFixture {
        spec,
        frames,
        spectrogram,
        gt_masks: gt,
        stage_features,
        audio_features,
    })
}

pub fn stage_name(level: usize) -> String {
    format!("stage{level}")
}

impl SceneFixture {
    pub fn to_ften(&self) -> Result<TensorFile> {
        let mut f = TensorFile::new();
        f.insert("frames", self.frames.clone())?;
        f.insert("spectrogram", self.spectrogram.clone())?;
        f.insert("gt_masks", self.gt_masks.clone())?;
        for (i, p) in self.stage_features.iter().enumerate() {
            f.insert(stage_name(i + 1), p.clone())?;
        }
        f.insert("audio_features", self.audio_features.clone())?;
        Ok(f)
    }

    /// Human-readable `key=value` description of the generation parameters.
    pub fn manifest(&self) -> String {
        let s = &self.spec;
        let mut out = format!(
            "format=FTEN1\nseed={}\nframes={}\nheight={}\nwidth={}\nchannels={}\ntexture={}\nmotion={}\nobject_size={}\ntone_bin={}\nnoise_level={}\n",
            s.seed,
            s.frames,
            s.height,
            s.width,
            s.channels,
            s.texture,
            s.motion,
            s.object_size(),
            s.tone_bin(),
            s.audio_noise_level()
        );
        for t in 0..s.frames {
            let (y, x) = s.object_origin(t);
            out.push_str(&format!(
                "object_box_{t}={y},{x},{},{}\n",
                y + s.object_size(),
                x + s.object_size()
            ));
        }
        for (i, p) in self.stage_features.iter().enumerate() {
            out.push_str(&format!("stage{}_shape={:?}\n", i + 1, p.shape()));
        }
        out
    }
}
