//! Frequency-domain enhanced decomposer.
//!
//! `x → DWC → GroupConv → FFT → {high, mid, low, residual}`; the high band is
//! enhanced per modality (3D convolution for video, channel attention for
//! audio), every band is inverse-transformed on its own and the spatial images
//! are summed with per-band weights.

use crate::error::{Error, Result};
use crate::ops::{self, sigmoid, Mlp};
use crate::spectral::{self, BandSet, ThresholdLadder};
use crate::tensor::{ComplexTensor, RealTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn tag(self) -> &'static str {
        match self {
            Modality::Visual => "v",
            Modality::Audio => "a",
        }
    }
}

/// Weights of one decomposer branch.
///
/// A branch carries both enhancers; [`fded_forward`] uses `conv3d` on the
/// visual path and `ca` on the audio path.
#[derive(Debug, Clone, PartialEq)]
pub struct FdedParams {
    /// `[C, 3, 3]`
    pub dwc: RealTensor,
    /// `[G, C/G, C/G]`
    pub group: RealTensor,
    /// `[C, 3, 3, 3]`
    pub conv3d: RealTensor,
    /// Channel attention `C → C/r → C`.
    pub ca: Mlp,
    /// Recomposition weights for high, mid, low, residual.
    pub band_weights: [f64; 4],
    pub ladder: ThresholdLadder,
    /// When false the high band passes through untouched.
    pub enhance: bool,
}

impl FdedParams {
    /// Identity convolutions, zero enhancers, unit band weights.
    pub fn identity(channels: usize, groups: usize, reduction: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::invalid(
                "FdedParams",
                format!("{channels} channels, {groups} groups"),
            ));
        }
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::invalid(
                "FdedParams",
                format!("reduction {reduction} must divide {channels}"),
            ));
        }
        let mut dwc = RealTensor::zeros(vec![channels, 3, 3]);
        for c in 0..channels {
            dwc.data_mut()[c * 9 + 4] = 1.0;
        }
        let cg = channels / groups;
        let mut group = RealTensor::zeros(vec![groups, cg, cg]);
        for g in 0..groups {
            for i in 0..cg {
                group.data_mut()[(g * cg + i) * cg + i] = 1.0;
            }
        }
        Ok(Self {
            dwc,
            group,
            conv3d: RealTensor::zeros(vec![channels, 3, 3, 3]),
            ca: Mlp::zeros(channels, channels / reduction, channels),
            band_weights: [1.0; 4],
            ladder: ThresholdLadder::default(),
            enhance: true,
        })
    }

    pub fn channels(&self) -> usize {
        self.dwc.shape()[0]
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let fail = |what: &str, shape: &[usize]| {
            Err(Error::Params(format!(
                "fded {what} has shape {shape:?} for {c} channels"
            )))
        };
        if self.dwc.rank() != 3 {
            return fail("dwc", self.dwc.shape());
        }
        match self.group.shape() {
            &[g, a, b] if g > 0 && a == b && g * a == c => {}
            s => return fail("group", s),
        }
        if self.conv3d.rank() != 4 || self.conv3d.shape()[0] != c {
            return fail("conv3d", self.conv3d.shape());
        }
        self.ca.validate()?;
        if self.ca.input_dim() != c || self.ca.output_dim() != c || !c.is_multiple_of(self.ca.hidden_dim()) {
            return fail("ca.w1", self.ca.w1.shape());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdedOutput {
    pub features: RealTensor,
    /// Bands of the preprocessed spectrum before enhancement.
    pub bands: BandSet,
    pub enhanced_high: ComplexTensor,
}

impl FdedOutput {
    /// The spectrum that was recomposed: enhanced high plus the untouched bands.
    pub fn output_spectrum(&self) -> ComplexTensor {
        BandSet {
            high: self.enhanced_high.clone(),
            ..self.bands.clone()
        }
        .recombine()
    }
}

/// `F_pre = GroupConv(DWC(x))` and its spectrum.
pub fn preprocess(x: &RealTensor, p: &FdedParams) -> Result<(RealTensor, ComplexTensor)> {
    let pre = ops::grouped_pointwise_conv(&ops::depthwise_conv2d(x, &p.dwc)?, &p.group)?;
    let spec = spectral::fft2(&pre)?;
    Ok((pre, spec))
}

/// Zeroes every bin outside the high band so enhancement cannot leak into the
/// bands that must pass through unchanged.
fn restrict_to_high(band: &mut ComplexTensor, ladder: &ThresholdLadder) {
    let shape = band.shape();
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    let grid = spectral::radial_grid(h, w);
    let radii = grid.magnitudes.data();
    for (k, z) in band.data_mut().iter_mut().enumerate() {
        if ladder.band_of(radii[k % (h * w)]) != 0 {
            *z = num_complex::Complex64::new(-0.0, -0.0);
        }
    }
}

/// `Conv3D(F_h) + F_h` over `(T, H, W)`, restricted to the high-band support.
pub fn enhance_high_visual(band: &ComplexTensor, p: &FdedParams) -> Result<ComplexTensor> {
    let mut out = ops::conv3d_residual(band, &p.conv3d)?;
    restrict_to_high(&mut out, &p.ladder);
    Ok(out)
}

/// Per `(frame, channel)` gate `sigmoid(MLP(mean |F_h|))`.
pub fn channel_gate(band: &ComplexTensor, ca: &Mlp) -> Result<RealTensor> {
    let (t, c, h, w) = band.dims4("channel_gate")?;
    if ca.input_dim() != c || ca.output_dim() != c {
        return Err(Error::shape("channel_gate", band.shape(), ca.w1.shape()));
    }
    let plane = h * w;
    if plane == 0 {
        return Err(Error::invalid("channel_gate", "empty spectrum"));
    }
    let mut gates = Vec::with_capacity(t * c);
    for frame in band.data().chunks(c * plane) {
        let squeezed: Vec<f64> = frame
            .chunks(plane)
            .map(|p| p.iter().map(|z| z.norm()).sum::<f64>() / plane as f64)
            .collect();
        gates.extend(ca.forward(&squeezed).into_iter().map(sigmoid));
    }
    RealTensor::new(vec![t, c], gates)
}

/// `CA(F_h) ⊙ F_h`: complex bins scaled by a real per-channel gate in (0, 1).
pub fn enhance_high_audio(band: &ComplexTensor, p: &FdedParams) -> Result<ComplexTensor> {
    let gate = channel_gate(band, &p.ca)?;
    let (_, _, h, w) = band.dims4("enhance_high_audio")?;
    let mut out = band.clone();
    for (plane, &g) in out.data_mut().chunks_mut(h * w).zip(gate.data()) {
        plane.iter_mut().for_each(|z| *z *= g);
    }
    Ok(out)
}

/// `Σ w_b · Re(ifft2(band_b))` over high, mid, low, residual.
pub fn recompose(bands: [&ComplexTensor; 4], weights: [f64; 4]) -> Result<RealTensor> {
    let shape = bands[0].shape().to_vec();
    if let Some(b) = bands.iter().find(|b| b.shape() != shape.as_slice()) {
        return Err(Error::shape("recompose", &shape, b.shape()));
    }
    let mut out = RealTensor::zeros(shape);
    for (band, wt) in bands.into_iter().zip(weights) {
        let spatial = spectral::ifft2(band)?;
        for (o, z) in out.data_mut().iter_mut().zip(spatial.data()) {
            *o += wt * z.re;
        }
    }
    Ok(out)
}

pub fn fded_forward(x: &RealTensor, modality: Modality, p: &FdedParams) -> Result<FdedOutput> {
    let (_, spectrum) = preprocess(x, p)?;
    let bands = spectral::residual_decompose(&spectrum, &p.ladder)?;
    let enhanced_high = match (p.enhance, modality) {
        (false, _) => bands.high.clone(),
        (true, Modality::Visual) => enhance_high_visual(&bands.high, p)?,
        (true, Modality::Audio) => enhance_high_audio(&bands.high, p)?,
    };
    let features = recompose(
        [&enhanced_high, &bands.mid, &bands.low, &bands.residual],
        p.band_weights,
    )?;
    Ok(FdedOutput {
        features,
        bands,
        enhanced_high,
    })
}
