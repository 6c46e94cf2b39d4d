//! Mel-spectrogram proxy: a tonal ridge plus noise in the upper mel bins.

use crate::error::{Error, Result};
use crate::init::SplitMix64;
use crate::tensor::RealTensor;

pub const MEL_FRAMES: usize = 96;
pub const MEL_BINS: usize = 64;
/// First bin of the noise region (top quartile of the mel axis).
pub const NOISE_START: usize = MEL_BINS * 3 / 4;

/// Bins covered by the ridge centred on `tone_bin`, with their profile weight.
pub fn ridge_bins(tone_bin: usize) -> impl Iterator<Item = (usize, f64)> {
    [(-1isize, 0.5), (0, 1.0), (1, 0.5)]
        .into_iter()
        .filter_map(move |(d, wt)| {
            let b = tone_bin as isize + d;
            (0..MEL_BINS as isize).contains(&b).then_some((b as usize, wt))
        })
}

/// `[T, 96, 64]` power values: a ridge at mel bin `tone_bin` whose amplitude
/// breathes slowly over the 96 time steps, plus `noise_level · U[0, 1)` in
/// the top quartile of mel bins.
pub fn mel_proxy(tone_bin: usize, noise_level: f64, seed: u64, frames: usize) -> Result<RealTensor> {
    if !noise_level.is_finite() || noise_level < 0.0 {
        return Err(Error::invalid(
            "mel_proxy",
            format!("noise level {noise_level} must be >= 0"),
        ));
    }
    if tone_bin >= MEL_BINS {
        return Err(Error::invalid(
            "mel_proxy",
            format!("tone bin {tone_bin} outside 0..{MEL_BINS}"),
        ));
    }
    if frames == 0 {
        return Err(Error::invalid("mel_proxy", "need at least one frame"));
    }
    let mut out = RealTensor::zeros(vec![frames, MEL_FRAMES, MEL_BINS]);
    let mut rng = SplitMix64::new(seed);
    let data = out.data_mut();
    for t in 0..frames {
        for step in 0..MEL_FRAMES {
            let row = &mut data[(t * MEL_FRAMES + step) * MEL_BINS..(t * MEL_FRAMES + step + 1) * MEL_BINS];
            let amp = 0.75 + 0.25 * (std::f64::consts::TAU * step as f64 / 24.0).cos();
            for (b, wt) in ridge_bins(tone_bin) {
                row[b] += amp * wt;
            }
            for v in &mut row[NOISE_START..] {
                *v += noise_level * rng.next_f64();
            }
        }
    }
    Ok(out)
}

/// Sum of spectrogram values inside the noise region.
pub fn noise_region_energy(mel: &RealTensor) -> f64 {
    mel.data()
        .chunks(MEL_BINS)
        .map(|row| row[NOISE_START..].iter().sum::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_is_fixed() {
        for t in [1, 3] {
            assert_eq!(mel_proxy(10, 0.3, 1, t).unwrap().shape(), &[t, 96, 64]);
        }
        assert!(mel_proxy(64, 0.0, 1, 1).is_err());
        assert!(mel_proxy(3, -1.0, 1, 1).is_err());
    }

    #[test]
    fn silent_noise_leaves_only_the_ridge() {
        let m = mel_proxy(10, 0.0, 7, 2).unwrap();
        for row in m.data().chunks(MEL_BINS) {
            for (b, &v) in row.iter().enumerate() {
                assert_eq!(v > 0.0, (9..=11).contains(&b), "bin {b}");
            }
        }
        assert_eq!(noise_region_energy(&m), 0.0);
    }

    #[test]
    fn noise_energy_is_linear_in_level() {
        let a = noise_region_energy(&mel_proxy(10, 0.25, 9, 2).unwrap());
        let b = noise_region_energy(&mel_proxy(10, 0.5, 9, 2).unwrap());
        assert!(a > 0.0);
        assert!((b - 2.0 * a).abs() <= 1e-12 * b);
    }
}
