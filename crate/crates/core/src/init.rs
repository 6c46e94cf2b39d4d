//! Seeded, platform-independent tensor initialisation.

use crate::tensor::RealTensor;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 generator. The output sequence is fixed by the seed alone.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[-scale, scale)`.
    pub fn next_symmetric(&mut self, scale: f64) -> f64 {
        (2.0 * self.next_f64() - 1.0) * scale
    }

    /// Standard normal via Box-Muller; consumes two draws.
    pub fn next_gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Derives an independent stream seed from a base seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    // FNV-1a over the label, then one SplitMix step to decorrelate nearby seeds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    SplitMix64::new(seed ^ h).next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    UniformScaled,
    Zeros,
    Ones,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub seed: u64,
    pub scheme: InitScheme,
    pub scale: f64,
}

impl InitSpec {
    pub fn uniform(seed: u64, scale: f64) -> Self {
        Self {
            seed,
            scheme: InitScheme::UniformScaled,
            scale,
        }
    }

    pub fn zeros() -> Self {
        Self {
            seed: 0,
            scheme: InitScheme::Zeros,
            scale: 0.0,
        }
    }

    pub fn ones() -> Self {
        Self {
            seed: 0,
            scheme: InitScheme::Ones,
            scale: 1.0,
        }
    }

    pub fn build(&self, shape: impl Into<Vec<usize>>) -> RealTensor {
        match self.scheme {
            InitScheme::Zeros => RealTensor::zeros(shape),
            InitScheme::Ones => RealTensor::full(shape, 1.0),
            InitScheme::UniformScaled => {
                let mut rng = SplitMix64::new(self.seed);
                RealTensor::from_fn(shape, |_| rng.next_symmetric(self.scale))
            }
        }
    }
}
