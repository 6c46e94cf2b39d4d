//! Frequency-aware audio-visual fusion.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`init`] and [`ops`]: a small deterministic f64 tensor substrate
//!   (depthwise / grouped / 3D convolutions, pooling, resizing, gates).
//! * [`spectral`]: batched 2D FFT with a naive DFT oracle, radial frequency
//!   geometry and the residual band decomposition (high / mid / low / residual).
//! * [`fded`]: the frequency-domain enhanced decomposer, which preprocesses a
//!   feature map, splits its spectrum into bands, enhances the high band with a
//!   modality-specific operator and recomposes a spatial feature map.
//! * [`scmc`]: cross-modal attention experts mixed by an entropy-driven dynamic
//!   top-k router.
//! * [`pipeline`]: the multi-stage composition, query derivation, a one-layer
//!   mask decoder and the Jaccard / F-score metrics.
//! * [`fixtures`]: synthetic audio-visual scenes and the FTEN1 tensor container.
//!
//! With the default `parallel` feature, independent slices (frames, channels,
//! experts) are processed on the rayon pool. Every reduction runs in a fixed
//! order inside a slice, so results are bit-identical for any thread count and
//! with the feature disabled.

pub mod error;
pub mod fded;
pub mod fixtures;
pub mod init;
pub mod ops;
mod par;
pub mod pipeline;
pub mod scmc;
pub mod spectral;
pub mod tensor;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use tensor::{ComplexTensor, RealTensor};
