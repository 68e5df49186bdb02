//! Learning visual scene reconstructions from Wi-Fi channel state
//! information.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! * [`scene`]: a deterministic multipath room simulator producing paired
//!   CSI and camera frames with ground-truth boxes,
//! * [`csi`] and [`dataset`]: the `[4, 1, 56]` CSI tensor, min/max
//!   normalisation and the on-disk dataset format,
//! * [`supervised`]: a residual box regressor trained with MSE against
//!   confidence-filtered teacher boxes,
//! * [`cgan`]: a CSI-conditioned generator and a PatchGAN discriminator in
//!   which every 70×70 patch sees the full CSI vector,
//! * [`eval`]: IoU, AP at IoU 0.5, box extraction from generated frames and
//!   report comparison.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below fix the training precision.

pub mod cgan;
pub mod csi;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frame;
pub mod nn;
pub mod scalar;
pub mod scene;
pub mod supervised;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Seedable random generator used everywhere randomness is needed.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub type Csi = csi::CsiTensor<f32>;
pub type NormalizedCsi = csi::NormalizedCsi<f32>;
pub type BoxRegressor = supervised::BoxRegressor<f32>;
pub type Generator = cgan::Generator<f32>;
pub type Discriminator = cgan::Discriminator<f32>;
