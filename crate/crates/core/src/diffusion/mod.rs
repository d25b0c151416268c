//! Leader-conditioned diffusion prior used to refine generated followers.
//!
//! The forward process is variance preserving,
//! `X_t = sqrt(alpha_bar(t)) X + sqrt(1 - alpha_bar(t)) eps`, with the cosine
//! schedule. The denoiser predicts the clean trajectory. Refinement starts
//! from a point of the DDIM inference grid and keeps the leader half fixed.

pub mod denoiser;
pub mod refine;
pub mod schedule;

pub use denoiser::{Denoiser, DenoiserConfig};
pub use refine::{crop_features, crop_starts, refine_sequence};
pub use schedule::{cfg_combine, cosine_schedule, NoiseSchedule};
