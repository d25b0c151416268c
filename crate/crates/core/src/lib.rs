//! Reactive leader-to-follower duet motion generation.
//!
//! Two-person motion is cut into one-second windows and quantized by two
//! VQ-VAEs (full-body motion and the pairwise root relation). A small
//! decoder-only language model over an extended vocabulary of text, audio,
//! motion and relation tokens generates the follower's tokens from the
//! leader's, and a leader-clamped diffusion prior refines the decoded
//! follower. The [`metrics`] module scores the result.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod checkpoint;
pub mod config;
pub mod describer;
pub mod diffusion;
pub mod duet;
pub mod error;
pub mod geometry;
pub mod lm;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod pipeline;
pub mod prompt;
pub mod skeleton;
pub mod synth;
pub mod vocab;
pub mod vq;
pub mod window;

pub use duet::DuetSequence;
pub use error::{Error, Result};
pub use geometry::RigidTransform2D;
pub use motion::{MotionFrame, RelationFrame, RootPose};
pub use skeleton::Skeleton;
pub use window::MotionWindow;
