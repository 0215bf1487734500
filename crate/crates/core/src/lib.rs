//! Optical-flow factorization for visual navigation.
//!
//! Raw flow between two rendered frames is split into the part explained by
//! camera motion (ego flow, from depth, intrinsics and relative pose) and the
//! residual caused by moving objects. A small ray-cast simulator provides
//! frames, a mid-level stage turns them into normalized observation planes,
//! and a discrete soft actor-critic agent learns to walk to a goal zone.
//!
//! - [`geometry`]: camera model, reprojection, ego flow and factorization.
//! - [`scene`]: environments, pedestrians, rendering and episode outcomes.
//! - [`midlevel`]: representation specs and observation composition.
//! - [`approximator`]: convolutional encoders with hand-written gradients.
//! - [`sac`]: discrete SAC, replay buffer, training and evaluation.
//! - [`harness`]: experiment config, file formats, runs and sweeps.

pub mod geometry;
pub mod scene;
pub mod midlevel;
pub mod approximator;
pub mod sac;
pub mod harness;
