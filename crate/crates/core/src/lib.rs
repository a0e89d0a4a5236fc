//! HydraPlus: a multi-directional attention network for pedestrian attribute
//! recognition and person re-identification, built on a from-scratch
//! reverse-mode autodiff engine.
//!
//! Crate layout:
//! - [`tensor`]: differentiable tensor primitives and gradient checking
//! - [`hpnet`]: the M-net backbone, MDA attention modules, and fusion head
//! - [`trainer`]: stage-wise training, losses, SGD, checkpoints
//! - [`metrics`]: attribute metrics and CMC re-identification evaluation
//! - [`datakit`]: manifests, tracklet splits, PPM rasters, synthetic data
//! - [`cli`]: operator commands shared by the binary and integration tests

pub mod cli;
pub mod datakit;
pub mod hpnet;
pub mod metrics;
pub mod tensor;
pub mod trainer;
