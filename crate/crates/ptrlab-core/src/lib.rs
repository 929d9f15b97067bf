//! Pseudo-task regularized training for small classification networks.
//!
//! The library trains feed-forward and convolutional classifiers with
//! standard SGD while optionally distracting them with a pseudo-task: a
//! regression of the representation layer (the activation feeding the
//! classifier head) onto random uniform targets that are resampled every
//! batch and therefore can never be fit. The pseudo-task's pull is
//! rebalanced online so the ratio between the mean cross-entropy gradient
//! norm and the mean weighted pseudo-task gradient norm at the
//! representation stays pinned at a configured value `R`, and it only
//! engages once training cross-entropy has dropped below a gate threshold.
//!
//! Module map:
//! - [`tensor`], [`network`], [`params`]: shapes, architectures, parameters.
//! - [`forward`], [`backward`], [`loss`]: the manual network engine with a
//!   gradient-injection point at the representation layer.
//! - [`ptr`]: pseudo-target generation, regression losses, gradient-norm
//!   balancing, and the gate.
//! - [`optim`], [`trainer`]: SGD with momentum/weight decay, the LR
//!   schedule, the epoch loop, and deterministic evaluation.
//! - [`data`]: synthetic blobs, IDX/CSV ingestion, splits, augmentation.
//! - [`diagnostics`]: confusion-mass, entropy, and rectification analysis.
//! - [`toylab`]: the single-neuron gradient-variance experiments.
//! - [`gradcheck`], [`checkpoint`], [`rng`]: finite-difference validation,
//!   binary parameter snapshots, and seeded generator streams.
//!
//! Determinism is a first-class contract: every source of randomness is a
//! seeded generator on a fixed stream, so reruns of a config are
//! bit-identical and baseline/pseudo-task pairs share everything except the
//! pseudo-task itself.

pub mod backward;
pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod network;
pub mod optim;
pub mod params;
pub mod ptr;
pub mod rng;
pub mod tensor;
pub mod toylab;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
