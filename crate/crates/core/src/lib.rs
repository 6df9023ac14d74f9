//! Contrastive self-supervised pretraining for tri-axial wearable-sensor
//! human activity recognition.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`] dense tensors, hand-written forward/backward kernels, the
//!   NT-Xent objective, optimizers, gradient checking and the checkpoint
//!   container.
//! * [`augment`] the eight stochastic signal transformations, pipeline
//!   composition and two-view generation.
//! * [`data`] MotionSense ingestion, windowing, subject splits and synthetic
//!   fixtures.
//! * [`model`] the temporal convolutional encoder with its projection and
//!   classification heads.
//! * [`train`] contrastive pretraining, linear and fine-tuned evaluation and
//!   the supervised baseline.
//! * [`metrics`] confusion matrices and weighted F1.
//! * [`sweep`] the transformation-pair grid experiment and its renderers.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod record;
pub mod rng;
pub mod sweep;
pub mod train;
pub mod verify;

pub use augment::{TransformKind, TransformParams, TransformPipeline};
pub use data::{ActivityLabel, DatasetSplit, SensorWindow};
pub use error::{Error, Result};
pub use metrics::ConfusionMatrix;
pub use model::{ModelConfig, ModelParams};
pub use numcore::{DualTensor, Scalar, Tensor};
pub use sweep::{SweepConfig, SweepReport};
pub use train::{EvalConfig, PretrainConfig, Protocol, TrainRecord};
