//! Fruit segmentation and growth tracking.
//!
//! The crate bundles a small convolution engine, the encoder-decoder
//! segmentation network built on it, the soft-dice training loop,
//! dihedral test-time averaging, and the multi-scale crop tracker used to
//! follow a single fruit through a time-lapse series.

pub mod error;
pub mod imagery;
pub mod netbuilder;
pub mod nn;
pub mod objectives;
pub mod plot;
pub mod predictor;
pub mod tracker;
pub mod trainer;

pub use error::{Error, Result};
pub use imagery::{AnnotatedSample, BinaryMask, RasterImage};
pub use netbuilder::{build_network, NetworkConfig, NetworkHandle};
pub use objectives::Objective;
pub use predictor::{D4Element, ProbabilityMap, Segmenter};
pub use tracker::{TrackRecord, TrackSeries};
pub use trainer::{train, TrainConfig, TrainingRecord};
