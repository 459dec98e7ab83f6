//! Multi-scale feature pyramid laboratory.
//!
//! A small, dependency-light stack for studying how feature pyramids move
//! information between scales: a rank-4 f64 autodiff engine, three pyramid
//! builders plus their mixture, analytic parameter accounting, gradient-probed
//! information-flow analysis, heatmap export, and a synthetic multi-scale
//! blob-detection task with a full training loop.

pub mod analysis;
pub mod backbone;
pub mod config;
pub mod error;
pub mod pyramid;
pub mod tensor;
pub mod training;
pub mod weights;

pub use backbone::{BlobScene, SceneSpec, SizeClass};
pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use pyramid::{BackboneFeatures, FpnConfig, PyramidKind, PyramidSet};
pub use tensor::{Graph, Shape, Tensor};
pub use training::TrainState;
pub use weights::WeightStore;
