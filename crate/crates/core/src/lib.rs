//! Exploration of the solution set of linear inverse problems under a
//! differentiable generative prior.
//!
//! Given an initial latent solution `z0`, the measurement metric `H_Y` and a
//! perceptual metric `H_X` are built at `z0`; perceptual eigen-directions are
//! projected away from the dominant measurement directions, and stepping
//! along the result yields alternative reconstructions that still fit the
//! measurements.

pub mod bench;
pub mod error;
pub mod exploration;
pub mod generator;
pub mod inversion;
pub mod linalg;
pub mod metrics;
pub mod operator;
pub mod perceptual;
pub mod problem;

pub use error::{Error, Result};
pub use generator::{Generator, GeneratorSpec, LatentVector, SignalTensor};
pub use linalg::{EigenBasis, Matrix, SymmetricMatrix, Vector};
pub use metrics::LatentMetricPair;
pub use operator::{ForwardOperator, OperatorSpec};
pub use perceptual::{FeatureExtractor, FeatureExtractorSpec};
pub use problem::Problem;
