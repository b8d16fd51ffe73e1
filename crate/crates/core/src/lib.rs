//! Variance-component score tests for multivariate change points, with
//! baseline detectors, Monte Carlo inference, and a daily-panel pipeline.

pub mod baselines;
pub mod detector;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod sampler;
pub mod scan;
pub mod simulation;
pub mod vc;

pub use detector::{Detector, Method};
pub use error::{Error, Result};
pub use model::{ChangeKind, FeatureMatrix, GaussianSource, ScenarioSpec};
pub use sampler::NullSampler;
pub use scan::{CandidateScan, EstimatorMode, Variant};
