//! Null distributions, thresholds, power, and tuning.

pub mod cache;
pub mod calibrate;
pub mod null;
pub mod phi;

pub use cache::NullCache;
pub use calibrate::{
    calibrate_effect, calibrate_with, estimate_power, monotonicity_violations, Calibration,
    CalibrationOptions, PowerEstimate, TracePoint,
};
pub use null::{build_null, config_digest, p_value, threshold, NullDistribution, NullReference, Scored};
pub use phi::{select_phi, PhiIteration, PhiOptions, PhiSelection, PHI_GRID};
