//! Competing detectors: Hotelling's T² max test, multivariate CUSUM, and
//! the L1 sample divergence with its empirical p-value adjustment.

pub mod cusum;
pub mod divergence;
pub mod hotelling;

pub use cusum::{cusum_max, cusum_step, CusumBaseline, CusumConvention, CusumOptions, CusumState};
pub use divergence::{
    divergence_adjusted, divergence_scan, sample_divergence, AdjustedDivergence, DistanceTable,
    DivergenceSplit, DivergenceTable, PValueRule,
};
pub use hotelling::hotelling_max;
