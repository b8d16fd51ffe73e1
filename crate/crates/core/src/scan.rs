//! Per-candidate statistics over a search window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which score a VC statistic uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    MeanOnly,
    VarianceOnly,
}

/// Days used to estimate `μ`, `Σ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// Days before each candidate (VC*).
    Prechange,
    /// All days (VC).
    AllDays,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScanMethod {
    Vc { variant: Variant, mode: EstimatorMode },
    Hotelling,
    Cusum,
    Divergence,
}

/// Statistics for candidate days `T−db ..= T−1`, 1-based positions.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScan {
    pub method: ScanMethod,
    pub stats: Vec<(usize, f64)>,
    pub argmax_day: usize,
    pub max_stat: f64,
}

impl CandidateScan {
    /// Builds the scan from per-candidate values in day order; ties go to
    /// the earliest day.
    pub(crate) fn from_stats(method: ScanMethod, stats: Vec<(usize, f64)>) -> Self {
        let (mut argmax_day, mut max_stat) = stats[0];
        for &(k, q) in &stats[1..] {
            if q > max_stat {
                argmax_day = k;
                max_stat = q;
            }
        }
        CandidateScan {
            method,
            stats,
            argmax_day,
            max_stat,
        }
    }

    pub fn get(&self, k: usize) -> Option<f64> {
        self.stats.iter().find(|(d, _)| *d == k).map(|(_, q)| *q)
    }
}

/// Candidate days for a window of `db` days back in a series of length `t`;
/// the first candidate must be at least `first_min`.
pub(crate) fn window(t: usize, db: usize, first_min: usize) -> Result<std::ops::RangeInclusive<usize>> {
    if db == 0 {
        return Err(Error::Window("db must be at least 1".into()));
    }
    if t < db + first_min || t < 3 {
        return Err(Error::Window(format!(
            "T={t} with db={db} puts the first candidate below day {first_min}"
        )));
    }
    Ok((t - db)..=(t - 1))
}
