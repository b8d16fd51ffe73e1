//! Sequential testing along a stream with reset after each detection.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, Method};
use crate::error::{Error, Result};
use crate::inference::{build_null, config_digest, NullCache, NullReference};
use crate::model::FeatureMatrix;
use crate::rng::{derive_seed, tag};
use crate::sampler::NullSampler;

/// Days before the first testable candidate.
pub const RUN_IN_DAYS: usize = 7;
/// Panel length of the first test.
pub const FIRST_TEST_T: usize = RUN_IN_DAYS + 2;

/// Search window at current length `t ≥ 9`: all days after the run-in,
/// capped at seven.
pub fn window_for(t: usize) -> usize {
    (t - 1 - RUN_IN_DAYS).min(7)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OnlineConfig {
    pub alpha: f64,
    /// Permutation replicates per test.
    pub b: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig { alpha: 0.05, b: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEntry {
    /// Detected change day, 1-based position in the input segment.
    pub day: usize,
    pub label: i64,
    pub date: Option<NaiveDate>,
    pub method: Method,
    pub statistic: f64,
    pub p_value: f64,
    pub db: usize,
    /// Length of the tested panel.
    pub t_at_test: usize,
    /// 1-based position where the tested panel began.
    pub run_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionLog {
    pub stream_id: String,
    pub method: Method,
    pub entries: Vec<DetectionEntry>,
    /// Tests performed.
    pub tests: usize,
    /// Days of the input segment.
    pub days: usize,
    /// Some test had more features than days and ran at `φ = 1`.
    pub phi_forced: bool,
}

/// Seed of the test at current length `t` on a run starting at day label
/// `start_label`; identical for any suffix that begins at that label.
pub fn test_seed(seed: u64, start_label: i64, t: usize) -> u64 {
    derive_seed(derive_seed(derive_seed(seed, tag::ONLINE), start_label as u64), t as u64)
}

/// Tests the growing panel from day 9 on. Each test scans the last `db`
/// candidates against a permutation null of the panel's own days. On a
/// detection at day `k` the days before `k` are dropped and testing
/// restarts with `k` as day 1.
pub fn online_detect(
    y: &FeatureMatrix,
    detector: &Detector,
    cfg: &OnlineConfig,
    seed: u64,
    cache: Option<&NullCache>,
    stream_id: &str,
) -> Result<DetectionLog> {
    y.require_complete()?;
    let n = y.t();
    if n < FIRST_TEST_T {
        return Err(Error::InsufficientData {
            needed: FIRST_TEST_T,
            got: n,
        });
    }
    let mut log = DetectionLog {
        stream_id: stream_id.to_string(),
        method: detector.method,
        entries: Vec::new(),
        tests: 0,
        days: n,
        phi_forced: false,
    };
    let mut start = 0;
    let mut t = FIRST_TEST_T;
    while start + t <= n {
        let panel = y.slice_days(start..start + t);
        let mut det = detector.clone();
        det.db = window_for(t);
        if det.method.uses_phi() && y.p() > t && det.phi != 1.0 {
            det.phi = 1.0;
            log.phi_forced = true;
        }
        let sampler = NullSampler::Permutation(panel.clone());
        let s = test_seed(seed, panel.label(1), t);
        let at_t = |e: Error| Error::Detection { t, source: Box::new(e) };
        let build = || build_null(&det, t, &sampler, cfg.b, s);
        let reference: NullReference = match cache {
            Some(c) => c.get_or_build(&config_digest(&det, t, &sampler, cfg.b, s), build),
            None => build(),
        }
        .map_err(at_t)?;
        let threshold = reference.threshold(cfg.alpha)?;
        let scored = reference.score(&det, &panel).map_err(at_t)?;
        log.tests += 1;
        if scored.stat > threshold {
            let k = scored.day;
            let day = start + k;
            let label = y.label(day);
            log.entries.push(DetectionEntry {
                day,
                label,
                date: y.date_of_label(label),
                method: det.method,
                statistic: scored.stat,
                p_value: scored.p_value,
                db: det.db,
                t_at_test: t,
                run_start: start + 1,
            });
            start += k - 1;
            t = FIRST_TEST_T;
        } else {
            t += 1;
        }
    }
    Ok(log)
}
