//! Summaries across detection logs.

use std::collections::{BTreeSet, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::online::DetectionLog;
use crate::pipeline::transform::average_ranks;
use crate::rng::stream_rng;

/// Detections per monitored day, imputed days included.
pub fn changepoint_rate(log: &DetectionLog, n_days: usize) -> Result<f64> {
    if n_days == 0 {
        return Err(Error::InvalidParameter("rate needs at least one day".into()));
    }
    Ok(log.entries.len() as f64 / n_days as f64)
}

/// Jaccard similarity of the `(stream, day label)` detections of two sets
/// of logs covering the same streams. Two empty sets are identical.
pub fn method_similarity(a: &[DetectionLog], b: &[DetectionLog]) -> Result<f64> {
    let streams = |logs: &[DetectionLog]| -> BTreeSet<String> { logs.iter().map(|l| l.stream_id.clone()).collect() };
    let (sa, sb) = (streams(a), streams(b));
    if sa != sb {
        return Err(Error::InvalidParameter(format!(
            "logs cover different streams: {sa:?} vs {sb:?}"
        )));
    }
    let days = |logs: &[DetectionLog]| -> HashSet<(String, i64)> {
        logs.iter()
            .flat_map(|l| l.entries.iter().map(move |e| (l.stream_id.clone(), e.label)))
            .collect()
    };
    let (da, db) = (days(a), days(b));
    let union = da.union(&db).count();
    if union == 0 {
        return Ok(1.0);
    }
    Ok(da.intersection(&db).count() as f64 / union as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpearmanResult {
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Resamples with a defined correlation.
    pub used: usize,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Spearman correlation with a percentile 95% interval from `b` paired
/// resamples. Resamples with a constant margin are skipped.
pub fn spearman_bootstrap(x: &[f64], y: &[f64], b: usize, seed: u64) -> Result<SpearmanResult> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::InvalidParameter("x and y differ in length".into()));
    }
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if b == 0 {
        return Err(Error::InvalidParameter("bootstrap needs B ≥ 1".into()));
    }
    let rho = spearman(x, y)
        .ok_or_else(|| Error::UndefinedCorrelation("a margin has zero rank variance".into()))?;
    let mut reps: Vec<f64> = (0..b as u64)
        .filter_map(|r| {
            let mut rng = stream_rng(seed, r);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            spearman(&xs, &ys)
        })
        .collect();
    if reps.is_empty() {
        return Err(Error::UndefinedCorrelation("every resample was degenerate".into()));
    }
    reps.sort_by(f64::total_cmp);
    Ok(SpearmanResult {
        rho,
        ci_low: quantile(&reps, 0.025),
        ci_high: quantile(&reps, 0.975),
        used: reps.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Method;
    use crate::pipeline::online::DetectionEntry;

    fn log(stream: &str, labels: &[i64]) -> DetectionLog {
        DetectionLog {
            stream_id: stream.into(),
            method: Method::VcStar,
            entries: labels
                .iter()
                .map(|&l| DetectionEntry {
                    day: l as usize,
                    label: l,
                    date: None,
                    method: Method::VcStar,
                    statistic: 1.0,
                    p_value: 0.0,
                    db: 7,
                    t_at_test: 20,
                    run_start: 1,
                })
                .collect(),
            tests: 10,
            days: 30,
            phi_forced: false,
        }
    }

    #[test]
    fn rates() {
        assert_eq!(changepoint_rate(&log("s", &[]), 30).unwrap(), 0.0);
        assert!((changepoint_rate(&log("s", &[9, 15, 22]), 30).unwrap() - 0.1).abs() < 1e-15);
        assert!(changepoint_rate(&log("s", &[]), 0).is_err());
    }

    #[test]
    fn similarity_cases() {
        let a = [log("s", &[8, 12])];
        assert_eq!(method_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(method_similarity(&a, &[log("s", &[20])]).unwrap(), 0.0);
        let b = [log("s", &[12, 15])];
        assert!((method_similarity(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(method_similarity(&a, &[log("t", &[8])]).is_err());
        // Same day on different streams does not match.
        let two_a = [log("s", &[8]), log("t", &[])];
        let two_b = [log("s", &[]), log("t", &[8])];
        assert_eq!(method_similarity(&two_a, &two_b).unwrap(), 0.0);
    }

    #[test]
    fn spearman_extremes_and_degenerate() {
        let x = [1.0, 4.0, 2.0, 8.0, 5.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let same = spearman_bootstrap(&x, &x, 200, 1).unwrap();
        assert!((same.rho - 1.0).abs() < 1e-15);
        assert!((spearman_bootstrap(&x, &neg, 200, 1).unwrap().rho + 1.0).abs() < 1e-15);
        assert!(matches!(
            spearman_bootstrap(&x, &[2.0; 5], 200, 1),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(same.ci_low <= same.ci_high);
    }

    #[test]
    fn independent_samples_cover_zero() {
        let mut covered = 0;
        for trial in 0..20u64 {
            let mut rng = stream_rng(99, trial);
            let x: Vec<f64> = (0..200).map(|_| rng.random()).collect();
            let y: Vec<f64> = (0..200).map(|_| rng.random()).collect();
            let s = spearman_bootstrap(&x, &y, 300, trial).unwrap();
            assert!(s.rho.abs() < 0.2);
            if s.ci_low <= 0.0 && 0.0 <= s.ci_high {
                covered += 1;
            }
        }
        assert!(covered >= 18, "covered {covered}/20");
    }
}
