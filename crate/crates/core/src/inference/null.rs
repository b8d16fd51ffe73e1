//! Monte Carlo and permutation null distributions of max statistics.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::baselines::divergence::{null_scans, DivergenceTable};
use crate::detector::{Detector, Method};
use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::rng::stream_rng;
use crate::sampler::NullSampler;

/// Sorted replicate statistics under no change.
#[derive(Debug, Clone, PartialEq)]
pub struct NullDistribution {
    samples: Vec<f64>,
    method: String,
    config_digest: String,
}

impl NullDistribution {
    pub fn new(mut samples: Vec<f64>, method: impl Into<String>, config_digest: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter("null distribution needs at least one sample".into()));
        }
        if samples.iter().any(|s| s.is_nan()) {
            return Err(Error::InvalidParameter("null samples contain NaN".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(NullDistribution {
            samples,
            method: method.into(),
            config_digest: config_digest.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn b(&self) -> usize {
        self.samples.len()
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }
}

/// The `⌈(1−α)B⌉`-th order statistic: the smallest sample `c` with
/// `#{samples > c} / B ≤ α` (ties aside). Reject when a statistic exceeds it.
pub fn threshold(nd: &NullDistribution, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha={alpha} outside (0,1)")));
    }
    let b = nd.b();
    // Guard against (1−α)B landing a rounding error above an integer.
    let rank = (((1.0 - alpha) * b as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(nd.samples[rank.min(b) - 1])
}

/// `#{samples ≥ observed} / B`.
pub fn p_value(nd: &NullDistribution, observed: f64) -> f64 {
    let below = nd.samples.partition_point(|s| *s < observed);
    (nd.b() - below) as f64 / nd.b() as f64
}

/// A detector's calibrated null: the distribution of its max statistic and,
/// for the divergence, the per-candidate tables behind its p-value
/// adjustment.
#[derive(Debug, Clone, PartialEq)]
pub struct NullReference {
    pub null: NullDistribution,
    pub divergence: Option<DivergenceTable>,
}

/// Detector output on one panel, on the scale of its null distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    /// Max statistic; `1 − min p` for the divergence.
    pub stat: f64,
    /// Candidate attaining it (1-based position).
    pub day: usize,
    pub p_value: f64,
}

impl NullReference {
    pub fn threshold(&self, alpha: f64) -> Result<f64> {
        threshold(&self.null, alpha)
    }

    /// Max statistic without the final p-value lookup.
    pub fn statistic(&self, detector: &Detector, y: &FeatureMatrix) -> Result<(f64, usize)> {
        let scan = detector.scan(y)?;
        match (&detector.method, &self.divergence) {
            (Method::Divergence, Some(table)) => {
                let adj = table.adjust(&scan)?;
                Ok((1.0 - adj.min_pvalue, adj.best_day))
            }
            (Method::Divergence, None) => Err(Error::InvalidParameter(
                "divergence reference lacks its per-candidate null table".into(),
            )),
            _ => Ok((scan.max_stat, scan.argmax_day)),
        }
    }

    pub fn score(&self, detector: &Detector, y: &FeatureMatrix) -> Result<Scored> {
        let (stat, day) = self.statistic(detector, y)?;
        Ok(Scored {
            stat,
            day,
            p_value: p_value(&self.null, stat),
        })
    }
}

/// Cache key of a null build: detector tuning, shape, sampler content,
/// replicate count, and seed.
pub fn config_digest(detector: &Detector, t: usize, sampler: &NullSampler, b: usize, seed: u64) -> String {
    let text = format!(
        "v1;{};T={t};p={};sampler={};B={b};seed={seed}",
        detector.describe(),
        sampler.p(),
        sampler.fingerprint()
    );
    hex::encode(&Sha256::digest(text.as_bytes())[..16])
}

/// Scores `b` null panels of `t` days with `detector`.
///
/// Replicate `r` draws from stream `r` of `seed`, so results do not depend
/// on evaluation order. The divergence's own null replicates are
/// adjusted leave-one-out against the other `B − 1`.
pub fn build_null(
    detector: &Detector,
    t: usize,
    sampler: &NullSampler,
    b: usize,
    seed: u64,
) -> Result<NullReference> {
    if b < 1 {
        return Err(Error::InvalidParameter("B must be at least 1".into()));
    }
    let digest = config_digest(detector, t, sampler, b, seed);
    let method = detector.method.as_str();
    if detector.method == Method::Divergence {
        if b < 2 {
            return Err(Error::InvalidParameter("divergence null needs B ≥ 2".into()));
        }
        let scans = null_scans(t, detector.db, sampler, b, seed)?;
        let table = DivergenceTable::from_scans(&scans, detector.pvalue_rule);
        let samples = scans.iter().map(|s| 1.0 - table.adjust_left_out(s)).collect();
        return Ok(NullReference {
            null: NullDistribution::new(samples, method, digest)?,
            divergence: Some(table),
        });
    }
    let samples = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let y = sampler.draw(t, &mut stream_rng(seed, r))?;
            detector
                .scan(&y)
                .map(|s| s.max_stat)
                .map_err(|e| Error::Replicate {
                    replicate: r,
                    seed,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(NullReference {
        null: NullDistribution::new(samples, method, digest)?,
        divergence: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianSource;
    use nalgebra::{DMatrix, DVector};

    fn nd(samples: Vec<f64>) -> NullDistribution {
        NullDistribution::new(samples, "test", "digest").unwrap()
    }

    #[test]
    fn threshold_is_the_ceiling_order_statistic() {
        let d = nd((1..=1000).rev().map(|i| i as f64).collect());
        let c = threshold(&d, 0.05).unwrap();
        assert_eq!(c, 950.0);
        // Direct tail-proportion scan: smallest sample with at most 5% above it.
        let direct = d
            .samples()
            .iter()
            .copied()
            .find(|c| d.samples().iter().filter(|s| *s > c).count() as f64 / 1000.0 <= 0.05)
            .unwrap();
        assert_eq!(c, direct);
        assert_eq!(threshold(&d, 0.999_999).unwrap(), 1.0);
        assert_eq!(threshold(&nd(vec![1.0, 2.0, 3.0, 4.0]), 0.25).unwrap(), 3.0);
        assert_eq!(threshold(&nd(vec![1.0, 2.0, 3.0, 4.0]), 0.3).unwrap(), 3.0);
        assert_eq!(threshold(&nd(vec![1.0, 2.0, 3.0, 4.0]), 0.2).unwrap(), 4.0);
        assert!(threshold(&d, 0.0).is_err());
        assert!(threshold(&d, 1.0).is_err());
    }

    #[test]
    fn p_value_counts_ties() {
        let d = nd(vec![3.0, 1.0, 2.0, 5.0, 4.0]);
        assert_eq!(p_value(&d, 6.0), 0.0);
        assert_eq!(p_value(&d, 1.0), 1.0);
        assert_eq!(p_value(&d, -1.0), 1.0);
        assert_eq!(p_value(&d, 3.0), 0.6);
    }

    fn gaussian(p: usize) -> NullSampler {
        NullSampler::Parametric(GaussianSource::new(DVector::zeros(p), DMatrix::identity(p, p)).unwrap())
    }

    #[test]
    fn build_null_is_deterministic() {
        let det = Detector::new(Method::VcStar, 3);
        let a = build_null(&det, 15, &gaussian(3), 40, 9).unwrap();
        let b = build_null(&det, 15, &gaussian(3), 40, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.null.b(), 40);
        let c = build_null(&det, 15, &gaussian(3), 40, 10).unwrap();
        assert_ne!(a.null.samples(), c.null.samples());
        assert_ne!(a.null.config_digest(), c.null.config_digest());
    }

    #[test]
    fn permuting_identical_days_gives_constant_null() {
        let y = FeatureMatrix::complete(DMatrix::from_element(2, 12, 0.7));
        let det = Detector::new(Method::Divergence, 3);
        let r = build_null(&det, 12, &NullSampler::Permutation(y), 30, 1).unwrap();
        let s = r.null.samples();
        assert!(s.iter().all(|v| *v == s[0]));
    }

    #[test]
    fn replicate_failure_carries_seed() {
        // p > T makes the pooled covariance singular on every replicate.
        let det = Detector::new(Method::Hotelling, 2);
        match build_null(&det, 5, &gaussian(8), 10, 77) {
            Err(Error::Replicate { seed, .. }) => assert_eq!(seed, 77),
            other => panic!("{other:?}"),
        }
    }
}
