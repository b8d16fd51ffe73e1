use crate::error::{Error, Result};
use crate::estimators::pooled_estimates;
use crate::linalg::Precision;
use crate::model::FeatureMatrix;
use crate::scan::{window, CandidateScan, ScanMethod};

/// `max_{T−db ≤ t ≤ T−1} (y_t − μ̂)ᵀ Σ̂⁻¹ (y_t − μ̂)` with pooled estimates.
pub fn hotelling_max(y: &FeatureMatrix, db: usize) -> Result<CandidateScan> {
    let days = window(y.t(), db, 1)?;
    let est = pooled_estimates(y)?;
    let prec = Precision::from_cov(&est.cov, "pooled covariance").map_err(|e| match e {
        Error::NotPositiveDefinite { min_eigenvalue, .. } => Error::NotPositiveDefinite {
            what: format!(
                "pooled covariance of {} features over {} days (reduce p below T or preprocess)",
                y.p(),
                y.t()
            ),
            min_eigenvalue,
        },
        other => other,
    })?;
    let values = y.values();
    let stats = days
        .map(|t| (t, prec.quad(&(values.column(t - 1) - &est.mean))))
        .collect();
    Ok(CandidateScan::from_stats(ScanMethod::Hotelling, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn scalar_window_values() {
        // Pooled mean 0 and variance 24/6 = 4; window days 5 and 6 hold 2 and −4.
        let y = FeatureMatrix::complete(DMatrix::from_row_slice(
            1,
            7,
            &[1.0, 1.0, 1.0, -1.0, 2.0, -4.0, 0.0],
        ));
        let s = hotelling_max(&y, 2).unwrap();
        assert_eq!(s.stats.len(), 2);
        assert!((s.get(5).unwrap() - 1.0).abs() < 1e-12);
        assert!((s.get(6).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(s.argmax_day, 6);
    }

    #[test]
    fn window_at_mean_gives_zero() {
        let y = FeatureMatrix::complete(DMatrix::from_row_slice(1, 5, &[1.0, 0.0, 0.0, 0.0, -1.0]));
        assert_eq!(hotelling_max(&y, 3).unwrap().max_stat, 0.0);
    }

    #[test]
    fn singular_covariance_is_reported() {
        let y = FeatureMatrix::complete(DMatrix::from_fn(5, 4, |i, j| (i * j) as f64));
        assert!(matches!(hotelling_max(&y, 2), Err(Error::NotPositiveDefinite { .. })));
    }
}
