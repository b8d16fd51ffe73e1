//! Crosier's multivariate CUSUM.
//!
//! With `v_t = S_{t−1} + y_t − μ̂` and `b_t = ‖v_t‖_{Σ̂⁻¹}`, the state
//! shrinks toward zero by `a` each day, `S_t = v_t (1 − a/b_t)`, and resets
//! to zero once `b_t ≤ a`. The monitored statistic is `S_tᵀ Σ̂⁻¹ S_t`.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::pooled_estimates;
use crate::linalg::Precision;
use crate::model::FeatureMatrix;
use crate::scan::{window, CandidateScan, ScanMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CusumConvention {
    /// `b_t` is the Mahalanobis length of `v_t`; no absolute values.
    #[default]
    Crosier,
    /// `b_t = v_tᵀ Σ̂⁻¹ v_t` and `S_t = (S_{t−1} + |y_t − μ̂|)(1 − a/b_t)`.
    Literal,
}

/// Days the in-control mean and covariance are estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CusumBaseline {
    /// Days before the search window.
    #[default]
    PreWindow,
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CusumOptions {
    /// Reset threshold; `√p` when unset.
    pub a: Option<f64>,
    pub convention: CusumConvention,
    pub baseline: CusumBaseline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CusumState {
    pub s: DVector<f64>,
    pub last_b: f64,
    pub reset_count: usize,
}

impl CusumState {
    pub fn new(p: usize) -> Self {
        CusumState {
            s: DVector::zeros(p),
            last_b: 0.0,
            reset_count: 0,
        }
    }

    /// `S_tᵀ Σ̂⁻¹ S_t`.
    pub fn statistic(&self, precision: &Precision) -> f64 {
        precision.quad(&self.s)
    }
}

/// One update of the recursion.
pub fn cusum_step(
    state: &CusumState,
    y_t: DVectorView<f64>,
    mu_hat: &DVector<f64>,
    precision: &Precision,
    a: f64,
    convention: CusumConvention,
) -> Result<CusumState> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("CUSUM threshold a={a} must be positive")));
    }
    let dev = y_t - mu_hat;
    let v = &state.s + &dev;
    let b = match convention {
        CusumConvention::Crosier => precision.quad(&v).sqrt(),
        CusumConvention::Literal => precision.quad(&v),
    };
    if b > a {
        let carried = match convention {
            CusumConvention::Crosier => v,
            CusumConvention::Literal => &state.s + dev.abs(),
        };
        Ok(CusumState {
            s: carried * (1.0 - a / b),
            last_b: b,
            reset_count: state.reset_count,
        })
    } else {
        Ok(CusumState {
            s: DVector::zeros(v.len()),
            last_b: b,
            reset_count: state.reset_count + 1,
        })
    }
}

/// Runs the recursion from day 1 with `S_0 = 0` and returns the window of
/// `S_tᵀ Σ̂⁻¹ S_t` for `T−db ≤ t ≤ T−1`.
pub fn cusum_max(y: &FeatureMatrix, db: usize, options: &CusumOptions) -> Result<CandidateScan> {
    y.require_complete()?;
    let days = window(y.t(), db, 1)?;
    let first = *days.start();
    let est = match options.baseline {
        CusumBaseline::PreWindow => {
            let n = first - 1;
            if n < 2 {
                return Err(Error::InsufficientData { needed: 2, got: n });
            }
            pooled_estimates(&y.slice_days(0..n))?
        }
        CusumBaseline::Pooled => pooled_estimates(y)?,
    };
    let prec = baseline_precision(&est.cov, est.n_used)?;
    let a = options.a.unwrap_or((y.p() as f64).sqrt());
    let values = y.values();
    let mut state = CusumState::new(y.p());
    let mut stats = Vec::with_capacity(db);
    for t in 1..=*days.end() {
        state = cusum_step(&state, values.column(t - 1), &est.mean, &prec, a, options.convention)?;
        if t >= first {
            stats.push((t, state.statistic(&prec)));
        }
    }
    Ok(CandidateScan::from_stats(ScanMethod::Cusum, stats))
}

fn baseline_precision(cov: &DMatrix<f64>, n: usize) -> Result<Precision> {
    Precision::from_cov(cov, "CUSUM baseline covariance").map_err(|e| match e {
        Error::NotPositiveDefinite { min_eigenvalue, .. } => Error::NotPositiveDefinite {
            what: format!("CUSUM baseline covariance from {n} days (need more days than features)"),
            min_eigenvalue,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_null;

    fn unit() -> Precision {
        Precision::from_cov(&DMatrix::identity(1, 1), "unit").unwrap()
    }

    fn step(state: &CusumState, y: f64) -> CusumState {
        let y = DVector::from_element(1, y);
        cusum_step(state, y.column(0), &DVector::zeros(1), &unit(), 1.0, CusumConvention::Crosier)
            .unwrap()
    }

    #[test]
    fn small_deviation_resets() {
        let s = step(&CusumState::new(1), 0.5);
        assert_eq!(s.s[0], 0.0);
        assert_eq!(s.reset_count, 1);
    }

    #[test]
    fn large_deviation_shrinks_by_a() {
        let s = step(&CusumState::new(1), 3.0);
        assert_eq!(s.last_b, 3.0);
        assert!((s.s[0] - 2.0).abs() < 1e-15);
        assert!((s.statistic(&unit()) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn spike_decays_then_resets() {
        // v = 3 → S = 2; v = 2 → S = 1; v = 1 = a → reset.
        let s1 = step(&CusumState::new(1), 3.0);
        let s2 = step(&s1, 0.0);
        let s3 = step(&s2, 0.0);
        let stats: Vec<f64> = [&s1, &s2, &s3].iter().map(|s| s.statistic(&unit())).collect();
        assert!((stats[0] - 4.0).abs() < 1e-14);
        assert!((stats[1] - 1.0).abs() < 1e-14);
        assert_eq!(stats[2], 0.0);
        assert_eq!(s3.reset_count, 1);
    }

    #[test]
    fn at_baseline_stays_zero() {
        let mut s = CusumState::new(1);
        for _ in 0..10 {
            s = step(&s, 0.0);
            assert_eq!(s.s[0], 0.0);
        }
        assert_eq!(s.reset_count, 10);
    }

    #[test]
    fn literal_convention_uses_absolute_deviation() {
        let y = DVector::from_element(1, -3.0);
        let s = cusum_step(
            &CusumState::new(1),
            y.column(0),
            &DVector::zeros(1),
            &unit(),
            1.0,
            CusumConvention::Literal,
        )
        .unwrap();
        // b = 9, S = 3 (1 − 1/9).
        assert_eq!(s.last_b, 9.0);
        assert!((s.s[0] - 3.0 * (8.0 / 9.0)).abs() < 1e-15);
    }

    #[test]
    fn huge_threshold_always_resets() {
        let y = generate_null(30, 3, &DVector::zeros(3), &DMatrix::identity(3, 3), 2).unwrap();
        let opts = CusumOptions {
            a: Some(1e300),
            ..Default::default()
        };
        assert_eq!(cusum_max(&y, 7, &opts).unwrap().max_stat, 0.0);
    }

    #[test]
    fn zero_deviation_panel_scores_zero() {
        let mut v = DMatrix::zeros(1, 12);
        v[(0, 0)] = 1.0;
        v[(0, 1)] = -1.0;
        let y = FeatureMatrix::complete(v);
        let s = cusum_max(&y, 3, &CusumOptions::default()).unwrap();
        assert_eq!(s.max_stat, 0.0);
        assert_eq!(s.stats.len(), 3);
    }
}
