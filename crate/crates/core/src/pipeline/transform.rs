//! Rank-normal transform and penalized day-of-week adjustment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::pipeline::segment::{impute, segment, Imputed, SegmentRule};

pub const BLOM_OFFSET: f64 = 0.375;

/// Average 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// `Φ⁻¹((r − c) / (n − 2c + 1))` of the average rank `r` of each value.
pub fn inverse_normal_transform(x: &[f64], offset: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    if !(0.0..=0.5).contains(&offset) {
        return Err(Error::InvalidParameter(format!("rank offset {offset} outside [0, 0.5]")));
    }
    if x.iter().all(|v| *v == x[0]) {
        log::warn!("rank-normal transform of {n} equal values maps all to 0");
    }
    let nf = n as f64;
    let norm = std_normal();
    Ok(average_ranks(x)
        .into_iter()
        .map(|r| norm.inverse_cdf((r - offset) / (nf - 2.0 * offset + 1.0)))
        .collect())
}

/// Orthonormal basis of the sum-to-zero subspace of `R⁷` (Helmert columns).
fn sum_to_zero_basis() -> DMatrix<f64> {
    DMatrix::from_fn(7, 6, |i, j| {
        let j1 = (j + 1) as f64;
        let norm = (j1 * (j1 + 1.0)).sqrt();
        if i <= j {
            1.0 / norm
        } else if i == j + 1 {
            -j1 / norm
        } else {
            0.0
        }
    })
}

/// Residuals of `x` on an intercept plus seven sum-to-zero weekday effects
/// with ridge penalty `lambda ‖γ‖²` on the effects only.
///
/// The penalized least-squares problem is solved as an augmented system by
/// SVD, so `lambda = 0` with an unobserved weekday takes the minimum-norm
/// fit; the residuals are unique either way.
pub fn dow_residualize(x: &[f64], weekday: &[usize], lambda: f64) -> Result<Vec<f64>> {
    let n = x.len();
    if weekday.len() != n {
        return Err(Error::InvalidParameter("weekday labels differ in length from x".into()));
    }
    if weekday.iter().any(|&w| w > 6) {
        return Err(Error::InvalidParameter("weekday labels must lie in 0..=6".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("lambda={lambda} must be nonnegative")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if lambda.is_infinite() {
        let mean = x.iter().sum::<f64>() / n as f64;
        return Ok(x.iter().map(|v| v - mean).collect());
    }
    let c = sum_to_zero_basis();
    let mut a = DMatrix::zeros(n + 6, 7);
    for (t, &w) in weekday.iter().enumerate() {
        a[(t, 0)] = 1.0;
        for j in 0..6 {
            a[(t, j + 1)] = c[(w, j)];
        }
    }
    let root = lambda.sqrt();
    for j in 0..6 {
        a[(n + j, j + 1)] = root;
    }
    let mut b = DVector::zeros(n + 6);
    b.rows_mut(0, n).copy_from(&DVector::from_column_slice(x));
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&b, 1e-12 * svd.singular_values.max())
        .map_err(|e| Error::InvalidParameter(format!("weekday fit failed: {e}")))?;
    let fitted = a.rows(0, n) * coef;
    Ok(x.iter().zip(fitted.iter()).map(|(v, f)| v - f).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub int_offset: f64,
    pub ridge_lambda: f64,
    /// Compute each day's transform from that day and earlier ones only.
    pub causal: bool,
    pub segment: SegmentRule,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            int_offset: BLOM_OFFSET,
            ridge_lambda: 10.0,
            causal: false,
            segment: SegmentRule::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.int_offset) {
            return Err(Error::InvalidParameter(format!(
                "int_offset={} outside [0, 0.5]",
                self.int_offset
            )));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ridge_lambda={} must be nonnegative",
                self.ridge_lambda
            )));
        }
        Ok(())
    }
}

fn residualize_series(x: &[f64], weekday: &[usize], cfg: &PreprocessConfig) -> Result<Vec<f64>> {
    if !cfg.causal {
        let z = inverse_normal_transform(x, cfg.int_offset)?;
        return dow_residualize(&z, weekday, cfg.ridge_lambda);
    }
    // Day 1 has no history to rank against and maps to 0.
    let mut out = vec![0.0; x.len()];
    for t in 1..x.len() {
        let z = inverse_normal_transform(&x[..=t], cfg.int_offset)?;
        out[t] = *dow_residualize(&z, &weekday[..=t], cfg.ridge_lambda)?
            .last()
            .expect("nonempty");
    }
    Ok(out)
}

/// Rank-normal transform then weekday adjustment of each feature of a
/// complete panel.
pub fn residualize_panel(y: &FeatureMatrix, cfg: &PreprocessConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    y.require_complete()?;
    let weekday: Vec<usize> = (0..y.t()).map(|j| y.weekday(j)).collect();
    let mut out = DMatrix::zeros(y.p(), y.t());
    for i in 0..y.p() {
        let row: Vec<f64> = y.values().row(i).iter().copied().collect();
        let r = residualize_series(&row, &weekday, cfg)?;
        out.row_mut(i).copy_from_slice(&r);
    }
    Ok(y.with_values(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedSegment {
    pub residuals: FeatureMatrix,
    pub imputed: Imputed,
}

/// Segment, impute, and residualize a raw stream.
pub fn preprocess(y: &FeatureMatrix, cfg: &PreprocessConfig) -> Result<Vec<PreprocessedSegment>> {
    cfg.validate()?;
    segment(y, &cfg.segment)
        .iter()
        .map(|s| {
            let imputed = impute(s)?;
            let residuals = residualize_panel(&imputed.panel, cfg)?;
            Ok(PreprocessedSegment { residuals, imputed })
        })
        .collect()
}

/// Mean absolute autocorrelation over lags `1..=max_lag` and features;
/// constant features are skipped.
pub fn mean_abs_autocorrelation(y: &FeatureMatrix, max_lag: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..y.p() {
        let x: Vec<f64> = y.values().row(i).iter().copied().collect();
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let denom: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        if !(denom > 0.0) {
            continue;
        }
        for h in 1..=max_lag.min(n.saturating_sub(1)) {
            let num: f64 = (0..n - h).map(|t| (x[t] - mean) * (x[t + h] - mean)).sum();
            total += (num / denom).abs();
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Mean absolute lag-1..7 residual autocorrelation across segments for
/// each candidate `λ`.
pub fn tune_lambda(
    segments: &[FeatureMatrix],
    grid: &[f64],
    cfg: &PreprocessConfig,
) -> Result<Vec<(f64, f64)>> {
    grid.iter()
        .map(|&lambda| {
            let c = PreprocessConfig {
                ridge_lambda: lambda,
                ..*cfg
            };
            let mut scores = Vec::new();
            for s in segments {
                let r = residualize_panel(s, &c)?;
                if let Some(a) = mean_abs_autocorrelation(&r, 7) {
                    scores.push(a);
                }
            }
            if scores.is_empty() {
                return Err(Error::InsufficientData { needed: 1, got: 0 });
            }
            Ok((lambda, scores.iter().sum::<f64>() / scores.len() as f64))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_maps_to_zero() {
        let z = inverse_normal_transform(&[5.0, 1.0, 9.0], BLOM_OFFSET).unwrap();
        assert!(z[0].abs() < 1e-15);
        assert!(z[1] < 0.0 && z[2] > 0.0);
    }

    #[test]
    fn two_values_antisymmetric() {
        let z = inverse_normal_transform(&[2.0, -1.0], BLOM_OFFSET).unwrap();
        let expect = std_normal().inverse_cdf(5.0 / 18.0);
        assert!((z[1] - expect).abs() < 1e-14);
        assert!((z[0] + z[1]).abs() < 1e-14);
    }

    #[test]
    fn ties_share_ranks_and_constant_maps_to_zero() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        let z = inverse_normal_transform(&[4.0; 5], BLOM_OFFSET).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        assert!(inverse_normal_transform(&[1.0], BLOM_OFFSET).is_err());
    }

    fn weekdays(n: usize) -> Vec<usize> {
        (0..n).map(|t| t % 7).collect()
    }

    #[test]
    fn infinite_penalty_centers() {
        let x: Vec<f64> = (0..21).map(|t| ((t * 7919) % 13) as f64).collect();
        let mean = x.iter().sum::<f64>() / 21.0;
        let r = dow_residualize(&x, &weekdays(21), f64::INFINITY).unwrap();
        let big = dow_residualize(&x, &weekdays(21), 1e12).unwrap();
        for t in 0..21 {
            assert!((r[t] - (x[t] - mean)).abs() < 1e-12);
            assert!((big[t] - r[t]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_penalty_balanced_subtracts_weekday_means() {
        let x: Vec<f64> = (0..28).map(|t| ((t * 31) % 17) as f64 * 0.5 - 3.0).collect();
        let w = weekdays(28);
        let r = dow_residualize(&x, &w, 0.0).unwrap();
        for t in 0..28 {
            let group: Vec<f64> = (0..28).filter(|s| w[*s] == w[t]).map(|s| x[s]).collect();
            let m = group.iter().sum::<f64>() / group.len() as f64;
            assert!((r[t] - (x[t] - m)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_series_has_zero_residuals() {
        let r = dow_residualize(&[2.5; 10], &weekdays(10), 3.0).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert!(dow_residualize(&[1.0], &[0], -1.0).is_err());
    }

    #[test]
    fn causal_mode_uses_only_the_past() {
        let vals: Vec<f64> = (0..20).map(|t| ((t * 37) % 11) as f64).collect();
        let y = FeatureMatrix::complete(DMatrix::from_row_slice(1, 20, &vals));
        let cfg = PreprocessConfig {
            causal: true,
            ..Default::default()
        };
        let full = residualize_panel(&y, &cfg).unwrap();
        let prefix = residualize_panel(&y.slice_days(0..12), &cfg).unwrap();
        for j in 0..12 {
            assert_eq!(full.values()[(0, j)], prefix.values()[(0, j)]);
        }
    }
}
