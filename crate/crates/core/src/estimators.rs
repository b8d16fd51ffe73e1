//! Mean and covariance estimators for the null parameters.
//!
//! The pooled estimator uses every day and is biased under a change; the
//! pre-change estimator uses days `1..k−1` only. `Σ̂*(φ)` shrinks the
//! pre-change correlation toward the identity while keeping the variances.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;

/// Fewest pre-change days a detector will estimate a covariance from.
pub const MIN_PRECHANGE_DAYS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanCov {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedCov {
    /// Diagonal of `V̂` (sample variances).
    pub v_hat: DVector<f64>,
    /// Sample correlation `R̂`.
    pub r_hat: DMatrix<f64>,
    pub phi: f64,
    /// `V̂^{1/2}[(1−φ)R̂ + φI]V̂^{1/2}`.
    pub sigma_star_phi: DMatrix<f64>,
}

/// Mean and unbiased covariance over the first `n` columns.
fn mean_cov_prefix(y: &DMatrix<f64>, n: usize) -> MeanCov {
    let p = y.nrows();
    let cols = y.columns(0, n);
    let mean = cols.column_mean();
    let mut scatter = DMatrix::zeros(p, p);
    for j in 0..n {
        let d = cols.column(j) - &mean;
        scatter.ger(1.0, &d, &d, 1.0);
    }
    MeanCov {
        mean,
        cov: scatter / (n as f64 - 1.0),
        n_used: n,
    }
}

/// Estimates over all `T` days, assuming no change.
pub fn pooled_estimates(y: &FeatureMatrix) -> Result<MeanCov> {
    y.require_complete()?;
    if y.t() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: y.t() });
    }
    Ok(mean_cov_prefix(y.values(), y.t()))
}

/// Estimates over days `1..k−1` (divisors `k−1` and `k−2`). `k = T + 1`
/// uses every day.
pub fn prechange_estimates(y: &FeatureMatrix, k: usize) -> Result<MeanCov> {
    y.require_complete()?;
    if k < 3 {
        return Err(Error::InsufficientPrechange { k, needed: 2 });
    }
    if k > y.t() + 1 {
        return Err(Error::Window(format!("k={k} beyond T+1={}", y.t() + 1)));
    }
    Ok(mean_cov_prefix(y.values(), k - 1))
}

/// Applies the `φ` shrinkage to an estimated covariance.
pub fn regularize(est: &MeanCov, phi: f64, names: &[String]) -> Result<RegularizedCov> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidParameter(format!("phi={phi} outside [0,1]")));
    }
    let p = est.cov.nrows();
    let v_hat = est.cov.diagonal();
    if let Some(i) = v_hat.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::DegenerateFeature {
            feature: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
        });
    }
    let sd = v_hat.map(f64::sqrt);
    let r_hat = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (est.cov[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0)
        }
    });
    let sigma_star_phi = DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            v_hat[i]
        } else {
            sd[i] * ((1.0 - phi) * r_hat[(i, j)]) * sd[j]
        }
    });
    Ok(RegularizedCov {
        v_hat,
        r_hat,
        phi,
        sigma_star_phi,
    })
}

/// `Σ̂*(φ)` from pre-change days `1..k−1`.
pub fn regularized_sigma(y: &FeatureMatrix, k: usize, phi: f64) -> Result<RegularizedCov> {
    let est = prechange_estimates(y, k)?;
    regularize(&est, phi, y.feature_names())
}

/// `(Bias_μ, Bias_Σ)` of the pooled estimators given a change at `k`.
pub fn theorem_bias(
    t: usize,
    k: usize,
    beta: &DVector<f64>,
    delta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if k < 2 || k > t {
        return Err(Error::InvalidParameter(format!("need 2 ≤ k ≤ T, got k={k}, T={t}")));
    }
    let (tf, kf) = (t as f64, k as f64);
    let post = (tf - kf + 1.0) / tf;
    let outer = (kf - 1.0) * (tf - kf + 1.0) / (tf * (tf - 1.0));
    let p = beta.len();
    let mu_bias = beta * post;
    let sigma_bias = DMatrix::identity(p, p) * (post * delta) + beta * beta.transpose() * outer;
    Ok((mu_bias, sigma_bias))
}

/// Running mean and scatter updated one day at a time (Welford).
///
/// Tracks only the diagonal of the scatter when `full` is false.
#[derive(Debug, Clone)]
pub(crate) struct Moments {
    n: usize,
    mean: DVector<f64>,
    scatter: Option<DMatrix<f64>>,
    sq: DVector<f64>,
}

impl Moments {
    pub(crate) fn new(p: usize, full: bool) -> Self {
        Moments {
            n: 0,
            mean: DVector::zeros(p),
            scatter: full.then(|| DMatrix::zeros(p, p)),
            sq: DVector::zeros(p),
        }
    }

    pub(crate) fn push(&mut self, x: DVectorView<f64>) {
        self.n += 1;
        let d = x - &self.mean;
        self.mean.axpy(1.0 / self.n as f64, &d, 1.0);
        let d2 = x - &self.mean;
        match &mut self.scatter {
            Some(s) => s.ger(1.0, &d, &d2, 1.0),
            None => self.sq += d.component_mul(&d2),
        }
    }

    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    /// Unbiased covariance; diagonal when only variances are tracked.
    pub(crate) fn cov(&self) -> DMatrix<f64> {
        let denom = self.n as f64 - 1.0;
        match &self.scatter {
            // Welford's rank-one update is not exactly symmetric in floating point.
            Some(s) => (s + s.transpose()) * (0.5 / denom),
            None => DMatrix::from_diagonal(&(&self.sq / denom)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FeatureMatrix;

    fn panel(p: usize, rows: &[f64]) -> FeatureMatrix {
        let t = rows.len() / p;
        FeatureMatrix::complete(DMatrix::from_column_slice(p, t, rows))
    }

    #[test]
    fn pooled_examples() {
        let est = pooled_estimates(&panel(1, &[1.0, 3.0])).unwrap();
        assert_eq!(est.mean[0], 2.0);
        assert_eq!(est.cov[(0, 0)], 2.0);

        let est = pooled_estimates(&panel(1, &[4.5, 4.5, 4.5])).unwrap();
        assert_eq!(est.mean[0], 4.5);
        assert_eq!(est.cov[(0, 0)], 0.0);

        let est = pooled_estimates(&panel(2, &[0.0, 0.0, 2.0, 2.0, 4.0, 4.0])).unwrap();
        assert_eq!(est.cov, DMatrix::from_element(2, 2, 4.0));

        assert!(matches!(
            pooled_estimates(&panel(1, &[1.0])),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn prechange_examples() {
        let y = panel(1, &[1.0, 2.0, 3.0, 10.0, 20.0]);
        assert_eq!(prechange_estimates(&y, 4).unwrap().mean[0], 2.0);
        assert_eq!(prechange_estimates(&y, 6).unwrap(), pooled_estimates(&y).unwrap());

        let y = panel(1, &[0.0, 2.0, 9.0]);
        let est = prechange_estimates(&y, 3).unwrap();
        assert_eq!(est.cov[(0, 0)], 2.0);
        assert_eq!(est.n_used, 2);
        assert!(matches!(
            prechange_estimates(&y, 2),
            Err(Error::InsufficientPrechange { k: 2, .. })
        ));
    }

    fn correlated_panel() -> FeatureMatrix {
        panel(
            3,
            &[
                0.1, 1.2, -0.3, 0.9, 0.4, 0.2, -1.1, -0.2, 0.8, 0.5, 0.7, -0.9, 2.0, 1.1, 0.3,
                0.0, 0.0, 0.0,
            ],
        )
    }

    #[test]
    fn regularization_endpoints() {
        let y = correlated_panel();
        let pre = prechange_estimates(&y, 6).unwrap();
        let r0 = regularized_sigma(&y, 6, 0.0).unwrap();
        assert!((r0.sigma_star_phi.clone() - &pre.cov).abs().max() < 1e-14);
        let r1 = regularized_sigma(&y, 6, 1.0).unwrap();
        assert_eq!(r1.sigma_star_phi, DMatrix::from_diagonal(&pre.cov.diagonal()));
    }

    #[test]
    fn regularization_half_of_unit_correlation() {
        let est = MeanCov {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]),
            n_used: 10,
        };
        let r = regularize(&est, 0.5, &[]).unwrap();
        assert!((r.sigma_star_phi[(0, 1)] - 0.4).abs() < 1e-15);
        assert_eq!(r.sigma_star_phi[(0, 0)], 1.0);
    }

    #[test]
    fn degenerate_feature_is_named() {
        let y = panel(2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0, 4.0, 5.0]);
        let y = y.with_names(vec!["steps".into(), "calls".into()]).unwrap();
        match regularized_sigma(&y, 4, 0.5) {
            Err(Error::DegenerateFeature { feature }) => assert_eq!(feature, "calls"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn linear_in_phi_off_diagonal() {
        let y = correlated_panel();
        let at = |phi| regularized_sigma(&y, 6, phi).unwrap().sigma_star_phi;
        let (a, b, c) = (at(0.0), at(0.4), at(1.0));
        for i in 0..3 {
            for j in 0..3 {
                let interp = 0.6 * a[(i, j)] + 0.4 * c[(i, j)];
                assert!((b[(i, j)] - interp).abs() < 1e-14);
            }
            assert_eq!(a[(i, i)], b[(i, i)]);
        }
    }

    #[test]
    fn theorem_bias_examples() {
        let (mb, sb) = theorem_bias(10, 8, &DVector::zeros(2), 0.0).unwrap();
        assert_eq!(mb.norm(), 0.0);
        assert_eq!(sb.norm(), 0.0);

        let beta = DVector::from_vec(vec![1.0, 0.0]);
        let (mb, sb) = theorem_bias(10, 8, &beta, 0.0).unwrap();
        assert!((mb[0] - 0.3).abs() < 1e-15);
        assert!((sb[(0, 0)] - 21.0 / 90.0).abs() < 1e-15);
        assert_eq!(sb[(1, 1)], 0.0);

        let (_, sb) = theorem_bias(10, 8, &DVector::zeros(3), 2.0).unwrap();
        assert!((sb - DMatrix::identity(3, 3) * 0.6).abs().max() < 1e-15);
    }

    #[test]
    fn welford_matches_two_pass() {
        let y = correlated_panel();
        let mut full = Moments::new(3, true);
        let mut diag = Moments::new(3, false);
        for j in 0..y.t() {
            full.push(y.values().column(j));
            diag.push(y.values().column(j));
        }
        let direct = pooled_estimates(&y).unwrap();
        assert!((full.cov() - &direct.cov).abs().max() < 1e-14);
        assert!((full.mean() - &direct.mean).abs().max() < 1e-15);
        assert!((diag.cov().diagonal() - direct.cov.diagonal()).abs().max() < 1e-14);
        assert_eq!(full.n(), 6);
    }
}
