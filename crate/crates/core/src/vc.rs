//! Variance-component score test for a change at day `k`.
//!
//! Treating the post-change shift as `β ~ N(0, τI)` makes the stacked
//! post-change days `e = vec(y_k − μ, …, y_T − μ)` Gaussian with covariance
//!
//! ```text
//! V(τ, δ) = I_m ⊗ (Σ + δI) + J_m ⊗ τI,    m = T − k + 1,
//! ```
//!
//! so at `(τ, δ) = (0, 0)`, with `A = Σ⁻¹` and `s = Σ_t e_t`,
//!
//! ```text
//! U_τ = ½ (sᵀA²s − m tr A)          U_δ = ½ (Σ_t e_tᵀA²e_t − m tr A)
//! I   = ½ tr(A²) [[m², m], [m, m]]
//! ```
//!
//! and `Q_k = Uᵀ I⁻¹ U`. `I` is the expected information and is
//! positive-definite for `m ≥ 2`.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::estimators::{pooled_estimates, regularize, Moments, MIN_PRECHANGE_DAYS};
use crate::linalg::Precision;
use crate::model::FeatureMatrix;
use crate::scan::{window, CandidateScan, ScanMethod};

pub use crate::scan::{EstimatorMode, Variant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParts {
    pub u_tau: f64,
    pub u_delta: f64,
    pub info: Matrix2<f64>,
    pub m: usize,
}

/// Score and information at `(τ, δ) = (0, 0)` for a change at day `k`
/// (1-based), with plug-in `μ̂`, `Σ̂`.
pub fn score_parts(
    y: &FeatureMatrix,
    k: usize,
    mu_hat: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
) -> Result<ScoreParts> {
    y.require_complete()?;
    if k < 1 || k > y.t() {
        return Err(Error::Window(format!("k={k} outside 1..={}", y.t())));
    }
    let m = y.t() + 1 - k;
    if m < 2 {
        return Err(Error::Window(format!("k={k} leaves m={m} post-change days")));
    }
    let prec = Precision::from_cov(sigma_hat, "sigma_hat")?;
    Ok(score_with(&prec, y.values(), k, mu_hat))
}

pub(crate) fn score_with(
    prec: &Precision,
    y: &DMatrix<f64>,
    k: usize,
    mu: &DVector<f64>,
) -> ScoreParts {
    let t = y.ncols();
    let m = t + 1 - k;
    let mut s = DVector::zeros(y.nrows());
    let mut sum_sq = 0.0;
    for j in (k - 1)..t {
        let e = y.column(j) - mu;
        sum_sq += prec.quad_sq(&e);
        s += e;
    }
    let mf = m as f64;
    let tr = prec.trace();
    let half_tr_sq = 0.5 * prec.trace_sq();
    ScoreParts {
        u_tau: 0.5 * (prec.quad_sq(&s) - mf * tr),
        u_delta: 0.5 * (sum_sq - mf * tr),
        info: Matrix2::new(mf * mf, mf, mf, mf) * half_tr_sq,
        m,
    }
}

/// `Q_k` for the chosen variant.
pub fn q_statistic(parts: &ScoreParts, variant: Variant) -> Result<f64> {
    let (a, b, d) = (parts.info[(0, 0)], parts.info[(0, 1)], parts.info[(1, 1)]);
    let (u1, u2) = (parts.u_tau, parts.u_delta);
    let singular = || Error::SingularInformation { m: parts.m };
    match variant {
        Variant::Full => {
            let det = a * d - b * b;
            if !(det > 0.0) {
                return Err(singular());
            }
            Ok((d * u1 * u1 - 2.0 * b * u1 * u2 + a * u2 * u2) / det)
        }
        Variant::MeanOnly if a > 0.0 => Ok(u1 * u1 / a),
        Variant::VarianceOnly if d > 0.0 => Ok(u2 * u2 / d),
        _ => Err(singular()),
    }
}

/// Precision for the regularized estimate behind `moments`.
fn precision_from(moments: &Moments, phi: f64, names: &[String]) -> Result<Precision> {
    if phi == 1.0 {
        let var = moments.cov().diagonal();
        if let Some(i) = var.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::DegenerateFeature {
                feature: names[i].clone(),
            });
        }
        return Ok(Precision::Diagonal(var.map(|v| 1.0 / v)));
    }
    let est = crate::estimators::MeanCov {
        mean: moments.mean().clone(),
        cov: moments.cov(),
        n_used: moments.n(),
    };
    let reg = regularize(&est, phi, names)?;
    Precision::from_cov(&reg.sigma_star_phi, "regularized covariance")
}

/// `Q_k` for every candidate `T−db ≤ k ≤ T−1`.
///
/// In prechange mode each candidate re-estimates `μ`, `Σ̂(φ)` from its own
/// pre-change days; in all-days mode one pooled estimate serves every
/// candidate.
pub fn scan(
    y: &FeatureMatrix,
    db: usize,
    variant: Variant,
    mode: EstimatorMode,
    phi: f64,
) -> Result<CandidateScan> {
    y.require_complete()?;
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidParameter(format!("phi={phi} outside [0,1]")));
    }
    let values = y.values();
    let names = y.feature_names();
    let mut stats = Vec::with_capacity(db);
    match mode {
        EstimatorMode::Prechange => {
            let days = window(y.t(), db, MIN_PRECHANGE_DAYS + 1)?;
            let first = *days.start();
            let mut moments = Moments::new(y.p(), phi < 1.0);
            for j in 0..first - 1 {
                moments.push(values.column(j));
            }
            for k in days {
                let prec = precision_from(&moments, phi, names)?;
                let parts = score_with(&prec, values, k, moments.mean());
                stats.push((k, q_statistic(&parts, variant)?));
                moments.push(values.column(k - 1));
            }
        }
        EstimatorMode::AllDays => {
            let days = window(y.t(), db, 2)?;
            let est = pooled_estimates(y)?;
            let reg = regularize(&est, phi, names)?;
            let prec = Precision::from_cov(&reg.sigma_star_phi, "regularized covariance")?;
            for k in days {
                let parts = score_with(&prec, values, k, &est.mean);
                stats.push((k, q_statistic(&parts, variant)?));
            }
        }
    }
    Ok(CandidateScan::from_stats(
        ScanMethod::Vc { variant, mode },
        stats,
    ))
}
