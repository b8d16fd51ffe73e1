//! Iterative choice of the correlation shrinkage `φ` by simulated power.

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, Method};
use crate::error::{Error, Result};
use crate::estimators::{pooled_estimates, regularize};
use crate::inference::calibrate::{calibrate_with, estimate_power, CalibrationOptions, PowerEstimate};
use crate::inference::null::build_null;
use crate::model::{ChangeKind, FeatureMatrix, ScenarioSampler, ScenarioSpec};
use crate::rng::{derive_seed, tag};
use crate::sampler::NullSampler;

pub const PHI_GRID: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const INITIAL_PHI: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiOptions {
    pub db: usize,
    /// Post-change days of the simulated mean shift.
    pub k_star: usize,
    pub max_iterations: usize,
    pub calibration: CalibrationOptions,
}

impl Default for PhiOptions {
    fn default() -> Self {
        PhiOptions {
            db: 7,
            k_star: 4,
            max_iterations: 5,
            calibration: CalibrationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiIteration {
    /// `φ` used for the null and the calibration.
    pub phi_in: f64,
    /// Mean-change `τ` calibrated to the target power at `phi_in`.
    pub tau: f64,
    /// Power per grid point; `None` where the null could not be built.
    pub grid: Vec<(f64, Option<PowerEstimate>)>,
    pub selected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiSelection {
    pub phi: f64,
    pub iterations: Vec<PhiIteration>,
    /// Two consecutive iterations agreed.
    pub converged: bool,
    /// `p > T`; `φ = 1` without search.
    pub forced: bool,
}

/// Grid argmax with ties to the larger `φ`.
fn argmax_power(grid: &[(f64, Option<PowerEstimate>)]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &(phi, pow) in grid {
        if let Some(pw) = pow {
            if best.is_none_or(|(_, b)| pw.power >= b) {
                best = Some((phi, pw.power));
            }
        }
    }
    best.map(|(phi, _)| phi)
}

/// Selects `φ` for VC* on pre-change data `y`.
///
/// Returns 1 at once when `p > T`. Otherwise, starting from 0.9: simulate
/// panels of `T` days from `N(μ̂*, Σ̂*(φ))`, calibrate a mean change to the
/// target power at the current `φ`, score that change for every grid `φ`
/// against its own null, and move to the best grid point. Stops after
/// `max_iterations` or when two consecutive selections agree.
pub fn select_phi(y: &FeatureMatrix, opts: &PhiOptions, seed: u64) -> Result<PhiSelection> {
    y.require_complete()?;
    let (p, t) = (y.p(), y.t());
    if p > t {
        return Ok(PhiSelection {
            phi: 1.0,
            iterations: Vec::new(),
            converged: true,
            forced: true,
        });
    }
    if opts.max_iterations == 0 {
        return Err(Error::InvalidParameter("max_iterations must be positive".into()));
    }
    let est = pooled_estimates(y)?;
    let spec = ScenarioSpec {
        t,
        p,
        k_star: opts.k_star,
        rho: 0.0,
        change_kind: ChangeKind::MeanOnly,
        effect: 0.0,
        omega: 1.0,
        phi: INITIAL_PHI,
        seed,
    };
    let cal = &opts.calibration;
    let base = derive_seed(seed, tag::PHI);
    let mut phi = INITIAL_PHI;
    let mut iterations: Vec<PhiIteration> = Vec::new();
    for i in 0..opts.max_iterations {
        let iter_seed = derive_seed(base, i as u64);
        let null_seed = derive_seed(iter_seed, tag::NULL);
        let power_seed = derive_seed(iter_seed, tag::POWER);
        let sigma = regularize(&est, phi, y.feature_names())?.sigma_star_phi;
        let scenario = ScenarioSampler::with_params(&spec, est.mean.clone(), sigma)?;
        let sampler = NullSampler::Parametric(scenario.source().clone());
        let det = |phi: f64| Detector::new(Method::VcStar, opts.db).with_phi(phi);

        let reference = build_null(&det(phi), t, &sampler, cal.null_b, null_seed)?;
        let tau = calibrate_with(&det(phi), &scenario, &reference, cal, power_seed)?.effect;
        let shifted = scenario.with_effect(tau);

        let grid: Vec<(f64, Option<PowerEstimate>)> = PHI_GRID
            .iter()
            .map(|&g| {
                let power = build_null(&det(g), t, &sampler, cal.null_b, null_seed)
                    .and_then(|r| estimate_power(&det(g), &shifted, &r, cal.alpha, cal.reps, power_seed));
                match power {
                    Ok(pw) => (g, Some(pw)),
                    Err(e) => {
                        log::warn!("phi={g} excluded from grid: {e}");
                        (g, None)
                    }
                }
            })
            .collect();
        let selected = argmax_power(&grid)
            .ok_or_else(|| Error::Calibration("every grid phi failed".into()))?;
        let repeat = iterations.last().is_some_and(|prev| prev.selected == selected);
        log::info!("phi iteration {}: phi_in={phi} tau={tau:.4e} selected={selected}", i + 1);
        iterations.push(PhiIteration {
            phi_in: phi,
            tau,
            grid,
            selected,
        });
        phi = selected;
        if repeat {
            return Ok(PhiSelection {
                phi,
                iterations,
                converged: true,
                forced: false,
            });
        }
    }
    Ok(PhiSelection {
        phi,
        iterations,
        converged: false,
        forced: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_null;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn more_features_than_days_forces_one() {
        let y = generate_null(6, 10, &DVector::zeros(10), &DMatrix::identity(10, 10), 1).unwrap();
        let s = select_phi(&y, &PhiOptions::default(), 1).unwrap();
        assert_eq!(s.phi, 1.0);
        assert!(s.forced && s.iterations.is_empty());
    }

    #[test]
    fn grid_excludes_one_and_ties_go_up() {
        assert!(!PHI_GRID.contains(&1.0));
        let pw = |x| Some(PowerEstimate::from_count(x, 10));
        assert_eq!(argmax_power(&[(0.0, pw(5)), (0.1, pw(7)), (0.2, pw(7)), (0.3, None)]), Some(0.2));
        assert_eq!(argmax_power(&[(0.0, None)]), None);
    }
}
