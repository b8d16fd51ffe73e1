//! Monte Carlo power and bisection of the effect size onto a power target.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::error::{Error, Result};
use crate::inference::null::{build_null, NullReference};
use crate::model::{FeatureMatrix, ScenarioSampler, ScenarioSpec};
use crate::rng::{derive_seed, stream_rng, tag};
use crate::sampler::NullSampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerEstimate {
    pub power: f64,
    pub reps: usize,
    pub se: f64,
}

impl PowerEstimate {
    pub fn from_count(rejections: usize, reps: usize) -> Self {
        let power = rejections as f64 / reps as f64;
        PowerEstimate {
            power,
            reps,
            se: (power * (1.0 - power) / reps as f64).sqrt(),
        }
    }
}

/// Rejection rate of `detector` at level `alpha` on `reps` panels from
/// `scenario`. Replicate `r` uses stream `r` of `seed`, so two scenarios
/// differing only in effect size share their random inputs.
pub fn estimate_power(
    detector: &Detector,
    scenario: &ScenarioSampler,
    reference: &NullReference,
    alpha: f64,
    reps: usize,
    seed: u64,
) -> Result<PowerEstimate> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let c = reference.threshold(alpha)?;
    let rejections = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let draw = scenario.draw(&mut stream_rng(seed, r));
            let y = FeatureMatrix::complete(draw.values);
            reference
                .statistic(detector, &y)
                .map(|(stat, _)| usize::from(stat > c))
                .map_err(|e| Error::Replicate {
                    replicate: r,
                    seed,
                    source: Box::new(e),
                })
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    Ok(PowerEstimate::from_count(rejections, reps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub target_power: f64,
    pub alpha: f64,
    pub reps: usize,
    /// Null replicates behind the threshold.
    pub null_b: usize,
    pub tolerance: f64,
    /// First upper bracket; doubled until power reaches the target.
    pub initial_effect: f64,
    pub max_doublings: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            target_power: 0.8,
            alpha: 0.05,
            reps: 1000,
            null_b: 1000,
            tolerance: 0.02,
            initial_effect: 1.0,
            max_doublings: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub effect: f64,
    pub power: PowerEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub effect: f64,
    pub power: PowerEstimate,
    pub threshold: f64,
    /// Every evaluation in order.
    pub trace: Vec<TracePoint>,
}

/// Trace points, sorted by effect, whose power drops by more than twice the
/// larger standard error below that of a smaller effect.
pub fn monotonicity_violations(trace: &[TracePoint]) -> Vec<(TracePoint, TracePoint)> {
    let mut sorted = trace.to_vec();
    sorted.sort_by(|a, b| a.effect.total_cmp(&b.effect));
    let mut out = Vec::new();
    for (i, lo) in sorted.iter().enumerate() {
        for hi in &sorted[i + 1..] {
            if hi.effect > lo.effect && lo.power.power - hi.power.power > 2.0 * lo.power.se.max(hi.power.se) {
                out.push((*lo, *hi));
            }
        }
    }
    out
}

fn validate(opts: &CalibrationOptions) -> Result<()> {
    if !(opts.target_power > 0.0 && opts.target_power < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "target power {} outside (0,1)",
            opts.target_power
        )));
    }
    if !(opts.initial_effect > 0.0) || !(opts.tolerance > 0.0) {
        return Err(Error::InvalidParameter("initial effect and tolerance must be positive".into()));
    }
    Ok(())
}

/// Bisection on effect size against a fixed null reference, with power
/// evaluated under common random numbers.
pub fn calibrate_with(
    detector: &Detector,
    scenario: &ScenarioSampler,
    reference: &NullReference,
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<Calibration> {
    validate(opts)?;
    let threshold = reference.threshold(opts.alpha)?;
    let mut trace: Vec<TracePoint> = Vec::new();
    let eval = |effect: f64, trace: &mut Vec<TracePoint>| -> Result<PowerEstimate> {
        let power = estimate_power(
            detector,
            &scenario.with_effect(effect),
            reference,
            opts.alpha,
            opts.reps,
            seed,
        )?;
        trace.push(TracePoint { effect, power });
        let bad = monotonicity_violations(trace);
        if let Some((lo, hi)) = bad.first() {
            return Err(Error::Calibration(format!(
                "power not monotone in effect: {:.4} at effect {:.6e} vs {:.4} at {:.6e}; trace {:?}",
                lo.power.power, lo.effect, hi.power.power, hi.effect, trace
            )));
        }
        log::debug!("effect {effect:.6e}: power {:.4}", power.power);
        Ok(power)
    };
    let done = |p: &PowerEstimate| (p.power - opts.target_power).abs() <= opts.tolerance;
    let finish = |effect, power, trace| Calibration {
        effect,
        power,
        threshold,
        trace,
    };

    let p0 = eval(0.0, &mut trace)?;
    if p0.power >= opts.target_power - opts.tolerance {
        return Ok(finish(0.0, p0, trace));
    }
    let (mut lo, mut hi) = (0.0, opts.initial_effect);
    let mut p_hi = eval(hi, &mut trace)?;
    let mut doublings = 0;
    while p_hi.power < opts.target_power && !done(&p_hi) {
        if doublings == opts.max_doublings {
            return Err(Error::Calibration(format!(
                "no effect reached power {} after {} doublings (last {:.6e}: {:.4})",
                opts.target_power, doublings, hi, p_hi.power
            )));
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        p_hi = eval(hi, &mut trace)?;
    }
    if done(&p_hi) {
        return Ok(finish(hi, p_hi, trace));
    }
    loop {
        let mid = 0.5 * (lo + hi);
        let p_mid = eval(mid, &mut trace)?;
        if done(&p_mid) || hi - lo < 1e-3 * mid {
            return Ok(finish(mid, p_mid, trace));
        }
        if p_mid.power < opts.target_power {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Effect size at which `detector` reaches the target power on the
/// template's shape. The null uses the template's pre-change Gaussian.
pub fn calibrate_effect(
    template: &ScenarioSpec,
    detector: &Detector,
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<Calibration> {
    validate(opts)?;
    let scenario = ScenarioSampler::new(template)?;
    let sampler = NullSampler::Parametric(scenario.source().clone());
    let reference = build_null(
        detector,
        template.t,
        &sampler,
        opts.null_b,
        derive_seed(seed, tag::NULL),
    )?;
    calibrate_with(detector, &scenario, &reference, opts, derive_seed(seed, tag::CALIBRATE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Method;
    use crate::model::ChangeKind;

    fn pt(effect: f64, power: f64) -> TracePoint {
        TracePoint {
            effect,
            power: PowerEstimate::from_count((power * 100.0) as usize, 100),
        }
    }

    #[test]
    fn se_matches_binomial() {
        let p = PowerEstimate::from_count(800, 1000);
        assert!((p.se - (0.8f64 * 0.2 / 1000.0).sqrt()).abs() < 1e-15);
        assert_eq!(PowerEstimate::from_count(0, 10).se, 0.0);
    }

    #[test]
    fn audit_flags_large_drops_only() {
        assert!(monotonicity_violations(&[pt(0.0, 0.05), pt(1.0, 0.5), pt(2.0, 0.46)]).is_empty());
        let bad = monotonicity_violations(&[pt(0.0, 0.05), pt(1.0, 0.8), pt(2.0, 0.3)]);
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].0.effect, 1.0);
    }

    fn template() -> ScenarioSpec {
        ScenarioSpec {
            t: 20,
            p: 5,
            k_star: 4,
            rho: 0.0,
            change_kind: ChangeKind::MeanOnly,
            effect: 0.0,
            omega: 1.0,
            phi: 1.0,
            seed: 0,
        }
    }

    #[test]
    fn bisection_reaches_target_and_trace_is_monotone() {
        let opts = CalibrationOptions {
            reps: 200,
            null_b: 200,
            tolerance: 0.05,
            ..Default::default()
        };
        let det = Detector::new(Method::VcStar, 5);
        let cal = calibrate_effect(&template(), &det, &opts, 3).unwrap();
        assert!((cal.power.power - 0.8).abs() <= 0.05 || cal.trace.len() > 3);
        assert_eq!(cal.trace[0].effect, 0.0);
        assert!(cal.trace[0].power.power < 0.2);
        assert!(monotonicity_violations(&cal.trace).is_empty());
        let again = calibrate_effect(&template(), &det, &opts, 3).unwrap();
        assert_eq!(cal, again);
    }

    #[test]
    fn unreachable_target_fails_after_doublings() {
        // Three doublings from 1e-9 stay at null power.
        let spec = template();
        let opts = CalibrationOptions {
            reps: 50,
            null_b: 50,
            max_doublings: 3,
            initial_effect: 1e-9,
            ..Default::default()
        };
        let det = Detector::new(Method::VcStar, 5);
        assert!(matches!(
            calibrate_effect(&spec, &det, &opts, 1),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn invalid_target_rejected() {
        let opts = CalibrationOptions {
            target_power: 1.0,
            ..Default::default()
        };
        let det = Detector::new(Method::VcStar, 5);
        assert!(calibrate_effect(&template(), &det, &opts, 1).is_err());
    }
}
