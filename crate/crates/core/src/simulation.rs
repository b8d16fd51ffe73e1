//! Power studies over scenario grids.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, Method};
use crate::error::{Error, Result};
use crate::inference::{
    build_null, calibrate_with, config_digest, estimate_power, CalibrationOptions, NullReference,
    PowerEstimate,
};
use crate::model::{ChangeKind, ScenarioSampler, ScenarioSpec};
use crate::pipeline::output::fmt_f64;
use crate::rng::{derive_seed, tag};
use crate::sampler::NullSampler;

/// Search window for a simulated panel of `t` days: seven days back, or
/// fewer when that would leave under three pre-change days for VC*.
pub fn sim_db(t: usize) -> usize {
    t.saturating_sub(4).clamp(1, 7)
}

/// Scenarios sharing one calibrated effect size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGroup {
    /// Shape at which VC* is calibrated to the target power.
    pub calibrate_at: ScenarioSpec,
    pub members: Vec<ScenarioSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Figure1,
    Figure2,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "figure-1" | "figure1" => Ok(Preset::Figure1),
            "figure-2" | "figure2" => Ok(Preset::Figure2),
            _ => Err(Error::InvalidParameter(format!("unknown preset '{s}'"))),
        }
    }
}

const KINDS: [ChangeKind; 3] = [ChangeKind::MeanOnly, ChangeKind::VarianceOnly, ChangeKind::Both];

fn spec(t: usize, p: usize, k_star: usize, rho: f64, kind: ChangeKind, omega: f64) -> ScenarioSpec {
    ScenarioSpec {
        t,
        p,
        k_star,
        rho,
        change_kind: kind,
        effect: 0.0,
        omega,
        phi: 1.0,
        seed: 0,
    }
}

/// Varying post-change days at `p = 50`: one group per `(T, ω, kind)`,
/// calibrated at `k* = 4`.
fn figure1(kinds: &[ChangeKind]) -> Vec<ScenarioGroup> {
    let mut out = Vec::new();
    for &kind in kinds {
        for t in [30, 60, 90] {
            for omega in [0.5, 1.0] {
                out.push(ScenarioGroup {
                    calibrate_at: spec(t, 50, 4, 0.0, kind, omega),
                    members: (2..=7).map(|k| spec(t, 50, k, 0.0, kind, omega)).collect(),
                });
            }
        }
    }
    out
}

/// Varying length and correlation at `p = 15`, `k* = 4`: one group per
/// kind, calibrated at `T = 20`, `ρ = 0`.
fn figure2(kinds: &[ChangeKind]) -> Vec<ScenarioGroup> {
    kinds
        .iter()
        .map(|&kind| ScenarioGroup {
            calibrate_at: spec(20, 15, 4, 0.0, kind, 1.0),
            members: [0.0, 0.5, 0.8]
                .iter()
                .flat_map(|&rho| (6..=30).map(move |t| spec(t, 15, 4, rho, kind, 1.0)))
                .collect(),
        })
        .collect()
}

pub fn preset_groups(preset: Preset, kinds: Option<&[ChangeKind]>) -> Vec<ScenarioGroup> {
    let kinds = kinds.unwrap_or(&KINDS);
    match preset {
        Preset::Figure1 => figure1(kinds),
        Preset::Figure2 => figure2(kinds),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptions {
    pub methods: Vec<Method>,
    pub reps: usize,
    pub null_b: usize,
    pub alpha: f64,
    /// Calibrate each group's effect; otherwise use the members' own.
    pub calibrate: bool,
    pub calibration: CalibrationOptions,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            methods: Method::ALL.to_vec(),
            reps: 1000,
            null_b: 1000,
            alpha: 0.05,
            calibrate: true,
            calibration: CalibrationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub scenario: ScenarioSpec,
    pub method: Method,
    pub db: usize,
    pub power: Option<PowerEstimate>,
    pub calibrated: bool,
    pub error: Option<String>,
}

/// Null references shared across scenarios with the same shape and
/// pre-change distribution.
#[derive(Default)]
pub struct NullPool {
    refs: HashMap<String, NullReference>,
}

impl NullPool {
    pub fn get(
        &mut self,
        detector: &Detector,
        spec: &ScenarioSpec,
        b: usize,
        seed: u64,
    ) -> Result<&NullReference> {
        let sampler = NullSampler::Parametric(ScenarioSampler::new(&spec.null())?.source().clone());
        let key = config_digest(detector, spec.t, &sampler, b, seed);
        if !self.refs.contains_key(&key) {
            let r = build_null(detector, spec.t, &sampler, b, seed)?;
            self.refs.insert(key.clone(), r);
        }
        Ok(&self.refs[&key])
    }
}

pub fn detector_for(method: Method, spec: &ScenarioSpec) -> Detector {
    Detector::new(method, sim_db(spec.t)).with_phi(spec.phi)
}

/// Power of `method` on one scenario. The null depends only on the
/// scenario's shape, so it is drawn from `seed` alone; the alternative
/// panels use `power_seed`.
pub fn scenario_power(
    pool: &mut NullPool,
    method: Method,
    spec: &ScenarioSpec,
    opts: &GridOptions,
    seed: u64,
    power_seed: u64,
) -> Result<PowerEstimate> {
    let det = detector_for(method, spec);
    let reference = pool.get(&det, spec, opts.null_b, derive_seed(seed, tag::NULL))?;
    estimate_power(&det, &ScenarioSampler::new(spec)?, reference, opts.alpha, opts.reps, power_seed)
}

/// VC* effect reaching the target power at `template`.
pub fn calibrate_group(
    pool: &mut NullPool,
    template: &ScenarioSpec,
    opts: &GridOptions,
    seed: u64,
) -> Result<f64> {
    let det = detector_for(Method::VcStar, template);
    let reference = pool.get(&det, template, opts.null_b, derive_seed(seed, tag::NULL))?;
    let cal = CalibrationOptions {
        alpha: opts.alpha,
        reps: opts.reps,
        null_b: opts.null_b,
        ..opts.calibration
    };
    let scenario = ScenarioSampler::new(template)?;
    Ok(calibrate_with(&det, &scenario, reference, &cal, derive_seed(seed, tag::CALIBRATE))?.effect)
}

/// One row per `(member, method)`. Failures are recorded on their rows.
///
/// Every scenario uses the same alternative seed, so methods and effect
/// sizes are compared on common random numbers.
pub fn run_grid(groups: &[ScenarioGroup], opts: &GridOptions, seed: u64) -> Result<Vec<PowerRow>> {
    if opts.reps == 0 {
        return Err(Error::InvalidParameter("reps must be positive".into()));
    }
    let mut pool = NullPool::default();
    let power_seed = derive_seed(seed, tag::POWER);
    let mut rows = Vec::new();
    for group in groups {
        let effect = if opts.calibrate {
            calibrate_group(&mut pool, &group.calibrate_at, opts, seed).map_err(|e| e.to_string())
        } else {
            Ok(f64::NAN)
        };
        for member in &group.members {
            let mut scenario = member.clone();
            if let Ok(e) = effect {
                if opts.calibrate {
                    scenario.effect = e;
                }
            }
            for &method in &opts.methods {
                let db = sim_db(scenario.t);
                let result = match &effect {
                    Err(msg) => Err(format!("calibration failed: {msg}")),
                    Ok(_) => scenario_power(&mut pool, method, &scenario, opts, seed, power_seed)
                        .map_err(|e| e.to_string()),
                };
                if let Err(msg) = &result {
                    log::warn!("T={} k*={} {method}: {msg}", scenario.t, scenario.k_star);
                }
                rows.push(PowerRow {
                    scenario: scenario.clone(),
                    method,
                    db,
                    power: result.as_ref().ok().copied(),
                    calibrated: opts.calibrate && effect.is_ok(),
                    error: result.err(),
                });
            }
        }
    }
    Ok(rows)
}

pub const POWER_HEADER: [&str; 15] = [
    "T", "p", "k_star", "rho", "change_kind", "effect", "omega", "phi", "method", "db", "power",
    "se", "reps", "calibrated", "error",
];

pub fn write_power_table<W: Write>(w: W, rows: &[PowerRow]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
    out.write_record(POWER_HEADER)?;
    for r in rows {
        let s = &r.scenario;
        let (power, se, reps) = match r.power {
            Some(p) => (fmt_f64(p.power), fmt_f64(p.se), p.reps.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        out.write_record([
            s.t.to_string(),
            s.p.to_string(),
            s.k_star.to_string(),
            fmt_f64(s.rho),
            s.change_kind.as_str().to_string(),
            fmt_f64(s.effect),
            fmt_f64(s.omega),
            fmt_f64(s.phi),
            r.method.to_string(),
            r.db.to_string(),
            power,
            se,
            reps,
            r.calibrated.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Scenario rows from a delimited file whose header names `ScenarioSpec`
/// fields. Each row is its own group, evaluated at its stated effect.
pub fn read_scenarios<R: Read>(r: R, delimiter: u8) -> Result<Vec<ScenarioSpec>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let spec: ScenarioSpec = rec?;
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}
