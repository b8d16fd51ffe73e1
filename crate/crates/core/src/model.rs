//! Daily feature panels, change-point parameters, and synthetic data.
//!
//! Day `t` carries a `p`-vector `Y_t ~ N_p(μ, Σ)` before the change day `k`
//! and `N_p(μ + β, Σ + δ D)` from `k` on, with `β` drawn once per replicate
//! from `N(0, τ)` on an affected subset of features and `D` the indicator of
//! the features whose variance shifts.

use chrono::{Datelike, Duration, NaiveDate};
use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_diagonal, min_eigenvalue};
use crate::rng::{stream_rng, SimRng};

/// `p` features by `T` days, one column per day.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    day_index: Vec<i64>,
    feature_names: Vec<String>,
    observed: DMatrix<bool>,
    origin: Option<NaiveDate>,
}

impl FeatureMatrix {
    /// Builds a panel; `observed[(i, t)]` is true where feature `i` was
    /// recorded on day `t`. Unobserved cells are stored as NaN.
    pub fn new(
        mut values: DMatrix<f64>,
        day_index: Vec<i64>,
        feature_names: Vec<String>,
        observed: DMatrix<bool>,
    ) -> Result<Self> {
        let (p, t) = values.shape();
        if observed.shape() != (p, t) {
            return Err(Error::InvalidParameter(format!(
                "mask shape {:?} does not match values {:?}",
                observed.shape(),
                (p, t)
            )));
        }
        if day_index.len() != t || feature_names.len() != p {
            return Err(Error::InvalidParameter(format!(
                "{} day labels and {} names for a {p}x{t} panel",
                day_index.len(),
                feature_names.len()
            )));
        }
        if day_index.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidParameter(
                "day labels must be consecutive and increasing".into(),
            ));
        }
        for j in 0..t {
            for i in 0..p {
                if observed[(i, j)] {
                    if !values[(i, j)].is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "non-finite observed value at feature {}, day {}",
                            feature_names[i], day_index[j]
                        )));
                    }
                } else {
                    values[(i, j)] = f64::NAN;
                }
            }
        }
        Ok(FeatureMatrix {
            values,
            day_index,
            feature_names,
            observed,
            origin: None,
        })
    }

    /// Fully observed panel with days labelled `1..=T` and features `f1..fp`.
    pub fn complete(values: DMatrix<f64>) -> Self {
        let (p, t) = values.shape();
        debug_assert!(values.iter().all(|v| v.is_finite()));
        FeatureMatrix {
            values,
            day_index: (1..=t as i64).collect(),
            feature_names: (1..=p).map(|i| format!("f{i}")).collect(),
            observed: DMatrix::from_element(p, t, true),
            origin: None,
        }
    }

    /// Attaches the calendar date of day label 1.
    pub fn with_origin(mut self, origin: NaiveDate) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(Error::InvalidParameter(format!(
                "{} names for {} features",
                names.len(),
                self.p()
            )));
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn t(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn observed(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn day_index(&self) -> &[i64] {
        &self.day_index
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn origin(&self) -> Option<NaiveDate> {
        self.origin
    }

    /// Day label of the 1-based position `k`.
    pub fn label(&self, k: usize) -> i64 {
        self.day_index[k - 1]
    }

    pub fn date_of_label(&self, label: i64) -> Option<NaiveDate> {
        self.origin.map(|o| o + Duration::days(label - 1))
    }

    /// Day of week (0 = Monday) for column `j`; without a calendar origin,
    /// day label 1 is treated as a Monday.
    pub fn weekday(&self, j: usize) -> usize {
        match self.date_of_label(self.day_index[j]) {
            Some(d) => d.weekday().num_days_from_monday() as usize,
            None => (self.day_index[j] - 1).rem_euclid(7) as usize,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn require_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(Error::Missing(
                "panel has unobserved cells; impute before estimation".into(),
            ))
        }
    }

    /// True when no feature was observed on column `j`.
    pub fn day_missing(&self, j: usize) -> bool {
        self.observed.column(j).iter().all(|&o| !o)
    }

    /// Columns `range` (0-based, half-open) as a new panel keeping labels.
    pub fn slice_days(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        let n = range.end - range.start;
        FeatureMatrix {
            values: self.values.columns(range.start, n).into_owned(),
            day_index: self.day_index[range.clone()].to_vec(),
            feature_names: self.feature_names.clone(),
            observed: self.observed.columns(range.start, n).into_owned(),
            origin: self.origin,
        }
    }

    /// Same labels and metadata with new (complete) values.
    pub fn with_values(&self, values: DMatrix<f64>) -> FeatureMatrix {
        assert_eq!(values.shape(), self.values.shape());
        FeatureMatrix {
            observed: DMatrix::from_element(values.nrows(), values.ncols(), true),
            values,
            day_index: self.day_index.clone(),
            feature_names: self.feature_names.clone(),
            origin: self.origin,
        }
    }
}

/// Kind of distributional shift at the change day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    MeanOnly,
    VarianceOnly,
    Both,
    None,
}

impl ChangeKind {
    pub fn has_mean(self) -> bool {
        matches!(self, ChangeKind::MeanOnly | ChangeKind::Both)
    }

    pub fn has_variance(self) -> bool {
        matches!(self, ChangeKind::VarianceOnly | ChangeKind::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeKind::MeanOnly => "mean_only",
            ChangeKind::VarianceOnly => "variance_only",
            ChangeKind::Both => "both",
            ChangeKind::None => "none",
        }
    }
}

impl std::str::FromStr for ChangeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_only" | "mean" => Ok(ChangeKind::MeanOnly),
            "variance_only" | "variance" => Ok(ChangeKind::VarianceOnly),
            "both" => Ok(ChangeKind::Both),
            "none" => Ok(ChangeKind::None),
            other => Err(Error::InvalidParameter(format!("unknown change kind '{other}'"))),
        }
    }
}

/// Realized parameters of one synthetic alternative.
#[derive(Debug, Clone)]
pub struct ChangePointParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// First post-change day (1-based).
    pub k: usize,
    pub beta: DVector<f64>,
    pub delta: f64,
    pub tau: f64,
    pub omega: f64,
    /// Sorted indices of the affected features.
    pub affected: Vec<usize>,
}

/// One synthetic-data scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub p: usize,
    /// Post-change days, `T − k + 1`.
    pub k_star: usize,
    /// Exchangeable feature correlation of `Σ`.
    #[serde(default)]
    pub rho: f64,
    pub change_kind: ChangeKind,
    /// `τ`, `δ`, or both, depending on `change_kind`.
    #[serde(default)]
    pub effect: f64,
    #[serde(default = "one")]
    pub omega: f64,
    #[serde(default = "one")]
    pub phi: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl ScenarioSpec {
    /// First post-change day.
    pub fn k(&self) -> usize {
        self.t + 1 - self.k_star
    }

    pub fn affected_count(&self) -> usize {
        (self.omega * self.p as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.t < 2 {
            return Err(Error::InvalidParameter(format!(
                "scenario needs p ≥ 1 and T ≥ 2 (T={}, p={})",
                self.t, self.p
            )));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter(format!("rho={} outside [0,1)", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::InvalidParameter(format!("phi={} outside [0,1]", self.phi)));
        }
        if self.change_kind != ChangeKind::None {
            if self.k_star < 2 {
                return Err(Error::Window(format!(
                    "k*={} leaves fewer than two post-change days",
                    self.k_star
                )));
            }
            if self.k_star + 1 > self.t {
                return Err(Error::Window(format!(
                    "k*={} incompatible with T={} (need k ≥ 2)",
                    self.k_star, self.t
                )));
            }
            if !(self.omega > 0.0 && self.omega <= 1.0) {
                return Err(Error::InvalidParameter(format!("omega={} outside (0,1]", self.omega)));
            }
            let m = self.affected_count();
            if m < 1 || m > self.p {
                return Err(Error::InvalidParameter(format!(
                    "round(omega·p)={m} outside 1..={}",
                    self.p
                )));
            }
            if !(self.effect >= 0.0) {
                return Err(Error::InvalidParameter(format!("effect={} is negative", self.effect)));
            }
        }
        Ok(())
    }

    /// The same shape with no change.
    pub fn null(&self) -> ScenarioSpec {
        ScenarioSpec {
            change_kind: ChangeKind::None,
            effect: 0.0,
            ..self.clone()
        }
    }
}

/// Unit-diagonal covariance with common off-diagonal `rho`.
pub fn exchangeable_sigma(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    let lower = if p > 1 { -1.0 / (p as f64 - 1.0) } else { f64::NEG_INFINITY };
    if !(rho < 1.0) || rho < lower {
        return Err(Error::InvalidParameter(format!(
            "exchangeable correlation {rho} outside [{lower}, 1) for p={p}"
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho }))
}

#[derive(Debug, Clone)]
enum Factor {
    Identity,
    Diagonal(DVector<f64>),
    Lower(DMatrix<f64>),
}

/// `N_p(μ, Σ)` sampler with the factorization of `Σ` computed once.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    factor: Factor,
}

impl GaussianSource {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let p = mu.len();
        if sigma.shape() != (p, p) {
            return Err(Error::InvalidParameter(format!(
                "sigma is {:?}, expected {p}x{p}",
                sigma.shape()
            )));
        }
        let factor = if sigma == DMatrix::identity(p, p) {
            Factor::Identity
        } else if is_diagonal(&sigma) {
            let d = sigma.diagonal();
            if let Some(&bad) = d.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::NotPositiveDefinite {
                    what: "sigma".into(),
                    min_eigenvalue: bad,
                });
            }
            Factor::Diagonal(d.map(f64::sqrt))
        } else {
            match sigma.clone().cholesky() {
                Some(c) => Factor::Lower(c.l()),
                None => {
                    return Err(Error::NotPositiveDefinite {
                        what: "sigma".into(),
                        min_eigenvalue: min_eigenvalue(&sigma),
                    })
                }
            }
        };
        Ok(GaussianSource { mu, sigma, factor })
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// `t` i.i.d. draws as a `p × t` matrix, one day at a time.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, t: usize) -> DMatrix<f64> {
        let p = self.p();
        let mut out = DMatrix::zeros(p, t);
        let mut z = DVector::zeros(p);
        for j in 0..t {
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let col = self.correlate(&z);
            out.set_column(j, &(col + &self.mu));
        }
        out
    }

    fn correlate(&self, z: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Identity => z.clone(),
            Factor::Diagonal(sd) => z.component_mul(sd),
            Factor::Lower(l) => l * z,
        }
    }
}

/// `T` i.i.d. `N_p(mu, sigma)` days, deterministic in `seed`.
pub fn generate_null(
    t: usize,
    p: usize,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    seed: u64,
) -> Result<FeatureMatrix> {
    if mu.len() != p {
        return Err(Error::InvalidParameter(format!("mu has length {}, expected {p}", mu.len())));
    }
    let source = GaussianSource::new(mu.clone(), sigma.clone())?;
    let mut rng = stream_rng(seed, 0);
    Ok(FeatureMatrix::complete(source.sample(&mut rng, t)))
}

/// One realized draw of a scenario.
#[derive(Debug, Clone)]
pub struct ScenarioDraw {
    pub values: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub affected: Vec<usize>,
}

/// Reusable sampler for a scenario, with `Σ` factored once.
///
/// The random inputs are drawn in a fixed order that does not depend on the
/// effect size: affected subset, `β` innovations, day noise, post-change
/// variance innovations. Two scenarios differing only in `effect` and
/// sharing a generator therefore see common random numbers.
#[derive(Debug, Clone)]
pub struct ScenarioSampler {
    spec: ScenarioSpec,
    base: GaussianSource,
}

impl ScenarioSampler {
    /// `μ = 0`, `Σ` exchangeable with the scenario's `rho`.
    pub fn new(spec: &ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let sigma = exchangeable_sigma(spec.p, spec.rho)?;
        Self::with_params(spec, DVector::zeros(spec.p), sigma)
    }

    /// Scenario shape and effect with an arbitrary pre-change `μ`, `Σ`.
    pub fn with_params(spec: &ScenarioSpec, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        spec.validate()?;
        if mu.len() != spec.p {
            return Err(Error::InvalidParameter("mu length differs from p".into()));
        }
        Ok(ScenarioSampler {
            spec: spec.clone(),
            base: GaussianSource::new(mu, sigma)?,
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn source(&self) -> &GaussianSource {
        &self.base
    }

    /// Same random structure with another effect size.
    pub fn with_effect(&self, effect: f64) -> ScenarioSampler {
        let mut s = self.clone();
        s.spec.effect = effect;
        s
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ScenarioDraw {
        let spec = &self.spec;
        let p = spec.p;
        let changes = spec.change_kind != ChangeKind::None;
        let m = if changes { spec.affected_count() } else { 0 };
        let mut affected = if changes {
            index::sample(rng, p, m).into_vec()
        } else {
            Vec::new()
        };
        affected.sort_unstable();
        let beta_z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let mut values = self.base.sample(rng, spec.t);

        let mut beta = DVector::zeros(p);
        if spec.change_kind.has_mean() {
            let scale = spec.effect.sqrt();
            for (&i, z) in affected.iter().zip(&beta_z) {
                beta[i] = scale * z;
            }
        }
        if changes {
            let k = spec.k();
            let var_scale = if spec.change_kind.has_variance() {
                spec.effect.sqrt()
            } else {
                0.0
            };
            for j in (k - 1)..spec.t {
                for &i in &affected {
                    let w: f64 = rng.sample(StandardNormal);
                    values[(i, j)] += beta[i] + var_scale * w;
                }
            }
        }
        ScenarioDraw {
            values,
            beta,
            affected,
        }
    }

    pub fn params_for(&self, draw: &ScenarioDraw) -> ChangePointParams {
        let spec = &self.spec;
        ChangePointParams {
            mu: self.base.mu.clone(),
            sigma: self.base.sigma.clone(),
            k: spec.k(),
            beta: draw.beta.clone(),
            delta: if spec.change_kind.has_variance() { spec.effect } else { 0.0 },
            tau: if spec.change_kind.has_mean() { spec.effect } else { 0.0 },
            omega: spec.omega,
            affected: draw.affected.clone(),
        }
    }
}

/// Draws the scenario once from `spec.seed` and returns the realized
/// parameters alongside the data.
pub fn generate_alternative(spec: &ScenarioSpec) -> Result<(FeatureMatrix, ChangePointParams)> {
    let sampler = ScenarioSampler::new(spec)?;
    let mut rng: SimRng = stream_rng(spec.seed, 0);
    let draw = sampler.draw(&mut rng);
    let params = sampler.params_for(&draw);
    Ok((FeatureMatrix::complete(draw.values), params))
}
