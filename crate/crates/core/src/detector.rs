//! One interface over the seven detector configurations.

use serde::{Deserialize, Serialize};

use crate::baselines::{cusum_max, divergence_scan, hotelling_max, CusumOptions, PValueRule};
use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::scan::{CandidateScan, EstimatorMode, Variant};
use crate::vc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "vcstar")]
    VcStar,
    #[serde(rename = "vc")]
    Vc,
    #[serde(rename = "vcstar-mean")]
    VcStarMean,
    #[serde(rename = "vcstar-var")]
    VcStarVar,
    #[serde(rename = "hotelling")]
    Hotelling,
    #[serde(rename = "cusum")]
    Cusum,
    #[serde(rename = "divergence")]
    Divergence,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::VcStar,
        Method::Vc,
        Method::VcStarMean,
        Method::VcStarVar,
        Method::Hotelling,
        Method::Cusum,
        Method::Divergence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::VcStar => "vcstar",
            Method::Vc => "vc",
            Method::VcStarMean => "vcstar-mean",
            Method::VcStarVar => "vcstar-var",
            Method::Hotelling => "hotelling",
            Method::Cusum => "cusum",
            Method::Divergence => "divergence",
        }
    }

    /// VC variant and estimator mode, for the score-test methods.
    pub fn vc_config(self) -> Option<(Variant, EstimatorMode)> {
        match self {
            Method::VcStar => Some((Variant::Full, EstimatorMode::Prechange)),
            Method::Vc => Some((Variant::Full, EstimatorMode::AllDays)),
            Method::VcStarMean => Some((Variant::MeanOnly, EstimatorMode::Prechange)),
            Method::VcStarVar => Some((Variant::VarianceOnly, EstimatorMode::Prechange)),
            _ => None,
        }
    }

    pub fn uses_phi(self) -> bool {
        self.vc_config().is_some()
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}'")))
    }
}

/// A method with its tuning: search window, `φ`, CUSUM options, and the
/// divergence p-value rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    pub method: Method,
    pub db: usize,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default)]
    pub cusum: CusumOptions,
    #[serde(default)]
    pub pvalue_rule: PValueRule,
}

fn default_phi() -> f64 {
    1.0
}

impl Detector {
    pub fn new(method: Method, db: usize) -> Self {
        Detector {
            method,
            db,
            phi: 1.0,
            cusum: CusumOptions::default(),
            pvalue_rule: PValueRule::default(),
        }
    }

    pub fn with_phi(mut self, phi: f64) -> Self {
        self.phi = phi;
        self
    }

    /// Raw per-candidate statistics. For the divergence this is the
    /// unadjusted divergence; its p-value adjustment needs a null reference.
    pub fn scan(&self, y: &FeatureMatrix) -> Result<CandidateScan> {
        match self.method {
            Method::Hotelling => hotelling_max(y, self.db),
            Method::Cusum => cusum_max(y, self.db, &self.cusum),
            Method::Divergence => divergence_scan(y, self.db),
            m => {
                let (variant, mode) = m.vc_config().expect("score-test method");
                vc::scan(y, self.db, variant, mode, self.phi)
            }
        }
    }

    /// Canonical description used in cache keys.
    pub fn describe(&self) -> String {
        let mut s = format!("method={};db={}", self.method, self.db);
        if self.method.uses_phi() {
            s.push_str(&format!(";phi={:?}", self.phi));
        }
        match self.method {
            Method::Cusum => s.push_str(&format!(
                ";a={:?};conv={:?};base={:?}",
                self.cusum.a, self.cusum.convention, self.cusum.baseline
            )),
            Method::Divergence => s.push_str(&format!(";rule={:?}", self.pvalue_rule)),
            _ => {}
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("vcstar-both".parse::<Method>().is_err());
    }
}
