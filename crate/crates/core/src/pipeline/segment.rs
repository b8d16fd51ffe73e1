//! Splitting a stream into analyzable segments and filling their gaps.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;

/// A day counts as missing when no feature was observed on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRule {
    pub max_consecutive_missing: usize,
    pub min_length: usize,
}

impl Default for SegmentRule {
    fn default() -> Self {
        SegmentRule {
            max_consecutive_missing: 3,
            min_length: 14,
        }
    }
}

/// Maximal column ranges that start and end on observed days, contain no
/// missing run longer than the rule allows, and span at least
/// `min_length` days.
pub fn segment_ranges(y: &FeatureMatrix, rule: &SegmentRule) -> Vec<Range<usize>> {
    let t = y.t();
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut last_observed = 0;
    let mut run = 0;
    let close = |s: usize, e: usize, out: &mut Vec<Range<usize>>| {
        if e + 1 - s >= rule.min_length {
            out.push(s..e + 1);
        }
    };
    for j in 0..t {
        if y.day_missing(j) {
            run += 1;
            if run > rule.max_consecutive_missing {
                if let Some(s) = start.take() {
                    close(s, last_observed, &mut out);
                }
            }
        } else {
            run = 0;
            start.get_or_insert(j);
            last_observed = j;
        }
    }
    if let Some(s) = start {
        close(s, last_observed, &mut out);
    }
    out
}

pub fn segment(y: &FeatureMatrix, rule: &SegmentRule) -> Vec<FeatureMatrix> {
    segment_ranges(y, rule)
        .into_iter()
        .map(|r| y.slice_days(r))
        .collect()
}

/// A gap-filled panel and which of its cells were filled.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputed {
    pub panel: FeatureMatrix,
    pub imputed: DMatrix<bool>,
}

impl Imputed {
    /// Days on which every feature was filled.
    pub fn imputed_days(&self) -> usize {
        (0..self.imputed.ncols())
            .filter(|&j| self.imputed.column(j).iter().all(|&b| b))
            .count()
    }
}

/// Per-feature linear interpolation between observed days; values before
/// the first or after the last observation copy the nearest one.
pub fn impute(y: &FeatureMatrix) -> Result<Imputed> {
    let (p, t) = (y.p(), y.t());
    let obs = y.observed();
    let mut values = y.values().clone();
    for i in 0..p {
        let seen: Vec<usize> = (0..t).filter(|&j| obs[(i, j)]).collect();
        let (Some(&first), Some(&last)) = (seen.first(), seen.last()) else {
            return Err(Error::Missing(format!(
                "feature '{}' has no observed days in the segment",
                y.feature_names()[i]
            )));
        };
        for j in 0..first {
            values[(i, j)] = values[(i, first)];
        }
        for j in last + 1..t {
            values[(i, j)] = values[(i, last)];
        }
        for w in seen.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (va, vb) = (values[(i, a)], values[(i, b)]);
            for j in a + 1..b {
                let f = (j - a) as f64 / (b - a) as f64;
                values[(i, j)] = va + f * (vb - va);
            }
        }
    }
    Ok(Imputed {
        panel: y.with_values(values),
        imputed: obs.map(|o| !o),
    })
}
