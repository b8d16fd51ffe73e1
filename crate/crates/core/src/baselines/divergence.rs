//! L1 sample divergence between the days before and after a candidate.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FeatureMatrix;
use crate::rng::stream_rng;
use crate::sampler::NullSampler;
use crate::scan::{window, CandidateScan, ScanMethod};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceSplit {
    /// Pre-change days `k − 1`.
    pub t0: usize,
    /// Post-change days `T − k + 1`.
    pub t1: usize,
    pub stat: f64,
}

/// Pairwise L1 distances between days.
#[derive(Debug, Clone)]
pub struct DistanceTable {
    d: DMatrix<f64>,
}

impl DistanceTable {
    pub fn new(y: &FeatureMatrix) -> Result<Self> {
        y.require_complete()?;
        let v = y.values();
        let t = y.t();
        let mut d = DMatrix::zeros(t, t);
        for j in 0..t {
            for i in (j + 1)..t {
                let dist: f64 = v
                    .column(i)
                    .iter()
                    .zip(v.column(j).iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                d[(i, j)] = dist;
                d[(j, i)] = dist;
            }
        }
        Ok(DistanceTable { d })
    }

    pub fn t(&self) -> usize {
        self.d.nrows()
    }

    /// Divergence for a change at day `k` (1-based).
    pub fn split(&self, k: usize) -> Result<DivergenceSplit> {
        let t = self.t();
        let t0 = k.saturating_sub(1);
        let t1 = (t + 1).saturating_sub(k);
        if t0 < 2 || t1 < 2 {
            return Err(Error::Split { t0, t1 });
        }
        let pre = 0..t0;
        let post = t0..t;
        let mut cross = 0.0;
        for j in pre.clone() {
            for i in post.clone() {
                cross += self.d[(i, j)];
            }
        }
        let within = |r: std::ops::Range<usize>| {
            let mut s = 0.0;
            for j in r.clone() {
                for i in (j + 1)..r.end {
                    s += self.d[(i, j)];
                }
            }
            s
        };
        let (n0, n1) = (t0 as f64, t1 as f64);
        let stat = 2.0 / (n0 * n1) * cross
            - 2.0 / (n0 * (n0 - 1.0)) * within(pre)
            - 2.0 / (n1 * (n1 - 1.0)) * within(post);
        Ok(DivergenceSplit { t0, t1, stat })
    }
}

pub fn sample_divergence(y: &FeatureMatrix, k: usize) -> Result<DivergenceSplit> {
    DistanceTable::new(y)?.split(k)
}

/// Raw divergence for each candidate in the window.
pub fn divergence_scan(y: &FeatureMatrix, db: usize) -> Result<CandidateScan> {
    let days = window(y.t(), db, 3)?;
    let table = DistanceTable::new(y)?;
    let stats = days
        .map(|k| table.split(k).map(|s| (k, s.stat)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateScan::from_stats(ScanMethod::Divergence, stats))
}

/// How an empirical p-value counts the null replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueRule {
    /// `#{null ≥ obs} / B`; zero is attainable.
    #[default]
    Plain,
    /// `(#{null ≥ obs} + 1) / (B + 1)`.
    Smoothed,
}

impl PValueRule {
    pub fn apply(self, at_least: usize, b: usize) -> f64 {
        match self {
            PValueRule::Plain => at_least as f64 / b as f64,
            PValueRule::Smoothed => (at_least + 1) as f64 / (b + 1) as f64,
        }
    }
}

/// Per-candidate null divergences, each column sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceTable {
    pub days: Vec<usize>,
    pub null: Vec<Vec<f64>>,
    pub rule: PValueRule,
}

fn count_at_least(sorted: &[f64], x: f64) -> usize {
    sorted.len() - sorted.partition_point(|v| *v < x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedDivergence {
    pub best_day: usize,
    pub min_pvalue: f64,
    pub pvalues: Vec<(usize, f64)>,
}

impl DivergenceTable {
    /// Divergence scans of `b` null panels.
    pub fn build(
        t: usize,
        db: usize,
        sampler: &NullSampler,
        b: usize,
        seed: u64,
        rule: PValueRule,
    ) -> Result<Self> {
        let scans = null_scans(t, db, sampler, b, seed)?;
        Ok(Self::from_scans(&scans, rule))
    }

    pub(crate) fn from_scans(scans: &[CandidateScan], rule: PValueRule) -> Self {
        let days: Vec<usize> = scans[0].stats.iter().map(|(k, _)| *k).collect();
        let null = (0..days.len())
            .map(|c| {
                let mut col: Vec<f64> = scans.iter().map(|s| s.stats[c].1).collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        DivergenceTable { days, null, rule }
    }

    pub fn b(&self) -> usize {
        self.null[0].len()
    }

    /// Per-candidate p-values of an observed scan and the candidate with
    /// the smallest one (earliest on ties).
    pub fn adjust(&self, observed: &CandidateScan) -> Result<AdjustedDivergence> {
        let days: Vec<usize> = observed.stats.iter().map(|(k, _)| *k).collect();
        if days != self.days {
            return Err(Error::Window(format!(
                "observed candidates {days:?} differ from null candidates {:?}",
                self.days
            )));
        }
        let pvalues: Vec<(usize, f64)> = observed
            .stats
            .iter()
            .zip(&self.null)
            .map(|(&(k, x), col)| (k, self.rule.apply(count_at_least(col, x), col.len())))
            .collect();
        Ok(min_pvalue(pvalues))
    }

    /// Adjusted statistic of one of the null panels themselves, counting
    /// only the other `B − 1` replicates.
    pub(crate) fn adjust_left_out(&self, own: &CandidateScan) -> f64 {
        let pvalues: Vec<(usize, f64)> = own
            .stats
            .iter()
            .zip(&self.null)
            .map(|(&(k, x), col)| {
                let others = count_at_least(col, x) - 1;
                (k, self.rule.apply(others, col.len() - 1))
            })
            .collect();
        min_pvalue(pvalues).min_pvalue
    }
}

fn min_pvalue(pvalues: Vec<(usize, f64)>) -> AdjustedDivergence {
    let (mut best_day, mut min_p) = pvalues[0];
    for &(k, p) in &pvalues[1..] {
        if p < min_p {
            best_day = k;
            min_p = p;
        }
    }
    AdjustedDivergence {
        best_day,
        min_pvalue: min_p,
        pvalues,
    }
}

pub(crate) fn null_scans(
    t: usize,
    db: usize,
    sampler: &NullSampler,
    b: usize,
    seed: u64,
) -> Result<Vec<CandidateScan>> {
    use rayon::prelude::*;
    if b < 1 {
        return Err(Error::InvalidParameter("B must be at least 1".into()));
    }
    (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let y = sampler.draw(t, &mut stream_rng(seed, r))?;
            divergence_scan(&y, db).map_err(|e| Error::Replicate {
                replicate: r,
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Candidate day with the smallest empirical p-value against `b` null
/// panels from `sampler`.
pub fn divergence_adjusted(
    y: &FeatureMatrix,
    db: usize,
    b: usize,
    sampler: &NullSampler,
    seed: u64,
    rule: PValueRule,
) -> Result<AdjustedDivergence> {
    let observed = divergence_scan(y, db)?;
    let table = DivergenceTable::build(y.t(), db, sampler, b, seed, rule)?;
    table.adjust(&observed)
}
