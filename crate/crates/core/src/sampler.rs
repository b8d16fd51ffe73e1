//! Sources of data under the no-change hypothesis.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{FeatureMatrix, GaussianSource};
use crate::rng::SimRng;

#[derive(Debug, Clone)]
pub enum NullSampler {
    /// Fresh i.i.d. Gaussian days from a fitted or known null.
    Parametric(GaussianSource),
    /// Random reorderings of whole days of the given panel, keeping the
    /// cross-feature dependence of each day.
    Permutation(FeatureMatrix),
}

impl NullSampler {
    pub fn p(&self) -> usize {
        match self {
            NullSampler::Parametric(g) => g.p(),
            NullSampler::Permutation(y) => y.p(),
        }
    }

    /// One null panel of `t` days.
    pub fn draw(&self, t: usize, rng: &mut SimRng) -> Result<FeatureMatrix> {
        match self {
            NullSampler::Parametric(g) => Ok(FeatureMatrix::complete(g.sample(rng, t))),
            NullSampler::Permutation(y) => {
                if y.t() != t {
                    return Err(Error::InvalidParameter(format!(
                        "permutation sampler holds {} days, asked for {t}",
                        y.t()
                    )));
                }
                y.require_complete()?;
                let mut order: Vec<usize> = (0..t).collect();
                order.shuffle(rng);
                let src = y.values();
                let values = DMatrix::from_fn(y.p(), t, |i, j| src[(i, order[j])]);
                Ok(y.with_values(values))
            }
        }
    }

    /// Stable identifier of the sampler's content, for cache keys.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        match self {
            NullSampler::Parametric(g) => {
                h.update(b"parametric");
                for v in g.mu().iter().chain(g.sigma().iter()) {
                    h.update(v.to_le_bytes());
                }
            }
            NullSampler::Permutation(y) => {
                h.update(b"permutation");
                h.update((y.p() as u64).to_le_bytes());
                for v in y.values().iter() {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(&h.finalize()[..12])
    }
}
