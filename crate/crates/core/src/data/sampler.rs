use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};

/// Per-sample draw probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplerWeights {
    probs: Vec<f64>,
}

impl SamplerWeights {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("cannot sample from an empty set".into()));
        }
        Ok(SamplerWeights {
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// Inverse class frequency: each sample weighs `(1/num_classes) / count(class)`,
    /// then the weights are normalized to sum to one.
    pub fn inverse_frequency(labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("cannot sample from an empty set".into()));
        }
        let mut counts = vec![0usize; num_classes];
        for &l in labels {
            *counts
                .get_mut(l)
                .ok_or_else(|| Error::Contract(format!("label {l} out of range")))? += 1;
        }
        let raw: Vec<f64> = labels
            .iter()
            .map(|&l| (1.0 / num_classes as f64) / counts[l] as f64)
            .collect();
        SamplerWeights::from_weights(raw)
    }

    pub fn from_weights(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Config("sampler weights must be positive and finite".into()));
        }
        let total: f64 = raw.iter().sum();
        Ok(SamplerWeights {
            probs: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// `k` i.i.d. indices drawn with replacement.
pub fn weighted_draws<R: Rng + ?Sized>(w: &SamplerWeights, k: usize, rng: &mut R) -> Vec<usize> {
    let dist = WeightedIndex::new(&w.probs).expect("weights validated on construction");
    (0..k).map(|_| dist.sample(rng)).collect()
}
