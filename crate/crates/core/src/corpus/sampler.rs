use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;

use crate::error::CorpusError;

/// Skip-gram default for the unigram smoothing exponent.
pub const DEFAULT_SMOOTHING_EXPONENT: f64 = 0.75;

/// Draws negative products with probability ∝ frequency^exponent.
///
/// Backed by an alias table, so each draw is O(1). The sampler owns its RNG;
/// a given seed always yields the same draw sequence.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    probabilities: Vec<f64>,
    smoothing_exponent: f64,
    seed: u64,
    alias: WeightedAliasIndex<f64>,
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    pub fn new(frequencies: &[u64], smoothing_exponent: f64, seed: u64) -> Result<Self, CorpusError> {
        if !(smoothing_exponent > 0.0 && smoothing_exponent <= 1.0) {
            return Err(CorpusError::BadExponent(smoothing_exponent));
        }
        if frequencies.is_empty() {
            return Err(CorpusError::EmptyBaskets);
        }
        if let Some(index) = frequencies.iter().position(|&f| f == 0) {
            return Err(CorpusError::ZeroFrequency { index });
        }
        let weights: Vec<f64> = frequencies
            .iter()
            .map(|&f| (f as f64).powf(smoothing_exponent))
            .collect();
        let total: f64 = weights.iter().sum();
        let probabilities = weights.iter().map(|w| w / total).collect();
        let alias = WeightedAliasIndex::new(weights).expect("weights are positive and finite");
        Ok(NegativeSampler {
            probabilities,
            smoothing_exponent,
            seed,
            alias,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn smoothing_exponent(&self) -> f64 {
        self.smoothing_exponent
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn draw(&mut self) -> usize {
        self.alias.sample(&mut self.rng)
    }

    /// Draws until the result differs from `avoid`. Falls back to `avoid`
    /// when it is the only product.
    pub fn draw_excluding(&mut self, avoid: usize) -> usize {
        if self.probabilities.len() < 2 {
            return avoid;
        }
        loop {
            let k = self.draw();
            if k != avoid {
                return k;
            }
        }
    }
}

/// Builds the sampler from vocabulary frequencies.
pub fn build_negative_sampler(
    vocabulary: &crate::corpus::Vocabulary,
    smoothing_exponent: f64,
    seed: u64,
) -> Result<NegativeSampler, CorpusError> {
    NegativeSampler::new(vocabulary.frequencies(), smoothing_exponent, seed)
}
