//! Skip-gram product embeddings trained on basket co-occurrence.
//!
//! Every product has an input vector and an output vector; the score of a
//! (center, context) pair is their inner product. In frozen-price mode each
//! vector is extended by one fixed coordinate holding the product's
//! category-normalized price, which takes part in every inner product but
//! never receives an update.

mod io;
mod train;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Transaction, Vocabulary};
use crate::error::EmbeddingError;

pub use io::{load_model, read_model, save_model, write_model, write_text_export, MODEL_MAGIC, MODEL_VERSION};
pub use train::{
    context_pairs, ln_sigmoid, negative_sampling_step, sgns_gradient, sgns_objective, train, train_revised,
    SgnsGradient, TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriceMode {
    #[default]
    Off,
    Frozen,
}

impl PriceMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "off" => Some(Self::Off),
            "frozen" => Some(Self::Frozen),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Off => "off",
            Self::Frozen => "frozen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingConfig {
    /// Vector dimension.
    pub dims: usize,
    /// Context half-window.
    pub window: usize,
    /// Negatives drawn per positive pair.
    pub negatives: usize,
    pub epochs: usize,
    pub initial_step_size: f64,
    pub seed: u64,
    pub price_mode: PriceMode,
    pub smoothing_exponent: f64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dims: 20,
            window: 5,
            negatives: 5,
            epochs: 5,
            initial_step_size: 0.025,
            seed: 1,
            price_mode: PriceMode::Off,
            smoothing_exponent: crate::corpus::DEFAULT_SMOOTHING_EXPONENT,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        let bad = |m: &str| Err(EmbeddingError::Config(m.to_string()));
        if self.dims < 1 {
            return bad("dims must be >= 1");
        }
        if self.window < 1 {
            return bad("window must be >= 1");
        }
        if self.negatives < 1 {
            return bad("negatives must be >= 1");
        }
        if self.epochs < 1 {
            return bad("epochs must be >= 1");
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return bad("initial_step_size must be > 0");
        }
        if !(self.smoothing_exponent > 0.0 && self.smoothing_exponent <= 1.0) {
            return bad("smoothing_exponent must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Input and output vector matrices, row-major, one row per product.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    n_products: usize,
    dims: usize,
    input: Vec<f64>,
    output: Vec<f64>,
    price: Option<Vec<f64>>,
    config: EmbeddingConfig,
}

impl EmbeddingModel {
    /// Wraps existing matrices. `input` and `output` are row-major
    /// `n_products × config.dims`.
    pub fn from_matrices(
        input: Vec<f64>,
        output: Vec<f64>,
        price: Option<Vec<f64>>,
        config: EmbeddingConfig,
    ) -> Result<Self, EmbeddingError> {
        config.validate()?;
        let dims = config.dims;
        if input.len() % dims != 0 || input.len() != output.len() {
            return Err(EmbeddingError::Format(format!(
                "matrix sizes {} / {} do not match dims {dims}",
                input.len(),
                output.len()
            )));
        }
        let n_products = input.len() / dims;
        match (&price, config.price_mode) {
            (Some(p), PriceMode::Frozen) if p.len() != n_products => {
                return Err(EmbeddingError::PriceLength {
                    expected: n_products,
                    got: p.len(),
                })
            }
            (None, PriceMode::Frozen) => return Err(EmbeddingError::MissingPrices),
            (Some(_), PriceMode::Off) => return Err(EmbeddingError::UnexpectedPrices),
            _ => {}
        }
        Ok(EmbeddingModel {
            n_products,
            dims,
            input,
            output,
            price,
            config,
        })
    }

    pub fn n_products(&self) -> usize {
        self.n_products
    }

    /// Number of learned dimensions (excludes the price coordinate).
    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn price(&self) -> Option<&[f64]> {
        self.price.as_deref()
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.input[i * self.dims..(i + 1) * self.dims]
    }

    pub fn output_row(&self, i: usize) -> &[f64] {
        &self.output[i * self.dims..(i + 1) * self.dims]
    }

    pub(crate) fn input_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.input[i * self.dims..(i + 1) * self.dims]
    }

    #[cfg(test)]
    pub(crate) fn output_row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.output[i * self.dims..(i + 1) * self.dims]
    }

    pub fn input_matrix(&self) -> &[f64] {
        &self.input
    }

    pub fn output_matrix(&self) -> &[f64] {
        &self.output
    }

    /// Pair score `v_center · v'_context`, plus the price product when a
    /// frozen price coordinate is present.
    pub fn score(&self, center: usize, context: usize) -> f64 {
        let s = dot(self.input_row(center), self.output_row(context));
        match &self.price {
            Some(p) => s + p[center] * p[context],
            None => s,
        }
    }

    /// Log-softmax over all contexts for one center product.
    pub fn log_conditional(&self, center: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.n_products).map(|k| self.score(center, k)).collect();
        let lse = log_sum_exp(&logits);
        logits.into_iter().map(|l| l - lse).collect()
    }

    /// The learned dimensions only, with the price coordinate dropped.
    pub fn without_price(&self) -> EmbeddingModel {
        EmbeddingModel {
            price: None,
            config: EmbeddingConfig {
                price_mode: PriceMode::Off,
                ..self.config.clone()
            },
            ..self.clone()
        }
    }

    pub fn all_finite(&self) -> bool {
        self.input.iter().chain(&self.output).all(|x| x.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Fresh model: inputs i.i.d. uniform on `[-0.5/M, 0.5/M)`, outputs zero.
pub fn init_model(
    n_products: usize,
    config: &EmbeddingConfig,
    prices: Option<&[f64]>,
) -> Result<EmbeddingModel, EmbeddingError> {
    config.validate()?;
    let dims = config.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let input: Vec<f64> = (0..n_products * dims)
        .map(|_| (rng.random::<f64>() - 0.5) / dims as f64)
        .collect();
    EmbeddingModel::from_matrices(
        input,
        vec![0.0; n_products * dims],
        prices.map(<[f64]>::to_vec),
        config.clone(),
    )
}

/// Per-product mean transaction price, z-scored within each category.
///
/// Categories whose prices are all equal map to zero. Products without any
/// transaction also get zero.
pub fn category_normalized_prices(vocabulary: &Vocabulary, transactions: &[Transaction]) -> Vec<f64> {
    let n = vocabulary.len();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for t in transactions {
        if let Some(i) = vocabulary.index_of(&t.product_id) {
            sum[i] += t.price;
            count[i] += 1;
        }
    }
    let mean: Vec<Option<f64>> = (0..n)
        .map(|i| (count[i] > 0).then(|| sum[i] / count[i] as f64))
        .collect();

    let mut by_category: HashMap<&str, Vec<usize>> = HashMap::new();
    for i in 0..n {
        if mean[i].is_some() {
            by_category.entry(vocabulary.category_of(i)).or_default().push(i);
        }
    }
    let mut out = vec![0.0; n];
    for members in by_category.values() {
        let xs: Vec<f64> = members.iter().map(|&i| mean[i].unwrap()).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        for (&i, &x) in members.iter().zip(&xs) {
            out[i] = if sd > 1e-12 * m.abs().max(1.0) { (x - m) / sd } else { 0.0 };
        }
    }
    out
}

/// `log P(context | center)` under the full softmax.
pub fn pair_log_probability(model: &EmbeddingModel, center: usize, context: usize) -> f64 {
    let logits: Vec<f64> = (0..model.n_products()).map(|k| model.score(center, k)).collect();
    logits[context] - log_sum_exp(&logits)
}
