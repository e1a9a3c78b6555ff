//! Artifact file names inside the output directory.

pub const TRANSACTIONS: &str = "transactions.csv";
pub const GROUND_TRUTH: &str = "ground_truth.tsv";
pub const BASKETS: &str = "baskets.tsv";
pub const VOCABULARY: &str = "vocabulary.tsv";
pub const SPLIT: &str = "split.tsv";
pub const EMBEDDINGS: &str = "embeddings.bin";
pub const EMBEDDINGS_TEXT: &str = "embeddings.tsv";
pub const FROZEN_PRICES: &str = "frozen_prices.tsv";
pub const TRAINING_LOG: &str = "training.tsv";
pub const COMPLEMENTS: &str = "complements.tsv";
pub const SUBSTITUTES: &str = "substitutes.tsv";
pub const COEFFICIENTS: &str = "coefficients.tsv";
pub const PREDICTIONS: &str = "predictions.tsv";
pub const EVAL: &str = "eval.tsv";
