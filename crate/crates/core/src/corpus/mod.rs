//! Transaction ingest, trip baskets, the product vocabulary, the
//! training/estimation/test split and the negative-sampling distribution.

mod baskets;
mod sampler;
mod split;
mod transactions;

pub use baskets::{
    build_baskets, build_vocabulary, categories_of, count_frequencies, read_baskets, write_baskets,
    Basket, GroupingKey, Vocabulary,
};
pub use sampler::{build_negative_sampler, NegativeSampler, DEFAULT_SMOOTHING_EXPONENT};
pub use split::{read_split_assignments, split_corpus, SplitCorpus, SplitPart, DEFAULT_FRACTIONS};
pub use transactions::{load_transactions, write_transactions, Schema, Transaction, CANONICAL_COLUMNS};
