use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while ingesting transactions and building corpus artifacts.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed delimited file")]
    Csv(#[from] csv::Error),
    #[error("column `{column}` required by the schema is not in the header")]
    UnmappedColumn { column: String },
    #[error("row {row}, column `{column}`: {message}")]
    BadField {
        row: usize,
        column: String,
        message: String,
    },
    #[error("{} row(s) rejected: {}", .0.len(), summarize_rows(.0))]
    RejectedRows(Vec<RowRejection>),
    #[error("no transactions to group")]
    EmptyTransactions,
    #[error("no baskets")]
    EmptyBaskets,
    #[error("split fractions must sum to 1 (got {0})")]
    BadFractions(f64),
    #[error("smoothing exponent must lie in (0, 1] (got {0})")]
    BadExponent(f64),
    #[error("product index {index} has zero frequency")]
    ZeroFrequency { index: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// One rejected data row. Row numbers count the header as row 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RowRejection {
    pub row: usize,
    pub reason: String,
}

fn summarize_rows(rows: &[RowRejection]) -> String {
    rows.iter()
        .take(5)
        .map(|r| format!("row {} ({})", r.row, r.reason))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("price vector has length {got}, vocabulary has {expected} products")]
    PriceLength { expected: usize, got: usize },
    #[error("price_mode=frozen requires a price vector")]
    MissingPrices,
    #[error("prices supplied but price_mode=off")]
    UnexpectedPrices,
    #[error("invalid embedding config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTraining,
    #[error("product index {index} out of range for {n_products} products")]
    IndexOutOfRange { index: usize, n_products: usize },
    #[error("model file format error: {0}")]
    Format(String),
    #[error("unsupported model file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("model file truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum RelatednessError {
    #[error("exchangeability needs at least 3 products (got {0})")]
    TooFewProducts(usize),
    #[error("k={k} must be smaller than the number of products ({n_products})")]
    BadK { k: usize, n_products: usize },
    #[error("percentile must lie in [0, 100] (got {0})")]
    BadPercentile(f64),
}

#[derive(Debug, Error)]
pub enum ChoiceError {
    #[error("product `{0}` has no embedding")]
    MissingEmbedding(String),
    #[error("no usable choice occasions")]
    EmptyDataset,
    #[error("alternative {alternative} of occasion {occasion} has no instrument")]
    MissingInstrument { occasion: usize, alternative: usize },
    #[error("first-stage residuals are required for the control-function spec")]
    MissingResiduals,
    #[error("design matrix is rank deficient; collinear columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("coefficient norm diverged ({norm:.3e}); data appear perfectly separated")]
    Separation { norm: f64 },
    #[error("optimizer did not converge after {} iterations", .0.iterations)]
    NotConverged(Box<crate::choice::EstimationResult>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("covariate layout mismatch: {0}")]
    Layout(String),
    #[error(transparent)]
    Relatedness(#[from] RelatednessError),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("ground-truth file, line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
