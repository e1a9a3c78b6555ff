//! Product embeddings learned from shopping-basket co-occurrence, pairwise
//! complement/substitute scores derived from them, and discrete-choice demand
//! models that use the embeddings as product covariates.
//!
//! The pipeline runs in stages, each of which can be driven separately:
//!
//! - [`corpus`]: ingest transactions, group trips into baskets, split them.
//! - [`embeddings`]: skip-gram training with negative sampling, optionally
//!   with a frozen price coordinate.
//! - [`relatedness`]: complementarity, exchangeability, top-k rankings.
//! - [`choice`]: conditional and mixed logit with a control-function price
//!   correction, hit rates and information criteria.
//! - [`synthgen`]: seeded synthetic markets with known ground truth.

pub mod choice;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod optimize;
pub mod relatedness;
pub mod synthgen;

pub use error::{ChoiceError, CorpusError, EmbeddingError, RelatednessError, ScenarioError};
