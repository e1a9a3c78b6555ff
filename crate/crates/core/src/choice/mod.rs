//! Discrete-choice demand within one category.
//!
//! Utility of alternative `j` in an occasion is a product block (fixed
//! effects, embedding coordinates or user attributes), a price term, feature
//! and display flags, optionally the basket-context scores, and optionally
//! the first-stage price residual of a control function.

mod data;
mod first_stage;
mod logit;
mod mixed;
mod result;
mod spec;

pub use data::{
    assemble_dataset, basket_context_scores, Alternative, AssembleOptions, AttributeTable, AvailabilityRule,
    ChoiceDataset, ChoiceOccasion, ScoreCache,
};
pub use first_stage::{clustered_standard_errors, fit_first_stage, ols, FirstStage, OlsFit};
pub use logit::{fit_conditional_logit, log_likelihood, log_likelihood_gradient};
pub use mixed::{
    fit_mixed_logit, simulated_log_likelihood, simulated_log_likelihood_gradient, DrawScheme, Draws, MixedLogitConfig,
};
pub use result::{
    hit_rate, information_criteria, information_criteria_for, predict, result_from_coefficients, EstimationResult,
    FirstStageSummary, ModelKind,
};
pub use spec::{Layout, ModelSpec, PriceTransform, ProductBlock};

use crate::error::ChoiceError;
use crate::optimize::BfgsOptions;

#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    ConditionalLogit(BfgsOptions),
    MixedLogit(MixedLogitConfig),
}

/// Fits `spec`, running the first stage first when it asks for a control
/// function. The first-stage summary is kept on the result.
pub fn estimate(
    dataset: &mut ChoiceDataset,
    spec: ModelSpec,
    estimator: &Estimator,
) -> Result<EstimationResult, ChoiceError> {
    let stage = if spec.control_function {
        Some(fit_first_stage(dataset, &spec)?)
    } else {
        None
    };
    let mut result = match estimator {
        Estimator::ConditionalLogit(options) => fit_conditional_logit(dataset, spec, options),
        Estimator::MixedLogit(config) => fit_mixed_logit(dataset, spec, config),
    }
    .map_err(|e| match e {
        ChoiceError::NotConverged(mut r) => {
            r.first_stage = stage.as_ref().map(FirstStage::summary);
            ChoiceError::NotConverged(r)
        }
        e => e,
    })?;
    result.first_stage = stage.as_ref().map(FirstStage::summary);
    Ok(result)
}
