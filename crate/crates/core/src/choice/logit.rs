//! Conditional (multinomial) logit: likelihood, gradient and estimation.

use std::ops::Range;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;

use super::data::ChoiceDataset;
use super::result::{information_criteria_for, EstimationResult, ModelKind};
use super::spec::{Design, Layout, ModelSpec};
use crate::error::ChoiceError;
use crate::optimize::{minimize_bfgs, numerical_hessian, BfgsOptions, Minimum};

/// Consumers per parallel work unit. Partial sums are always combined in
/// chunk order, so results do not depend on the thread count.
const CONSUMERS_PER_CHUNK: usize = 16;

/// A fit whose mean log-likelihood per occasion exceeds `-SEPARATION_MEAN_LL`
/// predicts every choice with near certainty, which only happens when the
/// data are separable and the coefficients are running off to infinity.
const SEPARATION_MEAN_LL: f64 = 1e-4;

pub(crate) fn consumer_chunks(design: &Design) -> Vec<Range<usize>> {
    let n = design.n_consumers();
    (0..n.div_ceil(CONSUMERS_PER_CHUNK))
        .map(|c| c * CONSUMERS_PER_CHUNK..((c + 1) * CONSUMERS_PER_CHUNK).min(n))
        .collect()
}

/// Fills `probs` with the softmax over occasion `t` at price coefficient
/// `beta` and returns the log-probability of the chosen row. `base` holds the
/// non-price utilities of the occasion's rows.
pub(crate) fn occasion_probabilities(design: &Design, t: usize, base: &[f64], beta: f64, probs: &mut [f64]) -> f64 {
    let start = design.occasion_start[t];
    let mut max = f64::NEG_INFINITY;
    for (i, (&b, p)) in base.iter().zip(probs.iter_mut()).enumerate() {
        *p = b + beta * design.price(start + i);
        max = max.max(*p);
    }
    let chosen_u = probs[design.chosen[t] - start];
    let mut total = 0.0;
    for p in probs.iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    chosen_u - max - total.ln()
}

pub(crate) fn base_utilities(design: &Design, t: usize, theta: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend((design.occasion_start[t]..design.occasion_start[t + 1]).map(|r| design.base_utility(r, theta)));
}

/// Total log-likelihood and its gradient.
pub(crate) fn log_likelihood_and_gradient(design: &Design, theta: &[f64]) -> (f64, Vec<f64>) {
    let k = design.n_covariates;
    let beta = theta[design.price_column];
    let partials: Vec<(f64, Vec<f64>)> = consumer_chunks(design)
        .into_par_iter()
        .map(|chunk| {
            let mut ll = 0.0;
            let mut grad = vec![0.0; k];
            let mut base = Vec::new();
            let mut probs = Vec::new();
            for i in chunk {
                let mut consumer_ll = 0.0;
                for t in design.consumer_start[i]..design.consumer_start[i + 1] {
                    base_utilities(design, t, theta, &mut base);
                    probs.resize(base.len(), 0.0);
                    consumer_ll += occasion_probabilities(design, t, &base, beta, &mut probs);
                    let start = design.occasion_start[t];
                    for (j, g) in design.row(design.chosen[t]).iter().zip(grad.iter_mut()) {
                        *g += j;
                    }
                    for (i, &p) in probs.iter().enumerate() {
                        for (x, g) in design.row(start + i).iter().zip(grad.iter_mut()) {
                            *g -= p * x;
                        }
                    }
                }
                ll += consumer_ll;
            }
            (ll, grad)
        })
        .collect();
    let mut ll = 0.0;
    let mut grad = vec![0.0; k];
    for (l, g) in partials {
        ll += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    (ll, grad)
}

/// Conditional-logit log-likelihood of `dataset` at `theta` (layout order).
pub fn log_likelihood(dataset: &ChoiceDataset, layout: &Layout, theta: &[f64]) -> Result<f64, ChoiceError> {
    Ok(log_likelihood_gradient(dataset, layout, theta)?.0)
}

/// Log-likelihood and its analytic gradient.
pub fn log_likelihood_gradient(
    dataset: &ChoiceDataset,
    layout: &Layout,
    theta: &[f64],
) -> Result<(f64, Vec<f64>), ChoiceError> {
    if theta.len() != layout.n_covariates() {
        return Err(ChoiceError::Layout(format!(
            "{} coefficients for {} covariates",
            theta.len(),
            layout.n_covariates()
        )));
    }
    let design = layout.design(dataset)?;
    Ok(log_likelihood_and_gradient(&design, theta))
}

pub(crate) fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Standard errors from the inverse of the negative Hessian of the total
/// log-likelihood. NaN when that matrix is not positive definite.
pub(crate) fn standard_errors<G>(neg_grad: G, at: &[f64]) -> Vec<f64>
where
    G: FnMut(&[f64]) -> Vec<f64>,
{
    let hess: DMatrix<f64> = numerical_hessian(neg_grad, at);
    match hess.clone().cholesky() {
        Some(chol) => chol.inverse().diagonal().iter().map(|v| v.sqrt()).collect(),
        None => {
            warn!("information matrix is not positive definite; standard errors set to NaN");
            vec![f64::NAN; at.len()]
        }
    }
}

/// Turns an optimizer outcome into an error when it ran away or stalled.
pub(crate) fn check_outcome(
    min: &Minimum,
    log_likelihood: f64,
    n_occasions: usize,
    result: impl FnOnce() -> EstimationResult,
) -> Result<EstimationResult, ChoiceError> {
    let norm = min.x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if min.diverged || log_likelihood / n_occasions as f64 > -SEPARATION_MEAN_LL {
        return Err(ChoiceError::Separation { norm });
    }
    let result = result();
    if !min.converged {
        return Err(ChoiceError::NotConverged(Box::new(result)));
    }
    Ok(result)
}

/// Maximum-likelihood conditional logit, starting from zero.
pub fn fit_conditional_logit(
    dataset: &ChoiceDataset,
    spec: ModelSpec,
    options: &BfgsOptions,
) -> Result<EstimationResult, ChoiceError> {
    let layout = Layout::new(spec, dataset)?;
    let start = vec![0.0; layout.n_covariates()];
    fit_conditional_logit_from(dataset, layout, &start, options)
}

pub(crate) fn fit_conditional_logit_from(
    dataset: &ChoiceDataset,
    layout: Layout,
    start: &[f64],
    options: &BfgsOptions,
) -> Result<EstimationResult, ChoiceError> {
    if dataset.is_empty() {
        return Err(ChoiceError::EmptyDataset);
    }
    let design = layout.design(dataset)?;
    let n = design.n_occasions() as f64;
    let min = minimize_bfgs(
        |theta| {
            let (ll, g) = log_likelihood_and_gradient(&design, theta);
            (-ll / n, g.into_iter().map(|v| -v / n).collect())
        },
        start,
        options,
    );
    let (ll, grad) = log_likelihood_and_gradient(&design, &min.x);
    check_outcome(&min, ll, design.n_occasions(), || {
        let se = standard_errors(
            |theta| log_likelihood_and_gradient(&design, theta).1.into_iter().map(|v| -v).collect(),
            &min.x,
        );
        let (aic, bic) = information_criteria_for(min.x.len(), ll, design.n_occasions());
        EstimationResult {
            kind: ModelKind::ConditionalLogit,
            names: layout.names.clone(),
            layout,
            coefficients: min.x.clone(),
            standard_errors: se,
            log_likelihood: ll,
            aic,
            bic,
            n_occasions: design.n_occasions(),
            n_rows: dataset.n_rows(),
            n_consumers: design.n_consumers(),
            converged: min.converged,
            iterations: min.iterations,
            gradient_norm: max_norm(&grad) / n,
            n_draws: None,
            draw_scheme: None,
            first_stage: None,
        }
    })
}
