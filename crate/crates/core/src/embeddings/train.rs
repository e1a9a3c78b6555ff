use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingModel, PriceMode};
use crate::corpus::{Basket, NegativeSampler};
use crate::error::EmbeddingError;

/// Numerically stable `ln σ(x)`.
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative-sampling objective for one (center, context) pair and a fixed
/// set of negatives: `ln σ(s(c, o)) + Σ_k ln σ(-s(c, n_k))`.
pub fn sgns_objective(model: &EmbeddingModel, center: usize, context: usize, negatives: &[usize]) -> f64 {
    ln_sigmoid(model.score(center, context))
        + negatives
            .iter()
            .map(|&n| ln_sigmoid(-model.score(center, n)))
            .sum::<f64>()
}

/// Gradient of [`sgns_objective`] over the learned coordinates.
///
/// `outputs` has one entry per target (context first, then each negative in
/// order); repeated targets appear once per occurrence and their gradients
/// add.
#[derive(Debug, Clone, PartialEq)]
pub struct SgnsGradient {
    pub objective: f64,
    pub center: Vec<f64>,
    pub outputs: Vec<(usize, Vec<f64>)>,
}

pub fn sgns_gradient(model: &EmbeddingModel, center: usize, context: usize, negatives: &[usize]) -> SgnsGradient {
    let dims = model.dims();
    let u = model.input_row(center);
    let mut grad_center = vec![0.0; dims];
    let mut outputs = Vec::with_capacity(negatives.len() + 1);
    let mut objective = 0.0;
    let targets = std::iter::once((context, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (target, label) in targets {
        let s = model.score(center, target);
        objective += if label > 0.0 { ln_sigmoid(s) } else { ln_sigmoid(-s) };
        let g = label - sigmoid(s);
        let w = model.output_row(target);
        for (gc, wi) in grad_center.iter_mut().zip(w) {
            *gc += g * wi;
        }
        outputs.push((target, u.iter().map(|ui| g * ui).collect()));
    }
    SgnsGradient {
        objective,
        center: grad_center,
        outputs,
    }
}

#[cfg(test)]
fn apply_gradient(model: &mut EmbeddingModel, center: usize, grad: &SgnsGradient, step_size: f64) {
    for (x, g) in model.input_row_mut(center).iter_mut().zip(&grad.center) {
        *x += step_size * g;
    }
    for (target, g) in &grad.outputs {
        for (x, gi) in model.output_row_mut(*target).iter_mut().zip(g) {
            *x += step_size * gi;
        }
    }
}

/// Reusable buffers for [`negative_sampling_step`].
#[derive(Debug, Default)]
pub(crate) struct StepBuffers {
    targets: Vec<usize>,
    coefficients: Vec<f64>,
    center_grad: Vec<f64>,
}

impl StepBuffers {
    /// Same update as `apply_gradient(sgns_gradient(..))`: every score and
    /// coefficient is evaluated at the pre-update state.
    fn step(
        &mut self,
        model: &mut EmbeddingModel,
        center: usize,
        context: usize,
        sampler: &mut NegativeSampler,
        step_size: f64,
    ) -> f64 {
        self.targets.clear();
        self.targets.push(context);
        for _ in 0..model.config().negatives {
            self.targets.push(sampler.draw_excluding(context));
        }
        self.coefficients.clear();
        let mut objective = 0.0;
        for (i, &t) in self.targets.iter().enumerate() {
            let s = model.score(center, t);
            let label = if i == 0 { 1.0 } else { 0.0 };
            objective += if i == 0 { ln_sigmoid(s) } else { ln_sigmoid(-s) };
            self.coefficients.push(label - sigmoid(s));
        }
        let dims = model.dims();
        self.center_grad.clear();
        self.center_grad.resize(dims, 0.0);
        for (&t, &g) in self.targets.iter().zip(&self.coefficients) {
            for (gc, wi) in self.center_grad.iter_mut().zip(model.output_row(t)) {
                *gc += g * wi;
            }
        }
        let (input, output) = (&model.input, &mut model.output);
        let u = &input[center * dims..(center + 1) * dims];
        for (&t, &g) in self.targets.iter().zip(&self.coefficients) {
            for (x, ui) in output[t * dims..(t + 1) * dims].iter_mut().zip(u) {
                *x += step_size * (g * ui);
            }
        }
        for (x, g) in model.input_row_mut(center).iter_mut().zip(&self.center_grad) {
            *x += step_size * g;
        }
        objective
    }
}

/// Draws `K` negatives (never equal to `context`), takes one gradient-ascent
/// step on the learned coordinates and returns the pre-update objective.
pub fn negative_sampling_step(
    model: &mut EmbeddingModel,
    center: usize,
    context: usize,
    sampler: &mut NegativeSampler,
    step_size: f64,
) -> f64 {
    StepBuffers::default().step(model, center, context, sampler, step_size)
}

/// (center, context) pairs of a ±`window` sliding context over `items`.
pub fn context_pairs(items: &[usize], window: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let n = items.len();
    (0..n).flat_map(move |i| {
        let lo = i.saturating_sub(window);
        let hi = (i + window).min(n.saturating_sub(1));
        (lo..=hi).filter(move |&j| j != i).map(move |j| (items[i], items[j]))
    })
}

fn pair_count(len: usize, window: usize) -> usize {
    (0..len).map(|i| i.min(window) + (len - 1 - i).min(window)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: EmbeddingModel,
    /// Mean objective per step, one entry per epoch (0 when an epoch has no pairs).
    pub epoch_objectives: Vec<f64>,
    /// Price coordinates held fixed during revised training.
    pub frozen_price: Option<Vec<f64>>,
}

/// Trains `model` on `baskets` with the hyperparameters in its config.
///
/// Each epoch reshuffles every basket's items, slides a ±window context over
/// them and applies one negative-sampling step per pair. The step size decays
/// linearly from its initial value to one hundredth of it over all steps.
pub fn train(
    mut model: EmbeddingModel,
    baskets: &[Basket],
    sampler: &mut NegativeSampler,
) -> Result<TrainOutcome, EmbeddingError> {
    if baskets.is_empty() {
        return Err(EmbeddingError::EmptyTraining);
    }
    let n = model.n_products();
    if let Some(&index) = baskets.iter().flat_map(|b| &b.items).find(|&&i| i >= n) {
        return Err(EmbeddingError::IndexOutOfRange { index, n_products: n });
    }
    let config = model.config().clone();
    let per_epoch: usize = baskets.iter().map(|b| pair_count(b.items.len(), config.window)).sum();
    let total = (per_epoch * config.epochs).max(1) as f64;
    let lr0 = config.initial_step_size;
    let lr_min = lr0 / 100.0;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut scratch: Vec<usize> = Vec::new();
    let mut buffers = StepBuffers::default();
    let mut epoch_objectives = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    for _ in 0..config.epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for basket in baskets {
            scratch.clear();
            scratch.extend_from_slice(&basket.items);
            scratch.shuffle(&mut rng);
            for (center, context) in context_pairs(&scratch, config.window) {
                let lr = lr0 - (lr0 - lr_min) * (step as f64 / total);
                sum += buffers.step(&mut model, center, context, sampler, lr);
                count += 1;
                step += 1;
            }
        }
        epoch_objectives.push(if count > 0 { sum / count as f64 } else { 0.0 });
    }
    if !model.all_finite() {
        return Err(EmbeddingError::Config(
            "training diverged to non-finite values; lower initial_step_size".into(),
        ));
    }
    Ok(TrainOutcome {
        model,
        epoch_objectives,
        frozen_price: None,
    })
}

/// Trains with the frozen price coordinate, then drops it: the returned
/// model carries only the learned dimensions, and the untouched price
/// vector is handed back separately.
pub fn train_revised(
    model: EmbeddingModel,
    baskets: &[Basket],
    sampler: &mut NegativeSampler,
) -> Result<TrainOutcome, EmbeddingError> {
    if model.config().price_mode != PriceMode::Frozen || model.price().is_none() {
        return Err(EmbeddingError::MissingPrices);
    }
    let out = train(model, baskets, sampler)?;
    let frozen = out.model.price().map(<[f64]>::to_vec);
    Ok(TrainOutcome {
        model: out.model.without_price(),
        epoch_objectives: out.epoch_objectives,
        frozen_price: frozen,
    })
}
