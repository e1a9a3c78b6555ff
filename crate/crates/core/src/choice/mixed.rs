//! Mixed logit with a normally distributed, consumer-constant price
//! coefficient, estimated by maximum simulated likelihood.
//!
//! Each consumer gets `n_draws` standard-normal draws, fixed for the whole
//! optimization. The consumer's likelihood is the draw-average of the product
//! of their occasion probabilities at `beta_bar + sigma_beta * draw`.
//! `sigma_beta` is optimized on the log scale.

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::data::ChoiceDataset;
use super::logit::{
    base_utilities, check_outcome, consumer_chunks, fit_conditional_logit_from, max_norm, occasion_probabilities,
    standard_errors,
};
use super::result::{information_criteria_for, EstimationResult, ModelKind};
use super::spec::{Design, Layout, ModelSpec};
use crate::error::ChoiceError;
use crate::optimize::{minimize_bfgs, BfgsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DrawScheme {
    /// Base-2 Halton sequence with a random shift, mapped through the
    /// normal quantile function.
    #[default]
    Halton,
    PseudoRandom,
}

impl DrawScheme {
    pub fn name(self) -> &'static str {
        match self {
            Self::Halton => "halton",
            Self::PseudoRandom => "pseudo_random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "halton" => Some(Self::Halton),
            "pseudo_random" => Some(Self::PseudoRandom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedLogitConfig {
    pub n_draws: usize,
    pub draw_scheme: DrawScheme,
    /// Max-norm of the mean simulated log-likelihood gradient.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for MixedLogitConfig {
    fn default() -> Self {
        MixedLogitConfig {
            n_draws: 100,
            draw_scheme: DrawScheme::Halton,
            tolerance: 1e-6,
            max_iterations: 500,
            seed: 1,
        }
    }
}

impl MixedLogitConfig {
    pub fn validate(&self) -> Result<(), ChoiceError> {
        if self.n_draws < 1 {
            return Err(ChoiceError::Config("n_draws must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(ChoiceError::Config("tolerance must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(ChoiceError::Config("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> BfgsOptions {
        BfgsOptions {
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            ..BfgsOptions::default()
        }
    }
}

/// Standard-normal draws, `n_draws` per consumer, row-major by consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Draws {
    pub n_draws: usize,
    pub values: Vec<f64>,
}

impl Draws {
    pub fn generate(n_consumers: usize, n_draws: usize, scheme: DrawScheme, seed: u64) -> Draws {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let total = n_consumers * n_draws;
        let values = match scheme {
            DrawScheme::PseudoRandom => (0..total).map(|_| StandardNormal.sample(&mut rng)).collect(),
            DrawScheme::Halton => {
                let shift: f64 = Uniform::new(0.0, 1.0).unwrap().sample(&mut rng);
                let normal = Normal::standard();
                // The first points of the sequence are skipped, as is customary.
                (0..total)
                    .map(|n| {
                        let u = (radical_inverse_base2(n as u64 + 11) + shift).fract();
                        normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
                    })
                    .collect()
            }
        };
        Draws { n_draws, values }
    }

    pub fn consumer(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_draws..(i + 1) * self.n_draws]
    }
}

fn radical_inverse_base2(n: u64) -> f64 {
    n.reverse_bits() as f64 / 2f64.powi(64)
}

/// Simulated log-likelihood, gradient in `theta`, and derivative in `sigma`.
fn simulate(design: &Design, draws: &Draws, theta: &[f64], sigma: f64, want_gradient: bool) -> (f64, Vec<f64>, f64) {
    let k = design.n_covariates;
    let r_count = draws.n_draws;
    let ln_r = (r_count as f64).ln();
    let beta_bar = theta[design.price_column];
    let partials: Vec<(f64, Vec<f64>, f64)> = consumer_chunks(design)
        .into_par_iter()
        .map(|chunk| {
            let mut ll = 0.0;
            let mut grad = vec![0.0; k];
            let mut d_sigma = 0.0;
            let mut base = Vec::new();
            let mut probs: Vec<f64> = Vec::new();
            let mut log_lik = vec![0.0; r_count];
            let mut price_score = vec![0.0; r_count];
            for i in chunk {
                let occasions = design.consumer_start[i]..design.consumer_start[i + 1];
                let first_row = design.occasion_start[occasions.start];
                let n_rows = design.occasion_start[occasions.end] - first_row;
                // probs[r * n_rows + row] for every draw and row of this consumer.
                probs.resize(r_count * n_rows, 0.0);
                let consumer_draws = draws.consumer(i);
                log_lik.fill(0.0);
                price_score.fill(0.0);
                for t in occasions.clone() {
                    base_utilities(design, t, theta, &mut base);
                    let lo = design.occasion_start[t] - first_row;
                    let hi = lo + base.len();
                    for (r, &d) in consumer_draws.iter().enumerate() {
                        let beta = beta_bar + sigma * d;
                        let p = &mut probs[r * n_rows + lo..r * n_rows + hi];
                        log_lik[r] += occasion_probabilities(design, t, &base, beta, p);
                        if want_gradient {
                            let expected: f64 = p
                                .iter()
                                .enumerate()
                                .map(|(j, pj)| pj * design.price(design.occasion_start[t] + j))
                                .sum();
                            price_score[r] += design.price(design.chosen[t]) - expected;
                        }
                    }
                }
                let max = log_lik.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = log_lik.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = weights.iter().sum();
                ll += max + (total.ln() - ln_r);
                if !want_gradient {
                    continue;
                }
                // Posterior draw weights; the gradient averages the per-draw
                // logit scores with them.
                for t in occasions {
                    let start = design.occasion_start[t];
                    for (g, x) in grad.iter_mut().zip(design.row(design.chosen[t])) {
                        *g += x;
                    }
                    for row in start..design.occasion_start[t + 1] {
                        let local = row - first_row;
                        let q: f64 = (0..r_count).map(|r| weights[r] * probs[r * n_rows + local]).sum::<f64>() / total;
                        for (g, x) in grad.iter_mut().zip(design.row(row)) {
                            *g -= q * x;
                        }
                    }
                }
                d_sigma += (0..r_count)
                    .map(|r| weights[r] * consumer_draws[r] * price_score[r])
                    .sum::<f64>()
                    / total;
            }
            (ll, grad, d_sigma)
        })
        .collect();
    let mut ll = 0.0;
    let mut grad = vec![0.0; k];
    let mut d_sigma = 0.0;
    for (l, g, s) in partials {
        ll += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        d_sigma += s;
    }
    (ll, grad, d_sigma)
}

/// Simulated log-likelihood at utility coefficients `theta` (layout order,
/// price entry = mean coefficient) and standard deviation `sigma`.
pub fn simulated_log_likelihood(
    dataset: &ChoiceDataset,
    layout: &Layout,
    theta: &[f64],
    sigma: f64,
    draws: &Draws,
) -> Result<f64, ChoiceError> {
    Ok(simulated_log_likelihood_gradient(dataset, layout, theta, sigma, draws)?.0)
}

/// Simulated log-likelihood with its gradient in `(theta, sigma)`.
pub fn simulated_log_likelihood_gradient(
    dataset: &ChoiceDataset,
    layout: &Layout,
    theta: &[f64],
    sigma: f64,
    draws: &Draws,
) -> Result<(f64, Vec<f64>), ChoiceError> {
    let design = layout.design(dataset)?;
    if draws.values.len() != design.n_consumers() * draws.n_draws {
        return Err(ChoiceError::Layout(format!(
            "{} draws for {} consumers × {} draws",
            draws.values.len(),
            design.n_consumers(),
            draws.n_draws
        )));
    }
    let (ll, mut g, ds) = simulate(&design, draws, theta, sigma, true);
    g.push(ds);
    Ok((ll, g))
}

fn split_params(params: &[f64]) -> (&[f64], f64) {
    let (theta, omega) = params.split_at(params.len() - 1);
    (theta, omega[0].exp())
}

/// Maximum simulated likelihood, started from the conditional-logit fit of
/// the same spec with `sigma_beta = 0.1`.
pub fn fit_mixed_logit(
    dataset: &ChoiceDataset,
    spec: ModelSpec,
    config: &MixedLogitConfig,
) -> Result<EstimationResult, ChoiceError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ChoiceError::EmptyDataset);
    }
    let layout = Layout::new(spec, dataset)?;
    let zeros = vec![0.0; layout.n_covariates()];
    let mut start = match fit_conditional_logit_from(dataset, layout.clone(), &zeros, &config.optimizer()) {
        Ok(r) => r.coefficients,
        Err(ChoiceError::NotConverged(r)) => r.coefficients,
        Err(e) => return Err(e),
    };
    start.push(0.1f64.ln());

    let design = layout.design(dataset)?;
    let draws = Draws::generate(design.n_consumers(), config.n_draws, config.draw_scheme, config.seed);
    let n = design.n_occasions() as f64;
    let evaluate = |params: &[f64]| {
        let (theta, sigma) = split_params(params);
        let (ll, mut g, ds) = simulate(&design, &draws, theta, sigma, true);
        g.push(ds * sigma);
        (ll, g)
    };
    let min = minimize_bfgs(
        |params| {
            let (ll, g) = evaluate(params);
            (-ll / n, g.into_iter().map(|v| -v / n).collect())
        },
        &start,
        &config.optimizer(),
    );
    let (ll, grad) = evaluate(&min.x);
    let sigma = min.x.last().unwrap().exp();
    if sigma < 1e-4 {
        warn!("sigma_beta = {sigma:.2e}; the mixed logit has collapsed to a conditional logit");
    }
    check_outcome(&min, ll, design.n_occasions(), || {
        let mut se = standard_errors(|p| evaluate(p).1.into_iter().map(|v| -v).collect(), &min.x);
        // Delta method for sigma = exp(omega).
        *se.last_mut().unwrap() *= sigma;
        let mut coefficients = min.x.clone();
        *coefficients.last_mut().unwrap() = sigma;
        let mut names = layout.names.clone();
        names[layout.price_column] = "beta_bar".into();
        names.push("sigma_beta".into());
        let (aic, bic) = information_criteria_for(coefficients.len(), ll, design.n_occasions());
        EstimationResult {
            kind: ModelKind::MixedLogit,
            layout,
            names,
            coefficients,
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
            n_draws: Some(config.n_draws),
            draw_scheme: Some(config.draw_scheme),
            first_stage: None,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::logit::log_likelihood;
    use crate::choice::spec::ProductBlock;
    use crate::choice::test_support::random_dataset;
    use rand::Rng;

    fn spec() -> ModelSpec {
        ModelSpec::new(ProductBlock::Embeddings, false, false)
    }

    #[test]
    fn zero_sigma_reproduces_conditional_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n_draws in [1, 7, 100] {
            let d = random_dataset(&mut rng, 300, 4, 2);
            let layout = Layout::new(spec(), &d).unwrap();
            let theta: Vec<f64> = (0..layout.n_covariates()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for scheme in [DrawScheme::Halton, DrawScheme::PseudoRandom] {
                let draws = Draws::generate(d.n_consumers(), n_draws, scheme, 9);
                let sim = simulated_log_likelihood(&d, &layout, &theta, 0.0, &draws).unwrap();
                assert_eq!(sim, log_likelihood(&d, &layout, &theta).unwrap());
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let d = random_dataset(&mut rng, 60, 3, 2);
            let layout = Layout::new(spec(), &d).unwrap();
            let draws = Draws::generate(d.n_consumers(), 13, DrawScheme::Halton, 3);
            let mut params: Vec<f64> = (0..layout.n_covariates()).map(|_| rng.random_range(-1.0..1.0)).collect();
            params.push(rng.random_range(0.1..1.5));
            let f = |p: &[f64]| {
                let (theta, sigma) = p.split_at(p.len() - 1);
                simulated_log_likelihood_gradient(&d, &layout, theta, sigma[0], &draws).unwrap()
            };
            let (_, g) = f(&params);
            for k in 0..params.len() {
                let h = 1e-6;
                let mut p = params.clone();
                p[k] += h;
                let up = f(&p).0;
                p[k] -= 2.0 * h;
                let down = f(&p).0;
                let fd = (up - down) / (2.0 * h);
                assert!((fd - g[k]).abs() <= 1e-5 * g[k].abs().max(1.0), "k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn halton_draws_are_standard_normal() {
        let draws = Draws::generate(200, 100, DrawScheme::Halton, 4);
        let n = draws.values.len() as f64;
        let mean = draws.values.iter().sum::<f64>() / n;
        let var = draws.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.02, "{mean} {var}");
        // Low discrepancy: each consumer's block already looks normal.
        let block = draws.consumer(17);
        let below = block.iter().filter(|&&x| x < 0.0).count();
        assert!((45..=55).contains(&below));
    }

    #[test]
    fn draws_are_reproducible() {
        for scheme in [DrawScheme::Halton, DrawScheme::PseudoRandom] {
            assert_eq!(Draws::generate(5, 10, scheme, 1), Draws::generate(5, 10, scheme, 1));
            assert_ne!(Draws::generate(5, 10, scheme, 1), Draws::generate(5, 10, scheme, 2));
        }
    }

    #[test]
    fn config_validation() {
        let bad = MixedLogitConfig {
            n_draws: 0,
            ..MixedLogitConfig::default()
        };
        assert!(matches!(bad.validate(), Err(ChoiceError::Config(_))));
        assert!(MixedLogitConfig::default().validate().is_ok());
        assert_eq!(DrawScheme::parse("halton"), Some(DrawScheme::Halton));
    }
}
