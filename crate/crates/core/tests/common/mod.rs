#![allow(dead_code)]

use prodcomp::choice::{assemble_dataset, AssembleOptions, ChoiceDataset};
use prodcomp::corpus::{count_frequencies, Basket, NegativeSampler};
use prodcomp::embeddings::{init_model, train, EmbeddingConfig, EmbeddingModel, PriceMode};
use prodcomp::synthgen::{generate_baskets, generate_choice_panel, MarketScenario, Relation, ScenarioParams};
use prodcomp::relatedness::{top_complements, top_substitutes, ExchangeabilityMode};
use rand::Rng;

/// Model with entries uniform on `[-scale, scale)`.
pub fn random_model(rng: &mut impl Rng, n: usize, dims: usize, scale: f64, prices: bool) -> EmbeddingModel {
    let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
    let input = draw(n * dims);
    let output = draw(n * dims);
    let price = prices.then(|| draw(n));
    let config = EmbeddingConfig {
        dims,
        price_mode: if prices { PriceMode::Frozen } else { PriceMode::Off },
        ..EmbeddingConfig::default()
    };
    EmbeddingModel::from_matrices(input, output, price, config).unwrap()
}

/// Choice panel of `params` assembled against the true embeddings.
pub fn panel(params: ScenarioParams, seed: u64) -> (MarketScenario, ChoiceDataset) {
    let scenario = MarketScenario::new(params, seed).unwrap();
    let transactions = generate_choice_panel(&scenario);
    let dataset = assemble_dataset(
        &transactions,
        &scenario.vocabulary(),
        &scenario.true_model(),
        &scenario.choice_category(),
        &AssembleOptions::default(),
    )
    .unwrap();
    (scenario, dataset)
}

pub fn train_plain(baskets: &[Basket], n_products: usize, seed: u64) -> EmbeddingModel {
    let config = EmbeddingConfig {
        seed,
        ..EmbeddingConfig::default()
    };
    let mut sampler = NegativeSampler::new(&count_frequencies(baskets, n_products), config.smoothing_exponent, seed).unwrap();
    train(init_model(n_products, &config, None).unwrap(), baskets, &mut sampler)
        .unwrap()
        .model
}

/// Planted complements found among the top-3 complements of their first
/// member, and the same for substitutes, with the number of pairs of each.
pub struct Recovery {
    pub complements_found: usize,
    pub complements: usize,
    pub substitutes_found: usize,
    pub substitutes: usize,
}

pub fn planted_recovery(scenario: &MarketScenario, model: &EmbeddingModel) -> Recovery {
    let mode = ExchangeabilityMode::default();
    let mut r = Recovery {
        complements_found: 0,
        complements: 0,
        substitutes_found: 0,
        substitutes: 0,
    };
    for pair in &scenario.planted_pairs {
        match pair.relation {
            Relation::Complement => {
                r.complements += 1;
                let top = top_complements(model, pair.a, 3, mode).unwrap();
                r.complements_found += top.iter().any(|s| s.b == pair.b) as usize;
            }
            Relation::Substitute => {
                r.substitutes += 1;
                let top = top_substitutes(model, pair.a, 3, 50.0, mode).unwrap();
                r.substitutes_found += top.entries.iter().any(|s| s.b == pair.b) as usize;
            }
        }
    }
    r
}

/// Reference-scenario baskets and a model trained on them with defaults.
pub fn reference_recovery(seed: u64) -> Recovery {
    let scenario = MarketScenario::reference(seed);
    let baskets = generate_baskets(&scenario);
    let model = train_plain(&baskets, scenario.n_products(), seed);
    planted_recovery(&scenario, &model)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

/// Correlation, across product pairs, between input-vector cosine
/// similarity and the product of the pair's normalized prices.
pub fn price_similarity_correlation(model: &EmbeddingModel, z: &[f64]) -> f64 {
    let n = model.n_products();
    let (mut cos, mut price) = (Vec::new(), Vec::new());
    for a in 0..n {
        for b in a + 1..n {
            cos.push(cosine(model.input_row(a), model.input_row(b)));
            price.push(z[a] * z[b]);
        }
    }
    pearson(&cos, &price)
}

/// Occasions split by period: up to and including `last_period`, and after.
pub fn split_by_period(dataset: &ChoiceDataset, last_period: i64) -> (ChoiceDataset, ChoiceDataset) {
    let mut early = dataset.clone();
    let mut late = dataset.clone();
    early.occasions.retain(|o| o.period <= last_period);
    late.occasions.retain(|o| o.period > last_period);
    (early, late)
}
