//! Seeded synthetic markets with known ground truth.
//!
//! A scenario fixes true input and output vectors for every product, a few
//! planted complement and substitute pairs, and a choice category whose
//! demand follows a random-coefficient logit with known parameters.
//!
//! Baskets grow as a Markov chain: the first item is uniform, each successor
//! is drawn from the softmax of the true scores of the previous item, with
//! planted boosts and penalties applied against every item already drawn.
//! The choice panel prices every (store, week, product) market as
//!
//! ```text
//! price = base + cost shock (chain, week) + rho * demand shock (store, week) + noise
//! ```
//!
//! and the demand shock also enters utility, so `rho > 0` makes price
//! endogenous while the chain-wide cost shock keeps the other-store
//! instrument relevant.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Gumbel, StandardNormal};

use crate::corpus::{Basket, Transaction, Vocabulary};
use crate::embeddings::{EmbeddingConfig, EmbeddingModel};
use crate::error::ScenarioError;

const STRUCTURE_STREAM: u64 = 0;
const BASKET_STREAM: u64 = 1;
const MARKET_STREAM: u64 = 2;
const CONSUMER_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Complement,
    Substitute,
}

impl Relation {
    pub fn name(self) -> &'static str {
        match self {
            Relation::Complement => "complement",
            Relation::Substitute => "substitute",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "complement" => Some(Relation::Complement),
            "substitute" => Some(Relation::Substitute),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedPair {
    pub a: usize,
    pub b: usize,
    pub relation: Relation,
}

/// Knobs of the choice panel. Category 0 is the choice category.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelParams {
    pub n_consumers: usize,
    pub occasions_per_consumer: usize,
    pub n_chains: usize,
    pub stores_per_chain: usize,
    /// Price shared by all products before the preference offset.
    pub base_price: f64,
    /// Cross-product standard deviation of the true product intercepts.
    pub preference_scale: f64,
    pub cost_shock_sd: f64,
    pub price_noise_sd: f64,
    pub demand_shock_sd: f64,
    /// Loading of the demand shock on price, in [0, 1].
    pub endogeneity: f64,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub gamma_feature: f64,
    pub gamma_display: f64,
    pub promotion_rate: f64,
    /// Upper bound on Markov draws for the non-category part of a trip.
    pub max_context_draws: usize,
}

impl Default for PanelParams {
    fn default() -> Self {
        PanelParams {
            n_consumers: 2000,
            occasions_per_consumer: 25,
            n_chains: 2,
            stores_per_chain: 4,
            base_price: 6.0,
            preference_scale: 1.0,
            cost_shock_sd: 0.2,
            price_noise_sd: 0.1,
            demand_shock_sd: 0.0,
            endogeneity: 0.0,
            beta_mean: -3.0,
            beta_sd: 0.0,
            gamma_feature: 0.5,
            gamma_display: 0.3,
            promotion_rate: 0.15,
            max_context_draws: 4,
        }
    }
}

impl PanelParams {
    pub fn n_stores(&self) -> usize {
        self.n_chains * self.stores_per_chain
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioParams {
    pub n_products: usize,
    pub n_categories: usize,
    pub true_dims: usize,
    /// Standard deviation of every true vector entry.
    pub vector_scale: f64,
    pub n_complement_pairs: usize,
    pub n_substitute_pairs: usize,
    pub complement_boost: f64,
    pub substitute_penalty: f64,
    /// Noise added to a substitute's copy of its partner's vectors.
    pub substitute_jitter: f64,
    /// Weight on the product of category-normalized list prices in the
    /// co-purchase score.
    pub price_affinity: f64,
    pub list_price_range: (f64, f64),
    pub n_baskets: usize,
    /// Inclusive range of Markov draws per basket, before deduplication.
    pub basket_draws: (usize, usize),
    pub panel: PanelParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            n_products: 50,
            n_categories: 5,
            true_dims: 5,
            vector_scale: 0.8,
            n_complement_pairs: 5,
            n_substitute_pairs: 5,
            complement_boost: 2.0,
            substitute_penalty: -2.0,
            substitute_jitter: 0.05,
            price_affinity: 0.0,
            list_price_range: (1.0, 5.0),
            n_baskets: 100_000,
            basket_draws: (2, 4),
            panel: PanelParams::default(),
        }
    }
}

impl ScenarioParams {
    /// 50 products in 5 categories, 5 planted pairs of each kind, 10^5
    /// baskets, and an exogenous 2000 × 25 panel with beta = -3.
    pub fn reference() -> Self {
        Self::default()
    }

    /// Reference panel with consumer-level price sensitivity, sd 0.5.
    pub fn heterogeneous() -> Self {
        let mut p = Self::default();
        p.panel.beta_sd = 0.5;
        p
    }

    /// Prices loaded on a demand shock with weight 0.8.
    pub fn endogenous() -> Self {
        let mut p = Self::default();
        p.n_baskets = 10_000;
        p.panel = PanelParams {
            n_consumers: 2000,
            occasions_per_consumer: 10,
            cost_shock_sd: 0.15,
            price_noise_sd: 0.05,
            demand_shock_sd: 0.25,
            endogeneity: 0.8,
            ..PanelParams::default()
        };
        p
    }

    /// Co-purchase driven only by list-price similarity: no latent
    /// structure, no planted pairs.
    pub fn price_confounded() -> Self {
        ScenarioParams {
            vector_scale: 0.0,
            n_complement_pairs: 0,
            n_substitute_pairs: 0,
            price_affinity: 1.0,
            n_baskets: 30_000,
            ..Self::default()
        }
    }

    /// Price moves only with store-level noise, so the other-store
    /// instrument carries no information. Many small chains give many
    /// clusters.
    pub fn null_instrument() -> Self {
        ScenarioParams {
            n_products: 20,
            n_complement_pairs: 0,
            n_substitute_pairs: 0,
            n_baskets: 1000,
            panel: PanelParams {
                n_consumers: 1000,
                occasions_per_consumer: 20,
                n_chains: 10,
                stores_per_chain: 4,
                cost_shock_sd: 0.0,
                price_noise_sd: 0.3,
                max_context_draws: 0,
                ..PanelParams::default()
            },
            ..Self::default()
        }
    }

    pub fn products_per_category(&self) -> usize {
        self.n_products / self.n_categories.max(1)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let p = &self.panel;
        if self.n_categories == 0 || self.n_products % self.n_categories != 0 {
            return bad(format!(
                "n_products ({}) must be a positive multiple of n_categories ({})",
                self.n_products, self.n_categories
            ));
        }
        if self.products_per_category() < 2 {
            return bad("each category needs at least two products".into());
        }
        if self.true_dims == 0 {
            return bad("true_dims must be >= 1".into());
        }
        let planted = 2 * (self.n_complement_pairs + self.n_substitute_pairs);
        if planted > self.n_products - self.products_per_category() {
            return bad(format!("{planted} planted products do not fit outside the choice category"));
        }
        let (lo, hi) = self.basket_draws;
        if lo < 1 || hi < lo {
            return bad(format!("basket_draws ({lo}, {hi}) must satisfy 1 <= lo <= hi"));
        }
        let (plo, phi) = self.list_price_range;
        if !(plo > 0.0 && phi >= plo) {
            return bad(format!("list_price_range ({plo}, {phi}) must be positive and ordered"));
        }
        if !(0.0..=1.0).contains(&p.endogeneity) {
            return bad(format!("endogeneity must lie in [0, 1] (got {})", p.endogeneity));
        }
        if p.stores_per_chain < 2 || p.n_chains < 1 {
            return bad("every chain needs at least two stores".into());
        }
        if !(0.0..=1.0).contains(&p.promotion_rate) {
            return bad(format!("promotion_rate must lie in [0, 1] (got {})", p.promotion_rate));
        }
        let sds = [
            self.vector_scale,
            self.substitute_jitter,
            p.preference_scale,
            p.cost_shock_sd,
            p.price_noise_sd,
            p.demand_shock_sd,
            p.beta_sd,
        ];
        if sds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("scales and standard deviations must be finite and >= 0".into());
        }
        Ok(())
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Population z-scores of `prices` within each category block.
fn block_z_scores(prices: &[f64], block: usize) -> Vec<f64> {
    prices
        .chunks(block)
        .flat_map(|xs| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
            xs.iter()
                .map(move |x| if sd > 1e-12 * m.abs().max(1.0) { (x - m) / sd } else { 0.0 })
        })
        .collect()
}

/// A realized scenario: parameters plus the structure drawn from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenario {
    pub params: ScenarioParams,
    pub seed: u64,
    /// Row-major `n_products × true_dims`.
    pub true_input: Vec<f64>,
    pub true_output: Vec<f64>,
    pub planted_pairs: Vec<PlantedPair>,
    /// Shelf price of every product; for the choice category this is the
    /// base price around which the panel's prices move.
    pub list_prices: Vec<f64>,
    /// Taste weights over the true dimensions.
    pub preference: Vec<f64>,
    /// True intercept of each choice-category product.
    pub alpha: Vec<f64>,
    transition: Vec<f64>,
}

impl MarketScenario {
    pub fn new(params: ScenarioParams, seed: u64) -> Result<Self, ScenarioError> {
        params.validate()?;
        let mut rng = stream_rng(seed, STRUCTURE_STREAM);
        let s = params.n_products;
        let m = params.true_dims;
        let per_cat = params.products_per_category();

        let mut true_input: Vec<f64> = (0..s * m).map(|_| params.vector_scale * normal(&mut rng)).collect();
        let mut true_output: Vec<f64> = (0..s * m).map(|_| params.vector_scale * normal(&mut rng)).collect();

        let mut candidates: Vec<usize> = (per_cat..s).collect();
        candidates.shuffle(&mut rng);
        let mut planted_pairs = Vec::new();
        let mut next = candidates.chunks(2);
        for relation in std::iter::repeat_n(Relation::Complement, params.n_complement_pairs)
            .chain(std::iter::repeat_n(Relation::Substitute, params.n_substitute_pairs))
        {
            let pair = next.next().expect("validated");
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            planted_pairs.push(PlantedPair { a, b, relation });
        }
        for pair in planted_pairs.iter().filter(|p| p.relation == Relation::Substitute) {
            for d in 0..m {
                true_input[pair.b * m + d] = true_input[pair.a * m + d] + params.substitute_jitter * normal(&mut rng);
                true_output[pair.b * m + d] =
                    true_output[pair.a * m + d] + params.substitute_jitter * normal(&mut rng);
            }
        }

        let (plo, phi) = params.list_price_range;
        let mut list_prices: Vec<f64> = (0..s)
            .map(|_| if phi > plo { rng.random_range(plo..phi) } else { plo })
            .collect();

        let mut preference: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
        let raw_alpha: Vec<f64> = (0..per_cat)
            .map(|j| (0..m).map(|d| true_input[j * m + d] * preference[d]).sum())
            .collect();
        let mean = raw_alpha.iter().sum::<f64>() / per_cat as f64;
        let sd = (raw_alpha.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / per_cat as f64).sqrt();
        let rescale = if sd > 0.0 { params.panel.preference_scale / sd } else { 0.0 };
        preference.iter_mut().for_each(|w| *w *= rescale);
        let alpha: Vec<f64> = raw_alpha.iter().map(|a| a * rescale).collect();

        let panel = &params.panel;
        for j in 0..per_cat {
            let offset = if panel.beta_mean != 0.0 { alpha[j] / panel.beta_mean.abs() } else { 0.0 };
            list_prices[j] = panel.base_price + offset;
            if list_prices[j] <= 0.0 {
                return Err(ScenarioError::Invalid(format!(
                    "base price of product {j} is {} (raise base_price)",
                    list_prices[j]
                )));
            }
        }

        let mut scenario = MarketScenario {
            params,
            seed,
            true_input,
            true_output,
            planted_pairs,
            list_prices,
            preference,
            alpha,
            transition: Vec::new(),
        };
        scenario.transition = scenario.compute_transitions();
        Ok(scenario)
    }

    pub fn reference(seed: u64) -> Self {
        Self::new(ScenarioParams::reference(), seed).expect("reference parameters are valid")
    }

    pub fn n_products(&self) -> usize {
        self.params.n_products
    }

    pub fn product_id(&self, index: usize) -> String {
        format!("p{index:03}")
    }

    pub fn category_of(&self, index: usize) -> String {
        format!("cat{}", index / self.params.products_per_category())
    }

    pub fn choice_category(&self) -> String {
        "cat0".into()
    }

    pub fn in_choice_category(&self, index: usize) -> bool {
        index < self.params.products_per_category()
    }

    fn dot(&self, center: usize, context: usize) -> f64 {
        let m = self.params.true_dims;
        (0..m)
            .map(|d| self.true_input[center * m + d] * self.true_output[context * m + d])
            .sum()
    }

    /// Unnormalized co-purchase score of `context` following `center`.
    ///
    /// A planted complement is `exp(boost)` times as likely as the center's
    /// average partner: its score is the boost above the log-mean-exp of the
    /// center's latent scores. A planted substitute keeps its latent score
    /// plus the penalty.
    pub fn true_score(&self, center: usize, context: usize) -> f64 {
        let planted = self
            .planted_pairs
            .iter()
            .find(|p| (p.a, p.b) == (center.min(context), center.max(context)));
        let latent = match planted.map(|p| p.relation) {
            Some(Relation::Complement) => {
                let s = self.n_products();
                let mean_exp =
                    (0..s).filter(|&k| k != center).map(|k| self.dot(center, k).exp()).sum::<f64>() / (s - 1) as f64;
                mean_exp.ln() + self.params.complement_boost
            }
            Some(Relation::Substitute) => self.dot(center, context) + self.params.substitute_penalty,
            None => self.dot(center, context),
        };
        let z = self.price_z_scores();
        latent + self.params.price_affinity * z[center] * z[context]
    }

    /// Category-normalized list prices.
    pub fn price_z_scores(&self) -> Vec<f64> {
        block_z_scores(&self.list_prices, self.params.products_per_category())
    }

    fn compute_transitions(&self) -> Vec<f64> {
        let s = self.n_products();
        let mut out = vec![0.0; s * s];
        for a in 0..s {
            let scores: Vec<f64> = (0..s)
                .map(|k| if k == a { f64::NEG_INFINITY } else { self.true_score(a, k) })
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = scores.iter().map(|x| (x - max).exp()).sum();
            for k in 0..s {
                out[a * s + k] = (scores[k] - max).exp() / total;
            }
        }
        out
    }

    /// Probability that `next` follows `current` in a basket; zero on the
    /// diagonal.
    pub fn transition_probability(&self, current: usize, next: usize) -> f64 {
        self.transition[current * self.n_products() + next]
    }

    fn successor_tables(&self) -> Vec<WeightedAliasIndex<f64>> {
        let s = self.n_products();
        (0..s)
            .map(|a| {
                WeightedAliasIndex::new(self.transition[a * s..(a + 1) * s].to_vec())
                    .expect("transition rows are finite with positive mass")
            })
            .collect()
    }

    /// Planted partner of `product` and the score adjustment it carries.
    fn partner(&self, product: usize) -> Option<(usize, f64)> {
        self.planted_pairs.iter().find_map(|p| {
            let other = if p.a == product {
                p.b
            } else if p.b == product {
                p.a
            } else {
                return None;
            };
            Some(match p.relation {
                Relation::Complement => (other, self.params.complement_boost),
                Relation::Substitute => (other, self.params.substitute_penalty),
            })
        })
    }

    /// Distribution of the next draw given the items drawn so far (the last
    /// one is the current item). Planted adjustments apply against every
    /// earlier item, not just the current one.
    pub fn successor_probabilities(&self, drawn: &[usize]) -> Vec<f64> {
        let s = self.n_products();
        let current = *drawn.last().expect("at least one item drawn");
        let mut weights = self.transition[current * s..(current + 1) * s].to_vec();
        let mut seen = HashSet::from([current]);
        for &item in drawn {
            if seen.insert(item) {
                if let Some((other, adjustment)) = self.partner(item) {
                    if other != current {
                        weights[other] *= adjustment.exp();
                    }
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        weights
    }

    fn draw_successor(&self, drawn: &[usize], tables: &[WeightedAliasIndex<f64>], rng: &mut impl Rng) -> usize {
        let current = *drawn.last().expect("at least one item drawn");
        let adjusted = drawn
            .iter()
            .any(|&i| i != current && self.partner(i).is_some_and(|(other, _)| other != current));
        if !adjusted {
            return tables[current].sample(rng);
        }
        let weights = self.successor_probabilities(drawn);
        let mut u: f64 = rng.random();
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                return k;
            }
            u -= w;
        }
        weights.iter().rposition(|&w| w > 0.0).expect("positive mass")
    }

    /// Every product with frequency 1, indexed by product number.
    pub fn vocabulary(&self) -> Vocabulary {
        let s = self.n_products();
        Vocabulary::from_parts(
            (0..s).map(|i| self.product_id(i)).collect(),
            (0..s).map(|i| self.category_of(i)).collect(),
            vec![1; s],
        )
        .expect("ids are unique")
    }

    /// The true vectors as an embedding model aligned with [`Self::vocabulary`].
    pub fn true_model(&self) -> EmbeddingModel {
        let config = EmbeddingConfig {
            dims: self.params.true_dims,
            seed: self.seed,
            ..EmbeddingConfig::default()
        };
        EmbeddingModel::from_matrices(self.true_input.clone(), self.true_output.clone(), None, config)
            .expect("true matrices match true_dims")
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let p = &self.params.panel;
        GroundTruth {
            seed: self.seed,
            n_products: self.n_products(),
            choice_category: self.choice_category(),
            beta_mean: p.beta_mean,
            beta_sd: p.beta_sd,
            gamma_feature: p.gamma_feature,
            gamma_display: p.gamma_display,
            endogeneity: p.endogeneity,
            planted_pairs: self
                .planted_pairs
                .iter()
                .map(|q| (self.product_id(q.a), self.product_id(q.b), q.relation))
                .collect(),
            alpha: self
                .alpha
                .iter()
                .enumerate()
                .map(|(j, &a)| (self.product_id(j), a))
                .collect(),
            preference: self.preference.clone(),
        }
    }
}

/// Raw Markov draws, one sequence per basket. Products may repeat.
pub fn generate_sequences(scenario: &MarketScenario) -> Vec<Vec<usize>> {
    let mut rng = stream_rng(scenario.seed, BASKET_STREAM);
    let tables = scenario.successor_tables();
    let (lo, hi) = scenario.params.basket_draws;
    (0..scenario.params.n_baskets)
        .map(|_| {
            let len = rng.random_range(lo..=hi);
            let mut seq = Vec::with_capacity(len);
            seq.push(rng.random_range(0..scenario.n_products()));
            for _ in 1..len {
                let next = scenario.draw_successor(&seq, &tables, &mut rng);
                seq.push(next);
            }
            seq
        })
        .collect()
}

/// [`generate_sequences`] with repeats collapsed to first appearance.
pub fn generate_baskets(scenario: &MarketScenario) -> Vec<Basket> {
    generate_sequences(scenario)
        .into_iter()
        .enumerate()
        .map(|(n, seq)| {
            let mut seen = HashSet::new();
            Basket {
                basket_id: format!("g{n:06}"),
                household_id: format!("b{n:06}"),
                week: 1,
                store_id: "s0-0".into(),
                items: seq.into_iter().filter(|i| seen.insert(*i)).collect(),
            }
        })
        .collect()
}

fn store_id(store: usize, stores_per_chain: usize) -> (String, String) {
    let chain = store / stores_per_chain;
    (format!("s{chain}-{}", store % stores_per_chain), format!("k{chain}"))
}

#[derive(Debug, Clone, Copy)]
struct Market {
    price: f64,
    feature: bool,
    display: bool,
    demand_shock: f64,
}

fn draw_markets(scenario: &MarketScenario) -> Vec<Market> {
    let p = &scenario.params.panel;
    let j_count = scenario.params.products_per_category();
    let mut rng = stream_rng(scenario.seed, MARKET_STREAM);
    let mut markets = Vec::with_capacity(p.occasions_per_consumer * p.n_stores() * j_count);
    let mut chain_costs = vec![0.0; p.n_chains * j_count];
    for _week in 0..p.occasions_per_consumer {
        chain_costs.iter_mut().for_each(|c| *c = p.cost_shock_sd * normal(&mut rng));
        for store in 0..p.n_stores() {
            let chain = store / p.stores_per_chain;
            for j in 0..j_count {
                let demand_shock = p.demand_shock_sd * normal(&mut rng);
                let noise = p.price_noise_sd * normal(&mut rng);
                let price = scenario.list_prices[j] + chain_costs[chain * j_count + j] + p.endogeneity * demand_shock + noise;
                markets.push(Market {
                    price: price.max(0.01),
                    feature: rng.random_bool(p.promotion_rate),
                    display: rng.random_bool(p.promotion_rate),
                    demand_shock,
                });
            }
        }
    }
    markets
}

/// One transaction per purchase occasion for the choice category, plus the
/// non-category items of the same trip grown from the chosen product.
///
/// Consumer `i` shops weekly at store `i mod n_stores`; weeks start at 1.
pub fn generate_choice_panel(scenario: &MarketScenario) -> Vec<Transaction> {
    let p = &scenario.params.panel;
    let j_count = scenario.params.products_per_category();
    let markets = draw_markets(scenario);
    let tables = scenario.successor_tables();
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale");
    let category = scenario.choice_category();
    let mut rng = stream_rng(scenario.seed, CONSUMER_STREAM);
    let mut out = Vec::new();
    for consumer in 0..p.n_consumers {
        let beta = p.beta_mean + p.beta_sd * normal(&mut rng);
        let store = consumer % p.n_stores();
        let (store_name, chain_name) = store_id(store, p.stores_per_chain);
        let household = format!("c{consumer:05}");
        for week in 0..p.occasions_per_consumer {
            let base = (week * p.n_stores() + store) * j_count;
            let cells = &markets[base..base + j_count];
            let mut chosen = 0;
            let mut best = f64::NEG_INFINITY;
            for (j, m) in cells.iter().enumerate() {
                let utility = scenario.alpha[j]
                    + beta * m.price
                    + p.gamma_feature * f64::from(u8::from(m.feature))
                    + p.gamma_display * f64::from(u8::from(m.display))
                    + m.demand_shock
                    + gumbel.sample(&mut rng);
                if utility > best {
                    best = utility;
                    chosen = j;
                }
            }
            let line = |product: usize, price: f64, feature: bool, display: bool, category: String| Transaction {
                household_id: household.clone(),
                week: week as i64 + 1,
                store_id: store_name.clone(),
                chain_id: chain_name.clone(),
                product_id: scenario.product_id(product),
                category,
                price,
                quantity: 1,
                feature,
                display,
            };
            let m = cells[chosen];
            out.push(line(chosen, m.price, m.feature, m.display, category.clone()));

            let draws = rng.random_range(0..=p.max_context_draws);
            let mut current = chosen;
            let mut seen = HashSet::new();
            for _ in 0..draws {
                current = tables[current].sample(&mut rng);
                if !scenario.in_choice_category(current) && seen.insert(current) {
                    out.push(line(
                        current,
                        scenario.list_prices[current],
                        false,
                        false,
                        scenario.category_of(current),
                    ));
                }
            }
        }
    }
    out
}

/// Baskets as standalone trips at list prices. Choice-category items are
/// left out so that panel markets see only panel purchases.
pub fn basket_transactions(scenario: &MarketScenario, baskets: &[Basket]) -> Vec<Transaction> {
    let p = &scenario.params.panel;
    let mut out = Vec::new();
    for (n, basket) in baskets.iter().enumerate() {
        let (store, chain) = store_id(n % p.n_stores(), p.stores_per_chain);
        let week = (n % p.occasions_per_consumer.max(1)) as i64 + 1;
        for &item in basket.items.iter().filter(|&&i| !scenario.in_choice_category(i)) {
            out.push(Transaction {
                household_id: basket.household_id.clone(),
                week,
                store_id: store.clone(),
                chain_id: chain.clone(),
                product_id: scenario.product_id(item),
                category: scenario.category_of(item),
                price: scenario.list_prices[item],
                quantity: 1,
                feature: false,
                display: false,
            });
        }
    }
    out
}

/// Choice panel followed by the basket corpus, as one transaction log.
pub fn generate_market(scenario: &MarketScenario) -> Vec<Transaction> {
    let mut out = generate_choice_panel(scenario);
    out.extend(basket_transactions(scenario, &generate_baskets(scenario)));
    out
}

/// True parameters written next to generated data.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub seed: u64,
    pub n_products: usize,
    pub choice_category: String,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub gamma_feature: f64,
    pub gamma_display: f64,
    pub endogeneity: f64,
    pub planted_pairs: Vec<(String, String, Relation)>,
    pub alpha: Vec<(String, f64)>,
    pub preference: Vec<f64>,
}

impl GroundTruth {
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "seed\t{}", self.seed)?;
        writeln!(w, "n_products\t{}", self.n_products)?;
        writeln!(w, "choice_category\t{}", self.choice_category)?;
        writeln!(w, "beta_mean\t{:?}", self.beta_mean)?;
        writeln!(w, "beta_sd\t{:?}", self.beta_sd)?;
        writeln!(w, "gamma_feature\t{:?}", self.gamma_feature)?;
        writeln!(w, "gamma_display\t{:?}", self.gamma_display)?;
        writeln!(w, "endogeneity\t{:?}", self.endogeneity)?;
        for (a, b, r) in &self.planted_pairs {
            writeln!(w, "pair\t{a}\t{b}\t{}", r.name())?;
        }
        for (id, a) in &self.alpha {
            writeln!(w, "alpha\t{id}\t{a:?}")?;
        }
        for (d, x) in self.preference.iter().enumerate() {
            writeln!(w, "preference\t{d}\t{x:?}")?;
        }
        Ok(())
    }

    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, ScenarioError> {
        let mut truth = GroundTruth {
            seed: 0,
            n_products: 0,
            choice_category: String::new(),
            beta_mean: f64::NAN,
            beta_sd: f64::NAN,
            gamma_feature: f64::NAN,
            gamma_display: f64::NAN,
            endogeneity: f64::NAN,
            planted_pairs: vec![],
            alpha: vec![],
            preference: vec![],
        };
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let err = |message: String| ScenarioError::Parse { line: n + 1, message };
            let fields: Vec<&str> = line.split('\t').collect();
            let number = |i: usize| -> Result<f64, ScenarioError> {
                fields
                    .get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err(format!("expected a number in field {}", i + 1)))
            };
            let text = |i: usize| -> Result<String, ScenarioError> {
                fields
                    .get(i)
                    .map(|s| s.to_string())
                    .ok_or_else(|| err(format!("missing field {}", i + 1)))
            };
            match fields[0] {
                "" => {}
                "seed" => truth.seed = number(1)? as u64,
                "n_products" => truth.n_products = number(1)? as usize,
                "choice_category" => truth.choice_category = text(1)?,
                "beta_mean" => truth.beta_mean = number(1)?,
                "beta_sd" => truth.beta_sd = number(1)?,
                "gamma_feature" => truth.gamma_feature = number(1)?,
                "gamma_display" => truth.gamma_display = number(1)?,
                "endogeneity" => truth.endogeneity = number(1)?,
                "pair" => {
                    let relation = Relation::parse(&text(3)?)
                        .ok_or_else(|| err(format!("unknown relation `{}`", fields[3])))?;
                    truth.planted_pairs.push((text(1)?, text(2)?, relation));
                }
                "alpha" => truth.alpha.push((text(1)?, number(2)?)),
                "preference" => truth.preference.push(number(2)?),
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        Ok(truth)
    }

    pub fn read_tsv(path: &Path) -> Result<Self, ScenarioError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::{assemble_dataset, fit_first_stage, AssembleOptions, ModelSpec, ProductBlock};
    use crate::corpus::{build_baskets, GroupingKey};

    fn pair_counts(baskets: &[Basket], s: usize) -> (Vec<u64>, Vec<u64>) {
        let mut single = vec![0u64; s];
        let mut joint = vec![0u64; s * s];
        for b in baskets {
            for &x in &b.items {
                single[x] += 1;
                for &y in &b.items {
                    if x != y {
                        joint[x * s + y] += 1;
                    }
                }
            }
        }
        (single, joint)
    }

    fn is_planted(scenario: &MarketScenario, x: usize, y: usize) -> bool {
        scenario
            .planted_pairs
            .iter()
            .any(|p| (p.a, p.b) == (x.min(y), x.max(y)))
    }

    #[test]
    fn same_seed_same_corpus() {
        let mut params = ScenarioParams::reference();
        params.n_baskets = 2000;
        params.panel.n_consumers = 50;
        let a = MarketScenario::new(params.clone(), 3).unwrap();
        let b = MarketScenario::new(params.clone(), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(generate_baskets(&a), generate_baskets(&b));
        assert_eq!(generate_market(&a), generate_market(&b));
        let c = MarketScenario::new(params, 4).unwrap();
        assert_ne!(generate_baskets(&a), generate_baskets(&c));
    }

    #[test]
    fn planted_pairs_are_disjoint_and_outside_choice_category() {
        let scenario = MarketScenario::reference(11);
        let mut seen = HashSet::new();
        for p in &scenario.planted_pairs {
            assert!(!scenario.in_choice_category(p.a) && !scenario.in_choice_category(p.b));
            assert!(seen.insert(p.a) && seen.insert(p.b));
        }
        assert_eq!(seen.len(), 20);
    }

    #[test]
    fn complements_cooccur_five_times_base_rate() {
        let scenario = MarketScenario::reference(7);
        let baskets = generate_baskets(&scenario);
        let s = scenario.n_products();
        let (_, joint) = pair_counts(&baskets, s);
        // Base rate of a pair: geometric mean of each member's average
        // co-purchase count with unplanted partners.
        let row_mean = |x: usize| {
            let counts: Vec<f64> = (0..s)
                .filter(|&y| y != x && !is_planted(&scenario, x, y))
                .map(|y| joint[x * s + y] as f64)
                .collect();
            counts.iter().sum::<f64>() / counts.len() as f64
        };
        for p in scenario.planted_pairs.iter().filter(|p| p.relation == Relation::Complement) {
            let base = (row_mean(p.a) * row_mean(p.b)).sqrt();
            let ratio = joint[p.a * s + p.b] as f64 / base;
            assert!(ratio >= 5.0, "pair ({}, {}) co-occurs at {ratio:.2}x base", p.a, p.b);
        }
    }

    #[test]
    fn substitutes_rarely_cooccur_but_share_neighbors() {
        let scenario = MarketScenario::reference(7);
        let baskets = generate_baskets(&scenario);
        let s = scenario.n_products();
        let (_, joint) = pair_counts(&baskets, s);
        let total: f64 = (0..s * s).filter(|&i| !is_planted(&scenario, i / s, i % s)).map(|i| joint[i] as f64).sum();
        let base = total / (s * (s - 1) - 4 * scenario.planted_pairs.len()) as f64;
        // Neighbors of x: products co-purchased with x more often than x's
        // average partner.
        let neighbors = |x: usize, other: usize| -> HashSet<usize> {
            let row: Vec<(usize, f64)> = (0..s)
                .filter(|&y| y != x && y != other)
                .map(|y| (y, joint[x * s + y] as f64))
                .collect();
            let mean = row.iter().map(|r| r.1).sum::<f64>() / row.len() as f64;
            row.into_iter().filter(|r| r.1 > mean).map(|r| r.0).collect()
        };
        for p in scenario.planted_pairs.iter().filter(|p| p.relation == Relation::Substitute) {
            assert!((joint[p.a * s + p.b] as f64) < base);
            let na = neighbors(p.a, p.b);
            let nb = neighbors(p.b, p.a);
            let jaccard = na.intersection(&nb).count() as f64 / na.union(&nb).count() as f64;
            assert!(jaccard >= 0.6, "pair ({}, {}) neighbor Jaccard {jaccard:.3}", p.a, p.b);
        }
    }

    #[test]
    fn transition_frequencies_converge() {
        let scenario = MarketScenario::reference(5);
        let s = scenario.n_products();
        let mut counts = vec![0.0; s * s];
        let mut expected = vec![0.0; s * s];
        let mut steps = vec![0.0; s];
        for seq in generate_sequences(&scenario) {
            for t in 1..seq.len() {
                let current = seq[t - 1];
                let probs = scenario.successor_probabilities(&seq[..t]);
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert_eq!(probs[current], 0.0);
                for k in 0..s {
                    expected[current * s + k] += probs[k];
                }
                counts[current * s + seq[t]] += 1.0;
                steps[current] += 1.0;
            }
        }
        let mut worst: f64 = 0.0;
        for a in 0..s {
            for k in 0..s {
                let i = a * s + k;
                worst = worst.max((counts[i] - expected[i]).abs() / steps[a]);
            }
        }
        assert!(worst <= 0.02, "max deviation {worst}");
    }

    #[test]
    fn first_successor_is_plain_softmax_and_partners_shift_later_draws() {
        let scenario = MarketScenario::reference(5);
        let s = scenario.n_products();
        let pair = scenario.planted_pairs[0];
        let first = scenario.successor_probabilities(&[pair.a]);
        for k in 0..s {
            assert!((first[k] - scenario.transition_probability(pair.a, k)).abs() < 1e-15);
        }
        let other = (0..s).find(|&x| scenario.partner(x).is_none() && x != pair.a).unwrap();
        let later = scenario.successor_probabilities(&[pair.a, other]);
        let plain = scenario.successor_probabilities(&[other]);
        let neutral = (0..s).find(|&x| ![pair.a, pair.b, other].contains(&x)).unwrap();
        let lift = (later[pair.b] / plain[pair.b]) / (later[neutral] / plain[neutral]);
        assert!((lift - scenario.params.complement_boost.exp()).abs() < 1e-9);
    }

    #[test]
    fn transitions_follow_the_true_softmax() {
        let scenario = MarketScenario::reference(2);
        let a = 17;
        let scores: Vec<f64> = (0..50).filter(|&k| k != a).map(|k| scenario.true_score(a, k)).collect();
        let denom: f64 = scores.iter().map(|x| x.exp()).sum();
        let mut it = scores.iter();
        for k in (0..50).filter(|&k| k != a) {
            let expected = it.next().unwrap().exp() / denom;
            assert!((scenario.transition_probability(a, k) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn base_prices_offset_intercepts() {
        let scenario = MarketScenario::reference(9);
        let p = &scenario.params.panel;
        let sd = {
            let m = scenario.alpha.iter().sum::<f64>() / 10.0;
            (scenario.alpha.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 10.0).sqrt()
        };
        assert!((sd - p.preference_scale).abs() < 1e-12);
        for j in 0..10 {
            let mean_utility = scenario.alpha[j] + p.beta_mean * scenario.list_prices[j];
            assert!((mean_utility - p.beta_mean * p.base_price).abs() < 1e-12);
            let via_vectors: f64 = (0..5).map(|d| scenario.true_input[j * 5 + d] * scenario.preference[d]).sum();
            assert!((via_vectors - scenario.alpha[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn prices_are_positive_and_one_purchase_per_occasion() {
        let mut params = ScenarioParams::endogenous();
        params.panel.n_consumers = 100;
        let scenario = MarketScenario::new(params, 1).unwrap();
        let tx = generate_choice_panel(&scenario);
        assert!(tx.iter().all(|t| t.price > 0.0));
        let purchases = tx.iter().filter(|t| t.category == "cat0").count();
        assert_eq!(purchases, 100 * scenario.params.panel.occasions_per_consumer);
    }

    #[test]
    fn instrument_explains_price() {
        let mut params = ScenarioParams::reference();
        params.n_baskets = 100;
        params.panel.n_consumers = 800;
        params.panel.occasions_per_consumer = 10;
        let scenario = MarketScenario::new(params, 13).unwrap();
        let tx = generate_choice_panel(&scenario);
        let mut dataset = assemble_dataset(
            &tx,
            &scenario.vocabulary(),
            &scenario.true_model(),
            "cat0",
            &AssembleOptions::default(),
        )
        .unwrap();
        let stage = fit_first_stage(&mut dataset, &ModelSpec::new(ProductBlock::Embeddings, true, false)).unwrap();
        assert!(stage.r_squared >= 0.3, "first-stage R^2 {}", stage.r_squared);
        let (b, se, _) = stage.instrument();
        assert!(b / se > 2.0);
    }

    #[test]
    fn market_log_groups_into_panel_and_basket_trips() {
        let mut params = ScenarioParams::reference();
        params.n_baskets = 500;
        params.panel.n_consumers = 40;
        params.panel.occasions_per_consumer = 3;
        let scenario = MarketScenario::new(params, 21).unwrap();
        let tx = generate_market(&scenario);
        let baskets = build_baskets(&tx, GroupingKey::HouseholdWeekStore).unwrap();
        let panel_trips = baskets.iter().filter(|b| b.household_id.starts_with('c')).count();
        assert_eq!(panel_trips, 120);
        assert!(tx
            .iter()
            .filter(|t| t.household_id.starts_with('b'))
            .all(|t| t.category != "cat0"));
    }

    #[test]
    fn ground_truth_round_trip() {
        let scenario = MarketScenario::reference(4);
        let truth = scenario.ground_truth();
        let mut buf = Vec::new();
        truth.write(&mut buf).unwrap();
        let back = GroundTruth::read(&buf[..]).unwrap();
        assert_eq!(truth, back);
        assert_eq!(back.planted_pairs.len(), 10);
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut p = ScenarioParams::reference();
        p.panel.endogeneity = 1.5;
        assert!(MarketScenario::new(p, 0).is_err());
        let mut p = ScenarioParams::reference();
        p.panel.stores_per_chain = 1;
        assert!(MarketScenario::new(p, 0).is_err());
        let mut p = ScenarioParams::reference();
        p.n_complement_pairs = 30;
        assert!(MarketScenario::new(p, 0).is_err());
    }

    #[test]
    fn price_confounded_scores_are_pure_price() {
        let scenario = MarketScenario::new(ScenarioParams::price_confounded(), 1).unwrap();
        let z = scenario.price_z_scores();
        for (a, b) in [(0, 1), (12, 40), (33, 7)] {
            assert!((scenario.true_score(a, b) - z[a] * z[b]).abs() < 1e-15);
        }
    }
}
