//! Choice occasions assembled from transactions: one occasion per category
//! purchase, with the store-week choice set, prices, promotion flags, the
//! chain instrument, embedding coordinates and basket-context scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::corpus::{Transaction, Vocabulary};
use crate::embeddings::EmbeddingModel;
use crate::error::ChoiceError;
use crate::relatedness::{complementarity, exchangeability_from_logits, logits, ExchangeabilityMode};

#[derive(Debug, Clone, PartialEq)]
pub struct Alternative {
    /// Vocabulary index.
    pub product: usize,
    pub price: f64,
    pub feature: bool,
    pub display: bool,
    /// Mean same-week price of the product in the chain's other stores.
    pub instrument: Option<f64>,
    pub embedding: Vec<f64>,
    pub complementarity: f64,
    pub exchangeability: f64,
    /// First-stage residual, attached by the control function.
    pub residual: Option<f64>,
    /// User-supplied product attributes, in `ChoiceDataset::attribute_names` order.
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceOccasion {
    pub consumer_id: String,
    pub period: i64,
    pub store_id: String,
    pub chain_id: String,
    /// Same-trip purchases outside the category, as vocabulary indices.
    pub basket_context: Vec<usize>,
    /// Sorted by product index.
    pub alternatives: Vec<Alternative>,
    pub chosen: usize,
}

impl ChoiceOccasion {
    pub fn chosen_product(&self) -> usize {
        self.alternatives[self.chosen].product
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceDataset {
    pub category: String,
    /// Sorted by `(consumer_id, period, store_id, chosen product)`, so each
    /// consumer's occasions are contiguous.
    pub occasions: Vec<ChoiceOccasion>,
    /// Products appearing in any choice set, ascending, with their ids.
    pub products: Vec<usize>,
    pub product_ids: Vec<String>,
    pub embedding_dims: usize,
    pub attribute_names: Vec<String>,
    pub dropped_singleton: usize,
    pub dropped_missing_instrument: usize,
    pub dropped_unavailable: usize,
}

impl ChoiceDataset {
    pub fn len(&self) -> usize {
        self.occasions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occasions.is_empty()
    }

    /// Number of occasion × alternative rows.
    pub fn n_rows(&self) -> usize {
        self.occasions.iter().map(|o| o.alternatives.len()).sum()
    }

    pub fn product_id(&self, product: usize) -> Option<&str> {
        self.products
            .binary_search(&product)
            .ok()
            .map(|i| self.product_ids[i].as_str())
    }

    /// Half-open occasion ranges, one per consumer.
    pub fn consumer_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.occasions.len() {
            if i == self.occasions.len() || self.occasions[i].consumer_id != self.occasions[start].consumer_id {
                out.push(start..i);
                start = i;
            }
        }
        out
    }

    pub fn n_consumers(&self) -> usize {
        self.consumer_ranges().len()
    }

    /// Rebuilds `products`/`product_ids` from the current occasions.
    pub(crate) fn refresh_products(&mut self, vocabulary_ids: impl Fn(usize) -> String) {
        let set: BTreeSet<usize> = self
            .occasions
            .iter()
            .flat_map(|o| o.alternatives.iter().map(|a| a.product))
            .collect();
        self.products = set.into_iter().collect();
        self.product_ids = self.products.iter().map(|&p| vocabulary_ids(p)).collect();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AvailabilityRule {
    /// Category products with at least one sale in the store-week.
    #[default]
    SoldInStoreWeek,
    /// The `J` most purchased category products, always available.
    FixedTopJ(usize),
}

impl AvailabilityRule {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sold_in_store_week" => Some(Self::SoldInStoreWeek),
            _ => s
                .strip_prefix("top_")
                .and_then(|j| j.parse().ok())
                .filter(|&j: &usize| j >= 2)
                .map(Self::FixedTopJ),
        }
    }

    pub fn name(self) -> String {
        match self {
            Self::SoldInStoreWeek => "sold_in_store_week".into(),
            Self::FixedTopJ(j) => format!("top_{j}"),
        }
    }
}

/// Per-product covariate columns supplied by the user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeTable {
    pub names: Vec<String>,
    pub values: HashMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembleOptions {
    pub availability: AvailabilityRule,
    /// Drop alternatives whose instrument is undefined (single-store chains).
    pub require_instrument: bool,
    pub exchangeability_mode: ExchangeabilityMode,
    pub attributes: Option<AttributeTable>,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            availability: AvailabilityRule::default(),
            require_instrument: true,
            exchangeability_mode: ExchangeabilityMode::default(),
            attributes: None,
        }
    }
}

#[derive(Default)]
struct MarketEntry {
    price_sum: f64,
    n: usize,
    feature: bool,
    display: bool,
}

impl MarketEntry {
    fn price(&self) -> f64 {
        self.price_sum / self.n as f64
    }
}

/// Lazily cached logit rows and pair scores over one model.
pub struct ScoreCache<'m> {
    model: &'m EmbeddingModel,
    mode: ExchangeabilityMode,
    rows: HashMap<usize, Vec<f64>>,
    pairs: HashMap<(usize, usize), (f64, f64)>,
}

impl<'m> ScoreCache<'m> {
    pub fn new(model: &'m EmbeddingModel, mode: ExchangeabilityMode) -> Self {
        ScoreCache {
            model,
            mode,
            rows: HashMap::new(),
            pairs: HashMap::new(),
        }
    }

    /// `(complementarity, exchangeability)` of a product pair.
    pub fn pair(&mut self, a: usize, b: usize) -> (f64, f64) {
        let key = (a.min(b), a.max(b));
        if let Some(&v) = self.pairs.get(&key) {
            return v;
        }
        let model = self.model;
        let c = complementarity(model, key.0, key.1);
        let e = if model.n_products() <= 2 {
            0.0
        } else {
            for p in [key.0, key.1] {
                self.rows.entry(p).or_insert_with(|| logits(model, p));
            }
            exchangeability_from_logits(&self.rows[&key.0], &self.rows[&key.1], key.0, key.1, self.mode)
        };
        self.pairs.insert(key, (c, e));
        (c, e)
    }

    /// Mean pair scores between `product` and each context item; `(0, 0)`
    /// for an empty context.
    pub fn context_scores(&mut self, product: usize, context: &[usize]) -> (f64, f64) {
        if context.is_empty() {
            return (0.0, 0.0);
        }
        let (mut c, mut e) = (0.0, 0.0);
        for &item in context {
            let (ci, ei) = self.pair(product, item);
            c += ci;
            e += ei;
        }
        let n = context.len() as f64;
        (c / n, e / n)
    }
}

/// Average complementarity and exchangeability between each alternative and
/// the occasion's basket context, one pair per alternative.
pub fn basket_context_scores(
    model: &EmbeddingModel,
    occasion: &ChoiceOccasion,
    mode: ExchangeabilityMode,
) -> Vec<(f64, f64)> {
    let mut cache = ScoreCache::new(model, mode);
    occasion
        .alternatives
        .iter()
        .map(|a| cache.context_scores(a.product, &occasion.basket_context))
        .collect()
}

type TripKey = (String, i64, String);

/// Builds one choice occasion per category purchase.
///
/// Every category product seen in `transactions` must have a row in
/// `model`; otherwise the call fails with [`ChoiceError::MissingEmbedding`].
/// Occasions whose choice set collapses to a single alternative are dropped
/// and counted, as are occasions whose chosen product lacks an instrument
/// (when required) or falls outside a fixed top-J set.
pub fn assemble_dataset(
    transactions: &[Transaction],
    vocabulary: &Vocabulary,
    model: &EmbeddingModel,
    category: &str,
    options: &AssembleOptions,
) -> Result<ChoiceDataset, ChoiceError> {
    let index_of = |pid: &str| -> Result<usize, ChoiceError> {
        vocabulary
            .index_of(pid)
            .filter(|&i| i < model.n_products())
            .ok_or_else(|| ChoiceError::MissingEmbedding(pid.to_string()))
    };

    // (store, week) -> product -> aggregated sales; (chain, week, product) -> store prices.
    let mut markets: BTreeMap<(String, i64), BTreeMap<usize, MarketEntry>> = BTreeMap::new();
    let mut store_chain: HashMap<String, String> = HashMap::new();
    let mut purchases: BTreeSet<(TripKey, usize)> = BTreeSet::new();
    let mut purchase_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for t in transactions.iter().filter(|t| t.category == category) {
        let j = index_of(&t.product_id)?;
        let e = markets
            .entry((t.store_id.clone(), t.week))
            .or_default()
            .entry(j)
            .or_default();
        e.price_sum += t.price;
        e.n += 1;
        e.feature |= t.feature;
        e.display |= t.display;
        store_chain.insert(t.store_id.clone(), t.chain_id.clone());
        if purchases.insert(((t.household_id.clone(), t.week, t.store_id.clone()), j)) {
            *purchase_counts.entry(j).or_default() += 1;
        }
    }
    if purchases.is_empty() {
        return Err(ChoiceError::EmptyDataset);
    }

    let mut chain_prices: HashMap<(String, i64, usize), (f64, usize)> = HashMap::new();
    let mut product_prices: HashMap<usize, (f64, usize)> = HashMap::new();
    for ((store, week), products) in &markets {
        let chain = &store_chain[store];
        for (&j, e) in products {
            let s = chain_prices.entry((chain.clone(), *week, j)).or_default();
            s.0 += e.price();
            s.1 += 1;
            let s = product_prices.entry(j).or_default();
            s.0 += e.price();
            s.1 += 1;
        }
    }

    let mut contexts: HashMap<TripKey, BTreeSet<usize>> = HashMap::new();
    let trips: BTreeSet<&TripKey> = purchases.iter().map(|(k, _)| k).collect();
    for t in transactions.iter().filter(|t| t.category != category) {
        let key = (t.household_id.clone(), t.week, t.store_id.clone());
        if !trips.contains(&key) {
            continue;
        }
        if let Some(i) = vocabulary.index_of(&t.product_id).filter(|&i| i < model.n_products()) {
            contexts.entry(key).or_default().insert(i);
        }
    }

    let fixed_set: Option<Vec<usize>> = match options.availability {
        AvailabilityRule::SoldInStoreWeek => None,
        AvailabilityRule::FixedTopJ(n) => {
            let mut ranked: Vec<(usize, usize)> = purchase_counts.iter().map(|(&j, &c)| (j, c)).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            let mut top: Vec<usize> = ranked.into_iter().take(n).map(|x| x.0).collect();
            top.sort_unstable();
            Some(top)
        }
    };

    let attribute_names = options.attributes.as_ref().map(|a| a.names.clone()).unwrap_or_default();
    let attributes_of = |j: usize| -> Result<Vec<f64>, ChoiceError> {
        match &options.attributes {
            None => Ok(Vec::new()),
            Some(table) => {
                let pid = vocabulary.product_of(j);
                let row = table
                    .values
                    .get(pid)
                    .ok_or_else(|| ChoiceError::Layout(format!("no attributes for product `{pid}`")))?;
                if row.len() != table.names.len() {
                    return Err(ChoiceError::Layout(format!(
                        "product `{pid}` has {} attributes, expected {}",
                        row.len(),
                        table.names.len()
                    )));
                }
                Ok(row.clone())
            }
        }
    };

    let mut cache = ScoreCache::new(model, options.exchangeability_mode);
    let mut occasions = Vec::new();
    let (mut dropped_singleton, mut dropped_missing_instrument, mut dropped_unavailable) = (0, 0, 0);
    for ((household, week, store), chosen_product) in &purchases {
        let market = &markets[&(store.clone(), *week)];
        let chain = &store_chain[store];
        let choice_set: Vec<usize> = match &fixed_set {
            None => market.keys().copied().collect(),
            Some(top) => {
                if !top.contains(chosen_product) {
                    dropped_unavailable += 1;
                    continue;
                }
                top.clone()
            }
        };
        let context: Vec<usize> = contexts
            .get(&(household.clone(), *week, store.clone()))
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();

        let mut alternatives = Vec::with_capacity(choice_set.len());
        let mut chosen = None;
        for &j in &choice_set {
            let own = market.get(&j);
            let chain_week = chain_prices.get(&(chain.clone(), *week, j)).copied().unwrap_or((0.0, 0));
            let instrument = match own {
                Some(e) if chain_week.1 >= 2 => Some((chain_week.0 - e.price()) / (chain_week.1 - 1) as f64),
                None if chain_week.1 >= 1 => Some(chain_week.0 / chain_week.1 as f64),
                _ => None,
            };
            if instrument.is_none() && options.require_instrument {
                continue;
            }
            let price = match own {
                Some(e) => e.price(),
                None if chain_week.1 >= 1 => chain_week.0 / chain_week.1 as f64,
                None => {
                    let (s, n) = product_prices[&j];
                    s / n as f64
                }
            };
            let (c, e) = cache.context_scores(j, &context);
            if j == *chosen_product {
                chosen = Some(alternatives.len());
            }
            alternatives.push(Alternative {
                product: j,
                price,
                feature: own.is_some_and(|e| e.feature),
                display: own.is_some_and(|e| e.display),
                instrument,
                embedding: model.input_row(j).to_vec(),
                complementarity: c,
                exchangeability: e,
                residual: None,
                attributes: attributes_of(j)?,
            });
        }
        let Some(chosen) = chosen else {
            dropped_missing_instrument += 1;
            continue;
        };
        if alternatives.len() < 2 {
            dropped_singleton += 1;
            continue;
        }
        occasions.push(ChoiceOccasion {
            consumer_id: household.clone(),
            period: *week,
            store_id: store.clone(),
            chain_id: chain.clone(),
            basket_context: context,
            alternatives,
            chosen,
        });
    }
    if occasions.is_empty() {
        return Err(ChoiceError::EmptyDataset);
    }
    // `purchases` is a BTreeSet over (household, week, store, product), so the
    // occasions already come out in the documented order.
    let mut dataset = ChoiceDataset {
        category: category.to_string(),
        occasions,
        products: Vec::new(),
        product_ids: Vec::new(),
        embedding_dims: model.dims(),
        attribute_names,
        dropped_singleton,
        dropped_missing_instrument,
        dropped_unavailable,
    };
    dataset.refresh_products(|p| vocabulary.product_of(p).to_string());
    Ok(dataset)
}
