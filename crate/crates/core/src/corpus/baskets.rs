use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::corpus::Transaction;
use crate::error::CorpusError;

/// One shopping trip. `items` holds each product at most once, in order of
/// first appearance. Baskets straight out of [`build_baskets`] carry product
/// identifiers; [`Vocabulary::encode`] turns them into dense indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basket<T = usize> {
    pub basket_id: String,
    pub household_id: String,
    pub week: i64,
    pub store_id: String,
    pub items: Vec<T>,
}

/// How transactions are grouped into trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupingKey {
    #[default]
    HouseholdWeekStore,
    HouseholdWeek,
}

impl GroupingKey {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "household_week_store" => Some(Self::HouseholdWeekStore),
            "household_week" => Some(Self::HouseholdWeek),
            _ => None,
        }
    }

    /// Trip identifier for a transaction under this key.
    pub fn trip_id(self, t: &Transaction) -> String {
        self.trip_key(&t.household_id, t.week, &t.store_id)
    }

    /// Trip identifier from its parts; `store_id` is ignored when trips
    /// are not split by store.
    pub fn trip_key(self, household_id: &str, week: i64, store_id: &str) -> String {
        match self {
            Self::HouseholdWeekStore => format!("{household_id}|{week}|{store_id}"),
            Self::HouseholdWeek => format!("{household_id}|{week}"),
        }
    }
}

/// Groups transactions into trips, collapsing repeat purchases of a product.
///
/// Baskets come out sorted by (household, week, store); with
/// [`GroupingKey::HouseholdWeek`] the store of the first line item is kept.
pub fn build_baskets(
    transactions: &[Transaction],
    key: GroupingKey,
) -> Result<Vec<Basket<String>>, CorpusError> {
    if transactions.is_empty() {
        return Err(CorpusError::EmptyTransactions);
    }
    let mut groups: BTreeMap<(String, i64, String), Basket<String>> = BTreeMap::new();
    for t in transactions {
        let store_key = match key {
            GroupingKey::HouseholdWeekStore => t.store_id.clone(),
            GroupingKey::HouseholdWeek => String::new(),
        };
        let basket = groups
            .entry((t.household_id.clone(), t.week, store_key))
            .or_insert_with(|| Basket {
                basket_id: key.trip_id(t),
                household_id: t.household_id.clone(),
                week: t.week,
                store_id: t.store_id.clone(),
                items: Vec::new(),
            });
        if !basket.items.contains(&t.product_id) {
            basket.items.push(t.product_id.clone());
        }
    }
    Ok(groups.into_values().collect())
}

/// Dense product index with basket-level frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    product_ids: Vec<String>,
    categories: Vec<String>,
    frequency: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Assembles a vocabulary from parallel per-index vectors.
    pub fn from_parts(
        product_ids: Vec<String>,
        categories: Vec<String>,
        frequency: Vec<u64>,
    ) -> Result<Self, CorpusError> {
        assert_eq!(product_ids.len(), categories.len());
        assert_eq!(product_ids.len(), frequency.len());
        if let Some(index) = frequency.iter().position(|&f| f == 0) {
            return Err(CorpusError::ZeroFrequency { index });
        }
        let index: HashMap<String, usize> = product_ids
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        if index.len() != product_ids.len() {
            return Err(CorpusError::Parse {
                line: 0,
                message: "duplicate product id in vocabulary".into(),
            });
        }
        Ok(Vocabulary {
            product_ids,
            categories,
            frequency,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.product_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.product_ids.is_empty()
    }

    pub fn index_of(&self, product_id: &str) -> Option<usize> {
        self.index.get(product_id).copied()
    }

    pub fn product_of(&self, index: usize) -> &str {
        &self.product_ids[index]
    }

    pub fn category_of(&self, index: usize) -> &str {
        &self.categories[index]
    }

    pub fn frequency(&self, index: usize) -> u64 {
        self.frequency[index]
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequency
    }

    pub fn product_ids(&self) -> &[String] {
        &self.product_ids
    }

    /// Indices of all products in `category`, ascending.
    pub fn category_members(&self, category: &str) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.categories[i] == category).collect()
    }

    /// Maps identifier baskets onto indices. Items outside the vocabulary
    /// (dropped by a frequency floor) are removed, and baskets left empty
    /// are discarded.
    pub fn encode(&self, baskets: &[Basket<String>]) -> Vec<Basket<usize>> {
        baskets
            .iter()
            .filter_map(|b| {
                let items: Vec<usize> = b.items.iter().filter_map(|p| self.index_of(p)).collect();
                (!items.is_empty()).then(|| Basket {
                    basket_id: b.basket_id.clone(),
                    household_id: b.household_id.clone(),
                    week: b.week,
                    store_id: b.store_id.clone(),
                    items,
                })
            })
            .collect()
    }

    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "index\tproduct_id\tcategory\tfrequency")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{i}\t{}\t{}\t{}",
                self.product_ids[i], self.categories[i], self.frequency[i]
            )?;
        }
        w.flush()
    }

    pub fn read_tsv(path: &Path) -> Result<Self, CorpusError> {
        let lines = read_lines(path)?;
        let mut ids = Vec::new();
        let mut cats = Vec::new();
        let mut freq = Vec::new();
        for (n, line) in lines.iter().enumerate().skip(1) {
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = |message: &str| CorpusError::Parse {
                line: n + 1,
                message: message.to_string(),
            };
            if fields.len() != 4 {
                return Err(parse_err("expected 4 tab-separated fields"));
            }
            if fields[0].parse::<usize>().ok() != Some(ids.len()) {
                return Err(parse_err("indices must be contiguous from 0"));
            }
            ids.push(fields[1].to_string());
            cats.push(fields[2].to_string());
            freq.push(fields[3].parse().map_err(|_| parse_err("bad frequency"))?);
        }
        Vocabulary::from_parts(ids, cats, freq)
    }
}

/// Builds the vocabulary from identifier baskets.
///
/// Indices follow first appearance across `baskets`. Products seen in fewer
/// than `min_frequency` baskets are left out. `categories` maps product id to
/// category; unknown products get an empty category.
pub fn build_vocabulary(
    baskets: &[Basket<String>],
    categories: &HashMap<String, String>,
    min_frequency: u64,
) -> Result<Vocabulary, CorpusError> {
    if baskets.is_empty() {
        return Err(CorpusError::EmptyBaskets);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for b in baskets {
        for p in &b.items {
            let c = counts.entry(p.as_str()).or_insert_with(|| {
                order.push(p.as_str());
                0
            });
            *c += 1;
        }
    }
    let kept: Vec<&str> = order
        .into_iter()
        .filter(|p| counts[p] >= min_frequency.max(1))
        .collect();
    Vocabulary::from_parts(
        kept.iter().map(|p| p.to_string()).collect(),
        kept.iter()
            .map(|p| categories.get(*p).cloned().unwrap_or_default())
            .collect(),
        kept.iter().map(|p| counts[p]).collect(),
    )
}

/// Product → category lookup taken from the transaction log.
pub fn categories_of(transactions: &[Transaction]) -> HashMap<String, String> {
    transactions
        .iter()
        .map(|t| (t.product_id.clone(), t.category.clone()))
        .collect()
}

/// Basket-level frequency of every index in `0..n_products`.
pub fn count_frequencies(baskets: &[Basket<usize>], n_products: usize) -> Vec<u64> {
    let mut freq = vec![0u64; n_products];
    for b in baskets {
        for &i in &b.items {
            freq[i] += 1;
        }
    }
    freq
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let f = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    BufReader::new(f)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })
}

/// One basket per line: id, household, week, store, space-separated indices.
pub fn write_baskets(path: &Path, baskets: &[Basket<usize>]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "basket_id\thousehold_id\tweek\tstore_id\titems")?;
    for b in baskets {
        let items: Vec<String> = b.items.iter().map(|i| i.to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            b.basket_id,
            b.household_id,
            b.week,
            b.store_id,
            items.join(" ")
        )?;
    }
    w.flush()
}

pub fn read_baskets(path: &Path) -> Result<Vec<Basket<usize>>, CorpusError> {
    let lines = read_lines(path)?;
    let mut out = Vec::with_capacity(lines.len().saturating_sub(1));
    for (n, line) in lines.iter().enumerate().skip(1) {
        let parse_err = |message: &str| CorpusError::Parse {
            line: n + 1,
            message: message.to_string(),
        };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(parse_err("expected 5 tab-separated fields"));
        }
        let items = f[4]
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse_err("bad item index"))?;
        let mut seen = HashSet::new();
        if items.is_empty() || !items.iter().all(|i| seen.insert(*i)) {
            return Err(parse_err("basket items must be non-empty and distinct"));
        }
        out.push(Basket {
            basket_id: f[0].to_string(),
            household_id: f[1].to_string(),
            week: f[2].parse().map_err(|_| parse_err("bad week"))?,
            store_id: f[3].to_string(),
            items,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tx(h: &str, week: i64, store: &str, product: &str) -> Transaction {
        Transaction {
            household_id: h.into(),
            week,
            store_id: store.into(),
            chain_id: "c".into(),
            product_id: product.into(),
            category: "cat".into(),
            price: 1.0,
            quantity: 1,
            feature: false,
            display: false,
        }
    }

    fn basket(items: &[&str]) -> Basket<String> {
        Basket {
            basket_id: items.join("+"),
            household_id: "h".into(),
            week: 0,
            store_id: "s".into(),
            items: items.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn same_trip_distinct_products() {
        let b = build_baskets(&[tx("h1", 1, "s1", "A"), tx("h1", 1, "s1", "B")], GroupingKey::default()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].items, vec!["A", "B"]);
    }

    #[test]
    fn repeated_product_collapses() {
        let b = build_baskets(&[tx("h1", 1, "s1", "A"), tx("h1", 1, "s1", "A")], GroupingKey::default()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].items, vec!["A"]);
    }

    #[test]
    fn two_weeks_two_baskets() {
        let t = [
            tx("h1", 1, "s1", "A"),
            tx("h1", 1, "s1", "B"),
            tx("h1", 2, "s1", "A"),
            tx("h1", 2, "s1", "C"),
        ];
        assert_eq!(build_baskets(&t, GroupingKey::default()).unwrap().len(), 2);
    }

    #[test]
    fn empty_transactions_rejected() {
        assert!(matches!(
            build_baskets(&[], GroupingKey::default()),
            Err(CorpusError::EmptyTransactions)
        ));
    }

    #[test]
    fn vocabulary_counts() {
        let v = build_vocabulary(&[basket(&["A", "B"]), basket(&["B", "C"])], &HashMap::new(), 1).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.frequency(v.index_of("B").unwrap()), 2);

        let v = build_vocabulary(&[basket(&["A"])], &HashMap::new(), 1).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.frequency(0), 1);
    }

    #[test]
    fn frequency_floor_drops_and_reindexes() {
        let raw = [basket(&["A", "B"]), basket(&["B", "C"]), basket(&["C"])];
        let v = build_vocabulary(&raw, &HashMap::new(), 2).unwrap();
        assert_eq!(v.product_ids(), &["B".to_string(), "C".to_string()]);
        let enc = v.encode(&raw);
        assert_eq!(enc[0].items, vec![0]);
        assert_eq!(enc[1].items, vec![0, 1]);
    }

    #[test]
    fn generated_frequencies_match_recount() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let raw: Vec<Basket<String>> = (0..1000)
            .map(|i| {
                let n = rng.random_range(1..8);
                let mut items: Vec<String> = Vec::new();
                for _ in 0..n {
                    let p = format!("P{}", rng.random_range(0..50));
                    if !items.contains(&p) {
                        items.push(p);
                    }
                }
                Basket {
                    basket_id: i.to_string(),
                    household_id: "h".into(),
                    week: 0,
                    store_id: "s".into(),
                    items,
                }
            })
            .collect();
        let v = build_vocabulary(&raw, &HashMap::new(), 1).unwrap();
        for i in 0..v.len() {
            let brute = raw
                .iter()
                .filter(|b| b.items.iter().any(|p| p == v.product_of(i)))
                .count() as u64;
            assert_eq!(v.frequency(i), brute);
        }
    }

    #[test]
    fn tsv_round_trips() {
        let raw = [basket(&["A", "B"]), basket(&["B", "C"])];
        let cats: HashMap<String, String> = [("A".to_string(), "x".to_string())].into();
        let v = build_vocabulary(&raw, &cats, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        v.write_tsv(&dir.path().join("v.tsv")).unwrap();
        assert_eq!(Vocabulary::read_tsv(&dir.path().join("v.tsv")).unwrap(), v);

        let enc = v.encode(&raw);
        write_baskets(&dir.path().join("b.tsv"), &enc).unwrap();
        assert_eq!(read_baskets(&dir.path().join("b.tsv")).unwrap(), enc);
    }

    proptest! {
        #[test]
        fn baskets_never_repeat_products(
            rows in proptest::collection::vec((0u8..4, 0i64..3, 0u8..2, 0u8..6), 1..200)
        ) {
            let t: Vec<Transaction> = rows
                .iter()
                .map(|&(h, w, s, p)| tx(&format!("h{h}"), w, &format!("s{s}"), &format!("p{p}")))
                .collect();
            let baskets = build_baskets(&t, GroupingKey::default()).unwrap();
            let vocab = build_vocabulary(&baskets, &HashMap::new(), 1).unwrap();
            for b in vocab.encode(&baskets) {
                let set: HashSet<_> = b.items.iter().collect();
                prop_assert_eq!(set.len(), b.items.len());
                prop_assert!(!b.items.is_empty());
            }
            for i in 0..vocab.len() {
                prop_assert_eq!(vocab.index_of(vocab.product_of(i)), Some(i));
            }
        }
    }
}
