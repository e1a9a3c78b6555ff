use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::baskets::read_lines;
use crate::corpus::Basket;
use crate::error::CorpusError;

/// Training / estimation / test fractions.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.4, 0.4, 0.2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitPart {
    Training,
    Estimation,
    Test,
}

impl SplitPart {
    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Training => "training",
            SplitPart::Estimation => "estimation",
            SplitPart::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "training" => Some(Self::Training),
            "estimation" => Some(Self::Estimation),
            "test" => Some(Self::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus<T = usize> {
    pub training: Vec<Basket<T>>,
    pub estimation: Vec<Basket<T>>,
    pub test: Vec<Basket<T>>,
    pub seed: u64,
}

impl<T> SplitCorpus<T> {
    pub fn part(&self, part: SplitPart) -> &[Basket<T>] {
        match part {
            SplitPart::Training => &self.training,
            SplitPart::Estimation => &self.estimation,
            SplitPart::Test => &self.test,
        }
    }

    /// basket_id → split assignment.
    pub fn assignments(&self) -> HashMap<&str, SplitPart> {
        let mut map = HashMap::new();
        for part in [SplitPart::Training, SplitPart::Estimation, SplitPart::Test] {
            for b in self.part(part) {
                map.insert(b.basket_id.as_str(), part);
            }
        }
        map
    }

    /// One `basket_id<TAB>split` line per basket, in training/estimation/test order.
    pub fn write_tsv(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "basket_id\tsplit")?;
        for part in [SplitPart::Training, SplitPart::Estimation, SplitPart::Test] {
            for b in self.part(part) {
                writeln!(w, "{}\t{}", b.basket_id, part.name())?;
            }
        }
        w.flush()
    }
}

/// Reads a split assignment file written by [`SplitCorpus::write_tsv`].
pub fn read_split_assignments(path: &Path) -> Result<HashMap<String, SplitPart>, CorpusError> {
    let mut map = HashMap::new();
    for (n, line) in read_lines(path)?.iter().enumerate().skip(1) {
        let (id, part) = line
            .split_once('\t')
            .and_then(|(id, p)| Some((id, SplitPart::parse(p)?)))
            .ok_or_else(|| CorpusError::Parse {
                line: n + 1,
                message: "expected `basket_id<TAB>training|estimation|test`".into(),
            })?;
        map.insert(id.to_string(), part);
    }
    Ok(map)
}

/// Seeded uniform partition of baskets into training / estimation / test.
///
/// Part sizes are `round(f·n)` for the first two parts with the remainder
/// going to test. Within each part baskets keep their input order.
pub fn split_corpus<T: Clone>(
    baskets: &[Basket<T>],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SplitCorpus<T>, CorpusError> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || fractions.iter().any(|f| *f < 0.0) {
        return Err(CorpusError::BadFractions(total));
    }
    let n = baskets.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_est = ((fractions[1] * n as f64).round() as usize).min(n - n_train);

    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_est].to_vec(),
        order[n_train + n_est..].to_vec(),
    ];
    let [training, estimation, test] = parts.each_mut().map(|idx| {
        idx.sort_unstable();
        idx.iter().map(|&i| baskets[i].clone()).collect::<Vec<_>>()
    });
    Ok(SplitCorpus {
        training,
        estimation,
        test,
        seed,
    })
}
