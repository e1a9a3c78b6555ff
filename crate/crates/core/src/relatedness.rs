//! Complementarity and exchangeability between products, and the top-k
//! complement / substitute rankings built on them.
//!
//! Complementarity is the symmetric pair score `½(v_a·v'_b + v_b·v'_a)`.
//! Exchangeability is the negative symmetrized KL divergence between the
//! conditional purchase distributions `p(·|a)` and `p(·|b)` over the other
//! products. Scores are computed per focal product; no S×S matrix is ever
//! materialized.

use std::cmp::Ordering;

use crate::embeddings::{log_sum_exp, EmbeddingModel};
use crate::error::RelatednessError;

/// Probability floor applied before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// How the conditional distributions are restricted to `k ∉ {a, b}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExchangeabilityMode {
    /// Restrict both distributions to `k ∉ {a, b}` and renormalize each.
    #[default]
    Renormalized,
    /// Sum over `k ∉ {a, b}` using the unrestricted probabilities.
    Literal,
}

impl ExchangeabilityMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "renormalized" => Some(Self::Renormalized),
            "literal" => Some(Self::Literal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelatednessScore {
    pub a: usize,
    pub b: usize,
    pub complementarity: f64,
    pub exchangeability: f64,
}

/// `p(·|given)` over contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalDistribution {
    pub given: usize,
    pub probs: Vec<f64>,
    /// Set when the entries at `excluded` were zeroed and the rest rescaled.
    pub renormalized: bool,
    pub excluded: Vec<usize>,
}

impl ConditionalDistribution {
    /// Zeroes `exclude` and rescales the remaining mass to 1.
    pub fn restricted(&self, exclude: &[usize]) -> ConditionalDistribution {
        let mut probs = self.probs.clone();
        for &k in exclude {
            probs[k] = 0.0;
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        ConditionalDistribution {
            given: self.given,
            probs,
            renormalized: true,
            excluded: exclude.to_vec(),
        }
    }
}

pub(crate) fn logits(model: &EmbeddingModel, a: usize) -> Vec<f64> {
    (0..model.n_products()).map(|k| model.score(a, k)).collect()
}

pub fn conditional_distribution(model: &EmbeddingModel, a: usize) -> ConditionalDistribution {
    let l = logits(model, a);
    let lse = log_sum_exp(&l);
    ConditionalDistribution {
        given: a,
        probs: l.iter().map(|x| (x - lse).exp()).collect(),
        renormalized: false,
        excluded: Vec::new(),
    }
}

pub fn complementarity(model: &EmbeddingModel, a: usize, b: usize) -> f64 {
    0.5 * (model.score(a, b) + model.score(b, a))
}

/// Exchangeability from precomputed logit rows `la[k] = s(a, k)`, `lb[k] = s(b, k)`.
pub(crate) fn exchangeability_from_logits(la: &[f64], lb: &[f64], a: usize, b: usize, mode: ExchangeabilityMode) -> f64 {
    if a == b {
        return 0.0;
    }
    let keep = |k: &usize| *k != a && *k != b;
    let (norm_a, norm_b) = match mode {
        ExchangeabilityMode::Literal => (log_sum_exp(la), log_sum_exp(lb)),
        ExchangeabilityMode::Renormalized => {
            let ra: Vec<f64> = (0..la.len()).filter(keep).map(|k| la[k]).collect();
            let rb: Vec<f64> = (0..lb.len()).filter(keep).map(|k| lb[k]).collect();
            (log_sum_exp(&ra), log_sum_exp(&rb))
        }
    };
    let floor_ln = PROBABILITY_FLOOR.ln();
    // p·ln(p/q) + q·ln(q/p) = (p - q)(ln p - ln q), which is symmetric in
    // (p, q) and never negative.
    let total: f64 = (0..la.len())
        .filter(keep)
        .map(|k| {
            let lp = (la[k] - norm_a).max(floor_ln);
            let lq = (lb[k] - norm_b).max(floor_ln);
            (lp.exp() - lq.exp()) * (lp - lq)
        })
        .sum();
    -0.5 * total
}

/// Negative symmetrized KL divergence between `p(·|a)` and `p(·|b)` over
/// `k ∉ {a, b}`. Returns 0 when `a == b`.
pub fn exchangeability(
    model: &EmbeddingModel,
    a: usize,
    b: usize,
    mode: ExchangeabilityMode,
) -> Result<f64, RelatednessError> {
    if model.n_products() <= 2 {
        return Err(RelatednessError::TooFewProducts(model.n_products()));
    }
    Ok(exchangeability_from_logits(&logits(model, a), &logits(model, b), a, b, mode))
}

fn descending(a: f64, ia: usize, b: f64, ib: usize) -> Ordering {
    b.total_cmp(&a).then(ia.cmp(&ib))
}

fn check_k(model: &EmbeddingModel, k: usize) -> Result<(), RelatednessError> {
    if k >= model.n_products() {
        return Err(RelatednessError::BadK {
            k,
            n_products: model.n_products(),
        });
    }
    Ok(())
}

/// The `k` products most complementary to `focal`, best first. Ties go to
/// the lower product index. The exchangeability field is filled with `mode`.
pub fn top_complements(
    model: &EmbeddingModel,
    focal: usize,
    k: usize,
    mode: ExchangeabilityMode,
) -> Result<Vec<RelatednessScore>, RelatednessError> {
    top_complements_among(model, focal, k, mode, |_| true)
}

/// [`top_complements`] restricted to candidates accepted by `allow`.
pub fn top_complements_among(
    model: &EmbeddingModel,
    focal: usize,
    k: usize,
    mode: ExchangeabilityMode,
    allow: impl Fn(usize) -> bool,
) -> Result<Vec<RelatednessScore>, RelatednessError> {
    check_k(model, k)?;
    let mut scored: Vec<(usize, f64)> = (0..model.n_products())
        .filter(|&j| j != focal && allow(j))
        .map(|j| (j, complementarity(model, focal, j)))
        .collect();
    scored.sort_by(|x, y| descending(x.1, x.0, y.1, y.0));
    scored.truncate(k);
    let lf = logits(model, focal);
    let with_exchangeability = model.n_products() > 2;
    Ok(scored
        .into_iter()
        .map(|(j, c)| RelatednessScore {
            a: focal,
            b: j,
            complementarity: c,
            exchangeability: if with_exchangeability {
                exchangeability_from_logits(&lf, &logits(model, j), focal, j, mode)
            } else {
                f64::NAN
            },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstituteRanking {
    pub entries: Vec<RelatednessScore>,
    /// Set when fewer than `k` candidates survived the complementarity filter.
    pub truncated: bool,
    /// Complementarity cutoff used by the filter.
    pub threshold: f64,
}

/// Linear-interpolation percentile of `values` (`pct` in [0, 100]).
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    if xs.is_empty() {
        return f64::NAN;
    }
    let rank = pct / 100.0 * (xs.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (rank - lo as f64)
}

/// Products with high exchangeability and low complementarity with `focal`.
///
/// Candidates whose complementarity with `focal` is below the
/// `complementarity_percentile`-th percentile of all its complementarity
/// scores survive; at 100 nothing is filtered. Survivors are ranked by
/// exchangeability, best first, ties to the lower index.
pub fn top_substitutes(
    model: &EmbeddingModel,
    focal: usize,
    k: usize,
    complementarity_percentile: f64,
    mode: ExchangeabilityMode,
) -> Result<SubstituteRanking, RelatednessError> {
    top_substitutes_among(model, focal, k, complementarity_percentile, mode, |_| true)
}

/// [`top_substitutes`] restricted to candidates accepted by `allow`. The
/// percentile is still taken over all non-focal products.
pub fn top_substitutes_among(
    model: &EmbeddingModel,
    focal: usize,
    k: usize,
    complementarity_percentile: f64,
    mode: ExchangeabilityMode,
    allow: impl Fn(usize) -> bool,
) -> Result<SubstituteRanking, RelatednessError> {
    check_k(model, k)?;
    if !(0.0..=100.0).contains(&complementarity_percentile) {
        return Err(RelatednessError::BadPercentile(complementarity_percentile));
    }
    if model.n_products() <= 2 {
        return Err(RelatednessError::TooFewProducts(model.n_products()));
    }
    let comps: Vec<(usize, f64)> = (0..model.n_products())
        .filter(|&j| j != focal)
        .map(|j| (j, complementarity(model, focal, j)))
        .collect();
    let values: Vec<f64> = comps.iter().map(|c| c.1).collect();
    let threshold = percentile(&values, complementarity_percentile);
    let lf = logits(model, focal);
    let mut survivors: Vec<RelatednessScore> = comps
        .into_iter()
        .filter(|&(j, c)| allow(j) && (complementarity_percentile >= 100.0 || c < threshold))
        .map(|(j, c)| RelatednessScore {
            a: focal,
            b: j,
            complementarity: c,
            exchangeability: exchangeability_from_logits(&lf, &logits(model, j), focal, j, mode),
        })
        .collect();
    survivors.sort_by(|x, y| descending(x.exchangeability, x.b, y.exchangeability, y.b));
    let truncated = survivors.len() < k;
    survivors.truncate(k);
    Ok(SubstituteRanking {
        entries: survivors,
        truncated,
        threshold,
    })
}
