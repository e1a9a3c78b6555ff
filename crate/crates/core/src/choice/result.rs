//! Fitted-model results, their text form, and the metrics computed from them.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::data::ChoiceDataset;
use super::mixed::DrawScheme;
use super::spec::{Layout, ModelSpec};
use crate::error::ChoiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    ConditionalLogit,
    MixedLogit,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::ConditionalLogit => "conditional_logit",
            Self::MixedLogit => "mixed_logit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conditional_logit" => Some(Self::ConditionalLogit),
            "mixed_logit" => Some(Self::MixedLogit),
            _ => None,
        }
    }
}

/// Price-on-instrument regression reported alongside a control-function fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageSummary {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Clustered by chain × week.
    pub clustered_standard_errors: Vec<f64>,
    pub r_squared: f64,
    pub n_rows: usize,
}

impl FirstStageSummary {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        let i = self.names.iter().position(|n| n == name)?;
        Some((self.coefficients[i], self.standard_errors[i]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub kind: ModelKind,
    pub layout: Layout,
    /// Coefficient names; the mixed logit renames `beta` to `beta_bar` and
    /// appends `sigma_beta`.
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// NaN where the Hessian could not be inverted.
    pub standard_errors: Vec<f64>,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub n_occasions: usize,
    pub n_rows: usize,
    pub n_consumers: usize,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the mean log-likelihood gradient at the returned point.
    pub gradient_norm: f64,
    pub n_draws: Option<usize>,
    pub draw_scheme: Option<DrawScheme>,
    pub first_stage: Option<FirstStageSummary>,
}

/// `(aic, bic)` for `k` free parameters.
pub fn information_criteria_for(k: usize, log_likelihood: f64, n_occasions: usize) -> (f64, f64) {
    let k = k as f64;
    (
        2.0 * k - 2.0 * log_likelihood,
        k * (n_occasions as f64).ln() - 2.0 * log_likelihood,
    )
}

pub fn information_criteria(result: &EstimationResult) -> (f64, f64) {
    information_criteria_for(result.n_parameters(), result.log_likelihood, result.n_occasions)
}

impl EstimationResult {
    pub fn spec(&self) -> ModelSpec {
        self.layout.spec
    }

    pub fn n_parameters(&self) -> usize {
        self.coefficients.len()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    pub fn standard_error(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.standard_errors[i])
    }

    /// The price coefficient (its mean for the mixed logit).
    pub fn price_coefficient(&self) -> f64 {
        self.coefficients[self.layout.price_column]
    }

    /// Coefficients that enter deterministic utility, in layout order.
    pub fn utility_coefficients(&self) -> &[f64] {
        &self.coefficients[..self.layout.n_covariates()]
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut s = String::new();
        let _ = writeln!(s, "model\t{}", self.kind.name());
        let _ = writeln!(s, "spec\t{}", self.layout.spec);
        let _ = writeln!(s, "embedding_dims\t{}", self.layout.embedding_dims);
        if let Some(r) = &self.layout.reference_product {
            let _ = writeln!(s, "reference_product\t{r}");
        }
        for a in &self.layout.attribute_names {
            let _ = writeln!(s, "attribute\t{a}");
        }
        let _ = writeln!(s, "log_likelihood\t{:?}", self.log_likelihood);
        let _ = writeln!(s, "aic\t{:?}", self.aic);
        let _ = writeln!(s, "bic\t{:?}", self.bic);
        let _ = writeln!(s, "n_parameters\t{}", self.n_parameters());
        let _ = writeln!(s, "n_occasions\t{}", self.n_occasions);
        let _ = writeln!(s, "n_rows\t{}", self.n_rows);
        let _ = writeln!(s, "n_consumers\t{}", self.n_consumers);
        let _ = writeln!(s, "converged\t{}", self.converged);
        let _ = writeln!(s, "iterations\t{}", self.iterations);
        let _ = writeln!(s, "gradient_norm\t{:?}", self.gradient_norm);
        if let Some(n) = self.n_draws {
            let _ = writeln!(s, "n_draws\t{n}");
        }
        if let Some(d) = self.draw_scheme {
            let _ = writeln!(s, "draw_scheme\t{}", d.name());
        }
        for ((name, b), se) in self.names.iter().zip(&self.coefficients).zip(&self.standard_errors) {
            let _ = writeln!(s, "coef\t{name}\t{b:?}\t{se:?}");
        }
        if let Some(fs) = &self.first_stage {
            let _ = writeln!(s, "first_stage_r_squared\t{:?}", fs.r_squared);
            let _ = writeln!(s, "first_stage_n_rows\t{}", fs.n_rows);
            for i in 0..fs.names.len() {
                let _ = writeln!(
                    s,
                    "first_stage_coef\t{}\t{:?}\t{:?}\t{:?}",
                    fs.names[i], fs.coefficients[i], fs.standard_errors[i], fs.clustered_standard_errors[i]
                );
            }
        }
        w.write_all(s.as_bytes())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<EstimationResult, ChoiceError> {
        let bad = |line: usize, msg: &str| ChoiceError::Layout(format!("result line {line}: {msg}"));
        let mut kind = None;
        let mut spec = None;
        let mut embedding_dims = 0;
        let mut reference_product = None;
        let mut attribute_names = Vec::new();
        let mut scalars = std::collections::HashMap::new();
        let (mut names, mut coefficients, mut standard_errors) = (Vec::new(), Vec::new(), Vec::new());
        let mut first_stage: Option<FirstStageSummary> = None;
        let mut n_draws = None;
        let mut draw_scheme = None;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| bad(i + 1, &e.to_string()))?;
            let fields: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
            let fs = || FirstStageSummary {
                names: vec![],
                coefficients: vec![],
                standard_errors: vec![],
                clustered_standard_errors: vec![],
                r_squared: f64::NAN,
                n_rows: 0,
            };
            match fields.as_slice() {
                [""] => {}
                ["model", v] => kind = Some(ModelKind::parse(v).ok_or_else(|| bad(i + 1, "unknown model"))?),
                ["spec", v] => spec = Some(ModelSpec::parse(v).ok_or_else(|| bad(i + 1, "unknown spec"))?),
                ["embedding_dims", v] => embedding_dims = v.parse().map_err(|_| bad(i + 1, "bad dims"))?,
                ["reference_product", v] => reference_product = Some(v.to_string()),
                ["attribute", v] => attribute_names.push(v.to_string()),
                ["n_draws", v] => n_draws = Some(v.parse().map_err(|_| bad(i + 1, "bad n_draws"))?),
                ["draw_scheme", v] => {
                    draw_scheme = Some(DrawScheme::parse(v).ok_or_else(|| bad(i + 1, "unknown draw scheme"))?)
                }
                ["coef", name, b, se] => {
                    names.push(name.to_string());
                    coefficients.push(num(b)?);
                    standard_errors.push(num(se)?);
                }
                ["first_stage_r_squared", v] => first_stage.get_or_insert_with(fs).r_squared = num(v)?,
                ["first_stage_n_rows", v] => {
                    first_stage.get_or_insert_with(fs).n_rows = v.parse().map_err(|_| bad(i + 1, "bad count"))?
                }
                ["first_stage_coef", name, b, se, cse] => {
                    let f = first_stage.get_or_insert_with(fs);
                    f.names.push(name.to_string());
                    f.coefficients.push(num(b)?);
                    f.standard_errors.push(num(se)?);
                    f.clustered_standard_errors.push(num(cse)?);
                }
                [key, v] => {
                    scalars.insert(key.to_string(), v.to_string());
                }
                _ => return Err(bad(i + 1, "unrecognized line")),
            }
        }
        let kind = kind.ok_or_else(|| bad(0, "missing model"))?;
        let spec = spec.ok_or_else(|| bad(0, "missing spec"))?;
        let dummy_products: Vec<String> = names
            .iter()
            .filter_map(|n| n.strip_prefix("alpha[").and_then(|s| s.strip_suffix(']')))
            .map(String::from)
            .collect();
        let layout = Layout::from_parts(spec, dummy_products, reference_product, embedding_dims, attribute_names);
        let scalar = |key: &str| -> Result<&String, ChoiceError> { scalars.get(key).ok_or_else(|| bad(0, &format!("missing {key}"))) };
        let f = |key: &str| -> Result<f64, ChoiceError> { scalar(key)?.parse().map_err(|_| bad(0, key)) };
        let u = |key: &str| -> Result<usize, ChoiceError> { scalar(key)?.parse().map_err(|_| bad(0, key)) };
        let result = EstimationResult {
            kind,
            layout,
            names,
            coefficients,
            standard_errors,
            log_likelihood: f("log_likelihood")?,
            aic: f("aic")?,
            bic: f("bic")?,
            n_occasions: u("n_occasions")?,
            n_rows: u("n_rows")?,
            n_consumers: u("n_consumers")?,
            converged: scalar("converged")? == "true",
            iterations: u("iterations")?,
            gradient_norm: f("gradient_norm")?,
            n_draws,
            draw_scheme,
            first_stage,
        };
        if result.coefficients.len() < result.layout.n_covariates() {
            return Err(bad(0, "fewer coefficients than the spec requires"));
        }
        Ok(result)
    }
}

/// Index of the highest-utility alternative in each occasion. Mixed logits
/// are evaluated at the mean price coefficient. Ties go to the earlier
/// alternative, which is the lower product index.
pub fn predict(result: &EstimationResult, dataset: &ChoiceDataset) -> Result<Vec<usize>, ChoiceError> {
    let design = result.layout.design(dataset)?;
    let theta = result.utility_coefficients();
    let beta = theta[design.price_column];
    Ok((0..design.n_occasions())
        .map(|t| {
            let rows = design.occasion_start[t]..design.occasion_start[t + 1];
            let mut best = (0, f64::NEG_INFINITY);
            for (i, r) in rows.enumerate() {
                let u = design.base_utility(r, theta) + beta * design.price(r);
                if u > best.1 {
                    best = (i, u);
                }
            }
            best.0
        })
        .collect())
}

/// Share of occasions whose predicted alternative was the one chosen.
pub fn hit_rate(result: &EstimationResult, dataset: &ChoiceDataset) -> Result<f64, ChoiceError> {
    if dataset.is_empty() {
        return Err(ChoiceError::EmptyDataset);
    }
    let predicted = predict(result, dataset)?;
    let hits = predicted
        .iter()
        .zip(&dataset.occasions)
        .filter(|(p, o)| **p == o.chosen)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// Builds a result around given coefficients, e.g. for scoring a dataset
/// with externally chosen parameters.
pub fn result_from_coefficients(layout: Layout, coefficients: Vec<f64>) -> EstimationResult {
    let n = coefficients.len();
    EstimationResult {
        kind: ModelKind::ConditionalLogit,
        names: layout.names.clone(),
        layout,
        coefficients,
        standard_errors: vec![f64::NAN; n],
        log_likelihood: f64::NAN,
        aic: f64::NAN,
        bic: f64::NAN,
        n_occasions: 0,
        n_rows: 0,
        n_consumers: 0,
        converged: false,
        iterations: 0,
        gradient_norm: f64::NAN,
        n_draws: None,
        draw_scheme: None,
        first_stage: None,
    }
}
