//! Run configuration: a TOML file with one table per pipeline stage.
//!
//! Every field has a default, so an empty file (or no file) is valid.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use prodcomp::choice::{AvailabilityRule, DrawScheme, ModelKind, ModelSpec, MixedLogitConfig};
use prodcomp::corpus::{GroupingKey, SplitPart, CANONICAL_COLUMNS, DEFAULT_FRACTIONS};
use prodcomp::embeddings::{EmbeddingConfig, PriceMode};
use prodcomp::relatedness::ExchangeabilityMode;
use prodcomp::synthgen::ScenarioParams;

/// A validation failure: the offending key (or file) and what is wrong.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for likelihood evaluation; 0 uses every core.
    pub threads: usize,
    pub output_dir: PathBuf,
    pub paths: Paths,
    pub corpus: CorpusOptions,
    pub embeddings: EmbeddingOptions,
    pub relatedness: RelatednessOptions,
    pub choice: ChoiceOptions,
    pub simulate: SimulateOptions,
    pub logging: LoggingOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            threads: 0,
            output_dir: PathBuf::from("out"),
            paths: Paths::default(),
            corpus: CorpusOptions::default(),
            embeddings: EmbeddingOptions::default(),
            relatedness: RelatednessOptions::default(),
            choice: ChoiceOptions::default(),
            simulate: SimulateOptions::default(),
            logging: LoggingOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Transaction file. Defaults to the `simulate` output in `output_dir`.
    pub input: Option<PathBuf>,
    /// Embedding model. Defaults to `embeddings.bin` in `output_dir`.
    pub model: Option<PathBuf>,
    /// Product attribute table for `spec = "attributes"`.
    pub attributes: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusOptions {
    pub delimiter: String,
    /// Canonical field name to column header.
    pub columns: BTreeMap<String, String>,
    pub grouping: String,
    pub fractions: [f64; 3],
    pub min_frequency: u64,
    pub smoothing_exponent: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        CorpusOptions {
            delimiter: ",".into(),
            columns: BTreeMap::new(),
            grouping: "household_week_store".into(),
            fractions: DEFAULT_FRACTIONS,
            min_frequency: 1,
            smoothing_exponent: prodcomp::corpus::DEFAULT_SMOOTHING_EXPONENT,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingOptions {
    pub dims: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub initial_step_size: f64,
    pub price_mode: String,
    /// Split part to train on, or `all`.
    pub train_part: String,
}

impl Default for EmbeddingOptions {
    fn default() -> Self {
        let d = EmbeddingConfig::default();
        EmbeddingOptions {
            dims: d.dims,
            window: d.window,
            negatives: d.negatives,
            epochs: d.epochs,
            initial_step_size: d.initial_step_size,
            price_mode: d.price_mode.name().into(),
            train_part: "training".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelatednessOptions {
    pub mode: String,
    pub percentile: f64,
    pub top_k: usize,
}

impl Default for RelatednessOptions {
    fn default() -> Self {
        RelatednessOptions {
            mode: "renormalized".into(),
            percentile: 50.0,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChoiceOptions {
    pub category: Option<String>,
    pub spec: String,
    pub estimator: String,
    pub availability: String,
    pub n_draws: usize,
    pub draw_scheme: String,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Split part whose trips are used for estimation, or `all`.
    pub estimation_part: String,
    /// Split part whose trips are scored by `predict` and `eval`, or `all`.
    pub prediction_part: String,
    /// Specifications compared by `eval`.
    pub eval_specs: Vec<String>,
    /// Estimators compared by `eval`.
    pub eval_estimators: Vec<String>,
}

impl Default for ChoiceOptions {
    fn default() -> Self {
        let m = MixedLogitConfig::default();
        ChoiceOptions {
            category: None,
            spec: "embeddings,cf,scores".into(),
            estimator: "mixed_logit".into(),
            availability: AvailabilityRule::default().name(),
            n_draws: m.n_draws,
            draw_scheme: m.draw_scheme.name().into(),
            tolerance: m.tolerance,
            max_iterations: m.max_iterations,
            estimation_part: "estimation".into(),
            prediction_part: "test".into(),
            eval_specs: ["dummies", "dummies,cf", "embeddings", "embeddings,cf", "embeddings,cf,scores"]
                .map(String::from)
                .to_vec(),
            eval_estimators: vec!["conditional_logit".into(), "mixed_logit".into()],
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub scenario: Option<String>,
    pub n_products: Option<usize>,
    pub n_baskets: Option<usize>,
    pub n_consumers: Option<usize>,
    pub occasions_per_consumer: Option<usize>,
    pub beta_mean: Option<f64>,
    pub beta_sd: Option<f64>,
    pub endogeneity: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingOptions {
    pub level: String,
}

impl Default for LoggingOptions {
    fn default() -> Self {
        LoggingOptions { level: "warn".into() }
    }
}

/// Which baskets or occasions a stage uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartSelection {
    All,
    Part(SplitPart),
}

impl PartSelection {
    fn parse(key: &str, s: &str) -> Result<Self, ConfigError> {
        if s == "all" {
            return Ok(Self::All);
        }
        SplitPart::parse(s)
            .map(Self::Part)
            .ok_or_else(|| invalid(key, format!("`{s}` is not one of all, training, estimation, test")))
    }
}

/// Options after parsing the string-valued keys into their domain types.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub delimiter: u8,
    pub grouping: GroupingKey,
    pub embedding: EmbeddingConfig,
    pub train_part: PartSelection,
    pub exchangeability: ExchangeabilityMode,
    pub spec: ModelSpec,
    pub estimator: ModelKind,
    pub availability: AvailabilityRule,
    pub mixed: MixedLogitConfig,
    pub estimation_part: PartSelection,
    pub prediction_part: PartSelection,
    pub eval_specs: Vec<ModelSpec>,
    pub eval_estimators: Vec<ModelKind>,
    pub scenario: ScenarioParams,
    pub log_level: log::LevelFilter,
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let key = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| invalid(&key, e.to_string()))?;
    parse(&text).map_err(|e| invalid(&key, e.message))
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    toml::from_str(text).map_err(|e| invalid("config", e.to_string().trim_end()))
}

fn parse_spec(key: &str, label: &str) -> Result<ModelSpec, ConfigError> {
    ModelSpec::parse(label).ok_or_else(|| {
        invalid(
            key,
            format!("`{label}` is not a specification (block dummies|embeddings|attributes, then cf, scores, log_price)"),
        )
    })
}

fn parse_estimator(key: &str, s: &str) -> Result<ModelKind, ConfigError> {
    ModelKind::parse(s).ok_or_else(|| invalid(key, format!("`{s}` is not one of conditional_logit, mixed_logit")))
}

pub fn scenario_params(name: &str) -> Option<ScenarioParams> {
    match name {
        "reference" => Some(ScenarioParams::reference()),
        "heterogeneous" => Some(ScenarioParams::heterogeneous()),
        "endogenous" => Some(ScenarioParams::endogenous()),
        "price_confounded" => Some(ScenarioParams::price_confounded()),
        "null_instrument" => Some(ScenarioParams::null_instrument()),
        _ => None,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<Resolved, ConfigError> {
        let c = &self.corpus;
        let delimiter = match c.delimiter.as_bytes() {
            [b] => *b,
            _ if c.delimiter == "\\t" => b'\t',
            _ => return Err(invalid("corpus.delimiter", "must be a single byte")),
        };
        for field in c.columns.keys() {
            if !CANONICAL_COLUMNS.contains(&field.as_str()) {
                return Err(invalid(&format!("corpus.columns.{field}"), "not a transaction field"));
            }
        }
        let grouping = GroupingKey::parse(&c.grouping)
            .ok_or_else(|| invalid("corpus.grouping", "must be household_week_store or household_week"))?;
        if c.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (c.fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("corpus.fractions", "must be three values in [0, 1] summing to 1"));
        }
        if !(c.smoothing_exponent > 0.0 && c.smoothing_exponent <= 1.0) {
            return Err(invalid("corpus.smoothing_exponent", "must lie in (0, 1]"));
        }

        let e = &self.embeddings;
        let embedding = EmbeddingConfig {
            dims: e.dims,
            window: e.window,
            negatives: e.negatives,
            epochs: e.epochs,
            initial_step_size: e.initial_step_size,
            seed: self.seed,
            price_mode: PriceMode::parse(&e.price_mode)
                .ok_or_else(|| invalid("embeddings.price_mode", "must be off or frozen"))?,
            smoothing_exponent: c.smoothing_exponent,
        };
        embedding.validate().map_err(|err| invalid("embeddings", err.to_string()))?;
        let train_part = PartSelection::parse("embeddings.train_part", &e.train_part)?;

        let r = &self.relatedness;
        let exchangeability = ExchangeabilityMode::parse(&r.mode)
            .ok_or_else(|| invalid("relatedness.mode", "must be renormalized or literal"))?;
        if !(0.0..=100.0).contains(&r.percentile) {
            return Err(invalid("relatedness.percentile", "must lie in [0, 100]"));
        }
        if r.top_k < 1 {
            return Err(invalid("relatedness.top_k", "must be at least 1"));
        }

        let ch = &self.choice;
        let mixed = MixedLogitConfig {
            n_draws: ch.n_draws,
            draw_scheme: DrawScheme::parse(&ch.draw_scheme)
                .ok_or_else(|| invalid("choice.draw_scheme", "must be halton or pseudo_random"))?,
            tolerance: ch.tolerance,
            max_iterations: ch.max_iterations,
            seed: self.seed,
        };
        mixed.validate().map_err(|err| invalid("choice", err.to_string()))?;
        let eval_specs = ch
            .eval_specs
            .iter()
            .map(|s| parse_spec("choice.eval_specs", s))
            .collect::<Result<Vec<_>, _>>()?;
        let eval_estimators = ch
            .eval_estimators
            .iter()
            .map(|s| parse_estimator("choice.eval_estimators", s))
            .collect::<Result<Vec<_>, _>>()?;

        let s = &self.simulate;
        let name = s.scenario.as_deref().unwrap_or("reference");
        let mut scenario = scenario_params(name).ok_or_else(|| {
            invalid(
                "simulate.scenario",
                format!("`{name}` is not one of reference, heterogeneous, endogenous, price_confounded, null_instrument"),
            )
        })?;
        if let Some(v) = s.n_products {
            scenario.n_products = v;
        }
        if let Some(v) = s.n_baskets {
            scenario.n_baskets = v;
        }
        if let Some(v) = s.n_consumers {
            scenario.panel.n_consumers = v;
        }
        if let Some(v) = s.occasions_per_consumer {
            scenario.panel.occasions_per_consumer = v;
        }
        if let Some(v) = s.beta_mean {
            scenario.panel.beta_mean = v;
        }
        if let Some(v) = s.beta_sd {
            scenario.panel.beta_sd = v;
        }
        if let Some(v) = s.endogeneity {
            scenario.panel.endogeneity = v;
        }
        scenario.validate().map_err(|err| invalid("simulate", err.to_string()))?;

        Ok(Resolved {
            delimiter,
            grouping,
            embedding,
            train_part,
            exchangeability,
            spec: parse_spec("choice.spec", &ch.spec)?,
            estimator: parse_estimator("choice.estimator", &ch.estimator)?,
            availability: AvailabilityRule::parse(&ch.availability)
                .ok_or_else(|| invalid("choice.availability", "must be sold_in_store_week or top_<J> with J >= 2"))?,
            mixed,
            estimation_part: PartSelection::parse("choice.estimation_part", &ch.estimation_part)?,
            prediction_part: PartSelection::parse("choice.prediction_part", &ch.prediction_part)?,
            eval_specs,
            eval_estimators,
            scenario,
            log_level: self
                .logging
                .level
                .parse()
                .map_err(|_| invalid("logging.level", "must be off, error, warn, info, debug or trace"))?,
        })
    }

    pub fn input_path(&self) -> PathBuf {
        self.paths
            .input
            .clone()
            .unwrap_or_else(|| self.output_dir.join(crate::files::TRANSACTIONS))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths
            .model
            .clone()
            .unwrap_or_else(|| self.output_dir.join(crate::files::EMBEDDINGS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let c = parse("").unwrap();
        let r = c.validate().unwrap();
        assert_eq!(r.embedding.dims, 20);
        assert_eq!(r.spec.to_string(), "embeddings,cf,scores");
        assert_eq!(r.estimator, ModelKind::MixedLogit);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("[embeddings]\ndimz = 4\n").unwrap_err();
        assert!(err.message.contains("dimz"), "{err}");
        let err = parse("colour = 1\n").unwrap_err();
        assert!(err.message.contains("colour"), "{err}");
    }

    #[test]
    fn out_of_range_values_name_their_key() {
        let bad = [
            ("[corpus]\nfractions = [0.5, 0.5, 0.5]\n", "corpus.fractions"),
            ("[relatedness]\npercentile = 120.0\n", "relatedness.percentile"),
            ("[choice]\nspec = \"embeddings,iv\"\n", "choice.spec"),
            ("[choice]\nestimation_part = \"train\"\n", "choice.estimation_part"),
            ("[corpus.columns]\nprise = \"p\"\n", "corpus.columns.prise"),
            ("[simulate]\nscenario = \"nope\"\n", "simulate.scenario"),
        ];
        for (text, key) in bad {
            let err = parse(text).unwrap().validate().unwrap_err();
            assert_eq!(err.key, key, "{err}");
        }
        let err = parse("[embeddings]\ndims = 0\n").unwrap().validate().unwrap_err();
        assert!(err.key == "embeddings" && err.message.contains("dims"), "{err}");
    }

    #[test]
    fn overrides_reach_the_scenario() {
        let c = parse("[simulate]\nscenario = \"endogenous\"\nn_consumers = 30\n").unwrap();
        let r = c.validate().unwrap();
        assert_eq!(r.scenario.panel.n_consumers, 30);
        assert_eq!(r.scenario.panel.endogeneity, ScenarioParams::endogenous().panel.endogeneity);
    }
}
