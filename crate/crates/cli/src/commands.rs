use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use log::{info, warn};

use prodcomp::choice::{
    assemble_dataset, fit_conditional_logit, fit_first_stage, fit_mixed_logit, hit_rate, predict, AssembleOptions,
    AttributeTable, ChoiceDataset, EstimationResult, ModelKind, ModelSpec, ProductBlock,
};
use prodcomp::corpus::{
    build_baskets, build_negative_sampler, build_vocabulary, categories_of, load_transactions, read_baskets,
    read_split_assignments, split_corpus, write_baskets, write_transactions, Basket, Schema, SplitPart, Transaction,
    Vocabulary,
};
use prodcomp::embeddings::{
    category_normalized_prices, init_model, load_model, save_model, train, train_revised, write_text_export,
    EmbeddingModel, PriceMode,
};
use prodcomp::optimize::BfgsOptions;
use prodcomp::relatedness::{top_complements, top_substitutes};
use prodcomp::synthgen::{generate_market, MarketScenario};
use prodcomp::ChoiceError;

use crate::config::{PartSelection, Resolved, RunConfig};
use crate::files;

pub struct Run<'a> {
    pub config: &'a RunConfig,
    pub resolved: &'a Resolved,
}

fn out(ctx: &Run, name: &str) -> std::path::PathBuf {
    ctx.config.output_dir.join(name)
}

fn elapsed(start: Instant) -> String {
    format!("{:.2}s", start.elapsed().as_secs_f64())
}

fn schema(ctx: &Run) -> Schema {
    let mut schema = Schema {
        delimiter: ctx.resolved.delimiter,
        ..Schema::default()
    };
    for (field, column) in &ctx.config.corpus.columns {
        schema.set_column(field, column);
    }
    schema
}

fn transactions(ctx: &Run) -> Result<Vec<Transaction>> {
    let path = ctx.config.input_path();
    load_transactions(&path, &schema(ctx)).with_context(|| format!("reading transactions {}", path.display()))
}

fn vocabulary(ctx: &Run) -> Result<Vocabulary> {
    let path = out(ctx, files::VOCABULARY);
    Vocabulary::read_tsv(&path).with_context(|| format!("reading vocabulary {}", path.display()))
}

fn split_assignments(ctx: &Run) -> Result<HashMap<String, SplitPart>> {
    let path = out(ctx, files::SPLIT);
    read_split_assignments(&path).with_context(|| format!("reading split {}", path.display()))
}

fn model(ctx: &Run) -> Result<EmbeddingModel> {
    let path = ctx.config.model_path();
    load_model(&path).with_context(|| format!("reading embeddings {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn simulate(ctx: &Run) -> Result<String> {
    let start = Instant::now();
    let scenario = MarketScenario::new(ctx.resolved.scenario.clone(), ctx.config.seed)?;
    let market = generate_market(&scenario);
    let path = out(ctx, files::TRANSACTIONS);
    write_transactions(&path, &market).with_context(|| format!("writing {}", path.display()))?;
    let truth = out(ctx, files::GROUND_TRUTH);
    scenario
        .ground_truth()
        .write_tsv(&truth)
        .with_context(|| format!("writing {}", truth.display()))?;
    Ok(format!(
        "simulate: {} transactions, {} products, {} planted pairs, seed {} ({})",
        market.len(),
        scenario.n_products(),
        scenario.planted_pairs.len(),
        ctx.config.seed,
        elapsed(start)
    ))
}

pub fn ingest(ctx: &Run) -> Result<String> {
    let start = Instant::now();
    let transactions = transactions(ctx)?;
    let baskets = build_baskets(&transactions, ctx.resolved.grouping)?;
    let vocabulary = build_vocabulary(&baskets, &categories_of(&transactions), ctx.config.corpus.min_frequency)?;
    let encoded: Vec<Basket> = vocabulary.encode(&baskets);
    let split = split_corpus(&encoded, ctx.config.corpus.fractions, ctx.config.seed)?;

    let path = out(ctx, files::BASKETS);
    write_baskets(&path, &encoded).with_context(|| format!("writing {}", path.display()))?;
    let path = out(ctx, files::VOCABULARY);
    vocabulary.write_tsv(&path).with_context(|| format!("writing {}", path.display()))?;
    let path = out(ctx, files::SPLIT);
    split.write_tsv(&path).with_context(|| format!("writing {}", path.display()))?;
    Ok(format!(
        "ingest: {} transactions, {} baskets, {} products, split {}/{}/{} ({})",
        transactions.len(),
        encoded.len(),
        vocabulary.len(),
        split.training.len(),
        split.estimation.len(),
        split.test.len(),
        elapsed(start)
    ))
}

fn select_baskets(ctx: &Run, baskets: Vec<Basket>, part: PartSelection) -> Result<Vec<Basket>> {
    let PartSelection::Part(part) = part else {
        return Ok(baskets);
    };
    let assignments = split_assignments(ctx)?;
    Ok(baskets
        .into_iter()
        .filter(|b| assignments.get(&b.basket_id) == Some(&part))
        .collect())
}

pub fn train_embeddings(ctx: &Run) -> Result<String> {
    let start = Instant::now();
    let vocabulary = vocabulary(ctx)?;
    let path = out(ctx, files::BASKETS);
    let baskets = read_baskets(&path).with_context(|| format!("reading baskets {}", path.display()))?;
    let baskets = select_baskets(ctx, baskets, ctx.resolved.train_part)?;
    if baskets.is_empty() {
        bail!("no baskets in the selected training part");
    }
    let config = &ctx.resolved.embedding;
    let mut sampler = build_negative_sampler(&vocabulary, config.smoothing_exponent, config.seed)?;

    let outcome = if config.price_mode == PriceMode::Frozen {
        let prices = category_normalized_prices(&vocabulary, &transactions(ctx)?);
        let outcome = train_revised(init_model(vocabulary.len(), config, Some(&prices))?, &baskets, &mut sampler)?;
        let path = out(ctx, files::FROZEN_PRICES);
        let mut w = create(&path)?;
        writeln!(w, "product_id\tnormalized_price")?;
        for (i, p) in outcome.frozen_price.iter().flatten().enumerate() {
            writeln!(w, "{}\t{p:?}", vocabulary.product_of(i))?;
        }
        w.flush()?;
        outcome
    } else {
        train(init_model(vocabulary.len(), config, None)?, &baskets, &mut sampler)?
    };

    let path = ctx.config.model_path();
    save_model(&outcome.model, &path).with_context(|| format!("writing {}", path.display()))?;
    let path = out(ctx, files::EMBEDDINGS_TEXT);
    write_text_export(&outcome.model, &vocabulary, &path).with_context(|| format!("writing {}", path.display()))?;
    let path = out(ctx, files::TRAINING_LOG);
    let mut w = create(&path)?;
    writeln!(w, "epoch\tmean_objective")?;
    for (e, obj) in outcome.epoch_objectives.iter().enumerate() {
        writeln!(w, "{}\t{obj:?}", e + 1)?;
    }
    w.flush()?;

    Ok(format!(
        "train: {} baskets, {} products, {} dims, price {}, final objective {:.5} ({})",
        baskets.len(),
        vocabulary.len(),
        config.dims,
        config.price_mode.name(),
        outcome.epoch_objectives.last().copied().unwrap_or(f64::NAN),
        elapsed(start)
    ))
}

pub fn relate(ctx: &Run) -> Result<String> {
    let start = Instant::now();
    let vocabulary = vocabulary(ctx)?;
    let model = model(ctx)?;
    if model.n_products() != vocabulary.len() {
        bail!(
            "embeddings cover {} products but the vocabulary has {}",
            model.n_products(),
            vocabulary.len()
        );
    }
    let opts = &ctx.config.relatedness;
    let mode = ctx.resolved.exchangeability;
    let k = opts.top_k.min(model.n_products().saturating_sub(1));
    let id = |i: usize| vocabulary.product_of(i);

    let path = out(ctx, files::COMPLEMENTS);
    let mut w = create(&path)?;
    writeln!(w, "product_id\trank\tcomplement_id\tcomplementarity\texchangeability")?;
    for a in 0..model.n_products() {
        for (rank, s) in top_complements(&model, a, k, mode)?.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{:?}\t{:?}", id(a), rank + 1, id(s.b), s.complementarity, s.exchangeability)?;
        }
    }
    w.flush()?;

    let path = out(ctx, files::SUBSTITUTES);
    let mut w = create(&path)?;
    writeln!(w, "product_id\trank\tsubstitute_id\texchangeability\tcomplementarity\tthreshold")?;
    let mut truncated = 0;
    for a in 0..model.n_products() {
        let ranking = top_substitutes(&model, a, k, opts.percentile, mode)?;
        truncated += ranking.truncated as usize;
        for (rank, s) in ranking.entries.iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}\t{:?}\t{:?}\t{:?}",
                id(a),
                rank + 1,
                id(s.b),
                s.exchangeability,
                s.complementarity,
                ranking.threshold
            )?;
        }
    }
    w.flush()?;
    if truncated > 0 {
        warn!("{truncated} products had fewer than {k} substitutes after the complementarity filter");
    }
    Ok(format!(
        "relate: top {k} complements and substitutes for {} products, {truncated} truncated ({})",
        model.n_products(),
        elapsed(start)
    ))
}

fn attribute_table(path: &Path) -> Result<AttributeTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .with_context(|| format!("reading attributes {}", path.display()))?;
    let names: Vec<String> = reader.headers()?.iter().skip(1).map(String::from).collect();
    let mut values = HashMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let parsed = record
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: row {}: bad attribute value", path.display(), row + 2))?;
        if parsed.len() != names.len() {
            bail!("{}: row {}: expected {} attributes", path.display(), row + 2, names.len());
        }
        values.insert(record[0].to_string(), parsed);
    }
    Ok(AttributeTable { names, values })
}

/// Every choice occasion of the configured category, with trip keys for
/// selecting split parts.
struct ChoiceData {
    dataset: ChoiceDataset,
    assignments: Option<HashMap<String, SplitPart>>,
}

impl ChoiceData {
    fn load(ctx: &Run, needs_attributes: bool) -> Result<Self> {
        let category = ctx
            .config
            .choice
            .category
            .as_deref()
            .context("choice.category is not set")?;
        let vocabulary = vocabulary(ctx)?;
        let model = model(ctx)?;
        let attributes = match (&ctx.config.paths.attributes, needs_attributes) {
            (Some(path), _) => Some(attribute_table(path)?),
            (None, true) => bail!("paths.attributes is required for the attributes specification"),
            (None, false) => None,
        };
        let options = AssembleOptions {
            availability: ctx.resolved.availability,
            exchangeability_mode: ctx.resolved.exchangeability,
            attributes,
            ..AssembleOptions::default()
        };
        let dataset = assemble_dataset(&transactions(ctx)?, &vocabulary, &model, category, &options)?;
        info!(
            "{} occasions; dropped {} singleton, {} without instrument, {} unavailable",
            dataset.len(),
            dataset.dropped_singleton,
            dataset.dropped_missing_instrument,
            dataset.dropped_unavailable
        );
        let needs_split = [ctx.resolved.estimation_part, ctx.resolved.prediction_part]
            .iter()
            .any(|p| *p != PartSelection::All);
        let assignments = if needs_split { Some(split_assignments(ctx)?) } else { None };
        Ok(ChoiceData { dataset, assignments })
    }

    /// Occasions whose trip fell in `part`. Residuals attached to the full
    /// dataset carry over.
    fn select(&self, ctx: &Run, part: PartSelection) -> ChoiceDataset {
        let mut d = self.dataset.clone();
        if let (PartSelection::Part(part), Some(assignments)) = (part, &self.assignments) {
            let key = ctx.resolved.grouping;
            d.occasions.retain(|o| {
                assignments.get(&key.trip_key(&o.consumer_id, o.period, &o.store_id)) == Some(&part)
            });
        }
        d
    }
}

fn bfgs(ctx: &Run) -> BfgsOptions {
    BfgsOptions {
        tolerance: ctx.resolved.mixed.tolerance,
        max_iterations: ctx.resolved.mixed.max_iterations,
        ..BfgsOptions::default()
    }
}

/// Fits `spec` on the estimation part. A control function's first stage
/// runs on every occasion of `data`, which also receives the residuals.
fn fit_spec(ctx: &Run, data: &mut ChoiceData, spec: ModelSpec, kind: ModelKind) -> Result<EstimationResult> {
    let stage = if spec.control_function {
        Some(fit_first_stage(&mut data.dataset, &spec)?)
    } else {
        None
    };
    let estimation = data.select(ctx, ctx.resolved.estimation_part);
    if estimation.is_empty() {
        bail!("no choice occasions in the estimation part");
    }
    let fitted = match kind {
        ModelKind::ConditionalLogit => fit_conditional_logit(&estimation, spec, &bfgs(ctx)),
        ModelKind::MixedLogit => fit_mixed_logit(&estimation, spec, &ctx.resolved.mixed),
    };
    let mut result = match fitted {
        Ok(r) => r,
        Err(ChoiceError::NotConverged(r)) => {
            warn!("{spec} {}: optimizer stopped after {} iterations without converging", kind.name(), r.iterations);
            *r
        }
        Err(e) => return Err(e.into()),
    };
    result.first_stage = stage.as_ref().map(|s| s.summary());
    Ok(result)
}

pub fn fit(ctx: &Run) -> Result<String> {
    let start = Instant::now();
    let spec = ctx.resolved.spec;
    let mut data = ChoiceData::load(ctx, spec.product_block == ProductBlock::Attributes)?;
    let result = fit_spec(ctx, &mut data, spec, ctx.resolved.estimator)?;
    let path = out(ctx, files::COEFFICIENTS);
    let mut w = create(&path)?;
    result.write_text(&mut w)?;
    w.flush()?;
    let price = result.layout.names[result.layout.price_column].clone();
    Ok(format!(
        "fit: {} {}, {} occasions, log-likelihood {:.3}, {price} {:.4} (se {:.4}), converged {} ({})",
        spec,
        result.kind.name(),
        result.n_occasions,
        result.log_likelihood,
        result.price_coefficient(),
        result.standard_errors[result.layout.price_column],
        result.converged,
        elapsed(start)
    ))
}

pub fn predict_choices(ctx: &Run) -> Result<String> {
    let start = Instant::now();
    let path = out(ctx, files::COEFFICIENTS);
    let file = File::open(&path).with_context(|| format!("reading coefficients {}", path.display()))?;
    let result = EstimationResult::read_text(BufReader::new(file))
        .with_context(|| format!("reading coefficients {}", path.display()))?;
    let spec = result.spec();
    let mut data = ChoiceData::load(ctx, spec.product_block == ProductBlock::Attributes)?;
    if spec.control_function {
        fit_first_stage(&mut data.dataset, &spec)?;
    }
    let scored = data.select(ctx, ctx.resolved.prediction_part);
    if scored.is_empty() {
        bail!("no choice occasions in the prediction part");
    }
    let predicted = predict(&result, &scored)?;

    let path = out(ctx, files::PREDICTIONS);
    let mut w = create(&path)?;
    writeln!(w, "household_id\tweek\tstore_id\tchosen_id\tpredicted_id\thit")?;
    let mut hits = 0;
    for (o, &p) in scored.occasions.iter().zip(&predicted) {
        let id = |i: usize| scored.product_id(o.alternatives[i].product).unwrap_or("?");
        let (chosen, guess) = (id(o.chosen), id(p));
        let hit = p == o.chosen;
        hits += hit as usize;
        writeln!(w, "{}\t{}\t{}\t{chosen}\t{guess}\t{}", o.consumer_id, o.period, o.store_id, u8::from(hit))?;
    }
    w.flush()?;
    Ok(format!(
        "predict: {} {} on {} occasions, hit rate {:.4} ({})",
        spec,
        result.kind.name(),
        scored.len(),
        hits as f64 / scored.len() as f64,
        elapsed(start)
    ))
}

pub fn eval(ctx: &Run) -> Result<String> {
    let start = Instant::now();
    let needs_attributes = ctx
        .resolved
        .eval_specs
        .iter()
        .any(|s| s.product_block == ProductBlock::Attributes);
    let mut data = ChoiceData::load(ctx, needs_attributes)?;
    let path = out(ctx, files::EVAL);
    let mut w = create(&path)?;
    writeln!(
        w,
        "spec\tmodel\tn_parameters\tlog_likelihood\taic\tbic\tprice_coefficient\tprice_se\tsigma_beta\thit_rate_estimation\thit_rate_prediction\tconverged"
    )?;
    let mut best: Option<(f64, String)> = None;
    let mut rows = 0;
    for &spec in &ctx.resolved.eval_specs {
        for &kind in &ctx.resolved.eval_estimators {
            let result = fit_spec(ctx, &mut data, spec, kind)?;
            let in_sample = hit_rate(&result, &data.select(ctx, ctx.resolved.estimation_part))?;
            let prediction = data.select(ctx, ctx.resolved.prediction_part);
            let out_of_sample = if prediction.is_empty() { f64::NAN } else { hit_rate(&result, &prediction)? };
            writeln!(
                w,
                "{spec}\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{}",
                kind.name(),
                result.n_parameters(),
                result.log_likelihood,
                result.aic,
                result.bic,
                result.price_coefficient(),
                result.standard_errors[result.layout.price_column],
                result.coefficient("sigma_beta").unwrap_or(f64::NAN),
                in_sample,
                out_of_sample,
                result.converged
            )?;
            rows += 1;
            info!("{spec} {}: hit rate {out_of_sample:.4}", kind.name());
            if best.as_ref().is_none_or(|(h, _)| out_of_sample > *h) {
                best = Some((out_of_sample, format!("{spec} {}", kind.name())));
            }
        }
    }
    w.flush()?;
    let (rate, label) = best.unwrap_or((f64::NAN, "none".into()));
    Ok(format!(
        "eval: {rows} models, best prediction hit rate {rate:.4} ({label}) ({})",
        elapsed(start)
    ))
}
