//! Model specifications and the covariate layout they induce.

use std::collections::HashMap;
use std::fmt;

use super::data::ChoiceDataset;
use crate::error::ChoiceError;

/// How product identity enters utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProductBlock {
    /// One fixed effect per product, the lowest-indexed product as reference.
    Dummies,
    /// One coefficient per embedding dimension.
    #[default]
    Embeddings,
    /// One coefficient per user-supplied attribute column.
    Attributes,
}

impl ProductBlock {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dummies => "dummies",
            Self::Embeddings => "embeddings",
            Self::Attributes => "attributes",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dummies" => Some(Self::Dummies),
            "embeddings" => Some(Self::Embeddings),
            "attributes" => Some(Self::Attributes),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriceTransform {
    #[default]
    Level,
    Log,
}

impl PriceTransform {
    pub fn apply(self, price: f64) -> f64 {
        match self {
            Self::Level => price,
            Self::Log => price.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelSpec {
    pub product_block: ProductBlock,
    /// Add the first-stage residual as a covariate.
    pub control_function: bool,
    /// Add basket-context complementarity and exchangeability.
    pub with_scores: bool,
    pub price_transform: PriceTransform,
}

impl ModelSpec {
    pub fn new(product_block: ProductBlock, control_function: bool, with_scores: bool) -> Self {
        ModelSpec {
            product_block,
            control_function,
            with_scores,
            price_transform: PriceTransform::Level,
        }
    }

    /// Parses labels such as `embeddings`, `dummies,cf` or `embeddings,cf,scores,log_price`.
    pub fn parse(label: &str) -> Option<Self> {
        let mut parts = label.split(',').map(str::trim);
        let mut spec = ModelSpec::new(ProductBlock::parse(parts.next()?)?, false, false);
        for flag in parts {
            match flag {
                "cf" => spec.control_function = true,
                "scores" => spec.with_scores = true,
                "log_price" => spec.price_transform = PriceTransform::Log,
                _ => return None,
            }
        }
        Some(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.product_block.name())?;
        if self.control_function {
            f.write_str(",cf")?;
        }
        if self.with_scores {
            f.write_str(",scores")?;
        }
        if self.price_transform == PriceTransform::Log {
            f.write_str(",log_price")?;
        }
        Ok(())
    }
}

/// Named covariate columns for one spec on one product set.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub spec: ModelSpec,
    /// Products with their own dummy column (the reference product excluded).
    pub dummy_products: Vec<String>,
    pub reference_product: Option<String>,
    pub embedding_dims: usize,
    pub attribute_names: Vec<String>,
    pub names: Vec<String>,
    pub price_column: usize,
}

impl Layout {
    pub fn new(spec: ModelSpec, dataset: &ChoiceDataset) -> Result<Layout, ChoiceError> {
        let (dummy_products, reference_product) = match spec.product_block {
            ProductBlock::Dummies => {
                let (first, rest) = dataset
                    .product_ids
                    .split_first()
                    .ok_or(ChoiceError::EmptyDataset)?;
                (rest.to_vec(), Some(first.clone()))
            }
            _ => (Vec::new(), None),
        };
        if spec.product_block == ProductBlock::Embeddings && dataset.embedding_dims == 0 {
            return Err(ChoiceError::Layout("embedding spec needs at least one dimension".into()));
        }
        if spec.product_block == ProductBlock::Attributes && dataset.attribute_names.is_empty() {
            return Err(ChoiceError::Layout("attribute spec needs attribute columns".into()));
        }
        Ok(Self::from_parts(
            spec,
            dummy_products,
            reference_product,
            dataset.embedding_dims,
            dataset.attribute_names.clone(),
        ))
    }

    pub fn from_parts(
        spec: ModelSpec,
        dummy_products: Vec<String>,
        reference_product: Option<String>,
        embedding_dims: usize,
        attribute_names: Vec<String>,
    ) -> Layout {
        let mut names: Vec<String> = match spec.product_block {
            ProductBlock::Dummies => dummy_products.iter().map(|p| format!("alpha[{p}]")).collect(),
            ProductBlock::Embeddings => (1..=embedding_dims).map(|m| format!("alpha_{m}")).collect(),
            ProductBlock::Attributes => attribute_names.iter().map(|a| format!("attr[{a}]")).collect(),
        };
        let price_column = names.len();
        names.extend(["beta", "gamma_feature", "gamma_display"].map(String::from));
        if spec.with_scores {
            names.extend(["lambda", "mu"].map(String::from));
        }
        if spec.control_function {
            names.push("delta".into());
        }
        Layout {
            spec,
            dummy_products,
            reference_product,
            embedding_dims,
            attribute_names,
            names,
            price_column,
        }
    }

    pub fn n_covariates(&self) -> usize {
        self.names.len()
    }

    /// Flattens `dataset` into a row-major design matrix for this layout.
    pub(crate) fn design(&self, dataset: &ChoiceDataset) -> Result<Design, ChoiceError> {
        let k = self.n_covariates();
        let dummy_column: HashMap<&str, usize> = self
            .dummy_products
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let n_rows = dataset.n_rows();
        let mut x = Vec::with_capacity(n_rows * k);
        let mut occasion_start = Vec::with_capacity(dataset.len() + 1);
        let mut chosen = Vec::with_capacity(dataset.len());
        let mut row = vec![0.0; k];
        for o in &dataset.occasions {
            occasion_start.push(x.len() / k);
            chosen.push(x.len() / k + o.chosen);
            for a in &o.alternatives {
                row.fill(0.0);
                let mut c = 0;
                match self.spec.product_block {
                    ProductBlock::Dummies => {
                        let pid = dataset.product_id(a.product).unwrap_or("");
                        if let Some(&d) = dummy_column.get(pid) {
                            row[d] = 1.0;
                        }
                        c = self.dummy_products.len();
                    }
                    ProductBlock::Embeddings => {
                        if a.embedding.len() != self.embedding_dims {
                            return Err(ChoiceError::Layout(format!(
                                "alternative has {} embedding dims, layout expects {}",
                                a.embedding.len(),
                                self.embedding_dims
                            )));
                        }
                        row[..self.embedding_dims].copy_from_slice(&a.embedding);
                        c = self.embedding_dims;
                    }
                    ProductBlock::Attributes => {
                        if a.attributes.len() != self.attribute_names.len() {
                            return Err(ChoiceError::Layout(format!(
                                "alternative has {} attributes, layout expects {}",
                                a.attributes.len(),
                                self.attribute_names.len()
                            )));
                        }
                        row[..a.attributes.len()].copy_from_slice(&a.attributes);
                        c += a.attributes.len();
                    }
                }
                row[c] = self.spec.price_transform.apply(a.price);
                row[c + 1] = f64::from(u8::from(a.feature));
                row[c + 2] = f64::from(u8::from(a.display));
                c += 3;
                if self.spec.with_scores {
                    row[c] = a.complementarity;
                    row[c + 1] = a.exchangeability;
                    c += 2;
                }
                if self.spec.control_function {
                    row[c] = a.residual.ok_or(ChoiceError::MissingResiduals)?;
                }
                x.extend_from_slice(&row);
            }
        }
        occasion_start.push(x.len() / k);
        let mut consumer_start: Vec<usize> = dataset.consumer_ranges().iter().map(|r| r.start).collect();
        consumer_start.push(dataset.len());
        Ok(Design {
            n_covariates: k,
            price_column: self.price_column,
            x,
            occasion_start,
            chosen,
            consumer_start,
        })
    }
}

/// Row-major covariates for every occasion × alternative row.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub n_covariates: usize,
    pub price_column: usize,
    pub x: Vec<f64>,
    /// Row ranges per occasion, `len = n_occasions + 1`.
    pub occasion_start: Vec<usize>,
    /// Absolute row index of each occasion's chosen alternative.
    pub chosen: Vec<usize>,
    /// Occasion ranges per consumer, `len = n_consumers + 1`.
    pub consumer_start: Vec<usize>,
}

impl Design {
    pub fn n_occasions(&self) -> usize {
        self.chosen.len()
    }

    pub fn n_consumers(&self) -> usize {
        self.consumer_start.len() - 1
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.n_covariates..(r + 1) * self.n_covariates]
    }

    /// Utility of row `r` excluding the price term.
    pub fn base_utility(&self, r: usize, theta: &[f64]) -> f64 {
        let row = self.row(r);
        let mut u = 0.0;
        for (k, (&x, &b)) in row.iter().zip(theta).enumerate() {
            if k != self.price_column {
                u += x * b;
            }
        }
        u
    }

    pub fn price(&self, r: usize) -> f64 {
        self.x[r * self.n_covariates + self.price_column]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for label in ["embeddings", "dummies,cf", "embeddings,cf,scores", "attributes,scores,log_price"] {
            let spec = ModelSpec::parse(label).unwrap();
            assert_eq!(spec.to_string(), label);
        }
        assert_eq!(ModelSpec::parse("embeddings,nope"), None);
        assert_eq!(ModelSpec::parse("shopper"), None);
    }

    #[test]
    fn names_follow_spec() {
        let spec = ModelSpec::new(ProductBlock::Embeddings, true, true);
        let l = Layout::from_parts(spec, vec![], None, 2, vec![]);
        assert_eq!(
            l.names,
            ["alpha_1", "alpha_2", "beta", "gamma_feature", "gamma_display", "lambda", "mu", "delta"]
        );
        assert_eq!(l.price_column, 2);

        let spec = ModelSpec::new(ProductBlock::Dummies, false, false);
        let l = Layout::from_parts(spec, vec!["b".into(), "c".into()], Some("a".into()), 20, vec![]);
        assert_eq!(l.names, ["alpha[b]", "alpha[c]", "beta", "gamma_feature", "gamma_display"]);
    }

    #[test]
    fn dummy_spec_is_larger_when_products_outnumber_dims() {
        let m = 20;
        for j in 2..60usize {
            let dummies = Layout::from_parts(
                ModelSpec::new(ProductBlock::Dummies, false, false),
                (1..j).map(|i| i.to_string()).collect(),
                Some("0".into()),
                m,
                vec![],
            );
            let embeddings = Layout::from_parts(ModelSpec::new(ProductBlock::Embeddings, false, false), vec![], None, m, vec![]);
            // J - 1 identified dummies against M embedding coefficients.
            assert_eq!(dummies.n_covariates() > embeddings.n_covariates(), j > m + 1);
        }
    }
}
