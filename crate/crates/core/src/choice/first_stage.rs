//! Control-function first stage: pooled OLS of price on the product block,
//! the instrument, promotion flags and (optionally) basket-context scores.
//!
//! The embedding and attribute blocks get an intercept; the full set of
//! product dummies already spans one.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use super::data::{Alternative, ChoiceDataset, ChoiceOccasion};
use super::result::FirstStageSummary;
use super::spec::{ModelSpec, PriceTransform, ProductBlock};
use crate::error::ChoiceError;

/// Relative size below which a QR pivot marks a column as collinear with
/// the columns before it.
const COLLINEARITY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    /// `(XᵀX)⁻¹`.
    pub bread: DMatrix<f64>,
}

/// Least squares via Householder QR. Columns that are (numerically) linear
/// combinations of earlier columns are reported by name.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>, names: &[String]) -> Result<OlsFit, ChoiceError> {
    let (n, p) = x.shape();
    if n <= p {
        return Err(ChoiceError::RankDeficient(names.to_vec()));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let collinear: Vec<String> = (0..p)
        .filter(|&j| {
            let scale = x.column(j).norm();
            r[(j, j)].abs() <= COLLINEARITY_TOLERANCE * scale.max(f64::MIN_POSITIVE)
        })
        .map(|j| names[j].clone())
        .collect();
    if !collinear.is_empty() {
        return Err(ChoiceError::RankDeficient(collinear));
    }
    let qty = qr.q().transpose() * y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| ChoiceError::RankDeficient(names.to_vec()))?;
    let residuals = y - x * &beta;
    let rss = residuals.norm_squared();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| ChoiceError::RankDeficient(names.to_vec()))?;
    let bread = &r_inv * r_inv.transpose();
    let s2 = rss / (n - p) as f64;
    Ok(OlsFit {
        coefficients: beta.as_slice().to_vec(),
        standard_errors: bread.diagonal().iter().map(|v| (v * s2).sqrt()).collect(),
        residuals: residuals.as_slice().to_vec(),
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
        bread,
    })
}

/// Cluster-robust standard errors with the usual small-sample factor.
pub fn clustered_standard_errors(x: &DMatrix<f64>, fit: &OlsFit, clusters: &[usize]) -> Vec<f64> {
    let (n, p) = x.shape();
    let mut scores: BTreeMap<usize, DVector<f64>> = BTreeMap::new();
    for i in 0..n {
        let s = scores.entry(clusters[i]).or_insert_with(|| DVector::zeros(p));
        *s += x.row(i).transpose() * fit.residuals[i];
    }
    let g = scores.len() as f64;
    let mut meat = DMatrix::zeros(p, p);
    for s in scores.values() {
        meat += s * s.transpose();
    }
    let factor = if g > 1.0 {
        g / (g - 1.0) * (n as f64 - 1.0) / (n - p) as f64
    } else {
        f64::NAN
    };
    let v = &fit.bread * meat * &fit.bread * factor;
    v.diagonal().iter().map(|d| d.sqrt()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStage {
    pub product_block: ProductBlock,
    pub with_scores: bool,
    pub price_transform: PriceTransform,
    /// Product ids with a fixed-effect column (dummy block only).
    pub products: Vec<String>,
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    /// Clustered by chain × week, the level at which the instrument is built.
    pub clustered_standard_errors: Vec<f64>,
    pub r_squared: f64,
    pub n_rows: usize,
    pub n_clusters: usize,
}

impl FirstStage {
    fn column_names(block: ProductBlock, products: &[String], dims: usize, attributes: &[String], with_scores: bool) -> Vec<String> {
        let mut names: Vec<String> = match block {
            ProductBlock::Dummies => products.iter().map(|p| format!("tau[{p}]")).collect(),
            ProductBlock::Embeddings => std::iter::once("tau_0".to_string())
                .chain((1..=dims).map(|m| format!("tau_{m}")))
                .collect(),
            ProductBlock::Attributes => std::iter::once("tau_0".to_string())
                .chain(attributes.iter().map(|a| format!("tau[{a}]")))
                .collect(),
        };
        names.extend(["tau_Z", "tau_feature", "tau_display"].map(String::from));
        if with_scores {
            names.extend(["tau_C", "tau_E"].map(String::from));
        }
        names
    }

    fn regressors(&self, dataset: &ChoiceDataset, o: &ChoiceOccasion, a: &Alternative) -> Result<Vec<f64>, ChoiceError> {
        let mut row = Vec::with_capacity(self.names.len());
        match self.product_block {
            ProductBlock::Dummies => {
                let pid = dataset.product_id(a.product).unwrap_or("");
                row.extend(self.products.iter().map(|p| if p == pid { 1.0 } else { 0.0 }));
            }
            ProductBlock::Embeddings => {
                row.push(1.0);
                row.extend_from_slice(&a.embedding);
            }
            ProductBlock::Attributes => {
                row.push(1.0);
                row.extend_from_slice(&a.attributes);
            }
        }
        let z = a.instrument.ok_or_else(|| {
            let occasion = dataset.occasions.iter().position(|x| std::ptr::eq(x, o)).unwrap_or(0);
            let alternative = o.alternatives.iter().position(|x| std::ptr::eq(x, a)).unwrap_or(0);
            ChoiceError::MissingInstrument { occasion, alternative }
        })?;
        row.push(self.price_transform.apply(z));
        row.push(f64::from(u8::from(a.feature)));
        row.push(f64::from(u8::from(a.display)));
        if self.with_scores {
            row.push(a.complementarity);
            row.push(a.exchangeability);
        }
        if row.len() != self.names.len() {
            return Err(ChoiceError::Layout(format!(
                "first-stage row has {} columns, expected {}",
                row.len(),
                self.names.len()
            )));
        }
        Ok(row)
    }

    /// Sets every alternative's residual to observed price minus fitted price.
    pub fn attach(&self, dataset: &mut ChoiceDataset) -> Result<(), ChoiceError> {
        let mut residuals = Vec::with_capacity(dataset.n_rows());
        for o in &dataset.occasions {
            for a in &o.alternatives {
                let x = self.regressors(dataset, o, a)?;
                let fitted: f64 = x.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum();
                residuals.push(self.price_transform.apply(a.price) - fitted);
            }
        }
        let mut it = residuals.into_iter();
        for o in &mut dataset.occasions {
            for a in &mut o.alternatives {
                a.residual = it.next();
            }
        }
        Ok(())
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coefficients[i])
    }

    /// Instrument coefficient with its classical and clustered standard errors.
    pub fn instrument(&self) -> (f64, f64, f64) {
        let i = self.names.iter().position(|n| n == "tau_Z").expect("tau_Z column");
        (self.coefficients[i], self.standard_errors[i], self.clustered_standard_errors[i])
    }

    pub fn summary(&self) -> FirstStageSummary {
        FirstStageSummary {
            names: self.names.clone(),
            coefficients: self.coefficients.clone(),
            standard_errors: self.standard_errors.clone(),
            clustered_standard_errors: self.clustered_standard_errors.clone(),
            r_squared: self.r_squared,
            n_rows: self.n_rows,
        }
    }
}

/// Fits the first stage and attaches residuals to every alternative.
///
/// Without basket scores every regressor is constant within a store-week,
/// so each (store, week, product) enters once. With scores the regression
/// runs over all occasion × alternative rows.
pub fn fit_first_stage(dataset: &mut ChoiceDataset, spec: &ModelSpec) -> Result<FirstStage, ChoiceError> {
    if dataset.is_empty() {
        return Err(ChoiceError::EmptyDataset);
    }
    let mut stage = FirstStage {
        product_block: spec.product_block,
        with_scores: spec.with_scores,
        price_transform: spec.price_transform,
        products: if spec.product_block == ProductBlock::Dummies {
            dataset.product_ids.clone()
        } else {
            Vec::new()
        },
        names: Vec::new(),
        coefficients: Vec::new(),
        standard_errors: Vec::new(),
        clustered_standard_errors: Vec::new(),
        r_squared: f64::NAN,
        n_rows: 0,
        n_clusters: 0,
    };
    stage.names = FirstStage::column_names(
        spec.product_block,
        &stage.products,
        dataset.embedding_dims,
        &dataset.attribute_names,
        spec.with_scores,
    );

    let mut seen: HashMap<(&str, i64, usize), ()> = HashMap::new();
    let mut cluster_ids: HashMap<(&str, i64), usize> = HashMap::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut prices = Vec::new();
    let mut clusters = Vec::new();
    for (ti, o) in dataset.occasions.iter().enumerate() {
        for (ai, a) in o.alternatives.iter().enumerate() {
            if !spec.with_scores && seen.insert((o.store_id.as_str(), o.period, a.product), ()).is_some() {
                continue;
            }
            if a.instrument.is_none() {
                return Err(ChoiceError::MissingInstrument {
                    occasion: ti,
                    alternative: ai,
                });
            }
            rows.extend(stage.regressors(dataset, o, a)?);
            prices.push(spec.price_transform.apply(a.price));
            let next = cluster_ids.len();
            clusters.push(*cluster_ids.entry((o.chain_id.as_str(), o.period)).or_insert(next));
        }
    }
    let p = stage.names.len();
    let x = DMatrix::from_row_slice(prices.len(), p, &rows);
    let y = DVector::from_vec(prices);
    let fit = ols(&x, &y, &stage.names)?;
    stage.clustered_standard_errors = clustered_standard_errors(&x, &fit, &clusters);
    stage.coefficients = fit.coefficients;
    stage.standard_errors = fit.standard_errors;
    stage.r_squared = fit.r_squared;
    stage.n_rows = y.len();
    stage.n_clusters = cluster_ids.len();
    stage.attach(dataset)?;
    Ok(stage)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::choice::test_support::random_dataset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("c{i}")).collect()
    }

    /// Gaussian elimination with partial pivoting on the normal equations.
    fn normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
        let p = x.ncols();
        let mut a: Vec<Vec<f64>> = (0..p)
            .map(|i| {
                let mut row: Vec<f64> = (0..p).map(|j| x.column(i).dot(&x.column(j))).collect();
                row.push(x.column(i).dot(y));
                row
            })
            .collect();
        for c in 0..p {
            let pivot = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, pivot);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    #[test]
    fn matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = DMatrix::from_fn(10, 4, |_, _| rng.random_range(-1.0..1.0));
            let y = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
            let fit = ols(&x, &y, &names(4)).unwrap();
            for (a, b) in fit.coefficients.iter().zip(normal_equations(&x, &y)) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_fn(8, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_fn(8, |i, _| 0.5 + 2.0 * i as f64);
        let fit = ols(&x, &y, &names(2)).unwrap();
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reports_collinear_columns() {
        let x = DMatrix::from_fn(10, 3, |i, j| match j {
            0 => 1.0,
            1 => i as f64,
            _ => 2.0 + 3.0 * i as f64,
        });
        let y = DVector::from_fn(10, |i, _| i as f64);
        match ols(&x, &y, &names(3)) {
            Err(ChoiceError::RankDeficient(cols)) => assert_eq!(cols, vec!["c2".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn price_linear_in_instrument_leaves_no_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut d = random_dataset(&mut rng, 60, 3, 2);
        for o in &mut d.occasions {
            for a in &mut o.alternatives {
                a.price = 0.3 + 1.7 * a.instrument.unwrap();
            }
        }
        let mut spec = ModelSpec::default();
        spec.with_scores = true;
        let stage = fit_first_stage(&mut d, &spec).unwrap();
        assert!((stage.r_squared - 1.0).abs() < 1e-12);
        assert!((stage.coefficient("tau_Z").unwrap() - 1.7).abs() < 1e-10);
        assert!((stage.coefficient("tau_0").unwrap() - 0.3).abs() < 1e-10);
        for o in &d.occasions {
            for a in &o.alternatives {
                assert!(a.residual.unwrap().abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rows_are_deduplicated_per_market() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut d = random_dataset(&mut rng, 40, 3, 2);
        // Two occasions per store-week share every alternative.
        for t in 0..d.occasions.len() {
            let o = &mut d.occasions[t];
            o.store_id = "s".into();
            o.period = (t / 2) as i64;
        }
        for t in (1..d.occasions.len()).step_by(2) {
            let alts = d.occasions[t - 1].alternatives.clone();
            d.occasions[t].alternatives = alts;
        }
        let stage = fit_first_stage(&mut d, &ModelSpec::default()).unwrap();
        assert_eq!(stage.n_rows, d.n_rows() / 2);
        let with_scores = ModelSpec {
            with_scores: true,
            ..ModelSpec::default()
        };
        assert_eq!(fit_first_stage(&mut d, &with_scores).unwrap().n_rows, d.n_rows());
    }

    #[test]
    fn missing_instrument_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = random_dataset(&mut rng, 10, 3, 2);
        d.occasions[3].alternatives[1].instrument = None;
        let err = fit_first_stage(&mut d, &ModelSpec::default()).unwrap_err();
        assert!(matches!(err, ChoiceError::MissingInstrument { occasion: 3, alternative: 1 }));
    }
}
