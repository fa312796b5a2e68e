use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::tree::{fit_tree, stable_mean, RegressionTree};
use crate::error::{Error, Result};

/// Upper bounds on the adjustment ensemble: at most two trees of depth at
/// most five, unless explicitly overridden.
pub const MAX_ADJUSTMENT_TREES: usize = 2;
pub const MAX_ADJUSTMENT_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            trees: 100,
            learning_rate: 0.1,
            max_depth: 4,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentParams {
    pub trees: usize,
    pub max_depth: usize,
    pub rate: f64,
    pub min_leaf: usize,
    /// Lifts the tree-count and depth bounds.
    pub allow_unbounded: bool,
}

impl Default for AdjustmentParams {
    fn default() -> Self {
        Self {
            trees: MAX_ADJUSTMENT_TREES,
            max_depth: MAX_ADJUSTMENT_DEPTH,
            rate: 1.0,
            min_leaf: 50,
            allow_unbounded: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub schema: Vec<String>,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
}

pub trait Predict {
    fn n_features(&self) -> usize;
    fn predict(&self, x: &[f64]) -> Result<f64>;
}

fn check_width(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::SchemaMismatch {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}

impl GbdtModel {
    pub fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = self.base_score;
        for t in &self.trees {
            acc += self.learning_rate * t.predict(x);
        }
        acc
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = load_json(path)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for t in &self.trees {
            if t.max_feature().is_some_and(|f| f >= self.schema.len()) {
                return Err(Error::InvalidArgument("tree splits on a feature outside the schema".into()));
            }
        }
        Ok(())
    }
}

impl Predict for GbdtModel {
    fn n_features(&self) -> usize {
        self.schema.len()
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        check_width(self.schema.len(), x)?;
        Ok(self.predict_unchecked(x))
    }
}

/// Score split into the frozen base part and the adjustment part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub base: f64,
    pub adjustment: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub base: GbdtModel,
    pub adjustment: Vec<RegressionTree>,
    pub adjustment_rate: f64,
}

impl StackedModel {
    /// A stack with no adjustment trees; scores equal the base model.
    pub fn identity(base: GbdtModel) -> Self {
        Self {
            base,
            adjustment: Vec::new(),
            adjustment_rate: 1.0,
        }
    }

    pub fn schema(&self) -> &[String] {
        &self.base.schema
    }

    pub fn adjustment_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for t in &self.adjustment {
            acc += self.adjustment_rate * t.predict(x);
        }
        acc
    }

    pub fn score(&self, x: &[f64]) -> Result<Score> {
        check_width(self.base.schema.len(), x)?;
        let base = self.base.predict_unchecked(x);
        let adjustment = self.adjustment_unchecked(x);
        Ok(Score {
            base,
            adjustment,
            total: base + adjustment,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(self, path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = load_json(path)?;
        m.base.validate()?;
        Ok(m)
    }
}

impl Predict for StackedModel {
    fn n_features(&self) -> usize {
        self.base.schema.len()
    }

    fn predict(&self, x: &[f64]) -> Result<f64> {
        self.score(x).map(|s| s.total)
    }
}

fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone)]
pub struct TrainedBase {
    pub model: GbdtModel,
    /// Training RMSE after each boosting stage.
    pub stage_rmse: Vec<f64>,
}

fn rmse_of(pred: &[f64], labels: &[f64]) -> f64 {
    let sse: f64 = pred.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum();
    (sse / labels.len() as f64).sqrt()
}

/// Least-squares boosting from the mean label.
pub fn train_base(data: &Dataset, params: &GbdtParams) -> Result<TrainedBase> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if params.trees == 0 {
        return Err(Error::InvalidArgument("tree count must be at least 1".into()));
    }
    if !(params.learning_rate > 0.0 && params.learning_rate.is_finite()) {
        return Err(Error::InvalidArgument("learning rate must be positive".into()));
    }
    let base_score = stable_mean(data.labels.iter().copied());
    let mut pred = vec![base_score; data.len()];
    let mut trees = Vec::with_capacity(params.trees);
    let mut stage_rmse = Vec::with_capacity(params.trees);
    let mut residual = vec![0.0; data.len()];
    for _ in 0..params.trees {
        for ((r, y), p) in residual.iter_mut().zip(&data.labels).zip(&pred) {
            *r = y - p;
        }
        let tree = fit_tree(&data.rows, &residual, params.max_depth, params.min_leaf)?;
        for (p, x) in pred.iter_mut().zip(&data.rows) {
            *p += params.learning_rate * tree.predict(x);
        }
        trees.push(tree);
        stage_rmse.push(rmse_of(&pred, &data.labels));
    }
    Ok(TrainedBase {
        model: GbdtModel {
            schema: data.schema.clone(),
            base_score,
            learning_rate: params.learning_rate,
            trees,
        },
        stage_rmse,
    })
}

/// Fits up to `params.trees` shallow trees on the residuals of the frozen
/// `base` over `new_data`. The base model is copied, never modified.
pub fn train_adjustment(
    base: &GbdtModel,
    new_data: &Dataset,
    params: &AdjustmentParams,
) -> Result<StackedModel> {
    if new_data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if new_data.n_features() != base.schema.len() {
        return Err(Error::SchemaMismatch {
            expected: base.schema.len(),
            found: new_data.n_features(),
        });
    }
    if params.trees == 0 {
        return Err(Error::ConstraintViolation("adjustment needs at least one tree".into()));
    }
    if !params.allow_unbounded {
        if params.trees > MAX_ADJUSTMENT_TREES {
            return Err(Error::ConstraintViolation(format!(
                "{} adjustment trees requested, at most {MAX_ADJUSTMENT_TREES} allowed",
                params.trees
            )));
        }
        if params.max_depth > MAX_ADJUSTMENT_DEPTH {
            return Err(Error::ConstraintViolation(format!(
                "adjustment depth {} exceeds {MAX_ADJUSTMENT_DEPTH}",
                params.max_depth
            )));
        }
    }
    if !(params.rate > 0.0 && params.rate.is_finite()) {
        return Err(Error::InvalidArgument("adjustment rate must be positive".into()));
    }
    let mut model = StackedModel {
        base: base.clone(),
        adjustment: Vec::with_capacity(params.trees),
        adjustment_rate: params.rate,
    };
    let mut residual = vec![0.0; new_data.len()];
    for _ in 0..params.trees {
        for ((r, y), x) in residual.iter_mut().zip(&new_data.labels).zip(&new_data.rows) {
            *r = y - (model.base.predict_unchecked(x) + model.adjustment_unchecked(x));
        }
        let tree = fit_tree(&new_data.rows, &residual, params.max_depth, params.min_leaf)?;
        model.adjustment.push(tree);
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradeRmse {
    pub count: usize,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// Keyed by the label rounded to an integer grade.
    pub per_grade: BTreeMap<i64, GradeRmse>,
    pub overall: GradeRmse,
}

pub fn rmse<P: Predict + ?Sized>(model: &P, data: &Dataset) -> Result<f64> {
    rmse_by_label(model, data).map(|r| r.overall.rmse)
}

pub fn rmse_by_label<P: Predict + ?Sized>(model: &P, data: &Dataset) -> Result<RmseReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut groups: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for (x, y) in data.rows.iter().zip(&data.labels) {
        let e = (model.predict(x)? - y).powi(2);
        let g = groups.entry(y.round() as i64).or_insert((0, 0.0));
        g.0 += 1;
        g.1 += e;
        total += e;
    }
    Ok(RmseReport {
        per_grade: groups
            .into_iter()
            .map(|(k, (n, sse))| {
                (
                    k,
                    GradeRmse {
                        count: n,
                        rmse: (sse / n as f64).sqrt(),
                    },
                )
            })
            .collect(),
        overall: GradeRmse {
            count: data.len(),
            rmse: (total / data.len() as f64).sqrt(),
        },
    })
}
