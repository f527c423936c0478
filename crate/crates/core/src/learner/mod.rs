//! Gradient-boosted decision trees for binary infection risk.
//!
//! Second-order boosting on logistic loss with exact greedy splits,
//! L2-regularized leaf weights and sparsity-aware default directions, plus
//! exhaustive grid search on validation AUC.

mod select;
mod tree;

use serde::{Deserialize, Serialize};

pub use select::{select_hyperparameters, CellResult, HyperparameterGrid, Selection};
pub use tree::{best_split, leaf_weight, split_gain, Node, SplitCandidate, Tree};

use crate::featurize::FeatureVector;
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "haicmp-gbdt/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub max_depth: usize,
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub l2_reg: f64,
    pub min_split_gain: f64,
    pub min_child_weight: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            max_depth: 3,
            n_rounds: 50,
            learning_rate: 0.1,
            l2_reg: 1.0,
            min_split_gain: 0.0,
            min_child_weight: 1.0,
        }
    }
}

impl Hyperparameters {
    pub fn check(&self) -> Result<()> {
        let lr_ok = self.learning_rate > 0.0 && self.learning_rate <= 1.0;
        if !lr_ok || self.l2_reg < 0.0 || self.min_split_gain < 0.0 || self.min_child_weight < 0.0 {
            return Err(Error::InvalidConfig(format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Column-major features; `NaN` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub(crate) columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl FeatureMatrix {
    pub fn from_rows(rows: &[Vec<Option<f64>>], n_features: usize) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(rows.len()); n_features];
        for row in rows {
            if row.len() != n_features {
                return Err(Error::LengthMismatch(format!("row has {} values, expected {n_features}", row.len())));
            }
            for (c, v) in columns.iter_mut().zip(row) {
                c.push(v.unwrap_or(f64::NAN));
            }
        }
        Ok(FeatureMatrix { columns, n_rows: rows.len() })
    }

    pub fn from_samples(samples: &[FeatureVector], n_features: usize) -> Result<Self> {
        let rows: Vec<Vec<Option<f64>>> = samples.iter().map(|s| s.values.clone()).collect();
        Self::from_rows(&rows, n_features)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<Option<f64>> {
        self.columns.iter().map(|c| Some(c[i]).filter(|v| !v.is_nan())).collect()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean logistic loss of margins against labels.
pub fn logistic_loss(margins: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            // log(1 + e^m) - y m, computed stably
            let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            softplus - if y { m } else { 0.0 }
        })
        .sum();
    total / margins.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub format: String,
    pub feature_names: Vec<String>,
    /// Prior log-odds.
    pub base_score: f64,
    pub learning_rate: f64,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

impl GbdtModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_margin(&self, row: &[Option<f64>]) -> Result<f64> {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict(row)?;
        }
        Ok(self.base_score + self.learning_rate * sum)
    }

    pub fn predict(&self, row: &[Option<f64>]) -> Result<f64> {
        self.predict_margin(row).map(sigmoid)
    }

    pub fn predict_batch(&self, samples: &[FeatureVector]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.predict(&s.values)).collect()
    }

    pub(crate) fn margins_dense(&self, matrix: &FeatureMatrix) -> Vec<f64> {
        (0..matrix.n_rows())
            .map(|r| self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict_dense(matrix, r)).sum::<f64>())
            .collect()
    }

    /// The model after its first `n_rounds` trees.
    pub fn truncated(&self, n_rounds: usize) -> GbdtModel {
        let mut m = self.clone();
        m.trees.truncate(n_rounds);
        m.hyperparameters.n_rounds = n_rounds;
        m
    }

    /// Structural check for models read from disk.
    pub fn check(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::InvalidConfig(format!("unsupported model format `{}`", self.format)));
        }
        for t in &self.trees {
            t.check(self.n_features())?;
            if t.depth() > self.hyperparameters.max_depth {
                return Err(Error::InvalidConfig("tree deeper than max_depth".into()));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GbdtModel = serde_json::from_str(s)?;
        m.check()?;
        Ok(m)
    }
}

/// Trains a model and returns it with the mean training loss before the
/// first round and after each round.
pub fn train_with_trace(
    matrix: &FeatureMatrix,
    labels: &[bool],
    feature_names: &[String],
    hp: &Hyperparameters,
    seed: u64,
) -> Result<(GbdtModel, Vec<f64>)> {
    hp.check()?;
    if matrix.n_features() == 0 || feature_names.is_empty() {
        return Err(Error::EmptyInput("feature catalog is empty".into()));
    }
    if feature_names.len() != matrix.n_features() || labels.len() != matrix.n_rows() {
        return Err(Error::LengthMismatch("features, names and labels disagree".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::SingleClass(format!("{n_pos} positives among {} samples", labels.len())));
    }
    let prevalence = n_pos as f64 / labels.len() as f64;
    let base_score = (prevalence / (1.0 - prevalence)).ln();

    let presorted = tree::presort(matrix);
    let mut margins = vec![base_score; matrix.n_rows()];
    let mut grad = vec![0.0; matrix.n_rows()];
    let mut hess = vec![0.0; matrix.n_rows()];
    let mut trace = vec![logistic_loss(&margins, labels)];
    let mut trees = Vec::with_capacity(hp.n_rounds);
    for _ in 0..hp.n_rounds {
        for i in 0..margins.len() {
            let p = sigmoid(margins[i]);
            grad[i] = p - if labels[i] { 1.0 } else { 0.0 };
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let t = tree::fit_tree(matrix, &presorted, &grad, &hess, hp);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += hp.learning_rate * t.predict_dense(matrix, i);
        }
        trace.push(logistic_loss(&margins, labels));
        trees.push(t);
    }
    let model = GbdtModel {
        format: MODEL_FORMAT.to_string(),
        feature_names: feature_names.to_vec(),
        base_score,
        learning_rate: hp.learning_rate,
        hyperparameters: hp.clone(),
        seed,
        trees,
    };
    Ok((model, trace))
}

/// Fits `hp.n_rounds` boosting rounds. Fitting is deterministic; `seed` is
/// recorded with the model.
pub fn train(matrix: &FeatureMatrix, labels: &[bool], feature_names: &[String], hp: &Hyperparameters, seed: u64) -> Result<GbdtModel> {
    train_with_trace(matrix, labels, feature_names, hp, seed).map(|(m, _)| m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn zero_rounds_predicts_prior() {
        let rows = vec![vec![Some(1.0)], vec![Some(2.0)], vec![Some(3.0)], vec![Some(4.0)]];
        let m = FeatureMatrix::from_rows(&rows, 1).unwrap();
        let hp = Hyperparameters { n_rounds: 0, ..Default::default() };
        let model = train(&m, &[true, false, false, false], &names(1), &hp, 0).unwrap();
        let p = model.predict(&[Some(9.0)]).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
    }

    #[test]
    fn single_class_and_empty_catalog_fail() {
        let rows = vec![vec![Some(1.0)], vec![Some(2.0)]];
        let m = FeatureMatrix::from_rows(&rows, 1).unwrap();
        let hp = Hyperparameters::default();
        assert!(matches!(train(&m, &[true, true], &names(1), &hp, 0), Err(Error::SingleClass(_))));
        let empty = FeatureMatrix::from_rows(&[vec![], vec![]], 0).unwrap();
        assert!(matches!(train(&empty, &[true, false], &[], &hp, 0), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn hand_built_stump() {
        let model = GbdtModel {
            format: MODEL_FORMAT.into(),
            feature_names: names(2),
            base_score: -0.5,
            learning_rate: 0.3,
            hyperparameters: Hyperparameters { max_depth: 1, n_rounds: 1, ..Default::default() },
            seed: 0,
            trees: vec![Tree {
                nodes: vec![
                    Node::Split { feature: 1, threshold: 2.0, default_left: false, left: 1, right: 2, gain: 1.0, cover: 2.0 },
                    Node::Leaf { weight: -1.0, cover: 1.0 },
                    Node::Leaf { weight: 2.0, cover: 1.0 },
                ],
            }],
        };
        let p_left = model.predict(&[None, Some(1.0)]).unwrap();
        assert!((p_left - 1.0 / (1.0 + (0.8f64).exp())).abs() < 1e-15);
        let p_missing = model.predict(&[Some(0.0), None]).unwrap();
        assert!((p_missing - 1.0 / (1.0 + (-0.1f64).exp())).abs() < 1e-15);
        assert!(matches!(model.predict(&[Some(1.0)]), Err(Error::FeatureIndex { index: 1, .. })));
        let back = GbdtModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn missing_values_learn_a_direction() {
        // Missing co-occurs with positives; a split should route it there.
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            rows.push(vec![Some(i as f64)]);
            y.push(i >= 30);
        }
        for _ in 0..10 {
            rows.push(vec![None]);
            y.push(true);
        }
        let m = FeatureMatrix::from_rows(&rows, 1).unwrap();
        let hp = Hyperparameters { n_rounds: 20, max_depth: 2, learning_rate: 0.3, ..Default::default() };
        let model = train(&m, &y, &names(1), &hp, 0).unwrap();
        assert!(model.predict(&[None]).unwrap() > 0.8);
        assert!(model.predict(&[Some(5.0)]).unwrap() < 0.2);
    }
}
