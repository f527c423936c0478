use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, FeatureMatrix, GbdtModel, Hyperparameters};
use crate::evaluate::auc_score;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperparameterGrid {
    pub max_depth: Vec<usize>,
    pub n_rounds: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub l2_reg: Vec<f64>,
    pub min_split_gain: Vec<f64>,
    pub min_child_weight: Vec<f64>,
}

impl Default for HyperparameterGrid {
    fn default() -> Self {
        HyperparameterGrid {
            max_depth: vec![3, 4, 6],
            n_rounds: vec![50, 100, 200],
            learning_rate: vec![0.1, 0.3],
            l2_reg: vec![1.0],
            min_split_gain: vec![0.0],
            min_child_weight: vec![1.0],
        }
    }
}

impl HyperparameterGrid {
    pub fn singleton(hp: &Hyperparameters) -> Self {
        HyperparameterGrid {
            max_depth: vec![hp.max_depth],
            n_rounds: vec![hp.n_rounds],
            learning_rate: vec![hp.learning_rate],
            l2_reg: vec![hp.l2_reg],
            min_split_gain: vec![hp.min_split_gain],
            min_child_weight: vec![hp.min_child_weight],
        }
    }

    pub fn check(&self) -> Result<()> {
        let empty = self.max_depth.is_empty()
            || self.n_rounds.is_empty()
            || self.learning_rate.is_empty()
            || self.l2_reg.is_empty()
            || self.min_split_gain.is_empty()
            || self.min_child_weight.is_empty();
        if empty {
            return Err(Error::InvalidConfig("hyperparameter grid has an empty list".into()));
        }
        for hp in self.cells() {
            hp.check()?;
        }
        Ok(())
    }

    /// Every combination, in a fixed order.
    pub fn cells(&self) -> Vec<Hyperparameters> {
        let mut out = Vec::new();
        for &max_depth in &self.max_depth {
            for &learning_rate in &self.learning_rate {
                for &l2_reg in &self.l2_reg {
                    for &min_split_gain in &self.min_split_gain {
                        for &min_child_weight in &self.min_child_weight {
                            for &n_rounds in &self.n_rounds {
                                out.push(Hyperparameters { max_depth, n_rounds, learning_rate, l2_reg, min_split_gain, min_child_weight });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub hyperparameters: Hyperparameters,
    pub validation_auc: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best: Hyperparameters,
    pub validation_auc: f64,
    pub model: GbdtModel,
    pub cells: Vec<CellResult>,
}

/// Preference between two cells with equal validation AUC: fewer rounds,
/// then shallower trees, then the remaining fields in order.
fn simpler(a: &Hyperparameters, b: &Hyperparameters) -> Ordering {
    a.n_rounds
        .cmp(&b.n_rounds)
        .then(a.max_depth.cmp(&b.max_depth))
        .then(a.learning_rate.total_cmp(&b.learning_rate))
        .then(a.l2_reg.total_cmp(&b.l2_reg))
        .then(a.min_split_gain.total_cmp(&b.min_split_gain))
        .then(a.min_child_weight.total_cmp(&b.min_child_weight))
}

/// Exhaustive grid search on validation AUC.
///
/// Boosting is sequential, so the model with fewer rounds is a prefix of the
/// one with more; each (depth, rate, λ, γ, min-child-weight) group is trained
/// once at its largest round count and scored at every requested prefix.
pub fn select_hyperparameters(
    train_x: &FeatureMatrix,
    train_y: &[bool],
    valid_x: &FeatureMatrix,
    valid_y: &[bool],
    feature_names: &[String],
    grid: &HyperparameterGrid,
    seed: u64,
) -> Result<Selection> {
    grid.check()?;
    let mut rounds = grid.n_rounds.clone();
    rounds.sort_unstable();
    rounds.dedup();
    let max_rounds = *rounds.last().expect("nonempty grid");

    let groups: Vec<Hyperparameters> = grid.cells().into_iter().filter(|h| h.n_rounds == grid.n_rounds[0]).map(|h| Hyperparameters { n_rounds: max_rounds, ..h }).collect();

    let evaluated: Vec<Vec<(CellResult, Option<GbdtModel>)>> = groups
        .par_iter()
        .map(|g| match train(train_x, train_y, feature_names, g, seed) {
            Err(e) => rounds
                .iter()
                .map(|&r| {
                    let hyperparameters = Hyperparameters { n_rounds: r, ..g.clone() };
                    (CellResult { hyperparameters, validation_auc: None, error: Some(e.to_string()) }, None)
                })
                .collect(),
            Ok(full) => rounds
                .iter()
                .map(|&r| {
                    let m = full.truncated(r);
                    let scored = auc_score(&m.margins_dense(valid_x), valid_y);
                    let hyperparameters = m.hyperparameters.clone();
                    match scored {
                        Ok(a) => (CellResult { hyperparameters, validation_auc: Some(a), error: None }, Some(m)),
                        Err(e) => (CellResult { hyperparameters, validation_auc: None, error: Some(e.to_string()) }, None),
                    }
                })
                .collect(),
        })
        .collect();

    let mut cells = Vec::new();
    let mut best: Option<(f64, GbdtModel)> = None;
    for (cell, model) in evaluated.into_iter().flatten() {
        if let (Some(a), Some(m)) = (cell.validation_auc, model) {
            let take = match &best {
                None => true,
                Some((b, bm)) => a > *b || (a == *b && simpler(&m.hyperparameters, &bm.hyperparameters) == Ordering::Less),
            };
            if take {
                best = Some((a, m));
            }
        }
        cells.push(cell);
    }
    cells.sort_by(|a, b| simpler(&a.hyperparameters, &b.hyperparameters));
    match best {
        Some((validation_auc, model)) => Ok(Selection { best: model.hyperparameters.clone(), validation_auc, model, cells }),
        None => Err(Error::AllCellsFailed(cells.first().and_then(|c| c.error.clone()).unwrap_or_default())),
    }
}
