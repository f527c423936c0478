//! Evaluation: ROC/AUC, averaged curves, thresholded confusion partitions,
//! attributions, routing and cohort descriptive reports.

mod attribution;
mod confusion;
mod roc;
pub mod svg;

use serde::{Deserialize, Serialize};

pub use attribution::{attribution_summary, tree_attribution, tree_expectation, tree_shap, Attribution, FeatureImportance};
pub use confusion::{dual_label_confusion, ConfusionCell, DualLabelConfusion};
pub use roc::{
    auc, auc_score, default_fpr_grid, interpolate_tpr, roc_curve, vertical_average_roc, youden_threshold, AveragedRoc, RocCurve,
    RocPoint,
};

use crate::ehr::PatientStay;
use crate::featurize::FeatureVector;
use crate::labeling::{LabelRecord, ModelTarget};
use crate::learner::GbdtModel;
use crate::stats::{ks_statistic, mean, round2, sample_std};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossLabelResult {
    pub label_source: ModelTarget,
    pub auc: f64,
    pub curve: RocCurve,
}

/// Scores the samples once and measures them against the chosen label.
pub fn cross_label_eval(model: &GbdtModel, samples: &[FeatureVector], label_source: ModelTarget) -> Result<CrossLabelResult> {
    let scores = model.predict_batch(samples)?;
    let labels: Vec<bool> = samples.iter().map(|s| s.label(label_source)).collect();
    let curve = roc_curve(&scores, &labels)?;
    Ok(CrossLabelResult { label_source, auc: auc(&curve), curve })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutedPrediction {
    pub probability: f64,
    pub model: ModelTarget,
}

/// Ventilated stays go to the VAP model, everyone else to the IRI model.
pub fn route_model(stay: &PatientStay, iri: &GbdtModel, vap: &GbdtModel, row: &[Option<f64>]) -> Result<RoutedPrediction> {
    let (model, tag) = if stay.mechanically_ventilated { (vap, ModelTarget::Vap) } else { (iri, ModelTarget::Iri) };
    Ok(RoutedPrediction { probability: model.predict(row)?, model: tag })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistributionRow {
    pub iri_positive: bool,
    pub vap_positive: bool,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub n: usize,
    pub rows: Vec<LabelDistributionRow>,
}

/// Share of each (IRI, VAP) label combination among stays where both
/// labels are defined, as percentages rounded to two decimals.
pub fn label_distribution_report(records: &[LabelRecord]) -> Result<LabelDistribution> {
    let both: Vec<&LabelRecord> = records.iter().filter(|r| r.iri_label.is_included() && r.vap_label.is_included()).collect();
    if both.is_empty() {
        return Err(Error::EmptyInput("no stays carry both labels".into()));
    }
    let n = both.len();
    let rows = [(true, true), (true, false), (false, true), (false, false)]
        .into_iter()
        .map(|(i, v)| {
            let count = both.iter().filter(|r| r.iri_label.is_positive() == i && r.vap_label.is_positive() == v).count();
            LabelDistributionRow { iri_positive: i, vap_positive: v, count, percent: round2(100.0 * count as f64 / n as f64) }
        })
        .collect();
    Ok(LabelDistribution { n, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosClassSummary {
    pub n: usize,
    pub mean_hours: f64,
    pub std_hours: f64,
    /// Counts per day-wide bin starting at 0.
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosComparison {
    pub bin_width_hours: f64,
    pub positive: Option<LosClassSummary>,
    pub negative: Option<LosClassSummary>,
    /// KS distance between class LOS distributions (hours).
    pub ks_hours: Option<f64>,
}

/// Day-binned LOS histograms and summaries for positives and controls.
pub fn los_comparison(los_hours: &[f64], positive: &[bool]) -> Result<LosComparison> {
    if los_hours.len() != positive.len() {
        return Err(Error::LengthMismatch("LOS values and labels differ in length".into()));
    }
    let bin = 24.0;
    let n_bins = los_hours.iter().map(|h| (h / bin).floor() as usize + 1).max().unwrap_or(0);
    let class = |want: bool| -> (Vec<f64>, Option<LosClassSummary>) {
        let xs: Vec<f64> = los_hours.iter().zip(positive).filter(|(_, &p)| p == want).map(|(&h, _)| h).collect();
        let summary = mean(&xs).map(|m| {
            let mut histogram = vec![0; n_bins];
            for h in &xs {
                histogram[(h / bin).floor() as usize] += 1;
            }
            LosClassSummary { n: xs.len(), mean_hours: m, std_hours: sample_std(&xs).unwrap_or(0.0), histogram }
        });
        (xs, summary)
    };
    let (pos, positive) = class(true);
    let (neg, negative) = class(false);
    Ok(LosComparison { bin_width_hours: bin, positive, negative, ks_hours: ks_statistic(&pos, &neg) })
}
