//! The {IRI, VAP} × {Gaussian imputation, balanced missingness} experiment
//! over repeated OOD-mitigated splits.
//!
//! The stages are exposed individually so the CLI can run and cache them
//! one at a time; [`run_experiment`] chains them in memory.

use std::collections::{BTreeMap, BTreeSet};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{balance_missingness, build_common_cohort, match_los, repeat_splits, BalanceOutcome, CohortSplit, LosMatchOutcome};
use crate::config::{MissingnessStrategy, PipelineConfig};
use crate::ehr::{PatientId, RejectionCounts, StayId, ValidatedDataset};
use crate::evaluate::{
    attribution_summary, auc, auc_score, default_fpr_grid, dual_label_confusion, label_distribution_report, los_comparison, roc_curve,
    route_model, vertical_average_roc, youden_threshold, AveragedRoc, DualLabelConfusion, FeatureImportance, LabelDistribution,
    LosComparison, RocCurve,
};
use crate::featurize::{featurize_stays, gaussian_impute_all, FeatureVector, FeaturizeSummary};
use crate::labeling::{label_cohort, LabelRecord, ModelTarget};
use crate::learner::{select_hyperparameters, CellResult, FeatureMatrix, GbdtModel, Hyperparameters, Selection};
use crate::rng::derive_seed;
use crate::stats::MeanStd;
use crate::{Error, Result};

pub const REPORT_FORMAT: &str = "haicmp-report/1";

/// One row of the experiment: a model target under one missingness strategy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub model_target: ModelTarget,
    pub missingness_strategy: MissingnessStrategy,
    pub apply_los_matching: bool,
    pub balance_test_set: bool,
    pub n_repeats: usize,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn key(&self) -> String {
        format!("{}_{}", self.model_target, self.missingness_strategy.as_str())
    }
}

pub fn plans(cfg: &PipelineConfig) -> Vec<ExperimentPlan> {
    let e = &cfg.experiment;
    let mut out = Vec::new();
    for &t in &e.targets {
        for &s in &e.strategies {
            out.push(ExperimentPlan {
                model_target: t,
                missingness_strategy: s,
                apply_los_matching: e.los_match_targets.contains(&t),
                balance_test_set: e.balance_test_set,
                n_repeats: cfg.cohort.n_repeats,
                seed: cfg.seed,
            });
        }
    }
    out
}

/// Cohorts and repeated splits for every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortArtifacts {
    pub common: BTreeSet<StayId>,
    pub splits: BTreeMap<ModelTarget, Vec<CohortSplit>>,
}

pub fn cohort_stage(cfg: &PipelineConfig, dataset: &ValidatedDataset, labels: &[LabelRecord]) -> Result<CohortArtifacts> {
    let iri = crate::cohort::model_cohort_of(ModelTarget::Iri, labels);
    let vap = crate::cohort::model_cohort_of(ModelTarget::Vap, labels);
    let common = build_common_cohort(&iri, &vap);
    let mut splits = BTreeMap::new();
    for &target in &cfg.experiment.targets {
        let cohort = if target == ModelTarget::Iri { &iri } else { &vap };
        let patient_of: BTreeMap<StayId, PatientId> = cohort
            .iter()
            .filter_map(|s| dataset.get(s).map(|r| (s.clone(), r.stay.patient_id.clone())))
            .collect();
        let base = derive_seed(cfg.seed, "splits", "");
        let s = repeat_splits(cfg.cohort.n_repeats, base, &patient_of, &common, &cfg.cohort.splits)?;
        for split in &s {
            split.check(&patient_of, &common)?;
        }
        splits.insert(target, s);
    }
    Ok(CohortArtifacts { common, splits })
}

/// One-shot samples for every stay in the target's model cohort.
pub fn featurize_stage(
    cfg: &PipelineConfig,
    dataset: &ValidatedDataset,
    labels: &[LabelRecord],
    target: ModelTarget,
) -> Result<(Vec<FeatureVector>, FeaturizeSummary)> {
    let label_map: BTreeMap<String, LabelRecord> = labels.iter().map(|l| (l.stay_id.clone(), l.clone())).collect();
    let records: Vec<_> = dataset
        .records()
        .filter(|r| label_map.get(&r.stay.stay_id).is_some_and(|l| l.label(target).is_included()))
        .collect();
    featurize_stays(
        &records,
        &label_map,
        target,
        &cfg.catalog(),
        &cfg.features.windows,
        cfg.features.gap_hours,
        cfg.labeling.hai_clock_hours,
        derive_seed(cfg.seed, "featurize", target.as_str()),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosMatchSummary {
    pub cases: usize,
    pub controls_before: usize,
    pub controls_after: usize,
    pub requested_total: usize,
    pub shortfall: usize,
}

impl LosMatchSummary {
    fn of(cases: usize, controls_before: usize, o: &LosMatchOutcome) -> Self {
        LosMatchSummary { cases, controls_before, controls_after: o.retained.len(), requested_total: o.requested_total, shortfall: o.shortfall }
    }
}

/// Model-ready partitions of one split under one plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: Vec<FeatureVector>,
    pub validation: Vec<FeatureVector>,
    pub test: Vec<FeatureVector>,
    pub los_match: Vec<LosMatchSummary>,
    pub balance: Vec<BalanceOutcome>,
}

fn los_match_samples(
    cfg: &PipelineConfig,
    target: ModelTarget,
    samples: Vec<FeatureVector>,
    los_hours: &BTreeMap<StayId, f64>,
    seed: u64,
) -> Result<(Vec<FeatureVector>, LosMatchSummary)> {
    let los = |s: &FeatureVector| (s.stay_id.clone(), los_hours.get(&s.stay_id).copied().unwrap_or(0.0));
    let cases: Vec<(StayId, f64)> = samples.iter().filter(|s| s.label(target)).map(los).collect();
    let controls: Vec<(StayId, f64)> = samples.iter().filter(|s| !s.label(target)).map(los).collect();
    let outcome = match_los(&cases, &controls, &cfg.cohort.los_match, seed)?;
    let keep: BTreeSet<&StayId> = outcome.retained.iter().collect();
    let summary = LosMatchSummary::of(cases.len(), controls.len(), &outcome);
    let kept = samples.into_iter().filter(|s| s.label(target) || keep.contains(&s.stay_id)).collect();
    Ok((kept, summary))
}

/// Selects the split's samples and applies LOS matching and the plan's
/// missingness strategy. LOS matching touches training and validation
/// samples; missingness balancing touches training samples only (and the
/// test set when `balance_test_set`). Imputation applies everywhere.
pub fn prepare_split(
    cfg: &PipelineConfig,
    plan: &ExperimentPlan,
    split: &CohortSplit,
    samples: &[FeatureVector],
    los_hours: &BTreeMap<StayId, f64>,
) -> Result<SplitData> {
    let target = plan.model_target;
    let pick = |set: &BTreeSet<StayId>| -> Vec<FeatureVector> { samples.iter().filter(|s| set.contains(&s.stay_id)).cloned().collect() };
    let (mut train, mut validation, mut test) = (pick(&split.train), pick(&split.validation), pick(&split.test));
    let seed = |tag: &str| derive_seed(split.seed, tag, &plan.key());

    let mut los_match = Vec::new();
    if plan.apply_los_matching {
        let (t, a) = los_match_samples(cfg, target, train, los_hours, seed("los_match_train"))?;
        let (v, b) = los_match_samples(cfg, target, validation, los_hours, seed("los_match_validation"))?;
        train = t;
        validation = v;
        los_match = vec![a, b];
    }

    let names = cfg.catalog().names();
    let mut balance = Vec::new();
    match plan.missingness_strategy {
        MissingnessStrategy::GaussianImpute => {
            let ranges = cfg.reference_ranges()?;
            let s = seed("impute");
            train = gaussian_impute_all(&train, &names, &ranges, s)?;
            validation = gaussian_impute_all(&validation, &names, &ranges, s)?;
            test = gaussian_impute_all(&test, &names, &ranges, s)?;
        }
        MissingnessStrategy::BalanceMissingness => {
            let anchor = cfg.catalog().index_of(&cfg.cohort.balance.anchor_feature).ok_or_else(|| Error::UnknownFeature(cfg.cohort.balance.anchor_feature.clone()))?;
            let (t, a) = balance_missingness(&train, target, anchor, &cfg.cohort.balance, seed("balance_train"))?;
            train = t;
            balance = vec![a];
            if plan.balance_test_set {
                let (x, c) = balance_missingness(&test, target, anchor, &cfg.cohort.balance, seed("balance_test"))?;
                test = x;
                balance.push(c);
            }
        }
    }
    Ok(SplitData { train, validation, test, los_match, balance })
}

fn matrix(samples: &[FeatureVector], n: usize) -> Result<FeatureMatrix> {
    FeatureMatrix::from_samples(samples, n)
}

fn labels_of(samples: &[FeatureVector], target: ModelTarget) -> Vec<bool> {
    samples.iter().map(|s| s.label(target)).collect()
}

pub fn fit_split(cfg: &PipelineConfig, plan: &ExperimentPlan, split: &CohortSplit, data: &SplitData) -> Result<Selection> {
    let names = cfg.catalog().names();
    let n = names.len();
    select_hyperparameters(
        &matrix(&data.train, n)?,
        &labels_of(&data.train, plan.model_target),
        &matrix(&data.validation, n)?,
        &labels_of(&data.validation, plan.model_target),
        &names,
        &cfg.grid,
        derive_seed(split.seed, "train", &plan.key()),
    )
}

/// SHA-256 over the serialized samples.
pub fn samples_sha256(samples: &[&FeatureVector]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(serde_json::to_vec(s).expect("samples serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub train_positive: usize,
    pub validation: usize,
    pub validation_positive: usize,
    pub test: usize,
    pub test_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub counts: SplitCounts,
    pub selected: Hyperparameters,
    pub train_auc: f64,
    pub validation_auc: f64,
    pub test_auc: f64,
    /// Test AUC against each label source.
    pub test_auc_by_label: BTreeMap<ModelTarget, f64>,
    pub test_curves: BTreeMap<ModelTarget, RocCurve>,
    /// Youden threshold on the validation curve, applied to the test set.
    pub threshold: f64,
    pub confusion: DualLabelConfusion,
    pub attribution: Vec<FeatureImportance>,
    pub train_los: LosComparison,
    pub los_match: Vec<LosMatchSummary>,
    pub balance: Vec<BalanceOutcome>,
    pub grid: Vec<CellResult>,
    /// Hash of everything the training stage saw (training and validation samples).
    pub training_inputs_sha256: String,
    pub test_features_sha256: String,
    pub test_stays_in_training: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub split_id: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub metrics: Option<SplitMetrics>,
}

impl SplitResult {
    pub fn succeeded(&self) -> bool {
        self.metrics.is_some()
    }
}

pub fn evaluate_split(
    cfg: &PipelineConfig,
    plan: &ExperimentPlan,
    split: &CohortSplit,
    data: &SplitData,
    model: &GbdtModel,
    grid: Vec<CellResult>,
    los_hours: &BTreeMap<StayId, f64>,
) -> Result<SplitMetrics> {
    let target = plan.model_target;
    let score = |s: &[FeatureVector]| model.predict_batch(s);
    let (train_scores, val_scores, test_scores) = (score(&data.train)?, score(&data.validation)?, score(&data.test)?);
    let train_auc = auc_score(&train_scores, &labels_of(&data.train, target))?;
    let val_curve = roc_curve(&val_scores, &labels_of(&data.validation, target))?;
    let test_curve = roc_curve(&test_scores, &labels_of(&data.test, target))?;

    let mut test_auc_by_label = BTreeMap::new();
    let mut test_curves = BTreeMap::new();
    for source in [ModelTarget::Iri, ModelTarget::Vap] {
        match roc_curve(&test_scores, &labels_of(&data.test, source)) {
            Ok(c) => {
                test_auc_by_label.insert(source, auc(&c));
                test_curves.insert(source, c);
            }
            Err(e) => warn!("split {}: no {source} test curve: {e}", split.split_id),
        }
    }

    let threshold = youden_threshold(&val_curve);
    let confusion = dual_label_confusion(&test_scores, threshold, &labels_of(&data.test, ModelTarget::Vap), &labels_of(&data.test, ModelTarget::Iri))?;

    let n_attr = cfg.experiment.attribution_samples.min(data.test.len());
    let rows: Vec<Vec<Option<f64>>> = data.test[..n_attr].iter().map(|s| s.values.clone()).collect();
    let attribution = attribution_summary(model, &rows)?;

    let los: Vec<f64> = data.train.iter().map(|s| los_hours.get(&s.stay_id).copied().unwrap_or(0.0)).collect();
    let train_los = los_comparison(&los, &labels_of(&data.train, target))?;

    let training: Vec<&FeatureVector> = data.train.iter().chain(&data.validation).collect();
    let test_stays_in_training = training.iter().filter(|s| split.test.contains(&s.stay_id)).count();
    let pos = |s: &[FeatureVector]| s.iter().filter(|x| x.label(target)).count();

    Ok(SplitMetrics {
        counts: SplitCounts {
            train: data.train.len(),
            train_positive: pos(&data.train),
            validation: data.validation.len(),
            validation_positive: pos(&data.validation),
            test: data.test.len(),
            test_positive: pos(&data.test),
        },
        selected: model.hyperparameters.clone(),
        train_auc,
        validation_auc: auc(&val_curve),
        test_auc: auc(&test_curve),
        test_auc_by_label,
        test_curves,
        threshold,
        confusion,
        attribution,
        train_los,
        los_match: data.los_match.clone(),
        balance: data.balance.clone(),
        grid,
        training_inputs_sha256: samples_sha256(&training),
        test_features_sha256: samples_sha256(&data.test.iter().collect::<Vec<_>>()),
        test_stays_in_training,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub train_auc: MeanStd,
    pub validation_auc: MeanStd,
    pub test_auc: MeanStd,
    pub test_auc_by_label: BTreeMap<ModelTarget, MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub plan: ExperimentPlan,
    pub featurize: FeaturizeSummary,
    pub splits: Vec<SplitResult>,
    pub successful_splits: usize,
    pub error: Option<String>,
    pub aggregate: Option<Aggregate>,
    pub averaged_roc: BTreeMap<ModelTarget, AveragedRoc>,
    /// Confusion cells summed over successful splits.
    pub pooled_confusion: Option<DualLabelConfusion>,
    pub attribution: Vec<FeatureImportance>,
}

impl PlanReport {
    pub fn metrics(&self) -> impl Iterator<Item = &SplitMetrics> {
        self.splits.iter().filter_map(|s| s.metrics.as_ref())
    }
}

fn aggregate(splits: &[SplitResult]) -> Option<Aggregate> {
    let m: Vec<&SplitMetrics> = splits.iter().filter_map(|s| s.metrics.as_ref()).collect();
    let col = |f: &dyn Fn(&SplitMetrics) -> f64| MeanStd::of(&m.iter().map(|x| f(x)).collect::<Vec<_>>());
    let mut by_label = BTreeMap::new();
    for source in [ModelTarget::Iri, ModelTarget::Vap] {
        let xs: Vec<f64> = m.iter().filter_map(|x| x.test_auc_by_label.get(&source).copied()).collect();
        if let Some(ms) = MeanStd::of(&xs) {
            by_label.insert(source, ms);
        }
    }
    Some(Aggregate {
        train_auc: col(&|x| x.train_auc)?,
        validation_auc: col(&|x| x.validation_auc)?,
        test_auc: col(&|x| x.test_auc)?,
        test_auc_by_label: by_label,
    })
}

fn pooled_confusion(metrics: &[&SplitMetrics]) -> Option<DualLabelConfusion> {
    let first = metrics.first()?;
    let mut pooled = first.confusion.clone();
    for m in &metrics[1..] {
        for (p, c) in pooled.cells.iter_mut().zip(&m.confusion.cells) {
            p.count += c.count;
        }
    }
    let fp = pooled.vap_false_positives();
    pooled.vap_false_positive_iri_share = (fp > 0).then(|| pooled.count(true, false, true) as f64 / fp as f64);
    // Thresholds differ per split; report their mean.
    pooled.threshold = metrics.iter().map(|m| m.confusion.threshold).sum::<f64>() / metrics.len() as f64;
    Some(pooled)
}

fn mean_attribution(metrics: &[&SplitMetrics]) -> Vec<FeatureImportance> {
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for m in metrics {
        for a in &m.attribution {
            *sums.entry(&a.feature).or_default() += a.mean_abs_contribution;
        }
    }
    let n = metrics.len().max(1) as f64;
    let mut out: Vec<FeatureImportance> =
        sums.into_iter().map(|(f, s)| FeatureImportance { feature: f.to_string(), mean_abs_contribution: s / n }).collect();
    out.sort_by(|a, b| b.mean_abs_contribution.total_cmp(&a.mean_abs_contribution).then_with(|| a.feature.cmp(&b.feature)));
    out
}

/// Assembles a plan report from per-split results.
pub fn plan_report(cfg: &PipelineConfig, plan: ExperimentPlan, featurize: FeaturizeSummary, splits: Vec<SplitResult>) -> PlanReport {
    let metrics: Vec<&SplitMetrics> = splits.iter().filter_map(|s| s.metrics.as_ref()).collect();
    let successful_splits = metrics.len();
    let required = cfg.experiment.min_successful_splits.min(plan.n_repeats);
    let mut averaged_roc = BTreeMap::new();
    let (error, aggregate_stats) = if successful_splits < required {
        (Some(Error::TooFewSplits { succeeded: successful_splits, required }.to_string()), None)
    } else {
        for source in [ModelTarget::Iri, ModelTarget::Vap] {
            let curves: Vec<RocCurve> = metrics.iter().filter_map(|m| m.test_curves.get(&source).cloned()).collect();
            if let Ok(avg) = vertical_average_roc(&curves, &default_fpr_grid(), cfg.experiment.ci_z) {
                averaged_roc.insert(source, avg);
            }
        }
        (None, aggregate(&splits))
    };
    PlanReport {
        pooled_confusion: if aggregate_stats.is_some() { pooled_confusion(&metrics) } else { None },
        attribution: mean_attribution(&metrics),
        plan,
        featurize,
        successful_splits,
        error,
        aggregate: aggregate_stats,
        averaged_roc,
        splits,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingSplit {
    pub split_id: usize,
    pub n: usize,
    pub n_ventilated: usize,
    /// All-HAI (IRI) model over every test sample.
    pub auc_all_hai: Option<f64>,
    /// Routed predictions over every test sample.
    pub auc_routed: Option<f64>,
    pub auc_all_hai_ventilated: Option<f64>,
    pub auc_routed_ventilated: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub strategy: MissingnessStrategy,
    /// Samples and labels come from this target's test set.
    pub label_source: ModelTarget,
    pub splits: Vec<RoutingSplit>,
    pub mean_auc_all_hai_ventilated: Option<f64>,
    pub mean_auc_routed_ventilated: Option<f64>,
}

/// Per-split routing comparison: ventilated stays go to the VAP model.
pub fn routing_split(
    dataset: &ValidatedDataset,
    iri: &GbdtModel,
    vap: &GbdtModel,
    samples: &[FeatureVector],
    label_source: ModelTarget,
    split_id: usize,
) -> Result<RoutingSplit> {
    let mut all_hai = Vec::with_capacity(samples.len());
    let mut routed = Vec::with_capacity(samples.len());
    let mut ventilated = Vec::with_capacity(samples.len());
    for s in samples {
        let stay = &dataset.get(&s.stay_id).ok_or_else(|| Error::EmptyInput(format!("unknown stay `{}`", s.stay_id)))?.stay;
        all_hai.push(iri.predict(&s.values)?);
        routed.push(route_model(stay, iri, vap, &s.values)?.probability);
        ventilated.push(stay.mechanically_ventilated);
    }
    let labels = labels_of(samples, label_source);
    let sub = |xs: &[f64]| -> (Vec<f64>, Vec<bool>) {
        xs.iter().zip(&labels).zip(&ventilated).filter(|(_, &v)| v).map(|((x, y), _)| (*x, *y)).unzip()
    };
    let (hv, yv) = sub(&all_hai);
    let (rv, _) = sub(&routed);
    Ok(RoutingSplit {
        split_id,
        n: samples.len(),
        n_ventilated: yv.len(),
        auc_all_hai: auc_score(&all_hai, &labels).ok(),
        auc_routed: auc_score(&routed, &labels).ok(),
        auc_all_hai_ventilated: auc_score(&hv, &yv).ok(),
        auc_routed_ventilated: auc_score(&rv, &yv).ok(),
    })
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    crate::stats::mean(&v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub n_stays: usize,
    pub n_patients: usize,
    pub rejections: RejectionCounts,
    pub cohort_sizes: BTreeMap<ModelTarget, usize>,
    pub positives: BTreeMap<ModelTarget, usize>,
    pub common_cohort: usize,
    /// LOS by label over each model cohort.
    pub los: BTreeMap<ModelTarget, LosComparison>,
}

pub fn dataset_summary(dataset: &ValidatedDataset, labels: &[LabelRecord], common: &BTreeSet<StayId>) -> Result<DatasetSummary> {
    let patients: BTreeSet<&PatientId> = dataset.records().map(|r| &r.stay.patient_id).collect();
    let mut cohort_sizes = BTreeMap::new();
    let mut positives = BTreeMap::new();
    let mut los = BTreeMap::new();
    for target in [ModelTarget::Iri, ModelTarget::Vap] {
        let included: Vec<&LabelRecord> = labels.iter().filter(|l| l.label(target).is_included()).collect();
        cohort_sizes.insert(target, included.len());
        positives.insert(target, included.iter().filter(|l| l.label(target).is_positive()).count());
        let hours: Vec<f64> = included.iter().filter_map(|l| dataset.get(&l.stay_id)).map(|r| r.stay.los_hours()).collect();
        let pos: Vec<bool> = included.iter().map(|l| l.label(target).is_positive()).collect();
        los.insert(target, los_comparison(&hours, &pos)?);
    }
    Ok(DatasetSummary {
        n_stays: dataset.len(),
        n_patients: patients.len(),
        rejections: dataset.rejections().clone(),
        cohort_sizes,
        positives,
        common_cohort: common.len(),
        los,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub target: ModelTarget,
    pub strategy: MissingnessStrategy,
    pub train: Option<MeanStd>,
    pub validation: Option<MeanStd>,
    pub test: Option<MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub seed: u64,
    pub dataset: DatasetSummary,
    /// Label combinations over the common cohort.
    pub label_distribution: Option<LabelDistribution>,
    pub table: Vec<TableRow>,
    pub plans: Vec<PlanReport>,
    pub routing: Vec<RoutingReport>,
}

impl EvalReport {
    pub fn plan(&self, target: ModelTarget, strategy: MissingnessStrategy) -> Option<&PlanReport> {
        self.plans.iter().find(|p| p.plan.model_target == target && p.plan.missingness_strategy == strategy)
    }

    /// Deterministic pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Plain-text results table: one row per model and missingness strategy.
    pub fn summary_table(&self) -> String {
        let fmt = |m: &Option<MeanStd>| m.map_or("failed".to_string(), |m| format!("{:.2} ± {:.2}", m.mean, m.std));
        let mut out = format!("{:<6} {:<20} {:>14} {:>14} {:>14}\n", "Model", "Missingness", "Train AUC", "Validation AUC", "Test AUC");
        for r in &self.table {
            out += &format!(
                "{:<6} {:<20} {:>14} {:>14} {:>14}\n",
                r.target.as_str().to_uppercase(),
                r.strategy.as_str(),
                fmt(&r.train),
                fmt(&r.validation),
                fmt(&r.test)
            );
        }
        out
    }
}

/// Outcome of training one split; this is what the train stage persists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSplit {
    pub split_id: usize,
    pub seed: u64,
    pub error: Option<String>,
    pub selection: Option<Selection>,
}

/// Prepares a split and runs hyperparameter selection; failures are recorded.
pub fn train_split(
    cfg: &PipelineConfig,
    plan: &ExperimentPlan,
    split: &CohortSplit,
    samples: &[FeatureVector],
    los_hours: &BTreeMap<StayId, f64>,
) -> TrainedSplit {
    let result = prepare_split(cfg, plan, split, samples, los_hours).and_then(|data| fit_split(cfg, plan, split, &data));
    if let Err(e) = &result {
        warn!("{} split {} failed: {e}", plan.key(), split.split_id);
    }
    let (selection, error) = match result {
        Ok(s) => (Some(s), None),
        Err(e) => (None, Some(e.to_string())),
    };
    TrainedSplit { split_id: split.split_id, seed: split.seed, error, selection }
}

/// Result of one plan on one split, kept in memory for routing and export.
#[derive(Debug, Clone)]
pub struct SplitArtifacts {
    pub model: Option<GbdtModel>,
    pub test: Vec<FeatureVector>,
}

/// Evaluates a trained split. Preparation is deterministic, so the test
/// partition is rebuilt exactly as it was at training time.
pub fn evaluate_trained_split(
    cfg: &PipelineConfig,
    plan: &ExperimentPlan,
    split: &CohortSplit,
    samples: &[FeatureVector],
    los_hours: &BTreeMap<StayId, f64>,
    trained: &TrainedSplit,
) -> (SplitResult, SplitArtifacts) {
    let attempt = || -> Result<(SplitMetrics, SplitArtifacts)> {
        if let Some(e) = &trained.error {
            return Err(Error::Stage(e.clone()));
        }
        let selection = trained.selection.as_ref().ok_or_else(|| Error::Stage("split has no trained model".into()))?;
        let data = prepare_split(cfg, plan, split, samples, los_hours)?;
        let metrics = evaluate_split(cfg, plan, split, &data, &selection.model, selection.cells.clone(), los_hours)?;
        Ok((metrics, SplitArtifacts { model: Some(selection.model.clone()), test: data.test }))
    };
    match attempt() {
        Ok((m, a)) => (SplitResult { split_id: split.split_id, seed: split.seed, error: None, metrics: Some(m) }, a),
        Err(e) => {
            if trained.error.is_none() {
                warn!("{} split {} failed: {e}", plan.key(), split.split_id);
            }
            (
                SplitResult { split_id: split.split_id, seed: split.seed, error: Some(e.to_string()), metrics: None },
                SplitArtifacts { model: None, test: Vec::new() },
            )
        }
    }
}

pub fn los_hours_of(dataset: &ValidatedDataset) -> BTreeMap<StayId, f64> {
    dataset.records().map(|r| (r.stay.stay_id.clone(), r.stay.los_hours())).collect()
}

/// A stage output, or the message of the error that prevented it.
pub type StageOutput<T> = std::result::Result<T, String>;

pub type FeatureSets = BTreeMap<ModelTarget, StageOutput<(Vec<FeatureVector>, FeaturizeSummary)>>;

/// Per plan key: one trained split per cohort split, or a plan-level failure.
pub type TrainedPlans = BTreeMap<String, StageOutput<Vec<TrainedSplit>>>;

fn plan_inputs<'a>(
    plan: &ExperimentPlan,
    cohorts: &'a StageOutput<CohortArtifacts>,
    features: &'a FeatureSets,
) -> StageOutput<(&'a [CohortSplit], &'a [FeatureVector], &'a FeaturizeSummary)> {
    let splits = cohorts.as_ref().map_err(Clone::clone)?;
    let splits = splits.splits.get(&plan.model_target).ok_or_else(|| format!("no splits for target {}", plan.model_target))?;
    let (samples, summary) = features
        .get(&plan.model_target)
        .ok_or_else(|| format!("no features for target {}", plan.model_target))?
        .as_ref()
        .map_err(Clone::clone)?;
    Ok((splits, samples, summary))
}

/// Trains every plan on every split.
pub fn train_stage(
    cfg: &PipelineConfig,
    cohorts: &StageOutput<CohortArtifacts>,
    features: &FeatureSets,
    los_hours: &BTreeMap<StayId, f64>,
) -> TrainedPlans {
    plans(cfg)
        .par_iter()
        .map(|plan| {
            let trained = plan_inputs(plan, cohorts, features).map(|(splits, samples, _)| {
                info!("training {} over {} splits", plan.key(), splits.len());
                splits.par_iter().map(|s| train_split(cfg, plan, s, samples, los_hours)).collect()
            });
            (plan.key(), trained)
        })
        .collect()
}

/// Everything an experiment produces.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub labels: Vec<LabelRecord>,
    pub cohorts: Option<CohortArtifacts>,
    /// Per plan key: one entry per split.
    pub artifacts: BTreeMap<String, Vec<SplitArtifacts>>,
}

/// Routing reports from the per-split artifacts of the IRI and VAP plans.
pub fn routing_reports(
    cfg: &PipelineConfig,
    dataset: &ValidatedDataset,
    plans: &[ExperimentPlan],
    artifacts: &BTreeMap<String, Vec<SplitArtifacts>>,
) -> Vec<RoutingReport> {
    let mut out = Vec::new();
    if !cfg.experiment.routing {
        return out;
    }
    for &strategy in &cfg.experiment.strategies {
        let find = |t: ModelTarget| plans.iter().find(|p| p.model_target == t && p.missingness_strategy == strategy).and_then(|p| artifacts.get(&p.key()));
        let (Some(iri), Some(vap)) = (find(ModelTarget::Iri), find(ModelTarget::Vap)) else { continue };
        for label_source in [ModelTarget::Iri, ModelTarget::Vap] {
            let source = if label_source == ModelTarget::Iri { iri } else { vap };
            let mut splits = Vec::new();
            for (k, ((a, b), s)) in iri.iter().zip(vap).zip(source).enumerate() {
                let (Some(mi), Some(mv)) = (&a.model, &b.model) else { continue };
                match routing_split(dataset, mi, mv, &s.test, label_source, k + 1) {
                    Ok(r) => splits.push(r),
                    Err(e) => warn!("routing split {} failed: {e}", k + 1),
                }
            }
            out.push(RoutingReport {
                strategy,
                label_source,
                mean_auc_all_hai_ventilated: mean_of(splits.iter().map(|s| s.auc_all_hai_ventilated)),
                mean_auc_routed_ventilated: mean_of(splits.iter().map(|s| s.auc_routed_ventilated)),
                splits,
            });
        }
    }
    out
}

/// Evaluates trained plans and assembles the report.
pub fn evaluate_stage(
    cfg: &PipelineConfig,
    dataset: &ValidatedDataset,
    labels: Vec<LabelRecord>,
    cohorts: StageOutput<CohortArtifacts>,
    features: &FeatureSets,
    trained: &TrainedPlans,
) -> Result<ExperimentOutput> {
    let los_hours = los_hours_of(dataset);
    let plans = plans(cfg);
    let common = cohorts.as_ref().map(|c| c.common.clone()).unwrap_or_default();
    let summary = dataset_summary(dataset, &labels, &common)?;
    let common_labels: Vec<LabelRecord> = labels.iter().filter(|l| common.contains(&l.stay_id)).cloned().collect();
    let label_distribution = label_distribution_report(&common_labels).ok();

    let runs: Vec<(PlanReport, Vec<SplitArtifacts>)> = plans
        .par_iter()
        .map(|plan| {
            let inputs = plan_inputs(plan, &cohorts, features).and_then(|(splits, samples, fsum)| {
                let t = trained.get(&plan.key()).ok_or_else(|| format!("plan {} was not trained", plan.key()))?.as_ref().map_err(Clone::clone)?;
                if t.len() != splits.len() || t.iter().zip(splits).any(|(a, b)| a.split_id != b.split_id || a.seed != b.seed) {
                    return Err(format!("trained splits of {} do not match the cohort splits", plan.key()));
                }
                Ok((splits, samples, fsum, t))
            });
            match inputs {
                Err(msg) => {
                    let report = PlanReport {
                        plan: plan.clone(),
                        featurize: FeaturizeSummary::default(),
                        splits: Vec::new(),
                        successful_splits: 0,
                        error: Some(msg),
                        aggregate: None,
                        averaged_roc: BTreeMap::new(),
                        pooled_confusion: None,
                        attribution: Vec::new(),
                    };
                    (report, Vec::new())
                }
                Ok((splits, samples, fsum, t)) => {
                    let (results, artifacts): (Vec<SplitResult>, Vec<SplitArtifacts>) = splits
                        .par_iter()
                        .zip(t)
                        .map(|(s, ts)| evaluate_trained_split(cfg, plan, s, samples, &los_hours, ts))
                        .unzip();
                    (plan_report(cfg, plan.clone(), fsum.clone(), results), artifacts)
                }
            }
        })
        .collect();

    let mut plan_reports = Vec::new();
    let mut artifacts = BTreeMap::new();
    for (p, a) in runs {
        artifacts.insert(p.plan.key(), a);
        plan_reports.push(p);
    }
    let routing = routing_reports(cfg, dataset, &plans, &artifacts);
    let table = plan_reports
        .iter()
        .map(|p| TableRow {
            target: p.plan.model_target,
            strategy: p.plan.missingness_strategy,
            train: p.aggregate.as_ref().map(|a| a.train_auc),
            validation: p.aggregate.as_ref().map(|a| a.validation_auc),
            test: p.aggregate.as_ref().map(|a| a.test_auc),
        })
        .collect();
    let report = EvalReport {
        format: REPORT_FORMAT.into(),
        seed: cfg.seed,
        dataset: summary,
        label_distribution,
        table,
        plans: plan_reports,
        routing,
    };
    Ok(ExperimentOutput { report, labels, cohorts: cohorts.ok(), artifacts })
}

/// Runs every plan over every split and assembles the report. Stage errors
/// are recorded in the report rather than returned; only invalid
/// configuration or an unusable dataset is an error.
pub fn run_experiment(cfg: &PipelineConfig, dataset: &ValidatedDataset) -> Result<ExperimentOutput> {
    cfg.check()?;
    let labels = label_cohort(dataset, &cfg.labeling);
    let cohorts = cohort_stage(cfg, dataset, &labels).map_err(|e| e.to_string());
    let features: FeatureSets =
        cfg.experiment.targets.iter().map(|&t| (t, featurize_stage(cfg, dataset, &labels, t).map_err(|e| e.to_string()))).collect();
    let trained = train_stage(cfg, &cohorts, &features, &los_hours_of(dataset));
    evaluate_stage(cfg, dataset, labels, cohorts, &features, &trained)
}
