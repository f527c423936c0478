//! Cohort construction: cohort intersection, LOS case-control matching,
//! class-balanced anchor missingness, and OOD-mitigated repeated splits.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::ehr::{PatientId, StayId};
use crate::featurize::FeatureVector;
use crate::labeling::ModelTarget;
use crate::rng::{derive_seed, derive_seed_index, rng_from_seed};
use crate::{Error, Result};

/// Stays present in both labeled cohorts.
pub fn build_common_cohort(iri_stays: &BTreeSet<StayId>, vap_stays: &BTreeSet<StayId>) -> BTreeSet<StayId> {
    let common: BTreeSet<StayId> = iri_stays.intersection(vap_stays).cloned().collect();
    if common.is_empty() {
        warn!("common cohort is empty");
    }
    common
}

/// How many controls the LOS matcher tries to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum MatchTarget {
    /// Largest total whose unfilled quota stays within the shortfall tolerance.
    MaxWithinTolerance,
    /// Request every control; thin bins report a shortfall.
    AllControls,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LosMatchParams {
    pub bin_width_hours: f64,
    pub target: MatchTarget,
    /// Allowed total shortfall as a fraction of the requested total.
    pub shortfall_tolerance: f64,
}

impl Default for LosMatchParams {
    fn default() -> Self {
        LosMatchParams { bin_width_hours: 24.0, target: MatchTarget::MaxWithinTolerance, shortfall_tolerance: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosBin {
    pub start_hours: f64,
    pub cases: usize,
    pub available_controls: usize,
    pub quota: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosMatchOutcome {
    pub retained: Vec<StayId>,
    pub requested_total: usize,
    pub shortfall: usize,
    pub bins: Vec<LosBin>,
}

fn bin_of(los_hours: f64, width: f64) -> i64 {
    (los_hours / width).floor() as i64
}

/// Per-bin quotas for a total of `total` by cumulative rounding, so every
/// prefix of bins is within half a sample of its exact share.
fn quotas(case_counts: &[usize], total: usize) -> Vec<usize> {
    let n_cases: usize = case_counts.iter().sum();
    let mut out = Vec::with_capacity(case_counts.len());
    let mut cum_cases = 0usize;
    let mut prev = 0usize;
    for &c in case_counts {
        cum_cases += c;
        let upto = ((cum_cases as f64 / n_cases as f64) * total as f64).round() as usize;
        out.push(upto - prev);
        prev = upto;
    }
    out
}

fn shortfall(quota: &[usize], avail: &[usize]) -> usize {
    quota.iter().zip(avail).map(|(q, a)| q.saturating_sub(*a)).sum()
}

/// Subsamples controls so their binned LOS distribution follows the cases'.
///
/// Each bin's quota is its share of cases times the total; controls are drawn
/// uniformly without replacement inside the bin, and thin bins are filled as
/// far as possible with the shortfall reported.
pub fn match_los(
    cases: &[(StayId, f64)],
    controls: &[(StayId, f64)],
    params: &LosMatchParams,
    seed: u64,
) -> Result<LosMatchOutcome> {
    if cases.is_empty() {
        return Err(Error::EmptyInput("LOS matching needs at least one case".into()));
    }
    if controls.is_empty() {
        return Err(Error::EmptyInput("LOS matching needs at least one control".into()));
    }
    if !(params.bin_width_hours > 0.0) {
        return Err(Error::InvalidConfig("LOS bin width must be positive".into()));
    }
    let w = params.bin_width_hours;

    let mut case_bins: BTreeMap<i64, usize> = BTreeMap::new();
    for (_, los) in cases {
        *case_bins.entry(bin_of(*los, w)).or_default() += 1;
    }
    let mut control_bins: BTreeMap<i64, Vec<&StayId>> = BTreeMap::new();
    for (id, los) in controls {
        control_bins.entry(bin_of(*los, w)).or_default().push(id);
    }

    let keys: Vec<i64> = case_bins.keys().copied().collect();
    let case_counts: Vec<usize> = keys.iter().map(|k| case_bins[k]).collect();
    let avail: Vec<usize> = keys.iter().map(|k| control_bins.get(k).map_or(0, Vec::len)).collect();

    let total = match params.target {
        MatchTarget::AllControls => controls.len(),
        MatchTarget::Fixed(n) => n,
        MatchTarget::MaxWithinTolerance => (1..=controls.len())
            .rev()
            .find(|&t| shortfall(&quotas(&case_counts, t), &avail) as f64 <= params.shortfall_tolerance * t as f64)
            .unwrap_or(0),
    };
    let quota = quotas(&case_counts, total);

    let mut retained = Vec::new();
    let mut bins = Vec::with_capacity(keys.len());
    for (i, k) in keys.iter().enumerate() {
        let mut pool: Vec<&StayId> = control_bins.get(k).cloned().unwrap_or_default();
        pool.sort();
        let mut rng = rng_from_seed(derive_seed(seed, "los_bin", &k.to_string()));
        pool.shuffle(&mut rng);
        let take = quota[i].min(pool.len());
        retained.extend(pool[..take].iter().map(|s| (*s).clone()));
        bins.push(LosBin {
            start_hours: *k as f64 * w,
            cases: case_counts[i],
            available_controls: avail[i],
            quota: quota[i],
            retained: take,
        });
    }
    retained.sort();
    let short = shortfall(&quota, &avail);
    if short > 0 {
        warn!("LOS matching short by {short} controls of {total} requested");
    }
    Ok(LosMatchOutcome { retained, requested_total: total, shortfall: short, bins })
}

/// Which stratum is trimmed to equalize anchor missingness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceDirection {
    /// Remove anchor-present samples from the class with lower missingness.
    RaiseLower,
    /// Remove anchor-absent samples from the class with higher missingness.
    LowerHigher,
    /// Whichever of the two removes fewer samples.
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceParams {
    pub anchor_feature: String,
    pub epsilon: f64,
    pub direction: BalanceDirection,
}

impl Default for BalanceParams {
    fn default() -> Self {
        BalanceParams { anchor_feature: "temperature".into(), epsilon: 0.01, direction: BalanceDirection::RaiseLower }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceOutcome {
    pub rate_positive_before: f64,
    pub rate_negative_before: f64,
    pub rate_positive_after: f64,
    pub rate_negative_after: f64,
    pub removed: usize,
    /// `(positive class?, anchor present?)` of the trimmed stratum.
    pub trimmed_stratum: Option<(bool, bool)>,
}

#[derive(Debug, Clone, Copy)]
struct ClassCounts {
    n: usize,
    absent: usize,
}

impl ClassCounts {
    fn rate(self) -> f64 {
        self.absent as f64 / self.n as f64
    }
}

/// Smallest k with the trimmed class rate within epsilon of `target`,
/// removing present (`remove_present`) or absent samples.
fn removal_count(c: ClassCounts, target: f64, eps: f64, remove_present: bool) -> Option<usize> {
    let stratum = if remove_present { c.n - c.absent } else { c.absent };
    (0..=stratum).find(|&k| {
        let n = c.n - k;
        if n == 0 {
            return false;
        }
        let absent = if remove_present { c.absent } else { c.absent - k };
        ((absent as f64 / n as f64) - target).abs() <= eps
    })
}

/// Down-samples one (class, anchor present/absent) stratum so anchor
/// missingness differs by at most epsilon between classes.
pub fn balance_missingness(
    samples: &[FeatureVector],
    target: ModelTarget,
    anchor_index: usize,
    params: &BalanceParams,
    seed: u64,
) -> Result<(Vec<FeatureVector>, BalanceOutcome)> {
    let count = |positive: bool| {
        let mut c = ClassCounts { n: 0, absent: 0 };
        for s in samples.iter().filter(|s| s.label(target) == positive) {
            c.n += 1;
            c.absent += usize::from(s.missing_mask[anchor_index]);
        }
        c
    };
    let pos = count(true);
    let neg = count(false);
    if pos.n == 0 || neg.n == 0 {
        return Err(Error::SingleClass("missingness balancing needs both classes".into()));
    }
    for (c, name) in [(pos, "positive"), (neg, "negative")] {
        if c.absent == c.n {
            return Err(Error::Infeasible(format!(
                "anchor `{}` is missing in every {name} sample; rates cannot be equalized without emptying a class",
                params.anchor_feature
            )));
        }
    }

    let unchanged = |removed| BalanceOutcome {
        rate_positive_before: pos.rate(),
        rate_negative_before: neg.rate(),
        rate_positive_after: pos.rate(),
        rate_negative_after: neg.rate(),
        removed,
        trimmed_stratum: None,
    };
    if (pos.rate() - neg.rate()).abs() <= params.epsilon {
        return Ok((samples.to_vec(), unchanged(0)));
    }

    let pos_is_lower = pos.rate() < neg.rate();
    let (lower, higher) = if pos_is_lower { (pos, neg) } else { (neg, pos) };
    let raise = removal_count(lower, higher.rate(), params.epsilon, true).map(|k| (k, pos_is_lower, true));
    let reduce = removal_count(higher, lower.rate(), params.epsilon, false).map(|k| (k, !pos_is_lower, false));
    // (k, trimmed class is positive?, remove anchor-present?)
    let plan = match params.direction {
        // A fixed direction falls back to the other one when rounding makes
        // it unable to land within epsilon.
        BalanceDirection::RaiseLower => raise.or(reduce),
        BalanceDirection::LowerHigher => reduce.or(raise),
        BalanceDirection::Auto => match (raise, reduce) {
            (Some(a), Some(b)) => Some(if b.0 < a.0 { b } else { a }),
            (a, b) => a.or(b),
        },
    };
    let (k, trim_positive, remove_present) = plan.ok_or_else(|| {
        Error::Infeasible(format!("no removal equalizes `{}` missingness within {}", params.anchor_feature, params.epsilon))
    })?;

    let mut stratum: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.label(target) == trim_positive && s.missing_mask[anchor_index] != remove_present)
        .map(|(i, _)| i)
        .collect();
    let mut rng = rng_from_seed(derive_seed(seed, "balance", ""));
    stratum.shuffle(&mut rng);
    let drop: BTreeSet<usize> = stratum.into_iter().take(k).collect();
    let kept: Vec<FeatureVector> = samples
        .iter()
        .enumerate()
        .filter(|(i, _)| !drop.contains(i))
        .map(|(_, s)| s.clone())
        .collect();

    let after = |positive: bool| {
        let (mut n, mut a) = (0usize, 0usize);
        for s in kept.iter().filter(|s| s.label(target) == positive) {
            n += 1;
            a += usize::from(s.missing_mask[anchor_index]);
        }
        a as f64 / n as f64
    };
    let outcome = BalanceOutcome {
        rate_positive_after: after(true),
        rate_negative_after: after(false),
        removed: k,
        trimmed_stratum: Some((trim_positive, remove_present)),
        ..unchanged(k)
    };
    Ok((kept, outcome))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    /// Share of the common cohort's patients moved into training.
    pub ood_to_train: f64,
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { ood_to_train: 0.2, train: 0.8, validation: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub split_id: usize,
    pub seed: u64,
    pub train: BTreeSet<StayId>,
    pub validation: BTreeSet<StayId>,
    pub test: BTreeSet<StayId>,
}

impl CohortSplit {
    pub fn partition(&self, p: Partition) -> &BTreeSet<StayId> {
        match p {
            Partition::Train => &self.train,
            Partition::Validation => &self.validation,
            Partition::Test => &self.test,
        }
    }

    pub fn partition_of(&self, stay: &str) -> Option<Partition> {
        [Partition::Train, Partition::Validation, Partition::Test]
            .into_iter()
            .find(|p| self.partition(*p).contains(stay))
    }

    /// Checks stay- and patient-level disjointness and `test ⊆ common`.
    pub fn check(&self, patient_of: &BTreeMap<StayId, PatientId>, common: &BTreeSet<StayId>) -> Result<()> {
        let mut owner: BTreeMap<&PatientId, Partition> = BTreeMap::new();
        for p in [Partition::Train, Partition::Validation, Partition::Test] {
            for s in self.partition(p) {
                let pid = patient_of
                    .get(s)
                    .ok_or_else(|| Error::Infeasible(format!("stay `{s}` has no patient")))?;
                if let Some(prev) = owner.insert(pid, p) {
                    if prev != p {
                        return Err(Error::Infeasible(format!("patient `{pid}` appears in {prev:?} and {p:?}")));
                    }
                }
            }
        }
        if let Some(s) = self.test.iter().find(|s| !common.contains(*s)) {
            return Err(Error::Infeasible(format!("test stay `{s}` is outside the common cohort")));
        }
        Ok(())
    }

    /// Manifest rows `(split_id, seed, partition, stay_id)`.
    pub fn manifest_rows(&self) -> Vec<ManifestRow> {
        let mut rows = Vec::new();
        for p in [Partition::Train, Partition::Validation, Partition::Test] {
            for s in self.partition(p) {
                rows.push(ManifestRow { split_id: self.split_id, seed: self.seed, partition: p, stay_id: s.clone() });
            }
        }
        rows
    }

    pub fn from_manifest_rows(rows: &[ManifestRow]) -> Vec<CohortSplit> {
        let mut by_id: BTreeMap<usize, CohortSplit> = BTreeMap::new();
        for r in rows {
            let split = by_id.entry(r.split_id).or_insert_with(|| CohortSplit {
                split_id: r.split_id,
                seed: r.seed,
                train: BTreeSet::new(),
                validation: BTreeSet::new(),
                test: BTreeSet::new(),
            });
            match r.partition {
                Partition::Train => split.train.insert(r.stay_id.clone()),
                Partition::Validation => split.validation.insert(r.stay_id.clone()),
                Partition::Test => split.test.insert(r.stay_id.clone()),
            };
        }
        by_id.into_values().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub split_id: usize,
    pub seed: u64,
    pub partition: Partition,
    pub stay_id: StayId,
}

/// Patient-level split. A seeded fifth of the common cohort's patients joins
/// training; the rest of the common cohort is the test set. The remaining
/// model-cohort patients are divided train/validation by `fractions`.
///
/// Patients in the test set contribute only their common-cohort stays.
pub fn split_with_ood_mitigation(
    model_cohort: &BTreeMap<StayId, PatientId>,
    common_cohort: &BTreeSet<StayId>,
    fractions: &SplitFractions,
    split_id: usize,
    seed: u64,
) -> Result<CohortSplit> {
    if fractions.train < 0.0 || fractions.validation < 0.0 || fractions.train + fractions.validation > 1.0 + 1e-12 {
        return Err(Error::InvalidConfig("train + validation fractions must lie in [0, 1]".into()));
    }
    if !(0.0..=1.0).contains(&fractions.ood_to_train) {
        return Err(Error::InvalidConfig("ood_to_train must lie in [0, 1]".into()));
    }
    let mut stays_of: BTreeMap<&PatientId, Vec<&StayId>> = BTreeMap::new();
    for (s, p) in model_cohort {
        stays_of.entry(p).or_default().push(s);
    }
    for s in common_cohort {
        if !model_cohort.contains_key(s) {
            return Err(Error::Infeasible(format!("common stay `{s}` is not in the model cohort")));
        }
    }
    let mut common_patients: Vec<&PatientId> = common_cohort.iter().map(|s| &model_cohort[s]).collect();
    common_patients.sort();
    common_patients.dedup();
    if common_patients.len() < 5 {
        return Err(Error::Infeasible(format!(
            "common cohort has {} patients; at least 5 are needed",
            common_patients.len()
        )));
    }
    let common_set: BTreeSet<&PatientId> = common_patients.iter().copied().collect();
    let mut others: Vec<&PatientId> = stays_of.keys().copied().filter(|p| !common_set.contains(p)).collect();

    let mut rng = rng_from_seed(derive_seed(seed, "ood_split", ""));
    common_patients.shuffle(&mut rng);
    others.shuffle(&mut rng);

    let n_ood = (common_patients.len() as f64 * fractions.ood_to_train).round() as usize;
    let (ood, test_patients) = common_patients.split_at(n_ood);

    let n_train = (others.len() as f64 * fractions.train).round() as usize;
    let n_val = ((others.len() as f64 * fractions.validation).round() as usize).min(others.len() - n_train);

    let mut split = CohortSplit {
        split_id,
        seed,
        train: BTreeSet::new(),
        validation: BTreeSet::new(),
        test: BTreeSet::new(),
    };
    for p in ood.iter().chain(&others[..n_train]) {
        split.train.extend(stays_of[p].iter().map(|s| (*s).clone()));
    }
    for p in &others[n_train..n_train + n_val] {
        split.validation.extend(stays_of[p].iter().map(|s| (*s).clone()));
    }
    for p in test_patients {
        split.test.extend(stays_of[p].iter().filter(|s| common_cohort.contains(**s)).map(|s| (*s).clone()));
    }
    Ok(split)
}

/// `n` splits with child seeds derived from `base_seed`; split ids start at 1.
pub fn repeat_splits(
    n: usize,
    base_seed: u64,
    model_cohort: &BTreeMap<StayId, PatientId>,
    common_cohort: &BTreeSet<StayId>,
    fractions: &SplitFractions,
) -> Result<Vec<CohortSplit>> {
    (1..=n)
        .map(|k| {
            let seed = derive_seed_index(base_seed, "repeat", k as u64);
            split_with_ood_mitigation(model_cohort, common_cohort, fractions, k, seed)
        })
        .collect()
}

/// Stays grouped by target label; shared helper for matching and reporting.
pub fn model_cohort_of(target: ModelTarget, labels: &[crate::labeling::LabelRecord]) -> BTreeSet<StayId> {
    labels
        .iter()
        .filter(|l| l.label(target).is_included())
        .map(|l| l.stay_id.clone())
        .collect()
}
