//! One-shot featurization.
//!
//! Each labeled stay yields one sample. Positives are sampled `gap` hours
//! before onset; controls at a seeded uniform time in the eligible span.
//! A feature takes the most recent measurement in the channel's observation
//! window `[t - W, t]`; failing that, the most recent one in the carry-forward
//! interval `[t - W - V, t - W)`.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ehr::{Channel, ClinicalEvent, PatientStay, ReferenceRange, StayRecord};
use crate::labeling::{Label, LabelRecord, ModelTarget};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::time::{hours, to_hours, Minutes};
use crate::{Error, Result};

pub const MV_HOURS: &str = "mv_hrs";
pub const SPO2_FIO2_RATIO: &str = "SpO2FiO2Ratio";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelWindow {
    pub observation_hours: i64,
    pub validity_hours: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowPolicy {
    pub vital: ChannelWindow,
    pub vent_setting: ChannelWindow,
    pub vae: ChannelWindow,
    pub lab: ChannelWindow,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        let w = |o, v| ChannelWindow { observation_hours: o, validity_hours: v };
        WindowPolicy { vital: w(12, 2), vent_setting: w(24, 2), vae: w(24, 2), lab: w(24, 26) }
    }
}

impl WindowPolicy {
    pub fn for_channel(&self, channel: Channel) -> ChannelWindow {
        match channel {
            Channel::Vital => self.vital,
            Channel::VentSetting => self.vent_setting,
            Channel::Vae => self.vae,
            Channel::Lab => self.lab,
        }
    }

    pub fn check(&self) -> Result<()> {
        for c in Channel::ALL {
            let w = self.for_channel(c);
            if w.observation_hours <= 0 || w.validity_hours <= 0 {
                return Err(Error::InvalidConfig(format!("window hours for channel `{c}` must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub channel: Channel,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatioSpec {
    pub numerator: String,
    pub denominator: String,
}

/// Ordered feature list: measured features, then the derived `mv_hrs` and
/// `SpO2FiO2Ratio` when enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureCatalog {
    pub measured: Vec<FeatureSpec>,
    #[serde(default = "yes")]
    pub mv_hours: bool,
    #[serde(default)]
    pub spo2_fio2: Option<RatioSpec>,
}

fn yes() -> bool {
    true
}

impl FeatureCatalog {
    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.measured.iter().map(|f| f.name.clone()).collect();
        if self.mv_hours {
            names.push(MV_HOURS.to_string());
        }
        if self.spo2_fio2.is_some() {
            names.push(SPO2_FIO2_RATIO.to_string());
        }
        names
    }

    pub fn len(&self) -> usize {
        self.measured.len() + usize::from(self.mv_hours) + usize::from(self.spo2_fio2.is_some())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }

    pub fn spec(&self, name: &str) -> Option<&FeatureSpec> {
        self.measured.iter().find(|f| f.name == name)
    }

    pub fn check(&self) -> Result<()> {
        let names = self.names();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::InvalidConfig("duplicate feature names in catalog".into()));
        }
        if let Some(r) = &self.spo2_fio2 {
            for part in [&r.numerator, &r.denominator] {
                if self.spec(part).is_none() {
                    return Err(Error::UnknownFeature(part.clone()));
                }
            }
        }
        Ok(())
    }
}

/// One sample. `missing_mask[i]` records missingness at extraction time and
/// is preserved by imputation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub sample_id: String,
    pub stay_id: String,
    pub prediction_time: Minutes,
    pub values: Vec<Option<f64>>,
    pub missing_mask: Vec<bool>,
    pub label_iri: bool,
    pub label_vap: bool,
}

impl FeatureVector {
    pub fn label(&self, target: ModelTarget) -> bool {
        match target {
            ModelTarget::Iri => self.label_iri,
            ModelTarget::Vap => self.label_vap,
        }
    }
}

/// Picks the one-shot prediction time for a stay, or `None` when the stay
/// cannot host one (excluded label, or an empty eligible span).
pub fn sample_one_shot(
    stay: &PatientStay,
    labels: &LabelRecord,
    target: ModelTarget,
    gap_hours: i64,
    hai_clock_hours: i64,
    seed: u64,
) -> Option<Minutes> {
    let floor = match target {
        ModelTarget::Iri => stay.icu_admit_time,
        ModelTarget::Vap => stay.intubation_time?,
    };
    match labels.label(target) {
        Label::Excluded => None,
        Label::Positive => {
            let t = labels.onset(target)? - hours(gap_hours);
            (t >= floor && t >= stay.icu_admit_time).then_some(t)
        }
        Label::Negative => {
            let lo = (stay.icu_admit_time + hours(hai_clock_hours)).max(floor);
            let hi = stay.discharge_time - hours(gap_hours);
            if hi < lo {
                return None;
            }
            let mut rng = rng_from_seed(derive_seed(seed, "prediction_time", &stay.stay_id));
            Some(rng.random_range(lo..=hi))
        }
    }
}

/// Most recent value of `feature` visible at `t` (events sorted by time).
pub fn extract_feature(
    events: &[ClinicalEvent],
    feature: &str,
    t: Minutes,
    catalog: &FeatureCatalog,
    policy: &WindowPolicy,
) -> Result<Option<f64>> {
    let spec = catalog.spec(feature).ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
    let w = policy.for_channel(spec.channel);
    let window_start = t - hours(w.observation_hours);
    let lookback_start = window_start - hours(w.validity_hours);

    // Events are in canonical order, so the last match is the most recent.
    let mut in_window = None;
    let mut carried = None;
    for e in events.iter().filter(|e| e.feature_name == feature && e.channel == spec.channel) {
        if e.time > t {
            break;
        }
        if e.unit != spec.unit {
            return Err(Error::UnitMismatch {
                feature: feature.to_string(),
                expected: spec.unit.clone(),
                found: e.unit.clone(),
            });
        }
        if e.time >= window_start {
            in_window = Some(e.value);
        } else if e.time >= lookback_start {
            carried = Some(e.value);
        }
    }
    Ok(in_window.or(carried))
}

pub fn build_feature_vector(
    record: &StayRecord,
    labels: &LabelRecord,
    prediction_time: Minutes,
    catalog: &FeatureCatalog,
    policy: &WindowPolicy,
    sample_id: String,
) -> Result<FeatureVector> {
    let mut values = Vec::with_capacity(catalog.len());
    for f in &catalog.measured {
        values.push(extract_feature(&record.clinical, &f.name, prediction_time, catalog, policy)?);
    }
    if catalog.mv_hours {
        let mv = record
            .stay
            .intubation_time
            .filter(|&i| i <= prediction_time)
            .map(|i| to_hours(prediction_time - i));
        values.push(mv);
    }
    if let Some(ratio) = &catalog.spo2_fio2 {
        let idx = |n: &str| catalog.measured.iter().position(|f| f.name == n).expect("checked catalog");
        let num = values[idx(&ratio.numerator)];
        let den = values[idx(&ratio.denominator)];
        values.push(match (num, den) {
            (Some(n), Some(d)) if d != 0.0 => Some(n / d),
            _ => None,
        });
    }
    let missing_mask = values.iter().map(Option::is_none).collect();
    Ok(FeatureVector {
        sample_id,
        stay_id: record.stay.stay_id.clone(),
        prediction_time,
        values,
        missing_mask,
        label_iri: labels.iri_label.is_positive(),
        label_vap: labels.vap_label.is_positive(),
    })
}

/// Reference ranges keyed by feature name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceRanges(BTreeMap<String, ReferenceRange>);

impl ReferenceRanges {
    pub fn new(ranges: impl IntoIterator<Item = ReferenceRange>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in ranges {
            r.check()?;
            map.insert(r.feature_name.clone(), r);
        }
        Ok(ReferenceRanges(map))
    }

    pub fn get(&self, feature: &str) -> Option<&ReferenceRange> {
        self.0.get(feature)
    }

    /// Checks every catalog feature has a range with a matching unit tag.
    pub fn check_catalog(&self, catalog: &FeatureCatalog) -> Result<()> {
        for name in catalog.names() {
            let r = self.get(&name).ok_or_else(|| Error::MissingReferenceRange(name.clone()))?;
            if let Some(spec) = catalog.spec(&name) {
                if spec.unit != r.unit {
                    return Err(Error::UnitMismatch { feature: name, expected: spec.unit.clone(), found: r.unit.clone() });
                }
            }
        }
        Ok(())
    }
}

/// Gaussian for a reference range: mean `(l+u)/2`, sd `0.15 (u-l)`.
pub fn reference_gaussian(range: &ReferenceRange) -> Normal<f64> {
    let mean = (range.l + range.u) / 2.0;
    let sd = 0.15 * (range.u - range.l);
    Normal::new(mean, sd).expect("range checked: u > l")
}

/// Replaces each missing value with an independent draw from its reference
/// Gaussian. Present values and the missing mask are left untouched.
pub fn gaussian_impute(fv: &FeatureVector, names: &[String], ranges: &ReferenceRanges, rng: &mut Rng) -> Result<FeatureVector> {
    let mut out = fv.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        if v.is_none() {
            let range = ranges.get(&names[i]).ok_or_else(|| Error::MissingReferenceRange(names[i].clone()))?;
            *v = Some(reference_gaussian(range).sample(rng));
        }
    }
    Ok(out)
}

/// Imputes a batch with one rng per sample derived from `seed` and the sample id.
pub fn gaussian_impute_all(samples: &[FeatureVector], names: &[String], ranges: &ReferenceRanges, seed: u64) -> Result<Vec<FeatureVector>> {
    samples
        .par_iter()
        .map(|fv| {
            let mut rng = rng_from_seed(derive_seed(seed, "impute", &fv.sample_id));
            gaussian_impute(fv, names, ranges, &mut rng)
        })
        .collect()
}

/// Fraction of samples of the given class (under `target` labels) with the
/// feature masked.
pub fn missingness_rate(samples: &[FeatureVector], feature_index: usize, target: ModelTarget, positive: bool) -> Result<f64> {
    let (mut n, mut missing) = (0usize, 0usize);
    for s in samples.iter().filter(|s| s.label(target) == positive) {
        n += 1;
        missing += usize::from(s.missing_mask[feature_index]);
    }
    if n == 0 {
        return Err(Error::EmptyInput(format!("no samples with label {positive}")));
    }
    Ok(missing as f64 / n as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeSummary {
    pub sampled: usize,
    pub skipped: usize,
}

/// Featurizes the given stays for `target`, one sample per stay that can host
/// a prediction time. Output is in the input stay order.
#[allow(clippy::too_many_arguments)]
pub fn featurize_stays(
    records: &[&StayRecord],
    labels: &BTreeMap<String, LabelRecord>,
    target: ModelTarget,
    catalog: &FeatureCatalog,
    policy: &WindowPolicy,
    gap_hours: i64,
    hai_clock_hours: i64,
    seed: u64,
) -> Result<(Vec<FeatureVector>, FeaturizeSummary)> {
    let results: Vec<Option<FeatureVector>> = records
        .par_iter()
        .map(|rec| {
            let id = &rec.stay.stay_id;
            let lab = labels.get(id).ok_or_else(|| Error::EmptyInput(format!("no label record for stay `{id}`")))?;
            match sample_one_shot(&rec.stay, lab, target, gap_hours, hai_clock_hours, seed) {
                Some(t) => build_feature_vector(rec, lab, t, catalog, policy, format!("{target}:{id}")).map(Some),
                None => Ok(None),
            }
        })
        .collect::<Result<_>>()?;
    let mut summary = FeaturizeSummary::default();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Some(fv) => {
                summary.sampled += 1;
                out.push(fv);
            }
            None => summary.skipped += 1,
        }
    }
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> FeatureCatalog {
        let f = |n: &str, c, u: &str| FeatureSpec { name: n.into(), channel: c, unit: u.into() };
        FeatureCatalog {
            measured: vec![
                f("temperature", Channel::Vital, "C"),
                f("spo2", Channel::Vital, "%"),
                f("wbc", Channel::Lab, "K/uL"),
                f("fio2", Channel::VentSetting, "fraction"),
            ],
            mv_hours: true,
            spo2_fio2: Some(RatioSpec { numerator: "spo2".into(), denominator: "fio2".into() }),
        }
    }

    fn ev(t: Minutes, ch: Channel, name: &str, v: f64, unit: &str) -> ClinicalEvent {
        ClinicalEvent { stay_id: "s".into(), time: t, channel: ch, feature_name: name.into(), value: v, unit: unit.into() }
    }

    fn stay(los_h: i64, intubation: Option<i64>) -> PatientStay {
        PatientStay {
            stay_id: "s".into(),
            patient_id: "p".into(),
            age_years: 50,
            icu_admit_time: 0,
            discharge_time: hours(los_h),
            intubation_time: intubation.map(hours),
            mechanically_ventilated: intubation.is_some(),
        }
    }

    fn labels(iri: Label, iri_on: Option<i64>, vap: Label, vap_on: Option<i64>) -> LabelRecord {
        LabelRecord {
            stay_id: "s".into(),
            iri_label: iri,
            vap_label: vap,
            iri_onset: iri_on.map(hours),
            vap_onset: vap_on.map(hours),
        }
    }

    #[test]
    fn positives_sample_gap_before_onset() {
        let s = stay(200, Some(0));
        let l = labels(Label::Positive, Some(120), Label::Positive, Some(50));
        assert_eq!(sample_one_shot(&s, &l, ModelTarget::Iri, 24, 48, 1), Some(hours(96)));
        assert_eq!(sample_one_shot(&s, &l, ModelTarget::Vap, 24, 48, 1), Some(hours(26)));
    }

    #[test]
    fn short_control_is_skipped() {
        let s = stay(40, None);
        let l = labels(Label::Negative, None, Label::Excluded, None);
        assert_eq!(sample_one_shot(&s, &l, ModelTarget::Iri, 24, 48, 1), None);
        assert_eq!(sample_one_shot(&s, &l, ModelTarget::Vap, 24, 48, 1), None);
    }

    #[test]
    fn control_time_is_seeded_and_in_span() {
        let s = stay(200, Some(60));
        let l = labels(Label::Negative, None, Label::Negative, None);
        for seed in 0..50 {
            let t = sample_one_shot(&s, &l, ModelTarget::Vap, 24, 48, seed).unwrap();
            assert!(t >= hours(60) && t <= hours(176));
            assert_eq!(Some(t), sample_one_shot(&s, &l, ModelTarget::Vap, 24, 48, seed));
        }
    }

    #[test]
    fn window_and_carry_forward_boundaries() {
        let cat = catalog();
        let pol = WindowPolicy::default();
        let t = hours(100);
        let vit = |dt_min: i64| vec![ev(t - dt_min, Channel::Vital, "temperature", 38.0, "C")];
        assert_eq!(extract_feature(&vit(hours(6)), "temperature", t, &cat, &pol).unwrap(), Some(38.0));
        assert_eq!(extract_feature(&vit(hours(15)), "temperature", t, &cat, &pol).unwrap(), None);
        assert_eq!(extract_feature(&vit(hours(14)), "temperature", t, &cat, &pol).unwrap(), Some(38.0));
        assert_eq!(extract_feature(&vit(hours(14) + 1), "temperature", t, &cat, &pol).unwrap(), None);
        let lab = vec![ev(t - hours(30), Channel::Lab, "wbc", 12.0, "K/uL")];
        assert_eq!(extract_feature(&lab, "wbc", t, &cat, &pol).unwrap(), Some(12.0));
        assert!(matches!(extract_feature(&lab, "lactate", t, &cat, &pol), Err(Error::UnknownFeature(_))));
    }

    #[test]
    fn in_window_beats_more_recent_lookback_and_future_is_ignored() {
        let cat = catalog();
        let pol = WindowPolicy::default();
        let t = hours(100);
        let events = vec![
            ev(t - hours(13), Channel::Vital, "temperature", 36.0, "C"),
            ev(t - hours(10), Channel::Vital, "temperature", 37.0, "C"),
            ev(t - hours(2), Channel::Vital, "temperature", 37.5, "C"),
            ev(t + 1, Channel::Vital, "temperature", 40.0, "C"),
        ];
        assert_eq!(extract_feature(&events, "temperature", t, &cat, &pol).unwrap(), Some(37.5));
    }

    #[test]
    fn unit_mismatch_is_an_error() {
        let events = vec![ev(hours(99), Channel::Vital, "temperature", 99.0, "F")];
        let r = extract_feature(&events, "temperature", hours(100), &catalog(), &WindowPolicy::default());
        assert!(matches!(r, Err(Error::UnitMismatch { .. })));
    }

    #[test]
    fn hand_walked_vector() {
        let t = hours(100);
        let rec = StayRecord {
            stay: stay(200, Some(10)),
            clinical: vec![
                ev(t - hours(30), Channel::Lab, "wbc", 14.0, "K/uL"),
                ev(t - hours(20), Channel::VentSetting, "fio2", 0.4, "fraction"),
                ev(t - hours(13), Channel::Vital, "spo2", 93.0, "%"),
                ev(t - hours(3), Channel::Vital, "temperature", 38.2, "C"),
                ev(t - hours(1), Channel::Vital, "spo2", 96.0, "%"),
                ev(t + hours(1), Channel::Vital, "temperature", 39.9, "C"),
            ],
            medications: vec![],
            cultures: vec![],
            diagnoses: vec![],
        };
        let l = labels(Label::Negative, None, Label::Positive, Some(124));
        let fv = build_feature_vector(&rec, &l, t, &catalog(), &WindowPolicy::default(), "x".into()).unwrap();
        assert_eq!(fv.values, vec![Some(38.2), Some(96.0), Some(14.0), Some(0.4), Some(90.0), Some(240.0)]);
        assert!(fv.missing_mask.iter().all(|m| !m));
        assert!(fv.label_vap && !fv.label_iri);

        let mut bare = rec.clone();
        bare.stay = stay(200, None);
        bare.clinical.clear();
        let fv = build_feature_vector(&bare, &l, t, &catalog(), &WindowPolicy::default(), "x".into()).unwrap();
        assert!(fv.values.iter().all(Option::is_none));
        assert!(fv.missing_mask.iter().all(|&m| m));
    }

    fn ranges() -> ReferenceRanges {
        let r = |n: &str, l, u, unit: &str| ReferenceRange::new(n, l, u, unit).unwrap();
        ReferenceRanges::new([
            r("temperature", 36.0, 38.0, "C"),
            r("spo2", 94.0, 100.0, "%"),
            r("wbc", 4.0, 11.0, "K/uL"),
            r("fio2", 0.21, 0.5, "fraction"),
            r(MV_HOURS, 0.0, 240.0, "h"),
            r(SPO2_FIO2_RATIO, 200.0, 480.0, "ratio"),
        ])
        .unwrap()
    }

    #[test]
    fn imputation_fills_only_missing_and_keeps_mask() {
        let names = catalog().names();
        let fv = FeatureVector {
            sample_id: "a".into(),
            stay_id: "s".into(),
            prediction_time: 0,
            values: vec![Some(37.0), None, None, Some(0.3), None, None],
            missing_mask: vec![false, true, true, false, true, true],
            label_iri: false,
            label_vap: false,
        };
        let mut rng = rng_from_seed(3);
        let out = gaussian_impute(&fv, &names, &ranges(), &mut rng).unwrap();
        assert_eq!(out.missing_mask, fv.missing_mask);
        assert_eq!(out.values[0], Some(37.0));
        assert_eq!(out.values[3], Some(0.3));
        assert!(out.values.iter().all(Option::is_some));
        let again = gaussian_impute(&out, &names, &ranges(), &mut rng).unwrap();
        assert_eq!(again, out);

        let mut rng2 = rng_from_seed(3);
        assert_eq!(gaussian_impute(&fv, &names, &ranges(), &mut rng2).unwrap(), out);

        let mut partial = ranges().0;
        partial.remove("wbc");
        let partial = ReferenceRanges(partial);
        assert!(matches!(
            gaussian_impute(&fv, &names, &partial, &mut rng),
            Err(Error::MissingReferenceRange(n)) if n == "wbc"
        ));
    }

    #[test]
    fn missingness_rate_counts_masks() {
        let mk = |missing: bool, pos: bool| FeatureVector {
            sample_id: String::new(),
            stay_id: String::new(),
            prediction_time: 0,
            values: vec![(!missing).then_some(1.0)],
            missing_mask: vec![missing],
            label_iri: pos,
            label_vap: pos,
        };
        let samples: Vec<_> = (0..10).map(|i| mk(i < 3, true)).collect();
        assert_eq!(missingness_rate(&samples, 0, ModelTarget::Iri, true).unwrap(), 0.3);
        assert!(missingness_rate(&samples, 0, ModelTarget::Iri, false).is_err());
        let none: Vec<_> = (0..4).map(|_| mk(false, false)).collect();
        assert_eq!(missingness_rate(&none, 0, ModelTarget::Vap, false).unwrap(), 0.0);
        let all: Vec<_> = (0..4).map(|_| mk(true, false)).collect();
        assert_eq!(missingness_rate(&all, 0, ModelTarget::Vap, false).unwrap(), 1.0);
    }
}
