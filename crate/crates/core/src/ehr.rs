//! EHR data universe: stays, event streams, and dataset validation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::time::{self, Minutes};
use crate::{Error, Result};

pub type StayId = String;
pub type PatientId = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientStay {
    pub stay_id: StayId,
    pub patient_id: PatientId,
    pub age_years: u32,
    #[serde(with = "time::serde_minutes")]
    pub icu_admit_time: Minutes,
    #[serde(with = "time::serde_minutes")]
    pub discharge_time: Minutes,
    #[serde(default, with = "time::serde_minutes::option")]
    pub intubation_time: Option<Minutes>,
    pub mechanically_ventilated: bool,
}

impl PatientStay {
    pub fn los_minutes(&self) -> Minutes {
        self.discharge_time - self.icu_admit_time
    }

    pub fn los_hours(&self) -> f64 {
        time::to_hours(self.los_minutes())
    }

    fn check(&self) -> bool {
        if self.discharge_time <= self.icu_admit_time {
            return false;
        }
        match self.intubation_time {
            Some(t) => {
                self.mechanically_ventilated && t >= self.icu_admit_time && t <= self.discharge_time
            }
            None => true,
        }
    }

    pub fn contains(&self, t: Minutes) -> bool {
        t >= self.icu_admit_time && t <= self.discharge_time
    }
}

/// Feature channel. Variant order matches the lexicographic order of the
/// serialized names, which is the event tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Lab,
    Vae,
    VentSetting,
    Vital,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Lab, Channel::Vae, Channel::VentSetting, Channel::Vital];

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Lab => "lab",
            Channel::Vae => "vae",
            Channel::VentSetting => "vent_setting",
            Channel::Vital => "vital",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalEvent {
    pub stay_id: StayId,
    #[serde(with = "time::serde_minutes")]
    pub time: Minutes,
    pub channel: Channel,
    pub feature_name: String,
    pub value: f64,
    pub unit: String,
}

impl ClinicalEvent {
    /// Total order within a stay: time, channel name, feature name; value and
    /// unit only break exact duplicates so sorting is input-order independent.
    pub fn order_key_cmp(&self, other: &Self) -> Ordering {
        self.stay_id
            .cmp(&other.stay_id)
            .then(self.time.cmp(&other.time))
            .then(self.channel.cmp(&other.channel))
            .then_with(|| self.feature_name.cmp(&other.feature_name))
            .then(self.value.total_cmp(&other.value))
            .then_with(|| self.unit.cmp(&other.unit))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicationEvent {
    pub stay_id: StayId,
    #[serde(with = "time::serde_minutes")]
    pub start_time: Minutes,
    pub drug_name: String,
    pub is_antibiotic: bool,
    pub is_prophylactic: bool,
}

impl MedicationEvent {
    /// Antibiotic given as treatment rather than prevention.
    pub fn is_treatment_antibiotic(&self) -> bool {
        self.is_antibiotic && !self.is_prophylactic
    }

    fn order_key_cmp(&self, other: &Self) -> Ordering {
        self.stay_id
            .cmp(&other.stay_id)
            .then(self.start_time.cmp(&other.start_time))
            .then_with(|| self.drug_name.cmp(&other.drug_name))
            .then(self.is_antibiotic.cmp(&other.is_antibiotic))
            .then(self.is_prophylactic.cmp(&other.is_prophylactic))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CultureEvent {
    pub stay_id: StayId,
    #[serde(with = "time::serde_minutes")]
    pub order_time: Minutes,
    #[serde(default, with = "time::serde_minutes::option")]
    pub result_time: Option<Minutes>,
    #[serde(default)]
    pub positive: Option<bool>,
}

impl CultureEvent {
    pub fn is_positive(&self) -> bool {
        self.positive == Some(true)
    }

    fn order_key_cmp(&self, other: &Self) -> Ordering {
        self.stay_id
            .cmp(&other.stay_id)
            .then(self.order_time.cmp(&other.order_time))
            .then(self.result_time.cmp(&other.result_time))
            .then(self.positive.cmp(&other.positive))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HaiCategory {
    Vap,
    Clabsi,
    Cauti,
    Ssi,
    Hap,
    Cdi,
}

impl HaiCategory {
    pub const ALL: [HaiCategory; 6] = [
        HaiCategory::Vap,
        HaiCategory::Clabsi,
        HaiCategory::Cauti,
        HaiCategory::Ssi,
        HaiCategory::Hap,
        HaiCategory::Cdi,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HaiCategory::Vap => "VAP",
            HaiCategory::Clabsi => "CLABSI",
            HaiCategory::Cauti => "CAUTI",
            HaiCategory::Ssi => "SSI",
            HaiCategory::Hap => "HAP",
            HaiCategory::Cdi => "CDI",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosisCode {
    pub stay_id: StayId,
    pub code: String,
    pub is_hai: bool,
    pub is_cap: bool,
    #[serde(default)]
    pub hai_category: Option<HaiCategory>,
}

impl DiagnosisCode {
    fn order_key_cmp(&self, other: &Self) -> Ordering {
        self.stay_id
            .cmp(&other.stay_id)
            .then_with(|| self.code.cmp(&other.code))
            .then(self.is_hai.cmp(&other.is_hai))
            .then(self.is_cap.cmp(&other.is_cap))
            .then(self.hai_category.cmp(&other.hai_category))
    }
}

/// Normal reference range `(l, u)` for a feature, in the feature's unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceRange {
    pub feature_name: String,
    pub l: f64,
    pub u: f64,
    pub unit: String,
}

impl ReferenceRange {
    pub fn new(feature_name: impl Into<String>, l: f64, u: f64, unit: impl Into<String>) -> Result<Self> {
        let r = ReferenceRange { feature_name: feature_name.into(), l, u, unit: unit.into() };
        r.check()?;
        Ok(r)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.l.is_finite() && self.u.is_finite() && self.u > self.l) {
            return Err(Error::InvalidConfig(format!(
                "reference range for `{}` needs finite u > l, got ({}, {})",
                self.feature_name, self.l, self.u
            )));
        }
        Ok(())
    }
}

/// Unvalidated input tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawDataset {
    pub stays: Vec<PatientStay>,
    pub clinical: Vec<ClinicalEvent>,
    pub medications: Vec<MedicationEvent>,
    pub cultures: Vec<CultureEvent>,
    pub diagnoses: Vec<DiagnosisCode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    InvalidStay,
    Orphan,
    OutOfStay,
    NonFiniteValue,
    InconsistentCulture,
    ResultBeforeOrder,
    ProphylacticNotAntibiotic,
    HaiAndCap,
    HaiCategoryMismatch,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RejectionCounts(BTreeMap<Rejection, usize>);

impl RejectionCounts {
    fn add(&mut self, r: Rejection) {
        *self.0.entry(r).or_default() += 1;
    }

    pub fn get(&self, r: Rejection) -> usize {
        self.0.get(&r).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (Rejection, usize)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }
}

/// One stay with its event streams, each sorted in the canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct StayRecord {
    pub stay: PatientStay,
    pub clinical: Vec<ClinicalEvent>,
    pub medications: Vec<MedicationEvent>,
    pub cultures: Vec<CultureEvent>,
    pub diagnoses: Vec<DiagnosisCode>,
}

impl StayRecord {
    fn new(stay: PatientStay) -> Self {
        StayRecord {
            stay,
            clinical: Vec::new(),
            medications: Vec::new(),
            cultures: Vec::new(),
            diagnoses: Vec::new(),
        }
    }

    fn sort(&mut self) {
        self.clinical.sort_by(ClinicalEvent::order_key_cmp);
        self.medications.sort_by(MedicationEvent::order_key_cmp);
        self.cultures.sort_by(CultureEvent::order_key_cmp);
        self.diagnoses.sort_by(DiagnosisCode::order_key_cmp);
    }
}

/// Immutable, validated dataset keyed by stay id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidatedDataset {
    records: BTreeMap<StayId, StayRecord>,
    rejections: RejectionCounts,
}

impl ValidatedDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, stay_id: &str) -> Option<&StayRecord> {
        self.records.get(stay_id)
    }

    /// Records in stay_id order.
    pub fn records(&self) -> impl Iterator<Item = &StayRecord> {
        self.records.values()
    }

    pub fn stay_ids(&self) -> impl Iterator<Item = &StayId> {
        self.records.keys()
    }

    pub fn rejections(&self) -> &RejectionCounts {
        &self.rejections
    }

    /// Names of all measured features present in the clinical streams.
    pub fn feature_names(&self) -> BTreeSet<String> {
        self.records
            .values()
            .flat_map(|r| r.clinical.iter().map(|e| e.feature_name.clone()))
            .collect()
    }

    pub fn to_raw(&self) -> RawDataset {
        let mut raw = RawDataset::default();
        for r in self.records.values() {
            raw.stays.push(r.stay.clone());
            raw.clinical.extend(r.clinical.iter().cloned());
            raw.medications.extend(r.medications.iter().cloned());
            raw.cultures.extend(r.cultures.iter().cloned());
            raw.diagnoses.extend(r.diagnoses.iter().cloned());
        }
        raw
    }

    /// Applies `f` to every record's clinical stream and keeps the result.
    /// Callers must only remove events; the result is re-sorted.
    pub(crate) fn retain_clinical<F>(&self, mut f: F) -> ValidatedDataset
    where
        F: FnMut(&StayRecord, &ClinicalEvent) -> bool,
    {
        let mut out = self.clone();
        for (id, rec) in out.records.iter_mut() {
            let original = &self.records[id];
            rec.clinical = original.clinical.iter().filter(|e| f(original, e)).cloned().collect();
        }
        out.rejections = RejectionCounts::default();
        out
    }

    /// Assembles a dataset from records that are already valid and sorted.
    pub(crate) fn from_records(records: Vec<StayRecord>) -> ValidatedDataset {
        let mut map = BTreeMap::new();
        for mut r in records {
            r.sort();
            map.insert(r.stay.stay_id.clone(), r);
        }
        ValidatedDataset { records: map, rejections: RejectionCounts::default() }
    }
}

/// Validates all tables: rejects invalid stays and records, drops events
/// that reference no valid stay, and sorts every stream.
///
/// A duplicate `stay_id` rejects the whole dataset; unsorted input is not an error.
pub fn validate_dataset(raw: RawDataset) -> Result<ValidatedDataset> {
    let mut rejections = RejectionCounts::default();
    let mut seen = BTreeSet::new();
    for s in &raw.stays {
        if !seen.insert(s.stay_id.clone()) {
            return Err(Error::DuplicateStay(s.stay_id.clone()));
        }
    }

    let mut records: BTreeMap<StayId, StayRecord> = BTreeMap::new();
    for s in raw.stays {
        if s.check() {
            records.insert(s.stay_id.clone(), StayRecord::new(s));
        } else {
            rejections.add(Rejection::InvalidStay);
        }
    }

    for e in raw.clinical {
        let Some(rec) = records.get_mut(&e.stay_id) else {
            rejections.add(Rejection::Orphan);
            continue;
        };
        if !e.value.is_finite() {
            rejections.add(Rejection::NonFiniteValue);
        } else if !rec.stay.contains(e.time) {
            rejections.add(Rejection::OutOfStay);
        } else {
            rec.clinical.push(e);
        }
    }

    for m in raw.medications {
        let Some(rec) = records.get_mut(&m.stay_id) else {
            rejections.add(Rejection::Orphan);
            continue;
        };
        if m.is_prophylactic && !m.is_antibiotic {
            rejections.add(Rejection::ProphylacticNotAntibiotic);
        } else if !rec.stay.contains(m.start_time) {
            rejections.add(Rejection::OutOfStay);
        } else {
            rec.medications.push(m);
        }
    }

    for c in raw.cultures {
        let Some(rec) = records.get_mut(&c.stay_id) else {
            rejections.add(Rejection::Orphan);
            continue;
        };
        if c.positive.is_some() != c.result_time.is_some() {
            rejections.add(Rejection::InconsistentCulture);
        } else if c.result_time.is_some_and(|r| r < c.order_time) {
            rejections.add(Rejection::ResultBeforeOrder);
        } else if !rec.stay.contains(c.order_time) {
            rejections.add(Rejection::OutOfStay);
        } else {
            rec.cultures.push(c);
        }
    }

    for d in raw.diagnoses {
        let Some(rec) = records.get_mut(&d.stay_id) else {
            rejections.add(Rejection::Orphan);
            continue;
        };
        if d.is_hai && d.is_cap {
            rejections.add(Rejection::HaiAndCap);
        } else if d.is_hai != d.hai_category.is_some() {
            rejections.add(Rejection::HaiCategoryMismatch);
        } else {
            rec.diagnoses.push(d);
        }
    }

    records.par_iter_mut().for_each(|(_, r)| r.sort());

    Ok(ValidatedDataset { records, rejections })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::hours;

    fn stay(id: &str) -> PatientStay {
        PatientStay {
            stay_id: id.into(),
            patient_id: format!("p-{id}"),
            age_years: 60,
            icu_admit_time: 0,
            discharge_time: hours(100),
            intubation_time: Some(hours(2)),
            mechanically_ventilated: true,
        }
    }

    fn vital(id: &str, t: Minutes, name: &str, v: f64) -> ClinicalEvent {
        ClinicalEvent {
            stay_id: id.into(),
            time: t,
            channel: Channel::Vital,
            feature_name: name.into(),
            value: v,
            unit: "C".into(),
        }
    }

    fn valid_fixture() -> RawDataset {
        let mut raw = RawDataset { stays: vec![stay("a"), stay("b")], ..Default::default() };
        for i in 0..5 {
            raw.clinical.push(vital("a", hours(10 - i), "temperature", 37.0));
            raw.clinical.push(vital("b", hours(i), "temperature", 37.5));
        }
        raw
    }

    #[test]
    fn all_valid_has_no_rejections() {
        let v = validate_dataset(valid_fixture()).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.rejections().is_empty());
        let a = v.get("a").unwrap();
        assert!(a.clinical.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn event_after_discharge_is_dropped() {
        let mut raw = valid_fixture();
        raw.clinical.push(vital("a", hours(101), "temperature", 37.0));
        let v = validate_dataset(raw).unwrap();
        assert_eq!(v.rejections().get(Rejection::OutOfStay), 1);
        assert_eq!(v.rejections().total(), 1);
        assert_eq!(v.get("a").unwrap().clinical.len(), 5);
    }

    #[test]
    fn duplicate_stay_rejects_dataset() {
        let mut raw = valid_fixture();
        raw.stays.push(stay("a"));
        assert!(matches!(validate_dataset(raw), Err(Error::DuplicateStay(id)) if id == "a"));
    }

    #[test]
    fn every_single_field_violation_is_caught() {
        let med = |proph: bool, abx: bool, t: Minutes| MedicationEvent {
            stay_id: "a".into(),
            start_time: t,
            drug_name: "x".into(),
            is_antibiotic: abx,
            is_prophylactic: proph,
        };
        let culture = |rt: Option<Minutes>, pos: Option<bool>| CultureEvent {
            stay_id: "a".into(),
            order_time: hours(5),
            result_time: rt,
            positive: pos,
        };
        let dx = |hai: bool, cap: bool, cat: Option<HaiCategory>| DiagnosisCode {
            stay_id: "a".into(),
            code: "c".into(),
            is_hai: hai,
            is_cap: cap,
            hai_category: cat,
        };
        let mut bad_stay = stay("z");
        bad_stay.discharge_time = bad_stay.icu_admit_time;
        let mut unvent = stay("y");
        unvent.mechanically_ventilated = false;
        let mut late_intubation = stay("x");
        late_intubation.intubation_time = Some(hours(200));

        let cases: Vec<(Rejection, Box<dyn Fn(&mut RawDataset)>)> = vec![
            (Rejection::InvalidStay, Box::new(move |r| r.stays.push(bad_stay.clone()))),
            (Rejection::InvalidStay, Box::new(move |r| r.stays.push(unvent.clone()))),
            (Rejection::InvalidStay, Box::new(move |r| r.stays.push(late_intubation.clone()))),
            (Rejection::Orphan, Box::new(|r| r.clinical.push(vital("nope", 0, "t", 1.0)))),
            (Rejection::OutOfStay, Box::new(|r| r.clinical.push(vital("a", -1, "t", 1.0)))),
            (Rejection::NonFiniteValue, Box::new(|r| r.clinical.push(vital("a", 3, "t", f64::NAN)))),
            (Rejection::InconsistentCulture, Box::new(move |r| r.cultures.push(culture(None, Some(true))))),
            (Rejection::InconsistentCulture, Box::new(move |r| r.cultures.push(culture(Some(hours(9)), None)))),
            (Rejection::ResultBeforeOrder, Box::new(move |r| r.cultures.push(culture(Some(hours(1)), Some(false))))),
            (Rejection::ProphylacticNotAntibiotic, Box::new(move |r| r.medications.push(med(true, false, 10)))),
            (Rejection::OutOfStay, Box::new(move |r| r.medications.push(med(false, true, hours(500))))),
            (Rejection::HaiAndCap, Box::new(move |r| r.diagnoses.push(dx(true, true, Some(HaiCategory::Vap))))),
            (Rejection::HaiCategoryMismatch, Box::new(move |r| r.diagnoses.push(dx(true, false, None)))),
            (Rejection::HaiCategoryMismatch, Box::new(move |r| r.diagnoses.push(dx(false, false, Some(HaiCategory::Ssi))))),
        ];
        for (expected, mutate) in cases {
            let mut raw = valid_fixture();
            mutate(&mut raw);
            let v = validate_dataset(raw).unwrap();
            assert_eq!(v.rejections().get(expected), 1, "{expected:?}");
            assert_eq!(v.rejections().total(), 1, "{expected:?}");
        }
    }

    #[test]
    fn validation_is_idempotent_and_order_independent() {
        let mut raw = valid_fixture();
        raw.clinical.push(vital("a", hours(4), "heart_rate", 80.0));
        raw.clinical.push(vital("a", hours(4), "heart_rate", 80.0));
        let v = validate_dataset(raw.clone()).unwrap();
        let again = validate_dataset(v.to_raw()).unwrap();
        assert!(again.rejections().is_empty());
        assert_eq!(again, v);

        raw.clinical.reverse();
        raw.stays.reverse();
        assert_eq!(validate_dataset(raw).unwrap(), v);
    }

    #[test]
    fn channel_order_is_lexicographic() {
        let mut names: Vec<_> = Channel::ALL.iter().map(|c| c.as_str()).collect();
        let sorted = {
            let mut s = names.clone();
            s.sort();
            s
        };
        assert_eq!(names, sorted);
        names.dedup();
        assert_eq!(names.len(), 4);
    }
}
