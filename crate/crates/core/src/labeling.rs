//! Infection labels for both models.
//!
//! VAP labels come from clinical actions: a new antibiotic close in time to a
//! culture order is a suspected infection, which becomes presumed VAP when the
//! culture is positive, the event is at least 48h after intubation, and no
//! CAP or non-VAP HAI code is charted. IRI labels need an HAI diagnosis code
//! plus culture or treatment evidence, and exclude minors and stays with any
//! workup in the first 48h of ICU admission.

use std::collections::HashMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ehr::{CultureEvent, DiagnosisCode, HaiCategory, MedicationEvent, PatientStay, StayId, StayRecord, ValidatedDataset};
use crate::time::{hours, Minutes};

/// Which model a label, cohort or sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTarget {
    Iri,
    Vap,
}

impl ModelTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelTarget::Iri => "iri",
            ModelTarget::Vap => "vap",
        }
    }
}

impl fmt::Display for ModelTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Excluded,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn is_included(self) -> bool {
        self != Label::Excluded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelParams {
    /// Max |antibiotic - culture order| for a suspected infection pair.
    pub contiguity_window_hours: i64,
    /// A drug counts as new if not given within this many hours before.
    pub novelty_lookback_hours: i64,
    /// HAI clock: IRI exclusion window and earliest IRI onset after ICU admission.
    pub hai_clock_hours: i64,
    /// Earliest VAP onset after intubation.
    pub vap_after_intubation_hours: i64,
    pub adult_age_years: u32,
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            contiguity_window_hours: 24,
            novelty_lookback_hours: 48,
            hai_clock_hours: 48,
            vap_after_intubation_hours: 48,
            adult_age_years: 18,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectedInfectionEvent {
    pub stay_id: StayId,
    pub antibiotic_time: Minutes,
    pub culture_order_time: Minutes,
    pub onset_time: Minutes,
    /// True if any culture among the merged pairs returned positive.
    pub culture_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub stay_id: StayId,
    pub iri_label: Label,
    pub vap_label: Label,
    pub iri_onset: Option<Minutes>,
    pub vap_onset: Option<Minutes>,
}

impl LabelRecord {
    pub fn label(&self, target: ModelTarget) -> Label {
        match target {
            ModelTarget::Iri => self.iri_label,
            ModelTarget::Vap => self.vap_label,
        }
    }

    pub fn onset(&self, target: ModelTarget) -> Option<Minutes> {
        match target {
            ModelTarget::Iri => self.iri_onset,
            ModelTarget::Vap => self.vap_onset,
        }
    }
}

/// Finds suspected infection events in one stay's medication and culture
/// streams (both sorted by time).
///
/// Every (new treatment antibiotic, culture order) pair within the contiguity
/// window is a candidate with onset at the earlier of the two times. Candidates
/// are taken in onset order; a candidate whose onset falls within one window
/// of the current event's onset merges into it.
pub fn detect_suspected_infections(
    stay_id: &str,
    meds: &[MedicationEvent],
    cultures: &[CultureEvent],
    params: &LabelParams,
) -> Vec<SuspectedInfectionEvent> {
    let window = hours(params.contiguity_window_hours);
    let lookback = hours(params.novelty_lookback_hours);

    let mut last_given: HashMap<&str, Minutes> = HashMap::new();
    let mut new_abx = Vec::new();
    for m in meds.iter().filter(|m| m.is_treatment_antibiotic()) {
        let is_new = last_given
            .get(m.drug_name.as_str())
            .is_none_or(|&prev| m.start_time - prev > lookback);
        if is_new {
            new_abx.push(m.start_time);
        }
        last_given.insert(m.drug_name.as_str(), m.start_time);
    }

    let mut candidates: Vec<(Minutes, Minutes, Minutes, bool)> = Vec::new();
    for &a in &new_abx {
        for c in cultures {
            if (a - c.order_time).abs() <= window {
                candidates.push((a.min(c.order_time), a, c.order_time, c.is_positive()));
            }
        }
    }
    candidates.sort();

    let mut events: Vec<SuspectedInfectionEvent> = Vec::new();
    for (onset, a, c, positive) in candidates {
        match events.last_mut() {
            Some(ev) if onset - ev.onset_time <= window => ev.culture_positive |= positive,
            _ => events.push(SuspectedInfectionEvent {
                stay_id: stay_id.to_string(),
                antibiotic_time: a,
                culture_order_time: c,
                onset_time: onset,
                culture_positive: positive,
            }),
        }
    }
    events
}

/// VAP label: excluded without intubation; otherwise positive at the earliest
/// suspected event meeting all three presumed-VAP criteria.
pub fn label_vap(
    stay: &PatientStay,
    suspected: &[SuspectedInfectionEvent],
    diagnoses: &[DiagnosisCode],
    params: &LabelParams,
) -> (Label, Option<Minutes>) {
    let Some(intubation) = stay.intubation_time else {
        return (Label::Excluded, None);
    };
    let competing = diagnoses
        .iter()
        .any(|d| d.is_cap || (d.is_hai && d.hai_category != Some(HaiCategory::Vap)));
    if competing {
        return (Label::Negative, None);
    }
    let earliest = intubation + hours(params.vap_after_intubation_hours);
    suspected
        .iter()
        .filter(|e| e.culture_positive && e.onset_time >= earliest)
        .map(|e| e.onset_time)
        .min()
        .map_or((Label::Negative, None), |t| (Label::Positive, Some(t)))
}

/// IRI label: HAI code plus culture order or treatment antibiotic after the
/// HAI clock, with age and early-workup exclusions.
pub fn label_iri(
    stay: &PatientStay,
    diagnoses: &[DiagnosisCode],
    meds: &[MedicationEvent],
    cultures: &[CultureEvent],
    params: &LabelParams,
) -> (Label, Option<Minutes>) {
    if stay.age_years < params.adult_age_years {
        return (Label::Excluded, None);
    }
    let clock = stay.icu_admit_time + hours(params.hai_clock_hours);
    let evidence_times = meds
        .iter()
        .filter(|m| m.is_treatment_antibiotic())
        .map(|m| m.start_time)
        .chain(cultures.iter().map(|c| c.order_time));

    let mut onset: Option<Minutes> = None;
    for t in evidence_times {
        if t < clock {
            return (Label::Excluded, None);
        }
        onset = Some(onset.map_or(t, |o| o.min(t)));
    }
    match onset {
        Some(t) if diagnoses.iter().any(|d| d.is_hai) => (Label::Positive, Some(t)),
        _ => (Label::Negative, None),
    }
}

pub fn label_stay(record: &StayRecord, params: &LabelParams) -> LabelRecord {
    let stay = &record.stay;
    let suspected = detect_suspected_infections(&stay.stay_id, &record.medications, &record.cultures, params);
    let (vap_label, vap_onset) = label_vap(stay, &suspected, &record.diagnoses, params);
    let (iri_label, iri_onset) = label_iri(stay, &record.diagnoses, &record.medications, &record.cultures, params);
    LabelRecord { stay_id: stay.stay_id.clone(), iri_label, vap_label, iri_onset, vap_onset }
}

/// One label record per stay, in stay_id order.
pub fn label_cohort(dataset: &ValidatedDataset, params: &LabelParams) -> Vec<LabelRecord> {
    let records: Vec<&StayRecord> = dataset.records().collect();
    records.par_iter().map(|r| label_stay(r, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ehr::HaiCategory;

    fn abx(t_h: i64, drug: &str) -> MedicationEvent {
        MedicationEvent {
            stay_id: "s".into(),
            start_time: hours(t_h),
            drug_name: drug.into(),
            is_antibiotic: true,
            is_prophylactic: false,
        }
    }

    fn culture(t_h: i64, positive: bool) -> CultureEvent {
        CultureEvent {
            stay_id: "s".into(),
            order_time: hours(t_h),
            result_time: Some(hours(t_h + 48)),
            positive: Some(positive),
        }
    }

    fn dx(hai: Option<HaiCategory>, cap: bool) -> DiagnosisCode {
        DiagnosisCode {
            stay_id: "s".into(),
            code: "x".into(),
            is_hai: hai.is_some(),
            is_cap: cap,
            hai_category: hai,
        }
    }

    fn stay(age: u32, intubation_h: Option<i64>) -> PatientStay {
        PatientStay {
            stay_id: "s".into(),
            patient_id: "p".into(),
            age_years: age,
            icu_admit_time: 0,
            discharge_time: hours(300),
            intubation_time: intubation_h.map(hours),
            mechanically_ventilated: intubation_h.is_some(),
        }
    }

    fn p() -> LabelParams {
        LabelParams::default()
    }

    #[test]
    fn pair_within_window_has_min_onset() {
        let ev = detect_suspected_infections("s", &[abx(100, "vanc")], &[culture(110, true)], &p());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].onset_time, hours(100));
    }

    #[test]
    fn pair_outside_window_is_ignored() {
        let ev = detect_suspected_infections("s", &[abx(100, "vanc")], &[culture(140, true)], &p());
        assert!(ev.is_empty());
    }

    #[test]
    fn continuation_doses_collapse_to_one_event() {
        let meds = [abx(100, "vanc"), abx(102, "vanc"), abx(104, "vanc")];
        let ev = detect_suspected_infections("s", &meds, &[culture(101, false)], &p());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].onset_time, hours(100));
        assert_eq!(ev[0].antibiotic_time, hours(100));
    }

    #[test]
    fn prophylactic_antibiotics_do_not_qualify() {
        let mut m = abx(100, "cefazolin");
        m.is_prophylactic = true;
        assert!(detect_suspected_infections("s", &[m], &[culture(100, true)], &p()).is_empty());
    }

    #[test]
    fn drug_is_new_again_after_lookback() {
        let meds = [abx(10, "vanc"), abx(59, "vanc")];
        let ev = detect_suspected_infections("s", &meds, &[culture(60, true)], &p());
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].onset_time, hours(59));
        let meds = [abx(10, "vanc"), abx(58, "vanc")];
        assert!(detect_suspected_infections("s", &meds, &[culture(60, true)], &p()).is_empty());
    }

    #[test]
    fn vap_rules() {
        let susp = |onset_h: i64, pos: bool| SuspectedInfectionEvent {
            stay_id: "s".into(),
            antibiotic_time: hours(onset_h),
            culture_order_time: hours(onset_h),
            onset_time: hours(onset_h),
            culture_positive: pos,
        };
        let s = stay(60, Some(0));
        assert_eq!(label_vap(&s, &[susp(50, true)], &[], &p()), (Label::Positive, Some(hours(50))));
        assert_eq!(label_vap(&s, &[susp(40, true)], &[], &p()), (Label::Negative, None));
        assert_eq!(label_vap(&s, &[susp(50, false)], &[], &p()), (Label::Negative, None));
        assert_eq!(label_vap(&s, &[susp(50, true)], &[dx(None, true)], &p()), (Label::Negative, None));
        assert_eq!(
            label_vap(&s, &[susp(50, true)], &[dx(Some(HaiCategory::Cauti), false)], &p()),
            (Label::Negative, None)
        );
        assert_eq!(
            label_vap(&s, &[susp(50, true)], &[dx(Some(HaiCategory::Vap), false)], &p()),
            (Label::Positive, Some(hours(50)))
        );
        assert_eq!(
            label_vap(&s, &[susp(40, true), susp(70, true), susp(60, true)], &[], &p()),
            (Label::Positive, Some(hours(60)))
        );
        assert_eq!(label_vap(&stay(60, None), &[susp(50, true)], &[], &p()).0, Label::Excluded);
    }

    #[test]
    fn iri_rules() {
        let hai = [dx(Some(HaiCategory::Clabsi), false)];
        assert_eq!(label_iri(&stay(17, None), &hai, &[], &[], &p()).0, Label::Excluded);
        assert_eq!(label_iri(&stay(60, None), &hai, &[], &[culture(10, false)], &p()).0, Label::Excluded);
        assert_eq!(
            label_iri(&stay(60, None), &hai, &[abx(60, "vanc")], &[], &p()),
            (Label::Positive, Some(hours(60)))
        );
        assert_eq!(
            label_iri(&stay(60, None), &hai, &[abx(60, "vanc")], &[culture(55, true)], &p()),
            (Label::Positive, Some(hours(55)))
        );
        // HAI code without any evidence stays negative.
        assert_eq!(label_iri(&stay(60, None), &hai, &[], &[], &p()), (Label::Negative, None));
        // Evidence without an HAI code is negative.
        assert_eq!(label_iri(&stay(60, None), &[], &[abx(60, "vanc")], &[], &p()).0, Label::Negative);
        // Prophylaxis in the first 48h is not an exclusion.
        let mut proph = abx(5, "cefazolin");
        proph.is_prophylactic = true;
        assert_eq!(label_iri(&stay(60, None), &hai, &[proph, abx(60, "vanc")], &[], &p()).0, Label::Positive);
    }

    #[test]
    fn empty_dataset_labels_nothing() {
        assert!(label_cohort(&ValidatedDataset::default(), &p()).is_empty());
    }
}
