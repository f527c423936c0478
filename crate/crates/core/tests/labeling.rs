mod common;

use haicmp_core::ehr::{validate_dataset, HaiCategory, RawDataset};
use haicmp_core::labeling::{label_cohort, Label, LabelParams, LabelRecord};
use haicmp_core::synthgen::{generate_population, ScenarioConfig, WorkupRates};
use proptest::prelude::*;
use rand::seq::SliceRandom;

use common::brute_force_labels;

fn small_raw(seed: u64) -> RawDataset {
    let (ds, _) = generate_population(&ScenarioConfig { n_patients: 40, rng_seed: seed, ..Default::default() }).unwrap();
    ds.to_raw()
}

fn labels_of(raw: RawDataset) -> Vec<LabelRecord> {
    label_cohort(&validate_dataset(raw).unwrap(), &LabelParams::default())
}

fn as_tuples(labels: &[LabelRecord]) -> common::Labels {
    labels
        .iter()
        .map(|l| (l.stay_id.clone(), (l.iri_label, l.iri_onset, l.vap_label, l.vap_onset)))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn agrees_with_brute_force(seed in 0u64..10_000) {
        let raw = small_raw(seed);
        let oracle = brute_force_labels(&raw, &LabelParams::default());
        prop_assert_eq!(as_tuples(&labels_of(raw)), oracle);
    }

    #[test]
    fn deleting_evidence_never_creates_a_positive(seed in 0u64..10_000, pick in any::<prop::sample::Index>(), culture in any::<bool>()) {
        let raw = small_raw(seed);
        let before = as_tuples(&labels_of(raw.clone()));
        let mut cut = raw;
        if culture && !cut.cultures.is_empty() {
            cut.cultures.remove(pick.index(cut.cultures.len()));
        } else if !cut.medications.is_empty() {
            cut.medications.remove(pick.index(cut.medications.len()));
        }
        let after = as_tuples(&labels_of(cut));
        for (stay, b) in &before {
            let a = &after[stay];
            prop_assert!(!(b.0 == Label::Negative && a.0 == Label::Positive), "IRI flipped on {}", stay);
            prop_assert!(!(b.2 == Label::Negative && a.2 == Label::Positive), "VAP flipped on {}", stay);
        }
    }

    #[test]
    fn event_order_is_irrelevant(seed in 0u64..10_000, shuffle_seed in any::<u64>()) {
        let raw = small_raw(seed);
        let expected = labels_of(raw.clone());
        let mut shuffled = raw;
        let mut rng = haicmp_core::rng::rng_from_seed(shuffle_seed);
        shuffled.stays.shuffle(&mut rng);
        shuffled.clinical.shuffle(&mut rng);
        shuffled.medications.shuffle(&mut rng);
        shuffled.cultures.shuffle(&mut rng);
        shuffled.diagnoses.shuffle(&mut rng);
        prop_assert_eq!(labels_of(shuffled), expected);
    }
}

#[test]
fn saturated_vap_labels_every_ventilated_stay() {
    let cfg = ScenarioConfig {
        n_patients: 150,
        infection_rates: HaiCategory::ALL.iter().map(|&c| (c, if c == HaiCategory::Vap { 1.0 } else { 0.0 })).collect(),
        cap_rate: 0.0,
        early_workup_rate: WorkupRates { ventilated: 0.0, non_ventilated: 0.0 },
        false_alarm_rate: 0.0,
        ..Default::default()
    };
    let (ds, _) = generate_population(&cfg).unwrap();
    let labels = label_cohort(&ds, &LabelParams::default());
    let ventilated: Vec<_> = labels.iter().filter(|l| ds.get(&l.stay_id).unwrap().stay.intubation_time.is_some()).collect();
    assert!(!ventilated.is_empty());
    for l in ventilated {
        assert_eq!(l.vap_label, Label::Positive, "{}", l.stay_id);
    }
}

#[test]
fn one_record_per_stay() {
    let raw = small_raw(3);
    let n = raw.stays.len();
    let labels = labels_of(raw);
    assert_eq!(labels.len(), n);
    assert!(labels.windows(2).all(|w| w[0].stay_id < w[1].stay_id));
}
