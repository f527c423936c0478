mod common;

use haicmp_core::ehr::{validate_dataset, Channel, ClinicalEvent};
use haicmp_core::featurize::{build_feature_vector, extract_feature, WindowPolicy};
use haicmp_core::labeling::{label_cohort, LabelParams};
use haicmp_core::synthgen::{generate_population, ScenarioConfig};
use proptest::prelude::*;

use common::HOUR;

/// Latest in-window value, else the latest value in the carry-forward band.
fn naive_extract(events: &[ClinicalEvent], feature: &str, t: i64, observation: i64, validity: i64) -> Option<f64> {
    let latest = |lo: i64, hi: i64| {
        events
            .iter()
            .filter(|e| e.feature_name == feature && e.time >= lo && e.time <= hi)
            .max_by_key(|e| e.time)
            .map(|e| e.value)
    };
    let start = t - observation * HOUR;
    latest(start, t).or_else(|| latest(start - validity * HOUR, start - 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn extraction_matches_the_naive_rule(seed in 0u64..5000, offset in 0i64..400) {
        let cfg = ScenarioConfig { n_patients: 20, rng_seed: seed, ..Default::default() };
        let (ds, _) = generate_population(&cfg).unwrap();
        let catalog = cfg.feature_catalog();
        let policy = WindowPolicy::default();
        for rec in ds.records() {
            let t = rec.stay.icu_admit_time + offset * HOUR / 4;
            for f in &catalog.measured {
                let w = policy.for_channel(f.channel);
                // Stays hold one event per (feature, time), so "latest" is unambiguous.
                let got = extract_feature(&rec.clinical, &f.name, t, &catalog, &policy).unwrap();
                prop_assert_eq!(got, naive_extract(&rec.clinical, &f.name, t, w.observation_hours, w.validity_hours));
            }
        }
    }

    #[test]
    fn events_after_the_prediction_time_are_invisible(seed in 0u64..5000, delay in 1i64..(72 * HOUR), scale in 2.0f64..50.0) {
        let cfg = ScenarioConfig { n_patients: 15, rng_seed: seed, ..Default::default() };
        let (ds, _) = generate_population(&cfg).unwrap();
        let catalog = cfg.feature_catalog();
        let policy = WindowPolicy::default();
        let labels = label_cohort(&ds, &LabelParams::default());
        let mut raw = ds.to_raw();
        let mut times = Vec::new();
        for rec in ds.records() {
            let t = rec.stay.icu_admit_time + (rec.stay.los_minutes() / 2);
            times.push(t);
            for f in &catalog.measured {
                let vent = matches!(f.channel, Channel::VentSetting | Channel::Vae);
                if t + delay <= rec.stay.discharge_time && (!vent || rec.stay.intubation_time.is_some_and(|i| i <= t)) {
                    raw.clinical.push(ClinicalEvent {
                        stay_id: rec.stay.stay_id.clone(),
                        time: t + delay,
                        channel: f.channel,
                        feature_name: f.name.clone(),
                        value: 1.0e3 * scale,
                        unit: f.unit.clone(),
                    });
                }
            }
        }
        let tainted = validate_dataset(raw).unwrap();
        for ((rec, lab), t) in ds.records().zip(&labels).zip(&times) {
            let before = build_feature_vector(rec, lab, *t, &catalog, &policy, "x".into()).unwrap();
            let after = build_feature_vector(tainted.get(&rec.stay.stay_id).unwrap(), lab, *t, &catalog, &policy, "x".into()).unwrap();
            prop_assert_eq!(before, after);
        }
    }
}
