//! Seeded synthetic ICU populations.
//!
//! Each patient gets one or more stays. A stay may carry one planted
//! infection, emitted as a treatment antibiotic and a positive culture around
//! the onset plus a matching HAI diagnosis code, so the labeling rules can
//! recover it. Infected stays with a signalling category get a shift in their
//! clinical features from `onset - signal_lead_hours` on.
//!
//! Missingness is planted per stay and feature ("never charted"), at a
//! class-specific rate, through a latent draw shared across features with
//! probability `missingness_correlation`. With `unbiased_common_profile`,
//! ventilated adults without an early workup use the control rate whatever
//! their class.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ehr::{
    Channel, ClinicalEvent, CultureEvent, DiagnosisCode, HaiCategory, MedicationEvent, PatientId, PatientStay, ReferenceRange,
    StayId, StayRecord, ValidatedDataset,
};
use crate::featurize::{FeatureCatalog, FeatureSpec, RatioSpec, ReferenceRanges, MV_HOURS, SPO2_FIO2_RATIO};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::time::{hours, Minutes, MINUTES_PER_HOUR};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    /// Mean of log(LOS in hours).
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn with_median(median_hours: f64, sigma: f64) -> Self {
        LogNormalParams { mu: median_hours.ln(), sigma }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassLos {
    pub infected: LogNormalParams,
    pub control: LogNormalParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRates {
    pub infected: f64,
    pub control: f64,
}

impl ClassRates {
    pub fn rate(&self, infected: bool) -> f64 {
        if infected {
            self.infected
        } else {
            self.control
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkupRates {
    pub ventilated: f64,
    pub non_ventilated: f64,
}

/// A generated clinical feature: per-stay baseline plus per-measurement noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFeature {
    pub name: String,
    pub channel: Channel,
    pub unit: String,
    pub mean: f64,
    pub between_sd: f64,
    pub within_sd: f64,
    pub cadence_hours: i64,
    pub reference_low: f64,
    pub reference_high: f64,
}

impl SyntheticFeature {
    pub fn total_sd(&self) -> f64 {
        (self.between_sd.powi(2) + self.within_sd.powi(2)).sqrt()
    }

    /// Ventilator channels are only charted while intubated.
    pub fn needs_ventilation(&self) -> bool {
        matches!(self.channel, Channel::VentSetting | Channel::Vae)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_patients: usize,
    /// Probability that a patient returns for a second stay.
    pub readmission_rate: f64,
    pub fraction_ventilated: f64,
    pub fraction_minor: f64,
    /// Per-stay probability of a planted infection of each category. The VAP
    /// rate applies to ventilated stays only.
    pub infection_rates: BTreeMap<HaiCategory, f64>,
    /// Probability of a community-acquired pneumonia code on stays without VAP.
    pub cap_rate: f64,
    /// Culture and antibiotic in the first 24 hours.
    pub early_workup_rate: WorkupRates,
    /// Negative culture workup after 48 hours in stays without infection.
    pub false_alarm_rate: f64,
    pub prophylaxis_rate: f64,
    pub los: ClassLos,
    pub features: Vec<SyntheticFeature>,
    /// Shift of the infected-class mean, in units of the feature's total sd.
    pub feature_effect_sizes: BTreeMap<String, f64>,
    /// Categories whose infections shift the features.
    pub signal_categories: Vec<HaiCategory>,
    /// Per-feature override of `signal_categories`.
    pub feature_signal_categories: BTreeMap<String, Vec<HaiCategory>>,
    pub signal_lead_hours: i64,
    /// Probability a feature is never charted in a stay, by class.
    pub missingness: BTreeMap<String, ClassRates>,
    pub missingness_correlation: f64,
    pub unbiased_common_profile: bool,
    pub rng_seed: u64,
}

fn feature(name: &str, channel: Channel, unit: &str, mean: f64, sd: (f64, f64), cadence: i64, range: (f64, f64)) -> SyntheticFeature {
    SyntheticFeature {
        name: name.into(),
        channel,
        unit: unit.into(),
        mean,
        between_sd: sd.0,
        within_sd: sd.1,
        cadence_hours: cadence,
        reference_low: range.0,
        reference_high: range.1,
    }
}

pub fn default_features() -> Vec<SyntheticFeature> {
    use Channel::*;
    vec![
        feature("temperature", Vital, "C", 37.0, (0.35, 0.3), 4, (36.0, 38.0)),
        feature("heart_rate", Vital, "bpm", 85.0, (10.0, 6.0), 4, (60.0, 100.0)),
        feature("resp_rate", Vital, "/min", 18.0, (3.0, 2.0), 4, (12.0, 20.0)),
        feature("sbp", Vital, "mmHg", 120.0, (12.0, 8.0), 4, (90.0, 140.0)),
        feature("spo2", Vital, "%", 96.0, (1.5, 1.0), 4, (95.0, 100.0)),
        feature("wbc", Lab, "K/uL", 9.0, (2.5, 1.0), 24, (4.0, 11.0)),
        feature("lactate", Lab, "mmol/L", 1.5, (0.5, 0.3), 24, (0.5, 2.0)),
        feature("creatinine", Lab, "mg/dL", 1.0, (0.25, 0.1), 24, (0.6, 1.2)),
        feature("platelets", Lab, "K/uL", 250.0, (50.0, 20.0), 24, (150.0, 400.0)),
        feature("fio2", VentSetting, "fraction", 0.4, (0.08, 0.04), 4, (0.21, 0.6)),
        feature("peep", VentSetting, "cmH2O", 6.0, (1.5, 0.8), 4, (5.0, 10.0)),
        feature("vae_peep_rise", Vae, "cmH2O", 0.5, (0.6, 0.6), 12, (0.0, 2.0)),
    ]
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let infection_rates = [
            (HaiCategory::Vap, 0.16),
            (HaiCategory::Clabsi, 0.05),
            (HaiCategory::Cauti, 0.05),
            (HaiCategory::Ssi, 0.03),
            (HaiCategory::Hap, 0.04),
            (HaiCategory::Cdi, 0.03),
        ]
        .into_iter()
        .collect();
        let feature_effect_sizes = [
            ("temperature", 1.0),
            ("heart_rate", 0.7),
            ("resp_rate", 0.6),
            ("sbp", -0.4),
            ("spo2", -0.5),
            ("wbc", 0.9),
            ("lactate", 0.5),
            ("fio2", 0.8),
            ("peep", 0.6),
            ("vae_peep_rise", 0.9),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        // Every measured feature goes uncharted far more often in infected
        // stays; the shared latent makes the gaps co-occur.
        let missingness = default_features()
            .into_iter()
            .map(|f| (f.name, ClassRates { infected: 0.85, control: 0.3 }))
            .collect();
        ScenarioConfig {
            n_patients: 4000,
            readmission_rate: 0.1,
            fraction_ventilated: 0.45,
            fraction_minor: 0.04,
            infection_rates,
            cap_rate: 0.05,
            early_workup_rate: WorkupRates { ventilated: 0.45, non_ventilated: 0.25 },
            false_alarm_rate: 0.15,
            prophylaxis_rate: 0.2,
            los: ClassLos { infected: LogNormalParams::with_median(150.0, 0.25), control: LogNormalParams::with_median(60.0, 0.45) },
            features: default_features(),
            feature_effect_sizes,
            signal_categories: HaiCategory::ALL.to_vec(),
            // Ventilator deterioration is specific to VAP.
            feature_signal_categories: ["fio2", "peep", "vae_peep_rise"]
                .into_iter()
                .map(|f| (f.to_string(), vec![HaiCategory::Vap]))
                .collect(),
            signal_lead_hours: 48,
            missingness,
            missingness_correlation: 0.95,
            unbiased_common_profile: true,
            rng_seed: 7,
        }
    }
}

impl ScenarioConfig {
    /// Scenario with no infections, workups, prophylaxis or missingness.
    pub fn null(n_patients: usize, seed: u64) -> Self {
        ScenarioConfig {
            n_patients,
            infection_rates: HaiCategory::ALL.iter().map(|&c| (c, 0.0)).collect(),
            cap_rate: 0.0,
            early_workup_rate: WorkupRates { ventilated: 0.0, non_ventilated: 0.0 },
            false_alarm_rate: 0.0,
            prophylaxis_rate: 0.0,
            missingness: BTreeMap::new(),
            rng_seed: seed,
            ..Default::default()
        }
    }

    pub fn rate(&self, c: HaiCategory) -> f64 {
        self.infection_rates.get(&c).copied().unwrap_or(0.0)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.n_patients == 0 {
            return bad("n_patients must be positive".into());
        }
        let probs = [
            ("readmission_rate", self.readmission_rate),
            ("fraction_ventilated", self.fraction_ventilated),
            ("fraction_minor", self.fraction_minor),
            ("cap_rate", self.cap_rate),
            ("early_workup_rate.ventilated", self.early_workup_rate.ventilated),
            ("early_workup_rate.non_ventilated", self.early_workup_rate.non_ventilated),
            ("false_alarm_rate", self.false_alarm_rate),
            ("prophylaxis_rate", self.prophylaxis_rate),
            ("missingness_correlation", self.missingness_correlation),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        for (c, p) in &self.infection_rates {
            if !(0.0..=1.0).contains(p) {
                return bad(format!("infection rate for {} = {p} is not a probability", c.as_str()));
            }
        }
        let total: f64 = self.infection_rates.values().sum();
        if total > 1.0 + 1e-12 {
            return bad(format!("infection rates sum to {total} > 1"));
        }
        for p in [self.los.infected, self.los.control] {
            if !(p.mu.is_finite() && p.sigma.is_finite() && p.sigma > 0.0) {
                return bad("LOS log-normal needs finite mu and sigma > 0".into());
            }
        }
        if self.signal_lead_hours < 0 {
            return bad("signal_lead_hours must be non-negative".into());
        }
        let mut names: Vec<&str> = self.features.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("duplicate synthetic feature name".into());
        }
        for f in &self.features {
            let ok = [f.mean, f.between_sd, f.within_sd, f.reference_low, f.reference_high].iter().all(|v| v.is_finite())
                && f.between_sd >= 0.0
                && f.within_sd >= 0.0
                && f.cadence_hours > 0
                && f.reference_high > f.reference_low;
            if !ok {
                return bad(format!("feature `{}` has invalid parameters", f.name));
            }
        }
        for (name, e) in &self.feature_effect_sizes {
            if !e.is_finite() {
                return bad(format!("effect size for `{name}` is not finite"));
            }
            if !names.contains(&name.as_str()) {
                return Err(Error::UnknownFeature(name.clone()));
            }
        }
        for name in self.feature_signal_categories.keys() {
            if !names.contains(&name.as_str()) {
                return Err(Error::UnknownFeature(name.clone()));
            }
        }
        for (name, r) in &self.missingness {
            if !names.contains(&name.as_str()) {
                return Err(Error::UnknownFeature(name.clone()));
            }
            if !(0.0..=1.0).contains(&r.infected) || !(0.0..=1.0).contains(&r.control) {
                return bad(format!("missingness for `{name}` is not a probability"));
            }
        }
        Ok(())
    }

    /// Feature catalog matching the generated streams, with `mv_hrs` and the
    /// SpO2/FiO2 ratio when both constituents exist.
    pub fn feature_catalog(&self) -> FeatureCatalog {
        let measured: Vec<FeatureSpec> = self
            .features
            .iter()
            .map(|f| FeatureSpec { name: f.name.clone(), channel: f.channel, unit: f.unit.clone() })
            .collect();
        let has = |n: &str| measured.iter().any(|f| f.name == n);
        let spo2_fio2 = (has("spo2") && has("fio2")).then(|| RatioSpec { numerator: "spo2".into(), denominator: "fio2".into() });
        FeatureCatalog { measured, mv_hours: true, spo2_fio2 }
    }

    /// Reference ranges for every catalog feature.
    pub fn reference_ranges(&self) -> Vec<ReferenceRange> {
        let mut out: Vec<ReferenceRange> = self
            .features
            .iter()
            .map(|f| ReferenceRange { feature_name: f.name.clone(), l: f.reference_low, u: f.reference_high, unit: f.unit.clone() })
            .collect();
        out.push(ReferenceRange { feature_name: MV_HOURS.into(), l: 24.0, u: 120.0, unit: "h".into() });
        out.push(ReferenceRange { feature_name: SPO2_FIO2_RATIO.into(), l: 315.0, u: 475.0, unit: "ratio".into() });
        out
    }

    pub fn reference_range_set(&self) -> Result<ReferenceRanges> {
        ReferenceRanges::new(self.reference_ranges())
    }
}

/// What the generator planted in one stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StayTruth {
    pub stay_id: StayId,
    pub patient_id: PatientId,
    pub category: Option<HaiCategory>,
    pub onset: Option<Minutes>,
    pub ventilated: bool,
    pub adult: bool,
    pub early_workup: bool,
    pub cap_code: bool,
    pub false_alarm: bool,
    pub signal: bool,
    /// Features never charted in this stay.
    pub uncharted: Vec<String>,
}

impl StayTruth {
    pub fn infected(&self) -> bool {
        self.category.is_some()
    }

    /// Ventilated adult without early workup: the stays both models share.
    pub fn common_profile(&self) -> bool {
        self.ventilated && self.adult && !self.early_workup
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub stays: BTreeMap<StayId, StayTruth>,
}

impl GroundTruth {
    pub fn get(&self, stay_id: &str) -> Option<&StayTruth> {
        self.stays.get(stay_id)
    }

    pub fn infected(&self, stay_id: &str) -> bool {
        self.get(stay_id).is_some_and(StayTruth::infected)
    }

    pub fn planted(&self, category: HaiCategory) -> impl Iterator<Item = &StayTruth> {
        self.stays.values().filter(move |t| t.category == Some(category))
    }
}

const TREATMENT_DRUGS: [&str; 4] = ["vancomycin", "piperacillin-tazobactam", "meropenem", "cefepime"];
const EARLY_DRUGS: [&str; 2] = ["ceftriaxone", "azithromycin"];
const PROPHYLAXIS_DRUG: &str = "cefazolin";

fn hai_code(c: HaiCategory) -> &'static str {
    match c {
        HaiCategory::Vap => "J95.851",
        HaiCategory::Clabsi => "T80.211A",
        HaiCategory::Cauti => "T83.511A",
        HaiCategory::Ssi => "T81.41XA",
        HaiCategory::Hap => "J18.9-HA",
        HaiCategory::Cdi => "A04.72",
    }
}

const CAP_CODE: &str = "J18.9";

fn uniform_minutes(rng: &mut Rng, lo: Minutes, hi: Minutes) -> Minutes {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

fn sample_los(rng: &mut Rng, p: LogNormalParams, min_hours: f64) -> Minutes {
    let dist = LogNormal::new(p.mu, p.sigma).expect("checked scenario");
    for _ in 0..10_000 {
        let h: f64 = dist.sample(rng);
        if h >= min_hours {
            return ((h * MINUTES_PER_HOUR as f64).round() as Minutes).max(1);
        }
    }
    (min_hours * MINUTES_PER_HOUR as f64).ceil() as Minutes
}

struct StayOutput {
    record: StayRecord,
    truth: StayTruth,
}

fn generate_stay(cfg: &ScenarioConfig, patient_id: &str, stay_id: &str, admit: Minutes, age: u32, rng: &mut Rng) -> StayOutput {
    let ventilated = rng.random_bool(cfg.fraction_ventilated);
    let adult = age >= 18;

    // Planted infection category.
    let mut category = None;
    let mut u: f64 = rng.random();
    for c in HaiCategory::ALL {
        if c == HaiCategory::Vap && !ventilated {
            continue;
        }
        let p = cfg.rate(c);
        if u < p {
            category = Some(c);
            break;
        }
        u -= p;
    }
    let infected = category.is_some();

    let intubation_offset = ventilated.then(|| uniform_minutes(rng, 0, hours(12)));
    let onset_floor = match (category, intubation_offset) {
        (Some(HaiCategory::Vap), Some(i)) => (i + hours(48)).max(hours(48)),
        _ => hours(48),
    };
    let los = if infected {
        sample_los(rng, cfg.los.infected, (onset_floor + hours(24)) as f64 / MINUTES_PER_HOUR as f64)
    } else {
        let min = intubation_offset.map_or(1.0, |i| i as f64 / MINUTES_PER_HOUR as f64 + 1.0);
        sample_los(rng, cfg.los.control, min)
    };
    let discharge = admit + los;
    let intubation = intubation_offset.map(|i| admit + i);
    let onset = category.map(|_| uniform_minutes(rng, admit + onset_floor, discharge - hours(24)));

    let early_rate = if ventilated { cfg.early_workup_rate.ventilated } else { cfg.early_workup_rate.non_ventilated };
    let early_workup = rng.random_bool(early_rate);
    let cap_code = category != Some(HaiCategory::Vap) && rng.random_bool(cfg.cap_rate);
    let false_alarm = !infected && los > hours(50) && rng.random_bool(cfg.false_alarm_rate);
    let prophylaxis = rng.random_bool(cfg.prophylaxis_rate);
    let signal = category.is_some_and(|c| cfg.signal_categories.contains(&c));

    let stay = PatientStay {
        stay_id: stay_id.into(),
        patient_id: patient_id.into(),
        age_years: age,
        icu_admit_time: admit,
        discharge_time: discharge,
        intubation_time: intubation,
        mechanically_ventilated: ventilated,
    };
    let mut record = StayRecord {
        stay,
        clinical: Vec::new(),
        medications: Vec::new(),
        cultures: Vec::new(),
        diagnoses: Vec::new(),
    };
    let med = |t: Minutes, drug: &str, abx: bool, proph: bool| MedicationEvent {
        stay_id: stay_id.into(),
        start_time: t,
        drug_name: drug.into(),
        is_antibiotic: abx,
        is_prophylactic: proph,
    };
    let culture = |t: Minutes, positive: bool| CultureEvent {
        stay_id: stay_id.into(),
        order_time: t,
        result_time: Some(t + hours(48)),
        positive: Some(positive),
    };

    // Routine non-antibiotic medication.
    let mut t = admit + uniform_minutes(rng, 0, hours(2));
    while t <= discharge {
        record.medications.push(med(t, "heparin", false, false));
        t += hours(24);
    }
    if prophylaxis {
        record.medications.push(med(admit + uniform_minutes(rng, 0, hours(6)).min(los), PROPHYLAXIS_DRUG, true, true));
    }
    if early_workup {
        let last = (admit + hours(24) - 1).min(discharge);
        let c = uniform_minutes(rng, admit, last);
        let a = uniform_minutes(rng, (c - hours(2)).max(admit), (c + hours(2)).min(last));
        record.cultures.push(culture(c, false));
        record.medications.push(med(a, EARLY_DRUGS[rng.random_range(0..EARLY_DRUGS.len())], true, false));
    }
    if let (Some(c), Some(onset)) = (category, onset) {
        let second = uniform_minutes(rng, onset, (onset + hours(6)).min(discharge));
        let (abx_t, cult_t) = if rng.random_bool(0.5) { (onset, second) } else { (second, onset) };
        let drug = TREATMENT_DRUGS[rng.random_range(0..TREATMENT_DRUGS.len())];
        record.cultures.push(culture(cult_t, true));
        for k in 0..3 {
            let t = abx_t + hours(24 * k);
            if t <= discharge {
                record.medications.push(med(t, drug, true, false));
            }
        }
        record.diagnoses.push(DiagnosisCode {
            stay_id: stay_id.into(),
            code: hai_code(c).into(),
            is_hai: true,
            is_cap: false,
            hai_category: Some(c),
        });
    }
    if false_alarm {
        let c = uniform_minutes(rng, admit + hours(48), discharge);
        record.cultures.push(culture(c, false));
        if rng.random_bool(0.5) {
            let a = uniform_minutes(rng, c, (c + hours(6)).min(discharge));
            record.medications.push(med(a, TREATMENT_DRUGS[rng.random_range(0..TREATMENT_DRUGS.len())], true, false));
        }
    }
    if cap_code {
        record.diagnoses.push(DiagnosisCode { stay_id: stay_id.into(), code: CAP_CODE.into(), is_hai: false, is_cap: true, hai_category: None });
    }

    // Charting: which features never appear in this stay.
    let common = ventilated && adult && !early_workup;
    let latent: f64 = rng.random();
    let mut uncharted = Vec::new();
    for f in &cfg.features {
        let shared = rng.random_bool(cfg.missingness_correlation);
        let fresh: f64 = rng.random();
        let Some(rates) = cfg.missingness.get(&f.name) else { continue };
        let rate = if cfg.unbiased_common_profile && common { rates.control } else { rates.rate(infected) };
        if (if shared { latent } else { fresh }) < rate {
            uncharted.push(f.name.clone());
        }
    }

    let shift_from = onset.map(|o| o - hours(cfg.signal_lead_hours));
    for f in &cfg.features {
        let baseline = f.mean + f.between_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
        if uncharted.contains(&f.name) {
            continue;
        }
        let start = if f.needs_ventilation() {
            match intubation {
                Some(i) => i,
                None => continue,
            }
        } else {
            admit
        };
        let shifted = category.is_some_and(|c| cfg.feature_signal_categories.get(&f.name).unwrap_or(&cfg.signal_categories).contains(&c));
        let shift = cfg.feature_effect_sizes.get(&f.name).copied().unwrap_or(0.0) * f.total_sd();
        let noise = Normal::new(0.0, f.within_sd.max(1e-12)).expect("finite sd");
        let mut t = start + uniform_minutes(rng, 0, hours(f.cadence_hours) - 1);
        while t <= discharge {
            let jitter = uniform_minutes(rng, -15, 15);
            let when = (t + jitter).clamp(start, discharge);
            let mut v = baseline + noise.sample(rng);
            if shifted && shift_from.is_some_and(|s| when >= s) {
                v += shift;
            }
            record.clinical.push(ClinicalEvent {
                stay_id: stay_id.into(),
                time: when,
                channel: f.channel,
                feature_name: f.name.clone(),
                value: v,
                unit: f.unit.clone(),
            });
            t += hours(f.cadence_hours);
        }
    }

    let truth = StayTruth {
        stay_id: stay_id.into(),
        patient_id: patient_id.into(),
        category,
        onset,
        ventilated,
        adult,
        early_workup,
        cap_code,
        false_alarm,
        signal,
        uncharted,
    };
    StayOutput { record, truth }
}

fn generate_patient(cfg: &ScenarioConfig, index: usize) -> Vec<StayOutput> {
    let patient_id = format!("P{:06}", index + 1);
    let mut rng = rng_from_seed(derive_seed(cfg.rng_seed, "patient", &patient_id));
    let age = if rng.random_bool(cfg.fraction_minor) { rng.random_range(1..18) } else { rng.random_range(18..=90) };
    let mut admit = uniform_minutes(&mut rng, 0, hours(24 * 365));
    let mut out = Vec::new();
    let n_stays = if rng.random_bool(cfg.readmission_rate) { 2 } else { 1 };
    for k in 1..=n_stays {
        let stay_id = format!("{patient_id}-{k}");
        let s = generate_stay(cfg, &patient_id, &stay_id, admit, age, &mut rng);
        admit = s.record.stay.discharge_time + uniform_minutes(&mut rng, hours(48), hours(24 * 60));
        out.push(s);
    }
    out
}

/// Generates a validated dataset and what was planted in it.
pub fn generate_population(cfg: &ScenarioConfig) -> Result<(ValidatedDataset, GroundTruth)> {
    cfg.check()?;
    let stays: Vec<StayOutput> = (0..cfg.n_patients).into_par_iter().flat_map_iter(|i| generate_patient(cfg, i)).collect();
    let mut truth = GroundTruth::default();
    let mut records = Vec::with_capacity(stays.len());
    for s in stays {
        truth.stays.insert(s.truth.stay_id.clone(), s.truth);
        records.push(s.record);
    }
    Ok((ValidatedDataset::from_records(records), truth))
}

/// Deletes each event of the named features independently, with the
/// probability for the stay's planted class.
pub fn plant_missingness_bias(
    dataset: &ValidatedDataset,
    truth: &GroundTruth,
    rates: &BTreeMap<String, ClassRates>,
    seed: u64,
) -> Result<ValidatedDataset> {
    let known = dataset.feature_names();
    for (name, r) in rates {
        if !known.contains(name) {
            return Err(Error::UnknownFeature(name.clone()));
        }
        if !(0.0..=1.0).contains(&r.infected) || !(0.0..=1.0).contains(&r.control) {
            return Err(Error::InvalidScenario(format!("deletion rate for `{name}` is not a probability")));
        }
    }
    let mut current: Option<(String, Rng)> = None;
    Ok(dataset.retain_clinical(|rec, e| {
        let Some(r) = rates.get(&e.feature_name) else { return true };
        let id = &rec.stay.stay_id;
        if current.as_ref().is_none_or(|(s, _)| s != id) {
            current = Some((id.clone(), rng_from_seed(derive_seed(seed, "missingness", id))));
        }
        let rng = &mut current.as_mut().expect("set above").1;
        let p = r.rate(truth.infected(id));
        !rng.random_bool(p)
    }))
}
