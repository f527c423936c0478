//! Independent oracles shared by the integration tests. Each one is a
//! deliberately naive re-derivation that does not call the code it checks.
#![allow(dead_code)]

use std::collections::BTreeMap;

use haicmp_core::ehr::{HaiCategory, RawDataset};
use haicmp_core::labeling::{Label, LabelParams};
use haicmp_core::learner::{GbdtModel, Hyperparameters, Node, Tree};

pub const MIN: i64 = 1;
pub const HOUR: i64 = 60 * MIN;

/// (iri label, iri onset, vap label, vap onset) per stay.
pub type Labels = BTreeMap<String, (Label, Option<i64>, Label, Option<i64>)>;

/// Brute-force labeler over the flat tables: every stay scans every event.
pub fn brute_force_labels(raw: &RawDataset, p: &LabelParams) -> Labels {
    let mut out = BTreeMap::new();
    for stay in &raw.stays {
        let id = &stay.stay_id;
        let meds: Vec<_> = raw.medications.iter().filter(|m| &m.stay_id == id).collect();
        let cultures: Vec<_> = raw.cultures.iter().filter(|c| &c.stay_id == id).collect();
        let codes: Vec<_> = raw.diagnoses.iter().filter(|d| &d.stay_id == id).collect();
        let treatment: Vec<_> = meds.iter().filter(|m| m.is_antibiotic && !m.is_prophylactic).collect();

        // IRI
        let clock = stay.icu_admit_time + p.hai_clock_hours * HOUR;
        let mut evidence: Vec<i64> = treatment.iter().map(|m| m.start_time).collect();
        evidence.extend(cultures.iter().map(|c| c.order_time));
        let (iri, iri_onset) = if stay.age_years < p.adult_age_years || evidence.iter().any(|&t| t < clock) {
            (Label::Excluded, None)
        } else if codes.iter().any(|d| d.is_hai) && !evidence.is_empty() {
            (Label::Positive, evidence.iter().min().copied())
        } else {
            (Label::Negative, None)
        };

        // VAP: new antibiotics = no dose of the same drug in the lookback before.
        let lookback = p.novelty_lookback_hours * HOUR;
        let window = p.contiguity_window_hours * HOUR;
        let new_times: Vec<i64> = treatment
            .iter()
            .filter(|m| {
                !treatment
                    .iter()
                    .any(|o| o.drug_name == m.drug_name && o.start_time < m.start_time && m.start_time - o.start_time <= lookback)
            })
            .map(|m| m.start_time)
            .collect();
        let mut pairs: Vec<(i64, bool)> = Vec::new();
        for &a in &new_times {
            for c in &cultures {
                if (a - c.order_time).abs() <= window {
                    pairs.push((a.min(c.order_time), c.positive == Some(true)));
                }
            }
        }
        pairs.sort();
        // Greedy clusters anchored at the earliest remaining onset.
        let mut events: Vec<(i64, bool)> = Vec::new();
        for (onset, pos) in pairs {
            let anchor = events.last().map(|e| e.0);
            if anchor.is_some_and(|a| onset - a <= window) {
                events.last_mut().unwrap().1 |= pos;
            } else {
                events.push((onset, pos));
            }
        }
        let (vap, vap_onset) = match stay.intubation_time {
            None => (Label::Excluded, None),
            Some(intub) => {
                let competing = codes.iter().any(|d| d.is_cap || (d.is_hai && d.hai_category != Some(HaiCategory::Vap)));
                let first = events.iter().filter(|(t, pos)| *pos && *t >= intub + p.vap_after_intubation_hours * HOUR).map(|e| e.0).min();
                match first {
                    Some(t) if !competing => (Label::Positive, Some(t)),
                    _ => (Label::Negative, None),
                }
            }
        };
        out.insert(id.clone(), (iri, iri_onset, vap, vap_onset));
    }
    out
}

/// AUC as the Mann-Whitney U statistic, ties counted half.
pub fn u_statistic_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi && !yj {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Threshold maximizing TPR − FPR over every observed score (predict
/// positive when score ≥ θ); ties go to the larger threshold.
pub fn youden_scan(scores: &[f64], labels: &[bool]) -> f64 {
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    let mut candidates = scores.to_vec();
    candidates.sort_by(|a, b| b.total_cmp(a));
    candidates.dedup();
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for &t in &candidates {
        let tp = scores.iter().zip(labels).filter(|(s, &y)| **s >= t && y).count() as f64;
        let fp = scores.iter().zip(labels).filter(|(s, &y)| **s >= t && !y).count() as f64;
        let j = tp / n_pos - fp / n_neg;
        if j > best.0 {
            best = (j, t);
        }
    }
    best.1
}

fn gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

/// Best split gain over every subset of rows that some (feature, threshold,
/// missing direction) can send left, found by enumerating all 2^n subsets.
pub fn exhaustive_best_gain(rows: &[Vec<Option<f64>>], grad: &[f64], hess: &[f64], hp: &Hyperparameters) -> Option<f64> {
    let n = rows.len();
    let n_features = rows[0].len();
    let mut best: Option<f64> = None;
    for mask in 1u32..(1 << n) - 1 {
        let left = |i: usize| mask >> i & 1 == 1;
        for f in 0..n_features {
            let present_left: Vec<f64> = (0..n).filter(|&i| left(i)).filter_map(|i| rows[i][f]).collect();
            let present_right: Vec<f64> = (0..n).filter(|&i| !left(i)).filter_map(|i| rows[i][f]).collect();
            let missing: Vec<usize> = (0..n).filter(|&i| rows[i][f].is_none()).collect();
            let miss_left = missing.iter().filter(|&&i| left(i)).count();
            if miss_left != 0 && miss_left != missing.len() {
                continue;
            }
            // Realizable by a threshold: every present left value below every present right value.
            let lmax = present_left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let rmin = present_right.iter().copied().fold(f64::INFINITY, f64::min);
            if !(lmax < rmin) {
                continue;
            }
            if present_right.is_empty() {
                continue; // x < t for all present: the same partition as some other split, or none
            }
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                if left(i) {
                    gl += grad[i];
                    hl += hess[i];
                } else {
                    gr += grad[i];
                    hr += hess[i];
                }
            }
            if hl < hp.min_child_weight || hr < hp.min_child_weight {
                continue;
            }
            let g = gain(gl, hl, gr, hr, hp.l2_reg, hp.min_split_gain);
            if best.is_none_or(|b| g > b) {
                best = Some(g);
            }
        }
    }
    best
}

/// E[tree | x_S]: features in S follow x, others average children by cover.
fn conditional_value(tree: &Tree, i: usize, x: &[Option<f64>], s: u32) -> f64 {
    match tree.nodes[i] {
        Node::Leaf { weight, .. } => weight,
        Node::Split { feature, threshold, default_left, left, right, .. } => {
            if s >> feature & 1 == 1 {
                let go_left = match x[feature] {
                    None => default_left,
                    Some(v) => v < threshold,
                };
                conditional_value(tree, if go_left { left } else { right }, x, s)
            } else {
                let (cl, cr) = (tree.nodes[left].cover(), tree.nodes[right].cover());
                (cl * conditional_value(tree, left, x, s) + cr * conditional_value(tree, right, x, s)) / (cl + cr)
            }
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Shapley values of v(S) = base_score + lr·Σ_t E[tree_t | x_S] by explicit
/// subset enumeration. Returns (v(∅), φ).
pub fn brute_force_shapley(model: &GbdtModel, x: &[Option<f64>]) -> (f64, Vec<f64>) {
    let m = x.len();
    let v = |s: u32| model.base_score + model.learning_rate * model.trees.iter().map(|t| conditional_value(t, 0, x, s)).sum::<f64>();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0u32..(1 << m) {
            if s >> i & 1 == 1 {
                continue;
            }
            let k = s.count_ones() as usize;
            let w = factorial(k) * factorial(m - k - 1) / factorial(m);
            *p += w * (v(s | 1 << i) - v(s));
        }
    }
    (v(0), phi)
}

/// Two-sample KS statistic by direct ECDF evaluation at every sample point.
pub fn ks_naive(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |xs: &[f64], t: f64| xs.iter().filter(|&&x| x <= t).count() as f64 / xs.len() as f64;
    a.iter().chain(b).map(|&t| (ecdf(a, t) - ecdf(b, t)).abs()).fold(0.0, f64::max)
}
