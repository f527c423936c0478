use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCell {
    pub predicted: bool,
    pub vap: bool,
    pub iri: bool,
    pub count: usize,
}

/// Predictions crossed with both label sources: 8 cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualLabelConfusion {
    pub threshold: f64,
    /// Ordered by (predicted, vap, iri), positives first.
    pub cells: Vec<ConfusionCell>,
    /// Fraction of VAP false positives that are IRI-positive, if any
    /// false positives exist.
    pub vap_false_positive_iri_share: Option<f64>,
}

impl DualLabelConfusion {
    pub fn count(&self, predicted: bool, vap: bool, iri: bool) -> usize {
        self.cells
            .iter()
            .find(|c| c.predicted == predicted && c.vap == vap && c.iri == iri)
            .map_or(0, |c| c.count)
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.count).sum()
    }

    pub fn vap_false_positives(&self) -> usize {
        self.count(true, false, true) + self.count(true, false, false)
    }
}

pub fn dual_label_confusion(scores: &[f64], threshold: f64, vap: &[bool], iri: &[bool]) -> Result<DualLabelConfusion> {
    if scores.len() != vap.len() || scores.len() != iri.len() {
        return Err(Error::LengthMismatch(format!("{} scores, {} VAP labels, {} IRI labels", scores.len(), vap.len(), iri.len())));
    }
    let mut counts = [[[0usize; 2]; 2]; 2];
    for i in 0..scores.len() {
        let p = scores[i] >= threshold;
        counts[p as usize][vap[i] as usize][iri[i] as usize] += 1;
    }
    let mut cells = Vec::with_capacity(8);
    for predicted in [true, false] {
        for v in [true, false] {
            for r in [true, false] {
                cells.push(ConfusionCell { predicted, vap: v, iri: r, count: counts[predicted as usize][v as usize][r as usize] });
            }
        }
    }
    let fp = counts[1][0][0] + counts[1][0][1];
    let share = (fp > 0).then(|| counts[1][0][1] as f64 / fp as f64);
    Ok(DualLabelConfusion { threshold, cells, vap_false_positive_iri_share: share })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_correct_leaves_off_cells_empty() {
        let c = dual_label_confusion(&[0.9, 0.1], 0.5, &[true, false], &[true, false]).unwrap();
        assert_eq!(c.count(true, true, true), 1);
        assert_eq!(c.count(false, false, false), 1);
        assert_eq!(c.total(), 2);
        assert_eq!(c.vap_false_positive_iri_share, None);
    }

    #[test]
    fn false_positive_share() {
        // 10 VAP false positives, 2 of them IRI-positive.
        let scores = vec![0.9; 10];
        let vap = vec![false; 10];
        let iri: Vec<bool> = (0..10).map(|i| i < 2).collect();
        let c = dual_label_confusion(&scores, 0.5, &vap, &iri).unwrap();
        assert_eq!(c.vap_false_positives(), 10);
        assert!((c.vap_false_positive_iri_share.unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn zero_threshold_predicts_everything_positive() {
        let c = dual_label_confusion(&[0.0, 0.3, 1.0], 0.0, &[true, false, false], &[false, false, true]).unwrap();
        assert_eq!(c.cells.iter().filter(|c| c.predicted).map(|c| c.count).sum::<usize>(), 3);
        assert!(dual_label_confusion(&[0.1], 0.5, &[], &[true]).is_err());
    }
}
