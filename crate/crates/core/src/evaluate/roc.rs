use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Predict positive iff `score >= threshold`. The starting point at the
    /// origin carries `+inf`, serialized as `null`.
    #[serde(with = "infinite_as_null")]
    pub threshold: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Points from (0,0) to (1,1) in order of decreasing threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass(format!("{n_pos} positives, {n_neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64, threshold: s });
    }
    Ok(RocCurve { points, n_pos, n_neg })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve.points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0).sum()
}

pub fn auc_score(scores: &[f64], labels: &[bool]) -> Result<f64> {
    roc_curve(scores, labels).map(|c| auc(&c))
}

/// Linear interpolation of the curve at `fpr`. On vertical runs the
/// highest point is used.
pub fn interpolate_tpr(curve: &RocCurve, fpr: f64) -> f64 {
    let pts = &curve.points;
    let i = pts.partition_point(|p| p.fpr <= fpr);
    if i == 0 {
        return pts[0].tpr;
    }
    let a = pts[i - 1];
    match pts.get(i) {
        Some(b) if b.fpr > a.fpr => a.tpr + (fpr - a.fpr) / (b.fpr - a.fpr) * (b.tpr - a.tpr),
        _ => a.tpr,
    }
}

pub fn default_fpr_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedRoc {
    pub fpr_grid: Vec<f64>,
    pub mean_tpr: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_curves: usize,
    /// Mean positive count across curves, used as the binomial n.
    pub effective_n: f64,
}

/// Vertical averaging: mean TPR at each grid FPR, with a normal-approximation
/// binomial interval `mean ± z·sqrt(mean(1 − mean)/n)` clamped to [0, 1].
pub fn vertical_average_roc(curves: &[RocCurve], grid: &[f64], z: f64) -> Result<AveragedRoc> {
    if curves.is_empty() {
        return Err(Error::EmptyInput("no ROC curves to average".into()));
    }
    if grid.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::InvalidConfig("FPR grid must lie in [0, 1]".into()));
    }
    let effective_n = curves.iter().map(|c| c.n_pos as f64).sum::<f64>() / curves.len() as f64;
    let mut out = AveragedRoc {
        fpr_grid: grid.to_vec(),
        mean_tpr: Vec::with_capacity(grid.len()),
        ci_low: Vec::with_capacity(grid.len()),
        ci_high: Vec::with_capacity(grid.len()),
        n_curves: curves.len(),
        effective_n,
    };
    for &x in grid {
        let m = curves.iter().map(|c| interpolate_tpr(c, x)).sum::<f64>() / curves.len() as f64;
        let half = z * (m * (1.0 - m) / effective_n).max(0.0).sqrt();
        out.mean_tpr.push(m);
        out.ci_low.push((m - half).clamp(0.0, 1.0));
        out.ci_high.push((m + half).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Threshold maximizing `tpr − fpr`; ties go to the larger threshold.
pub fn youden_threshold(curve: &RocCurve) -> f64 {
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for p in curve.points.iter().filter(|p| p.threshold.is_finite()) {
        let j = p.tpr - p.fpr;
        if j > best.0 {
            best = (j, p.threshold);
        }
    }
    best.1
}
