//! Path-dependent TreeSHAP over the boosted ensemble, in margin space.

use serde::{Deserialize, Serialize};

use crate::learner::{GbdtModel, Node, Tree};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Cover-weighted expected margin.
    pub base_value: f64,
    pub contributions: Vec<f64>,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.base_value + self.contributions.iter().sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy)]
struct PathElement {
    feature: Option<usize>,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut [PathElement], depth: usize, zero_fraction: f64, one_fraction: f64, feature: Option<usize>) {
    path[depth] = PathElement { feature, zero_fraction, one_fraction, pweight: if depth == 0 { 1.0 } else { 0.0 } };
    let d = depth as f64;
    for i in (0..depth).rev() {
        let fi = i as f64;
        path[i + 1].pweight += one_fraction * path[i].pweight * (fi + 1.0) / (d + 1.0);
        path[i].pweight = zero_fraction * path[i].pweight * (d - fi) / (d + 1.0);
    }
}

fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = depth as f64;
    let mut next_one = path[depth].pweight;
    for i in (0..depth).rev() {
        let fi = i as f64;
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one * (d + 1.0) / ((fi + 1.0) * one);
            next_one = tmp - path[i].pweight * zero * (d - fi) / (d + 1.0);
        } else {
            path[i].pweight = path[i].pweight * (d + 1.0) / (zero * (d - fi));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = depth as f64;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        let fi = i as f64;
        if one != 0.0 {
            let tmp = next_one * (d + 1.0) / ((fi + 1.0) * one);
            total += tmp;
            next_one = path[i].pweight - tmp * zero * (d - fi) / (d + 1.0);
        } else {
            total += path[i].pweight / zero / ((d - fi) / (d + 1.0));
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    node: usize,
    row: &[Option<f64>],
    phi: &mut [f64],
    parent: &[PathElement],
    mut depth: usize,
    zero_fraction: f64,
    one_fraction: f64,
    feature: Option<usize>,
) {
    let mut path = parent[..depth].to_vec();
    path.push(PathElement { feature: None, zero_fraction: 0.0, one_fraction: 0.0, pweight: 0.0 });
    extend_path(&mut path, depth, zero_fraction, one_fraction, feature);

    let n = &tree.nodes[node];
    match *n {
        Node::Leaf { weight, .. } => {
            for i in 1..=depth {
                let w = unwound_path_sum(&path, depth, i);
                let el = path[i];
                if let Some(f) = el.feature {
                    phi[f] += w * (el.one_fraction - el.zero_fraction) * weight;
                }
            }
        }
        Node::Split { feature: split_feature, left, right, cover, .. } => {
            let hot = Tree::next(n, row[split_feature]).expect("split node");
            let cold = if hot == left { right } else { left };
            let hot_zero = tree.nodes[hot].cover() / cover;
            let cold_zero = tree.nodes[cold].cover() / cover;
            let (mut incoming_zero, mut incoming_one) = (1.0, 1.0);
            if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(split_feature)) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(&mut path, depth, k);
                depth -= 1;
            }
            recurse(tree, hot, row, phi, &path, depth + 1, hot_zero * incoming_zero, incoming_one, Some(split_feature));
            recurse(tree, cold, row, phi, &path, depth + 1, cold_zero * incoming_zero, 0.0, Some(split_feature));
        }
    }
}

/// Cover-weighted mean leaf value of a tree.
pub fn tree_expectation(tree: &Tree) -> f64 {
    fn walk(nodes: &[Node], i: usize) -> f64 {
        match nodes[i] {
            Node::Leaf { weight, .. } => weight,
            Node::Split { left, right, cover, .. } => {
                (nodes[left].cover() * walk(nodes, left) + nodes[right].cover() * walk(nodes, right)) / cover
            }
        }
    }
    walk(&tree.nodes, 0)
}

/// Attributions of a single tree's output (unscaled).
pub fn tree_shap(tree: &Tree, row: &[Option<f64>], n_features: usize) -> Vec<f64> {
    let mut phi = vec![0.0; n_features];
    recurse(tree, 0, row, &mut phi, &[], 0, 1.0, 1.0, None);
    phi
}

/// Per-feature contributions such that `base_value + Σ contributions`
/// equals the model margin for `row`.
pub fn tree_attribution(model: &GbdtModel, row: &[Option<f64>]) -> Result<Attribution> {
    // Validates the row against the model.
    model.predict_margin(row)?;
    let n = model.n_features();
    let mut contributions = vec![0.0; n];
    let mut expected = 0.0;
    for t in &model.trees {
        expected += tree_expectation(t);
        for (c, p) in contributions.iter_mut().zip(tree_shap(t, row, n)) {
            *c += model.learning_rate * p;
        }
    }
    Ok(Attribution { base_value: model.base_score + model.learning_rate * expected, contributions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_contribution: f64,
}

/// Mean |contribution| per feature over a batch, largest first.
pub fn attribution_summary(model: &GbdtModel, rows: &[Vec<Option<f64>>]) -> Result<Vec<FeatureImportance>> {
    let mut sums = vec![0.0; model.n_features()];
    for r in rows {
        for (s, c) in sums.iter_mut().zip(tree_attribution(model, r)?.contributions) {
            *s += c.abs();
        }
    }
    let denom = rows.len().max(1) as f64;
    let mut out: Vec<FeatureImportance> = model
        .feature_names
        .iter()
        .zip(sums)
        .map(|(f, s)| FeatureImportance { feature: f.clone(), mean_abs_contribution: s / denom })
        .collect();
    out.sort_by(|a, b| b.mean_abs_contribution.total_cmp(&a.mean_abs_contribution).then_with(|| a.feature.cmp(&b.feature)));
    Ok(out)
}
