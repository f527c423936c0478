//! Regression trees fit to logistic-loss gradients with exact greedy split
//! enumeration and learned default directions for missing values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, Hyperparameters};
use crate::{Error, Result};

/// Splits must beat this gain to be kept.
const MIN_SPLIT_GAIN: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        /// `x < threshold` goes left.
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
        cover: f64,
    },
    Leaf {
        weight: f64,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }
}

/// Nodes in preorder; the root is `nodes[0]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Child taken by a value (`None` = missing).
    pub fn next(node: &Node, value: Option<f64>) -> Option<usize> {
        match *node {
            Node::Split { threshold, default_left, left, right, .. } => Some(match value {
                None => {
                    if default_left {
                        left
                    } else {
                        right
                    }
                }
                Some(v) if v < threshold => left,
                Some(_) => right,
            }),
            Node::Leaf { .. } => None,
        }
    }

    pub fn leaf_index(&self, row: &[Option<f64>]) -> Result<usize> {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            let value = match node {
                Node::Leaf { .. } => return Ok(i),
                Node::Split { feature, .. } => *row
                    .get(*feature)
                    .ok_or(Error::FeatureIndex { index: *feature, n_features: row.len() })?,
            };
            i = Tree::next(node, value).expect("split node");
        }
    }

    pub fn predict(&self, row: &[Option<f64>]) -> Result<f64> {
        match self.nodes[self.leaf_index(row)?] {
            Node::Leaf { weight, .. } => Ok(weight),
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub(crate) fn predict_dense(&self, matrix: &FeatureMatrix, row: usize) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { weight, .. } => return weight,
                Node::Split { feature, threshold, default_left, left, right, .. } => {
                    let v = matrix.columns[feature][row];
                    i = if v.is_nan() {
                        if default_left {
                            left
                        } else {
                            right
                        }
                    } else if v < threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Checks child links and feature indices.
    pub fn check(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidConfig("tree without nodes".into()));
        }
        for n in &self.nodes {
            match *n {
                Node::Split { feature, left, right, threshold, .. } => {
                    if feature >= n_features {
                        return Err(Error::FeatureIndex { index: feature, n_features });
                    }
                    if left >= self.nodes.len() || right >= self.nodes.len() || !threshold.is_finite() {
                        return Err(Error::InvalidConfig("malformed split node".into()));
                    }
                }
                Node::Leaf { weight, .. } => {
                    if !weight.is_finite() {
                        return Err(Error::InvalidConfig("non-finite leaf weight".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `½[G_L²/(H_L+λ) + G_R²/(H_R+λ) − G²/(H+λ)] − γ`
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

/// `−G/(H+λ)`
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
    pub gain: f64,
    pub left_grad: f64,
    pub left_hess: f64,
    pub right_grad: f64,
    pub right_hess: f64,
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

/// Scans one feature's present rows (sorted by value) for the best split.
/// `node_rows` is the node size; rows not in `sorted` are missing.
#[allow(clippy::too_many_arguments)]
fn scan_feature(
    feature: usize,
    sorted: &[u32],
    column: &[f64],
    grad: &[f64],
    hess: &[f64],
    node_rows: usize,
    g_total: f64,
    h_total: f64,
    hp: &Hyperparameters,
) -> Option<SplitCandidate> {
    if sorted.is_empty() {
        return None;
    }
    let (mut g_present, mut h_present) = (0.0, 0.0);
    for &r in sorted {
        g_present += grad[r as usize];
        h_present += hess[r as usize];
    }
    let has_missing = sorted.len() < node_rows;
    let (g_miss, h_miss) = if has_missing { (g_total - g_present, h_total - h_present) } else { (0.0, 0.0) };

    let mut best: Option<SplitCandidate> = None;
    let mut consider = |threshold: f64, default_left: bool, gl: f64, hl: f64, gr: f64, hr: f64| {
        if hl < hp.min_child_weight || hr < hp.min_child_weight {
            return;
        }
        let gain = split_gain(gl, hl, gr, hr, hp.l2_reg, hp.min_split_gain);
        if best.is_none_or(|b| gain > b.gain) {
            best = Some(SplitCandidate {
                feature,
                threshold,
                default_left,
                gain,
                left_grad: gl,
                left_hess: hl,
                right_grad: gr,
                right_hess: hr,
            });
        }
    };

    if has_missing {
        // Present rows right, missing rows left.
        consider(column[sorted[0] as usize], true, g_miss, h_miss, g_present, h_present);
    }
    let (mut gl, mut hl) = (0.0, 0.0);
    for i in 0..sorted.len() - 1 {
        let r = sorted[i] as usize;
        gl += grad[r];
        hl += hess[r];
        let (a, b) = (column[r], column[sorted[i + 1] as usize]);
        if a == b {
            continue;
        }
        let t = midpoint(a, b);
        let (gr, hr) = (g_present - gl, h_present - hl);
        consider(t, false, gl, hl, gr + g_miss, hr + h_miss);
        if has_missing {
            consider(t, true, gl + g_miss, hl + h_miss, gr, hr);
        }
    }
    best
}

fn better(a: Option<SplitCandidate>, b: Option<SplitCandidate>) -> Option<SplitCandidate> {
    match (a, b) {
        (Some(x), Some(y)) => Some(if y.gain > x.gain { y } else { x }),
        (x, y) => x.or(y),
    }
}

fn sort_rows_by(column: &[f64], rows: &mut [u32]) {
    rows.sort_by(|&a, &b| column[a as usize].total_cmp(&column[b as usize]).then(a.cmp(&b)));
}

/// Best split over all features for the given rows. Ties keep the earliest
/// feature, then the smallest threshold, then missing-right.
pub fn best_split(matrix: &FeatureMatrix, rows: &[usize], grad: &[f64], hess: &[f64], hp: &Hyperparameters) -> Option<SplitCandidate> {
    let g_total: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h_total: f64 = rows.iter().map(|&r| hess[r]).sum();
    (0..matrix.n_features())
        .map(|f| {
            let col = &matrix.columns[f];
            let mut present: Vec<u32> = rows.iter().filter(|&&r| !col[r].is_nan()).map(|&r| r as u32).collect();
            sort_rows_by(col, &mut present);
            scan_feature(f, &present, col, grad, hess, rows.len(), g_total, h_total, hp)
        })
        .fold(None, better)
}

struct Grower<'a> {
    matrix: &'a FeatureMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    hp: &'a Hyperparameters,
    /// Per feature: present rows, arranged so each node owns a contiguous,
    /// value-sorted segment.
    orders: Vec<Vec<u32>>,
    go_left: Vec<bool>,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn grow(&mut self, rows: Vec<u32>, segments: Vec<(usize, usize)>, depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&r| self.grad[r as usize]).sum();
        let h: f64 = rows.iter().map(|&r| self.hess[r as usize]).sum();
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { weight: leaf_weight(g, h, self.hp.l2_reg), cover: h });

        if depth >= self.hp.max_depth || rows.len() < 2 {
            return idx;
        }
        let (matrix, grad, hess, hp) = (self.matrix, self.grad, self.hess, self.hp);
        let n_rows = rows.len();
        let best = self
            .orders
            .par_iter()
            .zip(segments.par_iter())
            .enumerate()
            .map(|(f, (order, &(s, e)))| scan_feature(f, &order[s..e], &matrix.columns[f], grad, hess, n_rows, g, h, hp))
            .collect::<Vec<_>>()
            .into_iter()
            .fold(None, better);
        let Some(split) = best.filter(|b| b.gain > MIN_SPLIT_GAIN) else {
            return idx;
        };

        let col = &matrix.columns[split.feature];
        for &r in &rows {
            let v = col[r as usize];
            self.go_left[r as usize] = if v.is_nan() { split.default_left } else { v < split.threshold };
        }
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| self.go_left[r as usize]);

        let go_left = &self.go_left;
        let (left_segs, right_segs): (Vec<(usize, usize)>, Vec<(usize, usize)>) = self
            .orders
            .par_iter_mut()
            .zip(segments.par_iter())
            .map(|(order, &(s, e))| {
                let (l, r): (Vec<u32>, Vec<u32>) = order[s..e].iter().partition(|&&row| go_left[row as usize]);
                let mid = s + l.len();
                order[s..mid].copy_from_slice(&l);
                order[mid..e].copy_from_slice(&r);
                ((s, mid), (mid, e))
            })
            .unzip();

        let left = self.grow(left_rows, left_segs, depth + 1);
        let right = self.grow(right_rows, right_segs, depth + 1);
        let cover = self.nodes[left].cover() + self.nodes[right].cover();
        self.nodes[idx] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            default_left: split.default_left,
            left,
            right,
            gain: split.gain,
            cover,
        };
        idx
    }
}

/// Presorted present rows per feature for the full matrix.
pub(crate) fn presort(matrix: &FeatureMatrix) -> Vec<Vec<u32>> {
    matrix
        .columns
        .par_iter()
        .map(|col| {
            let mut rows: Vec<u32> = (0..col.len() as u32).filter(|&r| !col[r as usize].is_nan()).collect();
            sort_rows_by(col, &mut rows);
            rows
        })
        .collect()
}

pub(crate) fn fit_tree(matrix: &FeatureMatrix, presorted: &[Vec<u32>], grad: &[f64], hess: &[f64], hp: &Hyperparameters) -> Tree {
    let segments = presorted.iter().map(|o| (0, o.len())).collect();
    let mut grower = Grower {
        matrix,
        grad,
        hess,
        hp,
        orders: presorted.to_vec(),
        go_left: vec![false; matrix.n_rows()],
        nodes: Vec::new(),
    };
    grower.grow((0..matrix.n_rows() as u32).collect(), segments, 0);
    Tree { nodes: grower.nodes }
}
