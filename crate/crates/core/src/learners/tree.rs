//! CART trees grown by exact greedy split search.
//!
//! Split candidates are the midpoints between consecutive distinct sorted
//! feature values; split quality is variance reduction for regression and
//! Gini decrease for classification. Rows are carried with integer weights,
//! so bootstrap resampling costs a weight vector instead of duplicated rows;
//! the dataset is sorted once per fit and each tree derives its per-feature
//! arrays with a linear pass.
//!
//! Determinism contract: with the same data, parameters and RNG state the
//! grown tree is identical. Gain ties resolve to the lower feature index,
//! then the lower threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::MatrixView;

/// A fitted tree node. Split rows go left when `value <= threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    RegressionLeaf {
        value: f64,
    },
    ClassificationLeaf {
        class_counts: Vec<u64>,
    },
}

impl TreeNode {
    pub fn leaf_for(&self, row: &[f64]) -> &TreeNode {
        let mut node = self;
        loop {
            match node {
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature_index] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
                leaf => return leaf,
            }
        }
    }

    /// Regression prediction for one row. Panics on classification leaves.
    pub fn predict_value(&self, row: &[f64]) -> f64 {
        match self.leaf_for(row) {
            TreeNode::RegressionLeaf { value } => *value,
            _ => panic!("predict_value called on a classification tree"),
        }
    }

    pub fn is_leaf(&self) -> bool {
        !matches!(self, TreeNode::Split { .. })
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
            _ => 1,
        }
    }
}

/// Target values for tree growing.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Regression(&'a [f64]),
    Classification {
        labels: &'a [usize],
        n_classes: usize,
    },
}

impl Target<'_> {
    pub fn len(&self) -> usize {
        match self {
            Target::Regression(y) => y.len(),
            Target::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn value_of(&self, row: usize) -> f64 {
        match self {
            Target::Regression(y) => y[row],
            Target::Classification { labels, .. } => labels[row] as f64,
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            Target::Regression(_) => 0,
            Target::Classification { n_classes, .. } => *n_classes,
        }
    }
}

/// Winning split: feature, midpoint threshold and impurity gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Weighted impurity statistics for a set of rows.
#[derive(Clone, Debug)]
enum Agg {
    Reg { sum: f64, sumsq: f64, n: u64 },
    Cls { counts: Vec<u64>, n: u64 },
}

impl Agg {
    fn empty(target: &Target<'_>) -> Agg {
        match target {
            Target::Regression(_) => Agg::Reg {
                sum: 0.0,
                sumsq: 0.0,
                n: 0,
            },
            Target::Classification { n_classes, .. } => Agg::Cls {
                counts: vec![0; *n_classes],
                n: 0,
            },
        }
    }

    /// Add one target value with multiplicity `w`; classification targets
    /// are class indices carried as f64 (exact for any realistic count).
    #[inline]
    fn add_weighted(&mut self, v: f64, w: u64) {
        match self {
            Agg::Reg { sum, sumsq, n } => {
                let wf = w as f64;
                *sum += wf * v;
                *sumsq += wf * (v * v);
                *n += w;
            }
            Agg::Cls { counts, n } => {
                counts[v as usize] += w;
                *n += w;
            }
        }
    }

    fn n(&self) -> u64 {
        match self {
            Agg::Reg { n, .. } => *n,
            Agg::Cls { n, .. } => *n,
        }
    }

    /// Population variance (regression) or Gini impurity (classification).
    fn impurity(&self) -> f64 {
        match self {
            Agg::Reg { sum, sumsq, n } => {
                if *n == 0 {
                    0.0
                } else {
                    let nf = *n as f64;
                    ((sumsq - sum * sum / nf) / nf).max(0.0)
                }
            }
            Agg::Cls { counts, n } => {
                if *n == 0 {
                    0.0
                } else {
                    let nf = *n as f64;
                    1.0 - counts
                        .iter()
                        .map(|&c| {
                            let p = c as f64 / nf;
                            p * p
                        })
                        .sum::<f64>()
                }
            }
        }
    }

    fn leaf(&self) -> TreeNode {
        match self {
            Agg::Reg { sum, n, .. } => TreeNode::RegressionLeaf {
                value: sum / (*n).max(1) as f64,
            },
            Agg::Cls { counts, .. } => TreeNode::ClassificationLeaf {
                class_counts: counts.clone(),
            },
        }
    }
}

/// Stopping and sampling knobs, resolved from [`super::HyperParams`].
#[derive(Clone, Copy, Debug)]
pub(super) struct GrowSettings {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub m_features: usize,
}

/// The dataset rearranged for tree growing: per feature, row ids plus their
/// feature values and target values in (value, row) order. Computed once per
/// fit and shared read-only by every tree.
pub(super) struct SortedDataset {
    n_rows: usize,
    n_features: usize,
    order: Vec<Vec<u32>>,
    val: Vec<Vec<f64>>,
    tgt: Vec<Vec<f64>>,
    n_classes: usize,
}

pub(super) fn presort(x: MatrixView<'_>, target: &Target<'_>) -> SortedDataset {
    let n = x.rows();
    let mut order = Vec::with_capacity(x.cols());
    let mut val = Vec::with_capacity(x.cols());
    let mut tgt = Vec::with_capacity(x.cols());
    for f in 0..x.cols() {
        let mut rows: Vec<u32> = (0..n as u32).collect();
        rows.sort_unstable_by(|&a, &b| {
            x.get(a as usize, f)
                .total_cmp(&x.get(b as usize, f))
                .then(a.cmp(&b))
        });
        let vals: Vec<f64> = rows.iter().map(|&r| x.get(r as usize, f)).collect();
        let tgts: Vec<f64> = rows.iter().map(|&r| target.value_of(r as usize)).collect();
        order.push(rows);
        val.push(vals);
        tgt.push(tgts);
    }
    SortedDataset {
        n_rows: n,
        n_features: x.cols(),
        order,
        val,
        tgt,
        n_classes: target.n_classes(),
    }
}

/// One feature's working arrays: rows present in this tree's sample with
/// their weights, values and targets, kept in sorted value order and
/// partitioned in place as the tree splits.
#[derive(Default)]
struct FeatureColumn {
    row: Vec<u32>,
    weight: Vec<u32>,
    val: Vec<f64>,
    tgt: Vec<f64>,
}

/// Reusable per-tree buffers. A forest fit hands one workspace to each
/// worker so tree after tree reuses the same allocations.
#[derive(Default)]
pub(super) struct TreeWorkspace {
    columns: Vec<FeatureColumn>,
    go_left: Vec<bool>,
    scratch_row: Vec<u32>,
    scratch_weight: Vec<u32>,
    scratch_val: Vec<f64>,
    scratch_tgt: Vec<f64>,
}

impl TreeWorkspace {
    pub(super) fn new() -> TreeWorkspace {
        TreeWorkspace::default()
    }

    /// Load the sample described by `weights` (multiplicity per row, zeros
    /// for absent rows). Returns the number of present entries.
    fn fill(&mut self, sorted: &SortedDataset, weights: &[u32]) -> usize {
        let present = weights.iter().filter(|&&w| w > 0).count();
        self.columns
            .resize_with(sorted.n_features, FeatureColumn::default);
        for f in 0..sorted.n_features {
            let col = &mut self.columns[f];
            col.row.clear();
            col.weight.clear();
            col.val.clear();
            col.tgt.clear();
            col.row.reserve(present);
            col.weight.reserve(present);
            col.val.reserve(present);
            col.tgt.reserve(present);
            let order = &sorted.order[f];
            let vals = &sorted.val[f];
            let tgts = &sorted.tgt[f];
            for j in 0..sorted.n_rows {
                let row = order[j];
                let w = weights[row as usize];
                if w > 0 {
                    col.row.push(row);
                    col.weight.push(w);
                    col.val.push(vals[j]);
                    col.tgt.push(tgts[j]);
                }
            }
        }
        self.go_left.clear();
        self.go_left.resize(sorted.n_rows, false);
        self.scratch_row.clear();
        self.scratch_row.resize(present, 0);
        self.scratch_weight.clear();
        self.scratch_weight.resize(present, 0);
        self.scratch_val.clear();
        self.scratch_val.resize(present, 0.0);
        self.scratch_tgt.clear();
        self.scratch_tgt.resize(present, 0.0);
        present
    }
}

/// Regression split sweep: weighted prefix sums with right stats by
/// subtraction. Returns (threshold, gain) of the best positive-gain
/// candidate. With unit weights this reproduces the unweighted arithmetic
/// exactly (1.0 · y == y).
#[inline]
fn sweep_regression(
    vals: &[f64],
    tgts: &[f64],
    weights: &[u32],
    parent_sum: f64,
    parent_sumsq: f64,
    parent_n: u64,
    parent_imp: f64,
    min_leaf: u64,
) -> Option<(f64, f64)> {
    let entries = vals.len();
    let nf = parent_n as f64;
    let mut best: Option<(f64, f64)> = None;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let mut n_left: u64 = 0;
    for i in 0..entries - 1 {
        let w = weights[i];
        let wf = w as f64;
        let y = tgts[i];
        sum += wf * y;
        sumsq += wf * (y * y);
        n_left += w as u64;
        let v = vals[i];
        let v_next = vals[i + 1];
        if v_next <= v {
            continue;
        }
        let n_right = parent_n - n_left;
        if n_left < min_leaf || n_right < min_leaf {
            continue;
        }
        let ln = n_left as f64;
        let rn = n_right as f64;
        let r_sum = parent_sum - sum;
        let r_sumsq = parent_sumsq - sumsq;
        let imp_l = ((sumsq - sum * sum / ln) / ln).max(0.0);
        let imp_r = ((r_sumsq - r_sum * r_sum / rn) / rn).max(0.0);
        let gain = parent_imp - (ln / nf) * imp_l - (rn / nf) * imp_r;
        if gain > 0.0 && best.map_or(true, |b| gain > b.1) {
            best = Some(((v + v_next) / 2.0, gain));
        }
    }
    best
}

/// Gini split sweep; class indices travel as f64 in `tgts`.
#[inline]
fn sweep_classification(
    vals: &[f64],
    tgts: &[f64],
    weights: &[u32],
    parent_counts: &[u64],
    parent_n: u64,
    parent_imp: f64,
    min_leaf: u64,
    counts: &mut [u64],
) -> Option<(f64, f64)> {
    let entries = vals.len();
    let nf = parent_n as f64;
    counts.fill(0);
    let mut best: Option<(f64, f64)> = None;
    let mut n_left: u64 = 0;
    for i in 0..entries - 1 {
        let w = weights[i] as u64;
        counts[tgts[i] as usize] += w;
        n_left += w;
        let v = vals[i];
        let v_next = vals[i + 1];
        if v_next <= v {
            continue;
        }
        let n_right = parent_n - n_left;
        if n_left < min_leaf || n_right < min_leaf {
            continue;
        }
        let ln = n_left as f64;
        let rn = n_right as f64;
        let mut left_sq = 0.0;
        let mut right_sq = 0.0;
        for (c, &parent_c) in parent_counts.iter().enumerate() {
            let lp = counts[c] as f64 / ln;
            left_sq += lp * lp;
            let rp = (parent_c - counts[c]) as f64 / rn;
            right_sq += rp * rp;
        }
        let imp_l = 1.0 - left_sq;
        let imp_r = 1.0 - right_sq;
        let gain = parent_imp - (ln / nf) * imp_l - (rn / nf) * imp_r;
        if gain > 0.0 && best.map_or(true, |b| gain > b.1) {
            best = Some(((v + v_next) / 2.0, gain));
        }
    }
    best
}

struct Grower<'a, 'w> {
    target: Target<'a>,
    /// Total sample weight (the bagged sample size).
    n_total: u64,
    n_features: usize,
    settings: GrowSettings,
    ws: &'w mut TreeWorkspace,
    cls_scratch: Vec<u64>,
    rng: ChaCha8Rng,
    importance: Vec<f64>,
}

impl<'a, 'w> Grower<'a, 'w> {
    /// Aggregate the segment once; also report whether the node is pure.
    fn node_stats(&self, start: usize, end: usize) -> (Agg, bool) {
        let mut agg = Agg::empty(&self.target);
        let col = &self.ws.columns[0];
        for i in start..end {
            agg.add_weighted(col.tgt[i], col.weight[i] as u64);
        }
        let seg = &col.tgt[start..end];
        let pure = match &agg {
            Agg::Reg { .. } => seg.windows(2).all(|w| w[0] == w[1]),
            Agg::Cls { counts, .. } => counts.iter().filter(|&&c| c > 0).count() <= 1,
        };
        (agg, pure)
    }

    fn sample_features(&mut self) -> Vec<usize> {
        let p = self.n_features;
        let m = self.settings.m_features.min(p);
        if m >= p {
            (0..p).collect()
        } else {
            let mut subset = rand::seq::index::sample(&mut self.rng, p, m).into_vec();
            subset.sort_unstable();
            subset
        }
    }

    /// Best positive-gain split over `features` for the segment. Ties go to
    /// the lower feature index then lower threshold because candidates are
    /// visited in that order and only strict improvements are accepted.
    fn best_in_segment(
        &mut self,
        start: usize,
        end: usize,
        parent: &Agg,
        features: &[usize],
        min_leaf: u64,
    ) -> Option<SplitCandidate> {
        let parent_imp = parent.impurity();
        let mut best: Option<SplitCandidate> = None;

        for &f in features {
            let col = &self.ws.columns[f];
            let vals = &col.val[start..end];
            // constant within this node: no candidate thresholds
            if vals[0] == vals[vals.len() - 1] {
                continue;
            }
            let tgts = &col.tgt[start..end];
            let weights = &col.weight[start..end];
            let candidate = match parent {
                Agg::Reg { sum, sumsq, n } => sweep_regression(
                    vals, tgts, weights, *sum, *sumsq, *n, parent_imp, min_leaf,
                ),
                Agg::Cls { counts, n } => sweep_classification(
                    vals,
                    tgts,
                    weights,
                    counts,
                    *n,
                    parent_imp,
                    min_leaf,
                    &mut self.cls_scratch,
                ),
            };
            if let Some((threshold, gain)) = candidate {
                if gain > 0.0 && best.map_or(true, |b| gain > b.gain) {
                    best = Some(SplitCandidate {
                        feature: f,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }

    /// Stable-partition every feature's segment by the chosen split.
    /// Returns the left-child size in entries.
    fn partition(&mut self, start: usize, end: usize, feature: usize, threshold: f64) -> usize {
        let ws = &mut *self.ws;
        let mut entries_left = 0;
        {
            let col = &ws.columns[feature];
            for i in start..end {
                let left = col.val[i] <= threshold;
                ws.go_left[col.row[i] as usize] = left;
                entries_left += usize::from(left);
            }
        }
        let seg_len = end - start;
        for col in ws.columns.iter_mut() {
            let mut li = 0;
            let mut ri = entries_left;
            for i in start..end {
                let row = col.row[i];
                let at = if ws.go_left[row as usize] { li } else { ri };
                ws.scratch_row[at] = row;
                ws.scratch_weight[at] = col.weight[i];
                ws.scratch_val[at] = col.val[i];
                ws.scratch_tgt[at] = col.tgt[i];
                if ws.go_left[row as usize] {
                    li += 1;
                } else {
                    ri += 1;
                }
            }
            col.row[start..end].copy_from_slice(&ws.scratch_row[..seg_len]);
            col.weight[start..end].copy_from_slice(&ws.scratch_weight[..seg_len]);
            col.val[start..end].copy_from_slice(&ws.scratch_val[..seg_len]);
            col.tgt[start..end].copy_from_slice(&ws.scratch_tgt[..seg_len]);
        }
        entries_left
    }

    fn grow(&mut self, start: usize, end: usize, depth: usize) -> TreeNode {
        let (agg, pure) = self.node_stats(start, end);
        let n_node = agg.n();

        let depth_stop = self.settings.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_stop || n_node < self.settings.min_samples_split.max(2) as u64 {
            return agg.leaf();
        }

        let features = self.sample_features();
        let Some(split) = self.best_in_segment(
            start,
            end,
            &agg,
            &features,
            self.settings.min_samples_leaf as u64,
        ) else {
            return agg.leaf();
        };

        self.importance[split.feature] += (n_node as f64 / self.n_total as f64) * split.gain;
        let entries_left = self.partition(start, end, split.feature, split.threshold);
        let left = self.grow(start, start + entries_left, depth + 1);
        let right = self.grow(start + entries_left, end, depth + 1);
        TreeNode::Split {
            feature_index: split.feature,
            threshold: split.threshold,
            left: Box::new(left),
            right: Box::new(right),
        }
    }
}

/// Grow one tree on the sample described by `weights` (bootstrap
/// multiplicity per row; zero = absent). Returns the tree and its raw
/// per-feature impurity decrease.
pub(super) fn grow_tree(
    target: Target<'_>,
    weights: &[u32],
    sorted: &SortedDataset,
    settings: GrowSettings,
    rng: ChaCha8Rng,
    ws: &mut TreeWorkspace,
) -> (TreeNode, Vec<f64>) {
    let entries = ws.fill(sorted, weights);
    debug_assert!(entries > 0, "empty sample");
    let n_total: u64 = weights.iter().map(|&w| w as u64).sum();
    let mut grower = Grower {
        target,
        n_total,
        n_features: sorted.n_features,
        settings,
        ws,
        cls_scratch: vec![0; sorted.n_classes],
        rng,
        importance: vec![0.0; sorted.n_features],
    };
    let tree = grower.grow(0, entries, 0);
    (tree, grower.importance)
}

/// Best split over the whole dataset restricted to `feature_subset`.
///
/// Returns `None` when no candidate has positive gain (constant target, or no
/// distinct feature values). Ties break to the lower feature index, then the
/// lower threshold.
pub fn best_split(
    x: MatrixView<'_>,
    target: &Target<'_>,
    feature_subset: &[usize],
) -> Option<SplitCandidate> {
    if x.rows() < 2 {
        return None;
    }
    let mut subset = feature_subset.to_vec();
    subset.sort_unstable();
    subset.dedup();

    let settings = GrowSettings {
        max_depth: None,
        min_samples_split: 2,
        min_samples_leaf: 1,
        m_features: x.cols(),
    };
    let sorted = presort(x, target);
    let weights = vec![1u32; x.rows()];
    let mut ws = TreeWorkspace::new();
    let entries = ws.fill(&sorted, &weights);
    let mut grower = Grower {
        target: *target,
        n_total: x.rows() as u64,
        n_features: x.cols(),
        settings,
        ws: &mut ws,
        cls_scratch: vec![0; target.n_classes()],
        rng: ChaCha8Rng::seed_from_u64(0),
        importance: vec![0.0; x.cols()],
    };
    let (agg, pure) = grower.node_stats(0, entries);
    if pure {
        return None;
    }
    grower.best_in_segment(0, entries, &agg, &subset, 1)
}

/// Fit a single tree on all rows.
///
/// At each split a fresh feature subset of `max_features` size is drawn from
/// an RNG seeded with `seed`; bagging belongs to the forest, not here.
pub fn fit_tree(
    x: MatrixView<'_>,
    target: &Target<'_>,
    params: &super::HyperParams,
    seed: u64,
) -> Result<TreeNode> {
    params.validate()?;
    if x.is_empty() {
        return Err(crate::error::Error::InvalidArgument(
            "cannot fit a tree on zero rows".into(),
        ));
    }
    let task = match target {
        Target::Regression(_) => super::Task::Regression,
        Target::Classification { .. } => super::Task::Classification,
    };
    let settings = GrowSettings {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        min_samples_leaf: params.min_samples_leaf,
        m_features: params.max_features.resolve(x.cols(), task),
    };
    let sorted = presort(x, target);
    let weights = vec![1u32; x.rows()];
    let mut ws = TreeWorkspace::new();
    let (tree, _) = grow_tree(
        *target,
        &weights,
        &sorted,
        settings,
        ChaCha8Rng::seed_from_u64(seed),
        &mut ws,
    );
    Ok(tree)
}
