//! Bagged forests of CART trees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{grow_tree, presort, GrowSettings, Target, TreeNode, TreeWorkspace};
use super::{HyperParams, Task};
use crate::error::{Error, Result};
use crate::exec;
use crate::matrix::MatrixView;

/// A fitted forest. Regression predicts the mean of tree leaf values;
/// classification soft-votes averaged per-tree leaf class frequencies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub task: Task,
    pub trees: Vec<TreeNode>,
    pub params: HyperParams,
    /// Normalized total impurity decrease per feature; sums to 1 when any
    /// split exists, all zeros otherwise.
    pub feature_importances: Vec<f64>,
    pub seed: u64,
    pub n_features: usize,
    /// 0 for regression forests.
    pub n_classes: usize,
}

impl Forest {
    pub fn fit_regression(
        x: MatrixView<'_>,
        y: &[f64],
        params: &HyperParams,
        seed: u64,
    ) -> Result<Forest> {
        if y.len() != x.rows() {
            return Err(Error::InvalidArgument(format!(
                "target length {} does not match {} rows",
                y.len(),
                x.rows()
            )));
        }
        fit_inner(x, Target::Regression(y), params, seed, 0)
    }

    pub fn fit_classification(
        x: MatrixView<'_>,
        labels: &[usize],
        n_classes: usize,
        params: &HyperParams,
        seed: u64,
    ) -> Result<Forest> {
        if labels.len() != x.rows() {
            return Err(Error::InvalidArgument(format!(
                "label length {} does not match {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if n_classes == 0 || labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::InvalidArgument(
                "labels must lie in 0..n_classes".into(),
            ));
        }
        fit_inner(
            x,
            Target::Classification {
                labels,
                n_classes,
            },
            params,
            seed,
            n_classes,
        )
    }

    fn check_row_width(&self, cols: usize) -> Result<()> {
        if cols != self.n_features {
            return Err(Error::InvalidArgument(format!(
                "forest was fit on {} features, got {cols}",
                self.n_features
            )));
        }
        Ok(())
    }

    /// Mean of the trees' leaf values for one row.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(self.task, Task::Regression);
        let sum: f64 = self.trees.iter().map(|t| t.predict_value(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict(&self, x: MatrixView<'_>) -> Result<Vec<f64>> {
        if self.task != Task::Regression {
            return Err(Error::InvalidArgument(
                "predict() is for regression forests; use predict_classes()".into(),
            ));
        }
        self.check_row_width(x.cols())?;
        Ok(exec::map_range(x.rows(), |i| self.predict_row(x.row(i))))
    }

    /// Averaged per-tree leaf class frequencies for one row.
    pub fn class_scores_row(&self, row: &[f64]) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_classes];
        for tree in &self.trees {
            if let TreeNode::ClassificationLeaf { class_counts } = tree.leaf_for(row) {
                let total: u64 = class_counts.iter().sum();
                if total > 0 {
                    for (s, &c) in scores.iter_mut().zip(class_counts) {
                        *s += c as f64 / total as f64;
                    }
                }
            }
        }
        for s in scores.iter_mut() {
            *s /= self.trees.len() as f64;
        }
        scores
    }

    /// Soft-vote argmax; ties go to the lowest class index.
    pub fn predict_class_row(&self, row: &[f64]) -> usize {
        let scores = self.class_scores_row(row);
        let mut best = 0;
        for (c, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict_classes(&self, x: MatrixView<'_>) -> Result<Vec<usize>> {
        if self.task != Task::Classification {
            return Err(Error::InvalidArgument(
                "predict_classes() is for classification forests".into(),
            ));
        }
        self.check_row_width(x.cols())?;
        Ok(exec::map_range(x.rows(), |i| {
            self.predict_class_row(x.row(i))
        }))
    }

    /// (name, importance) pairs sorted by importance descending,
    /// name ascending on ties.
    pub fn ranked_importances(&self, names: &[String]) -> Vec<(String, f64)> {
        let mut pairs: Vec<(String, f64)> = names
            .iter()
            .cloned()
            .zip(self.feature_importances.iter().copied())
            .collect();
        pairs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        pairs
    }
}

fn fit_inner(
    x: MatrixView<'_>,
    target: Target<'_>,
    params: &HyperParams,
    seed: u64,
    n_classes: usize,
) -> Result<Forest> {
    params.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot fit a forest on zero rows".into(),
        ));
    }
    let n = x.rows();
    if n > u32::MAX as usize {
        return Err(Error::InvalidArgument("too many rows (u32 index)".into()));
    }
    let task = match target {
        Target::Regression(_) => Task::Regression,
        Target::Classification { .. } => Task::Classification,
    };
    let settings = GrowSettings {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        min_samples_leaf: params.min_samples_leaf,
        m_features: params.max_features.resolve(x.cols(), task),
    };

    // Content-identical (features, target) rows carry no information beyond
    // their multiplicity, and balanced datasets repeat rows verbatim, so
    // collapse duplicates into weights before presorting.
    let mut rep_of = vec![0u32; n];
    let mut unique_rows: Vec<u32> = Vec::new();
    let mut seen: std::collections::HashMap<Vec<u64>, u32> =
        std::collections::HashMap::with_capacity(n);
    for i in 0..n {
        let mut key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
        key.push(match target {
            Target::Regression(y) => y[i].to_bits(),
            Target::Classification { labels, .. } => labels[i] as u64,
        });
        let next = unique_rows.len() as u32;
        rep_of[i] = *seen.entry(key).or_insert_with(|| {
            unique_rows.push(i as u32);
            next
        });
    }
    let n_unique = unique_rows.len();
    let mut compact_x = Vec::with_capacity(n_unique * x.cols());
    for &r in &unique_rows {
        compact_x.extend_from_slice(x.row(r as usize));
    }
    let compact_y: Vec<f64>;
    let compact_labels: Vec<usize>;
    let compact_target = match target {
        Target::Regression(y) => {
            compact_y = unique_rows.iter().map(|&r| y[r as usize]).collect();
            Target::Regression(&compact_y)
        }
        Target::Classification { labels, n_classes } => {
            compact_labels = unique_rows.iter().map(|&r| labels[r as usize]).collect();
            Target::Classification {
                labels: &compact_labels,
                n_classes,
            }
        }
    };
    let compact_view = MatrixView::new(&compact_x, x.cols());

    // Tree i draws everything from stream (seed, i): bootstrap first, then
    // per-node feature subsets. The parallel schedule cannot change results;
    // workspaces are per-worker scratch only.
    let sorted = presort(compact_view, &compact_target);
    let base_weights: Vec<u32> = {
        let mut w = vec![0u32; n_unique];
        for &rep in &rep_of {
            w[rep as usize] += 1;
        }
        w
    };
    let grown: Vec<(TreeNode, Vec<f64>)> = exec::map_range_with(
        params.n_estimators,
        || (TreeWorkspace::new(), Vec::<u32>::new()),
        |(ws, weights), i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            weights.clear();
            if params.bootstrap {
                weights.resize(n_unique, 0);
                for _ in 0..n {
                    weights[rep_of[rng.random_range(0..n)] as usize] += 1;
                }
            } else {
                weights.extend_from_slice(&base_weights);
            }
            grow_tree(compact_target, weights, &sorted, settings, rng, ws)
        },
    );

    let mut totals = vec![0.0; x.cols()];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, importance) in grown {
        for (t, v) in totals.iter_mut().zip(importance) {
            *t += v;
        }
        trees.push(tree);
    }
    let grand: f64 = totals.iter().sum();
    let feature_importances = if grand > 0.0 {
        totals.iter().map(|v| v / grand).collect()
    } else {
        totals
    };

    Ok(Forest {
        task,
        trees,
        params: params.clone(),
        feature_importances,
        seed,
        n_features: x.cols(),
        n_classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::MaxFeatures;
    use approx::assert_abs_diff_eq;

    fn grid_data(n: usize, p: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            for j in 0..p {
                data.push(f(i, j));
            }
        }
        data
    }

    #[test]
    fn single_full_tree_memorizes() {
        let data: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let params = HyperParams {
            n_estimators: 1,
            bootstrap: false,
            ..HyperParams::default()
        };
        let forest =
            Forest::fit_regression(MatrixView::new(&data, 1), &y, &params, 0).unwrap();
        let preds = forest.predict(MatrixView::new(&data, 1)).unwrap();
        for (p, t) in preds.iter().zip(&y) {
            assert_abs_diff_eq!(p, t, epsilon = 1e-12);
        }
    }

    #[test]
    fn refit_is_bit_identical() {
        let data = grid_data(60, 3, |i, j| ((i * 31 + j * 7) % 13) as f64);
        let y: Vec<f64> = (0..60).map(|i| ((i * 5) % 11) as f64).collect();
        let params = HyperParams {
            n_estimators: 12,
            max_features: MaxFeatures::Sqrt,
            ..HyperParams::default()
        };
        let x = MatrixView::new(&data, 3);
        let a = Forest::fit_regression(x, &y, &params, 7).unwrap();
        let b = Forest::fit_regression(x, &y, &params, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(x).unwrap(), b.predict(x).unwrap());
        let c = Forest::fit_regression(x, &y, &params, 8).unwrap();
        assert_ne!(a.trees, c.trees, "different seed should change the bag");
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let data = grid_data(30, 2, |i, j| ((i + j) % 6) as f64);
        let y: Vec<f64> = (0..30).map(|i| ((i % 6) * 2) as f64).collect();
        let params = HyperParams {
            n_estimators: 7,
            ..HyperParams::default()
        };
        let x = MatrixView::new(&data, 2);
        let forest = Forest::fit_regression(x, &y, &params, 3).unwrap();
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean: f64 = forest
                .trees
                .iter()
                .map(|t| t.predict_value(row))
                .sum::<f64>()
                / forest.trees.len() as f64;
            assert_eq!(forest.predict_row(row), mean);
        }
    }

    #[test]
    fn constant_feature_has_zero_importance() {
        // column 1 is constant; no split can use it
        let data = grid_data(40, 2, |i, j| if j == 0 { (i % 8) as f64 } else { 3.0 });
        let y: Vec<f64> = (0..40).map(|i| ((i % 8) as f64) * 5.0).collect();
        let params = HyperParams {
            n_estimators: 10,
            ..HyperParams::default()
        };
        let forest =
            Forest::fit_regression(MatrixView::new(&data, 2), &y, &params, 1).unwrap();
        assert_eq!(forest.feature_importances[1], 0.0);
        assert_abs_diff_eq!(forest.feature_importances.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn informative_feature_outranks_noise() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 300;
        let mut data = Vec::with_capacity(n * 2);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x1 = rng.random::<f64>() * 10.0;
            let x2 = rng.random::<f64>() * 10.0; // pure noise
            data.push(x1);
            data.push(x2);
            y.push(if x1 > 5.0 { 20.0 } else { 2.0 });
        }
        let params = HyperParams {
            n_estimators: 20,
            ..HyperParams::default()
        };
        let forest =
            Forest::fit_regression(MatrixView::new(&data, 2), &y, &params, 5).unwrap();
        assert!(
            forest.feature_importances[0] > forest.feature_importances[1],
            "importances: {:?}",
            forest.feature_importances
        );
    }

    #[test]
    fn no_splits_gives_zero_importances() {
        let data: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = vec![4.0; 10];
        let params = HyperParams {
            n_estimators: 3,
            ..HyperParams::default()
        };
        let forest =
            Forest::fit_regression(MatrixView::new(&data, 1), &y, &params, 0).unwrap();
        assert_eq!(forest.feature_importances, vec![0.0]);
        assert!(forest.trees.iter().all(|t| t.is_leaf()));
    }

    #[test]
    fn classification_separable_and_tie_break() {
        let data: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let labels: Vec<usize> = (0..12).map(|i| usize::from(i >= 6)).collect();
        let params = HyperParams {
            n_estimators: 9,
            bootstrap: false,
            ..HyperParams::default()
        };
        let x = MatrixView::new(&data, 1);
        let forest = Forest::fit_classification(x, &labels, 2, &params, 4).unwrap();
        assert_eq!(forest.predict_classes(x).unwrap(), labels);

        // hand-built 50/50 tie: two leaves disagree -> class 0 wins
        let tie = Forest {
            task: Task::Classification,
            trees: vec![
                TreeNode::ClassificationLeaf {
                    class_counts: vec![1, 0],
                },
                TreeNode::ClassificationLeaf {
                    class_counts: vec![0, 1],
                },
            ],
            params: params.clone(),
            feature_importances: vec![0.0],
            seed: 0,
            n_features: 1,
            n_classes: 2,
        };
        assert_eq!(tie.predict_class_row(&[0.0]), 0);
    }

    #[test]
    fn serialization_round_trip() {
        let data = grid_data(25, 2, |i, j| ((i * 3 + j) % 7) as f64);
        let y: Vec<f64> = (0..25).map(|i| (i % 7) as f64).collect();
        let params = HyperParams {
            n_estimators: 4,
            ..HyperParams::default()
        };
        let forest =
            Forest::fit_regression(MatrixView::new(&data, 2), &y, &params, 11).unwrap();
        let json = serde_json::to_string(&forest).unwrap();
        let back: Forest = serde_json::from_str(&json).unwrap();
        assert_eq!(forest, back);
    }

    #[test]
    fn training_mse_non_increasing_in_depth() {
        let data = grid_data(80, 2, |i, j| ((i * 13 + j * 5) % 17) as f64);
        let y: Vec<f64> = (0..80).map(|i| ((i * 7) % 23) as f64).collect();
        let x = MatrixView::new(&data, 2);
        let mut last = f64::INFINITY;
        for depth in 0..=5 {
            let params = HyperParams {
                n_estimators: 5,
                max_depth: Some(depth),
                bootstrap: false,
                ..HyperParams::default()
            };
            let forest = Forest::fit_regression(x, &y, &params, 6).unwrap();
            let preds = forest.predict(x).unwrap();
            let mse: f64 = preds
                .iter()
                .zip(&y)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                / y.len() as f64;
            assert!(
                mse <= last + 1e-9,
                "mse rose from {last} to {mse} at depth {depth}"
            );
            last = mse;
        }
    }
}
