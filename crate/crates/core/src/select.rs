//! Model selection: k-fold splits, R² scoring and randomized hyperparameter
//! search over the forest grid.
//!
//! Trials are independent; each trial's forest seeds derive only from
//! (run seed, trial index, fold index), so searches are reproducible whether
//! they run sequentially or on rayon.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::learners::{Forest, HyperParams, MaxFeatures};
use crate::matrix::MatrixView;
use crate::report;
use crate::util::{mix_seed, seed_tags};

/// Seeded permutation of 0..n split into k folds whose sizes differ by at
/// most one (the first n mod k folds take the extra element).
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    indices.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        folds.push(indices[at..at + size].to_vec());
        at += size;
    }
    Ok(folds)
}

/// Group-aware folds: every row of a listing lands in the same fold.
/// `ids` is the per-row listing id; folds are over row indices.
pub fn group_kfold_split(ids: &[u64], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut unique: Vec<u64> = ids.to_vec();
    unique.sort_unstable();
    unique.dedup();
    if k < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if k > unique.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {} groups into {k} folds",
            unique.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::seq::SliceRandom;
    unique.shuffle(&mut rng);

    let n_groups = unique.len();
    let base = n_groups / k;
    let extra = n_groups % k;
    let mut fold_of = std::collections::BTreeMap::new();
    let mut at = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &id in &unique[at..at + size] {
            fold_of.insert(id, fold);
        }
        at += size;
    }
    let mut folds = vec![Vec::new(); k];
    for (row, id) in ids.iter().enumerate() {
        folds[fold_of[id]].push(row);
    }
    Ok(folds)
}

/// Coefficient of determination, 1 − SS_res/SS_tot.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::InvalidArgument(
            "r2 needs at least 2 points".into(),
        ));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined(
            "r2 undefined for a constant target".into(),
        ));
    }
    let ss_res: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// The hyperparameter grid the randomized search samples from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Inclusive range.
    pub n_estimators: (usize, usize),
    pub max_features: Vec<MaxFeatures>,
    /// `None` entries mean unbounded depth.
    pub max_depth: Vec<Option<usize>>,
    pub min_samples_split: Vec<usize>,
    pub min_samples_leaf: Vec<usize>,
    pub bootstrap: Vec<bool>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_estimators: (100, 200),
            max_features: vec![MaxFeatures::Auto, MaxFeatures::Sqrt],
            max_depth: (10..=20).map(Some).chain([None]).collect(),
            min_samples_split: vec![2, 5, 10],
            min_samples_leaf: vec![1, 2, 4],
            bootstrap: vec![true, false],
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators.0 < 1 || self.n_estimators.0 > self.n_estimators.1 {
            return Err(Error::InvalidArgument(
                "n_estimators range must be nonempty and start at >= 1".into(),
            ));
        }
        if self.max_features.is_empty()
            || self.max_depth.is_empty()
            || self.min_samples_split.is_empty()
            || self.min_samples_leaf.is_empty()
            || self.bootstrap.is_empty()
        {
            return Err(Error::InvalidArgument(
                "every search dimension needs at least one option".into(),
            ));
        }
        Ok(())
    }

    pub fn contains(&self, p: &HyperParams) -> bool {
        (self.n_estimators.0..=self.n_estimators.1).contains(&p.n_estimators)
            && self.max_features.contains(&p.max_features)
            && self.max_depth.contains(&p.max_depth)
            && self.min_samples_split.contains(&p.min_samples_split)
            && self.min_samples_leaf.contains(&p.min_samples_leaf)
            && self.bootstrap.contains(&p.bootstrap)
    }
}

/// One uniform draw per dimension; duplicates across draws are allowed.
pub fn sample_params(space: &SearchSpace, rng: &mut ChaCha8Rng) -> HyperParams {
    let pick = |rng: &mut ChaCha8Rng, len: usize| rng.random_range(0..len);
    HyperParams {
        n_estimators: rng.random_range(space.n_estimators.0..=space.n_estimators.1),
        max_features: space.max_features[pick(rng, space.max_features.len())],
        max_depth: space.max_depth[pick(rng, space.max_depth.len())],
        min_samples_split: space.min_samples_split[pick(rng, space.min_samples_split.len())],
        min_samples_leaf: space.min_samples_leaf[pick(rng, space.min_samples_leaf.len())],
        bootstrap: space.bootstrap[pick(rng, space.bootstrap.len())],
    }
}

/// One completed search trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_index: usize,
    pub params: HyperParams,
    /// R² per validation fold.
    pub fold_scores: Vec<f64>,
    pub mean_score: f64,
    /// Population standard deviation of the fold scores.
    pub std_score: f64,
    /// 1 = best.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailedTrial {
    pub trial_index: usize,
    pub params: HyperParams,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    /// Completed trials ranked best first.
    pub trials: Vec<TrialResult>,
    pub failed: Vec<FailedTrial>,
}

impl SearchOutcome {
    pub fn best(&self) -> Option<&TrialResult> {
        self.trials.first()
    }
}

struct FoldData {
    train_x: Vec<f64>,
    train_y: Vec<f64>,
    val_x: Vec<f64>,
    val_y: Vec<f64>,
}

fn materialize_folds(x: MatrixView<'_>, y: &[f64], folds: &[Vec<usize>]) -> Vec<FoldData> {
    folds
        .iter()
        .map(|val_rows| {
            let in_val: Vec<bool> = {
                let mut mask = vec![false; x.rows()];
                for &r in val_rows {
                    mask[r] = true;
                }
                mask
            };
            let mut data = FoldData {
                train_x: Vec::new(),
                train_y: Vec::new(),
                val_x: Vec::new(),
                val_y: Vec::new(),
            };
            for row in 0..x.rows() {
                if in_val[row] {
                    data.val_x.extend_from_slice(x.row(row));
                    data.val_y.push(y[row]);
                } else {
                    data.train_x.extend_from_slice(x.row(row));
                    data.train_y.push(y[row]);
                }
            }
            data
        })
        .collect()
}

/// Randomized search with row-level folds drawn internally.
pub fn randomized_search(
    x: MatrixView<'_>,
    y: &[f64],
    space: &SearchSpace,
    n_iter: usize,
    k: usize,
    seed: u64,
) -> Result<SearchOutcome> {
    let folds = kfold_split(x.rows(), k, mix_seed(seed, seed_tags::SEARCH_FOLDS, 0))?;
    randomized_search_with_folds(x, y, space, n_iter, &folds, seed)
}

/// Randomized search over caller-provided validation folds.
///
/// Every sampled parameter set is scored by mean validation R² over the
/// folds; trials rank by mean descending, std ascending, then trial index.
/// Failed trials are reported and excluded from the ranking.
pub fn randomized_search_with_folds(
    x: MatrixView<'_>,
    y: &[f64],
    space: &SearchSpace,
    n_iter: usize,
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<SearchOutcome> {
    space.validate()?;
    if n_iter < 1 {
        return Err(Error::InvalidArgument("n_iter must be >= 1".into()));
    }
    if folds.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }

    let mut params_rng =
        ChaCha8Rng::seed_from_u64(mix_seed(seed, seed_tags::SEARCH_PARAMS, 0));
    let sampled: Vec<HyperParams> = (0..n_iter)
        .map(|_| sample_params(space, &mut params_rng))
        .collect();

    let fold_data = materialize_folds(x, y, folds);
    let k = folds.len();

    let outcomes: Vec<std::result::Result<TrialResult, FailedTrial>> =
        exec::map_range(n_iter, |trial| {
            let params = sampled[trial].clone();
            let mut fold_scores = Vec::with_capacity(k);
            for (fold, data) in fold_data.iter().enumerate() {
                let forest_seed =
                    mix_seed(seed, seed_tags::SEARCH_TRIAL, (trial * k + fold) as u64);
                let result = Forest::fit_regression(
                    MatrixView::new(&data.train_x, x.cols()),
                    &data.train_y,
                    &params,
                    forest_seed,
                )
                .and_then(|forest| {
                    let preds = forest.predict(MatrixView::new(&data.val_x, x.cols()))?;
                    r2_score(&data.val_y, &preds)
                });
                match result {
                    Ok(score) => fold_scores.push(score),
                    Err(e) => {
                        return Err(FailedTrial {
                            trial_index: trial,
                            params,
                            reason: format!("fold {fold}: {e}"),
                        })
                    }
                }
            }
            let mean = fold_scores.iter().sum::<f64>() / k as f64;
            let var =
                fold_scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / k as f64;
            Ok(TrialResult {
                trial_index: trial,
                params,
                fold_scores,
                mean_score: mean,
                std_score: var.sqrt(),
                rank: 0,
            })
        });

    let mut trials = Vec::new();
    let mut failed = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(t) => trials.push(t),
            Err(f) => failed.push(f),
        }
    }
    trials.sort_by(|a, b| {
        b.mean_score
            .total_cmp(&a.mean_score)
            .then(a.std_score.total_cmp(&b.std_score))
            .then(a.trial_index.cmp(&b.trial_index))
    });
    for (i, t) in trials.iter_mut().enumerate() {
        t.rank = i + 1;
    }
    Ok(SearchOutcome { trials, failed })
}

/// Render the top trials the way the search tooling prints them:
///
/// ```text
/// Model with rank: 1
/// Mean validation score: 0.980 (std: 0.001)
/// Parameters: {'n_estimators': 131, ...}
/// ```
pub fn format_top_trials(outcome: &SearchOutcome, top_n: usize) -> String {
    let mut out = String::new();
    for trial in outcome.trials.iter().take(top_n) {
        out.push_str(&format!(
            "Model with rank: {}\nMean validation score: {:.3} (std: {:.3})\nParameters: {}\n\n",
            trial.rank,
            trial.mean_score,
            trial.std_score,
            trial.params.python_dict()
        ));
    }
    out
}

/// One x-position of the trees-vs-error curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreesCurvePoint {
    pub n_trees: usize,
    pub train_rmse: f64,
    pub test_rmse: f64,
}

/// Fit forests with varying tree counts and average train/held-out RMSE over
/// k folds. RMSE is in the units of `y` as given.
pub fn trees_curve(
    x: MatrixView<'_>,
    y: &[f64],
    params: &HyperParams,
    n_list: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<TreesCurvePoint>> {
    let folds = kfold_split(x.rows(), k, mix_seed(seed, seed_tags::TREES_CURVE, 0))?;
    let fold_data = materialize_folds(x, y, &folds);

    let points: Vec<Result<TreesCurvePoint>> = exec::map_range(n_list.len(), |ni| {
        let n_trees = n_list[ni];
        let mut train_sum = 0.0;
        let mut test_sum = 0.0;
        for (fold, data) in fold_data.iter().enumerate() {
            let forest_seed = mix_seed(
                seed,
                seed_tags::TREES_CURVE,
                ((ni + 1) * 10_000 + fold) as u64,
            );
            let forest = Forest::fit_regression(
                MatrixView::new(&data.train_x, x.cols()),
                &data.train_y,
                &params.clone().with_n_estimators(n_trees),
                forest_seed,
            )?;
            let train_pred = forest.predict(MatrixView::new(&data.train_x, x.cols()))?;
            let test_pred = forest.predict(MatrixView::new(&data.val_x, x.cols()))?;
            train_sum += report::rmse(&data.train_y, &train_pred)?;
            test_sum += report::rmse(&data.val_y, &test_pred)?;
        }
        Ok(TreesCurvePoint {
            n_trees,
            train_rmse: train_sum / fold_data.len() as f64,
            test_rmse: test_sum / fold_data.len() as f64,
        })
    });
    points.into_iter().collect()
}
