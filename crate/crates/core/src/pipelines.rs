//! End-to-end runs: the price pipeline (baseline → easy/hard gate → balance →
//! randomized search → final forest) and the availability pipeline
//! (per-window clustering → Naive Bayes), both producing a model artifact and
//! a [`RunReport`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::balance::{balance_dataset, BalanceConfig};
use crate::error::{Error, Result};
use crate::features::{encode, filter_outliers, fit_encoding, EncodingSpec, FeatureMatrix, OutlierRules};
use crate::ingest::ListingRecord;
use crate::learners::{fit_ols, Forest, HyperParams, LinearModel, MaxFeatures};
use crate::matrix::MatrixView;
use crate::prob::{
    fit_multinomial_nb, kmeans_1d, majority_baseline, normalize_availability, split_low_high,
    Band, NbModel,
};
use crate::report::{
    error_buckets, histogram, mape, rmse, AvailabilitySection, BalanceSection, BaselineSection,
    Bins, ErrorBucketTable, EvalMetrics, FeatureSplitHistogram, FinalSection, GateSection,
    RunReport, SearchSection, WindowClustering, DEFAULT_BUCKET_THRESHOLDS,
};
use crate::select::{
    group_kfold_split, kfold_split, randomized_search_with_folds, SearchOutcome, SearchSpace,
};
use crate::util::{fnv1a64, mix_seed, seed_tags};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const AVAILABILITY_WINDOWS: [u32; 4] = [30, 60, 90, 365];

/// How cross-validation folds are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldMode {
    /// Plain row-level folds. On balanced data duplicated rows leak across
    /// folds and inflate scores; the run report warns when this happens.
    Row,
    /// All rows of a listing stay in one fold.
    Group,
}

impl std::fmt::Display for FoldMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FoldMode::Row => write!(f, "row"),
            FoldMode::Group => write!(f, "group"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis1Config {
    pub seed: u64,
    pub outlier_rules: OutlierRules,
    pub balance: BalanceConfig,
    pub gate_threshold_usd: f64,
    pub gate_params: HyperParams,
    pub search_space: SearchSpace,
    pub n_iter: usize,
    pub k_folds: usize,
    pub fold_mode: FoldMode,
    /// Train the final forest only on listings the gate labels easy.
    pub train_easy_only: bool,
}

impl Default for Hypothesis1Config {
    fn default() -> Self {
        Hypothesis1Config {
            seed: 42,
            outlier_rules: OutlierRules::default(),
            balance: BalanceConfig::default(),
            gate_threshold_usd: 30.0,
            gate_params: HyperParams {
                n_estimators: 100,
                max_features: MaxFeatures::Auto,
                max_depth: None,
                min_samples_split: 2,
                min_samples_leaf: 1,
                bootstrap: true,
            },
            search_space: SearchSpace::default(),
            n_iter: 100,
            k_folds: 10,
            fold_mode: FoldMode::Row,
            train_easy_only: false,
        }
    }
}

/// Per-listing easy/hard verdict from the baseline's out-of-fold errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateLabel {
    pub listing_id: u64,
    /// Mean absolute out-of-fold error, USD.
    pub oof_abs_error: f64,
    pub easy: bool,
    pub threshold: f64,
}

pub struct BaselineOutcome {
    /// OLS fit on the full (reduced) design.
    pub model: LinearModel,
    /// Names of the columns the reduced design kept.
    pub design_columns: Vec<String>,
    /// |expm1(pred) − expm1(target)| per row, USD.
    pub oof_errors_usd: Vec<f64>,
    pub rmse_usd: f64,
    pub mape_percent: f64,
}

/// Drop columns OLS cannot use: zero-variance columns, and one reference
/// column per complete one-hot block (a block plus the intercept is exactly
/// collinear). Returns kept column indices and their names.
fn reduce_design(matrix: &FeatureMatrix) -> (Vec<usize>, Vec<String>) {
    let view = matrix.view();
    let n = matrix.n_rows();
    let mut keep = vec![true; matrix.n_cols()];

    for j in 0..matrix.n_cols() {
        let first = view.get(0, j);
        if (1..n).all(|i| view.get(i, j) == first) {
            keep[j] = false;
        }
    }

    let mut blocks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (j, name) in matrix.column_names.iter().enumerate() {
        if let Some(eq) = name.find('=') {
            blocks.entry(&name[..eq]).or_default().push(j);
        }
    }
    for cols in blocks.values() {
        let complete = (0..n).all(|i| {
            let sum: f64 = cols.iter().map(|&j| view.get(i, j)).sum();
            sum == 1.0
        });
        if complete {
            if let Some(&first_kept) = cols.iter().find(|&&j| keep[j]) {
                keep[first_kept] = false;
            }
        }
    }

    let indices: Vec<usize> = (0..matrix.n_cols()).filter(|&j| keep[j]).collect();
    let names = indices
        .iter()
        .map(|&j| matrix.column_names[j].clone())
        .collect();
    (indices, names)
}

fn gather(matrix: &FeatureMatrix, rows: &[usize], cols: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &i in rows {
        let row = matrix.row(i);
        out.extend(cols.iter().map(|&j| row[j]));
    }
    out
}

/// OLS baseline with out-of-fold USD errors.
///
/// Folds are row-level; the returned model is refit on all rows. All USD
/// numbers come from expm1-inverting the log1p target.
pub fn baseline_stage(matrix: &FeatureMatrix, k: usize, seed: u64) -> Result<BaselineOutcome> {
    let n = matrix.n_rows();
    let (design_cols, design_names) = reduce_design(matrix);
    if design_cols.is_empty() {
        return Err(Error::Domain(
            "no usable design columns for the baseline".into(),
        ));
    }
    let all_rows: Vec<usize> = (0..n).collect();
    let design = gather(matrix, &all_rows, &design_cols);
    let design_view = MatrixView::new(&design, design_cols.len());

    let model = fit_ols(design_view, &matrix.target)?;

    let folds = kfold_split(n, k, mix_seed(seed, seed_tags::BASELINE_FOLDS, 0))?;
    let mut oof_pred_log = vec![f64::NAN; n];
    for fold in &folds {
        let mut in_val = vec![false; n];
        for &r in fold {
            in_val[r] = true;
        }
        let train_rows: Vec<usize> = (0..n).filter(|&r| !in_val[r]).collect();
        let train_x = gather(matrix, &train_rows, &design_cols);
        let train_y: Vec<f64> = train_rows.iter().map(|&r| matrix.target[r]).collect();
        let fold_model = fit_ols(MatrixView::new(&train_x, design_cols.len()), &train_y)?;
        for &r in fold {
            let row = gather(matrix, &[r], &design_cols);
            oof_pred_log[r] = fold_model.predict_row(&row);
        }
    }

    let truth_usd: Vec<f64> = matrix.target.iter().map(|t| t.exp_m1()).collect();
    let pred_usd: Vec<f64> = oof_pred_log.iter().map(|p| p.exp_m1()).collect();
    let oof_errors_usd: Vec<f64> = truth_usd
        .iter()
        .zip(&pred_usd)
        .map(|(t, p)| (t - p).abs())
        .collect();

    Ok(BaselineOutcome {
        model,
        design_columns: design_names,
        rmse_usd: rmse(&truth_usd, &pred_usd)?,
        mape_percent: mape(&truth_usd, &pred_usd)?,
        oof_errors_usd,
    })
}

/// Per-listing mean absolute OOF error compared against the USD threshold.
pub fn label_easy_hard(
    listing_ids: &[u64],
    oof_errors_usd: &[f64],
    threshold_usd: f64,
) -> Vec<GateLabel> {
    let mut sums: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (&id, &err) in listing_ids.iter().zip(oof_errors_usd) {
        let entry = sums.entry(id).or_insert((0.0, 0));
        entry.0 += err;
        entry.1 += 1;
    }
    sums.into_iter()
        .map(|(listing_id, (sum, count))| {
            let mean = sum / count as f64;
            GateLabel {
                listing_id,
                oof_abs_error: mean,
                easy: mean <= threshold_usd,
                threshold: threshold_usd,
            }
        })
        .collect()
}

pub struct GateOutcome {
    pub forest: Forest,
    pub holdout_accuracy: f64,
    pub feature_distributions: Vec<FeatureSplitHistogram>,
    pub easy_listings: usize,
    pub hard_listings: usize,
}

const GATE_EASY_CLASS: usize = 1;

/// Train the easy/hard gate classifier on listing features.
///
/// Accuracy is measured on a held-out fifth of the listings (group-aware),
/// then the returned forest is refit on everything. The per-feature easy/hard
/// histograms cover the dense (non-one-hot) columns.
pub fn train_gate(
    matrix: &FeatureMatrix,
    labels: &[GateLabel],
    params: &HyperParams,
    seed: u64,
) -> Result<GateOutcome> {
    let easy_of: BTreeMap<u64, bool> = labels.iter().map(|l| (l.listing_id, l.easy)).collect();
    let row_classes: Vec<usize> = matrix
        .listing_ids
        .iter()
        .map(|id| {
            easy_of
                .get(id)
                .map(|&e| if e { GATE_EASY_CLASS } else { 0 })
                .ok_or_else(|| Error::InvalidArgument(format!("listing {id} has no gate label")))
        })
        .collect::<Result<_>>()?;

    let mut unique_ids: Vec<u64> = easy_of.keys().copied().collect();
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng =
        rand_chacha::ChaCha8Rng::seed_from_u64(mix_seed(seed, seed_tags::GATE_SPLIT, 0));
    unique_ids.shuffle(&mut rng);
    let holdout_groups = (unique_ids.len() / 5).max(1).min(unique_ids.len().saturating_sub(1));
    let holdout_ids: std::collections::BTreeSet<u64> =
        unique_ids[..holdout_groups].iter().copied().collect();

    let holdout_accuracy = if holdout_ids.is_empty() || holdout_ids.len() == unique_ids.len() {
        1.0 // degenerate tiny input; nothing meaningful to hold out
    } else {
        let train_rows: Vec<usize> = (0..matrix.n_rows())
            .filter(|&r| !holdout_ids.contains(&matrix.listing_ids[r]))
            .collect();
        let holdout_rows: Vec<usize> = (0..matrix.n_rows())
            .filter(|&r| holdout_ids.contains(&matrix.listing_ids[r]))
            .collect();
        let all_cols: Vec<usize> = (0..matrix.n_cols()).collect();
        let train_x = gather(matrix, &train_rows, &all_cols);
        let train_labels: Vec<usize> = train_rows.iter().map(|&r| row_classes[r]).collect();
        let fold_forest = Forest::fit_classification(
            MatrixView::new(&train_x, matrix.n_cols()),
            &train_labels,
            2,
            params,
            mix_seed(seed, seed_tags::GATE_FOREST, 1),
        )?;
        let hits = holdout_rows
            .iter()
            .filter(|&&r| fold_forest.predict_class_row(matrix.row(r)) == row_classes[r])
            .count();
        hits as f64 / holdout_rows.len() as f64
    };

    let forest = Forest::fit_classification(
        matrix.view(),
        &row_classes,
        2,
        params,
        mix_seed(seed, seed_tags::GATE_FOREST, 0),
    )?;

    // easy-vs-hard distributions over the dense columns (Fig-style artifacts)
    let mut feature_distributions = Vec::new();
    for (j, name) in matrix.column_names.iter().enumerate() {
        if name.contains('=') {
            continue;
        }
        let all: Vec<f64> = (0..matrix.n_rows()).map(|i| matrix.row(i)[j]).collect();
        let base = histogram(&all, Bins::Count(10))?;
        let easy_values: Vec<f64> = (0..matrix.n_rows())
            .filter(|&i| row_classes[i] == GATE_EASY_CLASS)
            .map(|i| matrix.row(i)[j])
            .collect();
        let hard_values: Vec<f64> = (0..matrix.n_rows())
            .filter(|&i| row_classes[i] != GATE_EASY_CLASS)
            .map(|i| matrix.row(i)[j])
            .collect();
        let easy = histogram(&easy_values, Bins::Edges(base.edges.clone()))?;
        let hard = histogram(&hard_values, Bins::Edges(base.edges.clone()))?;
        feature_distributions.push(FeatureSplitHistogram {
            feature: name.clone(),
            edges: base.edges,
            easy_counts: easy.counts,
            hard_counts: hard.counts,
        });
    }

    Ok(GateOutcome {
        forest,
        holdout_accuracy,
        feature_distributions,
        easy_listings: labels.iter().filter(|l| l.easy).count(),
        hard_listings: labels.iter().filter(|l| !l.easy).count(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub seed: u64,
    pub gate_threshold_usd: f64,
    pub dataset_fingerprint: String,
    pub n_features: usize,
    pub baseline_design_columns: Vec<String>,
    pub overall_buckets: ErrorBucketTable,
    pub easy_buckets: Option<ErrorBucketTable>,
}

/// The serialized price pipeline: frozen encoding, OLS baseline, gate
/// classifier and tuned price forest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricePipelineModel {
    pub schema_version: u32,
    pub kind: String,
    pub encoding: EncodingSpec,
    pub baseline: LinearModel,
    pub gate: Forest,
    pub price_model: Forest,
    pub chosen_params: HyperParams,
    pub metadata: ModelMetadata,
}

impl PricePipelineModel {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model schema_version {} (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.kind != "price_pipeline" {
            return Err(Error::Schema(format!(
                "artifact kind {:?} is not a price pipeline model",
                self.kind
            )));
        }
        let n = self.encoding.n_output_columns();
        if self.gate.n_features != n || self.price_model.n_features != n {
            return Err(Error::Schema(format!(
                "encoding emits {n} columns but gate/forest expect {}/{}",
                self.gate.n_features, self.price_model.n_features
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("model serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<PricePipelineModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: PricePipelineModel = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("cannot parse model artifact: {e}")))?;
        model.validate()?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricePrediction {
    pub listing_id: u64,
    pub price_usd: f64,
    /// Gate verdict: hard-gated listings still get a price, at lower
    /// confidence.
    pub easy: bool,
    pub note: String,
}

/// Score new listings with a trained pipeline.
pub fn predict_price(
    model: &PricePipelineModel,
    records: &[ListingRecord],
) -> Result<Vec<PricePrediction>> {
    model.validate()?;
    let matrix = encode(records, &model.encoding)?;
    let bucket_note = |buckets: &ErrorBucketTable, tag: &str| -> String {
        match buckets
            .thresholds
            .iter()
            .zip(&buckets.cumulative_percentages)
            .last()
        {
            Some((t, p)) => format!("{tag}: P(|error| <= ${t:.0}) ~ {p:.1}% in training"),
            None => tag.to_string(),
        }
    };
    Ok((0..matrix.n_rows())
        .map(|i| {
            let row = matrix.row(i);
            let easy = model.gate.predict_class_row(row) == GATE_EASY_CLASS;
            let price_usd = model.price_model.predict_row(row).exp_m1();
            let note = match (&model.metadata.easy_buckets, easy) {
                (Some(buckets), true) => bucket_note(buckets, "easy"),
                _ => bucket_note(&model.metadata.overall_buckets, if easy { "easy" } else { "hard" }),
            };
            PricePrediction {
                listing_id: matrix.listing_ids[i],
                price_usd,
                easy,
                note,
            }
        })
        .collect())
}

fn fingerprint_records(records: &[ListingRecord]) -> String {
    let bytes = serde_json::to_vec(records).unwrap_or_default();
    format!("{:016x}", fnv1a64(&bytes))
}

/// Out-of-fold USD evaluation of forests with the given params.
fn evaluate_oof(
    matrix: &FeatureMatrix,
    params: &HyperParams,
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<(Vec<f64>, EvalMetrics)> {
    let n = matrix.n_rows();
    let all_cols: Vec<usize> = (0..matrix.n_cols()).collect();
    let mut pred_log = vec![f64::NAN; n];
    for (f, fold) in folds.iter().enumerate() {
        let mut in_val = vec![false; n];
        for &r in fold {
            in_val[r] = true;
        }
        let train_rows: Vec<usize> = (0..n).filter(|&r| !in_val[r]).collect();
        let train_x = gather(matrix, &train_rows, &all_cols);
        let train_y: Vec<f64> = train_rows.iter().map(|&r| matrix.target[r]).collect();
        let forest = Forest::fit_regression(
            MatrixView::new(&train_x, matrix.n_cols()),
            &train_y,
            params,
            mix_seed(seed, seed_tags::EVAL_FOLDS, f as u64),
        )?;
        for &r in fold {
            pred_log[r] = forest.predict_row(matrix.row(r));
        }
    }
    let truth_usd: Vec<f64> = matrix.target.iter().map(|t| t.exp_m1()).collect();
    let pred_usd: Vec<f64> = pred_log.iter().map(|p| p.exp_m1()).collect();
    let errors: Vec<f64> = truth_usd
        .iter()
        .zip(&pred_usd)
        .map(|(t, p)| (t - p).abs())
        .collect();
    let metrics = EvalMetrics {
        rmse_usd: rmse(&truth_usd, &pred_usd)?,
        mape_percent: mape(&truth_usd, &pred_usd)?,
        error_buckets: error_buckets(&errors, &DEFAULT_BUCKET_THRESHOLDS),
    };
    Ok((errors, metrics))
}

/// The full price pipeline. Stages run in order; a failing stage aborts with
/// its name attached.
pub fn hypothesis1_run(
    records: &[ListingRecord],
    config: &Hypothesis1Config,
) -> Result<(PricePipelineModel, RunReport)> {
    let seed = config.seed;
    let mut report = RunReport::new(
        seed,
        fingerprint_records(records),
        serde_json::to_value(config).unwrap_or_default(),
    );

    // outlier filter
    let (filtered, _outlier_drops) = filter_outliers(records, &config.outlier_rules)
        .map_err(|e| e.in_stage("outlier_filter"))?;
    if filtered.is_empty() {
        return Err(Error::Domain("no records survive the outlier filter".into())
            .in_stage("outlier_filter"));
    }

    // encode
    let mut encoding = fit_encoding(&filtered);
    encoding.outlier_rules = config.outlier_rules;
    let matrix = encode(&filtered, &encoding).map_err(|e| e.in_stage("encode"))?;

    // baseline
    let baseline = baseline_stage(&matrix, config.k_folds, seed)
        .map_err(|e| e.in_stage("baseline"))?;
    report.baseline = Some(BaselineSection {
        rmse_usd: baseline.rmse_usd,
        mape_percent: baseline.mape_percent,
        error_buckets: error_buckets(&baseline.oof_errors_usd, &DEFAULT_BUCKET_THRESHOLDS),
        error_histogram: histogram(&baseline.oof_errors_usd, Bins::Count(20))
            .map_err(|e| e.in_stage("baseline"))?,
        design_columns: baseline.design_columns.clone(),
    });

    // gate
    let labels = label_easy_hard(
        &matrix.listing_ids,
        &baseline.oof_errors_usd,
        config.gate_threshold_usd,
    );
    let gate = train_gate(&matrix, &labels, &config.gate_params, seed)
        .map_err(|e| e.in_stage("gate"))?;
    report.gate = Some(GateSection {
        threshold_usd: config.gate_threshold_usd,
        easy_listings: gate.easy_listings,
        hard_listings: gate.hard_listings,
        holdout_accuracy: gate.holdout_accuracy,
        feature_distributions: gate.feature_distributions.clone(),
    });

    // balance (optionally on easy listings only)
    let train_matrix = if config.train_easy_only {
        let easy_ids: std::collections::BTreeSet<u64> = labels
            .iter()
            .filter(|l| l.easy)
            .map(|l| l.listing_id)
            .collect();
        if easy_ids.is_empty() {
            return Err(
                Error::Domain("no listings are easy at this threshold".into()).in_stage("balance")
            );
        }
        let rows: Vec<usize> = (0..matrix.n_rows())
            .filter(|&r| easy_ids.contains(&matrix.listing_ids[r]))
            .collect();
        matrix.take_rows(&rows)
    } else {
        matrix.take_rows(&(0..matrix.n_rows()).collect::<Vec<_>>())
    };
    let (balanced, balance_summary) =
        balance_dataset(&train_matrix, &config.balance).map_err(|e| e.in_stage("balance"))?;
    report.balance = Some(BalanceSection {
        target_per_listing: config.balance.target_per_listing,
        summary: balance_summary,
    });

    // randomized search
    if config.fold_mode == FoldMode::Row {
        report.warnings.push(
            "row-level folds on balanced data share duplicated rows between train and \
             validation; scores are optimistic (use group fold mode for honest estimates)"
                .to_string(),
        );
    }
    let search = search_stage(&balanced, config).map_err(|e| e.in_stage("search"))?;
    let best = search
        .best()
        .ok_or_else(|| {
            Error::Domain(format!("all {} search trials failed", config.n_iter))
                .in_stage("search")
        })?
        .clone();
    report.search = Some(SearchSection {
        n_iter: config.n_iter,
        k_folds: config.k_folds,
        fold_mode: config.fold_mode.to_string(),
        trials: search.trials.clone(),
        failed: search.failed.clone(),
    });

    // final forest on the balanced data with the rank-1 params
    let price_model = Forest::fit_regression(
        balanced.view(),
        &balanced.target,
        &best.params,
        mix_seed(seed, seed_tags::FINAL_FOREST, 0),
    )
    .map_err(|e| e.in_stage("final_fit"))?;

    // evaluation: group-aware OOF is the honest number; row-level is the
    // leakage-prone convention reported alongside
    let group_folds = group_kfold_split(
        &balanced.listing_ids,
        config.k_folds.min(report_group_count(&balanced)),
        mix_seed(seed, seed_tags::EVAL_FOLDS, 1),
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    let (group_errors, group_cv) = evaluate_oof(&balanced, &best.params, &group_folds, seed)
        .map_err(|e| e.in_stage("evaluate"))?;
    let row_folds = kfold_split(
        balanced.n_rows(),
        config.k_folds,
        mix_seed(seed, seed_tags::EVAL_FOLDS, 2),
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    let (_, row_cv) = evaluate_oof(&balanced, &best.params, &row_folds, seed)
        .map_err(|e| e.in_stage("evaluate"))?;

    let easy_ids: std::collections::BTreeSet<u64> = labels
        .iter()
        .filter(|l| l.easy)
        .map(|l| l.listing_id)
        .collect();
    let easy_errors: Vec<f64> = (0..balanced.n_rows())
        .filter(|&r| easy_ids.contains(&balanced.listing_ids[r]))
        .map(|r| group_errors[r])
        .collect();
    let easy_truth: Vec<f64> = (0..balanced.n_rows())
        .filter(|&r| easy_ids.contains(&balanced.listing_ids[r]))
        .map(|r| balanced.target[r].exp_m1())
        .collect();
    // zero prices were already rejected by the baseline MAPE, so the
    // easy-subset MAPE is safe to form from absolute errors
    let easy_subset = if easy_errors.is_empty() {
        None
    } else {
        let rmse_usd =
            (easy_errors.iter().map(|e| e * e).sum::<f64>() / easy_errors.len() as f64).sqrt();
        let mape_percent = 100.0
            * easy_errors
                .iter()
                .zip(&easy_truth)
                .map(|(e, t)| e / t)
                .sum::<f64>()
            / easy_errors.len() as f64;
        Some(EvalMetrics {
            rmse_usd,
            mape_percent,
            error_buckets: error_buckets(&easy_errors, &DEFAULT_BUCKET_THRESHOLDS),
        })
    };

    report.final_stage = Some(FinalSection {
        params: best.params.clone(),
        group_cv: group_cv.clone(),
        row_cv,
        easy_subset: easy_subset.clone(),
        feature_importances: price_model.ranked_importances(&balanced.column_names),
        trained_on_easy_only: config.train_easy_only,
    });

    let model = PricePipelineModel {
        schema_version: MODEL_SCHEMA_VERSION,
        kind: "price_pipeline".to_string(),
        encoding,
        baseline: baseline.model,
        gate: gate.forest,
        price_model,
        chosen_params: best.params,
        metadata: ModelMetadata {
            seed,
            gate_threshold_usd: config.gate_threshold_usd,
            dataset_fingerprint: report.meta.dataset_fingerprint.clone(),
            n_features: matrix.n_cols(),
            baseline_design_columns: baseline.design_columns,
            overall_buckets: group_cv.error_buckets,
            easy_buckets: easy_subset.map(|e| e.error_buckets),
        },
    };
    model.validate()?;
    Ok((model, report))
}

fn report_group_count(matrix: &FeatureMatrix) -> usize {
    let mut ids = matrix.listing_ids.clone();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}

/// The randomized-search stage exactly as [`hypothesis1_run`] performs it,
/// on an already-balanced matrix. The `tune` command goes through here so a
/// standalone search reproduces the training run's search bit for bit.
pub fn search_stage(
    balanced: &FeatureMatrix,
    config: &Hypothesis1Config,
) -> Result<SearchOutcome> {
    let fold_seed = mix_seed(config.seed, seed_tags::SEARCH_FOLDS, 0);
    let folds = match config.fold_mode {
        FoldMode::Row => kfold_split(balanced.n_rows(), config.k_folds, fold_seed),
        FoldMode::Group => {
            group_kfold_split(&balanced.listing_ids, config.k_folds, fold_seed)
        }
    }?;
    randomized_search_with_folds(
        balanced.view(),
        &balanced.target,
        &config.search_space,
        config.n_iter,
        &folds,
        config.seed,
    )
}

// ---------------------------------------------------------------------------
// Availability pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis2Config {
    pub seed: u64,
    /// Which window's low/high clusters label the NB training data.
    pub window: u32,
    pub alpha: f64,
}

impl Default for Hypothesis2Config {
    fn default() -> Self {
        Hypothesis2Config {
            seed: 42,
            window: 365,
            alpha: 1.0,
        }
    }
}

/// Serialized availability model: the chosen window's centroids plus the NB
/// classifier and the majority baseline it is compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityModel {
    pub schema_version: u32,
    pub kind: String,
    pub window: u32,
    pub centroid_low: f64,
    pub centroid_high: f64,
    pub nb: NbModel,
    pub majority_label: String,
    pub majority_accuracy: f64,
}

impl AvailabilityModel {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model schema_version {}",
                self.schema_version
            )));
        }
        if self.kind != "availability_model" {
            return Err(Error::Schema(format!(
                "artifact kind {:?} is not an availability model",
                self.kind
            )));
        }
        if self.centroid_low >= self.centroid_high {
            return Err(Error::Schema(
                "availability centroids are not ordered low < high".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Schema(format!("model serialization failed: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<AvailabilityModel> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: AvailabilityModel = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("cannot parse model artifact: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    /// Posterior probability that a (zipcode, room_type) listing is in the
    /// high-availability cluster.
    pub fn likelihood(&self, zipcode: &str, room_type: &str) -> Result<f64> {
        let row = vec![zipcode.to_string(), room_type.to_string()];
        let posteriors = self.nb.predict_posteriors(&row);
        match self.nb.class_index(&Band::High.to_string()) {
            Some(idx) => Ok(posteriors[idx]),
            // single-class training data: the posterior is all-or-nothing
            None => Ok(0.0),
        }
    }
}

/// The availability pipeline: per-window k=2 clustering (all four windows
/// reported) and an NB classifier on (zipcode, room_type) against the
/// configured window's low/high labels.
pub fn hypothesis2_run(
    records: &[ListingRecord],
    config: &Hypothesis2Config,
) -> Result<(AvailabilityModel, RunReport)> {
    if !AVAILABILITY_WINDOWS.contains(&config.window) {
        return Err(Error::InvalidArgument(format!(
            "window must be one of 30/60/90/365, got {}",
            config.window
        )));
    }
    let mut report = RunReport::new(
        config.seed,
        fingerprint_records(records),
        serde_json::to_value(config).unwrap_or_default(),
    );

    let mut window_sections = Vec::new();
    let mut label_bands: Option<Vec<Band>> = None;
    let mut chosen_centroids = (0.0, 0.0);
    for &window in &AVAILABILITY_WINDOWS {
        let values: Vec<f64> = records
            .iter()
            .map(|r| {
                let days = match window {
                    30 => r.availability_30,
                    60 => r.availability_60,
                    90 => r.availability_90,
                    _ => r.availability_365,
                };
                normalize_availability(days, window)
            })
            .collect::<Result<_>>()
            .map_err(|e| e.in_stage("availability"))?;
        let clustering = kmeans_1d(
            &values,
            2,
            mix_seed(config.seed, seed_tags::KMEANS_WINDOW, window as u64),
            300,
            1e-6,
        )
        .map_err(|e| e.in_stage("availability"))?;
        let bands = split_low_high(&clustering).map_err(|e| e.in_stage("availability"))?;
        let low_count = bands.iter().filter(|b| **b == Band::Low).count();
        window_sections.push(WindowClustering {
            window,
            centroid_low: clustering.centroids[0],
            centroid_high: clustering.centroids[1],
            low_count,
            high_count: bands.len() - low_count,
            inertia: clustering.inertia,
            degenerate: clustering.degenerate,
        });
        if window == config.window {
            chosen_centroids = (clustering.centroids[0], clustering.centroids[1]);
            label_bands = Some(bands);
        }
    }
    let bands = label_bands.expect("configured window is always clustered");

    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| vec![r.zipcode.clone(), r.room_type.clone()])
        .collect();
    let labels: Vec<String> = bands.iter().map(|b| b.to_string()).collect();
    let nb = fit_multinomial_nb(&rows, &labels, config.alpha)
        .map_err(|e| e.in_stage("availability"))?;
    let predictions = nb.predict(&rows);
    let nb_accuracy = crate::prob::accuracy(&labels, &predictions)
        .map_err(|e| e.in_stage("availability"))?;
    let (majority_label, majority_accuracy) =
        majority_baseline(&labels).map_err(|e| e.in_stage("availability"))?;

    report.availability = Some(AvailabilitySection {
        windows: window_sections,
        label_window: config.window,
        nb_accuracy,
        majority_label: majority_label.clone(),
        majority_accuracy,
    });

    let model = AvailabilityModel {
        schema_version: MODEL_SCHEMA_VERSION,
        kind: "availability_model".to_string(),
        window: config.window,
        centroid_low: chosen_centroids.0,
        centroid_high: chosen_centroids.1,
        nb,
        majority_label,
        majority_accuracy,
    };
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::tests::record;
    use approx::assert_abs_diff_eq;

    /// Listings whose log price is exactly linear in bedrooms; everything
    /// else constant so the reduced design is just the bedrooms column.
    fn linear_records(n: usize) -> Vec<ListingRecord> {
        (0..n)
            .map(|i| {
                let bedrooms = (i % 4) as u32;
                let price = (0.5 * bedrooms as f64 + 3.0).exp_m1();
                let mut r = record(i as u64, price);
                r.bedrooms = bedrooms;
                r
            })
            .collect()
    }

    #[test]
    fn baseline_recovers_exact_linear_data() {
        let records = linear_records(40);
        let spec = fit_encoding(&records);
        let matrix = encode(&records, &spec).unwrap();
        let outcome = baseline_stage(&matrix, 5, 7).unwrap();
        assert!(outcome.rmse_usd < 1e-6, "rmse {}", outcome.rmse_usd);
        assert!(outcome.mape_percent < 1e-6);
        assert_eq!(outcome.design_columns, vec!["bedrooms".to_string()]);

        // determinism under seed
        let again = baseline_stage(&matrix, 5, 7).unwrap();
        assert_eq!(outcome.oof_errors_usd, again.oof_errors_usd);
    }

    #[test]
    fn label_easy_hard_examples() {
        let labels = label_easy_hard(&[1], &[2.0], 30.0);
        assert!(labels[0].easy);
        let labels = label_easy_hard(&[1], &[50.0], 30.0);
        assert!(!labels[0].easy);
        // mean of [10, 60] is 35 -> hard
        let labels = label_easy_hard(&[1, 1], &[10.0, 60.0], 30.0);
        assert_abs_diff_eq!(labels[0].oof_abs_error, 35.0, epsilon = 1e-12);
        assert!(!labels[0].easy);
        // easy <=> mean error <= threshold, exactly at the boundary
        let labels = label_easy_hard(&[1], &[30.0], 30.0);
        assert!(labels[0].easy);
    }

    fn gate_test_matrix() -> (FeatureMatrix, Vec<GateLabel>) {
        // easiness determined by bedrooms: <= 1 easy, else hard
        let records: Vec<ListingRecord> = (0..40)
            .map(|i| {
                let mut r = record(i as u64, 100.0 + i as f64);
                r.bedrooms = (i % 4) as u32;
                r
            })
            .collect();
        let spec = fit_encoding(&records);
        let matrix = encode(&records, &spec).unwrap();
        let labels: Vec<GateLabel> = records
            .iter()
            .map(|r| GateLabel {
                listing_id: r.listing_id,
                oof_abs_error: if r.bedrooms <= 1 { 5.0 } else { 80.0 },
                easy: r.bedrooms <= 1,
                threshold: 30.0,
            })
            .collect();
        (matrix, labels)
    }

    #[test]
    fn gate_learns_separable_labels() {
        let (matrix, labels) = gate_test_matrix();
        let params = HyperParams {
            n_estimators: 15,
            ..HyperParams::default()
        };
        let outcome = train_gate(&matrix, &labels, &params, 3).unwrap();
        assert!(
            outcome.holdout_accuracy >= 0.95,
            "accuracy {}",
            outcome.holdout_accuracy
        );
        assert_eq!(outcome.easy_listings + outcome.hard_listings, 40);
        assert!(!outcome.feature_distributions.is_empty());
        // distributions cover dense columns only
        assert!(outcome
            .feature_distributions
            .iter()
            .all(|d| !d.feature.contains('=')));

        // determinism
        let again = train_gate(&matrix, &labels, &params, 3).unwrap();
        assert_eq!(outcome.forest, again.forest);
    }

    #[test]
    fn gate_all_easy_is_trivially_accurate() {
        let (matrix, mut labels) = gate_test_matrix();
        for l in labels.iter_mut() {
            l.easy = true;
        }
        let params = HyperParams {
            n_estimators: 5,
            ..HyperParams::default()
        };
        let outcome = train_gate(&matrix, &labels, &params, 3).unwrap();
        assert_eq!(outcome.holdout_accuracy, 1.0);
    }

    /// Piecewise price driven by bedrooms and room type, several rows per
    /// listing, three snapshot months. Attribute cycles are chosen coprime
    /// so no encoded column is an affine combination of the others.
    fn pipeline_records() -> Vec<ListingRecord> {
        let availability = [300, 30, 150, 90, 250, 60, 180, 120, 330, 45, 210, 75];
        let mut records = Vec::new();
        let mut id = 0u64;
        for listing in 0..12usize {
            let rows = [1, 2, 3, 5, 8, 13, 2, 3, 4, 6, 9, 14][listing];
            id += 1;
            for row in 0..rows {
                let bedrooms = (listing % 4) as u32;
                let room_type = if listing % 2 == 0 {
                    "Entire home/apt"
                } else {
                    "Private room"
                };
                let base = 60.0 + 40.0 * bedrooms as f64
                    + if listing % 2 == 0 { 80.0 } else { 0.0 };
                let mut r = record(id, base);
                r.bedrooms = bedrooms;
                r.room_type = room_type.to_string();
                r.zipcode = format!("9410{}", listing % 3);
                r.snapshot_date =
                    chrono::NaiveDate::from_ymd_opt(2017, 1 + (row % 3) as u32, 5);
                r.availability_365 = availability[listing];
                records.push(r);
            }
        }
        records
    }

    fn small_config() -> Hypothesis1Config {
        Hypothesis1Config {
            seed: 11,
            n_iter: 3,
            k_folds: 3,
            balance: BalanceConfig {
                target_per_listing: 10,
                ..BalanceConfig::default()
            },
            gate_params: HyperParams {
                n_estimators: 10,
                ..HyperParams::default()
            },
            search_space: SearchSpace {
                n_estimators: (5, 10),
                ..SearchSpace::default()
            },
            ..Hypothesis1Config::default()
        }
    }

    #[test]
    fn hypothesis1_completes_and_is_deterministic() {
        let records = pipeline_records();
        let config = small_config();
        let (model, report) = hypothesis1_run(&records, &config).unwrap();
        let (model2, report2) = hypothesis1_run(&records, &config).unwrap();
        assert_eq!(model, model2);
        let strip = |r: &RunReport| {
            let mut v = serde_json::to_value(r).unwrap();
            v["meta"]["generated_at"] = serde_json::Value::Null;
            v
        };
        assert_eq!(strip(&report), strip(&report2));

        // every stage contributed a section
        assert!(report.baseline.is_some());
        assert!(report.gate.is_some());
        assert!(report.balance.is_some());
        assert!(report.search.is_some());
        assert!(report.final_stage.is_some());
        assert!(report.availability.is_none());

        // balanced to exactly target_per_listing per listing
        let balance = report.balance.as_ref().unwrap();
        assert_eq!(balance.summary.rows_out, 12 * 10);

        // row-level folds on balanced data must carry the leakage warning
        assert!(report.warnings.iter().any(|w| w.contains("row-level folds")));

        // bucket table is cumulative-monotone
        let buckets = &report.final_stage.as_ref().unwrap().group_cv.error_buckets;
        assert!(buckets
            .cumulative_percentages
            .windows(2)
            .all(|w| w[0] <= w[1]));
    }

    #[test]
    fn hypothesis1_stage_errors_carry_stage_names() {
        let records = pipeline_records();
        let mut config = small_config();
        config.balance.distance_columns = Some(vec!["no_such_column".to_string()]);
        let err = hypothesis1_run(&records, &config).unwrap_err();
        assert!(err.to_string().contains("balance stage failed"));
    }

    #[test]
    fn predict_price_memorizes_and_handles_unseen_categories() {
        let records = pipeline_records();
        let mut config = small_config();
        // memorizing setup: unlimited depth, no bagging
        config.search_space = SearchSpace {
            n_estimators: (20, 20),
            max_features: vec![MaxFeatures::Auto],
            max_depth: vec![None],
            min_samples_split: vec![2],
            min_samples_leaf: vec![1],
            bootstrap: vec![false],
        };
        config.n_iter = 1;
        let (model, _) = hypothesis1_run(&records, &config).unwrap();

        let predictions = predict_price(&model, &records).unwrap();
        assert_eq!(predictions.len(), records.len());
        for (p, r) in predictions.iter().zip(&records) {
            assert_eq!(p.listing_id, r.listing_id);
            assert_abs_diff_eq!(p.price_usd, r.price, epsilon = 1e-6);
            assert!(p.price_usd.is_finite() && p.price_usd >= 0.0);
            assert!(!p.note.is_empty());
        }

        let mut unseen = records[0].clone();
        unseen.room_type = "Yurt".to_string();
        unseen.zipcode = "99999".to_string();
        let p = predict_price(&model, &[unseen]).unwrap();
        assert!(p[0].price_usd.is_finite());
    }

    #[test]
    fn model_artifact_round_trip_and_schema_check() {
        let records = pipeline_records();
        let (model, _) = hypothesis1_run(&records, &small_config()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = PricePipelineModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn model_load_rejects_wrong_schema_version() {
        let records = pipeline_records();
        let (model, _) = hypothesis1_run(&records, &small_config()).unwrap();
        let mut value = serde_json::to_value(&model).unwrap();
        value["schema_version"] = serde_json::json!(99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = PricePipelineModel::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    fn availability_records(informative: bool) -> Vec<ListingRecord> {
        (0..60)
            .map(|i| {
                let mut r = record(i as u64, 100.0);
                let high = i % 3 == 0;
                r.zipcode = if informative {
                    if high { "11111".to_string() } else { "22222".to_string() }
                } else {
                    "33333".to_string()
                };
                r.availability_365 = if high { 330 + (i % 20) as u32 } else { 10 + (i % 20) as u32 };
                r.availability_90 = if high { 80 } else { 5 };
                r.availability_60 = if high { 55 } else { 4 };
                r.availability_30 = if high { 28 } else { 2 };
                r
            })
            .collect()
    }

    #[test]
    fn hypothesis2_zipcode_determined_beats_majority() {
        let records = availability_records(true);
        let (model, report) = hypothesis2_run(&records, &Hypothesis2Config::default()).unwrap();
        let section = report.availability.unwrap();
        assert!(
            section.nb_accuracy >= section.majority_accuracy + 0.2,
            "nb {} vs majority {}",
            section.nb_accuracy,
            section.majority_accuracy
        );
        assert_eq!(section.windows.len(), 4);
        for w in &section.windows {
            assert!(w.centroid_low < w.centroid_high);
        }
        assert!(model.centroid_low < model.centroid_high);

        // posterior behaves like a probability and complements
        let high = model.likelihood("11111", "Entire home/apt").unwrap();
        assert!(high > 0.5 && high <= 1.0);
        let low = model.likelihood("22222", "Entire home/apt").unwrap();
        assert!(low < 0.5);
        let unseen = model.likelihood("99999", "Entire home/apt").unwrap();
        assert!(unseen.is_finite() && (0.0..=1.0).contains(&unseen));
    }

    #[test]
    fn hypothesis2_uninformative_features_match_majority() {
        let records = availability_records(false);
        let mut config = Hypothesis2Config::default();
        config.window = 90;
        let (_, report) = hypothesis2_run(&records, &config).unwrap();
        let section = report.availability.unwrap();
        assert_abs_diff_eq!(
            section.nb_accuracy,
            section.majority_accuracy,
            epsilon = 0.01
        );
        assert_eq!(section.label_window, 90);
    }

    #[test]
    fn hypothesis2_artifact_round_trip() {
        let records = availability_records(true);
        let (model, _) = hypothesis2_run(&records, &Hypothesis2Config::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("availability.json");
        model.save(&path).unwrap();
        let loaded = AvailabilityModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn easy_only_training_filters_listings() {
        let records = pipeline_records();
        let mut config = small_config();
        config.train_easy_only = true;
        // generous threshold so every listing is easy and the run proceeds
        config.gate_threshold_usd = 1e9;
        let (_, report) = hypothesis1_run(&records, &config).unwrap();
        assert!(report.final_stage.unwrap().trained_on_easy_only);
    }
}
