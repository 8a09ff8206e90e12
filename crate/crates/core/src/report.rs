//! Metrics and run artifacts: RMSE/MAPE, cumulative error buckets,
//! histograms, lat/lon heatmap grids and the machine-readable run report.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::balance::BalanceSummary;
use crate::error::{Error, Result};
use crate::learners::HyperParams;
use crate::select::{FailedTrial, TreesCurvePoint, TrialResult};
use crate::util;

/// Root mean squared error.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let mse = y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum::<f64>()
        / y_true.len() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute error.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(t, p)| (t - p).abs())
        .sum::<f64>()
        / y_true.len() as f64)
}

/// Mean absolute percentage error, in percent: 100 · mean(|t − p| / t).
/// Zero targets make the metric undefined; offending row indices are
/// reported.
pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let zero_rows: Vec<usize> = y_true
        .iter()
        .enumerate()
        .filter(|(_, &t)| t == 0.0)
        .map(|(i, _)| i)
        .take(10)
        .collect();
    if !zero_rows.is_empty() {
        return Err(Error::Domain(format!(
            "mape undefined for zero targets at rows {zero_rows:?}"
        )));
    }
    Ok(100.0
        * y_true
            .iter()
            .zip(y_pred)
            .map(|(t, p)| ((t - p) / t).abs())
            .sum::<f64>()
        / y_true.len() as f64)
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty metric input".into()));
    }
    Ok(())
}

/// Cumulative share of absolute errors at or below each USD threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBucketTable {
    pub thresholds: Vec<f64>,
    /// Percentages in [0, 100], non-decreasing.
    pub cumulative_percentages: Vec<f64>,
}

pub const DEFAULT_BUCKET_THRESHOLDS: [f64; 4] = [5.0, 10.0, 20.0, 30.0];

pub fn error_buckets(errors: &[f64], thresholds: &[f64]) -> ErrorBucketTable {
    let mut thresholds = thresholds.to_vec();
    thresholds.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = errors.len().max(1) as f64;
    let cumulative_percentages = thresholds
        .iter()
        .map(|&t| 100.0 * errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    ErrorBucketTable {
        thresholds,
        cumulative_percentages,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// len = counts.len() + 1; bins are left-closed right-open, the last bin
    /// closed on both sides.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

pub enum Bins {
    Count(usize),
    Edges(Vec<f64>),
}

pub fn histogram(values: &[f64], bins: Bins) -> Result<Histogram> {
    let edges = match bins {
        Bins::Edges(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(
                    "histogram edges must be strictly increasing with >= 2 entries".into(),
                ));
            }
            edges
        }
        Bins::Count(k) => {
            if k == 0 {
                return Err(Error::InvalidArgument("need at least 1 bin".into()));
            }
            if values.is_empty() {
                return Ok(Histogram {
                    edges: Vec::new(),
                    counts: Vec::new(),
                });
            }
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Domain("non-finite histogram input".into()));
            }
            let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
            let mut edges: Vec<f64> = (0..=k)
                .map(|i| lo + (hi - lo) * i as f64 / k as f64)
                .collect();
            // pin the outer edges so min/max values always land inside
            edges[0] = lo;
            edges[k] = hi;
            edges
        }
    };

    let k = edges.len() - 1;
    let lo = edges[0];
    let hi = edges[k];
    let mut counts = vec![0u64; k];
    for &v in values {
        if v < lo || v > hi {
            continue;
        }
        let mut bin = edges.partition_point(|&e| e <= v);
        // values on the top edge belong to the last (closed) bin
        bin = bin.saturating_sub(1).min(k - 1);
        counts[bin] += 1;
    }
    Ok(Histogram { edges, counts })
}

/// Per-cell median price and count over an equal-width lat/lon grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub lat_edges: Vec<f64>,
    pub lon_edges: Vec<f64>,
    /// Row-major (lat bin, lon bin); `None` where the cell is empty.
    pub cell_stat: Vec<Option<f64>>,
    pub cell_count: Vec<u64>,
}

impl HeatmapGrid {
    pub fn n_lat_bins(&self) -> usize {
        self.lat_edges.len().saturating_sub(1)
    }

    pub fn n_lon_bins(&self) -> usize {
        self.lon_edges.len().saturating_sub(1)
    }

    pub fn cell(&self, lat_bin: usize, lon_bin: usize) -> (Option<f64>, u64) {
        let idx = lat_bin * self.n_lon_bins() + lon_bin;
        (self.cell_stat[idx], self.cell_count[idx])
    }
}

pub fn heatmap_grid(
    lat: &[f64],
    lon: &[f64],
    price: &[f64],
    n_bins: usize,
) -> Result<HeatmapGrid> {
    if lat.len() != lon.len() || lat.len() != price.len() {
        return Err(Error::InvalidArgument(
            "lat/lon/price lengths differ".into(),
        ));
    }
    if lat.is_empty() {
        return Err(Error::InvalidArgument("no points to grid".into()));
    }
    if n_bins == 0 {
        return Err(Error::InvalidArgument("need at least 1 bin".into()));
    }

    let edges = |values: &[f64]| -> Vec<f64> {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        let mut edges: Vec<f64> = (0..=n_bins)
            .map(|i| lo + (hi - lo) * i as f64 / n_bins as f64)
            .collect();
        edges[0] = lo;
        edges[n_bins] = hi;
        edges
    };
    let lat_edges = edges(lat);
    let lon_edges = edges(lon);

    let bin_of = |edges: &[f64], v: f64| -> usize {
        edges
            .partition_point(|&e| e <= v)
            .saturating_sub(1)
            .min(n_bins - 1)
    };

    let mut cells: Vec<Vec<f64>> = vec![Vec::new(); n_bins * n_bins];
    for i in 0..lat.len() {
        let idx = bin_of(&lat_edges, lat[i]) * n_bins + bin_of(&lon_edges, lon[i]);
        cells[idx].push(price[i]);
    }
    let cell_count: Vec<u64> = cells.iter().map(|c| c.len() as u64).collect();
    let cell_stat: Vec<Option<f64>> = cells
        .iter_mut()
        .map(|c| {
            if c.is_empty() {
                None
            } else {
                Some(util::median_in_place(c))
            }
        })
        .collect();

    Ok(HeatmapGrid {
        lat_edges,
        lon_edges,
        cell_stat,
        cell_count,
    })
}

// ---------------------------------------------------------------------------
// Run report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub config: serde_json::Value,
    /// The only nondeterministic field in a report.
    pub generated_at: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeekendTable {
    pub imbalanced_weekday_median: f64,
    pub imbalanced_weekend_median: f64,
    pub balanced_weekday_median: f64,
    pub balanced_weekend_median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub columns: Vec<String>,
    pub matrix: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdaSection {
    pub rows: usize,
    pub listings: usize,
    pub price_histogram: Histogram,
    pub log_price_histogram: Histogram,
    pub bedrooms_histogram: Histogram,
    pub weekday_weekend: Option<WeekendTable>,
    pub correlations: CorrelationTable,
    pub heatmap: HeatmapGrid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSection {
    pub rmse_usd: f64,
    pub mape_percent: f64,
    pub error_buckets: ErrorBucketTable,
    pub error_histogram: Histogram,
    pub design_columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSplitHistogram {
    pub feature: String,
    pub edges: Vec<f64>,
    pub easy_counts: Vec<u64>,
    pub hard_counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSection {
    pub threshold_usd: f64,
    pub easy_listings: usize,
    pub hard_listings: usize,
    pub holdout_accuracy: f64,
    pub feature_distributions: Vec<FeatureSplitHistogram>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceSection {
    pub target_per_listing: usize,
    pub summary: BalanceSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSection {
    pub n_iter: usize,
    pub k_folds: usize,
    pub fold_mode: String,
    pub trials: Vec<TrialResult>,
    pub failed: Vec<FailedTrial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub rmse_usd: f64,
    pub mape_percent: f64,
    pub error_buckets: ErrorBucketTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalSection {
    pub params: HyperParams,
    /// Group-aware cross-validated metrics (listings never straddle folds).
    pub group_cv: EvalMetrics,
    /// Row-level cross-validated metrics; optimistic on balanced data.
    pub row_cv: EvalMetrics,
    /// Group-aware metrics restricted to listings the gate calls easy.
    pub easy_subset: Option<EvalMetrics>,
    pub feature_importances: Vec<(String, f64)>,
    pub trained_on_easy_only: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowClustering {
    pub window: u32,
    pub centroid_low: f64,
    pub centroid_high: f64,
    pub low_count: usize,
    pub high_count: usize,
    pub inertia: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvailabilitySection {
    pub windows: Vec<WindowClustering>,
    pub label_window: u32,
    pub nb_accuracy: f64,
    pub majority_label: String,
    pub majority_accuracy: f64,
}

/// The full machine-readable run report. Every executed stage fills exactly
/// one section; sections a command does not run stay null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub meta: ReportMeta,
    pub eda: Option<EdaSection>,
    pub baseline: Option<BaselineSection>,
    pub gate: Option<GateSection>,
    pub balance: Option<BalanceSection>,
    pub search: Option<SearchSection>,
    #[serde(rename = "final")]
    pub final_stage: Option<FinalSection>,
    pub availability: Option<AvailabilitySection>,
    pub warnings: Vec<String>,
}

impl RunReport {
    pub fn new(seed: u64, dataset_fingerprint: String, config: serde_json::Value) -> RunReport {
        RunReport {
            meta: ReportMeta {
                seed,
                dataset_fingerprint,
                config,
                generated_at: chrono::Utc::now().to_rfc3339(),
            },
            eda: None,
            baseline: None,
            gate: None,
            balance: None,
            search: None,
            final_stage: None,
            availability: None,
            warnings: Vec::new(),
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(["bin_low", "bin_high", "count"]).map_err(err)?;
    for (i, &count) in hist.counts.iter().enumerate() {
        w.write_record([
            hist.edges[i].to_string(),
            hist.edges[i + 1].to_string(),
            count.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_buckets_csv(path: &Path, table: &ErrorBucketTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(["threshold_usd", "cumulative_percent"]).map_err(err)?;
    for (t, p) in table.thresholds.iter().zip(&table.cumulative_percentages) {
        w.write_record([t.to_string(), p.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_heatmap_csv(path: &Path, grid: &HeatmapGrid) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record([
        "lat_bin", "lon_bin", "lat_low", "lat_high", "lon_low", "lon_high", "count",
        "median_price",
    ])
    .map_err(err)?;
    for lat_bin in 0..grid.n_lat_bins() {
        for lon_bin in 0..grid.n_lon_bins() {
            let (stat, count) = grid.cell(lat_bin, lon_bin);
            w.write_record([
                lat_bin.to_string(),
                lon_bin.to_string(),
                grid.lat_edges[lat_bin].to_string(),
                grid.lat_edges[lat_bin + 1].to_string(),
                grid.lon_edges[lon_bin].to_string(),
                grid.lon_edges[lon_bin + 1].to_string(),
                count.to_string(),
                stat.map(|s| s.to_string()).unwrap_or_default(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_trees_curve_csv(path: &Path, points: &[TreesCurvePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    w.write_record(["n_trees", "train_rmse", "test_rmse"]).map_err(err)?;
    for p in points {
        w.write_record([
            p.n_trees.to_string(),
            p.train_rmse.to_string(),
            p.test_rmse.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Write `report.json` plus per-figure CSVs for every present section.
/// Returns the paths written. Output is byte-stable except for the
/// `meta.generated_at` field of report.json.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let report_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Schema(format!("report serialization failed: {e}")))?;
    write_file(&report_path, &json)?;
    written.push(report_path);

    let mut emit = |name: &str, action: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
        let path = out_dir.join(name);
        action(&path)?;
        written.push(path);
        Ok(())
    };

    if let Some(eda) = &report.eda {
        emit("price_hist.csv", &|p| write_histogram_csv(p, &eda.price_histogram))?;
        emit("log_price_hist.csv", &|p| {
            write_histogram_csv(p, &eda.log_price_histogram)
        })?;
        emit("bedrooms_hist.csv", &|p| {
            write_histogram_csv(p, &eda.bedrooms_histogram)
        })?;
        emit("heatmap.csv", &|p| write_heatmap_csv(p, &eda.heatmap))?;
        emit("correlations.csv", &|p| {
            let mut w = csv_writer(p)?;
            let err = |e: csv::Error| Error::Csv {
                path: p.to_path_buf(),
                message: e.to_string(),
            };
            let mut header = vec!["column".to_string()];
            header.extend(eda.correlations.columns.iter().cloned());
            w.write_record(&header).map_err(err)?;
            for (name, row) in eda.correlations.columns.iter().zip(&eda.correlations.matrix) {
                let mut record = vec![name.clone()];
                record.extend(
                    row.iter()
                        .map(|r| r.map(|v| v.to_string()).unwrap_or_default()),
                );
                w.write_record(&record).map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(p, e))?;
            Ok(())
        })?;
    }

    if let Some(baseline) = &report.baseline {
        emit("baseline_error_hist.csv", &|p| {
            write_histogram_csv(p, &baseline.error_histogram)
        })?;
        emit("baseline_error_buckets.csv", &|p| {
            write_buckets_csv(p, &baseline.error_buckets)
        })?;
    }

    if let Some(gate) = &report.gate {
        emit("gate_feature_distributions.csv", &|p| {
            let mut w = csv_writer(p)?;
            let err = |e: csv::Error| Error::Csv {
                path: p.to_path_buf(),
                message: e.to_string(),
            };
            w.write_record(["feature", "bin_low", "bin_high", "easy_count", "hard_count"])
                .map_err(err)?;
            for dist in &gate.feature_distributions {
                for i in 0..dist.easy_counts.len() {
                    w.write_record([
                        dist.feature.clone(),
                        dist.edges[i].to_string(),
                        dist.edges[i + 1].to_string(),
                        dist.easy_counts[i].to_string(),
                        dist.hard_counts[i].to_string(),
                    ])
                    .map_err(err)?;
                }
            }
            w.flush().map_err(|e| Error::io(p, e))?;
            Ok(())
        })?;
    }

    if let Some(search) = &report.search {
        emit("search_trials.csv", &|p| {
            let mut w = csv_writer(p)?;
            let err = |e: csv::Error| Error::Csv {
                path: p.to_path_buf(),
                message: e.to_string(),
            };
            w.write_record([
                "rank",
                "trial_index",
                "mean_score",
                "std_score",
                "n_estimators",
                "max_features",
                "max_depth",
                "min_samples_split",
                "min_samples_leaf",
                "bootstrap",
            ])
            .map_err(err)?;
            for t in &search.trials {
                w.write_record([
                    t.rank.to_string(),
                    t.trial_index.to_string(),
                    t.mean_score.to_string(),
                    t.std_score.to_string(),
                    t.params.n_estimators.to_string(),
                    t.params.max_features.to_string(),
                    t.params
                        .max_depth
                        .map(|d| d.to_string())
                        .unwrap_or_else(|| "none".to_string()),
                    t.params.min_samples_split.to_string(),
                    t.params.min_samples_leaf.to_string(),
                    t.params.bootstrap.to_string(),
                ])
                .map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(p, e))?;
            Ok(())
        })?;
    }

    if let Some(final_stage) = &report.final_stage {
        emit("final_error_buckets.csv", &|p| {
            write_buckets_csv(p, &final_stage.group_cv.error_buckets)
        })?;
        emit("feature_importances.csv", &|p| {
            let mut w = csv_writer(p)?;
            let err = |e: csv::Error| Error::Csv {
                path: p.to_path_buf(),
                message: e.to_string(),
            };
            w.write_record(["feature", "importance"]).map_err(err)?;
            for (name, importance) in &final_stage.feature_importances {
                w.write_record([name.clone(), importance.to_string()])
                    .map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(p, e))?;
            Ok(())
        })?;
    }

    if let Some(availability) = &report.availability {
        emit("availability_clusters.csv", &|p| {
            let mut w = csv_writer(p)?;
            let err = |e: csv::Error| Error::Csv {
                path: p.to_path_buf(),
                message: e.to_string(),
            };
            w.write_record([
                "window",
                "centroid_low",
                "centroid_high",
                "low_count",
                "high_count",
                "inertia",
                "degenerate",
            ])
            .map_err(err)?;
            for wnd in &availability.windows {
                w.write_record([
                    wnd.window.to_string(),
                    wnd.centroid_low.to_string(),
                    wnd.centroid_high.to_string(),
                    wnd.low_count.to_string(),
                    wnd.high_count.to_string(),
                    wnd.inertia.to_string(),
                    wnd.degenerate.to_string(),
                ])
                .map_err(err)?;
            }
            w.flush().map_err(|e| Error::io(p, e))?;
            Ok(())
        })?;
    }

    Ok(written)
}
