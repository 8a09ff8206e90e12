//! Feature engineering: outlier filtering, log transforms, one-hot encoding
//! with frozen vocabularies, calendar-derived flags and correlation screening.
//!
//! Encoding is fit-then-transform: [`fit_encoding`] freezes vocabularies and
//! column choices from the training records, and [`encode`] applies the frozen
//! spec so train-time and predict-time matrices line up column for column.

use chrono::{Datelike, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CalendarEntry, DropReport, ListingRecord};
use crate::matrix::MatrixView;
use crate::util;

/// Per-column numeric transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log1p,
}

/// Row-exclusion rules applied before encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierRules {
    /// Rows with price above this empirical quantile are removed.
    pub price_upper_quantile: f64,
    /// Rows with more bedrooms than this are removed.
    pub max_bedrooms: u32,
}

impl Default for OutlierRules {
    fn default() -> Self {
        OutlierRules {
            price_upper_quantile: 0.95,
            max_bedrooms: 4,
        }
    }
}

/// Frozen description of how records become a numeric matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub numeric_columns: Vec<(String, Transform)>,
    /// (column, frozen vocabulary); unseen values map to the `__other__` slot.
    pub categorical_columns: Vec<(String, Vec<String>)>,
    pub outlier_rules: OutlierRules,
    pub impute_absent_fee_as_zero: bool,
    /// Emit a 1–12 month column derived from the row's snapshot date.
    pub include_month: bool,
}

/// Numeric design matrix plus aligned target and grouping columns.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_cols: usize,
    pub column_names: Vec<String>,
    /// log1p of the USD nightly price.
    pub target: Vec<f64>,
    pub listing_ids: Vec<u64>,
    /// Either empty (no dates available) or one entry per row.
    pub row_dates: Vec<Option<NaiveDate>>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn view(&self) -> MatrixView<'_> {
        MatrixView::new(&self.values, self.n_cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Build a new matrix from the given row indices, in order. Indices may
    /// repeat, which is how upsampling duplicates rows.
    pub fn take_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.n_cols);
        let mut target = Vec::with_capacity(indices.len());
        let mut listing_ids = Vec::with_capacity(indices.len());
        let mut row_dates = Vec::with_capacity(if self.row_dates.is_empty() {
            0
        } else {
            indices.len()
        });
        for &i in indices {
            values.extend_from_slice(self.row(i));
            target.push(self.target[i]);
            listing_ids.push(self.listing_ids[i]);
            if !self.row_dates.is_empty() {
                row_dates.push(self.row_dates[i]);
            }
        }
        FeatureMatrix {
            values,
            n_cols: self.n_cols,
            column_names: self.column_names.clone(),
            target,
            listing_ids,
            row_dates,
        }
    }

    /// Assemble from parts; used by tests and synthetic-data generators.
    pub fn from_parts(
        values: Vec<f64>,
        column_names: Vec<String>,
        target: Vec<f64>,
        listing_ids: Vec<u64>,
        row_dates: Vec<Option<NaiveDate>>,
    ) -> FeatureMatrix {
        let n_cols = column_names.len();
        assert!(n_cols > 0, "feature matrix needs at least one column");
        assert_eq!(values.len() % n_cols, 0);
        let n_rows = values.len() / n_cols;
        assert_eq!(target.len(), n_rows);
        assert_eq!(listing_ids.len(), n_rows);
        assert!(row_dates.is_empty() || row_dates.len() == n_rows);
        FeatureMatrix {
            values,
            n_cols,
            column_names,
            target,
            listing_ids,
            row_dates,
        }
    }
}

/// ln(1 + x), defined for x ≥ 0.
pub fn log1p_transform(x: f64) -> Result<f64> {
    if x < 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("log1p undefined for {x}")));
    }
    Ok(x.ln_1p())
}

/// Empirical q-quantile (inverse-CDF convention): the smallest value with at
/// least a q fraction of the sample at or below it.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len() as f64;
    // Guard against q*n landing a hair above an exact integer.
    let idx = ((q * n - 1e-9).ceil() as usize).saturating_sub(1);
    sorted[idx.min(sorted.len() - 1)]
}

/// Remove price and bedroom outliers. Rows with price above the
/// `price_upper_quantile` of the observed prices or with more than
/// `max_bedrooms` bedrooms are dropped and counted.
pub fn filter_outliers(
    records: &[ListingRecord],
    rules: &OutlierRules,
) -> Result<(Vec<ListingRecord>, DropReport)> {
    if !(rules.price_upper_quantile > 0.5 && rules.price_upper_quantile <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "price_upper_quantile must be in (0.5, 1], got {}",
            rules.price_upper_quantile
        )));
    }
    let mut report = DropReport::default();
    if records.is_empty() {
        return Ok((Vec::new(), report));
    }
    let mut prices: Vec<f64> = records.iter().map(|r| r.price).collect();
    prices.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let cutoff = quantile(&prices, rules.price_upper_quantile);

    let mut kept = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if r.price > cutoff {
            report.record(
                "price_outlier",
                format!("row {i}: price {} above {cutoff}", r.price),
            );
        } else if r.bedrooms > rules.max_bedrooms {
            report.record(
                "bedrooms_outlier",
                format!("row {i}: {} bedrooms above {}", r.bedrooms, rules.max_bedrooms),
            );
        } else {
            kept.push(r.clone());
        }
    }
    Ok((kept, report))
}

const FEE_COLUMNS: [&str; 3] = ["cleaning_fee", "security_deposit", "extra_people"];

fn default_numeric_columns() -> Vec<(String, Transform)> {
    [
        ("bedrooms", Transform::Identity),
        ("bathrooms", Transform::Identity),
        ("accommodates", Transform::Identity),
        ("cleaning_fee", Transform::Log1p),
        ("security_deposit", Transform::Log1p),
        ("extra_people", Transform::Log1p),
        ("latitude", Transform::Identity),
        ("longitude", Transform::Identity),
        ("availability_30", Transform::Identity),
        ("availability_60", Transform::Identity),
        ("availability_90", Transform::Identity),
        ("availability_365", Transform::Identity),
    ]
    .into_iter()
    .map(|(n, t)| (n.to_string(), t))
    .collect()
}

fn sorted_unique(values: impl Iterator<Item = String>) -> Vec<String> {
    let mut v: Vec<String> = values.collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Collect vocabularies and column choices from training records.
/// Vocabularies are sorted so the same data always yields the same spec.
pub fn fit_encoding(records: &[ListingRecord]) -> EncodingSpec {
    let mut categorical_columns = vec![
        (
            "room_type".to_string(),
            sorted_unique(records.iter().map(|r| r.room_type.clone())),
        ),
        (
            "zipcode".to_string(),
            sorted_unique(records.iter().map(|r| r.zipcode.clone())),
        ),
    ];
    if records.iter().any(|r| r.neighborhood.is_some()) {
        categorical_columns.push((
            "neighborhood".to_string(),
            sorted_unique(records.iter().filter_map(|r| r.neighborhood.clone())),
        ));
    }
    EncodingSpec {
        numeric_columns: default_numeric_columns(),
        categorical_columns,
        outlier_rules: OutlierRules::default(),
        impute_absent_fee_as_zero: true,
        include_month: !records.is_empty() && records.iter().all(|r| r.snapshot_date.is_some()),
    }
}

impl EncodingSpec {
    /// Output column names, in matrix order.
    pub fn output_columns(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .numeric_columns
            .iter()
            .map(|(n, _)| n.clone())
            .collect();
        if self.include_month {
            names.push("month".to_string());
        }
        for (col, vocab) in &self.categorical_columns {
            for v in vocab {
                names.push(format!("{col}={v}"));
            }
            names.push(format!("{col}=__other__"));
        }
        names
    }

    pub fn n_output_columns(&self) -> usize {
        self.numeric_columns.len()
            + usize::from(self.include_month)
            + self
                .categorical_columns
                .iter()
                .map(|(_, vocab)| vocab.len() + 1)
                .sum::<usize>()
    }

    /// Indices of the non-one-hot output columns (numeric + month).
    pub fn dense_column_range(&self) -> std::ops::Range<usize> {
        0..self.numeric_columns.len() + usize::from(self.include_month)
    }
}

fn numeric_field(record: &ListingRecord, name: &str) -> Option<Option<f64>> {
    // Outer None: unknown column. Inner None: value absent on this record.
    Some(match name {
        "bedrooms" => Some(record.bedrooms as f64),
        "bathrooms" => Some(record.bathrooms),
        "accommodates" => Some(record.accommodates as f64),
        "cleaning_fee" => record.cleaning_fee,
        "security_deposit" => record.security_deposit,
        "extra_people" => record.extra_people,
        "latitude" => Some(record.latitude),
        "longitude" => Some(record.longitude),
        "availability_30" => Some(record.availability_30 as f64),
        "availability_60" => Some(record.availability_60 as f64),
        "availability_90" => Some(record.availability_90 as f64),
        "availability_365" => Some(record.availability_365 as f64),
        _ => return None,
    })
}

fn categorical_field<'a>(record: &'a ListingRecord, name: &str) -> Option<Option<&'a str>> {
    Some(match name {
        "room_type" => Some(record.room_type.as_str()),
        "zipcode" => Some(record.zipcode.as_str()),
        "neighborhood" => record.neighborhood.as_deref(),
        _ => return None,
    })
}

/// Apply a frozen [`EncodingSpec`] to cleaned records.
///
/// Numeric columns are transformed per spec (absent fees become 0 when the
/// impute flag is set), categoricals are one-hot over the frozen vocabulary
/// plus an `__other__` slot, and the target is log1p(price).
pub fn encode(records: &[ListingRecord], spec: &EncodingSpec) -> Result<FeatureMatrix> {
    let n_cols = spec.n_output_columns();
    let mut values = Vec::with_capacity(records.len() * n_cols);
    let mut target = Vec::with_capacity(records.len());
    let mut listing_ids = Vec::with_capacity(records.len());
    let all_dated = spec.include_month;
    let mut row_dates = Vec::new();

    for (i, record) in records.iter().enumerate() {
        for (name, transform) in &spec.numeric_columns {
            let raw = numeric_field(record, name).ok_or_else(|| {
                Error::Schema(format!("encoding references unknown column {name:?}"))
            })?;
            let raw = match raw {
                Some(v) => v,
                None if spec.impute_absent_fee_as_zero && FEE_COLUMNS.contains(&name.as_str()) => {
                    0.0
                }
                None => {
                    return Err(Error::Schema(format!(
                        "record {i} (listing {}) is missing value for column {name:?}",
                        record.listing_id
                    )))
                }
            };
            let v = match transform {
                Transform::Identity => raw,
                Transform::Log1p => log1p_transform(raw).map_err(|e| {
                    Error::Domain(format!(
                        "record {i} (listing {}), column {name:?}: {e}",
                        record.listing_id
                    ))
                })?,
            };
            values.push(v);
        }
        if spec.include_month {
            match record.snapshot_date {
                Some(d) => values.push(d.month() as f64),
                None => {
                    return Err(Error::Schema(format!(
                        "record {i} (listing {}) has no snapshot_date but the encoding includes a month column",
                        record.listing_id
                    )))
                }
            }
        }
        for (col, vocab) in &spec.categorical_columns {
            let value = categorical_field(record, col).ok_or_else(|| {
                Error::Schema(format!("encoding references unknown column {col:?}"))
            })?;
            let hit = value.and_then(|v| vocab.binary_search(&v.to_string()).ok());
            for j in 0..vocab.len() {
                values.push(if hit == Some(j) { 1.0 } else { 0.0 });
            }
            values.push(if hit.is_none() { 1.0 } else { 0.0 });
        }
        target.push(log1p_transform(record.price)?);
        listing_ids.push(record.listing_id);
        if all_dated {
            row_dates.push(record.snapshot_date);
        }
    }

    Ok(FeatureMatrix {
        values,
        n_cols,
        column_names: spec.output_columns(),
        target,
        listing_ids,
        row_dates,
    })
}

/// A stay night counts as weekend when it is a Friday or Saturday.
pub fn weekend_flag(date: NaiveDate) -> bool {
    is_weekend(date, &[Weekday::Fri, Weekday::Sat])
}

pub fn is_weekend(date: NaiveDate, weekend_days: &[Weekday]) -> bool {
    weekend_days.contains(&date.weekday())
}

/// Median nightly price for weekday vs weekend calendar entries.
///
/// With `balance` set, the larger class is uniformly subsampled (seeded) to
/// the size of the smaller before taking medians, so class imbalance cannot
/// tilt the comparison.
pub fn weekend_median_comparison(
    entries: &[CalendarEntry],
    balance: bool,
    seed: u64,
) -> Result<(f64, f64)> {
    let mut weekday = Vec::new();
    let mut weekend = Vec::new();
    for e in entries {
        if let Some(price) = e.price {
            if weekend_flag(e.date) {
                weekend.push(price);
            } else {
                weekday.push(price);
            }
        }
    }
    if weekday.is_empty() {
        return Err(Error::Domain("no priced weekday entries".to_string()));
    }
    if weekend.is_empty() {
        return Err(Error::Domain("no priced weekend entries".to_string()));
    }

    if balance && weekday.len() != weekend.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = weekday.len().min(weekend.len());
        let larger = if weekday.len() > weekend.len() {
            &mut weekday
        } else {
            &mut weekend
        };
        let mut picked: Vec<usize> =
            rand::seq::index::sample(&mut rng, larger.len(), target).into_vec();
        picked.sort_unstable();
        *larger = picked.iter().map(|&i| larger[i]).collect();
    }

    Ok((
        util::median_in_place(&mut weekday),
        util::median_in_place(&mut weekend),
    ))
}

/// Sample Pearson correlation coefficient.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least 2 points".to_string(),
        ));
    }
    let x_mean = util::mean(x);
    let y_mean = util::mean(y);
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - x_mean;
        let dy = yi - y_mean;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "correlation of a constant vector".to_string(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Pairwise correlations of named columns; `None` where undefined
/// (constant column).
pub fn correlation_matrix(columns: &[(String, Vec<f64>)]) -> Vec<Vec<Option<f64>>> {
    let k = columns.len();
    let mut out = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let r = pearson_correlation(&columns[i].1, &columns[j].1).ok();
            out[i][j] = r;
            out[j][i] = r;
        }
    }
    out
}
