//! Per-listing row balancing: every listing ends up with exactly
//! `target_per_listing` rows, by cyclic repetition when it has too few and by
//! median-distance selection when it has too many.
//!
//! Groups are independent, so they may be balanced in parallel; the output
//! row order is always (listing_id ascending, selection rank), regardless of
//! schedule.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::exec;
use crate::features::FeatureMatrix;
use crate::matrix::MatrixView;
use crate::util;

/// Which end of the distance ranking survives downsampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleOrder {
    /// Keep the rows farthest from the group median (widest feature coverage).
    FarthestFromMedian,
    /// Keep the rows nearest to the group median.
    NearestToMedian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub target_per_listing: usize,
    pub downsample_order: DownsampleOrder,
    /// Column names the distance is computed over; `None` means all feature
    /// columns.
    pub distance_columns: Option<Vec<String>>,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            target_per_listing: 100,
            downsample_order: DownsampleOrder::FarthestFromMedian,
            distance_columns: None,
        }
    }
}

/// How each listing group was adjusted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub listings: usize,
    pub groups_upsampled: usize,
    pub groups_downsampled: usize,
    pub groups_unchanged: usize,
    pub rows_in: usize,
    pub rows_out: usize,
}

/// Independent per-column medians of the given matrix.
pub fn column_median(matrix: MatrixView<'_>) -> Vec<f64> {
    assert!(matrix.rows() >= 1, "median of empty matrix");
    (0..matrix.cols())
        .map(|j| {
            let mut col = matrix.column(j);
            util::median_in_place(&mut col)
        })
        .collect()
}

/// Cyclic repetition r1, r2, …, rk, r1, … truncated at `target`.
/// Returns positions into the group, so callers can materialize rows.
pub fn upsample_indices(count: usize, target: usize) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::InvalidArgument("cannot upsample zero rows".into()));
    }
    if count > target {
        return Err(Error::InvalidArgument(format!(
            "upsample requires count <= target, got {count} > {target}"
        )));
    }
    Ok((0..target).map(|i| i % count).collect())
}

/// Median-distance downsampling within one group.
///
/// Computes the per-column median row over `group_rows`, ranks rows by their
/// Euclidean distance to it (stable order: distance in the configured
/// direction, then original position ascending) and keeps the first `target`.
/// Returned positions are indices into `group_rows`, in rank order.
pub fn downsample_indices(
    matrix: MatrixView<'_>,
    group_rows: &[usize],
    target: usize,
    order: DownsampleOrder,
    distance_columns: &[usize],
) -> Result<Vec<usize>> {
    if group_rows.len() <= target {
        return Err(Error::InvalidArgument(format!(
            "downsample requires more rows than target, got {} <= {target}",
            group_rows.len()
        )));
    }

    let mut scratch = vec![0.0; group_rows.len()];
    let mut median = Vec::with_capacity(distance_columns.len());
    for &j in distance_columns {
        for (s, &row) in scratch.iter_mut().zip(group_rows) {
            let v = matrix.get(row, j);
            if !v.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite value in column {j} while downsampling"
                )));
            }
            *s = v;
        }
        median.push(util::median_in_place(&mut scratch));
    }

    // Squared distance orders the same as Euclidean distance.
    let dist2: Vec<f64> = group_rows
        .iter()
        .map(|&row| {
            distance_columns
                .iter()
                .zip(&median)
                .map(|(&j, &m)| {
                    let d = matrix.get(row, j) - m;
                    d * d
                })
                .sum()
        })
        .collect();

    let mut ranked: Vec<usize> = (0..group_rows.len()).collect();
    ranked.sort_by(|&a, &b| {
        let by_dist = match order {
            DownsampleOrder::FarthestFromMedian => dist2[b].total_cmp(&dist2[a]),
            DownsampleOrder::NearestToMedian => dist2[a].total_cmp(&dist2[b]),
        };
        by_dist.then(a.cmp(&b))
    });
    ranked.truncate(target);
    Ok(ranked)
}

/// Balance a matrix so every listing_id appears exactly
/// `target_per_listing` times. Groups are processed in ascending listing_id
/// order; within a group rows appear in selection order.
pub fn balance_dataset(
    matrix: &FeatureMatrix,
    config: &BalanceConfig,
) -> Result<(FeatureMatrix, BalanceSummary)> {
    if config.target_per_listing < 1 {
        return Err(Error::InvalidArgument(
            "target_per_listing must be at least 1".into(),
        ));
    }
    let distance_columns: Vec<usize> = match &config.distance_columns {
        None => (0..matrix.n_cols()).collect(),
        Some(names) => names
            .iter()
            .map(|n| {
                matrix.column_index(n).ok_or_else(|| {
                    Error::InvalidArgument(format!("unknown distance column {n:?}"))
                })
            })
            .collect::<Result<_>>()?,
    };

    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &id) in matrix.listing_ids.iter().enumerate() {
        groups.entry(id).or_default().push(i);
    }
    let groups: Vec<(u64, Vec<usize>)> = groups.into_iter().collect();

    let view = matrix.view();
    let target = config.target_per_listing;
    let selected: Vec<Result<Vec<usize>>> = exec::map_slice(&groups, |(_, rows)| {
        if rows.len() == target {
            Ok(rows.clone())
        } else if rows.len() < target {
            Ok(upsample_indices(rows.len(), target)?
                .into_iter()
                .map(|p| rows[p])
                .collect())
        } else {
            Ok(downsample_indices(
                view,
                rows,
                target,
                config.downsample_order,
                &distance_columns,
            )?
            .into_iter()
            .map(|p| rows[p])
            .collect())
        }
    });

    let mut summary = BalanceSummary {
        listings: groups.len(),
        rows_in: matrix.n_rows(),
        ..BalanceSummary::default()
    };
    let mut order = Vec::with_capacity(groups.len() * target);
    for ((_, rows), picked) in groups.iter().zip(selected) {
        let picked = picked?;
        match rows.len().cmp(&target) {
            std::cmp::Ordering::Less => summary.groups_upsampled += 1,
            std::cmp::Ordering::Equal => summary.groups_unchanged += 1,
            std::cmp::Ordering::Greater => summary.groups_downsampled += 1,
        }
        order.extend(picked);
    }
    summary.rows_out = order.len();
    Ok((matrix.take_rows(&order), summary))
}
