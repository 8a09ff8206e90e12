//! Run configuration: defaults, optional JSON config file, flag overrides.
//! Precedence is defaults < config file < command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use bnb_core::balance::{BalanceConfig, DownsampleOrder};
use bnb_core::error::{Error, Result};
use bnb_core::features::OutlierRules;
use bnb_core::ingest::Schema;
use bnb_core::learners::MaxFeatures;
use bnb_core::pipelines::{FoldMode, Hypothesis1Config, Hypothesis2Config};
use bnb_core::select::SearchSpace;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TREES_LIST: [usize; 8] = [1, 2, 5, 10, 20, 50, 100, 200];

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SearchOverride {
    /// Inclusive [min, max].
    pub n_estimators: Option<[usize; 2]>,
    pub max_features: Option<Vec<MaxFeatures>>,
    /// `null` entries mean unbounded depth.
    pub max_depth: Option<Vec<Option<usize>>>,
    pub min_samples_split: Option<Vec<usize>>,
    pub min_samples_leaf: Option<Vec<usize>>,
    pub bootstrap: Option<Vec<bool>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierOverride {
    pub price_upper_quantile: Option<f64>,
    pub max_bedrooms: Option<u32>,
}

/// The JSON config file format; every field optional.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub listings: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub outlier: Option<OutlierOverride>,
    pub target_per_listing: Option<usize>,
    pub downsample_order: Option<DownsampleOrder>,
    pub distance_columns: Option<Vec<String>>,
    pub gate_threshold_usd: Option<f64>,
    pub n_iter: Option<usize>,
    pub folds: Option<usize>,
    pub fold_mode: Option<FoldMode>,
    pub window: Option<u32>,
    pub alpha: Option<f64>,
    pub train_easy_only: Option<bool>,
    pub trees: Option<Vec<usize>>,
    pub search: Option<SearchOverride>,
    /// Canonical column name -> actual CSV header.
    pub columns: Option<BTreeMap<String, String>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("config file {}: {e}", path.display())))
    }
}

/// Flag values as parsed; `None` means "not given on the command line".
#[derive(Clone, Debug, Default)]
pub struct FlagOverrides {
    pub listings: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub target_per_listing: Option<usize>,
    pub downsample_order: Option<DownsampleOrder>,
    pub gate_threshold_usd: Option<f64>,
    pub n_iter: Option<usize>,
    pub folds: Option<usize>,
    pub fold_mode: Option<FoldMode>,
    pub window: Option<u32>,
    pub train_easy_only: bool,
    pub trees: Option<Vec<usize>>,
}

/// Fully resolved configuration for one command run.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub listings: Option<PathBuf>,
    pub calendar: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub schema: Schema,
    pub trees_list: Vec<usize>,
    pub price: Hypothesis1Config,
    pub availability: Hypothesis2Config,
}

pub fn resolve(file: FileConfig, flags: FlagOverrides) -> Result<RunConfig> {
    let seed = flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED);

    let mut outlier_rules = OutlierRules::default();
    if let Some(outlier) = &file.outlier {
        if let Some(q) = outlier.price_upper_quantile {
            outlier_rules.price_upper_quantile = q;
        }
        if let Some(b) = outlier.max_bedrooms {
            outlier_rules.max_bedrooms = b;
        }
    }

    let balance = BalanceConfig {
        target_per_listing: flags
            .target_per_listing
            .or(file.target_per_listing)
            .unwrap_or(100),
        downsample_order: flags
            .downsample_order
            .or(file.downsample_order)
            .unwrap_or(DownsampleOrder::FarthestFromMedian),
        distance_columns: file.distance_columns.clone(),
    };

    let mut search_space = SearchSpace::default();
    if let Some(search) = &file.search {
        if let Some([lo, hi]) = search.n_estimators {
            search_space.n_estimators = (lo, hi);
        }
        if let Some(v) = &search.max_features {
            search_space.max_features = v.clone();
        }
        if let Some(v) = &search.max_depth {
            search_space.max_depth = v.clone();
        }
        if let Some(v) = &search.min_samples_split {
            search_space.min_samples_split = v.clone();
        }
        if let Some(v) = &search.min_samples_leaf {
            search_space.min_samples_leaf = v.clone();
        }
        if let Some(v) = &search.bootstrap {
            search_space.bootstrap = v.clone();
        }
    }
    search_space.validate()?;

    let window = flags.window.or(file.window).unwrap_or(365);
    if ![30, 60, 90, 365].contains(&window) {
        return Err(Error::InvalidArgument(format!(
            "--window must be 30, 60, 90 or 365, got {window}"
        )));
    }

    let mut schema = Schema::default();
    if let Some(columns) = &file.columns {
        for (canonical, actual) in columns {
            schema = schema.with_column(canonical, actual);
        }
    }

    let price = Hypothesis1Config {
        seed,
        outlier_rules,
        balance,
        gate_threshold_usd: flags
            .gate_threshold_usd
            .or(file.gate_threshold_usd)
            .unwrap_or(30.0),
        n_iter: flags.n_iter.or(file.n_iter).unwrap_or(100),
        k_folds: flags.folds.or(file.folds).unwrap_or(10),
        fold_mode: flags.fold_mode.or(file.fold_mode).unwrap_or(FoldMode::Row),
        train_easy_only: flags.train_easy_only || file.train_easy_only.unwrap_or(false),
        search_space,
        ..Hypothesis1Config::default()
    };

    let availability = Hypothesis2Config {
        seed,
        window,
        alpha: file.alpha.unwrap_or(1.0),
    };

    Ok(RunConfig {
        listings: flags.listings.or(file.listings),
        calendar: flags.calendar.or(file.calendar),
        out: flags.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
        seed,
        schema,
        trees_list: flags
            .trees
            .or(file.trees)
            .unwrap_or_else(|| DEFAULT_TREES_LIST.to_vec()),
        price,
        availability,
    })
}

impl RunConfig {
    pub fn listings_path(&self) -> Result<&Path> {
        self.listings.as_deref().ok_or_else(|| {
            Error::InvalidArgument(
                "no listings file given (use --listings PATH or the config file)".into(),
            )
        })
    }

}
