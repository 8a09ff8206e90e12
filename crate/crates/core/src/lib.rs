//! Price and availability modelling for short-stay listing snapshots.
//!
//! The crate turns scraped listing/calendar CSV snapshots into two artifacts:
//!
//! 1. a nightly-price model — an OLS baseline, an easy/hard gating classifier,
//!    per-listing dataset balancing and a hyperparameter-tuned random forest
//!    regressor trained on the log price;
//! 2. an availability model — per-window 1-D k-means low/high clustering and a
//!    multinomial Naive Bayes classifier over zipcode and room type.
//!
//! All learners are implemented here from first principles and every random
//! choice is driven by an explicit seed, so a run is reproducible bit for bit.
//! With the default `parallel` feature the data-parallel inner loops (tree
//! fitting, search trials, group balancing) run on rayon; without it the same
//! code runs sequentially and produces identical output.
//!
//! Module map:
//!
//! - [`ingest`] — CSV loading, cleaning and drop accounting
//! - [`features`] — outlier filtering, log transforms, one-hot encoding
//! - [`balance`] — per-listing upsampling / median-distance downsampling
//! - [`learners`] — OLS, CART trees and bagged forests
//! - [`select`] — k-fold CV, R² and randomized hyperparameter search
//! - [`prob`] — 1-D k-means and multinomial Naive Bayes
//! - [`pipelines`] — end-to-end price and availability runs
//! - [`report`] — metrics, histograms, heatmap grids and the run report

pub mod balance;
pub mod error;
pub mod features;
pub mod ingest;
pub mod learners;
pub mod matrix;
pub mod pipelines;
pub mod prob;
pub mod report;
pub mod select;

mod exec;
mod util;

pub use error::{Error, Result};
pub use matrix::MatrixView;

/// Whether this build runs its data-parallel loops on rayon.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
