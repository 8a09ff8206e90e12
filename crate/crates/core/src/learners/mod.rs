//! From-scratch learners: ordinary least squares, CART decision trees and
//! bagged random forests for regression and classification.
//!
//! Fitting is deterministic under a seed. Each tree draws its randomness from
//! an RNG stream derived only from (seed, tree index), so training may run in
//! parallel without changing the result.

mod forest;
mod linear;
mod tree;

pub use forest::Forest;
pub use linear::{fit_ols, LinearModel};
pub use tree::{best_split, fit_tree, SplitCandidate, Target, TreeNode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

/// Number of candidate features drawn at each split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// All features for regression, ⌈√p⌉ for classification.
    Auto,
    /// ⌈√p⌉ for both tasks.
    Sqrt,
}

impl MaxFeatures {
    pub fn resolve(self, n_features: usize, task: Task) -> usize {
        let sqrt = (n_features as f64).sqrt().ceil() as usize;
        match (self, task) {
            (MaxFeatures::Auto, Task::Regression) => n_features,
            (MaxFeatures::Auto, Task::Classification) => sqrt.max(1),
            (MaxFeatures::Sqrt, _) => sqrt.max(1),
        }
    }
}

impl std::fmt::Display for MaxFeatures {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaxFeatures::Auto => write!(f, "auto"),
            MaxFeatures::Sqrt => write!(f, "sqrt"),
        }
    }
}

/// Forest hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperParams {
    pub n_estimators: usize,
    pub max_features: MaxFeatures,
    /// `None` grows until the other stopping rules bite.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            n_estimators: 100,
            max_features: MaxFeatures::Auto,
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1,
            bootstrap: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators < 1 {
            return Err(Error::InvalidArgument("n_estimators must be >= 1".into()));
        }
        if self.min_samples_split < 2 {
            return Err(Error::InvalidArgument(
                "min_samples_split must be >= 2".into(),
            ));
        }
        if self.min_samples_leaf < 1 {
            return Err(Error::InvalidArgument(
                "min_samples_leaf must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn with_n_estimators(mut self, n: usize) -> Self {
        self.n_estimators = n;
        self
    }

    /// Python-dict rendering used by the search report, e.g.
    /// `{'n_estimators': 131, 'min_samples_split': 5, ...}`.
    pub fn python_dict(&self) -> String {
        format!(
            "{{'n_estimators': {}, 'min_samples_split': {}, 'min_samples_leaf': {}, 'max_features': '{}', 'max_depth': {}, 'bootstrap': {}}}",
            self.n_estimators,
            self.min_samples_split,
            self.min_samples_leaf,
            self.max_features,
            match self.max_depth {
                Some(d) => d.to_string(),
                None => "None".to_string(),
            },
            if self.bootstrap { "True" } else { "False" },
        )
    }
}
