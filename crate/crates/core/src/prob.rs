//! Availability learners: 1-D k-means for low/high clustering and a
//! multinomial Naive Bayes classifier over categorical features.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Availability fraction: bookable days over the window length.
pub fn normalize_availability(days: u32, window: u32) -> Result<f64> {
    if ![30, 60, 90, 365].contains(&window) {
        return Err(Error::InvalidArgument(format!(
            "window must be one of 30/60/90/365, got {window}"
        )));
    }
    if days > window {
        return Err(Error::Domain(format!(
            "{days} available days exceed the {window}-day window"
        )));
    }
    Ok(days as f64 / window as f64)
}

/// Result of Lloyd's algorithm on 1-D data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// Sorted ascending, so index 0 is the "low" cluster.
    pub centroids: Vec<f64>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia recorded after each assignment pass; non-increasing.
    pub inertia_trace: Vec<f64>,
    /// Set when the data had fewer distinct values than k, which forces
    /// duplicated centroids.
    pub degenerate: bool,
}

fn nearest(centroids: &[f64], v: f64) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = (v - centroids[0]) * (v - centroids[0]);
    for (c, &centroid) in centroids.iter().enumerate().skip(1) {
        let d = (v - centroid) * (v - centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    (best, best_d)
}

/// Distance-weighted (k-means++ style) seeded initialization.
fn seed_centroids(values: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = values.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(values[rng.random_range(0..n)]);
    while centroids.len() < k {
        let weights: Vec<f64> = values
            .iter()
            .map(|&v| nearest(&centroids, v).1)
            .collect();
        let total: f64 = weights.iter().sum();
        if total == 0.0 {
            // every point coincides with a centroid; any pick duplicates
            centroids.push(values[rng.random_range(0..n)]);
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut chosen = n - 1;
        for (i, &w) in weights.iter().enumerate() {
            r -= w;
            if r <= 0.0 {
                chosen = i;
                break;
            }
        }
        centroids.push(values[chosen]);
    }
    centroids
}

/// Lloyd iterations on 1-D values from a seeded k-means++ start.
///
/// Converges when the largest centroid movement drops below `tol` or after
/// `max_iter` passes. An emptied cluster is reseeded to the point currently
/// farthest from its own centroid. Centroids come back sorted ascending with
/// assignments relabeled to match.
pub fn kmeans_1d(
    values: &[f64],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<KMeansResult> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if values.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need at least k={k} points, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite value in clustering input".into()));
    }
    let n = values.len();
    let mut distinct = values.to_vec();
    distinct.sort_unstable_by(|a, b| a.total_cmp(b));
    distinct.dedup();
    let degenerate = distinct.len() < k;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(values, k, &mut rng);
    let mut assignments = vec![0usize; n];
    let mut inertia = f64::INFINITY;
    let mut inertia_trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;

        // assignment pass (ties to the lower centroid index)
        let mut new_inertia = 0.0;
        for (i, &v) in values.iter().enumerate() {
            let (c, d) = nearest(&centroids, v);
            assignments[i] = c;
            new_inertia += d;
        }
        debug_assert!(new_inertia <= inertia * (1.0 + 1e-9) + 1e-12);
        inertia = new_inertia;
        inertia_trace.push(inertia);

        // update pass
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (i, &v) in values.iter().enumerate() {
            sums[assignments[i]] += v;
            counts[assignments[i]] += 1;
        }
        let mut new_centroids = centroids.clone();
        for c in 0..k {
            if counts[c] > 0 {
                new_centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        // reseed empty clusters to the point farthest from its centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = 0usize;
            let mut far_d = -1.0;
            for (i, &v) in values.iter().enumerate() {
                if counts[assignments[i]] <= 1 {
                    continue; // stealing the last member would empty another cluster
                }
                let d = (v - new_centroids[assignments[i]]) * (v - new_centroids[assignments[i]]);
                if d > far_d {
                    far = i;
                    far_d = d;
                }
            }
            counts[assignments[far]] -= 1;
            counts[c] = 1;
            new_centroids[c] = values[far];
            assignments[far] = c;
        }

        let movement = centroids
            .iter()
            .zip(&new_centroids)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        centroids = new_centroids;
        if movement < tol {
            break;
        }
    }

    // final assignment against the converged centroids
    let mut final_inertia = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let (c, d) = nearest(&centroids, v);
        assignments[i] = c;
        final_inertia += d;
    }
    inertia_trace.push(final_inertia);

    // sort centroids ascending and relabel
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
    let sorted_centroids: Vec<f64> = order.iter().map(|&c| centroids[c]).collect();
    let mut relabel = vec![0usize; k];
    for (new_idx, &old_idx) in order.iter().enumerate() {
        relabel[old_idx] = new_idx;
    }
    for a in assignments.iter_mut() {
        *a = relabel[*a];
    }

    let degenerate = degenerate || sorted_centroids.windows(2).any(|w| w[0] == w[1]);
    Ok(KMeansResult {
        centroids: sorted_centroids,
        assignments,
        inertia: final_inertia,
        iterations,
        inertia_trace,
        degenerate,
    })
}

/// Availability band from a k=2 clustering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Low,
    High,
}

impl std::fmt::Display for Band {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Band::Low => write!(f, "low"),
            Band::High => write!(f, "high"),
        }
    }
}

/// Map a two-cluster result onto low/high labels: the smaller centroid is
/// low, the larger high.
pub fn split_low_high(result: &KMeansResult) -> Result<Vec<Band>> {
    if result.centroids.len() != 2 {
        return Err(Error::InvalidArgument(format!(
            "low/high split needs exactly 2 clusters, got {}",
            result.centroids.len()
        )));
    }
    Ok(result
        .assignments
        .iter()
        .map(|&a| if a == 0 { Band::Low } else { Band::High })
        .collect())
}

/// Multinomial Naive Bayes over categorical feature tuples with additive
/// smoothing. Unseen categories at predict time use a smoothed `other` slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbModel {
    /// Sorted class names.
    pub class_labels: Vec<String>,
    pub class_log_priors: Vec<f64>,
    pub features: Vec<NbFeature>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbFeature {
    /// Sorted category vocabulary seen at fit time.
    pub vocab: Vec<String>,
    /// Per class: log likelihood per vocab slot, final slot = unseen.
    pub log_likelihood: Vec<Vec<f64>>,
}

impl NbModel {
    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.class_labels.binary_search_by(|l| l.as_str().cmp(label)).ok()
    }

    fn row_log_scores(&self, row: &[String]) -> Vec<f64> {
        let mut scores = self.class_log_priors.clone();
        for (feature, value) in self.features.iter().zip(row) {
            let slot = feature
                .vocab
                .binary_search(value)
                .unwrap_or(feature.vocab.len());
            for (s, table) in scores.iter_mut().zip(&feature.log_likelihood) {
                *s += table[slot];
            }
        }
        scores
    }

    /// Posterior probabilities per class, normalized in log space.
    pub fn predict_log_posteriors(&self, row: &[String]) -> Vec<f64> {
        let scores = self.row_log_scores(row);
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max
            + scores
                .iter()
                .map(|s| (s - max).exp())
                .sum::<f64>()
                .ln();
        scores.iter().map(|s| s - log_norm).collect()
    }

    pub fn predict_posteriors(&self, row: &[String]) -> Vec<f64> {
        self.predict_log_posteriors(row)
            .iter()
            .map(|l| l.exp())
            .collect()
    }

    /// Argmax class; ties go to the larger prior, then the lower label index.
    pub fn predict_row(&self, row: &[String]) -> &str {
        let scores = self.row_log_scores(row);
        let mut best = 0;
        for c in 1..scores.len() {
            let better = scores[c] > scores[best]
                || (scores[c] == scores[best]
                    && self.class_log_priors[c] > self.class_log_priors[best]);
            if better {
                best = c;
            }
        }
        &self.class_labels[best]
    }

    pub fn predict(&self, rows: &[Vec<String>]) -> Vec<String> {
        rows.iter().map(|r| self.predict_row(r).to_string()).collect()
    }
}

/// Fit the smoothed categorical NB model.
///
/// Priors are plain class frequencies; each feature's per-class category
/// probability is (count + alpha) / (class_count + alpha · (|vocab| + 1)),
/// the +1 covering the unseen slot.
pub fn fit_multinomial_nb(
    rows: &[Vec<String>],
    labels: &[String],
    alpha: f64,
) -> Result<NbModel> {
    if alpha <= 0.0 {
        return Err(Error::InvalidArgument("alpha must be positive".into()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    if rows.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "row/label mismatch: {} vs {}",
            rows.len(),
            labels.len()
        )));
    }
    let arity = rows[0].len();
    if rows.iter().any(|r| r.len() != arity) {
        return Err(Error::InvalidArgument(
            "rows have inconsistent feature counts".into(),
        ));
    }

    let mut class_labels: Vec<String> = labels.to_vec();
    class_labels.sort_unstable();
    class_labels.dedup();
    let class_of = |label: &String| class_labels.binary_search(label).expect("known label");
    let n_classes = class_labels.len();

    let mut class_counts = vec![0usize; n_classes];
    for label in labels {
        class_counts[class_of(label)] += 1;
    }
    let total = labels.len() as f64;
    let class_log_priors: Vec<f64> = class_counts
        .iter()
        .map(|&c| (c as f64 / total).ln())
        .collect();

    let mut features = Vec::with_capacity(arity);
    for f in 0..arity {
        let mut vocab: Vec<String> = rows.iter().map(|r| r[f].clone()).collect();
        vocab.sort_unstable();
        vocab.dedup();
        let slots = vocab.len() + 1;

        let mut counts = vec![vec![0u64; slots]; n_classes];
        for (row, label) in rows.iter().zip(labels) {
            let slot = vocab.binary_search(&row[f]).expect("fit-time category");
            counts[class_of(label)][slot] += 1;
        }
        let log_likelihood: Vec<Vec<f64>> = counts
            .iter()
            .zip(&class_counts)
            .map(|(per_class, &class_count)| {
                let denom = class_count as f64 + alpha * slots as f64;
                per_class
                    .iter()
                    .map(|&c| ((c as f64 + alpha) / denom).ln())
                    .collect()
            })
            .collect();
        features.push(NbFeature {
            vocab,
            log_likelihood,
        });
    }

    Ok(NbModel {
        class_labels,
        class_log_priors,
        features,
        alpha,
    })
}

/// The always-predict-the-most-frequent-class baseline: its label and its
/// empirical accuracy. Ties go to the lexicographically smaller label.
pub fn majority_baseline(labels: &[String]) -> Result<(String, f64)> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labels".into()));
    }
    let mut counts = std::collections::BTreeMap::new();
    for label in labels {
        *counts.entry(label.clone()).or_insert(0usize) += 1;
    }
    let (label, count) = counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .unwrap();
    Ok((label, count as f64 / labels.len() as f64))
}

/// Fraction of predictions matching the truth.
pub fn accuracy(truth: &[String], predicted: &[String]) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::InvalidArgument(
            "accuracy needs equal, nonempty label vectors".into(),
        ));
    }
    let hits = truth
        .iter()
        .zip(predicted)
        .filter(|(t, p)| t == p)
        .count();
    Ok(hits as f64 / truth.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalize_availability_examples() {
        assert_eq!(normalize_availability(15, 30).unwrap(), 0.5);
        assert_eq!(normalize_availability(0, 365).unwrap(), 0.0);
        assert_eq!(normalize_availability(365, 365).unwrap(), 1.0);
        assert!(normalize_availability(31, 30).is_err());
        assert!(normalize_availability(5, 45).is_err());
    }

    #[test]
    fn kmeans_symmetric_blobs() {
        let values = [0.1, 0.1, 0.9, 0.9];
        let result = kmeans_1d(&values, 2, 3, 300, 1e-6).unwrap();
        assert_abs_diff_eq!(result.centroids[0], 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(result.centroids[1], 0.9, epsilon = 1e-12);
        assert_eq!(result.assignments, vec![0, 0, 1, 1]);
        assert!(!result.degenerate);
    }

    #[test]
    fn kmeans_k1_is_mean() {
        let values = [1.0, 2.0, 3.0, 6.0];
        let result = kmeans_1d(&values, 1, 0, 300, 1e-6).unwrap();
        assert_abs_diff_eq!(result.centroids[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn kmeans_recovers_separated_gaussians() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut values = Vec::with_capacity(200);
        let mut truth = Vec::with_capacity(200);
        for i in 0..200 {
            // two tight blobs, gap far wider than the spread
            let (center, label) = if i % 2 == 0 { (0.1, 0) } else { (0.9, 1) };
            values.push(center + (rng.random::<f64>() - 0.5) * 0.05);
            truth.push(label);
        }
        let result = kmeans_1d(&values, 2, 5, 300, 1e-9).unwrap();
        assert_eq!(result.assignments, truth);
        assert!(result.centroids[0] < result.centroids[1]);
    }

    #[test]
    fn kmeans_inertia_non_increasing_and_deterministic() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let values: Vec<f64> = (0..120).map(|_| rng.random::<f64>()).collect();
        let a = kmeans_1d(&values, 4, 9, 300, 1e-9).unwrap();
        let b = kmeans_1d(&values, 4, 9, 300, 1e-9).unwrap();
        assert_eq!(a, b);
        for w in a.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "trace rose: {w:?}");
        }
    }

    #[test]
    fn kmeans_flags_degenerate_duplicates() {
        let values = [0.5, 0.5, 0.5];
        let result = kmeans_1d(&values, 2, 1, 300, 1e-6).unwrap();
        assert!(result.degenerate);
        assert_eq!(result.centroids.len(), 2);
    }

    #[test]
    fn split_low_high_orders_by_centroid() {
        let values = [0.9, 0.1, 0.85, 0.15];
        let result = kmeans_1d(&values, 2, 2, 300, 1e-6).unwrap();
        let bands = split_low_high(&result).unwrap();
        assert_eq!(bands, vec![Band::High, Band::Low, Band::High, Band::Low]);

        let k1 = kmeans_1d(&values, 1, 2, 300, 1e-6).unwrap();
        assert!(split_low_high(&k1).is_err());
    }

    fn s(v: &str) -> String {
        v.to_string()
    }

    #[test]
    fn nb_perfectly_aligned_feature() {
        // 10 rows of category a -> class A, 10 of b -> class B, alpha = 1.
        // Hand-computed: vocab {a, b} + other = 3 slots;
        // P(a|A) = 11/13, P(a|B) = 1/13, priors 1/2 each;
        // posterior(A | a) = 11/12.
        let rows: Vec<Vec<String>> = (0..20)
            .map(|i| vec![if i < 10 { s("a") } else { s("b") }])
            .collect();
        let labels: Vec<String> = (0..20).map(|i| if i < 10 { s("A") } else { s("B") }).collect();
        let model = fit_multinomial_nb(&rows, &labels, 1.0).unwrap();

        assert_eq!(model.predict_row(&[s("a")]), "A");
        assert_eq!(model.predict_row(&[s("b")]), "B");
        let posterior = model.predict_posteriors(&[s("a")]);
        assert_abs_diff_eq!(posterior[0], 11.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(posterior.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn nb_uninformative_features_fall_back_to_prior() {
        let rows: Vec<Vec<String>> = (0..9).map(|_| vec![s("same")]).collect();
        let labels: Vec<String> = (0..9)
            .map(|i| if i < 6 { s("big") } else { s("small") })
            .collect();
        let model = fit_multinomial_nb(&rows, &labels, 1.0).unwrap();
        assert_eq!(model.predict_row(&[s("same")]), "big");
        let (majority, acc) = majority_baseline(&labels).unwrap();
        assert_eq!(majority, "big");
        assert_abs_diff_eq!(acc, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn nb_unseen_category_uses_smoothed_slot() {
        let rows = vec![vec![s("a")], vec![s("b")]];
        let labels = vec![s("A"), s("B")];
        let model = fit_multinomial_nb(&rows, &labels, 1.0).unwrap();
        let posterior = model.predict_posteriors(&[s("zzz")]);
        assert!(posterior.iter().all(|p| p.is_finite() && *p > 0.0));
        assert_abs_diff_eq!(posterior.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        // unseen everywhere -> priors decide -> tie -> larger prior equal ->
        // first (lower index) class
        assert_eq!(model.predict_row(&[s("zzz")]), "A");
    }

    #[test]
    fn nb_duplication_with_scaled_alpha_is_invariant() {
        let rows = vec![vec![s("a")], vec![s("a")], vec![s("b")]];
        let labels = vec![s("A"), s("A"), s("B")];
        let model = fit_multinomial_nb(&rows, &labels, 1.0).unwrap();

        let mut rows3: Vec<Vec<String>> = Vec::new();
        let mut labels3 = Vec::new();
        for _ in 0..3 {
            rows3.extend(rows.iter().cloned());
            labels3.extend(labels.iter().cloned());
        }
        let scaled = fit_multinomial_nb(&rows3, &labels3, 3.0).unwrap();
        for probe in [vec![s("a")], vec![s("b")], vec![s("new")]] {
            let p1 = model.predict_posteriors(&probe);
            let p2 = scaled.predict_posteriors(&probe);
            for (a, b) in p1.iter().zip(&p2) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn nb_beats_majority_on_aligned_data() {
        let rows: Vec<Vec<String>> = (0..30)
            .map(|i| vec![format!("zip{}", i % 3)])
            .collect();
        let labels: Vec<String> = (0..30)
            .map(|i| if i % 3 == 0 { s("high") } else { s("low") })
            .collect();
        let model = fit_multinomial_nb(&rows, &labels, 1.0).unwrap();
        let predictions = model.predict(&rows);
        let nb_acc = accuracy(&labels, &predictions).unwrap();
        let (_, majority_acc) = majority_baseline(&labels).unwrap();
        assert!(nb_acc >= majority_acc);
        assert_abs_diff_eq!(nb_acc, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn majority_tie_takes_smaller_label() {
        let labels = vec![s("1"), s("1"), s("0"), s("0")];
        let (label, acc) = majority_baseline(&labels).unwrap();
        assert_eq!(label, "0");
        assert_abs_diff_eq!(acc, 0.5, epsilon = 1e-12);

        let all_equal = vec![s("x"); 5];
        assert_eq!(majority_baseline(&all_equal).unwrap(), (s("x"), 1.0));
    }

    #[test]
    fn nb_rejects_bad_inputs() {
        assert!(fit_multinomial_nb(&[], &[], 1.0).is_err());
        assert!(fit_multinomial_nb(&[vec![s("a")]], &[s("A")], 0.0).is_err());
        assert!(fit_multinomial_nb(&[vec![s("a")]], &[s("A"), s("B")], 1.0).is_err());
    }
}
