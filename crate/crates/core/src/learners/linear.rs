//! Ordinary least squares via Householder QR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::MatrixView;

/// A fitted linear model; an intercept column is added internally.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }

    pub fn predict(&self, x: MatrixView<'_>) -> Vec<f64> {
        x.iter_rows().map(|row| self.predict_row(row)).collect()
    }
}

fn column_name(augmented_index: usize) -> String {
    if augmented_index == 0 {
        "intercept".to_string()
    } else {
        format!("{}", augmented_index - 1)
    }
}

/// Least-squares fit of `y` on `x` plus an intercept.
///
/// Householder QR, so the solution matches the normal equations to ~1e-8
/// relative on well-conditioned inputs without forming XᵀX. Rank deficiency
/// is reported as a singular-matrix error naming the offending column.
pub fn fit_ols(x: MatrixView<'_>, y: &[f64]) -> Result<LinearModel> {
    let n = x.rows();
    let p = x.cols();
    let m = p + 1;
    if y.len() != n {
        return Err(Error::InvalidArgument(format!(
            "target length {} does not match {} rows",
            y.len(),
            n
        )));
    }
    if n <= p {
        return Err(Error::InvalidArgument(format!(
            "need more rows than columns, got {n} rows for {p} columns"
        )));
    }

    // Column-major augmented design [1 | X].
    let mut a = vec![0.0f64; n * m];
    for v in a[..n].iter_mut() {
        *v = 1.0;
    }
    for j in 0..p {
        for i in 0..n {
            a[(j + 1) * n + i] = x.get(i, j);
        }
    }
    let mut qty = y.to_vec();
    let mut diag = vec![0.0f64; m];

    let max_norm = (0..m)
        .map(|j| a[j * n..j * n + n].iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let tol = f64::EPSILON * n as f64 * max_norm.max(1.0);

    for k in 0..m {
        let sigma = a[k * n + k..(k + 1) * n]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if sigma <= tol {
            return Err(Error::SingularMatrix {
                column: column_name(k),
            });
        }
        let x0 = a[k * n + k];
        let alpha = if x0 >= 0.0 { -sigma } else { sigma };
        a[k * n + k] = x0 - alpha;
        let vnorm2 = 2.0 * sigma * (sigma + x0.abs());

        for j in (k + 1)..m {
            let mut dot = 0.0;
            for i in k..n {
                dot += a[k * n + i] * a[j * n + i];
            }
            let f = 2.0 * dot / vnorm2;
            for i in k..n {
                a[j * n + i] -= f * a[k * n + i];
            }
        }
        let mut dot = 0.0;
        for i in k..n {
            dot += a[k * n + i] * qty[i];
        }
        let f = 2.0 * dot / vnorm2;
        for i in k..n {
            qty[i] -= f * a[k * n + i];
        }
        diag[k] = alpha;
    }

    // Back substitution on R beta = Qᵀy.
    let mut beta = vec![0.0f64; m];
    for k in (0..m).rev() {
        let mut s = qty[k];
        for j in (k + 1)..m {
            s -= a[j * n + k] * beta[j];
        }
        beta[k] = s / diag[k];
    }

    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("non-finite OLS solution".to_string()));
    }

    Ok(LinearModel {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: solve (XᵀX)β = Xᵀy by Gaussian elimination with
    /// partial pivoting, X augmented with an intercept column.
    fn normal_equations(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        let m = x[0].len() + 1;
        let row = |i: usize| -> Vec<f64> {
            std::iter::once(1.0).chain(x[i].iter().copied()).collect()
        };
        let mut ata = vec![vec![0.0; m]; m];
        let mut aty = vec![0.0; m];
        for i in 0..n {
            let r = row(i);
            for a in 0..m {
                aty[a] += r[a] * y[i];
                for b in 0..m {
                    ata[a][b] += r[a] * r[b];
                }
            }
        }
        // gaussian elimination
        for k in 0..m {
            let pivot = (k..m)
                .max_by(|&a, &b| ata[a][k].abs().total_cmp(&ata[b][k].abs()))
                .unwrap();
            ata.swap(k, pivot);
            aty.swap(k, pivot);
            for i in (k + 1)..m {
                let f = ata[i][k] / ata[k][k];
                for j in k..m {
                    ata[i][j] -= f * ata[k][j];
                }
                aty[i] -= f * aty[k];
            }
        }
        let mut beta = vec![0.0; m];
        for k in (0..m).rev() {
            let mut s = aty[k];
            for j in (k + 1)..m {
                s -= ata[k][j] * beta[j];
            }
            beta[k] = s / ata[k][k];
        }
        beta
    }

    fn flat(rows: &[Vec<f64>]) -> (Vec<f64>, usize) {
        let cols = rows[0].len();
        (rows.iter().flatten().copied().collect(), cols)
    }

    #[test]
    fn exact_line_fit() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + 2.0).collect();
        let (data, cols) = flat(&rows);
        let model = fit_ols(MatrixView::new(&data, cols), &y).unwrap();
        assert_abs_diff_eq!(model.coefficients[0], 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(model.intercept, 2.0, epsilon = 1e-10);
        // exact-fit model reproduces y
        for (pred, truth) in model.predict(MatrixView::new(&data, cols)).iter().zip(&y) {
            assert_abs_diff_eq!(pred, truth, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_target_gives_zero_slopes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
            .collect();
        let y = vec![7.5; 15];
        let (data, cols) = flat(&rows);
        let model = fit_ols(MatrixView::new(&data, cols), &y).unwrap();
        assert_abs_diff_eq!(model.intercept, 7.5, epsilon = 1e-9);
        for c in &model.coefficients {
            assert_abs_diff_eq!(*c, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..25 {
            let rows: Vec<Vec<f64>> = (0..20)
                .map(|_| (0..3).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect())
                .collect();
            let y: Vec<f64> = rows
                .iter()
                .map(|r| 1.5 * r[0] - 2.0 * r[1] + 0.3 * r[2] + rng.random::<f64>())
                .collect();
            let expected = normal_equations(&rows, &y);
            let (data, cols) = flat(&rows);
            let model = fit_ols(MatrixView::new(&data, cols), &y).unwrap();
            let scale = expected.iter().map(|v| v.abs()).fold(1.0, f64::max);
            assert_abs_diff_eq!(model.intercept, expected[0], epsilon = 1e-8 * scale);
            for (got, want) in model.coefficients.iter().zip(&expected[1..]) {
                assert_abs_diff_eq!(got, want, epsilon = 1e-8 * scale);
            }
        }
    }

    #[test]
    fn residuals_orthogonal_to_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random::<f64>() * 4.0).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().sum::<f64>() + rng.random::<f64>() * 2.0)
            .collect();
        let (data, cols) = flat(&rows);
        let view = MatrixView::new(&data, cols);
        let model = fit_ols(view, &y).unwrap();
        let preds = model.predict(view);
        let residuals: Vec<f64> = y.iter().zip(&preds).map(|(t, p)| t - p).collect();
        let scale: f64 = y.iter().map(|v| v.abs()).sum::<f64>();
        for j in 0..cols {
            let dot: f64 = (0..rows.len()).map(|i| residuals[i] * view.get(i, j)).sum();
            assert!(dot.abs() <= 1e-6 * scale.max(1.0), "column {j} dot {dot}");
        }
        let dot_intercept: f64 = residuals.iter().sum();
        assert!(dot_intercept.abs() <= 1e-6 * scale.max(1.0));
    }

    #[test]
    fn duplicate_column_is_singular() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64, 2.0 * i as f64])
            .collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (data, cols) = flat(&rows);
        let err = fit_ols(MatrixView::new(&data, cols), &y).unwrap_err();
        match err {
            Error::SingularMatrix { column } => assert_eq!(column, "1"),
            other => panic!("expected SingularMatrix, got {other:?}"),
        }
    }

    #[test]
    fn underdetermined_is_rejected() {
        let data = [1.0, 2.0, 3.0, 4.0];
        let view = MatrixView::new(&data, 2);
        assert!(fit_ols(view, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn zero_coefficient_model_predicts_intercept() {
        let model = LinearModel {
            coefficients: vec![0.0, 0.0],
            intercept: 4.25,
        };
        assert_eq!(model.predict_row(&[100.0, -3.0]), 4.25);
        // single row is a dot product
        let m = LinearModel {
            coefficients: vec![2.0, -1.0],
            intercept: 1.0,
        };
        assert_eq!(m.predict_row(&[3.0, 4.0]), 1.0 + 6.0 - 4.0);
    }
}
