use serde::{Deserialize, Serialize};

use super::{check_matrix, PredictError};

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl RidgeModel {
    pub fn predict_one(&self, x: &[f64]) -> Result<f64, PredictError> {
        if x.len() != self.weights.len() {
            return Err(PredictError::DimensionMismatch { expected: self.weights.len(), got: x.len() });
        }
        Ok(self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
    }

    /// Penalized sum of squared errors; the intercept is not penalized.
    pub fn loss(&self, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let sse: f64 = x
            .iter()
            .zip(y)
            .map(|(row, &t)| {
                let p = self.bias + self.weights.iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
                (p - t).powi(2)
            })
            .sum();
        sse + self.lambda * self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Ridge regression with an unpenalized intercept.
///
/// Centers features and targets, then solves `(Xc'Xc + lambda I) w = Xc'yc`
/// by Cholesky factorization. A non-positive pivot means the system is
/// singular (only possible at `lambda = 0`).
pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel, PredictError> {
    let d = check_matrix(x, y, 1)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(PredictError::InvalidHyperparameter(format!("lambda = {lambda}")));
    }
    let n = x.len() as f64;
    let mut x_mean = vec![0.0; d];
    for row in x {
        for (m, v) in x_mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let y_mean = y.iter().sum::<f64>() / n;

    let mut gram = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut centered = vec![0.0; d];
    for (row, &t) in x.iter().zip(y) {
        for k in 0..d {
            centered[k] = row[k] - x_mean[k];
        }
        let tc = t - y_mean;
        for a in 0..d {
            let ca = centered[a];
            if ca == 0.0 {
                continue;
            }
            rhs[a] += ca * tc;
            let line = &mut gram[a * d..a * d + a + 1];
            for (b, g) in line.iter_mut().enumerate() {
                *g += ca * centered[b];
            }
        }
    }
    for a in 0..d {
        gram[a * d + a] += lambda;
    }
    let weights = cholesky_solve(&mut gram, &rhs, d)?;
    let bias = y_mean - weights.iter().zip(&x_mean).map(|(w, m)| w * m).sum::<f64>();
    Ok(RidgeModel { weights, bias, lambda })
}

/// Solves `A w = b` for symmetric positive definite `A`, of which only the
/// lower triangle (row-major) is read. `a` is overwritten by the factor.
fn cholesky_solve(a: &mut [f64], b: &[f64], d: usize) -> Result<Vec<f64>, PredictError> {
    let scale = (0..d).map(|i| a[i * d + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag <= 1e-12 * scale {
            return Err(PredictError::SingularSystem);
        }
        let l_jj = diag.sqrt();
        a[j * d + j] = l_jj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / l_jj;
        }
    }
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= a[i * d + k] * z[k];
        }
        z[i] = s / a[i * d + i];
    }
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = z[i];
        for k in i + 1..d {
            s -= a[k * d + i] * w[k];
        }
        w[i] = s / a[i * d + i];
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_system(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        (x, y)
    }

    /// Augmented-system oracle: `[X 1]` with penalty `diag(lambda, ..., 0)`,
    /// solved by LU.
    fn oracle(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
        let n = x.len();
        let d = x[0].len();
        let xa = nalgebra::DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[i][j] } else { 1.0 });
        let mut a = xa.transpose() * &xa;
        for k in 0..d {
            a[(k, k)] += lambda;
        }
        let b = xa.transpose() * nalgebra::DVector::from_column_slice(y);
        let sol = a.lu().solve(&b).expect("oracle solvable");
        (sol.iter().take(d).copied().collect(), sol[d])
    }

    #[test]
    fn exact_linear_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, _) = random_system(&mut rng, 30, 4);
        let truth = [1.5, -2.0, 0.25, 3.0];
        let y: Vec<f64> = x.iter().map(|r| 0.7 + r.iter().zip(truth).map(|(a, b)| a * b).sum::<f64>()).collect();
        let m = fit_ridge(&x, &y, 0.0).unwrap();
        for (w, t) in m.weights.iter().zip(truth) {
            assert!((w - t).abs() < 1e-8);
        }
        assert!((m.bias - 0.7).abs() < 1e-8);
    }

    #[test]
    fn huge_penalty_shrinks_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = random_system(&mut rng, 40, 5);
        let m = fit_ridge(&x, &y, 1e9).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-7));
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = random_system(&mut rng, 20, 5);
        let m = fit_ridge(&x, &y, 0.1).unwrap();
        let (w, b) = oracle(&x, &y, 0.1);
        for (got, want) in m.weights.iter().zip(&w) {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
        assert!((m.bias - b).abs() < 1e-9);
    }

    #[test]
    fn singular_at_zero_lambda() {
        // duplicated column
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert_eq!(fit_ridge(&x, &y, 0.0), Err(PredictError::SingularSystem));
        assert!(fit_ridge(&x, &y, 1e-3).is_ok());
    }

    #[test]
    fn solution_beats_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, y) = random_system(&mut rng, 25, 6);
        let m = fit_ridge(&x, &y, 0.5).unwrap();
        let best = m.loss(&x, &y);
        for _ in 0..100 {
            let mut p = m.clone();
            for w in p.weights.iter_mut() {
                *w += rng.gen_range(-0.01..0.01);
            }
            p.bias += rng.gen_range(-0.01..0.01);
            assert!(p.loss(&x, &y) >= best);
        }
    }

    #[test]
    fn zero_weights_predict_bias() {
        let m = RidgeModel { weights: vec![0.0; 3], bias: 2.5, lambda: 1.0 };
        assert_eq!(m.predict_one(&[9.0, -1.0, 4.0]).unwrap(), 2.5);
        assert!(matches!(m.predict_one(&[1.0]), Err(PredictError::DimensionMismatch { .. })));
    }
}
