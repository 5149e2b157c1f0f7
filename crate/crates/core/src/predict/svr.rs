//! Epsilon-insensitive support vector regression trained by sequential
//! minimal optimization.
//!
//! The dual is written over `2n` variables `beta = [alpha; alpha*]` with
//! signs `s = [+1; -1]`:
//!
//! ```text
//! min  1/2 beta' Q beta + p' beta   s.t.  s' beta = 0,  0 <= beta <= C
//! Q_ij = s_i s_j K(x_i, x_j),  p = [eps - y; eps + y]
//! ```
//!
//! Each step picks a maximal-violating pair with second-order working-set
//! selection and solves the two-variable subproblem analytically.

use serde::{Deserialize, Serialize};

use super::{check_matrix, PredictError};

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SvrModel {
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i - alpha*_i` per support vector.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
}

impl SvrModel {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(|v| v.len())
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64, PredictError> {
        if let Some(d) = self.dim() {
            if d != x.len() {
                return Err(PredictError::DimensionMismatch { expected: d, got: x.len() });
            }
        }
        Ok(self.bias
            + self
                .support_vectors
                .iter()
                .zip(&self.dual_coeffs)
                .map(|(sv, a)| a * self.kernel.eval(sv, x))
                .sum::<f64>())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvrOptions {
    /// Stopping tolerance on the maximal KKT violation.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Record the dual objective after every step.
    pub trace_objective: bool,
}

impl Default for SvrOptions {
    fn default() -> Self {
        SvrOptions { tolerance: 1e-3, max_iterations: 10_000_000, trace_objective: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SvrDiagnostics {
    pub iterations: usize,
    /// Dual objective (to be maximized) after each step, when traced.
    pub dual_objective: Vec<f64>,
}

pub fn fit_svr(x: &[Vec<f64>], y: &[f64], c: f64, epsilon: f64, kernel: Kernel) -> Result<SvrModel, PredictError> {
    fit_svr_with(x, y, c, epsilon, kernel, &SvrOptions::default()).map(|(m, _)| m)
}

const TAU: f64 = 1e-12;

pub fn fit_svr_with(
    x: &[Vec<f64>],
    y: &[f64],
    c: f64,
    epsilon: f64,
    kernel: Kernel,
    opts: &SvrOptions,
) -> Result<(SvrModel, SvrDiagnostics), PredictError> {
    check_matrix(x, y, 2)?;
    if !(c > 0.0) || !(epsilon >= 0.0) {
        return Err(PredictError::InvalidHyperparameter(format!("C = {c}, epsilon = {epsilon}")));
    }
    if let Kernel::Rbf { gamma } = kernel {
        if !(gamma > 0.0) {
            return Err(PredictError::InvalidHyperparameter(format!("gamma = {gamma}")));
        }
    }
    let n = x.len();
    let l = 2 * n;
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&x[i], &x[j]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |a: usize, b: usize| sign(a) * sign(b) * k[(a % n) * n + (b % n)];
    let p: Vec<f64> = (0..l).map(|t| if t < n { epsilon - y[t] } else { epsilon + y[t - n] }).collect();
    let mut beta = vec![0.0; l];
    let mut grad = p.clone();
    let mut diag = Vec::with_capacity(l);
    for t in 0..l {
        diag.push(q(t, t));
    }
    let mut trace = Vec::new();
    let mut iterations = 0;

    loop {
        // working set selection
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..l {
            let v = -sign(t) * grad[t];
            let can_move_up = if sign(t) > 0.0 { beta[t] < c } else { beta[t] > 0.0 };
            if can_move_up && v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best_obj = f64::INFINITY;
        if let Some(i) = i_sel {
            for t in 0..l {
                let can_move_down = if sign(t) > 0.0 { beta[t] > 0.0 } else { beta[t] < c };
                if !can_move_down {
                    continue;
                }
                let v = sign(t) * grad[t];
                gmax2 = gmax2.max(v);
                let b = gmax + v;
                if b > 0.0 {
                    let a = diag[i] + diag[t] - 2.0 * sign(i) * sign(t) * q(i, t);
                    let obj = -(b * b) / if a > 0.0 { a } else { TAU };
                    if obj <= best_obj {
                        best_obj = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        let (i, j) = match (i_sel, j_sel) {
            (Some(i), Some(j)) if gmax + gmax2 >= opts.tolerance => (i, j),
            _ => break,
        };
        if iterations >= opts.max_iterations {
            let model = build_model(x, &beta, &grad, c, epsilon, kernel, n);
            return Err(PredictError::ConvergenceFailure { iterations, best: Box::new(model) });
        }
        iterations += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let qij = q(i, j);
        if sign(i) != sign(j) {
            let mut quad = diag[i] + diag[j] + 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let mut quad = diag[i] + diag[j] - 2.0 * qij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        for t in 0..l {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
        if opts.trace_objective {
            // f = 1/2 beta'Q beta + p'beta = 1/2 sum beta_t (grad_t + p_t)
            let f: f64 = (0..l).map(|t| beta[t] * (grad[t] + p[t])).sum::<f64>() / 2.0;
            trace.push(-f);
        }
    }
    let model = build_model(x, &beta, &grad, c, epsilon, kernel, n);
    Ok((model, SvrDiagnostics { iterations, dual_objective: trace }))
}

fn build_model(x: &[Vec<f64>], beta: &[f64], grad: &[f64], c: f64, epsilon: f64, kernel: Kernel, n: usize) -> SvrModel {
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    // rho from free variables, else midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..2 * n {
        let yg = sign(t) * grad[t];
        if beta[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if beta[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let mut support_vectors = Vec::new();
    let mut dual_coeffs = Vec::new();
    for i in 0..n {
        let coef = beta[i] - beta[i + n];
        if coef != 0.0 {
            support_vectors.push(x[i].clone());
            dual_coeffs.push(coef);
        }
    }
    SvrModel { support_vectors, dual_coeffs, bias: -rho, kernel, c, epsilon }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Largest epsilon-KKT violation over the training set, evaluated
    /// directly from residuals `r = y - f(x)` and the coefficient states.
    fn max_kkt_violation(m: &SvrModel, x: &[Vec<f64>], y: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let coef = m
                .support_vectors
                .iter()
                .position(|sv| sv == xi)
                .map(|k| m.dual_coeffs[k])
                .unwrap_or(0.0);
            let r = yi - m.predict_one(xi).unwrap();
            let v = if coef == 0.0 {
                (r.abs() - m.epsilon).max(0.0)
            } else if coef > 0.0 && coef < m.c {
                (r - m.epsilon).abs()
            } else if coef >= m.c {
                (m.epsilon - r).max(0.0)
            } else if coef > -m.c {
                (r + m.epsilon).abs()
            } else {
                (r + m.epsilon).max(0.0)
            };
            worst = worst.max(v);
        }
        worst
    }

    fn data(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let y = x.iter().map(|r| (3.0 * r[0]).sin() + r.iter().sum::<f64>() + rng.gen_range(-0.05..0.05)).collect();
        (x, y)
    }

    #[test]
    fn constant_targets_inside_tube() {
        let (x, _) = data(1, 20, 3);
        let y = vec![4.2; 20];
        let m = fit_svr(&x, &y, 1.0, 0.1, Kernel::Rbf { gamma: 0.5 }).unwrap();
        assert!(m.dual_coeffs.is_empty());
        for xi in &x {
            assert!((m.predict_one(xi).unwrap() - 4.2).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_targets_fit_closely() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| 10.0 + 2.0 * r[0] - r[1] + 0.5 * r[2] + 3.0 * r[3]).collect();
        let m = fit_svr(&x, &y, 100.0, 0.01, Kernel::Linear).unwrap();
        let pred: Vec<f64> = x.iter().map(|r| m.predict_one(r).unwrap()).collect();
        assert!(super::super::mape(&y, &pred).unwrap() < 1.0);
    }

    #[test]
    fn kkt_conditions_hold() {
        for (seed, kernel, c) in [(3, Kernel::Rbf { gamma: 1.0 }, 1.0), (4, Kernel::Linear, 0.5), (5, Kernel::Rbf { gamma: 0.2 }, 10.0)] {
            let (x, y) = data(seed, 80, 3);
            let m = fit_svr(&x, &y, c, 0.05, kernel).unwrap();
            assert!(m.dual_coeffs.iter().all(|a| a.abs() <= c));
            assert!(max_kkt_violation(&m, &x, &y) <= 1e-3, "seed {seed}");
        }
    }

    #[test]
    fn dual_objective_never_decreases() {
        let (x, y) = data(6, 50, 2);
        let opts = SvrOptions { trace_objective: true, ..Default::default() };
        let (_, diag) = fit_svr_with(&x, &y, 2.0, 0.05, Kernel::Rbf { gamma: 1.0 }, &opts).unwrap();
        assert!(diag.dual_objective.len() > 5);
        for w in diag.dual_objective.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let (x, y) = data(7, 40, 2);
        let opts = SvrOptions { max_iterations: 3, ..Default::default() };
        match fit_svr_with(&x, &y, 1.0, 0.01, Kernel::Rbf { gamma: 1.0 }, &opts) {
            Err(PredictError::ConvergenceFailure { iterations, best }) => {
                assert_eq!(iterations, 3);
                assert!(!best.dual_coeffs.is_empty());
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn hand_computed_expansion() {
        let m = SvrModel {
            support_vectors: vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            dual_coeffs: vec![0.5, -1.0, 2.0],
            bias: 0.25,
            kernel: Kernel::Rbf { gamma: 0.5 },
            c: 2.0,
            epsilon: 0.1,
        };
        let x = [0.5, 0.5];
        // squared distances 0.5, 0.5, 0.5
        let k = (-0.25f64).exp();
        let want = 0.25 + 0.5 * k - 1.0 * k + 2.0 * k;
        assert!((m.predict_one(&x).unwrap() - want).abs() < 1e-15);
        let lin = SvrModel { kernel: Kernel::Linear, ..m.clone() };
        assert!((lin.predict_one(&x).unwrap() - (0.25 + 0.25 - 0.5 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_sample() {
        assert!(fit_svr(&[vec![1.0]], &[1.0], 1.0, 0.1, Kernel::Linear).is_err());
    }
}
