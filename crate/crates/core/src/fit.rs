//! Small least-squares solvers: linear (via SVD) and Levenberg-Marquardt.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solution of a least-squares problem.
#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    /// Sum of squared residuals at the solution.
    pub cost: f64,
    pub iterations: usize,
}

/// Minimizes `|A x - b|^2`.
pub fn linear_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LsqSolution> {
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * 1e-12 * a.nrows().max(a.ncols()) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    if rank < a.ncols() {
        return Err(Error::FitFailed(format!(
            "design matrix rank {rank} < {}",
            a.ncols()
        )));
    }
    let x = svd
        .solve(b, eps)
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    let r = a * &x - b;
    Ok(LsqSolution {
        params: x.iter().copied().collect(),
        cost: r.norm_squared(),
        iterations: 1,
    })
}

/// A nonlinear least-squares model.
pub trait Residuals {
    fn len(&self) -> usize;
    /// Writes residuals into `r` and, when given, the Jacobian row-major
    /// (`len() x params.len()`) into `jac`.
    fn eval(&self, params: &[f64], r: &mut [f64], jac: Option<&mut [f64]>);
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease falls below this.
    pub ftol: f64,
    /// Stop when the relative parameter step falls below this.
    pub xtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            xtol: 1e-10,
        }
    }
}

/// Levenberg-Marquardt with multiplicative damping on the normal equations.
pub fn levenberg_marquardt<M: Residuals>(
    model: &M,
    start: &[f64],
    opts: LmOptions,
) -> Result<LsqSolution> {
    let m = model.len();
    let n = start.len();
    if m < n {
        return Err(Error::FitFailed(format!("{m} residuals for {n} parameters")));
    }
    let mut x = start.to_vec();
    let mut r = vec![0.0; m];
    let mut jac = vec![0.0; m * n];
    model.eval(&x, &mut r, Some(&mut jac));
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    if !cost.is_finite() {
        return Err(Error::FitFailed("non-finite cost at start".into()));
    }
    let mut lambda = 1e-3;
    let mut trial_r = vec![0.0; m];
    for iter in 0..opts.max_iterations {
        let j = DMatrix::from_row_slice(m, n, &jac);
        let rv = DVector::from_column_slice(&r);
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * rv;
        let mut accepted = false;
        for _ in 0..30 {
            let mut lhs = jtj.clone();
            for k in 0..n {
                lhs[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = lhs.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-&jtr));
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            model.eval(&trial, &mut trial_r, None);
            let trial_cost: f64 = trial_r.iter().map(|v| v * v).sum();
            if trial_cost.is_finite() && trial_cost < cost {
                let rel_step = step.norm() / (DVector::from_column_slice(&x).norm() + 1e-300);
                let rel_drop = (cost - trial_cost) / cost.max(1e-300);
                x = trial;
                cost = trial_cost;
                model.eval(&x, &mut r, Some(&mut jac));
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_drop < opts.ftol || rel_step < opts.xtol {
                    return Ok(LsqSolution {
                        params: x,
                        cost,
                        iterations: iter + 1,
                    });
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: local minimum
            return Ok(LsqSolution {
                params: x,
                cost,
                iterations: iter + 1,
            });
        }
    }
    Err(Error::FitFailed(format!(
        "no convergence in {} iterations",
        opts.max_iterations
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exp {
        t: Vec<f64>,
        y: Vec<f64>,
    }

    impl Residuals for Exp {
        fn len(&self) -> usize {
            self.t.len()
        }
        fn eval(&self, p: &[f64], r: &mut [f64], jac: Option<&mut [f64]>) {
            for (i, (&t, &y)) in self.t.iter().zip(&self.y).enumerate() {
                r[i] = p[0] * (-p[1] * t).exp() - y;
            }
            if let Some(j) = jac {
                for (i, &t) in self.t.iter().enumerate() {
                    j[2 * i] = (-p[1] * t).exp();
                    j[2 * i + 1] = -p[0] * t * (-p[1] * t).exp();
                }
            }
        }
    }

    #[test]
    fn recovers_exponential() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let sol = levenberg_marquardt(&Exp { t, y }, &[1.0, 0.1], LmOptions::default()).unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-8);
        assert!((sol.params[1] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn linear_fit_and_rank_check() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_column_slice(&[1.0, 3.0, 5.0]);
        let sol = linear_least_squares(&a, &b).unwrap();
        assert!((sol.params[0] - 1.0).abs() < 1e-12 && (sol.params[1] - 2.0).abs() < 1e-12);
        let singular = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(linear_least_squares(&singular, &b).is_err());
    }
}
