//! Levenberg–Marquardt least squares with Marquardt diagonal scaling.

use nalgebra::{DMatrix, DVector};

/// A least-squares problem: minimise `½·|r(p)|²`.
pub trait LeastSquares {
    fn n_params(&self) -> usize;

    /// Residuals at `params`, or `None` when the parameters are outside the
    /// model's domain (the step is then rejected).
    fn residuals(&self, params: &[f64]) -> Option<DVector<f64>>;

    /// `∂r_i/∂p_j`, one row per residual.
    fn jacobian(&self, params: &[f64]) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub initial_damping: f64,
    /// Damping is multiplied by this on a rejected step and divided on an
    /// accepted one.
    pub damping_factor: f64,
    pub max_iter: usize,
    /// Converged once the undamped Gauss–Newton step has every
    /// `|δ_i|/|x_i|` below this.
    pub step_tol: f64,
    /// Converged once the undamped Gauss–Newton step would change the
    /// residual vector by less than this fraction of its norm.
    pub residual_tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            initial_damping: 1e-3,
            damping_factor: 10.0,
            max_iter: 200,
            step_tol: 1e-10,
            residual_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `½·|r|²` at `params`.
    pub cost: f64,
    pub residual_rms: f64,
    /// Trial steps taken, accepted or not.
    pub iterations: usize,
    pub converged: bool,
    /// Cost after the start and after every accepted step.
    pub history: Vec<f64>,
}

const POLISH_STEPS: usize = 5;
/// Largest relative step the final Gauss–Newton refinement will take.
const POLISH_MAX_STEP: f64 = 1e-6;

fn cost_of(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// `JᵀJ` with `lambda·diag(JᵀJ)` added, the diagonal floored so a
/// parameter the data do not constrain cannot make it singular.
fn regularized(jtj: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = jtj.nrows();
    let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
    let floor = max_diag * 1e-15;
    let mut lhs = jtj.clone();
    for i in 0..n {
        lhs[(i, i)] += lambda * jtj[(i, i)].max(floor);
    }
    lhs
}

/// Largest `|δ_i|/|x_i|`; component-wise so it does not depend on units.
fn relative_step(x: &[f64], step: &DVector<f64>) -> f64 {
    x.iter()
        .zip(step.iter())
        .map(|(xi, di)| di.abs() / xi.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

/// Minimises the problem from `start`. Returns `None` if `start` itself is
/// outside the model's domain.
pub fn minimize<P: LeastSquares>(problem: &P, start: &[f64], config: &LmConfig) -> Option<LmOutcome> {
    let n = problem.n_params();
    assert_eq!(start.len(), n, "start has the wrong number of parameters");
    let mut x = start.to_vec();
    let mut r = problem.residuals(&x)?;
    let m = r.len();
    let mut cost = cost_of(&r);
    let mut history = vec![cost];
    let mut lambda = config.initial_damping;
    let mut converged = cost == 0.0;
    let mut iterations = 0;

    let mut jac = problem.jacobian(&x);
    let mut jtj = jac.tr_mul(&jac);
    let mut grad = jac.tr_mul(&r);
    // Judged on the undamped step so that the stopping point does not
    // depend on how the damping got where it is.
    let near_minimum = |x: &[f64], r: &DVector<f64>, jac: &DMatrix<f64>, jtj: &DMatrix<f64>, grad: &DVector<f64>| {
        let Some(gn) = regularized(jtj, 0.0).cholesky().map(|ch| -ch.solve(grad)) else {
            return false;
        };
        let predicted = (jac * &gn).norm() / r.norm();
        relative_step(x, &gn) < config.step_tol || predicted < config.residual_tol
    };
    converged = converged || near_minimum(&x, &r, &jac, &jtj, &grad);

    while !converged && iterations < config.max_iter {
        iterations += 1;
        let step = match regularized(&jtj, lambda).cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => {
                lambda *= config.damping_factor;
                continue;
            }
        };
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        match problem.residuals(&trial).filter(|rt| rt.iter().all(|v| v.is_finite())) {
            Some(rt) if cost_of(&rt) < cost => {
                x = trial;
                r = rt;
                cost = cost_of(&r);
                history.push(cost);
                lambda /= config.damping_factor;
                jac = problem.jacobian(&x);
                jtj = jac.tr_mul(&jac);
                grad = jac.tr_mul(&r);
                converged = cost == 0.0 || near_minimum(&x, &r, &jac, &jtj, &grad);
            }
            _ => {
                // A step this small that still fails to lower the cost means
                // the minimum is resolved to working precision.
                if relative_step(&x, &step) < config.step_tol {
                    converged = true;
                }
                lambda *= config.damping_factor;
            }
        }
    }

    if converged {
        // The cost cannot tell apart points closer than its rounding error,
        // so the last digits of the minimum come from undamped steps that
        // zero the gradient. They run only while each step contracts, and
        // change the cost by less than it can resolve, so the history does
        // not record them.
        let mut last = f64::INFINITY;
        for _ in 0..POLISH_STEPS {
            let Some(gn) = regularized(&jtj, 0.0).cholesky().map(|ch| -ch.solve(&grad)) else {
                break;
            };
            let size = relative_step(&x, &gn);
            if !(size < 0.5 * last) || !(size < POLISH_MAX_STEP) || size == 0.0 {
                break;
            }
            let trial: Vec<f64> = x.iter().zip(gn.iter()).map(|(a, b)| a + b).collect();
            let Some(rt) = problem.residuals(&trial).filter(|rt| rt.iter().all(|v| v.is_finite())) else {
                break;
            };
            x = trial;
            r = rt;
            last = size;
            jac = problem.jacobian(&x);
            jtj = jac.tr_mul(&jac);
            grad = jac.tr_mul(&r);
        }
        cost = cost_of(&r);
    }

    Some(LmOutcome {
        params: x,
        cost,
        residual_rms: (2.0 * cost / m as f64).sqrt(),
        iterations,
        converged,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// y = a·exp(b·x)
    struct ExpFit {
        xs: Vec<f64>,
        ys: Vec<f64>,
    }

    impl LeastSquares for ExpFit {
        fn n_params(&self) -> usize {
            2
        }
        fn residuals(&self, p: &[f64]) -> Option<DVector<f64>> {
            Some(DVector::from_iterator(
                self.xs.len(),
                self.xs.iter().zip(&self.ys).map(|(x, y)| p[0] * (p[1] * x).exp() - y),
            ))
        }
        fn jacobian(&self, p: &[f64]) -> DMatrix<f64> {
            DMatrix::from_fn(self.xs.len(), 2, |i, j| {
                let e = (p[1] * self.xs[i]).exp();
                if j == 0 {
                    e
                } else {
                    p[0] * self.xs[i] * e
                }
            })
        }
    }

    #[test]
    fn recovers_exponential() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys = xs.iter().map(|x| 2.5 * (-1.3 * x).exp()).collect();
        let out = minimize(&ExpFit { xs, ys }, &[1.0, 0.0], &LmConfig::default()).unwrap();
        assert!(out.converged);
        assert!((out.params[0] - 2.5).abs() < 1e-8);
        assert!((out.params[1] + 1.3).abs() < 1e-8);
        assert!(out.history.windows(2).all(|w| w[1] < w[0]));
        assert!(out.iterations <= 200);
    }

    #[test]
    fn iteration_cap_respected() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let ys = xs.iter().map(|x| 2.5 * (-1.3 * x).exp()).collect();
        let cfg = LmConfig {
            max_iter: 2,
            ..LmConfig::default()
        };
        let out = minimize(&ExpFit { xs, ys }, &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(out.iterations, 2);
        assert!(!out.converged);
    }

    #[test]
    fn exact_start_converges_immediately() {
        let xs = vec![0.0, 1.0, 2.0];
        let ys = xs.iter().map(|x: &f64| 2.0 * x.exp()).collect();
        let out = minimize(&ExpFit { xs, ys }, &[2.0, 1.0], &LmConfig::default()).unwrap();
        assert!(out.converged);
        assert!(out.iterations <= 1);
    }
}
