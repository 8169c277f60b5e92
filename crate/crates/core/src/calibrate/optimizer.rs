//! Damped Newton ascent with backtracking line search.

use nalgebra::{DMatrix, DVector};

/// Objective value with gradient and Hessian in the optimizer coordinates.
pub(crate) struct Point {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub(crate) trait Objective {
    /// `None` outside the valid region.
    fn value(&self, u: &DVector<f64>) -> Option<f64>;
    fn point(&self, u: &DVector<f64>) -> Option<Point>;
    /// Number of likelihood points, used to scale the stopping rule.
    fn scale(&self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Settings {
    pub max_iter: usize,
    /// Stop when `max |∂L/∂u| / n ≤ tol`.
    pub tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

pub(crate) struct Outcome {
    pub u: DVector<f64>,
    pub value: f64,
    pub grad: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Objective value after every accepted step, starting point first.
    pub trace: Vec<f64>,
}

const ARMIJO: f64 = 1e-4;

/// Maximize `obj` from `u0`, which must be valid.
pub(crate) fn maximize<O: Objective>(obj: &O, u0: DVector<f64>, settings: Settings) -> Option<Outcome> {
    let scale = obj.scale().max(1.0);
    let mut u = u0;
    let mut p = obj.point(&u)?;
    let mut trace = vec![p.value];
    let mut lambda: f64 = 1e-6;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iter {
        if p.grad.amax() / scale <= settings.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let neg_h = -&p.hess;
        let diag_scale = neg_h.diagonal().iter().map(|d| d.abs()).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        for _ in 0..40 {
            let mut a = neg_h.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * neg_h[(i, i)].abs().max(1e-12 * diag_scale);
            }
            let Some(chol) = a.cholesky() else {
                lambda = (lambda * 10.0).max(1e-12);
                continue;
            };
            let step = chol.solve(&p.grad);
            let slope = p.grad.dot(&step);
            let mut t = 1.0;
            let mut found = None;
            for _ in 0..30 {
                let cand = &u + &step * t;
                if let Some(v) = obj.value(&cand) {
                    if v >= p.value + ARMIJO * t * slope {
                        found = Some(cand);
                        break;
                    }
                }
                t *= 0.5;
            }
            match found {
                Some(cand) => match obj.point(&cand) {
                    Some(np) => {
                        u = cand;
                        p = np;
                        trace.push(p.value);
                        accepted = true;
                        lambda = if t == 1.0 { (lambda / 10.0).max(1e-12) } else { lambda };
                        break;
                    }
                    None => lambda *= 10.0,
                },
                None => lambda *= 10.0,
            }
            if lambda > 1e12 {
                break;
            }
        }
        if !accepted {
            break;
        }
        let n = trace.len();
        if n >= 2 && (trace[n - 1] - trace[n - 2]).abs() <= 1e-15 * trace[n - 1].abs() {
            converged = p.grad.amax() / scale <= settings.tol.max(1e-9);
            if !converged {
                break;
            }
        }
    }
    if !converged && p.grad.amax() / scale <= settings.tol {
        converged = true;
    }
    Some(Outcome {
        u,
        value: p.value,
        grad: p.grad,
        converged,
        iterations,
        trace,
    })
}
