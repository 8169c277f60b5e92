//! Optimization problems over a subset of an equation's parameters,
//! optionally through a smooth reparameterization.

use nalgebra::{DMatrix, DVector};

use super::objective::{evaluate, Order, PanelData};
use super::optimizer::{Objective, Point};
use super::space::{Space, Transform};

/// Smooth map from estimated parameters θ to the active natural
/// parameters.
pub(crate) trait Reparam: Sync {
    /// Active natural values, their Jacobian (n_active × dim) and the
    /// Hessian of every active value (dim × dim each).
    fn map(&self, theta: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>, Vec<DMatrix<f64>>)>;
}

pub(crate) struct Problem<'a> {
    pub space: &'a Space,
    pub data: &'a PanelData,
    /// Natural values of every parameter; inactive ones stay fixed.
    pub base: Vec<f64>,
    pub active: Vec<usize>,
    pub reparam: Option<&'a dyn Reparam>,
    /// One per estimated parameter.
    pub transforms: Vec<Transform>,
    pub n_points: usize,
}

/// Value, gradient and Hessian in the estimated natural parameters θ.
pub(crate) struct NaturalPoint {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(space: &'a Space, data: &'a PanelData, base: Vec<f64>, active: Vec<usize>) -> Self {
        let transforms = active.iter().map(|&i| space.transforms[i]).collect();
        let n_points = data.n_points(space.q);
        Problem {
            space,
            data,
            base,
            active,
            reparam: None,
            transforms,
            n_points,
        }
    }

    pub fn theta(&self, u: &DVector<f64>) -> Vec<f64> {
        u.iter()
            .zip(&self.transforms)
            .map(|(&u, t)| t.to_natural(u))
            .collect()
    }

    pub fn unconstrained(&self, theta: &[f64]) -> Option<DVector<f64>> {
        let u: Vec<f64> = theta
            .iter()
            .zip(&self.transforms)
            .map(|(&x, t)| t.from_natural(x))
            .collect();
        u.iter().all(|x| x.is_finite()).then(|| DVector::from_vec(u))
    }

    /// Full natural vector for θ.
    pub fn phi(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let mut phi = self.base.clone();
        match self.reparam {
            None => {
                for (&i, &x) in self.active.iter().zip(theta) {
                    phi[i] = x;
                }
            }
            Some(r) => {
                let (vals, _, _) = r.map(theta)?;
                for (&i, x) in self.active.iter().zip(vals) {
                    phi[i] = x;
                }
            }
        }
        Some(phi)
    }

    pub fn value_at(&self, theta: &[f64]) -> Option<f64> {
        let phi = self.phi(theta)?;
        let e = evaluate(self.space, &phi, self.data, Order::Value);
        e.valid().then_some(e.value)
    }

    pub fn natural(&self, theta: &[f64]) -> Option<NaturalPoint> {
        let mut phi = self.base.clone();
        let mapped = match self.reparam {
            None => {
                for (&i, &x) in self.active.iter().zip(theta) {
                    phi[i] = x;
                }
                None
            }
            Some(r) => {
                let (vals, jac, second) = r.map(theta)?;
                for (&i, &x) in self.active.iter().zip(&vals) {
                    phi[i] = x;
                }
                Some((jac, second))
            }
        };
        let e = evaluate(self.space, &phi, self.data, Order::Hessian);
        if !e.valid() {
            return None;
        }
        let (g, h) = (e.grad?, e.hess?);
        let na = self.active.len();
        let ga = DVector::from_fn(na, |i, _| g[self.active[i]]);
        let ha = DMatrix::from_fn(na, na, |i, j| h[(self.active[i], self.active[j])]);
        let (grad, hess) = match mapped {
            None => (ga, ha),
            Some((jac, second)) => {
                let grad = jac.transpose() * &ga;
                let mut hess = jac.transpose() * &ha * &jac;
                for (k, s) in second.iter().enumerate() {
                    hess += s * ga[k];
                }
                (grad, hess)
            }
        };
        Some(NaturalPoint {
            value: e.value,
            grad,
            hess,
        })
    }
}

impl Objective for Problem<'_> {
    fn value(&self, u: &DVector<f64>) -> Option<f64> {
        self.value_at(&self.theta(u))
    }

    fn point(&self, u: &DVector<f64>) -> Option<Point> {
        let theta = self.theta(u);
        let np = self.natural(&theta)?;
        let n = theta.len();
        let d1: Vec<f64> = u.iter().zip(&self.transforms).map(|(&u, t)| t.d1(u)).collect();
        let d2: Vec<f64> = u.iter().zip(&self.transforms).map(|(&u, t)| t.d2(u)).collect();
        let grad = DVector::from_fn(n, |i, _| np.grad[i] * d1[i]);
        let mut hess = DMatrix::from_fn(n, n, |i, j| np.hess[(i, j)] * d1[i] * d1[j]);
        for i in 0..n {
            hess[(i, i)] += np.grad[i] * d2[i];
        }
        Some(Point {
            value: np.value,
            grad,
            hess,
        })
    }

    fn scale(&self) -> f64 {
        self.n_points as f64
    }
}
