//! Overnight fit with a zero baseline: the common amplitude of the two
//! diagonal kernels is eliminated through the stationarity constraint.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::problem::Reparam;

/// `h(α, ω) = Σ_{τ≤q} τ^-α e^{-ωτ}` with its first and second derivatives,
/// ordered `(h, h_α, h_ω, h_αα, h_αω, h_ωω)`.
pub(crate) fn h_with_derivatives(alpha: f64, omega: f64, q: usize) -> [f64; 6] {
    let mut out = [0.0; 6];
    for tau in 1..=q {
        let t = tau as f64;
        let l = t.ln();
        let b = t.powf(-alpha) * (-omega * t).exp();
        out[0] += b;
        out[1] -= l * b;
        out[2] -= t * b;
        out[3] += l * l * b;
        out[4] += l * t * b;
        out[5] += t * t * b;
    }
    out
}

/// Shape of the constrained overnight diagonal kernels
/// `K_DD = g τ^-α₁ e^{-ω₁τ}`, `K_NN = γ g τ^-α₂ e^{-ω₂τ}` with
/// `g = (1 − c) / (ρ h(α₁, ω₁) + γ h(α₂, ω₂))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedNightSpec {
    pub gamma: f64,
    pub alpha1: f64,
    pub omega1: f64,
    pub alpha2: f64,
    pub omega2: f64,
    /// Contribution of the frozen cross and leverage kernels.
    pub c: f64,
    /// `⟨rD²⟩ / ⟨rN²⟩`, weight of the intra-day kernel in the constraint.
    pub rho: f64,
    /// Lag range of both kernels.
    pub q: usize,
}

impl ConstrainedNightSpec {
    /// The eliminated amplitude; `None` when it is not positive.
    pub fn g(&self) -> Option<f64> {
        let h1 = h_with_derivatives(self.alpha1, self.omega1, self.q)[0];
        let h2 = h_with_derivatives(self.alpha2, self.omega2, self.q)[0];
        let g = (1.0 - self.c) / (self.rho * h1 + self.gamma * h2);
        (g > 0.0 && g.is_finite()).then_some(g)
    }

    /// `1 − (ρ Σ K_DD + Σ K_NN + c)`, zero by construction.
    pub fn constraint_residual(&self) -> Option<f64> {
        let g = self.g()?;
        let h1 = h_with_derivatives(self.alpha1, self.omega1, self.q)[0];
        let h2 = h_with_derivatives(self.alpha2, self.omega2, self.q)[0];
        Some(1.0 - (self.rho * g * h1 + self.gamma * g * h2 + self.c))
    }
}

/// Map θ = (γ, α₁, ω₁, α₂, ω₂) to the active natural parameters
/// (g₁, α₁, ω₁, g₂, α₂, ω₂).
pub(crate) struct NightMap {
    pub c: f64,
    pub rho: f64,
    pub q: usize,
}

impl NightMap {
    pub fn spec(&self, theta: &[f64]) -> ConstrainedNightSpec {
        ConstrainedNightSpec {
            gamma: theta[0],
            alpha1: theta[1],
            omega1: theta[2],
            alpha2: theta[3],
            omega2: theta[4],
            c: self.c,
            rho: self.rho,
            q: self.q,
        }
    }
}

impl Reparam for NightMap {
    fn map(&self, theta: &[f64]) -> Option<(Vec<f64>, DMatrix<f64>, Vec<DMatrix<f64>>)> {
        let (gamma, a1, w1, a2, w2) = (theta[0], theta[1], theta[2], theta[3], theta[4]);
        let h1 = h_with_derivatives(a1, w1, self.q);
        let h2 = h_with_derivatives(a2, w2, self.q);
        let rho = self.rho;
        let num = 1.0 - self.c;
        let d = rho * h1[0] + gamma * h2[0];
        let g = num / d;
        if !(g > 0.0) || !g.is_finite() {
            return None;
        }
        // ∂D/∂θ and ∂²D/∂θ∂θ
        let dd = [h2[0], rho * h1[1], rho * h1[2], gamma * h2[1], gamma * h2[2]];
        let mut d2 = DMatrix::<f64>::zeros(5, 5);
        d2[(1, 1)] = rho * h1[3];
        d2[(1, 2)] = rho * h1[4];
        d2[(2, 2)] = rho * h1[5];
        d2[(3, 3)] = gamma * h2[3];
        d2[(3, 4)] = gamma * h2[4];
        d2[(4, 4)] = gamma * h2[5];
        d2[(0, 3)] = h2[1];
        d2[(0, 4)] = h2[2];
        for i in 0..5 {
            for j in 0..i {
                d2[(i, j)] = d2[(j, i)];
            }
        }
        let gd: Vec<f64> = dd.iter().map(|di| -num * di / (d * d)).collect();
        let gdd = DMatrix::from_fn(5, 5, |i, j| num * (2.0 * dd[i] * dd[j] / (d * d * d) - d2[(i, j)] / (d * d)));
        // g₂ = γ g
        let g2d: Vec<f64> = (0..5).map(|i| gamma * gd[i] + if i == 0 { g } else { 0.0 }).collect();
        let g2dd = DMatrix::from_fn(5, 5, |i, j| {
            gamma * gdd[(i, j)] + if i == 0 { gd[j] } else { 0.0 } + if j == 0 { gd[i] } else { 0.0 }
        });

        let values = vec![g, a1, w1, gamma * g, a2, w2];
        let mut jac = DMatrix::<f64>::zeros(6, 5);
        for j in 0..5 {
            jac[(0, j)] = gd[j];
            jac[(3, j)] = g2d[j];
        }
        jac[(1, 1)] = 1.0;
        jac[(2, 2)] = 1.0;
        jac[(4, 3)] = 1.0;
        jac[(5, 4)] = 1.0;
        let zero = DMatrix::<f64>::zeros(5, 5);
        let second = vec![gdd, zero.clone(), zero.clone(), g2dd, zero.clone(), zero];
        Some((values, jac, second))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_case_splits_evenly() {
        let spec = ConstrainedNightSpec {
            gamma: 1.0,
            alpha1: 0.6,
            omega1: 0.01,
            alpha2: 0.6,
            omega2: 0.01,
            c: 0.05,
            rho: 1.0,
            q: 512,
        };
        let h = h_with_derivatives(0.6, 0.01, 512)[0];
        assert!((spec.g().unwrap() - 0.95 / (2.0 * h)).abs() < 1e-15);
        assert!(spec.constraint_residual().unwrap().abs() < 1e-14);
    }

    #[test]
    fn map_derivatives_match_finite_differences() {
        let m = NightMap {
            c: 0.03,
            rho: 1.1,
            q: 200,
        };
        let theta = [0.7, 0.8, 0.014, 0.58, 0.006];
        let (_, jac, second) = m.map(&theta).unwrap();
        for k in 0..5 {
            let h = 1e-6 * theta[k];
            let mut hi = theta;
            let mut lo = theta;
            hi[k] += h;
            lo[k] -= h;
            let (vh, jh, _) = m.map(&hi).unwrap();
            let (vl, jl, _) = m.map(&lo).unwrap();
            for a in 0..6 {
                let fd = (vh[a] - vl[a]) / (2.0 * h);
                assert!((fd - jac[(a, k)]).abs() <= 1e-6 * fd.abs().max(1e-8), "J {a} {k}");
                for j in 0..5 {
                    let fd2 = (jh[(a, j)] - jl[(a, j)]) / (2.0 * h);
                    let an = second[a][(j, k)];
                    assert!((fd2 - an).abs() <= 1e-5 * fd2.abs().max(1e-6), "H {a} {j} {k}: {fd2} {an}");
                }
            }
        }
    }
}
