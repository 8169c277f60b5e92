//! One-dimensional Student tail-index estimation on fixed residuals.

use serde::{Deserialize, Serialize};

use super::likelihood::{point_terms, point_value, NuTerms};
use crate::error::{Error, Result};

/// Largest tail index the estimator reports; beyond it the residuals are
/// indistinguishable from Gaussian.
pub const NU_MAX: f64 = 1000.0;
const NU_MIN: f64 = 2.0 + 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuEstimate {
    pub nu: f64,
    pub stderr: f64,
    pub n_points: usize,
    pub loglik_per_point: f64,
    /// The optimum sits at ν → 2⁺.
    pub at_lower_bound: bool,
    /// The optimum sits at the upper cap.
    pub at_upper_bound: bool,
}

fn sums(xi: &[f64], nu: f64) -> (f64, f64, f64) {
    let nt = NuTerms::new(nu);
    xi.iter().fold((0.0, 0.0, 0.0), |(f, g, h), &x| {
        let p = point_terms(1.0, x, &nt);
        (f + p.f, g + p.f_nu, h + p.f_nunu)
    })
}

fn value(xi: &[f64], nu: f64) -> f64 {
    let nt = NuTerms::new(nu);
    xi.iter().map(|&x| point_value(1.0, x, &nt)).sum()
}

/// Maximum-likelihood ν of the unit-variance Student law for residuals
/// `ξ = r/σ`. Non-finite residuals are skipped.
pub fn estimate_nu(residuals: &[f64]) -> Result<NuEstimate> {
    let xi: Vec<f64> = residuals.iter().copied().filter(|x| x.is_finite()).collect();
    if xi.len() < 2 {
        return Err(Error::InvalidInput("estimate_nu needs at least two residuals".into()));
    }
    let n = xi.len() as f64;
    let (lo, hi) = ((NU_MIN - 2.0).ln(), (NU_MAX - 2.0).ln());
    // Profile on a coarse grid in u = ln(ν − 2), then Newton in u.
    let mut best = (f64::NEG_INFINITY, lo);
    let steps = 60;
    for k in 0..=steps {
        let u = lo + (hi - lo) * k as f64 / steps as f64;
        let v = value(&xi, 2.0 + u.exp());
        if v > best.0 {
            best = (v, u);
        }
    }
    let (mut f, mut u) = best;
    for _ in 0..100 {
        let nu = 2.0 + u.exp();
        let (_, g, h) = sums(&xi, nu);
        let d1 = u.exp();
        let gu = g * d1;
        let hu = h * d1 * d1 + g * d1;
        if gu.abs() <= 1e-10 * n {
            break;
        }
        let mut step = if hu < 0.0 { -gu / hu } else { gu.signum() * 0.5 };
        step = step.clamp(-2.0, 2.0);
        let mut accepted = false;
        for _ in 0..40 {
            let cand = (u + step).clamp(lo, hi);
            let fc = value(&xi, 2.0 + cand.exp());
            if fc >= f {
                accepted = cand != u;
                u = cand;
                f = fc;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let nu = 2.0 + u.exp();
    let (_, _, h) = sums(&xi, nu);
    let stderr = if h < 0.0 { (-1.0 / h).sqrt() } else { f64::INFINITY };
    let tol = 1e-6;
    Ok(NuEstimate {
        nu,
        stderr,
        n_points: xi.len(),
        loglik_per_point: f / n,
        at_lower_bound: u <= lo + tol,
        at_upper_bound: u >= hi - tol,
    })
}
