//! Wald test of equal parameters between two independent fits.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::calibrate::FitResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldReport {
    pub xi_n: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Total number of points of the two fits.
    pub n_points: usize,
    pub tested: Vec<String>,
    pub excluded_params: Vec<String>,
    /// `|c₁ − c₂| / max(|c₁|, |c₂|)` for every estimated parameter.
    pub relative_differences: BTreeMap<String, f64>,
    pub flags: Vec<String>,
}

fn covariance(fit: &FitResult, label: &str, flags: &mut Vec<String>) -> Result<DMatrix<f64>> {
    let n = fit.names.len();
    let h = fit.hessian_matrix();
    if h.nrows() != n || h.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("fit {label} has no usable Hessian")));
    }
    let info = -h;
    if let Some(ch) = info.clone().cholesky() {
        return Ok(ch.inverse());
    }
    flags.push(format!("information_not_positive_definite: fit {label}"));
    info.pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(format!("fit {label}: {e}")))
}

/// `Ξ = fᵀ Σ⁻¹ f` with `f = Θ₁ − Θ₂` over the parameters not in
/// `exclude`, and `Σ` the sum of the two inverse information matrices. The
/// Hessians are those of the summed log-likelihood, so the covariances
/// already carry the `1/n` scaling.
pub fn wald_universality(fit1: &FitResult, fit2: &FitResult, exclude: &[String]) -> Result<WaldReport> {
    if fit1.target != fit2.target {
        return Err(Error::InvalidInput(format!(
            "fits are for different targets ({} and {})",
            fit1.target.label(),
            fit2.target.label()
        )));
    }
    let mut names2 = fit2.names.clone();
    let mut names1 = fit1.names.clone();
    names1.sort();
    names2.sort();
    if names1 != names2 {
        return Err(Error::InvalidInput(format!(
            "fits estimate different parameters: {:?} vs {:?}",
            fit1.names, fit2.names
        )));
    }
    for e in exclude {
        if !fit1.names.contains(e) {
            return Err(Error::InvalidInput(format!("excluded parameter {e} is not estimated")));
        }
    }
    let mut flags = Vec::new();
    for (fit, label) in [(fit1, "1"), (fit2, "2")] {
        if !fit.converged {
            flags.push(format!("not_converged: fit {label}"));
        }
    }
    let cov1 = covariance(fit1, "1", &mut flags)?;
    let cov2 = covariance(fit2, "2", &mut flags)?;

    let tested: Vec<String> = fit1.names.iter().filter(|n| !exclude.contains(n)).cloned().collect();
    let pos = |fit: &FitResult, name: &str| fit.names.iter().position(|n| n == name).unwrap();
    let idx1: Vec<usize> = tested.iter().map(|n| pos(fit1, n)).collect();
    let idx2: Vec<usize> = tested.iter().map(|n| pos(fit2, n)).collect();
    let m = tested.len();
    let f = DVector::from_fn(m, |i, _| fit1.values[idx1[i]] - fit2.values[idx2[i]]);
    let sigma = DMatrix::from_fn(m, m, |i, j| cov1[(idx1[i], idx1[j])] + cov2[(idx2[i], idx2[j])]);

    let relative_differences = fit1
        .names
        .iter()
        .map(|n| {
            let (a, b) = (fit1.values[pos(fit1, n)], fit2.values[pos(fit2, n)]);
            let d = a.abs().max(b.abs());
            (n.clone(), if d > 0.0 { (a - b).abs() / d } else { 0.0 })
        })
        .collect();

    let (xi_n, dof) = if m == 0 {
        (0.0, 0)
    } else if let Some(ch) = sigma.clone().cholesky() {
        (f.dot(&ch.solve(&f)), m)
    } else {
        flags.push("singular_covariance: pseudo-inverse used".into());
        let svd = sigma.svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
        let inv = svd
            .pseudo_inverse(1e-12 * smax)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        (f.dot(&(inv * &f)), rank)
    };
    let xi_n = xi_n.max(0.0);
    let p_value = if dof == 0 || xi_n == 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(dof as f64).map_err(|e| Error::Numerical(e.to_string()))?;
        chi.sf(xi_n).clamp(0.0, 1.0)
    };
    Ok(WaldReport {
        xi_n,
        dof,
        p_value,
        n_points: fit1.likelihood.n_points + fit2.likelihood.n_points,
        tested,
        excluded_params: exclude.to_vec(),
        relative_differences,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::{mle_parametric, FitSettings};
    use crate::kernel::KernelSpec;
    use crate::model::{DailyArchParams, TargetParams};
    use crate::simulate::{simulate_panel, SimConfig, SimModel};

    fn fit(seed: u64) -> FitResult {
        let truth = DailyArchParams {
            q: 20,
            s2: 0.4,
            nu: 6.0,
            k: KernelSpec::power_law_exp(0.2, 0.6, 0.05),
            l: KernelSpec::exponential(-0.03, 0.1),
        };
        let model = SimModel::Daily {
            params: truth.clone(),
            overnight_share: 0.0,
        };
        let mut cfg = SimConfig::new(5, 1500, seed);
        cfg.burn_in = Some(500);
        let panel = simulate_panel(&model, &cfg).unwrap();
        mle_parametric(&panel, &TargetParams::Daily(truth), FitSettings::default()).unwrap()
    }

    #[test]
    fn identical_fits_give_zero() {
        let a = fit(1);
        let r = wald_universality(&a, &a, &[]).unwrap();
        assert_eq!(r.xi_n, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.dof, a.names.len());
    }

    #[test]
    fn invariant_under_reordering() {
        let (a, b) = (fit(1), fit(2));
        let r = wald_universality(&a, &b, &["nu".to_string()]).unwrap();
        let mut perm = b.clone();
        let n = perm.names.len();
        let order: Vec<usize> = (0..n).rev().collect();
        perm.names = order.iter().map(|&i| b.names[i].clone()).collect();
        perm.values = order.iter().map(|&i| b.values[i]).collect();
        perm.hessian = order.iter().map(|&i| order.iter().map(|&j| b.hessian[i][j]).collect()).collect();
        let rp = wald_universality(&a, &perm, &["nu".to_string()]).unwrap();
        assert!((r.xi_n - rp.xi_n).abs() <= 1e-9 * r.xi_n.max(1.0));
        assert_eq!(r.dof, n - 1);
        assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn mismatched_parameters_are_rejected() {
        let a = fit(1);
        let mut b = a.clone();
        b.names[0] = "other".into();
        assert!(wald_universality(&a, &b, &[]).is_err());
        assert!(wald_universality(&a, &a, &["missing".into()]).is_err());
    }
}
