//! Starting points: moment regression for free kernels and least-squares
//! shape fits for parametric kernels.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::assemble;
use super::objective::{at_b, evaluate, jacobian, Order, PanelData};
use super::space::Space;
use crate::data::ReturnPanel;
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::layout::{role_span, Role, Target};
use crate::model::TargetParams;

/// Free-kernel starting point with its regression diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentInit {
    pub params: TargetParams,
    /// OLS standard errors of the kernel coefficients in parameter order;
    /// empty when the fallback was used outright.
    pub stderr: Vec<f64>,
    /// Weight of the regression estimate in the returned point (1 = pure
    /// regression, 0 = fallback).
    pub weight: f64,
    pub flags: Vec<String>,
}

/// Diagonal `τ⁻¹` initialization: the diagonal kernels share a total
/// integrated weight of 0.5, everything else is zero and `s²` carries half
/// of the mean squared return.
pub fn fallback_init(target: Target, q: usize, mean_square: f64, nu: f64) -> TargetParams {
    let diagonal: Vec<Role> = match target {
        Target::Daily => vec![Role::K],
        _ => vec![Role::KDD, Role::KNN],
    };
    let share = 0.5 / diagonal.len() as f64;
    assemble(target, q, 0.5 * mean_square, nu, |role, span| {
        if diagonal.contains(&role) {
            let h: f64 = (1..=span).map(|t| 1.0 / t as f64).sum();
            KernelSpec::free((1..=span).map(|t| share / (t as f64 * h)).collect())
        } else {
            KernelSpec::free(vec![0.0; span])
        }
    })
}

fn mean_square(data: &PanelData, q: usize) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for st in &data.stocks {
        for y in st.y.iter().skip(q).filter(|y| y.is_finite()) {
            s += y * y;
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        s / n as f64
    }
}

/// Free-kernel estimates from the regression of squared returns on the
/// lagged squared, cross and signed returns, i.e. the linear projection
/// `E[y²] = s² + Σ K·x` implied by the variance equation.
///
/// When the regression point yields negative variances it is blended with
/// the fallback until it does not; when the panel is too small
/// (`N T < 100 q`) or the normal equations are singular the fallback is
/// used outright. Both cases are flagged.
pub fn moment_init(panel: &ReturnPanel, target: Target, q: usize) -> Result<MomentInit> {
    if q == 0 {
        return Err(Error::InvalidInput("q must be at least 1".into()));
    }
    let data = PanelData::new(panel, target);
    let nu0 = 5.0;
    let m2 = mean_square(&data, q);
    let fallback = fallback_init(target, q, m2, nu0);
    let n_points = data.n_points(q);
    let mut flags = Vec::new();
    if n_points < 100 * q {
        flags.push(format!("moment_init_fallback: {n_points} points < 100 q"));
        return Ok(MomentInit {
            params: fallback,
            stderr: Vec::new(),
            weight: 0.0,
            flags,
        });
    }
    let (space, fb_phi) = Space::from_params(&fallback)?;
    let pk = space.n_kernel();
    let tables: Vec<_> = space.slots.iter().map(|sp| space.tables(sp, &fb_phi)).collect();

    // Normal equations with an intercept column in front.
    let p = pk + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut yty = 0.0;
    for st in &data.stocks {
        let x = jacobian(&space, &tables, st);
        let m = st.y.len().saturating_sub(q);
        let mut a = Vec::with_capacity(m * p);
        let mut y2 = Vec::with_capacity(m);
        for i in 0..m {
            let y = st.y[q + i];
            if !y.is_finite() {
                continue;
            }
            a.push(1.0);
            a.extend_from_slice(&x[i * pk..(i + 1) * pk]);
            y2.push(y * y);
        }
        let rows = y2.len();
        if rows == 0 {
            continue;
        }
        let g = at_b(&a, &a, rows, p, p);
        let b = at_b(&a, &y2, rows, p, 1);
        for i in 0..p {
            xty[i] += b[i];
            for j in 0..p {
                xtx[(i, j)] += g[i * p + j];
            }
        }
        yty += y2.iter().map(|v| v * v).sum::<f64>();
    }
    let Some(chol) = xtx.clone().cholesky() else {
        flags.push("moment_init_fallback: singular regression".into());
        return Ok(MomentInit {
            params: fallback,
            stderr: Vec::new(),
            weight: 0.0,
            flags,
        });
    };
    let beta = chol.solve(&xty);
    let rss = (yty - 2.0 * beta.dot(&xty) + (beta.transpose() * &xtx * &beta)[(0, 0)]).max(0.0);
    let dof = n_points.saturating_sub(p).max(1) as f64;
    let inv = chol.inverse();
    let stderr: Vec<f64> = (1..p).map(|i| (rss / dof * inv[(i, i)]).max(0.0).sqrt()).collect();

    let mut ols_phi = fb_phi.clone();
    ols_phi[..pk].copy_from_slice(&beta.as_slice()[1..]);
    ols_phi[space.s2_index()] = beta[0];
    let mut weight: f64 = 1.0;
    let valid = |phi: &[f64]| evaluate(&space, phi, &data, Order::Value).valid();
    let blend = |w: f64| -> Vec<f64> {
        ols_phi
            .iter()
            .zip(&fb_phi)
            .map(|(o, f)| w * o + (1.0 - w) * f)
            .collect()
    };
    let mut phi = blend(weight);
    while !valid(&phi) {
        weight *= 0.5;
        if weight < 1e-3 {
            weight = 0.0;
            phi = fb_phi.clone();
            break;
        }
        phi = blend(weight);
    }
    if weight < 1.0 {
        flags.push(format!("moment_init_blended: regression weight {weight:.4}"));
    }
    Ok(MomentInit {
        params: space.to_params(&phi),
        stderr,
        weight,
        flags,
    })
}

/// Parametric kernels fitted to tabulated (free) kernels, plus flags for
/// the kernels that fell back to the default shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeFit {
    pub params: TargetParams,
    pub flags: Vec<String>,
}

/// Default shape parameters when a kernel cannot be fitted.
pub const FALLBACK_ALPHA: f64 = 1.0;
pub const FALLBACK_OMEGA: f64 = 1.0 / 50.0;
const MIN_ALPHA: f64 = 1e-3;
const MIN_OMEGA: f64 = 1e-4;

/// Least-squares fit of `ln K(τ) = ln g − α ln τ − ω τ` over the lags where
/// the kernel has the sign of its first coefficients. Returns `None` with
/// fewer than three usable lags.
pub fn fit_power_law(coefficients: &[f64], force_positive: bool) -> Option<KernelSpec> {
    let sign = if force_positive { 1.0 } else { leading_sign(coefficients) };
    let pts: Vec<(f64, f64)> = coefficients
        .iter()
        .enumerate()
        .filter(|(_, &c)| sign * c > 0.0)
        .map(|(i, &c)| ((i + 1) as f64, (sign * c).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let x = DMatrix::from_fn(pts.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => -pts[i].0.ln(),
        _ => -pts[i].0,
    });
    let y = DVector::from_fn(pts.len(), |i, _| pts[i].1);
    let b = least_squares(&x, &y)?;
    let (mut lng, mut alpha, mut omega) = (b[0], b[1], b[2]);
    if alpha < MIN_ALPHA || omega < MIN_OMEGA {
        // refit the remaining parameters with the offending ones clamped
        alpha = alpha.max(MIN_ALPHA);
        omega = omega.max(MIN_OMEGA);
        let refit = |fixed_alpha: bool, fixed_omega: bool| {
            let cols: Vec<usize> = [(1, fixed_alpha), (2, fixed_omega)]
                .iter()
                .filter(|(_, f)| !f)
                .map(|(c, _)| *c)
                .collect();
            let x = DMatrix::from_fn(pts.len(), 1 + cols.len(), |i, j| {
                if j == 0 {
                    1.0
                } else if cols[j - 1] == 1 {
                    -pts[i].0.ln()
                } else {
                    -pts[i].0
                }
            });
            let y = DVector::from_fn(pts.len(), |i, _| {
                let t = pts[i].0;
                pts[i].1
                    + if fixed_alpha { alpha * t.ln() } else { 0.0 }
                    + if fixed_omega { omega * t } else { 0.0 }
            });
            least_squares(&x, &y).map(|b| (b, cols))
        };
        let fixed_alpha = b[1] < MIN_ALPHA;
        let fixed_omega = b[2] < MIN_OMEGA;
        let (b, cols) = refit(fixed_alpha, fixed_omega)?;
        lng = b[0];
        for (k, c) in cols.iter().enumerate() {
            if *c == 1 {
                alpha = b[k + 1].max(MIN_ALPHA);
            } else {
                omega = b[k + 1].max(MIN_OMEGA);
            }
        }
    }
    let g = sign * lng.exp();
    g.is_finite().then(|| KernelSpec::power_law_exp(g, alpha, omega))
}

/// Least-squares fit of `ln |L(τ)| = ln |g| − ω τ` over the lags carrying the
/// kernel's leading sign.
pub fn fit_exponential(coefficients: &[f64]) -> Option<KernelSpec> {
    let sign = leading_sign(coefficients);
    let pts: Vec<(f64, f64)> = coefficients
        .iter()
        .enumerate()
        .filter(|(_, &c)| sign * c > 0.0)
        .map(|(i, &c)| ((i + 1) as f64, (sign * c).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let x = DMatrix::from_fn(pts.len(), 2, |i, j| if j == 0 { 1.0 } else { -pts[i].0 });
    let y = DVector::from_fn(pts.len(), |i, _| pts[i].1);
    let b = least_squares(&x, &y)?;
    let (lng, omega) = if b[1] < MIN_OMEGA {
        let omega = MIN_OMEGA;
        let mean = pts.iter().map(|(t, l)| l + omega * t).sum::<f64>() / pts.len() as f64;
        (mean, omega)
    } else {
        (b[0], b[1])
    };
    let g = sign * lng.exp();
    g.is_finite().then(|| KernelSpec::exponential(g, omega))
}

fn leading_sign(c: &[f64]) -> f64 {
    let s: f64 = c.iter().take(5).sum();
    if s < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.cholesky().map(|c| c.solve(&xty))
}

/// Parametric starting point from tabulated kernels: power laws for the
/// quadratic kernels, exponentials for the leverage kernels. `s²` and ν are
/// carried over; the lag range becomes `q`.
pub fn fit_functional_forms(free: &TargetParams, q: usize) -> Result<ShapeFit> {
    free.validate()?;
    let target = free.target();
    let mut flags = Vec::new();
    let params = assemble(target, q, free.s2(), free.nu(), |role, _| {
        let kernel = free.kernel(role).expect("role belongs to target");
        let span = role_span(target, role, free.q()).unwrap_or(0);
        let coefficients = kernel.table(span).unwrap_or_default();
        let fitted = if role.is_quadratic() {
            if let KernelSpec::PowerLawExp { .. } = kernel {
                Some(kernel.clone())
            } else {
                fit_power_law(&coefficients, role.is_diagonal())
            }
        } else if let KernelSpec::Exponential { .. } = kernel {
            Some(kernel.clone())
        } else {
            fit_exponential(&coefficients)
        };
        fitted.unwrap_or_else(|| {
            flags.push(format!("shape_fallback: {}", role.label()));
            let lead: f64 = coefficients.iter().take(5).sum::<f64>() / coefficients.len().clamp(1, 5) as f64;
            let g = if role.is_diagonal() {
                lead.abs().max(1e-3)
            } else {
                lead
            };
            if role.is_quadratic() {
                KernelSpec::power_law_exp(g, FALLBACK_ALPHA, FALLBACK_OMEGA)
            } else {
                KernelSpec::exponential(g, FALLBACK_OMEGA)
            }
        })
    });
    Ok(ShapeFit { params, flags })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_power_law_is_recovered() {
        let k = KernelSpec::power_law_exp(0.08, 0.7, 0.006);
        let fit = fit_power_law(&k.table(63).unwrap(), true).unwrap();
        let KernelSpec::PowerLawExp { g, alpha, omega } = fit else {
            panic!()
        };
        assert!((g - 0.08).abs() < 1e-6);
        assert!((alpha - 0.7).abs() < 1e-6);
        assert!((omega - 0.006).abs() < 1e-6);
    }

    #[test]
    fn negative_kernels_keep_their_sign() {
        let k = KernelSpec::power_law_exp(-0.01, 1.2, 0.01);
        let fit = fit_power_law(&k.table(40).unwrap(), false).unwrap();
        let KernelSpec::PowerLawExp { g, alpha, .. } = fit else {
            panic!()
        };
        assert!((g + 0.01).abs() < 1e-9 && (alpha - 1.2).abs() < 1e-9);
        let l = KernelSpec::exponential(-0.02, 0.05);
        let fit = fit_exponential(&l.table(63).unwrap()).unwrap();
        let KernelSpec::Exponential { g, omega } = fit else {
            panic!()
        };
        assert!((g + 0.02).abs() < 1e-12 && (omega - 0.05).abs() < 1e-12);
    }

    #[test]
    fn all_negative_diagonal_kernel_falls_back() {
        let mut free = fallback_init(Target::Day, 10, 1.0, 5.0);
        if let TargetParams::Day(p) = &mut free {
            p.k_dd = KernelSpec::free(vec![-0.01; 10]);
        }
        let fit = fit_functional_forms(&free, 20).unwrap();
        assert!(fit.flags.iter().any(|f| f.contains("DD")));
        let KernelSpec::PowerLawExp { alpha, omega, g } = fit.params.kernel(Role::KDD).unwrap().clone() else {
            panic!()
        };
        assert!(g > 0.0);
        assert_eq!((alpha, omega), (FALLBACK_ALPHA, FALLBACK_OMEGA));
    }

    #[test]
    fn fallback_is_used_on_tiny_panels() {
        let panel = crate::data::ReturnPanel::from_components(
            vec!["A".into()],
            crate::data::business_days(chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), 10),
            vec![vec![0.1; 10]],
            vec![vec![0.1; 10]],
        )
        .unwrap();
        let init = moment_init(&panel, Target::Day, 2).unwrap();
        assert_eq!(init.weight, 0.0);
        assert!(init.flags[0].starts_with("moment_init_fallback"));
        init.params.validate().unwrap();
    }
}
