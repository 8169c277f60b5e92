//! Stability of the variance feedback and positivity of the quadratic
//! forms, with eigenvalue oracles.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::filter::{build_quadratic_matrix, QuadraticForm};
use crate::kernel::KernelSpec;
use crate::layout::{role_span, Role, Target};
use crate::model::{BivariateModel, EquationParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// `[K̂_DD^D, K̂_NN^D, K̂_DD^N, K̂_NN^N]`.
    pub integrated: [f64; 4],
    /// Real parts, `λ₁ ≥ λ₂`.
    pub eigenvalues: [f64; 2],
    pub complex: bool,
    pub spectral_radius: f64,
    pub stable: bool,
    /// Stationary `(⟨σD²⟩, ⟨σN²⟩)` when stable.
    pub fixed_point: Option<[f64; 2]>,
}

fn integrated(params: &EquationParams, target: Target, role: Role) -> f64 {
    let span = role_span(target, role, params.q).unwrap_or(0);
    params
        .kernel(role)
        .and_then(|k| k.integrated(span).ok())
        .unwrap_or(f64::NAN)
}

/// Closed-form eigenvalues of the 2×2 feedback matrix of integrated
/// diagonal kernels, and the self-consistent average variances.
pub fn check_stability(model: &BivariateModel) -> StabilityReport {
    let a = integrated(&model.day, Target::Day, Role::KDD);
    let b = integrated(&model.day, Target::Day, Role::KNN);
    let c = integrated(&model.night, Target::Night, Role::KDD);
    let d = integrated(&model.night, Target::Night, Role::KNN);
    let half_trace = 0.5 * (a + d);
    let disc = 0.25 * (a - d) * (a - d) + b * c;
    let (eigenvalues, complex, spectral_radius) = if disc >= 0.0 {
        let s = disc.sqrt();
        let l = [half_trace + s, half_trace - s];
        (l, false, l[0].abs().max(l[1].abs()))
    } else {
        let det = a * d - b * c;
        ([half_trace, half_trace], true, det.sqrt())
    };
    let stable = spectral_radius < 1.0;
    let fixed_point = stable.then(|| {
        // (1 - a) x - b y = s_D², -c x + (1 - d) y = s_N²
        let (sd, sn) = (model.day.s2, model.night.s2);
        let det = (1.0 - a) * (1.0 - d) - b * c;
        [
            ((1.0 - d) * sd + b * sn) / det,
            (c * sd + (1.0 - a) * sn) / det,
        ]
    });
    StabilityReport {
        integrated: [a, b, c, d],
        eigenvalues,
        complex,
        spectral_radius,
        stable,
        fixed_point,
    }
}

/// Lag-by-lag check `K_ND² ≤ K_DD K_NN` for equations without the lagged
/// cross kernel. Necessary and sufficient in that case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleCrossReport {
    pub applicable: bool,
    pub note: Option<String>,
    /// Verdict per intra-day lag τ = 1..q.
    pub per_lag: Vec<bool>,
    /// Smallest `K_DD K_NN − K_ND²` over lags.
    pub min_margin: f64,
    pub pass: bool,
}

/// Sufficient lag-by-lag criterion with both cross kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoubleCrossReport {
    pub applicable: bool,
    pub note: Option<String>,
    /// `sup_β min_τ 𝓜(β, τ)` (capped at 1e12).
    pub sup_min: f64,
    pub beta: f64,
    pub pass: bool,
    /// Smallest eigenvalue of the assembled quadratic matrix.
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeverageReport {
    pub applicable: bool,
    pub note: Option<String>,
    /// `Lᵀ K⁻¹ L`.
    pub value: f64,
    /// `4 s²`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityReport {
    pub target: Target,
    pub q: usize,
    pub s2: f64,
    pub single: SingleCrossReport,
    pub double: DoubleCrossReport,
    pub leverage: LeverageReport,
    /// Conservative verdict: the sufficient criterion and the leverage bound
    /// both hold.
    pub overall: bool,
}

/// Links of the intra-day row of lag τ: the diagonal `K_DD(τ)`, the
/// same-date cross term to `rN_{t-τ}` and the lagged cross term to
/// `rN_{t-τ+1}`, with the diagonals of those two overnight rows.
#[derive(Debug, Clone, Copy)]
struct Chain {
    dd: f64,
    nd: f64,
    nn_same: f64,
    dn: f64,
    nn_prev: f64,
}

fn chains(form: &QuadraticForm) -> Vec<Chain> {
    let q = form.q;
    let k = &form.k;
    (1..=q)
        .map(|tau| {
            let d = tau - 1;
            Chain {
                dd: k[(d, d)],
                nd: k[(d, q + tau)],
                nn_same: k[(q + tau, q + tau)],
                dn: k[(d, q + tau - 1)],
                nn_prev: k[(q + tau - 1, q + tau - 1)],
            }
        })
        .collect()
}

fn diagonals_nonnegative(form: &QuadraticForm) -> Option<String> {
    let worst = form.k.diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
    (worst < 0.0).then(|| format!("negative diagonal coefficient {worst:e}"))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn check_positivity_single(form: &QuadraticForm) -> SingleCrossReport {
    let mut report = SingleCrossReport {
        applicable: true,
        note: None,
        per_lag: Vec::new(),
        min_margin: f64::INFINITY,
        pass: false,
    };
    if let Some(note) = diagonals_nonnegative(form) {
        report.applicable = false;
        report.note = Some(note);
        return report;
    }
    let chains = chains(form);
    if chains.iter().any(|c| c.dn != 0.0) {
        report.note = Some("lagged cross kernel is non-zero; verdict ignores it".into());
    }
    for c in &chains {
        let margin = c.dd * c.nn_same - c.nd * c.nd;
        report.per_lag.push(margin >= 0.0);
        report.min_margin = report.min_margin.min(margin);
    }
    report.pass = report.per_lag.iter().all(|&ok| ok);
    report
}

const M_CAP: f64 = 1e12;

/// `𝓜(β, τ)`: the reciprocal of the share of `K_DD(τ)` needed by the two
/// cross terms when the overnight diagonals are split `β : 1 − β`.
fn criterion_m(c: &Chain, beta: f64) -> f64 {
    let term = |x: f64, denom: f64| {
        if x == 0.0 {
            0.0
        } else if denom > 0.0 {
            x * x / denom
        } else {
            f64::INFINITY
        }
    };
    let load = term(c.nd, beta * c.dd * c.nn_same) + term(c.dn, (1.0 - beta) * c.dd * c.nn_prev);
    if load == 0.0 {
        M_CAP
    } else {
        (1.0 / load).min(M_CAP)
    }
}

fn min_over_lags(chains: &[Chain], beta: f64) -> f64 {
    chains
        .iter()
        .map(|c| criterion_m(c, beta))
        .fold(M_CAP, f64::min)
}

/// Maximize `min_τ 𝓜(β, τ)` over β ∈ (0, 1): a 1000-point grid, then
/// golden-section refinement around the best grid point.
fn sup_over_beta(chains: &[Chain]) -> (f64, f64) {
    let n = 1000;
    let mut best = (0.5, f64::NEG_INFINITY);
    for i in 0..n {
        let beta = (i as f64 + 0.5) / n as f64;
        let v = min_over_lags(chains, beta);
        if v > best.1 {
            best = (beta, v);
        }
    }
    let width = 1.0 / n as f64;
    let (mut lo, mut hi) = ((best.0 - width).max(1e-12), (best.0 + width).min(1.0 - 1e-12));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = min_over_lags(chains, x1);
    let mut f2 = min_over_lags(chains, x2);
    while hi - lo > 1e-9 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = min_over_lags(chains, x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = min_over_lags(chains, x1);
        }
    }
    // The endpoints are admissible when the corresponding cross kernel
    // vanishes, which recovers the single-kernel criterion exactly.
    for beta in [0.5 * (lo + hi), 0.0, 1.0] {
        let v = min_over_lags(chains, beta);
        if v > best.1 {
            best = (beta, v);
        }
    }
    best
}

pub fn check_positivity_double(form: &QuadraticForm) -> DoubleCrossReport {
    let min_eigenvalue = min_eigenvalue(&form.k);
    let mut report = DoubleCrossReport {
        applicable: true,
        note: None,
        sup_min: f64::NAN,
        beta: f64::NAN,
        pass: false,
        min_eigenvalue,
    };
    if let Some(note) = diagonals_nonnegative(form) {
        report.applicable = false;
        report.note = Some(note);
        return report;
    }
    let (beta, sup_min) = sup_over_beta(&chains(form));
    report.beta = beta;
    report.sup_min = sup_min;
    report.pass = sup_min >= 1.0;
    report
}

/// Rows of the form that carry any coefficient; the others are identically
/// absent from the equation (e.g. `rN_t` in the overnight equation).
fn active_rows(form: &QuadraticForm) -> Vec<usize> {
    (0..form.k.nrows())
        .filter(|&i| form.l[i] != 0.0 || form.k.row(i).iter().any(|&x| x != 0.0))
        .collect()
}

pub fn check_positivity_leverage(form: &QuadraticForm) -> LeverageReport {
    let bound = 4.0 * form.s2;
    let mut report = LeverageReport {
        applicable: true,
        note: None,
        value: f64::NAN,
        bound,
        pass: false,
    };
    let rows = active_rows(form);
    let k = DMatrix::from_fn(rows.len(), rows.len(), |i, j| form.k[(rows[i], rows[j])]);
    let l = DVector::from_fn(rows.len(), |i, _| form.l[rows[i]]);
    if l.iter().all(|&x| x == 0.0) {
        report.value = 0.0;
        report.pass = form.s2 >= 0.0;
        return report;
    }
    match k.clone().cholesky() {
        Some(chol) => {
            let value = l.dot(&chol.solve(&l));
            report.value = value;
            report.pass = value <= bound;
        }
        None => {
            report.applicable = false;
            report.note = Some("quadratic matrix is not positive definite".into());
        }
    }
    report
}

pub fn check_positivity(params: &EquationParams, target: Target) -> Result<PositivityReport> {
    let form = build_quadratic_matrix(params, target)?;
    let single = check_positivity_single(&form);
    let double = check_positivity_double(&form);
    let leverage = check_positivity_leverage(&form);
    let overall = double.applicable && double.pass && leverage.applicable && leverage.pass;
    Ok(PositivityReport {
        target,
        q: params.q,
        s2: params.s2,
        single,
        double,
        leverage,
        overall,
    })
}

/// Evaluate an equation at a shorter maximum lag. Kernels are cut at the
/// new spans and the expected contribution of the removed diagonal tail,
/// `Σ_{τ>span} K(τ) ⟨σ²⟩`, is added to the baseline.
pub fn truncate_equation(
    params: &EquationParams,
    target: Target,
    q: usize,
    fixed_point: [f64; 2],
) -> Result<EquationParams> {
    let mut out = params.clone();
    out.q = q;
    if q >= params.q {
        return Ok(out);
    }
    let [vd, vn] = fixed_point;
    for (role, v) in [(Role::KDD, vd), (Role::KNN, vn)] {
        let kernel = params.kernel(role).expect("bivariate role");
        let old = role_span(target, role, params.q).unwrap_or(0);
        let new = role_span(target, role, q).unwrap_or(0);
        let full = kernel.table(old)?;
        out.s2 += full[new..].iter().sum::<f64>() * v;
    }
    for &role in target.roles() {
        let kernel = out.kernel_mut(role).expect("bivariate role");
        if let KernelSpec::Free { coefficients } = kernel {
            coefficients.truncate(role_span(target, role, q).unwrap_or(0));
        }
    }
    Ok(out)
}

/// Replace ill-determined rates (those whose confidence interval contains
/// zero) by the upper bound of their interval. Half-widths are keyed as in
/// equation files (`omega_DD`, `omega_LN`, ...). Returns the names changed.
pub fn with_omega_upper_bounds(
    params: &EquationParams,
    ci95: &BTreeMap<String, f64>,
) -> (EquationParams, Vec<String>) {
    let mut out = params.clone();
    let mut changed = Vec::new();
    for &role in &crate::layout::BIVARIATE_ROLES {
        let name = format!("omega_{}", role.label());
        let Some(&half) = ci95.get(&name) else {
            continue;
        };
        let kernel = out.kernel_mut(role).expect("bivariate role");
        match kernel {
            KernelSpec::PowerLawExp { omega, .. } | KernelSpec::Exponential { omega, .. } => {
                if *omega - half < 0.0 {
                    *omega += half;
                    changed.push(name);
                }
            }
            KernelSpec::Free { .. } => {}
        }
    }
    (out, changed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model_with(a: f64, b: f64, c: f64, d: f64) -> BivariateModel {
        let mut day = EquationParams::constant(1, 1.0, 5.0);
        day.k_dd = KernelSpec::free(vec![a]);
        day.k_nn = KernelSpec::free(vec![b, 0.0]);
        let mut night = EquationParams::constant(1, 1.0, 5.0);
        night.k_dd = KernelSpec::free(vec![c]);
        night.k_nn = KernelSpec::free(vec![d]);
        night.k_dn = KernelSpec::free(vec![]);
        BivariateModel::new(day, night, 0.0, [0.5, 0.5]).unwrap()
    }

    #[test]
    fn diagonal_feedback_matrix() {
        let r = check_stability(&model_with(0.5, 0.0, 0.0, 0.3));
        assert!((r.eigenvalues[0] - 0.5).abs() < 1e-15 && (r.eigenvalues[1] - 0.3).abs() < 1e-15);
        assert!(r.stable);
        let [x, y] = r.fixed_point.unwrap();
        assert!((x - 2.0).abs() < 1e-12 && (y - 1.0 / 0.7).abs() < 1e-12);
        assert!(!check_stability(&model_with(1.0, 0.0, 0.0, 0.2)).stable);
    }

    #[test]
    fn closed_form_matches_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..0.6));
            let r = check_stability(&model_with(v[0], v[1], v[2], v[3]));
            let m = nalgebra::Matrix2::new(v[0], v[1], v[2], v[3]);
            let mut ev: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
            ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
            assert!((ev[0] - r.eigenvalues[0]).abs() < 1e-12);
            assert!((ev[1] - r.eigenvalues[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_eigenvalues() {
        let r = check_stability(&reference::model());
        assert!((r.eigenvalues[0] - 0.94).abs() < 0.02, "{:?}", r.eigenvalues);
        assert!((r.eigenvalues[1] - 0.48).abs() < 0.02, "{:?}", r.eigenvalues);
        let [vd, vn] = r.fixed_point.unwrap();
        assert!((vd - 1.0).abs() < 2e-3 && (vn - 1.03).abs() < 2e-3, "{vd} {vn}");
    }

    fn form(q: usize, dd: &[f64], nn: &[f64], nd: &[f64], dn: &[f64], target: Target) -> QuadraticForm {
        let mut p = EquationParams::constant(q, 0.0, 5.0);
        p.k_dd = KernelSpec::free(dd.to_vec());
        p.k_nn = KernelSpec::free(nn.to_vec());
        p.k_nd = KernelSpec::free(nd.to_vec());
        p.k_dn = KernelSpec::free(dn.to_vec());
        p.l_d = KernelSpec::free(vec![0.0; q]);
        p.l_n = KernelSpec::free(vec![0.0; q + 1]);
        build_quadratic_matrix(&p, target).unwrap()
    }

    #[test]
    fn saturated_single_criterion() {
        // standard ARCH embedding: K_ND = sqrt(K_DD K_NN)
        let dd = [0.2, 0.1, 0.05];
        let nn = [0.3, 0.15, 0.08];
        let nd: Vec<f64> = dd.iter().zip(&nn).map(|(a, b)| f64::sqrt(a * b)).collect();
        let f = form(3, &dd, &nn, &nd, &[0.0; 3], Target::Night);
        let r = check_positivity_single(&f);
        assert!(r.pass);
        assert!(r.min_margin.abs() < 1e-15);
    }

    #[test]
    fn single_reduction_of_double() {
        let f = form(2, &[0.2, 0.1], &[0.1, 0.3, 0.2], &[0.1, 0.05], &[0.0; 2], Target::Day);
        let s = check_positivity_single(&f);
        let d = check_positivity_double(&f);
        assert_eq!(s.pass, d.pass);
        let dd = [0.2, 0.1];
        let nn = [0.3, 0.15];
        let nd: Vec<f64> = dd.iter().zip(&nn).map(|(a, b)| f64::sqrt(a * b)).collect();
        let f = form(2, &dd, &nn, &nd, &[0.0], Target::Night);
        assert!(check_positivity_single(&f).pass);
        let d = check_positivity_double(&f);
        assert!((d.sup_min - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_leverage_case() {
        let mut p = EquationParams::constant(1, 0.01, 5.0);
        p.k_dd = KernelSpec::free(vec![0.1]);
        p.l_d = KernelSpec::free(vec![-0.06]);
        p.k_dn = KernelSpec::free(vec![]);
        let f = build_quadratic_matrix(&p, Target::Night).unwrap();
        let r = check_positivity_leverage(&f);
        assert!(r.applicable && r.pass);
        assert!((r.value - 0.036).abs() < 1e-12);
        p.s2 = 0.0;
        let f = build_quadratic_matrix(&p, Target::Night).unwrap();
        assert!(!check_positivity_leverage(&f).pass);
        p.l_d = KernelSpec::zero();
        let f = build_quadratic_matrix(&p, Target::Night).unwrap();
        assert!(check_positivity_leverage(&f).pass);
    }

    #[test]
    fn omega_upper_bound_only_for_ill_determined_rates() {
        let doc = reference::night_document();
        let (p, changed) = with_omega_upper_bounds(&doc.params, &doc.ci95);
        assert!(changed.contains(&"omega_DN".to_string()));
        assert!(!changed.contains(&"omega_LD".to_string()));
        match p.k_dn {
            KernelSpec::PowerLawExp { omega, .. } => assert!((omega - 0.2302).abs() < 1e-12),
            _ => panic!(),
        }
    }
}
