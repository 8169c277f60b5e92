//! Student-t maximum-likelihood calibration.
//!
//! The pipeline runs in three steps: a moment regression seeds free
//! (tabulated) kernels, which are fitted by maximum likelihood over a
//! short lag range; power-law and exponential shapes fitted to those
//! tables then seed the parametric fit over the full lag range. An
//! optional fourth step refits the overnight equation with a zero
//! baseline.

pub mod constrained;
pub mod init;
pub mod likelihood;
pub mod nu;
pub(crate) mod objective;
pub(crate) mod optimizer;
pub(crate) mod problem;
pub(crate) mod space;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use constrained::ConstrainedNightSpec;
pub use init::{
    fallback_init, fit_exponential, fit_functional_forms, fit_power_law, moment_init, MomentInit,
    ShapeFit,
};
pub use likelihood::{loglik_of_predictions, student_constant, student_kernel, student_loglik, LikelihoodReport};
pub use nu::{estimate_nu, NuEstimate, NU_MAX};
pub use space::Transform;

use crate::data::ReturnPanel;
use crate::error::{Error, Result};
use crate::filter::filter_target;
use crate::kernel::KernelSpec;
use crate::layout::{role_span, slots, Role, Source, Target};
use crate::model::{DailyArchParams, EquationParams, TargetParams};
use constrained::NightMap;
use objective::{evaluate, Order, PanelData};
use optimizer::{maximize, Settings};
use problem::Problem;
use space::{Shape, Space};

/// Gaussian quantile used for the reported confidence intervals.
pub const CI_QUANTILE: f64 = 1.98;

/// Parameters of `target` with kernels produced by `kernel(role, span)`.
pub(crate) fn assemble(
    target: Target,
    q: usize,
    s2: f64,
    nu: f64,
    mut kernel: impl FnMut(Role, usize) -> KernelSpec,
) -> TargetParams {
    let mut k = |role| kernel(role, role_span(target, role, q).unwrap_or(0));
    match target {
        Target::Daily => TargetParams::Daily(DailyArchParams {
            q,
            s2,
            nu,
            k: k(Role::K),
            l: k(Role::L),
        }),
        _ => TargetParams::new_bivariate(
            target,
            EquationParams {
                q,
                s2,
                nu,
                k_dd: k(Role::KDD),
                k_nn: k(Role::KNN),
                k_nd: k(Role::KND),
                k_dn: k(Role::KDN),
                l_d: k(Role::LD),
                l_n: k(Role::LN),
            },
        ),
    }
}

/// Which estimation produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStep {
    Free,
    Parametric,
    ConstrainedNight,
}

/// Outcome of one maximum-likelihood estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub target: Target,
    pub step: FitStep,
    pub params: TargetParams,
    /// Estimated parameters, in the order of `values`, `stderr` and the
    /// Hessian rows.
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// Asymptotic standard errors from the inverse observed information;
    /// `None` where the information matrix gives no positive variance.
    pub stderr: Vec<Option<f64>>,
    /// Half-widths of the 95% intervals.
    pub ci95: BTreeMap<String, f64>,
    /// Hessian of the summed log-likelihood in the natural parameters.
    pub hessian: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the optimizer-coordinate gradient divided by the number
    /// of points.
    pub final_gradient_norm: f64,
    pub likelihood: LikelihoodReport,
    /// Log-likelihood per point after every accepted step.
    pub trace: Vec<f64>,
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<ConstrainedNightSpec>,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn stderr_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).and_then(|i| self.stderr[i])
    }

    pub fn hessian_matrix(&self) -> DMatrix<f64> {
        let n = self.hessian.len();
        DMatrix::from_fn(n, n, |i, j| self.hessian[i][j])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub max_iter: usize,
    /// Stop when the gradient max-norm per point falls below this.
    pub tol: f64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

impl From<FitSettings> for Settings {
    fn from(s: FitSettings) -> Self {
        Settings {
            max_iter: s.max_iter,
            tol: s.tol,
        }
    }
}

fn check_history(panel: &ReturnPanel, q: usize) -> Result<()> {
    if panel.n_stocks() == 0 || panel.n_dates() <= q {
        return Err(Error::InvalidInput(format!(
            "history of {} dates is too short for q = {q}",
            panel.n_dates()
        )));
    }
    Ok(())
}

/// Average Student log-likelihood of the filtered variances over every
/// stock and date after the warm-up. Negative variances make the report
/// invalid.
pub fn panel_loglik(params: &TargetParams, panel: &ReturnPanel) -> Result<LikelihoodReport> {
    check_history(panel, params.q())?;
    params.validate()?;
    let data = PanelData::new(panel, params.target());
    let (space, phi) = space_of(params)?;
    let e = evaluate(&space, &phi, &data, Order::Value);
    Ok(LikelihoodReport::from_sums(e.value, e.n_points, params.nu(), e.negatives))
}

/// Summed log-likelihood with its exact gradient and Hessian in the
/// natural parameters (kernel parameters slot by slot, then `s2` and `nu`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikelihoodDerivatives {
    pub names: Vec<String>,
    pub value: f64,
    pub n_points: usize,
    pub gradient: Vec<f64>,
    pub hessian: Vec<Vec<f64>>,
}

pub fn likelihood_derivatives(params: &TargetParams, panel: &ReturnPanel) -> Result<LikelihoodDerivatives> {
    check_history(panel, params.q())?;
    let data = PanelData::new(panel, params.target());
    let (space, phi) = space_of(params)?;
    let e = evaluate(&space, &phi, &data, Order::Hessian);
    if !e.valid() {
        return Err(Error::NegativeVariance {
            count: e.negatives,
            worst: e.worst,
        });
    }
    let h = e.hess.expect("hessian requested");
    Ok(LikelihoodDerivatives {
        names: space.names.clone(),
        value: e.value,
        n_points: e.n_points,
        gradient: e.grad.expect("gradient requested").iter().copied().collect(),
        hessian: rows(&h),
    })
}

/// Natural parameters of `params` in the order used by
/// [`likelihood_derivatives`].
pub fn parameter_vector(params: &TargetParams) -> Result<(Vec<String>, Vec<f64>)> {
    let (space, phi) = space_of(params)?;
    Ok((space.names, phi))
}

/// `params` with its natural parameters replaced by `values`.
pub fn with_parameter_vector(params: &TargetParams, values: &[f64]) -> Result<TargetParams> {
    let (space, phi) = space_of(params)?;
    if values.len() != phi.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} parameters, got {}",
            phi.len(),
            values.len()
        )));
    }
    Ok(space.to_params(values))
}

/// Parameter space of `params`; zero kernels without a shape become zero
/// free tables so they stay inert under every transform.
fn space_of(params: &TargetParams) -> Result<(Space, Vec<f64>)> {
    params.validate()?;
    let target = params.target();
    let needs_fix = slots(target, params.q()).iter().any(|s| {
        matches!(params.kernel(s.role), Some(KernelSpec::Exponential { omega, .. } | KernelSpec::PowerLawExp { omega, .. }) if *omega <= 0.0)
    });
    if !needs_fix {
        return Space::from_params(params);
    }
    let fixed = assemble(target, params.q(), params.s2(), params.nu(), |role, span| {
        let k = params.kernel(role).expect("role belongs to target");
        match k {
            KernelSpec::Exponential { omega, .. } | KernelSpec::PowerLawExp { omega, .. } if *omega <= 0.0 => {
                KernelSpec::free(k.table(span).unwrap_or_else(|_| vec![0.0; span]))
            }
            _ => k.clone(),
        }
    });
    Space::from_params(&fixed)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Standardized residuals `y/σ` of the target over all stocks (dates with
/// a missing return or a non-positive variance are skipped).
pub fn residuals(params: &TargetParams, panel: &ReturnPanel) -> Result<Vec<f64>> {
    check_history(panel, params.q())?;
    let q = params.q();
    let mut out = Vec::new();
    for s in 0..panel.n_stocks() {
        let (rd, rn) = (&panel.intraday[s], &panel.overnight[s]);
        let v = filter_target(params, rd, rn)?;
        let y = match params.target() {
            Target::Day => rd,
            Target::Night => rn,
            Target::Daily => &panel.daily[s],
        };
        for (vi, yi) in v.iter().zip(&y[q..]) {
            if yi.is_finite() && *vi > 0.0 {
                out.push(yi / vi.sqrt());
            }
        }
    }
    Ok(out)
}

/// Standard errors from the natural-parameter Hessian.
fn standard_errors(h: &DMatrix<f64>, flags: &mut Vec<String>) -> Vec<Option<f64>> {
    let n = h.nrows();
    let neg = -h;
    if let Some(chol) = neg.clone().cholesky() {
        let inv = chol.inverse();
        return (0..n).map(|i| Some(inv[(i, i)].sqrt())).collect();
    }
    flags.push("hessian_not_negative_definite".into());
    match neg.pseudo_inverse(1e-12) {
        Ok(inv) => (0..n)
            .map(|i| (inv[(i, i)] > 0.0).then(|| inv[(i, i)].sqrt()))
            .collect(),
        Err(_) => vec![None; n],
    }
}

fn run(
    problem: &Problem,
    theta0: &[f64],
    names: Vec<String>,
    step: FitStep,
    settings: FitSettings,
    mut flags: Vec<String>,
) -> Result<(FitResult, Vec<f64>)> {
    let u0 = problem
        .unconstrained(theta0)
        .ok_or_else(|| Error::InvalidInput("starting point outside the parameter domain".into()))?;
    let start = evaluate(
        problem.space,
        &problem.phi(theta0).ok_or_else(|| Error::Numerical("starting point violates the constraint".into()))?,
        problem.data,
        Order::Value,
    );
    if !start.valid() {
        return Err(Error::NegativeVariance {
            count: start.negatives,
            worst: start.worst,
        });
    }
    let out = maximize(problem, u0, settings.into())
        .ok_or_else(|| Error::Numerical("derivatives unavailable at the starting point".into()))?;
    let theta = problem.theta(&out.u);
    let phi = problem.phi(&theta).expect("accepted point is valid");
    let np = problem.natural(&theta).expect("accepted point is valid");
    let n_points = problem.n_points;
    let stderr = standard_errors(&np.hess, &mut flags);
    if !out.converged {
        flags.push(format!("not_converged after {} iterations", out.iterations));
    }
    let ci95 = names
        .iter()
        .zip(&stderr)
        .filter_map(|(n, s)| s.map(|s| (n.clone(), CI_QUANTILE * s)))
        .collect();
    let nu = phi[problem.space.nu_index()];
    let result = FitResult {
        target: problem.space.target,
        step,
        params: problem.space.to_params(&phi),
        names,
        values: theta,
        stderr,
        ci95,
        hessian: rows(&np.hess),
        converged: out.converged,
        iterations: out.iterations,
        final_gradient_norm: out.grad.amax() / n_points.max(1) as f64,
        likelihood: LikelihoodReport::from_sums(out.value, n_points, nu, 0),
        trace: out.trace.iter().map(|v| v / n_points.max(1) as f64).collect(),
        flags,
        constrained: None,
    };
    Ok((result, phi))
}

fn fit_all(panel: &ReturnPanel, init: &TargetParams, step: FitStep, settings: FitSettings) -> Result<FitResult> {
    check_history(panel, init.q())?;
    let data = PanelData::new(panel, init.target());
    let (space, phi) = space_of(init)?;
    let active: Vec<usize> = (0..space.dim()).collect();
    let problem = Problem::new(&space, &data, phi.clone(), active);
    let (mut fit, _) = run(&problem, &phi, space.names.clone(), step, settings, Vec::new())?;
    match step {
        FitStep::Free => {
            for sp in space.slots.iter().filter(|sp| sp.shape == Shape::Free && sp.n > 0) {
                let insignificant = (sp.start..sp.start + sp.n).all(|i| match fit.stderr[i] {
                    Some(se) => fit.values[i].abs() < 2.0 * se,
                    None => true,
                });
                if insignificant {
                    fit.flags.push(format!("insignificant_kernel: {}", sp.slot.role.label()));
                }
            }
        }
        FitStep::Parametric => {
            for sp in space.slots.iter().filter(|sp| sp.shape == Shape::PowerLaw) {
                let (a, w) = (sp.start + 1, sp.start + 2);
                if let Some(se) = fit.stderr[w] {
                    if fit.values[a] > 1.0 && fit.values[w] - CI_QUANTILE * se < 0.0 {
                        fit.flags.push(format!("weakly_identified: {}", fit.names[w]));
                    }
                }
            }
        }
        FitStep::ConstrainedNight => {}
    }
    Ok(fit)
}

/// Maximum-likelihood fit of tabulated kernels, `s²` and ν from `init`,
/// whose kernels must all be free.
pub fn mle_free(panel: &ReturnPanel, init: &TargetParams, settings: FitSettings) -> Result<FitResult> {
    if slots(init.target(), init.q())
        .iter()
        .any(|s| !init.kernel(s.role).is_some_and(KernelSpec::is_free))
    {
        return Err(Error::InvalidInput("mle_free needs free kernels".into()));
    }
    fit_all(panel, init, FitStep::Free, settings)
}

/// Maximum-likelihood fit of the kernel shape parameters, `s²` and ν;
/// the kernels of `init` must all be parametric.
pub fn mle_parametric(panel: &ReturnPanel, init: &TargetParams, settings: FitSettings) -> Result<FitResult> {
    if slots(init.target(), init.q())
        .iter()
        .any(|s| init.kernel(s.role).is_none_or(KernelSpec::is_free))
    {
        return Err(Error::InvalidInput("mle_parametric needs parametric kernels".into()));
    }
    fit_all(panel, init, FitStep::Parametric, settings)
}

/// Overnight refit with `s² = 0`. Only the two diagonal kernels move; their
/// common amplitude follows from the constraint
/// `ρ Σ K_DD + Σ K_NN + c = 1`, where `c` is the contribution of the frozen
/// cross and leverage kernels under the pooled data moments and
/// `ρ = ⟨rD²⟩/⟨rN²⟩`. ν is kept from `init`.
pub fn mle_night_constrained(panel: &ReturnPanel, init: &TargetParams, settings: FitSettings) -> Result<FitResult> {
    let TargetParams::Night(eq) = init else {
        return Err(Error::InvalidInput("constrained fit applies to the night equation".into()));
    };
    let q = eq.q;
    check_history(panel, q)?;
    let (KernelSpec::PowerLawExp { g: g1, alpha: a1, omega: w1 }, KernelSpec::PowerLawExp { g: g2, alpha: a2, omega: w2 }) =
        (&eq.k_dd, &eq.k_nn)
    else {
        return Err(Error::InvalidInput("constrained fit needs power-law diagonal kernels".into()));
    };
    let data = PanelData::new(panel, Target::Night);
    let mean = |s| data.pooled_mean(s, q);
    let nn = mean(Source::NN);
    let rho = mean(Source::DD) / nn;
    let integrated = |k: &KernelSpec, role| k.integrated(role_span(Target::Night, role, q).unwrap_or(0));
    let c = (integrated(&eq.k_nd, Role::KND)? * mean(Source::ND)
        + integrated(&eq.k_dn, Role::KDN)? * mean(Source::DNLag)
        + integrated(&eq.l_n, Role::LN)? * mean(Source::N)
        + integrated(&eq.l_d, Role::LD)? * mean(Source::D))
        / nn;
    if !(c < 1.0) {
        return Err(Error::Numerical(format!("fixed-kernel contribution c = {c} is not below 1")));
    }
    let mut start = eq.clone();
    start.s2 = 0.0;
    let start = TargetParams::Night(start);
    let (space, phi) = space_of(&start)?;
    let idx = |n: &str| space.index_of(n).expect("diagonal parameter");
    let active = vec![
        idx("g_DD"),
        idx("alpha_DD"),
        idx("omega_DD"),
        idx("g_NN"),
        idx("alpha_NN"),
        idx("omega_NN"),
    ];
    if !(*g1 > 0.0 && *g2 > 0.0) {
        return Err(Error::InvalidInput("diagonal amplitudes must be positive".into()));
    }
    let map = NightMap { c, rho, q };
    let theta0 = [g2 / g1, *a1, *w1, *a2, *w2];
    let mut problem = Problem::new(&space, &data, phi, active);
    problem.reparam = Some(&map);
    problem.transforms = vec![Transform::Log; 5];
    let names = ["gamma", "alpha_DD", "omega_DD", "alpha_NN", "omega_NN"]
        .map(String::from)
        .to_vec();
    let (mut fit, _) = run(&problem, &theta0, names, FitStep::ConstrainedNight, settings, Vec::new())?;
    let spec = map.spec(&fit.values);
    if spec.g().is_none() {
        return Err(Error::Numerical("derived amplitude is not positive".into()));
    }
    fit.constrained = Some(spec);
    Ok(fit)
}

/// Options of the three-step pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Lag range of the free-kernel step.
    pub q_free: usize,
    /// Lag range of the parametric step.
    pub q: usize,
    /// Add the zero-baseline overnight refit (night target only).
    pub constrain_s2_zero: bool,
    pub settings: FitSettings,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            q_free: 63,
            q: 512,
            constrain_s2_zero: false,
            settings: FitSettings::default(),
        }
    }
}

/// Everything the pipeline produced, in execution order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub target: Target,
    pub options: CalibrationOptions,
    pub init: MomentInit,
    /// ν fitted on the residuals of the moment initialization.
    pub init_nu: NuEstimate,
    pub free: FitResult,
    pub shapes: ShapeFit,
    pub parametric: FitResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constrained: Option<FitResult>,
    pub flags: Vec<String>,
}

impl Calibration {
    /// The last fit of the pipeline.
    pub fn final_fit(&self) -> &FitResult {
        self.constrained.as_ref().unwrap_or(&self.parametric)
    }

    pub fn steps(&self) -> Vec<&'static str> {
        let mut s = vec!["moment_init", "mle_free", "fit_functional_forms", "mle_parametric"];
        if self.constrained.is_some() {
            s.push("mle_night_constrained");
        }
        s
    }
}

/// Moves the kernel mass between the two lag ranges into `s²` so the
/// parametric start keeps the mean variance of the free fit, backing off
/// until the start has positive variances.
fn parametric_start(
    shapes: &TargetParams,
    q_free: usize,
    data: &PanelData,
    flags: &mut Vec<String>,
) -> Result<TargetParams> {
    let target = shapes.target();
    let q = shapes.q();
    let mut tail = 0.0;
    for slot in slots(target, q) {
        let kernel = shapes.kernel(slot.role).expect("role belongs to target");
        let short = role_span(target, slot.role, q_free).unwrap_or(0).min(slot.len);
        let table = kernel.table(slot.len)?;
        tail += table[short..].iter().sum::<f64>() * data.pooled_mean(slot.source, q);
    }
    let (space, phi) = space_of(shapes)?;
    let s2i = space.s2_index();
    let valid = |s2: f64| {
        let mut p = phi.clone();
        p[s2i] = s2;
        evaluate(&space, &p, data, Order::Value).valid()
    };
    let base = shapes.s2();
    let mut adj = tail;
    let mut s2 = base - adj;
    for _ in 0..20 {
        if valid(s2) {
            break;
        }
        adj *= 0.5;
        s2 = base - adj;
    }
    if !valid(s2) {
        let bump = base.abs().max(0.1);
        let mut k = 0;
        while !valid(s2) && k < 20 {
            s2 += bump;
            k += 1;
        }
        if !valid(s2) {
            return Err(Error::Numerical("no valid parametric starting point".into()));
        }
        flags.push(format!("parametric_start_s2_raised to {s2:.4}"));
    }
    let mut out = shapes.clone();
    match &mut out {
        TargetParams::Day(p) | TargetParams::Night(p) => p.s2 = s2,
        TargetParams::Daily(p) => p.s2 = s2,
    }
    Ok(out)
}

/// Full calibration of one equation from a normalized return panel.
pub fn calibrate(panel: &ReturnPanel, target: Target, options: &CalibrationOptions) -> Result<Calibration> {
    if options.q_free == 0 || options.q == 0 {
        return Err(Error::InvalidInput("lag ranges must be positive".into()));
    }
    check_history(panel, options.q.max(options.q_free))?;
    let mut flags = Vec::new();
    let mut init = moment_init(panel, target, options.q_free)?;
    flags.extend(init.flags.iter().cloned());
    let init_nu = estimate_nu(&residuals(&init.params, panel)?)?;
    init.params.set_nu(init_nu.nu.clamp(2.5, 100.0));

    let free = mle_free(panel, &init.params, options.settings)?;
    flags.extend(free.flags.iter().map(|f| format!("mle_free: {f}")));
    let shapes = fit_functional_forms(&free.params, options.q)?;
    flags.extend(shapes.flags.iter().cloned());

    let data = PanelData::new(panel, target);
    let start = parametric_start(&shapes.params, options.q_free, &data, &mut flags)?;
    let parametric = mle_parametric(panel, &start, options.settings)?;
    flags.extend(parametric.flags.iter().map(|f| format!("mle_parametric: {f}")));

    let constrained = if options.constrain_s2_zero && target == Target::Night {
        let fit = mle_night_constrained(panel, &parametric.params, options.settings)?;
        flags.extend(fit.flags.iter().map(|f| format!("mle_night_constrained: {f}")));
        Some(fit)
    } else {
        None
    };
    Ok(Calibration {
        target,
        options: *options,
        init,
        init_nu,
        free,
        shapes,
        parametric,
        constrained,
        flags,
    })
}

/// Gradient of the summed log-likelihood at `params`.
pub fn gradient(params: &TargetParams, panel: &ReturnPanel) -> Result<DVector<f64>> {
    likelihood_derivatives(params, panel).map(|d| DVector::from_vec(d.gradient))
}

/// Hessian of the summed log-likelihood at `params`.
pub fn hessian(params: &TargetParams, panel: &ReturnPanel) -> Result<DMatrix<f64>> {
    likelihood_derivatives(params, panel).map(|d| {
        let n = d.hessian.len();
        DMatrix::from_fn(n, n, |i, j| d.hessian[i][j])
    })
}


#[cfg(test)]
mod tests {
    use super::testing::*;
    use super::*;
    use crate::simulate::{simulate_panel, SimConfig, SimModel};
    use crate::special::digamma;

    fn fd_check(params: &TargetParams, panel: &ReturnPanel) {
        let d = likelihood_derivatives(params, panel).unwrap();
        let data = PanelData::new(panel, params.target());
        let (space, phi) = space_of(params).unwrap();
        let n = phi.len();
        for i in 0..n {
            let h = 1e-5 * phi[i].abs().max(1e-3);
            let at = |x: f64| {
                let mut p = phi.clone();
                p[i] = x;
                evaluate(&space, &p, &data, Order::Gradient)
            };
            let (hi, lo) = (at(phi[i] + h), at(phi[i] - h));
            assert!(hi.valid() && lo.valid());
            let fd = (hi.value - lo.value) / (2.0 * h);
            // rounding floor of the central difference
            let floor = 1e-12 * d.value.abs() / h;
            assert!(
                (fd - d.gradient[i]).abs() <= 1e-5 * d.gradient[i].abs().max(fd.abs()) + floor,
                "grad {} {fd} {}",
                space.names[i],
                d.gradient[i]
            );
            let (gh, gl) = (hi.grad.unwrap(), lo.grad.unwrap());
            for j in 0..n {
                let fd2 = (gh[j] - gl[j]) / (2.0 * h);
                let an = d.hessian[j][i];
                let tol = 1e-5 * an.abs().max(fd2.abs()) + 1e-13 * d.n_points as f64 / h;
                assert!((fd2 - an).abs() <= tol, "hess {} {} {fd2} {an}", space.names[i], space.names[j]);
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert!((d.hessian[i][j] - d.hessian[j][i]).abs() <= 1e-10 * d.hessian[i][i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let q = 12;
        let panel = short_panel(q, 3, 400, 5);
        let m = short_model(q);
        fd_check(&TargetParams::Day(m.day.clone()), &panel);
        fd_check(&TargetParams::Night(m.night.clone()), &panel);
        let daily = TargetParams::Daily(DailyArchParams {
            q,
            s2: 0.5,
            nu: 4.0,
            k: KernelSpec::power_law_exp(0.1, 0.8, 0.02),
            l: KernelSpec::exponential(-0.02, 0.05),
        });
        fd_check(&daily, &panel);
        let free = fallback_init(Target::Night, 6, 1.0, 6.0);
        fd_check(&free, &panel);
    }

    #[test]
    fn zero_kernel_loglik_is_minus_entropy() {
        let nu = 5.0;
        let params = DailyArchParams::constant(1, 1.0, nu);
        let model = SimModel::Daily {
            params: params.clone(),
            overnight_share: 0.0,
        };
        let mut cfg = SimConfig::new(20, 10_000, 3);
        cfg.burn_in = Some(10);
        let panel = simulate_panel(&model, &cfg).unwrap();
        let rep = panel_loglik(&TargetParams::Daily(params), &panel).unwrap();
        // differential entropy of the unit-variance Student law
        let h = 0.5 * (nu + 1.0) * (digamma(0.5 * (nu + 1.0)) - digamma(0.5 * nu))
            + 0.5 * nu.ln()
            + crate::special::ln_gamma(0.5 * nu)
            + crate::special::ln_gamma(0.5)
            - crate::special::ln_gamma(0.5 * (nu + 1.0))
            + 0.5 * ((nu - 2.0) / nu).ln();
        assert!((rep.loglik_per_point + h).abs() < 0.01, "{} vs {}", rep.loglik_per_point, -h);
        assert!(rep.valid);
    }

    #[test]
    fn rescaling_returns_shifts_loglik_by_log_factor() {
        let q = 10;
        let panel = short_panel(q, 2, 300, 9);
        let lambda: f64 = 3.7;
        let mut scaled = panel.clone();
        for v in scaled.intraday.iter_mut().chain(scaled.overnight.iter_mut()).chain(scaled.daily.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= lambda);
        }
        let mut p = short_model(q).night;
        let base = panel_loglik(&TargetParams::Night(p.clone()), &panel).unwrap();
        p.s2 *= lambda * lambda;
        p.l_d = p.l_d.scaled(lambda);
        p.l_n = p.l_n.scaled(lambda);
        let moved = panel_loglik(&TargetParams::Night(p), &scaled).unwrap();
        assert!((moved.loglik_per_point - (base.loglik_per_point - lambda.ln())).abs() < 1e-12);
    }

    #[test]
    fn true_parameters_beat_perturbations_on_average() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let q = 10;
        let panel = short_panel(q, 4, 1500, 21);
        let truth = TargetParams::Day(short_model(q).day);
        let base = panel_loglik(&truth, &panel).unwrap().loglik_per_point;
        let (space, phi) = space_of(&truth).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut total = 0.0;
        for _ in 0..20 {
            let p: Vec<f64> = phi
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x * (1.0 + 0.1 * z.clamp(-2.0, 2.0))
                })
                .collect();
            let rep = panel_loglik(&space.to_params(&p), &panel).unwrap();
            total += base - rep.loglik_per_point;
        }
        assert!(total > 0.0, "{total}");
    }

    fn daily_truth() -> DailyArchParams {
        DailyArchParams {
            q: 40,
            s2: 0.4,
            nu: 5.0,
            k: KernelSpec::power_law_exp(0.15, 0.5, 0.05),
            l: KernelSpec::exponential(-0.03, 0.1),
        }
    }

    #[test]
    fn parametric_fit_ascends_and_is_a_fixed_point() {
        let truth = daily_truth();
        let model = SimModel::Daily {
            params: truth.clone(),
            overnight_share: 0.0,
        };
        let mut cfg = SimConfig::new(10, 3000, 12);
        cfg.burn_in = Some(1000);
        let panel = simulate_panel(&model, &cfg).unwrap();
        let fit = mle_parametric(&panel, &TargetParams::Daily(truth), FitSettings::default()).unwrap();
        assert!(fit.converged, "{:?}", fit.flags);
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(fit.final_gradient_norm <= 1e-6);
        let eig = fit.hessian_matrix().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&e| e < 0.0), "{eig} {:?} {:?}", fit.names, fit.values);
        let again = mle_parametric(&panel, &fit.params, FitSettings::default()).unwrap();
        assert!(again.iterations <= 2);
        for (a, b) in again.values.iter().zip(&fit.values) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1e-6));
        }
    }

    #[test]
    fn constrained_night_fit_satisfies_the_constraint() {
        let q = 10;
        let panel = short_panel(q, 6, 1500, 8);
        let truth = TargetParams::Night(short_model(q).night);
        let fit = mle_night_constrained(&panel, &truth, FitSettings::default()).unwrap();
        assert_eq!(fit.params.s2(), 0.0);
        let spec = fit.constrained.unwrap();
        assert!(spec.constraint_residual().unwrap().abs() <= 1e-10);
        let eq = fit.params.as_equation().unwrap();
        let sum_dd = eq.k_dd.integrated(q).unwrap();
        let sum_nn = eq.k_nn.integrated(q).unwrap();
        assert!((1.0 - (spec.rho * sum_dd + sum_nn + spec.c)).abs() <= 1e-10);
        assert_eq!(fit.names.len(), 5);
    }
}
