//! Subcommand arguments and handlers. Each handler returns `Ok(None)` on
//! success, or `Ok(Some(failure))` when its outputs were written but the
//! run must still exit with an error code.

use std::path::{Path, PathBuf};

use clap::Args;
use onarch_core::calibrate::{calibrate as run_calibration, CalibrationOptions, FitResult, FitSettings};
use onarch_core::data::{compute_returns, ingest_ohlc, normalize_panel, IngestFormat, ReturnPanel};
use onarch_core::evaluate::{
    baseline_ratio, extract_residuals, isos_compare, wald_universality, IsosOptions, ResidualDiagnostics,
};
use onarch_core::simulate::{empirical_positivity, simulate_panel, EmpiricalPositivity, SimConfig};
use onarch_core::validity::{
    check_positivity, check_stability, truncate_equation, with_omega_upper_bounds, PositivityReport, StabilityReport,
};
use onarch_core::Target;
use serde::Serialize;

use crate::config::Settings;
use crate::inputs::{self, Equation, FitDocument, Provenance};
use crate::output::{hash_file, sidecar, Run};
use crate::Failure;

type Outcome = Result<Option<Failure>, Failure>;

fn parse_target(s: &str) -> Result<Target, String> {
    match s.to_ascii_lowercase().as_str() {
        "day" | "d" | "intraday" => Ok(Target::Day),
        "night" | "n" | "overnight" => Ok(Target::Night),
        "daily" => Ok(Target::Daily),
        _ => Err(format!("unknown target '{s}' (expected day, night or daily)")),
    }
}

fn parse_format(s: &str) -> Result<IngestFormat, String> {
    match s.to_ascii_lowercase().replace('-', "_").as_str() {
        "auto" => Ok(IngestFormat::Auto),
        "per_stock" => Ok(IngestFormat::PerStock),
        "long" => Ok(IngestFormat::Long),
        _ => Err(format!("unknown format '{s}' (expected auto, per-stock or long)")),
    }
}

fn settings_from(max_iter: Option<usize>, tol: Option<f64>, s: &mut Settings) -> Result<FitSettings, Failure> {
    let d = FitSettings::default();
    Ok(FitSettings {
        max_iter: s.value("max_iter", max_iter, d.max_iter)?,
        tol: s.value("tol", tol, d.tol)?,
    })
}

fn read_panel(path: &Path, run: &mut Run) -> Result<ReturnPanel, Failure> {
    run.input(path)?;
    Ok(ReturnPanel::read_csv(path)?)
}

fn write_panel(panel: &ReturnPanel, out: &Path, run: &mut Run) -> Result<(), Failure> {
    let mut buf = Vec::new();
    panel.write_csv(&mut buf)?;
    run.write_bytes(out, &buf)
}

// ---------------------------------------------------------------- ingest

#[derive(Args)]
pub struct IngestArgs {
    /// Input CSV files or glob patterns
    #[arg(long, required = true, num_args = 1..)]
    input: Vec<String>,
    /// File layout: auto, per-stock or long
    #[arg(long, value_parser = parse_format)]
    format: Option<IngestFormat>,
    /// Apply the three-step normalization and write its record next to the panel
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

fn expand_inputs(patterns: &[String]) -> Result<Vec<PathBuf>, Failure> {
    let mut paths = Vec::new();
    for p in patterns {
        if !p.contains(['*', '?', '[']) {
            let path = PathBuf::from(p);
            if !path.is_file() {
                return Err(Failure::Data(format!("{p}: no such file")));
            }
            paths.push(path);
            continue;
        }
        let matches = glob::glob(p).map_err(|e| Failure::Usage(format!("bad pattern {p}: {e}")))?;
        let before = paths.len();
        for m in matches {
            let m = m.map_err(|e| Failure::Data(e.to_string()))?;
            if m.is_file() {
                paths.push(m);
            }
        }
        if paths.len() == before {
            return Err(Failure::Data(format!("{p}: no files match")));
        }
    }
    paths.sort();
    paths.dedup();
    Ok(paths)
}

pub fn ingest(a: &IngestArgs, s: &mut Settings, run: &mut Run) -> Outcome {
    let format = s.value("format", a.format, IngestFormat::Auto)?;
    let normalize = s.switch("normalize", a.normalize)?;
    let paths = expand_inputs(&a.input)?;
    for p in &paths {
        run.input(p)?;
    }
    run.main_output(&a.out);
    let raw = compute_returns(&ingest_ohlc(&paths, format)?);
    let panel = if normalize { normalize_panel(&raw)? } else { raw };
    write_panel(&panel, &a.out, run)?;
    if let Some(record) = &panel.normalization {
        run.write_bytes(&sidecar(&a.out, "normalization.json"), record.to_json()?.as_bytes())?;
    }
    eprintln!(
        "{} stocks, {} dates, {} long overnight gaps",
        panel.n_stocks(),
        panel.n_dates(),
        panel.long_gaps.len()
    );
    Ok(None)
}

// ---------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// Bivariate model, daily ARCH, or intra-day equation (with --night-model)
    #[arg(long)]
    model: PathBuf,
    /// Overnight equation paired with an intra-day --model
    #[arg(long)]
    night_model: Option<PathBuf>,
    /// Overnight share of a daily ARCH variance [default: 0]
    #[arg(long)]
    overnight_share: Option<f64>,
    /// Number of stocks [default: 50]
    #[arg(long)]
    stocks: Option<usize>,
    /// Dates kept after the burn-in [default: 2500]
    #[arg(long)]
    days: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Discarded dates [default: max(10 q, 5000)]
    #[arg(long)]
    burn_in: Option<usize>,
    /// Simulate even if the model fails the stability check
    #[arg(long)]
    force: bool,
    #[arg(long)]
    out: PathBuf,
}

pub fn simulate(a: &SimulateArgs, s: &mut Settings, run: &mut Run) -> Outcome {
    let stocks = s.value("stocks", a.stocks, 50)?;
    let days = s.value("days", a.days, 2500)?;
    let seed = s.value("seed", a.seed, 0)?;
    let burn_in = s.optional("burn_in", a.burn_in)?;
    let force = s.switch("force", a.force)?;
    let share = s.optional("overnight_share", a.overnight_share)?;
    run.input(&a.model)?;
    if let Some(n) = &a.night_model {
        run.input(n)?;
    }
    run.seed = Some(seed);
    run.main_output(&a.out);
    let model = inputs::load_sim_model(&a.model, a.night_model.as_deref(), share)?;
    let config = SimConfig {
        burn_in,
        force,
        ..SimConfig::new(stocks, days, seed)
    };
    let panel = simulate_panel(&model, &config)?;
    write_panel(&panel, &a.out, run)?;
    Ok(None)
}

// ---------------------------------------------------------------- calibrate

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    panel: PathBuf,
    /// day, night or daily
    #[arg(long, value_parser = parse_target)]
    target: Option<Target>,
    /// Lag range of the free-kernel step [default: 63]
    #[arg(long)]
    q_free: Option<usize>,
    /// Lag range of the parametric step [default: 512]
    #[arg(long)]
    q: Option<usize>,
    /// Refit the overnight equation with a zero baseline
    #[arg(long)]
    constrain_s2_zero: bool,
    /// Optimizer iterations per step [default: 500]
    #[arg(long)]
    max_iter: Option<usize>,
    /// Gradient tolerance per point [default: 1e-6]
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn calibrate(a: &CalibrateArgs, s: &mut Settings, run: &mut Run) -> Outcome {
    let target = s
        .optional("target", a.target)?
        .ok_or_else(|| Failure::Usage("--target is required (day, night or daily)".into()))?;
    let options = CalibrationOptions {
        q_free: s.value("q_free", a.q_free, 63)?,
        q: s.value("q", a.q, 512)?,
        constrain_s2_zero: s.switch("constrain_s2_zero", a.constrain_s2_zero)?,
        settings: settings_from(a.max_iter, a.tol, s)?,
    };
    if options.constrain_s2_zero && target != Target::Night {
        return Err(Failure::Usage("--constrain-s2-zero applies to the night target only".into()));
    }
    let panel = read_panel(&a.panel, run)?;
    run.main_output(&a.out);
    let cal = run_calibration(&panel, target, &options)?;
    let fit = cal.final_fit().clone();
    let doc = FitDocument {
        provenance: Provenance {
            seed: None,
            panel: a.panel.display().to_string(),
            data_sha256: hash_file(&a.panel)?.sha256,
            options,
            steps: cal.steps().into_iter().map(String::from).collect(),
        },
        flags: cal.flags.clone(),
        fit,
        pipeline: cal,
    };
    run.write_json(&a.out, &doc)?;
    let fit = &doc.fit;
    println!(
        "target {} q {}: log-likelihood per point {:.6}, nu {:.3}, {} iterations, converged {}",
        target.label(),
        options.q,
        fit.likelihood.loglik_per_point,
        fit.params.nu(),
        fit.iterations,
        fit.converged
    );
    Ok((!fit.converged).then(|| {
        Failure::Numerical(format!(
            "{:?} step did not converge (gradient norm {:.2e}); result written to {}",
            fit.step,
            fit.final_gradient_norm,
            a.out.display()
        ))
    }))
}

// ---------------------------------------------------------------- validate

#[derive(Args)]
pub struct ValidateArgs {
    /// Bivariate model, or a single fit or equation file
    #[arg(long)]
    model: Option<PathBuf>,
    /// Intra-day fit or equation file
    #[arg(long)]
    day: Option<PathBuf>,
    /// Overnight fit or equation file
    #[arg(long)]
    night: Option<PathBuf>,
    /// Equation held by an equation file given with --model
    #[arg(long, value_parser = parse_target)]
    target: Option<Target>,
    /// Maximum lags to check at [default: 126,512]
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<usize>>,
    /// Replace rates whose confidence interval contains zero by the upper bound
    #[arg(long)]
    omega_upper_bound: bool,
    /// Also count negative variances over this many simulated dates per stock
    #[arg(long)]
    empirical_days: Option<usize>,
    /// Stocks of the simulation check [default: 100]
    #[arg(long)]
    empirical_stocks: Option<usize>,
    /// Seed of the simulation check [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct EquationValidity {
    pub target: Target,
    pub model_q: usize,
    /// Rates replaced by their upper confidence bound.
    pub adjusted: Vec<String>,
    pub checks: Vec<PositivityReport>,
}

#[derive(Debug, Serialize)]
pub struct ValidityReport {
    pub stability: Option<StabilityReport>,
    pub omega_upper_bound: bool,
    pub equations: Vec<EquationValidity>,
    pub empirical: Option<EmpiricalPositivity>,
    /// Every check passed (stability when available, positivity at every q).
    pub all_pass: bool,
    pub flags: Vec<String>,
}

/// Stability of the pair (when both equations are given) and positivity of
/// every equation at each requested maximum lag. Shorter lags truncate the
/// kernels and move the expected tail into the baseline.
fn check_validity(equations: &[Equation], qs: &[usize], omega_upper_bound: bool) -> Result<ValidityReport, Failure> {
    let mut flags = Vec::new();
    let mut adjusted = Vec::new();
    for eq in equations {
        let (params, changed) = if omega_upper_bound {
            with_omega_upper_bounds(&eq.params, &eq.ci95)
        } else {
            (eq.params.clone(), Vec::new())
        };
        if omega_upper_bound && eq.ci95.is_empty() {
            flags.push(format!("{}: no confidence intervals available", eq.target.label()));
        }
        adjusted.push((eq.target, params, changed));
    }
    let day = adjusted.iter().find(|e| e.0 == Target::Day);
    let night = adjusted.iter().find(|e| e.0 == Target::Night);
    let pair = match (day, night) {
        (Some(d), Some(n)) => Some(inputs::pair(d.1.clone(), n.1.clone())?),
        _ => None,
    };
    let stability = pair.as_ref().map(check_stability);
    let fixed_point = match stability.as_ref().and_then(|s| s.fixed_point) {
        Some(fp) => fp,
        None => {
            flags.push("no stationary averages: truncation assumes unit variances".into());
            [1.0, 1.0]
        }
    };
    let mut out = Vec::new();
    for (target, params, changed) in adjusted {
        let mut effective: Vec<usize> = qs.iter().map(|&q| q.min(params.q)).collect();
        effective.dedup();
        if qs.iter().any(|&q| q > params.q) {
            flags.push(format!(
                "{}: lags above the model range are checked at q = {}",
                target.label(),
                params.q
            ));
        }
        let mut checks = Vec::new();
        for q in effective {
            let p = truncate_equation(&params, target, q, fixed_point)?;
            checks.push(check_positivity(&p, target)?);
        }
        out.push(EquationValidity {
            target,
            model_q: params.q,
            adjusted: changed,
            checks,
        });
    }
    let all_pass =
        stability.as_ref().is_none_or(|s| s.stable) && out.iter().all(|e| e.checks.iter().all(|c| c.overall));
    Ok(ValidityReport {
        stability,
        omega_upper_bound,
        equations: out,
        empirical: None,
        all_pass,
        flags,
    })
}

fn resolve_qs(flag: Option<Vec<usize>>, s: &mut Settings) -> Result<Vec<usize>, Failure> {
    let mut qs = s.value("q", flag, vec![126, 512])?;
    if qs.is_empty() || qs.contains(&0) {
        return Err(Failure::Usage("--q needs positive lags".into()));
    }
    qs.sort_unstable();
    qs.dedup();
    Ok(qs)
}

pub fn validate(a: &ValidateArgs, s: &mut Settings, run: &mut Run) -> Outcome {
    let qs = resolve_qs(a.q.clone(), s)?;
    let omega_ub = s.switch("omega_upper_bound", a.omega_upper_bound)?;
    let empirical_days = s.value("empirical_days", a.empirical_days, 0)?;
    let empirical_stocks = s.value("empirical_stocks", a.empirical_stocks, 100)?;
    let seed = s.value("seed", a.seed, 0)?;
    let mut equations = Vec::new();
    if let Some(m) = &a.model {
        run.input(m)?;
        let v = inputs::read_json(m)?;
        if inputs::is_bivariate(&v) {
            let model: onarch_core::BivariateModel =
                serde_json::from_value(v).map_err(|e| Failure::Data(format!("{}: {e}", m.display())))?;
            model.validate()?;
            for (target, params) in [(Target::Day, model.day), (Target::Night, model.night)] {
                equations.push(Equation {
                    target,
                    params,
                    ci95: Default::default(),
                });
            }
        } else {
            equations.push(inputs::load_equation(m, a.target)?);
        }
    }
    for (path, role) in [(&a.day, Target::Day), (&a.night, Target::Night)] {
        if let Some(p) = path {
            run.input(p)?;
            equations.push(inputs::load_equation(p, Some(role))?);
        }
    }
    if equations.is_empty() {
        return Err(Failure::Usage("give --model, --day or --night".into()));
    }
    for t in [Target::Day, Target::Night] {
        if equations.iter().filter(|e| e.target == t).count() > 1 {
            return Err(Failure::Usage(format!("the {} equation is given twice", t.label())));
        }
    }
    run.main_output(&a.out);
    let mut report = check_validity(&equations, &qs, omega_ub)?;
    if empirical_days > 0 {
        let d = equations.iter().find(|e| e.target == Target::Day);
        let n = equations.iter().find(|e| e.target == Target::Night);
        match (d, n) {
            (Some(d), Some(n)) => {
                run.seed = Some(seed);
                let model = inputs::pair(d.params.clone(), n.params.clone())?;
                report.empirical = Some(empirical_positivity(&model, empirical_stocks, empirical_days, seed, None)?);
            }
            _ => report
                .flags
                .push("simulation check needs both equations; skipped".into()),
        }
    }
    run.write_json(&a.out, &report)?;
    print_validity(&report);
    Ok(None)
}

fn print_validity(r: &ValidityReport) {
    if let Some(st) = &r.stability {
        println!(
            "stability: eigenvalues {:.4}, {:.4}; stable {}",
            st.eigenvalues[0], st.eigenvalues[1], st.stable
        );
    }
    for e in &r.equations {
        for c in &e.checks {
            println!(
                "{} q {}: single {} double {} leverage {} -> {}",
                e.target.label(),
                c.q,
                c.single.pass,
                c.double.pass,
                c.leverage.pass,
                if c.overall { "positive" } else { "not certified" }
            );
        }
    }
    if let Some(emp) = &r.empirical {
        println!(
            "simulation: {} negative variances over {} stock-days",
            emp.negatives.count, emp.stock_days
        );
    }
}

// ---------------------------------------------------------------- evaluate

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Lag range of the parametric step [default: 512]
    #[arg(long)]
    q: Option<usize>,
    /// Lag range of the free-kernel step [default: 63]
    #[arg(long)]
    q_free: Option<usize>,
    /// Seed of the half split [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Use the zero-baseline overnight refit
    #[arg(long)]
    constrain_night: bool,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

pub fn evaluate(a: &EvaluateArgs, s: &mut Settings, run: &mut Run) -> Outcome {
    let options = IsosOptions {
        q: s.value("q", a.q, 512)?,
        q_free: s.value("q_free", a.q_free, 63)?,
        seed: s.value("seed", a.seed, 0)?,
        constrain_night: s.switch("constrain_night", a.constrain_night)?,
        settings: settings_from(a.max_iter, a.tol, s)?,
    };
    let panel = read_panel(&a.panel, run)?;
    run.seed = Some(options.seed);
    run.main_output(&a.out);
    let report = isos_compare(&panel, &options)?;
    run.write_json(&a.out, &report)?;
    println!("{:<10} {:<10} {:>9} {:>9}", "predict", "model", "IS ALpp", "OS ALpp");
    for c in &report.cells {
        println!(
            "{:<10} {:<10} {:>9.3} {:>9.3}{}{}",
            format!("{:?}", c.prediction).to_lowercase(),
            format!("{:?}", c.model).to_lowercase(),
            c.is_alpp,
            c.os_alpp,
            if c.derived { " (derived)" } else { "" },
            if c.valid { "" } else { " [non-positive variances scored as zero]" }
        );
    }
    if !report.flags.is_empty() {
        eprintln!("{} flags recorded in {}", report.flags.len(), a.out.display());
    }
    Ok(None)
}

// ---------------------------------------------------------------- wald

#[derive(Args)]
pub struct WaldArgs {
    #[arg(long)]
    fit1: PathBuf,
    #[arg(long)]
    fit2: PathBuf,
    /// Parameters left out of the test (comma separated)
    #[arg(long, value_delimiter = ',')]
    exclude: Option<Vec<String>>,
    /// Write the report here instead of only printing the statistic
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn wald(a: &WaldArgs, s: &mut Settings, run: &mut Run) -> Outcome {
    let exclude = s.value("exclude", a.exclude.clone(), Vec::new())?;
    run.input(&a.fit1)?;
    run.input(&a.fit2)?;
    let (f1, f2) = (inputs::load_fit(&a.fit1)?, inputs::load_fit(&a.fit2)?);
    let report = wald_universality(&f1, &f2, &exclude)?;
    if let Some(out) = &a.out {
        run.main_output(out);
        run.write_json(out, &report)?;
    }
    println!(
        "Xi_n {:.4} dof {} p-value {:.4e}{}",
        report.xi_n,
        report.dof,
        report.p_value,
        if report.flags.is_empty() {
            String::new()
        } else {
            format!(" [{}]", report.flags.join("; "))
        }
    );
    Ok(None)
}

// ---------------------------------------------------------------- report

#[derive(Args)]
pub struct ReportArgs {
    /// Fit produced by calibrate
    #[arg(long)]
    fit: PathBuf,
    /// Panel the residual diagnostics are computed on
    #[arg(long)]
    panel: PathBuf,
    /// Fit or equation file of the other equation, for the stability check
    #[arg(long)]
    partner: Option<PathBuf>,
    /// Maximum lags of the positivity checks [default: 126,512]
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<usize>>,
    #[arg(long)]
    omega_upper_bound: bool,
    /// Residual tail CDF as CSV (threshold,p_exceed)
    #[arg(long)]
    cdf_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ReportDocument {
    fit: FitResult,
    validity: Option<ValidityReport>,
    diagnostics: ResidualDiagnostics,
    /// `s² / ⟨σ²⟩` on the panel.
    baseline_ratio: f64,
    mean_variance: f64,
}

pub fn report(a: &ReportArgs, s: &mut Settings, run: &mut Run) -> Outcome {
    let qs = resolve_qs(a.q.clone(), s)?;
    let omega_ub = s.switch("omega_upper_bound", a.omega_upper_bound)?;
    run.input(&a.fit)?;
    let fit = inputs::load_fit(&a.fit)?;
    let panel = read_panel(&a.panel, run)?;
    run.main_output(&a.out);
    let validity = match fit.target {
        Target::Daily => None,
        t => {
            let mut eqs = vec![inputs::load_equation(&a.fit, Some(t))?];
            if let Some(p) = &a.partner {
                run.input(p)?;
                let other = if t == Target::Day { Target::Night } else { Target::Day };
                eqs.push(inputs::load_equation(p, Some(other))?);
            }
            Some(check_validity(&eqs, &qs, omega_ub)?)
        }
    };
    let (_, diagnostics) = extract_residuals(&fit.params, &panel)?;
    let (ratio, mean) = baseline_ratio(&fit.params, &panel)?;
    if let Some(path) = &a.cdf_out {
        let mut csv = String::from("threshold,p_exceed\n");
        for (y, p) in &diagnostics.cdf_table {
            csv.push_str(&format!("{y},{p}\n"));
        }
        run.write_bytes(path, csv.as_bytes())?;
    }
    let doc = ReportDocument {
        fit,
        validity,
        diagnostics,
        baseline_ratio: ratio,
        mean_variance: mean,
    };
    run.write_json(&a.out, &doc)?;
    let d = &doc.diagnostics;
    println!(
        "{} residuals: {} points, variance {:.4}, nu fit {}",
        doc.fit.target.label(),
        d.n_points,
        d.variance,
        d.nu_fit.map_or("n/a".into(), |f| format!("{:.3}", f.nu))
    );
    Ok(None)
}
