//! Residual diagnostics, baseline ratios, conversions between daily and
//! bivariate predictions, in-sample/out-of-sample comparison and the
//! parameter-universality Wald test.

mod isos;
mod wald;

use serde::{Deserialize, Serialize};

pub use isos::{
    hash_split, isos_compare, isos_compare_split, HalfModels, IsosCell, IsosOptions, IsosReport, ModelKind, Prediction,
};
pub use wald::{wald_universality, WaldReport};

use crate::calibrate::{estimate_nu, NuEstimate};
use crate::data::{moments, ReturnPanel};
use crate::error::{Error, Result};
use crate::filter::filter_target;
use crate::layout::Target;
use crate::model::{BivariateModel, TargetParams};

/// Number of thresholds of the tail-CDF table.
pub const CDF_POINTS: usize = 50;
/// Range of the tail-CDF thresholds.
pub const CDF_RANGE: (f64, f64) = (1e-2, 1e2);

/// Returns, filtered volatilities and residuals of one target, aligned on
/// the dates after the warm-up (`dates[q..]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardized {
    pub target: Target,
    pub q: usize,
    /// `returns[stock][t − q]`
    pub returns: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
}

fn target_returns<'a>(panel: &'a ReturnPanel, target: Target, s: usize) -> &'a [f64] {
    match target {
        Target::Day => &panel.intraday[s],
        Target::Night => &panel.overnight[s],
        Target::Daily => &panel.daily[s],
    }
}

/// `ξ = r/σ` for every stock. Fails on a non-positive filtered variance.
pub fn standardize(params: &TargetParams, panel: &ReturnPanel) -> Result<Standardized> {
    let q = params.q();
    let target = params.target();
    let mut out = Standardized {
        target,
        q,
        returns: Vec::new(),
        sigma: Vec::new(),
        residuals: Vec::new(),
    };
    for s in 0..panel.n_stocks() {
        let v = filter_target(params, &panel.intraday[s], &panel.overnight[s])?;
        let (mut count, mut worst) = (0, 0.0f64);
        for &x in &v {
            if !(x > 0.0) {
                count += 1;
                worst = worst.min(x);
            }
        }
        if count > 0 {
            return Err(Error::NegativeVariance { count, worst });
        }
        let r = target_returns(panel, target, s)[q..].to_vec();
        let sigma: Vec<f64> = v.iter().map(|x| x.sqrt()).collect();
        let xi = r.iter().zip(&sigma).map(|(r, s)| r / s).collect();
        out.returns.push(r);
        out.sigma.push(sigma);
        out.residuals.push(xi);
    }
    Ok(out)
}

/// Residual law of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    pub target: Target,
    pub n_points: usize,
    pub mean: f64,
    pub variance: f64,
    /// Sample `⟨ξ⁴⟩/⟨ξ²⟩²`.
    pub kurtosis: Option<f64>,
    /// The fitted tail index implies an infinite fourth moment (ν ≤ 4).
    pub kurtosis_diverges: bool,
    /// Student fit of the residuals; `None` for degenerate residuals.
    pub nu_fit: Option<NuEstimate>,
    /// `(y, P(|ξ| > y))` on log-spaced thresholds.
    pub cdf_table: Vec<(f64, f64)>,
    /// All residuals are zero.
    pub degenerate: bool,
}

/// Tail CDF `P(|ξ| > y)` on `CDF_POINTS` log-spaced thresholds.
pub fn tail_cdf(residuals: &[f64]) -> Vec<(f64, f64)> {
    let mut abs: Vec<f64> = residuals.iter().filter(|x| x.is_finite()).map(|x| x.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len().max(1) as f64;
    let (lo, hi) = (CDF_RANGE.0.ln(), CDF_RANGE.1.ln());
    (0..CDF_POINTS)
        .map(|k| {
            let y = (lo + (hi - lo) * k as f64 / (CDF_POINTS - 1) as f64).exp();
            let below = abs.partition_point(|&a| a <= y);
            (y, (abs.len() - below) as f64 / n)
        })
        .collect()
}

pub fn residual_diagnostics(target: Target, residuals: &[f64]) -> Result<ResidualDiagnostics> {
    let m = moments(residuals);
    let degenerate = m.count > 0 && residuals.iter().filter(|x| x.is_finite()).all(|&x| x == 0.0);
    let nu_fit = if degenerate || m.count < 2 {
        None
    } else {
        Some(estimate_nu(residuals)?)
    };
    Ok(ResidualDiagnostics {
        target,
        n_points: m.count,
        mean: m.mean,
        variance: m.std * m.std,
        kurtosis: m.kurtosis,
        kurtosis_diverges: nu_fit.is_some_and(|f| f.nu <= 4.0),
        nu_fit,
        cdf_table: tail_cdf(residuals),
        degenerate,
    })
}

/// Residuals of `params` on `panel` with their diagnostics.
pub fn extract_residuals(params: &TargetParams, panel: &ReturnPanel) -> Result<(Standardized, ResidualDiagnostics)> {
    let st = standardize(params, panel)?;
    let pooled: Vec<f64> = st.residuals.iter().flatten().copied().filter(|x| x.is_finite()).collect();
    let diag = residual_diagnostics(st.target, &pooled)?;
    Ok((st, diag))
}

/// Share of the mean variance carried by the baseline, per equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineRatioReport {
    pub r_d: f64,
    pub r_n: f64,
    pub mean_sigma2_d: f64,
    pub mean_sigma2_n: f64,
    /// `1 − r`
    pub feedback_share_d: f64,
    pub feedback_share_n: f64,
}

/// `s² / ⟨σ²⟩` of one equation over the panel.
pub fn baseline_ratio(params: &TargetParams, panel: &ReturnPanel) -> Result<(f64, f64)> {
    let q = params.q();
    let mut sum = 0.0;
    let mut n = 0usize;
    for s in 0..panel.n_stocks() {
        let v = filter_target(params, &panel.intraday[s], &panel.overnight[s])?;
        let y = &target_returns(panel, params.target(), s)[q..];
        for (vi, yi) in v.iter().zip(y) {
            if yi.is_finite() {
                sum += vi;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no dates after the warm-up".into()));
    }
    let mean = sum / n as f64;
    Ok((params.s2() / mean, mean))
}

pub fn baseline_ratios(model: &BivariateModel, panel: &ReturnPanel) -> Result<BaselineRatioReport> {
    let (r_d, md) = baseline_ratio(&TargetParams::Day(model.day.clone()), panel)?;
    let (r_n, mn) = baseline_ratio(&TargetParams::Night(model.night.clone()), panel)?;
    Ok(BaselineRatioReport {
        r_d,
        r_n,
        mean_sigma2_d: md,
        mean_sigma2_n: mn,
        feedback_share_d: 1.0 - r_d,
        feedback_share_n: 1.0 - r_n,
    })
}

/// Pooled `⟨rD²⟩/⟨r²⟩`, `⟨rN²⟩/⟨r²⟩` and `⟨rD rN⟩` of a panel.
pub fn variance_shares(panel: &ReturnPanel) -> ([f64; 2], f64) {
    let (mut dd, mut nn, mut dn, mut rr, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for s in 0..panel.n_stocks() {
        for ((d, m), r) in panel.intraday[s].iter().zip(&panel.overnight[s]).zip(&panel.daily[s]) {
            if d.is_finite() && m.is_finite() && r.is_finite() {
                dd += d * d;
                nn += m * m;
                dn += d * m;
                rr += r * r;
                n += 1;
            }
        }
    }
    ([dd / rr, nn / rr], dn / n as f64)
}

/// Intra-day and overnight variances implied by a daily prediction:
/// `σ̂D² = shares[0] σ²`, `σ̂N² = shares[1] σ²`.
pub fn equivalent_vols_daily_to_bivariate(sigma2: &[f64], shares: [f64; 2]) -> (Vec<f64>, Vec<f64>) {
    (
        sigma2.iter().map(|v| shares[0] * v).collect(),
        sigma2.iter().map(|v| shares[1] * v).collect(),
    )
}

/// Daily variance implied by a bivariate prediction:
/// `σ̂² = σD² + σN² + 2⟨rD rN⟩`.
pub fn equivalent_vol_bivariate_to_daily(sigma2_d: &[f64], sigma2_n: &[f64], cross_moment: f64) -> Vec<f64> {
    sigma2_d
        .iter()
        .zip(sigma2_n)
        .map(|(d, n)| d + n + 2.0 * cross_moment)
        .collect()
}
