//! Unit-variance Student log-density and its derivatives.

use serde::{Deserialize, Serialize};

use crate::special::{digamma, ln_gamma, trigamma};

/// `ln Γ((ν+1)/2) − ln Γ(ν/2) − ½ ln π`, the ν-dependent normalization.
pub fn student_constant(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * std::f64::consts::PI.ln()
}

/// The variance- and return-dependent part of the log-density:
/// `ν/2 ln((ν−2)σ²) − (ν+1)/2 ln((ν−2)σ² + r²)`.
pub fn student_kernel(sigma2: f64, r: f64, nu: f64) -> f64 {
    let av = (nu - 2.0) * sigma2;
    -0.5 * av.ln() - 0.5 * (nu + 1.0) * (r * r / av).ln_1p()
}

/// Full log-density of `r` under a Student law with variance `sigma2`.
/// Returns `-∞` for a non-positive variance.
pub fn student_loglik(sigma2: f64, r: f64, nu: f64) -> f64 {
    if !(sigma2 > 0.0) || !(nu > 2.0) {
        return f64::NEG_INFINITY;
    }
    student_constant(nu) + student_kernel(sigma2, r, nu)
}

/// ν-dependent quantities shared by all points of one evaluation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct NuTerms {
    pub nu: f64,
    pub a: f64,
    pub constant: f64,
    /// ½ψ((ν+1)/2) − ½ψ(ν/2)
    pub d_constant: f64,
    /// ¼ψ'((ν+1)/2) − ¼ψ'(ν/2)
    pub dd_constant: f64,
}

impl NuTerms {
    pub fn new(nu: f64) -> Self {
        let h1 = 0.5 * (nu + 1.0);
        let h0 = 0.5 * nu;
        NuTerms {
            nu,
            a: nu - 2.0,
            constant: student_constant(nu),
            d_constant: 0.5 * (digamma(h1) - digamma(h0)),
            dd_constant: 0.25 * (trigamma(h1) - trigamma(h0)),
        }
    }
}

/// Log-density and its derivatives in `v = σ²` and ν at one point.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PointTerms {
    pub f: f64,
    pub f_v: f64,
    pub f_vv: f64,
    pub f_nu: f64,
    pub f_nunu: f64,
    pub f_vnu: f64,
}

#[inline]
pub(crate) fn point_value(v: f64, r: f64, nt: &NuTerms) -> f64 {
    let av = nt.a * v;
    nt.constant - 0.5 * av.ln() - 0.5 * (nt.nu + 1.0) * (r * r / av).ln_1p()
}

#[inline]
pub(crate) fn point_terms(v: f64, r: f64, nt: &NuTerms) -> PointTerms {
    let nu = nt.nu;
    let a = nt.a;
    let av = a * v;
    let b = av + r * r;
    let np1 = nu + 1.0;
    // ln(1 + r²/av) keeps the r² term at large ν.
    let l1p = (r * r / av).ln_1p();
    let f = nt.constant - 0.5 * av.ln() - 0.5 * np1 * l1p;
    let f_v = 0.5 * nu / v - 0.5 * np1 * a / b;
    let f_vv = -0.5 * nu / (v * v) + 0.5 * np1 * a * a / (b * b);
    let f_nu = nt.d_constant - 0.5 * l1p + 0.5 * nu / a - 0.5 * np1 * v / b;
    let f_nunu = nt.dd_constant + 0.5 / a - 1.0 / (a * a) - v / b + 0.5 * np1 * v * v / (b * b);
    let f_vnu = 0.5 / v - 0.5 * (a + np1) / b + 0.5 * np1 * a * v / (b * b);
    PointTerms {
        f,
        f_v,
        f_vv,
        f_nu,
        f_nunu,
        f_vnu,
    }
}

/// Average log-likelihood per point of a set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodReport {
    /// Mean of the full Student log-density (normalization included).
    pub loglik_per_point: f64,
    /// Mean of the variance/return part only, without the ν constant.
    pub loglik_kernel_per_point: f64,
    pub n_points: usize,
    pub negative_variance_count: usize,
    pub valid: bool,
}

impl LikelihoodReport {
    pub(crate) fn from_sums(sum: f64, n_points: usize, nu: f64, negatives: usize) -> Self {
        let valid = negatives == 0 && n_points > 0 && sum.is_finite();
        let per_point = if n_points > 0 { sum / n_points as f64 } else { f64::NAN };
        LikelihoodReport {
            loglik_per_point: if valid { per_point } else { f64::NEG_INFINITY },
            loglik_kernel_per_point: if valid {
                per_point - student_constant(nu)
            } else {
                f64::NEG_INFINITY
            },
            n_points,
            negative_variance_count: negatives,
            valid,
        }
    }

    /// Average likelihood per point in percent, full-density convention.
    pub fn alpp(&self) -> f64 {
        100.0 * self.loglik_per_point.exp()
    }

    /// Average likelihood per point in percent without the ν constant.
    pub fn alpp_kernel(&self) -> f64 {
        100.0 * self.loglik_kernel_per_point.exp()
    }
}

/// Log-likelihood of aligned variance predictions and returns; points with
/// a missing return are skipped.
pub fn loglik_of_predictions(sigma2: &[f64], returns: &[f64], nu: f64) -> LikelihoodReport {
    let nt = NuTerms::new(nu);
    let mut sum = 0.0;
    let mut n = 0;
    let mut negatives = 0;
    for (&v, &r) in sigma2.iter().zip(returns) {
        if !r.is_finite() {
            continue;
        }
        n += 1;
        if v > 0.0 {
            sum += point_value(v, r, &nt);
        } else {
            negatives += 1;
        }
    }
    LikelihoodReport::from_sums(sum, n, nu, negatives)
}
