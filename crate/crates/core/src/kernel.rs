//! Feedback kernels: the lag-indexed coefficients applied to past squared,
//! cross and signed returns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One feedback kernel, either parametric or tabulated.
///
/// Quadratic kernels use the exponentially truncated power law
/// `g τ^(-α) exp(-ω τ)`, leverage kernels the plain exponential
/// `g exp(-ω τ)`. Rates are per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum KernelSpec {
    PowerLawExp { g: f64, alpha: f64, omega: f64 },
    Exponential { g: f64, omega: f64 },
    /// `coefficients[i]` is the value at lag `i + 1`.
    Free { coefficients: Vec<f64> },
}

impl KernelSpec {
    /// A kernel that is identically zero at every lag.
    pub fn zero() -> Self {
        KernelSpec::Exponential { g: 0.0, omega: 0.0 }
    }

    pub fn power_law_exp(g: f64, alpha: f64, omega: f64) -> Self {
        KernelSpec::PowerLawExp { g, alpha, omega }
    }

    pub fn exponential(g: f64, omega: f64) -> Self {
        KernelSpec::Exponential { g, omega }
    }

    pub fn free(coefficients: Vec<f64>) -> Self {
        KernelSpec::Free { coefficients }
    }

    pub fn is_free(&self) -> bool {
        matches!(self, KernelSpec::Free { .. })
    }

    /// Largest lag the kernel can be evaluated at, `None` when unbounded.
    pub fn max_lag(&self) -> Option<usize> {
        match self {
            KernelSpec::Free { coefficients } => Some(coefficients.len()),
            _ => None,
        }
    }

    /// Coefficient at lag `tau` (τ ≥ 1).
    pub fn eval(&self, tau: usize) -> Result<f64> {
        if tau == 0 {
            return Err(Error::LagOutOfRange {
                tau,
                max: self.max_lag().unwrap_or(usize::MAX),
            });
        }
        Ok(match self {
            KernelSpec::PowerLawExp { g, alpha, omega } => {
                let t = tau as f64;
                g * t.powf(-alpha) * (-omega * t).exp()
            }
            KernelSpec::Exponential { g, omega } => g * (-omega * tau as f64).exp(),
            KernelSpec::Free { coefficients } => {
                *coefficients.get(tau - 1).ok_or(Error::LagOutOfRange {
                    tau,
                    max: coefficients.len(),
                })?
            }
        })
    }

    /// Coefficients at lags `1..=n`.
    pub fn table(&self, n: usize) -> Result<Vec<f64>> {
        if let KernelSpec::Free { coefficients } = self {
            if n > coefficients.len() {
                return Err(Error::LagOutOfRange {
                    tau: n,
                    max: coefficients.len(),
                });
            }
            return Ok(coefficients[..n].to_vec());
        }
        (1..=n).map(|tau| self.eval(tau)).collect()
    }

    /// Integrated kernel `Σ_{τ=1}^{q} K(τ)`.
    pub fn integrated(&self, q: usize) -> Result<f64> {
        Ok(self.table(q)?.iter().sum())
    }

    /// Characteristic decay time `1/ω`, infinite when the rate is zero.
    /// `None` for free kernels.
    pub fn decay_time(&self) -> Option<f64> {
        match self {
            KernelSpec::PowerLawExp { omega, .. } | KernelSpec::Exponential { omega, .. } => {
                Some(if *omega == 0.0 { f64::INFINITY } else { 1.0 / omega })
            }
            KernelSpec::Free { .. } => None,
        }
    }

    /// Same kernel with all coefficients multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            KernelSpec::PowerLawExp { g, alpha, omega } => KernelSpec::PowerLawExp {
                g: g * factor,
                alpha: *alpha,
                omega: *omega,
            },
            KernelSpec::Exponential { g, omega } => KernelSpec::Exponential {
                g: g * factor,
                omega: *omega,
            },
            KernelSpec::Free { coefficients } => KernelSpec::Free {
                coefficients: coefficients.iter().map(|c| c * factor).collect(),
            },
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        match self {
            KernelSpec::PowerLawExp { g, alpha, omega } => {
                g.is_finite() && alpha.is_finite() && omega.is_finite()
            }
            KernelSpec::Exponential { g, omega } => g.is_finite() && omega.is_finite(),
            KernelSpec::Free { coefficients } => coefficients.iter().all(|c| c.is_finite()),
        }
    }
}

/// `h(α, ω) = Σ_{τ=1}^{q} τ^(-α) exp(-ω τ)`, the integrated unit-amplitude
/// power-law kernel.
pub fn unit_power_law_sum(alpha: f64, omega: f64, q: usize) -> f64 {
    (1..=q)
        .map(|tau| {
            let t = tau as f64;
            t.powf(-alpha) * (-omega * t).exp()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn flat_power_law() {
        let k = KernelSpec::power_law_exp(0.05, 0.0, 0.0);
        assert_eq!(k.eval(7).unwrap(), 0.05);
        assert!((k.integrated(10).unwrap() - 0.5).abs() < 1e-15);
        let k = KernelSpec::power_law_exp(0.01, 0.0, 0.0);
        assert!((k.integrated(10).unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn day_dd_kernel_at_lag_one() {
        let k = KernelSpec::power_law_exp(0.0799, 0.71, 0.0064);
        let expected = 0.0799 * (-0.0064f64).exp();
        assert!((k.eval(1).unwrap() - expected).abs() < 1e-15);
        assert!((k.eval(1).unwrap() - 0.07939).abs() < 5e-6);
    }

    #[test]
    fn leverage_kernel_at_lag_five() {
        let k = KernelSpec::exponential(-0.0497, 0.183);
        let v = k.eval(5).unwrap();
        assert!((v - (-0.0497 * (-0.915f64).exp())).abs() < 1e-15);
        assert!((v + 0.01991).abs() < 5e-6);
    }

    #[test]
    fn harmonic_number() {
        let mut h512 = 0.0;
        for tau in (1..=512).rev() {
            h512 += 1.0 / tau as f64;
        }
        assert!((unit_power_law_sum(1.0, 0.0, 512) - h512).abs() < 1e-12);
        assert!((h512 - 6.8165).abs() < 1e-4);
    }

    #[test]
    fn fast_exponential_vanishes() {
        let k = KernelSpec::exponential(1.0, 800.0);
        assert!(k.integrated(512).unwrap() < 1e-300);
    }

    #[test]
    fn lag_range_checked() {
        assert!(matches!(
            KernelSpec::power_law_exp(1.0, 1.0, 0.0).eval(0),
            Err(Error::LagOutOfRange { .. })
        ));
        let free = KernelSpec::free(vec![0.1, 0.2]);
        assert_eq!(free.eval(2).unwrap(), 0.2);
        assert!(matches!(free.eval(3), Err(Error::LagOutOfRange { tau: 3, max: 2 })));
        assert!(free.table(3).is_err());
    }

    #[test]
    fn decay_time_infinite_for_zero_rate() {
        assert_eq!(
            KernelSpec::power_law_exp(0.1, 1.0, 0.0).decay_time(),
            Some(f64::INFINITY)
        );
        assert!((KernelSpec::exponential(0.1, 0.2).decay_time().unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn json_shape_tags() {
        let k: KernelSpec =
            serde_json::from_str(r#"{"shape":"power_law_exp","g":0.1,"alpha":1.1,"omega":0.02}"#)
                .unwrap();
        assert_eq!(k, KernelSpec::power_law_exp(0.1, 1.1, 0.02));
        let s = serde_json::to_string(&KernelSpec::free(vec![0.5])).unwrap();
        assert_eq!(s, r#"{"shape":"free","coefficients":[0.5]}"#);
    }

    proptest! {
        #[test]
        fn power_law_strictly_decreasing(g in 1e-3f64..1.0, alpha in 1e-3f64..4.0,
                                         omega in 0.0f64..0.5, tau in 1usize..400) {
            let k = KernelSpec::power_law_exp(g, alpha, omega);
            prop_assert!(k.eval(tau + 1).unwrap() < k.eval(tau).unwrap());
        }
    }
}
