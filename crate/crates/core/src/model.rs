//! Parameter sets of the intra-day/overnight model and of the daily ARCH
//! baseline, with their JSON representation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::layout::{role_span, Role, Target};

/// Full parameter set of one bivariate volatility equation (intra-day or
/// overnight).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationParams {
    pub q: usize,
    /// Baseline variance.
    pub s2: f64,
    /// Degrees of freedom of the unit-variance Student residual.
    pub nu: f64,
    #[serde(rename = "K_DD")]
    pub k_dd: KernelSpec,
    #[serde(rename = "K_NN")]
    pub k_nn: KernelSpec,
    #[serde(rename = "K_ND")]
    pub k_nd: KernelSpec,
    #[serde(rename = "K_DN")]
    pub k_dn: KernelSpec,
    #[serde(rename = "L_D")]
    pub l_d: KernelSpec,
    #[serde(rename = "L_N")]
    pub l_n: KernelSpec,
}

impl EquationParams {
    /// Equation without any feedback.
    pub fn constant(q: usize, s2: f64, nu: f64) -> Self {
        EquationParams {
            q,
            s2,
            nu,
            k_dd: KernelSpec::zero(),
            k_nn: KernelSpec::zero(),
            k_nd: KernelSpec::zero(),
            k_dn: KernelSpec::zero(),
            l_d: KernelSpec::zero(),
            l_n: KernelSpec::zero(),
        }
    }

    pub fn kernel(&self, role: Role) -> Option<&KernelSpec> {
        Some(match role {
            Role::KDD => &self.k_dd,
            Role::KNN => &self.k_nn,
            Role::KND => &self.k_nd,
            Role::KDN => &self.k_dn,
            Role::LD => &self.l_d,
            Role::LN => &self.l_n,
            Role::K | Role::L => return None,
        })
    }

    pub fn kernel_mut(&mut self, role: Role) -> Option<&mut KernelSpec> {
        Some(match role {
            Role::KDD => &mut self.k_dd,
            Role::KNN => &mut self.k_nn,
            Role::KND => &mut self.k_nd,
            Role::KDN => &mut self.k_dn,
            Role::LD => &mut self.l_d,
            Role::LN => &mut self.l_n,
            Role::K | Role::L => return None,
        })
    }

    pub fn validate(&self, target: Target) -> Result<()> {
        if target == Target::Daily {
            return Err(Error::InvalidInput(
                "bivariate equation cannot drive the daily target".into(),
            ));
        }
        validate_common(self.q, self.s2, self.nu)?;
        for &role in target.roles() {
            let kernel = self.kernel(role).expect("bivariate role");
            check_kernel(kernel, target, role, self.q)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(EquationDocument::load(path)?.params)
    }
}

/// Daily ARCH with one quadratic and one leverage regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyArchParams {
    pub q: usize,
    pub s2: f64,
    pub nu: f64,
    #[serde(rename = "K")]
    pub k: KernelSpec,
    #[serde(rename = "L")]
    pub l: KernelSpec,
}

impl DailyArchParams {
    pub fn constant(q: usize, s2: f64, nu: f64) -> Self {
        DailyArchParams {
            q,
            s2,
            nu,
            k: KernelSpec::zero(),
            l: KernelSpec::zero(),
        }
    }

    pub fn kernel(&self, role: Role) -> Option<&KernelSpec> {
        match role {
            Role::K => Some(&self.k),
            Role::L => Some(&self.l),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.q, self.s2, self.nu)?;
        check_kernel(&self.k, Target::Daily, Role::K, self.q)?;
        check_kernel(&self.l, Target::Daily, Role::L, self.q)
    }
}

fn validate_common(q: usize, s2: f64, nu: f64) -> Result<()> {
    if q == 0 {
        return Err(Error::InvalidInput("maximum lag q must be at least 1".into()));
    }
    if !s2.is_finite() {
        return Err(Error::InvalidInput(format!("baseline s2 = {s2} is not finite")));
    }
    if !(nu > 2.0) {
        return Err(Error::InvalidInput(format!(
            "degrees of freedom nu = {nu} must exceed 2"
        )));
    }
    Ok(())
}

fn check_kernel(kernel: &KernelSpec, target: Target, role: Role, q: usize) -> Result<()> {
    if !kernel.is_finite() {
        return Err(Error::InvalidInput(format!(
            "kernel {} has non-finite parameters",
            role.label()
        )));
    }
    let span = role_span(target, role, q).unwrap_or(0);
    if let Some(max) = kernel.max_lag() {
        if max < span {
            return Err(Error::InvalidInput(format!(
                "free kernel {} of the {:?} equation has {max} coefficients, needs {span}",
                role.label(),
                target
            )));
        }
    }
    Ok(())
}

/// Parameters of one fitted target, tagged by target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", content = "params", rename_all = "lowercase")]
pub enum TargetParams {
    Day(EquationParams),
    Night(EquationParams),
    Daily(DailyArchParams),
}

impl TargetParams {
    pub fn target(&self) -> Target {
        match self {
            TargetParams::Day(_) => Target::Day,
            TargetParams::Night(_) => Target::Night,
            TargetParams::Daily(_) => Target::Daily,
        }
    }

    pub fn new_bivariate(target: Target, params: EquationParams) -> Self {
        match target {
            Target::Day => TargetParams::Day(params),
            Target::Night => TargetParams::Night(params),
            Target::Daily => panic!("daily target takes DailyArchParams"),
        }
    }

    pub fn q(&self) -> usize {
        match self {
            TargetParams::Day(p) | TargetParams::Night(p) => p.q,
            TargetParams::Daily(p) => p.q,
        }
    }

    pub fn s2(&self) -> f64 {
        match self {
            TargetParams::Day(p) | TargetParams::Night(p) => p.s2,
            TargetParams::Daily(p) => p.s2,
        }
    }

    pub fn nu(&self) -> f64 {
        match self {
            TargetParams::Day(p) | TargetParams::Night(p) => p.nu,
            TargetParams::Daily(p) => p.nu,
        }
    }

    pub fn set_nu(&mut self, nu: f64) {
        match self {
            TargetParams::Day(p) | TargetParams::Night(p) => p.nu = nu,
            TargetParams::Daily(p) => p.nu = nu,
        }
    }

    pub fn kernel(&self, role: Role) -> Option<&KernelSpec> {
        match self {
            TargetParams::Day(p) | TargetParams::Night(p) => p.kernel(role),
            TargetParams::Daily(p) => p.kernel(role),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetParams::Day(p) => p.validate(Target::Day),
            TargetParams::Night(p) => p.validate(Target::Night),
            TargetParams::Daily(p) => p.validate(),
        }
    }

    pub fn as_equation(&self) -> Option<&EquationParams> {
        match self {
            TargetParams::Day(p) | TargetParams::Night(p) => Some(p),
            TargetParams::Daily(_) => None,
        }
    }
}

/// The intra-day/overnight pair plus the pooled constants used to convert
/// between bivariate and daily predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BivariateModel {
    pub q: usize,
    pub day: EquationParams,
    pub night: EquationParams,
    /// Pooled `⟨rD rN⟩`.
    pub cross_moment: f64,
    /// Pooled `⟨rD²⟩/⟨r²⟩` and `⟨rN²⟩/⟨r²⟩`.
    pub variance_shares: [f64; 2],
}

impl BivariateModel {
    pub fn new(
        day: EquationParams,
        night: EquationParams,
        cross_moment: f64,
        variance_shares: [f64; 2],
    ) -> Result<Self> {
        let model = BivariateModel {
            q: day.q,
            day,
            night,
            cross_moment,
            variance_shares,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.day.q != self.q || self.night.q != self.q {
            return Err(Error::InvalidInput(format!(
                "inconsistent maximum lags: model {}, day {}, night {}",
                self.q, self.day.q, self.night.q
            )));
        }
        self.day.validate(Target::Day)?;
        self.night.validate(Target::Night)?;
        let [a, b] = self.variance_shares;
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
            return Err(Error::InvalidInput(format!(
                "variance shares ({a}, {b}) must lie in (0, 1)"
            )));
        }
        Ok(())
    }

    pub fn equation(&self, target: Target) -> Option<&EquationParams> {
        match target {
            Target::Day => Some(&self.day),
            Target::Night => Some(&self.night),
            Target::Daily => None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: BivariateModel = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }
}

/// An equation file: the parameters plus optional 95% confidence
/// half-widths keyed by parameter name (`g_DD`, `omega_NN`, `nu`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationDocument {
    #[serde(flatten)]
    pub params: EquationParams,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ci95: BTreeMap<String, f64>,
}

impl EquationDocument {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Bundled reference parameters estimated on US stocks (maximum lag 512).
pub mod reference {
    use super::*;

    const DAY: &str = include_str!("../data/params_us_day.json");
    const NIGHT: &str = include_str!("../data/params_us_night.json");

    pub fn day_document() -> EquationDocument {
        serde_json::from_str(DAY).expect("bundled day parameters parse")
    }

    pub fn night_document() -> EquationDocument {
        serde_json::from_str(NIGHT).expect("bundled night parameters parse")
    }

    pub fn day() -> EquationParams {
        day_document().params
    }

    pub fn night() -> EquationParams {
        night_document().params
    }

    /// Reference pair with independent residuals (zero cross moment) and
    /// variance shares taken from the stationary averages.
    pub fn model() -> BivariateModel {
        let day = day();
        let night = night();
        let mut model = BivariateModel {
            q: day.q,
            day,
            night,
            cross_moment: 0.0,
            variance_shares: [0.5, 0.5],
        };
        let report = crate::validity::check_stability(&model);
        if let Some([d, n]) = report.fixed_point {
            model.variance_shares = [d / (d + n), n / (d + n)];
        }
        model
    }

    pub fn day_json() -> &'static str {
        DAY
    }

    pub fn night_json() -> &'static str {
        NIGHT
    }
}
