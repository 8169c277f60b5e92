//! Readers for the JSON documents the subcommands exchange.

use std::collections::BTreeMap;
use std::path::Path;

use onarch_core::calibrate::{Calibration, CalibrationOptions, FitResult};
use onarch_core::simulate::SimModel;
use onarch_core::validity::check_stability;
use onarch_core::{BivariateModel, DailyArchParams, EquationDocument, EquationParams, Target, TargetParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    /// Calibration is deterministic; no seed is involved.
    pub seed: Option<u64>,
    pub panel: String,
    pub data_sha256: String,
    pub options: CalibrationOptions,
    pub steps: Vec<String>,
}

/// Output of `calibrate`: the final fit first, then the whole pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitDocument {
    pub provenance: Provenance,
    pub fit: FitResult,
    pub flags: Vec<String>,
    pub pipeline: Calibration,
}

/// One bivariate equation with the confidence half-widths available for it.
#[derive(Debug, Clone)]
pub struct Equation {
    pub target: Target,
    pub params: EquationParams,
    pub ci95: BTreeMap<String, f64>,
}

pub fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path, v: Value) -> Result<T, Failure> {
    serde_json::from_value(v).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn is_fit(v: &Value) -> bool {
    v.get("fit").is_some() || v.get("names").is_some()
}

/// A fit from either a `calibrate` output or a bare fit result.
pub fn load_fit(path: &Path) -> Result<FitResult, Failure> {
    let v = read_json(path)?;
    match v.get("fit") {
        Some(fit) => parse(path, fit.clone()),
        None => parse(path, v),
    }
}

/// A bivariate equation from a fit or an equation file. Equation files do
/// not say which equation they hold, so `role` must be given for them.
pub fn load_equation(path: &Path, role: Option<Target>) -> Result<Equation, Failure> {
    let v = read_json(path)?;
    if is_fit(&v) {
        let fit = match v.get("fit") {
            Some(f) => parse::<FitResult>(path, f.clone())?,
            None => parse(path, v)?,
        };
        let Some(params) = fit.params.as_equation().cloned() else {
            return Err(Failure::Usage(format!(
                "{} holds a daily ARCH fit, not an intra-day or overnight equation",
                path.display()
            )));
        };
        if let Some(r) = role.filter(|&r| r != fit.target) {
            return Err(Failure::Usage(format!(
                "{} is a fit of the {} equation, given as {}",
                path.display(),
                fit.target.label(),
                r.label()
            )));
        }
        return Ok(Equation {
            target: fit.target,
            params,
            ci95: fit.ci95,
        });
    }
    let doc: EquationDocument = parse(path, v)?;
    let Some(target) = role else {
        return Err(Failure::Usage(format!(
            "cannot tell whether {} is the intra-day or the overnight equation; pass it with --day or --night",
            path.display()
        )));
    };
    doc.params.validate(target).map_err(Failure::from)?;
    Ok(Equation {
        target,
        params: doc.params,
        ci95: doc.ci95,
    })
}

/// Pair of equations with independent residuals and variance shares from
/// the stationary averages (equal shares when there is no stationary state).
pub fn pair(day: EquationParams, night: EquationParams) -> Result<BivariateModel, Failure> {
    let mut model = BivariateModel::new(day, night, 0.0, [0.5, 0.5])?;
    if let Some([d, n]) = check_stability(&model).fixed_point {
        if d > 0.0 && n > 0.0 {
            model.variance_shares = [d / (d + n), n / (d + n)];
        }
    }
    Ok(model)
}

pub fn is_bivariate(v: &Value) -> bool {
    v.get("day").is_some() && v.get("night").is_some()
}

/// Generating model for `simulate`: a tagged simulation model, a bivariate
/// model, a daily ARCH (parameters or fit), or a pair of equations.
pub fn load_sim_model(model: &Path, night: Option<&Path>, overnight_share: Option<f64>) -> Result<SimModel, Failure> {
    let v = read_json(model)?;
    let daily = |params: DailyArchParams| -> Result<SimModel, Failure> {
        params.validate()?;
        Ok(SimModel::Daily {
            params,
            overnight_share: overnight_share.unwrap_or(0.0),
        })
    };
    if night.is_none() {
        if v.get("kind").is_some() {
            return parse(model, v);
        }
        if is_bivariate(&v) {
            let m: BivariateModel = parse(model, v)?;
            m.validate()?;
            return Ok(SimModel::Bivariate(m));
        }
        if v.get("K").is_some() {
            return daily(parse(model, v)?);
        }
        if is_fit(&v) {
            if let TargetParams::Daily(p) = load_fit(model)?.params {
                return daily(p);
            }
        }
        return Err(Failure::Usage(format!(
            "{} is a single equation; give the overnight one with --night-model",
            model.display()
        )));
    }
    let night = night.expect("checked above");
    let d = load_equation(model, Some(Target::Day))?;
    let n = load_equation(night, Some(Target::Night))?;
    Ok(SimModel::Bivariate(pair(d.params, n.params)?))
}
