//! In-sample/out-of-sample comparison of the bivariate model against a
//! daily ARCH on two halves of the stock pool.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{equivalent_vol_bivariate_to_daily, equivalent_vols_daily_to_bivariate, variance_shares};
use crate::calibrate::{calibrate, loglik_of_predictions, CalibrationOptions, FitSettings, LikelihoodReport};
use crate::data::ReturnPanel;
use crate::error::{Error, Result};
use crate::filter::{filter_daily_arch, filter_volatility};
use crate::layout::Target;
use crate::model::{BivariateModel, DailyArchParams, TargetParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsosOptions {
    pub q: usize,
    pub q_free: usize,
    pub seed: u64,
    /// Use the zero-baseline overnight refit for the bivariate model.
    pub constrain_night: bool,
    pub settings: FitSettings,
}

impl Default for IsosOptions {
    fn default() -> Self {
        IsosOptions {
            q: 512,
            q_free: 63,
            seed: 0,
            constrain_night: false,
            settings: FitSettings::default(),
        }
    }
}

/// Return type being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Intraday,
    Overnight,
    Daily,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bivariate,
    DailyArch,
}

/// One prediction × model cell. ALpp values are percentages averaged over
/// the two halves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsosCell {
    pub prediction: Prediction,
    pub model: ModelKind,
    /// The model does not predict this return type itself; the variance is
    /// converted from its own prediction.
    pub derived: bool,
    pub is_alpp: f64,
    pub os_alpp: f64,
    /// Same without the Student normalization constant.
    pub is_alpp_kernel: f64,
    pub os_alpp_kernel: f64,
    /// ν of the predicted return type on each calibration half.
    pub nu: [f64; 2],
    /// `reports[h][e]`: parameters of half `h` evaluated on half `e`.
    pub reports: [[LikelihoodReport; 2]; 2],
    /// All four evaluations had positive variances. A non-positive variance
    /// scores zero likelihood, so an invalid evaluation enters the averages
    /// with ALpp 0.
    pub valid: bool,
}

/// Models calibrated on one half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfModels {
    pub bivariate: BivariateModel,
    pub daily: DailyArchParams,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsosReport {
    pub options: IsosOptions,
    /// Tickers of the two halves.
    pub halves: [Vec<String>; 2],
    pub models: [HalfModels; 2],
    pub cells: Vec<IsosCell>,
    pub flags: Vec<String>,
}

impl IsosReport {
    pub fn cell(&self, prediction: Prediction, model: ModelKind) -> Option<&IsosCell> {
        self.cells.iter().find(|c| c.prediction == prediction && c.model == model)
    }
}

/// Deterministic split of the stocks into two halves by the SHA-256 of
/// `seed ‖ ticker`; independent of the stock order.
pub fn hash_split(tickers: &[String], seed: u64) -> [Vec<usize>; 2] {
    let mut keyed: Vec<([u8; 32], usize)> = tickers
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut h = Sha256::new();
            h.update(seed.to_le_bytes());
            h.update(t.as_bytes());
            (h.finalize().into(), i)
        })
        .collect();
    keyed.sort();
    let half = tickers.len() / 2;
    let mut a: Vec<usize> = keyed[..half].iter().map(|k| k.1).collect();
    let mut b: Vec<usize> = keyed[half..].iter().map(|k| k.1).collect();
    a.sort_unstable();
    b.sort_unstable();
    [a, b]
}

pub fn isos_compare(panel: &ReturnPanel, options: &IsosOptions) -> Result<IsosReport> {
    if panel.n_stocks() < 4 {
        return Err(Error::InvalidInput("the comparison needs at least 4 stocks".into()));
    }
    let [a, b] = hash_split(&panel.tickers, options.seed);
    isos_compare_split(panel, &a, &b, options)
}

/// Variance predictions of one half's models on a panel, aligned on the
/// dates after the warm-up and pooled over stocks.
struct Predictions {
    /// `[intra-day, overnight, daily]` returns
    returns: [Vec<f64>; 3],
    /// bivariate: direct intra-day, direct overnight, derived daily
    bivariate: [Vec<f64>; 3],
    /// daily ARCH: derived intra-day, derived overnight, direct daily
    daily: [Vec<f64>; 3],
}

fn predict(models: &HalfModels, panel: &ReturnPanel) -> Result<Predictions> {
    let q = models.bivariate.q;
    let mut p = Predictions {
        returns: Default::default(),
        bivariate: Default::default(),
        daily: Default::default(),
    };
    for s in 0..panel.n_stocks() {
        let (rd, rn, r) = (&panel.intraday[s], &panel.overnight[s], &panel.daily[s]);
        let paths = filter_volatility(&models.bivariate, rd, rn)?;
        let derived = equivalent_vol_bivariate_to_daily(&paths.day, &paths.night, models.bivariate.cross_moment);
        let v = filter_daily_arch(&models.daily, r)?;
        let (vd, vn) = equivalent_vols_daily_to_bivariate(&v, models.bivariate.variance_shares);
        for (k, x) in [rd, rn, r].into_iter().enumerate() {
            p.returns[k].extend_from_slice(&x[q..]);
        }
        p.bivariate[0].extend(paths.day);
        p.bivariate[1].extend(paths.night);
        p.bivariate[2].extend(derived);
        p.daily[0].extend(vd);
        p.daily[1].extend(vn);
        p.daily[2].extend(v);
    }
    Ok(p)
}

fn calibrate_half(panel: &ReturnPanel, options: &IsosOptions) -> Result<HalfModels> {
    let base = CalibrationOptions {
        q_free: options.q_free,
        q: options.q,
        constrain_s2_zero: false,
        settings: options.settings,
    };
    let mut flags = Vec::new();
    let mut fit = |target: Target, constrain: bool| -> Result<TargetParams> {
        let opts = CalibrationOptions {
            constrain_s2_zero: constrain,
            ..base
        };
        let cal = calibrate(panel, target, &opts).map_err(|e| e.context(format!("{} calibration", target.label())))?;
        flags.extend(cal.flags.iter().map(|f| format!("{}: {f}", target.label())));
        Ok(cal.final_fit().params.clone())
    };
    let day = fit(Target::Day, false)?;
    let night = fit(Target::Night, options.constrain_night)?;
    let daily = fit(Target::Daily, false)?;
    let (shares, cross) = variance_shares(panel);
    let (TargetParams::Day(day), TargetParams::Night(night), TargetParams::Daily(daily)) = (day, night, daily) else {
        unreachable!("calibrate returns the requested target");
    };
    let bivariate = BivariateModel::new(day, night, cross, shares)?;
    Ok(HalfModels {
        bivariate,
        daily,
        flags,
    })
}

/// Full comparison on an explicit split. Each half calibrates the day,
/// night and daily equations; every parameter set is evaluated on its own
/// half (in-sample) and on the other half (out-of-sample).
pub fn isos_compare_split(
    panel: &ReturnPanel,
    half_a: &[usize],
    half_b: &[usize],
    options: &IsosOptions,
) -> Result<IsosReport> {
    if half_a.is_empty() || half_b.is_empty() {
        return Err(Error::InvalidInput("both halves need at least one stock".into()));
    }
    let panels = [panel.select(half_a), panel.select(half_b)];
    let (ma, mb) = rayon::join(
        || calibrate_half(&panels[0], options).map_err(|e| e.context("half 1")),
        || calibrate_half(&panels[1], options).map_err(|e| e.context("half 2")),
    );
    let models = [ma?, mb?];
    // preds[h][e]
    let mut preds = Vec::new();
    for m in &models {
        preds.push([predict(m, &panels[0])?, predict(m, &panels[1])?]);
    }
    let mut cells = Vec::new();
    let mut flags: Vec<String> = models
        .iter()
        .enumerate()
        .flat_map(|(h, m)| m.flags.iter().map(move |f| format!("half {}: {f}", h + 1)))
        .collect();
    for (k, prediction) in [Prediction::Intraday, Prediction::Overnight, Prediction::Daily]
        .into_iter()
        .enumerate()
    {
        for model in [ModelKind::Bivariate, ModelKind::DailyArch] {
            let derived = match model {
                ModelKind::Bivariate => k == 2,
                ModelKind::DailyArch => k < 2,
            };
            // Both models are scored with the ν calibrated for the
            // predicted return type on the same half.
            let nu_of = |m: &HalfModels| match k {
                0 => m.bivariate.day.nu,
                1 => m.bivariate.night.nu,
                _ => m.daily.nu,
            };
            let nu = [nu_of(&models[0]), nu_of(&models[1])];
            let report = |h: usize, e: usize| {
                let p = &preds[h][e];
                let sigma2 = match model {
                    ModelKind::Bivariate => &p.bivariate[k],
                    ModelKind::DailyArch => &p.daily[k],
                };
                loglik_of_predictions(sigma2, &p.returns[k], nu[h])
            };
            let reports = [[report(0, 0), report(0, 1)], [report(1, 0), report(1, 1)]];
            for (h, row) in reports.iter().enumerate() {
                for (e, r) in row.iter().enumerate().filter(|(_, r)| !r.valid) {
                    flags.push(format!(
                        "{prediction:?}/{model:?}: half {} parameters on half {}: {} non-positive variances",
                        h + 1,
                        e + 1,
                        r.negative_variance_count
                    ));
                }
            }
            let avg = |f: &dyn Fn(&LikelihoodReport) -> f64, os: bool| {
                let (x, y) = if os {
                    (&reports[0][1], &reports[1][0])
                } else {
                    (&reports[0][0], &reports[1][1])
                };
                0.5 * (f(x) + f(y))
            };
            cells.push(IsosCell {
                prediction,
                model,
                derived,
                is_alpp: avg(&LikelihoodReport::alpp, false),
                os_alpp: avg(&LikelihoodReport::alpp, true),
                is_alpp_kernel: avg(&LikelihoodReport::alpp_kernel, false),
                os_alpp_kernel: avg(&LikelihoodReport::alpp_kernel, true),
                nu,
                valid: reports.iter().flatten().all(|r| r.valid),
                reports,
            });
        }
    }
    Ok(IsosReport {
        options: *options,
        halves: [panels[0].tickers.clone(), panels[1].tickers.clone()],
        models,
        cells,
        flags,
    })
}
