//! Monte Carlo generation of return panels with unit-variance Student
//! residuals.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{business_days, ReturnPanel};
use crate::error::{Error, Result};
use crate::filter::{Compiled, NegativeReport};
use crate::layout::{Regressors, Target};
use crate::model::{BivariateModel, DailyArchParams, TargetParams};
use crate::validity::check_stability;

/// Unit-variance Student residuals. `nu = ∞` gives standard normals.
#[derive(Debug, Clone, Copy)]
pub struct UnitStudent {
    dist: Option<StudentT<f64>>,
    scale: f64,
}

impl UnitStudent {
    pub fn new(nu: f64) -> Result<Self> {
        if !(nu > 2.0) {
            return Err(Error::InvalidInput(format!(
                "Student degrees of freedom must exceed 2, got {nu}"
            )));
        }
        if nu.is_infinite() {
            return Ok(UnitStudent {
                dist: None,
                scale: 1.0,
            });
        }
        let dist = StudentT::new(nu).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(UnitStudent {
            dist: Some(dist),
            scale: ((nu - 2.0) / nu).sqrt(),
        })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.dist {
            Some(d) => self.scale * d.sample(rng),
            None => rng.sample(StandardNormal),
        }
    }
}

/// `n` i.i.d. draws of a unit-variance Student variable.
pub fn sample_student(nu: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let law = UnitStudent::new(nu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| law.sample(&mut rng)).collect())
}

/// Generating model of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimModel {
    Bivariate(BivariateModel),
    /// Daily ARCH. Each daily return is split into independent overnight
    /// and intra-day parts carrying `overnight_share` and
    /// `1 − overnight_share` of the conditional variance; with a zero share
    /// the intra-day return is the Student daily return itself.
    Daily {
        params: DailyArchParams,
        overnight_share: f64,
    },
}

impl SimModel {
    pub fn q(&self) -> usize {
        match self {
            SimModel::Bivariate(m) => m.q,
            SimModel::Daily { params, .. } => params.q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_stocks: usize,
    pub days: usize,
    pub seed: u64,
    /// Dates simulated and discarded before the output window; defaults to
    /// `max(10 q, 5000)`.
    pub burn_in: Option<usize>,
    /// Simulate models that fail the stability check.
    pub force: bool,
}

impl SimConfig {
    pub fn new(n_stocks: usize, days: usize, seed: u64) -> Self {
        SimConfig {
            n_stocks,
            days,
            seed,
            burn_in: None,
            force: false,
        }
    }

    pub fn burn_in_for(&self, q: usize) -> usize {
        self.burn_in.unwrap_or_else(|| (10 * q).max(5000))
    }
}

/// First date of simulated calendars.
pub fn simulation_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date")
}

pub fn ticker_name(i: usize) -> String {
    format!("SIM{:04}", i + 1)
}

/// Per-stock generator: ChaCha8 keyed by the seed, one stream per stock.
pub(crate) fn stock_rng(seed: u64, stock: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stock as u64);
    rng
}

enum Engine {
    Bivariate {
        day: Compiled,
        night: Compiled,
        day_law: UnitStudent,
        night_law: UnitStudent,
        start: [f64; 2],
    },
    Daily {
        eq: Compiled,
        law: UnitStudent,
        share: f64,
        start: f64,
    },
}

impl Engine {
    fn new(model: &SimModel, force: bool) -> Result<Self> {
        match model {
            SimModel::Bivariate(m) => {
                m.validate()?;
                let report = check_stability(m);
                if !report.stable && !force {
                    return Err(Error::Unstable(report.spectral_radius));
                }
                let start = report
                    .fixed_point
                    .filter(|p| p.iter().all(|v| v.is_finite() && *v > 0.0))
                    .unwrap_or([m.day.s2.abs().max(1e-12), m.night.s2.abs().max(1e-12)]);
                Ok(Engine::Bivariate {
                    day: Compiled::bivariate(&m.day, Target::Day)?,
                    night: Compiled::bivariate(&m.night, Target::Night)?,
                    day_law: UnitStudent::new(m.day.nu)?,
                    night_law: UnitStudent::new(m.night.nu)?,
                    start,
                })
            }
            SimModel::Daily {
                params,
                overnight_share,
            } => {
                params.validate()?;
                if !(0.0..1.0).contains(overnight_share) {
                    return Err(Error::InvalidInput(format!(
                        "overnight share {overnight_share} outside [0, 1)"
                    )));
                }
                let k_hat = params.k.integrated(params.q)?;
                if k_hat >= 1.0 && !force {
                    return Err(Error::Unstable(k_hat));
                }
                let start = if k_hat < 1.0 && params.s2 > 0.0 {
                    params.s2 / (1.0 - k_hat)
                } else {
                    params.s2.abs().max(1e-12)
                };
                Ok(Engine::Daily {
                    eq: Compiled::new(&TargetParams::Daily(params.clone()))?,
                    law: UnitStudent::new(params.nu)?,
                    share: *overnight_share,
                    start,
                })
            }
        }
    }

    fn q(&self) -> usize {
        match self {
            Engine::Bivariate { day, .. } => day.q,
            Engine::Daily { eq, .. } => eq.q,
        }
    }

    /// Simulate `total` dates after `q` dates of i.i.d. pre-history at the
    /// stationary variances. With `strict`, the first non-positive variance
    /// aborts; otherwise it is recorded and the return set to zero.
    fn run(
        &self,
        rng: &mut ChaCha8Rng,
        total: usize,
        strict: bool,
    ) -> Result<(Vec<f64>, Vec<f64>, NegativeReport)> {
        let q = self.q();
        let n = q + total;
        let mut reg = Regressors::with_capacity(n);
        let mut rd = Vec::with_capacity(n);
        let mut rn = Vec::with_capacity(n);
        let mut negatives = NegativeReport::default();
        let mut check = |v: f64| -> Result<f64> {
            if v > 0.0 {
                return Ok(v);
            }
            if strict {
                return Err(Error::NegativeVariance { count: 1, worst: v });
            }
            negatives.record(v);
            Ok(0.0)
        };
        for t in 0..n {
            match self {
                Engine::Bivariate {
                    day,
                    night,
                    day_law,
                    night_law,
                    start,
                } => {
                    let vn = if t < q { start[1] } else { check(night.eval(&reg, t))? };
                    let m = vn.sqrt() * night_law.sample(rng);
                    reg.push_overnight(m);
                    let vd = if t < q { start[0] } else { check(day.eval(&reg, t))? };
                    let d = vd.sqrt() * day_law.sample(rng);
                    reg.push_intraday(d);
                    rd.push(d);
                    rn.push(m);
                }
                Engine::Daily {
                    eq,
                    law,
                    share,
                    start,
                } => {
                    let v = if t < q { *start } else { check(eq.eval(&reg, t))? };
                    let m = (share * v).sqrt() * law.sample(rng);
                    let d = ((1.0 - share) * v).sqrt() * law.sample(rng);
                    // the daily equation reads r = d + m from the intra-day slot
                    reg.push_overnight(0.0);
                    reg.push_intraday(d + m);
                    rd.push(d);
                    rn.push(m);
                }
            }
        }
        Ok((rd, rn, negatives))
    }
}

/// Simulate a panel. Stocks are generated in parallel from independent
/// streams, so the output does not depend on the thread count.
pub fn simulate_panel(model: &SimModel, config: &SimConfig) -> Result<ReturnPanel> {
    if config.days == 0 || config.n_stocks == 0 {
        return Err(Error::InvalidInput(
            "simulation needs at least one stock and one date".into(),
        ));
    }
    let q = model.q();
    let burn_in = config.burn_in_for(q);
    if burn_in < q {
        return Err(Error::InvalidInput(format!(
            "burn-in {burn_in} shorter than the maximum lag {q}"
        )));
    }
    let engine = Engine::new(model, config.force)?;
    let runs: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..config.n_stocks)
        .into_par_iter()
        .map(|s| {
            let mut rng = stock_rng(config.seed, s);
            let (rd, rn, _) = engine
                .run(&mut rng, burn_in + config.days, true)
                .map_err(|e| Error::Numerical(format!("stock {}: {e}", ticker_name(s))))?;
            let skip = q + burn_in;
            Ok((rd[skip..].to_vec(), rn[skip..].to_vec()))
        })
        .collect();
    let mut intraday = Vec::with_capacity(config.n_stocks);
    let mut overnight = Vec::with_capacity(config.n_stocks);
    for run in runs {
        let (d, n) = run?;
        intraday.push(d);
        overnight.push(n);
    }
    ReturnPanel::from_components(
        (0..config.n_stocks).map(ticker_name).collect(),
        business_days(simulation_start(), config.days),
        intraday,
        overnight,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalPositivity {
    /// Simulated stock-days after burn-in.
    pub stock_days: usize,
    /// Non-positive instantaneous variances (intra-day and overnight),
    /// burn-in included.
    pub negatives: NegativeReport,
}

/// Long simulation counting non-positive variances instead of aborting.
pub fn empirical_positivity(
    model: &BivariateModel,
    n_stocks: usize,
    days: usize,
    seed: u64,
    burn_in: Option<usize>,
) -> Result<EmpiricalPositivity> {
    let sim = SimModel::Bivariate(model.clone());
    let engine = Engine::new(&sim, false)?;
    let burn_in = burn_in.unwrap_or_else(|| (10 * model.q).max(5000));
    let reports: Vec<Result<NegativeReport>> = (0..n_stocks)
        .into_par_iter()
        .map(|s| {
            let mut rng = stock_rng(seed, s);
            Ok(engine.run(&mut rng, burn_in + days, false)?.2)
        })
        .collect();
    let mut negatives = NegativeReport::default();
    for r in reports {
        negatives.merge(&r?);
    }
    Ok(EmpiricalPositivity {
        stock_days: n_stocks * days,
        negatives,
    })
}
