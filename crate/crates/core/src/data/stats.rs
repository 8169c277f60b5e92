//! Descriptive statistics of return panels.

use serde::{Deserialize, Serialize};

use super::returns::ReturnPanel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// `⟨r³⟩ / ⟨r²⟩^{3/2}`; `None` when the series is constant zero.
    pub skewness: Option<f64>,
    /// `⟨r⁴⟩ / ⟨r²⟩²`.
    pub kurtosis: Option<f64>,
    /// Set when the standard deviation is zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentsSummary {
    pub intraday: Moments,
    pub overnight: Moments,
    pub daily: Moments,
}

/// Pooled moments of the finite values.
pub fn moments<'a>(values: impl IntoIterator<Item = &'a f64>) -> Moments {
    let mut p = [0.0f64; 5];
    for &v in values.into_iter().filter(|v| v.is_finite()) {
        let v2 = v * v;
        p[0] += 1.0;
        p[1] += v;
        p[2] += v2;
        p[3] += v2 * v;
        p[4] += v2 * v2;
    }
    let n = p[0];
    if n == 0.0 {
        return Moments {
            count: 0,
            mean: f64::NAN,
            std: f64::NAN,
            skewness: None,
            kurtosis: None,
            degenerate: true,
        };
    }
    let mean = p[1] / n;
    let m2 = p[2] / n;
    let std = (m2 - mean * mean).max(0.0).sqrt();
    let ok = m2 > 0.0;
    Moments {
        count: n as usize,
        mean,
        std,
        skewness: ok.then(|| (p[3] / n) / m2.powf(1.5)),
        kurtosis: ok.then(|| (p[4] / n) / (m2 * m2)),
        degenerate: !(std > 0.0),
    }
}

pub fn moments_summary(panel: &ReturnPanel) -> Result<MomentsSummary> {
    if panel.n_stocks() == 0 || panel.n_dates() == 0 {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    Ok(MomentsSummary {
        intraday: moments(panel.intraday.iter().flatten()),
        overnight: moments(panel.overnight.iter().flatten()),
        daily: moments(panel.daily.iter().flatten()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCorrelations {
    /// `corr(rN_t, rD_t)`: overnight leading the same day's intra-day.
    pub night_day: f64,
    /// `corr(rD_t, rN_{t+1})`: intra-day leading the next overnight.
    pub day_next_night: f64,
    /// `|⟨r²⟩ − ⟨rD²⟩ − ⟨rN²⟩| / ⟨r²⟩` over dates where both parts exist.
    pub additivity_deviation: f64,
}

fn pearson(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in pairs.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
    }
    let cov = sxy / n - (sx / n) * (sy / n);
    let vx = sxx / n - (sx / n).powi(2);
    let vy = syy / n - (sy / n).powi(2);
    cov / (vx * vy).sqrt()
}

pub fn cross_correlations(panel: &ReturnPanel) -> CrossCorrelations {
    let same = pearson(
        panel
            .overnight
            .iter()
            .zip(&panel.intraday)
            .flat_map(|(n, d)| n.iter().copied().zip(d.iter().copied())),
    );
    let lead = pearson(
        panel
            .intraday
            .iter()
            .zip(&panel.overnight)
            .flat_map(|(d, n)| d.iter().copied().zip(n.iter().skip(1).copied())),
    );
    let (mut r2, mut d2, mut n2) = (0.0, 0.0, 0.0);
    for (d, n) in panel.intraday.iter().zip(&panel.overnight) {
        for (&a, &b) in d.iter().zip(n) {
            if a.is_finite() && b.is_finite() {
                r2 += (a + b) * (a + b);
                d2 += a * a;
                n2 += b * b;
            }
        }
    }
    CrossCorrelations {
        night_day: same,
        day_next_night: lead,
        additivity_deviation: (r2 - d2 - n2).abs() / r2,
    }
}

/// Relative volatility per weekday (Monday..Friday).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyProfile {
    pub weekdays: Vec<String>,
    /// RMS per weekday normalized to mean one across weekdays with data.
    pub intraday: Vec<f64>,
    /// Overnight returns are dated by the day they lead into, so Monday
    /// holds the weekend.
    pub overnight: Vec<f64>,
    pub daily: Vec<f64>,
}

pub fn weekly_seasonality(panel: &ReturnPanel) -> Result<WeeklyProfile> {
    if panel.n_stocks() == 0 || panel.n_dates() == 0 {
        return Err(Error::InvalidInput("empty panel".into()));
    }
    let weekdays = panel.weekdays();
    let profile = |series: &[Vec<f64>]| -> Vec<f64> {
        let mut ss = [0.0; 5];
        let mut n = [0usize; 5];
        for s in series {
            for (v, &w) in s.iter().zip(&weekdays) {
                if v.is_finite() && w < 5 {
                    ss[w as usize] += v * v;
                    n[w as usize] += 1;
                }
            }
        }
        let rms: Vec<f64> = (0..5)
            .map(|w| if n[w] > 0 { (ss[w] / n[w] as f64).sqrt() } else { f64::NAN })
            .collect();
        let present: Vec<f64> = rms.iter().copied().filter(|v| v.is_finite()).collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        rms.iter().map(|v| v / mean).collect()
    };
    Ok(WeeklyProfile {
        weekdays: ["Mon", "Tue", "Wed", "Thu", "Fri"].map(String::from).to_vec(),
        intraday: profile(&panel.intraday),
        overnight: profile(&panel.overnight),
        daily: profile(&panel.daily),
    })
}
