//! Three-step normalization of intra-day and overnight returns.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::returns::ReturnPanel;
use crate::error::{Error, Result};

/// Everything needed to undo [`normalize_panel`]. Index 0 is intra-day,
/// index 1 overnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// Step 1: per-stock temporal means `[D, N]`.
    pub temporal_means: Vec<[f64; 2]>,
    /// Step 2: leave-one-out cross-sectional RMS per stock and date,
    /// `None` where the stock's return is missing.
    pub dispersion: [Vec<Vec<Option<f64>>>; 2],
    /// Step 3: per-stock RMS after step 2 `[D, N]`.
    pub historical_stds: Vec<[f64; 2]>,
}

impl NormalizationRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn finite_mean(x: &[f64]) -> f64 {
    let (s, n) = x
        .iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Leave-one-out root-mean-square across stocks for every date. Sums over
/// the stocks before and after `a` are accumulated separately, so stock
/// `a`'s own value never enters its divisor, not even through round-off.
fn leave_one_out_rms(x: &[Vec<f64>], dates: &[NaiveDate]) -> Result<Vec<Vec<Option<f64>>>> {
    let n = x.len();
    let t_len = dates.len();
    let mut out = vec![vec![None; t_len]; n];
    let mut prefix = vec![(0.0, 0usize); n + 1];
    let mut suffix = vec![(0.0, 0usize); n + 1];
    for t in 0..t_len {
        for a in 0..n {
            let v = x[a][t];
            let (s, c) = prefix[a];
            prefix[a + 1] = if v.is_finite() { (s + v * v, c + 1) } else { (s, c) };
        }
        for a in (0..n).rev() {
            let v = x[a][t];
            let (s, c) = suffix[a + 1];
            suffix[a] = if v.is_finite() { (s + v * v, c + 1) } else { (s, c) };
        }
        for a in 0..n {
            if !x[a][t].is_finite() {
                continue;
            }
            let (s, c) = (prefix[a].0 + suffix[a + 1].0, prefix[a].1 + suffix[a + 1].1);
            if c == 0 || !(s > 0.0) {
                return Err(Error::ZeroDispersion {
                    date: dates[t].to_string(),
                });
            }
            out[a][t] = Some((s / c as f64).sqrt());
        }
    }
    Ok(out)
}

fn normalize_component(
    raw: &[Vec<f64>],
    dates: &[NaiveDate],
    tickers: &[String],
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<Option<f64>>>, Vec<f64>)> {
    let means: Vec<f64> = raw.iter().map(|s| finite_mean(s)).collect();
    let centered: Vec<Vec<f64>> = raw
        .iter()
        .zip(&means)
        .map(|(s, m)| s.iter().map(|v| v - m).collect())
        .collect();
    let disp = leave_one_out_rms(&centered, dates)?;
    let mut out = Vec::with_capacity(raw.len());
    let mut stds = Vec::with_capacity(raw.len());
    for ((series, d), ticker) in centered.iter().zip(&disp).zip(tickers) {
        let scaled: Vec<f64> = series
            .iter()
            .zip(d)
            .map(|(v, d)| d.map_or(f64::NAN, |d| v / d))
            .collect();
        let (ss, n) = scaled
            .iter()
            .filter(|v| v.is_finite())
            .fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
        let std = if n > 0 { (ss / n as f64).sqrt() } else { 0.0 };
        if !(std > 0.0) {
            return Err(Error::InvalidInput(format!(
                "stock {ticker} has no return variation to normalize"
            )));
        }
        out.push(scaled.iter().map(|v| v / std).collect());
        stds.push(std);
    }
    Ok((out, means, disp, stds))
}

/// Center each stock, divide by the leave-one-out cross-sectional
/// dispersion of each date, then by the stock's own RMS. Intra-day and
/// overnight returns are treated separately; the daily return of the
/// result is the sum of the two normalized components.
pub fn normalize_panel(panel: &ReturnPanel) -> Result<ReturnPanel> {
    if panel.n_stocks() < 2 {
        return Err(Error::InvalidInput(format!(
            "normalization needs at least 2 stocks, got {}",
            panel.n_stocks()
        )));
    }
    let (d, d_means, d_disp, d_std) =
        normalize_component(&panel.intraday, &panel.dates, &panel.tickers)?;
    let (n, n_means, n_disp, n_std) =
        normalize_component(&panel.overnight, &panel.dates, &panel.tickers)?;
    let mut out = ReturnPanel::from_components(panel.tickers.clone(), panel.dates.clone(), d, n)?;
    out.long_gaps = panel.long_gaps.clone();
    out.normalization = Some(NormalizationRecord {
        tickers: panel.tickers.clone(),
        dates: panel.dates.clone(),
        temporal_means: d_means.into_iter().zip(n_means).map(|(a, b)| [a, b]).collect(),
        dispersion: [d_disp, n_disp],
        historical_stds: d_std.into_iter().zip(n_std).map(|(a, b)| [a, b]).collect(),
    });
    Ok(out)
}

/// Undo the normalization: multiply back the per-stock and per-date
/// divisors, re-integrating the volatility patterns. With `add_means` the
/// step-1 means are restored too. The daily return is recomputed as the sum.
pub fn denormalize(panel: &ReturnPanel, record: &NormalizationRecord, add_means: bool) -> Result<ReturnPanel> {
    if record.tickers != panel.tickers || record.dates != panel.dates {
        return Err(Error::InvalidInput(
            "normalization record does not match the panel".into(),
        ));
    }
    let restore = |series: &[Vec<f64>], k: usize| -> Vec<Vec<f64>> {
        series
            .iter()
            .enumerate()
            .map(|(s, x)| {
                let std = record.historical_stds[s][k];
                let mean = if add_means { record.temporal_means[s][k] } else { 0.0 };
                x.iter()
                    .zip(&record.dispersion[k][s])
                    .map(|(v, d)| d.map_or(f64::NAN, |d| v * std * d + mean))
                    .collect()
            })
            .collect()
    };
    let mut out = ReturnPanel::from_components(
        panel.tickers.clone(),
        panel.dates.clone(),
        restore(&panel.intraday, 0),
        restore(&panel.overnight, 1),
    )?;
    out.long_gaps = panel.long_gaps.clone();
    Ok(out)
}
