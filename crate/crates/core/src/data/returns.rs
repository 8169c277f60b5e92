//! Return panels and their CSV form.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::normalize::NormalizationRecord;
use super::ohlc::OhlcPanel;
use crate::error::{Error, Result};

/// Overnight returns spanning more calendar days than this are flagged.
pub const LONG_GAP_DAYS: i64 = 5;

/// Per-stock intra-day, overnight and daily log-returns on a shared
/// calendar. Missing values are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    /// `intraday[stock][date]`
    pub intraday: Vec<Vec<f64>>,
    pub overnight: Vec<Vec<f64>>,
    pub daily: Vec<Vec<f64>>,
    /// Overnight returns spanning more than [`LONG_GAP_DAYS`] calendar days.
    pub long_gaps: Vec<LongGap>,
    pub normalization: Option<NormalizationRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LongGap {
    pub ticker: String,
    pub date: NaiveDate,
    pub days: i64,
}

impl ReturnPanel {
    pub fn n_stocks(&self) -> usize {
        self.tickers.len()
    }

    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    /// Panel from per-stock series; the daily return is the sum of the two
    /// components.
    pub fn from_components(
        tickers: Vec<String>,
        dates: Vec<NaiveDate>,
        intraday: Vec<Vec<f64>>,
        overnight: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if tickers.len() != intraday.len() || tickers.len() != overnight.len() {
            return Err(Error::InvalidInput("one series per ticker expected".into()));
        }
        for (d, n) in intraday.iter().zip(&overnight) {
            if d.len() != dates.len() || n.len() != dates.len() {
                return Err(Error::InvalidInput(
                    "series lengths must match the calendar".into(),
                ));
            }
        }
        let daily = intraday
            .iter()
            .zip(&overnight)
            .map(|(d, n)| d.iter().zip(n).map(|(a, b)| a + b).collect())
            .collect();
        Ok(ReturnPanel {
            tickers,
            dates,
            intraday,
            overnight,
            daily,
            long_gaps: Vec::new(),
            normalization: None,
        })
    }

    /// Sub-panel with the given stocks, in the given order.
    pub fn select(&self, stocks: &[usize]) -> ReturnPanel {
        let pick = |v: &Vec<Vec<f64>>| stocks.iter().map(|&i| v[i].clone()).collect();
        let tickers: Vec<String> = stocks.iter().map(|&i| self.tickers[i].clone()).collect();
        let keep: BTreeSet<&String> = tickers.iter().collect();
        ReturnPanel {
            intraday: pick(&self.intraday),
            overnight: pick(&self.overnight),
            daily: pick(&self.daily),
            long_gaps: self
                .long_gaps
                .iter()
                .filter(|g| keep.contains(&g.ticker))
                .cloned()
                .collect(),
            normalization: None,
            dates: self.dates.clone(),
            tickers,
        }
    }

    /// Write `ticker,date,r_intraday,r_overnight,r_daily`, one row per stock
    /// and calendar date with at least one finite return. Missing values
    /// are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["ticker", "date", "r_intraday", "r_overnight", "r_daily"])?;
        let fmt = |x: f64| if x.is_finite() { format!("{x}") } else { String::new() };
        for (s, ticker) in self.tickers.iter().enumerate() {
            for (t, date) in self.dates.iter().enumerate() {
                let (d, n, r) = (self.intraday[s][t], self.overnight[s][t], self.daily[s][t]);
                if !(d.is_finite() || n.is_finite()) {
                    continue;
                }
                w.write_record([
                    ticker.clone(),
                    date.to_string(),
                    fmt(d),
                    fmt(n),
                    fmt(r),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv output>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let malformed = |line: u64, message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| malformed(1, format!("missing column '{name}'")))
        };
        let cols = [
            col("ticker")?,
            col("date")?,
            col("r_intraday")?,
            col("r_overnight")?,
            col("r_daily")?,
        ];
        let mut rows: BTreeMap<String, BTreeMap<NaiveDate, [f64; 3]>> = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let get = |i: usize| row.get(cols[i]).unwrap_or("");
            let date = NaiveDate::parse_from_str(get(1), "%Y-%m-%d")
                .map_err(|e| malformed(line, format!("bad date '{}': {e}", get(1))))?;
            let num = |i: usize| -> Result<f64> {
                let s = get(i);
                if s.is_empty() {
                    Ok(f64::NAN)
                } else {
                    s.parse()
                        .map_err(|e| malformed(line, format!("bad number '{s}': {e}")))
                }
            };
            let values = [num(2)?, num(3)?, num(4)?];
            let ticker = get(0).to_string();
            if rows
                .entry(ticker.clone())
                .or_default()
                .insert(date, values)
                .is_some()
            {
                return Err(Error::DuplicateDate {
                    ticker,
                    date: date.to_string(),
                });
            }
        }
        let dates: Vec<NaiveDate> = rows
            .values()
            .flat_map(|m| m.keys().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut panel = ReturnPanel {
            tickers: Vec::new(),
            dates: dates.clone(),
            intraday: Vec::new(),
            overnight: Vec::new(),
            daily: Vec::new(),
            long_gaps: Vec::new(),
            normalization: None,
        };
        for (ticker, m) in rows {
            let series = |k: usize| -> Vec<f64> {
                dates
                    .iter()
                    .map(|d| m.get(d).map_or(f64::NAN, |v| v[k]))
                    .collect()
            };
            panel.intraday.push(series(0));
            panel.overnight.push(series(1));
            panel.daily.push(series(2));
            panel.tickers.push(ticker);
        }
        if panel.tickers.is_empty() {
            return Err(Error::InvalidInput(format!("{}: no rows", path.display())));
        }
        Ok(panel)
    }

    /// Weekday (Monday = 0) of every calendar date.
    pub fn weekdays(&self) -> Vec<u32> {
        self.dates
            .iter()
            .map(|d| d.weekday().num_days_from_monday())
            .collect()
    }
}

/// Intra-day `ln(C_t/O_t)`, overnight `ln(O_t/C_{t-1})` and daily
/// returns (their sum). The overnight return is missing on a stock's first
/// date and whenever the stock has no record on the previous calendar date.
pub fn compute_returns(panel: &OhlcPanel) -> ReturnPanel {
    let n = panel.calendar.len();
    let mut out = ReturnPanel {
        tickers: panel.tickers.clone(),
        dates: panel.calendar.clone(),
        intraday: Vec::new(),
        overnight: Vec::new(),
        daily: Vec::new(),
        long_gaps: Vec::new(),
        normalization: None,
    };
    for (ticker, row) in panel.tickers.iter().zip(&panel.records) {
        let mut rd = vec![f64::NAN; n];
        let mut rn = vec![f64::NAN; n];
        for t in 0..n {
            let Some(rec) = row[t] else { continue };
            rd[t] = (rec.close / rec.open).ln();
            if t > 0 {
                if let Some(prev) = row[t - 1] {
                    rn[t] = (rec.open / prev.close).ln();
                    let days = (rec.date - prev.date).num_days();
                    if days > LONG_GAP_DAYS {
                        out.long_gaps.push(LongGap {
                            ticker: ticker.clone(),
                            date: rec.date,
                            days,
                        });
                    }
                }
            }
        }
        out.daily.push(rd.iter().zip(&rn).map(|(d, n)| d + n).collect());
        out.intraday.push(rd);
        out.overnight.push(rn);
    }
    out
}

/// Business-day calendar (Monday to Friday) of `n` dates starting at `start`
/// or the next weekday after it.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if d.weekday().num_days_from_monday() < 5 {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}
