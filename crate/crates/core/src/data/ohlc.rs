//! OHLC price ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OhlcRecord {
    pub date: NaiveDate,
    pub open: f64,
    pub close: f64,
    pub high: Option<f64>,
    pub low: Option<f64>,
}

/// Layout of the input files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IngestFormat {
    /// Decide per file from the header: a `ticker` column means long format.
    #[default]
    Auto,
    /// One file per stock, `date,open,high,low,close`; the ticker is the
    /// file stem.
    PerStock,
    /// One file with a leading `ticker` column.
    Long,
}

/// Prices of several stocks aligned on the union of their trading dates.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcPanel {
    pub tickers: Vec<String>,
    pub calendar: Vec<NaiveDate>,
    /// `records[stock][date]`, `None` where the stock did not trade.
    pub records: Vec<Vec<Option<OhlcRecord>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub ticker: String,
    /// Calendar dates on which the stock has no record.
    pub missing: Vec<NaiveDate>,
}

impl OhlcPanel {
    /// Build an aligned panel from per-ticker records in any order.
    pub fn from_records(by_ticker: BTreeMap<String, Vec<OhlcRecord>>) -> Result<Self> {
        let mut calendar = BTreeSet::new();
        let mut sorted = BTreeMap::new();
        for (ticker, mut recs) in by_ticker {
            recs.sort_by_key(|r| r.date);
            for pair in recs.windows(2) {
                if pair[0].date == pair[1].date {
                    return Err(Error::DuplicateDate {
                        ticker,
                        date: pair[0].date.to_string(),
                    });
                }
            }
            calendar.extend(recs.iter().map(|r| r.date));
            sorted.insert(ticker, recs);
        }
        let calendar: Vec<NaiveDate> = calendar.into_iter().collect();
        let index: BTreeMap<NaiveDate, usize> =
            calendar.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let mut tickers = Vec::new();
        let mut records = Vec::new();
        for (ticker, recs) in sorted {
            let mut row = vec![None; calendar.len()];
            for r in recs {
                row[index[&r.date]] = Some(r);
            }
            tickers.push(ticker);
            records.push(row);
        }
        Ok(OhlcPanel {
            tickers,
            calendar,
            records,
        })
    }

    pub fn gaps(&self) -> Vec<GapReport> {
        self.tickers
            .iter()
            .zip(&self.records)
            .map(|(ticker, row)| GapReport {
                ticker: ticker.clone(),
                missing: self
                    .calendar
                    .iter()
                    .zip(row)
                    .filter(|(_, r)| r.is_none())
                    .map(|(d, _)| *d)
                    .collect(),
            })
            .collect()
    }
}

fn parse_price(field: Option<&str>) -> std::result::Result<Option<f64>, String> {
    match field.map(str::trim) {
        None | Some("") => Ok(None),
        Some(s) => s
            .parse::<f64>()
            .map(Some)
            .map_err(|e| format!("bad number '{s}': {e}")),
    }
}

/// Read one CSV file into per-ticker records.
pub fn read_ohlc_file(
    path: &Path,
    format: IngestFormat,
    out: &mut BTreeMap<String, Vec<OhlcRecord>>,
) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let malformed = |line: u64, message: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message,
    };
    let long = match format {
        IngestFormat::Long => true,
        IngestFormat::PerStock => false,
        IngestFormat::Auto => col("ticker").is_some(),
    };
    let ticker_col = if long {
        Some(col("ticker").ok_or_else(|| malformed(1, "missing 'ticker' column".into()))?)
    } else {
        None
    };
    let (date_col, open_col, close_col) = match (col("date"), col("open"), col("close")) {
        (Some(d), Some(o), Some(c)) => (d, o, c),
        _ => {
            return Err(malformed(
                1,
                "header must contain date, open and close columns".into(),
            ))
        }
    };
    let (high_col, low_col) = (col("high"), col("low"));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let get = |c: usize| row.get(c).unwrap_or("");
        let ticker = match ticker_col {
            Some(c) if get(c).is_empty() => return Err(malformed(line, "empty ticker".into())),
            Some(c) => get(c).to_string(),
            None => stem.clone(),
        };
        let date = NaiveDate::parse_from_str(get(date_col), "%Y-%m-%d")
            .map_err(|e| malformed(line, format!("bad date '{}': {e}", get(date_col))))?;
        let price = |c: Option<usize>| parse_price(c.map(get)).map_err(|m| malformed(line, m));
        let open = price(Some(open_col))?.ok_or_else(|| malformed(line, "missing open".into()))?;
        let close =
            price(Some(close_col))?.ok_or_else(|| malformed(line, "missing close".into()))?;
        let high = price(high_col)?;
        let low = price(low_col)?;
        let non_positive = |p: f64| !(p > 0.0);
        if non_positive(open)
            || non_positive(close)
            || high.is_some_and(non_positive)
            || low.is_some_and(non_positive)
        {
            return Err(Error::NonPositivePrice {
                ticker,
                date: date.to_string(),
            });
        }
        if let Some(h) = high {
            if h < open.max(close) {
                return Err(malformed(line, format!("high {h} below open/close")));
            }
        }
        if let Some(l) = low {
            if l > open.min(close) {
                return Err(malformed(line, format!("low {l} above open/close")));
            }
        }
        out.entry(ticker).or_default().push(OhlcRecord {
            date,
            open,
            close,
            high,
            low,
        });
    }
    Ok(())
}

/// Read and align a set of CSV files. The result does not depend on the
/// order of `paths`.
pub fn ingest_ohlc(paths: &[PathBuf], format: IngestFormat) -> Result<OhlcPanel> {
    if paths.is_empty() {
        return Err(Error::InvalidInput("no input files".into()));
    }
    let mut by_ticker = BTreeMap::new();
    let mut sorted = paths.to_vec();
    sorted.sort();
    for path in &sorted {
        read_ohlc_file(path, format, &mut by_ticker)?;
    }
    OhlcPanel::from_records(by_ticker)
}
