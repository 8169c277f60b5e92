//! Price ingestion, return computation, normalization and descriptive
//! statistics.

mod normalize;
mod ohlc;
mod returns;
mod stats;

pub use normalize::{denormalize, normalize_panel, NormalizationRecord};
pub use ohlc::{ingest_ohlc, read_ohlc_file, GapReport, IngestFormat, OhlcPanel, OhlcRecord};
pub use returns::{business_days, compute_returns, LongGap, ReturnPanel, LONG_GAP_DAYS};
pub use stats::{
    cross_correlations, moments, moments_summary, weekly_seasonality, CrossCorrelations, Moments,
    MomentsSummary, WeeklyProfile,
};
