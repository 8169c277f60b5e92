//! Bivariate intra-day/overnight ARCH volatility model.
//!
//! The intra-day (open-to-close) and overnight (close-to-open) variances
//! are each driven by past squared, cross and signed returns of both
//! types. The crate covers the whole workflow: building normalized return
//! panels from OHLC prices, filtering and simulating, Student-t maximum
//! likelihood calibration, stability and positivity checks, and
//! in-sample/out-of-sample comparison against a daily ARCH.

pub mod calibrate;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod filter;
pub mod kernel;
pub mod layout;
pub mod model;
pub mod simulate;
pub mod special;
pub mod validity;

pub use error::{Error, Result};
pub use filter::{
    build_quadratic_matrix, filter_daily_arch, filter_target, filter_volatility, NegativeReport,
    QuadraticForm, VolatilityPaths,
};
pub use kernel::KernelSpec;
pub use layout::{Role, Target};
pub use model::{BivariateModel, DailyArchParams, EquationDocument, EquationParams, TargetParams};

/// Version of this library.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
