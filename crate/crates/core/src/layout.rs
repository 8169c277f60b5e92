//! Index conventions of the volatility equations.
//!
//! Every equation is written as
//! `σ²_t = s² + Σ_slots Σ_{j=1}^{len} c(j) · z(t − j + offset)`
//! where `z` is one of the per-date regressor series below. The intra-day
//! equation sees the same-day overnight return (offset 1 on overnight
//! sources); the overnight equation only sees strictly past dates.
//!
//! Both bivariate equations use the regressor vector
//! `R_t = (rD_{t-1}, …, rD_{t-q}, rN_t, …, rN_{t-q})`, so the intra-day
//! `K_NN`/`L_N` kernels span lags `1..=q+1` and the overnight `K_DN`
//! kernel spans `1..=q-1`. No equation reaches further back than `t − q`,
//! which makes the first `q` dates of any series the warm-up.

use serde::{Deserialize, Serialize};

/// Which return type an equation predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    /// Intra-day (open-to-close) variance σD².
    Day,
    /// Overnight (close-to-open) variance σN².
    Night,
    /// Daily (close-to-close) variance of the standard ARCH baseline.
    Daily,
}

impl Target {
    pub fn label(self) -> &'static str {
        match self {
            Target::Day => "D",
            Target::Night => "N",
            Target::Daily => "daily",
        }
    }

    pub fn roles(self) -> &'static [Role] {
        match self {
            Target::Day | Target::Night => &BIVARIATE_ROLES,
            Target::Daily => &DAILY_ROLES,
        }
    }
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "day" | "d" | "intraday" => Ok(Target::Day),
            "night" | "n" | "overnight" => Ok(Target::Night),
            "daily" | "c" => Ok(Target::Daily),
            other => Err(format!("unknown target '{other}' (expected day|night|daily)")),
        }
    }
}

/// Kernel role within an equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    KDD,
    KNN,
    KND,
    KDN,
    LD,
    LN,
    /// Quadratic kernel of the daily ARCH.
    K,
    /// Leverage kernel of the daily ARCH.
    L,
}

pub(crate) const BIVARIATE_ROLES: [Role; 6] =
    [Role::KDD, Role::KNN, Role::KND, Role::KDN, Role::LD, Role::LN];
pub(crate) const DAILY_ROLES: [Role; 2] = [Role::K, Role::L];

impl Role {
    pub fn is_quadratic(self) -> bool {
        matches!(self, Role::KDD | Role::KNN | Role::KND | Role::KDN | Role::K)
    }

    /// Diagonal quadratic kernels are non-negative by assumption.
    pub fn is_diagonal(self) -> bool {
        matches!(self, Role::KDD | Role::KNN | Role::K)
    }

    pub fn label(self) -> &'static str {
        match self {
            Role::KDD => "DD",
            Role::KNN => "NN",
            Role::KND => "ND",
            Role::KDN => "DN",
            Role::LD => "LD",
            Role::LN => "LN",
            Role::K => "K",
            Role::L => "L",
        }
    }
}

/// Per-date regressor series.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Source {
    /// rD_s
    D,
    /// rN_s
    N,
    /// rD_s²
    DD,
    /// rN_s²
    NN,
    /// 2 rD_s rN_s
    ND,
    /// 2 rD_{s-1} rN_s (zero at s = 0)
    DNLag,
    /// r_s = rD_s + rN_s
    R,
    /// r_s²
    RR,
}

pub(crate) const N_SOURCES: usize = 8;

impl Source {
    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Slot {
    pub role: Role,
    pub source: Source,
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    /// Range of series indices read at date `t`; element `i` of the range
    /// carries lag `len - i`.
    #[inline]
    pub(crate) fn window(&self, t: usize) -> std::ops::Range<usize> {
        let end = t + self.offset;
        end - self.len..end
    }
}

/// Slot layout of an equation with maximum lag `q`, in `target.roles()` order.
pub(crate) fn slots(target: Target, q: usize) -> Vec<Slot> {
    let slot = |role, source, offset, len| Slot {
        role,
        source,
        offset,
        len,
    };
    match target {
        Target::Day => vec![
            slot(Role::KDD, Source::DD, 0, q),
            slot(Role::KNN, Source::NN, 1, q + 1),
            slot(Role::KND, Source::ND, 0, q),
            slot(Role::KDN, Source::DNLag, 1, q),
            slot(Role::LD, Source::D, 0, q),
            slot(Role::LN, Source::N, 1, q + 1),
        ],
        Target::Night => vec![
            slot(Role::KDD, Source::DD, 0, q),
            slot(Role::KNN, Source::NN, 0, q),
            slot(Role::KND, Source::ND, 0, q),
            slot(Role::KDN, Source::DNLag, 0, q.saturating_sub(1)),
            slot(Role::LD, Source::D, 0, q),
            slot(Role::LN, Source::N, 0, q),
        ],
        Target::Daily => vec![
            slot(Role::K, Source::RR, 0, q),
            slot(Role::L, Source::R, 0, q),
        ],
    }
}

/// Number of lags each role spans in the given equation.
pub fn role_span(target: Target, role: Role, q: usize) -> Option<usize> {
    slots(target, q)
        .into_iter()
        .find(|s| s.role == role)
        .map(|s| s.len)
}

/// Regressor series of one stock. Missing returns (NaN) contribute zero.
#[derive(Debug, Clone, Default)]
pub(crate) struct Regressors {
    series: [Vec<f64>; N_SOURCES],
    last_intraday: Option<f64>,
}

impl Regressors {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Regressors {
            series: std::array::from_fn(|_| Vec::with_capacity(n)),
            last_intraday: None,
        }
    }

    pub(crate) fn from_returns(rd: &[f64], rn: &[f64]) -> Self {
        let mut reg = Regressors::with_capacity(rd.len());
        for (&d, &n) in rd.iter().zip(rn) {
            reg.push_overnight(n);
            reg.push_intraday(d);
        }
        reg
    }

    /// Record the overnight return of a new date. Must precede
    /// [`push_intraday`](Self::push_intraday) for the same date.
    pub(crate) fn push_overnight(&mut self, rn: f64) {
        let n = if rn.is_finite() { rn } else { 0.0 };
        let prev_d = self.last_intraday.unwrap_or(0.0);
        self.series[Source::N.index()].push(n);
        self.series[Source::NN.index()].push(n * n);
        self.series[Source::DNLag.index()].push(2.0 * prev_d * n);
    }

    pub(crate) fn push_intraday(&mut self, rd: f64) {
        let d = if rd.is_finite() { rd } else { 0.0 };
        let n = *self.series[Source::N.index()]
            .last()
            .expect("overnight return must be pushed first");
        self.series[Source::D.index()].push(d);
        self.series[Source::DD.index()].push(d * d);
        self.series[Source::ND.index()].push(2.0 * d * n);
        self.series[Source::R.index()].push(d + n);
        self.series[Source::RR.index()].push((d + n) * (d + n));
        self.last_intraday = Some(d);
    }

    #[inline]
    pub(crate) fn get(&self, source: Source) -> &[f64] {
        &self.series[source.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warm_up_is_q_dates() {
        for q in 1..6 {
            for target in [Target::Day, Target::Night, Target::Daily] {
                for s in slots(target, q) {
                    let w = s.window(q);
                    assert!(w.end >= w.start, "{target:?} {:?}", s.role);
                    // lagged product needs the previous intra-day return
                    if s.source == Source::DNLag && s.len > 0 {
                        assert!(w.start >= 1);
                    }
                }
            }
        }
    }

    #[test]
    fn day_equation_sees_same_day_overnight() {
        let s = slots(Target::Day, 3);
        let nn = s.iter().find(|s| s.role == Role::KNN).unwrap();
        // lag 1 of K_NN reads index t (rN_t)
        assert_eq!(nn.window(10).end - 1, 10);
        let night = slots(Target::Night, 3);
        let nn = night.iter().find(|s| s.role == Role::KNN).unwrap();
        assert_eq!(nn.window(10).end - 1, 9);
    }

    #[test]
    fn regressor_products() {
        let reg = Regressors::from_returns(&[1.0, 2.0], &[f64::NAN, 3.0]);
        assert_eq!(reg.get(Source::N), &[0.0, 3.0]);
        assert_eq!(reg.get(Source::DNLag), &[0.0, 6.0]);
        assert_eq!(reg.get(Source::ND), &[0.0, 12.0]);
        assert_eq!(reg.get(Source::RR), &[1.0, 25.0]);
    }
}
