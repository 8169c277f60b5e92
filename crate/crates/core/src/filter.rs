//! Filtering of return histories into conditional variances, and the
//! quadratic-form representation of an equation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{slots, Regressors, Role, Slot, Target};
use crate::model::{BivariateModel, DailyArchParams, EquationParams, TargetParams};

/// An equation with its kernel tables laid out against the regressor
/// windows (coefficients stored in window order, i.e. reversed lags).
#[derive(Debug, Clone)]
pub(crate) struct Compiled {
    pub s2: f64,
    pub q: usize,
    pub terms: Vec<(Slot, Vec<f64>)>,
}

impl Compiled {
    pub(crate) fn new(params: &TargetParams) -> Result<Self> {
        let target = params.target();
        let q = params.q();
        let mut terms = Vec::new();
        for slot in slots(target, q) {
            let kernel = params.kernel(slot.role).expect("role belongs to target");
            let mut table = kernel.table(slot.len)?;
            table.reverse();
            terms.push((slot, table));
        }
        Ok(Compiled {
            s2: params.s2(),
            q,
            terms,
        })
    }

    pub(crate) fn bivariate(params: &EquationParams, target: Target) -> Result<Self> {
        Compiled::new(&TargetParams::new_bivariate(target, params.clone()))
    }

    /// Variance at date `t`; needs `t ≥ q` and, for the intra-day equation,
    /// the overnight return of date `t` already pushed.
    #[inline]
    pub(crate) fn eval(&self, reg: &Regressors, t: usize) -> f64 {
        let mut v = self.s2;
        for (slot, coef) in &self.terms {
            v += dot(&reg.get(slot.source)[slot.window(t)], coef);
        }
        v
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [0.0; 4];
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..n {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Count and most negative value of non-positive variances.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NegativeReport {
    pub count: usize,
    pub worst: f64,
}

impl NegativeReport {
    pub fn scan(values: &[f64]) -> Self {
        let mut report = NegativeReport::default();
        for &v in values {
            report.record(v);
        }
        report
    }

    pub(crate) fn record(&mut self, v: f64) {
        if !(v > 0.0) {
            self.count += 1;
            if v.is_nan() || v < self.worst {
                self.worst = v;
            }
        }
    }

    pub fn merge(&mut self, other: &NegativeReport) {
        self.count += other.count;
        if other.worst < self.worst || other.worst.is_nan() {
            self.worst = other.worst;
        }
    }

    pub fn is_clean(&self) -> bool {
        self.count == 0
    }

    pub fn into_result(self) -> Result<()> {
        if self.count == 0 {
            Ok(())
        } else {
            Err(Error::NegativeVariance {
                count: self.count,
                worst: self.worst,
            })
        }
    }
}

/// Filtered intra-day and overnight variances for dates `q..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityPaths {
    pub day: Vec<f64>,
    pub night: Vec<f64>,
    pub negatives: NegativeReport,
}

fn check_history(q: usize, lens: &[usize]) -> Result<usize> {
    let n = lens[0];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::InvalidInput(format!(
            "mismatched series lengths {lens:?}"
        )));
    }
    if n <= q {
        return Err(Error::InvalidInput(format!(
            "history of {n} dates is too short for maximum lag {q} (needs at least {})",
            q + 1
        )));
    }
    Ok(n)
}

/// Conditional variances of one target for dates `q..T`. Missing returns
/// (NaN) enter the regressors as zero. Negative values are returned as is.
pub fn filter_target(params: &TargetParams, rd: &[f64], rn: &[f64]) -> Result<Vec<f64>> {
    let n = check_history(params.q(), &[rd.len(), rn.len()])?;
    let compiled = Compiled::new(params)?;
    let reg = match params.target() {
        Target::Daily => {
            let r: Vec<f64> = rd.iter().zip(rn).map(|(d, n)| d + n).collect();
            Regressors::from_returns(&r, &vec![0.0; n])
        }
        _ => Regressors::from_returns(rd, rn),
    };
    Ok((params.q()..n).map(|t| compiled.eval(&reg, t)).collect())
}

/// Intra-day and overnight variances of a bivariate model.
pub fn filter_volatility(model: &BivariateModel, rd: &[f64], rn: &[f64]) -> Result<VolatilityPaths> {
    let n = check_history(model.q, &[rd.len(), rn.len()])?;
    let day = Compiled::bivariate(&model.day, Target::Day)?;
    let night = Compiled::bivariate(&model.night, Target::Night)?;
    let reg = Regressors::from_returns(rd, rn);
    let mut paths = VolatilityPaths {
        day: Vec::with_capacity(n - model.q),
        night: Vec::with_capacity(n - model.q),
        negatives: NegativeReport::default(),
    };
    for t in model.q..n {
        let d = day.eval(&reg, t);
        let m = night.eval(&reg, t);
        paths.negatives.record(d);
        paths.negatives.record(m);
        paths.day.push(d);
        paths.night.push(m);
    }
    Ok(paths)
}

/// Variances of the daily ARCH for dates `q..T` of the daily return series.
pub fn filter_daily_arch(params: &DailyArchParams, r: &[f64]) -> Result<Vec<f64>> {
    let n = check_history(params.q, &[r.len()])?;
    let compiled = Compiled::new(&TargetParams::Daily(params.clone()))?;
    let reg = Regressors::from_returns(r, &vec![0.0; n]);
    Ok((params.q..n).map(|t| compiled.eval(&reg, t)).collect())
}

/// `σ² = s² + xᵀ K x + Lᵀ x` over the regressor vector
/// `x = (rD_{t-1}, …, rD_{t-q}, rN_t, …, rN_{t-q})`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub q: usize,
    pub s2: f64,
    pub k: DMatrix<f64>,
    pub l: DVector<f64>,
}

/// Position of `rD_{t-lag}` (lag ≥ 1) in the regressor vector.
fn d_index(lag: usize) -> usize {
    lag - 1
}

/// Position of `rN_{t-lag}` (lag ≥ 0).
fn n_index(q: usize, lag: usize) -> usize {
    q + lag
}

pub fn build_quadratic_matrix(params: &EquationParams, target: Target) -> Result<QuadraticForm> {
    if target == Target::Daily {
        return Err(Error::InvalidInput(
            "the quadratic form is defined for the bivariate equations".into(),
        ));
    }
    params.validate(target)?;
    let q = params.q;
    let dim = 2 * q + 1;
    let mut k = DMatrix::zeros(dim, dim);
    let mut l = DVector::zeros(dim);
    // Overnight sources of the intra-day equation are shifted by one date:
    // kernel lag j multiplies rN_{t-j+1}.
    let shift = usize::from(target == Target::Day);
    for slot in slots(target, q) {
        let kernel = params.kernel(slot.role).expect("bivariate role");
        let table = kernel.table(slot.len)?;
        for (j, &c) in (1..=slot.len).zip(&table) {
            match slot.role {
                Role::KDD => k[(d_index(j), d_index(j))] += c,
                Role::LD => l[d_index(j)] += c,
                Role::KNN => {
                    let i = n_index(q, j - shift);
                    k[(i, i)] += c;
                }
                Role::LN => l[n_index(q, j - shift)] += c,
                Role::KND => {
                    let (a, b) = (d_index(j), n_index(q, j));
                    k[(a, b)] += c;
                    k[(b, a)] += c;
                }
                Role::KDN => {
                    // 2 K_DN(j) rD_{t-m-1} rN_{t-m} with m = j - shift
                    let m = j - shift;
                    let (a, b) = (d_index(m + 1), n_index(q, m));
                    k[(a, b)] += c;
                    k[(b, a)] += c;
                }
                Role::K | Role::L => unreachable!(),
            }
        }
    }
    Ok(QuadraticForm {
        q,
        s2: params.s2,
        k,
        l,
    })
}

impl QuadraticForm {
    /// Regressor vector at date `t` (needs `t ≥ q`); missing returns are zero.
    pub fn regressor_vector(&self, rd: &[f64], rn: &[f64], t: usize) -> DVector<f64> {
        let q = self.q;
        let z = |x: f64| if x.is_finite() { x } else { 0.0 };
        DVector::from_fn(2 * q + 1, |i, _| {
            if i < q {
                z(rd[t - 1 - i])
            } else {
                z(rn[t - (i - q)])
            }
        })
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> f64 {
        self.s2 + x.dot(&(&self.k * x)) + self.l.dot(x)
    }

    /// Bordered matrix `[[s², Lᵀ/2], [L/2, K]]`, positive semidefinite iff the
    /// form is non-negative for every regressor vector.
    pub fn bordered(&self) -> DMatrix<f64> {
        let n = self.k.nrows();
        let mut m = DMatrix::zeros(n + 1, n + 1);
        m[(0, 0)] = self.s2;
        for i in 0..n {
            m[(0, i + 1)] = 0.5 * self.l[i];
            m[(i + 1, 0)] = 0.5 * self.l[i];
        }
        m.view_mut((1, 1), (n, n)).copy_from(&self.k);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::model::reference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_kernels_give_constant_baseline() {
        let day = EquationParams::constant(3, 0.5, 5.0);
        let night = EquationParams::constant(3, 0.3, 5.0);
        let model = BivariateModel::new(day, night, 0.0, [0.5, 0.5]).unwrap();
        let rd = [0.3, -1.0, 2.0, 0.1, 0.7, -0.2];
        let rn = [1.0, 0.2, -0.4, 0.5, 0.1, 0.9];
        let p = filter_volatility(&model, &rd, &rn).unwrap();
        assert_eq!(p.day, vec![0.5; 3]);
        assert_eq!(p.night, vec![0.3; 3]);
    }

    #[test]
    fn single_day_coefficient() {
        let mut day = EquationParams::constant(1, 1.0, 5.0);
        day.k_dd = KernelSpec::free(vec![0.1]);
        day.k_nn = KernelSpec::free(vec![0.0, 0.0]);
        let v = filter_target(&TargetParams::Day(day), &[2.0, 0.5], &[0.0, 0.0]).unwrap();
        assert!((v[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn daily_one_term_sums() {
        let mut p = DailyArchParams::constant(1, 1.0, 5.0);
        p.k = KernelSpec::free(vec![0.2]);
        p.l = KernelSpec::free(vec![-0.05]);
        let v = filter_daily_arch(&p, &[-1.0, 0.3]).unwrap();
        assert!((v[0] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn short_history_rejected() {
        let p = TargetParams::Day(EquationParams::constant(3, 1.0, 5.0));
        assert!(filter_target(&p, &[0.0; 3], &[0.0; 3]).is_err());
        assert!(filter_target(&p, &[0.0; 4], &[0.0; 3]).is_err());
    }

    #[test]
    fn spec_matrix_for_unit_lag() {
        let (a, b0, b1, c, d) = (0.3, 0.2, 0.1, 0.05, 0.04);
        let mut p = EquationParams::constant(1, 0.0, 5.0);
        p.k_dd = KernelSpec::free(vec![a]);
        p.k_nn = KernelSpec::free(vec![b0, b1]);
        p.k_nd = KernelSpec::free(vec![c]);
        p.k_dn = KernelSpec::free(vec![d]);
        let form = build_quadratic_matrix(&p, Target::Day).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[a, d, c, d, b0, 0.0, c, 0.0, b1]);
        assert_eq!(form.k, expected);
    }

    #[test]
    fn diagonal_without_cross_kernels() {
        let mut p = reference::night();
        p.q = 6;
        p.k_nd = KernelSpec::zero();
        p.k_dn = KernelSpec::zero();
        let form = build_quadratic_matrix(&p, Target::Night).unwrap();
        assert!(form.k.is_square());
        for i in 0..form.k.nrows() {
            for j in 0..form.k.ncols() {
                if i != j {
                    assert_eq!(form.k[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn quadratic_form_matches_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for target in [Target::Day, Target::Night] {
            let mut p = match target {
                Target::Day => reference::day(),
                _ => reference::night(),
            };
            p.q = 9;
            let rd: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rn: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
            let form = build_quadratic_matrix(&p, target).unwrap();
            let v = filter_target(&TargetParams::new_bivariate(target, p.clone()), &rd, &rn).unwrap();
            for t in 9..30 {
                let x = form.regressor_vector(&rd, &rn, t);
                let w = form.evaluate(&x);
                assert!((w - v[t - 9]).abs() <= 1e-12 * w.abs(), "{target:?} t={t}");
            }
        }
    }
}
