//! Panel log-likelihood with exact gradient and Hessian in the natural
//! parameters.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::likelihood::{point_terms, point_value, NuTerms};
use super::nu::NU_MAX;
use super::space::{Shape, Space};
use crate::data::ReturnPanel;
use crate::layout::{Regressors, Source, Target};

/// Regressor series and target returns of every stock.
pub(crate) struct PanelData {
    pub stocks: Vec<StockData>,
}

pub(crate) struct StockData {
    pub reg: Regressors,
    /// Return predicted by the equation (NaN when missing).
    pub y: Vec<f64>,
}

impl PanelData {
    pub fn new(panel: &ReturnPanel, target: Target) -> Self {
        let stocks = (0..panel.n_stocks())
            .map(|s| {
                let (rd, rn) = (&panel.intraday[s], &panel.overnight[s]);
                match target {
                    Target::Daily => StockData {
                        reg: Regressors::from_returns(&panel.daily[s], &vec![0.0; rd.len()]),
                        y: panel.daily[s].clone(),
                    },
                    Target::Day => StockData {
                        reg: Regressors::from_returns(rd, rn),
                        y: rd.clone(),
                    },
                    Target::Night => StockData {
                        reg: Regressors::from_returns(rd, rn),
                        y: rn.clone(),
                    },
                }
            })
            .collect();
        PanelData { stocks }
    }

    /// Points entering the likelihood at maximum lag `q`.
    pub fn n_points(&self, q: usize) -> usize {
        self.stocks
            .iter()
            .map(|s| s.y.iter().skip(q).filter(|y| y.is_finite()).count())
            .sum()
    }

    /// Pooled `⟨x⟩` of a regressor series over the likelihood points.
    pub fn pooled_mean(&self, source: Source, q: usize) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for st in &self.stocks {
            for (t, y) in st.y.iter().enumerate().skip(q) {
                if y.is_finite() {
                    s += st.reg.get(source)[t];
                    n += 1;
                }
            }
        }
        s / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Sums over all points; derivatives are in the natural parameters.
#[derive(Debug, Clone)]
pub(crate) struct Evaluation {
    pub value: f64,
    pub n_points: usize,
    pub negatives: usize,
    pub worst: f64,
    pub grad: Option<DVector<f64>>,
    pub hess: Option<DMatrix<f64>>,
}

impl Evaluation {
    pub fn valid(&self) -> bool {
        self.negatives == 0 && self.value.is_finite()
    }
}

/// `C = β C + Z B` where `Z` is the `m × k` sliding-window matrix
/// `Z[i][j] = series[base + i + j]`, `B` is `k × n` row-major and `C` is
/// `m × n` with row stride `ldc`.
fn window_gemm(
    series: &[f64],
    base: usize,
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    c: &mut [f64],
    ldc: usize,
    beta: f64,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(base + m + k - 1 <= series.len());
    assert!(b.len() >= k * n);
    assert!(c.len() >= (m - 1) * ldc + n);
    // SAFETY: the bounds above keep every strided access inside the slices;
    // Z is read-only so its overlapping rows are harmless.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            series.as_ptr().add(base),
            1,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// `out = Zᵀ w` for the sliding-window matrix of [`window_gemm`].
fn window_tgemv(series: &[f64], base: usize, m: usize, k: usize, w: &[f64], out: &mut [f64]) {
    if m == 0 || k == 0 {
        out.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    assert!(base + m + k - 1 <= series.len());
    assert!(w.len() >= m && out.len() >= k);
    // SAFETY: Zᵀ[j][i] = series[base + i + j]; same bounds as window_gemm.
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            1,
            1.0,
            series.as_ptr().add(base),
            1,
            1,
            w.as_ptr(),
            1,
            1,
            0.0,
            out.as_mut_ptr(),
            1,
            1,
        );
    }
}

/// `C = Aᵀ B` for row-major `A` (m × p) and `B` (m × r); `C` is p × r.
pub(crate) fn at_b(a: &[f64], b: &[f64], m: usize, p: usize, r: usize) -> Vec<f64> {
    let mut c = vec![0.0; p * r];
    if m == 0 || p == 0 || r == 0 {
        return c;
    }
    // SAFETY: Aᵀ[j][i] = a[i p + j], B[i][l] = b[i r + l]; sizes asserted by construction.
    assert!(a.len() >= m * p && b.len() >= m * r);
    unsafe {
        matrixmultiply::dgemm(
            p,
            m,
            r,
            1.0,
            a.as_ptr(),
            1,
            p as isize,
            b.as_ptr(),
            r as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            r as isize,
            1,
        );
    }
    c
}

/// Jacobian of σ² in the kernel parameters over the likelihood dates of
/// one stock, row-major `(T − q) × n_kernel`. For free kernels this is the
/// matrix of lagged regressors.
pub(crate) fn jacobian(space: &Space, tables: &[super::space::SlotTables], stock: &StockData) -> Vec<f64> {
    let q = space.q;
    let pk = space.n_kernel();
    let m = stock.y.len().saturating_sub(q);
    let mut x = vec![0.0; m * pk];
    for (sp, tab) in space.slots.iter().zip(tables) {
        let len = sp.slot.len;
        if len == 0 {
            continue;
        }
        let series = stock.reg.get(sp.slot.source);
        let base = q + sp.slot.offset - len;
        match sp.shape {
            Shape::Free => {
                for i in 0..m {
                    let row = &mut x[i * pk + sp.start..i * pk + sp.start + len];
                    let win = &series[base + i..base + i + len];
                    for (tau, r) in row.iter_mut().enumerate() {
                        *r = win[len - 1 - tau];
                    }
                }
            }
            Shape::PowerLaw | Shape::Exponential => {
                let n = sp.n;
                let mut b = vec![0.0; len * n];
                for (a, col) in tab.basis.iter().enumerate() {
                    for i in 0..len {
                        b[i * n + a] = col[i];
                    }
                }
                window_gemm(series, base, m, len, &b, n, &mut x[sp.start..], pk, 0.0);
            }
        }
    }
    x
}

fn evaluate_stock(
    space: &Space,
    phi: &[f64],
    tables: &[super::space::SlotTables],
    stock: &StockData,
    nt: &NuTerms,
    order: Order,
) -> Evaluation {
    let q = space.q;
    let t_len = stock.y.len();
    let dim = space.dim();
    let pk = space.n_kernel();
    let empty = Evaluation {
        value: 0.0,
        n_points: 0,
        negatives: 0,
        worst: 0.0,
        grad: (order >= Order::Gradient).then(|| DVector::zeros(dim)),
        hess: (order >= Order::Hessian).then(|| DMatrix::zeros(dim, dim)),
    };
    if t_len <= q {
        return empty;
    }
    let m = t_len - q;
    let s2 = phi[space.s2_index()];
    let y = &stock.y[q..];

    let x = jacobian(space, tables, stock);

    let mut v = vec![s2; m];
    for (sp, _) in space.slots.iter().zip(tables) {
        match sp.shape {
            Shape::Free => {
                let c = &phi[sp.start..sp.start + sp.n];
                for i in 0..m {
                    v[i] += crate::filter::dot(&x[i * pk + sp.start..i * pk + sp.start + sp.n], c);
                }
            }
            Shape::PowerLaw | Shape::Exponential => {
                let g = phi[sp.start];
                for i in 0..m {
                    v[i] += g * x[i * pk + sp.start];
                }
            }
        }
    }

    let mut out = empty;
    let mut f_v = vec![0.0; m];
    let mut f_vv = vec![0.0; m];
    let mut f_vnu = vec![0.0; m];
    let (mut g_s2, mut g_nu, mut h_s2s2, mut h_s2nu, mut h_nunu) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..m {
        let r = y[i];
        if !r.is_finite() {
            continue;
        }
        out.n_points += 1;
        let vi = v[i];
        if !(vi > 0.0) {
            out.negatives += 1;
            if vi.is_nan() || vi < out.worst {
                out.worst = vi;
            }
            continue;
        }
        if order == Order::Value {
            out.value += point_value(vi, r, nt);
            continue;
        }
        let p = point_terms(vi, r, nt);
        out.value += p.f;
        f_v[i] = p.f_v;
        f_vv[i] = p.f_vv;
        f_vnu[i] = p.f_vnu;
        g_s2 += p.f_v;
        g_nu += p.f_nu;
        h_s2s2 += p.f_vv;
        h_s2nu += p.f_vnu;
        h_nunu += p.f_nunu;
    }
    if out.negatives > 0 {
        out.value = f64::NEG_INFINITY;
        return out;
    }
    let (s2i, nui) = (space.s2_index(), space.nu_index());
    if let Some(grad) = out.grad.as_mut() {
        let gk = at_b(&x, &f_v, m, pk, 1);
        for j in 0..pk {
            grad[j] = gk[j];
        }
        grad[s2i] = g_s2;
        grad[nui] = g_nu;
    }
    if let Some(hess) = out.hess.as_mut() {
        let mut wx = x.clone();
        for i in 0..m {
            let w = f_vv[i];
            wx[i * pk..(i + 1) * pk].iter_mut().for_each(|e| *e *= w);
        }
        let hkk = at_b(&x, &wx, m, pk, pk);
        let hks = at_b(&x, &f_vv, m, pk, 1);
        let hkn = at_b(&x, &f_vnu, m, pk, 1);
        for a in 0..pk {
            for b in 0..pk {
                hess[(a, b)] = hkk[a * pk + b];
            }
            hess[(a, s2i)] = hks[a];
            hess[(s2i, a)] = hks[a];
            hess[(a, nui)] = hkn[a];
            hess[(nui, a)] = hkn[a];
        }
        hess[(s2i, s2i)] = h_s2s2;
        hess[(s2i, nui)] = h_s2nu;
        hess[(nui, s2i)] = h_s2nu;
        hess[(nui, nui)] = h_nunu;
        // Σ_t f_v ∂²σ²: the windows weighted by f_v against ∂²c.
        let mut gwin = Vec::new();
        for (sp, tab) in space.slots.iter().zip(tables) {
            if sp.shape == Shape::Free || sp.slot.len == 0 {
                continue;
            }
            let len = sp.slot.len;
            gwin.resize(len, 0.0);
            let series = stock.reg.get(sp.slot.source);
            window_tgemv(series, q + sp.slot.offset - len, m, len, &f_v, &mut gwin);
            for (a, b, d2) in &tab.second {
                let s = crate::filter::dot(&gwin, d2);
                let (i, j) = (sp.start + a, sp.start + b);
                hess[(i, j)] += s;
                if i != j {
                    hess[(j, i)] += s;
                }
            }
        }
    }
    out
}

/// Log-likelihood sum (and derivatives up to `order`) over the panel.
/// Stocks are processed in parallel and reduced in stock order.
pub(crate) fn evaluate(space: &Space, phi: &[f64], data: &PanelData, order: Order) -> Evaluation {
    let nu = phi[space.nu_index()];
    let dim = space.dim();
    let mut total = Evaluation {
        value: 0.0,
        n_points: 0,
        negatives: 0,
        worst: 0.0,
        grad: (order >= Order::Gradient).then(|| DVector::zeros(dim)),
        hess: (order >= Order::Hessian).then(|| DMatrix::zeros(dim, dim)),
    };
    if !(nu > 2.0 && nu <= NU_MAX) || !phi.iter().all(|p| p.is_finite()) {
        total.value = f64::NEG_INFINITY;
        total.negatives = usize::MAX;
        return total;
    }
    let nt = NuTerms::new(nu);
    let tables: Vec<_> = space.slots.iter().map(|sp| space.tables(sp, phi)).collect();
    let parts: Vec<Evaluation> = data
        .stocks
        .par_iter()
        .map(|s| evaluate_stock(space, phi, &tables, s, &nt, order))
        .collect();
    for p in parts {
        total.value += p.value;
        total.n_points += p.n_points;
        total.negatives += p.negatives;
        if p.worst < total.worst {
            total.worst = p.worst;
        }
        if let (Some(g), Some(pg)) = (total.grad.as_mut(), p.grad.as_ref()) {
            *g += pg;
        }
        if let (Some(h), Some(ph)) = (total.hess.as_mut(), p.hess.as_ref()) {
            *h += ph;
        }
    }
    if total.negatives > 0 {
        total.value = f64::NEG_INFINITY;
    }
    total
}
