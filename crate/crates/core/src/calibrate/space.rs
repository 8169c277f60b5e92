//! Natural parameter vectors of an equation and the kernel tables they
//! generate.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::KernelSpec;
use crate::layout::{slots, Role, Slot, Target};
use crate::model::{DailyArchParams, EquationParams, TargetParams};

/// Map between an optimizer coordinate `u` and a natural parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `x = exp(u)`
    Log,
    /// `ν = 2 + exp(u)`
    NuShift,
}

impl Transform {
    pub fn to_natural(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::NuShift => 2.0 + u.exp(),
        }
    }

    pub fn from_natural(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::NuShift => (x - 2.0).ln(),
        }
    }

    /// `dx/du`
    pub fn d1(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log | Transform::NuShift => u.exp(),
        }
    }

    /// `d²x/du²`
    pub fn d2(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log | Transform::NuShift => u.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Shape {
    Free,
    PowerLaw,
    Exponential,
}

#[derive(Debug, Clone)]
pub(crate) struct SlotParams {
    pub slot: Slot,
    pub shape: Shape,
    /// Index of the slot's first parameter.
    pub start: usize,
    pub n: usize,
}

/// Kernel tables of one slot in window order (element `i` has lag
/// `len − i`), with first and second derivatives for parametric shapes.
#[derive(Debug, Clone)]
pub(crate) struct SlotTables {
    #[cfg_attr(not(test), allow(dead_code))]
    pub coef: Vec<f64>,
    /// `basis[a]` = ∂c/∂(local parameter a); empty for free kernels.
    pub basis: Vec<Vec<f64>>,
    /// `(a, b, ∂²c/∂a∂b)` for `a ≤ b`, non-zero pairs only.
    pub second: Vec<(usize, usize, Vec<f64>)>,
}

/// Ordered natural parameters of one target: kernel parameters slot by
/// slot, then `s2`, then `nu`.
#[derive(Debug, Clone)]
pub(crate) struct Space {
    pub target: Target,
    pub q: usize,
    pub slots: Vec<SlotParams>,
    pub names: Vec<String>,
    pub transforms: Vec<Transform>,
}

impl Space {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn n_kernel(&self) -> usize {
        self.names.len() - 2
    }

    pub fn s2_index(&self) -> usize {
        self.names.len() - 2
    }

    pub fn nu_index(&self) -> usize {
        self.names.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn slot_of(&self, role: Role) -> Option<&SlotParams> {
        self.slots.iter().find(|s| s.slot.role == role)
    }

    /// Layout and natural values of `params`. Kernel shapes are taken from
    /// the parameters themselves.
    pub fn from_params(params: &TargetParams) -> Result<(Space, Vec<f64>)> {
        params.validate()?;
        let target = params.target();
        let q = params.q();
        let mut names = Vec::new();
        let mut transforms = Vec::new();
        let mut values = Vec::new();
        let mut out = Vec::new();
        for slot in slots(target, q) {
            let role = slot.role;
            let label = role.label();
            let start = names.len();
            let kernel = params.kernel(role).expect("role belongs to target");
            let g_transform = if role.is_diagonal() {
                Transform::Log
            } else {
                Transform::Identity
            };
            let shape = match kernel {
                KernelSpec::Free { coefficients } => {
                    for tau in 1..=slot.len {
                        names.push(format!("{label}[{tau}]"));
                        transforms.push(Transform::Identity);
                        values.push(coefficients[tau - 1]);
                    }
                    Shape::Free
                }
                KernelSpec::PowerLawExp { g, alpha, omega } => {
                    names.extend([
                        format!("g_{label}"),
                        format!("alpha_{label}"),
                        format!("omega_{label}"),
                    ]);
                    transforms.extend([g_transform, Transform::Log, Transform::Log]);
                    values.extend([*g, *alpha, *omega]);
                    Shape::PowerLaw
                }
                KernelSpec::Exponential { g, omega } => {
                    names.extend([format!("g_{label}"), format!("omega_{label}")]);
                    transforms.extend([g_transform, Transform::Log]);
                    values.extend([*g, *omega]);
                    Shape::Exponential
                }
            };
            out.push(SlotParams {
                slot,
                shape,
                start,
                n: names.len() - start,
            });
        }
        names.extend(["s2".to_string(), "nu".to_string()]);
        transforms.extend([Transform::Identity, Transform::NuShift]);
        values.extend([params.s2(), params.nu()]);
        Ok((
            Space {
                target,
                q,
                slots: out,
                names,
                transforms,
            },
            values,
        ))
    }

    fn kernel_of(&self, sp: &SlotParams, phi: &[f64]) -> KernelSpec {
        let p = &phi[sp.start..sp.start + sp.n];
        match sp.shape {
            Shape::Free => {
                let mut c = p.to_vec();
                c.resize(sp.slot.len, 0.0);
                KernelSpec::free(c)
            }
            Shape::PowerLaw => KernelSpec::power_law_exp(p[0], p[1], p[2]),
            Shape::Exponential => KernelSpec::exponential(p[0], p[1]),
        }
    }

    pub fn to_params(&self, phi: &[f64]) -> TargetParams {
        let (s2, nu) = (phi[self.s2_index()], phi[self.nu_index()]);
        let kernel = |role: Role| {
            self.slot_of(role)
                .map(|sp| self.kernel_of(sp, phi))
                .unwrap_or_else(KernelSpec::zero)
        };
        match self.target {
            Target::Daily => TargetParams::Daily(DailyArchParams {
                q: self.q,
                s2,
                nu,
                k: kernel(Role::K),
                l: kernel(Role::L),
            }),
            target => TargetParams::new_bivariate(
                target,
                EquationParams {
                    q: self.q,
                    s2,
                    nu,
                    k_dd: kernel(Role::KDD),
                    k_nn: kernel(Role::KNN),
                    k_nd: kernel(Role::KND),
                    k_dn: kernel(Role::KDN),
                    l_d: kernel(Role::LD),
                    l_n: kernel(Role::LN),
                },
            ),
        }
    }

    pub fn tables(&self, sp: &SlotParams, phi: &[f64]) -> SlotTables {
        let len = sp.slot.len;
        let p = &phi[sp.start..sp.start + sp.n];
        // window position i ↔ lag len − i
        let lags = || (0..len).map(move |i| (len - i) as f64);
        match sp.shape {
            Shape::Free => {
                let mut coef: Vec<f64> = p.to_vec();
                coef.reverse();
                SlotTables {
                    coef,
                    basis: Vec::new(),
                    second: Vec::new(),
                }
            }
            Shape::PowerLaw => {
                let (g, alpha, omega) = (p[0], p[1], p[2]);
                let b: Vec<f64> = lags().map(|t| t.powf(-alpha) * (-omega * t).exp()).collect();
                let ln: Vec<f64> = lags().map(f64::ln).collect();
                let t: Vec<f64> = lags().collect();
                let coef: Vec<f64> = b.iter().map(|b| g * b).collect();
                let zip = |f: &dyn Fn(usize) -> f64| (0..len).map(f).collect::<Vec<f64>>();
                SlotTables {
                    basis: vec![
                        b.clone(),
                        zip(&|i| -ln[i] * coef[i]),
                        zip(&|i| -t[i] * coef[i]),
                    ],
                    second: vec![
                        (0, 1, zip(&|i| -ln[i] * b[i])),
                        (0, 2, zip(&|i| -t[i] * b[i])),
                        (1, 1, zip(&|i| ln[i] * ln[i] * coef[i])),
                        (1, 2, zip(&|i| ln[i] * t[i] * coef[i])),
                        (2, 2, zip(&|i| t[i] * t[i] * coef[i])),
                    ],
                    coef,
                }
            }
            Shape::Exponential => {
                let (g, omega) = (p[0], p[1]);
                let b: Vec<f64> = lags().map(|t| (-omega * t).exp()).collect();
                let t: Vec<f64> = lags().collect();
                let coef: Vec<f64> = b.iter().map(|b| g * b).collect();
                SlotTables {
                    basis: vec![b.clone(), (0..len).map(|i| -t[i] * coef[i]).collect()],
                    second: vec![
                        (0, 1, (0..len).map(|i| -t[i] * b[i]).collect()),
                        (1, 1, (0..len).map(|i| t[i] * t[i] * coef[i]).collect()),
                    ],
                    coef,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference;

    #[test]
    fn round_trip_and_names() {
        let p = TargetParams::Day(reference::day());
        let (space, phi) = Space::from_params(&p).unwrap();
        assert_eq!(space.dim(), 18);
        assert_eq!(space.names[0], "g_DD");
        assert_eq!(space.names[12], "g_LD");
        assert_eq!(space.to_params(&phi), p);
    }

    #[test]
    fn tables_match_kernel_and_derivatives() {
        let p = TargetParams::Night(reference::night());
        let (space, phi) = Space::from_params(&p).unwrap();
        for sp in &space.slots {
            let t = space.tables(sp, &phi);
            let kernel = p.kernel(sp.slot.role).unwrap();
            let mut expected = kernel.table(sp.slot.len).unwrap();
            expected.reverse();
            for (a, b) in t.coef.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-15 * b.abs());
            }
            for a in 0..sp.n {
                let mut hi = phi.clone();
                let mut lo = phi.clone();
                let h = 1e-6 * phi[sp.start + a].abs().max(1e-3);
                hi[sp.start + a] += h;
                lo[sp.start + a] -= h;
                let (th, tl) = (space.tables(sp, &hi), space.tables(sp, &lo));
                for i in 0..sp.slot.len {
                    let fd = (th.coef[i] - tl.coef[i]) / (2.0 * h);
                    let an = t.basis[a][i];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12), "{} {i}", space.names[sp.start + a]);
                }
            }
        }
    }
}
