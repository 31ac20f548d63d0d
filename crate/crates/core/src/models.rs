//! Benchmark full-order models: finite-element advection–diffusion and a
//! finite-difference wildland fire model.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Op;
use crate::system::{PhLti, PhNonlinearQ};
use crate::timestep::SparsityPattern;

/// Smooth bump `exp(1 − 1/(1 − s²))` for `|s| < 1`, zero otherwise.
pub fn bump(s: f64) -> f64 {
    if s.abs() < 1.0 {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

/// Advection–diffusion on `(0, 1)` with inflow at `ξ = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdeParams {
    pub c: f64,
    pub d: f64,
    /// Interior node count; the mesh has `n + 1` intervals.
    pub n: usize,
    pub t_end: f64,
}

impl Default for AdeParams {
    fn default() -> Self {
        AdeParams {
            c: 1.0,
            d: 1e-3,
            n: 999,
            t_end: 1.2,
        }
    }
}

impl AdeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.d > 0.0) {
            return Err(Error::InvalidParameter(format!("advection speed and diffusion must be positive (c={}, d={})", self.c, self.d)));
        }
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 interior nodes, got {}", self.n)));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        Ok(())
    }

    pub fn mesh_size(&self) -> f64 {
        1.0 / (self.n + 1) as f64
    }

    /// Boundary signal `g(t)`.
    pub fn input(t: f64) -> f64 {
        if t > 0.175 && t < 0.275 {
            0.5 * bump(20.0 * (t - 0.225))
        } else {
            0.0
        }
    }

    /// Initial profile `x₀(ξ)`.
    pub fn initial_profile(xi: f64) -> f64 {
        if xi > 0.45 && xi < 0.55 {
            bump(20.0 * (xi - 0.5))
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdeFom {
    pub params: AdeParams,
    pub system: PhLti,
    pub x0: DVector<f64>,
    pub nodes: Vec<f64>,
}

fn tridiagonal(n: usize, entry: impl Fn(usize, usize) -> f64) -> Op {
    Op::sparse_from_triplets(
        n,
        n,
        (0..n).flat_map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            (lo..=hi).map(move |j| (i, j)).collect::<Vec<_>>()
        })
        .map(|(i, j)| (i, j, entry(i, j)))
        .filter(|t| t.2 != 0.0),
    )
}

pub fn build_ade_fom(p: &AdeParams) -> Result<AdeFom> {
    p.validate()?;
    let n = p.n + 2;
    let h = p.mesh_size();
    let last = n - 1;
    let e = tridiagonal(n, |i, j| {
        if i != j {
            h / 6.0
        } else if i == 0 || i == last {
            2.0 * h / 6.0
        } else {
            4.0 * h / 6.0
        }
    });
    let j = tridiagonal(n, |i, j| {
        if j == i + 1 {
            -0.5 * p.c
        } else if i == j + 1 {
            0.5 * p.c
        } else {
            0.0
        }
    });
    let r = tridiagonal(n, |i, j| {
        let s = p.d / h;
        if i != j {
            -s
        } else if i == 0 || i == last {
            s + 0.5 * p.c
        } else {
            2.0 * s
        }
    });
    let b = Op::sparse_from_triplets(n, 1, [(0, 0, p.c)]);
    let system = PhLti::new(e, j, r, Op::Identity(n), Op::Zero(n, n), b)?;
    let nodes: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let x0 = DVector::from_iterator(n, nodes.iter().map(|&x| AdeParams::initial_profile(x)));
    Ok(AdeFom {
        params: p.clone(),
        system,
        x0,
        nodes,
    })
}

/// Reaction rate `exp(−β/T)` for `T > 0`, zero otherwise.
pub fn reaction_rate(temperature: f64, beta: f64) -> f64 {
    if temperature > 0.0 {
        (-beta / temperature).exp()
    } else {
        0.0
    }
}

/// Wildland fire model on a periodic interval: temperature `T` and fuel fraction `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WildfireParams {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub zeta: f64,
    /// Wind speed.
    pub w: f64,
    /// Grid parameter; there are `n + 1` nodes per field.
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub t_end: f64,
    /// Initial temperature `amplitude·exp(−((ξ − center)/width)²)`.
    pub ignition_amplitude: f64,
    pub ignition_center: f64,
    pub ignition_width: f64,
    /// Initial (uniform) fuel fraction.
    pub fuel: f64,
}

impl Default for WildfireParams {
    fn default() -> Self {
        WildfireParams {
            k: 0.2136,
            alpha: 187.93,
            beta: 558.49,
            gamma: 4.8372e-5,
            zeta: 0.1625,
            w: 0.0,
            n: 255,
            a: 0.0,
            b: 200.0,
            t_end: 200.0,
            ignition_amplitude: 1200.0,
            ignition_center: 100.0,
            ignition_width: 10.0,
            fuel: 1.0,
        }
    }
}

impl WildfireParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k", self.k), ("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma), ("zeta", self.zeta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.w.is_finite() {
            return Err(Error::InvalidParameter("wind speed must be finite".into()));
        }
        if !(self.b > self.a) {
            return Err(Error::InvalidParameter(format!("empty domain ({}, {})", self.a, self.b)));
        }
        if self.n < 3 {
            return Err(Error::InvalidParameter(format!("grid parameter must be at least 3, got {}", self.n)));
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidParameter(format!("t_end must be positive, got {}", self.t_end)));
        }
        Ok(())
    }

    /// Fuel weight `α/(4γζ)` of the Hamiltonian.
    pub fn eta(&self) -> f64 {
        self.alpha / (4.0 * self.gamma * self.zeta)
    }

    pub fn nodes_per_field(&self) -> usize {
        self.n + 1
    }

    pub fn mesh_size(&self) -> f64 {
        (self.b - self.a) / (self.n + 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.mesh_size();
        (1..=self.n + 1).map(|i| self.a + i as f64 * h).collect()
    }
}

#[derive(Clone, Debug)]
pub struct WildfireFom {
    pub params: WildfireParams,
    pub system: PhNonlinearQ,
    pub x0: DVector<f64>,
    pub nodes: Vec<f64>,
}

fn periodic_stencil(m: usize, w: [f64; 3]) -> Op {
    Op::sparse_from_triplets(
        m,
        m,
        (0..m).flat_map(move |i| [((i + m - 1) % m, w[0]), (i, w[1]), ((i + 1) % m, w[2])].map(|(j, v)| (i, j, v))).filter(|t| t.2 != 0.0),
    )
}

/// Periodic central first difference; skew-symmetric.
pub fn periodic_first_difference(m: usize, h: f64) -> Op {
    periodic_stencil(m, [-0.5 / h, 0.0, 0.5 / h])
}

/// Periodic second difference; symmetric negative semidefinite.
pub fn periodic_second_difference(m: usize, h: f64) -> Op {
    let s = 1.0 / (h * h);
    periodic_stencil(m, [s, -2.0 * s, s])
}

fn rates(x: &DVector<f64>, m: usize, beta: f64) -> Vec<f64> {
    (0..m).map(|i| reaction_rate(x[i], beta)).collect()
}

/// Interconnection `J₁ + J₂(x₁)`.
fn wildfire_j(d1: &[(usize, usize, f64)], m: usize, w: f64, coupling: f64, v: &[f64]) -> Op {
    let mut t: Vec<(usize, usize, f64)> = d1.iter().map(|&(i, j, x)| (i, j, -w * x)).collect();
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            t.push((i, m + i, coupling * vi));
            t.push((m + i, i, -coupling * vi));
        }
    }
    t.retain(|e| e.2 != 0.0);
    Op::sparse_from_triplets(2 * m, 2 * m, t)
}

/// Dissipation `R₁ + R₂(x₁)`.
fn wildfire_r(d2: &[(usize, usize, f64)], m: usize, p: &WildfireParams, v: &[f64]) -> Op {
    let eta = p.eta();
    let coupling = p.alpha / (2.0 * eta);
    let mut t: Vec<(usize, usize, f64)> = d2.iter().map(|&(i, j, x)| (i, j, -p.k * x)).collect();
    for (i, &vi) in v.iter().enumerate() {
        t.push((i, i, p.alpha * p.gamma));
        if vi != 0.0 {
            t.push((i, m + i, -coupling * vi));
            t.push((m + i, i, -coupling * vi));
            t.push((m + i, m + i, p.zeta / eta * vi));
        }
    }
    Op::sparse_from_triplets(2 * m, 2 * m, t)
}

fn triplets(op: &Op) -> Vec<(usize, usize, f64)> {
    match op {
        Op::Sparse(s) => s.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect(),
        _ => unreachable!("difference operators are sparse"),
    }
}

fn wildfire_sparsity(m: usize) -> SparsityPattern {
    let rows_of = (0..2 * m)
        .map(|j| {
            let mut rows = if j < m {
                vec![(j + m - 1) % m, j, (j + 1) % m, m + j]
            } else {
                vec![j - m, j]
            };
            rows.sort_unstable();
            rows.dedup();
            rows
        })
        .collect();
    SparsityPattern::new(2 * m, rows_of)
}

/// Assemble `x' = (J(x) − R(x))Qx` with `Q = diag(I, ηI)`, `E = I`, no ports.
pub fn build_wildfire_fom(p: &WildfireParams) -> Result<WildfireFom> {
    p.validate()?;
    let m = p.nodes_per_field();
    let n = 2 * m;
    let h = p.mesh_size();
    let eta = p.eta();
    let d1 = triplets(&periodic_first_difference(m, h));
    let d2 = triplets(&periodic_second_difference(m, h));
    let q_diag = DVector::from_iterator(n, (0..n).map(|i| if i < m { 1.0 } else { eta }));
    let coupling = p.alpha / (2.0 * eta);
    let (pj, pr) = (p.clone(), p.clone());
    let (qh, qg) = (q_diag.clone(), q_diag.clone());
    let system = PhNonlinearQ {
        n,
        m: 0,
        e: Arc::new(move |_, _| Op::Identity(n)),
        j: Arc::new(move |_, x| wildfire_j(&d1, m, pj.w, coupling, &rates(x, m, pj.beta))),
        r: Arc::new(move |_, x| wildfire_r(&d2, m, &pr, &rates(x, m, pr.beta))),
        q: {
            let q = q_diag.clone();
            Arc::new(move |_, _| Op::Diagonal(q.clone()))
        },
        drift: Arc::new(move |_, _| DVector::zeros(n)),
        b: Arc::new(move |_, _| Op::Zero(n, 0)),
        hamiltonian: Arc::new(move |_, x| 0.5 * x.dot(&x.component_mul(&qh))),
        grad_hamiltonian: Some(Arc::new(move |_, x| x.component_mul(&qg))),
        norm_equivalence: Some((eta.min(1.0), eta.max(1.0))),
        sparsity: Some(Arc::new(wildfire_sparsity(m))),
    };
    let nodes = p.nodes();
    let mut x0 = DVector::zeros(n);
    for (i, &xi) in nodes.iter().enumerate() {
        let s = (xi - p.ignition_center) / p.ignition_width;
        x0[i] = p.ignition_amplitude * (-s * s).exp();
        x0[m + i] = p.fuel;
    }
    Ok(WildfireFom {
        params: p.clone(),
        system,
        x0,
        nodes,
    })
}

/// Right side written directly from the finite-difference scheme, without the pH splitting.
pub fn wildfire_rhs_direct(p: &WildfireParams, x: &DVector<f64>) -> DVector<f64> {
    let m = p.nodes_per_field();
    let h = p.mesh_size();
    let mut out = DVector::zeros(2 * m);
    for i in 0..m {
        let (l, r) = ((i + m - 1) % m, (i + 1) % m);
        let t = x[i];
        let s = x[m + i];
        let v = reaction_rate(t, p.beta);
        let lap = (x[r] - 2.0 * t + x[l]) / (h * h);
        let grad = (x[r] - x[l]) / (2.0 * h);
        out[i] = p.k * lap - p.w * grad - p.alpha * p.gamma * t + p.alpha * v * s;
        out[m + i] = -p.zeta * v * s;
    }
    out
}

/// Maximum relative deviation between the direct right side and `(J − R)Qx`.
pub fn wildfire_rhs_equivalence_check(p: &WildfireParams, samples: &[DVector<f64>]) -> Result<f64> {
    let fom = build_wildfire_fom(p)?;
    let sys = &fom.system;
    let mut worst: f64 = 0.0;
    for x in samples {
        if x.len() != sys.n {
            return Err(Error::dim("sample state", sys.n, x.len()));
        }
        let direct = wildfire_rhs_direct(p, x);
        let z = (sys.q)(0.0, x).mul_vec(x);
        let ph = (sys.j)(0.0, x).mul_vec(&z) - (sys.r)(0.0, x).mul_vec(&z);
        let scale = direct.norm().max(ph.norm());
        if scale > 0.0 {
            worst = worst.max((direct - ph).norm() / scale);
        }
    }
    Ok(worst)
}

/// Dense `R₂(u)` of the fire model, the state-dependent part of the dissipation.
pub fn wildfire_reaction_dissipation(p: &WildfireParams, u: &DVector<f64>) -> DMatrix<f64> {
    let m = u.len();
    let eta = p.eta();
    let coupling = p.alpha / (2.0 * eta);
    let mut r = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        let v = reaction_rate(u[i], p.beta);
        r[(i, i)] = p.alpha * p.gamma;
        r[(i, m + i)] = -coupling * v;
        r[(m + i, i)] = -coupling * v;
        r[(m + i, m + i)] = p.zeta / eta * v;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ade_mass_row_sums() {
        let p = AdeParams { n: 2, ..Default::default() };
        let fom = build_ade_fom(&p).unwrap();
        let h = p.mesh_size();
        let s = fom.system.e.mul_vec(&DVector::from_element(4, 1.0));
        let want = [3.0, 6.0, 6.0, 3.0].map(|v| v * h / 6.0);
        for i in 0..4 {
            assert!((s[i] - want[i]).abs() < 1e-15);
        }
        let j = fom.system.j.to_dense();
        assert_eq!(&j + j.transpose(), DMatrix::zeros(4, 4));
    }

    #[test]
    fn ade_signals() {
        assert_eq!(AdeParams::input(0.1), 0.0);
        assert!((AdeParams::input(0.225) - 0.5).abs() < 1e-15);
        assert!((AdeParams::initial_profile(0.5) - 1.0).abs() < 1e-15);
        assert_eq!(AdeParams::initial_profile(0.56), 0.0);
    }

    #[test]
    fn difference_matrices_annihilate_constants() {
        let one = DVector::from_element(9, 1.0);
        assert!(periodic_first_difference(9, 0.3).mul_vec(&one).norm() < 1e-14);
        assert!(periodic_second_difference(9, 0.3).mul_vec(&one).norm() < 1e-12);
    }

    #[test]
    fn cold_state_reaction_dissipation() {
        let p = WildfireParams::default();
        let r = wildfire_reaction_dissipation(&p, &DVector::from_element(4, -1.0));
        for i in 0..4 {
            assert_eq!(r[(i, i)], p.alpha * p.gamma);
            assert_eq!(r[(4 + i, 4 + i)], 0.0);
            assert_eq!(r[(i, 4 + i)], 0.0);
        }
    }

    #[test]
    fn zero_state_both_sides_vanish() {
        let p = WildfireParams { n: 7, ..Default::default() };
        assert_eq!(wildfire_rhs_equivalence_check(&p, &[DVector::zeros(16)]).unwrap(), 0.0);
    }
}
