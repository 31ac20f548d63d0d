//! Diagnostics of full and reduced trajectories.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ansatz::Ansatz;
use crate::error::{Error, Result};
use crate::linalg::{singular_extremes, sym_eigenvalues, symmetric_part, LinearSolver, Op};
use crate::offline::trapezoid;
use crate::reduction::Rom;
use crate::system::{check_equilibrium_origin, dissipation_supply, PhLti, PhSystem};
use crate::timestep::Trajectory;

/// Anything with a Hamiltonian and a power split.
pub trait EnergyModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn energy(&self, t: f64, x: &DVector<f64>) -> Result<f64>;
    /// `(dissipation, supply)`
    fn power(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, f64)>;
}

impl EnergyModel for Rom {
    fn state_dim(&self) -> usize {
        self.dim()
    }
    fn input_dim(&self) -> usize {
        self.ports()
    }
    fn energy(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        self.hamiltonian(t, x)
    }
    fn power(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, f64)> {
        self.dissipation_supply(t, x, u)
    }
}

impl EnergyModel for PhSystem {
    fn state_dim(&self) -> usize {
        self.dim()
    }
    fn input_dim(&self) -> usize {
        self.ports()
    }
    fn energy(&self, t: f64, x: &DVector<f64>) -> Result<f64> {
        Ok(self.hamiltonian(t, x))
    }
    fn power(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, f64)> {
        let p = dissipation_supply(self, t, x, u)?;
        Ok((p.dissipation, p.supply))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerBalanceRecord {
    pub t: f64,
    pub dh_dt: f64,
    pub dissipation: f64,
    pub supply: f64,
    /// `|dH/dt − (supply − dissipation)|`
    pub error: f64,
}

impl PowerBalanceRecord {
    /// `dH/dt − (supply − dissipation)`; positive when energy is created.
    pub fn signed_error(&self) -> f64 {
        self.dh_dt - (self.supply - self.dissipation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub max_error: f64,
    pub mean_error: f64,
    pub max_abs_energy: f64,
    /// Largest `dH/dt − (supply − dissipation)`.
    pub max_signed_error: f64,
    /// Largest one-step increase of the energy.
    pub max_energy_increase: f64,
}

/// Forward-difference `dH/dt` per step, dissipation and supply at the midpoint state.
pub fn power_balance_series(model: &dyn EnergyModel, traj: &Trajectory) -> Result<Vec<PowerBalanceRecord>> {
    if traj.dim() != model.state_dim() {
        return Err(Error::dim("trajectory state", model.state_dim(), traj.dim()));
    }
    if traj.inputs.len() + 1 != traj.len() {
        return Err(Error::dim("trajectory inputs", traj.len().saturating_sub(1), traj.inputs.len()));
    }
    let energies: Vec<f64> = traj.times.iter().zip(&traj.states).map(|(&t, x)| model.energy(t, x)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(traj.inputs.len());
    for j in 0..traj.inputs.len() {
        let (ta, tb) = (traj.times[j], traj.times[j + 1]);
        let tm = 0.5 * (ta + tb);
        let xm = (&traj.states[j] + &traj.states[j + 1]) * 0.5;
        let u = &traj.inputs[j];
        if u.len() != model.input_dim() {
            return Err(Error::dim("input", model.input_dim(), u.len()));
        }
        let (d, s) = model.power(tm, &xm, u)?;
        let dh = (energies[j + 1] - energies[j]) / (tb - ta);
        out.push(PowerBalanceRecord {
            t: tm,
            dh_dt: dh,
            dissipation: d,
            supply: s,
            error: (dh - (s - d)).abs(),
        });
    }
    Ok(out)
}

pub fn summarize_balance(records: &[PowerBalanceRecord], energies: &[f64]) -> BalanceSummary {
    let n = records.len().max(1) as f64;
    BalanceSummary {
        max_error: records.iter().map(|r| r.error).fold(0.0, f64::max),
        mean_error: records.iter().map(|r| r.error).sum::<f64>() / n,
        max_abs_energy: energies.iter().map(|e| e.abs()).fold(0.0, f64::max),
        max_signed_error: records.iter().map(|r| r.signed_error()).fold(f64::NEG_INFINITY, f64::max),
        max_energy_increase: energies.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Energies along a trajectory.
pub fn energy_series(model: &dyn EnergyModel, traj: &Trajectory) -> Result<Vec<f64>> {
    traj.times.iter().zip(&traj.states).map(|(&t, x)| model.energy(t, x)).collect()
}

fn weighted_sq(v: &DVector<f64>, weight: Option<&Op>) -> f64 {
    match weight {
        Some(w) => v.dot(&w.mul_vec(v)),
        None => v.norm_squared(),
    }
}

/// `sqrt(∫‖e‖²_W) / sqrt(∫‖ref‖²_W)` with the trapezoidal rule in time.
pub fn relative_l2_error(reference: &Trajectory, approx: &Trajectory, weight: Option<&Op>) -> Result<f64> {
    if reference.len() != approx.len() {
        return Err(Error::dim("time samples", reference.len(), approx.len()));
    }
    if reference.dim() != approx.dim() {
        return Err(Error::dim("state dimension", reference.dim(), approx.dim()));
    }
    for (a, b) in reference.times.iter().zip(&approx.times) {
        if (a - b).abs() > 1e-12 * (1.0 + a.abs()) {
            return Err(Error::InvalidParameter(format!("time grids differ ({a} vs {b})")));
        }
    }
    let err: Vec<f64> = reference.states.iter().zip(&approx.states).map(|(r, a)| weighted_sq(&(a - r), weight)).collect();
    let refn: Vec<f64> = reference.states.iter().map(|r| weighted_sq(r, weight)).collect();
    let (num, den) = (trapezoid(&reference.times, &err), trapezoid(&reference.times, &refn));
    Ok(if den > 0.0 {
        (num / den).sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

/// Lift every reduced state through the ansatz.
pub fn lift_trajectory(rom: &Rom, traj: &Trajectory) -> Result<Trajectory> {
    let states = traj.times.iter().zip(&traj.states).map(|(&t, x)| rom.lift(t, x)).collect::<Result<Vec<_>>>()?;
    Ok(Trajectory {
        times: traj.times.clone(),
        states,
        inputs: traj.inputs.clone(),
        stats: traj.stats.clone(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub probes: usize,
    /// Largest singular value of the basis over the probes.
    pub sigma_max: f64,
    /// Smallest singular value of the basis over the probes.
    pub sigma_min: f64,
    /// Norm-equivalence constants of the Hamiltonian (eigenvalue extremes of sym(EᵀQ)).
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub equilibrium_at_origin: bool,
    /// `sqrt(c₃σ_max²/(c₂σ_min²))`
    pub amplitude_constant: Option<f64>,
    /// `sqrt(c₃/c₂)`
    pub state_constant: Option<f64>,
    /// Range of the reduced mass matrix condition number along a trajectory.
    pub mass_condition_max: Option<f64>,
    pub mass_condition_min: Option<f64>,
    pub notes: Vec<String>,
}

fn basis_at(a: &Ansatz, t: f64, xt: &DVector<f64>) -> Result<DMatrix<f64>> {
    match a {
        Ansatz::Separable(_) => a.separable_block(xt),
        _ => a.eval_basis(t, xt),
    }
}

/// Probe-based certificate for the boundedness results of separable and linear ansatzes.
pub fn stability_certificate(a: &Ansatz, sys: &PhSystem, probes: &[(f64, DVector<f64>)], along: Option<(&Rom, &Trajectory)>) -> Result<StabilityCertificate> {
    let mut cert = StabilityCertificate {
        probes: probes.len(),
        sigma_max: 0.0,
        sigma_min: f64::INFINITY,
        ..Default::default()
    };
    for (t, xt) in probes {
        let v = basis_at(a, *t, xt)?;
        let (smax, smin) = singular_extremes(&v);
        cert.sigma_max = cert.sigma_max.max(smax);
        cert.sigma_min = cert.sigma_min.min(smin);
    }
    if probes.is_empty() {
        cert.sigma_min = 0.0;
        cert.notes.push("no probes supplied".into());
    }
    let times: Vec<f64> = if probes.is_empty() { vec![0.0] } else { probes.iter().map(|p| p.0).collect() };
    match sys {
        PhSystem::NonlinearQ(s) => match s.norm_equivalence {
            Some((c2, c3)) => {
                cert.c2 = Some(c2);
                cert.c3 = Some(c3);
            }
            None => cert.notes.push("norm-equivalence constants unknown for this nonlinear system".into()),
        },
        _ => {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            let at = if matches!(sys, PhSystem::Lti(_)) { &times[..1] } else { &times[..] };
            for &t in at {
                let c = sys.at(t, &DVector::zeros(sys.dim()));
                let m = c.e.to_dense().transpose() * c.q.to_dense();
                let ev = sym_eigenvalues(&m);
                lo = lo.min(ev[0]);
                hi = hi.max(ev[ev.len() - 1]);
            }
            cert.c2 = Some(lo);
            cert.c3 = Some(hi);
        }
    }
    cert.equilibrium_at_origin = check_equilibrium_origin(sys, &times);
    if !cert.equilibrium_at_origin {
        cert.notes.push("origin is not an equilibrium".into());
    }
    if let (Some(c2), Some(c3)) = (cert.c2, cert.c3) {
        if c2 > 0.0 {
            cert.state_constant = Some((c3 / c2).sqrt());
            if cert.sigma_min > 0.0 {
                cert.amplitude_constant = Some((c3 * cert.sigma_max.powi(2) / (c2 * cert.sigma_min.powi(2))).sqrt());
            } else {
                cert.notes.push("basis loses rank at a probe; amplitude bound inconclusive".into());
            }
        } else {
            cert.notes.push("Hamiltonian is not positive definite; bounds inconclusive".into());
        }
    }
    if let Some((rom, traj)) = along {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let e = rom.coefficients(*t, x)?.e;
            let (smax, smin) = singular_extremes(&e);
            let k = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            lo = lo.min(k);
            hi = hi.max(k);
        }
        cert.mass_condition_max = Some(hi);
        cert.mass_condition_min = Some(lo);
        if !hi.is_finite() {
            cert.notes.push("reduced mass matrix singular along the trajectory".into());
        }
    }
    Ok(cert)
}

/// Largest growth rate `ω` of `½‖x‖²_{EᵀQ}` under `Eẋ = ((J−R)Q−K)x`: the top generalized
/// eigenvalue of `sym(Qᵀ((J−R)Q−K))` against `sym(EᵀQ)`.
pub fn energy_log_norm(sys: &PhLti) -> Result<f64> {
    let q = sys.q.to_dense();
    let s = symmetric_part(&(q.transpose() * sys.system_op().to_dense()));
    let m = symmetric_part(&(sys.e.to_dense().transpose() * &q));
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("E^T Q is not positive definite; supply M and omega explicitly".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Cholesky factor of E^T Q".into()))?;
    let c = &linv * s * linv.transpose();
    let ev = sym_eigenvalues(&c);
    let w = ev[ev.len() - 1];
    if !w.is_finite() {
        return Err(Error::InvalidParameter("logarithmic norm estimate is not finite; supply M and omega explicitly".into()));
    }
    Ok(w)
}

/// `‖v‖_{EᵀQ}`
pub fn energy_norm(sys: &PhLti, v: &DVector<f64>) -> f64 {
    sys.e.mul_vec(v).dot(&sys.q.mul_vec(v)).max(0.0).sqrt()
}

/// Residual norms `‖ℛ‖_{E⁻ᵀQᵀ}` of the lifted reduced trajectory inserted into the
/// discrete full-order scheme, reported per grid time as the larger of the two
/// adjacent step values.
pub fn lifted_residual_norms(sys: &PhLti, rom: &Rom, traj: &Trajectory) -> Result<Vec<f64>> {
    let lifted = lift_trajectory(rom, traj)?;
    let e = LinearSolver::new(&sys.e)?;
    let a = sys.system_op();
    let mut steps = Vec::with_capacity(traj.inputs.len());
    for j in 0..traj.inputs.len() {
        let h = lifted.times[j + 1] - lifted.times[j];
        let (y0, y1) = (&lifted.states[j], &lifted.states[j + 1]);
        let mut r = sys.e.mul_vec(&((y1 - y0) / h)) - a.mul_vec(&((y1 + y0) * 0.5));
        if sys.ports() > 0 {
            r -= sys.b.mul_vec(&traj.inputs[j]);
        }
        let ei = e.solve(&r)?;
        steps.push(ei.dot(&sys.q.tr_mul_vec(&r)).max(0.0).sqrt());
    }
    let n = traj.len();
    Ok((0..n)
        .map(|i| {
            let left = if i > 0 { steps[i - 1] } else { 0.0 };
            let right = if i < steps.len() { steps[i] } else { 0.0 };
            left.max(right)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub m: f64,
    pub omega: f64,
}

/// `M e^{ωt}(e₀ + ∫₀ᵗ e^{−ωs}ρ(s) ds)` with the trapezoidal rule.
/// Without constants, `ω` is [`energy_log_norm`] and `M = 1` (exact in the `EᵀQ` norm).
pub fn error_bound_eval(sys: &PhLti, times: &[f64], residual_norms: &[f64], e0: f64, constants: Option<BoundConstants>) -> Result<(Vec<f64>, BoundConstants)> {
    if times.len() != residual_norms.len() {
        return Err(Error::dim("residual samples", times.len(), residual_norms.len()));
    }
    let k = match constants {
        Some(k) => k,
        None => BoundConstants {
            m: 1.0,
            omega: energy_log_norm(sys)?,
        },
    };
    let t0 = times.first().copied().unwrap_or(0.0);
    let weighted: Vec<f64> = times.iter().zip(residual_norms).map(|(&t, &r)| (-k.omega * (t - t0)).exp() * r).collect();
    let mut out = Vec::with_capacity(times.len());
    let mut integral = 0.0;
    for i in 0..times.len() {
        if i > 0 {
            integral += 0.5 * (times[i] - times[i - 1]) * (weighted[i] + weighted[i - 1]);
        }
        out.push(k.m * (k.omega * (times[i] - t0)).exp() * (e0 + integral));
    }
    Ok((out, k))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub t: f64,
    pub bound: f64,
    pub measured: f64,
}

/// Bound curve and measured `EᵀQ`-error of a linear reduced model against a reference trajectory.
pub fn error_bound_report(sys: &PhLti, rom: &Rom, reference: &Trajectory, reduced: &Trajectory, constants: Option<BoundConstants>) -> Result<(Vec<BoundRecord>, BoundConstants)> {
    let lifted = lift_trajectory(rom, reduced)?;
    if lifted.len() != reference.len() {
        return Err(Error::dim("time samples", reference.len(), lifted.len()));
    }
    let measured: Vec<f64> = reference.states.iter().zip(&lifted.states).map(|(x, y)| energy_norm(sys, &(x - y))).collect();
    let res = lifted_residual_norms(sys, rom, reduced)?;
    let (bound, k) = error_bound_eval(sys, &reduced.times, &res, measured[0], constants)?;
    Ok((
        reduced
            .times
            .iter()
            .zip(bound.iter().zip(&measured))
            .map(|(&t, (&b, &m))| BoundRecord { t, bound: b, measured: m })
            .collect(),
        k,
    ))
}
