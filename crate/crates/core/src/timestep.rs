//! Implicit midpoint integration with a damped Newton solver.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandedLu, LinearSolver};
use crate::system::PhSystem;

/// Uniform time grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub step: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, step: f64) -> Result<Self> {
        if !(t_end > t0) || !t0.is_finite() || !t_end.is_finite() {
            return Err(Error::InvalidParameter(format!("time grid needs t_end > t0, got [{t0}, {t_end}]")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidParameter(format!("time step must be positive, got {step}")));
        }
        let q = (t_end - t0) / step;
        let steps = q.round();
        if steps < 1.0 || (q - steps).abs() > 1e-12 * steps.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "interval length {} is not an integer multiple of the step {step}",
                t_end - t0
            )));
        }
        Ok(TimeGrid {
            t0,
            t_end,
            step,
            steps: steps as usize,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_end
        } else {
            self.t0 + j as f64 * self.step
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.time(j)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub iterations: usize,
    pub residual_norm: f64,
    pub jacobian_evaluations: usize,
}

/// Time samples, states, midpoint inputs, and per-step solver statistics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    /// Input at each interval midpoint (empty when not recorded).
    pub inputs: Vec<DVector<f64>>,
    pub stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |x| x.len())
    }

    pub fn step_size(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| self.times[1] - self.times[0])
    }

    /// States as columns.
    pub fn state_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.len());
        for (j, x) in self.states.iter().enumerate() {
            m.set_column(j, x);
        }
        m
    }

    /// Apply a map to every state (e.g. lifting).
    pub fn map_states(&self, f: impl Fn(f64, &DVector<f64>) -> Result<DVector<f64>>) -> Result<Trajectory> {
        let states = self
            .times
            .iter()
            .zip(&self.states)
            .map(|(t, x)| f(*t, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(Trajectory {
            times: self.times.clone(),
            states,
            inputs: self.inputs.clone(),
            stats: self.stats.clone(),
        })
    }

    /// CSV with columns `t, x0, x1, …`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim()).map(|i| format!("x{i}")));
        let rows = self.times.iter().zip(&self.states).map(|(t, x)| {
            let mut row = Vec::with_capacity(x.len() + 1);
            row.push(*t);
            row.extend(x.iter().copied());
            row
        });
        crate::io::write_table_csv(path, &header, rows)
    }

    pub fn read_csv(path: &Path) -> Result<Trajectory> {
        let (_, rows) = crate::io::read_table_csv(path)?;
        let mut traj = Trajectory::default();
        for row in rows {
            traj.times.push(row[0]);
            traj.states.push(DVector::from_column_slice(&row[1..]));
        }
        Ok(traj)
    }

    pub fn stats_summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            samples: self.len(),
            dim: self.dim(),
            total_newton_iterations: self.stats.iter().map(|s| s.iterations).sum(),
            max_newton_iterations: self.stats.iter().map(|s| s.iterations).max().unwrap_or(0),
            max_residual_norm: self.stats.iter().map(|s| s.residual_norm).fold(0.0, f64::max),
            jacobian_evaluations: self.stats.iter().map(|s| s.jacobian_evaluations).sum(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrajectorySummary {
    pub samples: usize,
    pub dim: usize,
    pub total_newton_iterations: usize,
    pub max_newton_iterations: usize,
    pub max_residual_norm: f64,
    pub jacobian_evaluations: usize,
}

/// Column structure of a sparse Jacobian with a column coloring.
#[derive(Clone, Debug)]
pub struct SparsityPattern {
    /// Rows that column `j` may touch.
    pub rows_of: Vec<Vec<usize>>,
    /// Column groups with disjoint row sets.
    pub groups: Vec<Vec<usize>>,
}

impl SparsityPattern {
    /// Greedy coloring of the column intersection graph.
    pub fn new(n_rows: usize, rows_of: Vec<Vec<usize>>) -> Self {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut used: Vec<Vec<bool>> = Vec::new();
        for (j, rows) in rows_of.iter().enumerate() {
            let slot = used.iter().position(|u| rows.iter().all(|&i| !u[i]));
            let g = match slot {
                Some(g) => g,
                None => {
                    used.push(vec![false; n_rows]);
                    groups.push(Vec::new());
                    used.len() - 1
                }
            };
            for &i in rows {
                used[g][i] = true;
            }
            groups[g].push(j);
        }
        SparsityPattern { rows_of, groups }
    }
}

#[derive(Clone, Debug)]
pub enum JacobianPattern {
    Dense,
    Banded { lower: usize, upper: usize },
    Sparse(Arc<SparsityPattern>),
}

/// Residual form `F(t, x, ẋ, u) = 0` of a first-order system.
pub trait ImplicitSystem: Sync {
    fn dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn pattern(&self) -> JacobianPattern {
        JacobianPattern::Dense
    }
    /// Exact factorized Jacobian `E/h − A/2` of the midpoint residual when the
    /// residual is `Eẋ − Ax − Bu` with constant `E`, `A`.
    fn midpoint_jacobian(&self, _h: f64) -> Option<Result<LinearSolver>> {
        None
    }
}

impl ImplicitSystem for PhSystem {
    fn dim(&self) -> usize {
        PhSystem::dim(self)
    }
    fn input_dim(&self) -> usize {
        self.ports()
    }
    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(PhSystem::residual(self, t, x, xdot, u))
    }
    fn pattern(&self) -> JacobianPattern {
        if let PhSystem::NonlinearQ(s) = self {
            if let Some(p) = &s.sparsity {
                return JacobianPattern::Sparse(p.clone());
            }
        }
        match self.jacobian_band() {
            Some((lower, upper)) if lower + upper + 1 < self.dim() / 4 => JacobianPattern::Banded { lower, upper },
            _ => JacobianPattern::Dense,
        }
    }
    fn midpoint_jacobian(&self, h: f64) -> Option<Result<LinearSolver>> {
        match self {
            PhSystem::Lti(s) => Some(crate::linalg::factor_combination(1.0 / h, &s.e, -0.5, s.system_op())),
            _ => None,
        }
    }
}

type ResidualFn = dyn Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Implicit system from a closure.
pub struct FnSystem {
    pub n: usize,
    pub m: usize,
    pub f: Box<ResidualFn>,
    pub pattern: JacobianPattern,
}

impl FnSystem {
    pub fn new(n: usize, m: usize, f: impl Fn(f64, &DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        FnSystem {
            n,
            m,
            f: Box::new(f),
            pattern: JacobianPattern::Dense,
        }
    }

    /// `ẋ = g(t, x)`
    pub fn explicit(n: usize, g: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        Self::new(n, 0, move |t, x, xdot, _| xdot - g(t, x))
    }
}

impl ImplicitSystem for FnSystem {
    fn dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.f)(t, x, xdot, u))
    }
    fn pattern(&self) -> JacobianPattern {
        self.pattern.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonControls {
    pub atol: f64,
    pub rtol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    pub min_damping: f64,
}

impl Default for NewtonControls {
    fn default() -> Self {
        NewtonControls {
            atol: 1e-10,
            rtol: 1e-10,
            max_iter: 50,
            armijo: 1e-4,
            min_damping: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOutcome {
    pub root: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    pub jacobian_evaluations: usize,
}

/// Forward-difference Jacobian, factorized.
fn fd_jacobian(
    f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    x: &DVector<f64>,
    fx: &DVector<f64>,
    pattern: &JacobianPattern,
) -> Result<LinearSolver> {
    let n = x.len();
    let step = |v: f64| f64::EPSILON.sqrt() * (1.0 + v.abs());
    match pattern {
        JacobianPattern::Dense => {
            let mut jac = DMatrix::zeros(fx.len(), n);
            let mut y = x.clone();
            for j in 0..n {
                let h = step(x[j]);
                y[j] = x[j] + h;
                let fy = f(&y)?;
                y[j] = x[j];
                jac.set_column(j, &((fy - fx) / h));
            }
            LinearSolver::new(&crate::linalg::Op::Dense(jac))
        }
        JacobianPattern::Banded { lower, upper } => {
            let (kl, ku) = (*lower, *upper);
            let w = kl + ku + 1;
            let mut band = vec![0.0; n * w];
            for g in 0..w.min(n) {
                let mut y = x.clone();
                let cols: Vec<usize> = (g..n).step_by(w).collect();
                let hs: Vec<f64> = cols.iter().map(|&j| step(x[j])).collect();
                for (&j, &h) in cols.iter().zip(&hs) {
                    y[j] += h;
                }
                let fy = f(&y)?;
                for (&j, &h) in cols.iter().zip(&hs) {
                    for i in j.saturating_sub(ku)..=(j + kl).min(n - 1) {
                        band[i * w + (j + kl - i)] = (fy[i] - fx[i]) / h;
                    }
                }
            }
            let lu = BandedLu::factor_with(n, kl, ku, |i, j| band[i * w + (j + kl - i)])?;
            Ok(LinearSolver::Banded(lu))
        }
        JacobianPattern::Sparse(p) => {
            let mut jac = DMatrix::zeros(fx.len(), n);
            for group in &p.groups {
                let mut y = x.clone();
                let hs: Vec<f64> = group.iter().map(|&j| step(x[j])).collect();
                for (&j, &h) in group.iter().zip(&hs) {
                    y[j] += h;
                }
                let fy = f(&y)?;
                for (&j, &h) in group.iter().zip(&hs) {
                    for &i in &p.rows_of[j] {
                        jac[(i, j)] = (fy[i] - fx[i]) / h;
                    }
                }
            }
            LinearSolver::new(&crate::linalg::Op::Dense(jac))
        }
    }
}

/// Reusable Jacobian factorization between Newton solves.
#[derive(Default)]
pub struct JacobianCache {
    solver: Option<LinearSolver>,
}

fn finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Newton iteration until `‖F‖ ≤ threshold`.
pub fn newton_iterate(
    f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>,
    guess: &DVector<f64>,
    threshold: f64,
    controls: &NewtonControls,
    pattern: &JacobianPattern,
    mut cache: Option<&mut JacobianCache>,
) -> Result<NewtonOutcome> {
    let mut x = guess.clone();
    let mut fx = f(&x)?;
    let mut norm = fx.norm();
    let mut jac_evals = 0;
    if norm <= threshold {
        return Ok(NewtonOutcome {
            root: x,
            iterations: 0,
            residual_norm: norm,
            jacobian_evaluations: 0,
        });
    }
    let mut solver: Option<LinearSolver> = cache.as_mut().and_then(|c| c.solver.take());
    let mut fresh = false;
    let mut iteration = 0;
    while iteration < controls.max_iter {
        if solver.is_none() {
            jac_evals += 1;
            fresh = true;
            solver = Some(fd_jacobian(f, &x, &fx, pattern).map_err(|e| match e {
                Error::Singular(_) => Error::SingularJacobian { iteration },
                other => other,
            })?);
        }
        let dir = match solver.as_ref().expect("factorized").solve(&fx) {
            Ok(d) if finite(&d) => -d,
            _ if !fresh => {
                solver = None;
                continue;
            }
            _ => return Err(Error::SingularJacobian { iteration }),
        };
        let mut lambda = 1.0;
        let phi = norm * norm;
        let accepted = loop {
            let trial = &x + &dir * lambda;
            if let Ok(ft) = f(&trial) {
                let nt = ft.norm();
                if nt.is_finite() && nt * nt <= (1.0 - 2.0 * controls.armijo * lambda) * phi {
                    break Some((trial, ft, nt));
                }
            }
            lambda *= 0.5;
            if lambda < controls.min_damping {
                break None;
            }
        };
        iteration += 1;
        match accepted {
            Some((xn, fnew, nn)) => {
                let slow = nn > 0.5 * norm;
                x = xn;
                fx = fnew;
                norm = nn;
                if norm <= threshold {
                    if let Some(c) = cache.as_mut() {
                        c.solver = solver;
                    }
                    return Ok(NewtonOutcome {
                        root: x,
                        iterations: iteration,
                        residual_norm: norm,
                        jacobian_evaluations: jac_evals,
                    });
                }
                if cache.is_none() || slow {
                    solver = None;
                }
                fresh = false;
            }
            None if !fresh => {
                solver = None;
            }
            None => {
                return Err(Error::LineSearch {
                    iterations: iteration,
                    residual: norm,
                })
            }
        }
    }
    Err(Error::NewtonMaxIter {
        iterations: iteration,
        residual: norm,
    })
}

/// Damped Newton with dense forward-difference Jacobians;
/// converged when `‖F(root)‖ ≤ atol + rtol·‖F(guess)‖`.
pub fn newton_solve(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    guess: &DVector<f64>,
    controls: &NewtonControls,
) -> Result<NewtonOutcome> {
    let wrapped = |x: &DVector<f64>| Ok(f(x));
    let f0 = wrapped(guess)?.norm();
    newton_iterate(&wrapped, guess, controls.atol + controls.rtol * f0, controls, &JacobianPattern::Dense, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub newton: NewtonControls,
    pub blowup_threshold: f64,
    /// Keep the Jacobian factorization across iterations and steps, refreshing on slow convergence.
    pub reuse_jacobian: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions {
            newton: NewtonControls::default(),
            blowup_threshold: 1e12,
            reuse_jacobian: false,
        }
    }
}

/// Implicit midpoint rule: `F(t_mid, (x₊+x₋)/2, (x₊−x₋)/τ, u(t_mid)) = 0` per step.
pub fn integrate_midpoint(
    sys: &dyn ImplicitSystem,
    grid: &TimeGrid,
    x_init: &DVector<f64>,
    input: &dyn Fn(f64) -> DVector<f64>,
    opts: &IntegratorOptions,
) -> Result<Trajectory> {
    let n = sys.dim();
    if x_init.len() != n {
        return Err(Error::dim("initial state", n, x_init.len()));
    }
    if !finite(x_init) {
        return Err(Error::InvalidParameter("initial state has non-finite entries".into()));
    }
    let pattern = sys.pattern();
    let mut traj = Trajectory {
        times: vec![grid.time(0)],
        states: vec![x_init.clone()],
        inputs: Vec::with_capacity(grid.steps()),
        stats: Vec::with_capacity(grid.steps()),
    };
    let mut cache = JacobianCache::default();
    let mut exact: Option<(f64, LinearSolver)> = None;
    for step in 0..grid.steps() {
        let (ta, tb) = (grid.time(step), grid.time(step + 1));
        let tm = 0.5 * (ta + tb);
        let u = input(tm);
        if u.len() != sys.input_dim() {
            return Err(Error::dim("input", sys.input_dim(), u.len()));
        }
        let xm = traj.states.last().expect("nonempty").clone();
        let h = tb - ta;
        let f = |xp: &DVector<f64>| -> Result<DVector<f64>> {
            let mid = (xp + &xm) * 0.5;
            let xdot = (xp - &xm) / h;
            sys.residual(tm, &mid, &xdot, &u)
        };
        let threshold = opts.newton.atol + opts.newton.rtol * xm.norm();
        if exact.as_ref().is_none_or(|(he, _)| *he != h) {
            exact = match sys.midpoint_jacobian(h) {
                Some(Ok(j)) => Some((h, j)),
                _ => None,
            };
        }
        let outcome = if let Some((_, j)) = &exact {
            // the step equation is affine in x₊, so one exact Newton step solves it
            let direct = f(&xm).and_then(|r| j.solve(&r)).map(|d| &xm - d);
            let mut c = JacobianCache { solver: Some(j.clone()) };
            match direct {
                Ok(guess) if finite(&guess) => newton_iterate(&f, &guess, threshold, &opts.newton, &pattern, Some(&mut c)).map(|mut o| {
                    o.iterations += 1;
                    o
                }),
                _ => newton_iterate(&f, &xm, threshold, &opts.newton, &pattern, Some(&mut c)),
            }
        } else {
            newton_iterate(&f, &xm, threshold, &opts.newton, &pattern, opts.reuse_jacobian.then_some(&mut cache))
        };
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                return Err(Error::StepFailure {
                    step,
                    time: ta,
                    source: Box::new(e),
                    partial: Box::new(traj),
                })
            }
        };
        let norm = outcome.root.norm();
        traj.times.push(tb);
        traj.states.push(outcome.root);
        traj.inputs.push(u);
        traj.stats.push(StepStats {
            iterations: outcome.iterations,
            residual_norm: outcome.residual_norm,
            jacobian_evaluations: outcome.jacobian_evaluations,
        });
        if !norm.is_finite() || norm > opts.blowup_threshold {
            return Err(Error::BlowUp {
                time: tb,
                norm,
                partial: Box::new(traj),
            });
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Op;
    use crate::system::PhLti;
    use nalgebra::dmatrix;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn grid_validation() {
        let g = TimeGrid::new(0.0, 1.2, 1e-3).unwrap();
        assert_eq!(g.steps(), 1200);
        assert_eq!(g.time(1200), 1.2);
        assert!(TimeGrid::new(0.0, 0.0, 1e-3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0.3).is_err());
        assert!(TimeGrid::new(0.0, 1.0, -0.1).is_err());
        assert_eq!(TimeGrid::new(0.0, 1.2, 2e-4).unwrap().steps(), 6000);
    }

    #[test]
    fn newton_examples() {
        let c = NewtonControls::default();
        let r = newton_solve(|x| x.add_scalar(-1.0), &v(&[0.0]), &c).unwrap();
        assert_eq!(r.iterations, 1);
        assert!((r.root[0] - 1.0).abs() < 1e-7);
        let r = newton_solve(|x| v(&[x[0] * x[0] - 4.0]), &v(&[3.0]), &c).unwrap();
        assert!((r.root[0] - 2.0).abs() <= 1e-10);
        let err = newton_solve(|x| v(&[x[0] * x[0] + 1.0]), &v(&[0.5]), &c).unwrap_err();
        assert!(
            matches!(err, Error::LineSearch { .. } | Error::NewtonMaxIter { .. } | Error::SingularJacobian { .. }),
            "{err:?}"
        );
    }

    #[test]
    fn singular_jacobian_is_reported() {
        let c = NewtonControls::default();
        let err = newton_solve(|x| v(&[1.0 + 0.0 * x[0], x[1]]), &v(&[0.0, 1.0]), &c).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }), "{err:?}");
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let sys = FnSystem::explicit(1, |_, _| v(&[0.0]));
        let g = TimeGrid::new(0.0, 1.0, 0.1).unwrap();
        let tr = integrate_midpoint(&sys, &g, &v(&[1.0]), &|_| DVector::zeros(0), &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.len(), 11);
        assert!(tr.states.iter().all(|x| x[0] == 1.0));
    }

    #[test]
    fn harmonic_energy_conserved() {
        let sys = PhSystem::Lti(
            PhLti::from_dense(
                DMatrix::identity(2, 2),
                dmatrix![0.0, 1.0; -1.0, 0.0],
                DMatrix::zeros(2, 2),
                DMatrix::identity(2, 2),
                DMatrix::zeros(2, 2),
                dmatrix![1.0; 0.0],
            )
            .unwrap(),
        );
        let g = TimeGrid::new(0.0, 5.0, 0.05).unwrap();
        let tr = integrate_midpoint(&sys, &g, &v(&[1.0, 0.5]), &|_| v(&[0.0]), &IntegratorOptions::default()).unwrap();
        let h0 = 0.5 * tr.states[0].norm_squared();
        for w in tr.states.windows(2) {
            let (a, b) = (0.5 * w[0].norm_squared(), 0.5 * w[1].norm_squared());
            assert!((a - b).abs() <= 1e-12, "{a} {b}");
        }
        assert!((0.5 * tr.states.last().unwrap().norm_squared() - h0).abs() < 1e-11);
    }

    #[test]
    fn quadratic_blow_up_detected() {
        let sys = FnSystem::explicit(1, |_, x| v(&[x[0] * x[0]]));
        let g = TimeGrid::new(0.0, 2.0, 1e-3).unwrap();
        let opts = IntegratorOptions {
            blowup_threshold: 100.0,
            ..Default::default()
        };
        match integrate_midpoint(&sys, &g, &v(&[1.0]), &|_| DVector::zeros(0), &opts) {
            Err(Error::BlowUp { time, partial, .. }) => {
                assert!(time < 1.0 + 1e-9, "{time}");
                assert!(partial.len() > 900);
            }
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn banded_pattern_matches_dense() {
        let n = 100;
        let op = Op::sparse_from_triplets(
            n,
            n,
            (0..n).flat_map(|i| {
                let mut t = vec![(i, i, -2.0)];
                if i > 0 {
                    t.push((i, i - 1, 1.0));
                }
                if i + 1 < n {
                    t.push((i, i + 1, 0.7));
                }
                t
            }),
        );
        let sys = PhSystem::Lti(PhLti::new(Op::Identity(n), op.clone(), Op::Zero(n, n), Op::Identity(n), Op::Zero(n, n), Op::Zero(n, 0)).unwrap());
        assert!(matches!(ImplicitSystem::pattern(&sys), JacobianPattern::Banded { .. }));
        let dense = FnSystem::new(n, 0, move |_, x, xd, _| xd - op.mul_vec(x));
        let g = TimeGrid::new(0.0, 0.5, 0.01).unwrap();
        let x0 = DVector::from_fn(n, |i, _| (i as f64 * 0.3).sin());
        let a = integrate_midpoint(&sys, &g, &x0, &|_| DVector::zeros(0), &IntegratorOptions::default()).unwrap();
        let b = integrate_midpoint(&dense, &g, &x0, &|_| DVector::zeros(0), &IntegratorOptions::default()).unwrap();
        assert!((a.states.last().unwrap() - b.states.last().unwrap()).norm() < 1e-9);
    }

    #[test]
    fn coloring_separates_overlapping_columns() {
        let p = SparsityPattern::new(4, vec![vec![0, 1], vec![1, 2], vec![2, 3], vec![3]]);
        for g in &p.groups {
            let mut seen = [false; 4];
            for &j in g {
                for &i in &p.rows_of[j] {
                    assert!(!seen[i]);
                    seen[i] = true;
                }
            }
        }
        assert_eq!(p.groups.len(), 2);
    }
}
