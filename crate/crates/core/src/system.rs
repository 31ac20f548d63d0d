//! Port-Hamiltonian system descriptions and their structural checks.

use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eig, norm2, Op};

pub type TimeOp = Arc<dyn Fn(f64) -> Op + Send + Sync>;
pub type StateOp = Arc<dyn Fn(f64, &DVector<f64>) -> Op + Send + Sync>;
pub type StateVec = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type StateScalar = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;

/// `E ẋ = ((J − R)Q − K)x + Bu`, `y = BᵀQx`.
#[derive(Clone)]
pub struct PhLti {
    pub e: Op,
    pub j: Op,
    pub r: Op,
    pub q: Op,
    pub k: Op,
    pub b: Op,
    drift_op: Arc<OnceLock<Op>>,
}

impl fmt::Debug for PhLti {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhLti")
            .field("n", &self.dim())
            .field("m", &self.ports())
            .finish()
    }
}

fn check_square(name: &str, op: &Op, n: usize) -> Result<()> {
    if op.shape() != (n, n) {
        return Err(Error::dim(name, format!("{n}x{n}"), format!("{}x{}", op.nrows(), op.ncols())));
    }
    Ok(())
}

impl PhLti {
    pub fn new(e: Op, j: Op, r: Op, q: Op, k: Op, b: Op) -> Result<Self> {
        let n = j.nrows();
        for (name, op) in [("E", &e), ("J", &j), ("R", &r), ("Q", &q), ("K", &k)] {
            check_square(name, op, n)?;
        }
        if b.nrows() != n {
            return Err(Error::dim("B", format!("{n} rows"), b.nrows()));
        }
        Ok(PhLti {
            e,
            j,
            r,
            q,
            k,
            b,
            drift_op: Arc::new(OnceLock::new()),
        })
    }

    pub fn from_dense(
        e: DMatrix<f64>,
        j: DMatrix<f64>,
        r: DMatrix<f64>,
        q: DMatrix<f64>,
        k: DMatrix<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self> {
        Self::new(Op::Dense(e), Op::Dense(j), Op::Dense(r), Op::Dense(q), Op::Dense(k), Op::Dense(b))
    }

    pub fn dim(&self) -> usize {
        self.j.nrows()
    }

    pub fn ports(&self) -> usize {
        self.b.ncols()
    }

    /// `(J − R)Q − K`, cached. Sparse when every factor is sparse or structured.
    pub fn system_op(&self) -> &Op {
        self.drift_op.get_or_init(|| {
            let dense_any = [&self.j, &self.r, &self.q, &self.k]
                .iter()
                .any(|o| matches!(o, Op::Dense(_)));
            if dense_any || self.dim() <= 64 {
                let a = (self.j.to_dense() - self.r.to_dense()) * self.q.to_dense() - self.k.to_dense();
                return Op::Dense(a);
            }
            let jr = sparse_sub(&self.j, &self.r);
            let jrq = sparse_mul(&jr, &self.q);
            Op::Sparse(Arc::new(sparse_sub_csr(&jrq, &to_csr(&self.k))))
        })
    }

    /// `H(x) = ½ xᵀEᵀQx`
    pub fn hamiltonian(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.e.mul_vec(x).dot(&self.q.mul_vec(x))
    }

    pub fn read_csv_dir(dir: &Path) -> Result<Self> {
        let load = |name: &str| -> Result<DMatrix<f64>> { crate::io::read_matrix_csv(&dir.join(format!("{name}.csv"))) };
        let j = load("J")?;
        let n = j.nrows();
        let opt = |name: &str, default: DMatrix<f64>| -> Result<DMatrix<f64>> {
            let p = dir.join(format!("{name}.csv"));
            if p.exists() {
                crate::io::read_matrix_csv(&p)
            } else {
                Ok(default)
            }
        };
        let e = opt("E", DMatrix::identity(n, n))?;
        let q = opt("Q", DMatrix::identity(n, n))?;
        let k = opt("K", DMatrix::zeros(n, n))?;
        let r = load("R")?;
        let b = load("B")?;
        Self::from_dense(e, j, r, q, k, b)
    }

    pub fn write_csv_dir(&self, dir: &Path) -> Result<()> {
        for (name, op) in [("E", &self.e), ("J", &self.j), ("R", &self.r), ("Q", &self.q), ("K", &self.k), ("B", &self.b)] {
            crate::io::write_matrix_csv(&dir.join(format!("{name}.csv")), &op.to_dense())?;
        }
        Ok(())
    }
}

fn to_csr(op: &Op) -> nalgebra_sparse::CsrMatrix<f64> {
    match op {
        Op::Sparse(m) => (**m).clone(),
        other => {
            let d = other.to_dense();
            nalgebra_sparse::CsrMatrix::from(&d)
        }
    }
}

fn sparse_sub_csr(
    a: &nalgebra_sparse::CsrMatrix<f64>,
    b: &nalgebra_sparse::CsrMatrix<f64>,
) -> nalgebra_sparse::CsrMatrix<f64> {
    a - b
}

fn sparse_sub(a: &Op, b: &Op) -> nalgebra_sparse::CsrMatrix<f64> {
    sparse_sub_csr(&to_csr(a), &to_csr(b))
}

fn sparse_mul(a: &nalgebra_sparse::CsrMatrix<f64>, b: &Op) -> nalgebra_sparse::CsrMatrix<f64> {
    match b {
        Op::Identity(_) => a.clone(),
        _ => a * &to_csr(b),
    }
}

/// Time-varying linear system; every coefficient is produced on demand.
#[derive(Clone)]
pub struct PhLtv {
    pub n: usize,
    pub m: usize,
    pub e: TimeOp,
    pub j: TimeOp,
    pub r: TimeOp,
    pub q: TimeOp,
    pub k: TimeOp,
    pub b: TimeOp,
    /// Derivative of `QᵀE` in time.
    pub d_dt_qte: TimeOp,
}

impl fmt::Debug for PhLtv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhLtv").field("n", &self.n).field("m", &self.m).finish()
    }
}

impl PhLtv {
    /// Wrap a time-invariant system.
    pub fn from_lti(sys: &PhLti) -> Self {
        let n = sys.dim();
        let c = |op: &Op| -> TimeOp {
            let op = op.clone();
            Arc::new(move |_| op.clone())
        };
        PhLtv {
            n,
            m: sys.ports(),
            e: c(&sys.e),
            j: c(&sys.j),
            r: c(&sys.r),
            q: c(&sys.q),
            k: c(&sys.k),
            b: c(&sys.b),
            d_dt_qte: Arc::new(move |_| Op::Zero(n, n)),
        }
    }

    pub fn check_dims(&self, t: f64) -> Result<()> {
        let n = self.n;
        check_square("E", &(self.e)(t), n)?;
        check_square("J", &(self.j)(t), n)?;
        check_square("R", &(self.r)(t), n)?;
        check_square("Q", &(self.q)(t), n)?;
        check_square("K", &(self.k)(t), n)?;
        check_square("d_dt_QtE", &(self.d_dt_qte)(t), n)?;
        let b = (self.b)(t);
        if b.shape() != (n, self.m) {
            return Err(Error::dim("B", format!("{n}x{}", self.m), format!("{}x{}", b.nrows(), b.ncols())));
        }
        Ok(())
    }
}

/// `E(t,x)ẋ + 𝔯(t,x) = (J − R)(t,x) Q(t,x) x + B(t,x) u`.
#[derive(Clone)]
pub struct PhNonlinearQ {
    pub n: usize,
    pub m: usize,
    pub e: StateOp,
    pub j: StateOp,
    pub r: StateOp,
    pub q: StateOp,
    pub drift: StateVec,
    pub b: StateOp,
    pub hamiltonian: StateScalar,
    pub grad_hamiltonian: Option<StateVec>,
    /// Known constants `(c₂, c₃)` with `c₂‖x‖² ≤ 2H ≤ c₃‖x‖²`, if available.
    pub norm_equivalence: Option<(f64, f64)>,
    /// Structural nonzeros of the residual Jacobian, for colored finite differences.
    pub sparsity: Option<Arc<crate::timestep::SparsityPattern>>,
}

impl fmt::Debug for PhNonlinearQ {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhNonlinearQ").field("n", &self.n).field("m", &self.m).finish()
    }
}

impl PhNonlinearQ {
    pub fn from_ltv(sys: &PhLtv) -> Self {
        let s1 = sys.clone();
        let s2 = sys.clone();
        let (e, j, r, q, b) = (sys.e.clone(), sys.j.clone(), sys.r.clone(), sys.q.clone(), sys.b.clone());
        PhNonlinearQ {
            n: sys.n,
            m: sys.m,
            e: Arc::new(move |t, _| e(t)),
            j: Arc::new(move |t, _| j(t)),
            r: Arc::new(move |t, _| r(t)),
            q: Arc::new(move |t, _| q(t)),
            b: Arc::new(move |t, _| b(t)),
            drift: Arc::new(move |t, x| (s1.k)(t).mul_vec(x)),
            hamiltonian: Arc::new(move |t, x| 0.5 * (s2.e)(t).mul_vec(x).dot(&(s2.q)(t).mul_vec(x))),
            grad_hamiltonian: None,
            norm_equivalence: None,
            sparsity: None,
        }
    }

    pub fn from_lti(sys: &PhLti) -> Self {
        let mut out = Self::from_ltv(&PhLtv::from_lti(sys));
        let (e, q) = (sys.e.clone(), sys.q.clone());
        out.grad_hamiltonian = Some(Arc::new(move |_, x| e.tr_mul_vec(&q.mul_vec(x))));
        out
    }

    pub fn check_dims(&self, t: f64, x: &DVector<f64>) -> Result<()> {
        let n = self.n;
        if x.len() != n {
            return Err(Error::dim("state", n, x.len()));
        }
        check_square("E", &(self.e)(t, x), n)?;
        check_square("J", &(self.j)(t, x), n)?;
        check_square("R", &(self.r)(t, x), n)?;
        check_square("Q", &(self.q)(t, x), n)?;
        let d = (self.drift)(t, x);
        if d.len() != n {
            return Err(Error::dim("r_drift", n, d.len()));
        }
        let b = (self.b)(t, x);
        if b.shape() != (n, self.m) {
            return Err(Error::dim("B", format!("{n}x{}", self.m), format!("{}x{}", b.nrows(), b.ncols())));
        }
        Ok(())
    }
}

/// Tagged family of system classes.
#[derive(Clone, Debug)]
pub enum PhSystem {
    Lti(PhLti),
    Ltv(PhLtv),
    NonlinearQ(PhNonlinearQ),
}

/// All coefficients at one point `(t, x)`.
#[derive(Clone, Debug)]
pub struct PointCoefficients {
    pub e: Op,
    pub j: Op,
    pub r: Op,
    pub q: Op,
    pub b: Op,
    pub drift: DVector<f64>,
}

impl PhSystem {
    pub fn dim(&self) -> usize {
        match self {
            PhSystem::Lti(s) => s.dim(),
            PhSystem::Ltv(s) => s.n,
            PhSystem::NonlinearQ(s) => s.n,
        }
    }

    pub fn ports(&self) -> usize {
        match self {
            PhSystem::Lti(s) => s.ports(),
            PhSystem::Ltv(s) => s.m,
            PhSystem::NonlinearQ(s) => s.m,
        }
    }

    pub fn is_linear(&self) -> bool {
        !matches!(self, PhSystem::NonlinearQ(_))
    }

    pub fn at(&self, t: f64, x: &DVector<f64>) -> PointCoefficients {
        match self {
            PhSystem::Lti(s) => PointCoefficients {
                e: s.e.clone(),
                j: s.j.clone(),
                r: s.r.clone(),
                q: s.q.clone(),
                b: s.b.clone(),
                drift: s.k.mul_vec(x),
            },
            PhSystem::Ltv(s) => PointCoefficients {
                e: (s.e)(t),
                j: (s.j)(t),
                r: (s.r)(t),
                q: (s.q)(t),
                b: (s.b)(t),
                drift: (s.k)(t).mul_vec(x),
            },
            PhSystem::NonlinearQ(s) => PointCoefficients {
                e: (s.e)(t, x),
                j: (s.j)(t, x),
                r: (s.r)(t, x),
                q: (s.q)(t, x),
                b: (s.b)(t, x),
                drift: (s.drift)(t, x),
            },
        }
    }

    /// `K(t)` for the linear classes.
    pub fn k_op(&self, t: f64) -> Option<Op> {
        match self {
            PhSystem::Lti(s) => Some(s.k.clone()),
            PhSystem::Ltv(s) => Some((s.k)(t)),
            PhSystem::NonlinearQ(_) => None,
        }
    }

    pub fn hamiltonian(&self, t: f64, x: &DVector<f64>) -> f64 {
        match self {
            PhSystem::Lti(s) => s.hamiltonian(x),
            PhSystem::Ltv(s) => 0.5 * (s.e)(t).mul_vec(x).dot(&(s.q)(t).mul_vec(x)),
            PhSystem::NonlinearQ(s) => (s.hamiltonian)(t, x),
        }
    }

    /// `∇ₓH`, from the callback when present, otherwise central differences.
    pub fn grad_hamiltonian(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        if let PhSystem::NonlinearQ(s) = self {
            if let Some(g) = &s.grad_hamiltonian {
                return g(t, x);
            }
        }
        fd_gradient(|y| self.hamiltonian(t, y), x)
    }

    /// `E ẋ + 𝔯 − (J − R)Qx − Bu`
    pub fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        if let PhSystem::Lti(s) = self {
            let mut res = s.e.mul_vec(xdot) - s.system_op().mul_vec(x);
            if s.ports() > 0 {
                res -= s.b.mul_vec(u);
            }
            return res;
        }
        let c = self.at(t, x);
        let z = c.q.mul_vec(x);
        let mut res = c.e.mul_vec(xdot) + c.drift - c.j.mul_vec(&z) + c.r.mul_vec(&z);
        if self.ports() > 0 {
            res -= c.b.mul_vec(u);
        }
        res
    }

    /// Sparsity of `∂residual/∂x` and `∂residual/∂ẋ` when it is banded.
    pub fn jacobian_band(&self) -> Option<(usize, usize)> {
        match self {
            PhSystem::Lti(s) => {
                let (a, b) = s.system_op().bandwidth()?;
                let (c, d) = s.e.bandwidth()?;
                Some((a.max(c), b.max(d)))
            }
            _ => None,
        }
    }
}

/// Central-difference gradient with per-component steps `ε^{1/3}·(1+|xᵢ|)`, Richardson-extrapolated.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut y = x.clone();
    let central = |i: usize, h: f64, y: &mut DVector<f64>| {
        let xi = y[i];
        y[i] = xi + h;
        let fp = f(y);
        y[i] = xi - h;
        let fm = f(y);
        y[i] = xi;
        (fp - fm) / (2.0 * h)
    };
    for i in 0..x.len() {
        // Richardson extrapolation of two central differences
        let h = f64::EPSILON.cbrt() * (1.0 + x[i].abs());
        let coarse = central(i, h, &mut y);
        let fine = central(i, 0.5 * h, &mut y);
        g[i] = (4.0 * fine - coarse) / 3.0;
    }
    g
}

/// Relative tolerances used by [`validate`].
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub skew: f64,
    pub psd: f64,
    pub gradient: f64,
    pub time_derivative_fd: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            skew: 1e-10,
            psd: 1e-8,
            gradient: 1e-5,
            time_derivative_fd: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Check {
    pub name: String,
    pub violation: f64,
    pub pass: bool,
    #[serde(skip)]
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl ValidationReport {
    fn from_checks(checks: Vec<Check>) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        ValidationReport { checks, pass }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Accumulates the worst violation per named check over all samples.
#[derive(Default)]
struct CheckSet(Vec<Check>);

impl CheckSet {
    fn record(&mut self, name: &str, violation: f64, tolerance: f64) {
        let pass = violation <= tolerance;
        if let Some(c) = self.0.iter_mut().find(|c| c.name == name) {
            c.pass &= pass;
            if violation > c.violation || violation.is_nan() {
                c.violation = violation;
                c.tolerance = tolerance;
            }
        } else {
            self.0.push(Check {
                name: name.to_string(),
                violation,
                pass,
                tolerance,
            });
        }
    }

    fn skew(&mut self, name: &str, a: &DMatrix<f64>, tol: f64) {
        let v = (a + a.transpose()).norm();
        self.record(name, v, tol * (1.0 + a.norm()));
    }

    fn symmetric(&mut self, name: &str, a: &DMatrix<f64>, tol: f64) {
        let v = (a - a.transpose()).norm();
        self.record(name, v, tol * (1.0 + a.norm()));
    }

    fn psd(&mut self, name: &str, a: &DMatrix<f64>, tol: f64) {
        let v = (-min_sym_eig(a)).max(0.0);
        self.record(name, v, tol * (1.0 + norm2(a)));
    }

    fn near(&mut self, name: &str, a: &DVector<f64>, b: &DVector<f64>, tol: f64) {
        let v = (a - b).norm() / (1.0 + b.norm());
        self.record(name, v, tol);
    }
}

fn linear_pointwise(cs: &mut CheckSet, e: &Op, j: &Op, r: &Op, q: &Op, k: &Op, tol: &Tolerances) {
    let (e, j, r, q, k) = (e.to_dense(), j.to_dense(), r.to_dense(), q.to_dense(), k.to_dense());
    cs.skew("J skew-symmetric", &j, tol.skew);
    cs.symmetric("R symmetric", &r, tol.skew);
    cs.psd("R positive semidefinite", &r, tol.psd);
    let etq = e.transpose() * &q;
    cs.symmetric("E^T Q symmetric", &etq, tol.skew);
    cs.psd("E^T Q positive semidefinite", &etq, tol.psd);
    cs.skew("Q^T K skew-symmetric", &(q.transpose() * k), tol.skew);
}

/// Check the structural conditions of the system's class at the given samples.
pub fn validate(system: &PhSystem, samples: &[(f64, DVector<f64>)], tol: &Tolerances) -> Result<ValidationReport> {
    let mut cs = CheckSet::default();
    match system {
        PhSystem::Lti(s) => {
            linear_pointwise(&mut cs, &s.e, &s.j, &s.r, &s.q, &s.k, tol);
        }
        PhSystem::Ltv(s) => {
            if samples.is_empty() {
                return Err(Error::InvalidParameter("no sample points".into()));
            }
            for (t, _) in samples {
                let t = *t;
                s.check_dims(t)?;
                let (e, q, k) = ((s.e)(t), (s.q)(t), (s.k)(t));
                linear_pointwise(&mut cs, &e, &(s.j)(t), &(s.r)(t), &q, &k, tol);
                let (qd, kd) = (q.to_dense(), k.to_dense());
                let target = qd.transpose() * &kd + kd.transpose() * &qd;
                let given = (s.d_dt_qte)(t).to_dense();
                let scale = 1.0 + given.norm().max(target.norm());
                cs.record("d/dt(Q^T E) = Q^T K + K^T Q", (&given - &target).norm(), tol.skew * scale);
                let h = 1e-5 * (1.0 + t.abs());
                let qte = |t: f64| (s.q)(t).to_dense().transpose() * (s.e)(t).to_dense();
                let fd = (qte(t + h) - qte(t - h)) / (2.0 * h);
                cs.record(
                    "d/dt(Q^T E) finite-difference consistency",
                    (&fd - &given).norm(),
                    tol.time_derivative_fd * scale,
                );
            }
        }
        PhSystem::NonlinearQ(s) => {
            if samples.is_empty() {
                return Err(Error::InvalidParameter("no sample points".into()));
            }
            for (t, x) in samples {
                let t = *t;
                s.check_dims(t, x)?;
                let c = system.at(t, x);
                let (j, r) = (c.j.to_dense(), c.r.to_dense());
                cs.skew("J skew-symmetric", &j, tol.skew);
                cs.symmetric("R symmetric", &r, tol.skew);
                cs.psd("R positive semidefinite", &r, tol.psd);
                let z = c.q.mul_vec(x);
                let etqx = c.e.tr_mul_vec(&z);
                let grad = system.grad_hamiltonian(t, x);
                cs.near("grad H = E^T Q x", &grad, &etqx, tol.gradient);
                let ht = t.abs().max(1.0) * f64::EPSILON.cbrt();
                let dt_h = ((s.hamiltonian)(t + ht, x) - (s.hamiltonian)(t - ht, x)) / (2.0 * ht);
                let target = c.drift.dot(&z);
                let h_val = (s.hamiltonian)(t, x).abs();
                let v = (dt_h - target).abs() / (1.0 + target.abs() + h_val);
                cs.record("dH/dt = r^T Q x", v, tol.gradient);
            }
        }
    }
    Ok(ValidationReport::from_checks(cs.0))
}

/// `½ xᵀEᵀQx`
pub fn hamiltonian_quadratic(system: &PhLti, x: &DVector<f64>) -> Result<f64> {
    if x.len() != system.dim() {
        return Err(Error::dim("state", system.dim(), x.len()));
    }
    Ok(system.hamiltonian(x))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PowerTerms {
    pub dissipation: f64,
    pub supply: f64,
    pub output: DVector<f64>,
}

/// Dissipation `zᵀRz` and supply `yᵀu` with `z = Qx`, `y = Bᵀz`.
pub fn dissipation_supply(system: &PhSystem, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> Result<PowerTerms> {
    if x.len() != system.dim() {
        return Err(Error::dim("state", system.dim(), x.len()));
    }
    if u.len() != system.ports() {
        return Err(Error::dim("input", system.ports(), u.len()));
    }
    let c = system.at(t, x);
    let z = c.q.mul_vec(x);
    let dissipation = z.dot(&c.r.mul_vec(&z));
    let output = c.b.tr_mul_vec(&z);
    let supply = output.dot(u);
    Ok(PowerTerms {
        dissipation,
        supply,
        output,
    })
}

pub const EQUILIBRIUM_TOL: f64 = 1e-12;

/// Whether `x = 0` satisfies `𝔯(t,0) = (J − R)(t,0) Q(t,0)·0` at every sampled time.
pub fn check_equilibrium_origin(system: &PhSystem, times: &[f64]) -> bool {
    let zero = DVector::zeros(system.dim());
    times.iter().all(|&t| {
        let c = system.at(t, &zero);
        let z = c.q.mul_vec(&zero);
        let rhs = c.j.mul_vec(&z) - c.r.mul_vec(&z);
        (c.drift - rhs).norm() <= EQUILIBRIUM_TOL
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn oscillator() -> PhLti {
        PhLti::from_dense(
            DMatrix::identity(2, 2),
            dmatrix![0.0, 1.0; -1.0, 0.0],
            dmatrix![1.0, 0.0; 0.0, 0.0],
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            dmatrix![1.0; 0.0],
        )
        .unwrap()
    }

    #[test]
    fn oscillator_passes_every_check() {
        let rep = validate(&PhSystem::Lti(oscillator()), &[], &Tolerances::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert_eq!(rep.checks.len(), 6);
    }

    #[test]
    fn indefinite_dissipation_fails_with_unit_violation() {
        let mut s = oscillator();
        s.r = Op::Dense(dmatrix![1.0, 0.0; 0.0, -1.0]);
        let rep = validate(&PhSystem::Lti(s), &[], &Tolerances::default()).unwrap();
        assert!(!rep.pass);
        let c = rep.check("R positive semidefinite").unwrap();
        assert!(!c.pass);
        assert!((c.violation - 1.0).abs() < 1e-14);
    }

    #[test]
    fn report_json_shape() {
        let rep = validate(&PhSystem::Lti(oscillator()), &[], &Tolerances::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert!(v["pass"].as_bool().unwrap());
        let first = &v["checks"][0];
        assert!(first["name"].is_string() && first["violation"].is_number() && first["pass"].is_boolean());
        assert_eq!(first.as_object().unwrap().len(), 3);
    }

    #[test]
    fn quadratic_hamiltonian_values() {
        let s = oscillator();
        assert_eq!(hamiltonian_quadratic(&s, &DVector::from_vec(vec![1.0, 2.0])).unwrap(), 2.5);
        assert_eq!(hamiltonian_quadratic(&s, &DVector::zeros(2)).unwrap(), 0.0);
        let mut s2 = oscillator();
        s2.e = Op::Dense(dmatrix![2.0, 0.0; 0.0, 1.0]);
        assert_eq!(hamiltonian_quadratic(&s2, &DVector::from_vec(vec![1.0, 1.0])).unwrap(), 1.5);
        assert!(hamiltonian_quadratic(&s2, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn power_terms_for_oscillator() {
        let sys = PhSystem::Lti(oscillator());
        let p = dissipation_supply(&sys, 0.0, &DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(p.dissipation, 1.0);
        assert_eq!(p.supply, 1.0);
        let p0 = dissipation_supply(&sys, 0.0, &DVector::from_vec(vec![0.3, -2.0]), &DVector::zeros(1)).unwrap();
        assert_eq!(p0.supply, 0.0);
        let mut lossless = oscillator();
        lossless.r = Op::Zero(2, 2);
        let p1 = dissipation_supply(&PhSystem::Lti(lossless), 0.0, &DVector::from_vec(vec![0.3, -2.0]), &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(p1.dissipation, 0.0);
    }

    #[test]
    fn equilibrium_checks() {
        assert!(check_equilibrium_origin(&PhSystem::Lti(oscillator()), &[0.0, 1.0]));
        let bad = PhNonlinearQ {
            n: 2,
            m: 0,
            e: Arc::new(|_, _| Op::Identity(2)),
            j: Arc::new(|_, _| Op::Zero(2, 2)),
            r: Arc::new(|_, _| Op::Zero(2, 2)),
            q: Arc::new(|_, _| Op::Identity(2)),
            drift: Arc::new(|_, _| DVector::from_vec(vec![1.0, 0.5])),
            b: Arc::new(|_, _| Op::Zero(2, 0)),
            hamiltonian: Arc::new(|_, x| 0.5 * x.norm_squared()),
            grad_hamiltonian: None,
            norm_equivalence: None,
            sparsity: None,
        };
        assert!(!check_equilibrium_origin(&PhSystem::NonlinearQ(bad), &[0.0]));
    }

    #[test]
    fn dimension_mismatch_names_field() {
        let err = PhLti::from_dense(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 3),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap_err();
        assert!(err.to_string().contains(" R:"), "{err}");
    }
}
