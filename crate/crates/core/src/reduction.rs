//! Reduced-order model construction and verification.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ansatz::Ansatz;
use crate::error::{Error, Result};
use crate::linalg::{lstsq_min_norm, min_sym_eig, op_condition_estimate, singular_extremes, LinearSolver, Op};
use crate::system::{fd_gradient, PhLti, PhLtv, PhNonlinearQ, PhSystem, PointCoefficients};
use crate::timestep::ImplicitSystem;

/// Threshold for invertibility and rank screens.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Structure {
    Preserving,
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RomKind {
    Lti,
    Ltv,
    Factorizable,
    SeparableLtv,
    SeparableNonlinear,
    GalerkinBaseline,
    PodGalerkin,
}

/// Reduced coefficients at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct RomCoefficients {
    pub e: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub b: DMatrix<f64>,
    /// Reduced `K̃` when the drift is linear, `𝔯̃ = K̃x̃`.
    pub k: Option<DMatrix<f64>>,
}

impl RomCoefficients {
    /// `(J̃ − R̃)Q̃x̃ + B̃u − 𝔯̃`
    pub fn rhs(&self, xt: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let z = &self.q * xt;
        let mut out = &self.j * &z - &self.r * &z - &self.drift;
        if self.b.ncols() > 0 {
            out += &self.b * u;
        }
        out
    }
}

type CoeffFn = Arc<dyn Fn(f64, &DVector<f64>) -> Result<RomCoefficients> + Send + Sync>;
type ScalarFn = Arc<dyn Fn(f64, &DVector<f64>) -> Result<f64> + Send + Sync>;
type PowerFn = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> Result<(f64, f64)> + Send + Sync>;

/// Reduced model `Ẽẋ̃ + 𝔯̃ = (J̃ − R̃)Q̃x̃ + B̃u` with reduced Hamiltonian `H̃`.
#[derive(Clone)]
pub struct Rom {
    r: usize,
    m: usize,
    pub structure: Structure,
    pub kind: RomKind,
    pub ansatz: Ansatz,
    coefficients: CoeffFn,
    hamiltonian: ScalarFn,
    power: Option<PowerFn>,
    /// `(Ẽ, (J̃ − R̃)Q̃ − K̃)` when the model is linear and time-invariant.
    constant: Option<Arc<(DMatrix<f64>, DMatrix<f64>)>>,
    pub warnings: Vec<String>,
}

impl fmt::Debug for Rom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rom")
            .field("r", &self.r)
            .field("m", &self.m)
            .field("kind", &self.kind)
            .field("structure", &self.structure)
            .finish()
    }
}

impl Rom {
    pub fn dim(&self) -> usize {
        self.r
    }

    pub fn ports(&self) -> usize {
        self.m
    }

    fn check(&self, xt: &DVector<f64>) -> Result<()> {
        if xt.len() != self.r {
            return Err(Error::dim("reduced state", self.r, xt.len()));
        }
        Ok(())
    }

    pub fn coefficients(&self, t: f64, xt: &DVector<f64>) -> Result<RomCoefficients> {
        self.check(xt)?;
        (self.coefficients)(t, xt)
    }

    pub fn hamiltonian(&self, t: f64, xt: &DVector<f64>) -> Result<f64> {
        self.check(xt)?;
        (self.hamiltonian)(t, xt)
    }

    /// `(dissipation, supply)`; structure-preserving models use `z̃ᵀR̃z̃` and `ỹᵀu`,
    /// baselines evaluate the full-order terms at the lifted state.
    pub fn dissipation_supply(&self, t: f64, xt: &DVector<f64>, u: &DVector<f64>) -> Result<(f64, f64)> {
        self.check(xt)?;
        if u.len() != self.m {
            return Err(Error::dim("input", self.m, u.len()));
        }
        if let Some(p) = &self.power {
            return p(t, xt, u);
        }
        let c = self.coefficients(t, xt)?;
        let z = &c.q * xt;
        let d = z.dot(&(&c.r * &z));
        let s = if self.m > 0 { (c.b.tr_mul(&z)).dot(u) } else { 0.0 };
        Ok((d, s))
    }

    pub fn lift(&self, t: f64, xt: &DVector<f64>) -> Result<DVector<f64>> {
        self.ansatz.lift(t, xt)
    }

    /// `ẋ̃` from the reduced state equation.
    pub fn derivative(&self, t: f64, xt: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let c = self.coefficients(t, xt)?;
        LinearSolver::new(&Op::Dense(c.e.clone()))?.solve(&c.rhs(xt, u))
    }

    /// Coefficient snapshot at the given probes, for debugging.
    pub fn snapshot_json(&self, probes: &[(f64, DVector<f64>)]) -> Result<serde_json::Value> {
        let mat = |m: &DMatrix<f64>| -> Vec<Vec<f64>> { (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect() };
        let mut out = Vec::new();
        for (t, xt) in probes {
            let c = self.coefficients(*t, xt)?;
            out.push(serde_json::json!({
                "t": t,
                "x": xt.as_slice(),
                "E": mat(&c.e),
                "J": mat(&c.j),
                "R": mat(&c.r),
                "Q": mat(&c.q),
                "r": c.drift.as_slice(),
                "B": mat(&c.b),
                "H": self.hamiltonian(*t, xt)?,
            }));
        }
        Ok(serde_json::json!({ "kind": self.kind, "structure": self.structure, "probes": out }))
    }
}

impl ImplicitSystem for Rom {
    fn dim(&self) -> usize {
        self.r
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn residual(&self, t: f64, x: &DVector<f64>, xdot: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let c = self.coefficients(t, x)?;
        Ok(&c.e * xdot - c.rhs(x, u))
    }
    fn midpoint_jacobian(&self, h: f64) -> Option<Result<LinearSolver>> {
        let c = self.constant.as_ref()?;
        Some(crate::linalg::factor_combination(1.0 / h, &Op::Dense(c.0.clone()), -0.5, &Op::Dense(c.1.clone())))
    }
}

fn rank_screen(v: &DMatrix<f64>) -> Result<()> {
    let (smax, smin) = singular_extremes(v);
    if smax == 0.0 || smin / smax < 1.0 / CONDITION_LIMIT {
        return Err(Error::RankDeficient {
            ratio: if smax == 0.0 { 0.0 } else { smin / smax },
        });
    }
    Ok(())
}

fn conditioning_warnings(e: &Op, q: &Op) -> Vec<String> {
    let mut w = Vec::new();
    for (name, op) in [("E", e), ("Q", q)] {
        let c = op_condition_estimate(op);
        if !(c < CONDITION_LIMIT) {
            w.push(format!("{name} is near singular (condition number {c:e})"));
        }
    }
    w
}

fn dense(op: &Op, rows: usize) -> DMatrix<f64> {
    if op.ncols() == 0 {
        DMatrix::zeros(rows, 0)
    } else {
        op.to_dense()
    }
}

/// Petrov–Galerkin projection with test basis `QVᵣ`.
pub fn reduce_lti(sys: &PhLti, vr: &DMatrix<f64>) -> Result<Rom> {
    let n = sys.dim();
    if vr.nrows() != n {
        return Err(Error::dim("basis rows", n, vr.nrows()));
    }
    rank_screen(vr)?;
    let warnings = conditioning_warnings(&sys.e, &sys.q);
    let qv = sys.q.mul_mat(vr);
    let qvt = qv.transpose();
    let e = &qvt * sys.e.mul_mat(vr);
    let j = &qvt * (sys.j.mul_mat(&qv) - sys.k.mul_mat(vr));
    let r = &qvt * sys.r.mul_mat(&qv);
    let b = &qvt * dense(&sys.b, n);
    let rr = vr.ncols();
    let constant = Arc::new((e.clone(), &j - &r));
    let coeffs = RomCoefficients {
        e: e.clone(),
        j,
        r,
        q: DMatrix::identity(rr, rr),
        drift: DVector::zeros(rr),
        b,
        k: Some(DMatrix::zeros(rr, rr)),
    };
    Ok(Rom {
        r: rr,
        m: sys.ports(),
        structure: Structure::Preserving,
        kind: RomKind::Lti,
        ansatz: Ansatz::LinearTI(vr.clone()),
        coefficients: Arc::new(move |_, xt| {
            let mut c = coeffs.clone();
            c.drift = DVector::zeros(xt.len());
            Ok(c)
        }),
        hamiltonian: Arc::new(move |_, xt| Ok(0.5 * xt.dot(&(&e * xt)))),
        power: None,
        constant: Some(constant),
        warnings,
    })
}

/// Plain Galerkin projection with test basis `Vᵣ`, no energy weighting.
pub fn reduce_pod_galerkin(sys: &PhLti, vr: &DMatrix<f64>) -> Result<Rom> {
    let n = sys.dim();
    if vr.nrows() != n {
        return Err(Error::dim("basis rows", n, vr.nrows()));
    }
    rank_screen(vr)?;
    let warnings = conditioning_warnings(&sys.e, &sys.q);
    let vt = vr.transpose();
    let qv = sys.q.mul_mat(vr);
    let e = &vt * sys.e.mul_mat(vr);
    let j = &vt * (sys.j.mul_mat(&qv) - sys.k.mul_mat(vr));
    let r = &vt * sys.r.mul_mat(&qv);
    let b = &vt * dense(&sys.b, n);
    let rr = vr.ncols();
    let constant = Arc::new((e.clone(), &j - &r));
    let coeffs = RomCoefficients {
        e,
        j,
        r,
        q: DMatrix::identity(rr, rr),
        drift: DVector::zeros(rr),
        b,
        k: Some(DMatrix::zeros(rr, rr)),
    };
    let energy = qv.tr_mul(&sys.e.mul_mat(vr));
    let energy = (&energy + energy.transpose()) * 0.5;
    let rq = &qv.transpose() * sys.r.mul_mat(&qv);
    let bq = dense(&sys.b, n).tr_mul(&qv);
    Ok(Rom {
        r: rr,
        m: sys.ports(),
        structure: Structure::Baseline,
        kind: RomKind::PodGalerkin,
        ansatz: Ansatz::LinearTI(vr.clone()),
        coefficients: Arc::new(move |_, xt| {
            let mut c = coeffs.clone();
            c.drift = DVector::zeros(xt.len());
            Ok(c)
        }),
        hamiltonian: Arc::new(move |_, xt| Ok(0.5 * xt.dot(&(&energy * xt)))),
        constant: Some(constant),
        power: Some(Arc::new(move |_, xt, u| {
            let d = xt.dot(&(&rq * xt));
            let s = if u.is_empty() { 0.0 } else { (&bq * xt).dot(u) };
            Ok((d, s))
        })),
        warnings,
    })
}

/// Time-varying basis; `K̃ = VᵣᵀQᵀ(KVᵣ + E·dVᵣ/dt)` enters through the drift.
pub fn reduce_ltv(sys: &PhLtv, a: &Ansatz) -> Result<Rom> {
    let (basis, d_dt, n, r) = match a {
        Ansatz::LinearTV { basis, d_dt, n, r } => (basis.clone(), d_dt.clone(), *n, *r),
        other => return Err(Error::UnsupportedVariant(format!("time-varying reduction needs a LinearTV ansatz, got {other:?}"))),
    };
    if n != sys.n {
        return Err(Error::dim("ansatz state dimension", sys.n, n));
    }
    sys.check_dims(0.0)?;
    let v0 = basis(0.0);
    if v0.shape() != (n, r) {
        return Err(Error::dim("basis", format!("{n}x{r}"), format!("{}x{}", v0.nrows(), v0.ncols())));
    }
    rank_screen(&v0)?;
    let warnings = conditioning_warnings(&(sys.e)(0.0), &(sys.q)(0.0));
    let s = sys.clone();
    let (b1, d1) = (basis.clone(), d_dt.clone());
    let coefficients: CoeffFn = Arc::new(move |t, xt| {
        let v = b1(t);
        let vd = d1(t);
        let (e, q) = ((s.e)(t), (s.q)(t));
        let qv = q.mul_mat(&v);
        let qvt = qv.transpose();
        let k = &qvt * ((s.k)(t).mul_mat(&v) + e.mul_mat(&vd));
        Ok(RomCoefficients {
            e: &qvt * e.mul_mat(&v),
            j: &qvt * (s.j)(t).mul_mat(&qv),
            r: &qvt * (s.r)(t).mul_mat(&qv),
            q: DMatrix::identity(r, r),
            drift: &k * xt,
            b: &qvt * dense(&(s.b)(t), n),
            k: Some(k),
        })
    });
    let s2 = sys.clone();
    let hamiltonian: ScalarFn = Arc::new(move |t, xt| {
        let x = basis(t) * xt;
        Ok(0.5 * (s2.e)(t).mul_vec(&x).dot(&(s2.q)(t).mul_vec(&x)))
    });
    Ok(Rom {
        r,
        m: sys.m,
        structure: Structure::Preserving,
        kind: RomKind::Ltv,
        ansatz: a.clone(),
        coefficients,
        hamiltonian,
        power: None,
        constant: None,
        warnings,
    })
}

/// State-dependent basis; `Ẽ = VᵣᵀQᵀE(Vᵣ + V̂ᵣx̃)`, `H̃ = H(t, Vᵣx̃)`.
pub fn reduce_factorizable(sys: &PhNonlinearQ, a: &Ansatz) -> Result<Rom> {
    let (n, r) = match a {
        Ansatz::Factorizable { n, r, .. } => (*n, *r),
        other => return Err(Error::UnsupportedVariant(format!("factorizable reduction needs a Factorizable ansatz, got {other:?}"))),
    };
    if n != sys.n {
        return Err(Error::dim("ansatz state dimension", sys.n, n));
    }
    let s = sys.clone();
    let an = a.clone();
    let coefficients: CoeffFn = Arc::new(move |t, xt| {
        let v = an.eval_basis(t, xt)?;
        let x = &v * xt;
        let c = PhSystem::NonlinearQ(s.clone()).at(t, &x);
        let qv = c.q.mul_mat(&v);
        let qvt = qv.transpose();
        let vh = an.eval_vhat(t, xt)?;
        let vdot_x = an.eval_d_dt(t, xt)? * xt;
        let drift = &qvt * (&c.drift + c.e.mul_vec(&vdot_x));
        Ok(RomCoefficients {
            e: &qvt * c.e.mul_mat(&(&v + vh)),
            j: &qvt * c.j.mul_mat(&qv),
            r: &qvt * c.r.mul_mat(&qv),
            q: DMatrix::identity(r, r),
            drift,
            b: &qvt * dense(&c.b, n),
            k: None,
        })
    });
    let s2 = sys.clone();
    let a2 = a.clone();
    let hamiltonian: ScalarFn = Arc::new(move |t, xt| Ok((s2.hamiltonian)(t, &a2.lift(t, xt)?)));
    Ok(Rom {
        r,
        m: sys.m,
        structure: Structure::Preserving,
        kind: RomKind::Factorizable,
        ansatz: a.clone(),
        coefficients,
        hamiltonian,
        power: None,
        constant: None,
        warnings: Vec::new(),
    })
}

/// Block assembly shared by the separable constructors.
///
/// `ta`, `tb` are the test matrices for the amplitude and path equations; the
/// trial side is always `QVₛ` for the interconnection and dissipation terms.
struct SeparableBlocks<'a> {
    ta: &'a DMatrix<f64>,
    tb: &'a DMatrix<f64>,
    qvs: &'a DMatrix<f64>,
    qw: &'a DMatrix<f64>,
    evs: &'a DMatrix<f64>,
    ew: &'a DMatrix<f64>,
    /// Use `Ẽ₁₂ᵀ` for the lower-left mass block instead of assembling it.
    mirror_e21: bool,
}

impl SeparableBlocks<'_> {
    fn assemble(&self, c: &PointCoefficients, drift: &DVector<f64>, n: usize) -> RomCoefficients {
        let (ra, rp) = (self.ta.ncols(), self.tb.ncols());
        let r = ra + rp;
        let tat = self.ta.transpose();
        let tbt = self.tb.transpose();
        let mut e = DMatrix::zeros(r, r);
        let e12 = &tat * self.ew;
        e.view_mut((0, 0), (ra, ra)).copy_from(&(&tat * self.evs));
        e.view_mut((0, ra), (ra, rp)).copy_from(&e12);
        if self.mirror_e21 {
            e.view_mut((ra, 0), (rp, ra)).copy_from(&e12.transpose());
        } else {
            e.view_mut((ra, 0), (rp, ra)).copy_from(&(&tbt * self.evs));
        }
        e.view_mut((ra, ra), (rp, rp)).copy_from(&(&tbt * self.ew));

        let jq = c.j.mul_mat(self.qvs);
        let j21 = &tbt * &jq;
        let mut j = DMatrix::zeros(r, r);
        j.view_mut((0, 0), (ra, ra)).copy_from(&(&tat * &jq));
        j.view_mut((0, ra), (ra, rp)).copy_from(&(-j21.transpose()));
        j.view_mut((ra, 0), (rp, ra)).copy_from(&j21);

        let rq = c.r.mul_mat(self.qvs);
        let r21 = &tbt * &rq;
        let mut rm = DMatrix::zeros(r, r);
        rm.view_mut((0, 0), (ra, ra)).copy_from(&(&tat * &rq));
        rm.view_mut((0, ra), (ra, rp)).copy_from(&r21.transpose());
        rm.view_mut((ra, 0), (rp, ra)).copy_from(&r21);
        rm.view_mut((ra, ra), (rp, rp)).copy_from(&(&tbt * c.r.mul_mat(self.qw)));

        let mut d = DVector::zeros(r);
        d.rows_mut(0, ra).copy_from(&(&tat * drift));
        d.rows_mut(ra, rp).copy_from(&(&tbt * drift));

        let bd = dense(&c.b, n);
        let mut b = DMatrix::zeros(r, bd.ncols());
        b.rows_mut(0, ra).copy_from(&(&tat * &bd));
        b.rows_mut(ra, rp).copy_from(&(&tbt * &bd));

        let mut q = DMatrix::zeros(r, r);
        for i in 0..ra {
            q[(i, i)] = 1.0;
        }
        RomCoefficients {
            e,
            j,
            r: rm,
            q,
            drift: d,
            b,
            k: None,
        }
    }
}

fn separable_map(a: &Ansatz, n: usize) -> Result<Arc<dyn crate::ansatz::SeparableMap>> {
    match a {
        Ansatz::Separable(s) => {
            if s.state_dim() != n {
                return Err(Error::dim("ansatz state dimension", n, s.state_dim()));
            }
            Ok(s.clone())
        }
        other => Err(Error::UnsupportedVariant(format!("separable reduction needs a Separable ansatz, got {other:?}"))),
    }
}

/// Separable ansatz on a linear time-varying system.
pub fn reduce_separable_ltv(sys: &PhLtv, a: &Ansatz) -> Result<Rom> {
    let map = separable_map(a, sys.n)?;
    sys.check_dims(0.0)?;
    let warnings = conditioning_warnings(&(sys.e)(0.0), &(sys.q)(0.0));
    let (ra, rp, n) = (map.r_alpha(), map.r_p(), sys.n);
    let s = sys.clone();
    let m1 = map.clone();
    let coefficients: CoeffFn = Arc::new(move |t, xt| {
        let alpha = xt.rows(0, ra).into_owned();
        let p = xt.rows(ra, rp).into_owned();
        let (vs, w) = m1.basis_and_vhat(&p, &alpha)?;
        let (e, q) = ((s.e)(t), (s.q)(t));
        let (qvs, qw) = (q.mul_mat(&vs), q.mul_mat(&w));
        let (evs, ew) = (e.mul_mat(&vs), e.mul_mat(&w));
        let c = PointCoefficients {
            e,
            j: (s.j)(t),
            r: (s.r)(t),
            q,
            b: (s.b)(t),
            drift: DVector::zeros(0),
        };
        let drift = (s.k)(t).mul_vec(&(&vs * &alpha));
        let blocks = SeparableBlocks {
            ta: &qvs,
            tb: &qw,
            qvs: &qvs,
            qw: &qw,
            evs: &evs,
            ew: &ew,
            mirror_e21: true,
        };
        Ok(blocks.assemble(&c, &drift, n))
    });
    let s2 = sys.clone();
    let m2 = map.clone();
    let hamiltonian: ScalarFn = Arc::new(move |t, xt| {
        let x = m2.basis(&xt.rows(ra, rp).into_owned())? * xt.rows(0, ra);
        Ok(0.5 * (s2.e)(t).mul_vec(&x).dot(&(s2.q)(t).mul_vec(&x)))
    });
    Ok(Rom {
        r: ra + rp,
        m: sys.m,
        structure: Structure::Preserving,
        kind: RomKind::SeparableLtv,
        ansatz: a.clone(),
        coefficients,
        hamiltonian,
        power: None,
        constant: None,
        warnings,
    })
}

fn separable_nonlinear(sys: &PhNonlinearQ, a: &Ansatz, weighted: bool) -> Result<Rom> {
    let map = separable_map(a, sys.n)?;
    let (ra, rp, n) = (map.r_alpha(), map.r_p(), sys.n);
    let sysw = PhSystem::NonlinearQ(sys.clone());
    let m1 = map.clone();
    let s1 = sysw.clone();
    let coefficients: CoeffFn = Arc::new(move |t, xt| {
        let alpha = xt.rows(0, ra).into_owned();
        let p = xt.rows(ra, rp).into_owned();
        let (vs, w) = m1.basis_and_vhat(&p, &alpha)?;
        let x = &vs * &alpha;
        let c = s1.at(t, &x);
        let (qvs, qw) = (c.q.mul_mat(&vs), c.q.mul_mat(&w));
        let (evs, ew) = (c.e.mul_mat(&vs), c.e.mul_mat(&w));
        let (ta, tb) = if weighted { (&qvs, &qw) } else { (&vs, &w) };
        let blocks = SeparableBlocks {
            ta,
            tb,
            qvs: &qvs,
            qw: &qw,
            evs: &evs,
            ew: &ew,
            mirror_e21: false,
        };
        Ok(blocks.assemble(&c, &c.drift, n))
    });
    let m2 = map.clone();
    let s2 = sys.clone();
    let hamiltonian: ScalarFn = Arc::new(move |t, xt| {
        let x = m2.basis(&xt.rows(ra, rp).into_owned())? * xt.rows(0, ra);
        Ok((s2.hamiltonian)(t, &x))
    });
    let power: Option<PowerFn> = if weighted {
        None
    } else {
        let m3 = map.clone();
        let s3 = sysw;
        Some(Arc::new(move |t, xt, u| {
            let x = m3.basis(&xt.rows(ra, rp).into_owned())? * xt.rows(0, ra);
            let pt = crate::system::dissipation_supply(&s3, t, &x, u)?;
            Ok((pt.dissipation, pt.supply))
        }))
    };
    Ok(Rom {
        r: ra + rp,
        m: sys.m,
        structure: if weighted { Structure::Preserving } else { Structure::Baseline },
        kind: if weighted { RomKind::SeparableNonlinear } else { RomKind::GalerkinBaseline },
        ansatz: a.clone(),
        coefficients,
        hamiltonian,
        power,
        constant: None,
        warnings: Vec::new(),
    })
}

/// Separable ansatz on a nonlinear system, residual orthogonal to `Q[Vₛ | V̂ₛα]`.
pub fn reduce_separable_nonlinear(sys: &PhNonlinearQ, a: &Ansatz) -> Result<Rom> {
    separable_nonlinear(sys, a, true)
}

/// Galerkin projection onto `[Vₛ | V̂ₛα]` without the `Q` weighting; not structure preserving.
pub fn reduce_galerkin_baseline(sys: &PhNonlinearQ, a: &Ansatz) -> Result<Rom> {
    separable_nonlinear(sys, a, false)
}

/// Worst-case structural defects of a reduced model over probe points.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StructureReport {
    pub probes: usize,
    /// max ‖J̃ + J̃ᵀ‖_F
    pub skew_defect: f64,
    /// max ‖J̃ + J̃ᵀ‖_F / (1 + ‖J̃‖_F)
    pub skew_defect_scaled: f64,
    /// max ‖R̃ − R̃ᵀ‖_F / (1 + ‖R̃‖_F)
    pub symmetry_defect_scaled: f64,
    /// min over probes of λ_min(½(R̃+R̃ᵀ))
    pub min_dissipation_eig: f64,
    /// min over probes of λ_min(½(R̃+R̃ᵀ)) / (1 + ‖R̃‖_F)
    pub min_dissipation_eig_scaled: f64,
    /// max relative error of ∇ₓ̃H̃ against ẼᵀQ̃x̃
    pub gradient_error: f64,
    /// max relative error of ∂ₜH̃ against 𝔯̃ᵀQ̃x̃
    pub time_derivative_error: f64,
}

impl StructureReport {
    pub fn passes(&self, skew_tol: f64, psd_tol: f64, grad_tol: f64) -> bool {
        self.skew_defect_scaled <= skew_tol
            && self.symmetry_defect_scaled <= skew_tol
            && self.min_dissipation_eig_scaled >= -psd_tol
            && self.gradient_error <= grad_tol
            && self.time_derivative_error <= grad_tol
    }
}

/// Evaluate structure conditions and Hamiltonian identities at the probes.
pub fn structure_report(rom: &Rom, probes: &[(f64, DVector<f64>)]) -> Result<StructureReport> {
    let mut rep = StructureReport {
        probes: probes.len(),
        skew_defect: 0.0,
        skew_defect_scaled: 0.0,
        symmetry_defect_scaled: 0.0,
        min_dissipation_eig: f64::INFINITY,
        min_dissipation_eig_scaled: f64::INFINITY,
        gradient_error: 0.0,
        time_derivative_error: 0.0,
    };
    for (t, xt) in probes {
        let t = *t;
        let c = rom.coefficients(t, xt)?;
        let skew = (&c.j + c.j.transpose()).norm();
        rep.skew_defect = rep.skew_defect.max(skew);
        rep.skew_defect_scaled = rep.skew_defect_scaled.max(skew / (1.0 + c.j.norm()));
        rep.symmetry_defect_scaled = rep.symmetry_defect_scaled.max((&c.r - c.r.transpose()).norm() / (1.0 + c.r.norm()));
        let ev = min_sym_eig(&c.r);
        rep.min_dissipation_eig = rep.min_dissipation_eig.min(ev);
        rep.min_dissipation_eig_scaled = rep.min_dissipation_eig_scaled.min(ev / (1.0 + c.r.norm()));

        let z = &c.q * xt;
        let target = c.e.tr_mul(&z);
        let failed = std::cell::RefCell::new(None);
        let grad = fd_gradient(
            |y| match rom.hamiltonian(t, y) {
                Ok(v) => v,
                Err(e) => {
                    failed.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            xt,
        );
        if let Some(e) = failed.into_inner() {
            return Err(e);
        }
        let scale = target.norm().max(grad.norm());
        let gerr = if scale == 0.0 { 0.0 } else { (&grad - &target).norm() / scale };
        rep.gradient_error = rep.gradient_error.max(gerr);

        let ht = 1e-4 * (1.0 + t.abs());
        let dh = (rom.hamiltonian(t + ht, xt)? - rom.hamiltonian(t - ht, xt)?) / (2.0 * ht);
        let td = c.drift.dot(&z);
        let scale = td.abs() + rom.hamiltonian(t, xt)?.abs();
        let terr = if scale == 0.0 { 0.0 } else { (dh - td).abs() / scale };
        rep.time_derivative_error = rep.time_derivative_error.max(terr);
    }
    Ok(rep)
}

/// Comparison at a single probe between the reduced-model derivative and the
/// weighted least-squares minimizer of the full-order residual.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimalityProbe {
    pub t: f64,
    pub degenerate: bool,
    pub deviation: f64,
    /// ‖ℛ(ẋ̃_rom)‖ in the `E⁻ᵀQᵀ` norm.
    pub residual_rom: f64,
    /// ‖ℛ(η*)‖ in the `E⁻ᵀQᵀ` norm.
    pub residual_optimal: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct OptimalityReport {
    pub probes: usize,
    pub degenerate: usize,
    /// Max relative deviation over nondegenerate probes.
    pub max_deviation: f64,
    pub max_residual_rom: f64,
    pub max_residual_optimal: f64,
    pub entries: Vec<OptimalityProbe>,
}

impl OptimalityReport {
    pub fn push(&mut self, p: OptimalityProbe) {
        self.probes += 1;
        if p.degenerate {
            self.degenerate += 1;
        } else {
            self.max_deviation = self.max_deviation.max(p.deviation);
            self.max_residual_rom = self.max_residual_rom.max(p.residual_rom);
            self.max_residual_optimal = self.max_residual_optimal.max(p.residual_optimal);
        }
        self.entries.push(p);
    }
}

/// Fourth-order central difference (Richardson of two central quotients).
fn richardson(f: &dyn Fn(f64) -> Result<DVector<f64>>, h: f64) -> Result<DVector<f64>> {
    let d = |h: f64| -> Result<DVector<f64>> { Ok((f(h)? - f(-h)?) / (2.0 * h)) };
    let d1 = d(h)?;
    let d2 = d(0.5 * h)?;
    Ok((d2 * 4.0 - d1) / 3.0)
}

/// Solve the weighted least-squares problem behind the reduced model directly and
/// compare with the reduced-model derivative.
pub fn verify_optimality(rom: &Rom, sys: &PhSystem, t: f64, xt: &DVector<f64>, u: &DVector<f64>) -> Result<OptimalityReport> {
    if !sys.is_linear() {
        return Err(Error::UnsupportedVariant("optimality check needs a linear system".into()));
    }
    let n = sys.dim();
    let r = rom.dim();
    let a = &rom.ansatz;
    let x = a.lift(t, xt)?;
    let c = sys.at(t, &x);
    let k = sys.k_op(t).expect("linear system");
    let z = c.q.mul_vec(&x);
    let mut f = c.j.mul_vec(&z) - c.r.mul_vec(&z) - k.mul_vec(&x);
    if sys.ports() > 0 {
        f += c.b.mul_vec(u);
    }
    // Lift derivatives by finite differences, independent of the V-hat assembly.
    let mut g = DMatrix::zeros(n, r);
    for i in 0..r {
        let h = 1e-3 * (1.0 + xt[i].abs());
        let col = richardson(
            &|s| {
                let mut y = xt.clone();
                y[i] += s;
                a.lift(t, &y)
            },
            h,
        )?;
        g.set_column(i, &col);
    }
    let gt = richardson(&|s| a.lift(t + s, xt), 1e-3 * (1.0 + t.abs()))?;

    let e = c.e.to_dense();
    let qt = c.q.to_dense().transpose();
    // W = E⁻ᵀQᵀ
    let w = e
        .transpose()
        .lu()
        .solve(&qt)
        .ok_or_else(|| Error::Singular("E is singular at the probe".into()))?;
    let w = (&w + w.transpose()) * 0.5;
    let am = &e * &g;
    let bv = &f - &e * &gt;
    let hess = am.transpose() * &w * &am;
    let rhs = am.transpose() * &w * &bv;
    let (eta, rank) = lstsq_min_norm(&hess, &rhs, 1e-12);
    let wnorm = |v: &DVector<f64>| v.dot(&(&w * v)).max(0.0).sqrt();
    let res_opt = wnorm(&(&am * &eta - &bv));
    let mut report = OptimalityReport::default();
    let rom_dot = rom.derivative(t, xt, u);
    let degenerate = rank < r || rom_dot.is_err();
    let (deviation, res_rom) = match rom_dot {
        Ok(d) if !degenerate => {
            let scale = eta.norm().max(d.norm());
            let dev = if scale == 0.0 { 0.0 } else { (&d - &eta).norm() / eta.norm().max(f64::MIN_POSITIVE) };
            (dev, wnorm(&(&am * &d - &bv)))
        }
        _ => (f64::NAN, f64::NAN),
    };
    report.push(OptimalityProbe {
        t,
        degenerate,
        deviation,
        residual_rom: res_rom,
        residual_optimal: res_opt,
    });
    Ok(report)
}

/// [`verify_optimality`] over many probes.
pub fn verify_optimality_probes(rom: &Rom, sys: &PhSystem, probes: &[(f64, DVector<f64>, DVector<f64>)]) -> Result<OptimalityReport> {
    let mut out = OptimalityReport::default();
    for (t, xt, u) in probes {
        for p in verify_optimality(rom, sys, *t, xt, u)?.entries {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::FnSeparable;
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

    fn rotation_ansatz() -> Ansatz {
        Ansatz::separable(FnSeparable {
            n: 2,
            r_alpha: 1,
            r_p: 1,
            vs: Arc::new(|p| DMatrix::from_column_slice(2, 1, &[p[0].cos(), p[0].sin()])),
            dvs: Arc::new(|p, d| DMatrix::from_column_slice(2, 1, &[-p[0].sin() * d[0], p[0].cos() * d[0]])),
        })
    }

    #[test]
    fn oscillator_one_dimensional_reduction() {
        let rom = reduce_lti(&oscillator(), &dmatrix![1.0; 0.0]).unwrap();
        let c = rom.coefficients(0.0, &DVector::from_vec(vec![0.3])).unwrap();
        assert_eq!(c.e, dmatrix![1.0]);
        assert_eq!(c.j, dmatrix![0.0]);
        assert_eq!(c.r, dmatrix![1.0]);
        assert_eq!(c.b, dmatrix![1.0]);
        assert!(rom.warnings.is_empty());
    }

    #[test]
    fn pod_galerkin_matches_petrov_galerkin_for_identity_weight() {
        let v = dmatrix![0.8; 0.6];
        let pg = reduce_lti(&oscillator(), &v).unwrap();
        let g = reduce_pod_galerkin(&oscillator(), &v).unwrap();
        let x = DVector::from_vec(vec![0.4]);
        assert_eq!(pg.coefficients(0.0, &x).unwrap(), g.coefficients(0.0, &x).unwrap());
        assert!((pg.hamiltonian(0.0, &x).unwrap() - g.hamiltonian(0.0, &x).unwrap()).abs() < 1e-15);
        assert_eq!(g.structure, Structure::Baseline);
    }

    #[test]
    fn rank_deficient_basis_rejected() {
        let err = reduce_lti(&oscillator(), &dmatrix![1.0, 2.0; 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn near_singular_mass_warns() {
        let mut s = oscillator();
        s.e = Op::Dense(dmatrix![1.0, 0.0; 0.0, 1e-14]);
        let rom = reduce_lti(&s, &dmatrix![1.0; 0.0]).unwrap();
        assert_eq!(rom.warnings.len(), 1);
    }

    #[test]
    fn rotation_ansatz_mass_matrix() {
        let sys = PhLtv::from_lti(&oscillator());
        let rom = reduce_separable_ltv(&sys, &rotation_ansatz()).unwrap();
        for &(al, p) in &[(1.0, 0.0), (2.0, 0.7), (-0.5, 2.9)] {
            let c = rom.coefficients(0.0, &DVector::from_vec(vec![al, p])).unwrap();
            assert!((c.e[(0, 0)] - 1.0).abs() < 1e-15);
            assert!(c.e[(0, 1)].abs() < 1e-15 && c.e[(1, 0)].abs() < 1e-15);
            assert!((c.e[(1, 1)] - al * al).abs() < 1e-14);
            assert_eq!(c.q, dmatrix![1.0, 0.0; 0.0, 0.0]);
        }
        let c0 = rom.coefficients(0.0, &DVector::from_vec(vec![0.0, 0.4])).unwrap();
        assert_eq!(c0.e[(1, 1)], 0.0);
    }

    #[test]
    fn zero_system_gives_zero_blocks() {
        let zero = PhLti::from_dense(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let rom = reduce_separable_ltv(&PhLtv::from_lti(&zero), &rotation_ansatz()).unwrap();
        let c = rom.coefficients(0.3, &DVector::from_vec(vec![1.5, 0.2])).unwrap();
        assert_eq!(c.j.norm() + c.r.norm() + c.drift.norm() + c.b.norm(), 0.0);
    }

    #[test]
    fn oscillator_optimality() {
        let s = oscillator();
        let v = dmatrix![0.8; 0.6];
        let rom = reduce_lti(&s, &v).unwrap();
        let sys = PhSystem::Lti(s);
        let rep = verify_optimality(&rom, &sys, 0.0, &DVector::from_vec(vec![0.7]), &DVector::from_vec(vec![0.3])).unwrap();
        assert_eq!(rep.degenerate, 0);
        assert!(rep.max_deviation <= 1e-10, "{rep:?}");
    }

    #[test]
    fn separable_optimality_and_degenerate_probe() {
        let sys = PhSystem::Ltv(PhLtv::from_lti(&oscillator()));
        let PhSystem::Ltv(ltv) = &sys else { unreachable!() };
        let rom = reduce_separable_ltv(ltv, &rotation_ansatz()).unwrap();
        let rep = verify_optimality(&rom, &sys, 0.0, &DVector::from_vec(vec![1.3, 0.4]), &DVector::from_vec(vec![0.2])).unwrap();
        assert!(rep.max_deviation <= 1e-8, "{rep:?}");
        let deg = verify_optimality(&rom, &sys, 0.0, &DVector::from_vec(vec![0.0, 0.4]), &DVector::from_vec(vec![0.2])).unwrap();
        assert_eq!(deg.degenerate, 1);
    }
}
