#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{dmatrix, DMatrix, DVector};
use phmor::ansatz::{build_separable_from_shifts, Ansatz, FnSeparable, ModeSet, PathSharing, SeparableLayout, ShiftOperator};
use phmor::linalg::Op;
use phmor::models::{build_wildfire_fom, WildfireFom, WildfireParams};
use phmor::system::{PhLti, PhLtv, PhNonlinearQ, PhSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(lo..hi))
}

pub fn uniform_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Two-state oscillator with one damped state and one port.
pub fn oscillator() -> PhLti {
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

/// Rotation ansatz `x = α (cos p, sin p)`.
pub fn rotation_ansatz() -> Ansatz {
    Ansatz::separable(FnSeparable {
        n: 2,
        r_alpha: 1,
        r_p: 1,
        vs: Arc::new(|p| DMatrix::from_column_slice(2, 1, &[p[0].cos(), p[0].sin()])),
        dvs: Arc::new(|p, d| DMatrix::from_column_slice(2, 1, &[-p[0].sin() * d[0], p[0].cos() * d[0]])),
    })
}

/// Random time-invariant pH system with invertible `E`, `Q` and `QᵀE` SPD.
pub fn random_lti(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PhLti {
    let a = uniform_mat(rng, n, n);
    let j = &a - a.transpose();
    let c = uniform_mat(rng, n, n) * 0.5;
    let r = &c * c.transpose();
    let q = DMatrix::identity(n, n) + uniform_mat(rng, n, n) * 0.2;
    let g = uniform_mat(rng, n, n) * 0.3;
    let p = DMatrix::identity(n, n) + &g * g.transpose();
    let e = q.transpose().try_inverse().unwrap() * p;
    let s = uniform_mat(rng, n, n) * 0.2;
    let k = q.transpose().try_inverse().unwrap() * (&s - s.transpose());
    PhLti::from_dense(e, j, r, q, k, uniform_mat(rng, n, m)).unwrap()
}

#[derive(Clone)]
struct Wave {
    base: DMatrix<f64>,
    amp: DMatrix<f64>,
    freq: f64,
}

impl Wave {
    fn new(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Self {
        Wave {
            base: uniform_mat(rng, r, c) * scale,
            amp: uniform_mat(rng, r, c) * (0.5 * scale),
            freq: rng.gen_range(0.5..2.0),
        }
    }
    fn at(&self, t: f64) -> DMatrix<f64> {
        &self.base + &self.amp * (self.freq * t).sin()
    }
    fn dt(&self, t: f64) -> DMatrix<f64> {
        &self.amp * (self.freq * (self.freq * t).cos())
    }
}

/// Random time-varying pH system: `QᵀE = P(t)` SPD, `K = Q⁻ᵀ(½Ṗ + S)` with `S` skew.
pub fn random_ltv(rng: &mut ChaCha8Rng, n: usize, m: usize) -> PhLtv {
    let jw = Wave::new(rng, n, n, 1.0);
    let rw = Wave::new(rng, n, n, 0.5);
    let qw = Wave::new(rng, n, n, 0.2);
    let gw = Wave::new(rng, n, n, 0.3);
    let sw = Wave::new(rng, n, n, 0.2);
    let bw = Wave::new(rng, n, m, 1.0);
    let id = DMatrix::<f64>::identity(n, n);
    let q = {
        let (qw, id) = (qw.clone(), id.clone());
        move |t: f64| &id + qw.at(t)
    };
    let p = {
        let (gw, id) = (gw.clone(), id.clone());
        move |t: f64| {
            let g = gw.at(t);
            &id + &g * g.transpose()
        }
    };
    let p_dot = {
        let gw = gw.clone();
        move |t: f64| {
            let (g, gd) = (gw.at(t), gw.dt(t));
            &gd * g.transpose() + &g * gd.transpose()
        }
    };
    let (q1, q2, q3) = (q.clone(), q.clone(), q.clone());
    let (p1, pd) = (p.clone(), p_dot.clone());
    PhLtv {
        n,
        m,
        e: Arc::new(move |t| Op::Dense(q1(t).transpose().try_inverse().unwrap() * p1(t))),
        j: Arc::new(move |t| {
            let a = jw.at(t);
            Op::Dense(&a - a.transpose())
        }),
        r: Arc::new(move |t| {
            let c = rw.at(t);
            Op::Dense(&c * c.transpose())
        }),
        q: Arc::new(move |t| Op::Dense(q2(t))),
        k: Arc::new(move |t| {
            let s = sw.at(t);
            Op::Dense(q3(t).transpose().try_inverse().unwrap() * (pd(t) * 0.5 + (&s - s.transpose())))
        }),
        b: Arc::new(move |t| Op::Dense(bw.at(t))),
        d_dt_qte: Arc::new(move |t| Op::Dense(p_dot(t))),
    }
}

/// Time-varying orthonormal basis `Vᵣ(t) = rot(t) V₀` from a skew generator.
pub fn rotating_basis(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Ansatz {
    let v0 = uniform_mat(rng, n, r).qr().q();
    let a = uniform_mat(rng, n, n) * 0.3;
    let gen = &a - a.transpose();
    let (g1, g2, v1, v2) = (gen.clone(), gen, v0.clone(), v0);
    Ansatz::LinearTV {
        n,
        r,
        basis: Arc::new(move |t| (&g1 * t).exp() * &v1),
        d_dt: Arc::new(move |t| &g2 * (&g2 * t).exp() * &v2),
    }
}

/// Three-state system with state-dependent `Q(x) = diag(1 + xᵢ²)`, `J(x)`, `R(x)`;
/// `H(x) = Σ xᵢ²/2 + xᵢ⁴/4`.
pub fn quartic_system() -> PhNonlinearQ {
    PhNonlinearQ {
        n: 3,
        m: 1,
        e: Arc::new(|_, _| Op::Dense(DMatrix::identity(3, 3))),
        j: Arc::new(|t, x| {
            let a = 1.0 + 0.5 * x[2] + 0.1 * t.sin();
            let b = 0.3 * x[0] * x[1];
            Op::Dense(dmatrix![0.0, a, b; -a, 0.0, 1.0; -b, -1.0, 0.0])
        }),
        r: Arc::new(|_, x| {
            let c = dmatrix![0.5, 0.1 * x[1], 0.0; 0.0, 0.2, 0.1 * x[0]; 0.0, 0.0, 0.3];
            Op::Dense(&c * c.transpose())
        }),
        q: Arc::new(|_, x| Op::Dense(DMatrix::from_diagonal(&x.map(|v| 1.0 + v * v)))),
        drift: Arc::new(|_, _| DVector::zeros(3)),
        b: Arc::new(|_, _| Op::Dense(dmatrix![1.0; 0.0; 0.5])),
        hamiltonian: Arc::new(|_, x| x.iter().map(|v| 0.5 * v * v + 0.25 * v.powi(4)).sum()),
        grad_hamiltonian: None,
        norm_equivalence: None,
        sparsity: None,
    }
}

/// `Vᵣ(x̃) = V₀ + x̃₁V₁ + x̃₂V₂ + x̃₁x̃₂V₃`, `3 × 2`.
pub fn quadratic_basis_ansatz(rng: &mut ChaCha8Rng) -> Ansatz {
    let v: Vec<DMatrix<f64>> = (0..4).map(|i| uniform_mat(rng, 3, 2) * if i == 0 { 1.0 } else { 0.2 }).collect();
    let (va, vb) = (v.clone(), v);
    Ansatz::Factorizable {
        n: 3,
        r: 2,
        basis: Arc::new(move |_, x| &va[0] + &va[1] * x[0] + &va[2] * x[1] + &va[3] * (x[0] * x[1])),
        d_dt: Arc::new(|_, _| DMatrix::zeros(3, 2)),
        d_state: Arc::new(move |_, x, d| &vb[1] * d[0] + &vb[2] * d[1] + &vb[3] * (d[0] * x[1] + x[0] * d[1])),
    }
}

pub fn small_fire(n: usize) -> WildfireFom {
    build_wildfire_fom(&WildfireParams { n, ..Default::default() }).unwrap()
}

/// Two periodic traveling-wave modes (temperature and fuel blocks), each with its own path.
pub fn two_wave_ansatz(fom: &WildfireFom) -> Ansatz {
    let p = &fom.params;
    let m = p.nodes_per_field();
    let h = p.mesh_size();
    let shift = Arc::new(ShiftOperator::periodic(fom.nodes[0], h, m).unwrap());
    let mut modes = DMatrix::zeros(2 * m, 2);
    let center = 0.5 * (p.a + p.b);
    for (c, sign) in [(0, -1.0), (1, 1.0)] {
        for (i, &x) in fom.nodes.iter().enumerate() {
            let g = (-((x - center - sign * 10.0) / 8.0).powi(2)).exp();
            modes[(i, c)] = 1000.0 * g;
            modes[(m + i, c)] = 1.0 - 0.8 * g;
        }
    }
    let layout = SeparableLayout {
        sharing: PathSharing::PerMode,
        blocks: 2,
    };
    build_separable_from_shifts(shift, &ModeSet::new(modes, 2).unwrap(), layout).unwrap()
}

pub fn lti(sys: &PhLti) -> PhSystem {
    PhSystem::Lti(sys.clone())
}
