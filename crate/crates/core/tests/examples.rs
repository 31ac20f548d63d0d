//! Worked examples for each public operation, checked against independent oracles.

mod common;

use std::sync::Arc;

use common::*;
use nalgebra::{dmatrix, DMatrix, DVector};
use phmor::ansatz::{build_separable_from_shifts, Ansatz, ModeSet, PathSharing, SeparableLayout, ShiftKind, ShiftOperator};
use phmor::diagnostics::{power_balance_series, relative_l2_error, stability_certificate};
use phmor::linalg::{min_sym_eig, Op};
use phmor::models::{build_ade_fom, build_wildfire_fom, wildfire_reaction_dissipation, wildfire_rhs_equivalence_check, AdeParams, WildfireParams};
use phmor::offline::{estimate_shift_paths, fit_modes, pod, FitOptions, PathOptions, SnapshotSet, SpatialGrid};
use phmor::reduction::{
    reduce_factorizable, reduce_galerkin_baseline, reduce_lti, reduce_ltv, reduce_separable_ltv, reduce_separable_nonlinear, Structure,
};
use phmor::system::{dissipation_supply, validate, PhLti, PhLtv, PhNonlinearQ, PhSystem, Tolerances};
use phmor::timestep::{integrate_midpoint, IntegratorOptions, TimeGrid, Trajectory};
use rand::Rng;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

#[test]
fn fire_system_validates_at_hot_states() {
    let fire = small_fire(15);
    let m = fire.params.nodes_per_field();
    let mut r = rng(1);
    let samples: Vec<_> = (0..20)
        .map(|_| (0.0, DVector::from_fn(2 * m, |i, _| if i < m { r.gen_range(1.0..1500.0) } else { r.gen_range(0.0..1.0) })))
        .collect();
    let rep = validate(&PhSystem::NonlinearQ(fire.system.clone()), &samples, &Tolerances::default()).unwrap();
    assert!(rep.pass, "{}", rep.to_json());
}

#[test]
fn zero_input_and_lossless_power_terms() {
    let mut r = rng(2);
    let sys = random_lti(&mut r, 3, 2);
    let x = uniform_vec(&mut r, 3, -1.0, 1.0);
    let p = dissipation_supply(&lti(&sys), 0.0, &x, &DVector::zeros(2)).unwrap();
    assert_eq!(p.supply, 0.0);
    let mut lossless = sys.clone();
    lossless.r = Op::Zero(3, 3);
    let p = dissipation_supply(&lti(&lossless), 0.0, &x, &v(&[0.3, -0.2])).unwrap();
    assert_eq!(p.dissipation, 0.0);
    let y = sys.b.to_dense().transpose() * sys.q.to_dense() * &x;
    assert!((p.output - &y).norm() < 1e-14);
}

#[test]
fn state_independent_factorizable_has_zero_vhat() {
    let vr = dmatrix![1.0, 0.0; 0.0, 1.0; 1.0, 1.0];
    let (b, d) = (vr.clone(), vr.clone());
    let a = Ansatz::Factorizable {
        n: 3,
        r: 2,
        basis: Arc::new(move |_, _| b.clone()),
        d_dt: Arc::new(|_, _| DMatrix::zeros(3, 2)),
        d_state: Arc::new(move |_, _, _| DMatrix::zeros(d.nrows(), d.ncols())),
    };
    assert_eq!(a.eval_vhat(0.4, &v(&[1.0, -2.0])).unwrap(), DMatrix::zeros(3, 2));
    assert!(Ansatz::LinearTI(vr).eval_vhat(0.0, &v(&[1.0, 1.0])).is_err());
}

#[test]
fn single_mode_at_zero_path_is_window_restriction() {
    let shift = Arc::new(ShiftOperator::extended(0.0, 0.1, 11, 4, 3).unwrap());
    let src: Vec<f64> = shift.source_nodes().iter().map(|x| (x * 2.0).sin()).collect();
    let modes = ModeSet::new(DMatrix::from_column_slice(src.len(), 1, &src), 1).unwrap();
    let layout = SeparableLayout {
        sharing: PathSharing::Shared,
        blocks: 1,
    };
    let a = build_separable_from_shifts(shift.clone(), &modes, layout).unwrap();
    let vs = a.separable_block(&v(&[1.0, 0.0])).unwrap();
    let expected = shift.restrict(&src);
    for (i, e) in expected.iter().enumerate() {
        assert!((vs[(i, 0)] - e).abs() < 1e-14);
    }
}

#[test]
fn full_basis_reproduces_full_dynamics() {
    let mut r = rng(3);
    let sys = random_lti(&mut r, 4, 1);
    let rom = reduce_lti(&sys, &DMatrix::identity(4, 4)).unwrap();
    let s = lti(&sys);
    for _ in 0..5 {
        let x = uniform_vec(&mut r, 4, -1.0, 1.0);
        let u = uniform_vec(&mut r, 1, -1.0, 1.0);
        let c = s.at(0.0, &x);
        let rhs = c.j.to_dense() * c.q.mul_vec(&x) - c.r.to_dense() * c.q.mul_vec(&x) - sys.k.mul_vec(&x) + c.b.mul_vec(&u);
        let fom_dot = c.e.to_dense().lu().solve(&rhs).unwrap();
        assert!((rom.derivative(0.0, &x, &u).unwrap() - fom_dot).norm() < 1e-10);
    }
}

#[test]
fn identity_weight_orthonormal_basis_is_galerkin() {
    let mut sys = oscillator();
    sys.k = Op::Zero(2, 2);
    let vr = dmatrix![0.6; 0.8];
    let rom = reduce_lti(&sys, &vr).unwrap();
    let c = rom.coefficients(0.0, &v(&[1.0])).unwrap();
    let galerkin_r = vr.transpose() * sys.r.to_dense() * &vr;
    assert!((&c.r - galerkin_r).amax() < 1e-15);
    assert!((c.e[(0, 0)] - 1.0).abs() < 1e-15);
}

#[test]
fn constant_basis_time_varying_reduction_matches_lti() {
    let mut r = rng(4);
    let mut sys = random_lti(&mut r, 4, 1);
    sys.k = Op::Zero(4, 4);
    let vr = uniform_mat(&mut r, 4, 2);
    let (b, d) = (vr.clone(), vr.clone());
    let a = Ansatz::LinearTV {
        n: 4,
        r: 2,
        basis: Arc::new(move |_| b.clone()),
        d_dt: Arc::new(move |_| DMatrix::zeros(d.nrows(), d.ncols())),
    };
    let ltv = reduce_ltv(&PhLtv::from_lti(&sys), &a).unwrap();
    let lti_rom = reduce_lti(&sys, &vr).unwrap();
    let x = v(&[0.3, -1.1]);
    let (c1, c2) = (ltv.coefficients(0.7, &x).unwrap(), lti_rom.coefficients(0.7, &x).unwrap());
    assert!(max_abs(&(&c1.e - &c2.e)) < 1e-13);
    assert!(max_abs(&(&c1.j - &c2.j)) < 1e-13);
    assert!(max_abs(&(&c1.r - &c2.r)) < 1e-13);
    assert!((&c1.drift - &c2.drift).amax() < 1e-13);
    assert!(max_abs(&(&c1.b - &c2.b)) < 1e-13);
}

#[test]
fn time_varying_reduction_energy_derivative_identity() {
    let mut r = rng(5);
    let sys = random_ltv(&mut r, 4, 1);
    let rom = reduce_ltv(&sys, &rotating_basis(&mut r, 4, 2)).unwrap();
    let x = v(&[0.4, 0.9]);
    for &t in &[0.0, 0.8, 2.1] {
        let k = DMatrix::from_fn(2, 2, |i, j| {
            let mut e = DVector::zeros(2);
            e[j] = 1.0;
            rom.coefficients(t, &e).unwrap().drift[i]
        });
        let h = 1e-5;
        let de = (rom.coefficients(t + h, &x).unwrap().e - rom.coefficients(t - h, &x).unwrap().e) / (2.0 * h);
        let c = rom.coefficients(t, &x).unwrap();
        assert_eq!(c.q, DMatrix::identity(2, 2));
        assert!((&de - (&k + k.transpose())).amax() < 1e-6, "{de} vs {}", &k + k.transpose());
        assert!((&c.j + c.j.transpose()).amax() < 1e-12);
    }
}

#[test]
fn factorizable_reduction_special_cases() {
    let mut r = rng(6);
    let mut sys = random_lti(&mut r, 3, 1);
    sys.k = Op::Zero(3, 3);
    let vr = uniform_mat(&mut r, 3, 2);
    let (b, d) = (vr.clone(), vr.clone());
    let a = Ansatz::Factorizable {
        n: 3,
        r: 2,
        basis: Arc::new(move |_, _| b.clone()),
        d_dt: Arc::new(|_, _| DMatrix::zeros(3, 2)),
        d_state: Arc::new(move |_, _, _| DMatrix::zeros(d.nrows(), d.ncols())),
    };
    let fact = reduce_factorizable(&PhNonlinearQ::from_lti(&sys), &a).unwrap();
    let lin = reduce_lti(&sys, &vr).unwrap();
    let x = v(&[0.5, -0.2]);
    let (c1, c2) = (fact.coefficients(0.0, &x).unwrap(), lin.coefficients(0.0, &x).unwrap());
    assert!(max_abs(&(&c1.e - &c2.e)) < 1e-13 && max_abs(&(&c1.j - &c2.j)) < 1e-13 && max_abs(&(&c1.r - &c2.r)) < 1e-13);

    let quad = quadratic_basis_ansatz(&mut r);
    let rom = reduce_factorizable(&quartic_system(), &quad).unwrap();
    let zero = DVector::zeros(2);
    let vz = quad.eval_basis(0.0, &zero).unwrap();
    let expected = vz.transpose() * vz.clone();
    let e0 = rom.coefficients(0.0, &zero).unwrap().e;
    assert!((&e0 - &expected).amax() < 1e-14);
    assert!(e0.clone().lu().is_invertible());
}

#[test]
fn separable_nonlinear_specializes_to_linear() {
    let mut r = rng(7);
    let sys = random_ltv(&mut r, 2, 1);
    let a = rotation_ansatz();
    let lin = reduce_separable_ltv(&sys, &a).unwrap();
    let nl = reduce_separable_nonlinear(&PhNonlinearQ::from_ltv(&sys), &a).unwrap();
    for &(al, p, t) in &[(1.2, 0.3, 0.0), (-0.7, 2.0, 1.3)] {
        let x = v(&[al, p]);
        let (c1, c2) = (lin.coefficients(t, &x).unwrap(), nl.coefficients(t, &x).unwrap());
        assert!(max_abs(&(&c1.e - &c2.e)) < 1e-12);
        assert!(max_abs(&(&c1.j - &c2.j)) < 1e-12);
        assert!(max_abs(&(&c1.r - &c2.r)) < 1e-12);
        assert!((&c1.drift - &c2.drift).amax() < 1e-12);
        assert!((lin.hamiltonian(t, &x).unwrap() - nl.hamiltonian(t, &x).unwrap()).abs() < 1e-12);
    }
    let c = nl.coefficients(0.5, &v(&[0.0, 1.0])).unwrap();
    assert_eq!(c.drift.amax(), 0.0);
}

#[test]
fn baseline_loses_skewness_on_fire_model_and_stays_singular_at_zero_amplitude() {
    let fire = small_fire(31);
    let a = two_wave_ansatz(&fire);
    let base = reduce_galerkin_baseline(&fire.system, &a).unwrap();
    assert_eq!(base.structure, Structure::Baseline);
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = v(&[r.gen_range(0.2..1.5), r.gen_range(0.2..1.5), r.gen_range(-20.0..20.0), r.gen_range(-20.0..20.0)]);
        let c = base.coefficients(0.0, &x).unwrap();
        worst = worst.max((&c.j + c.j.transpose()).norm() / (1.0 + c.j.norm()));
    }
    assert!(worst > 1e-6, "skewness defect {worst}");
    let c0 = base.coefficients(0.0, &v(&[0.0, 0.0, 1.0, -1.0])).unwrap();
    assert!(!c0.e.lu().is_invertible());
}

#[test]
fn ade_fom_passes_validation_and_diffusion_limit() {
    let fom = build_ade_fom(&AdeParams { n: 40, ..Default::default() }).unwrap();
    let rep = validate(&lti(&fom.system), &[], &Tolerances::default()).unwrap();
    assert!(rep.pass, "{}", rep.to_json());
    let tiny = build_ade_fom(&AdeParams { n: 6, d: 1e-300, ..Default::default() }).unwrap();
    let r = tiny.system.r.to_dense();
    let mut expected = DMatrix::zeros(8, 8);
    expected[(0, 0)] = 0.5;
    expected[(7, 7)] = 0.5;
    assert!((&r - expected).amax() < 1e-290);
    assert!(min_sym_eig(&r) >= 0.0);
}

#[test]
fn reaction_dissipation_nonnegative_on_hot_states() {
    let p = WildfireParams { n: 8, ..Default::default() };
    let m = p.nodes_per_field();
    let mut r = rng(9);
    for _ in 0..200 {
        let u = uniform_vec(&mut r, m, 1.0, 2000.0);
        let z = uniform_vec(&mut r, 2 * m, -1.0, 1.0);
        let rz = wildfire_reaction_dissipation(&p, &u);
        assert!(z.dot(&(&rz * &z)) >= -1e-14 * z.norm_squared());
    }
}

#[test]
fn mixed_sign_fire_states_match_direct_scheme() {
    let p = WildfireParams { n: 8, ..Default::default() };
    let m = p.nodes_per_field();
    let mut r = rng(10);
    let states: Vec<_> = (0..50).map(|_| DVector::from_fn(2 * m, |i, _| if i < m { r.gen_range(-50.0..50.0) } else { r.gen_range(-1.0..1.0) })).collect();
    assert!(wildfire_rhs_equivalence_check(&p, &states).unwrap() <= 1e-12);
}

#[test]
fn ade_solutions_converge_under_refinement() {
    let final_state = |n: usize| {
        let fom = build_ade_fom(&AdeParams { n, t_end: 0.3, ..Default::default() }).unwrap();
        let grid = TimeGrid::new(0.0, 0.3, 1e-3).unwrap();
        let traj = integrate_midpoint(&lti(&fom.system), &grid, &fom.x0, &|t| DVector::from_element(1, AdeParams::input(t)), &IntegratorOptions::default()).unwrap();
        traj.states.last().unwrap().clone()
    };
    let coarse_l2 = |a: &DVector<f64>, stride_a: usize, b: &DVector<f64>, stride_b: usize, nodes: usize, h: f64| {
        ((0..nodes).map(|i| (a[i * stride_a] - b[i * stride_b]).powi(2)).sum::<f64>() * h).sqrt()
    };
    let (x1, x2, x3) = (final_state(199), final_state(399), final_state(799));
    let d12 = coarse_l2(&x1, 1, &x2, 2, 201, 1.0 / 200.0);
    let d23 = coarse_l2(&x2, 2, &x3, 4, 201, 1.0 / 200.0);
    assert!(d23 / d12 <= 0.6, "successive differences {d12:e} {d23:e}");
}

fn periodic_grid(m: usize, length: f64) -> SpatialGrid {
    SpatialGrid {
        x0: 0.0,
        h: length / m as f64,
        nodes: m,
        blocks: 1,
        periodic: true,
    }
}

#[test]
fn opposite_waves_give_opposite_monotone_paths() {
    let m = 200;
    let grid = periodic_grid(m, 1.0);
    let nt = 11;
    let bump = |x: f64, c: f64| (-((x - c) / 0.03).powi(2)).exp();
    let data = DMatrix::from_fn(m, nt, |i, j| {
        let x = grid.node(i);
        let s = 0.01 * j as f64;
        bump(x, 0.3 - s) + bump(x, 0.7 + s)
    });
    let snaps = SnapshotSet::new(grid, data, (0..nt).map(|j| j as f64).collect()).unwrap();
    let opts = PathOptions { smoothing: 1, ..Default::default() };
    let paths = estimate_shift_paths(&snaps, 2, ShiftKind::Periodic, &opts).unwrap();
    let slopes: Vec<f64> = (0..2).map(|w| paths[(w, nt - 1)] - paths[(w, 0)]).collect();
    assert!(slopes[0] * slopes[1] < 0.0, "{paths}");
    for w in 0..2 {
        let s = slopes[w].signum();
        for j in 1..nt {
            assert!(s * (paths[(w, j)] - paths[(w, j - 1)]) >= -1e-12, "{paths}");
        }
    }
}

#[test]
fn as_many_modes_as_snapshots_reproduces_data() {
    let m = 40;
    let grid = periodic_grid(m, 1.0);
    let mut r = rng(12);
    let nt = 4;
    let data = DMatrix::from_fn(m, nt, |i, j| (2.0 * std::f64::consts::PI * (j + 1) as f64 * grid.node(i)).sin() + 0.1 * r.gen_range(-1.0..1.0));
    let snaps = SnapshotSet::new(grid, data, (0..nt).map(|j| j as f64).collect()).unwrap();
    let layout = SeparableLayout {
        sharing: PathSharing::Shared,
        blocks: 1,
    };
    let shift = Arc::new(ShiftOperator::periodic(0.0, grid.h, m).unwrap());
    let fit = fit_modes(&snaps, &DMatrix::zeros(1, nt), shift, layout, nt, None, &FitOptions::default()).unwrap();
    assert!(fit.error < 1e-8, "error {}", fit.error);
}

#[test]
fn pod_of_rank_one_and_random_data() {
    let grid = SpatialGrid {
        x0: 0.0,
        h: 1.0,
        nodes: 20,
        blocks: 1,
        periodic: false,
    };
    let g = DVector::from_fn(20, |i, _| (i as f64 * 0.3).cos());
    let coeffs = [1.0, -2.0, 0.5, 3.0];
    let data = DMatrix::from_fn(20, 4, |i, j| g[i] * coeffs[j]);
    let s = SnapshotSet::new(grid, data, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let v1 = pod(&s, 1).unwrap();
    assert!((v1.column(0).dot(&g).abs() - g.norm()).abs() < 1e-12);

    let mut r = rng(13);
    let a = uniform_mat(&mut r, 20, 10);
    let s = SnapshotSet::new(grid, a.clone(), (0..10).map(|j| j as f64).collect()).unwrap();
    let v = pod(&s, 4).unwrap();
    assert!((v.transpose() * &v - DMatrix::identity(4, 4)).amax() < 1e-12);
    let resid = &a - &v * (v.transpose() * &a);
    let sv = a.singular_values();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    let tail: f64 = sv[4..].iter().map(|s| s * s).sum();
    assert!((resid.norm_squared() - tail).abs() < 1e-10 * tail);
}

#[test]
fn unforced_balance_has_no_supply() {
    let mut sys = oscillator();
    sys.k = Op::Zero(2, 2);
    let rom = reduce_lti(&sys, &DMatrix::identity(2, 2)).unwrap();
    let grid = TimeGrid::new(0.0, 1.0, 0.01).unwrap();
    let traj = integrate_midpoint(&rom, &grid, &v(&[1.0, 0.5]), &|_| DVector::zeros(1), &IntegratorOptions::default()).unwrap();
    let rec = power_balance_series(&rom, &traj).unwrap();
    assert_eq!(rec.len(), 100);
    assert!(rec.iter().all(|r| r.supply == 0.0 && r.dissipation >= 0.0));
}

#[test]
fn certificates_for_orthonormal_and_rotation_bases() {
    let mut r = rng(14);
    let sys = random_lti(&mut r, 4, 1);
    let q = uniform_mat(&mut r, 4, 2).qr().q();
    let probes: Vec<_> = (0..5).map(|_| (0.0, uniform_vec(&mut r, 2, -1.0, 1.0))).collect();
    let cert = stability_certificate(&Ansatz::LinearTI(q), &lti(&sys), &probes, None).unwrap();
    assert!((cert.sigma_max - 1.0).abs() < 1e-12 && (cert.sigma_min - 1.0).abs() < 1e-12);

    let e = dmatrix![2.0, 0.0; 0.0, 1.0];
    let s2 = PhLti::from_dense(e, DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), DMatrix::identity(2, 2), DMatrix::zeros(2, 2), DMatrix::zeros(2, 1)).unwrap();
    let probes: Vec<_> = (0..8).map(|i| (0.0, v(&[1.0, i as f64 * 0.7]))).collect();
    let cert = stability_certificate(&rotation_ansatz(), &lti(&s2), &probes, None).unwrap();
    assert!((cert.sigma_max - 1.0).abs() < 1e-14 && (cert.sigma_min - 1.0).abs() < 1e-14);
    assert!((cert.c2.unwrap() - 1.0).abs() < 1e-14 && (cert.c3.unwrap() - 2.0).abs() < 1e-14);
    assert!((cert.amplitude_constant.unwrap() - 2f64.sqrt()).abs() < 1e-12);
}

#[test]
fn relative_error_of_identical_and_zero_trajectories() {
    let traj = Trajectory {
        times: vec![0.0, 0.5, 1.0],
        states: vec![v(&[1.0, 2.0]), v(&[0.5, -1.0]), v(&[0.0, 3.0])],
        ..Default::default()
    };
    assert_eq!(relative_l2_error(&traj, &traj, None).unwrap(), 0.0);
    let zero = Trajectory {
        states: vec![DVector::zeros(2); 3],
        ..traj.clone()
    };
    assert!((relative_l2_error(&traj, &zero, None).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn fire_hamiltonian_decreases_without_forcing() {
    let fom = build_wildfire_fom(&WildfireParams { n: 63, t_end: 5.0, ..Default::default() }).unwrap();
    let sys = PhSystem::NonlinearQ(fom.system.clone());
    let grid = TimeGrid::new(0.0, 5.0, 0.1).unwrap();
    let traj = integrate_midpoint(&sys, &grid, &fom.x0, &|_| DVector::zeros(0), &IntegratorOptions::default()).unwrap();
    let h: Vec<f64> = traj.states.iter().map(|x| sys.hamiltonian(0.0, x)).collect();
    for w in h.windows(2) {
        assert!(w[1] <= w[0] + 1e-8 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
    }
}
