//! Configuration-driven commands: full-order runs, offline fits, reduced runs, diagnostics, sweeps.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::ansatz::{Ansatz, ModeSet, PathSharing, SeparableLayout, ShiftKind, ShiftOperator, ShiftedModes, SeparableMap};
use crate::config::{FitWeight, ModelKind, RunConfig, Selector};
use crate::diagnostics::{
    energy_series, error_bound_report, lift_trajectory, power_balance_series, relative_l2_error, stability_certificate, summarize_balance, BalanceSummary, PowerBalanceRecord,
};
use crate::error::{Error, Result};
use crate::io::{read_matrix_csv, read_table_csv, write_json, write_matrix_csv, write_sidecar, write_table_csv};
use crate::linalg::{lstsq_min_norm, Op};
use crate::models::{build_ade_fom, build_wildfire_fom, AdeParams};
use crate::offline::{estimate_shift_paths, fit_modes, pod, shift_operator_for, OfflineResult, SnapshotSet, SpatialGrid};
use crate::reduction::{
    reduce_factorizable, reduce_galerkin_baseline, reduce_lti, reduce_ltv, reduce_pod_galerkin, reduce_separable_ltv, reduce_separable_nonlinear, structure_report, Rom, Structure,
};
use crate::system::{PhLti, PhLtv, PhNonlinearQ, PhSystem};
use crate::timestep::{integrate_midpoint, TimeGrid, Trajectory};

pub const FOM_TRAJECTORY: &str = "fom_trajectory.csv";
pub const FOM_STATS: &str = "fom_stats.json";
pub const POD_BASIS: &str = "pod_basis.csv";
pub const MODES: &str = "modes.csv";
pub const PATHS: &str = "paths.csv";
pub const AMPLITUDES: &str = "amplitudes.csv";
pub const OFFLINE_SUMMARY: &str = "offline_summary.json";
pub const DIAG_SUMMARY: &str = "diag_summary.json";
pub const BALANCE_REPORT: &str = "balance_report.json";
pub const SWEEP_SUMMARY: &str = "sweep_summary.json";

pub fn rom_trajectory_name(s: Selector) -> String {
    format!("rom_{}_trajectory.csv", s.name())
}

pub fn rom_lifted_name(s: Selector) -> String {
    format!("rom_{}_lifted.csv", s.name())
}

/// Process exit code for an error: 2 configuration, 3 solver failure, 4 missing inputs.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::MissingInputs(_) | Error::Parse { .. } => 4,
        _ => 3,
    }
}

/// Machine-readable error description.
pub fn error_json(e: &Error) -> serde_json::Value {
    let mut v = json!({
        "error": e.kind(),
        "message": e.to_string(),
        "exit_code": exit_code(e),
    });
    match e {
        Error::MissingInputs(list) => v["missing"] = json!(list),
        Error::StepFailure { step, time, source, .. } => {
            v["step"] = json!(step);
            v["time"] = json!(time);
            v["cause"] = json!(source.kind());
        }
        Error::BlowUp { time, norm, .. } => {
            v["time"] = json!(time);
            v["norm"] = json!(norm);
        }
        _ => {}
    }
    v
}

type InputFn = Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>;

/// Full-order model with everything the commands need.
#[derive(Clone)]
pub struct FomModel {
    pub system: PhSystem,
    pub lti: Option<PhLti>,
    pub nonlinear: PhNonlinearQ,
    pub x0: DVector<f64>,
    pub grid: SpatialGrid,
    pub input: InputFn,
}

impl FomModel {
    pub fn input_at(&self, t: f64) -> DVector<f64> {
        (self.input)(t)
    }

    /// Inputs at step midpoints, as stored by the integrator.
    pub fn attach_inputs(&self, traj: &mut Trajectory) {
        traj.inputs = traj.times.windows(2).map(|w| self.input_at(0.5 * (w[0] + w[1]))).collect();
    }

    /// Spatial weight for fits and errors.
    pub fn weight(&self, w: FitWeight) -> Option<Op> {
        let c = self.system.at(0.0, &self.x0);
        match w {
            FitWeight::None => None,
            FitWeight::Mass => match c.e {
                Op::Identity(_) => None,
                e => Some(e),
            },
            FitWeight::Energy => match (c.e, c.q) {
                (Op::Identity(_), Op::Identity(_)) => None,
                (e, Op::Identity(_)) => Some(e),
                (Op::Identity(_), q) => Some(q),
                (Op::Diagonal(e), Op::Diagonal(q)) => Some(Op::Diagonal(e.component_mul(&q))),
                (e, q) => {
                    let m = e.to_dense().transpose() * q.to_dense();
                    Some(Op::Dense((&m + m.transpose()) * 0.5))
                }
            },
        }
    }
}

pub fn build_model(cfg: &RunConfig) -> Result<FomModel> {
    match cfg.models.kind {
        ModelKind::Ade => {
            let fom = build_ade_fom(&cfg.models.ade)?;
            let p = &cfg.models.ade;
            Ok(FomModel {
                system: PhSystem::Lti(fom.system.clone()),
                nonlinear: PhNonlinearQ::from_lti(&fom.system),
                lti: Some(fom.system),
                x0: fom.x0,
                grid: SpatialGrid {
                    x0: 0.0,
                    h: p.mesh_size(),
                    nodes: p.n + 2,
                    blocks: 1,
                    periodic: false,
                },
                input: Arc::new(|t| DVector::from_element(1, AdeParams::input(t))),
            })
        }
        ModelKind::Wildfire => {
            let p = &cfg.models.wildfire;
            let fom = build_wildfire_fom(p)?;
            Ok(FomModel {
                system: PhSystem::NonlinearQ(fom.system.clone()),
                nonlinear: fom.system,
                lti: None,
                x0: fom.x0,
                grid: SpatialGrid {
                    x0: fom.nodes[0],
                    h: p.mesh_size(),
                    nodes: p.nodes_per_field(),
                    blocks: 2,
                    periodic: true,
                },
                input: Arc::new(|_| DVector::zeros(0)),
            })
        }
        ModelKind::CustomLti => {
            let c = cfg.models.custom.as_ref().ok_or_else(|| Error::Config("missing [models.custom]".into()))?;
            let sys = PhLti::read_csv_dir(&cfg.resolve(&c.dir))?;
            let n = sys.dim();
            let x0 = match &c.x0 {
                Some(f) => {
                    let m = read_matrix_csv(&cfg.resolve(f))?;
                    if m.shape() != (n, 1) {
                        return Err(Error::Config(format!("initial state must be {n}x1, got {}x{}", m.nrows(), m.ncols())));
                    }
                    m.column(0).into_owned()
                }
                None => DVector::zeros(n),
            };
            let u = if c.input.is_empty() { DVector::zeros(sys.ports()) } else { DVector::from_vec(c.input.clone()) };
            if u.len() != sys.ports() {
                return Err(Error::Config(format!("input has {} entries, system has {} ports", u.len(), sys.ports())));
            }
            Ok(FomModel {
                system: PhSystem::Lti(sys.clone()),
                nonlinear: PhNonlinearQ::from_lti(&sys),
                lti: Some(sys),
                x0,
                grid: SpatialGrid {
                    x0: c.grid_x0,
                    h: c.grid_h.unwrap_or(1.0 / (n.max(2) - 1) as f64),
                    nodes: n,
                    blocks: 1,
                    periodic: false,
                },
                input: Arc::new(move |_| u.clone()),
            })
        }
    }
}

/// Offline data reconstructed from disk.
#[derive(Clone, Debug, Default)]
pub struct OfflineData {
    pub pod: Option<DMatrix<f64>>,
    pub separable: Option<OfflineResult>,
}

impl OfflineData {
    fn pod(&self) -> Result<&DMatrix<f64>> {
        self.pod.as_ref().ok_or_else(|| Error::MissingInputs(vec![POD_BASIS.into()]))
    }

    fn separable(&self) -> Result<&OfflineResult> {
        self.separable.as_ref().ok_or_else(|| Error::MissingInputs(vec![MODES.into(), PATHS.into(), AMPLITUDES.into()]))
    }
}

/// Reduced model and its initial state.
pub struct BuiltRom {
    pub rom: Rom,
    pub x0: DVector<f64>,
}

fn pod_initial(v: &DMatrix<f64>, x0: &DVector<f64>) -> DVector<f64> {
    lstsq_min_norm(v, x0, 1e-14).0
}

fn linear_path(fit: &OfflineResult) -> Result<(f64, f64)> {
    if fit.layout.sharing != PathSharing::Shared {
        return Err(Error::Config("the ltv selector needs a shared path layout".into()));
    }
    let t = &fit.times;
    let p: Vec<f64> = fit.paths.row(0).iter().copied().collect();
    let n = t.len() as f64;
    let (mt, mp) = (t.iter().sum::<f64>() / n, p.iter().sum::<f64>() / n);
    let stt: f64 = t.iter().map(|x| (x - mt).powi(2)).sum();
    let stp: f64 = t.iter().zip(&p).map(|(x, y)| (x - mt) * (y - mp)).sum();
    let speed = if stt > 0.0 { stp / stt } else { 0.0 };
    Ok((mp - speed * mt, speed))
}

/// Shifted modes moved along the fitted straight path: a linear time-varying basis.
fn linear_tv_ansatz(fit: &OfflineResult, t_end: f64) -> Result<Ansatz> {
    let (p0, speed) = linear_path(fit)?;
    let map = Arc::new(ShiftedModes::new(fit.shift.clone(), &fit.modes, fit.layout)?);
    let (lo, hi) = map.shift().amount_range();
    for t in [0.0, t_end] {
        let p = p0 + speed * t;
        if p < lo || p > hi {
            return Err(Error::ShiftOutOfRange { amount: p, min: lo, max: hi });
        }
    }
    let (m1, m2) = (map.clone(), map.clone());
    let n = map.state_dim();
    let r = map.r_alpha();
    let at = move |t: f64| DVector::from_element(1, p0 + speed * t);
    Ok(Ansatz::LinearTV {
        n,
        r,
        basis: Arc::new(move |t| m1.basis(&at(t)).expect("path within shift range")),
        d_dt: Arc::new(move |t| {
            m2.basis_derivative(&at(t), &DVector::from_element(1, speed))
                .expect("path within shift range")
        }),
    })
}

pub fn build_rom(model: &FomModel, off: &OfflineData, sel: Selector, t_end: f64) -> Result<BuiltRom> {
    let linear = || model.lti.as_ref().ok_or_else(|| Error::Config(format!("selector {} needs a linear model", sel.name())));
    match sel {
        Selector::Lti => {
            let v = off.pod()?;
            Ok(BuiltRom {
                rom: reduce_lti(linear()?, v)?,
                x0: pod_initial(v, &model.x0),
            })
        }
        Selector::PodGalerkin => {
            let v = off.pod()?;
            Ok(BuiltRom {
                rom: reduce_pod_galerkin(linear()?, v)?,
                x0: pod_initial(v, &model.x0),
            })
        }
        Selector::Factorizable => {
            let v = off.pod()?.clone();
            let (n, r) = v.shape();
            let x0 = pod_initial(&v, &model.x0);
            let a = Ansatz::Factorizable {
                n,
                r,
                basis: Arc::new(move |_, _| v.clone()),
                d_dt: Arc::new(move |_, _| DMatrix::zeros(n, r)),
                d_state: Arc::new(move |_, _, _| DMatrix::zeros(n, r)),
            };
            Ok(BuiltRom {
                rom: reduce_factorizable(&model.nonlinear, &a)?,
                x0,
            })
        }
        Selector::Ltv => {
            let fit = off.separable()?;
            let a = linear_tv_ansatz(fit, t_end)?;
            let v0 = a.eval_basis(0.0, &DVector::zeros(a.reduced_dim()))?;
            Ok(BuiltRom {
                rom: reduce_ltv(&PhLtv::from_lti(linear()?), &a)?,
                x0: pod_initial(&v0, &model.x0),
            })
        }
        Selector::Separable => {
            let fit = off.separable()?;
            let a = fit.ansatz()?;
            let rom = match &model.lti {
                Some(l) => reduce_separable_ltv(&PhLtv::from_lti(l), &a)?,
                None => reduce_separable_nonlinear(&model.nonlinear, &a)?,
            };
            Ok(BuiltRom { rom, x0: fit.reduced_state(0) })
        }
        Selector::GalerkinBaseline => {
            let fit = off.separable()?;
            Ok(BuiltRom {
                rom: reduce_galerkin_baseline(&model.nonlinear, &fit.ansatz()?)?,
                x0: fit.reduced_state(0),
            })
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn fitted_order(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Debug, Serialize)]
struct RunStats {
    selector: Option<&'static str>,
    status: &'static str,
    step: f64,
    summary: crate::timestep::TrajectorySummary,
    warnings: Vec<String>,
    error: Option<serde_json::Value>,
}

/// Outcome of the power-balance diagnostic for one trajectory.
#[derive(Clone, Debug, Serialize)]
pub struct BalanceResult {
    pub summary: BalanceSummary,
    /// Smallest `dH/dt − (supply − dissipation)`; negative values are excess dissipation.
    pub min_signed_error: f64,
    pub structure: Structure,
}

/// Runs commands for one configuration into one output directory.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub out: PathBuf,
    hash: String,
}

impl Pipeline {
    pub fn new(cfg: RunConfig, out: PathBuf) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Pipeline { cfg, out, hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    /// Runs a command by name and returns its JSON summary; `sweep` uses `cli.threads` workers.
    pub fn run_command(&self, command: &str) -> Result<serde_json::Value> {
        Ok(match command {
            "fom-run" => {
                let t = self.fom_run()?;
                json!({ "command": command, "samples": t.len(), "dim": t.dim() })
            }
            "offline" => {
                let o = self.offline()?;
                json!({
                    "command": command,
                    "pod_rank": o.pod.as_ref().map(|v| v.ncols()),
                    "fit_error": o.separable.as_ref().map(|f| f.error),
                })
            }
            "rom-run" => {
                let runs = self.rom_run()?;
                let list: Vec<_> = runs.iter().map(|(s, t)| json!({ "selector": s.name(), "samples": t.len() })).collect();
                json!({ "command": command, "runs": list })
            }
            "diag" => self.diag()?,
            "sweep" => self.sweep(self.cfg.cli.threads)?,
            other => return Err(Error::Config(format!("unknown command {other:?}"))),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|source| Error::Io {
            path: self.out.display().to_string(),
            source,
        })
    }

    fn require(&self, names: &[String]) -> Result<()> {
        let missing: Vec<String> = names.iter().filter(|n| !self.path(n).exists()).map(|n| self.path(n).display().to_string()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingInputs(missing))
        }
    }

    fn emit_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        write_json(&p, value)?;
        write_sidecar(&p, &self.hash)
    }

    fn emit_trajectory(&self, name: &str, traj: &Trajectory) -> Result<()> {
        let p = self.path(name);
        traj.write_csv(&p)?;
        write_sidecar(&p, &self.hash)
    }

    fn emit_table(&self, name: &str, header: &[String], rows: Vec<Vec<f64>>) -> Result<()> {
        let p = self.path(name);
        write_table_csv(&p, header, rows)?;
        write_sidecar(&p, &self.hash)
    }

    fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(0.0, self.cfg.t_end(), self.cfg.step()?)
    }

    fn stats(&self, selector: Option<Selector>, traj: &Trajectory, warnings: Vec<String>, error: Option<&Error>) -> Result<RunStats> {
        Ok(RunStats {
            selector: selector.map(Selector::name),
            status: if error.is_some() { "failed" } else { "ok" },
            step: self.cfg.step()?,
            summary: traj.stats_summary(),
            warnings,
            error: error.map(error_json),
        })
    }

    /// Integrate, persisting the partial trajectory on solver failure.
    fn integrate(&self, sys: &dyn crate::timestep::ImplicitSystem, x0: &DVector<f64>, input: &InputFn) -> std::result::Result<Trajectory, (Error, Trajectory)> {
        let grid = self.grid().map_err(|e| (e, Trajectory::default()))?;
        let input = input.clone();
        match integrate_midpoint(sys, &grid, x0, &move |t| input(t), &self.cfg.integrator()) {
            Ok(t) => Ok(t),
            Err(Error::StepFailure { step, time, source, partial }) => {
                let p = (*partial).clone();
                Err((Error::StepFailure { step, time, source, partial }, p))
            }
            Err(Error::BlowUp { time, norm, partial }) => {
                let p = (*partial).clone();
                Err((Error::BlowUp { time, norm, partial }, p))
            }
            Err(e) => Err((e, Trajectory::default())),
        }
    }

    pub fn fom_run(&self) -> Result<Trajectory> {
        self.ensure_out()?;
        let model = build_model(&self.cfg)?;
        log::info!("full-order run: n = {}, step = {:e}", model.system.dim(), self.cfg.step()?);
        match self.integrate(&model.system, &model.x0, &model.input) {
            Ok(traj) => {
                self.emit_trajectory(FOM_TRAJECTORY, &traj)?;
                self.emit_json(FOM_STATS, &self.stats(None, &traj, Vec::new(), None)?)?;
                Ok(traj)
            }
            Err((e, partial)) => {
                self.emit_trajectory(FOM_TRAJECTORY, &partial)?;
                self.emit_json(FOM_STATS, &self.stats(None, &partial, Vec::new(), Some(&e))?)?;
                Err(e)
            }
        }
    }

    fn read_fom(&self, model: &FomModel) -> Result<Trajectory> {
        self.require(&[FOM_TRAJECTORY.to_string()])?;
        let mut t = Trajectory::read_csv(&self.path(FOM_TRAJECTORY))?;
        if t.dim() != model.system.dim() {
            return Err(Error::Parse {
                path: self.path(FOM_TRAJECTORY).display().to_string(),
                message: format!("state dimension {} does not match the model ({})", t.dim(), model.system.dim()),
            });
        }
        model.attach_inputs(&mut t);
        Ok(t)
    }

    pub fn offline(&self) -> Result<OfflineData> {
        self.ensure_out()?;
        let model = build_model(&self.cfg)?;
        let fom = self.read_fom(&model)?;
        let o = &self.cfg.offline;
        let snaps = SnapshotSet::from_trajectory(&fom, model.grid, o.snapshot_stride)?;
        let selectors = self.cfg.selectors();
        let mut out = OfflineData::default();
        let mut summary = json!({
            "snapshots": snaps.len(),
            "snapshot_stride": o.snapshot_stride,
            "pod": null,
            "separable": null,
        });
        if selectors.iter().any(|s| s.uses_pod()) {
            let rank = o.pod_rank.min(snaps.data.nrows()).min(snaps.len());
            let v = pod(&snaps, rank)?;
            let captured = (v.transpose() * &snaps.data).norm_squared();
            let total = snaps.data.norm_squared();
            let p = self.path(POD_BASIS);
            write_matrix_csv(&p, &v)?;
            write_sidecar(&p, &self.hash)?;
            summary["pod"] = json!({
                "rank": rank,
                "energy_fraction": if total > 0.0 { captured / total } else { 1.0 },
            });
            out.pod = Some(v);
        }
        if selectors.iter().any(|s| !s.uses_pod()) {
            let kind = self.cfg.shift_kind();
            let paths = estimate_shift_paths(&snaps, o.waves, kind, &o.paths)?;
            let shift = Arc::new(shift_operator_for(&model.grid, kind, &paths, o.margin)?);
            let layout = SeparableLayout {
                sharing: o.sharing,
                blocks: model.grid.blocks,
            };
            let weight = model.weight(o.weight);
            let fit = fit_modes(&snaps, &paths, shift, layout, o.modes, weight.as_ref(), &o.fit)?;
            log::info!("offline fit: relative error {:.4e} after {} sweeps", fit.error, fit.sweeps);
            self.write_separable(&fit)?;
            summary["separable"] = json!({
                "modes": fit.modes.count(),
                "waves": o.waves,
                "sharing": fit.layout.sharing,
                "blocks": fit.layout.blocks,
                "shift": shift_json(&fit.shift),
                "weight": o.weight,
                "error": fit.error,
                "sweeps": fit.sweeps,
                "objective_initial": fit.objective.first(),
                "objective_final": fit.objective.last(),
                "warnings": fit.warnings,
            });
            out.separable = Some(fit);
        }
        self.emit_json(OFFLINE_SUMMARY, &summary)?;
        Ok(out)
    }

    fn write_separable(&self, fit: &OfflineResult) -> Result<()> {
        let nodes = fit.shift.source_nodes();
        let k = fit.modes.count();
        let m = fit.modes.block_len();
        let mut header = vec!["x".to_string()];
        header.extend((0..k).map(|i| format!("mode{i}")));
        let rows = (0..fit.modes.modes.nrows()).map(|r| {
            let mut row = vec![nodes[r % m]];
            row.extend(fit.modes.modes.row(r).iter().copied());
            row
        });
        self.emit_table(MODES, &header, rows.collect())?;
        let series = |name: &str, prefix: &str, data: &DMatrix<f64>| -> Result<()> {
            let mut header = vec!["t".to_string()];
            header.extend((0..data.nrows()).map(|i| format!("{prefix}{i}")));
            let rows = fit.times.iter().enumerate().map(|(j, &t)| {
                let mut row = vec![t];
                row.extend(data.column(j).iter().copied());
                row
            });
            self.emit_table(name, &header, rows.collect())
        };
        series(PATHS, "p", &fit.paths)?;
        series(AMPLITUDES, "a", &fit.amplitudes)
    }

    /// Offline artifacts needed by the configured selectors.
    pub fn load_offline(&self) -> Result<OfflineData> {
        let selectors = self.cfg.selectors();
        let mut need = vec![OFFLINE_SUMMARY.to_string()];
        if selectors.iter().any(|s| s.uses_pod()) {
            need.push(POD_BASIS.into());
        }
        let separable = selectors.iter().any(|s| !s.uses_pod());
        if separable {
            need.extend([MODES.to_string(), PATHS.into(), AMPLITUDES.into()]);
        }
        self.require(&need)?;
        let summary = read_json(&self.path(OFFLINE_SUMMARY))?;
        let mut out = OfflineData::default();
        if selectors.iter().any(|s| s.uses_pod()) {
            out.pod = Some(read_matrix_csv(&self.path(POD_BASIS))?);
        }
        if separable {
            out.separable = Some(self.read_separable(&summary["separable"])?);
        }
        Ok(out)
    }

    fn read_separable(&self, s: &serde_json::Value) -> Result<OfflineResult> {
        let bad = |m: &str| Error::Parse {
            path: self.path(OFFLINE_SUMMARY).display().to_string(),
            message: m.to_string(),
        };
        if s.is_null() {
            return Err(bad("no separable fit recorded; rerun offline with the current selectors"));
        }
        let layout = SeparableLayout {
            sharing: serde_json::from_value(s["sharing"].clone()).map_err(|e| bad(&e.to_string()))?,
            blocks: s["blocks"].as_u64().ok_or_else(|| bad("blocks"))? as usize,
        };
        let shift = Arc::new(shift_from_json(&s["shift"]).map_err(|e| bad(&e.to_string()))?);
        let (_, mode_rows) = read_table_csv(&self.path(MODES))?;
        let k = mode_rows.first().map_or(0, |r| r.len().saturating_sub(1));
        let modes = DMatrix::from_fn(mode_rows.len(), k, |i, j| mode_rows[i][j + 1]);
        let modes = ModeSet::new(modes, layout.blocks)?;
        let series = |name: &str| -> Result<(Vec<f64>, DMatrix<f64>)> {
            let (_, rows) = read_table_csv(&self.path(name))?;
            let w = rows.first().map_or(0, |r| r.len().saturating_sub(1));
            Ok((rows.iter().map(|r| r[0]).collect(), DMatrix::from_fn(w, rows.len(), |i, j| rows[j][i + 1])))
        };
        let (times, paths) = series(PATHS)?;
        let (_, amplitudes) = series(AMPLITUDES)?;
        if amplitudes.ncols() != paths.ncols() || amplitudes.nrows() != modes.count() {
            return Err(bad("paths, amplitudes and modes disagree in size"));
        }
        Ok(OfflineResult {
            shift,
            layout,
            modes,
            paths,
            amplitudes,
            times,
            error: s["error"].as_f64().unwrap_or(f64::NAN),
            sweeps: s["sweeps"].as_u64().unwrap_or(0) as usize,
            objective: Vec::new(),
            warnings: Vec::new(),
        })
    }

    /// Build and integrate every configured ROM. Failures of comparison selectors are recorded
    /// in their stats file; a failure of the main selector is returned.
    pub fn rom_run(&self) -> Result<Vec<(Selector, Trajectory)>> {
        self.ensure_out()?;
        let model = build_model(&self.cfg)?;
        let off = self.load_offline()?;
        let main = self.cfg.reduction.selector;
        let mut out = Vec::new();
        for sel in self.cfg.selectors() {
            let built = build_rom(&model, &off, sel, self.cfg.t_end())?;
            log::info!("reduced run {}: r = {}", sel.name(), built.rom.dim());
            let (traj, err) = match self.integrate(&built.rom, &built.x0, &model.input) {
                Ok(t) => (t, None),
                Err((e, t)) => (t, Some(e)),
            };
            self.emit_trajectory(&rom_trajectory_name(sel), &traj)?;
            let lifted = lift_trajectory(&built.rom, &traj)?;
            self.emit_trajectory(&rom_lifted_name(sel), &lifted)?;
            self.emit_json(&format!("rom_{}_stats.json", sel.name()), &self.stats(Some(sel), &traj, built.rom.warnings.clone(), err.as_ref())?)?;
            match err {
                Some(e) if sel == main => return Err(e),
                Some(e) => log::warn!("reduced run {} failed: {e}", sel.name()),
                None => {}
            }
            out.push((sel, traj));
        }
        Ok(out)
    }

    fn balance(&self, rom: &Rom, traj: &Trajectory) -> Result<(Vec<PowerBalanceRecord>, Vec<f64>, BalanceResult)> {
        let rec = power_balance_series(rom, traj)?;
        let en = energy_series(rom, traj)?;
        let summary = summarize_balance(&rec, &en);
        let min_signed = rec.iter().map(|r| r.signed_error()).fold(f64::INFINITY, f64::min);
        Ok((
            rec,
            en,
            BalanceResult {
                summary,
                min_signed_error: min_signed,
                structure: rom.structure,
            },
        ))
    }

    fn emit_balance(&self, name: &str, rec: &[PowerBalanceRecord], energies: &[f64]) -> Result<()> {
        let header: Vec<String> = ["t", "dh_dt", "dissipation", "supply", "error", "signed_error", "energy_start", "energy_end"].map(String::from).to_vec();
        let rows = rec
            .iter()
            .enumerate()
            .map(|(j, r)| vec![r.t, r.dh_dt, r.dissipation, r.supply, r.error, r.signed_error(), energies[j], energies[j + 1]])
            .collect();
        self.emit_table(name, &header, rows)
    }

    fn probes(&self, rom: &Rom, off: &OfflineData, sel: Selector) -> Result<Vec<(f64, DVector<f64>)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let t_end = self.cfg.t_end();
        let r = rom.dim();
        let fit = match (sel.uses_pod() || sel == Selector::Ltv, off.separable.as_ref()) {
            (false, Some(fit)) if fit.amplitudes.nrows() + fit.paths.nrows() == r => Some(fit),
            _ => None,
        };
        Ok((0..self.cfg.diagnostics.probes)
            .map(|_| {
                let t = rng.gen_range(0.0..=t_end);
                let x = match fit {
                    Some(fit) => {
                        let (k, (lo, hi)) = (fit.amplitudes.nrows(), (fit.paths.min(), fit.paths.max()));
                        let j = rng.gen_range(0..fit.amplitudes.ncols());
                        DVector::from_fn(r, |i, _| {
                            if i < k {
                                fit.amplitudes[(i, j)] * (1.0 + 0.1 * rng.gen_range(-1.0..1.0))
                            } else {
                                let p = fit.paths[(i - k, j)] + 0.05 * (hi - lo) * rng.gen_range(-1.0..1.0);
                                p.clamp(lo, hi)
                            }
                        })
                    }
                    None => DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0)),
                };
                (t, x)
            })
            .collect())
    }

    pub fn diag(&self) -> Result<serde_json::Value> {
        self.ensure_out()?;
        let selectors = self.cfg.selectors();
        let mut need = vec![FOM_TRAJECTORY.to_string()];
        need.extend(selectors.iter().map(|s| rom_trajectory_name(*s)));
        self.require(&need)?;
        let model = build_model(&self.cfg)?;
        let off = self.load_offline()?;
        let fom = self.read_fom(&model)?;
        let d = &self.cfg.diagnostics;
        let weight = model.weight(self.cfg.offline.weight);
        let mut report = serde_json::Map::new();
        let mut balances: Vec<(Selector, BalanceResult)> = Vec::new();
        for &sel in &selectors {
            let built = build_rom(&model, &off, sel, self.cfg.t_end())?;
            let rom = &built.rom;
            let mut traj = Trajectory::read_csv(&self.path(&rom_trajectory_name(sel)))?;
            model.attach_inputs(&mut traj);
            let mut entry = serde_json::Map::new();
            entry.insert("samples".into(), json!(traj.len()));
            entry.insert("complete".into(), json!(traj.len() == fom.len()));
            if d.power_balance {
                let (rec, en, res) = self.balance(rom, &traj)?;
                self.emit_balance(&format!("power_balance_{}.csv", sel.name()), &rec, &en)?;
                entry.insert("power_balance".into(), serde_json::to_value(&res).expect("serializable"));
                balances.push((sel, res));
            }
            if d.error {
                let lifted = lift_trajectory(rom, &traj)?;
                let err = if lifted.len() == fom.len() {
                    json!(relative_l2_error(&fom, &lifted, weight.as_ref())?)
                } else {
                    serde_json::Value::Null
                };
                let value = json!({ "selector": sel.name(), "relative_l2_error": err, "weight": self.cfg.offline.weight });
                self.emit_json(&format!("error_{}.json", sel.name()), &value)?;
                entry.insert("relative_l2_error".into(), err);
            }
            let probes = self.probes(rom, &off, sel)?;
            if d.certificate {
                let cert = stability_certificate(&rom.ansatz, &model.system, &probes, Some((rom, &traj)))?;
                self.emit_json(&format!("certificate_{}.json", sel.name()), &cert)?;
                entry.insert("certificate".into(), serde_json::to_value(&cert).expect("serializable"));
            }
            if rom.structure == Structure::Preserving && !probes.is_empty() {
                let s = structure_report(rom, &probes)?;
                entry.insert("structure".into(), serde_json::to_value(&s).expect("serializable"));
            }
            if d.bound && sel == Selector::Lti {
                let lti = model.lti.as_ref().expect("validated linear model");
                let (rec, k) = error_bound_report(lti, rom, &fom, &traj, None)?;
                let header: Vec<String> = ["t", "bound", "measured"].map(String::from).to_vec();
                self.emit_table("bound_lti.csv", &header, rec.iter().map(|r| vec![r.t, r.bound, r.measured]).collect())?;
                let dominated = rec.iter().all(|r| r.bound + 1e-8 >= r.measured);
                entry.insert("bound".into(), json!({ "constants": k, "dominates": dominated }));
            }
            report.insert(sel.name().into(), serde_json::Value::Object(entry));
        }
        let comparison = balance_comparison(&balances, self.cfg.timestep.newton.atol);
        if let Some(c) = &comparison {
            self.emit_json(BALANCE_REPORT, c)?;
        }
        let summary = json!({ "selectors": report, "balance_comparison": comparison });
        self.emit_json(DIAG_SUMMARY, &summary)?;
        Ok(summary)
    }

    /// Reduced runs of the main selector at every sweep step size, each in its own subdirectory.
    pub fn sweep(&self, threads: usize) -> Result<serde_json::Value> {
        self.ensure_out()?;
        let steps = self.cfg.timestep.sweep_steps.clone();
        if steps.is_empty() {
            return Err(Error::Config("timestep.sweep_steps is empty".into()));
        }
        let off = self.load_offline()?;
        let sel = self.cfg.reduction.selector;
        let run_one = |i: usize, step: f64| -> Result<serde_json::Value> {
            let mut cfg = self.cfg.clone();
            cfg.timestep.step = Some(step);
            cfg.reduction.compare.clear();
            cfg.diagnostics.bound = false;
            let sub = Pipeline::new(cfg, self.out.join(format!("step_{i}")))?;
            sub.ensure_out()?;
            let model = build_model(&sub.cfg)?;
            let built = build_rom(&model, &off, sel, sub.cfg.t_end())?;
            let traj = sub.integrate(&built.rom, &built.x0, &model.input).map_err(|(e, _)| e)?;
            sub.emit_trajectory(&rom_trajectory_name(sel), &traj)?;
            let (rec, en, res) = sub.balance(&built.rom, &traj)?;
            sub.emit_balance(&format!("power_balance_{}.csv", sel.name()), &rec, &en)?;
            Ok(json!({
                "step": step,
                "max_error": res.summary.max_error,
                "mean_error": res.summary.mean_error,
                "max_abs_energy": res.summary.max_abs_energy,
                "dir": format!("step_{i}"),
            }))
        };
        let jobs: Vec<(usize, f64)> = steps.iter().copied().enumerate().collect();
        let threads = threads.max(1).min(jobs.len());
        let mut results: Vec<Option<Result<serde_json::Value>>> = (0..jobs.len()).map(|_| None).collect();
        if threads == 1 {
            for &(i, s) in &jobs {
                results[i] = Some(run_one(i, s));
            }
        } else {
            let chunks: Vec<Vec<(usize, f64)>> = (0..threads).map(|w| jobs.iter().copied().skip(w).step_by(threads).collect()).collect();
            let done: Vec<Vec<(usize, Result<serde_json::Value>)>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .iter()
                    .map(|c| scope.spawn(|| c.iter().map(|&(i, s)| (i, run_one(i, s))).collect::<Vec<_>>()))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
            });
            for (i, r) in done.into_iter().flatten() {
                results[i] = Some(r);
            }
        }
        let mut rows = Vec::new();
        for r in results {
            rows.push(r.expect("every job ran")?);
        }
        let taus: Vec<f64> = rows.iter().map(|r| r["step"].as_f64().unwrap_or(0.0)).collect();
        let col = |k: &str| rows.iter().map(|r| r[k].as_f64().unwrap_or(0.0)).collect::<Vec<_>>();
        let header: Vec<String> = ["step", "max_error", "mean_error"].map(String::from).to_vec();
        let table = rows.iter().map(|r| vec![r["step"].as_f64().unwrap_or(0.0), r["max_error"].as_f64().unwrap_or(0.0), r["mean_error"].as_f64().unwrap_or(0.0)]).collect();
        self.emit_table("sweep_summary.csv", &header, table)?;
        let summary = json!({
            "selector": sel.name(),
            "runs": rows,
            "order_max_error": fitted_order(&taus, &col("max_error")),
            "order_mean_error": fitted_order(&taus, &col("mean_error")),
        });
        self.emit_json(SWEEP_SUMMARY, &summary)?;
        Ok(summary)
    }
}

/// Structure-preserving versus baseline power-balance errors, when both were run.
fn balance_comparison(balances: &[(Selector, BalanceResult)], tolerance: f64) -> Option<serde_json::Value> {
    let sp = balances.iter().find(|(s, b)| b.structure == Structure::Preserving && !s.uses_pod());
    let bl = balances.iter().find(|(_, b)| b.structure == Structure::Baseline);
    let (sp, bl) = (sp?, bl?);
    let ratio = bl.1.summary.max_error / sp.1.summary.max_error.max(f64::MIN_POSITIVE);
    Some(json!({
        "structure_preserving": sp.0.name(),
        "baseline": bl.0.name(),
        "structure_preserving_max_error": sp.1.summary.max_error,
        "baseline_max_error": bl.1.summary.max_error,
        "ratio": ratio,
        "ratio_at_least_10": ratio >= 10.0,
        "baseline_min_signed_error": bl.1.min_signed_error,
        "baseline_negative_violation": bl.1.min_signed_error < -tolerance,
        "structure_preserving_max_energy_increase": sp.1.summary.max_energy_increase,
    }))
}

fn shift_json(s: &ShiftOperator) -> serde_json::Value {
    let x0 = s.target_nodes()[0];
    json!({
        "kind": s.kind(),
        "x0": x0,
        "h": s.spacing(),
        "target_len": s.target_len(),
        "left": s.offset(),
        "right": s.source_len() - s.offset() - s.target_len(),
    })
}

fn shift_from_json(v: &serde_json::Value) -> Result<ShiftOperator> {
    let f = |k: &str| v[k].as_f64().ok_or_else(|| Error::InvalidParameter(format!("shift.{k} missing")));
    let u = |k: &str| v[k].as_u64().map(|x| x as usize).ok_or_else(|| Error::InvalidParameter(format!("shift.{k} missing")));
    let kind: ShiftKind = serde_json::from_value(v["kind"].clone()).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    match kind {
        ShiftKind::Periodic => ShiftOperator::periodic(f("x0")?, f("h")?, u("target_len")?),
        ShiftKind::Extended => ShiftOperator::extended(f("x0")?, f("h")?, u("target_len")?, u("left")?, u("right")?),
    }
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_of_quadratic_data() {
        let x = [1e-3, 5e-4, 2e-4];
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t * t).collect();
        assert!((fitted_order(&x, &y).unwrap() - 2.0).abs() < 1e-12);
        assert!(fitted_order(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::MissingInputs(vec![])), 4);
        assert_eq!(exit_code(&Error::NewtonMaxIter { iterations: 1, residual: 1.0 }), 3);
    }
}
