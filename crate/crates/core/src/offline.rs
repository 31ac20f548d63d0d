//! Offline stage: shift paths, shifted modes, and POD bases from snapshots.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_separable_from_shifts, Ansatz, ModeSet, PathSharing, SeparableLayout, ShiftKind, ShiftOperator, ShiftedModes, SeparableMap};
use crate::error::{Error, Result};
use crate::linalg::{lstsq_min_norm, BandedLu, LinearSolver, Op};
use crate::spline::{Boundary, UniformSpline};
use crate::timestep::Trajectory;

/// Uniform grid shared by every field block of a snapshot.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub x0: f64,
    pub h: f64,
    /// Nodes per block.
    pub nodes: usize,
    pub blocks: usize,
    /// Periodic with period `nodes·h`.
    pub periodic: bool,
}

impl SpatialGrid {
    pub fn state_dim(&self) -> usize {
        self.nodes * self.blocks
    }

    pub fn length(&self) -> f64 {
        if self.periodic {
            self.nodes as f64 * self.h
        } else {
            (self.nodes - 1) as f64 * self.h
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    fn spline(&self) -> Result<UniformSpline> {
        UniformSpline::new(self.x0, self.h, self.nodes, if self.periodic { Boundary::Periodic } else { Boundary::NotAKnot })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub grid: SpatialGrid,
    /// `n × n_t`
    pub data: DMatrix<f64>,
    pub times: Vec<f64>,
}

impl SnapshotSet {
    pub fn new(grid: SpatialGrid, data: DMatrix<f64>, times: Vec<f64>) -> Result<Self> {
        if data.ncols() != times.len() {
            return Err(Error::dim("snapshot columns", times.len(), data.ncols()));
        }
        if data.nrows() != grid.state_dim() {
            return Err(Error::dim("snapshot rows", grid.state_dim(), data.nrows()));
        }
        if data.ncols() == 0 {
            return Err(Error::InvalidParameter("no snapshots".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("snapshots contain non-finite entries".into()));
        }
        Ok(SnapshotSet { grid, data, times })
    }

    /// Every `stride`-th state of a trajectory, always including the first.
    pub fn from_trajectory(traj: &Trajectory, grid: SpatialGrid, stride: usize) -> Result<Self> {
        let stride = stride.max(1);
        let idx: Vec<usize> = (0..traj.len()).step_by(stride).collect();
        let n = traj.dim();
        let mut data = DMatrix::zeros(n, idx.len());
        for (c, &j) in idx.iter().enumerate() {
            data.set_column(c, &traj.states[j]);
        }
        Self::new(grid, data, idx.iter().map(|&j| traj.times[j]).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn block(&self, j: usize, b: usize) -> Vec<f64> {
        let m = self.grid.nodes;
        self.data.column(j).rows(b * m, m).iter().copied().collect()
    }
}

/// Reference point for periodic single-wave paths.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathAnchor {
    /// Relative to the first snapshot by cross-correlation; paths start at zero.
    #[default]
    FirstSnapshot,
    /// Absolute position of the maximum relative to the grid origin.
    Peak,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOptions {
    pub anchor: PathAnchor,
    /// Field block used for tracking.
    pub block: usize,
    /// Front level as a fraction of the global maximum.
    pub front_level: f64,
    /// Front displacements larger than this fraction of the domain between
    /// consecutive snapshots are treated as appearing or vanishing fronts.
    pub max_jump: f64,
    /// Moving-average window (odd).
    pub smoothing: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            anchor: PathAnchor::FirstSnapshot,
            block: 0,
            front_level: 0.1,
            max_jump: 0.1,
            smoothing: 5,
        }
    }
}

fn flat(v: &[f64], scale: f64) -> bool {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    hi - lo <= 1e-12 * (1.0 + scale)
}

/// Parabolic refinement of a discrete maximum at `k` from its neighbours.
fn refine(cm: f64, c0: f64, cp: f64) -> f64 {
    let den = cm - 2.0 * c0 + cp;
    if den < 0.0 {
        (0.5 * (cm - cp) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

fn unwrap_to(prev: f64, value: f64, period: f64) -> f64 {
    value - period * ((value - prev) / period).round()
}

/// Moving average with a window that shrinks symmetrically at the ends.
pub fn smooth_path(p: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = p.len();
    (0..n)
        .map(|j| {
            let w = half.min(j).min(n - 1 - j);
            p[j - w..=j + w].iter().sum::<f64>() / (2 * w + 1) as f64
        })
        .collect()
}

/// Level crossings `(position, rising)` by linear interpolation.
fn crossings(v: &[f64], level: f64, grid: &SpatialGrid) -> Vec<(f64, bool)> {
    let m = v.len();
    let pairs = if grid.periodic { m } else { m - 1 };
    let mut out = Vec::new();
    for i in 0..pairs {
        let (a, b) = (v[i] - level, v[(i + 1) % m] - level);
        if (a < 0.0) != (b < 0.0) {
            let f = a / (a - b);
            out.push((grid.node(i) + f * grid.h, b > a));
        }
    }
    out
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Shift amounts per wave and snapshot (`n_waves × n_t`).
pub fn estimate_shift_paths(s: &SnapshotSet, n_waves: usize, kind: ShiftKind, opts: &PathOptions) -> Result<DMatrix<f64>> {
    if n_waves == 0 {
        return Err(Error::InvalidParameter("need at least one wave".into()));
    }
    if opts.block >= s.grid.blocks {
        return Err(Error::InvalidParameter(format!("tracking block {} out of range", opts.block)));
    }
    if kind == ShiftKind::Periodic && !s.grid.periodic {
        return Err(Error::UnsupportedVariant("periodic paths need a periodic grid".into()));
    }
    let scale = s.data.amax();
    for j in 0..s.len() {
        if flat(&s.block(j, opts.block), scale) {
            return Err(Error::UndetectableWave { index: j });
        }
    }
    let raw = if kind == ShiftKind::Periodic && n_waves == 1 {
        vec![correlation_path(s, opts)?]
    } else {
        front_paths(s, n_waves, opts)?
    };
    let nt = s.len();
    let mut out = DMatrix::zeros(n_waves, nt);
    for (w, p) in raw.iter().enumerate() {
        for (j, v) in smooth_path(p, opts.smoothing).into_iter().enumerate() {
            out[(w, j)] = v;
        }
    }
    Ok(out)
}

fn correlation_path(s: &SnapshotSet, opts: &PathOptions) -> Result<Vec<f64>> {
    let m = s.grid.nodes;
    let period = s.grid.length();
    let h = s.grid.h;
    let reference = s.block(0, opts.block);
    let mut path = Vec::with_capacity(s.len());
    for j in 0..s.len() {
        let v = s.block(j, opts.block);
        let raw = match opts.anchor {
            PathAnchor::FirstSnapshot => {
                let corr: Vec<f64> = (0..m).map(|k| (0..m).map(|i| reference[i] * v[(i + k) % m]).sum()).collect();
                let k = argmax(&corr);
                let d = refine(corr[(k + m - 1) % m], corr[k], corr[(k + 1) % m]);
                (k as f64 + d) * h
            }
            PathAnchor::Peak => {
                let k = argmax(&v);
                let d = refine(v[(k + m - 1) % m], v[k], v[(k + 1) % m]);
                s.grid.node(k) + d * h - s.grid.x0
            }
        };
        let value = match path.last() {
            Some(&prev) => unwrap_to(prev, raw, period),
            None if opts.anchor == PathAnchor::FirstSnapshot => unwrap_to(0.0, raw, period),
            None => raw,
        };
        path.push(value);
    }
    Ok(path)
}

fn argmax(v: &[f64]) -> usize {
    let mut k = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[k] {
            k = i;
        }
    }
    k
}

/// Threshold-crossing front tracking. One wave: median displacement of all
/// matched fronts. Two waves: rising-sign displacements drive the first path,
/// falling-sign displacements the second.
fn front_paths(s: &SnapshotSet, n_waves: usize, opts: &PathOptions) -> Result<Vec<Vec<f64>>> {
    if n_waves > 2 {
        return Err(Error::UnsupportedVariant(format!("front tracking supports at most 2 waves, got {n_waves}")));
    }
    let level = opts.front_level * (0..s.len()).map(|j| s.block(j, opts.block).into_iter().fold(f64::NEG_INFINITY, f64::max)).fold(f64::NEG_INFINITY, f64::max);
    let period = s.grid.length();
    let jump = opts.max_jump * period;
    let fronts: Vec<Vec<(f64, bool)>> = (0..s.len()).map(|j| crossings(&s.block(j, opts.block), level, &s.grid)).collect();
    let mut paths = vec![vec![0.0; s.len()]; n_waves];
    for j in 1..s.len() {
        let mut moves = Vec::new();
        for &(x, rising) in &fronts[j] {
            let best = fronts[j - 1]
                .iter()
                .filter(|f| f.1 == rising)
                .map(|f| {
                    let d = x - f.0;
                    if s.grid.periodic {
                        d - period * (d / period).round()
                    } else {
                        d
                    }
                })
                .min_by(|a, b| a.abs().total_cmp(&b.abs()));
            if let Some(d) = best {
                if d.abs() <= jump {
                    moves.push(d);
                }
            }
        }
        if n_waves == 1 {
            paths[0][j] = paths[0][j - 1] + median(&mut moves).unwrap_or(0.0);
        } else {
            let mut pos: Vec<f64> = moves.iter().copied().filter(|d| *d > 0.0).collect();
            let mut neg: Vec<f64> = moves.iter().copied().filter(|d| *d < 0.0).collect();
            paths[0][j] = paths[0][j - 1] + median(&mut pos).unwrap_or(0.0);
            paths[1][j] = paths[1][j - 1] + median(&mut neg).unwrap_or(0.0);
        }
    }
    Ok(paths)
}

/// Shift operator over the snapshot grid able to realize every path value.
pub fn shift_operator_for(grid: &SpatialGrid, kind: ShiftKind, paths: &DMatrix<f64>, rel_margin: f64) -> Result<ShiftOperator> {
    match kind {
        ShiftKind::Periodic => {
            if !grid.periodic {
                return Err(Error::UnsupportedVariant("periodic shifts need a periodic grid".into()));
            }
            ShiftOperator::periodic(grid.x0, grid.h, grid.nodes)
        }
        ShiftKind::Extended => {
            let (lo, hi) = if paths.is_empty() { (0.0, 0.0) } else { (paths.min(), paths.max()) };
            let pad = rel_margin * (hi - lo).max(grid.length());
            ShiftOperator::extended(
                grid.x0,
                grid.h,
                grid.nodes,
                ((hi.max(0.0) + pad) / grid.h).ceil() as usize + 1,
                ((-lo).max(0.0) / grid.h + pad / grid.h).ceil() as usize + 1,
            )
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_sweeps: usize,
    /// Stop when the relative objective decrease of a sweep falls below this.
    pub rel_decrease: f64,
    /// Ridge relative to the mean diagonal of the mode normal matrix.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_sweeps: 200,
            rel_decrease: 1e-6,
            ridge: 1e-10,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OfflineResult {
    pub shift: Arc<ShiftOperator>,
    pub layout: SeparableLayout,
    pub modes: ModeSet,
    /// `r_p × n_t`
    pub paths: DMatrix<f64>,
    /// `k × n_t`
    pub amplitudes: DMatrix<f64>,
    pub times: Vec<f64>,
    /// Weighted relative L² reconstruction error.
    pub error: f64,
    pub sweeps: usize,
    /// Objective after each half-step, starting with the initial amplitude fit.
    pub objective: Vec<f64>,
    pub warnings: Vec<String>,
}

impl OfflineResult {
    pub fn ansatz(&self) -> Result<Ansatz> {
        build_separable_from_shifts(self.shift.clone(), &self.modes, self.layout)
    }

    /// Reduced state `[α(tⱼ); p(tⱼ)]`.
    pub fn reduced_state(&self, j: usize) -> DVector<f64> {
        let mut v: Vec<f64> = self.amplitudes.column(j).iter().copied().collect();
        v.extend(self.paths.column(j).iter());
        DVector::from_vec(v)
    }
}

/// Snapshot block resampled in the co-moving frame onto the shift source grid.
fn aligned_block(s: &SnapshotSet, shift: &ShiftOperator, j: usize, b: usize, amount: f64) -> Result<Vec<f64>> {
    let sp = s.grid.spline()?;
    let c = sp.coefficients(&s.block(j, b))?;
    let (lo, hi) = (s.grid.x0, s.grid.node(s.grid.nodes - 1));
    shift
        .source_nodes()
        .into_iter()
        .map(|z| {
            let x = z + amount;
            if s.grid.periodic || (x >= lo && x <= hi) {
                sp.eval(&c, x)
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

fn leading_vectors(a: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("u requested");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let mut out = DMatrix::zeros(a.nrows(), k);
    for (c, &i) in idx.iter().take(k).enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

fn check_paths(shift: &ShiftOperator, paths: &DMatrix<f64>) -> Result<()> {
    let (lo, hi) = shift.amount_range();
    for &p in paths.iter() {
        if !(p >= lo - 1e-9 && p <= hi + 1e-9) {
            return Err(Error::ShiftOutOfRange { amount: p, min: lo, max: hi });
        }
    }
    Ok(())
}

struct Fitter<'a> {
    s: &'a SnapshotSet,
    shift: Arc<ShiftOperator>,
    layout: SeparableLayout,
    paths: &'a DMatrix<f64>,
    k: usize,
    ridge: f64,
}

impl Fitter<'_> {
    fn map(&self, modes: &ModeSet) -> Result<ShiftedModes> {
        ShiftedModes::new(self.shift.clone(), modes, self.layout)
    }

    fn path(&self, j: usize) -> DVector<f64> {
        self.paths.column(j).into_owned()
    }

    /// Least-squares amplitudes per snapshot and the resulting objective.
    fn amplitudes(&self, modes: &ModeSet) -> Result<(DMatrix<f64>, f64)> {
        let map = self.map(modes)?;
        let mut amps = DMatrix::zeros(self.k, self.s.len());
        let mut obj = 0.0;
        for j in 0..self.s.len() {
            let v = map.basis(&self.path(j))?;
            let x = self.s.data.column(j).into_owned();
            let (a, _) = lstsq_min_norm(&v, &x, 1e-13);
            obj += (&v * &a - &x).norm_squared();
            amps.set_column(j, &a);
        }
        Ok((amps, obj))
    }

    fn objective(&self, modes: &ModeSet, amps: &DMatrix<f64>) -> Result<f64> {
        let map = self.map(modes)?;
        let mut obj = 0.0;
        for j in 0..self.s.len() {
            let v = map.basis(&self.path(j))?;
            obj += (v * amps.column(j) - self.s.data.column(j)).norm_squared();
        }
        Ok(obj)
    }

    fn initial_modes(&self) -> Result<ModeSet> {
        let src = self.shift.source_len();
        let blocks = self.s.grid.blocks;
        let nt = self.s.len();
        let aligned = |path: usize, residual: &DMatrix<f64>| -> Result<DMatrix<f64>> {
            let tmp = SnapshotSet {
                grid: self.s.grid,
                data: residual.clone(),
                times: self.s.times.clone(),
            };
            let mut a = DMatrix::zeros(blocks * src, nt);
            for j in 0..nt {
                for b in 0..blocks {
                    let col = aligned_block(&tmp, &self.shift, j, b, self.paths[(path, j)])?;
                    a.view_mut((b * src, j), (src, 1)).copy_from_slice(&col);
                }
            }
            Ok(a)
        };
        match self.layout.sharing {
            PathSharing::Shared => ModeSet::new(leading_vectors(&aligned(0, &self.s.data)?, self.k), blocks),
            PathSharing::PerMode => {
                let mut residual = self.s.data.clone();
                let mut modes = DMatrix::zeros(blocks * src, self.k);
                for i in 0..self.k {
                    let phi = leading_vectors(&aligned(self.layout.path_of(i), &residual)?, 1);
                    modes.set_column(i, &phi.column(0));
                    let single = ModeSet::new(phi, blocks)?;
                    let layout = SeparableLayout {
                        sharing: PathSharing::Shared,
                        blocks,
                    };
                    let map = ShiftedModes::new(self.shift.clone(), &single, layout)?;
                    for j in 0..nt {
                        let p = DVector::from_element(1, self.paths[(self.layout.path_of(i), j)]);
                        let v = map.basis(&p)?;
                        let x = residual.column(j).into_owned();
                        let (a, _) = lstsq_min_norm(&v, &x, 1e-13);
                        residual.set_column(j, &(x - v * a));
                    }
                }
                ModeSet::new(modes, blocks)
            }
        }
    }

    /// Mode update in free spline-coefficient space for fixed amplitudes.
    fn update_modes(&self, amps: &DMatrix<f64>, warnings: &mut Vec<String>) -> Result<ModeSet> {
        let sp = self.shift.spline();
        let nf = sp.n;
        let k = self.k;
        let blocks = self.s.grid.blocks;
        let nt_nodes = self.shift.target_len();
        let size = nf * k;
        let idx = |i: usize, c: usize| c * k + i;
        let banded = self.layout.sharing == PathSharing::Shared && self.shift.kind() == ShiftKind::Extended;
        let bw = 4 * k - 1;
        let mut dense = if banded { DMatrix::zeros(0, 0) } else { DMatrix::zeros(size, size) };
        let width = 2 * bw + 1;
        let mut band = if banded { vec![0.0; size * width] } else { Vec::new() };
        let mut rhs = DMatrix::zeros(size, blocks);
        let paths_n = self.layout.paths_for(k);
        for j in 0..self.s.len() {
            let stencils: Vec<_> = (0..paths_n).map(|l| self.shift.free_stencils(self.paths[(l, j)])).collect::<Result<_>>()?;
            for row in 0..nt_nodes {
                let mut entries: Vec<(usize, f64)> = Vec::with_capacity(4 * k);
                for i in 0..k {
                    let st = &stencils[self.layout.path_of(i)][row];
                    let a = amps[(i, j)];
                    for q in 0..4 {
                        entries.push((idx(i, st.index[q]), a * st.value[q]));
                    }
                }
                for &(r, vr) in &entries {
                    for &(c, vc) in &entries {
                        if banded {
                            band[r * width + (c + bw - r)] += vr * vc;
                        } else {
                            dense[(r, c)] += vr * vc;
                        }
                    }
                    for b in 0..blocks {
                        rhs[(r, b)] += vr * self.s.data[(b * nt_nodes + row, j)];
                    }
                }
            }
        }
        let diag: Vec<f64> = (0..size).map(|r| if banded { band[r * width + bw] } else { dense[(r, r)] }).collect();
        let mean = diag.iter().sum::<f64>() / size as f64;
        let lambda = self.ridge * mean.max(f64::MIN_POSITIVE);
        let weak = diag.iter().filter(|&&d| d <= 1e-12 * mean).count();
        if weak > 0 && !warnings.iter().any(|w| w.starts_with("mode normal system")) {
            warnings.push(format!("mode normal system rank deficient ({weak} unconstrained coefficients); ridge {lambda:e} applied"));
        }
        let solver = if banded {
            LinearSolver::Banded(BandedLu::factor_with(size, bw, bw, |r, c| band[r * width + (c + bw - r)] + if r == c { lambda } else { 0.0 })?)
        } else {
            for r in 0..size {
                dense[(r, r)] += lambda;
            }
            LinearSolver::new(&Op::Dense(dense))?
        };
        let mut modes = DMatrix::zeros(blocks * nf, k);
        for b in 0..blocks {
            let f = solver.solve(&rhs.column(b).into_owned())?;
            for i in 0..k {
                let free: Vec<f64> = (0..nf).map(|c| f[idx(i, c)]).collect();
                let values = sp.node_values(&sp.expand_free(&free));
                modes.view_mut((b * nf, i), (nf, 1)).copy_from_slice(&values);
            }
        }
        ModeSet::new(modes, blocks)
    }
}

/// Alternating least squares for shifted modes and amplitudes with fixed paths.
/// `weight` enters only the reported reconstruction error.
pub fn fit_modes(
    s: &SnapshotSet,
    paths: &DMatrix<f64>,
    shift: Arc<ShiftOperator>,
    layout: SeparableLayout,
    k_modes: usize,
    weight: Option<&Op>,
    opts: &FitOptions,
) -> Result<OfflineResult> {
    if k_modes == 0 {
        return Err(Error::InvalidParameter("need at least one mode".into()));
    }
    if layout.blocks != s.grid.blocks {
        return Err(Error::dim("layout blocks", s.grid.blocks, layout.blocks));
    }
    if shift.target_len() != s.grid.nodes {
        return Err(Error::dim("shift target nodes", s.grid.nodes, shift.target_len()));
    }
    let r_p = layout.paths_for(k_modes);
    if paths.shape() != (r_p, s.len()) {
        return Err(Error::dim("paths", format!("{r_p}x{}", s.len()), format!("{}x{}", paths.nrows(), paths.ncols())));
    }
    check_paths(&shift, paths)?;
    let fit = Fitter {
        s,
        shift: shift.clone(),
        layout,
        paths,
        k: k_modes,
        ridge: opts.ridge,
    };
    let mut warnings = Vec::new();
    let mut modes = fit.initial_modes()?;
    let (mut amps, mut obj) = fit.amplitudes(&modes)?;
    let mut history = vec![obj];
    let mut sweeps = 0;
    let slack = 1e-9;
    while sweeps < opts.max_sweeps && obj > 0.0 {
        sweeps += 1;
        let start = obj;
        let new_modes = fit.update_modes(&amps, &mut warnings)?;
        let after_modes = fit.objective(&new_modes, &amps)?;
        let (new_amps, after_amps) = fit.amplitudes(&new_modes)?;
        if after_modes > start * (1.0 + slack) || after_amps > after_modes * (1.0 + slack) {
            warnings.push(format!("alternating fit stopped at sweep {sweeps}: objective increased ({start:e} -> {after_modes:e} -> {after_amps:e})"));
            break;
        }
        history.push(after_modes);
        history.push(after_amps);
        modes = new_modes;
        amps = new_amps;
        obj = after_amps;
        if (start - obj) <= opts.rel_decrease * start {
            break;
        }
    }
    warnings.dedup();
    let result = OfflineResult {
        shift,
        layout,
        modes,
        paths: paths.clone(),
        amplitudes: amps,
        times: s.times.clone(),
        error: 0.0,
        sweeps,
        objective: history,
        warnings,
    };
    let error = reconstruction_error(s, &result, weight)?;
    Ok(OfflineResult { error, ..result })
}

/// Relative L² error (trapezoid in time, `W`-weighted in space) of the lifted fit.
pub fn reconstruction_error(s: &SnapshotSet, fit: &OfflineResult, weight: Option<&Op>) -> Result<f64> {
    let ansatz = fit.ansatz()?;
    let mut err = Vec::with_capacity(s.len());
    let mut refn = Vec::with_capacity(s.len());
    for j in 0..s.len() {
        let x = s.data.column(j).into_owned();
        let e = ansatz.lift(s.times[j], &fit.reduced_state(j))? - &x;
        let wn = |v: &DVector<f64>| match weight {
            Some(w) => v.dot(&w.mul_vec(v)),
            None => v.norm_squared(),
        };
        err.push(wn(&e));
        refn.push(wn(&x));
    }
    let num = trapezoid(&s.times, &err);
    let den = trapezoid(&s.times, &refn);
    Ok(if den > 0.0 { (num / den).sqrt() } else if num == 0.0 { 0.0 } else { f64::INFINITY })
}

/// Composite trapezoidal rule; a single sample counts with unit weight.
pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    if t.len() == 1 {
        return f[0];
    }
    t.windows(2).zip(f.windows(2)).map(|(tt, ff)| 0.5 * (tt[1] - tt[0]) * (ff[0] + ff[1])).sum()
}

/// Leading `r` left singular vectors of the snapshot matrix.
pub fn pod(s: &SnapshotSet, r: usize) -> Result<DMatrix<f64>> {
    let (n, nt) = s.data.shape();
    if r == 0 || r > n.min(nt) {
        return Err(Error::InvalidParameter(format!("POD rank {r} must lie in 1..={}", n.min(nt))));
    }
    Ok(leading_vectors(&s.data, r))
}
