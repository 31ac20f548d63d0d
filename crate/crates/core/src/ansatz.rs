//! Approximation maps from reduced to full state, including shifted-mode ansatzes.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::{Boundary, Stencil, UniformSpline};

pub type TimeMat = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;
pub type StateMat = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type StateDirMat = Arc<dyn Fn(f64, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type PathMat = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type PathDirMat = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `x ≈ Vₛ(p) α`, linear in the amplitudes `α` and nonlinear in the paths `p`.
pub trait SeparableMap: Send + Sync {
    fn state_dim(&self) -> usize;
    fn r_alpha(&self) -> usize;
    fn r_p(&self) -> usize;
    /// `Vₛ(p)`, `n × r_α`.
    fn basis(&self, p: &DVector<f64>) -> Result<DMatrix<f64>>;
    /// Directional derivative `Vₛ′(p)(dir)`, `n × r_α`.
    fn basis_derivative(&self, p: &DVector<f64>, dir: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// `V̂ₛ(p)(α)`: column `l` is `Vₛ′(p)(e_l) α`.
    fn vhat_alpha(&self, p: &DVector<f64>, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        let rp = self.r_p();
        let mut out = DMatrix::zeros(self.state_dim(), rp);
        for l in 0..rp {
            let mut e = DVector::zeros(rp);
            e[l] = 1.0;
            out.set_column(l, &(self.basis_derivative(p, &e)? * alpha));
        }
        Ok(out)
    }

    /// `(Vₛ(p), V̂ₛ(p)α)` in one evaluation.
    fn basis_and_vhat(&self, p: &DVector<f64>, alpha: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.basis(p)?, self.vhat_alpha(p, alpha)?))
    }
}

/// Separable map given by closures.
#[derive(Clone)]
pub struct FnSeparable {
    pub n: usize,
    pub r_alpha: usize,
    pub r_p: usize,
    pub vs: PathMat,
    pub dvs: PathDirMat,
}

impl SeparableMap for FnSeparable {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn r_alpha(&self) -> usize {
        self.r_alpha
    }
    fn r_p(&self) -> usize {
        self.r_p
    }
    fn basis(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok((self.vs)(p))
    }
    fn basis_derivative(&self, p: &DVector<f64>, dir: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok((self.dvs)(p, dir))
    }
}

#[derive(Clone)]
pub enum Ansatz {
    LinearTI(DMatrix<f64>),
    LinearTV {
        n: usize,
        r: usize,
        basis: TimeMat,
        d_dt: TimeMat,
    },
    Factorizable {
        n: usize,
        r: usize,
        basis: StateMat,
        d_dt: StateMat,
        /// `∂ₓ̃Vᵣ(t, x̃)(direction)`
        d_state: StateDirMat,
    },
    Separable(Arc<dyn SeparableMap>),
}

impl fmt::Debug for Ansatz {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Ansatz::LinearTI(_) => "LinearTI",
            Ansatz::LinearTV { .. } => "LinearTV",
            Ansatz::Factorizable { .. } => "Factorizable",
            Ansatz::Separable(_) => "Separable",
        };
        write!(f, "{name}(n={}, r={})", self.state_dim(), self.reduced_dim())
    }
}

impl Ansatz {
    pub fn separable(map: impl SeparableMap + 'static) -> Self {
        Ansatz::Separable(Arc::new(map))
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Ansatz::LinearTI(v) => v.nrows(),
            Ansatz::LinearTV { n, .. } | Ansatz::Factorizable { n, .. } => *n,
            Ansatz::Separable(s) => s.state_dim(),
        }
    }

    pub fn reduced_dim(&self) -> usize {
        match self {
            Ansatz::LinearTI(v) => v.ncols(),
            Ansatz::LinearTV { r, .. } | Ansatz::Factorizable { r, .. } => *r,
            Ansatz::Separable(s) => s.r_alpha() + s.r_p(),
        }
    }

    fn check_xt(&self, xt: &DVector<f64>) -> Result<()> {
        if xt.len() != self.reduced_dim() {
            return Err(Error::dim("reduced state", self.reduced_dim(), xt.len()));
        }
        Ok(())
    }

    /// Split a separable reduced state into `(α, p)`.
    pub fn split(&self, xt: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        match self {
            Ansatz::Separable(s) => {
                self.check_xt(xt)?;
                let ra = s.r_alpha();
                Ok((xt.rows(0, ra).into_owned(), xt.rows(ra, s.r_p()).into_owned()))
            }
            _ => Err(Error::UnsupportedVariant("split is defined for separable ansatzes".into())),
        }
    }

    /// `Vᵣ(t, x̃)`, with `[Vₛ(p) | 0]` for separable ansatzes.
    pub fn eval_basis(&self, t: f64, xt: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_xt(xt)?;
        match self {
            Ansatz::LinearTI(v) => Ok(v.clone()),
            Ansatz::LinearTV { basis, .. } => Ok(basis(t)),
            Ansatz::Factorizable { basis, .. } => Ok(basis(t, xt)),
            Ansatz::Separable(s) => {
                let vs = self.separable_block(xt)?;
                let mut out = DMatrix::zeros(s.state_dim(), self.reduced_dim());
                out.columns_mut(0, s.r_alpha()).copy_from(&vs);
                Ok(out)
            }
        }
    }

    /// `Vₛ(p)` alone.
    pub fn separable_block(&self, xt: &DVector<f64>) -> Result<DMatrix<f64>> {
        match self {
            Ansatz::Separable(s) => {
                let (_, p) = self.split(xt)?;
                s.basis(&p)
            }
            _ => Err(Error::UnsupportedVariant("separable block requested from a non-separable ansatz".into())),
        }
    }

    /// `V̂ᵣ(t,x̃)(x̃)` (factorizable, `n × r`) or `V̂ₛ(p)(α)` (separable, `n × r_p`).
    pub fn eval_vhat(&self, t: f64, xt: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_xt(xt)?;
        match self {
            Ansatz::Factorizable { n, r, d_state, .. } => {
                let mut out = DMatrix::zeros(*n, *r);
                for i in 0..*r {
                    let mut e = DVector::zeros(*r);
                    e[i] = 1.0;
                    out.set_column(i, &(d_state(t, xt, &e) * xt));
                }
                Ok(out)
            }
            Ansatz::Separable(s) => {
                let (a, p) = self.split(xt)?;
                s.vhat_alpha(&p, &a)
            }
            _ => Err(Error::UnsupportedVariant("V-hat is defined for factorizable and separable ansatzes".into())),
        }
    }

    /// `∂ₜVᵣ(t, x̃)`; zero for the time-independent variants.
    pub fn eval_d_dt(&self, t: f64, xt: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_xt(xt)?;
        match self {
            Ansatz::LinearTI(v) => Ok(DMatrix::zeros(v.nrows(), v.ncols())),
            Ansatz::LinearTV { d_dt, .. } => Ok(d_dt(t)),
            Ansatz::Factorizable { d_dt, .. } => Ok(d_dt(t, xt)),
            Ansatz::Separable(s) => Ok(DMatrix::zeros(s.state_dim(), self.reduced_dim())),
        }
    }

    /// `Vᵣ(t, x̃) x̃`
    pub fn lift(&self, t: f64, xt: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_xt(xt)?;
        match self {
            Ansatz::Separable(s) => {
                let (a, p) = self.split(xt)?;
                Ok(s.basis(&p)? * a)
            }
            _ => Ok(self.eval_basis(t, xt)? * xt),
        }
    }

    /// Embed a separable ansatz as a factorizable one via `[Vₛ(p) | 0]`.
    pub fn as_factorizable(&self) -> Result<Ansatz> {
        let s = match self {
            Ansatz::Separable(s) => s.clone(),
            _ => return Err(Error::UnsupportedVariant("only separable ansatzes embed as factorizable".into())),
        };
        let (n, ra, rp) = (s.state_dim(), s.r_alpha(), s.r_p());
        let r = ra + rp;
        let s1 = s.clone();
        let basis: StateMat = Arc::new(move |_, xt| {
            let mut out = DMatrix::zeros(n, r);
            let p = xt.rows(ra, rp).into_owned();
            out.columns_mut(0, ra).copy_from(&s1.basis(&p).expect("separable basis"));
            out
        });
        let d_state: StateDirMat = Arc::new(move |_, xt, dir| {
            let mut out = DMatrix::zeros(n, r);
            let p = xt.rows(ra, rp).into_owned();
            let dp = dir.rows(ra, rp).into_owned();
            out.columns_mut(0, ra).copy_from(&s.basis_derivative(&p, &dp).expect("separable derivative"));
            out
        });
        Ok(Ansatz::Factorizable {
            n,
            r,
            basis,
            d_dt: Arc::new(move |_, _| DMatrix::zeros(n, r)),
            d_state,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShiftKind {
    Periodic,
    Extended,
}

/// Translation of grid profiles by cubic-spline interpolation.
#[derive(Clone, Debug)]
pub struct ShiftOperator {
    kind: ShiftKind,
    spline: UniformSpline,
    n_target: usize,
    /// Source index of the first target node.
    offset: usize,
}

impl ShiftOperator {
    /// Periodic shifts on `n` nodes `x0 + i·h`; the domain length is `n·h`.
    pub fn periodic(x0: f64, h: f64, n: usize) -> Result<Self> {
        Ok(ShiftOperator {
            kind: ShiftKind::Periodic,
            spline: UniformSpline::new(x0, h, n, Boundary::Periodic)?,
            n_target: n,
            offset: 0,
        })
    }

    /// Target window of `n_target` nodes extended by `left`/`right` nodes of equal spacing.
    pub fn extended(target_x0: f64, h: f64, n_target: usize, left: usize, right: usize) -> Result<Self> {
        if n_target < 2 {
            return Err(Error::InvalidParameter("target window needs at least two nodes".into()));
        }
        let n_src = left + n_target + right;
        Ok(ShiftOperator {
            kind: ShiftKind::Extended,
            spline: UniformSpline::new(target_x0 - left as f64 * h, h, n_src, Boundary::NotAKnot)?,
            n_target,
            offset: left,
        })
    }

    /// Extension covering shifts in `[p_min, p_max]` plus `rel_margin` of the range on each side.
    pub fn extended_for_paths(target_x0: f64, h: f64, n_target: usize, p_min: f64, p_max: f64, rel_margin: f64) -> Result<Self> {
        let range = (p_max - p_min).max(0.0);
        let pad = rel_margin * range;
        let left_len = p_max.max(0.0) + pad;
        let right_len = (-p_min).max(0.0) + pad;
        let left = (left_len / h).ceil() as usize + 1;
        let right = (right_len / h).ceil() as usize + 1;
        Self::extended(target_x0, h, n_target, left, right)
    }

    pub fn kind(&self) -> ShiftKind {
        self.kind
    }

    pub fn spacing(&self) -> f64 {
        self.spline.h
    }

    pub fn source_len(&self) -> usize {
        self.spline.n
    }

    pub fn target_len(&self) -> usize {
        self.n_target
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn spline(&self) -> &UniformSpline {
        &self.spline
    }

    pub fn source_nodes(&self) -> Vec<f64> {
        (0..self.source_len()).map(|i| self.spline.node(i)).collect()
    }

    pub fn target_nodes(&self) -> Vec<f64> {
        (0..self.n_target).map(|i| self.spline.node(i + self.offset)).collect()
    }

    /// Admissible shift amounts (infinite for the periodic kind).
    pub fn amount_range(&self) -> (f64, f64) {
        match self.kind {
            ShiftKind::Periodic => (f64::NEG_INFINITY, f64::INFINITY),
            ShiftKind::Extended => {
                let h = self.spline.h;
                let right = self.source_len() - self.offset - self.n_target;
                (-(right as f64) * h, self.offset as f64 * h)
            }
        }
    }

    fn check_amount(&self, amount: f64) -> Result<()> {
        let (lo, hi) = self.amount_range();
        let slack = 1e-9 * self.spline.h;
        if !amount.is_finite() || amount < lo - slack || amount > hi + slack {
            return Err(Error::ShiftOutOfRange { amount, min: lo, max: hi });
        }
        Ok(())
    }

    /// Restrict source-grid values to the target window.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        values[self.offset..self.offset + self.n_target].to_vec()
    }

    pub fn coefficients(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.spline.coefficients(values)
    }

    fn target_arg(&self, j: usize, amount: f64) -> f64 {
        self.spline.node(j + self.offset) - amount
    }

    /// Stencils (stored coefficients) of `s(ξⱼ − amount)` at each target node.
    pub fn stencils(&self, amount: f64) -> Result<Vec<Stencil>> {
        self.check_amount(amount)?;
        (0..self.n_target).map(|j| self.spline.stencil(self.target_arg(j, amount))).collect()
    }

    /// Like [`Self::stencils`] but on the free coefficients (see [`UniformSpline::free_stencil`]).
    pub fn free_stencils(&self, amount: f64) -> Result<Vec<Stencil>> {
        self.check_amount(amount)?;
        (0..self.n_target).map(|j| self.spline.free_stencil(self.target_arg(j, amount))).collect()
    }

    /// Translate the profile by `+amount` and sample on the target window.
    pub fn shift_apply(&self, values: &DVector<f64>, amount: f64) -> Result<DVector<f64>> {
        if values.len() != self.source_len() {
            return Err(Error::dim("shift values", self.source_len(), values.len()));
        }
        let c = self.coefficients(values.as_slice())?;
        let st = self.stencils(amount)?;
        Ok(DVector::from_iterator(st.len(), st.iter().map(|s| apply(&c, s).0)))
    }
}

#[inline]
fn apply(c: &[f64], s: &Stencil) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for q in 0..4 {
        let ck = c[s.index[q]];
        v += ck * s.value[q];
        d += ck * s.slope[q];
    }
    (v, d)
}

/// Modes on the source grid, stacked by field block.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSet {
    /// `(blocks · source_len) × k`
    pub modes: DMatrix<f64>,
    pub blocks: usize,
}

impl ModeSet {
    pub fn new(modes: DMatrix<f64>, blocks: usize) -> Result<Self> {
        if modes.ncols() == 0 {
            return Err(Error::InvalidParameter("mode set needs at least one mode".into()));
        }
        if blocks == 0 || modes.nrows() % blocks != 0 {
            return Err(Error::dim("mode rows", format!("multiple of {blocks}"), modes.nrows()));
        }
        Ok(ModeSet { modes, blocks })
    }

    pub fn count(&self) -> usize {
        self.modes.ncols()
    }

    pub fn block_len(&self) -> usize {
        self.modes.nrows() / self.blocks
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathSharing {
    /// One path shifts every mode.
    Shared,
    /// Mode `i` follows path `i`.
    PerMode,
}

/// Path sharing and field-block layout of shifted modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeparableLayout {
    pub sharing: PathSharing,
    /// Field blocks; every block of a mode is shifted by the same amount.
    pub blocks: usize,
}

impl SeparableLayout {
    pub fn paths_for(&self, modes: usize) -> usize {
        match self.sharing {
            PathSharing::Shared => 1,
            PathSharing::PerMode => modes,
        }
    }

    pub fn path_of(&self, mode: usize) -> usize {
        match self.sharing {
            PathSharing::Shared => 0,
            PathSharing::PerMode => mode,
        }
    }
}

/// Separable map whose columns are spline-shifted modes.
#[derive(Clone, Debug)]
pub struct ShiftedModes {
    shift: Arc<ShiftOperator>,
    layout: SeparableLayout,
    k: usize,
    /// `coeffs[mode][block]`
    coeffs: Vec<Vec<Vec<f64>>>,
}

impl ShiftedModes {
    pub fn new(shift: Arc<ShiftOperator>, modes: &ModeSet, layout: SeparableLayout) -> Result<Self> {
        if modes.blocks != layout.blocks {
            return Err(Error::dim("mode blocks", layout.blocks, modes.blocks));
        }
        if modes.block_len() != shift.source_len() {
            return Err(Error::dim("mode rows per block", shift.source_len(), modes.block_len()));
        }
        let k = modes.count();
        let m = shift.source_len();
        let coeffs = (0..k)
            .map(|i| {
                (0..layout.blocks)
                    .map(|b| {
                        let col: Vec<f64> = modes.modes.column(i).rows(b * m, m).iter().copied().collect();
                        shift.coefficients(&col)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ShiftedModes { shift, layout, k, coeffs })
    }

    pub fn shift(&self) -> &ShiftOperator {
        &self.shift
    }

    fn check_p(&self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.r_p() {
            return Err(Error::dim("path vector", self.r_p(), p.len()));
        }
        Ok(())
    }

    /// Shifted mode values and their derivatives with respect to their own path.
    fn columns(&self, p: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_p(p)?;
        let nt = self.shift.target_len();
        let n = nt * self.layout.blocks;
        let mut vals = DMatrix::zeros(n, self.k);
        let mut ders = DMatrix::zeros(n, self.k);
        let stencils: Vec<Vec<Stencil>> = (0..p.len()).map(|l| self.shift.stencils(p[l])).collect::<Result<_>>()?;
        for i in 0..self.k {
            let st = &stencils[self.layout.path_of(i)];
            for b in 0..self.layout.blocks {
                let c = &self.coeffs[i][b];
                for (j, s) in st.iter().enumerate() {
                    let (v, d) = apply(c, s);
                    vals[(b * nt + j, i)] = v;
                    // d/d(amount) of s(ξ − amount)
                    ders[(b * nt + j, i)] = -d;
                }
            }
        }
        Ok((vals, ders))
    }
}

impl SeparableMap for ShiftedModes {
    fn state_dim(&self) -> usize {
        self.shift.target_len() * self.layout.blocks
    }

    fn r_alpha(&self) -> usize {
        self.k
    }

    fn r_p(&self) -> usize {
        self.layout.paths_for(self.k)
    }

    fn basis(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.columns(p)?.0)
    }

    fn basis_derivative(&self, p: &DVector<f64>, dir: &DVector<f64>) -> Result<DMatrix<f64>> {
        let (_, mut ders) = self.columns(p)?;
        for i in 0..self.k {
            let w = dir[self.layout.path_of(i)];
            ders.column_mut(i).scale_mut(w);
        }
        Ok(ders)
    }

    fn vhat_alpha(&self, p: &DVector<f64>, alpha: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.basis_and_vhat(p, alpha)?.1)
    }

    fn basis_and_vhat(&self, p: &DVector<f64>, alpha: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if alpha.len() != self.k {
            return Err(Error::dim("amplitudes", self.k, alpha.len()));
        }
        let (vals, ders) = self.columns(p)?;
        let mut vhat = DMatrix::zeros(vals.nrows(), self.r_p());
        for i in 0..self.k {
            let l = self.layout.path_of(i);
            let mut col = vhat.column_mut(l);
            col.axpy(alpha[i], &ders.column(i), 1.0);
        }
        Ok((vals, vhat))
    }
}

/// Separable ansatz from shifted modes.
pub fn build_separable_from_shifts(shift: Arc<ShiftOperator>, modes: &ModeSet, layout: SeparableLayout) -> Result<Ansatz> {
    Ok(Ansatz::separable(ShiftedModes::new(shift, modes, layout)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    pub(crate) fn rotation_ansatz() -> Ansatz {
        Ansatz::separable(FnSeparable {
            n: 2,
            r_alpha: 1,
            r_p: 1,
            vs: Arc::new(|p| DMatrix::from_column_slice(2, 1, &[p[0].cos(), p[0].sin()])),
            dvs: Arc::new(|p, d| DMatrix::from_column_slice(2, 1, &[-p[0].sin() * d[0], p[0].cos() * d[0]])),
        })
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn rotation_ansatz_basis_values() {
        let a = rotation_ansatz();
        assert_eq!(a.reduced_dim(), 2);
        let b0 = a.separable_block(&v(&[1.0, 0.0])).unwrap();
        assert_eq!(b0.as_slice(), &[1.0, 0.0]);
        let b1 = a.separable_block(&v(&[1.0, PI / 2.0])).unwrap();
        assert!((b1[(0, 0)]).abs() < 1e-15 && (b1[(1, 0)] - 1.0).abs() < 1e-15);
        let full = a.eval_basis(0.0, &v(&[1.0, 0.0])).unwrap();
        assert_eq!(full.shape(), (2, 2));
        assert_eq!(full.column(1).norm(), 0.0);
    }

    #[test]
    fn rotation_ansatz_vhat_and_lift() {
        let a = rotation_ansatz();
        let p = 0.7;
        let vh = a.eval_vhat(0.0, &v(&[1.0, p])).unwrap();
        assert!((vh[(0, 0)] + p.sin()).abs() < 1e-15 && (vh[(1, 0)] - p.cos()).abs() < 1e-15);
        assert_eq!(a.eval_vhat(0.0, &v(&[0.0, p])).unwrap().norm(), 0.0);
        assert_eq!(a.lift(0.0, &v(&[2.0, 0.0])).unwrap().as_slice(), &[2.0, 0.0]);
        assert_eq!(a.lift(0.0, &v(&[0.0, 1.3])).unwrap().norm(), 0.0);
    }

    #[test]
    fn linear_variants() {
        let a = Ansatz::LinearTI(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        assert_eq!(a.lift(3.0, &v(&[3.0])).unwrap().as_slice(), &[3.0, 0.0]);
        assert!(matches!(a.eval_vhat(0.0, &v(&[1.0])), Err(Error::UnsupportedVariant(_))));
        assert!(matches!(a.lift(0.0, &v(&[1.0, 2.0])), Err(Error::Dimension { .. })));
        let f = Ansatz::Factorizable {
            n: 2,
            r: 1,
            basis: Arc::new(|_, _| DMatrix::from_column_slice(2, 1, &[1.0, 1.0])),
            d_dt: Arc::new(|_, _| DMatrix::zeros(2, 1)),
            d_state: Arc::new(|_, _, _| DMatrix::zeros(2, 1)),
        };
        assert_eq!(f.eval_vhat(0.5, &v(&[2.0])).unwrap().norm(), 0.0);
    }

    #[test]
    fn separable_embeds_as_factorizable() {
        let a = rotation_ansatz();
        let f = a.as_factorizable().unwrap();
        for k in 0..20 {
            let xt = v(&[0.3 * k as f64 - 2.0, 0.41 * k as f64]);
            assert!((a.lift(0.0, &xt).unwrap() - f.lift(0.0, &xt).unwrap()).norm() <= 1e-12);
            let vh = f.eval_vhat(0.0, &xt).unwrap();
            let vs = a.eval_vhat(0.0, &xt).unwrap();
            assert!((vh.column(1) - vs.column(0)).norm() < 1e-14);
        }
    }

    #[test]
    fn periodic_shift_by_one_spacing_is_index_shift() {
        let n = 16;
        let op = ShiftOperator::periodic(0.0, 1.0 / n as f64, n).unwrap();
        let vals = DVector::from_fn(n, |i, _| ((3 * i + 1) % 7) as f64);
        let out = op.shift_apply(&vals, 1.0 / n as f64).unwrap();
        for i in 0..n {
            assert!((out[i] - vals[(i + n - 1) % n]).abs() < 1e-12);
        }
        let same = op.shift_apply(&vals, 0.0).unwrap();
        assert!((same - &vals).norm() < 1e-12);
    }

    #[test]
    fn periodic_shift_of_sine() {
        let n = 64;
        let h = 1.0 / n as f64;
        let op = ShiftOperator::periodic(0.0, h, n).unwrap();
        let vals = DVector::from_fn(n, |i, _| (2.0 * PI * i as f64 * h).sin());
        let out = op.shift_apply(&vals, 0.3).unwrap();
        let err = (0..n)
            .map(|i| (out[i] - (2.0 * PI * (i as f64 * h - 0.3)).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn extended_shift_range_and_window() {
        let op = ShiftOperator::extended(0.0, 0.1, 11, 5, 3).unwrap();
        assert_eq!(op.source_len(), 19);
        let (lo, hi) = op.amount_range();
        assert!((lo + 0.3).abs() < 1e-14 && (hi - 0.5).abs() < 1e-14);
        let vals = DVector::from_iterator(19, op.source_nodes().into_iter().map(|x| x * x));
        let out = op.shift_apply(&vals, 0.25).unwrap();
        for (j, x) in op.target_nodes().iter().enumerate() {
            assert!((out[j] - (x - 0.25) * (x - 0.25)).abs() < 1e-12);
        }
        assert!(matches!(op.shift_apply(&vals, 0.6), Err(Error::ShiftOutOfRange { .. })));
        assert!(matches!(op.shift_apply(&vals, -0.31), Err(Error::ShiftOutOfRange { .. })));
        let id = op.shift_apply(&vals, 0.0).unwrap();
        assert!((id - DVector::from_vec(op.restrict(vals.as_slice()))).norm() < 1e-12);
    }

    #[test]
    fn shifted_mode_layouts() {
        let op = Arc::new(ShiftOperator::extended(0.0, 0.1, 11, 4, 4).unwrap());
        let m = op.source_len();
        let modes = ModeSet::new(DMatrix::from_fn(m, 3, |i, j| ((i + j) as f64 * 0.3).sin()), 1).unwrap();
        let layout = SeparableLayout {
            sharing: PathSharing::Shared,
            blocks: 1,
        };
        let a = build_separable_from_shifts(op.clone(), &modes, layout).unwrap();
        assert_eq!(a.reduced_dim(), 4);
        let single = ModeSet::new(modes.modes.columns(0, 1).into_owned(), 1).unwrap();
        let a1 = build_separable_from_shifts(op.clone(), &single, layout).unwrap();
        let vs = a1.separable_block(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let window = op.restrict(modes.modes.column(0).as_slice());
        for j in 0..11 {
            assert!((vs[(j, 0)] - window[j]).abs() < 1e-12);
        }

        let pop = Arc::new(ShiftOperator::periodic(0.0, 0.1, 10).unwrap());
        let two_block = ModeSet::new(DMatrix::from_fn(20, 2, |i, j| (i * (j + 1)) as f64), 2).unwrap();
        let per_mode = SeparableLayout {
            sharing: PathSharing::PerMode,
            blocks: 2,
        };
        let a2 = build_separable_from_shifts(pop.clone(), &two_block, per_mode).unwrap();
        if let Ansatz::Separable(s) = &a2 {
            assert_eq!((s.r_alpha(), s.r_p()), (2, 2));
        }
        let wrong = SeparableLayout {
            sharing: PathSharing::PerMode,
            blocks: 1,
        };
        assert!(build_separable_from_shifts(pop, &two_block, wrong).is_err());
    }
}
