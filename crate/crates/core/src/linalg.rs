//! Dense/sparse operator wrapper and the few factorizations the library needs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// A linear operator in one of several storage formats.
#[derive(Clone, Debug)]
pub enum Op {
    Dense(DMatrix<f64>),
    Sparse(Arc<CsrMatrix<f64>>),
    Diagonal(DVector<f64>),
    Identity(usize),
    Zero(usize, usize),
}

impl Op {
    pub fn sparse_from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Op {
        let mut coo = CooMatrix::new(nrows, ncols);
        for (i, j, v) in triplets {
            coo.push(i, j, v);
        }
        Op::Sparse(Arc::new(CsrMatrix::from(&coo)))
    }

    pub fn nrows(&self) -> usize {
        match self {
            Op::Dense(m) => m.nrows(),
            Op::Sparse(m) => m.nrows(),
            Op::Diagonal(d) => d.len(),
            Op::Identity(n) => *n,
            Op::Zero(r, _) => *r,
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            Op::Dense(m) => m.ncols(),
            Op::Sparse(m) => m.ncols(),
            Op::Diagonal(d) => d.len(),
            Op::Identity(n) => *n,
            Op::Zero(_, c) => *c,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows(), self.ncols())
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Op::Zero(..))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(self.ncols(), x.len(), "operator/vector size mismatch");
        match self {
            Op::Dense(m) => m * x,
            Op::Sparse(m) => csr_mul_vec(m, x),
            Op::Diagonal(d) => d.component_mul(x),
            Op::Identity(_) => x.clone(),
            Op::Zero(r, _) => DVector::zeros(*r),
        }
    }

    /// `selfᵀ x`
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(self.nrows(), x.len(), "operator/vector size mismatch");
        match self {
            Op::Dense(m) => m.tr_mul(x),
            Op::Sparse(m) => {
                let mut out = DVector::zeros(m.ncols());
                for (i, row) in m.row_iter().enumerate() {
                    let xi = x[i];
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        out[j] += v * xi;
                    }
                }
                out
            }
            Op::Diagonal(d) => d.component_mul(x),
            Op::Identity(_) => x.clone(),
            Op::Zero(_, c) => DVector::zeros(*c),
        }
    }

    pub fn mul_mat(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols(), x.nrows(), "operator/matrix size mismatch");
        match self {
            Op::Dense(m) => m * x,
            Op::Sparse(m) => {
                let mut out = DMatrix::zeros(m.nrows(), x.ncols());
                for (i, row) in m.row_iter().enumerate() {
                    for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                        for c in 0..x.ncols() {
                            out[(i, c)] += v * x[(j, c)];
                        }
                    }
                }
                out
            }
            Op::Diagonal(d) => {
                let mut out = x.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            Op::Identity(_) => x.clone(),
            Op::Zero(r, _) => DMatrix::zeros(*r, x.ncols()),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Op::Dense(m) => m.clone(),
            Op::Sparse(m) => {
                let mut out = DMatrix::zeros(m.nrows(), m.ncols());
                for (i, j, v) in m.triplet_iter() {
                    out[(i, j)] += *v;
                }
                out
            }
            Op::Diagonal(d) => DMatrix::from_diagonal(d),
            Op::Identity(n) => DMatrix::identity(*n, *n),
            Op::Zero(r, c) => DMatrix::zeros(*r, *c),
        }
    }

    /// Upper/lower bandwidth, or `None` for dense storage.
    pub fn bandwidth(&self) -> Option<(usize, usize)> {
        match self {
            Op::Dense(_) => None,
            Op::Sparse(m) => {
                let (mut kl, mut ku) = (0, 0);
                for (i, j, _) in m.triplet_iter() {
                    if i > j {
                        kl = kl.max(i - j);
                    } else {
                        ku = ku.max(j - i);
                    }
                }
                Some((kl, ku))
            }
            Op::Diagonal(_) | Op::Identity(_) | Op::Zero(..) => Some((0, 0)),
        }
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> f64 {
        match self {
            Op::Dense(m) => m.norm(),
            Op::Sparse(m) => m.values().iter().map(|v| v * v).sum::<f64>().sqrt(),
            Op::Diagonal(d) => d.norm(),
            Op::Identity(n) => (*n as f64).sqrt(),
            Op::Zero(..) => 0.0,
        }
    }
}

fn csr_mul_vec(m: &CsrMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for (i, row) in m.row_iter().enumerate() {
        let mut acc = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            acc += v * x[j];
        }
        out[i] = acc;
    }
    out
}

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let s = symmetric_part(a);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Smallest eigenvalue of ½(A+Aᵀ); `+inf` for empty matrices.
pub fn min_sym_eig(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

/// Spectral norm.
pub fn norm2(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Extreme singular values (max, min) of a tall matrix.
pub fn singular_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0);
    }
    let sv = a.singular_values();
    (sv.max(), sv.min())
}

/// 2-norm condition number; `inf` for singular input.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let (smax, smin) = singular_extremes(a);
    if smin == 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Condition number of an operator. Structured cases are cheap; sparse and dense
/// operators above `exact_limit` rows use a power / inverse-power estimate.
pub fn op_condition_estimate(op: &Op) -> f64 {
    const EXACT_LIMIT: usize = 400;
    match op {
        Op::Identity(_) => 1.0,
        Op::Zero(..) => f64::INFINITY,
        Op::Diagonal(d) => {
            let amax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let amin = d.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
            if amin == 0.0 {
                f64::INFINITY
            } else {
                amax / amin
            }
        }
        _ if op.nrows() <= EXACT_LIMIT => condition_number(&op.to_dense()),
        _ => {
            let n = op.nrows();
            let solver = match LinearSolver::new(op) {
                Ok(s) => s,
                Err(_) => return f64::INFINITY,
            };
            let start = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919) % 13) as f64);
            let mut v = start.normalize();
            let mut smax = 0.0;
            for _ in 0..200 {
                let w = op.tr_mul_vec(&op.mul_vec(&v));
                smax = w.norm().sqrt();
                if smax == 0.0 {
                    return f64::INFINITY;
                }
                v = w.normalize();
            }
            let mut v = start.normalize();
            let mut inv = 0.0;
            for _ in 0..200 {
                let w = match solver
                    .solve_transpose(&v)
                    .and_then(|y| solver.solve(&y))
                {
                    Ok(w) => w,
                    Err(_) => return f64::INFINITY,
                };
                inv = w.norm().sqrt();
                v = w.normalize();
            }
            smax * inv
        }
    }
}

/// LU factorization of a band matrix with partial pivoting.
///
/// Row `i` stores columns `i-kl ..= i+kl+ku`.
#[derive(Clone, Debug)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factor a matrix given by entry accessor `entry(i, j)` queried only inside the band.
    pub fn factor_with(
        n: usize,
        kl: usize,
        ku: usize,
        mut entry: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            piv: vec![0; n],
        };
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku).min(n.saturating_sub(1));
            for j in lo..=hi {
                let idx = lu.idx(i, j);
                lu.data[idx] = entry(i, j);
            }
        }
        lu.factorize()?;
        Ok(lu)
    }

    pub fn from_dense_band(a: &DMatrix<f64>, kl: usize, ku: usize) -> Result<Self> {
        Self::factor_with(a.nrows(), kl, ku, |i, j| a[(i, j)])
    }

    pub fn from_op(op: &Op) -> Result<Self> {
        let (kl, ku) = op
            .bandwidth()
            .ok_or_else(|| Error::InvalidParameter("banded LU needs a banded operator".into()))?;
        let n = op.nrows();
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width: 2 * kl + ku + 1,
            data: vec![0.0; n * (2 * kl + ku + 1)],
            piv: vec![0; n],
        };
        match op {
            Op::Sparse(m) => {
                for (i, j, v) in m.triplet_iter() {
                    let idx = lu.idx(i, j);
                    lu.data[idx] += *v;
                }
            }
            Op::Diagonal(d) => {
                for i in 0..n {
                    let idx = lu.idx(i, i);
                    lu.data[idx] = d[i];
                }
            }
            Op::Identity(_) => {
                for i in 0..n {
                    let idx = lu.idx(i, i);
                    lu.data[idx] = 1.0;
                }
            }
            _ => {}
        }
        lu.factorize()?;
        Ok(lu)
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    fn factorize(&mut self) -> Result<()> {
        let n = self.n;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if n > 0 && scale == 0.0 {
            return Err(Error::Singular("zero band matrix".into()));
        }
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 || best <= f64::EPSILON * 1e-4 * scale {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            self.piv[k] = p;
            let jmax = (k + self.kl + self.ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::dim("banded rhs", n, b.len()));
        }
        let mut x = b.clone();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap_rows(k, p);
            }
            let xk = x[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                x[i] -= self.data[self.idx(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut acc = x[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                acc -= self.data[self.idx(k, j)] * x[j];
            }
            x[k] = acc / self.data[self.idx(k, k)];
        }
        Ok(x)
    }

    /// Solve `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(Error::dim("banded rhs", n, b.len()));
        }
        // Uᵀ w = b
        let mut w = b.clone();
        for k in 0..n {
            let mut acc = w[k];
            for i in k.saturating_sub(self.kl + self.ku)..k {
                acc -= self.data[self.idx(i, k)] * w[i];
            }
            w[k] = acc / self.data[self.idx(k, k)];
        }
        // Lᵀ Pᵀ x = w, undo eliminations in reverse.
        for k in (0..n).rev() {
            let mut acc = w[k];
            for i in k + 1..=(k + self.kl).min(n.saturating_sub(1)) {
                acc -= self.data[self.idx(i, k)] * w[i];
            }
            w[k] = acc;
            let p = self.piv[k];
            if p != k {
                w.swap_rows(k, p);
            }
        }
        Ok(w)
    }
}

/// Factorized solver for an operator, picking a banded or dense factorization.
#[derive(Clone, Debug)]
pub enum LinearSolver {
    Identity,
    Diagonal(DVector<f64>),
    Banded(BandedLu),
    /// Factors of the matrix and of its transpose.
    Dense(Box<(DenseLu, DenseLu)>),
}

type DenseLu = nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>;

impl LinearSolver {
    pub fn new(op: &Op) -> Result<Self> {
        if op.nrows() != op.ncols() {
            return Err(Error::dim("square operator", op.nrows(), op.ncols()));
        }
        match op {
            Op::Identity(_) => Ok(LinearSolver::Identity),
            Op::Diagonal(d) => {
                if d.iter().any(|v| *v == 0.0) {
                    return Err(Error::Singular("zero diagonal entry".into()));
                }
                Ok(LinearSolver::Diagonal(d.clone()))
            }
            Op::Zero(..) => Err(Error::Singular("zero operator".into())),
            Op::Sparse(_) => {
                let (kl, ku) = op.bandwidth().unwrap_or((0, 0));
                if kl + ku + 1 < op.nrows() / 4 {
                    Ok(LinearSolver::Banded(BandedLu::from_op(op)?))
                } else {
                    Self::dense(op.to_dense())
                }
            }
            Op::Dense(m) => Self::dense(m.clone()),
        }
    }

    fn dense(m: DMatrix<f64>) -> Result<Self> {
        let lut = m.transpose().lu();
        let lu = m.lu();
        let u = lu.u();
        let scale = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let dmin = u.diagonal().iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if dmin == 0.0 || dmin <= 1e-14 * scale {
            return Err(Error::Singular("dense LU pivot below threshold".into()));
        }
        Ok(LinearSolver::Dense(Box::new((lu, lut))))
    }

    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            LinearSolver::Identity => Ok(b.clone()),
            LinearSolver::Diagonal(d) => Ok(b.component_div(d)),
            LinearSolver::Banded(lu) => lu.solve(b),
            LinearSolver::Dense(f) => f
                .0
                .solve(b)
                .ok_or_else(|| Error::Singular("dense solve failed".into())),
        }
    }

    pub fn solve_transpose(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            LinearSolver::Identity => Ok(b.clone()),
            LinearSolver::Diagonal(d) => Ok(b.component_div(d)),
            LinearSolver::Banded(lu) => lu.solve_transpose(b),
            LinearSolver::Dense(f) => f
                .1
                .solve(b)
                .ok_or_else(|| Error::Singular("dense transpose solve failed".into())),
        }
    }
}

/// Factorize `a·X + b·Y`, banded when both operands are narrow-banded.
pub fn factor_combination(a: f64, x: &Op, b: f64, y: &Op) -> Result<LinearSolver> {
    let n = x.nrows();
    if let (Some((k1, u1)), Some((k2, u2))) = (x.bandwidth(), y.bandwidth()) {
        let (kl, ku) = (k1.max(k2), u1.max(u2));
        if kl + ku + 1 < n / 4 {
            let w = kl + ku + 1;
            let mut band = vec![0.0; n * w];
            for (op, s) in [(x, a), (y, b)] {
                let mut put = |i: usize, j: usize, v: f64| band[i * w + (j + kl - i)] += s * v;
                match op {
                    Op::Sparse(m) => m.triplet_iter().for_each(|(i, j, v)| put(i, j, *v)),
                    Op::Diagonal(d) => d.iter().enumerate().for_each(|(i, v)| put(i, i, *v)),
                    Op::Identity(_) => (0..n).for_each(|i| put(i, i, 1.0)),
                    Op::Zero(..) | Op::Dense(_) => {}
                }
            }
            return Ok(LinearSolver::Banded(BandedLu::factor_with(n, kl, ku, |i, j| band[i * w + (j + kl - i)])?));
        }
    }
    LinearSolver::new(&Op::Dense(x.to_dense() * a + y.to_dense() * b))
}

/// Minimum-norm least-squares solution via SVD with relative cutoff; returns (x, rank).
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>, rel_cutoff: f64) -> (DVector<f64>, usize) {
    if a.ncols() == 0 {
        return (DVector::zeros(0), 0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rel_cutoff * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut x = DVector::zeros(a.ncols());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            let coef = u.column(k).dot(b) / s;
            x += vt.row(k).transpose() * coef;
        }
    }
    (x, rank)
}
