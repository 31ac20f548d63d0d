//! Uniform cubic splines in B-spline form.
//!
//! A spline on nodes `x₀ + i·h` is `s(x) = Σ cᵢ B(u − i)` with the cardinal cubic B-spline `B`.
//! Periodic splines carry `n` coefficients on a circle; not-a-knot splines carry the
//! `n` node coefficients plus one ghost on each side.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    NotAKnot,
}

#[derive(Clone, Debug)]
pub struct UniformSpline {
    pub x0: f64,
    pub h: f64,
    pub n: usize,
    pub boundary: Boundary,
}

/// Coefficient indices and weights of the four B-splines active at a point.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub index: [usize; 4],
    pub value: [f64; 4],
    pub slope: [f64; 4],
}

#[inline]
fn basis(f: f64) -> ([f64; 4], [f64; 4]) {
    let g = 1.0 - f;
    let f2 = f * f;
    let f3 = f2 * f;
    (
        [
            g * g * g / 6.0,
            (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
            (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
            f3 / 6.0,
        ],
        [-0.5 * g * g, 0.5 * (3.0 * f2 - 4.0 * f), 0.5 * (-3.0 * f2 + 2.0 * f + 1.0), 0.5 * f2],
    )
}

impl UniformSpline {
    pub fn new(x0: f64, h: f64, n: usize, boundary: Boundary) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("spline spacing must be positive, got {h}")));
        }
        if n < 4 {
            return Err(Error::InvalidParameter(format!("spline needs at least 4 nodes, got {n}")));
        }
        Ok(UniformSpline { x0, h, n, boundary })
    }

    /// Number of stored coefficients.
    pub fn coeff_len(&self) -> usize {
        match self.boundary {
            Boundary::Periodic => self.n,
            Boundary::NotAKnot => self.n + 2,
        }
    }

    pub fn period(&self) -> f64 {
        self.n as f64 * self.h
    }

    /// Valid argument range (not-a-knot) or one period (periodic).
    pub fn range(&self) -> (f64, f64) {
        match self.boundary {
            Boundary::Periodic => (self.x0, self.x0 + self.period()),
            Boundary::NotAKnot => (self.x0, self.x0 + (self.n - 1) as f64 * self.h),
        }
    }

    pub fn node(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.h
    }

    pub fn coefficients(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.n {
            return Err(Error::dim("spline values", self.n, values.len()));
        }
        Ok(match self.boundary {
            Boundary::Periodic => periodic_coefficients(values),
            Boundary::NotAKnot => not_a_knot_coefficients(values, self.h),
        })
    }

    /// Stencil of stored coefficients at `x`.
    pub fn stencil(&self, x: f64) -> Result<Stencil> {
        let u = (x - self.x0) / self.h;
        let inv_h = 1.0 / self.h;
        match self.boundary {
            Boundary::Periodic => {
                let n = self.n as f64;
                let w = u.rem_euclid(n);
                let mut i = w.floor() as usize;
                if i >= self.n {
                    i = self.n - 1;
                }
                let f = w - i as f64;
                let (v, s) = basis(f);
                let n = self.n;
                Ok(Stencil {
                    index: [(i + n - 1) % n, i, (i + 1) % n, (i + 2) % n],
                    value: v,
                    slope: s.map(|d| d * inv_h),
                })
            }
            Boundary::NotAKnot => {
                let last = (self.n - 1) as f64;
                let slack = 1e-9;
                if !(u >= -slack && u <= last + slack) {
                    let (lo, hi) = self.range();
                    return Err(Error::ShiftOutOfRange {
                        amount: x,
                        min: lo,
                        max: hi,
                    });
                }
                let uc = u.clamp(0.0, last);
                let i = (uc.floor() as usize).min(self.n - 2);
                let f = uc - i as f64;
                let (v, s) = basis(f);
                // stored index k+1 holds c_k
                Ok(Stencil {
                    index: [i, i + 1, i + 2, i + 3],
                    value: v,
                    slope: s.map(|d| d * inv_h),
                })
            }
        }
    }

    /// Stencil on the `n` free coefficients (ghosts eliminated through the
    /// not-a-knot conditions); identical to [`Self::stencil`] for periodic splines.
    pub fn free_stencil(&self, x: f64) -> Result<Stencil> {
        let st = self.stencil(x)?;
        if self.boundary == Boundary::Periodic {
            return Ok(st);
        }
        let n = self.n;
        let i = st.index[0];
        let fold = |w: [f64; 4]| -> [f64; 4] {
            if i == 0 {
                // c_{-1} = 4c₀ − 6c₁ + 4c₂ − c₃
                [w[1] + 4.0 * w[0], w[2] - 6.0 * w[0], w[3] + 4.0 * w[0], -w[0]]
            } else if i == n - 2 {
                // c_n = 4c_{n−1} − 6c_{n−2} + 4c_{n−3} − c_{n−4}
                [-w[3], w[0] + 4.0 * w[3], w[1] - 6.0 * w[3], w[2] + 4.0 * w[3]]
            } else {
                w
            }
        };
        let index = if i == 0 {
            [0, 1, 2, 3]
        } else if i == n - 2 {
            [n - 4, n - 3, n - 2, n - 1]
        } else {
            [i - 1, i, i + 1, i + 2]
        };
        Ok(Stencil {
            index,
            value: fold(st.value),
            slope: fold(st.slope),
        })
    }

    /// Full coefficient vector from the free ones.
    pub fn expand_free(&self, free: &[f64]) -> Vec<f64> {
        match self.boundary {
            Boundary::Periodic => free.to_vec(),
            Boundary::NotAKnot => {
                let n = free.len();
                let mut c = Vec::with_capacity(n + 2);
                c.push(4.0 * free[0] - 6.0 * free[1] + 4.0 * free[2] - free[3]);
                c.extend_from_slice(free);
                c.push(4.0 * free[n - 1] - 6.0 * free[n - 2] + 4.0 * free[n - 3] - free[n - 4]);
                c
            }
        }
    }

    /// Node values of the spline with the given stored coefficients.
    pub fn node_values(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.n;
        match self.boundary {
            Boundary::Periodic => (0..n)
                .map(|i| (coeffs[(i + n - 1) % n] + 4.0 * coeffs[i] + coeffs[(i + 1) % n]) / 6.0)
                .collect(),
            Boundary::NotAKnot => (0..n).map(|i| (coeffs[i] + 4.0 * coeffs[i + 1] + coeffs[i + 2]) / 6.0).collect(),
        }
    }

    pub fn eval(&self, coeffs: &[f64], x: f64) -> Result<f64> {
        let st = self.stencil(x)?;
        Ok((0..4).map(|q| coeffs[st.index[q]] * st.value[q]).sum())
    }

    pub fn eval_with_slope(&self, coeffs: &[f64], x: f64) -> Result<(f64, f64)> {
        let st = self.stencil(x)?;
        let mut v = 0.0;
        let mut d = 0.0;
        for q in 0..4 {
            let c = coeffs[st.index[q]];
            v += c * st.value[q];
            d += c * st.slope[q];
        }
        Ok((v, d))
    }
}

/// Solve the cyclic system `(c_{i−1} + 4cᵢ + c_{i+1})/6 = yᵢ`.
fn periodic_coefficients(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let rhs: Vec<f64> = y.iter().map(|v| 6.0 * v).collect();
    // Sherman–Morrison on the cyclic tridiagonal (1, 4, 1) matrix.
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] -= gamma;
    diag[n - 1] -= 1.0 / gamma;
    let x = thomas(&diag, 1.0, &rhs);
    let mut uvec = vec![0.0; n];
    uvec[0] = gamma;
    uvec[n - 1] = 1.0;
    let z = thomas(&diag, 1.0, &uvec);
    let fact = (x[0] + x[n - 1] / gamma) / (1.0 + z[0] + z[n - 1] / gamma);
    x.iter().zip(&z).map(|(a, b)| a - fact * b).collect()
}

/// Tridiagonal solve with constant unit-scaled off-diagonals.
fn thomas(diag: &[f64], off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - off * c[i - 1];
        c[i] = off / m;
        d[i] = (rhs[i] - off * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Not-a-knot interpolation through second derivatives `Mᵢ`.
fn not_a_knot_coefficients(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let h2 = h * h;
    let rhs: Vec<f64> = (1..n - 1).map(|i| 6.0 * (y[i - 1] - 2.0 * y[i] + y[i + 1]) / h2).collect();
    let mut m = vec![0.0; n];
    // the conditions at the first and last interior knots reduce to 6M₁ = rhs₁
    m[1] = rhs[0] / 6.0;
    m[n - 2] = rhs[n - 3] / 6.0;
    if n > 4 {
        let inner = n - 4;
        let mut r: Vec<f64> = (2..n - 2).map(|i| rhs[i - 1]).collect();
        r[0] -= m[1];
        r[inner - 1] -= m[n - 2];
        let sol = thomas(&vec![4.0; inner], 1.0, &r);
        m[2..(inner + 2)].copy_from_slice(&sol[..inner]);
    }
    m[0] = 2.0 * m[1] - m[2];
    m[n - 1] = 2.0 * m[n - 2] - m[n - 3];
    let mut c = vec![0.0; n + 2];
    for i in 0..n {
        c[i + 1] = y[i] - h2 * m[i] / 6.0;
    }
    c[0] = 6.0 * y[0] - 4.0 * c[1] - c[2];
    c[n + 1] = 6.0 * y[n - 1] - 4.0 * c[n] - c[n - 1];
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn periodic_interpolates_nodes() {
        let s = UniformSpline::new(0.0, 0.1, 10, Boundary::Periodic).unwrap();
        let y: Vec<f64> = (0..10).map(|i| ((i * i) % 7) as f64 - 2.0).collect();
        let c = s.coefficients(&y).unwrap();
        for (i, yi) in y.iter().enumerate() {
            assert!((s.eval(&c, s.node(i)).unwrap() - yi).abs() < 1e-13);
            assert!((s.eval(&c, s.node(i) + 1.0).unwrap() - yi).abs() < 1e-12);
        }
        let nv = s.node_values(&c);
        for (a, b) in nv.iter().zip(&y) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn not_a_knot_reproduces_cubics() {
        let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x * x - 3.0 * x * x * x;
        let dp = |x: f64| -2.0 + x - 9.0 * x * x;
        for n in [4usize, 5, 9] {
            let s = UniformSpline::new(-0.3, 0.25, n, Boundary::NotAKnot).unwrap();
            let y: Vec<f64> = (0..n).map(|i| p(s.node(i))).collect();
            let c = s.coefficients(&y).unwrap();
            let (lo, hi) = s.range();
            for k in 0..=40 {
                let x = lo + (hi - lo) * k as f64 / 40.0;
                let (v, d) = s.eval_with_slope(&c, x).unwrap();
                assert!((v - p(x)).abs() < 1e-12, "n={n} x={x}");
                assert!((d - dp(x)).abs() < 1e-10, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn not_a_knot_rejects_out_of_range() {
        let s = UniformSpline::new(0.0, 1.0, 5, Boundary::NotAKnot).unwrap();
        let c = s.coefficients(&[0.0; 5]).unwrap();
        assert!(s.eval(&c, 4.0 + 1e-3).is_err());
        assert!(s.eval(&c, -1e-3).is_err());
    }

    #[test]
    fn free_stencil_consistent_with_expansion() {
        let n = 8;
        let s = UniformSpline::new(0.0, 0.5, n, Boundary::NotAKnot).unwrap();
        let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let full = s.coefficients(&y).unwrap();
        let free = &full[1..n + 1];
        let expanded = s.expand_free(free);
        for (a, b) in expanded.iter().zip(&full) {
            assert!((a - b).abs() < 1e-12);
        }
        for k in 0..=35 {
            let x = 3.5 * k as f64 / 35.0;
            let st = s.free_stencil(x).unwrap();
            let v: f64 = (0..4).map(|q| free[st.index[q]] * st.value[q]).sum();
            assert!((v - s.eval(&full, x).unwrap()).abs() < 1e-12);
        }
    }
}
