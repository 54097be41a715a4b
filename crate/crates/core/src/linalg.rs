//! Thin wrappers over faer for the dense factorizations used throughout.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatMut, MatRef};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut r = a.rem_euclid(two_pi);
    if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle_half_open(a: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (a + pi).rem_euclid(2.0 * pi) - pi
}

pub fn to_complex(m: MatRef<'_, f64>) -> Mat<C64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| C64::new(m[(i, j)], 0.0))
}

pub fn identity_c(n: usize) -> Mat<C64> {
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Maximum absolute row sum.
pub fn inf_norm_real(m: MatRef<'_, f64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn inf_norm(m: MatRef<'_, C64>) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: MatRef<'_, C64>, b: MatRef<'_, C64>) -> f64 {
    let mut d = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            d = d.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    d
}

fn perm_sign(fwd: &[usize]) -> f64 {
    let mut seen = vec![false; fwd.len()];
    let mut sign = 1.0;
    for start in 0..fwd.len() {
        if seen[start] {
            continue;
        }
        let mut len = 0usize;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = fwd[i];
            len += 1;
        }
        if len % 2 == 0 {
            sign = -sign;
        }
    }
    sign
}

/// Determinant stored as natural log of the modulus and an argument in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogDet {
    pub log_abs: f64,
    pub arg: f64,
}

impl LogDet {
    pub fn zero() -> Self {
        LogDet {
            log_abs: f64::NEG_INFINITY,
            arg: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.log_abs == f64::NEG_INFINITY
    }

    /// The determinant itself; may overflow to infinity or underflow to zero.
    pub fn value(&self) -> C64 {
        if self.is_zero() {
            return C64::new(0.0, 0.0);
        }
        C64::from_polar(self.log_abs.exp(), self.arg)
    }
}

/// Partial-pivoting LU of a complex square matrix with determinant bookkeeping.
pub struct ComplexLu {
    lu: PartialPivLu<C64>,
    pub log_det: LogDet,
    /// `sum ln max(1, |u_ii|)`, used to normalize determinants.
    pub log_scale: f64,
    pub min_pivot: f64,
    pub max_pivot: f64,
}

impl ComplexLu {
    pub fn new(a: MatRef<'_, C64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        let lu = a.partial_piv_lu();
        let u = lu.U();
        let mut log_abs = 0.0;
        let mut arg = 0.0;
        let mut log_scale = 0.0;
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        let mut zero = false;
        for i in 0..u.nrows() {
            let d = u[(i, i)];
            let m = d.norm();
            min_pivot = min_pivot.min(m);
            max_pivot = max_pivot.max(m);
            if m == 0.0 {
                zero = true;
            } else {
                log_abs += m.ln();
                arg += d.arg();
            }
            log_scale += m.max(1.0).ln();
        }
        if u.nrows() == 0 {
            min_pivot = 1.0;
            max_pivot = 1.0;
        }
        let (fwd, _) = lu.P().arrays();
        if perm_sign(fwd) < 0.0 {
            arg += std::f64::consts::PI;
        }
        let log_det = if zero {
            LogDet::zero()
        } else {
            LogDet {
                log_abs,
                arg: wrap_angle(arg),
            }
        };
        ComplexLu {
            lu,
            log_det,
            log_scale,
            min_pivot,
            max_pivot,
        }
    }

    pub fn dim(&self) -> usize {
        self.lu.U().nrows()
    }

    pub fn pivot_ratio(&self) -> f64 {
        if self.max_pivot == 0.0 {
            0.0
        } else {
            self.min_pivot / self.max_pivot
        }
    }

    pub fn solve(&self, b: MatRef<'_, C64>) -> Mat<C64> {
        self.lu.solve(b)
    }

    pub fn solve_in_place(&self, b: MatMut<'_, C64>) {
        self.lu.solve_in_place(b);
    }

    /// `det / prod max(1, |u_ii|)`: a scale-free residual that is O(1) away from roots.
    pub fn normalized_det(&self) -> C64 {
        if self.log_det.is_zero() {
            return C64::new(0.0, 0.0);
        }
        C64::from_polar(
            (self.log_det.log_abs - self.log_scale).exp(),
            self.log_det.arg,
        )
    }

    /// `trace(A^{-1} D)`.
    pub fn trace_solve(&self, d: MatRef<'_, C64>) -> C64 {
        let x = self.solve(d);
        (0..x.nrows()).map(|i| x[(i, i)]).sum()
    }
}

/// Partial-pivoting LU of a real square matrix.
pub struct RealLu {
    lu: PartialPivLu<f64>,
    pub min_pivot: f64,
    pub max_pivot: f64,
}

impl RealLu {
    pub fn new(a: MatRef<'_, f64>) -> Self {
        let lu = a.partial_piv_lu();
        let u = lu.U();
        let mut min_pivot = f64::INFINITY;
        let mut max_pivot = 0.0f64;
        for i in 0..u.nrows() {
            min_pivot = min_pivot.min(u[(i, i)].abs());
            max_pivot = max_pivot.max(u[(i, i)].abs());
        }
        RealLu {
            lu,
            min_pivot,
            max_pivot,
        }
    }

    pub fn solve(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        self.lu.solve(b)
    }
}

pub fn inverse_real(a: MatRef<'_, f64>) -> Mat<f64> {
    let n = a.nrows();
    let lu = RealLu::new(a);
    lu.solve(Mat::<f64>::identity(n, n).as_ref())
}

/// Eigenvalues and unit-norm eigenvectors (columns) of a complex matrix.
pub fn eigen(a: MatRef<'_, C64>) -> Result<(Vec<C64>, Mat<C64>)> {
    let e = a
        .eigen()
        .map_err(|e| Error::Numerical(format!("eigendecomposition failed: {e:?}")))?;
    let s = e.S();
    let vals: Vec<C64> = (0..a.nrows()).map(|i| s[i]).collect();
    let mut vecs = e.U().to_owned();
    for j in 0..vecs.ncols() {
        let nrm = (0..vecs.nrows())
            .map(|i| vecs[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if nrm > 0.0 {
            for i in 0..vecs.nrows() {
                vecs[(i, j)] /= nrm;
            }
        }
    }
    Ok((vals, vecs))
}

pub fn eigenvalues(a: MatRef<'_, C64>) -> Result<Vec<C64>> {
    a.eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigenvalue computation failed: {e:?}")))
}

pub fn eigenvalues_real(a: MatRef<'_, f64>) -> Result<Vec<C64>> {
    a.eigenvalues()
        .map_err(|e| Error::Numerical(format!("eigenvalue computation failed: {e:?}")))
}
