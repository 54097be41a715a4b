//! Periodic coefficient data and the nonlinear right-hand-side contract.

use std::f64::consts::PI;

use faer::Mat;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::inf_norm_real;

/// Points of the grid used for sup-norm estimates.
pub const NORM_PROBE_POINTS: usize = 1024;
/// Safety factor applied to grid-based sup-norms.
pub const NORM_SAFETY: f64 = 1.01;

/// Reduces `t` into `[-1, 0)`.
pub fn reduce_time(t: f64) -> f64 {
    let r = t.rem_euclid(1.0) - 1.0;
    if r >= 0.0 {
        -1.0
    } else {
        r
    }
}

/// `A(t) = mean + sum_h cos_h cos(2 pi h t) + sin_h sin(2 pi h t)`.
#[derive(Clone, Debug)]
pub struct FourierTable {
    pub mean: Mat<f64>,
    pub cos: Vec<Mat<f64>>,
    pub sin: Vec<Mat<f64>>,
}

impl FourierTable {
    fn eval(&self, t: f64) -> Mat<f64> {
        let mut out = self.mean.clone();
        let h = self.cos.len().max(self.sin.len());
        if h == 0 {
            return out;
        }
        let (s1, c1) = (2.0 * PI * t).sin_cos();
        let (mut sh, mut ch) = (s1, c1);
        for k in 0..h {
            if k > 0 {
                let (s, c) = if k % 16 == 0 {
                    (2.0 * PI * (k + 1) as f64 * t).sin_cos()
                } else {
                    (sh * c1 + ch * s1, ch * c1 - sh * s1)
                };
                sh = s;
                ch = c;
            }
            if let Some(m) = self.cos.get(k) {
                out += m * faer::Scale(ch);
            }
            if let Some(m) = self.sin.get(k) {
                out += m * faer::Scale(sh);
            }
        }
        out
    }

    fn dim(&self) -> usize {
        self.mean.nrows()
    }
}

/// Uniform samples on `t_i = -1 + i/m` with trigonometric interpolation.
#[derive(Clone, Debug)]
pub struct SampledMatrix {
    pub values: Vec<Mat<f64>>,
    series: FourierTable,
}

impl SampledMatrix {
    pub fn new(values: Vec<Mat<f64>>) -> Result<Self> {
        let m = values.len();
        if m == 0 {
            return Err(Error::Config("sample grid is empty".into()));
        }
        let n = values[0].nrows();
        if values.iter().any(|v| v.nrows() != n || v.ncols() != n) {
            return Err(Error::Config(
                "sample matrices have inconsistent shapes".into(),
            ));
        }
        let mf = m as f64;
        let mut mean = Mat::<f64>::zeros(n, n);
        for v in &values {
            mean += v * faer::Scale(1.0 / mf);
        }
        let hmax = if m % 2 == 0 { m / 2 } else { (m - 1) / 2 };
        let mut cos = Vec::with_capacity(hmax);
        let mut sin = Vec::with_capacity(hmax);
        for h in 1..=hmax {
            let nyquist = m % 2 == 0 && h == m / 2;
            let f = if nyquist { 1.0 / mf } else { 2.0 / mf };
            let mut c = Mat::<f64>::zeros(n, n);
            let mut s = Mat::<f64>::zeros(n, n);
            for (i, v) in values.iter().enumerate() {
                let ang = 2.0 * PI * ((h * i) % m) as f64 / mf;
                let (sa, ca) = ang.sin_cos();
                c += v * faer::Scale(f * ca);
                if !nyquist {
                    s += v * faer::Scale(f * sa);
                }
            }
            cos.push(c);
            sin.push(s);
        }
        Ok(SampledMatrix {
            values,
            series: FourierTable { mean, cos, sin },
        })
    }
}

#[derive(Clone, Debug)]
pub enum MatrixProvider {
    Constant(Mat<f64>),
    Fourier(FourierTable),
    Samples(SampledMatrix),
}

impl MatrixProvider {
    pub fn constant(m: Mat<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::Config(
                "constant matrix must be square and nonempty".into(),
            ));
        }
        Ok(MatrixProvider::Constant(m))
    }

    pub fn fourier(mean: Mat<f64>, cos: Vec<Mat<f64>>, sin: Vec<Mat<f64>>) -> Result<Self> {
        let n = mean.nrows();
        if mean.ncols() != n || n == 0 {
            return Err(Error::Config(
                "Fourier mean must be square and nonempty".into(),
            ));
        }
        if cos
            .iter()
            .chain(sin.iter())
            .any(|m| m.nrows() != n || m.ncols() != n)
        {
            return Err(Error::Config(
                "Fourier coefficient shapes disagree with the mean".into(),
            ));
        }
        Ok(MatrixProvider::Fourier(FourierTable { mean, cos, sin }))
    }

    pub fn samples(values: Vec<Mat<f64>>) -> Result<Self> {
        Ok(MatrixProvider::Samples(SampledMatrix::new(values)?))
    }

    pub fn scalar(a: f64) -> Self {
        MatrixProvider::Constant(Mat::from_fn(1, 1, |_, _| a))
    }

    pub fn dim(&self) -> usize {
        match self {
            MatrixProvider::Constant(m) => m.nrows(),
            MatrixProvider::Fourier(f) => f.dim(),
            MatrixProvider::Samples(s) => s.series.dim(),
        }
    }

    pub fn eval(&self, t: f64) -> Mat<f64> {
        match self {
            MatrixProvider::Constant(m) => m.clone(),
            MatrixProvider::Fourier(f) => f.eval(reduce_time(t)),
            MatrixProvider::Samples(s) => s.series.eval(reduce_time(t)),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MatrixProvider::Constant(_))
    }

    /// True when every coefficient is exactly zero.
    pub fn is_zero(&self) -> bool {
        let z = |m: &Mat<f64>| (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| m[(i, j)] == 0.0));
        match self {
            MatrixProvider::Constant(m) => z(m),
            MatrixProvider::Fourier(f) => z(&f.mean) && f.cos.iter().all(z) && f.sin.iter().all(z),
            MatrixProvider::Samples(s) => s.values.iter().all(z),
        }
    }

    /// Upper bound for `max_t ||M(t)||_inf`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            MatrixProvider::Constant(m) => inf_norm_real(m.as_ref()),
            _ => probe_max(self) * NORM_SAFETY,
        }
    }
}

/// Maximum of the row-sum norm over the uniform probe grid.
pub fn probe_max(p: &MatrixProvider) -> f64 {
    (0..NORM_PROBE_POINTS)
        .map(|i| inf_norm_real(p.eval(-1.0 + i as f64 / NORM_PROBE_POINTS as f64).as_ref()))
        .fold(0.0, f64::max)
}

/// The periodic matrix functions `A(t)`, `B(t)` on `[-1, 0]`.
#[derive(Clone, Debug)]
pub struct CoefficientPair {
    pub a: MatrixProvider,
    pub b: MatrixProvider,
    n: usize,
    a_norm: f64,
    b_norm: f64,
}

impl CoefficientPair {
    pub fn new(a: MatrixProvider, b: MatrixProvider) -> Result<Self> {
        let n = a.dim();
        if b.dim() != n {
            return Err(Error::Config(format!(
                "A is {n}x{n} but B is {0}x{0}",
                b.dim()
            )));
        }
        let a_norm = a.sup_norm();
        let b_norm = b.sup_norm();
        if !a_norm.is_finite() || !b_norm.is_finite() {
            return Err(Error::Config("coefficients are not finite".into()));
        }
        Ok(CoefficientPair {
            a,
            b,
            n,
            a_norm,
            b_norm,
        })
    }

    pub fn scalar(a: f64, b: f64) -> Self {
        Self::new(MatrixProvider::scalar(a), MatrixProvider::scalar(b)).expect("scalar pair")
    }

    pub fn constant(a: Mat<f64>, b: Mat<f64>) -> Result<Self> {
        Self::new(MatrixProvider::constant(a)?, MatrixProvider::constant(b)?)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, t: f64) -> (Mat<f64>, Mat<f64>) {
        (self.a.eval(t), self.b.eval(t))
    }

    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn b_norm(&self) -> f64 {
        self.b_norm
    }

    pub fn b_is_zero(&self) -> bool {
        self.b.is_zero()
    }

    pub fn is_constant(&self) -> bool {
        self.a.is_constant() && self.b.is_constant()
    }
}

/// The delay `tau` in `[0, 1)` and the list of integer delay shifts `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayParams {
    pub tau: f64,
    pub n_values: Vec<usize>,
}

impl DelayParams {
    pub fn new(tau: f64, n_values: Vec<usize>) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::Config(format!("tau = {tau} must lie in [0, 1)")));
        }
        if n_values.iter().any(|&n| n == 0) {
            return Err(Error::Config("every N must be at least 1".into()));
        }
        Ok(DelayParams { tau, n_values })
    }

    pub fn theta(&self, n: usize) -> f64 {
        n as f64 + self.tau
    }
}

/// Right-hand side `f(x, x_delayed)` of an autonomous DDE with one delay.
pub trait NonlinearModel: Send + Sync {
    fn dim(&self) -> usize;
    fn base_delay(&self) -> f64;
    fn rhs(&self, x: &[f64], xd: &[f64], out: &mut [f64]);
    fn d1f(&self, x: &[f64], xd: &[f64]) -> Mat<f64>;
    fn d2f(&self, x: &[f64], xd: &[f64]) -> Mat<f64>;
    fn parameters(&self) -> Vec<(&'static str, f64)>;
    /// Copy of the model with a different base delay.
    fn with_base_delay(&self, tau: f64) -> Self
    where
        Self: Sized;
}

/// Hopf normal form with a delayed feedback term in the second component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HopfExample {
    pub alpha: f64,
    pub coupling: f64,
    pub tau: f64,
}

pub fn builtin_hopf_example(alpha: f64, coupling: f64, tau: f64) -> HopfExample {
    HopfExample {
        alpha,
        coupling,
        tau,
    }
}

impl NonlinearModel for HopfExample {
    fn dim(&self) -> usize {
        2
    }

    fn base_delay(&self) -> f64 {
        self.tau
    }

    fn rhs(&self, x: &[f64], xd: &[f64], out: &mut [f64]) {
        let r2 = x[0] * x[0] + x[1] * x[1];
        out[0] = self.alpha * x[0] - 2.0 * PI * x[1] - x[0] * r2;
        out[1] = 2.0 * PI * x[0] + self.alpha * x[1] - x[1] * r2 + self.coupling * xd[1];
    }

    fn d1f(&self, x: &[f64], _xd: &[f64]) -> Mat<f64> {
        let (u, v) = (x[0], x[1]);
        let a = self.alpha;
        let rows = [
            [a - 3.0 * u * u - v * v, -2.0 * PI - 2.0 * u * v],
            [2.0 * PI - 2.0 * u * v, a - u * u - 3.0 * v * v],
        ];
        Mat::from_fn(2, 2, |i, j| rows[i][j])
    }

    fn d2f(&self, _x: &[f64], _xd: &[f64]) -> Mat<f64> {
        let c = self.coupling;
        Mat::from_fn(2, 2, |i, j| if i == 1 && j == 1 { c } else { 0.0 })
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("alpha", self.alpha),
            ("coupling", self.coupling),
            ("tau", self.tau),
        ]
    }

    fn with_base_delay(&self, tau: f64) -> Self {
        HopfExample { tau, ..*self }
    }
}

/// Largest relative deviation between the analytic partial derivatives and
/// central differences of `f` over `points` random probes in `[-scale, scale]^n`.
pub fn derivative_check<M: NonlinearModel, R: Rng>(
    model: &M,
    rng: &mut R,
    points: usize,
    scale: f64,
) -> f64 {
    let n = model.dim();
    let mut worst = 0.0f64;
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for _ in 0..points {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        let xd: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        for which in 0..2 {
            let analytic = if which == 0 {
                model.d1f(&x, &xd)
            } else {
                model.d2f(&x, &xd)
            };
            let amax = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| analytic[(i, j)].abs())
                .fold(1.0, f64::max);
            for j in 0..n {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                let (mut dp, mut dm) = (xd.clone(), xd.clone());
                let base = if which == 0 { x[j] } else { xd[j] };
                let h = 1e-5 * base.abs().max(1.0);
                if which == 0 {
                    xp[j] += h;
                    xm[j] -= h;
                } else {
                    dp[j] += h;
                    dm[j] -= h;
                }
                model.rhs(&xp, &dp, &mut fp);
                model.rhs(&xm, &dm, &mut fm);
                for i in 0..n {
                    let fd = (fp[i] - fm[i]) / (2.0 * h);
                    worst = worst.max((fd - analytic[(i, j)]).abs() / amax);
                }
            }
        }
    }
    worst
}
