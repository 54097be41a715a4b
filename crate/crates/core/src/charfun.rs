//! The partitioned integral equation, the characteristic matrix `Delta(mu, z)`
//! and the characteristic function `h(mu, z) = det Delta(mu, z)`.
//!
//! On each subinterval `I_j = [t_j, t_{j+1})` the unknown `y` is represented by
//! its values at `p + 1` Chebyshev-Lobatto nodes; the last node of `I_j` holds
//! the left limit `y(t_{j+1}-)`. The integral operator
//!
//! `L y (t) = int_{t_j}^t U(t, s, mu) B(s) y((s - tau) mod [-1, 0]) ds`
//!
//! is discretized by Clenshaw-Curtis quadrature, split where `s - tau` crosses a
//! partition point so that every quadrature piece reads a single polynomial.
//! The kernel is stored without the factor `exp(-mu (t - s))`, which is applied
//! at assembly time, so one propagator pass serves every `mu`.

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, identity_c, inf_norm, inverse_real, ComplexLu, C64};
use crate::model::CoefficientPair;
use crate::propagator::{partition_point, IntegratorSettings, PropagatorCache};
use crate::quadrature::{bary_row, chebyshev_lobatto, clenshaw_curtis, lobatto_bary_weights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KMode {
    Guaranteed,
    Adaptive,
}

impl std::str::FromStr for KMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guaranteed" => Ok(KMode::Guaranteed),
            "adaptive" => Ok(KMode::Adaptive),
            other => Err(Error::Config(format!("unknown k-mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CharSettings {
    pub r: f64,
    pub p: usize,
    pub mode: KMode,
    pub k_cap: usize,
    /// Forces the partition count (bypasses both selection rules).
    pub k_override: Option<usize>,
    pub integrator: IntegratorSettings,
}

impl Default for CharSettings {
    fn default() -> Self {
        CharSettings {
            r: 3.0,
            p: 8,
            mode: KMode::Adaptive,
            k_cap: 4096,
            k_override: None,
            integrator: IntegratorSettings::default(),
        }
    }
}

/// Probe points for the adaptive refinement test.
pub const PROBE_POINTS: [(f64, f64); 5] = [
    (0.05, 0.3),
    (-0.1, 1.1),
    (0.2, -2.0),
    (-0.05, 2.9),
    (0.0, -0.7),
];
/// Relative agreement required between probe spectra at `k` and `2k`.
pub const ADAPTIVE_TOL: f64 = 1e-8;
/// Pivot ratio below which `I - zL` counts as singular.
pub const POLE_PIVOT_RATIO: f64 = 1e-13;

/// `C(R) = max(||A|| + R, ||B|| e^{1+R})`.
pub fn c_of_r(a_norm: f64, b_norm: f64, r: f64) -> f64 {
    (a_norm + r).max(b_norm * (1.0 + r).exp())
}

/// Smallest integer partition count strictly above `C(R)`, as `ceil(C(R)) + 1`.
pub fn guaranteed_k(a_norm: f64, b_norm: f64, r: f64) -> usize {
    c_of_r(a_norm, b_norm, r).ceil() as usize + 1
}

pub fn adaptive_start_k(a_norm: f64, r: f64) -> usize {
    16usize.max((a_norm + r).ceil() as usize)
}

#[derive(Clone, Debug)]
struct Term {
    row: usize,
    dt: f64,
    col_node: usize,
    /// `(p + 1)` row-major `n x n` blocks: weight * U_A(x, s) B(s) * l_m(u).
    blocks: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharValue {
    pub log_abs_h: f64,
    pub arg_h: f64,
    /// `det Delta / prod max(1, |u_ii|)`.
    pub h_hat: C64,
    /// Smallest over largest pivot modulus of the `I - zL` factorization.
    pub pivot_ratio: f64,
    /// Same for `Delta` itself.
    pub delta_pivot_ratio: f64,
    pub certified: bool,
}

impl CharValue {
    pub fn value(&self) -> C64 {
        if self.log_abs_h == f64::NEG_INFINITY {
            return C64::new(0.0, 0.0);
        }
        C64::from_polar(self.log_abs_h.exp(), self.arg_h)
    }

    pub fn abs(&self) -> f64 {
        if self.log_abs_h == f64::NEG_INFINITY {
            0.0
        } else {
            self.log_abs_h.exp()
        }
    }

    pub fn normalized_residual(&self) -> f64 {
        self.h_hat.norm()
    }
}

/// Value and analytic logarithmic derivatives `d ln h / d mu`, `d ln h / d z`.
#[derive(Clone, Copy, Debug)]
pub struct LogDerivatives {
    pub value: CharValue,
    pub dmu: C64,
    pub dz: C64,
}

#[derive(Clone, Debug)]
pub struct CharContext {
    cp: CoefficientPair,
    tau: f64,
    r: f64,
    k: usize,
    p: usize,
    n: usize,
    mode: KMode,
    c_r: f64,
    cache: PropagatorCache,
    node_offset: Vec<f64>,
    node_prop: Vec<Mat<f64>>,
    terms: Vec<Term>,
}

impl CharContext {
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn mode(&self) -> KMode {
        self.mode
    }
    pub fn c_of_r(&self) -> f64 {
        self.c_r
    }
    pub fn cache(&self) -> &PropagatorCache {
        &self.cache
    }
    pub fn coefficients(&self) -> &CoefficientPair {
        &self.cp
    }
    /// Size of the characteristic matrix, `n k`.
    pub fn delta_dim(&self) -> usize {
        self.n * self.k
    }
    /// Number of discrete unknowns of the integral equation, `n k (p + 1)`.
    pub fn grid_dim(&self) -> usize {
        self.n * self.k * (self.p + 1)
    }
    pub fn guaranteed(&self) -> bool {
        self.k as f64 > self.c_r
    }
    pub fn b_is_zero(&self) -> bool {
        self.cp.b_is_zero()
    }
    /// Absolute time of collocation node `m` on subinterval `j`.
    pub fn node_time(&self, j: usize, m: usize) -> f64 {
        partition_point(self.k, j) + self.node_offset[j * (self.p + 1) + m]
    }

    /// Builds the discretization for a fixed partition count.
    pub fn with_k(
        cp: &CoefficientPair,
        tau: f64,
        k: usize,
        settings: &CharSettings,
    ) -> Result<Self> {
        if !(settings.r > 0.0) {
            return Err(Error::Config(format!(
                "R = {} must be positive",
                settings.r
            )));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::Config(format!("tau = {tau} must lie in [0, 1)")));
        }
        if settings.p < 2 {
            return Err(Error::Config(
                "collocation degree must be at least 2".into(),
            ));
        }
        if k == 0 {
            return Err(Error::Config("partition count must be positive".into()));
        }
        if k > settings.k_cap {
            return Err(Error::Resolution {
                k,
                cap: settings.k_cap,
            });
        }
        let n = cp.dim();
        let p = settings.p;
        let kf = k as f64;
        let lob = chebyshev_lobatto(p);
        let bw = lobatto_bary_weights(p);
        let (qx, qw) = clenshaw_curtis(p + 4);

        // Source subinterval and offset of s - tau for s = t_j.
        let c = -tau * kf;
        let fl = c.floor();
        let mut frac = c - fl;
        let mut shift = fl as i64;
        if frac > 1.0 - 1e-12 {
            frac = 0.0;
            shift += 1;
        }
        if frac < 1e-12 {
            frac = 0.0;
        }
        let src = |j: usize, extra: i64| -> usize {
            (j as i64 + shift + extra).rem_euclid(k as i64) as usize
        };

        // Quadrature pieces per node: (a, b, source subinterval, u at a).
        struct Piece {
            a: f64,
            b: f64,
            src: usize,
            u0: f64,
        }
        let mut pieces: Vec<Vec<Piece>> = Vec::with_capacity(k * (p + 1));
        let mut extra_stations: Vec<Vec<f64>> = vec![Vec::new(); k];
        let mut node_offset = Vec::with_capacity(k * (p + 1));
        for j in 0..k {
            let tj = partition_point(k, j);
            let brk = if frac == 0.0 {
                f64::INFINITY
            } else {
                (1.0 - frac) / kf
            };
            for &u in lob.iter() {
                let off = u / kf;
                node_offset.push(off);
                let x = tj + off;
                extra_stations[j].push(x);
                let mut ps = Vec::new();
                if off > 0.0 {
                    let first_end = off.min(brk);
                    ps.push(Piece {
                        a: 0.0,
                        b: first_end,
                        src: src(j, 0),
                        u0: frac,
                    });
                    if off > brk {
                        ps.push(Piece {
                            a: brk,
                            b: off,
                            src: src(j, 1),
                            u0: 0.0,
                        });
                    }
                }
                for pc in &ps {
                    for &xq in &qx {
                        extra_stations[j].push(tj + pc.a + (pc.b - pc.a) * xq);
                    }
                }
                pieces.push(ps);
            }
        }
        let cache = PropagatorCache::build(cp, k, extra_stations, settings.integrator)?;

        let mut node_prop = Vec::with_capacity(k * (p + 1));
        for j in 0..k {
            let tj = partition_point(k, j);
            for m in 0..=p {
                let x = tj + node_offset[j * (p + 1) + m];
                node_prop.push(
                    cache
                        .from_partition_point(j, x)
                        .expect("node station")
                        .clone(),
                );
            }
        }

        let mut terms = Vec::new();
        let mut lrow = vec![0.0; p + 1];
        for j in 0..k {
            let tj = partition_point(k, j);
            for m in 0..=p {
                let idx = j * (p + 1) + m;
                let x = tj + node_offset[idx];
                let ux = &node_prop[idx];
                for pc in &pieces[idx] {
                    let len = pc.b - pc.a;
                    if len <= 0.0 {
                        continue;
                    }
                    for (&xq, &wq) in qx.iter().zip(&qw) {
                        let s = tj + pc.a + len * xq;
                        let us = cache
                            .from_partition_point(j, s)
                            .expect("quadrature station");
                        let bs = cp.b.eval(s);
                        let kern = ux * inverse_real(us.as_ref()) * &bs;
                        let u = (pc.u0 + len * xq * kf).clamp(0.0, 1.0);
                        bary_row(&lob, &bw, u, &mut lrow);
                        let w = wq * len;
                        let mut blocks = vec![0.0; (p + 1) * n * n];
                        for (mm, &l) in lrow.iter().enumerate() {
                            for a in 0..n {
                                for b in 0..n {
                                    blocks[mm * n * n + a * n + b] = w * l * kern[(a, b)];
                                }
                            }
                        }
                        terms.push(Term {
                            row: idx,
                            dt: x - s,
                            col_node: pc.src * (p + 1),
                            blocks,
                        });
                    }
                }
            }
        }

        let c_r = c_of_r(cp.a_norm(), cp.b_norm(), settings.r);
        Ok(CharContext {
            cp: cp.clone(),
            tau,
            r: settings.r,
            k,
            p,
            n,
            mode: settings.mode,
            c_r,
            cache,
            node_offset,
            node_prop,
            terms,
        })
    }

    /// Discretized `L_k(mu)` acting on node values.
    pub fn l_matrix(&self, mu: C64) -> Mat<C64> {
        let nn = self.grid_dim();
        let mut l = Mat::<C64>::zeros(nn, nn);
        self.accumulate_l(mu, &mut l, None);
        l
    }

    fn accumulate_l(&self, mu: C64, l: &mut Mat<C64>, mut dl: Option<&mut Mat<C64>>) {
        let n = self.n;
        let p = self.p;
        for t in &self.terms {
            let f = (-mu * t.dt).exp();
            let df = f * (-t.dt);
            for mm in 0..=p {
                let col0 = (t.col_node + mm) * n;
                for a in 0..n {
                    for b in 0..n {
                        let w = t.blocks[mm * n * n + a * n + b];
                        if w != 0.0 {
                            l[(t.row * n + a, col0 + b)] += f * w;
                            if let Some(d) = dl.as_deref_mut() {
                                d[(t.row * n + a, col0 + b)] += df * w;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Restart injection `S(mu)`: node `(j, m)` receives `U(x, t_j, mu) v_j`.
    pub fn s_matrix(&self, mu: C64) -> Mat<C64> {
        self.s_matrix_with_derivative(mu).0
    }

    fn s_matrix_with_derivative(&self, mu: C64) -> (Mat<C64>, Mat<C64>) {
        let n = self.n;
        let p = self.p;
        let mut s = Mat::<C64>::zeros(self.grid_dim(), self.delta_dim());
        let mut ds = Mat::<C64>::zeros(self.grid_dim(), self.delta_dim());
        for j in 0..self.k {
            for m in 0..=p {
                let idx = j * (p + 1) + m;
                let off = self.node_offset[idx];
                let f = (-mu * off).exp();
                let u = &self.node_prop[idx];
                for a in 0..n {
                    for b in 0..n {
                        s[(idx * n + a, j * n + b)] = f * u[(a, b)];
                        ds[(idx * n + a, j * n + b)] = -off * f * u[(a, b)];
                    }
                }
            }
        }
        (s, ds)
    }

    /// Row of the grid vector holding `y(t_i-)` for block `i` of `Delta`.
    fn end_row(&self, i: usize) -> usize {
        let prev = (i + self.k - 1) % self.k;
        (prev * (self.p + 1) + self.p) * self.n
    }

    fn project_ends(&self, y: &Mat<C64>) -> Mat<C64> {
        let n = self.n;
        Mat::from_fn(self.delta_dim(), y.ncols(), |r, c| {
            y[(self.end_row(r / n) + r % n, c)]
        })
    }

    fn check_domain(&self, mu: C64, z: C64) -> Result<bool> {
        if !(mu.re >= -self.r - 1e-12) {
            return Err(Error::Domain(format!(
                "Re mu = {} is left of the strip Re mu >= -R = {}",
                mu.re, -self.r
            )));
        }
        let inside = z.norm() <= self.r.exp() * (1.0 + 1e-12);
        if self.mode == KMode::Guaranteed && !inside {
            return Err(Error::Domain(format!(
                "|z| = {} exceeds e^R = {}",
                z.norm(),
                self.r.exp()
            )));
        }
        Ok(inside && self.guaranteed())
    }

    fn factor_system(&self, mu: C64, z: C64, l: &Mat<C64>) -> Result<ComplexLu> {
        let nn = self.grid_dim();
        let a = Mat::from_fn(nn, nn, |i, j| {
            if i == j {
                C64::new(1.0, 0.0) - z * l[(i, j)]
            } else {
                -z * l[(i, j)]
            }
        });
        let lu = ComplexLu::new(a.as_ref());
        if lu.pivot_ratio() < POLE_PIVOT_RATIO {
            return Err(Error::NearPole {
                mu: format!("{mu}"),
                z: format!("{z}"),
            });
        }
        Ok(lu)
    }

    /// Solves `y = S(mu) v + z L_k(mu) y` on the node grid.
    pub fn solve_integral_equation(&self, mu: C64, z: C64, v: &[C64]) -> Result<Vec<C64>> {
        self.check_domain(mu, z)?;
        if v.len() != self.delta_dim() {
            return Err(Error::Config(format!(
                "restart vector has length {}, expected {}",
                v.len(),
                self.delta_dim()
            )));
        }
        let l = self.l_matrix(mu);
        let lu = self.factor_system(mu, z, &l)?;
        let s = self.s_matrix(mu);
        let vm = Mat::from_fn(v.len(), 1, |i, _| v[i]);
        let rhs = &s * &vm;
        let y = lu.solve(rhs.as_ref());
        Ok((0..y.nrows()).map(|i| y[(i, 0)]).collect())
    }

    /// Fixed-point iteration for the same equation; used as an oracle.
    pub fn picard_solve(&self, mu: C64, z: C64, v: &[C64], iterations: usize) -> Result<Vec<C64>> {
        self.check_domain(mu, z)?;
        let l = self.l_matrix(mu);
        let s = self.s_matrix(mu);
        let vm = Mat::from_fn(v.len(), 1, |i, _| v[i]);
        let base = &s * &vm;
        let mut y = base.clone();
        for _ in 0..iterations {
            let ly = &l * &y;
            y = Mat::from_fn(base.nrows(), 1, |i, _| base[(i, 0)] + z * ly[(i, 0)]);
        }
        Ok((0..y.nrows()).map(|i| y[(i, 0)]).collect())
    }

    /// Value of the solution at the left limit of each partition point, `y(t_i-)`.
    pub fn end_values(&self, y: &[C64]) -> Vec<C64> {
        let n = self.n;
        (0..self.delta_dim())
            .map(|r| y[self.end_row(r / n) + r % n])
            .collect()
    }

    /// `Delta(mu, z) = I - P (I - z L)^{-1} S`.
    pub fn char_matrix(&self, mu: C64, z: C64) -> Result<Mat<C64>> {
        self.check_domain(mu, z)?;
        let l = self.l_matrix(mu);
        let lu = self.factor_system(mu, z, &l)?;
        let s = self.s_matrix(mu);
        let y = lu.solve(s.as_ref());
        Ok(self.delta_from(&y))
    }

    fn delta_from(&self, y: &Mat<C64>) -> Mat<C64> {
        let py = self.project_ends(y);
        Mat::from_fn(py.nrows(), py.ncols(), |i, j| {
            if i == j {
                C64::new(1.0, 0.0) - py[(i, j)]
            } else {
                -py[(i, j)]
            }
        })
    }

    pub fn char_value(&self, mu: C64, z: C64) -> Result<CharValue> {
        let certified = self.check_domain(mu, z)?;
        let l = self.l_matrix(mu);
        let lu = self.factor_system(mu, z, &l)?;
        let s = self.s_matrix(mu);
        let y = lu.solve(s.as_ref());
        let delta = self.delta_from(&y);
        let dlu = ComplexLu::new(delta.as_ref());
        Ok(value_from(&lu, &dlu, certified))
    }

    /// `h_N(mu) = h(mu, exp(-(N + tau) mu))`.
    pub fn char_value_n(&self, n: usize, mu: C64) -> Result<CharValue> {
        let theta = n as f64 + self.tau;
        self.check_strip_n(n, mu)?;
        self.char_value(mu, (-theta * mu).exp())
    }

    pub fn check_strip_n(&self, n: usize, mu: C64) -> Result<()> {
        let lo = self.strip_lower_n(n);
        if mu.re < lo - 1e-12 {
            return Err(Error::Domain(format!(
                "Re mu = {} is left of the strip bound {lo}",
                mu.re
            )));
        }
        Ok(())
    }

    /// `-R/(N + tau)`, or `-R` when `B = 0` and `h` does not depend on `z`.
    pub fn strip_lower_n(&self, n: usize) -> f64 {
        if self.b_is_zero() {
            -self.r
        } else {
            -self.r / (n as f64 + self.tau)
        }
    }

    /// Value with exact logarithmic derivatives of the discretized determinant.
    pub fn log_derivatives(&self, mu: C64, z: C64) -> Result<LogDerivatives> {
        let certified = self.check_domain(mu, z)?;
        let nn = self.grid_dim();
        let mut l = Mat::<C64>::zeros(nn, nn);
        let mut dl = Mat::<C64>::zeros(nn, nn);
        self.accumulate_l(mu, &mut l, Some(&mut dl));
        let lu = self.factor_system(mu, z, &l)?;
        let (s, ds) = self.s_matrix_with_derivative(mu);
        let y = lu.solve(s.as_ref());
        let delta = self.delta_from(&y);
        let dlu = ComplexLu::new(delta.as_ref());
        let value = value_from(&lu, &dlu, certified);
        let nk = self.delta_dim();
        let ly = &l * &y;
        let dly = &dl * &y;
        let mut rhs = Mat::<C64>::zeros(nn, 2 * nk);
        for c in 0..nk {
            for r in 0..nn {
                rhs[(r, c)] = ly[(r, c)];
                rhs[(r, nk + c)] = z * dly[(r, c)] + ds[(r, c)];
            }
        }
        let sol = lu.solve(rhs.as_ref());
        let p = self.project_ends(&sol);
        let d_dz = Mat::from_fn(nk, nk, |i, j| -p[(i, j)]);
        let d_dmu = Mat::from_fn(nk, nk, |i, j| -p[(i, nk + j)]);
        let dz = dlu.trace_solve(d_dz.as_ref());
        let dmu = dlu.trace_solve(d_dmu.as_ref());
        Ok(LogDerivatives { value, dmu, dz })
    }

    /// `d ln h_N / d mu = d ln h/d mu - (N + tau) z d ln h/d z` at `z = exp(-(N + tau) mu)`.
    pub fn log_derivative_n(&self, n: usize, mu: C64) -> Result<(CharValue, C64)> {
        let theta = n as f64 + self.tau;
        self.check_strip_n(n, mu)?;
        let z = (-theta * mu).exp();
        let d = self.log_derivatives(mu, z)?;
        Ok((d.value, d.dmu - theta * z * d.dz))
    }

    /// Holomorphic derivatives `(d h/d mu, d h/d z)` by central differences with a
    /// Cauchy-Riemann cross-check along the imaginary direction.
    pub fn char_derivatives(&self, mu: C64, z: C64) -> Result<(C64, C64)> {
        let d1 = self.fd_derivative(mu, |x| self.char_value(x, z).map(|v| v.value()), "mu")?;
        let d2 = self.fd_derivative(z, |x| self.char_value(mu, x).map(|v| v.value()), "z")?;
        Ok((d1, d2))
    }

    fn fd_derivative<F>(&self, at: C64, f: F, name: &str) -> Result<C64>
    where
        F: Fn(C64) -> Result<C64>,
    {
        let mut step = 1e-6 * at.norm().max(1.0);
        let mut last_mismatch = f64::INFINITY;
        for _ in 0..5 {
            let e = C64::new(step, 0.0);
            let ie = C64::new(0.0, step);
            let fp = f(at + e)?;
            let fm = f(at - e)?;
            let gp = f(at + ie)?;
            let gm = f(at - ie)?;
            let d_re = (fp - fm) / (2.0 * step);
            let d_im = (gp - gm) / (2.0 * ie);
            let scale = fp.norm().max(fm.norm()).max(gp.norm()).max(gm.norm());
            let mismatch = (d_re - d_im).norm();
            let allowed = 1e-4 * d_re.norm().max(d_im.norm()) + 1e-10 * scale / step;
            if mismatch <= allowed {
                return Ok(0.5 * (d_re + d_im));
            }
            last_mismatch = mismatch / d_re.norm().max(d_im.norm()).max(f64::MIN_POSITIVE);
            step *= 0.5;
        }
        Err(Error::DerivativeUnreliable {
            at: format!("{name} = {at}"),
            mismatch: last_mismatch,
        })
    }

    /// `||L_k(mu)||_inf` of the discretized operator (maximum row sum).
    pub fn l_norm(&self, mu: C64) -> f64 {
        inf_norm(self.l_matrix(mu).as_ref())
    }

    /// Values `1/z` of the roots `h(mu, z) = 0` with `|1/z| >= e^{-R}`: eigenvalues of
    /// `(I - S P)^{-1} L(mu)`, which do not depend on the partition.
    pub fn inverse_z_roots(&self, mu: C64) -> Result<Vec<C64>> {
        let nn = self.grid_dim();
        if self.b_is_zero() {
            return Ok(Vec::new());
        }
        let s = self.s_matrix(mu);
        let mut m = identity_c(nn);
        for c in 0..self.delta_dim() {
            let col = self.end_row(c / self.n) + c % self.n;
            for r in 0..nn {
                m[(r, col)] -= s[(r, c)];
            }
        }
        let lu = ComplexLu::new(m.as_ref());
        if lu.pivot_ratio() < POLE_PIVOT_RATIO {
            return Err(Error::Numerical(format!(
                "probe point {mu} lies on the instantaneous spectrum"
            )));
        }
        let g = lu.solve(self.l_matrix(mu).as_ref());
        let thr = (-self.r).exp();
        let mut vals: Vec<C64> = eigenvalues(g.as_ref())?
            .into_iter()
            .filter(|e| e.norm() >= thr)
            .collect();
        vals.sort_by(|a, b| b.norm().partial_cmp(&a.norm()).unwrap());
        Ok(vals)
    }
}

fn value_from(lu: &ComplexLu, dlu: &ComplexLu, certified: bool) -> CharValue {
    CharValue {
        log_abs_h: dlu.log_det.log_abs,
        arg_h: dlu.log_det.arg,
        h_hat: dlu.normalized_det(),
        pivot_ratio: lu.pivot_ratio(),
        delta_pivot_ratio: dlu.pivot_ratio(),
        certified,
    }
}

/// Selects the partition count per `settings.mode` and builds the context.
pub fn build_context(
    cp: &CoefficientPair,
    tau: f64,
    settings: &CharSettings,
) -> Result<CharContext> {
    if !(settings.r > 0.0) {
        return Err(Error::Config(format!(
            "R = {} must be positive",
            settings.r
        )));
    }
    if let Some(k) = settings.k_override {
        return CharContext::with_k(cp, tau, k, settings);
    }
    match settings.mode {
        KMode::Guaranteed => {
            let k = guaranteed_k(cp.a_norm(), cp.b_norm(), settings.r);
            if k > settings.k_cap {
                return Err(Error::Resolution {
                    k,
                    cap: settings.k_cap,
                });
            }
            CharContext::with_k(cp, tau, k, settings)
        }
        KMode::Adaptive => {
            let mut k = adaptive_start_k(cp.a_norm(), settings.r);
            if k > settings.k_cap {
                return Err(Error::Resolution {
                    k,
                    cap: settings.k_cap,
                });
            }
            let mut ctx = CharContext::with_k(cp, tau, k, settings)?;
            if cp.b_is_zero() {
                return Ok(ctx);
            }
            let mut current = probe_values(&ctx)?;
            loop {
                let k2 = 2 * k;
                if k2 > settings.k_cap {
                    return Err(Error::Resolution {
                        k: k2,
                        cap: settings.k_cap,
                    });
                }
                let finer = CharContext::with_k(cp, tau, k2, settings)?;
                let next = probe_values(&finer)?;
                if probes_agree(&current, &next, ADAPTIVE_TOL) {
                    log::debug!("adaptive partition count settled at k = {k}");
                    return Ok(ctx);
                }
                log::debug!("adaptive partition count {k} rejected, trying {k2}");
                ctx = finer;
                current = next;
                k = k2;
            }
        }
    }
}

/// `ln |h(mu_i, 1)|` at the probe points.
pub fn probe_values(ctx: &CharContext) -> Result<Vec<f64>> {
    PROBE_POINTS
        .iter()
        .map(|&(re, im)| {
            ctx.char_value(C64::new(re, im), C64::new(1.0, 0.0))
                .map(|v| v.log_abs_h)
        })
        .collect()
}

/// `| |h_a| - |h_b| | < tol |h_a|` at every probe.
pub fn probes_agree(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| x.is_finite() && y.is_finite() && (y - x).exp_m1().abs() < tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn scalar_ctx(a: f64, b: f64, tau: f64) -> CharContext {
        let cp = CoefficientPair::scalar(a, b);
        CharContext::with_k(&cp, tau, 16, &CharSettings::default()).unwrap()
    }

    #[test]
    fn guaranteed_k_formula() {
        assert_eq!(guaranteed_k(1.0, 0.5, 1.0), 5);
        assert_eq!(guaranteed_k(1.0, 1.0, 3.0), 56);
    }

    #[test]
    fn zero_z_is_pure_propagation() {
        let ctx = scalar_ctx(-1.0, 0.5, 0.3);
        let v: Vec<C64> = (0..16).map(|j| c(1.0 + j as f64, -0.5)).collect();
        let mu = c(0.2, 0.4);
        let y = ctx.solve_integral_equation(mu, c(0.0, 0.0), &v).unwrap();
        for j in 0..16 {
            for m in 0..=ctx.p() {
                let off = ctx.node_time(j, m) - partition_point(16, j);
                let expect = v[j] * ((c(-1.0, 0.0) - mu) * off).exp();
                assert!((y[j * (ctx.p() + 1) + m] - expect).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn homogeneous_problem_has_zero_solution() {
        let ctx = scalar_ctx(-1.0, 0.5, 0.3);
        let y = ctx
            .solve_integral_equation(c(0.0, 0.0), c(1.0, 0.0), &vec![c(0.0, 0.0); 16])
            .unwrap();
        assert!(y.iter().all(|v| *v == c(0.0, 0.0)));
    }

    #[test]
    fn instantaneous_root_at_z_zero() {
        let ctx = scalar_ctx(-1.0, 0.5, 0.3);
        let h = ctx.char_value(c(-1.0, 0.0), c(0.0, 0.0)).unwrap();
        assert!(h.abs() < 1e-9);
        let h2 = ctx.char_value(c(0.3, 0.1), c(0.0, 0.0)).unwrap();
        let expect = c(1.0, 0.0) - (c(-1.0, 0.0) - c(0.3, 0.1)).exp();
        assert!((h2.value() - expect).norm() < 1e-9);
    }

    #[test]
    fn domain_is_checked() {
        let ctx = scalar_ctx(-1.0, 0.5, 0.3);
        assert!(matches!(
            ctx.char_value(c(-3.5, 0.0), c(0.1, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            ctx.char_value_n(10, c(-0.5, 0.0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn analytic_log_derivatives_match_finite_differences() {
        let ctx = scalar_ctx(-1.0, 0.5, 0.3);
        let mu = c(0.1, 0.7);
        let z = c(0.8, -0.3);
        let d = ctx.log_derivatives(mu, z).unwrap();
        let (d1, d2) = ctx.char_derivatives(mu, z).unwrap();
        let h = d.value.value();
        assert!((d.dmu * h - d1).norm() < 1e-6 * d1.norm().max(1e-3));
        assert!((d.dz * h - d2).norm() < 1e-6 * d2.norm().max(1e-3));
    }
}
