//! Instantaneous, strongly unstable and asymptotic continuous spectra.

use std::f64::consts::PI;

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::charfun::CharContext;
use crate::error::{Error, Result};
use crate::linalg::{eigen, eigenvalues_real, inf_norm, wrap_angle_half_open, ComplexLu, C64};
use crate::model::CoefficientPair;
use crate::propagator::PropagatorCache;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SpectralPoint {
    pub re: f64,
    pub im: f64,
    pub multiplicity: usize,
}

impl SpectralPoint {
    pub fn mu(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstantaneousSpectrum {
    pub points: Vec<SpectralPoint>,
    pub distance_to_axis: f64,
}

impl InstantaneousSpectrum {
    pub fn max_re(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn total_multiplicity(&self) -> usize {
        self.points.iter().map(|p| p.multiplicity).sum()
    }
}

/// Logarithms of the monodromy eigenvalues, imaginary parts in `[-pi, pi)`.
pub fn instantaneous_spectrum(cache: &PropagatorCache) -> Result<InstantaneousSpectrum> {
    let lambdas = eigenvalues_real(cache.monodromy_real().as_ref())?;
    let mut points: Vec<(C64, usize)> = Vec::new();
    for l in lambdas {
        if l.norm() == 0.0 || !l.is_finite() {
            return Err(Error::Numerical(format!(
                "monodromy eigenvalue {l} has no logarithm"
            )));
        }
        if let Some(p) = points
            .iter_mut()
            .find(|(q, _)| (q - l).norm() <= 1e-6 * l.norm().max(1.0))
        {
            p.1 += 1;
        } else {
            points.push((l, 1));
        }
    }
    let mut out: Vec<SpectralPoint> = points
        .into_iter()
        .map(|(l, m)| SpectralPoint {
            re: l.norm().ln(),
            im: wrap_angle_half_open(l.arg()),
            multiplicity: m,
        })
        .collect();
    out.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    let distance_to_axis = out.iter().map(|p| p.re.abs()).fold(f64::INFINITY, f64::min);
    Ok(InstantaneousSpectrum {
        points: out,
        distance_to_axis,
    })
}

/// Largest `|h(mu_i, 0)|` (normalized) over the instantaneous spectrum.
pub fn instantaneous_residual(ctx: &CharContext, spec: &InstantaneousSpectrum) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in &spec.points {
        let v = ctx.char_value(p.mu(), C64::new(0.0, 0.0))?;
        worst = worst.max(v.normalized_residual());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrongSpectrum {
    /// Elements with `Re mu > tol_axis`.
    pub points: Vec<SpectralPoint>,
    /// Elements with `|Re mu| <= tol_axis`, reported rather than classified.
    pub on_axis: Vec<SpectralPoint>,
}

pub fn strongly_unstable(spec: &InstantaneousSpectrum, tol_axis: f64) -> StrongSpectrum {
    StrongSpectrum {
        points: spec
            .points
            .iter()
            .filter(|p| p.re > tol_axis)
            .copied()
            .collect(),
        on_axis: spec
            .points
            .iter()
            .filter(|p| p.re.abs() <= tol_axis)
            .copied()
            .collect(),
    }
}

/// `omega`-independent tables for the uniform-grid discretization of
///
/// `K y(t) = U(t,-1)(I - U(0,-1))^{-1} int_{-1}^0 U(0,s)B(s)y(s-tau)ds + int_{-1}^t U(t,s)B(s)y(s-tau)ds`
///
/// with `U(t, s) = exp(-i omega (t - s)) U_A(t, s)`. Trapezoid panels, four-point
/// periodic Lagrange interpolation for the delayed read. `B(t) = Q C(t)` with
/// orthonormal `Q` spanning the ranges of all `B(t_l)`, so `K = F G` and the
/// nonzero spectrum of `K` is that of the smaller `G F`.
#[derive(Clone, Debug)]
pub struct AcsDiscretization {
    m: usize,
    n: usize,
    r: usize,
    tau: f64,
    monodromy: Mat<f64>,
    monodromy_eigs: Vec<C64>,
    /// `U_A(t_i, -1)` for `0 <= i <= M`.
    ustart: Vec<Mat<f64>>,
    /// `uq[i][l] = U_A(t_i, t_l) Q` for `l <= i <= M`.
    uq: Vec<Vec<Mat<f64>>>,
    /// `C(t_l) = Q^T B(t_l)`.
    cb: Vec<Mat<f64>>,
    stencil: Vec<[(usize, f64); 4]>,
}

/// Trapezoid weight of node `l` in `int_{t_0}^{t_i}`.
fn trap(i: usize, l: usize, h: f64) -> f64 {
    if i == 0 || l > i {
        0.0
    } else if l == 0 || l == i {
        0.5 * h
    } else {
        h
    }
}

pub struct AcsOperator {
    pub omega: f64,
    /// Dense `nM x nM` matrix acting on node values `y(t_i)`, `t_i = -1 + i/M`.
    pub matrix: Mat<C64>,
}

impl AcsDiscretization {
    pub fn new(cp: &CoefficientPair, tau: f64, m: usize) -> Result<Self> {
        if m < 8 {
            return Err(Error::Config(format!("M = {m} panels is too coarse")));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::Config(format!("tau = {tau} must lie in [0, 1)")));
        }
        let n = cp.dim();
        let cache = PropagatorCache::new(cp, m)?;
        let bs: Vec<Mat<f64>> = (0..m)
            .map(|l| cp.b.eval(-1.0 + l as f64 / m as f64))
            .collect();
        let mut gram = Mat::<f64>::zeros(n, n);
        for b in &bs {
            gram += b * b.transpose();
        }
        let eig = gram
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::Numerical(format!("range of B: {e:?}")))?;
        let s = eig.S();
        let smax = (0..n).map(|i| s[i]).fold(0.0f64, f64::max);
        let keep: Vec<usize> = (0..n)
            .filter(|&i| smax > 0.0 && s[i] > 1e-24 * smax)
            .collect();
        let r = keep.len();
        let q = Mat::from_fn(n, r, |i, j| eig.U()[(i, keep[j])]);
        let cb: Vec<Mat<f64>> = bs.iter().map(|b| q.transpose() * b).collect();

        let mut uq: Vec<Vec<Mat<f64>>> = Vec::with_capacity(m + 1);
        uq.push(vec![q.clone()]);
        for i in 1..=m {
            let step = cache.step(i - 1);
            let mut row: Vec<Mat<f64>> = uq[i - 1].iter().map(|x| step * x).collect();
            row.push(q.clone());
            uq.push(row);
        }
        let mut ustart = vec![Mat::<f64>::identity(n, n)];
        for i in 1..=m {
            let next = cache.step(i - 1) * &ustart[i - 1];
            ustart.push(next);
        }
        let mut stencil = Vec::with_capacity(m);
        for l in 0..m {
            let pos = (l as f64 - tau * m as f64).rem_euclid(m as f64);
            let mut i0 = pos.floor();
            let mut fr = pos - i0;
            if fr > 1.0 - 1e-12 {
                i0 += 1.0;
                fr = 0.0;
            }
            let i0 = i0 as i64;
            let idx = |o: i64| (i0 + o).rem_euclid(m as i64) as usize;
            let st = if fr < 1e-12 {
                [(idx(0), 1.0), (idx(1), 0.0), (idx(-1), 0.0), (idx(2), 0.0)]
            } else {
                let x = fr;
                [
                    (idx(-1), -x * (x - 1.0) * (x - 2.0) / 6.0),
                    (idx(0), (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0),
                    (idx(1), -(x + 1.0) * x * (x - 2.0) / 2.0),
                    (idx(2), (x + 1.0) * x * (x - 1.0) / 6.0),
                ]
            };
            stencil.push(st);
        }
        let monodromy = cache.monodromy_real().clone();
        let monodromy_eigs = eigenvalues_real(monodromy.as_ref())?;
        Ok(AcsDiscretization {
            m,
            n,
            r,
            tau,
            monodromy,
            monodromy_eigs,
            ustart,
            uq,
            cb,
            stencil,
        })
    }

    pub fn panels(&self) -> usize {
        self.m
    }

    pub fn b_rank(&self) -> usize {
        self.r
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `(I - exp(-i omega) U_A(0,-1))^{-1}`, refusing near-singular cases.
    fn resolvent(&self, omega: f64, tol: f64) -> Result<Mat<C64>> {
        let e = C64::new(0.0, -omega).exp();
        for l in &self.monodromy_eigs {
            if (C64::new(1.0, 0.0) - e * l).norm() < tol {
                let mu = C64::new(l.norm().ln(), wrap_angle_half_open(l.arg()));
                return Err(Error::Precondition(format!(
                    "I - U(0,-1,i omega) is singular at omega = {omega}: instantaneous exponent {mu} lies on the imaginary axis"
                )));
            }
        }
        let n = self.n;
        let a = Mat::from_fn(n, n, |i, j| {
            let d = if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            d - e * self.monodromy[(i, j)]
        });
        let lu = ComplexLu::new(a.as_ref());
        Ok(lu.solve(crate::linalg::identity_c(n).as_ref()))
    }

    /// `F` (`nM x rM`) with `K = F G`.
    fn f_matrix(&self, omega: f64, tol: f64) -> Result<Mat<C64>> {
        let (m, n, r) = (self.m, self.n, self.r);
        let h = 1.0 / m as f64;
        let x = self.resolvent(omega, tol)?;
        let phase: Vec<C64> = (0..=m)
            .map(|j| C64::new(0.0, -omega * j as f64 * h).exp())
            .collect();
        // Periodic term: U(t_i,-1) X sum_l c_l U(0,t_l) Q C_l y_d(l); node M folds onto node 0.
        let mut jblk: Vec<Mat<C64>> = Vec::with_capacity(m);
        for l in 0..m {
            let mut acc = Mat::<C64>::zeros(n, r);
            let mut add = |ll: usize, w: f64| {
                let ph = phase[m - ll] * w;
                let u = &self.uq[m][ll];
                for a in 0..n {
                    for b in 0..r {
                        acc[(a, b)] += ph * u[(a, b)];
                    }
                }
            };
            add(l, trap(m, l, h));
            if l == 0 {
                add(m, trap(m, m, h));
            }
            jblk.push(&x * &acc);
        }
        let mut f = Mat::<C64>::zeros(n * m, r * m);
        let mut p = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..m {
            let us = &self.ustart[i];
            for a in 0..n {
                for b in 0..n {
                    p[a * n + b] = phase[i] * us[(a, b)];
                }
            }
            for (l, jb) in jblk.iter().enumerate() {
                let w = trap(i, l, h);
                let ph = phase[i.saturating_sub(l)] * w;
                let u = &self.uq[i];
                for a in 0..n {
                    for b in 0..r {
                        let mut v = C64::new(0.0, 0.0);
                        for q in 0..n {
                            v += p[a * n + q] * jb[(q, b)];
                        }
                        if w != 0.0 {
                            v += ph * u[l][(a, b)];
                        }
                        f[(i * n + a, l * r + b)] = v;
                    }
                }
            }
        }
        Ok(f)
    }

    /// Applies `G` from the left: rows `(l, rho)` of `G X` are `sum_q w_lq C_l X[idx_q]`.
    fn apply_g(&self, x: &Mat<C64>) -> Mat<C64> {
        let (m, n, r) = (self.m, self.n, self.r);
        let mut out = Mat::<C64>::zeros(r * m, x.ncols());
        for l in 0..m {
            let c = &self.cb[l];
            for &(idx, w) in &self.stencil[l] {
                if w == 0.0 {
                    continue;
                }
                for rho in 0..r {
                    for a in 0..n {
                        let coef = w * c[(rho, a)];
                        if coef == 0.0 {
                            continue;
                        }
                        for col in 0..x.ncols() {
                            let v = x[(idx * n + a, col)];
                            out[(l * r + rho, col)] += coef * v;
                        }
                    }
                }
            }
        }
        out
    }

    /// `K = F G` using the sparsity of `G`.
    fn compose(&self, f: &Mat<C64>) -> Mat<C64> {
        let (m, n, r) = (self.m, self.n, self.r);
        let mut k = Mat::<C64>::zeros(n * m, n * m);
        for l in 0..m {
            let c = &self.cb[l];
            for &(idx, w) in &self.stencil[l] {
                if w == 0.0 {
                    continue;
                }
                for rho in 0..r {
                    for a in 0..n {
                        let coef = w * c[(rho, a)];
                        if coef == 0.0 {
                            continue;
                        }
                        let src = l * r + rho;
                        let dst = idx * n + a;
                        for row in 0..n * m {
                            let v = f[(row, src)];
                            k[(row, dst)] += coef * v;
                        }
                    }
                }
            }
        }
        k
    }

    /// The dense discretization of `K(i omega)`.
    pub fn operator(&self, omega: f64, tol_axis: f64) -> Result<AcsOperator> {
        let f = self.f_matrix(omega, tol_axis)?;
        Ok(AcsOperator {
            omega,
            matrix: self.compose(&f),
        })
    }

    /// Eigenvalues `eta` of `K(i omega)` with `|eta| >= threshold` and unit eigenvectors
    /// over the node grid, sorted by decreasing modulus.
    /// Also returns `||K(i omega)||_inf`.
    pub fn eigenpairs(
        &self,
        omega: f64,
        threshold: f64,
        tol_axis: f64,
    ) -> Result<(Vec<(C64, Vec<C64>)>, f64)> {
        if self.r == 0 {
            self.resolvent(omega, tol_axis)?;
            return Ok((Vec::new(), 0.0));
        }
        let f = self.f_matrix(omega, tol_axis)?;
        let gf = self.apply_g(&f);
        let norm = inf_norm(self.compose(&f).as_ref());
        let (vals, vecs) = eigen(gf.as_ref())?;
        let mut out = Vec::new();
        for (j, &eta) in vals.iter().enumerate() {
            if !(eta.norm() >= threshold) {
                continue;
            }
            let u = Mat::from_fn(vecs.nrows(), 1, |i, _| vecs[(i, j)]);
            let v = &f * &u;
            let nrm = (0..v.nrows())
                .map(|i| v[(i, 0)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            let vec: Vec<C64> = (0..v.nrows()).map(|i| v[(i, 0)] / nrm).collect();
            out.push((eta, vec));
        }
        out.sort_by(|a, b| b.0.norm().partial_cmp(&a.0.norm()).unwrap());
        Ok((out, norm))
    }
}

#[derive(Clone, Debug)]
pub struct AcsSettings {
    pub panels: usize,
    pub omega_points: usize,
    pub refine: bool,
    pub refine_factor: usize,
    pub overlap: f64,
    /// Acceptance threshold on the normalized `|h(i omega, e^{-gamma - i phi})|`.
    pub residual_tol: f64,
    pub tol_axis: f64,
}

impl Default for AcsSettings {
    fn default() -> Self {
        AcsSettings {
            panels: 256,
            omega_points: 512,
            refine: true,
            refine_factor: 8,
            overlap: 0.5,
            residual_tol: 1e-7,
            tol_axis: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AcsSample {
    pub omega: f64,
    pub gamma: f64,
    pub phi: f64,
    /// Normalized `|h|` after polishing.
    pub residual: f64,
    /// Normalized `|h(i omega, 1/eta)|` at the raw operator eigenvalue.
    pub duality_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumCurve {
    pub branch_id: usize,
    pub samples: Vec<AcsSample>,
    pub critical: bool,
    pub crossing_suspected: bool,
}

impl SpectrumCurve {
    pub fn max_gamma(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.gamma)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AcsResult {
    pub curves: Vec<SpectrumCurve>,
    pub omega_grid: Vec<f64>,
    /// `ln max ||K(i omega)||_inf + 0.1`.
    pub r3: f64,
    /// Operator eigenvalues whose polish failed.
    pub dropped: usize,
}

impl AcsResult {
    pub fn max_gamma(&self) -> f64 {
        self.curves
            .iter()
            .map(|c| c.max_gamma())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn critical(&self) -> Option<&SpectrumCurve> {
        self.curves.iter().find(|c| c.critical)
    }

    /// Largest `gamma` away from the critical point, `|omega| >= omega_min`, over all branches.
    pub fn max_gamma_off_zero(&self, omega_min: f64) -> f64 {
        self.curves
            .iter()
            .flat_map(|c| c.samples.iter())
            .filter(|s| s.omega.abs() >= omega_min)
            .map(|s| s.gamma)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `omega_i = -pi + 2 pi i / P`, which contains `omega = 0` for even `P`.
pub fn default_omega_grid(points: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..points)
        .map(|i| -PI + 2.0 * PI * i as f64 / points as f64)
        .collect();
    if !g.contains(&0.0) {
        g.push(0.0);
        g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    g
}

struct RawSlice {
    omega: f64,
    pairs: Vec<(C64, Vec<C64>)>,
    norm: f64,
}

fn overlap(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.conj() * y)
        .sum::<C64>()
        .norm()
}

/// Greedy maximal-overlap matching of `prev` onto `next`: `out[j] = Some(i)`.
fn match_slices(prev: &[&[C64]], next: &[&[C64]], threshold: f64) -> Vec<Option<usize>> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, a) in prev.iter().enumerate() {
        for (j, b) in next.iter().enumerate() {
            let o = overlap(a, b);
            if o >= threshold {
                cand.push((o, i, j));
            }
        }
    }
    cand.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut used = vec![false; prev.len()];
    let mut out = vec![None; next.len()];
    for (_, i, j) in cand {
        if !used[i] && out[j].is_none() {
            used[i] = true;
            out[j] = Some(i);
        }
    }
    out
}

/// Newton in `w = gamma + i phi` on `h(i omega, e^{-w}) = 0`.
fn polish(ctx: &CharContext, omega: f64, w0: C64, tol: f64) -> Option<(C64, f64)> {
    let mu = C64::new(0.0, omega);
    let mut w = w0;
    for _ in 0..40 {
        let z = (-w).exp();
        let d = ctx.log_derivatives(mu, z).ok()?;
        if d.value.log_abs_h == f64::NEG_INFINITY {
            return Some((w, 0.0));
        }
        let denom = z * d.dz;
        if !(denom.norm() > 0.0) {
            return None;
        }
        let mut step = 1.0 / denom;
        if step.norm() > 0.5 {
            step *= 0.5 / step.norm();
        }
        w += step;
        if (w - w0).norm() > 0.25 {
            return None;
        }
        if step.norm() < 1e-12 {
            let v = ctx.char_value(mu, (-w).exp()).ok()?;
            let res = v.normalized_residual();
            return (res < tol).then_some((w, res));
        }
    }
    None
}

fn slice(disc: &AcsDiscretization, omega: f64, threshold: f64, tol_axis: f64) -> Result<RawSlice> {
    let (pairs, norm) = disc.eigenpairs(omega, threshold, tol_axis)?;
    Ok(RawSlice { omega, pairs, norm })
}

/// Eigenvalues of `K(i omega)` with `|eta| >= e^{-R}` over the grid, polished on `h`,
/// joined into branches by eigenvector overlap.
pub fn trace_acs(
    ctx: &CharContext,
    disc: &AcsDiscretization,
    grid: &[f64],
    settings: &AcsSettings,
) -> Result<AcsResult> {
    let threshold = (-ctx.r()).exp();
    let mut grid: Vec<f64> = grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let mut slices: Vec<RawSlice> = grid
        .par_iter()
        .map(|&w| slice(disc, w, threshold, settings.tol_axis))
        .collect::<Result<_>>()?;

    if settings.refine && slices.len() > 2 && settings.refine_factor > 1 {
        let mut slopes: Vec<(f64, usize)> = Vec::new();
        for i in 0..slices.len() - 1 {
            let (a, b) = (&slices[i], &slices[i + 1]);
            let av: Vec<&[C64]> = a.pairs.iter().map(|p| p.1.as_slice()).collect();
            let bv: Vec<&[C64]> = b.pairs.iter().map(|p| p.1.as_slice()).collect();
            let m = match_slices(&av, &bv, settings.overlap);
            let dw = b.omega - a.omega;
            let slope = m
                .iter()
                .enumerate()
                .filter_map(|(j, o)| {
                    o.map(|i| (b.pairs[j].0.norm().ln() - a.pairs[i].0.norm().ln()).abs() / dw)
                })
                .fold(0.0f64, f64::max);
            slopes.push((slope, i));
        }
        slopes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let count = slopes.len().div_ceil(10);
        let mut extra: Vec<f64> = Vec::new();
        for &(_, i) in slopes.iter().take(count) {
            let (lo, hi) = (slices[i].omega, slices[i + 1].omega);
            for q in 1..settings.refine_factor {
                extra.push(lo + (hi - lo) * q as f64 / settings.refine_factor as f64);
            }
        }
        let more: Vec<RawSlice> = extra
            .par_iter()
            .map(|&w| slice(disc, w, threshold, settings.tol_axis))
            .collect::<Result<_>>()?;
        slices.extend(more);
        slices.sort_by(|a, b| a.omega.partial_cmp(&b.omega).unwrap());
    }

    let r3 = slices.iter().map(|s| s.norm).fold(0.0f64, f64::max).ln() + 0.1;
    let omega_grid: Vec<f64> = slices.iter().map(|s| s.omega).collect();

    let polished: Vec<Vec<Option<AcsSample>>> = slices
        .par_iter()
        .map(|sl| {
            sl.pairs
                .iter()
                .map(|(eta, _)| {
                    let w0 = C64::new(eta.norm().ln(), eta.arg());
                    let mu = C64::new(0.0, sl.omega);
                    let duality = ctx
                        .char_value(mu, 1.0 / eta)
                        .map(|v| v.normalized_residual())
                        .unwrap_or(f64::INFINITY);
                    polish(ctx, sl.omega, w0, settings.residual_tol).map(|(w, res)| AcsSample {
                        omega: sl.omega,
                        gamma: w.re,
                        phi: wrap_angle_half_open(w.im),
                        residual: res,
                        duality_residual: duality,
                    })
                })
                .collect()
        })
        .collect();

    let mut dropped = 0;
    let mut curves: Vec<SpectrumCurve> = Vec::new();
    // (curve index, last eigenvector) of branches alive at the previous slice.
    let mut active: Vec<(usize, Vec<C64>)> = Vec::new();
    for (sl, pol) in slices.iter().zip(polished) {
        let mut vecs: Vec<&[C64]> = Vec::new();
        let mut samples: Vec<AcsSample> = Vec::new();
        for ((_, v), p) in sl.pairs.iter().zip(pol) {
            match p {
                Some(s) => {
                    vecs.push(v.as_slice());
                    samples.push(s);
                }
                None => dropped += 1,
            }
        }
        let prev: Vec<&[C64]> = active.iter().map(|a| a.1.as_slice()).collect();
        let assign = match_slices(&prev, &vecs, settings.overlap);
        let orphaned = active.len() > assign.iter().filter(|a| a.is_some()).count();
        let mut next_active = Vec::with_capacity(samples.len());
        for (j, s) in samples.into_iter().enumerate() {
            let idx = match assign[j] {
                Some(i) => active[i].0,
                None => {
                    let id = curves.len();
                    let crossing = orphaned && !active.is_empty();
                    if crossing {
                        for (i, a) in active.iter().enumerate() {
                            if !assign.contains(&Some(i)) {
                                curves[a.0].crossing_suspected = true;
                            }
                        }
                    }
                    curves.push(SpectrumCurve {
                        branch_id: id,
                        samples: Vec::new(),
                        critical: false,
                        crossing_suspected: crossing,
                    });
                    id
                }
            };
            curves[idx].samples.push(s);
            next_active.push((idx, vecs[j].to_vec()));
        }
        active = next_active;
    }
    for c in &mut curves {
        c.critical = c
            .samples
            .iter()
            .any(|s| s.omega.abs() <= 1e-6 && s.gamma.abs() <= 1e-6 && s.phi.abs() <= 1e-6);
    }
    Ok(AcsResult {
        curves,
        omega_grid,
        r3,
        dropped,
    })
}
