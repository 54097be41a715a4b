//! Periodic orbits of `x' = f(x(t), x(t - tau_b))` by periodic collocation with
//! unknown period, continuation in the base delay, and linearization.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::RealLu;
use crate::model::{CoefficientPair, HopfExample, MatrixProvider, NonlinearModel};
use crate::quadrature::{gauss_legendre, lagrange_with_derivative};
use crate::steps::{rk4_dde, HistoryBuffer};

/// Piecewise polynomial profile on `[0, 1)` with equispaced nodes in each interval.
/// `values[(i d + k) n + c]` is component `c` at `s = (i + k/d)/m`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub dim: usize,
    pub intervals: usize,
    pub degree: usize,
    pub values: Vec<f64>,
    pub period: f64,
    pub base_delay: f64,
    pub rescaled_tau: f64,
    pub residual: f64,
    pub phase_value: f64,
}

impl PeriodicOrbit {
    /// Interpolant of `f(s)` on the collocation mesh.
    pub fn from_fn(
        dim: usize,
        intervals: usize,
        degree: usize,
        period: f64,
        base_delay: f64,
        f: impl Fn(f64, &mut [f64]),
    ) -> Self {
        let nodes = intervals * degree;
        let mut values = vec![0.0; nodes * dim];
        for g in 0..nodes {
            f(g as f64 / nodes as f64, &mut values[g * dim..(g + 1) * dim]);
        }
        PeriodicOrbit {
            dim,
            intervals,
            degree,
            values,
            period,
            base_delay,
            rescaled_tau: rescaled_tau(base_delay, period),
            residual: f64::NAN,
            phase_value: 0.0,
        }
    }

    /// Same profile on another mesh.
    pub fn remeshed(&self, intervals: usize, degree: usize) -> Self {
        let mut o = PeriodicOrbit::from_fn(
            self.dim,
            intervals,
            degree,
            self.period,
            self.base_delay,
            |s, out| self.eval_into(s, out),
        );
        o.residual = self.residual;
        o
    }

    pub fn node_count(&self) -> usize {
        self.intervals * self.degree
    }

    fn local_nodes(&self) -> Vec<f64> {
        (0..=self.degree)
            .map(|k| k as f64 / self.degree as f64)
            .collect()
    }

    /// Interval index, local coordinate, and global node indices of the interval.
    fn locate(&self, s: f64) -> (usize, f64) {
        let u = s.rem_euclid(1.0) * self.intervals as f64;
        let i = (u.floor() as usize).min(self.intervals - 1);
        (i, u - i as f64)
    }

    fn node(&self, i: usize, k: usize) -> usize {
        (i * self.degree + k) % self.node_count()
    }

    pub fn eval_into(&self, s: f64, out: &mut [f64]) {
        let (i, xi) = self.locate(s);
        let d = self.degree;
        let mut l = vec![0.0; d + 1];
        let mut dl = vec![0.0; d + 1];
        lagrange_with_derivative(&self.local_nodes(), xi, &mut l, &mut dl);
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..=d {
            let g = self.node(i, k);
            for c in 0..self.dim {
                out[c] += l[k] * self.values[g * self.dim + c];
            }
        }
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(s, &mut out);
        out
    }

    /// `du/ds`.
    pub fn derivative(&self, s: f64) -> Vec<f64> {
        let (i, xi) = self.locate(s);
        let d = self.degree;
        let mut l = vec![0.0; d + 1];
        let mut dl = vec![0.0; d + 1];
        lagrange_with_derivative(&self.local_nodes(), xi, &mut l, &mut dl);
        let mut out = vec![0.0; self.dim];
        for k in 0..=d {
            let g = self.node(i, k);
            for c in 0..self.dim {
                out[c] += dl[k] * self.intervals as f64 * self.values[g * self.dim + c];
            }
        }
        out
    }

    /// `du/ds = T f(u(s), u(s - tau_b/T))` from the vector field.
    pub fn velocity<M: NonlinearModel>(&self, model: &M, s: f64) -> Vec<f64> {
        let x = self.eval(s);
        let xd = self.eval(s - self.base_delay / self.period);
        let mut out = vec![0.0; self.dim];
        model.rhs(&x, &xd, &mut out);
        out.iter_mut().for_each(|v| *v *= self.period);
        out
    }

    /// Largest Euclidean norm of `x` over the mesh nodes.
    pub fn amplitude(&self) -> f64 {
        self.values
            .chunks(self.dim)
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Sup-difference to `other` after the best time shift (sampled, then golden-section).
    pub fn aligned_distance(&self, other: &PeriodicOrbit) -> (f64, f64) {
        let probes: Vec<f64> = (0..256).map(|i| (i as f64 + 0.5) / 256.0).collect();
        let mine: Vec<Vec<f64>> = probes.iter().map(|&s| self.eval(s)).collect();
        let dist = |shift: f64| -> f64 {
            probes
                .iter()
                .zip(&mine)
                .map(|(&s, x)| {
                    let y = other.eval(s + shift);
                    x.iter()
                        .zip(&y)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max)
        };
        let coarse = 512;
        let best = (0..coarse)
            .map(|j| j as f64 / coarse as f64)
            .min_by(|a, b| dist(*a).partial_cmp(&dist(*b)).unwrap())
            .unwrap();
        let (mut a, mut b) = (best - 1.0 / coarse as f64, best + 1.0 / coarse as f64);
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if dist(c) < dist(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let s = 0.5 * (a + b);
        (dist(s), s.rem_euclid(1.0))
    }
}

/// `(tau_b / T) mod 1`.
pub fn rescaled_tau(base_delay: f64, period: f64) -> f64 {
    let r = (base_delay / period).rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[derive(Clone, Debug)]
pub struct OrbitSettings {
    pub intervals: usize,
    pub degree: usize,
    pub max_iterations: usize,
    /// Newton stops once the update is below this (sup norm).
    pub step_tol: f64,
    /// Required collocation residual at convergence.
    pub residual_tol: f64,
}

impl Default for OrbitSettings {
    fn default() -> Self {
        OrbitSettings {
            intervals: 40,
            degree: 4,
            max_iterations: 40,
            step_tol: 1e-11,
            residual_tol: 1e-8,
        }
    }
}

struct Collocation<'a, M: NonlinearModel> {
    model: &'a M,
    dim: usize,
    intervals: usize,
    degree: usize,
    base_delay: f64,
    gauss: (Vec<f64>, Vec<f64>),
    local: Vec<f64>,
    reference: Vec<Vec<f64>>,
}

impl<'a, M: NonlinearModel> Collocation<'a, M> {
    fn unknowns(&self) -> usize {
        self.intervals * self.degree * self.dim + 1
    }

    fn orbit(&self, x: &[f64]) -> PeriodicOrbit {
        let nv = self.unknowns() - 1;
        let period = x[nv];
        PeriodicOrbit {
            dim: self.dim,
            intervals: self.intervals,
            degree: self.degree,
            values: x[..nv].to_vec(),
            period,
            base_delay: self.base_delay,
            rescaled_tau: rescaled_tau(self.base_delay, period),
            residual: f64::NAN,
            phase_value: 0.0,
        }
    }

    /// Residual vector and, when requested, its Jacobian.
    fn evaluate(&self, x: &[f64], jac: Option<&mut Mat<f64>>) -> Vec<f64> {
        let n = self.dim;
        let (m, d) = (self.intervals, self.degree);
        let nu = self.unknowns();
        let ti = nu - 1;
        let u = self.orbit(x);
        let period = x[ti];
        let shift = self.base_delay / period;
        let mut r = vec![0.0; nu];
        let mut jac = jac;
        if let Some(j) = jac.as_deref_mut() {
            j.fill(0.0);
        }
        let mut l = vec![0.0; d + 1];
        let mut dl = vec![0.0; d + 1];
        let mut ld = vec![0.0; d + 1];
        let mut dld = vec![0.0; d + 1];
        let mut f = vec![0.0; n];
        let mut phase = 0.0;
        for i in 0..m {
            for (q, (&xi, &w)) in self.gauss.0.iter().zip(&self.gauss.1).enumerate() {
                let row = (i * d + q) * n;
                let s = (i as f64 + xi) / m as f64;
                lagrange_with_derivative(&self.local, xi, &mut l, &mut dl);
                let mut us = vec![0.0; n];
                let mut du = vec![0.0; n];
                for k in 0..=d {
                    let g = u.node(i, k);
                    for c in 0..n {
                        us[c] += l[k] * x[g * n + c];
                        du[c] += dl[k] * m as f64 * x[g * n + c];
                    }
                }
                let (id, xid) = u.locate(s - shift);
                lagrange_with_derivative(&self.local, xid, &mut ld, &mut dld);
                let mut ud = vec![0.0; n];
                let mut dud = vec![0.0; n];
                for k in 0..=d {
                    let g = u.node(id, k);
                    for c in 0..n {
                        ud[c] += ld[k] * x[g * n + c];
                        dud[c] += dld[k] * m as f64 * x[g * n + c];
                    }
                }
                self.model.rhs(&us, &ud, &mut f);
                for c in 0..n {
                    r[row + c] = du[c] - period * f[c];
                }
                let rf = &self.reference[i * d + q];
                phase += w / m as f64 * rf.iter().zip(&us).map(|(a, b)| a * b).sum::<f64>();
                if let Some(j) = jac.as_deref_mut() {
                    let a = self.model.d1f(&us, &ud);
                    let b = self.model.d2f(&us, &ud);
                    for k in 0..=d {
                        let g = u.node(i, k);
                        let gd = u.node(id, k);
                        for c in 0..n {
                            j[(row + c, g * n + c)] += dl[k] * m as f64;
                            for e in 0..n {
                                j[(row + c, g * n + e)] -= period * a[(c, e)] * l[k];
                                j[(row + c, gd * n + e)] -= period * b[(c, e)] * ld[k];
                            }
                        }
                        for e in 0..n {
                            j[(ti, g * n + e)] += w / m as f64 * l[k] * rf[e];
                        }
                    }
                    for c in 0..n {
                        let mut v = -f[c];
                        for e in 0..n {
                            v -= period * b[(c, e)] * dud[e] * self.base_delay / (period * period);
                        }
                        j[(row + c, ti)] = v;
                    }
                }
            }
        }
        r[ti] = phase;
        r
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// Damped Newton on the collocation system for `u' = T f(u(s), u(s - tau_b/T))` with
/// the phase condition `int <u_ref', u> = 0`, `u_ref` the guess.
pub fn solve_orbit<M: NonlinearModel>(
    model: &M,
    guess: &PeriodicOrbit,
    settings: &OrbitSettings,
) -> Result<PeriodicOrbit> {
    let n = model.dim();
    if guess.dim != n {
        return Err(Error::Config(format!(
            "guess has dimension {} but the model has {n}",
            guess.dim
        )));
    }
    if !(guess.period > 0.0) {
        return Err(Error::Config("guess period must be positive".into()));
    }
    let guess = if guess.intervals != settings.intervals || guess.degree != settings.degree {
        guess.remeshed(settings.intervals, settings.degree)
    } else {
        guess.clone()
    };
    let (m, d) = (settings.intervals, settings.degree);
    let gauss = gauss_legendre(d);
    let reference = (0..m)
        .flat_map(|i| {
            gauss
                .0
                .iter()
                .map(move |&xi| (i as f64 + xi) / m as f64)
                .collect::<Vec<_>>()
        })
        .map(|s| guess.derivative(s))
        .collect();
    let col = Collocation {
        model,
        dim: n,
        intervals: m,
        degree: d,
        base_delay: model.base_delay(),
        gauss,
        local: (0..=d).map(|k| k as f64 / d as f64).collect(),
        reference,
    };
    let nu = col.unknowns();
    let mut x = guess.values.clone();
    x.push(guess.period);
    let mut jac = Mat::<f64>::zeros(nu, nu);
    let mut r = col.evaluate(&x, Some(&mut jac));
    let mut norm = sup(&r);
    for _ in 0..settings.max_iterations {
        let lu = RealLu::new(jac.as_ref());
        let rhs = Mat::from_fn(nu, 1, |i, _| -r[i]);
        let dx = lu.solve(rhs.as_ref());
        let dx: Vec<f64> = (0..nu).map(|i| dx[(i, 0)]).collect();
        if dx.iter().any(|v| !v.is_finite()) {
            break;
        }
        let step = sup(&dx);
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + lambda * b).collect();
            if trial[nu - 1] > 0.0 {
                let rt = col.evaluate(&trial, None);
                let nt = sup(&rt);
                if nt.is_finite()
                    && (nt < norm
                        || step * lambda < settings.step_tol * 10.0
                        || lambda == 1.0 && nt < 1e-6)
                {
                    accepted = Some(trial);
                    break;
                }
            }
            lambda *= 0.5;
        }
        let Some(trial) = accepted else { break };
        x = trial;
        r = col.evaluate(&x, Some(&mut jac));
        norm = sup(&r);
        if step * lambda < settings.step_tol && norm < settings.residual_tol {
            let mut orbit = col.orbit(&x);
            orbit.residual = sup(&r[..nu - 1]);
            orbit.phase_value = r[nu - 1];
            let speed = (0..64)
                .map(|j| sup(&orbit.derivative(j as f64 / 64.0)))
                .fold(0.0, f64::max);
            if speed < 1e-8 {
                return Err(Error::DegenerateOrbit(format!(
                    "profile collapsed to an equilibrium (|u'| = {speed:.3e})"
                )));
            }
            return Ok(orbit);
        }
    }
    let orbit = col.orbit(&x);
    let speed = (0..64)
        .map(|j| sup(&orbit.derivative(j as f64 / 64.0)))
        .fold(0.0, f64::max);
    if speed < 1e-8 {
        return Err(Error::DegenerateOrbit(format!(
            "profile collapsed to an equilibrium (|u'| = {speed:.3e})"
        )));
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iterations,
        residual: norm,
    })
}

/// Circle of radius `max(0.05, sqrt(max(alpha, 0.01)))` with `T = 1`.
pub fn hopf_guess(model: &HopfExample, settings: &OrbitSettings) -> PeriodicOrbit {
    let r = model.alpha.max(0.01).sqrt().max(0.05);
    PeriodicOrbit::from_fn(
        2,
        settings.intervals,
        settings.degree,
        1.0,
        model.tau,
        |s, out| {
            out[0] = r * (2.0 * PI * s).cos();
            out[1] = r * (2.0 * PI * s).sin();
        },
    )
}

/// Guess from direct simulation: integrate from `start` until the upward crossings of
/// the first component through its running mean have a settled spacing.
pub fn simulation_guess<M: NonlinearModel>(
    model: &M,
    start: &PeriodicOrbit,
    horizon: f64,
    settings: &OrbitSettings,
) -> Result<PeriodicOrbit> {
    let n = model.dim();
    let dt = 1.0 / 512.0;
    let delay = model.base_delay();
    let mut hist = HistoryBuffer::from_fn(n, dt, delay.max(4.0 * dt), |t, out| {
        start.eval_into((t / start.period).rem_euclid(1.0), out)
    });
    let mut traj: Vec<Vec<f64>> = Vec::new();
    let steps = (horizon / dt).round() as usize;
    let mut blown = false;
    rk4_dde(
        &mut hist,
        delay,
        steps,
        |_, x, xd, out| model.rhs(x, xd, out),
        |_, h| {
            let x = h.latest();
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
                blown = true;
                return false;
            }
            traj.push(x.to_vec());
            true
        },
    )?;
    if blown {
        return Err(Error::Numerical(
            "simulation for the orbit guess diverged".into(),
        ));
    }
    let tail = &traj[traj.len() / 2..];
    let mean = tail.iter().map(|x| x[0]).sum::<f64>() / tail.len() as f64;
    let offset = traj.len() - tail.len();
    let mut crossings = Vec::new();
    for j in 1..tail.len() {
        let (a, b) = (tail[j - 1][0] - mean, tail[j][0] - mean);
        if a < 0.0 && b >= 0.0 {
            crossings.push((offset + j) as f64 - b / (b - a));
        }
    }
    if crossings.len() < 4 {
        return Err(Error::DegenerateOrbit(
            "simulation did not settle on an oscillation".into(),
        ));
    }
    let c = &crossings[crossings.len() - 3..];
    let (p1, p2) = ((c[1] - c[0]) * dt, (c[2] - c[1]) * dt);
    if (p1 - p2).abs() > 1e-3 * p2 {
        return Err(Error::NoConvergence {
            iterations: steps,
            residual: (p1 - p2).abs(),
        });
    }
    let t0 = c[1];
    let lerp = |u: f64, out: &mut [f64]| {
        let j = (u.floor() as usize).min(traj.len() - 2);
        let w = u - j as f64;
        for i in 0..n {
            out[i] = (1.0 - w) * traj[j][i] + w * traj[j + 1][i];
        }
    };
    Ok(PeriodicOrbit::from_fn(
        n,
        settings.intervals,
        settings.degree,
        p2,
        delay,
        |s, out| lerp(t0 + s * p2 / dt, out),
    ))
}

/// Orbit of the builtin example: collocation from the circle guess, falling back to
/// a simulation-based guess when that fails or lands on a small-amplitude solution.
pub fn solve_hopf(model: &HopfExample, settings: &OrbitSettings) -> Result<PeriodicOrbit> {
    let guess = hopf_guess(model, settings);
    match solve_orbit(model, &guess, settings) {
        Ok(o) if model.coupling == 0.0 || o.amplitude() > 0.2 => Ok(o),
        first => {
            let from_sim = simulation_guess(model, &guess, 200.0, settings)
                .and_then(|g| solve_orbit(model, &g, settings));
            match (from_sim, first) {
                (Ok(o), _) => Ok(o),
                (Err(_), Ok(o)) => Ok(o),
                (Err(e), Err(_)) => Err(e),
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchPoint {
    pub tau_base: f64,
    pub orbit: PeriodicOrbit,
    pub dt_dtau: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    /// Why continuation stopped before the end of the range, if it did.
    pub end_reason: Option<String>,
}

/// Secant-predictor continuation in the base delay from `start` to `tau_end`.
pub fn continue_branch<M: NonlinearModel>(
    model: &M,
    start: &PeriodicOrbit,
    tau_end: f64,
    step: f64,
    settings: &OrbitSettings,
) -> Result<Branch> {
    if !(step > 0.0) {
        return Err(Error::Config("continuation step must be positive".into()));
    }
    let dir = (tau_end - start.base_delay).signum();
    let mut points = vec![BranchPoint {
        tau_base: start.base_delay,
        orbit: start.clone(),
        dt_dtau: f64::NAN,
    }];
    let mut h = step;
    let mut end_reason = None;
    while dir * (tau_end - points.last().unwrap().tau_base) > 1e-12 {
        let last = points.last().unwrap();
        let ds = dir * h.min(dir * (tau_end - last.tau_base));
        let tau = last.tau_base + ds;
        let mut guess = last.orbit.clone();
        if points.len() >= 2 {
            let prev = &points[points.len() - 2];
            let ratio = ds / (last.tau_base - prev.tau_base);
            for (g, (a, b)) in guess
                .values
                .iter_mut()
                .zip(last.orbit.values.iter().zip(&prev.orbit.values))
            {
                *g = a + ratio * (a - b);
            }
            guess.period = last.orbit.period + ratio * (last.orbit.period - prev.orbit.period);
        }
        guess.base_delay = tau;
        match solve_orbit(&model.with_base_delay(tau), &guess, settings) {
            Ok(orbit) => {
                let slope = (orbit.period - last.orbit.period) / ds;
                if points.len() == 1 {
                    points[0].dt_dtau = slope;
                }
                points.push(BranchPoint {
                    tau_base: tau,
                    orbit,
                    dt_dtau: slope,
                });
                h = (h * 1.5).min(step);
            }
            Err(e) => {
                h *= 0.5;
                if h < 1e-5 {
                    end_reason = Some(format!("step underflow at tau = {tau}: {e}"));
                    break;
                }
            }
        }
    }
    // Central secants in the interior.
    for j in 1..points.len().saturating_sub(1) {
        let (a, b) = (&points[j - 1], &points[j + 1]);
        points[j].dt_dtau = (b.orbit.period - a.orbit.period) / (b.tau_base - a.tau_base);
    }
    Ok(Branch { points, end_reason })
}

/// Coefficients of the variational equation in rescaled time.
#[derive(Clone, Debug)]
pub struct Linearization {
    pub coefficients: CoefficientPair,
    /// `(tau_b / T) mod 1`.
    pub tau: f64,
    /// `floor(tau_b / T)`: a total delay `N T + tau_b` maps to `N + shift + tau`.
    pub shift: usize,
    pub period: f64,
}

impl Linearization {
    /// Integer delay shift seen by the spectral problem for `n_periods` periods of delay.
    pub fn spectral_n(&self, n_periods: usize) -> usize {
        n_periods + self.shift
    }
}

/// Samples `T d1f` and `T d2f` along the orbit on `t_i = -1 + i/samples`.
pub fn linearize<M: NonlinearModel>(
    model: &M,
    orbit: &PeriodicOrbit,
    samples: usize,
) -> Result<Linearization> {
    let ratio = orbit.base_delay / orbit.period;
    let tau = rescaled_tau(orbit.base_delay, orbit.period);
    let shift = (ratio - tau).round().max(0.0) as usize;
    let mut a = Vec::with_capacity(samples);
    let mut b = Vec::with_capacity(samples);
    for i in 0..samples {
        let s = i as f64 / samples as f64;
        let x = orbit.eval(s);
        let xd = orbit.eval(s - tau);
        a.push(model.d1f(&x, &xd) * faer::Scale(orbit.period));
        b.push(model.d2f(&x, &xd) * faer::Scale(orbit.period));
    }
    let coefficients =
        CoefficientPair::new(MatrixProvider::samples(a)?, MatrixProvider::samples(b)?)?;
    Ok(Linearization {
        coefficients,
        tau,
        shift,
        period: orbit.period,
    })
}
