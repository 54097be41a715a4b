//! Method-of-steps integration of linear and nonlinear DDEs with one long delay.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CoefficientPair, NonlinearModel};
use crate::orbit::PeriodicOrbit;

/// Uniformly sampled past states. Sample `j` sits at `t0 + j dt`; only the newest
/// `capacity` samples are kept.
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    n: usize,
    dt: f64,
    t0: f64,
    capacity: usize,
    count: usize,
    data: Vec<f64>,
}

impl HistoryBuffer {
    /// Room for `[-span, 0]`: `ceil(span / dt) + 1` samples.
    pub fn new(n: usize, dt: f64, span: f64) -> Self {
        let capacity = (span / dt - 1e-9).ceil() as usize + 1;
        HistoryBuffer {
            n,
            dt,
            t0: 0.0,
            capacity,
            count: 0,
            data: vec![0.0; capacity * n],
        }
    }

    /// Fills `[-span, 0]` from `f(t, out)`.
    pub fn from_fn(n: usize, dt: f64, span: f64, mut f: impl FnMut(f64, &mut [f64])) -> Self {
        let mut h = HistoryBuffer::new(n, dt, span);
        h.t0 = -((h.capacity - 1) as f64) * dt;
        let mut x = vec![0.0; n];
        for j in 0..h.capacity {
            f(h.t0 + j as f64 * dt, &mut x);
            h.push(&x);
        }
        h
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Time covered by the stored samples.
    pub fn span(&self) -> f64 {
        (self.capacity - 1) as f64 * self.dt
    }

    pub fn latest_time(&self) -> f64 {
        self.t0 + (self.count as f64 - 1.0) * self.dt
    }

    pub fn latest(&self) -> &[f64] {
        self.sample(self.count - 1)
    }

    fn sample(&self, j: usize) -> &[f64] {
        let slot = j % self.capacity;
        &self.data[slot * self.n..(slot + 1) * self.n]
    }

    pub fn push(&mut self, x: &[f64]) {
        let slot = self.count % self.capacity;
        self.data[slot * self.n..(slot + 1) * self.n].copy_from_slice(x);
        self.count += 1;
    }

    /// Cubic Lagrange interpolation at `t`, stencil kept inside the stored window.
    pub fn eval(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let newest = self.count - 1;
        let oldest = self.count.saturating_sub(self.capacity);
        let u = (t - self.t0) / self.dt;
        if u < oldest as f64 - 1e-9 || u > newest as f64 + 1e-9 {
            return Err(Error::Domain(format!(
                "delayed read at t = {t} leaves the stored history"
            )));
        }
        let j0 = u.floor() as i64 - 1;
        let start = j0.min(newest as i64 - 3).max(oldest as i64) as usize;
        let width = (newest - start + 1).min(4);
        out.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..width {
            let mut w = 1.0;
            for b in 0..width {
                if a != b {
                    w *= (u - (start + b) as f64) / (a as f64 - b as f64);
                }
            }
            let s = self.sample(start + a);
            for i in 0..self.n {
                out[i] += w * s[i];
            }
        }
        Ok(())
    }
}

/// History `sum_j c_j cos(2 pi j t / L + p_j)` with random amplitudes, `L` the span.
pub fn random_history(n: usize, dt: f64, span: f64, amplitude: f64, seed: u64) -> HistoryBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = 6;
    let coef: Vec<(f64, f64)> = (0..n * modes)
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let len = span.max(1.0);
    HistoryBuffer::from_fn(n, dt, span, |t, out| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..modes)
                .map(|j| {
                    let (c, p) = coef[i * modes + j];
                    amplitude * c * (2.0 * PI * (j as f64 + 1.0) * t / len + p).cos()
                        / (j as f64 + 1.0)
                })
                .sum();
        }
    })
}

/// Classical RK4 for `x' = f(t, x(t), x(t - delay))`; `visit` returns `false` to stop.
pub fn rk4_dde<F, V>(
    hist: &mut HistoryBuffer,
    delay: f64,
    steps: usize,
    mut rhs: F,
    mut visit: V,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &[f64], &mut [f64]),
    V: FnMut(f64, &HistoryBuffer) -> bool,
{
    let (n, dt) = (hist.n, hist.dt);
    if delay < 3.0 * dt {
        return Err(Error::Config(format!(
            "delay {delay} is shorter than three steps of {dt}"
        )));
    }
    if delay > hist.span() + 1e-9 {
        return Err(Error::Config(format!(
            "history span {} is shorter than the delay {delay}",
            hist.span()
        )));
    }
    let mut k = vec![vec![0.0; n]; 4];
    let mut xd = vec![0.0; n];
    let mut xs = vec![0.0; n];
    let mut next = vec![0.0; n];
    for _ in 0..steps {
        let t = hist.latest_time();
        let x = hist.latest().to_vec();
        let stage = [
            (0.0, 0usize, 0.0),
            (0.5, 0, 0.5),
            (0.5, 1, 0.5),
            (1.0, 2, 1.0),
        ];
        for (s, &(c, prev, a)) in stage.iter().enumerate() {
            hist.eval(t + c * dt - delay, &mut xd)?;
            for i in 0..n {
                xs[i] = x[i] + if s == 0 { 0.0 } else { a * dt * k[prev][i] };
            }
            let (head, tail) = k.split_at_mut(s);
            let _ = head;
            rhs(t + c * dt, &xs, &xd, &mut tail[0]);
        }
        for i in 0..n {
            next[i] = x[i] + dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        hist.push(&next);
        if !visit(t + dt, hist) {
            break;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthEstimate {
    /// Per unit time.
    pub dominant_rate: f64,
    /// Angle of the dominant time-1 multiplier.
    pub dominant_frequency: f64,
    pub fit_residual: f64,
    pub windows: usize,
    pub reliable: bool,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub log_norm: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearRun {
    pub trajectory: Trajectory,
    pub growth: GrowthEstimate,
    pub overflow: bool,
}

#[derive(Clone, Debug)]
pub struct StepSettings {
    /// Steps per unit time; default `ceil(64 max(1, ||A||))`.
    pub steps_per_unit: Option<usize>,
    /// Track `x(t) - x(t - 1)`, which removes 1-periodic (trivial) modes.
    pub deflate: bool,
    /// Trajectory samples kept per unit time.
    pub samples_per_unit: usize,
}

impl Default for StepSettings {
    fn default() -> Self {
        StepSettings {
            steps_per_unit: None,
            deflate: false,
            samples_per_unit: 1,
        }
    }
}

pub fn default_steps_per_unit(cp: &CoefficientPair) -> usize {
    (64.0 * cp.a_norm().max(1.0)).ceil() as usize
}

/// `x' = A(t) x + B(t) x(t - N - tau)` from `x0` over `[0, horizon]`.
pub fn integrate_linear(
    cp: &CoefficientPair,
    tau: f64,
    n_delay: usize,
    x0: &HistoryBuffer,
    horizon: f64,
    settings: &StepSettings,
) -> Result<LinearRun> {
    let n = cp.dim();
    let q = settings
        .steps_per_unit
        .unwrap_or_else(|| default_steps_per_unit(cp));
    let dt = 1.0 / q as f64;
    if (x0.dt() - dt).abs() > 1e-15 || x0.dim() != n {
        return Err(Error::Config(format!(
            "history must have dimension {n} and step 1/{q}"
        )));
    }
    let theta = n_delay as f64 + tau;
    // Coefficients on the half-step grid of one period.
    let table: Vec<(Vec<f64>, Vec<f64>)> = (0..2 * q)
        .map(|j| {
            let (a, b) = cp.eval(j as f64 * 0.5 * dt);
            let flat =
                |m: &faer::Mat<f64>| (0..n * n).map(|k| m[(k / n, k % n)]).collect::<Vec<f64>>();
            (flat(&a), flat(&b))
        })
        .collect();
    let mut hist = x0.clone();
    let t_start = hist.latest_time();
    let steps = (horizon * q as f64).round() as usize;
    let stride = (q / settings.samples_per_unit.max(1)).max(1);
    let mut traj = Trajectory::default();
    let mut monitor = GrowthMonitor::new(theta, n);
    let mut overflow = false;
    let mut step = 0usize;
    let mut signal = vec![0.0; n];
    let mut lag = vec![0.0; n];
    rk4_dde(
        &mut hist,
        theta,
        steps,
        |t, x, xd, out| {
            let j =
                (((t - t_start) * 2.0 * q as f64).round() as i64).rem_euclid(2 * q as i64) as usize;
            let (a, b) = &table[j];
            for i in 0..n {
                let mut v = 0.0;
                for k in 0..n {
                    v += a[i * n + k] * x[k] + b[i * n + k] * xd[k];
                }
                out[i] = v;
            }
        },
        |t, h| {
            step += 1;
            let x = h.latest();
            signal.copy_from_slice(x);
            if settings.deflate && h.eval(t - 1.0, &mut lag).is_ok() {
                for i in 0..n {
                    signal[i] -= lag[i];
                }
            }
            let norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm > 1e200 {
                overflow = true;
                return false;
            }
            let tt = t - t_start;
            monitor.record(tt, norm, step % q == 0, &signal);
            if step % stride == 0 {
                traj.t.push(tt);
                traj.x.push(x.to_vec());
                traj.log_norm.push(norm.ln());
            }
            true
        },
    )?;
    Ok(LinearRun {
        trajectory: traj,
        growth: monitor.estimate(),
        overflow,
    })
}

/// Window maxima of `ln |s(t)|` over consecutive delay-length windows, plus a fixed
/// projection sampled at integer times.
struct GrowthMonitor {
    window: f64,
    maxima: Vec<f64>,
    projection: Vec<f64>,
    weights: Vec<f64>,
}

impl GrowthMonitor {
    fn new(window: f64, n: usize) -> Self {
        let weights = (0..n).map(|i| 1.0 / (1.0 + i as f64)).collect();
        GrowthMonitor {
            window,
            maxima: Vec::new(),
            projection: Vec::new(),
            weights,
        }
    }

    fn record(&mut self, t: f64, norm: f64, integer_time: bool, s: &[f64]) {
        let w = ((t - 1e-12) / self.window).floor().max(0.0) as usize;
        let l = norm.max(f64::MIN_POSITIVE).ln();
        if w >= self.maxima.len() {
            self.maxima.resize(w + 1, f64::NEG_INFINITY);
        }
        self.maxima[w] = self.maxima[w].max(l);
        if integer_time {
            self.projection
                .push(s.iter().zip(&self.weights).map(|(a, b)| a * b).sum());
        }
    }

    fn estimate(&self) -> GrowthEstimate {
        // The last window may be partial; the first carries the transient.
        let complete: Vec<(f64, f64)> = self
            .maxima
            .iter()
            .enumerate()
            .take(self.maxima.len().saturating_sub(1))
            .skip(1)
            .map(|(j, &l)| ((j as f64 + 0.5) * self.window, l))
            .collect();
        let trailing = &complete[complete.len() / 2..];
        let (rate, residual) = if trailing.len() >= 2 {
            linear_fit(trailing)
        } else {
            (f64::NAN, f64::INFINITY)
        };
        let frequency = prony_angle(&self.projection);
        GrowthEstimate {
            dominant_rate: rate,
            dominant_frequency: frequency,
            fit_residual: residual,
            windows: trailing.len(),
            reliable: trailing.len() >= 3 && residual <= 0.1,
        }
    }
}

/// Least-squares slope and RMS residual.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / m;
    let my = points.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rms = (points
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    (slope, rms)
}

/// Angle of the dominant root of the two-term linear recurrence fitted to the tail.
fn prony_angle(p: &[f64]) -> f64 {
    let tail = &p[p.len().saturating_sub(64)..];
    if tail.len() < 8 {
        return f64::NAN;
    }
    // A single real exponential leaves the two-term system singular.
    let (num, den) = tail
        .windows(2)
        .fold((0.0, 0.0), |(a, b), w| (a + w[0] * w[1], b + w[0] * w[0]));
    let z = num / den;
    let misfit = tail
        .windows(2)
        .map(|w| (w[1] - z * w[0]).powi(2))
        .sum::<f64>();
    if misfit <= 1e-16 * tail.iter().skip(1).map(|v| v * v).sum::<f64>() {
        return if z >= 0.0 { 0.0 } else { PI };
    }
    let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for w in tail.windows(3) {
        let scale = 1.0 / w[1].abs().max(w[0].abs()).max(f64::MIN_POSITIVE);
        let (a, b, y) = (w[1] * scale, w[0] * scale, w[2] * scale);
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        r1 += a * y;
        r2 += b * y;
    }
    let det = s11 * s22 - s12 * s12;
    if det.abs() < 1e-300 {
        return 0.0;
    }
    let c1 = (r1 * s22 - r2 * s12) / det;
    let c2 = (s11 * r2 - s12 * r1) / det;
    let disc = c1 * c1 + 4.0 * c2;
    if disc >= 0.0 {
        let z1 = 0.5 * (c1 + disc.sqrt());
        let z2 = 0.5 * (c1 - disc.sqrt());
        if z1.abs() >= z2.abs() {
            if z1 >= 0.0 {
                0.0
            } else {
                PI
            }
        } else if z2 >= 0.0 {
            0.0
        } else {
            PI
        }
    } else {
        (-disc).sqrt().atan2(c1).abs()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NonlinearRun {
    pub t: Vec<f64>,
    pub distance: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub overflow: bool,
}

impl NonlinearRun {
    /// Largest distance over samples with `t` in `[from, to)`.
    pub fn max_distance(&self, from: f64, to: f64) -> f64 {
        self.t
            .iter()
            .zip(&self.distance)
            .filter(|(t, _)| **t >= from && **t < to)
            .map(|(_, d)| *d)
            .fold(0.0, f64::max)
    }
}

/// Distance from `x` to the closed curve of `orbit`.
pub struct OrbitDistance {
    samples: Vec<Vec<f64>>,
    orbit: PeriodicOrbit,
}

impl OrbitDistance {
    pub fn new(orbit: &PeriodicOrbit) -> Self {
        let m = 2048;
        OrbitDistance {
            samples: (0..m).map(|i| orbit.eval(i as f64 / m as f64)).collect(),
            orbit: orbit.clone(),
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        let d2 = |p: &[f64]| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let m = self.samples.len();
        let (best, _) = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (i, d2(s)))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        // Golden-section refinement on the neighbouring cells.
        let f = |s: f64| d2(&self.orbit.eval(s.rem_euclid(1.0)));
        let (mut a, mut b) = (
            (best as f64 - 1.0) / m as f64,
            (best as f64 + 1.0) / m as f64,
        );
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..60 {
            if fc < fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = f(d);
            }
        }
        fc.min(fd).sqrt()
    }
}

/// Full nonlinear DDE with delay `N T + base_delay`, started on the orbit shifted by
/// `perturbation` along a seeded random direction; distance to the orbit is sampled
/// `samples_per_period` times per period.
pub fn integrate_nonlinear<M: NonlinearModel>(
    model: &M,
    orbit: &PeriodicOrbit,
    n_periods: usize,
    perturbation: f64,
    seed: u64,
    horizon_periods: f64,
    steps_per_period: usize,
    samples_per_period: usize,
) -> Result<NonlinearRun> {
    let n = model.dim();
    let period = orbit.period;
    let delay = n_periods as f64 * period + orbit.base_delay;
    let dt = period / steps_per_period as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|v| *v *= perturbation / len);
    let mut hist = HistoryBuffer::from_fn(n, dt, delay, |t, out| {
        let p = orbit.eval((t / period).rem_euclid(1.0));
        for i in 0..n {
            out[i] = p[i] + dir[i];
        }
    });
    let dist = OrbitDistance::new(orbit);
    let steps = (horizon_periods * steps_per_period as f64).round() as usize;
    let stride = (steps_per_period / samples_per_period.max(1)).max(1);
    let mut run = NonlinearRun {
        t: Vec::new(),
        distance: Vec::new(),
        x: Vec::new(),
        overflow: false,
    };
    let mut step = 0usize;
    run.t.push(0.0);
    run.distance.push(dist.distance(hist.latest()));
    run.x.push(hist.latest().to_vec());
    rk4_dde(
        &mut hist,
        delay,
        steps,
        |_, x, xd, out| model.rhs(x, xd, out),
        |t, h| {
            step += 1;
            let x = h.latest();
            if x.iter().any(|v| !v.is_finite() || v.abs() > 1e100) {
                run.overflow = true;
                return false;
            }
            if step % stride == 0 {
                run.t.push(t);
                run.distance.push(dist.distance(x));
                run.x.push(x.to_vec());
            }
            true
        },
    )?;
    Ok(run)
}
