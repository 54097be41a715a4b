//! Floquet exponents of the time-1 map for finite `N`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::charfun::CharContext;
use crate::error::{Error, Result};
use crate::linalg::{wrap_angle_half_open, C64};
use crate::quadrature::lagrange_with_derivative;
use crate::spectra::{InstantaneousSpectrum, SpectralPoint, SpectrumCurve};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BandPrediction {
    pub branch_id: usize,
    pub k: i64,
    pub omega_k: f64,
    pub gamma_k: f64,
    pub n: usize,
    /// Predicted `Re mu = gamma_k / (N + tau)`.
    pub re: f64,
    /// Predicted `Im mu = omega_k`.
    pub im: f64,
}

impl BandPrediction {
    pub fn mu(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExponentSource {
    Trivial,
    StrongSeed,
    Instantaneous,
    BandSeed,
    Scan,
}

impl ExponentSource {
    pub fn label(&self) -> &'static str {
        match self {
            ExponentSource::Trivial => "trivial",
            ExponentSource::StrongSeed => "strong-seed",
            ExponentSource::Instantaneous => "instantaneous",
            ExponentSource::BandSeed => "band-seed",
            ExponentSource::Scan => "scan",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FloquetExponent {
    pub re: f64,
    /// In `[-pi, pi)`.
    pub im: f64,
    pub multiplicity: usize,
    pub source: ExponentSource,
    /// Normalized `|h_N|` at the exponent.
    pub residual: f64,
}

impl FloquetExponent {
    pub fn mu(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Region {
    Rectangle {
        re_lo: f64,
        re_hi: f64,
        im_lo: f64,
        im_hi: f64,
    },
    Disk {
        re: f64,
        im: f64,
        radius: f64,
    },
}

impl Region {
    /// Whether `mu` or one of its `2 pi i` translates lies inside.
    pub fn contains_periodic(&self, mu: C64) -> bool {
        (-1..=1).any(|j| self.contains(mu + C64::new(0.0, 2.0 * PI * j as f64)))
    }

    pub fn contains(&self, mu: C64) -> bool {
        match *self {
            Region::Rectangle {
                re_lo,
                re_hi,
                im_lo,
                im_hi,
            } => mu.re >= re_lo && mu.re < re_hi && mu.im >= im_lo && mu.im < im_hi,
            Region::Disk { re, im, radius } => (mu - C64::new(re, im)).norm() < radius,
        }
    }

    fn vertices(&self) -> Vec<C64> {
        match *self {
            Region::Rectangle {
                re_lo,
                re_hi,
                im_lo,
                im_hi,
            } => vec![
                C64::new(re_lo, im_lo),
                C64::new(re_hi, im_lo),
                C64::new(re_hi, im_hi),
                C64::new(re_lo, im_hi),
            ],
            Region::Disk { re, im, radius } => (0..48)
                .map(|j| C64::new(re, im) + C64::from_polar(radius, 2.0 * PI * j as f64 / 48.0))
                .collect(),
        }
    }

    fn nudged(&self, eps: f64, lower: f64) -> Region {
        match *self {
            Region::Rectangle {
                re_lo,
                re_hi,
                im_lo,
                im_hi,
            } => Region::Rectangle {
                re_lo: (re_lo - eps).max(lower),
                re_hi: re_hi + eps,
                im_lo: im_lo + 0.7 * eps,
                im_hi: im_hi + 0.7 * eps,
            },
            Region::Disk { re, im, radius } => Region::Disk {
                re,
                im,
                radius: radius + eps,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Audit {
    pub region: Region,
    pub contour_count: usize,
    pub found_count: usize,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.contour_count == self.found_count
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StrongExponent {
    pub target_re: f64,
    pub target_im: f64,
    pub multiplicity: usize,
    /// Refined exponent, when Newton converged.
    pub re: Option<f64>,
    pub im: Option<f64>,
    pub ball_count: usize,
    /// Ball count equals the multiplicity of the target.
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FloquetSet {
    pub n: usize,
    pub theta: f64,
    pub exponents: Vec<FloquetExponent>,
    pub audits: Vec<Audit>,
    pub predictions: Vec<BandPrediction>,
    pub strong: Vec<StrongExponent>,
    pub unconverged_seeds: usize,
}

impl FloquetSet {
    pub fn audits_pass(&self) -> bool {
        self.audits.iter().all(|a| a.passed())
    }

    pub fn total_multiplicity(&self) -> usize {
        self.exponents.iter().map(|e| e.multiplicity).sum()
    }

    /// Exponent with the largest real part.
    pub fn rightmost(&self) -> Option<&FloquetExponent> {
        self.exponents
            .iter()
            .max_by(|a, b| a.re.partial_cmp(&b.re).unwrap())
    }

    /// For each prediction, `|Im|` distance to the nearest found exponent.
    pub fn band_errors(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .filter_map(|p| {
                self.exponents
                    .iter()
                    .min_by(|a, b| {
                        periodic_distance(a.mu(), p.mu())
                            .partial_cmp(&periodic_distance(b.mu(), p.mu()))
                            .unwrap()
                    })
                    .map(|e| wrap_angle_half_open(e.im - p.im).abs())
            })
            .collect()
    }

    pub fn max_band_error(&self) -> f64 {
        self.band_errors().into_iter().fold(0.0, f64::max)
    }
}

/// Distance between `a` and the nearest `2 pi i` translate of `b`.
pub fn periodic_distance(a: C64, b: C64) -> f64 {
    let d = a - b;
    C64::new(d.re, wrap_angle_half_open(d.im)).norm()
}

fn reduce(mu: C64) -> C64 {
    C64::new(mu.re, wrap_angle_half_open(mu.im))
}

/// A branch resampled for interpolation, `phi` unwrapped along `omega`.
struct BranchInterp {
    omega: Vec<f64>,
    gamma: Vec<f64>,
    phi: Vec<f64>,
}

impl BranchInterp {
    fn new(curve: &SpectrumCurve) -> Self {
        let mut omega = Vec::with_capacity(curve.samples.len());
        let mut gamma = Vec::with_capacity(curve.samples.len());
        let mut phi: Vec<f64> = Vec::with_capacity(curve.samples.len());
        for s in &curve.samples {
            let p = match phi.last() {
                Some(&prev) => prev + crate::linalg::wrap_angle(s.phi - prev),
                None => s.phi,
            };
            omega.push(s.omega);
            gamma.push(s.gamma);
            phi.push(p);
        }
        BranchInterp { omega, gamma, phi }
    }

    fn range(&self) -> (f64, f64) {
        (self.omega[0], *self.omega.last().unwrap())
    }

    /// Four-point Lagrange interpolation of `(gamma, phi)` at `w`.
    fn eval(&self, w: f64) -> Option<(f64, f64)> {
        let (lo, hi) = self.range();
        if !(w >= lo && w <= hi) {
            return None;
        }
        let len = self.omega.len();
        let width = len.min(4);
        let i = self.omega.partition_point(|&x| x < w);
        let start = i.saturating_sub(width / 2).min(len - width);
        let xs = &self.omega[start..start + width];
        let mut val = vec![0.0; width];
        let mut der = vec![0.0; width];
        lagrange_with_derivative(xs, w, &mut val, &mut der);
        let g = (0..width).map(|j| val[j] * self.gamma[start + j]).sum();
        let p = (0..width).map(|j| val[j] * self.phi[start + j]).sum();
        Some((g, p))
    }
}

/// Solves `omega = (phi(omega) + 2 k pi) / (N + tau)` on every branch by direct iteration.
pub fn predict_bands(curves: &[SpectrumCurve], tau: f64, n: usize) -> Vec<BandPrediction> {
    let theta = n as f64 + tau;
    let mut out = Vec::new();
    for curve in curves.iter().filter(|c| c.samples.len() >= 2) {
        let interp = BranchInterp::new(curve);
        let (lo, hi) = interp.range();
        let pmin = interp.phi.iter().cloned().fold(f64::INFINITY, f64::min);
        let pmax = interp.phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let kmin = ((theta * lo - pmax) / (2.0 * PI)).floor() as i64 - 1;
        let kmax = ((theta * hi - pmin) / (2.0 * PI)).ceil() as i64 + 1;
        let mut found: Vec<BandPrediction> = Vec::new();
        for k in kmin..=kmax {
            let target = 2.0 * PI * k as f64;
            let mut w = (target / theta).clamp(lo, hi);
            let mut settled = None;
            for _ in 0..100 {
                let Some((_, p)) = interp.eval(w) else { break };
                let next = (p + target) / theta;
                if !(lo..=hi).contains(&next) {
                    break;
                }
                let done = (next - w).abs() < 1e-14 * next.abs().max(1.0);
                w = next;
                if done {
                    settled = Some(w);
                    break;
                }
            }
            let Some(w) = settled else {
                if interp.eval(w).is_some() && (lo + 1e-9..hi - 1e-9).contains(&w) {
                    log::warn!("band {k} on branch {} did not settle", curve.branch_id);
                }
                continue;
            };
            let (g, _) = interp.eval(w).unwrap();
            if found.iter().any(|f| (f.omega_k - w).abs() < 1e-12) {
                continue;
            }
            found.push(BandPrediction {
                branch_id: curve.branch_id,
                k,
                omega_k: w,
                gamma_k: g,
                n,
                re: g / theta,
                im: w,
            });
        }
        out.extend(found);
    }
    out
}

#[derive(Clone, Debug)]
pub struct FloquetSettings {
    /// Normalized `|h_N|` accepted at an exponent.
    pub residual_tol: f64,
    pub max_iterations: usize,
    /// Coarse `|h_N|` scan resolution per axis; 0 disables the scan.
    pub scan_points: usize,
    pub audit: bool,
    /// Left edge of the audited strip as a fraction of the strip bound `-R/(N + tau)`.
    pub audit_left_fraction: f64,
    pub strong_radius: f64,
    /// Adds the trivial exponent `mu = 0` as a seed.
    pub trivial: bool,
    pub tol_axis: f64,
}

impl Default for FloquetSettings {
    fn default() -> Self {
        FloquetSettings {
            residual_tol: 1e-8,
            max_iterations: 60,
            scan_points: 32,
            audit: true,
            audit_left_fraction: 0.5,
            strong_radius: 0.1,
            trivial: false,
            tol_axis: 1e-6,
        }
    }
}

/// Damped Newton on `h_N` from `seed`; returns the reduced root and its normalized residual.
pub fn newton_exponent(
    ctx: &CharContext,
    n: usize,
    seed: C64,
    cap: f64,
    settings: &FloquetSettings,
) -> Option<(C64, f64)> {
    let lower = ctx.strip_lower_n(n);
    let mut mu = C64::new(seed.re.max(lower), seed.im);
    let mut last = f64::INFINITY;
    let mut strikes = 0;
    for _ in 0..settings.max_iterations {
        let (v, dl) = ctx.log_derivative_n(n, mu).ok()?;
        if v.log_abs_h == f64::NEG_INFINITY {
            last = 0.0;
            break;
        }
        if !dl.is_finite() || dl.norm() == 0.0 {
            return None;
        }
        let mut step = 1.0 / dl;
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        mu -= step;
        if mu.re < lower {
            strikes += 1;
            if strikes > 3 {
                return None;
            }
            mu.re = lower;
        }
        last = step.norm();
        if last < 1e-14 * mu.norm().max(1.0) {
            break;
        }
    }
    if last > 1e-9 * mu.norm().max(1.0) {
        return None;
    }
    let mu = reduce(mu);
    let res = ctx.char_value_n(n, mu).ok()?.normalized_residual();
    (res < settings.residual_tol).then_some((mu, res))
}

/// Winding number of `h_N` along a closed polygon, with adaptive bisection keeping
/// argument increments below `pi / 4`.
fn winding(
    ctx: &CharContext,
    n: usize,
    vertices: &[C64],
    base: f64,
) -> std::result::Result<i64, WindingFailure> {
    let eval = |mu: C64| -> std::result::Result<f64, WindingFailure> {
        let v = ctx.char_value_n(n, mu).map_err(WindingFailure::Error)?;
        if v.log_abs_h == f64::NEG_INFINITY || v.normalized_residual() < 1e-12 {
            return Err(WindingFailure::NearBoundary);
        }
        Ok(v.arg_h)
    };
    let mut points: Vec<C64> = Vec::new();
    for (i, &a) in vertices.iter().enumerate() {
        let b = vertices[(i + 1) % vertices.len()];
        let pieces = ((b - a).norm() / base).ceil().max(1.0) as usize;
        for j in 0..pieces {
            points.push(a + (b - a) * (j as f64 / pieces as f64));
        }
    }
    let args: Vec<f64> = points
        .par_iter()
        .map(|&p| eval(p))
        .collect::<std::result::Result<_, _>>()?;
    let mut evaluations = points.len();
    let mut total = 0.0;
    for i in 0..points.len() {
        let j = (i + 1) % points.len();
        let mut stack = vec![(points[i], args[i], points[j], args[j])];
        while let Some((a, fa, b, fb)) = stack.pop() {
            let d = crate::linalg::wrap_angle(fb - fa);
            if d.abs() < PI / 4.0 {
                total += d;
                continue;
            }
            if (b - a).norm() < 1e-9 {
                return Err(WindingFailure::NearBoundary);
            }
            evaluations += 1;
            if evaluations > 100_000 {
                return Err(WindingFailure::Error(Error::AuditInconclusive(format!(
                    "boundary refinement exceeded 1e5 samples for N = {n}"
                ))));
            }
            let m = 0.5 * (a + b);
            let fm = eval(m)?;
            stack.push((m, fm, b, fb));
            stack.push((a, fa, m, fm));
        }
    }
    let w = total / (2.0 * PI);
    if (w - w.round()).abs() > 0.1 {
        return Err(WindingFailure::Error(Error::AuditInconclusive(format!(
            "non-integer winding {w}"
        ))));
    }
    Ok(w.round() as i64)
}

enum WindingFailure {
    NearBoundary,
    Error(Error),
}

/// Number of roots of `h_N` inside `region` by the argument principle. The boundary is
/// nudged outward up to three times when it passes too close to a root. Returns the
/// region actually used.
pub fn audit_region(ctx: &CharContext, n: usize, region: Region) -> Result<(Region, usize)> {
    let theta = n as f64 + ctx.tau();
    let base = (PI / (8.0 * theta)).min(0.05);
    let lower = ctx.strip_lower_n(n);
    for attempt in 0..=3 {
        let r = if attempt == 0 {
            region
        } else {
            region.nudged(1e-4 * attempt as f64 * 2.0 * PI / theta, lower)
        };
        match winding(ctx, n, &r.vertices(), base) {
            Ok(w) if w >= 0 => return Ok((r, w as usize)),
            Ok(w) => {
                return Err(Error::Numerical(format!(
                    "negative root count {w} in {r:?}"
                )))
            }
            Err(WindingFailure::NearBoundary) => continue,
            Err(WindingFailure::Error(e)) => return Err(e),
        }
    }
    Err(Error::AuditInconclusive(format!(
        "a root sits on the boundary of {region:?} after three nudges"
    )))
}

pub fn audit_rectangle(
    ctx: &CharContext,
    n: usize,
    re_lo: f64,
    re_hi: f64,
    im_lo: f64,
    im_hi: f64,
) -> Result<usize> {
    audit_region(
        ctx,
        n,
        Region::Rectangle {
            re_lo,
            re_hi,
            im_lo,
            im_hi,
        },
    )
    .map(|r| r.1)
}

/// Root multiplicity: 1 when `|h_N'(mu)| rho` matches `|h_N(mu + rho)|`, otherwise a
/// contour count on the circle of radius `rho`.
pub fn multiplicity(ctx: &CharContext, n: usize, mu: C64, rho: f64) -> Result<usize> {
    let (v0, dl) = ctx.log_derivative_n(n, mu)?;
    let v1 = ctx.char_value_n(n, mu + rho)?;
    if v0.log_abs_h.is_finite() && v1.log_abs_h.is_finite() {
        let ln_q = v0.log_abs_h + dl.norm().ln() + rho.ln() - v1.log_abs_h;
        if ln_q > 0.5f64.ln() {
            return Ok(1);
        }
    }
    let (_, count) = audit_region(
        ctx,
        n,
        Region::Disk {
            re: mu.re,
            im: mu.im,
            radius: rho,
        },
    )?;
    Ok(count.max(1))
}

/// Newton from each strongly unstable point and a root count in the ball around it.
pub fn strong_exponents(
    ctx: &CharContext,
    n: usize,
    a_plus: &[SpectralPoint],
    settings: &FloquetSettings,
) -> Result<Vec<StrongExponent>> {
    let lower = ctx.strip_lower_n(n);
    a_plus
        .iter()
        .map(|p| {
            let refined = newton_exponent(ctx, n, p.mu(), 0.05, settings);
            let radius = settings.strong_radius.min(p.re - lower - 1e-9);
            let (_, count) = audit_region(
                ctx,
                n,
                Region::Disk {
                    re: p.re,
                    im: p.im,
                    radius,
                },
            )?;
            Ok(StrongExponent {
                target_re: p.re,
                target_im: p.im,
                multiplicity: p.multiplicity,
                re: refined.map(|r| r.0.re),
                im: refined.map(|r| r.0.im),
                ball_count: count,
                converged: count == p.multiplicity,
            })
        })
        .collect()
}

/// All inputs the exponent search draws seeds from.
pub struct FloquetInputs<'a> {
    pub curves: &'a [SpectrumCurve],
    pub instantaneous: &'a InstantaneousSpectrum,
}

/// Exponents of `M_N` right of the audited strip edge: seeds from band predictions,
/// the instantaneous spectrum, the trivial root and a coarse scan, refined by Newton,
/// deduplicated, closed under conjugation and audited.
pub fn find_exponents(
    ctx: &CharContext,
    n: usize,
    inputs: &FloquetInputs<'_>,
    settings: &FloquetSettings,
) -> Result<FloquetSet> {
    if n == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    let theta = n as f64 + ctx.tau();
    let spacing = 2.0 * PI / theta;
    let radius = 1e-3 * spacing;
    let cap = 0.25 * spacing;
    let lower = ctx.strip_lower_n(n);

    let predictions = predict_bands(inputs.curves, ctx.tau(), n);
    let mut seeds: Vec<(C64, ExponentSource)> = Vec::new();
    if settings.trivial {
        seeds.push((C64::new(0.0, 0.0), ExponentSource::Trivial));
    }
    for p in &inputs.instantaneous.points {
        if p.re >= lower {
            let src = if p.re > settings.tol_axis {
                ExponentSource::StrongSeed
            } else {
                ExponentSource::Instantaneous
            };
            seeds.push((p.mu(), src));
        }
    }
    seeds.extend(
        predictions
            .iter()
            .filter(|p| p.re >= lower)
            .map(|p| (p.mu(), ExponentSource::BandSeed)),
    );

    let max_gamma = inputs
        .curves
        .iter()
        .map(|c| c.max_gamma())
        .fold(f64::NEG_INFINITY, f64::max);
    let re_hi = 0.05f64.max(2.0 * max_gamma) / theta;
    let re_lo = settings.audit_left_fraction * lower;

    let mut found: Vec<FloquetExponent> = Vec::new();
    let mut unconverged = 0;
    let mut absorb = |found: &mut Vec<FloquetExponent>,
                      results: Vec<(Option<(C64, f64)>, ExponentSource)>| {
        for (r, src) in results {
            match r {
                Some((mu, res)) => {
                    if let Some(e) = found
                        .iter_mut()
                        .find(|e| periodic_distance(e.mu(), mu) < radius)
                    {
                        log::debug!("seed {} collapsed onto {}", mu, e.mu());
                        if src < e.source {
                            e.source = src;
                        }
                    } else {
                        found.push(FloquetExponent {
                            re: mu.re,
                            im: mu.im,
                            multiplicity: 1,
                            source: src,
                            residual: res,
                        });
                    }
                }
                None => unconverged += 1,
            }
        }
    };
    let run = |seeds: &[(C64, ExponentSource)]| -> Vec<(Option<(C64, f64)>, ExponentSource)> {
        seeds
            .par_iter()
            .map(|&(s, src)| (newton_exponent(ctx, n, s, cap, settings), src))
            .collect()
    };
    absorb(&mut found, run(&seeds));

    if settings.scan_points > 0 {
        let scan = scan_minima(
            ctx,
            n,
            re_lo,
            re_hi.max(found.iter().map(|e| e.re).fold(re_hi, f64::max)),
            settings.scan_points,
        )?;
        let fresh: Vec<(C64, ExponentSource)> = scan
            .into_iter()
            .filter(|s| !found.iter().any(|e| periodic_distance(e.mu(), *s) < radius))
            .map(|s| (s, ExponentSource::Scan))
            .collect();
        absorb(&mut found, run(&fresh));
    }

    // Conjugate closure.
    let missing: Vec<(C64, ExponentSource)> = found
        .iter()
        .map(|e| (reduce(e.mu().conj()), e.source))
        .filter(|(c, _)| !found.iter().any(|e| periodic_distance(e.mu(), *c) < radius))
        .collect();
    absorb(&mut found, run(&missing));

    let mults: Vec<usize> = found
        .par_iter()
        .map(|e| multiplicity(ctx, n, e.mu(), radius))
        .collect::<Result<_>>()?;
    for (e, m) in found.iter_mut().zip(mults) {
        e.multiplicity = m;
    }
    found.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });

    let mut audits = Vec::new();
    let a_plus: Vec<SpectralPoint> = inputs
        .instantaneous
        .points
        .iter()
        .filter(|p| p.re > settings.tol_axis)
        .copied()
        .collect();
    let strong = if a_plus.is_empty() {
        Vec::new()
    } else {
        strong_exponents(ctx, n, &a_plus, settings)?
    };
    if settings.audit {
        let strip = Region::Rectangle {
            re_lo,
            re_hi,
            im_lo: -PI,
            im_hi: PI,
        };
        let (used, count) = audit_region(ctx, n, strip)?;
        let found_count = found
            .iter()
            .filter(|e| used.contains_periodic(e.mu()))
            .map(|e| e.multiplicity)
            .sum();
        audits.push(Audit {
            region: used,
            contour_count: count,
            found_count,
        });
        for s in &strong {
            let r = settings.strong_radius.min(s.target_re - lower - 1e-9);
            let ball = Region::Disk {
                re: s.target_re,
                im: s.target_im,
                radius: r,
            };
            let found_count = found
                .iter()
                .filter(|e| ball.contains_periodic(e.mu()))
                .map(|e| e.multiplicity)
                .sum();
            audits.push(Audit {
                region: ball,
                contour_count: s.ball_count,
                found_count,
            });
        }
    }
    Ok(FloquetSet {
        n,
        theta,
        exponents: found,
        audits,
        predictions,
        strong,
        unconverged_seeds: unconverged,
    })
}

/// Local minima of `ln |h_N|` on a `points x points` grid over the strip, periodic in `Im`.
fn scan_minima(
    ctx: &CharContext,
    n: usize,
    re_lo: f64,
    re_hi: f64,
    points: usize,
) -> Result<Vec<C64>> {
    let nre = points.max(2);
    let nim = points.max(4);
    let at = |i: usize, j: usize| {
        C64::new(
            re_lo + (re_hi - re_lo) * i as f64 / (nre - 1) as f64,
            -PI + 2.0 * PI * (j as f64 + 0.5) / nim as f64,
        )
    };
    let grid: Vec<(usize, usize)> = (0..nre)
        .flat_map(|i| (0..nim).map(move |j| (i, j)))
        .collect();
    let vals: Vec<f64> = grid
        .par_iter()
        .map(|&(i, j)| ctx.char_value_n(n, at(i, j)).map(|v| v.log_abs_h))
        .collect::<Result<_>>()?;
    let v = |i: usize, j: usize| vals[i * nim + j];
    let mut out = Vec::new();
    for i in 0..nre {
        for j in 0..nim {
            let here = v(i, j);
            let mut is_min = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= nre as i64 {
                        continue;
                    }
                    let jj = (j as i64 + dj).rem_euclid(nim as i64) as usize;
                    if v(ii as usize, jj) < here {
                        is_min = false;
                    }
                }
            }
            if is_min {
                out.push(at(i, j));
            }
        }
    }
    Ok(out)
}
