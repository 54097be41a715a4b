//! Large-delay stability decision from the instantaneous spectrum, the asymptotic
//! continuous spectrum, and the trivial root of the characteristic function.

use std::f64::consts::PI;

use serde::Serialize;

use crate::charfun::CharContext;
use crate::error::{Error, Result};
use crate::linalg::{c, wrap_angle};
use crate::spectra::{AcsResult, InstantaneousSpectrum, SpectrumCurve};
use crate::steps::linear_fit;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ToleranceSet {
    pub axis: f64,
    pub nondeg: f64,
    pub crit: f64,
    pub margin: f64,
    pub curv: f64,
}

impl Default for ToleranceSet {
    fn default() -> Self {
        ToleranceSet {
            axis: 1e-6,
            nondeg: 1e-8,
            crit: 1e-4,
            margin: 1e-6,
            curv: 1e-6,
        }
    }
}

impl ToleranceSet {
    pub fn validate(&self) -> Result<()> {
        let all = [self.axis, self.nondeg, self.crit, self.margin, self.curv];
        if all.iter().all(|t| *t > 0.0 && t.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("all tolerances must be positive".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TriState {
    Pass,
    Fail,
    Degenerate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Overall {
    Stable,
    Unstable,
    Degenerate,
}

impl Overall {
    /// Process exit code: 0 stable, 2 unstable, 3 degenerate.
    pub fn exit_code(self) -> i32 {
        match self {
            Overall::Stable => 0,
            Overall::Unstable => 2,
            Overall::Degenerate => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegeneracyFlag {
    AxisInstantaneous,
    TrivialRootDegenerate,
    TuringTangency,
    PiPhaseTangency,
    Modulational,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Check {
    pub state: TriState,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeakCheck {
    pub state: TriState,
    /// Largest `gamma` outside the critical ball.
    pub sup_gamma: f64,
    pub argmax_omega: f64,
    pub argmax_phi: f64,
    /// Range of `gamma` over every traced sample.
    pub gamma_min: f64,
    pub gamma_max: f64,
}

/// Leading-order decay of the first band: `rate(N) ~ -C / (N + tau)^3`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayAnnotation {
    /// `gamma''(0)` on the critical branch.
    pub curvature: f64,
    pub quartic: f64,
    /// `C = -2 pi^2 gamma''(0)`.
    pub c_estimate: f64,
}

impl DecayAnnotation {
    /// Predicted dominant pair `-C/theta^3 +- i 2 pi / theta`.
    pub fn template(&self, theta: f64) -> (f64, f64) {
        (-self.c_estimate / theta.powi(3), 2.0 * PI / theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub s1_no_strong_instability: Check,
    pub s2_nondegeneracy: Check,
    /// False when no trivial root is present, in which case `s2` passes vacuously.
    pub s2_applicable: bool,
    pub s3_weak_stability: WeakCheck,
    pub u1: bool,
    pub u2: bool,
    pub overall: Overall,
    pub degeneracy_flags: Vec<DegeneracyFlag>,
    pub tolerances: ToleranceSet,
    pub decay: Option<DecayAnnotation>,
}

/// Largest gap between consecutive grid points, including the wrap at `+-pi`.
fn coverage_gap(grid: &[f64]) -> f64 {
    let mut g: Vec<f64> = grid.iter().map(|w| wrap_angle(*w)).collect();
    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
    g.dedup();
    if g.is_empty() {
        return f64::INFINITY;
    }
    let inner = g.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    inner.max(g[0] + 2.0 * PI - g[g.len() - 1])
}

/// Widest grid gap accepted as covering `[-pi, pi)`.
pub const MAX_GRID_GAP: f64 = 2.0 * PI / 32.0;

fn in_critical_ball(omega: f64, gamma: f64, phi: f64, radius: f64) -> bool {
    (omega * omega + gamma * gamma + wrap_angle(phi).powi(2)).sqrt() <= radius
}

/// Least-squares `gamma = c2 w^2 + c4 w^4` on the critical branch samples nearest `w = 0`.
fn critical_expansion(curve: &SpectrumCurve, crit: f64) -> Option<(f64, f64)> {
    let mut near: Vec<(f64, f64)> = curve
        .samples
        .iter()
        .filter(|s| s.omega.abs() > crit && s.omega.abs() < 1.0)
        .map(|s| (s.omega, s.gamma))
        .collect();
    near.sort_by(|a, b| a.0.abs().partial_cmp(&b.0.abs()).unwrap());
    near.truncate(8);
    if near.len() < 3 {
        return None;
    }
    let (mut s22, mut s24, mut s44, mut r2, mut r4) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(w, g) in &near {
        let (p2, p4) = (w * w, w.powi(4));
        s22 += p2 * p2;
        s24 += p2 * p4;
        s44 += p4 * p4;
        r2 += p2 * g;
        r4 += p4 * g;
    }
    let det = s22 * s44 - s24 * s24;
    if det.abs() < 1e-300 {
        return None;
    }
    let c2 = (r2 * s44 - r4 * s24) / det;
    let c4 = (s22 * r4 - s24 * r2) / det;
    Some((2.0 * c2, 24.0 * c4))
}

/// `gamma` on the critical branch at `omega`, by cubic interpolation between samples.
pub fn critical_gamma(acs: &AcsResult, omega: f64) -> Option<f64> {
    let curve = acs.critical()?;
    let mut pts: Vec<(f64, f64)> = curve.samples.iter().map(|s| (s.omega, s.gamma)).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts.dedup_by(|a, b| a.0 == b.0);
    let j = pts
        .windows(2)
        .position(|w| w[0].0 <= omega && omega <= w[1].0)?;
    let lo = j.saturating_sub(1).min(pts.len().saturating_sub(4));
    let stencil = &pts[lo..(lo + 4).min(pts.len())];
    let value = stencil
        .iter()
        .enumerate()
        .map(|(a, &(xa, ya))| {
            let w: f64 = stencil
                .iter()
                .enumerate()
                .filter(|(b, _)| *b != a)
                .map(|(_, &(xb, _))| (omega - xb) / (xa - xb))
                .product();
            w * ya
        })
        .sum();
    Some(value)
}

/// First-band decay rate `gamma(2 pi/theta)/theta` read off the critical branch.
pub fn first_band_rate(acs: &AcsResult, theta: f64) -> Option<f64> {
    critical_gamma(acs, 2.0 * PI / theta).map(|g| g / theta)
}

/// Stability decision. `acs` may be absent only when the instantaneous spectrum
/// touches the axis, in which case the curves cannot be traced.
pub fn decide(
    spec: &InstantaneousSpectrum,
    acs: Option<&AcsResult>,
    ctx: &CharContext,
    tol: &ToleranceSet,
) -> Result<StabilityVerdict> {
    tol.validate()?;
    let mut flags = Vec::new();

    let max_re = spec.max_re();
    let s1 = if max_re.abs() <= tol.axis {
        flags.push(DegeneracyFlag::AxisInstantaneous);
        TriState::Degenerate
    } else if max_re < -tol.axis {
        TriState::Pass
    } else {
        TriState::Fail
    };
    let u1 = max_re > tol.axis;

    let acs = match acs {
        Some(a) => a,
        None if s1 == TriState::Degenerate || u1 => {
            let nan = f64::NAN;
            return Ok(StabilityVerdict {
                s1_no_strong_instability: Check {
                    state: s1,
                    value: max_re,
                },
                s2_nondegeneracy: Check {
                    state: TriState::Degenerate,
                    value: nan,
                },
                s2_applicable: false,
                s3_weak_stability: WeakCheck {
                    state: TriState::Degenerate,
                    sup_gamma: nan,
                    argmax_omega: nan,
                    argmax_phi: nan,
                    gamma_min: nan,
                    gamma_max: nan,
                },
                u1,
                u2: false,
                overall: if u1 {
                    Overall::Unstable
                } else {
                    Overall::Degenerate
                },
                degeneracy_flags: flags,
                tolerances: *tol,
                decay: None,
            });
        }
        None => {
            return Err(Error::IncompleteInput(
                "no traced curves were supplied".into(),
            ))
        }
    };
    let gap = coverage_gap(&acs.omega_grid);
    if gap > MAX_GRID_GAP + 1e-12 {
        return Err(Error::IncompleteInput(format!(
            "omega grid leaves a gap of {gap:.4} in [-pi, pi); at most {MAX_GRID_GAP:.4} is accepted"
        )));
    }

    let origin = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let h0 = ctx.char_value(origin, one)?;
    let (dh_mu, dh_z) = ctx.char_derivatives(origin, one)?;
    // A trivial root is present when h(0, 1) is small against its local variation.
    let s2_applicable = acs.critical().is_some()
        || h0.abs() <= 1e-6 * (dh_mu.norm() + dh_z.norm()).max(f64::MIN_POSITIVE);
    let nondeg = dh_z.norm();
    let s2 = if !s2_applicable || nondeg > tol.nondeg {
        TriState::Pass
    } else {
        flags.push(DegeneracyFlag::TrivialRootDegenerate);
        TriState::Degenerate
    };

    let mut sup = (f64::NEG_INFINITY, 0.0, 0.0, false);
    let (mut gmin, mut gmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for curve in &acs.curves {
        for s in &curve.samples {
            gmin = gmin.min(s.gamma);
            gmax = gmax.max(s.gamma);
            if in_critical_ball(s.omega, s.gamma, s.phi, tol.crit) {
                continue;
            }
            if s.gamma > sup.0 {
                sup = (s.gamma, s.omega, s.phi, curve.critical);
            }
        }
    }
    let expansion = acs
        .critical()
        .and_then(|cv| critical_expansion(cv, tol.crit));
    let (sup_gamma, argmax_omega, argmax_phi, on_critical) = sup;
    let mut stable_flag_only = false;
    let s3 = if sup_gamma < -tol.margin {
        TriState::Pass
    } else if sup_gamma > tol.margin {
        TriState::Fail
    } else {
        let near_zero = argmax_omega.abs() <= tol.crit.max(1e-3);
        let pi_phase = (wrap_angle(argmax_phi).abs() - PI).abs() <= 1e-3;
        let flat = expansion
            .map(|(g2, g4)| g2.abs() < tol.curv && g4 < 0.0)
            .unwrap_or(false);
        if near_zero && pi_phase {
            flags.push(DegeneracyFlag::PiPhaseTangency);
            stable_flag_only = true;
        } else if on_critical && flat {
            flags.push(DegeneracyFlag::Modulational);
            stable_flag_only = true;
        } else {
            flags.push(DegeneracyFlag::TuringTangency);
        }
        TriState::Degenerate
    };
    let u2 = sup_gamma > tol.margin;

    let overall = if u1 || u2 {
        Overall::Unstable
    } else if s1 == TriState::Pass
        && s2 == TriState::Pass
        && (s3 == TriState::Pass || stable_flag_only)
    {
        Overall::Stable
    } else {
        Overall::Degenerate
    };
    let decay = match (overall, expansion) {
        (Overall::Stable, Some((g2, g4))) => Some(DecayAnnotation {
            curvature: g2,
            quartic: g4,
            c_estimate: -2.0 * PI * PI * g2,
        }),
        _ => None,
    };
    flags.sort();
    flags.dedup();
    Ok(StabilityVerdict {
        s1_no_strong_instability: Check {
            state: s1,
            value: max_re,
        },
        s2_nondegeneracy: Check {
            state: s2,
            value: nondeg,
        },
        s2_applicable,
        s3_weak_stability: WeakCheck {
            state: s3,
            sup_gamma,
            argmax_omega,
            argmax_phi,
            gamma_min: gmin,
            gamma_max: gmax,
        },
        u1,
        u2,
        overall,
        degeneracy_flags: flags,
        tolerances: *tol,
        decay,
    })
}

/// Slope of `ln |rate|` against `ln N` over measured `(N, rate)` pairs.
pub fn decay_order(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(n, r)| (n.ln(), r.abs().ln())).collect();
    linear_fit(&logs).0
}
