mod common;

use std::f64::consts::PI;

use ddespec::charfun::{build_context, CharContext, CharSettings};
use ddespec::model::{builtin_hopf_example, CoefficientPair};
use ddespec::orbit::{linearize, solve_hopf, OrbitSettings};
use ddespec::spectra::*;
use ddespec::verdict::*;
use ddespec::Error;

struct Case {
    ctx: CharContext,
    inst: InstantaneousSpectrum,
    acs: AcsResult,
}

fn case(cp: &CoefficientPair, tau: f64, points: usize, panels: usize) -> Case {
    let ctx = build_context(cp, tau, &CharSettings::default()).unwrap();
    let inst = instantaneous_spectrum(ctx.cache()).unwrap();
    let disc = AcsDiscretization::new(cp, tau, panels).unwrap();
    let settings = AcsSettings {
        refine: false,
        ..AcsSettings::default()
    };
    let acs = trace_acs(&ctx, &disc, &default_omega_grid(points), &settings).unwrap();
    Case { ctx, inst, acs }
}

fn scalar(a: f64, b: f64) -> Case {
    case(&CoefficientPair::scalar(a, b), 0.3, 64, 128)
}

fn decide_with(c: &Case, tol: &ToleranceSet) -> StabilityVerdict {
    decide(&c.inst, Some(&c.acs), &c.ctx, tol).unwrap()
}

#[test]
fn damped_scalar_is_stable() {
    let c = scalar(-1.0, 0.5);
    let v = decide_with(&c, &ToleranceSet::default());
    assert_eq!(v.overall, Overall::Stable);
    assert_eq!(v.s1_no_strong_instability.state, TriState::Pass);
    assert_eq!(v.s3_weak_stability.state, TriState::Pass);
    assert!(!v.s2_applicable && v.s2_nondegeneracy.state == TriState::Pass);
    assert!((v.s3_weak_stability.sup_gamma - 0.5f64.ln()).abs() < 1e-6);
    assert!(v.degeneracy_flags.is_empty() && !v.u1 && !v.u2);
    assert_eq!(v.overall.exit_code(), 0);
}

#[test]
fn strong_feedback_is_weakly_unstable() {
    let c = scalar(-1.0, 1.5);
    let v = decide_with(&c, &ToleranceSet::default());
    assert_eq!(v.overall, Overall::Unstable);
    assert!(v.u2 && !v.u1);
    assert_eq!(v.s3_weak_stability.state, TriState::Fail);
    assert!((v.s3_weak_stability.sup_gamma - 1.5f64.ln()).abs() < 1e-6);
    assert_eq!(v.overall.exit_code(), 2);
}

#[test]
fn positive_instantaneous_spectrum_is_strongly_unstable() {
    let c = scalar(0.3, 0.1);
    let v = decide_with(&c, &ToleranceSet::default());
    assert!(v.u1);
    assert_eq!(v.s1_no_strong_instability.state, TriState::Fail);
    assert_eq!(v.overall, Overall::Unstable);
}

#[test]
fn axis_instantaneous_spectrum_is_degenerate() {
    let cp = CoefficientPair::scalar(0.0, 0.5);
    let ctx = build_context(&cp, 0.3, &CharSettings::default()).unwrap();
    let inst = instantaneous_spectrum(ctx.cache()).unwrap();
    let disc = AcsDiscretization::new(&cp, 0.3, 64).unwrap();
    assert!(trace_acs(
        &ctx,
        &disc,
        &default_omega_grid(16),
        &AcsSettings::default()
    )
    .is_err());
    let v = decide(&inst, None, &ctx, &ToleranceSet::default()).unwrap();
    assert_eq!(v.overall, Overall::Degenerate);
    assert_eq!(v.degeneracy_flags, vec![DegeneracyFlag::AxisInstantaneous]);
    assert_eq!(v.overall.exit_code(), 3);
}

#[test]
fn partial_grid_is_rejected() {
    let cp = CoefficientPair::scalar(-1.0, 0.5);
    let ctx = build_context(&cp, 0.3, &CharSettings::default()).unwrap();
    let inst = instantaneous_spectrum(ctx.cache()).unwrap();
    let disc = AcsDiscretization::new(&cp, 0.3, 64).unwrap();
    let grid: Vec<f64> = (0..21).map(|i| -1.0 + 0.1 * i as f64).collect();
    let acs = trace_acs(
        &ctx,
        &disc,
        &grid,
        &AcsSettings {
            refine: false,
            ..AcsSettings::default()
        },
    )
    .unwrap();
    assert!(matches!(
        decide(&inst, Some(&acs), &ctx, &ToleranceSet::default()),
        Err(Error::IncompleteInput(_))
    ));
    assert!(matches!(
        decide(&inst, None, &ctx, &ToleranceSet::default()),
        Err(Error::IncompleteInput(_))
    ));
}

#[test]
fn bad_tolerances_are_rejected() {
    let c = scalar(-1.0, 0.5);
    let tol = ToleranceSet {
        margin: 0.0,
        ..ToleranceSet::default()
    };
    assert!(decide(&c.inst, Some(&c.acs), &c.ctx, &tol).is_err());
}

#[test]
fn negative_feedback_touching_zero_is_a_pi_phase_tangency() {
    // gamma(omega) = -ln(omega^2 + 1)/2 peaks at 0 with phase pi.
    let c = scalar(-1.0, -1.0);
    let v = decide_with(&c, &ToleranceSet::default());
    assert_eq!(v.s3_weak_stability.state, TriState::Degenerate);
    assert_eq!(v.degeneracy_flags, vec![DegeneracyFlag::PiPhaseTangency]);
    assert_eq!(v.overall, Overall::Stable);
}

#[test]
fn neutral_scalar_has_a_critical_branch_and_a_cubic_decay_template() {
    // a + b = 0 puts a trivial root at (0, 1) and gamma(omega) = -ln(1 + omega^2)/2.
    let c = scalar(-1.0, 1.0);
    let v = decide_with(&c, &ToleranceSet::default());
    assert!(c.acs.critical().is_some());
    assert!(v.s2_applicable);
    assert_eq!(v.s2_nondegeneracy.state, TriState::Pass);
    assert_eq!(v.overall, Overall::Stable);
    let decay = v.decay.expect("stable verdicts carry a decay template");
    // Least-squares on the eight samples nearest 0; the sixth-order term biases it slightly.
    assert!(
        (decay.curvature + 1.0).abs() < 5e-3,
        "curvature {}",
        decay.curvature
    );
    let theta = 40.3;
    let (rate, freq) = decay.template(theta);
    let oracle = common::scalar_roots(-1.0, 1.0, theta, -0.1)
        .into_iter()
        .filter(|z| z.norm() > 1e-9)
        .max_by(|x, y| x.re.partial_cmp(&y.re).unwrap())
        .unwrap();
    assert!(
        (rate - oracle.re).abs() < 0.1 * oracle.re.abs(),
        "{rate} vs {}",
        oracle.re
    );
    assert!((freq - oracle.im.abs()).abs() < 0.1 * freq);
    let read_off = first_band_rate(&c.acs, theta).unwrap();
    assert!((read_off - oracle.re).abs() < 0.1 * oracle.re.abs());
}

#[test]
fn loosening_the_margin_never_flips_the_outcome() {
    for (b, tight) in [(0.5, Overall::Stable), (1.5, Overall::Unstable)] {
        let c = scalar(-1.0, b);
        for margin in [1e-6, 1e-2, 0.3, 0.5, 1.0] {
            let v = decide_with(
                &c,
                &ToleranceSet {
                    margin,
                    ..ToleranceSet::default()
                },
            );
            assert!(
                v.overall == tight || v.overall == Overall::Degenerate,
                "b = {b}, margin = {margin}: {:?}",
                v.overall
            );
            assert!(!(v.u2 && v.s3_weak_stability.state == TriState::Pass));
        }
    }
    let loose = decide_with(
        &scalar(-1.0, 0.5),
        &ToleranceSet {
            margin: 1.0,
            ..ToleranceSet::default()
        },
    );
    assert_eq!(loose.overall, Overall::Degenerate);
    assert_eq!(loose.degeneracy_flags, vec![DegeneracyFlag::TuringTangency]);
}

#[test]
fn reference_orbit_is_stable_for_large_delay() {
    let model = builtin_hopf_example(-0.10779, 1.0, 1.081);
    let orbit = solve_hopf(&model, &OrbitSettings::default()).unwrap();
    let lin = linearize(&model, &orbit, 256).unwrap();
    let c = case(&lin.coefficients, lin.tau, 64, 256);
    let v = decide_with(&c, &ToleranceSet::default());
    assert_eq!(v.overall, Overall::Stable, "{v:?}");
    assert!(v.s2_applicable && v.s2_nondegeneracy.value > 1e-8);
    assert!(v.s3_weak_stability.gamma_max.abs() < 1e-6);
    let decay = v.decay.unwrap();
    assert!(decay.curvature < 0.0 && decay.c_estimate > 0.0);
    let (_, freq) = decay.template(26.0);
    assert!((freq - 2.0 * PI / 26.0).abs() < 1e-15);
}
