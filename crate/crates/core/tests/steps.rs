mod common;

use std::sync::OnceLock;

use ddespec::model::{builtin_hopf_example, CoefficientPair};
use ddespec::orbit::{linearize, solve_hopf, OrbitSettings, PeriodicOrbit};
use ddespec::steps::*;

fn linear_rate(
    cp: &CoefficientPair,
    tau: f64,
    n: usize,
    horizon: f64,
    q: Option<usize>,
) -> LinearRun {
    let q = q.unwrap_or_else(|| default_steps_per_unit(cp));
    let history = random_history(cp.dim(), 1.0 / q as f64, n as f64 + tau, 1.0, 7);
    let settings = StepSettings {
        steps_per_unit: Some(q),
        ..StepSettings::default()
    };
    integrate_linear(cp, tau, n, &history, horizon, &settings).unwrap()
}

fn rightmost_oracle(a: f64, b: f64, theta: f64) -> f64 {
    common::scalar_roots(a, b, theta, -1.0)
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn undelayed_decay_rate() {
    let run = linear_rate(&CoefficientPair::scalar(-1.0, 0.0), 0.3, 10, 200.0, None);
    assert!(
        (run.growth.dominant_rate + 1.0).abs() < 1e-4,
        "{:?}",
        run.growth
    );
    assert!(run.growth.reliable);
}

#[test]
fn scalar_rate_matches_rightmost_root() {
    let run = linear_rate(&CoefficientPair::scalar(-1.0, 0.5), 0.3, 10, 1000.0, None);
    let oracle = rightmost_oracle(-1.0, 0.5, 10.3);
    assert!(
        (run.growth.dominant_rate - oracle).abs() < 1e-3,
        "{} vs {oracle}",
        run.growth.dominant_rate
    );
    assert!(run.growth.fit_residual < 0.1);
}

#[test]
fn oscillating_rate_and_frequency() {
    // b < 0 puts the rightmost roots on a complex pair.
    let (a, b, theta) = (-1.0, -0.8, 5.4);
    let run = linear_rate(&CoefficientPair::scalar(a, b), 0.4, 5, 1500.0, None);
    let roots = common::scalar_roots(a, b, theta, -1.0);
    let top = roots
        .iter()
        .max_by(|x, y| x.re.partial_cmp(&y.re).unwrap())
        .unwrap();
    assert!((run.growth.dominant_rate - top.re).abs() < 1e-3);
    assert!(
        (run.growth.dominant_frequency - top.im.abs()).abs() < 1e-3,
        "{} vs {}",
        run.growth.dominant_frequency,
        top.im
    );
}

#[test]
fn halving_the_step_keeps_the_rate() {
    let cp = CoefficientPair::scalar(-1.0, 0.5);
    let q = default_steps_per_unit(&cp);
    let coarse = linear_rate(&cp, 0.3, 10, 600.0, Some(q))
        .growth
        .dominant_rate;
    let fine = linear_rate(&cp, 0.3, 10, 600.0, Some(2 * q))
        .growth
        .dominant_rate;
    assert!((coarse - fine).abs() < 0.1 * fine.abs());
}

#[test]
fn overflow_stops_early_with_a_rate() {
    let run = linear_rate(&CoefficientPair::scalar(5.0, 0.1), 0.3, 1, 400.0, None);
    assert!(run.overflow);
    assert!(run.trajectory.t.last().unwrap() < &400.0);
    assert!(
        (run.growth.dominant_rate - 5.0).abs() < 0.05,
        "{:?}",
        run.growth
    );
}

#[test]
fn trajectory_dump_has_the_requested_density() {
    let cp = CoefficientPair::scalar(-0.5, 0.2);
    let q = default_steps_per_unit(&cp);
    let history = random_history(1, 1.0 / q as f64, 2.3, 1.0, 3);
    let settings = StepSettings {
        samples_per_unit: 4,
        ..StepSettings::default()
    };
    let run = integrate_linear(&cp, 0.3, 2, &history, 10.0, &settings).unwrap();
    assert_eq!(run.trajectory.t.len(), 40);
    assert!((run.trajectory.t[0] - 0.25).abs() < 1e-12);
    assert!(run
        .trajectory
        .log_norm
        .iter()
        .zip(&run.trajectory.x)
        .all(|(l, x)| (l - x[0].abs().ln()).abs() < 1e-12));
}

#[test]
fn mismatched_history_is_rejected() {
    let cp = CoefficientPair::scalar(-1.0, 0.5);
    let history = random_history(1, 0.01, 10.3, 1.0, 1);
    assert!(integrate_linear(&cp, 0.3, 10, &history, 1.0, &StepSettings::default()).is_err());
    let short = random_history(1, 1.0 / 64.0, 2.0, 1.0, 1);
    assert!(integrate_linear(&cp, 0.3, 10, &short, 1.0, &StepSettings::default()).is_err());
}

#[test]
fn random_history_is_seeded() {
    let a = random_history(2, 0.01, 3.0, 1.0, 42);
    let b = random_history(2, 0.01, 3.0, 1.0, 42);
    let c = random_history(2, 0.01, 3.0, 1.0, 43);
    let (mut x, mut y, mut z) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    a.eval(-1.234, &mut x).unwrap();
    b.eval(-1.234, &mut y).unwrap();
    c.eval(-1.234, &mut z).unwrap();
    assert_eq!(x, y);
    assert_ne!(x, z);
}

fn circle() -> &'static PeriodicOrbit {
    static CELL: OnceLock<PeriodicOrbit> = OnceLock::new();
    CELL.get_or_init(|| {
        solve_hopf(
            &builtin_hopf_example(0.25, 0.0, 1.0),
            &OrbitSettings::default(),
        )
        .unwrap()
    })
}

#[test]
fn orbit_is_invariant_under_the_flow() {
    let model = builtin_hopf_example(0.25, 0.0, 1.0);
    let run = integrate_nonlinear(&model, circle(), 2, 0.0, 0, 50.0, 256, 4).unwrap();
    assert!(
        run.max_distance(0.0, 60.0) < 1e-6,
        "{}",
        run.max_distance(0.0, 60.0)
    );
    assert!(!run.overflow);
}

#[test]
fn perturbed_circle_relaxes_at_the_radial_rate() {
    // Radial perturbations of r' = r (0.25 - r^2) decay like exp(-0.5 t).
    let model = builtin_hopf_example(0.25, 0.0, 1.0);
    let run = integrate_nonlinear(&model, circle(), 1, 1e-4, 5, 20.0, 256, 8).unwrap();
    let pts: Vec<(f64, f64)> = run
        .t
        .iter()
        .zip(&run.distance)
        .filter(|(t, _)| **t > 5.0 && **t < 15.0)
        .map(|(t, d)| (*t, d.ln()))
        .collect();
    let (slope, _) = linear_fit(&pts);
    assert!((slope + 0.5).abs() < 0.01, "slope {slope}");
}

#[test]
fn linear_and_nonlinear_decay_agree() {
    let model = builtin_hopf_example(-0.10779, 1.0, 1.081);
    let orbit = solve_hopf(&model, &OrbitSettings::default()).unwrap();
    let lin = linearize(&model, &orbit, 256).unwrap();
    let n_periods = 15;
    let n = lin.spectral_n(n_periods);
    let theta = n as f64 + lin.tau;
    let q = default_steps_per_unit(&lin.coefficients);
    let history = random_history(2, 1.0 / q as f64, theta, 1.0, 7);
    let settings = StepSettings {
        deflate: true,
        ..StepSettings::default()
    };
    let linear = integrate_linear(
        &lin.coefficients,
        lin.tau,
        n,
        &history,
        60.0 * theta,
        &settings,
    )
    .unwrap();
    assert!(linear.growth.reliable && linear.growth.dominant_rate < 0.0);

    // 1024 steps per period keeps the integration floor near 5e-11.
    let periods = 30.0 * theta;
    let run = integrate_nonlinear(&model, &orbit, n_periods, 1e-6, 9, periods, 1024, 16).unwrap();
    let windows = (periods / theta) as usize;
    let maxima: Vec<(f64, f64)> = (1..windows)
        .map(|w| {
            let (lo, hi) = (
                w as f64 * theta * orbit.period,
                (w + 1) as f64 * theta * orbit.period,
            );
            ((w as f64 + 0.5) * theta, run.max_distance(lo, hi).ln())
        })
        .collect();
    let (slope, _) = linear_fit(&maxima[maxima.len() / 2..]);
    let rel = (slope - linear.growth.dominant_rate).abs() / linear.growth.dominant_rate.abs();
    assert!(
        rel < 0.2,
        "nonlinear {slope} vs linear {}",
        linear.growth.dominant_rate
    );
}
