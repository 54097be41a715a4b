mod common;

use std::f64::consts::PI;
use std::sync::OnceLock;

use ddespec::charfun::{build_context, CharContext, CharSettings};
use ddespec::floquet::*;
use ddespec::model::CoefficientPair;
use ddespec::spectra::*;
use ddespec::C64;
use faer::Mat;

struct Prepared {
    ctx: CharContext,
    acs: AcsResult,
    inst: InstantaneousSpectrum,
}

fn prepare(cp: &CoefficientPair, tau: f64, panels: usize, points: usize) -> Prepared {
    let ctx = build_context(cp, tau, &CharSettings::default()).unwrap();
    let disc = AcsDiscretization::new(cp, tau, panels).unwrap();
    let settings = AcsSettings {
        refine: false,
        ..AcsSettings::default()
    };
    let acs = trace_acs(&ctx, &disc, &default_omega_grid(points), &settings).unwrap();
    let inst = instantaneous_spectrum(ctx.cache()).unwrap();
    Prepared { ctx, acs, inst }
}

fn scalar_case() -> &'static Prepared {
    static CELL: OnceLock<Prepared> = OnceLock::new();
    CELL.get_or_init(|| prepare(&CoefficientPair::scalar(-1.0, 0.5), 0.3, 256, 96))
}

fn exponents(p: &Prepared, n: usize) -> FloquetSet {
    let inputs = FloquetInputs {
        curves: &p.acs.curves,
        instantaneous: &p.inst,
    };
    find_exponents(&p.ctx, n, &inputs, &FloquetSettings::default()).unwrap()
}

fn scalar_oracle(a: f64, b: f64, theta: f64, re_min: f64) -> Vec<C64> {
    common::scalar_roots(a, b, theta, re_min)
        .into_iter()
        .map(common::reduce)
        .collect()
}

fn nearest(oracle: &[C64], mu: C64) -> f64 {
    oracle
        .iter()
        .map(|o| periodic_distance(*o, mu))
        .fold(f64::INFINITY, f64::min)
}

fn curve(id: usize, samples: Vec<(f64, f64, f64)>) -> SpectrumCurve {
    SpectrumCurve {
        branch_id: id,
        samples: samples
            .into_iter()
            .map(|(omega, gamma, phi)| AcsSample {
                omega,
                gamma,
                phi,
                residual: 0.0,
                duality_residual: 0.0,
            })
            .collect(),
        critical: false,
        crossing_suspected: false,
    }
}

#[test]
fn zero_phase_gives_uniform_bands() {
    let grid = default_omega_grid(64);
    let c = curve(0, grid.iter().map(|&w| (w, -1.0 - w * w, 0.0)).collect());
    let theta = 10.3;
    let preds = predict_bands(&[c], 0.3, 10);
    assert!(!preds.is_empty());
    for p in &preds {
        assert!((p.omega_k - 2.0 * PI * p.k as f64 / theta).abs() < 1e-14);
        assert!((p.re - p.gamma_k / theta).abs() < 1e-15);
    }
}

#[test]
fn band_spacing_halves_when_n_doubles() {
    let p = scalar_case();
    let spacing = |n: usize| {
        let main = p
            .acs
            .curves
            .iter()
            .max_by(|x, y| x.max_gamma().partial_cmp(&y.max_gamma()).unwrap())
            .unwrap();
        let mut ims: Vec<f64> = predict_bands(std::slice::from_ref(main), 0.3, n)
            .iter()
            .map(|b| b.im)
            .collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ims.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (ims.len() - 1) as f64
    };
    let (s10, s20) = (spacing(10), spacing(20));
    assert!(
        ((s10 / s20) - 2.0).abs() < 0.1,
        "spacing ratio {}",
        s10 / s20
    );
    assert!((s20 - 2.0 * PI / 20.3).abs() < 0.05 * s20);
}

#[test]
fn predictions_land_near_oracle_roots() {
    let p = scalar_case();
    let theta = 10.3;
    let oracle = scalar_oracle(-1.0, 0.5, theta, -10.0 / theta);
    let preds = predict_bands(&p.acs.curves, 0.3, 10);
    assert!(preds.len() > 20);
    for b in &preds {
        let err = oracle
            .iter()
            .map(|o| (o.im - b.im).abs() + (o.re - b.re).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(err < 0.01, "prediction {:?} error {err}", b.mu());
    }
}

#[test]
fn scalar_exponents_match_oracle_and_audit() {
    let p = scalar_case();
    for n in [10usize, 20] {
        let theta = n as f64 + 0.3;
        let set = exponents(p, n);
        let oracle = scalar_oracle(-1.0, 0.5, theta, -3.0 / theta - 1e-9);
        assert!(!set.exponents.is_empty());
        for e in &set.exponents {
            assert!(
                nearest(&oracle, e.mu()) < 1e-8,
                "N={n}: {:?} is not an oracle root",
                e.mu()
            );
            assert!(e.residual < 1e-8);
            assert_eq!(e.multiplicity, 1);
        }
        // Nothing missed in the strip.
        for o in oracle.iter().filter(|o| o.re >= -3.0 / theta) {
            assert!(
                set.exponents
                    .iter()
                    .any(|e| periodic_distance(e.mu(), *o) < 1e-8),
                "N={n}: missed {o}"
            );
        }
        assert!(set.audits_pass(), "{:?}", set.audits);
        // Conjugate closure.
        for e in &set.exponents {
            assert!(set
                .exponents
                .iter()
                .any(|f| periodic_distance(f.mu(), e.mu().conj()) < 1e-9));
        }
    }
}

#[test]
fn band_error_shrinks_with_n() {
    let p = scalar_case();
    let e10 = exponents(p, 10).max_band_error();
    let e20 = exponents(p, 20).max_band_error();
    assert!(e10 / e20 >= 2.5, "ratio {}", e10 / e20);
}

#[test]
fn band_signs_follow_gamma() {
    let p = scalar_case();
    let set = exponents(p, 20);
    let preds = &set.predictions;
    for e in set
        .exponents
        .iter()
        .filter(|e| e.source == ExponentSource::BandSeed)
    {
        let b = preds
            .iter()
            .min_by(|x, y| {
                periodic_distance(x.mu(), e.mu())
                    .partial_cmp(&periodic_distance(y.mu(), e.mu()))
                    .unwrap()
            })
            .unwrap();
        if b.gamma_k.abs() > 0.05 {
            assert_eq!(e.re > 0.0, b.gamma_k > 0.0);
        }
    }
}

#[test]
fn audits_count_oracle_roots() {
    let p = scalar_case();
    let theta = 10.3;
    let oracle = scalar_oracle(-1.0, 0.5, theta, -1.0);
    let count = |lo: f64, hi: f64| oracle.iter().filter(|o| o.re >= lo && o.re < hi).count();
    assert_eq!(
        audit_rectangle(&p.ctx, 10, -0.05, 0.3, -PI, PI).unwrap(),
        count(-0.05, 0.3)
    );
    assert_eq!(
        audit_rectangle(&p.ctx, 10, -0.2, 0.3, -PI, PI).unwrap(),
        count(-0.2, 0.3)
    );
    assert_eq!(
        audit_rectangle(&p.ctx, 10, -0.05, 0.3, 0.5, 1.0).unwrap(),
        0
    );
}

#[test]
fn scaled_residual_stays_away_from_zero_off_the_curves() {
    let p = scalar_case();
    // (gamma, omega) well right of the curve gamma(omega) <= ln 0.5.
    for (g0, w0) in [(0.2, 0.3), (-0.2, 1.7)] {
        for n in [10usize, 20, 40] {
            let theta = n as f64 + 0.3;
            let v = p.ctx.char_value_n(n, C64::new(g0 / theta, w0)).unwrap();
            assert!(v.abs() > 1e-3, "N={n}: |h_N| = {}", v.abs());
        }
    }
}

#[test]
fn no_coupling_gives_instantaneous_spectrum() {
    let a = Mat::from_fn(2, 2, |i, j| [[-0.5, 1.0], [-1.0, -0.5]][i][j]);
    let cp = CoefficientPair::constant(a, Mat::zeros(2, 2)).unwrap();
    let ctx = build_context(&cp, 0.4, &CharSettings::default()).unwrap();
    let inst = instantaneous_spectrum(ctx.cache()).unwrap();
    for n in [1usize, 10, 25] {
        let set = find_exponents(
            &ctx,
            n,
            &FloquetInputs {
                curves: &[],
                instantaneous: &inst,
            },
            &FloquetSettings::default(),
        )
        .unwrap();
        assert_eq!(set.exponents.len(), inst.points.len());
        for (e, s) in set.exponents.iter().zip(&inst.points) {
            assert!((e.mu() - s.mu()).norm() < 1e-9);
        }
        assert!(set.audits_pass());
    }
}

#[test]
fn strongly_unstable_exponent_converges() {
    let (a, b, tau) = (0.3, 0.1, 0.5);
    let cp = CoefficientPair::scalar(a, b);
    let p = prepare(&cp, tau, 64, 16);
    let mut last = f64::INFINITY;
    for n in [5usize, 10, 20] {
        let theta = n as f64 + tau;
        let set = exponents(&p, n);
        let right = set.rightmost().unwrap();
        let oracle = scalar_oracle(a, b, theta, 0.1);
        assert!(nearest(&oracle, right.mu()) < 1e-8);
        let d = (right.mu() - C64::new(0.3, 0.0)).norm();
        assert!(d < last, "N={n}: distance {d} did not shrink from {last}");
        last = d;
        assert_eq!(set.strong.len(), 1);
        assert!(set.strong[0].converged);
        assert!(set.audits_pass());
    }
}

#[test]
fn double_strong_point_counts_two() {
    let a = Mat::from_fn(2, 2, |i, j| if i == j { 0.3 } else { 0.0 });
    let b = Mat::from_fn(2, 2, |i, j| {
        if i == j {
            0.02
        } else if i == 0 {
            0.01
        } else {
            0.0
        }
    });
    let cp = CoefficientPair::constant(a, b).unwrap();
    let ctx = build_context(&cp, 0.5, &CharSettings::default()).unwrap();
    let inst = instantaneous_spectrum(ctx.cache()).unwrap();
    let a_plus = strongly_unstable(&inst, 1e-6).points;
    assert_eq!(a_plus.len(), 1);
    assert_eq!(a_plus[0].multiplicity, 2);
    let strong = strong_exponents(&ctx, 10, &a_plus, &FloquetSettings::default()).unwrap();
    assert_eq!(strong[0].ball_count, 2);
}

#[test]
fn repeated_scalar_block_gives_double_roots() {
    let a = Mat::from_fn(2, 2, |i, j| if i == j { -1.0 } else { 0.0 });
    let b = Mat::from_fn(2, 2, |i, j| if i == j { 0.5 } else { 0.0 });
    let cp = CoefficientPair::constant(a, b).unwrap();
    let ctx = build_context(&cp, 0.3, &CharSettings::default()).unwrap();
    let theta = 10.3;
    let oracle = scalar_oracle(-1.0, 0.5, theta, -0.2);
    let root = oracle
        .iter()
        .copied()
        .max_by(|x, y| x.re.partial_cmp(&y.re).unwrap())
        .unwrap();
    let settings = FloquetSettings::default();
    // Newton converges linearly onto a double root; refine from close by.
    let (mu, _) = newton_exponent(&ctx, 10, root + C64::new(1e-4, 1e-4), 0.05, &settings).unwrap();
    assert!((mu - root).norm() < 1e-6);
    assert_eq!(
        multiplicity(&ctx, 10, root, 1e-3 * 2.0 * PI / theta).unwrap(),
        2
    );
    let (_, count) = audit_region(
        &ctx,
        10,
        Region::Disk {
            re: root.re,
            im: root.im,
            radius: 0.05,
        },
    )
    .unwrap();
    assert_eq!(count, 2);
}

#[test]
fn matrix_pair_matches_oracle() {
    let a = [[-1.0, 0.5], [-0.3, -0.8]];
    let b = [[0.3, 0.1], [0.0, 0.2]];
    let cp = CoefficientPair::constant(
        Mat::from_fn(2, 2, |i, j| a[i][j]),
        Mat::from_fn(2, 2, |i, j| b[i][j]),
    )
    .unwrap();
    let p = prepare(&cp, 0.3, 128, 64);
    let theta = 10.3;
    let set = exponents(&p, 10);
    let oracle: Vec<C64> = common::matrix2_roots(a, b, theta, -3.0 / theta - 1e-9)
        .into_iter()
        .map(common::reduce)
        .collect();
    assert!(!set.exponents.is_empty());
    for e in &set.exponents {
        assert!(nearest(&oracle, e.mu()) < 1e-7, "{:?}", e.mu());
    }
    for o in oracle.iter().filter(|o| o.re >= -0.05) {
        assert!(
            set.exponents
                .iter()
                .any(|e| periodic_distance(e.mu(), *o) < 1e-7),
            "missed {o}"
        );
    }
    assert!(set.audits_pass(), "{:?}", set.audits);
}
