mod common;

use std::f64::consts::PI;

use ddespec::charfun::*;
use ddespec::linalg::{c, ComplexLu};
use ddespec::model::{CoefficientPair, MatrixProvider};
use ddespec::{Error, C64};
use faer::Mat;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m2(rows: [[f64; 2]; 2]) -> Mat<f64> {
    Mat::from_fn(2, 2, |i, j| rows[i][j])
}

fn guaranteed() -> CharSettings {
    CharSettings {
        mode: KMode::Guaranteed,
        ..CharSettings::default()
    }
}

fn scalar_guaranteed() -> CharContext {
    build_context(&CoefficientPair::scalar(-1.0, 0.5), 0.3, &guaranteed()).unwrap()
}

fn periodic_pair() -> CoefficientPair {
    let a = MatrixProvider::fourier(
        m2([[-0.6, 1.0], [-1.0, -0.4]]),
        vec![m2([[0.3, 0.0], [0.2, -0.1]])],
        vec![m2([[0.0, 0.2], [-0.1, 0.3]])],
    )
    .unwrap();
    let b = MatrixProvider::fourier(
        m2([[0.3, 0.1], [0.0, 0.2]]),
        vec![m2([[0.1, 0.0], [0.0, 0.1]])],
        vec![Mat::zeros(2, 2)],
    )
    .unwrap();
    CoefficientPair::new(a, b).unwrap()
}

#[test]
fn guaranteed_partition_count() {
    assert_eq!(
        guaranteed_k(1.0, 0.5, 3.0),
        (0.5 * 4f64.exp()).ceil() as usize + 1
    );
    assert_eq!(guaranteed_k(10.0, 0.0, 3.0), 14);
    let ctx = scalar_guaranteed();
    assert_eq!(ctx.k(), 29);
    assert!(ctx.guaranteed() && (ctx.k() as f64) > ctx.c_of_r());
}

#[test]
fn picard_iteration_agrees_with_direct_solve() {
    let ctx = scalar_guaranteed();
    let v = vec![c(1.0, 0.0); ctx.delta_dim()];
    let (mu, z) = (c(0.0, 0.0), c(1.0, 0.0));
    let direct = ctx.solve_integral_equation(mu, z, &v).unwrap();
    let picard = ctx.picard_solve(mu, z, &v, 50).unwrap();
    let diff = direct
        .iter()
        .zip(&picard)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(diff < 1e-10, "{diff}");
}

#[test]
fn operator_norm_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for cp in [CoefficientPair::scalar(-1.0, 0.5), periodic_pair()] {
        let ctx = build_context(&cp, 0.3, &guaranteed()).unwrap();
        let bound = std::f64::consts::E * cp.b_norm() / ctx.k() as f64 * 1.05;
        for _ in 0..20 {
            let mu = c(rng.gen_range(-ctx.r()..2.0), rng.gen_range(-10.0..10.0));
            let norm = ctx.l_norm(mu);
            assert!(norm <= bound, "{norm} > {bound} at {mu}");
        }
    }
}

#[test]
fn scalar_root_on_the_imaginary_axis() {
    let ctx = scalar_guaranteed();
    let mu = c(0.0, 0.2);
    let z = (mu + 1.0) / 0.5;
    assert!(ctx.char_value(mu, z).unwrap().abs() < 1e-8);
    assert!(ctx.char_value(mu, z + 0.1).unwrap().abs() > 1e-3);
}

#[test]
fn root_branch_slope_is_the_delay_coefficient() {
    // Roots of mu = a + b z lie on mu(z) with d mu/d z = b.
    let ctx = scalar_guaranteed();
    let mu = c(0.0, 0.2);
    let z = (mu + 1.0) / 0.5;
    let (d1, d2) = ctx.char_derivatives(mu, z).unwrap();
    assert!((-d2 / d1 - c(0.5, 0.0)).norm() < 1e-6, "{}", -d2 / d1);
}

#[test]
fn restricted_values_vanish_at_lambert_roots() {
    let (a, b, tau, n) = (-1.0, 0.5, 0.3, 10usize);
    let ctx = build_context(
        &CoefficientPair::scalar(a, b),
        tau,
        &CharSettings::default(),
    )
    .unwrap();
    let theta = n as f64 + tau;
    let lo = ctx.strip_lower_n(n);
    let roots: Vec<C64> = common::scalar_roots(a, b, theta, lo + 1e-9)
        .into_iter()
        .filter(|r| r.im.abs() < 8.0)
        .collect();
    assert!(roots.len() > 10);
    for r in roots {
        let h = ctx.char_value_n(n, r).unwrap();
        assert!(h.abs() < 1e-7, "|h_N({r})| = {}", h.abs());
    }
}

#[test]
fn restricted_value_at_zero_ignores_n() {
    let ctx = build_context(&periodic_pair(), 0.3, &CharSettings::default()).unwrap();
    let h1 = ctx.char_value(c(0.0, 0.0), c(1.0, 0.0)).unwrap().value();
    for n in [1, 5, 40] {
        assert!(
            (ctx.char_value_n(n, c(0.0, 0.0)).unwrap().value() - h1).norm()
                < 1e-12 * h1.norm().max(1.0)
        );
    }
}

#[test]
fn conjugate_symmetry() {
    let ctx = build_context(&periodic_pair(), 0.3, &CharSettings::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mu = c(rng.gen_range(-2.0..2.0), rng.gen_range(-6.0..6.0));
        let z = C64::from_polar(rng.gen_range(0.1..5.0), rng.gen_range(-PI..PI));
        let h = ctx.char_value(mu, z).unwrap().value();
        let hc = ctx.char_value(mu.conj(), z.conj()).unwrap().value();
        assert!(
            (h.conj() - hc).norm() < 1e-10 * h.norm().max(1.0),
            "{h} vs {hc}"
        );
    }
}

#[test]
fn no_delay_coupling_means_no_z_dependence() {
    let cp = CoefficientPair::constant(m2([[-1.0, 2.0], [-2.0, -0.5]]), Mat::zeros(2, 2)).unwrap();
    let ctx = build_context(&cp, 0.3, &CharSettings::default()).unwrap();
    assert_eq!(ctx.k(), adaptive_start_k(cp.a_norm(), 3.0));
    let mu = c(0.1, 0.7);
    let h0 = ctx.char_value(mu, c(0.0, 0.0)).unwrap().value();
    for z in [c(1.0, 0.0), c(-3.0, 2.0), c(10.0, 0.0)] {
        assert!((ctx.char_value(mu, z).unwrap().value() - h0).norm() < 1e-13 * h0.norm().max(1.0));
    }
    let (_, dz) = ctx.char_derivatives(mu, c(1.0, 0.0)).unwrap();
    assert!(dz.norm() < 1e-9);
    assert_eq!(ctx.strip_lower_n(10), -3.0);
}

#[test]
fn kernel_vectors_give_continuous_solutions() {
    let ctx = scalar_guaranteed();
    let mu = c(0.0, 0.2);
    let z = (mu + 1.0) / 0.5;
    let delta = ctx.char_matrix(mu, z).unwrap();
    let lu = ComplexLu::new(delta.as_ref());
    let nk = ctx.delta_dim();
    let mut x = Mat::from_fn(nk, 1, |i, _| c(1.0 + 0.1 * i as f64, 0.0));
    for _ in 0..3 {
        x = lu.solve(x.as_ref());
        let norm = (0..nk).map(|i| x[(i, 0)].norm()).fold(0.0, f64::max);
        x = Mat::from_fn(nk, 1, |i, _| x[(i, 0)] / norm);
    }
    let v: Vec<C64> = (0..nk).map(|i| x[(i, 0)]).collect();
    let y = ctx.solve_integral_equation(mu, z, &v).unwrap();
    let ends = ctx.end_values(&y);
    let n = ctx.dim();
    for j in 0..ctx.k() {
        for comp in 0..n {
            let start = y[j * (ctx.p() + 1) * n + comp];
            assert!((start - v[j * n + comp]).norm() < 1e-12);
            let jump = (start - ends[j * n + comp]).norm();
            assert!(jump < 1e-7, "jump {jump} at t_{j}");
        }
    }
}

#[test]
fn singular_characteristic_matrix_iff_root() {
    let ctx = scalar_guaranteed();
    let root = c(0.0, 0.2);
    let z = (root + 1.0) / 0.5;
    let at_root = ctx.char_value(root, z).unwrap();
    let away = ctx.char_value(c(0.3, 0.2), z).unwrap();
    assert!(at_root.delta_pivot_ratio < 1e-8 && at_root.abs() < 1e-8);
    assert!(away.delta_pivot_ratio > 1e-3 && away.abs() > 1e-3);
}

#[test]
fn refining_the_partition_keeps_the_values() {
    let cp = periodic_pair();
    let ctx = build_context(&cp, 0.3, &CharSettings::default()).unwrap();
    let finer = CharContext::with_k(&cp, 0.3, 2 * ctx.k(), &CharSettings::default()).unwrap();
    let a = probe_values(&ctx).unwrap();
    let b = probe_values(&finer).unwrap();
    assert!(probes_agree(&a, &b, 1e-8), "{a:?} vs {b:?}");
}

#[test]
fn double_root_has_winding_number_two() {
    let cp =
        CoefficientPair::constant(m2([[-1.0, 0.0], [0.0, -1.0]]), m2([[0.5, 0.0], [0.0, 0.5]]))
            .unwrap();
    let ctx = build_context(&cp, 0.3, &CharSettings::default()).unwrap();
    let center = c(-0.5, 0.0);
    let points = 256;
    let mut total = 0.0;
    let mut last = ctx.char_value(center + 0.1, c(1.0, 0.0)).unwrap().arg_h;
    for i in 1..=points {
        let mu = center + C64::from_polar(0.1, 2.0 * PI * i as f64 / points as f64);
        let arg = ctx.char_value(mu, c(1.0, 0.0)).unwrap().arg_h;
        total += ddespec::linalg::wrap_angle(arg - last);
        last = arg;
    }
    assert_eq!((total / (2.0 * PI)).round() as i64, 2);
}

#[test]
fn errors_for_bad_inputs() {
    let cp = CoefficientPair::scalar(-1.0, 0.5);
    let small_cap = CharSettings {
        k_cap: 8,
        ..guaranteed()
    };
    assert!(matches!(
        build_context(&cp, 0.3, &small_cap),
        Err(Error::Resolution { .. })
    ));
    assert!(build_context(
        &cp,
        0.3,
        &CharSettings {
            r: 0.0,
            ..CharSettings::default()
        }
    )
    .is_err());
    let ctx = scalar_guaranteed();
    assert!(matches!(
        ctx.char_value(c(0.0, 0.0), c(30.0, 0.0)),
        Err(Error::Domain(_))
    ));
    assert!(ctx
        .solve_integral_equation(c(0.0, 0.0), c(1.0, 0.0), &[c(1.0, 0.0)])
        .is_err());
    assert!("exact".parse::<KMode>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn scalar_values_are_conjugate_symmetric(re in -2.0f64..2.0, im in -5.0f64..5.0, zr in -3.0f64..3.0, zi in -3.0f64..3.0) {
        let ctx = CharContext::with_k(&CoefficientPair::scalar(-0.7, 0.4), 0.45, 16, &CharSettings::default()).unwrap();
        let (mu, z) = (c(re, im), c(zr, zi));
        let h = ctx.char_value(mu, z).unwrap().value();
        let hc = ctx.char_value(mu.conj(), z.conj()).unwrap().value();
        prop_assert!((h.conj() - hc).norm() < 1e-10 * h.norm().max(1.0));
    }
}
