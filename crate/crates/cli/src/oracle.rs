//! Closed-form references for constant-coefficient problems, independent of the
//! characteristic-function machinery.

use ddespec::C64;
use std::f64::consts::PI;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Reduces the imaginary part into `[-pi, pi)`.
pub fn reduce(mu: C64) -> C64 {
    C64::new(mu.re, (mu.im + PI).rem_euclid(2.0 * PI) - PI)
}

/// Roots of a scalar holomorphic `f` by damped Newton from every seed, deduplicated.
fn newton_roots<F>(f: F, seeds: &[C64], keep: impl Fn(C64) -> bool) -> Vec<C64>
where
    F: Fn(C64) -> (C64, C64),
{
    let mut roots: Vec<C64> = Vec::new();
    for &s in seeds {
        let mut x = s;
        let mut ok = false;
        for _ in 0..200 {
            let (v, d) = f(x);
            if d.norm() == 0.0 || !v.is_finite() {
                break;
            }
            let mut step = v / d;
            if step.norm() > 0.5 {
                step *= 0.5 / step.norm();
            }
            x -= step;
            if step.norm() < 1e-15 * x.norm().max(1.0) {
                ok = true;
                break;
            }
        }
        if !ok {
            let (v, _) = f(x);
            ok = v.norm() < 1e-13;
        }
        if ok && keep(x) && !roots.iter().any(|r| (r - x).norm() < 1e-9) {
            roots.push(x);
        }
    }
    roots
}

/// Seeds over `[re_lo, re_hi] x [-im_max, im_max]` with `Im` spacing well below the root spacing.
fn seeds(theta: f64, re_lo: f64, re_hi: f64, im_max: f64) -> Vec<C64> {
    let mut out = Vec::new();
    let n_im = ((2.0 * im_max) / (0.05 / theta)).ceil() as usize;
    let n_re = 24;
    for i in 0..=n_im {
        let im = -im_max + 2.0 * im_max * i as f64 / n_im as f64;
        for r in 0..=n_re {
            let re = re_lo + (re_hi - re_lo) * r as f64 / n_re as f64;
            out.push(c(re, im));
        }
    }
    out
}

/// Branch `k` of the Lambert W function by Halley iteration from the asymptotic expansion.
pub fn lambert_w(k: i64, x: C64) -> C64 {
    let l1 = x.ln() + c(0.0, 2.0 * PI * k as f64);
    let l2 = l1.ln();
    let mut w = if k == 0 && x.norm() < 1.0 {
        x
    } else {
        l1 - l2 + l2 / l1
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        let d = ew * (w + 1.0);
        let step = f / (d - (w + 2.0) * f / (2.0 * (w + 1.0)));
        w -= step;
        if step.norm() < 1e-16 * w.norm().max(1.0) {
            break;
        }
    }
    w
}

/// Roots of `lambda = a + b exp(-lambda theta)` with `Re >= re_min`, not reduced:
/// `lambda = a + W_k(b theta exp(-a theta)) / theta` over all branches `k`.
pub fn scalar_roots(a: f64, b: f64, theta: f64, re_min: f64) -> Vec<C64> {
    let x = c(b * theta * (-a * theta).exp(), 0.0);
    let mut out = Vec::new();
    for k in 0..100_000i64 {
        let mut any = false;
        for kk in if k == 0 { vec![0] } else { vec![k, -k] } {
            let l = a + lambert_w(kk, x) / theta;
            if l.re >= re_min {
                out.push(l);
                any = true;
            }
        }
        if !any && k > 2 {
            break;
        }
    }
    out
}

/// Roots of `det(lambda I - A - B exp(-lambda theta)) = 0` for 2x2 real `A`, `B`.
pub fn matrix2_roots(a: [[f64; 2]; 2], b: [[f64; 2]; 2], theta: f64, re_min: f64) -> Vec<C64> {
    let f = |l: C64| {
        let e = (-theta * l).exp();
        let m = |i: usize, j: usize| {
            let d = if i == j { l } else { c(0.0, 0.0) };
            d - a[i][j] - b[i][j] * e
        };
        let dm = |i: usize, j: usize| {
            let d = if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) };
            d + b[i][j] * theta * e
        };
        let det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
        let ddet =
            dm(0, 0) * m(1, 1) + m(0, 0) * dm(1, 1) - dm(0, 1) * m(1, 0) - m(0, 1) * dm(1, 0);
        (det, ddet)
    };
    let na = a
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let nb = b
        .iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    // Any root with Re >= re_min obeys |lambda| <= ||A|| + ||B|| exp(-theta re_min).
    let bound = na + nb * (-theta * re_min).exp().max(1.0);
    newton_roots(
        f,
        &seeds(theta, re_min - 0.05, na + nb + 0.1, bound + 0.1),
        |x| x.re >= re_min,
    )
}

/// Asymptotic continuous spectrum of the scalar constant problem, band `m`:
/// `exp(gamma + i phi) = b exp(-2 pi i m tau) / (i (omega + 2 pi m) - a)`.
pub fn scalar_acs(a: f64, b: f64, tau: f64, m: i32, omega: f64) -> (f64, f64) {
    let w = omega + 2.0 * PI * m as f64;
    let eta = b * c(0.0, -2.0 * PI * m as f64 * tau).exp() / (c(0.0, w) - a);
    (eta.norm().ln(), eta.arg())
}
