//! Node sets, quadrature rules and interpolation weights on the unit interval.

use std::f64::consts::PI;

/// Chebyshev-Lobatto points `(1 - cos(pi m / p)) / 2`, ascending on `[0, 1]`.
pub fn chebyshev_lobatto(p: usize) -> Vec<f64> {
    assert!(p >= 1);
    (0..=p)
        .map(|m| {
            if m == 0 {
                0.0
            } else if m == p {
                1.0
            } else {
                0.5 * (1.0 - (PI * m as f64 / p as f64).cos())
            }
        })
        .collect()
}

/// Barycentric weights of the Chebyshev-Lobatto points (common factors dropped).
pub fn lobatto_bary_weights(p: usize) -> Vec<f64> {
    (0..=p)
        .map(|m| {
            let s = if m % 2 == 0 { 1.0 } else { -1.0 };
            if m == 0 || m == p {
                0.5 * s
            } else {
                s
            }
        })
        .collect()
}

/// Barycentric Lagrange basis values `l_m(u)` for nodes `xs` with weights `ws`.
pub fn bary_row(xs: &[f64], ws: &[f64], u: f64, out: &mut [f64]) {
    for (m, &x) in xs.iter().enumerate() {
        if (u - x).abs() < 1e-15 {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[m] = 1.0;
            return;
        }
    }
    let mut denom = 0.0;
    for m in 0..xs.len() {
        let t = ws[m] / (u - xs[m]);
        out[m] = t;
        denom += t;
    }
    out.iter_mut().for_each(|o| *o /= denom);
}

/// Clenshaw-Curtis rule of degree `q` (q+1 points) on `[0, 1]`, nodes ascending.
pub fn clenshaw_curtis(q: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(q >= 1);
    let nf = q as f64;
    let theta: Vec<f64> = (0..=q).map(|k| PI * k as f64 / nf).collect();
    let mut w = vec![0.0; q + 1];
    let mut v = vec![1.0; q.saturating_sub(1)];
    if q % 2 == 0 {
        w[0] = 1.0 / (nf * nf - 1.0);
        w[q] = w[0];
        for k in 1..q / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * k as f64 * theta[i + 1]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
        for (i, vi) in v.iter_mut().enumerate() {
            *vi -= (nf * theta[i + 1]).cos() / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
        w[q] = w[0];
        for k in 1..=(q - 1) / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * k as f64 * theta[i + 1]).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
    }
    for i in 1..q {
        w[i] = 2.0 * v[i - 1] / nf;
    }
    let nodes = chebyshev_lobatto(q);
    let weights = w.iter().map(|x| 0.5 * x).collect();
    (nodes, weights)
}

/// Gauss-Legendre rule with `m` points on `[0, 1]`, nodes ascending.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(m, x);
        if d != 0.0 {
            dp = d;
        }
        nodes[m - 1 - i] = 0.5 * (1.0 - x);
        weights[m - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    // Newton above runs on [-1, 1] from the largest root down; map to ascending [0, 1].
    let mut pairs: Vec<(f64, f64)> = nodes.into_iter().zip(weights).collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

fn legendre(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Lagrange basis values and first derivatives on arbitrary distinct nodes.
pub fn lagrange_with_derivative(xs: &[f64], u: f64, val: &mut [f64], der: &mut [f64]) {
    let n = xs.len();
    for j in 0..n {
        let mut l = 1.0;
        let mut dl = 0.0;
        for m in 0..n {
            if m == j {
                continue;
            }
            let inv = 1.0 / (xs[j] - xs[m]);
            dl = dl * (u - xs[m]) * inv + l * inv;
            l *= (u - xs[m]) * inv;
        }
        val[j] = l;
        der[j] = dl;
    }
}
