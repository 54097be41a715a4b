//! Bare and shifted propagators of `y' = A(t) y` and the monodromy matrix.

use faer::Mat;

use crate::error::{Error, Result};
use crate::linalg::{to_complex, C64};
use crate::model::CoefficientPair;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            rtol: 1e-10,
            atol: 1e-12,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t0` through the ascending `stations`,
/// landing exactly on each one and handing the state to `visit`.
pub fn dopri<F, V>(
    mut f: F,
    t0: f64,
    y0: &[f64],
    stations: &[f64],
    settings: IntegratorSettings,
    mut visit: V,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    V: FnMut(usize, &[f64]),
{
    let dim = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; dim]; 7];
    let mut tmp = vec![0.0; dim];
    let mut ynew = vec![0.0; dim];
    f(t, &y, &mut k[0]);
    let span = stations.last().map(|s| s - t0).unwrap_or(0.0).abs();
    let mut h = (0.01 * span).max(1e-6).min(0.05);
    let mut steps = 0usize;
    for (idx, &target) in stations.iter().enumerate() {
        if target < t - 1e-14 {
            return Err(Error::Domain(format!(
                "station {target} precedes current time {t}"
            )));
        }
        while target - t > 1e-15 * target.abs().max(1.0) {
            let last = h >= target - t;
            let hs = if last { target - t } else { h };
            for i in 0..dim {
                tmp[i] = y[i] + hs * A21 * k[0][i];
            }
            f(t + C2 * hs, &tmp, &mut k[1]);
            for i in 0..dim {
                tmp[i] = y[i] + hs * (A31 * k[0][i] + A32 * k[1][i]);
            }
            f(t + C3 * hs, &tmp, &mut k[2]);
            for i in 0..dim {
                tmp[i] = y[i] + hs * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
            }
            f(t + C4 * hs, &tmp, &mut k[3]);
            for i in 0..dim {
                tmp[i] =
                    y[i] + hs * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
            }
            f(t + C5 * hs, &tmp, &mut k[4]);
            for i in 0..dim {
                tmp[i] = y[i]
                    + hs * (A61 * k[0][i]
                        + A62 * k[1][i]
                        + A63 * k[2][i]
                        + A64 * k[3][i]
                        + A65 * k[4][i]);
            }
            f(t + hs, &tmp, &mut k[5]);
            for i in 0..dim {
                ynew[i] = y[i]
                    + hs * (B1 * k[0][i]
                        + B3 * k[2][i]
                        + B4 * k[3][i]
                        + B5 * k[4][i]
                        + B6 * k[5][i]);
            }
            let tn = if last { target } else { t + hs };
            f(tn, &ynew, &mut k[6]);
            let mut err = 0.0;
            for i in 0..dim {
                let e = hs
                    * (E1 * k[0][i]
                        + E3 * k[2][i]
                        + E4 * k[3][i]
                        + E5 * k[4][i]
                        + E6 * k[5][i]
                        + E7 * k[6][i]);
                let sc = settings.atol + settings.rtol * y[i].abs().max(ynew[i].abs());
                err += (e / sc) * (e / sc);
            }
            let err = (err / dim as f64).sqrt();
            if !err.is_finite() {
                return Err(Error::Numerical(
                    "propagator integration produced a non-finite state".into(),
                ));
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                t = tn;
                std::mem::swap(&mut y, &mut ynew);
                k.swap(0, 6);
                if !last || factor < 1.0 {
                    h = hs * factor;
                }
            } else {
                h = hs * factor.min(1.0);
            }
            steps += 1;
            if steps > 10_000_000 {
                return Err(Error::Numerical("propagator step budget exhausted".into()));
            }
        }
        visit(idx, &y);
    }
    Ok(())
}

/// Integrates the real matrix equation `Y' = A(t) Y`, `Y(s) = I`, returning `Y` at each station.
fn fundamental_matrices(
    cp: &CoefficientPair,
    s: f64,
    stations: &[f64],
    settings: IntegratorSettings,
) -> Result<Vec<Mat<f64>>> {
    let n = cp.dim();
    let mut y0 = vec![0.0; n * n];
    for i in 0..n {
        y0[i * n + i] = 1.0;
    }
    let mut out = vec![Mat::<f64>::zeros(n, n); stations.len()];
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let a = cp.a.eval(t);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += a[(i, l)] * y[l * n + j];
                }
                dy[i * n + j] = acc;
            }
        }
    };
    dopri(rhs, s, &y0, stations, settings, |idx, y| {
        out[idx] = Mat::from_fn(n, n, |i, j| y[i * n + j]);
    })?;
    Ok(out)
}

/// `U_A(t, s)` by direct integration.
pub fn bare_direct(
    cp: &CoefficientPair,
    t: f64,
    s: f64,
    settings: IntegratorSettings,
) -> Result<Mat<f64>> {
    if t < s {
        return Err(Error::Domain(format!(
            "propagator requires s <= t, got s={s}, t={t}"
        )));
    }
    Ok(fundamental_matrices(cp, s, &[t], settings)?.pop().unwrap())
}

/// `U(t, s, mu)` by integrating `y' = (A(t) - mu) y` directly; independent of the cache.
pub fn shifted_direct(
    cp: &CoefficientPair,
    t: f64,
    s: f64,
    mu: C64,
    settings: IntegratorSettings,
) -> Result<Mat<C64>> {
    if t < s {
        return Err(Error::Domain(format!(
            "propagator requires s <= t, got s={s}, t={t}"
        )));
    }
    let n = cp.dim();
    let mut y0 = vec![0.0; 2 * n * n];
    for i in 0..n {
        y0[i * n + i] = 1.0;
    }
    let nn = n * n;
    let rhs = |tt: f64, y: &[f64], dy: &mut [f64]| {
        let a = cp.a.eval(tt);
        for i in 0..n {
            for j in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for l in 0..n {
                    re += a[(i, l)] * y[l * n + j];
                    im += a[(i, l)] * y[nn + l * n + j];
                }
                let (yr, yi) = (y[i * n + j], y[nn + i * n + j]);
                dy[i * n + j] = re - (mu.re * yr - mu.im * yi);
                dy[nn + i * n + j] = im - (mu.re * yi + mu.im * yr);
            }
        }
    };
    let mut out = Mat::<C64>::zeros(n, n);
    dopri(rhs, s, &y0, &[t], settings, |_, y| {
        out = Mat::from_fn(n, n, |i, j| C64::new(y[i * n + j], y[nn + i * n + j]));
    })?;
    Ok(out)
}

/// Bare propagators from each partition point `t_j` to a set of stations in `[t_j, t_{j+1}]`.
#[derive(Clone, Debug)]
pub struct PropagatorCache {
    cp: CoefficientPair,
    k: usize,
    stations: Vec<Vec<f64>>,
    tables: Vec<Vec<Mat<f64>>>,
    steps: Vec<Mat<f64>>,
    monodromy: Mat<f64>,
    settings: IntegratorSettings,
}

impl PropagatorCache {
    /// Builds the cache with only the partition points as stations.
    pub fn new(cp: &CoefficientPair, k: usize) -> Result<Self> {
        Self::build(cp, k, vec![Vec::new(); k], IntegratorSettings::default())
    }

    /// `extra[j]` lists absolute times inside `[t_j, t_{j+1}]` at which `U_A(t, t_j)` is tabulated.
    pub fn build(
        cp: &CoefficientPair,
        k: usize,
        extra: Vec<Vec<f64>>,
        settings: IntegratorSettings,
    ) -> Result<Self> {
        if k == 0 || extra.len() != k {
            return Err(Error::Config(format!(
                "partition count {k} does not match station lists"
            )));
        }
        let n = cp.dim();
        let mut stations = Vec::with_capacity(k);
        let mut tables = Vec::with_capacity(k);
        let mut steps = Vec::with_capacity(k);
        for (j, ex) in extra.into_iter().enumerate() {
            let tj = partition_point(k, j);
            let tj1 = partition_point(k, j + 1);
            let mut st: Vec<f64> = ex;
            st.push(tj);
            st.push(tj1);
            if st.iter().any(|&t| t < tj - 1e-13 || t > tj1 + 1e-13) {
                return Err(Error::Domain(format!("station outside subinterval {j}")));
            }
            st.iter_mut().for_each(|t| *t = t.clamp(tj, tj1));
            st.sort_by(|a, b| a.partial_cmp(b).unwrap());
            st.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
            let table = fundamental_matrices(cp, tj, &st, settings)?;
            steps.push(table.last().unwrap().clone());
            stations.push(st);
            tables.push(table);
        }
        let mut monodromy = Mat::<f64>::identity(n, n);
        for s in &steps {
            monodromy = s * &monodromy;
        }
        Ok(PropagatorCache {
            cp: cp.clone(),
            k,
            stations,
            tables,
            steps,
            monodromy,
            settings,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.cp.dim()
    }

    pub fn coefficients(&self) -> &CoefficientPair {
        &self.cp
    }

    pub fn settings(&self) -> IntegratorSettings {
        self.settings
    }

    /// Tabulated `U_A(t, t_j)`; `t` must be one of the stations of subinterval `j`.
    pub fn from_partition_point(&self, j: usize, t: f64) -> Option<&Mat<f64>> {
        let st = &self.stations[j];
        let idx = st.partition_point(|&x| x < t - 1e-15);
        if idx < st.len() && (st[idx] - t).abs() <= 1e-15 {
            Some(&self.tables[j][idx])
        } else {
            None
        }
    }

    /// `U_A(t_{j+1}, t_j)`.
    pub fn step(&self, j: usize) -> &Mat<f64> {
        &self.steps[j]
    }

    /// `U_A(t, s)` for `-1 <= s <= t <= 0`, from the table when `s` is a partition point.
    pub fn bare(&self, t: f64, s: f64) -> Result<Mat<f64>> {
        if t < s {
            return Err(Error::Domain(format!(
                "propagator requires s <= t, got s={s}, t={t}"
            )));
        }
        let js = ((s + 1.0) * self.k as f64).round();
        if js >= 0.0
            && (js as usize) < self.k
            && (partition_point(self.k, js as usize) - s).abs() <= 1e-15
        {
            let j = js as usize;
            if let Some(m) = self.from_partition_point(j, t) {
                return Ok(m.clone());
            }
        }
        bare_direct(&self.cp, t, s, self.settings)
    }

    /// `U(t, s, mu) = exp(-mu (t - s)) U_A(t, s)`.
    pub fn propagate(&self, t: f64, s: f64, mu: C64) -> Result<Mat<C64>> {
        if !(-1.0 - 1e-14..=1e-14).contains(&s) || !(-1.0 - 1e-14..=1e-14).contains(&t) {
            return Err(Error::Domain(format!(
                "propagator times must lie in [-1, 0], got s={s}, t={t}"
            )));
        }
        let u = self.bare(t, s)?;
        let f = (-mu * (t - s)).exp();
        Ok(Mat::from_fn(u.nrows(), u.ncols(), |i, j| f * u[(i, j)]))
    }

    pub fn monodromy(&self) -> Mat<C64> {
        to_complex(self.monodromy.as_ref())
    }

    pub fn monodromy_real(&self) -> &Mat<f64> {
        &self.monodromy
    }
}

pub fn partition_point(k: usize, j: usize) -> f64 {
    if j == k {
        0.0
    } else {
        -1.0 + j as f64 / k as f64
    }
}
