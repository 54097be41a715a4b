//! CSV and JSON artifacts. Floats carry 17 significant digits.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use ddespec::floquet::FloquetSet;
use ddespec::spectra::AcsResult;
use serde::Serialize;

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub struct CsvWriter {
    out: BufWriter<File>,
}

impl CsvWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = CsvWriter {
            out: BufWriter::new(file),
        };
        w.row(header.iter().map(|s| s.to_string()))?;
        Ok(w)
    }

    pub fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) -> Result<()> {
        let line: Vec<String> = fields.into_iter().collect();
        writeln!(self.out, "{}", line.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Columns `omega, gamma, phi, branch_id, critical`, ordered by branch then `omega`.
pub fn write_acs(path: &Path, acs: Option<&AcsResult>) -> Result<()> {
    let mut w = CsvWriter::create(path, &["omega", "gamma", "phi", "branch_id", "critical"])?;
    for curve in acs.map(|a| a.curves.as_slice()).unwrap_or(&[]) {
        for s in &curve.samples {
            w.row([
                num(s.omega),
                num(s.gamma),
                num(s.phi),
                curve.branch_id.to_string(),
                curve.critical.to_string(),
            ])?;
        }
    }
    w.finish()
}

/// Columns `N, theta, re, im, multiplicity, source, residual`.
pub fn write_floquet(path: &Path, sets: &[(usize, FloquetSet)]) -> Result<()> {
    let mut w = CsvWriter::create(
        path,
        &[
            "N",
            "theta",
            "re",
            "im",
            "multiplicity",
            "source",
            "residual",
        ],
    )?;
    for (n, set) in sets {
        for e in &set.exponents {
            w.row([
                n.to_string(),
                num(set.theta),
                num(e.re),
                num(e.im),
                e.multiplicity.to_string(),
                e.source.label().to_string(),
                num(e.residual),
            ])?;
        }
    }
    w.finish()
}

/// Band predictions with the distance to the nearest exponent found.
pub fn write_predictions(path: &Path, sets: &[(usize, FloquetSet)]) -> Result<()> {
    let header = [
        "N",
        "branch_id",
        "k",
        "omega_k",
        "gamma_k",
        "re",
        "im",
        "nearest_re",
        "nearest_im",
        "delta",
    ];
    let mut w = CsvWriter::create(path, &header)?;
    for (n, set) in sets {
        for p in &set.predictions {
            let nearest = set.exponents.iter().min_by(|a, b| {
                let da = ddespec::floquet::periodic_distance(a.mu(), p.mu());
                let db = ddespec::floquet::periodic_distance(b.mu(), p.mu());
                da.partial_cmp(&db).unwrap()
            });
            let (nre, nim, d) = match nearest {
                Some(e) => (
                    e.re,
                    e.im,
                    ddespec::floquet::periodic_distance(e.mu(), p.mu()),
                ),
                None => (f64::NAN, f64::NAN, f64::NAN),
            };
            w.row([
                n.to_string(),
                p.branch_id.to_string(),
                p.k.to_string(),
                num(p.omega_k),
                num(p.gamma_k),
                num(p.re),
                num(p.im),
                num(nre),
                num(nim),
                num(d),
            ])?;
        }
    }
    w.finish()
}
