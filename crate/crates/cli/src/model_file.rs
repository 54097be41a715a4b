//! Model description files.
//!
//! ```json
//! { "kind": "linear", "n": 1, "tau": 0.3, "A": -1.0, "B": 0.5, "N": [10, 20] }
//! { "kind": "nonlinear_builtin", "alpha": -0.10779, "coupling": 1.0, "tau_base": 1.081, "N": [25] }
//! ```
//!
//! `A` and `B` accept a number (times the identity), a nested array (constant
//! matrix), `{"constant": M}`, `{"fourier": {"mean": M, "cos": [M..], "sin": [M..]}}`
//! or `{"samples": [M..]}` with samples on `t_i = -1 + i/len`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use ddespec::model::{builtin_hopf_example, CoefficientPair, HopfExample, MatrixProvider};
use faer::Mat;
use serde::{Deserialize, Serialize};

pub type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSpec {
    pub mean: Rows,
    #[serde(default)]
    pub cos: Vec<Rows>,
    #[serde(default)]
    pub sin: Vec<Rows>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Matrix(Rows),
    Constant { constant: Rows },
    Fourier { fourier: FourierSpec },
    Samples { samples: Vec<Rows> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelFile {
    Linear {
        #[serde(default)]
        n: Option<usize>,
        tau: f64,
        #[serde(rename = "A")]
        a: MatrixSpec,
        #[serde(rename = "B")]
        b: MatrixSpec,
        #[serde(rename = "N", default)]
        n_values: Vec<usize>,
    },
    NonlinearBuiltin {
        alpha: f64,
        coupling: f64,
        tau_base: f64,
        #[serde(rename = "N", default)]
        n_values: Vec<usize>,
    },
}

/// A parsed model file together with its verbatim text.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub text: String,
    pub model: ModelFile,
}

pub fn load(path: &Path) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model file {}", path.display()))?;
    let model = parse(&text).with_context(|| format!("parsing model file {}", path.display()))?;
    Ok(LoadedModel { text, model })
}

pub fn parse(text: &str) -> Result<ModelFile> {
    let model: ModelFile = serde_json::from_str(text)?;
    model.validate()?;
    Ok(model)
}

fn to_mat(rows: &Rows, n: usize, what: &str) -> Result<Mat<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        bail!("{what} must be a {n} x {n} matrix");
    }
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

impl MatrixSpec {
    /// Dimension implied by this entry, if any.
    fn dim(&self) -> Option<usize> {
        match self {
            MatrixSpec::Scalar(_) => None,
            MatrixSpec::Matrix(m) | MatrixSpec::Constant { constant: m } => Some(m.len()),
            MatrixSpec::Fourier { fourier } => Some(fourier.mean.len()),
            MatrixSpec::Samples { samples } => samples.first().map(|s| s.len()),
        }
    }

    pub fn provider(&self, n: usize, what: &str) -> Result<MatrixProvider> {
        let p = match self {
            MatrixSpec::Scalar(x) => {
                MatrixProvider::constant(Mat::from_fn(n, n, |i, j| if i == j { *x } else { 0.0 }))?
            }
            MatrixSpec::Matrix(m) | MatrixSpec::Constant { constant: m } => {
                MatrixProvider::constant(to_mat(m, n, what)?)?
            }
            MatrixSpec::Fourier { fourier } => {
                let cos = fourier
                    .cos
                    .iter()
                    .map(|m| to_mat(m, n, what))
                    .collect::<Result<Vec<_>>>()?;
                let sin = fourier
                    .sin
                    .iter()
                    .map(|m| to_mat(m, n, what))
                    .collect::<Result<Vec<_>>>()?;
                MatrixProvider::fourier(to_mat(&fourier.mean, n, what)?, cos, sin)?
            }
            MatrixSpec::Samples { samples } => MatrixProvider::samples(
                samples
                    .iter()
                    .map(|m| to_mat(m, n, what))
                    .collect::<Result<Vec<_>>>()?,
            )?,
        };
        Ok(p)
    }
}

impl ModelFile {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelFile::Linear { tau, n_values, .. } => {
                if !(0.0..1.0).contains(tau) {
                    bail!("tau = {tau} must lie in [0, 1)");
                }
                if n_values.contains(&0) {
                    bail!("every N must be at least 1");
                }
                self.coefficients()?;
            }
            ModelFile::NonlinearBuiltin {
                alpha,
                coupling,
                tau_base,
                n_values,
            } => {
                if ![*alpha, *coupling, *tau_base].iter().all(|x| x.is_finite()) {
                    bail!("builtin parameters must be finite");
                }
                if !(*tau_base >= 0.0) {
                    bail!("tau_base = {tau_base} must be non-negative");
                }
                if n_values.contains(&0) {
                    bail!("every N must be at least 1");
                }
            }
        }
        Ok(())
    }

    pub fn n_values(&self) -> &[usize] {
        match self {
            ModelFile::Linear { n_values, .. } | ModelFile::NonlinearBuiltin { n_values, .. } => {
                n_values
            }
        }
    }

    /// Coefficient pair of a linear model.
    pub fn coefficients(&self) -> Result<CoefficientPair> {
        let ModelFile::Linear { n, a, b, .. } = self else {
            bail!("the model is not linear");
        };
        let dim = match (n, a.dim(), b.dim()) {
            (Some(n), _, _) => *n,
            (None, Some(d), _) | (None, None, Some(d)) => d,
            (None, None, None) => 1,
        };
        if dim == 0 {
            bail!("the dimension must be positive");
        }
        Ok(CoefficientPair::new(
            a.provider(dim, "A")?,
            b.provider(dim, "B")?,
        )?)
    }

    pub fn builtin(&self) -> Option<HopfExample> {
        match self {
            ModelFile::NonlinearBuiltin {
                alpha,
                coupling,
                tau_base,
                ..
            } => Some(builtin_hopf_example(*alpha, *coupling, *tau_base)),
            ModelFile::Linear { .. } => None,
        }
    }
}
