//! Model to verdict: orbit, linearization, spectra, decision and exponents.

use anyhow::{Context, Result};
use ddespec::charfun::{build_context, CharContext, CharSettings, KMode};
use ddespec::floquet::{find_exponents, FloquetInputs, FloquetSet, FloquetSettings};
use ddespec::model::{CoefficientPair, HopfExample};
use ddespec::orbit::{linearize, solve_hopf, OrbitSettings, PeriodicOrbit};
use ddespec::spectra::{
    default_omega_grid, instantaneous_spectrum, trace_acs, AcsDiscretization, AcsResult,
    AcsSettings, InstantaneousSpectrum,
};
use ddespec::verdict::{decide, StabilityVerdict, ToleranceSet};
use serde::Serialize;

use crate::model_file::ModelFile;

#[derive(Clone, Debug, Serialize)]
pub struct Options {
    pub r: f64,
    pub k_mode: KMode,
    /// Panels of the asymptotic-spectrum discretization.
    pub panels: usize,
    pub omega_points: usize,
    pub refine: bool,
    /// Overrides the `N` list of the model file when non-empty.
    pub n_values: Vec<usize>,
    pub seed: u64,
    pub tolerances: ToleranceSet,
    /// Samples of the linearized coefficients along a computed orbit.
    pub orbit_samples: usize,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            r: 3.0,
            k_mode: KMode::Adaptive,
            panels: 256,
            omega_points: 512,
            refine: true,
            n_values: Vec::new(),
            seed: 0,
            tolerances: ToleranceSet::default(),
            orbit_samples: 256,
        }
    }
}

impl Options {
    pub fn char_settings(&self) -> CharSettings {
        CharSettings {
            r: self.r,
            mode: self.k_mode,
            ..CharSettings::default()
        }
    }

    pub fn acs_settings(&self) -> AcsSettings {
        AcsSettings {
            panels: self.panels,
            omega_points: self.omega_points,
            refine: self.refine,
            tol_axis: self.tolerances.axis,
            ..AcsSettings::default()
        }
    }

    pub fn n_list(&self, model: &ModelFile) -> Vec<usize> {
        if self.n_values.is_empty() {
            model.n_values().to_vec()
        } else {
            self.n_values.clone()
        }
    }
}

/// The periodic linear problem handed to the spectral stages.
#[derive(Clone, Debug)]
pub struct Problem {
    pub coefficients: CoefficientPair,
    pub tau: f64,
    /// Extra whole delay periods; `N` periods of delay become `N + shift` in the spectral problem.
    pub shift: usize,
    pub orbit: Option<PeriodicOrbit>,
    pub model: Option<HopfExample>,
}

impl Problem {
    pub fn spectral_n(&self, n: usize) -> usize {
        n + self.shift
    }

    pub fn theta(&self, n: usize) -> f64 {
        self.spectral_n(n) as f64 + self.tau
    }

    pub fn is_autonomous(&self) -> bool {
        self.orbit.is_some()
    }
}

pub fn solve_builtin_orbit(model: &HopfExample) -> Result<PeriodicOrbit> {
    solve_hopf(model, &OrbitSettings::default()).context("orbit stage")
}

pub fn problem_from_orbit(
    model: &HopfExample,
    orbit: PeriodicOrbit,
    samples: usize,
) -> Result<Problem> {
    let lin = linearize(model, &orbit, samples).context("linearization stage")?;
    Ok(Problem {
        coefficients: lin.coefficients,
        tau: lin.tau,
        shift: lin.shift,
        orbit: Some(orbit),
        model: Some(*model),
    })
}

pub fn prepare(model: &ModelFile, opts: &Options) -> Result<Problem> {
    match model {
        ModelFile::Linear { tau, .. } => Ok(Problem {
            coefficients: model.coefficients().context("model stage")?,
            tau: *tau,
            shift: 0,
            orbit: None,
            model: None,
        }),
        ModelFile::NonlinearBuiltin { .. } => {
            let hopf = model.builtin().expect("builtin model");
            let orbit = solve_builtin_orbit(&hopf)?;
            problem_from_orbit(&hopf, orbit, opts.orbit_samples)
        }
    }
}

pub struct Analysis {
    pub ctx: CharContext,
    pub instantaneous: InstantaneousSpectrum,
    /// Absent when the instantaneous spectrum touches the imaginary axis.
    pub acs: Option<AcsResult>,
    pub verdict: StabilityVerdict,
}

pub fn analyze(problem: &Problem, opts: &Options) -> Result<Analysis> {
    opts.tolerances.validate().context("configuration")?;
    let ctx = build_context(&problem.coefficients, problem.tau, &opts.char_settings())
        .context("characteristic function stage")?;
    let instantaneous =
        instantaneous_spectrum(ctx.cache()).context("instantaneous spectrum stage")?;
    let acs = if instantaneous.max_re().abs() <= opts.tolerances.axis {
        None
    } else {
        let disc = AcsDiscretization::new(&problem.coefficients, problem.tau, opts.panels)
            .context("asymptotic spectrum stage")?;
        let grid = default_omega_grid(opts.omega_points);
        Some(
            trace_acs(&ctx, &disc, &grid, &opts.acs_settings())
                .context("asymptotic spectrum stage")?,
        )
    };
    let verdict =
        decide(&instantaneous, acs.as_ref(), &ctx, &opts.tolerances).context("verdict stage")?;
    Ok(Analysis {
        ctx,
        instantaneous,
        acs,
        verdict,
    })
}

pub fn floquet_settings(problem: &Problem, opts: &Options) -> FloquetSettings {
    FloquetSettings {
        trivial: problem.is_autonomous(),
        tol_axis: opts.tolerances.axis,
        ..FloquetSettings::default()
    }
}

/// Exponent sets for each requested `N`, paired with that `N`.
pub fn exponents(
    problem: &Problem,
    analysis: &Analysis,
    n_values: &[usize],
    opts: &Options,
) -> Result<Vec<(usize, FloquetSet)>> {
    let curves = analysis
        .acs
        .as_ref()
        .map(|a| a.curves.as_slice())
        .unwrap_or(&[]);
    let inputs = FloquetInputs {
        curves,
        instantaneous: &analysis.instantaneous,
    };
    let settings = floquet_settings(problem, opts);
    n_values
        .iter()
        .map(|&n| {
            let set = find_exponents(&analysis.ctx, problem.spectral_n(n), &inputs, &settings)
                .with_context(|| format!("floquet stage (N = {n})"))?;
            Ok((n, set))
        })
        .collect()
}
