//! Subcommands of the `ddespec` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ddespec::charfun::KMode;
use ddespec::orbit::{continue_branch, OrbitSettings};
use ddespec::steps::{
    default_steps_per_unit, integrate_linear, integrate_nonlinear, linear_fit, random_history,
    StepSettings,
};
use ddespec::verdict::ToleranceSet;
use serde::Serialize;
use serde_json::json;

use crate::model_file::{self, LoadedModel};
use crate::output::{num, write_acs, write_floquet, write_json, write_predictions, CsvWriter};
use crate::pipeline::{self, Options, Problem};
use crate::selftest::{run_selftest, SelftestOptions, Status};

#[derive(Debug, Parser)]
#[command(
    name = "ddespec",
    version,
    about = "Floquet spectra and stability of periodic solutions of DDEs with large delay"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Worker threads for parallel loops (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectra and stability verdict.
    Analyze(RunArgs),
    /// Periodic orbit of the builtin model, optionally continued in the delay.
    Orbit(OrbitArgs),
    /// Floquet exponents for each N with audits.
    Floquet(RunArgs),
    /// Direct simulation and measured growth rate.
    Simulate(SimulateArgs),
    /// Oracle and invariant suite.
    Selftest(SelftestArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NumericArgs {
    /// Margin of the validity strip.
    #[arg(long = "R", default_value_t = 3.0)]
    pub r: f64,
    /// Partition-count rule: guaranteed or adaptive.
    #[arg(long = "k-mode", default_value = "adaptive")]
    pub k_mode: KMode,
    /// Panels of the asymptotic-spectrum discretization.
    #[arg(long = "M", default_value_t = 256)]
    pub panels: usize,
    #[arg(long = "omega-points", default_value_t = 512)]
    pub omega_points: usize,
    /// Skip adaptive omega refinement.
    #[arg(long = "no-refine")]
    pub no_refine: bool,
    /// Delay shifts (repeatable); replaces the model file's list.
    #[arg(long = "N")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "tol-axis", default_value_t = 1e-6)]
    pub tol_axis: f64,
    #[arg(long = "tol-nondeg", default_value_t = 1e-8)]
    pub tol_nondeg: f64,
    #[arg(long = "tol-crit", default_value_t = 1e-4)]
    pub tol_crit: f64,
    #[arg(long = "tol-margin", default_value_t = 1e-6)]
    pub tol_margin: f64,
    #[arg(long = "tol-curv", default_value_t = 1e-6)]
    pub tol_curv: f64,
    /// Samples of the linearized coefficients along a computed orbit.
    #[arg(long = "orbit-samples", default_value_t = 256)]
    pub orbit_samples: usize,
}

impl NumericArgs {
    pub fn options(&self) -> Options {
        Options {
            r: self.r,
            k_mode: self.k_mode,
            panels: self.panels,
            omega_points: self.omega_points,
            refine: !self.no_refine,
            n_values: self.n.clone(),
            seed: self.seed,
            tolerances: ToleranceSet {
                axis: self.tol_axis,
                nondeg: self.tol_nondeg,
                crit: self.tol_crit,
                margin: self.tol_margin,
                curv: self.tol_curv,
            },
            orbit_samples: self.orbit_samples,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RunArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub numerics: NumericArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct OrbitArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue the orbit in the base delay up to this value.
    #[arg(long = "tau-end")]
    pub tau_end: Option<f64>,
    /// Largest continuation step.
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long, default_value_t = 40)]
    pub intervals: usize,
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Integrate the full nonlinear system near the orbit instead of the linear equation.
    #[arg(long)]
    pub nonlinear: bool,
    /// Horizon in units of the total delay `N + tau`.
    #[arg(long, default_value_t = 60.0)]
    pub horizon: f64,
    /// Track `x(t) - x(t - 1)` to remove the trivial mode (default: on for orbit linearizations).
    #[arg(long)]
    pub deflate: Option<bool>,
    #[arg(long = "steps-per-unit")]
    pub steps_per_unit: Option<usize>,
    #[arg(long = "samples-per-unit", default_value_t = 4)]
    pub samples_per_unit: usize,
    /// Initial distance from the orbit in nonlinear runs.
    #[arg(long, default_value_t = 1e-6)]
    pub perturbation: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelftestArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Force the partition count below C(R) in guaranteed mode.
    #[arg(long = "inject-fault")]
    pub inject_fault: bool,
    /// Divide every threshold by this factor and list the checks that become marginal.
    #[arg(long, default_value_t = 1.0)]
    pub tighten: f64,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: &Command) -> Result<i32> {
    match command {
        Command::Analyze(args) => analyze(args),
        Command::Orbit(args) => orbit(args),
        Command::Floquet(args) => floquet(args),
        Command::Simulate(args) => simulate(args),
        Command::Selftest(args) => selftest(args),
    }
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))
}

fn echo_config<T: Serialize>(
    out: &Path,
    command: &str,
    model_path: &Path,
    model: &LoadedModel,
    args: &T,
    opts: Option<&Options>,
) -> Result<()> {
    let value = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "model_file": model_path.display().to_string(),
        "model_text": model.text,
        "model": model.model,
        "arguments": args,
        "options": opts,
    });
    write_json(&out.join("config.json"), &value)
}

fn load_problem(args: &RunArgs) -> Result<(LoadedModel, Options, Problem)> {
    let model = model_file::load(&args.model)?;
    let opts = args.numerics.options();
    opts.tolerances.validate().context("configuration")?;
    let problem = pipeline::prepare(&model.model, &opts)?;
    Ok((model, opts, problem))
}

fn write_orbit_files(out: &Path, orbit: &ddespec::orbit::PeriodicOrbit) -> Result<()> {
    write_json(&out.join("orbit.json"), orbit)?;
    let header: Vec<String> = std::iter::once("s".to_string())
        .chain((0..orbit.dim).map(|i| format!("x{i}")))
        .collect();
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut w = CsvWriter::create(&out.join("orbit.csv"), &header)?;
    let samples = 512;
    for i in 0..samples {
        let s = -1.0 + i as f64 / samples as f64;
        w.row(std::iter::once(num(s)).chain(orbit.eval(s).into_iter().map(num)))?;
    }
    w.finish()
}

fn analyze(args: &RunArgs) -> Result<i32> {
    prepare_out(&args.out)?;
    let (model, opts, problem) = load_problem(args)?;
    echo_config(&args.out, "analyze", &args.model, &model, args, Some(&opts))?;
    if let Some(orbit) = &problem.orbit {
        write_orbit_files(&args.out, orbit)?;
    }
    let analysis = pipeline::analyze(&problem, &opts)?;
    write_acs(&args.out.join("acs.csv"), analysis.acs.as_ref())?;
    let strong = ddespec::spectra::strongly_unstable(&analysis.instantaneous, opts.tolerances.axis);
    write_json(
        &args.out.join("instantaneous.json"),
        &json!({
            "points": analysis.instantaneous.points,
            "distance_to_axis": analysis.instantaneous.distance_to_axis,
            "strongly_unstable": strong,
            "k": analysis.ctx.k(),
            "k_mode": analysis.ctx.mode(),
            "tau": problem.tau,
            "shift": problem.shift,
        }),
    )?;
    write_json(&args.out.join("verdict.json"), &analysis.verdict)?;
    let v = &analysis.verdict;
    println!(
        "verdict: {:?} (S-1 {:?}, S-2 {:?}, S-3 {:?}, sup gamma {:.6e}, flags {:?})",
        v.overall,
        v.s1_no_strong_instability.state,
        v.s2_nondegeneracy.state,
        v.s3_weak_stability.state,
        v.s3_weak_stability.sup_gamma,
        v.degeneracy_flags
    );
    Ok(v.overall.exit_code())
}

fn orbit(args: &OrbitArgs) -> Result<i32> {
    prepare_out(&args.out)?;
    let model = model_file::load(&args.model)?;
    let Some(hopf) = model.model.builtin() else {
        bail!("the orbit command needs a nonlinear model");
    };
    echo_config(&args.out, "orbit", &args.model, &model, args, None)?;
    let settings = OrbitSettings {
        intervals: args.intervals,
        degree: args.degree,
        ..OrbitSettings::default()
    };
    let orbit = ddespec::orbit::solve_hopf(&hopf, &settings).context("orbit stage")?;
    write_orbit_files(&args.out, &orbit)?;
    println!(
        "period {:.15} amplitude {:.6} residual {:.3e}",
        orbit.period,
        orbit.amplitude(),
        orbit.residual
    );
    if let Some(tau_end) = args.tau_end {
        let branch = continue_branch(&hopf, &orbit, tau_end, args.step, &settings)
            .context("continuation stage")?;
        let mut w = CsvWriter::create(
            &args.out.join("branch.csv"),
            &[
                "tau_base",
                "period",
                "dT_dtau",
                "amplitude",
                "rescaled_tau",
                "residual",
            ],
        )?;
        for p in &branch.points {
            w.row([
                num(p.tau_base),
                num(p.orbit.period),
                num(p.dt_dtau),
                num(p.orbit.amplitude()),
                num(p.orbit.rescaled_tau),
                num(p.orbit.residual),
            ])?;
        }
        w.finish()?;
        if let Some(reason) = &branch.end_reason {
            println!("continuation stopped early: {reason}");
        }
        println!("branch: {} points", branch.points.len());
    }
    Ok(0)
}

#[derive(Serialize)]
struct FloquetReport {
    n: usize,
    spectral_n: usize,
    theta: f64,
    exponents: usize,
    audits: Vec<ddespec::floquet::Audit>,
    audits_pass: bool,
    strong: Vec<ddespec::floquet::StrongExponent>,
    max_band_error: f64,
    unconverged_seeds: usize,
}

fn floquet(args: &RunArgs) -> Result<i32> {
    prepare_out(&args.out)?;
    let (model, opts, problem) = load_problem(args)?;
    echo_config(&args.out, "floquet", &args.model, &model, args, Some(&opts))?;
    let n_values = opts.n_list(&model.model);
    if n_values.is_empty() {
        bail!("no N given: add \"N\" to the model file or pass --N");
    }
    let analysis = pipeline::analyze(&problem, &opts)?;
    write_acs(&args.out.join("acs.csv"), analysis.acs.as_ref())?;
    write_json(&args.out.join("verdict.json"), &analysis.verdict)?;
    let sets = pipeline::exponents(&problem, &analysis, &n_values, &opts)?;
    write_floquet(&args.out.join("floquet.csv"), &sets)?;
    write_predictions(&args.out.join("predictions.csv"), &sets)?;
    let reports: Vec<FloquetReport> = sets
        .iter()
        .map(|(n, s)| FloquetReport {
            n: *n,
            spectral_n: s.n,
            theta: s.theta,
            exponents: s.exponents.len(),
            audits: s.audits.clone(),
            audits_pass: s.audits_pass(),
            strong: s.strong.clone(),
            max_band_error: s.max_band_error(),
            unconverged_seeds: s.unconverged_seeds,
        })
        .collect();
    let ratios: Vec<_> = sets
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].1.max_band_error(), w[1].1.max_band_error());
            json!({ "from": w[0].0, "to": w[1].0, "band_error_ratio": a / b })
        })
        .collect();
    let all_pass = reports.iter().all(|r| r.audits_pass);
    write_json(
        &args.out.join("audit.json"),
        &json!({ "sets": reports, "band_error_ratios": ratios, "audits_pass": all_pass }),
    )?;
    for r in &reports {
        println!(
            "N = {}: {} exponents, audits {}, max band error {:.3e}",
            r.n,
            r.exponents,
            if r.audits_pass { "pass" } else { "FAIL" },
            r.max_band_error
        );
    }
    if all_pass {
        Ok(0)
    } else {
        eprintln!("audit mismatch: see audit.json");
        Ok(1)
    }
}

#[derive(Serialize)]
struct GrowthRecord {
    n: usize,
    spectral_n: usize,
    theta: f64,
    /// Per unit of rescaled time (one orbit period for nonlinear models).
    dominant_rate: f64,
    dominant_frequency: Option<f64>,
    fit_residual: f64,
    windows: usize,
    reliable: bool,
    overflow: bool,
    period: f64,
}

fn simulate(args: &SimulateArgs) -> Result<i32> {
    let run = &args.run;
    prepare_out(&run.out)?;
    let (model, opts, problem) = load_problem(run)?;
    echo_config(&run.out, "simulate", &run.model, &model, args, Some(&opts))?;
    let n_values = opts.n_list(&model.model);
    if n_values.is_empty() {
        bail!("no N given: add \"N\" to the model file or pass --N");
    }
    if !(args.horizon > 0.0) {
        bail!("the horizon must be positive");
    }
    let period = problem.orbit.as_ref().map(|o| o.period).unwrap_or(1.0);
    let dim = problem.coefficients.dim();
    let mut header = vec![
        "N".to_string(),
        "t".to_string(),
        if args.nonlinear {
            "distance"
        } else {
            "log_norm"
        }
        .to_string(),
    ];
    header.extend((0..dim).map(|i| format!("x{i}")));
    let header: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut traj = CsvWriter::create(&run.out.join("trajectory.csv"), &header)?;
    let mut records = Vec::new();
    for &n in &n_values {
        let spectral_n = problem.spectral_n(n);
        let theta = problem.theta(n);
        if args.nonlinear {
            let (Some(hopf), Some(orbit)) = (problem.model.as_ref(), problem.orbit.as_ref()) else {
                bail!("--nonlinear needs a nonlinear model");
            };
            let steps = args.steps_per_unit.unwrap_or(1024);
            let samples = args.samples_per_unit.max(1);
            let horizon = args.horizon * theta;
            let res = integrate_nonlinear(
                hopf,
                orbit,
                n,
                args.perturbation,
                opts.seed,
                horizon,
                steps,
                samples,
            )
            .context("simulation stage")?;
            for ((t, d), x) in res.t.iter().zip(&res.distance).zip(&res.x) {
                traj.row(
                    [n.to_string(), num(*t), num(*d)]
                        .into_iter()
                        .chain(x.iter().map(|v| num(*v))),
                )?;
            }
            let windows = (horizon / theta).floor() as usize;
            let maxima: Vec<(f64, f64)> = (1..windows)
                .map(|w| {
                    let (lo, hi) = (w as f64 * theta * period, (w + 1) as f64 * theta * period);
                    ((w as f64 + 0.5) * theta, res.max_distance(lo, hi).ln())
                })
                .filter(|(_, l)| l.is_finite())
                .collect();
            let tail = &maxima[maxima.len() / 2..];
            let (slope, rms) = linear_fit(tail);
            records.push(GrowthRecord {
                n,
                spectral_n,
                theta,
                dominant_rate: slope,
                dominant_frequency: None,
                fit_residual: rms,
                windows: tail.len(),
                reliable: tail.len() >= 3 && rms <= 0.1,
                overflow: res.overflow,
                period,
            });
        } else {
            let cp = &problem.coefficients;
            let q = args
                .steps_per_unit
                .unwrap_or_else(|| default_steps_per_unit(cp));
            let history = random_history(dim, 1.0 / q as f64, theta, 1.0, opts.seed);
            let settings = StepSettings {
                steps_per_unit: Some(q),
                deflate: args.deflate.unwrap_or(problem.is_autonomous()),
                samples_per_unit: args.samples_per_unit,
            };
            let res = integrate_linear(
                cp,
                problem.tau,
                spectral_n,
                &history,
                args.horizon * theta,
                &settings,
            )
            .context("simulation stage")?;
            let tr = &res.trajectory;
            for ((t, l), x) in tr.t.iter().zip(&tr.log_norm).zip(&tr.x) {
                traj.row(
                    [n.to_string(), num(*t), num(*l)]
                        .into_iter()
                        .chain(x.iter().map(|v| num(*v))),
                )?;
            }
            let g = res.growth;
            records.push(GrowthRecord {
                n,
                spectral_n,
                theta,
                dominant_rate: g.dominant_rate,
                dominant_frequency: Some(g.dominant_frequency),
                fit_residual: g.fit_residual,
                windows: g.windows,
                reliable: g.reliable,
                overflow: res.overflow,
                period,
            });
        }
    }
    traj.finish()?;
    write_json(&run.out.join("growth.json"), &records)?;
    for r in &records {
        println!(
            "N = {}: rate {:.6e} per period{}",
            r.n,
            r.dominant_rate,
            if r.reliable { "" } else { " (unreliable fit)" }
        );
    }
    Ok(0)
}

fn selftest(args: &SelftestArgs) -> Result<i32> {
    let report = run_selftest(&SelftestOptions {
        seed: args.seed,
        inject_fault: args.inject_fault,
        tighten: args.tighten,
    });
    for c in &report.checks {
        let status = match c.status {
            Status::Pass => "pass",
            Status::Marginal => "marginal",
            Status::Fail => "FAIL",
        };
        println!(
            "{status:>8}  {:<28} value {:.3e}  threshold {:.3e}  ({:.1} s)",
            c.name, c.value, c.threshold, c.seconds
        );
        if let Some(e) = &c.error {
            println!("          {e}");
        }
    }
    if !report.marginal.is_empty() {
        println!(
            "marginal at {}x tightening: {}",
            report.tighten,
            report.marginal.join(", ")
        );
    }
    if let Some(out) = &args.out {
        prepare_out(out)?;
        write_json(&out.join("selftest.json"), &report)?;
    }
    Ok(if report.passed { 0 } else { 1 })
}
