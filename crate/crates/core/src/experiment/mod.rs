//! Experiment runner: builds the model an [`ExperimentConfig`] describes,
//! runs the selected propagators for every step size and writes CSV/JSON.
//!
//! Output layout (all inside the output directory):
//!
//! * `<method>_h<h>.csv`: `t,mean,var` per method and step size
//! * `comparison_h<h>.csv`: `t,std_<method>...` (nonlinear, bifurcation)
//! * `terminal_histogram_h<h>.csv`: `bin_lo,bin_hi,count` (bifurcation)
//! * `raw_h<h>.csv`: `field_id,x0_id,t,x` with `--dump-raw`
//! * `convergence.csv`: `h,mean_error,var_error` (convergence)
//! * `dataset.csv`, `summary.json`, `manifest.json`

mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

pub use config::{
    DatasetConfig, ExperimentConfig, ExperimentKind, HistogramSettings, InitialDist, LinearParams, McSettings,
    MethodName,
};
pub use output::{fmt_float, step_label, OutputDir};

use crate::error::{Error, Result};
use crate::gp::{linspace, GpPosterior, KernelConfig, TrainingSet};
use crate::integrate::{integrate, Integrator};
use crate::linear::{self, LinearModelDist};
use crate::mc::{ensemble_run, histogram, write_raw_csv};
use crate::model::LinearEmbedding;
use crate::moments::mm_trajectory;
use crate::pull::{pull_trajectory, TruncationPolicy};
use crate::rng;
use crate::state::{step_count, GaussianState, Method, TrajectoryDistribution};

/// Version string recorded in manifests.
pub const VERSION: &str = match option_env!("PULLODE_GIT_DESCRIBE") {
    Some(v) => v,
    None => concat!("v", env!("CARGO_PKG_VERSION")),
};

/// Start of the window over which variance errors against MC are measured.
pub const VAR_ERROR_WINDOW_START: f64 = 0.5;

/// Initial distribution of the reference band the bifurcation run is
/// compared against.
pub const NONLINEAR_INITIAL: GaussianState<f64> = GaussianState { mean: 0.6, var: 0.005 };

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub paper_scale: bool,
    pub dump_raw: bool,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.output = dir.clone();
        }
        if self.paper_scale {
            cfg.use_paper_scale();
        }
    }
}

/// One propagated trajectory distribution.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: Method,
    pub h: f64,
    pub trajectory: TrajectoryDistribution<f64>,
    /// MC runs only.
    pub terminal_states: Option<Vec<f64>>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub h: f64,
    pub mean_error: f64,
    pub var_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

/// Everything a run produced, in memory.
#[derive(Debug)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub runs: Vec<MethodRun>,
    pub convergence: Vec<ConvergenceRow>,
    /// Terminal-state histogram per step size (bifurcation).
    pub histograms: Vec<(f64, Vec<HistogramRow>)>,
    pub summary: serde_json::Value,
}

impl RunReport {
    pub fn run(&self, method: Method, h: f64) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method && r.h == h)
    }

    pub fn trajectory(&self, method: Method, h: f64) -> Option<&TrajectoryDistribution<f64>> {
        self.run(method, h).map(|r| &r.trajectory)
    }
}

#[derive(Serialize)]
struct WallTime {
    method: &'static str,
    h: f64,
    seconds: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    experiment: ExperimentKind,
    seed: u64,
    paper_scale: bool,
    dump_raw: bool,
    config: &'a ExperimentConfig,
    /// Settings that are this tool's defaults rather than published values.
    non_paper_choices: Vec<&'static str>,
    files: Vec<String>,
    wall_time: Vec<WallTime>,
}

/// Loads, overrides, validates and runs.
pub fn run_file(path: impl AsRef<std::path::Path>, opts: &RunOptions) -> Result<RunReport> {
    let cfg = ExperimentConfig::load(path)?;
    run(cfg, opts)
}

pub fn run(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    opts.apply(&mut cfg);
    cfg.validate()?;
    let mut out = OutputDir::create(&cfg.output)?;
    log::info!(
        "running {:?} experiment into {} (seed {})",
        cfg.experiment,
        out.root().display(),
        cfg.seed
    );
    let mut report = RunReport {
        config: cfg.clone(),
        out_dir: out.root().to_path_buf(),
        files: Vec::new(),
        runs: Vec::new(),
        convergence: Vec::new(),
        histograms: Vec::new(),
        summary: serde_json::Value::Null,
    };
    match cfg.experiment {
        ExperimentKind::Prototype => run_prototype(&cfg, &mut out, &mut report)?,
        ExperimentKind::Nonlinear => run_nonlinear(&cfg, opts.dump_raw, &mut out, &mut report)?,
        ExperimentKind::Bifurcation => run_bifurcation(&cfg, opts.dump_raw, &mut out, &mut report)?,
        ExperimentKind::Convergence => run_convergence(&cfg, opts.dump_raw, &mut out, &mut report)?,
    }
    out.json("summary.json", &report.summary)?;

    let files = out.written_names();
    let manifest = Manifest {
        version: VERSION,
        experiment: cfg.experiment,
        seed: cfg.seed,
        paper_scale: opts.paper_scale,
        dump_raw: opts.dump_raw,
        config: &cfg,
        non_paper_choices: non_paper_choices(cfg.experiment),
        files,
        wall_time: report
            .runs
            .iter()
            .map(|r| WallTime {
                method: r.method.tag(),
                h: r.h,
                seconds: r.wall_seconds,
            })
            .collect(),
    };
    out.json("manifest.json", &manifest)?;
    report.files = out.into_files();
    Ok(report)
}

fn non_paper_choices(kind: ExperimentKind) -> Vec<&'static str> {
    let mut v = vec!["horizon", "mc.n_fields", "mc.n_initial", "mc.pairing", "mc.grid_points", "mc.interpolation"];
    match kind {
        ExperimentKind::Prototype => v.extend(["model", "initial", "mc.prototype_samples"]),
        ExperimentKind::Bifurcation => v.extend([
            "initial",
            "dataset.noise_var",
            "dataset.lengthscale",
            "dataset.amplitude",
            "dataset.placement_evenly_spaced",
            "histogram",
        ]),
        ExperimentKind::Nonlinear | ExperimentKind::Convergence => v.extend([
            "dataset.noise_var",
            "dataset.lengthscale",
            "dataset.amplitude",
            "dataset.placement_evenly_spaced",
        ]),
    }
    v
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

fn record(
    report: &mut RunReport,
    out: &mut OutputDir,
    h: f64,
    trajectory: TrajectoryDistribution<f64>,
    terminal_states: Option<Vec<f64>>,
    wall_seconds: f64,
) -> Result<()> {
    let method = trajectory.meta.method;
    out.trajectory(&format!("{}_h{}.csv", method.tag(), step_label(h)), &trajectory)?;
    if trajectory.meta.clamp_events > 0 {
        log::warn!(
            "{} at h = {h}: {} negative variances clamped",
            method.tag(),
            trajectory.meta.clamp_events
        );
    }
    report.runs.push(MethodRun {
        method,
        h,
        trajectory,
        terminal_states,
        wall_seconds,
    });
    Ok(())
}

fn pull_policy(horizon: f64, h: f64, name: MethodName) -> Result<TruncationPolicy<f64>> {
    Ok(match name {
        MethodName::PullNone => TruncationPolicy::NoneHistory,
        _ => TruncationPolicy::default_for(step_count(horizon, h)?),
    })
}

fn run_prototype(cfg: &ExperimentConfig, out: &mut OutputDir, report: &mut RunReport) -> Result<()> {
    let LinearParams { a, beta } = cfg.model;
    let m = LinearModelDist::new(a, beta)?;
    let emb = LinearEmbedding::new(a, beta);
    let x0 = cfg.initial_state()?;
    let horizon = cfg.horizon();

    let mut per_step = Vec::new();
    for &h in &cfg.step_sizes {
        for &name in &cfg.methods {
            let (traj, secs) = timed(|| match name {
                MethodName::Analytic => linear::analytic_trajectory(&m, x0, h, horizon),
                MethodName::NaiveEuler => linear::naive_euler_trajectory(&m, x0, h, horizon),
                MethodName::NaiveFlow => linear::naive_flow_trajectory(&m, x0, h, horizon),
                MethodName::CorrectedEuler => linear::corrected_euler_trajectory(&m, x0, h, horizon),
                MethodName::CorrectedFlow => linear::corrected_flow_trajectory(&m, x0, h, horizon),
                MethodName::Mm => mm_trajectory(&emb, x0, h, horizon),
                MethodName::PullFull | MethodName::PullNone => {
                    pull_trajectory(&emb, x0, h, horizon, pull_policy(horizon, h, name)?)
                }
                MethodName::Mc => linear::sample_prototype(&m, x0, h, horizon, cfg.mc.prototype_samples, cfg.seed),
            })?;
            record(report, out, h, traj, None, secs)?;
        }
        let terminal: BTreeMap<&str, f64> = report
            .runs
            .iter()
            .filter(|r| r.h == h)
            .filter_map(|r| r.trajectory.last().map(|s| (r.method.tag(), s.var)))
            .collect();
        per_step.push(serde_json::json!({
            "h": h,
            "euler_fixed_point": linear::naive_euler_fixed_point(&m, h)?,
            "iter_flow_fixed_point": linear::iter_flow_fixed_point(&m, h),
            "terminal_var": terminal,
        }));
    }
    report.summary = serde_json::json!({
        "a": a,
        "beta": beta,
        "exact_fixed_point": linear::exact_fixed_point_var(&m),
        "steps": per_step,
    });
    Ok(())
}

/// Evenly spaced inputs with `y = x cos(x)`, optionally perturbed.
pub fn build_dataset(d: &DatasetConfig) -> Result<TrainingSet<f64>> {
    let xs = linspace(d.span.0, d.span.1, d.n_points);
    let ys = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let clean = x * x.cos();
            if d.add_noise && d.noise_var > 0.0 {
                let mut r = rng::stream(d.noise_seed, &[i as u64]);
                clean + rng::normal(&mut r, 0.0, d.noise_var)
            } else {
                clean
            }
        })
        .collect();
    TrainingSet::new(xs, ys, d.noise_var)
}

pub fn build_gp(d: &DatasetConfig) -> Result<GpPosterior<f64>> {
    GpPosterior::condition(build_dataset(d)?, KernelConfig::new(d.lengthscale, d.amplitude)?)
}

fn write_dataset(out: &mut OutputDir, ts: &TrainingSet<f64>) -> Result<()> {
    let header = ["x", "y"].map(String::from);
    let rows = ts
        .inputs()
        .iter()
        .zip(ts.outputs())
        .map(|(&x, &y)| [fmt_float(x), fmt_float(y)]);
    out.csv("dataset.csv", &header, rows)
}

/// Runs every configured method at step `h` on the GP.
fn run_gp_methods(
    cfg: &ExperimentConfig,
    gp: &GpPosterior<f64>,
    x0: GaussianState<f64>,
    h: f64,
    dump_raw: bool,
    out: &mut OutputDir,
    report: &mut RunReport,
) -> Result<()> {
    let horizon = cfg.horizon();
    for &name in &cfg.methods {
        match name {
            MethodName::Mm => {
                let (t, s) = timed(|| mm_trajectory(gp, x0, h, horizon))?;
                record(report, out, h, t, None, s)?;
            }
            MethodName::PullFull | MethodName::PullNone => {
                let policy = pull_policy(horizon, h, name)?;
                let (t, s) = timed(|| pull_trajectory(gp, x0, h, horizon, policy))?;
                record(report, out, h, t, None, s)?;
            }
            MethodName::Mc => {
                let ens = cfg.mc.ensemble(h, horizon, cfg.seed);
                let (res, s) = timed(|| ensemble_run(gp, x0, &ens, dump_raw))?;
                if let Some(raw) = &res.raw {
                    out.with_writer(&format!("raw_h{}.csv", step_label(h)), |w| write_raw_csv(w, raw, h))?;
                }
                record(report, out, h, res.distribution, Some(res.terminal_states), s)?;
            }
            other => {
                return Err(Error::config(
                    "methods",
                    format!("{other:?} only applies to the prototype experiment"),
                ))
            }
        }
    }
    Ok(())
}

/// `t,std_<method>...` over the methods run at step `h`.
fn write_comparison(cfg: &ExperimentConfig, h: f64, out: &mut OutputDir, report: &RunReport) -> Result<()> {
    let runs: Vec<&MethodRun> = cfg
        .methods
        .iter()
        .filter_map(|m| report.run(m.method(), h))
        .collect();
    let Some(first) = runs.first() else {
        return Ok(());
    };
    let mut header = vec!["t".to_string()];
    header.extend(runs.iter().map(|r| format!("std_{}", r.method.tag())));
    let stds: Vec<Vec<f64>> = runs.iter().map(|r| r.trajectory.stds()).collect();
    let rows = (0..first.trajectory.len()).map(|i| {
        std::iter::once(fmt_float(first.trajectory.times[i]))
            .chain(stds.iter().map(move |s| fmt_float(s[i])))
            .collect::<Vec<_>>()
    });
    out.csv(&format!("comparison_h{}.csv", step_label(h)), &header, rows)
}

fn terminal_summary(report: &RunReport, h: f64) -> BTreeMap<&'static str, serde_json::Value> {
    report
        .runs
        .iter()
        .filter(|r| r.h == h)
        .filter_map(|r| {
            let last = r.trajectory.last()?;
            Some((
                r.method.tag(),
                serde_json::json!({
                    "mean": last.mean,
                    "std": last.std(),
                    "peak_std": peak_std(&r.trajectory),
                    "clamp_events": r.trajectory.meta.clamp_events,
                    "samples": r.trajectory.meta.samples,
                }),
            ))
        })
        .collect()
}

pub fn peak_std(d: &TrajectoryDistribution<f64>) -> f64 {
    d.vars.iter().cloned().fold(0.0, f64::max).sqrt()
}

fn run_nonlinear(cfg: &ExperimentConfig, dump_raw: bool, out: &mut OutputDir, report: &mut RunReport) -> Result<()> {
    let ts = build_dataset(&cfg.dataset)?;
    write_dataset(out, &ts)?;
    let gp = GpPosterior::condition(ts, KernelConfig::new(cfg.dataset.lengthscale, cfg.dataset.amplitude)?)?;
    let x0 = cfg.initial_state()?;
    let mut per_step = Vec::new();
    for &h in &cfg.step_sizes {
        run_gp_methods(cfg, &gp, x0, h, dump_raw, out, report)?;
        write_comparison(cfg, h, out, report)?;
        per_step.push(serde_json::json!({ "h": h, "terminal": terminal_summary(report, h) }));
    }
    report.summary = serde_json::json!({ "gp_jitter": gp.jitter(), "steps": per_step });
    Ok(())
}

fn run_bifurcation(cfg: &ExperimentConfig, dump_raw: bool, out: &mut OutputDir, report: &mut RunReport) -> Result<()> {
    let ts = build_dataset(&cfg.dataset)?;
    write_dataset(out, &ts)?;
    let gp = GpPosterior::condition(ts, KernelConfig::new(cfg.dataset.lengthscale, cfg.dataset.amplitude)?)?;
    let x0 = cfg.initial_state()?;
    let horizon = cfg.horizon();
    let (lo, hi) = cfg.histogram.range.unwrap_or(cfg.mc.grid_span);
    let mut per_step = Vec::new();
    for &h in &cfg.step_sizes {
        run_gp_methods(cfg, &gp, x0, h, dump_raw, out, report)?;
        write_comparison(cfg, h, out, report)?;

        let terminal = report
            .run(Method::Mc, h)
            .and_then(|r| r.terminal_states.as_deref())
            .ok_or_else(|| Error::invalid("bifurcation run produced no mc terminal states"))?;
        let rows: Vec<HistogramRow> = histogram(terminal, lo, hi, cfg.histogram.bins)
            .into_iter()
            .map(|(bin_lo, bin_hi, count)| HistogramRow { bin_lo, bin_hi, count })
            .collect();
        let header = ["bin_lo", "bin_hi", "count"].map(String::from);
        out.csv(
            &format!("terminal_histogram_h{}.csv", step_label(h)),
            &header,
            rows.iter()
                .map(|r| [fmt_float(r.bin_lo), fmt_float(r.bin_hi), r.count.to_string()]),
        )?;
        let n = terminal.len() as f64;
        let positive = terminal.iter().filter(|&&x| x > 0.0).count() as f64 / n;
        let negative = terminal.iter().filter(|&&x| x < 0.0).count() as f64 / n;

        let reference_peak = if cfg.has(MethodName::PullFull) {
            let policy = pull_policy(horizon, h, MethodName::PullFull)?;
            Some(peak_std(&pull_trajectory(&gp, NONLINEAR_INITIAL, h, horizon, policy)?))
        } else {
            None
        };
        per_step.push(serde_json::json!({
            "h": h,
            "terminal": terminal_summary(report, h),
            "mc_positive_fraction": positive,
            "mc_negative_fraction": negative,
            "pull_full_reference_peak_std": reference_peak,
        }));
        report.histograms.push((h, rows));
    }
    report.summary = serde_json::json!({
        "gp_jitter": gp.jitter(),
        "reference_initial": NONLINEAR_INITIAL,
        "steps": per_step,
    });
    Ok(())
}

/// `max_n |nu_n - x_ref(n h)|` against a reference sampled every `ratio`
/// reference steps.
pub fn mean_error(d: &TrajectoryDistribution<f64>, reference: &[f64], ratio: usize) -> f64 {
    d.means
        .iter()
        .enumerate()
        .map(|(n, m)| (m - reference[n * ratio]).abs())
        .fold(0.0, f64::max)
}

/// Relative L2 error `||var - var_ref|| / ||var_ref||` over
/// `t >= VAR_ERROR_WINDOW_START`, on the common time grid.
pub fn var_error(d: &TrajectoryDistribution<f64>, reference: &TrajectoryDistribution<f64>) -> f64 {
    let start = VAR_ERROR_WINDOW_START.min(*d.times.last().unwrap_or(&0.0));
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &t) in d.times.iter().enumerate() {
        if t + 1e-12 < start || i >= reference.len() {
            continue;
        }
        num += (d.vars[i] - reference.vars[i]).powi(2);
        den += reference.vars[i].powi(2);
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Fine rk4 solution of `x' = mu_f(x)` from `x0` with `steps` steps.
pub fn mean_reference(gp: &GpPosterior<f64>, x0: f64, h_ref: f64, steps: usize) -> Vec<f64> {
    integrate::<f64, std::convert::Infallible>(Integrator::Rk4, x0, h_ref, steps, |_, x| Ok(gp.mean(x)))
        .unwrap_or_else(|e| match e {})
}

fn run_convergence(cfg: &ExperimentConfig, dump_raw: bool, out: &mut OutputDir, report: &mut RunReport) -> Result<()> {
    let ts = build_dataset(&cfg.dataset)?;
    write_dataset(out, &ts)?;
    let gp = GpPosterior::condition(ts, KernelConfig::new(cfg.dataset.lengthscale, cfg.dataset.amplitude)?)?;
    let x0 = cfg.initial_state()?;
    let horizon = cfg.horizon();
    let h_ref = cfg.reference_step();

    let mut plan = Vec::new();
    for &h in &cfg.step_sizes {
        let ratio = (h / h_ref).round() as usize;
        plan.push((h, ratio, step_count(horizon, h)? * ratio));
    }
    let ref_steps = plan.iter().map(|p| p.2).max().unwrap_or(0);
    let reference = mean_reference(&gp, x0.mean, h_ref, ref_steps);

    let mut rows = Vec::new();
    for &(h, ratio, _) in &plan {
        run_gp_methods(cfg, &gp, x0, h, dump_raw, out, report)?;
        let pull = report
            .trajectory(Method::PullFull, h)
            .ok_or_else(|| Error::invalid("convergence run produced no pull_full trajectory"))?;
        let mc = report
            .trajectory(Method::Mc, h)
            .ok_or_else(|| Error::invalid("convergence run produced no mc trajectory"))?;
        rows.push(ConvergenceRow {
            h,
            mean_error: mean_error(pull, &reference, ratio),
            var_error: var_error(pull, mc),
        });
    }
    let header = ["h", "mean_error", "var_error"].map(String::from);
    out.csv(
        "convergence.csv",
        &header,
        rows.iter()
            .map(|r| [fmt_float(r.h), fmt_float(r.mean_error), fmt_float(r.var_error)]),
    )?;
    report.summary = serde_json::json!({
        "reference_step": h_ref,
        "var_error_window_start": VAR_ERROR_WINDOW_START,
        "rows": rows,
    });
    report.convergence = rows;
    Ok(())
}
