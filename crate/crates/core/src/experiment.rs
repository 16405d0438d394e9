//! Config-driven experiments and their output files.
//!
//! Each `run_*` function computes a result in memory; the matching `cmd_*`
//! function also writes CSV series and JSON summaries into a directory.
//! Every CSV begins with `# ` lines holding the resolved configuration and
//! seeds, and no file contains timestamps, so reruns are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::basis::Configuration;
use crate::config::{ConfigError, DampingPoint, RunConfig, TruncationConfig};
use crate::master_oracle::{self, DensityMatrix, MasterError, MasterRun};
use crate::model::{Model, ModelError};
use crate::observables::{
    gaussian_width, lattice_centre, FitStatus, GaussianFit, MandelQ, ObservableLayout,
    ObservableSet,
};
use crate::spectrum::{self, CrossingTable, LevelRow};
use crate::trajectory::{
    run_ensemble, EnsembleResult, EnsembleSpec, TrajectoryError, TrajectorySummary,
};
use crate::units;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error("{0}")]
    Tolerance(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    /// 2 for configuration problems, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Master(MasterError::Capacity { .. }) => 2,
            Self::Trajectory(TrajectoryError::InvalidSettings(_)) => 2,
            Self::Model(_) => 2,
            Self::Trajectory(_) | Self::Master(_) | Self::Tolerance(_) => 3,
            Self::Io { .. } | Self::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn build_model(config: &RunConfig, truncation: TruncationConfig) -> Result<Model> {
    Ok(Model::new(config.geometry()?, truncation.n_max, truncation.d)?)
}

fn ground(config: &RunConfig) -> Configuration {
    Configuration::ground(config.system.n_sites).expect("validated site count")
}

/// Unitary evolution is deterministic, so one trajectory suffices.
pub fn trajectories_for(config: &RunConfig, damping: &DampingPoint) -> usize {
    if damping.is_unitary() {
        1
    } else {
        config.ensemble.trajectories
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| TrajectoryError::Workers(e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Standard errors with the single-trajectory NaN replaced by 0 for
/// unitary runs, where the ensemble has no spread.
fn effective_stderr(values: &[f64], unitary: bool) -> Vec<f64> {
    values
        .iter()
        .map(|&v| if unitary && v.is_nan() { 0.0 } else { v })
        .collect()
}

fn profile_of(layout: &ObservableLayout, record: &[f64]) -> Vec<f64> {
    record[layout.profile_range()].to_vec()
}

/// Leave-one-out jackknife error of the fitted width of the mean profile.
fn jackknife_width(layout: &ObservableLayout, summaries: &[TrajectorySummary], half_window: usize) -> f64 {
    let m = summaries.len();
    if m < 2 {
        return f64::NAN;
    }
    let centre = lattice_centre(layout.n_sites());
    let mut total = vec![0.0; layout.n_sites()];
    for s in summaries {
        for (t, p) in total.iter_mut().zip(profile_of(layout, &s.final_record)) {
            *t += p;
        }
    }
    let widths: Vec<f64> = summaries
        .iter()
        .map(|s| {
            let loo: Vec<f64> = total
                .iter()
                .zip(profile_of(layout, &s.final_record))
                .map(|(t, p)| (t - p) / (m - 1) as f64)
                .collect();
            gaussian_width(&loo, centre, half_window).width
        })
        .collect();
    let mean = widths.iter().sum::<f64>() / m as f64;
    let var = widths.iter().map(|w| (w - mean).powi(2)).sum::<f64>() * (m - 1) as f64 / m as f64;
    var.sqrt()
}

// ---------------------------------------------------------------- dynamics

pub struct DynamicsResult {
    pub target_n: usize,
    pub tau_us: f64,
    pub damping: DampingPoint,
    pub dim: usize,
    pub ensemble: EnsembleResult,
    /// Standard errors per time and observable, 0 for unitary runs.
    pub stderr: Vec<Vec<f64>>,
    pub width: GaussianFit,
}

impl DynamicsResult {
    pub fn final_observables(&self) -> ObservableSet {
        ObservableSet::from_record(&self.ensemble.layout, self.ensemble.final_mean())
    }

    pub fn fidelity(&self) -> f64 {
        self.ensemble.final_mean()[self.ensemble.layout.target_population(self.target_n)]
    }
}

/// One `(τ, Γ_r, Γ_z)` point at `schedule.tau_us` and the `[system]` rates.
pub fn run_dynamics(config: &RunConfig, workers: Option<usize>) -> Result<DynamicsResult> {
    let model = build_model(config, config.truncation)?;
    let damping = config.system_damping();
    let schedule = config.base_schedule()?;
    let spec = EnsembleSpec {
        trajectories: trajectories_for(config, &damping),
        base_seed: config.ensemble.base_seed,
    };
    let ensemble = run_ensemble(
        &model,
        &schedule,
        damping.relaxation()?,
        ground(config),
        spec,
        &config.integrator_settings(),
        workers,
    )?;
    let layout = ensemble.layout;
    let width = gaussian_width(
        &profile_of(&layout, ensemble.final_mean()),
        lattice_centre(layout.n_sites()),
        config.analysis.fit_half_window,
    );
    let stderr = ensemble
        .stderr
        .iter()
        .map(|row| effective_stderr(row, damping.is_unitary()))
        .collect();
    Ok(DynamicsResult {
        target_n: config.target_n()?,
        tau_us: config.schedule.tau_us,
        damping,
        dim: model.dim(),
        ensemble,
        stderr,
        width,
    })
}

// ---------------------------------------------------------------- τ-scan

pub struct ScanPoint {
    pub damping: DampingPoint,
    pub tau_us: f64,
    pub trajectories: usize,
    pub final_mean: ObservableSet,
    pub final_stderr: Vec<f64>,
    pub fidelity: f64,
    pub fidelity_se: f64,
    pub width: GaussianFit,
    pub width_se: f64,
    pub q: MandelQ,
    pub q_se: f64,
    pub mean_n_se: f64,
    pub decay_jumps: u64,
    pub dephasing_jumps: u64,
    pub dt: f64,
    pub max_norm_deviation: f64,
    pub summaries: Vec<TrajectorySummary>,
}

pub struct TauScanResult {
    pub target_n: usize,
    pub dim: usize,
    pub layout: ObservableLayout,
    pub points: Vec<ScanPoint>,
}

impl TauScanResult {
    /// Points of one damping case, in increasing τ.
    pub fn series(&self, damping: &DampingPoint) -> Vec<&ScanPoint> {
        self.points.iter().filter(|p| &p.damping == damping).collect()
    }
}

fn run_scan_point(
    config: &RunConfig,
    model: &Model,
    damping: DampingPoint,
    tau_us: f64,
    target_n: usize,
) -> Result<ScanPoint> {
    let layout = *model.layout();
    let spec = EnsembleSpec {
        trajectories: trajectories_for(config, &damping),
        base_seed: config.ensemble.base_seed,
    };
    let ens = run_ensemble(
        model,
        &config.schedule_for(tau_us)?,
        damping.relaxation()?,
        ground(config),
        spec,
        &config.integrator_settings(),
        None,
    )?;
    let unitary = damping.is_unitary();
    let stderr = effective_stderr(ens.final_stderr(), unitary);
    let final_mean = ObservableSet::from_record(&layout, ens.final_mean());
    let half = config.analysis.fit_half_window;
    let width = final_mean.gaussian_width(half);
    let width_se = if unitary {
        0.0
    } else {
        jackknife_width(&layout, &ens.trajectories, half)
    };
    let q_se = *ens.q_stderr.last().expect("non-empty grid");
    Ok(ScanPoint {
        damping,
        tau_us,
        trajectories: spec.trajectories,
        fidelity: final_mean.p_min[target_n],
        fidelity_se: stderr[layout.target_population(target_n)],
        mean_n_se: stderr[layout.mean_n()],
        q: *ens.q.last().expect("non-empty grid"),
        q_se: if unitary && q_se.is_nan() { 0.0 } else { q_se },
        final_mean,
        final_stderr: stderr,
        width,
        width_se,
        decay_jumps: ens.total_decay_jumps(),
        dephasing_jumps: ens.total_dephasing_jumps(),
        dt: ens.dt,
        max_norm_deviation: ens.max_norm_deviation,
        summaries: ens.trajectories,
    })
}

/// Every `(Γ_r, Γ_z)` in the damping list at every τ, schedule rescaled.
pub fn run_tau_scan(config: &RunConfig, workers: Option<usize>) -> Result<TauScanResult> {
    let model = build_model(config, config.truncation)?;
    let target_n = config.target_n()?;
    let jobs: Vec<(DampingPoint, f64)> = config
        .damping_points()
        .into_iter()
        .flat_map(|d| config.tau_list_us().into_iter().map(move |t| (d, t)))
        .collect();
    let points = with_pool(workers, || {
        jobs.par_iter()
            .map(|&(d, t)| run_scan_point(config, &model, d, t, target_n))
            .collect::<Vec<_>>()
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TauScanResult {
        target_n,
        dim: model.dim(),
        layout: *model.layout(),
        points,
    })
}

// ---------------------------------------------------------------- spectrum

pub struct SpectrumResult {
    pub rows: Vec<LevelRow>,
    pub crossings: CrossingTable,
    /// Shell holding the global classical minimum at each grid detuning.
    pub ground_shell: Vec<(f64, usize)>,
}

pub fn run_spectrum(config: &RunConfig) -> Result<SpectrumResult> {
    let model = build_model(config, config.truncation)?;
    let sp = &config.spectrum;
    let grid: Vec<f64> = (0..sp.points)
        .map(|k| {
            let x = sp.delta_min_2pi_mhz
                + (sp.delta_max_2pi_mhz - sp.delta_min_2pi_mhz) * k as f64 / (sp.points - 1) as f64;
            units::from_2pi_mhz(x)
        })
        .collect();
    let rows = spectrum::level_diagram(model.basis(), model.geometry(), &grid);
    let ground_shell = grid
        .iter()
        .map(|&delta| {
            let best = rows
                .iter()
                .filter(|r| r.delta == delta && r.is_shell_min)
                .min_by(|a, b| a.energy.total_cmp(&b.energy))
                .expect("every shell has a minimum");
            (delta, best.n)
        })
        .collect();
    Ok(SpectrumResult {
        rows,
        crossings: spectrum::crossing_table(
            config.truncation.n_max,
            model.geometry(),
            sp.crossing_form.into(),
        ),
        ground_shell,
    })
}

// ---------------------------------------------------------------- oracle check

pub struct OracleComparison {
    pub name: String,
    pub max_abs_diff: f64,
    /// Largest `|diff| / stderr`; infinite if a zero-error entry differs
    /// by more than the absolute floor.
    pub max_z: f64,
    pub worst_time_us: f64,
    pub pass: bool,
}

pub struct OracleCheckResult {
    pub dim: usize,
    pub trajectories: usize,
    pub comparisons: Vec<OracleComparison>,
    pub pass: bool,
    pub master: MasterRun,
    pub ensemble: EnsembleResult,
}

impl OracleCheckResult {
    /// Largest population of shell `n` over the run, (trajectories, master).
    pub fn max_shell_population(&self, n: usize) -> (f64, f64) {
        let i = self.ensemble.layout.shell_probability(n);
        let peak = |rows: &[Vec<f64>]| rows.iter().map(|r| r[i]).fold(0.0, f64::max);
        (peak(&self.ensemble.mean), peak(&self.master.records))
    }
}

struct Tally {
    max_abs_diff: f64,
    max_z: f64,
    worst_time: f64,
    pass: bool,
}

impl Tally {
    fn new() -> Self {
        Self {
            max_abs_diff: 0.0,
            max_z: 0.0,
            worst_time: 0.0,
            pass: true,
        }
    }

    fn add(&mut self, t: f64, estimate: f64, se: f64, exact: f64, sigma: f64, floor: f64) {
        if exact.is_nan() && estimate.is_nan() {
            return;
        }
        let diff = (estimate - exact).abs();
        let se = if se.is_nan() { 0.0 } else { se };
        let z = if se > 0.0 {
            diff / se
        } else if diff > floor {
            f64::INFINITY
        } else {
            0.0
        };
        if diff.is_nan() || diff > sigma * se + floor {
            self.pass = false;
        }
        if z > self.max_z || diff.is_nan() {
            self.max_z = if diff.is_nan() { f64::NAN } else { z };
            self.worst_time = t;
        }
        self.max_abs_diff = self.max_abs_diff.max(diff);
    }

    fn finish(self, name: String) -> OracleComparison {
        OracleComparison {
            name,
            max_abs_diff: self.max_abs_diff,
            max_z: self.max_z,
            worst_time_us: units::to_us(self.worst_time),
            pass: self.pass,
        }
    }
}

/// Trajectory ensemble against the master equation on the same grid.
pub fn run_oracle_check(config: &RunConfig, workers: Option<usize>) -> Result<OracleCheckResult> {
    let model = build_model(config, config.truncation)?;
    if model.dim() > config.oracle.max_dim {
        return Err(MasterError::Capacity {
            dim: model.dim(),
            cap: config.oracle.max_dim,
        }
        .into());
    }
    let damping = config.system_damping();
    let relax = damping.relaxation()?;
    let schedule = config.base_schedule()?;
    let settings = config.integrator_settings();
    let initial = ground(config);
    let master = master_oracle::evolve(
        &model,
        &schedule,
        relax,
        DensityMatrix::from_configuration(&model, initial)?,
        &settings,
        config.oracle.max_dim,
    )?;
    let spec = EnsembleSpec {
        trajectories: trajectories_for(config, &damping),
        base_seed: config.ensemble.base_seed,
    };
    let ensemble = run_ensemble(&model, &schedule, relax, initial, spec, &settings, workers)?;
    if master.times.len() != ensemble.times.len() {
        return Err(ExperimentError::Tolerance(
            "oracle and trajectory output grids differ".into(),
        ));
    }

    let layout = ensemble.layout;
    let (sigma, floor) = (config.oracle.sigma_threshold, config.oracle.abs_floor);
    let mut comparisons: Vec<OracleComparison> = layout
        .names()
        .into_iter()
        .enumerate()
        .map(|(o, name)| {
            let mut tally = Tally::new();
            for (k, &t) in ensemble.times.iter().enumerate() {
                tally.add(
                    t,
                    ensemble.mean[k][o],
                    ensemble.stderr[k][o],
                    master.records[k][o],
                    sigma,
                    floor,
                );
            }
            tally.finish(name)
        })
        .collect();
    let mut q_tally = Tally::new();
    for (k, &t) in ensemble.times.iter().enumerate() {
        let exact = crate::observables::mandel_q(
            master.records[k][layout.mean_n()],
            master.records[k][layout.mean_n2()],
        );
        let estimate = ensemble.q[k];
        if exact.defined && estimate.defined {
            q_tally.add(t, estimate.value, ensemble.q_stderr[k], exact.value, sigma, floor);
        }
    }
    comparisons.push(q_tally.finish("Q".into()));
    let pass = comparisons.iter().all(|c| c.pass);
    Ok(OracleCheckResult {
        dim: model.dim(),
        trajectories: spec.trajectories,
        comparisons,
        pass,
        master,
        ensemble,
    })
}

// ---------------------------------------------------------------- convergence

pub struct ConvergenceRow {
    pub truncation: TruncationConfig,
    pub dim: usize,
    pub names: Vec<String>,
    pub final_values: Vec<f64>,
    /// Largest top-shell population over the run.
    pub leakage: f64,
    pub is_reference: bool,
    /// Largest difference to the reference over shared observables.
    pub max_diff: f64,
    pub worst_observable: String,
    pub differs: bool,
    pub leaks: bool,
}

pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
}

/// Final observables for each truncation; the largest basis is the
/// reference.
pub fn run_convergence(config: &RunConfig, workers: Option<usize>) -> Result<ConvergenceResult> {
    let mut truncations = vec![config.truncation];
    for t in &config.convergence.settings {
        if !truncations.contains(t) {
            truncations.push(*t);
        }
    }
    let damping = config.system_damping();
    let schedule = config.base_schedule()?;
    let spec = EnsembleSpec {
        trajectories: trajectories_for(config, &damping),
        base_seed: config.ensemble.base_seed,
    };
    let mut rows = Vec::with_capacity(truncations.len());
    for t in truncations {
        let model = build_model(config, t)?;
        let ens = run_ensemble(
            &model,
            &schedule,
            damping.relaxation()?,
            ground(config),
            spec,
            &config.integrator_settings(),
            workers,
        )?;
        let mut names = ens.layout.names();
        let mut final_values = ens.final_mean().to_vec();
        names.push("Q".into());
        final_values.push(ens.q.last().expect("non-empty grid").value);
        rows.push(ConvergenceRow {
            truncation: t,
            dim: model.dim(),
            names,
            final_values,
            leakage: ens.max_top_shell_population(),
            is_reference: false,
            max_diff: 0.0,
            worst_observable: String::new(),
            differs: false,
            leaks: false,
        });
    }
    let reference = (0..rows.len())
        .max_by_key(|&i| rows[i].dim)
        .expect("at least one truncation");
    rows[reference].is_reference = true;
    let reference_values: Vec<(String, f64)> = rows[reference]
        .names
        .iter()
        .cloned()
        .zip(rows[reference].final_values.iter().copied())
        .collect();
    for row in &mut rows {
        for (name, value) in row.names.iter().zip(&row.final_values) {
            let Some((_, r)) = reference_values.iter().find(|(n, _)| n == name) else {
                continue;
            };
            if value.is_nan() || r.is_nan() {
                continue;
            }
            let diff = (value - r).abs();
            if diff > row.max_diff {
                row.max_diff = diff;
                row.worst_observable = name.clone();
            }
        }
        row.differs = row.max_diff > config.convergence.tolerance;
        row.leaks = row.leakage > config.convergence.leakage_threshold;
    }
    Ok(ConvergenceResult { rows })
}

// ---------------------------------------------------------------- output

fn header(config: &RunConfig, command: &str, seeds: &str) -> String {
    let mut out = format!("# rydberg-sweep {command}\n# seeds: {seeds}\n# config:\n");
    for line in config.to_toml().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out
}

fn seed_note(config: &RunConfig, trajectories: usize) -> String {
    format!(
        "base_seed={} trajectories={} (trajectory m draws from ChaCha8 stream m)",
        config.ensemble.base_seed, trajectories
    )
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_csv(path: &Path, header: &str, columns: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = header.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    write_file(path, &buf)
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn config_json(config: &RunConfig) -> Value {
    serde_json::to_value(config).expect("configuration serializes")
}

fn status_label(status: FitStatus) -> &'static str {
    match status {
        FitStatus::Ok => "ok",
        FitStatus::SubResolution => "sub-resolution",
        FitStatus::Degenerate => "degenerate",
    }
}

fn write_trajectory_table(
    path: &Path,
    head: &str,
    layout: &ObservableLayout,
    blocks: &[(DampingPoint, f64, &[TrajectorySummary])],
) -> Result<()> {
    let mut columns: Vec<String> = [
        "gamma_r_2pi_khz",
        "gamma_z_2pi_khz",
        "tau_us",
        "base_seed",
        "index",
        "decay_jumps",
        "dephasing_jumps",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    columns.extend(layout.names().into_iter().map(|n| format!("final_{n}")));
    let mut rows = Vec::new();
    for (damping, tau, summaries) in blocks {
        for s in summaries.iter() {
            let mut row = vec![
                num(damping.gamma_r_2pi_khz),
                num(damping.gamma_z_2pi_khz),
                num(*tau),
                s.seed.base.to_string(),
                s.seed.index.to_string(),
                s.decay_jumps.iter().sum::<u64>().to_string(),
                s.dephasing_jumps.to_string(),
            ];
            row.extend(s.final_record.iter().map(|&v| num(v)));
            rows.push(row);
        }
    }
    write_csv(path, head, &columns, &rows)
}

/// Writes `dynamics.csv` and `dynamics.json`.
pub fn cmd_dynamics(config: &RunConfig, out: &Path, workers: Option<usize>) -> Result<DynamicsResult> {
    let result = run_dynamics(config, workers)?;
    prepare_dir(out)?;
    let ens = &result.ensemble;
    let layout = ens.layout;
    let head = header(config, "dynamics", &seed_note(config, ens.spec.trajectories));

    let names = layout.names();
    let mut columns = vec!["t_us".to_string()];
    for n in &names {
        columns.push(n.clone());
        columns.push(format!("{n}_se"));
    }
    columns.extend(["Q".to_string(), "Q_se".to_string()]);
    let rows: Vec<Vec<String>> = ens
        .times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut row = vec![num(units::to_us(t))];
            for o in 0..names.len() {
                row.push(num(ens.mean[k][o]));
                row.push(num(result.stderr[k][o]));
            }
            let q_se = ens.q_stderr[k];
            row.push(num(ens.q[k].value));
            row.push(num(if result.damping.is_unitary() && q_se.is_nan() { 0.0 } else { q_se }));
            row
        })
        .collect();
    write_csv(&out.join("dynamics.csv"), &head, &columns, &rows)?;

    if config.output.write_trajectories {
        write_trajectory_table(
            &out.join("trajectories.csv"),
            &head,
            &layout,
            &[(result.damping, result.tau_us, &ens.trajectories)],
        )?;
    }

    let fin = result.final_observables();
    let final_se = result.stderr.last().expect("non-empty grid");
    let summary = json!({
        "command": "dynamics",
        "config": config_json(config),
        "seeds": { "base_seed": config.ensemble.base_seed, "trajectories": ens.spec.trajectories },
        "dim": result.dim,
        "target_n": result.target_n,
        "tau_us": result.tau_us,
        "dt_ns": ens.dt * 1e9,
        "final": names.iter().zip(ens.final_mean()).map(|(n, v)| (n.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "final_se": names.iter().zip(final_se).map(|(n, v)| (n.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "fidelity": result.fidelity(),
        "mandel_q": fin.q.value,
        "mandel_q_defined": fin.q.defined,
        "width_a": result.width.width,
        "width_status": status_label(result.width.status),
        "decay_jumps": ens.total_decay_jumps(),
        "dephasing_jumps": ens.total_dephasing_jumps(),
        "max_norm_deviation": ens.max_norm_deviation,
        "max_top_shell_population": ens.max_top_shell_population(),
    });
    write_json(&out.join("dynamics.json"), &summary)?;
    Ok(result)
}

/// Writes `tau_scan.csv` and `tau_scan.json`.
pub fn cmd_tau_scan(config: &RunConfig, out: &Path, workers: Option<usize>) -> Result<TauScanResult> {
    let result = run_tau_scan(config, workers)?;
    prepare_dir(out)?;
    let head = header(
        config,
        "tau-scan",
        &seed_note(config, config.ensemble.trajectories),
    );
    let layout = result.layout;
    let mut columns: Vec<String> = [
        "gamma_r_2pi_khz",
        "gamma_z_2pi_khz",
        "tau_us",
        "trajectories",
        "target_n",
        "F",
        "F_se",
        "w_a",
        "w_se",
        "w_status",
        "mean_n",
        "mean_n_se",
        "Q",
        "Q_se",
        "decay_jumps",
        "dephasing_jumps",
        "dt_ns",
        "max_norm_deviation",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    columns.extend((0..=layout.n_max()).map(|n| format!("p_{n}")));
    let rows: Vec<Vec<String>> = result
        .points
        .iter()
        .map(|p| {
            let mut row = vec![
                num(p.damping.gamma_r_2pi_khz),
                num(p.damping.gamma_z_2pi_khz),
                num(p.tau_us),
                p.trajectories.to_string(),
                result.target_n.to_string(),
                num(p.fidelity),
                num(p.fidelity_se),
                num(p.width.width),
                num(p.width_se),
                status_label(p.width.status).to_string(),
                num(p.final_mean.mean_n),
                num(p.mean_n_se),
                num(p.q.value),
                num(p.q_se),
                p.decay_jumps.to_string(),
                p.dephasing_jumps.to_string(),
                num(p.dt * 1e9),
                num(p.max_norm_deviation),
            ];
            row.extend(p.final_mean.p_n.iter().map(|&v| num(v)));
            row
        })
        .collect();
    write_csv(&out.join("tau_scan.csv"), &head, &columns, &rows)?;

    if config.output.write_trajectories {
        let blocks: Vec<(DampingPoint, f64, &[TrajectorySummary])> = result
            .points
            .iter()
            .map(|p| (p.damping, p.tau_us, p.summaries.as_slice()))
            .collect();
        write_trajectory_table(&out.join("trajectories.csv"), &head, &layout, &blocks)?;
    }

    let damping: Vec<Value> = config
        .damping_points()
        .iter()
        .map(|d| {
            let series = result.series(d);
            let f: Vec<f64> = series.iter().map(|p| p.fidelity).collect();
            let best = f
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            json!({
                "gamma_r_2pi_khz": d.gamma_r_2pi_khz,
                "gamma_z_2pi_khz": d.gamma_z_2pi_khz,
                "coherence_decay_2pi_khz": d.gamma_r_2pi_khz / 2.0 + 2.0 * d.gamma_z_2pi_khz,
                "F": f,
                "best_tau_us": series.get(best).map(|p| p.tau_us),
                "interior_maximum": best > 0 && best + 1 < series.len(),
                "monotone_increasing": f.windows(2).all(|w| w[1] > w[0]),
            })
        })
        .collect();
    let summary = json!({
        "command": "tau-scan",
        "config": config_json(config),
        "seeds": { "base_seed": config.ensemble.base_seed, "trajectories": config.ensemble.trajectories },
        "dim": result.dim,
        "target_n": result.target_n,
        "damping": damping,
    });
    write_json(&out.join("tau_scan.json"), &summary)?;
    Ok(result)
}

/// Writes `spectrum.csv` and `crossings.json`.
pub fn cmd_spectrum(config: &RunConfig, out: &Path) -> Result<SpectrumResult> {
    let result = run_spectrum(config)?;
    prepare_dir(out)?;
    let head = header(config, "spectrum", "none (deterministic)");
    let columns: Vec<String> = ["delta_2pi_mhz", "n", "energy_2pi_mhz", "is_shell_min", "config_bitmask"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .filter(|r| config.spectrum.all_levels || r.is_shell_min)
        .map(|r| {
            vec![
                num(units::to_2pi_mhz(r.delta)),
                r.n.to_string(),
                num(units::to_2pi_mhz(r.energy)),
                r.is_shell_min.to_string(),
                r.config.bits().to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("spectrum.csv"), &head, &columns, &rows)?;

    let geom = config.geometry()?;
    let crossings: Vec<Value> = result
        .crossings
        .rows
        .iter()
        .map(|c| {
            let rabi = spectrum::effective_rabi(c.n_to, config.base_schedule().map(|s| s.omega_max()).unwrap_or(0.0), &geom).ok();
            json!({
                "n_from": c.n_from,
                "n_to": c.n_to,
                "delta_2pi_mhz": units::to_2pi_mhz(c.delta),
                "coupling": c.rule.label(),
                "effective_rabi_2pi_mhz": rabi.map(|r| units::to_2pi_mhz(r.value)),
                "estimate_only": rabi.map(|r| r.estimate_only),
            })
        })
        .collect();
    let ground: Vec<Value> = result
        .ground_shell
        .iter()
        .map(|(d, n)| json!({ "delta_2pi_mhz": units::to_2pi_mhz(*d), "n": n }))
        .collect();
    let summary = json!({
        "command": "spectrum",
        "config": config_json(config),
        "interaction_scale_2pi_mhz": units::to_2pi_mhz(geom.interaction_scale()),
        "crossings": crossings,
        "ground_shell": ground,
    });
    write_json(&out.join("crossings.json"), &summary)?;
    Ok(result)
}

/// Writes `oracle_check.csv` and `oracle_check.json`; fails with a
/// tolerance error after writing if any observable is out of bounds.
pub fn cmd_oracle_check(config: &RunConfig, out: &Path, workers: Option<usize>) -> Result<OracleCheckResult> {
    let result = run_oracle_check(config, workers)?;
    prepare_dir(out)?;
    let head = header(config, "oracle-check", &seed_note(config, result.trajectories));
    let columns: Vec<String> = ["observable", "max_abs_diff", "max_z", "worst_t_us", "pass"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = result
        .comparisons
        .iter()
        .map(|c| {
            vec![
                c.name.clone(),
                num(c.max_abs_diff),
                num(c.max_z),
                num(c.worst_time_us),
                c.pass.to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("oracle_check.csv"), &head, &columns, &rows)?;

    let shells: Vec<Value> = (0..=config.truncation.n_max)
        .map(|n| {
            let (traj, master) = result.max_shell_population(n);
            json!({ "n": n, "trajectories": traj, "master": master })
        })
        .collect();
    let summary = json!({
        "command": "oracle-check",
        "config": config_json(config),
        "seeds": { "base_seed": config.ensemble.base_seed, "trajectories": result.trajectories },
        "dim": result.dim,
        "pass": result.pass,
        "sigma_threshold": config.oracle.sigma_threshold,
        "abs_floor": config.oracle.abs_floor,
        "failed": result.comparisons.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect::<Vec<_>>(),
        "max_shell_population": shells,
        "master_max_trace_error": result.master.max_trace_error,
        "master_max_hermiticity_error": result.master.max_hermiticity_error,
        "master_min_eigenvalue": result.master.min_eigenvalue,
        "trajectory_max_norm_deviation": result.ensemble.max_norm_deviation,
    });
    write_json(&out.join("oracle_check.json"), &summary)?;
    if !result.pass {
        let failed: Vec<&str> = result
            .comparisons
            .iter()
            .filter(|c| !c.pass)
            .map(|c| c.name.as_str())
            .collect();
        return Err(ExperimentError::Tolerance(format!(
            "trajectories disagree with the master equation for: {}",
            failed.join(", ")
        )));
    }
    Ok(result)
}

/// Writes `convergence.csv` and `convergence.json`.
pub fn cmd_convergence(config: &RunConfig, out: &Path, workers: Option<usize>) -> Result<ConvergenceResult> {
    let result = run_convergence(config, workers)?;
    prepare_dir(out)?;
    let trajectories = trajectories_for(config, &config.system_damping());
    let head = header(config, "convergence", &seed_note(config, trajectories));
    let columns: Vec<String> = [
        "n_max",
        "d",
        "dim",
        "reference",
        "max_diff",
        "worst_observable",
        "top_shell_leakage",
        "differs",
        "leaks",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                r.truncation.n_max.to_string(),
                r.truncation.d.to_string(),
                r.dim.to_string(),
                r.is_reference.to_string(),
                num(r.max_diff),
                r.worst_observable.clone(),
                num(r.leakage),
                r.differs.to_string(),
                r.leaks.to_string(),
            ]
        })
        .collect();
    write_csv(&out.join("convergence.csv"), &head, &columns, &rows)?;

    let settings: Vec<Value> = result
        .rows
        .iter()
        .map(|r| {
            json!({
                "n_max": r.truncation.n_max,
                "d": r.truncation.d,
                "dim": r.dim,
                "reference": r.is_reference,
                "max_diff": r.max_diff,
                "worst_observable": r.worst_observable,
                "top_shell_leakage": r.leakage,
                "differs": r.differs,
                "leaks": r.leaks,
                "final": r.names.iter().zip(&r.final_values).map(|(n, v)| (n.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
            })
        })
        .collect();
    let summary = json!({
        "command": "convergence",
        "config": config_json(config),
        "seeds": { "base_seed": config.ensemble.base_seed, "trajectories": trajectories },
        "tolerance": config.convergence.tolerance,
        "leakage_threshold": config.convergence.leakage_threshold,
        "settings": settings,
    });
    write_json(&out.join("convergence.json"), &summary)?;
    Ok(result)
}
