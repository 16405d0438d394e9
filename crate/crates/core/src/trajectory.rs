//! Monte-Carlo wavefunction (quantum-jump) evolution and ensemble averaging.
//!
//! Each step either applies a jump, with first-order probabilities
//! `W_r^j = Γ_r ⟨σ_rr^j⟩ dt` (decay, `ψ → σ_gr^j ψ`) and `W_z^j = Γ_z dt`
//! (dephasing, `ψ → (σ_rr^j - σ_gg^j) ψ`), or propagates with the
//! non-Hermitian effective Hamiltonian using classical RK4. The state is
//! renormalized after every step of a dissipative run; unitary runs are
//! never renormalized, so their norm drift measures integrator error.
//!
//! Trajectory `m` of an ensemble draws from the ChaCha8 stream `m` of the
//! generator seeded by the ensemble's base seed, so any single trajectory
//! can be rerun in isolation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::Configuration;
use crate::hamiltonian::{HamiltonianParts, RelaxationParams};
use crate::model::Model;
use crate::observables::{self, mandel_q, MandelQ, ObservableLayout};
use crate::schedule::Schedule;

/// Trajectories are reduced in fixed-size chunks, in index order.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("initial configuration {0:?} is not in the truncated basis")]
    InitialNotInBasis(Configuration),
    #[error("invalid integrator settings: {0}")]
    InvalidSettings(String),
    #[error("jump probability {probability} per step still exceeds {cap} after halving dt {halvings} times")]
    StepSize {
        probability: f64,
        cap: f64,
        halvings: u32,
    },
    #[error("state became non-finite at t = {t:e} s")]
    NonFinite { t: f64 },
    #[error("unitary norm drifted by {deviation:e} (tolerance {tolerance:e}); reduce the step safety factor")]
    NormDrift { deviation: f64, tolerance: f64 },
    #[error("failed to start worker pool: {0}")]
    Workers(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    /// Upper bound on `λ_max dt`, with `λ_max` a Gershgorin bound on `‖H̃‖`.
    pub safety: f64,
    /// Cap on the total jump probability of a single step.
    pub p_step_max: f64,
    /// Samples on the output grid, including `t = 0` and `t = τ`.
    pub output_points: usize,
    /// Optional absolute cap on dt in seconds.
    pub max_dt: Option<f64>,
    /// Largest tolerated `|‖ψ‖ - 1|` in runs without relaxation. RK4 damps
    /// components near the step bound, so drift flags a too-large step.
    pub norm_tolerance: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            safety: 0.6,
            p_step_max: 0.05,
            output_points: 200,
            max_dt: None,
            norm_tolerance: 1e-4,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.safety > 0.0 && self.safety <= 2.5) {
            return Err(TrajectoryError::InvalidSettings(format!(
                "safety must lie in (0, 2.5], got {}",
                self.safety
            )));
        }
        if !(self.p_step_max > 0.0 && self.p_step_max < 1.0) {
            return Err(TrajectoryError::InvalidSettings(format!(
                "p_step_max must lie in (0, 1), got {}",
                self.p_step_max
            )));
        }
        if self.output_points < 2 {
            return Err(TrajectoryError::InvalidSettings(
                "need at least two output points".into(),
            ));
        }
        if !(self.norm_tolerance > 0.0) {
            return Err(TrajectoryError::InvalidSettings(format!(
                "norm_tolerance must be positive, got {}",
                self.norm_tolerance
            )));
        }
        if let Some(dt) = self.max_dt {
            if !(dt > 0.0) {
                return Err(TrajectoryError::InvalidSettings(format!(
                    "max_dt must be positive, got {dt}"
                )));
            }
        }
        Ok(())
    }
}

/// Fixed output grid and the integration step that subdivides it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub times: Vec<f64>,
    pub steps_per_sample: usize,
    pub dt: f64,
}

impl StepPlan {
    pub fn new(
        parts: &HamiltonianParts,
        schedule: &Schedule,
        relax: &RelaxationParams,
        settings: &IntegratorSettings,
    ) -> Result<Self, TrajectoryError> {
        let bound = parts.spectral_bound(schedule.omega_max(), schedule.delta_max_abs(), relax);
        let max_rate = relax.decay() * parts.diag_number().iter().copied().max().unwrap_or(0) as f64
            + relax.dephasing() * parts.n_sites() as f64;
        Self::from_rates(schedule.duration(), bound, max_rate, settings)
    }

    /// Plan for a generator with spectral radius at most `bound` and total
    /// jump rate at most `jump_rate`.
    pub fn from_rates(
        duration: f64,
        bound: f64,
        jump_rate: f64,
        settings: &IntegratorSettings,
    ) -> Result<Self, TrajectoryError> {
        settings.validate()?;
        let mut dt = if bound > 0.0 {
            settings.safety / bound
        } else {
            f64::INFINITY
        };
        if jump_rate > 0.0 {
            dt = dt.min(settings.p_step_max / jump_rate);
        }
        if let Some(cap) = settings.max_dt {
            dt = dt.min(cap);
        }
        let intervals = settings.output_points - 1;
        let interval = duration / intervals as f64;
        let steps_per_sample = if dt.is_finite() {
            ((interval / dt).ceil() as usize).max(1)
        } else {
            1
        };
        let times = (0..settings.output_points)
            .map(|k| {
                if k == intervals {
                    duration
                } else {
                    k as f64 * interval
                }
            })
            .collect();
        Ok(Self {
            times,
            steps_per_sample,
            dt: interval / steps_per_sample as f64,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.steps_per_sample * (self.times.len() - 1)
    }
}

/// Classical RK4 for `dψ/dt = -i H̃(t) ψ` with scratch buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    k3: Vec<Complex64>,
    k4: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        let z = vec![Complex64::default(); dim];
        Self {
            k1: z.clone(),
            k2: z.clone(),
            k3: z.clone(),
            k4: z.clone(),
            tmp: z,
        }
    }

    pub fn step(
        &mut self,
        parts: &HamiltonianParts,
        schedule: &Schedule,
        relax: &RelaxationParams,
        psi: &mut [Complex64],
        t: f64,
        dt: f64,
    ) {
        let c0 = schedule.at(t);
        let cm = schedule.at(t + 0.5 * dt);
        let c1 = schedule.at(t + dt);
        let half = 0.5 * dt;

        parts.effective_rhs(c0.omega, c0.delta, relax, psi, &mut self.k1);
        axpy_into(&mut self.tmp, psi, half, &self.k1);
        parts.effective_rhs(cm.omega, cm.delta, relax, &self.tmp, &mut self.k2);
        axpy_into(&mut self.tmp, psi, half, &self.k2);
        parts.effective_rhs(cm.omega, cm.delta, relax, &self.tmp, &mut self.k3);
        axpy_into(&mut self.tmp, psi, dt, &self.k3);
        parts.effective_rhs(c1.omega, c1.delta, relax, &self.tmp, &mut self.k4);

        let sixth = dt / 6.0;
        for i in 0..psi.len() {
            psi[i] += (self.k1[i] + (self.k2[i] + self.k3[i]) * 2.0 + self.k4[i]) * sixth;
        }
    }
}

fn axpy_into(out: &mut [Complex64], x: &[Complex64], a: f64, y: &[Complex64]) {
    for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + yi * a;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpKind {
    Decay,
    Dephase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub t: f64,
    pub kind: JumpKind,
    /// 1-based site.
    pub site: usize,
}

/// Identifies the random stream of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrajectorySeed {
    pub base: u64,
    pub index: u64,
}

impl TrajectorySeed {
    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.base);
        rng.set_stream(self.index);
        rng
    }
}

#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub psi: Vec<Complex64>,
    pub t: f64,
    pub seed: TrajectorySeed,
    pub jump_log: Vec<JumpEvent>,
    rng: ChaCha8Rng,
}

impl TrajectoryState {
    pub fn new(model: &Model, initial: Configuration, seed: TrajectorySeed) -> Result<Self, TrajectoryError> {
        let index = model
            .basis()
            .index_of(initial)
            .ok_or(TrajectoryError::InitialNotInBasis(initial))?;
        let mut psi = vec![Complex64::default(); model.dim()];
        psi[index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            psi,
            t: 0.0,
            seed,
            jump_log: Vec::new(),
            rng: seed.rng(),
        })
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.psi).sqrt()
    }
}

fn norm_sqr(psi: &[Complex64]) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum()
}

fn scale(psi: &mut [Complex64], factor: f64) {
    psi.iter_mut().for_each(|z| *z *= factor);
}

/// Stepper for one trajectory: owns its scratch space, borrows the model.
pub struct Propagator<'a> {
    model: &'a Model,
    schedule: &'a Schedule,
    relax: RelaxationParams,
    p_step_max: f64,
    rk4: Rk4,
    scratch: Vec<Complex64>,
}

impl<'a> Propagator<'a> {
    pub fn new(
        model: &'a Model,
        schedule: &'a Schedule,
        relax: RelaxationParams,
        settings: &IntegratorSettings,
    ) -> Self {
        Self {
            model,
            schedule,
            relax,
            p_step_max: settings.p_step_max,
            rk4: Rk4::new(model.dim()),
            scratch: vec![Complex64::default(); model.dim()],
        }
    }

    /// Advances `state` by `dt`, possibly through a quantum jump.
    pub fn step(&mut self, state: &mut TrajectoryState, dt: f64) -> Result<(), TrajectoryError> {
        self.step_inner(state, dt, 0)
    }

    fn step_inner(&mut self, state: &mut TrajectoryState, dt: f64, halvings: u32) -> Result<(), TrajectoryError> {
        let parts = self.model.parts();
        if self.relax.is_unitary() {
            self.rk4.step(parts, self.schedule, &self.relax, &mut state.psi, state.t, dt);
            state.t += dt;
            return Ok(());
        }

        let norm2 = norm_sqr(&state.psi);
        let mean_n = state
            .psi
            .iter()
            .zip(parts.diag_number())
            .map(|(z, &n)| z.norm_sqr() * f64::from(n))
            .sum::<f64>()
            / norm2;
        let dephasing_rate = self.relax.dephasing() * parts.n_sites() as f64;
        let total_rate = self.relax.decay() * mean_n + dephasing_rate;
        let probability = total_rate * dt;
        if probability > self.p_step_max {
            if halvings >= 40 {
                return Err(TrajectoryError::StepSize {
                    probability,
                    cap: self.p_step_max,
                    halvings,
                });
            }
            self.step_inner(state, 0.5 * dt, halvings + 1)?;
            return self.step_inner(state, 0.5 * dt, halvings + 1);
        }

        let r: f64 = state.rng.gen();
        if r < probability {
            // r/dt is uniform on [0, total_rate) given that a jump occurs.
            let x = r / dt;
            let event = if x < dephasing_rate {
                let site = ((x / self.relax.dephasing()) as usize + 1).min(parts.n_sites());
                self.dephase(&mut state.psi, site);
                JumpEvent {
                    t: state.t + dt,
                    kind: JumpKind::Dephase,
                    site,
                }
            } else {
                let site = self.pick_decay_site(&state.psi, norm2, (x - dephasing_rate) / self.relax.decay());
                self.decay(&mut state.psi, site);
                JumpEvent {
                    t: state.t + dt,
                    kind: JumpKind::Decay,
                    site,
                }
            };
            state.jump_log.push(event);
        } else {
            self.rk4.step(parts, self.schedule, &self.relax, &mut state.psi, state.t, dt);
        }
        state.t += dt;

        let n2 = norm_sqr(&state.psi);
        if !(n2.is_finite() && n2 > 0.0) {
            return Err(TrajectoryError::NonFinite { t: state.t });
        }
        scale(&mut state.psi, 1.0 / n2.sqrt());
        Ok(())
    }

    /// Site `j` with probability `⟨σ_rr^j⟩ / ⟨n⟩`, given `target ∈ [0, ⟨n⟩)`.
    fn pick_decay_site(&self, psi: &[Complex64], norm2: f64, target: f64) -> usize {
        let basis = self.model.basis();
        let mut populations = vec![0.0; basis.n_sites()];
        for (i, z) in psi.iter().enumerate() {
            let p = z.norm_sqr() / norm2;
            for site in basis.state(i).sites() {
                populations[site - 1] += p;
            }
        }
        let mut acc = 0.0;
        let mut last_populated = 1;
        for (k, &p) in populations.iter().enumerate() {
            if p > 0.0 {
                last_populated = k + 1;
            }
            acc += p;
            if target < acc {
                return k + 1;
            }
        }
        last_populated
    }

    /// `ψ → σ_gr^j ψ` (unnormalized).
    fn decay(&mut self, psi: &mut [Complex64], site: usize) {
        let basis = self.model.basis();
        self.scratch.iter_mut().for_each(|z| *z = Complex64::default());
        for (i, &amp) in psi.iter().enumerate() {
            if let Some(lower) = basis.state(i).lowered(site) {
                let j = basis
                    .index_of(lower)
                    .expect("removing an excitation keeps a configuration admissible");
                self.scratch[j] = amp;
            }
        }
        psi.copy_from_slice(&self.scratch);
    }

    /// `ψ → (σ_rr^j - σ_gg^j) ψ`.
    fn dephase(&self, psi: &mut [Complex64], site: usize) {
        let basis = self.model.basis();
        for (i, z) in psi.iter_mut().enumerate() {
            if !basis.state(i).is_excited(site) {
                *z = -*z;
            }
        }
    }
}

/// Result of one trajectory sampled on the output grid.
#[derive(Debug, Clone)]
pub struct TrajectoryOutput {
    pub times: Vec<f64>,
    /// One linear observable record per output time.
    pub records: Vec<Vec<f64>>,
    pub final_state: TrajectoryState,
    /// Decay jumps per site (index `j - 1`).
    pub decay_jumps: Vec<u64>,
    pub dephasing_jumps: u64,
    /// Largest `|‖ψ‖ - 1|` seen at the output times (meaningful for unitary runs).
    pub max_norm_deviation: f64,
    pub dt: f64,
}

/// Evolves one trajectory over `[0, τ]` from `initial`.
pub fn run_trajectory(
    model: &Model,
    schedule: &Schedule,
    relax: RelaxationParams,
    initial: Configuration,
    seed: TrajectorySeed,
    settings: &IntegratorSettings,
) -> Result<TrajectoryOutput, TrajectoryError> {
    let plan = StepPlan::new(model.parts(), schedule, &relax, settings)?;
    run_with_plan(model, schedule, relax, initial, seed, settings, &plan)
}

fn run_with_plan(
    model: &Model,
    schedule: &Schedule,
    relax: RelaxationParams,
    initial: Configuration,
    seed: TrajectorySeed,
    settings: &IntegratorSettings,
    plan: &StepPlan,
) -> Result<TrajectoryOutput, TrajectoryError> {
    let layout = model.layout();
    let mut state = TrajectoryState::new(model, initial, seed)?;
    let mut propagator = Propagator::new(model, schedule, relax, settings);
    let mut records = Vec::with_capacity(plan.times.len());
    let mut max_norm_deviation = 0.0f64;

    let mut sample = |state: &TrajectoryState, records: &mut Vec<Vec<f64>>| {
        let mut record = vec![0.0; layout.len()];
        let norm2 = observables::record_pure(&state.psi, model.basis(), model.targets(), layout, &mut record);
        max_norm_deviation = max_norm_deviation.max((norm2.sqrt() - 1.0).abs());
        records.push(record);
    };

    sample(&state, &mut records);
    for k in 1..plan.times.len() {
        for _ in 0..plan.steps_per_sample {
            propagator.step(&mut state, plan.dt)?;
        }
        // pin the clock to the grid to avoid drift from repeated addition
        state.t = plan.times[k];
        if !state.psi.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(TrajectoryError::NonFinite { t: state.t });
        }
        sample(&state, &mut records);
    }
    if relax.is_unitary() && max_norm_deviation > settings.norm_tolerance {
        return Err(TrajectoryError::NormDrift {
            deviation: max_norm_deviation,
            tolerance: settings.norm_tolerance,
        });
    }

    let mut decay_jumps = vec![0u64; model.n_sites()];
    let mut dephasing_jumps = 0;
    for event in &state.jump_log {
        match event.kind {
            JumpKind::Decay => decay_jumps[event.site - 1] += 1,
            JumpKind::Dephase => dephasing_jumps += 1,
        }
    }

    Ok(TrajectoryOutput {
        times: plan.times.clone(),
        records,
        final_state: state,
        decay_jumps,
        dephasing_jumps,
        max_norm_deviation,
        dt: plan.dt,
    })
}

/// Running mean, variance and the `(⟨n⟩, ⟨n²⟩)` co-moment per output time.
#[derive(Debug, Clone)]
struct SeriesMoments {
    count: u64,
    width: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    co_n: Vec<f64>,
}

impl SeriesMoments {
    fn new(samples: usize, width: usize) -> Self {
        Self {
            count: 0,
            width,
            mean: vec![0.0; samples * width],
            m2: vec![0.0; samples * width],
            co_n: vec![0.0; samples],
        }
    }

    fn push(&mut self, records: &[Vec<f64>], layout: &ObservableLayout) {
        self.count += 1;
        let n = self.count as f64;
        let (xi, yi) = (layout.mean_n(), layout.mean_n2());
        for (k, record) in records.iter().enumerate() {
            let base = k * self.width;
            let dx_old = record[xi] - self.mean[base + xi];
            for (o, &value) in record.iter().enumerate() {
                let idx = base + o;
                let delta = value - self.mean[idx];
                self.mean[idx] += delta / n;
                self.m2[idx] += delta * (value - self.mean[idx]);
            }
            self.co_n[k] += dx_old * (record[yi] - self.mean[base + yi]);
        }
    }

    fn merge(&mut self, other: &Self, layout: &ObservableLayout) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let (xi, yi) = (layout.mean_n(), layout.mean_n2());
        for k in 0..self.co_n.len() {
            let base = k * self.width;
            let dx = other.mean[base + xi] - self.mean[base + xi];
            let dy = other.mean[base + yi] - self.mean[base + yi];
            self.co_n[k] += other.co_n[k] + dx * dy * na * nb / n;
        }
        for idx in 0..self.mean.len() {
            let delta = other.mean[idx] - self.mean[idx];
            self.mean[idx] += delta * nb / n;
            self.m2[idx] += other.m2[idx] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }
}

/// Ensemble size and seeding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub trajectories: usize,
    pub base_seed: u64,
}

/// Per-trajectory summary kept alongside the averaged series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub seed: TrajectorySeed,
    pub final_record: Vec<f64>,
    pub decay_jumps: Vec<u64>,
    pub dephasing_jumps: u64,
    /// `∫ ⟨σ_rr^j⟩ dt` over the run (trapezoid on the output grid).
    pub integrated_profile: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub spec: EnsembleSpec,
    pub layout: ObservableLayout,
    pub times: Vec<f64>,
    /// `mean[k][o]`: average of linear observable `o` at time `k`.
    pub mean: Vec<Vec<f64>>,
    /// Standard error of the mean, NaN for a single trajectory.
    pub stderr: Vec<Vec<f64>>,
    /// Mandel Q of the ensemble-averaged state at each time.
    pub q: Vec<MandelQ>,
    pub q_stderr: Vec<f64>,
    pub trajectories: Vec<TrajectorySummary>,
    pub max_norm_deviation: f64,
    pub dt: f64,
}

impl EnsembleResult {
    pub fn final_mean(&self) -> &[f64] {
        self.mean.last().expect("non-empty grid")
    }

    pub fn final_stderr(&self) -> &[f64] {
        self.stderr.last().expect("non-empty grid")
    }

    pub fn total_decay_jumps(&self) -> u64 {
        self.trajectories
            .iter()
            .map(|t| t.decay_jumps.iter().sum::<u64>())
            .sum()
    }

    pub fn total_dephasing_jumps(&self) -> u64 {
        self.trajectories.iter().map(|t| t.dephasing_jumps).sum()
    }

    /// Largest top-shell population over the run.
    pub fn max_top_shell_population(&self) -> f64 {
        let top = self.layout.shell_probability(self.layout.n_max());
        self.mean.iter().map(|r| r[top]).fold(0.0, f64::max)
    }
}

/// Runs `spec.trajectories` independent trajectories from `initial` and
/// averages their observables. The result depends only on the inputs, not
/// on `workers` or on scheduling.
pub fn run_ensemble(
    model: &Model,
    schedule: &Schedule,
    relax: RelaxationParams,
    initial: Configuration,
    spec: EnsembleSpec,
    settings: &IntegratorSettings,
    workers: Option<usize>,
) -> Result<EnsembleResult, TrajectoryError> {
    match workers {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| TrajectoryError::Workers(e.to_string()))?;
            pool.install(|| ensemble_in_pool(model, schedule, relax, initial, spec, settings))
        }
        None => ensemble_in_pool(model, schedule, relax, initial, spec, settings),
    }
}

fn ensemble_in_pool(
    model: &Model,
    schedule: &Schedule,
    relax: RelaxationParams,
    initial: Configuration,
    spec: EnsembleSpec,
    settings: &IntegratorSettings,
) -> Result<EnsembleResult, TrajectoryError> {
    if spec.trajectories == 0 {
        return Err(TrajectoryError::InvalidSettings(
            "ensemble needs at least one trajectory".into(),
        ));
    }
    let plan = StepPlan::new(model.parts(), schedule, &relax, settings)?;
    let layout = *model.layout();
    let samples = plan.times.len();
    let chunks = spec.trajectories.div_ceil(CHUNK);

    type Chunk = (SeriesMoments, Vec<TrajectorySummary>, f64);
    let partials: Vec<Result<Chunk, TrajectoryError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut moments = SeriesMoments::new(samples, layout.len());
            let mut summaries = Vec::new();
            let mut max_dev = 0.0f64;
            let end = ((c + 1) * CHUNK).min(spec.trajectories);
            for m in c * CHUNK..end {
                let seed = TrajectorySeed {
                    base: spec.base_seed,
                    index: m as u64,
                };
                let out = run_with_plan(model, schedule, relax, initial, seed, settings, &plan)?;
                moments.push(&out.records, &layout);
                max_dev = max_dev.max(out.max_norm_deviation);
                summaries.push(TrajectorySummary {
                    seed,
                    final_record: out.records.last().expect("non-empty grid").clone(),
                    integrated_profile: integrate_profile(&out.times, &out.records, &layout),
                    decay_jumps: out.decay_jumps,
                    dephasing_jumps: out.dephasing_jumps,
                });
            }
            Ok((moments, summaries, max_dev))
        })
        .collect();

    let mut total = SeriesMoments::new(samples, layout.len());
    let mut trajectories = Vec::with_capacity(spec.trajectories);
    let mut max_norm_deviation = 0.0f64;
    for partial in partials {
        let (moments, summaries, dev) = partial?;
        total.merge(&moments, &layout);
        trajectories.extend(summaries);
        max_norm_deviation = max_norm_deviation.max(dev);
    }

    let m = total.count as f64;
    let width = layout.len();
    let (xi, yi) = (layout.mean_n(), layout.mean_n2());
    let mut mean = Vec::with_capacity(samples);
    let mut stderr = Vec::with_capacity(samples);
    let mut q = Vec::with_capacity(samples);
    let mut q_stderr = Vec::with_capacity(samples);
    for k in 0..samples {
        let row = total.mean[k * width..(k + 1) * width].to_vec();
        let se: Vec<f64> = total.m2[k * width..(k + 1) * width]
            .iter()
            .map(|&m2| {
                if total.count < 2 {
                    f64::NAN
                } else {
                    (m2.max(0.0) / (m - 1.0) / m).sqrt()
                }
            })
            .collect();

        let (m1, m2) = (row[xi], row[yi]);
        let mq = mandel_q(m1, m2);
        let qse = if total.count < 2 {
            f64::NAN
        } else if !mq.defined {
            0.0
        } else {
            // delta method on Q = m2/m1 - m1 - 1
            let var_x = total.m2[k * width + xi] / (m - 1.0);
            let var_y = total.m2[k * width + yi] / (m - 1.0);
            let cov = total.co_n[k] / (m - 1.0);
            let gx = -m2 / (m1 * m1) - 1.0;
            let gy = 1.0 / m1;
            ((gx * gx * var_x + 2.0 * gx * gy * cov + gy * gy * var_y).max(0.0) / m).sqrt()
        };
        mean.push(row);
        stderr.push(se);
        q.push(mq);
        q_stderr.push(qse);
    }

    Ok(EnsembleResult {
        spec,
        layout,
        times: plan.times,
        mean,
        stderr,
        q,
        q_stderr,
        trajectories,
        max_norm_deviation,
        dt: plan.dt,
    })
}

fn integrate_profile(times: &[f64], records: &[Vec<f64>], layout: &ObservableLayout) -> Vec<f64> {
    let range = layout.profile_range();
    let mut out = vec![0.0; range.len()];
    for k in 1..times.len() {
        let h = times[k] - times[k - 1];
        for (o, idx) in out.iter_mut().zip(range.clone()) {
            *o += 0.5 * h * (records[k - 1][idx] + records[k][idx]);
        }
    }
    out
}
