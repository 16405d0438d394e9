//! Dense Lindblad master-equation integration for small chains.
//!
//! `dρ/dt = -i[H, ρ] + Σ_j (L_r^j ρ L_r^j† - ½{L_r^j† L_r^j, ρ})
//!                   + Σ_j (L_z^j ρ L_z^j† - ½{L_z^j† L_z^j, ρ})`
//! with `L_r^j = √Γ_r σ_gr^j` and `L_z^j = √Γ_z (σ_rr^j - σ_gg^j)`. In the
//! configuration basis the dephasing part is `-2 Γ_z h(a, b) ρ_ab`, where
//! `h` counts sites whose occupation differs between `a` and `b`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::basis::Configuration;
use crate::hamiltonian::RelaxationParams;
use crate::model::Model;
use crate::observables;
use crate::schedule::Schedule;
use crate::trajectory::{IntegratorSettings, StepPlan, TrajectoryError};

pub const DEFAULT_MAX_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MasterError {
    #[error("basis dimension {dim} exceeds the density-matrix cap {cap}")]
    Capacity { dim: usize, cap: usize },
    #[error("initial state has dimension {got}, basis has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("initial configuration {0:?} is not in the basis")]
    InitialNotInBasis(Configuration),
    #[error(transparent)]
    Settings(#[from] TrajectoryError),
    #[error("density matrix became non-finite at t = {t:e} s")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub rho: DMatrix<Complex64>,
    pub t: f64,
}

impl DensityMatrix {
    pub fn from_configuration(model: &Model, config: Configuration) -> Result<Self, MasterError> {
        let i = model
            .basis()
            .index_of(config)
            .ok_or(MasterError::InitialNotInBasis(config))?;
        let mut rho = DMatrix::zeros(model.dim(), model.dim());
        rho[(i, i)] = Complex64::new(1.0, 0.0);
        Ok(Self { rho, t: 0.0 })
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`.
    pub fn from_pure(psi: &[Complex64]) -> Self {
        let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let rho = DMatrix::from_fn(psi.len(), psi.len(), |a, b| psi[a] * psi[b].conj() / norm2);
        Self { rho, t: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.rho[(i, i)].re).sum()
    }

    /// `max |ρ_ab - ρ_ba*|`.
    pub fn hermiticity_error(&self) -> f64 {
        hermiticity_error(&self.rho)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.rho)
    }

    /// `½ ‖ρ - |ψ⟩⟨ψ|‖₁` for a normalized `psi`.
    pub fn trace_distance_to_pure(&self, psi: &[Complex64]) -> Result<f64, MasterError> {
        if psi.len() != self.dim() {
            return Err(MasterError::DimensionMismatch {
                expected: self.dim(),
                got: psi.len(),
            });
        }
        let diff = &self.rho - DensityMatrix::from_pure(psi).rho;
        Ok(0.5 * hermitian_eigenvalues(&diff).iter().map(|l| l.abs()).sum::<f64>())
    }
}

fn hermiticity_error(m: &DMatrix<Complex64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for a in 0..n {
        for b in a..n {
            worst = worst.max((m[(a, b)] - m[(b, a)].conj()).norm());
        }
    }
    worst
}

fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let mut values: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Time series of one master-equation run.
#[derive(Debug, Clone)]
pub struct MasterRun {
    pub times: Vec<f64>,
    /// Linear observable records (same layout as trajectories).
    pub records: Vec<Vec<f64>>,
    pub final_state: DensityMatrix,
    pub max_trace_error: f64,
    /// Largest deviation from Hermiticity seen before symmetrization.
    pub max_hermiticity_error: f64,
    /// Smallest eigenvalue seen at the output times.
    pub min_eigenvalue: f64,
    pub dt: f64,
}

/// Precomputed structure of the Lindblad generator.
struct Liouvillian<'a> {
    model: &'a Model,
    relax: RelaxationParams,
    /// `lowering[j]`: `(a, index of a with site j+1 de-excited)`.
    lowering: Vec<Vec<(usize, usize)>>,
    excitations: Vec<f64>,
    hamming: DMatrix<f64>,
}

impl<'a> Liouvillian<'a> {
    fn new(model: &'a Model, relax: RelaxationParams) -> Self {
        let basis = model.basis();
        let dim = basis.dim();
        let lowering = (1..=basis.n_sites())
            .map(|site| {
                (0..dim)
                    .filter_map(|a| {
                        basis.state(a).lowered(site).map(|lower| {
                            let l = basis
                                .index_of(lower)
                                .expect("removing an excitation keeps a configuration admissible");
                            (a, l)
                        })
                    })
                    .collect()
            })
            .collect();
        let excitations = (0..dim).map(|a| basis.state(a).excitations() as f64).collect();
        let hamming = DMatrix::from_fn(dim, dim, |a, b| {
            (basis.state(a).bits() ^ basis.state(b).bits()).count_ones() as f64
        });
        Self {
            model,
            relax,
            lowering,
            excitations,
            hamming,
        }
    }

    fn apply(&self, omega: f64, delta: f64, rho: &DMatrix<Complex64>, out: &mut DMatrix<Complex64>) {
        let parts = self.model.parts();
        let dim = rho.nrows();
        let (gr, gz) = (self.relax.decay(), self.relax.dephasing());
        let diag: Vec<f64> = (0..dim).map(|a| parts.diagonal(a, delta)).collect();
        for b in 0..dim {
            let row_b = parts.coupling_row(b);
            for a in 0..dim {
                let mut left = Complex64::default();
                for &c in parts.coupling_row(a) {
                    left += rho[(c as usize, b)];
                }
                let mut right = Complex64::default();
                for &c in row_b {
                    right += rho[(a, c as usize)];
                }
                let r = rho[(a, b)];
                // [H, ρ]_ab with H = diag - Ω X
                let comm = r * (diag[a] - diag[b]) - (left - right) * omega;
                let damping = 0.5 * gr * (self.excitations[a] + self.excitations[b]) + 2.0 * gz * self.hamming[(a, b)];
                out[(a, b)] = Complex64::new(comm.im, -comm.re) - r * damping;
            }
        }
        if gr > 0.0 {
            for pairs in &self.lowering {
                for &(b, lb) in pairs {
                    for &(a, la) in pairs {
                        out[(la, lb)] += rho[(a, b)] * gr;
                    }
                }
            }
        }
    }

    /// Gershgorin-type bound on the generator's spectral radius.
    fn bound(&self, schedule: &Schedule) -> f64 {
        let parts = self.model.parts();
        let unitary = parts.spectral_bound(schedule.omega_max(), schedule.delta_max_abs(), &RelaxationParams::unitary());
        let n_max = self.excitations.iter().copied().fold(0.0, f64::max);
        2.0 * unitary + 2.0 * self.relax.decay() * n_max + 2.0 * self.relax.dephasing() * parts.n_sites() as f64
    }
}

/// Integrates the master equation from `initial` over `[0, τ]` with RK4,
/// symmetrizing after every step.
pub fn evolve(
    model: &Model,
    schedule: &Schedule,
    relax: RelaxationParams,
    initial: DensityMatrix,
    settings: &IntegratorSettings,
    max_dim: usize,
) -> Result<MasterRun, MasterError> {
    let dim = model.dim();
    if dim > max_dim {
        return Err(MasterError::Capacity { dim, cap: max_dim });
    }
    if initial.dim() != dim {
        return Err(MasterError::DimensionMismatch {
            expected: dim,
            got: initial.dim(),
        });
    }
    let generator = Liouvillian::new(model, relax);
    let plan = StepPlan::from_rates(schedule.duration(), generator.bound(schedule), 0.0, settings)?;
    let layout = model.layout();

    let mut rho = initial.rho;
    let zero = DMatrix::<Complex64>::zeros(dim, dim);
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (zero.clone(), zero.clone(), zero.clone(), zero.clone(), zero);

    let mut records = Vec::with_capacity(plan.times.len());
    let mut max_trace_error = 0.0f64;
    let mut max_hermiticity_error = 0.0f64;
    let mut min_eigenvalue = f64::INFINITY;
    let mut sample = |rho: &DMatrix<Complex64>, records: &mut Vec<Vec<f64>>| {
        let mut record = vec![0.0; layout.len()];
        let trace = observables::record_density(rho, model.basis(), model.targets(), layout, &mut record);
        max_trace_error = max_trace_error.max((trace - 1.0).abs());
        min_eigenvalue = min_eigenvalue.min(hermitian_eigenvalues(rho)[0]);
        records.push(record);
    };
    sample(&rho, &mut records);

    let dt = plan.dt;
    let mut t = 0.0;
    for k in 1..plan.times.len() {
        for _ in 0..plan.steps_per_sample {
            let c0 = schedule.at(t);
            let cm = schedule.at(t + 0.5 * dt);
            let c1 = schedule.at(t + dt);
            generator.apply(c0.omega, c0.delta, &rho, &mut k1);
            tmp.copy_from(&rho);
            axpy(&mut tmp, 0.5 * dt, &k1);
            generator.apply(cm.omega, cm.delta, &tmp, &mut k2);
            tmp.copy_from(&rho);
            axpy(&mut tmp, 0.5 * dt, &k2);
            generator.apply(cm.omega, cm.delta, &tmp, &mut k3);
            tmp.copy_from(&rho);
            axpy(&mut tmp, dt, &k3);
            generator.apply(c1.omega, c1.delta, &tmp, &mut k4);
            axpy(&mut rho, dt / 6.0, &k1);
            axpy(&mut rho, dt / 3.0, &k2);
            axpy(&mut rho, dt / 3.0, &k3);
            axpy(&mut rho, dt / 6.0, &k4);

            max_hermiticity_error = max_hermiticity_error.max(hermiticity_error(&rho));
            let adjoint = rho.adjoint();
            rho += adjoint;
            rho *= Complex64::new(0.5, 0.0);
            t += dt;
        }
        t = plan.times[k];
        if rho.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(MasterError::NonFinite { t });
        }
        sample(&rho, &mut records);
    }

    Ok(MasterRun {
        times: plan.times,
        records,
        final_state: DensityMatrix { rho, t },
        max_trace_error,
        max_hermiticity_error,
        min_eigenvalue,
        dt,
    })
}

fn axpy(y: &mut DMatrix<Complex64>, a: f64, x: &DMatrix<Complex64>) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += xi * a;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Profile;
    use crate::spectrum::SystemGeometry;
    use crate::trajectory::{run_trajectory, TrajectorySeed};

    fn model(n_sites: usize, n_max: usize, d: usize) -> Model {
        let g = SystemGeometry::new(n_sites, 2.0, std::f64::consts::TAU * 2.45e9).unwrap();
        Model::new(g, n_max, d).unwrap()
    }

    fn settings(points: usize) -> IntegratorSettings {
        IntegratorSettings {
            output_points: points,
            ..Default::default()
        }
    }

    #[test]
    fn two_level_decay_and_coherence() {
        let m = model(1, 1, 1);
        let (gr, gz) = (2.0e5, 5.0e4);
        let relax = RelaxationParams::new(gr, gz).unwrap();
        let s = Schedule::new(2e-5, Profile::constant(0.0), Profile::constant(0.0)).unwrap();
        let plus = [Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)];
        let set = IntegratorSettings {
            max_dt: Some(2e-9),
            ..settings(41)
        };
        let run = evolve(&m, &s, relax, DensityMatrix::from_pure(&plus), &set, DEFAULT_MAX_DIM).unwrap();
        let r = m.basis().index_of(Configuration::from_sites(1, &[1]).unwrap()).unwrap();
        let g = 1 - r;
        let rho = &run.final_state.rho;
        let t = run.final_state.t;
        assert!((rho[(r, r)].re - 0.5 * (-gr * t).exp()).abs() < 1e-9);
        let expected = 0.5 * (-relax.coherence_decay_rate() * t).exp();
        assert!((rho[(r, g)].norm() - expected).abs() / expected < 1e-6);
        assert!(run.max_trace_error < 1e-12);
    }

    #[test]
    fn unitary_run_matches_wavefunction() {
        let m = model(4, 4, 1);
        let s = Schedule::standard(1e-6, 2.0e7, -5e7, 8e7, 0.2).unwrap();
        let ground = Configuration::ground(4).unwrap();
        let set = IntegratorSettings {
            safety: 0.2,
            ..settings(11)
        };
        let run = evolve(
            &m,
            &s,
            RelaxationParams::unitary(),
            DensityMatrix::from_configuration(&m, ground).unwrap(),
            &set,
            DEFAULT_MAX_DIM,
        )
        .unwrap();
        let traj = run_trajectory(&m, &s, RelaxationParams::unitary(), ground, TrajectorySeed { base: 0, index: 0 }, &set).unwrap();
        let distance = run.final_state.trace_distance_to_pure(&traj.final_state.psi).unwrap();
        assert!(distance < 1e-6, "trace distance {distance}");
        for (a, b) in run.records.iter().flatten().zip(traj.records.iter().flatten()) {
            assert!((a - b).abs() < 1e-6 || (a.is_nan() && b.is_nan()));
        }
        assert!(run.max_trace_error < 1e-8);
    }

    #[test]
    fn dissipative_run_keeps_a_state() {
        let m = model(3, 3, 1);
        let s = Schedule::standard(2e-6, 1.0e7, -3e7, 5e7, 0.2).unwrap();
        let relax = RelaxationParams::new(3e5, 2e5).unwrap();
        let ground = Configuration::ground(3).unwrap();
        let run = evolve(
            &m,
            &s,
            relax,
            DensityMatrix::from_configuration(&m, ground).unwrap(),
            &settings(21),
            DEFAULT_MAX_DIM,
        )
        .unwrap();
        assert!(run.max_trace_error < 1e-8);
        assert!(run.min_eigenvalue > -1e-9);
        assert!(run.final_state.hermiticity_error() == 0.0);
        assert!(run.max_hermiticity_error < 1e-12);
    }

    #[test]
    fn capacity_is_enforced() {
        let m = model(9, 9, 1);
        let s = Schedule::new(1e-6, Profile::constant(1.0), Profile::constant(0.0)).unwrap();
        let ground = Configuration::ground(9).unwrap();
        let rho = DensityMatrix::from_configuration(&m, ground).unwrap();
        assert!(matches!(
            evolve(&m, &s, RelaxationParams::unitary(), rho, &settings(2), DEFAULT_MAX_DIM),
            Err(MasterError::Capacity { dim: 512, cap: 256 })
        ));
    }

    #[test]
    fn trace_distance_of_orthogonal_states() {
        let up = [Complex64::new(1.0, 0.0), Complex64::default()];
        let down = [Complex64::default(), Complex64::new(1.0, 0.0)];
        let rho = DensityMatrix::from_pure(&up);
        assert!((rho.trace_distance_to_pure(&down).unwrap() - 1.0).abs() < 1e-12);
        assert!(rho.trace_distance_to_pure(&up).unwrap() < 1e-12);
    }
}
