//! Matrix-free representation of the driven Ising-like Hamiltonian
//!
//! ```text
//! H/ħ = -δ(t) Σ_j σ_rr^j + Σ_{i<j} Δ_ij σ_rr^i σ_rr^j - Ω(t) Σ_j (σ_rg^j + σ_gr^j)
//! ```
//!
//! on a truncated [`Basis`], and of its non-Hermitian quantum-jump
//! counterpart `H̃ = H - (i/2) ħ Σ_j (Γ_r σ_rr^j + Γ_z 𝟙)`.
//!
//! δ and Ω only enter as scalars in front of three fixed structures: the
//! excitation number, the interaction sum and the 0/1 coupling adjacency.

use num_complex::Complex64;
use thiserror::Error;

use crate::basis::Basis;
use crate::schedule::Schedule;
use crate::spectrum::SystemGeometry;

/// Default ceiling on the basis dimension accepted by [`HamiltonianParts::build`].
pub const DEFAULT_MAX_DIM: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HamiltonianError {
    #[error("basis dimension {dim} exceeds the configured budget of {max_dim}")]
    Capacity { dim: usize, max_dim: usize },
    #[error("geometry has {geometry} sites but the basis has {basis}")]
    SiteMismatch { geometry: usize, basis: usize },
    #[error("vector of length {got} does not match basis dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid relaxation rates: {0}")]
    InvalidRates(String),
}

/// Spontaneous decay `Γ_r` and dephasing `Γ_z`, both in 1/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RelaxationParams {
    decay: f64,
    dephasing: f64,
}

impl RelaxationParams {
    pub fn new(decay: f64, dephasing: f64) -> Result<Self, HamiltonianError> {
        for (name, v) in [("decay", decay), ("dephasing", dephasing)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(HamiltonianError::InvalidRates(format!(
                    "{name} rate must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(Self { decay, dephasing })
    }

    pub fn unitary() -> Self {
        Self::default()
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn dephasing(&self) -> f64 {
        self.dephasing
    }

    /// `γ_rg = Γ_r/2 + 2Γ_z`, decay rate of the `g-r` coherence.
    pub fn coherence_decay_rate(&self) -> f64 {
        0.5 * self.decay + 2.0 * self.dephasing
    }

    pub fn is_unitary(&self) -> bool {
        self.decay == 0.0 && self.dephasing == 0.0
    }
}

/// Fixed diagonal and off-diagonal structures of the Hamiltonian.
#[derive(Debug, Clone)]
pub struct HamiltonianParts {
    n_sites: usize,
    diag_interaction: Vec<f64>,
    diag_number: Vec<u8>,
    row_offsets: Vec<usize>,
    columns: Vec<u32>,
}

impl HamiltonianParts {
    pub fn build(basis: &Basis, geom: &SystemGeometry) -> Result<Self, HamiltonianError> {
        Self::build_with_budget(basis, geom, DEFAULT_MAX_DIM)
    }

    pub fn build_with_budget(
        basis: &Basis,
        geom: &SystemGeometry,
        max_dim: usize,
    ) -> Result<Self, HamiltonianError> {
        let dim = basis.dim();
        if dim > max_dim || dim > u32::MAX as usize {
            return Err(HamiltonianError::Capacity { dim, max_dim });
        }
        if geom.n_sites() != basis.n_sites() {
            return Err(HamiltonianError::SiteMismatch {
                geometry: geom.n_sites(),
                basis: basis.n_sites(),
            });
        }

        let n_sites = basis.n_sites();
        let mut diag_interaction = Vec::with_capacity(dim);
        let mut diag_number = Vec::with_capacity(dim);
        let mut row_offsets = Vec::with_capacity(dim + 1);
        let mut columns = Vec::new();
        row_offsets.push(0);

        for &config in basis.states() {
            diag_interaction.push(geom.interaction_energy(config));
            diag_number.push(config.excitations() as u8);

            let start = columns.len();
            for site in 1..=n_sites {
                let neighbour = config.lowered(site).or_else(|| config.raised(site));
                if let Some(j) = neighbour.and_then(|c| basis.index_of(c)) {
                    columns.push(j as u32);
                }
            }
            columns[start..].sort_unstable();
            row_offsets.push(columns.len());
        }

        Ok(Self {
            n_sites,
            diag_interaction,
            diag_number,
            row_offsets,
            columns,
        })
    }

    pub fn dim(&self) -> usize {
        self.diag_number.len()
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    /// `Σ_{i<j} Δ_ij` per basis state.
    pub fn diag_interaction(&self) -> &[f64] {
        &self.diag_interaction
    }

    /// Excitation number per basis state.
    pub fn diag_number(&self) -> &[u8] {
        &self.diag_number
    }

    /// Column indices of the unit entries of `Σ_j (σ_rg^j + σ_gr^j)` in row `i`.
    pub fn coupling_row(&self, i: usize) -> &[u32] {
        &self.columns[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn coupling_nnz(&self) -> usize {
        self.columns.len()
    }

    pub fn max_row_degree(&self) -> usize {
        self.row_offsets
            .windows(2)
            .map(|w| w[1] - w[0])
            .max()
            .unwrap_or(0)
    }

    /// Diagonal entry `-δ n_i + Σ Δ` of `H/ħ`.
    #[inline]
    pub fn diagonal(&self, i: usize, delta: f64) -> f64 {
        self.diag_interaction[i] - delta * f64::from(self.diag_number[i])
    }

    /// `out = (H/ħ) psi` at the given controls.
    pub fn apply_hamiltonian(
        &self,
        omega: f64,
        delta: f64,
        psi: &[Complex64],
        out: &mut [Complex64],
    ) -> Result<(), HamiltonianError> {
        self.check_len(psi.len())?;
        self.check_len(out.len())?;
        for (i, o) in out.iter_mut().enumerate() {
            let mut coupled = Complex64::new(0.0, 0.0);
            for &j in self.coupling_row(i) {
                coupled += psi[j as usize];
            }
            *o = psi[i] * self.diagonal(i, delta) - coupled * omega;
        }
        Ok(())
    }

    /// `out = -i (H̃/ħ) psi` at the given controls: the right-hand side of the
    /// no-jump Schrödinger equation.
    #[inline]
    pub fn effective_rhs(
        &self,
        omega: f64,
        delta: f64,
        relax: &RelaxationParams,
        psi: &[Complex64],
        out: &mut [Complex64],
    ) {
        debug_assert_eq!(psi.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        let uniform = 0.5 * relax.dephasing() * self.n_sites as f64;
        let half_decay = 0.5 * relax.decay();
        for (i, o) in out.iter_mut().enumerate() {
            let mut coupled = Complex64::new(0.0, 0.0);
            for &j in self.coupling_row(i) {
                coupled += psi[j as usize];
            }
            let n = f64::from(self.diag_number[i]);
            let h_psi = psi[i] * (self.diag_interaction[i] - delta * n) - coupled * omega;
            let damping = half_decay * n + uniform;
            // -i h_psi - damping psi
            *o = Complex64::new(h_psi.im, -h_psi.re) - psi[i] * damping;
        }
    }

    /// `dψ/dt` at time `t` of `schedule`.
    pub fn apply_effective(
        &self,
        psi: &[Complex64],
        t: f64,
        schedule: &Schedule,
        relax: &RelaxationParams,
        out: &mut [Complex64],
    ) -> Result<(), HamiltonianError> {
        self.check_len(psi.len())?;
        self.check_len(out.len())?;
        let c = schedule.at(t);
        self.effective_rhs(c.omega, c.delta, relax, psi, out);
        Ok(())
    }

    /// Gershgorin bound on the spectral radius of `H̃/ħ` over the given
    /// control ranges.
    pub fn spectral_bound(&self, omega_max: f64, delta_max_abs: f64, relax: &RelaxationParams) -> f64 {
        let degree = self.max_row_degree() as f64;
        let damping = 0.5 * relax.decay() * self.diag_number.iter().copied().max().unwrap_or(0) as f64
            + 0.5 * relax.dephasing() * self.n_sites as f64;
        let diag = (0..self.dim())
            .map(|i| {
                let n = f64::from(self.diag_number[i]);
                self.diag_interaction[i].abs() + delta_max_abs * n
            })
            .fold(0.0, f64::max);
        diag + omega_max * degree + damping
    }

    /// Dense real matrix of `H/ħ` (row-major), for small systems only.
    pub fn dense(&self, omega: f64, delta: f64) -> Vec<f64> {
        let dim = self.dim();
        let mut m = vec![0.0; dim * dim];
        for i in 0..dim {
            m[i * dim + i] = self.diagonal(i, delta);
            for &j in self.coupling_row(i) {
                m[i * dim + j as usize] -= omega;
            }
        }
        m
    }

    fn check_len(&self, got: usize) -> Result<(), HamiltonianError> {
        if got != self.dim() {
            return Err(HamiltonianError::DimensionMismatch {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Configuration;

    fn geometry(n_sites: usize) -> SystemGeometry {
        SystemGeometry::new(n_sites, 0.532, std::f64::consts::TAU * 2.45e9).unwrap()
    }

    #[test]
    fn single_atom_is_a_two_level_system() {
        let b = Basis::enumerate(1, 1, 1).unwrap();
        let h = HamiltonianParts::build(&b, &geometry(1)).unwrap();
        assert_eq!(h.dim(), 2);
        assert_eq!(h.coupling_row(0), &[1]);
        assert_eq!(h.coupling_row(1), &[0]);
        let (omega, delta) = (0.7, 0.3);
        assert_eq!(h.dense(omega, delta), vec![0.0, -omega, -omega, -delta]);
    }

    #[test]
    fn nearest_neighbour_pair_energy() {
        let g = geometry(2);
        let b = Basis::enumerate(2, 2, 1).unwrap();
        let h = HamiltonianParts::build(&b, &g).unwrap();
        let both = b.index_of(Configuration::from_sites(2, &[1, 2]).unwrap()).unwrap();
        let expected = g.c6() / 0.532f64.powi(6);
        assert!((h.diag_interaction()[both] - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn truncated_crystal_row_n19() {
        let b = Basis::enumerate(19, 3, 1).unwrap();
        let h = HamiltonianParts::build(&b, &geometry(19)).unwrap();
        let crystal = b.index_of(Configuration::from_sites(19, &[1, 10, 19]).unwrap()).unwrap();
        let mut neighbours: Vec<Vec<usize>> = h
            .coupling_row(crystal)
            .iter()
            .map(|&j| b.state(j as usize).sites().collect())
            .collect();
        neighbours.sort();
        assert_eq!(neighbours, vec![vec![1, 10], vec![1, 19], vec![10, 19]]);
    }

    #[test]
    fn selection_rule_and_symmetry() {
        let b = Basis::enumerate(9, 4, 2).unwrap();
        let h = HamiltonianParts::build(&b, &geometry(9)).unwrap();
        for i in 0..h.dim() {
            for &j in h.coupling_row(i) {
                let (a, c) = (b.state(i), b.state(j as usize));
                assert_eq!((a.bits() ^ c.bits()).count_ones(), 1);
                assert_eq!(a.excitations().abs_diff(c.excitations()), 1);
                assert!(h.coupling_row(j as usize).contains(&(i as u32)));
                assert_ne!(i, j as usize);
            }
        }
        assert!(h.diag_interaction().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn no_relaxation_conserves_norm() {
        let b = Basis::enumerate(5, 5, 1).unwrap();
        let h = HamiltonianParts::build(&b, &geometry(5)).unwrap();
        let psi: Vec<Complex64> = (0..h.dim())
            .map(|i| Complex64::new((i as f64).sin(), (0.3 * i as f64).cos()))
            .collect();
        let mut d = vec![Complex64::default(); h.dim()];
        h.effective_rhs(1.3e6, 2.0e6, &RelaxationParams::unitary(), &psi, &mut d);
        let dnorm: f64 = psi.iter().zip(&d).map(|(p, q)| 2.0 * (p.conj() * q).re).sum();
        let scale: f64 = d.iter().map(|z| z.norm()).sum();
        assert!(dnorm.abs() < 1e-12 * scale);
    }

    #[test]
    fn diagonal_decay_of_a_configuration() {
        let n_sites = 6;
        let b = Basis::enumerate(n_sites, 3, 2).unwrap();
        let h = HamiltonianParts::build(&b, &geometry(n_sites)).unwrap();
        let relax = RelaxationParams::new(3.0, 0.5).unwrap();
        let idx = b.index_of(Configuration::from_sites(n_sites, &[1, 4]).unwrap()).unwrap();
        let mut psi = vec![Complex64::default(); h.dim()];
        psi[idx] = Complex64::new(0.6, 0.8);
        let mut d = vec![Complex64::default(); h.dim()];
        h.effective_rhs(0.0, 0.0, &relax, &psi, &mut d);
        let dnorm: f64 = psi.iter().zip(&d).map(|(p, q)| 2.0 * (p.conj() * q).re).sum();
        let expected = -(2.0 * 3.0 + n_sites as f64 * 0.5);
        assert!((dnorm - expected).abs() < 1e-12);
    }

    #[test]
    fn capacity_and_dimension_errors() {
        let b = Basis::enumerate(10, 3, 1).unwrap();
        assert!(matches!(
            HamiltonianParts::build_with_budget(&b, &geometry(10), 10),
            Err(HamiltonianError::Capacity { .. })
        ));
        assert!(matches!(
            HamiltonianParts::build(&b, &geometry(11)),
            Err(HamiltonianError::SiteMismatch { .. })
        ));
        let h = HamiltonianParts::build(&b, &geometry(10)).unwrap();
        let mut out = vec![Complex64::default(); 3];
        assert!(matches!(
            h.apply_hamiltonian(1.0, 1.0, &[Complex64::default(); 3], &mut out),
            Err(HamiltonianError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn relaxation_params() {
        assert!(RelaxationParams::new(-1.0, 0.0).is_err());
        assert!(RelaxationParams::new(0.0, f64::NAN).is_err());
        let r = RelaxationParams::new(4.0, 1.5).unwrap();
        assert_eq!(r.coherence_decay_rate(), 2.0 + 3.0);
        assert!(RelaxationParams::unitary().is_unitary());
    }
}
