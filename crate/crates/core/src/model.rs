//! Immutable bundle of everything a propagator needs about the chain.

use thiserror::Error;

use crate::basis::{Basis, BasisError};
use crate::hamiltonian::{HamiltonianError, HamiltonianParts};
use crate::observables::{ObservableLayout, Targets};
use crate::spectrum::SystemGeometry;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Hamiltonian(#[from] HamiltonianError),
}

/// Basis, Hamiltonian structures and readout projectors for one geometry
/// and truncation. Shared read-only by every trajectory worker.
#[derive(Debug, Clone)]
pub struct Model {
    geometry: SystemGeometry,
    basis: Basis,
    parts: HamiltonianParts,
    targets: Targets,
    layout: ObservableLayout,
}

impl Model {
    pub fn new(geometry: SystemGeometry, n_max: usize, min_distance: usize) -> Result<Self, ModelError> {
        let basis = Basis::enumerate(geometry.n_sites(), n_max, min_distance)?;
        Self::from_basis(geometry, basis)
    }

    pub fn from_basis(geometry: SystemGeometry, basis: Basis) -> Result<Self, ModelError> {
        let parts = HamiltonianParts::build(&basis, &geometry)?;
        let targets = Targets::new(&basis);
        let layout = ObservableLayout::for_basis(&basis);
        Ok(Self {
            geometry,
            basis,
            parts,
            targets,
            layout,
        })
    }

    pub fn geometry(&self) -> &SystemGeometry {
        &self.geometry
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn parts(&self) -> &HamiltonianParts {
        &self.parts
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn layout(&self) -> &ObservableLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_sites(&self) -> usize {
        self.basis.n_sites()
    }
}
