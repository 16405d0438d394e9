//! Adiabatic preparation of Rydberg crystals in a one-dimensional lattice.
//!
//! The chain is simulated in a truncated, blockade-aware basis: at most
//! `n_max` excitations, any two at least `d` sites apart. Coherent dynamics
//! follows a chirped, pulsed laser; relaxation is treated with quantum
//! trajectories, and small systems can be checked against a dense density
//! matrix integration.

pub mod basis;
pub mod config;
pub mod experiment;
pub mod hamiltonian;
pub mod master_oracle;
pub mod model;
pub mod observables;
pub mod presets;
pub mod schedule;
pub mod spectrum;
pub mod trajectory;
pub mod units;
