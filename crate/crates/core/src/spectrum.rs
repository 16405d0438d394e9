//! Classical (Ω → 0) energies of the chain, level crossings between the
//! shell minima, effective multi-atom couplings and Landau-Zener estimates.
//!
//! All energies are angular frequencies (rad/s); lengths are in μm.

use thiserror::Error;

use crate::basis::{self, Basis, BasisError, Configuration};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectrumError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("no closed-form effective coupling for the {from} -> {to} transition")]
    UnsupportedTransition { from: usize, to: usize },
}

/// Lattice geometry and van der Waals strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemGeometry {
    n_sites: usize,
    lattice_constant: f64,
    c6: f64,
}

impl SystemGeometry {
    /// `lattice_constant` in μm, `c6` in rad/s·μm⁶ (must be repulsive).
    pub fn new(n_sites: usize, lattice_constant: f64, c6: f64) -> Result<Self, SpectrumError> {
        if n_sites == 0 || n_sites > basis::MAX_SITES {
            return Err(SpectrumError::InvalidGeometry(format!(
                "N = {n_sites} outside 1..={}",
                basis::MAX_SITES
            )));
        }
        if !(lattice_constant > 0.0 && lattice_constant.is_finite()) {
            return Err(SpectrumError::InvalidGeometry(format!(
                "lattice constant must be positive, got {lattice_constant}"
            )));
        }
        if !(c6 > 0.0 && c6.is_finite()) {
            return Err(SpectrumError::InvalidGeometry(format!(
                "C6 must be positive (repulsive), got {c6}"
            )));
        }
        Ok(Self {
            n_sites,
            lattice_constant,
            c6,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn lattice_constant(&self) -> f64 {
        self.lattice_constant
    }

    pub fn c6(&self) -> f64 {
        self.c6
    }

    /// Distance between the first and last atom, `l = a (N - 1)`.
    pub fn length(&self) -> f64 {
        self.lattice_constant * (self.n_sites - 1) as f64
    }

    /// `C6 / l⁶`, the natural energy unit of the level diagram.
    pub fn interaction_scale(&self) -> f64 {
        self.c6 / self.length().powi(6)
    }

    /// `Δ_ij = C6 / (a |i - j|)⁶` for 1-based sites.
    pub fn pair_interaction(&self, i: usize, j: usize) -> f64 {
        let r = self.lattice_constant * i.abs_diff(j) as f64;
        self.c6 / r.powi(6)
    }

    /// `Σ_{i<j} Δ_ij` over the excited sites of `config`.
    pub fn interaction_energy(&self, config: Configuration) -> f64 {
        let sites: Vec<usize> = config.sites().collect();
        let mut sum = 0.0;
        for (k, &i) in sites.iter().enumerate() {
            for &j in &sites[k + 1..] {
                sum += self.pair_interaction(i, j);
            }
        }
        sum
    }

    /// Diagonal energy `-n δ + Σ_{i<j} Δ_ij` of a configuration.
    pub fn configuration_energy(&self, config: Configuration, delta: f64) -> f64 {
        -(config.excitations() as f64) * delta + self.interaction_energy(config)
    }
}

/// `(n-1)⁶ Σ_{k=1}^{n-1} k/(n-k)⁶`: interaction energy of `n` equidistant
/// excitations spanning the chain, in units of `C6/l⁶`.
pub fn interaction_coefficient(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let sum: f64 = (1..n)
        .map(|k| k as f64 / ((n - k) as f64).powi(6))
        .sum();
    ((n - 1) as f64).powi(6) * sum
}

/// Leading-order coefficient `(n-1)⁷`.
pub fn interaction_coefficient_approx(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    ((n - 1) as f64).powi(7)
}

/// Lowest classical energy of the `n`-excitation shell.
pub fn e_min(n: usize, delta: f64, geom: &SystemGeometry) -> Result<f64, SpectrumError> {
    basis::target_state(geom.n_sites(), n)?;
    Ok(-(n as f64) * delta + interaction_coefficient(n) * geom.interaction_scale())
}

/// `-n δ + (n-1)⁷ C6/l⁶`.
pub fn e_min_approx(n: usize, delta: f64, geom: &SystemGeometry) -> f64 {
    -(n as f64) * delta + interaction_coefficient_approx(n) * geom.interaction_scale()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CrossingForm {
    /// Solves `E_{n-1}^min = E_n^min` with the exact interaction sums.
    #[default]
    Exact,
    /// `C6 [(n-1)⁷ - (n-2)⁷] / l⁶`.
    Approximate,
}

/// Detuning `δ_{(n-1)→n}` at which the shell minima `n-1` and `n` cross.
pub fn crossing_detuning(n: usize, geom: &SystemGeometry, form: CrossingForm) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let coefficient = match form {
        CrossingForm::Exact => interaction_coefficient(n) - interaction_coefficient(n - 1),
        CrossingForm::Approximate => {
            interaction_coefficient_approx(n) - interaction_coefficient_approx(n - 1)
        }
    };
    coefficient * geom.interaction_scale()
}

/// Detuning `δ_n ≈ C6 n⁷ / (2 l⁶)` around which `|R_n^min>` is the ground state.
pub fn ground_state_detuning(n: usize, geom: &SystemGeometry) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (n as f64).powi(7) / 2.0 * geom.interaction_scale()
}

/// Which mechanism couples consecutive shell minima.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingRule {
    /// `√N Ω`, ground state to the symmetric single excitation.
    Collective,
    /// `2Ω/√N`, symmetric single excitation to the two edge atoms.
    Bottleneck,
    /// `Ω`, a single atom added to the two-excitation crystal.
    SingleAtom,
    /// `Ω³ / [C6/(l/3)⁶]²`, order of magnitude only.
    ThreePhoton,
    /// `(2n-5)`-photon process with no closed form.
    MultiPhoton { photons: usize },
}

impl CouplingRule {
    pub fn for_transition(n_to: usize) -> Option<Self> {
        match n_to {
            0 => None,
            1 => Some(Self::Collective),
            2 => Some(Self::Bottleneck),
            3 => Some(Self::SingleAtom),
            4 => Some(Self::ThreePhoton),
            n => Some(Self::MultiPhoton { photons: 2 * n - 5 }),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Collective => "collective".into(),
            Self::Bottleneck => "bottleneck".into(),
            Self::SingleAtom => "single-atom".into(),
            Self::ThreePhoton => "three-photon".into(),
            Self::MultiPhoton { photons } => format!("{photons}-photon"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRabi {
    pub value: f64,
    pub rule: CouplingRule,
    /// True when the value is a scaling estimate with unit prefactor.
    pub estimate_only: bool,
}

/// Effective coupling `Ω_{(n-1)→n}` between consecutive shell minima.
pub fn effective_rabi(
    n_to: usize,
    omega: f64,
    geom: &SystemGeometry,
) -> Result<EffectiveRabi, SpectrumError> {
    let sqrt_n = (geom.n_sites() as f64).sqrt();
    let (value, estimate_only) = match n_to {
        1 => (sqrt_n * omega, false),
        2 => (2.0 * omega / sqrt_n, false),
        3 => (omega, false),
        4 => {
            let third = geom.c6 / (geom.length() / 3.0).powi(6);
            (omega.powi(3) / (third * third), true)
        }
        _ => {
            return Err(SpectrumError::UnsupportedTransition {
                from: n_to.saturating_sub(1),
                to: n_to,
            })
        }
    };
    Ok(EffectiveRabi {
        value,
        rule: CouplingRule::for_transition(n_to).expect("n_to >= 1"),
        estimate_only,
    })
}

/// Probability of staying diabatic at a linear crossing:
/// `exp(-2π |Ω_eff|² / α)` with `α = dδ/dt`.
pub fn landau_zener_nonadiabatic_prob(omega_eff: f64, sweep_rate: f64) -> f64 {
    if omega_eff == 0.0 {
        return 1.0;
    }
    if sweep_rate == 0.0 {
        return 0.0;
    }
    (-std::f64::consts::TAU * omega_eff * omega_eff / sweep_rate.abs()).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub n_from: usize,
    pub n_to: usize,
    pub delta: f64,
    pub rule: CouplingRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossingTable {
    pub rows: Vec<Crossing>,
}

pub fn crossing_table(n_max: usize, geom: &SystemGeometry, form: CrossingForm) -> CrossingTable {
    let rows = (1..=n_max)
        .map(|n| Crossing {
            n_from: n - 1,
            n_to: n,
            delta: crossing_detuning(n, geom, form),
            rule: CouplingRule::for_transition(n).expect("n >= 1"),
        })
        .collect();
    CrossingTable { rows }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelRow {
    pub delta: f64,
    pub n: usize,
    pub energy: f64,
    pub is_shell_min: bool,
    pub config: Configuration,
}

/// Diagonal energies of every basis configuration over a detuning grid,
/// with the per-shell minima flagged.
pub fn level_diagram(basis: &Basis, geom: &SystemGeometry, delta_grid: &[f64]) -> Vec<LevelRow> {
    let interactions: Vec<f64> = basis
        .states()
        .iter()
        .map(|&c| geom.interaction_energy(c))
        .collect();
    let shell_minima: Vec<f64> = (0..=basis.n_max())
        .map(|n| {
            basis
                .shell(n)
                .map(|i| interactions[i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();

    let mut rows = Vec::with_capacity(delta_grid.len() * basis.dim());
    for &delta in delta_grid {
        for n in 0..=basis.n_max() {
            let tol = 1e-12 * shell_minima[n].abs().max(f64::MIN_POSITIVE);
            for i in basis.shell(n) {
                rows.push(LevelRow {
                    delta,
                    n,
                    energy: -(n as f64) * delta + interactions[i],
                    is_shell_min: interactions[i] - shell_minima[n] <= tol,
                    config: basis.state(i),
                });
            }
        }
    }
    rows
}
