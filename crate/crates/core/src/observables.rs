//! Measured quantities: shell probabilities `p_n`, target populations
//! `P_n^min`, mean excitation number, Mandel `Q`, the site profile
//! `⟨σ_rr^j⟩` and a Gaussian width fit of its central peak.
//!
//! Everything linear in the density matrix is packed into a flat record
//! described by [`ObservableLayout`], which is what trajectory ensembles
//! average. `Q`, `w` and `A` are derived from averaged records.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::basis::{self, Basis, TargetState};

/// Target populations are tracked for `n = 0..TARGET_SHELLS`.
pub const TARGET_SHELLS: usize = 5;

/// Maximum deviation of the norm (or trace) from one accepted by `measure`.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObservableError {
    #[error("state is not normalized: norm {norm} deviates from 1 by more than {tolerance}")]
    Unnormalized { norm: f64, tolerance: f64 },
    #[error("state has length {got} but the basis dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// How `|R_n^min>` is read out of a state vector on a given basis.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetProjector {
    Single(usize),
    /// Uniform superposition over a contiguous index range.
    Symmetric(Range<usize>),
    /// Geometry is incommensurate or the state is truncated away.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    projectors: Vec<TargetProjector>,
}

impl Targets {
    pub fn new(basis: &Basis) -> Self {
        let projectors = (0..TARGET_SHELLS)
            .map(|n| match basis::target_state(basis.n_sites(), n) {
                Ok(TargetState::Configuration(c)) => basis
                    .index_of(c)
                    .map_or(TargetProjector::Unavailable, TargetProjector::Single),
                Ok(TargetState::SymmetricSingle) => {
                    let shell = basis.shell(1);
                    if shell.len() == basis.n_sites() {
                        TargetProjector::Symmetric(shell)
                    } else {
                        TargetProjector::Unavailable
                    }
                }
                Err(_) => TargetProjector::Unavailable,
            })
            .collect();
        Self { projectors }
    }

    pub fn projector(&self, n: usize) -> &TargetProjector {
        &self.projectors[n]
    }

    fn population_pure(&self, n: usize, psi: &[Complex64]) -> f64 {
        match &self.projectors[n] {
            TargetProjector::Single(i) => psi[*i].norm_sqr(),
            TargetProjector::Symmetric(range) => {
                let amp: Complex64 = psi[range.clone()].iter().sum();
                amp.norm_sqr() / range.len() as f64
            }
            TargetProjector::Unavailable => f64::NAN,
        }
    }

    fn population_density(&self, n: usize, rho: &DMatrix<Complex64>) -> f64 {
        match &self.projectors[n] {
            TargetProjector::Single(i) => rho[(*i, *i)].re,
            TargetProjector::Symmetric(range) => {
                let mut sum = Complex64::default();
                for a in range.clone() {
                    for b in range.clone() {
                        sum += rho[(a, b)];
                    }
                }
                sum.re / range.len() as f64
            }
            TargetProjector::Unavailable => f64::NAN,
        }
    }
}

/// Positions of the linear observables inside a flat record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservableLayout {
    n_max: usize,
    n_sites: usize,
}

impl ObservableLayout {
    pub fn new(n_max: usize, n_sites: usize) -> Self {
        Self { n_max, n_sites }
    }

    pub fn for_basis(basis: &Basis) -> Self {
        Self::new(basis.n_max(), basis.n_sites())
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn len(&self) -> usize {
        self.n_max + 1 + TARGET_SHELLS + 2 + self.n_sites
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shell_probability(&self, n: usize) -> usize {
        debug_assert!(n <= self.n_max);
        n
    }

    pub fn target_population(&self, n: usize) -> usize {
        debug_assert!(n < TARGET_SHELLS);
        self.n_max + 1 + n
    }

    pub fn mean_n(&self) -> usize {
        self.n_max + 1 + TARGET_SHELLS
    }

    pub fn mean_n2(&self) -> usize {
        self.mean_n() + 1
    }

    /// Profile entry of 1-based `site`.
    pub fn profile(&self, site: usize) -> usize {
        debug_assert!(site >= 1 && site <= self.n_sites);
        self.mean_n2() + site
    }

    pub fn profile_range(&self) -> Range<usize> {
        self.profile(1)..self.profile(self.n_sites) + 1
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        names.extend((0..=self.n_max).map(|n| format!("p_{n}")));
        names.extend((0..TARGET_SHELLS).map(|n| format!("P{n}min")));
        names.push("mean_n".into());
        names.push("mean_n2".into());
        names.extend((1..=self.n_sites).map(|j| format!("profile_{j}")));
        names
    }
}

/// Mandel parameter with the `⟨n⟩ = 0` case made explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MandelQ {
    pub value: f64,
    /// False when `⟨n⟩ = 0` and the value is the 0/0 convention `Q = 0`.
    pub defined: bool,
}

/// `Q = (⟨n²⟩ - ⟨n⟩²)/⟨n⟩ - 1`; `Q = 0` (flagged undefined) at `⟨n⟩ = 0`.
pub fn mandel_q(mean_n: f64, mean_n2: f64) -> MandelQ {
    if mean_n <= 1e-300 {
        return MandelQ {
            value: 0.0,
            defined: false,
        };
    }
    MandelQ {
        value: (mean_n2 - mean_n * mean_n) / mean_n - 1.0,
        defined: true,
    }
}

/// Mandel `Q` of a probability distribution over excitation numbers.
pub fn mandel_q_from_distribution(p_n: &[f64]) -> MandelQ {
    let (m1, m2) = p_n
        .iter()
        .enumerate()
        .fold((0.0, 0.0), |(m1, m2), (n, &p)| {
            let n = n as f64;
            (m1 + n * p, m2 + n * n * p)
        });
    mandel_q(m1, m2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableSet {
    pub p_n: Vec<f64>,
    /// `P_n^min` for `n = 0..TARGET_SHELLS`; NaN where unavailable.
    pub p_min: Vec<f64>,
    pub mean_n: f64,
    pub mean_n2: f64,
    pub q: MandelQ,
    /// `⟨σ_rr^j⟩`, index `j - 1`.
    pub profile: Vec<f64>,
    /// Norm (pure states) or trace (density matrices) before normalization.
    pub norm: f64,
}

impl ObservableSet {
    pub fn from_record(layout: &ObservableLayout, record: &[f64]) -> Self {
        debug_assert_eq!(record.len(), layout.len());
        let p_n = record[..=layout.n_max].to_vec();
        let p_min = (0..TARGET_SHELLS)
            .map(|n| record[layout.target_population(n)])
            .collect();
        let mean_n = record[layout.mean_n()];
        let mean_n2 = record[layout.mean_n2()];
        Self {
            norm: p_n.iter().sum(),
            p_n,
            p_min,
            mean_n,
            mean_n2,
            q: mandel_q(mean_n, mean_n2),
            profile: record[layout.profile_range()].to_vec(),
        }
    }

    pub fn to_record(&self, layout: &ObservableLayout) -> Vec<f64> {
        let mut out = vec![0.0; layout.len()];
        out[..=layout.n_max].copy_from_slice(&self.p_n);
        for n in 0..TARGET_SHELLS {
            out[layout.target_population(n)] = self.p_min[n];
        }
        out[layout.mean_n()] = self.mean_n;
        out[layout.mean_n2()] = self.mean_n2;
        out[layout.profile_range()].copy_from_slice(&self.profile);
        out
    }

    pub fn gaussian_width(&self, half_window: usize) -> GaussianFit {
        gaussian_width(&self.profile, lattice_centre(self.profile.len()), half_window)
    }
}

/// `(N + 1)/2`, the 1-based lattice centre.
pub fn lattice_centre(n_sites: usize) -> f64 {
    (n_sites as f64 + 1.0) / 2.0
}

/// Writes the linear record of `psi / ‖psi‖` into `out`; returns `‖psi‖²`.
pub fn record_pure(
    psi: &[Complex64],
    basis: &Basis,
    targets: &Targets,
    layout: &ObservableLayout,
    out: &mut [f64],
) -> f64 {
    out.iter_mut().for_each(|v| *v = 0.0);
    let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    let scale = 1.0 / norm2;
    let (mut m1, mut m2) = (0.0, 0.0);
    for (i, amp) in psi.iter().enumerate() {
        let prob = amp.norm_sqr() * scale;
        if prob == 0.0 {
            continue;
        }
        let config = basis.state(i);
        let n = config.excitations();
        out[layout.shell_probability(n)] += prob;
        m1 += n as f64 * prob;
        m2 += (n * n) as f64 * prob;
        for site in config.sites() {
            out[layout.profile(site)] += prob;
        }
    }
    out[layout.mean_n()] = m1;
    out[layout.mean_n2()] = m2;
    for n in 0..TARGET_SHELLS {
        out[layout.target_population(n)] = targets.population_pure(n, psi) * scale;
    }
    norm2
}

/// Observables of a normalized pure state.
pub fn measure_pure(
    psi: &[Complex64],
    basis: &Basis,
    targets: &Targets,
) -> Result<ObservableSet, ObservableError> {
    if psi.len() != basis.dim() {
        return Err(ObservableError::DimensionMismatch {
            expected: basis.dim(),
            got: psi.len(),
        });
    }
    let layout = ObservableLayout::for_basis(basis);
    let mut record = vec![0.0; layout.len()];
    let norm2 = record_pure(psi, basis, targets, &layout, &mut record);
    let norm = norm2.sqrt();
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(ObservableError::Unnormalized {
            norm,
            tolerance: NORM_TOLERANCE,
        });
    }
    let mut set = ObservableSet::from_record(&layout, &record);
    set.norm = norm;
    Ok(set)
}

/// Writes the linear record of `rho` into `out`; returns `tr rho`.
/// Entries are not divided by the trace.
pub fn record_density(
    rho: &DMatrix<Complex64>,
    basis: &Basis,
    targets: &Targets,
    layout: &ObservableLayout,
    out: &mut [f64],
) -> f64 {
    out.iter_mut().for_each(|v| *v = 0.0);
    let (mut m1, mut m2, mut trace) = (0.0, 0.0, 0.0);
    for i in 0..basis.dim() {
        let prob = rho[(i, i)].re;
        trace += prob;
        let config = basis.state(i);
        let n = config.excitations();
        out[layout.shell_probability(n)] += prob;
        m1 += n as f64 * prob;
        m2 += (n * n) as f64 * prob;
        for site in config.sites() {
            out[layout.profile(site)] += prob;
        }
    }
    out[layout.mean_n()] = m1;
    out[layout.mean_n2()] = m2;
    for n in 0..TARGET_SHELLS {
        out[layout.target_population(n)] = targets.population_density(n, rho);
    }
    trace
}

/// Observables of a unit-trace density matrix.
pub fn measure_density(
    rho: &DMatrix<Complex64>,
    basis: &Basis,
    targets: &Targets,
) -> Result<ObservableSet, ObservableError> {
    let dim = basis.dim();
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(ObservableError::DimensionMismatch {
            expected: dim,
            got: rho.nrows(),
        });
    }
    let layout = ObservableLayout::for_basis(basis);
    let mut record = vec![0.0; layout.len()];
    let trace = record_density(rho, basis, targets, &layout, &mut record);
    if (trace - 1.0).abs() > NORM_TOLERANCE {
        return Err(ObservableError::Unnormalized {
            norm: trace,
            tolerance: NORM_TOLERANCE,
        });
    }
    let mut set = ObservableSet::from_record(&layout, &record);
    set.norm = trace;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    /// Converged with `w < 0.5 a`: narrower than one lattice site.
    SubResolution,
    /// Flat, non-peaked or non-convergent input; `width` is NaN.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub amplitude: f64,
    /// In units of the lattice constant.
    pub width: f64,
    pub status: FitStatus,
}

impl GaussianFit {
    fn degenerate() -> Self {
        Self {
            amplitude: f64::NAN,
            width: f64::NAN,
            status: FitStatus::Degenerate,
        }
    }
}

/// Least-squares fit of `A exp[-(j - j_c)² / (2 w²)]` to the profile over
/// the sites `j_c ± half_window` (Levenberg-Marquardt, start `A = profile(j_c)`,
/// `w = 1`).
pub fn gaussian_width(profile: &[f64], centre: f64, half_window: usize) -> GaussianFit {
    let n_sites = profile.len();
    let lo = (centre - half_window as f64).ceil().max(1.0) as usize;
    let hi = ((centre + half_window as f64).floor() as usize).min(n_sites);
    if n_sites == 0 || lo > hi || hi - lo < 2 {
        return GaussianFit::degenerate();
    }
    let points: Vec<(f64, f64)> = (lo..=hi).map(|j| (j as f64 - centre, profile[j - 1])).collect();
    if points.iter().any(|p| !p.1.is_finite()) {
        return GaussianFit::degenerate();
    }

    let peak = points
        .iter()
        .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()))
        .map(|p| p.1)
        .unwrap_or(0.0);
    let edge = points[0].1.max(points[points.len() - 1].1);
    let (min, max) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    if !(peak > 0.0) || max - min <= 1e-12 * max.abs() || peak <= edge {
        return GaussianFit::degenerate();
    }

    let cost = |a: f64, w: f64| -> f64 {
        points
            .iter()
            .map(|&(x, y)| {
                let r = a * (-x * x / (2.0 * w * w)).exp() - y;
                r * r
            })
            .sum()
    };

    let (mut a, mut w) = (peak, 1.0);
    let mut lambda = 1e-3;
    let mut current = cost(a, w);
    for _ in 0..500 {
        // Normal equations J^T J δ = -J^T r for (A, w).
        let (mut jaa, mut jaw, mut jww, mut ga, mut gw) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(x, y) in &points {
            let e = (-x * x / (2.0 * w * w)).exp();
            let r = a * e - y;
            let da = e;
            let dw = a * e * x * x / (w * w * w);
            jaa += da * da;
            jaw += da * dw;
            jww += dw * dw;
            ga += da * r;
            gw += dw * r;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let (maa, mww) = (jaa * (1.0 + lambda), jww * (1.0 + lambda));
            let det = maa * mww - jaw * jaw;
            if det.abs() < f64::MIN_POSITIVE {
                lambda *= 10.0;
                continue;
            }
            let step_a = -(mww * ga - jaw * gw) / det;
            let step_w = -(maa * gw - jaw * ga) / det;
            let (na, nw) = (a + step_a, w + step_w);
            if nw > 0.0 && na.is_finite() && nw.is_finite() {
                let trial = cost(na, nw);
                if trial <= current {
                    let converged = (current - trial) <= 1e-15 * current.max(1e-300)
                        && step_a.abs() <= 1e-12 * a.abs()
                        && step_w.abs() <= 1e-12 * w;
                    a = na;
                    w = nw;
                    current = trial;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if converged {
                        return finish(a, w);
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    finish(a, w)
}

fn finish(amplitude: f64, width: f64) -> GaussianFit {
    if !(amplitude > 0.0 && width.is_finite() && width > 0.0) {
        return GaussianFit::degenerate();
    }
    let status = if width < 0.5 {
        FitStatus::SubResolution
    } else {
        FitStatus::Ok
    };
    GaussianFit {
        amplitude,
        width,
        status,
    }
}
