//! Truncated many-body basis of Rydberg-excitation configurations.
//!
//! A [`Configuration`] is a bit pattern over an open chain of `N` sites
//! (site `j` in `1..=N` lives in bit `j - 1`). A [`Basis`] retains every
//! configuration with at most `n_max` excitations whose excited sites are
//! pairwise at least `d` sites apart. States are stored shell-major (by
//! excitation number) and lexicographically by site tuple inside a shell,
//! so every shell occupies a contiguous index range.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;

use thiserror::Error;

/// Largest chain supported by the single-word bit pattern.
pub const MAX_SITES: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BasisError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("no equidistant placement of {n} excitations on {n_sites} sites: (N-1) = {} is not divisible by (n-1) = {}", n_sites - 1, n - 1)]
    InfeasibleGeometry { n_sites: usize, n: usize },
}

/// Set of Rydberg-excited sites on an `N`-site chain.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    bits: u64,
    n_sites: u8,
}

impl Configuration {
    /// All atoms in the ground state.
    pub fn ground(n_sites: usize) -> Result<Self, BasisError> {
        check_sites(n_sites)?;
        Ok(Self {
            bits: 0,
            n_sites: n_sites as u8,
        })
    }

    /// Builds a configuration from 1-based site indices.
    pub fn from_sites(n_sites: usize, sites: &[usize]) -> Result<Self, BasisError> {
        check_sites(n_sites)?;
        let mut bits = 0u64;
        for &j in sites {
            if j == 0 || j > n_sites {
                return Err(BasisError::InvalidArguments(format!(
                    "site {j} outside 1..={n_sites}"
                )));
            }
            let mask = 1u64 << (j - 1);
            if bits & mask != 0 {
                return Err(BasisError::InvalidArguments(format!("duplicate site {j}")));
            }
            bits |= mask;
        }
        Ok(Self {
            bits,
            n_sites: n_sites as u8,
        })
    }

    pub fn from_bits(n_sites: usize, bits: u64) -> Result<Self, BasisError> {
        check_sites(n_sites)?;
        if n_sites < 64 && bits >> n_sites != 0 {
            return Err(BasisError::InvalidArguments(format!(
                "bit pattern {bits:#x} has bits beyond site {n_sites}"
            )));
        }
        Ok(Self {
            bits,
            n_sites: n_sites as u8,
        })
    }

    pub fn bits(self) -> u64 {
        self.bits
    }

    pub fn n_sites(self) -> usize {
        self.n_sites as usize
    }

    /// Excitation number `n`.
    pub fn excitations(self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_excited(self, site: usize) -> bool {
        site >= 1 && site <= self.n_sites() && self.bits & (1u64 << (site - 1)) != 0
    }

    /// Excited sites in increasing order, 1-based.
    pub fn sites(self) -> Sites {
        Sites { bits: self.bits }
    }

    /// Smallest `|i - j|` over excited pairs, `None` for fewer than two excitations.
    pub fn min_pair_distance(self) -> Option<usize> {
        let mut prev: Option<usize> = None;
        let mut best: Option<usize> = None;
        for j in self.sites() {
            if let Some(p) = prev {
                let gap = j - p;
                best = Some(best.map_or(gap, |b: usize| b.min(gap)));
            }
            prev = Some(j);
        }
        best
    }

    /// Copy with `site` de-excited. Returns `None` if the site was not excited.
    pub fn lowered(self, site: usize) -> Option<Self> {
        self.is_excited(site).then(|| Self {
            bits: self.bits & !(1u64 << (site - 1)),
            n_sites: self.n_sites,
        })
    }

    /// Copy with `site` excited. Returns `None` if it already was.
    pub fn raised(self, site: usize) -> Option<Self> {
        (site >= 1 && site <= self.n_sites() && !self.is_excited(site)).then(|| Self {
            bits: self.bits | (1u64 << (site - 1)),
            n_sites: self.n_sites,
        })
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration(N={}, ", self.n_sites)?;
        f.debug_set().entries(self.sites()).finish()?;
        write!(f, ")")
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for j in 1..=self.n_sites() {
            f.write_str(if self.is_excited(j) { "r" } else { "g" })?;
        }
        Ok(())
    }
}

/// Iterator over the 1-based excited sites of a bit pattern.
#[derive(Clone)]
pub struct Sites {
    bits: u64,
}

impl Iterator for Sites {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.bits == 0 {
            return None;
        }
        let tz = self.bits.trailing_zeros() as usize;
        self.bits &= self.bits - 1;
        Some(tz + 1)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.bits.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Sites {}

/// The target state `|R_n^min>` of a shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetState {
    /// A single classical configuration (n = 0 or n >= 2).
    Configuration(Configuration),
    /// The symmetric single-excitation state `N^{-1/2} sum_j |...r_j...>`.
    SymmetricSingle,
}

/// Index-addressable set of admissible configurations.
#[derive(Debug, Clone)]
pub struct Basis {
    n_sites: usize,
    n_max: usize,
    min_distance: usize,
    states: Vec<Configuration>,
    index: HashMap<u64, usize>,
    shell_offsets: Vec<usize>,
}

impl Basis {
    /// Enumerates every configuration with `n <= n_max` and pair distance `>= d`.
    pub fn enumerate(n_sites: usize, n_max: usize, d: usize) -> Result<Self, BasisError> {
        check_sites(n_sites)?;
        if n_max > n_sites {
            return Err(BasisError::InvalidArguments(format!(
                "n_max = {n_max} exceeds N = {n_sites}"
            )));
        }
        if d < 1 {
            return Err(BasisError::InvalidArguments(
                "minimum pair distance d must be at least 1".into(),
            ));
        }

        let mut states = Vec::new();
        let mut shell_offsets = Vec::with_capacity(n_max + 2);
        let mut sites = Vec::with_capacity(n_max);
        for n in 0..=n_max {
            shell_offsets.push(states.len());
            place(n_sites, n, d, 1, &mut sites, &mut states);
        }
        shell_offsets.push(states.len());

        let states: Vec<Configuration> = states
            .into_iter()
            .map(|bits| Configuration {
                bits,
                n_sites: n_sites as u8,
            })
            .collect();
        let index = states
            .iter()
            .enumerate()
            .map(|(i, c)| (c.bits, i))
            .collect();

        Ok(Self {
            n_sites,
            n_max,
            min_distance: d,
            states,
            index,
            shell_offsets,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn min_distance(&self) -> usize {
        self.min_distance
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Configuration] {
        &self.states
    }

    pub fn state(&self, i: usize) -> Configuration {
        self.states[i]
    }

    pub fn index_of(&self, config: Configuration) -> Option<usize> {
        if config.n_sites() != self.n_sites {
            return None;
        }
        self.index.get(&config.bits).copied()
    }

    pub fn contains(&self, config: Configuration) -> bool {
        self.index_of(config).is_some()
    }

    /// Contiguous index range of the `n`-excitation shell (empty above `n_max`).
    pub fn shell(&self, n: usize) -> Range<usize> {
        if n > self.n_max {
            let end = self.states.len();
            return end..end;
        }
        self.shell_offsets[n]..self.shell_offsets[n + 1]
    }

    pub fn shell_sizes(&self) -> Vec<usize> {
        (0..=self.n_max).map(|n| self.shell(n).len()).collect()
    }
}

/// Appends, in lexicographic site order, every placement of `remaining`
/// excitations on sites `first..=n_sites` with gaps of at least `d`.
fn place(
    n_sites: usize,
    remaining: usize,
    d: usize,
    first: usize,
    sites: &mut Vec<usize>,
    out: &mut Vec<u64>,
) {
    if remaining == 0 {
        out.push(sites.iter().fold(0u64, |acc, &j| acc | 1u64 << (j - 1)));
        return;
    }
    // The last of `remaining` excitations needs (remaining - 1) * d more sites.
    let span = (remaining - 1) * d;
    if first + span > n_sites {
        return;
    }
    for j in first..=(n_sites - span) {
        sites.push(j);
        place(n_sites, remaining - 1, d, j + d, sites, out);
        sites.pop();
    }
}

fn check_sites(n_sites: usize) -> Result<(), BasisError> {
    if n_sites == 0 || n_sites > MAX_SITES {
        return Err(BasisError::InvalidArguments(format!(
            "N = {n_sites} outside 1..={MAX_SITES}"
        )));
    }
    Ok(())
}

/// `C(n, k)` for the small arguments used here; saturates at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Number of `n`-excitation configurations with pair distance `>= d`:
/// `C(N - (d-1)(n-1), n)`, zero when the packing does not fit.
pub fn shell_dimension(n_sites: usize, n: usize, d: usize) -> Result<u64, BasisError> {
    check_sites(n_sites)?;
    if d < 1 {
        return Err(BasisError::InvalidArguments(
            "minimum pair distance d must be at least 1".into(),
        ));
    }
    if n == 0 {
        return Ok(1);
    }
    let squeezed = (d - 1) * (n - 1);
    if squeezed > n_sites {
        return Ok(0);
    }
    Ok(binomial((n_sites - squeezed) as u64, n as u64))
}

/// The maximally separated `n`-excitation state `|R_n^min>`.
///
/// Sites `1 + k (N-1)/(n-1)` for `k = 0..n`; requires `(n-1) | (N-1)`.
pub fn target_state(n_sites: usize, n: usize) -> Result<TargetState, BasisError> {
    check_sites(n_sites)?;
    if n > n_sites {
        return Err(BasisError::InvalidArguments(format!(
            "cannot place {n} excitations on {n_sites} sites"
        )));
    }
    match n {
        0 => Ok(TargetState::Configuration(Configuration::ground(n_sites)?)),
        1 => Ok(TargetState::SymmetricSingle),
        _ => {
            if (n_sites - 1) % (n - 1) != 0 {
                return Err(BasisError::InfeasibleGeometry { n_sites, n });
            }
            let spacing = (n_sites - 1) / (n - 1);
            let sites: Vec<usize> = (0..n).map(|k| 1 + k * spacing).collect();
            Ok(TargetState::Configuration(Configuration::from_sites(
                n_sites, &sites,
            )?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sites_of(c: Configuration) -> Vec<usize> {
        c.sites().collect()
    }

    #[test]
    fn ground_only_basis() {
        let b = Basis::enumerate(5, 0, 1).unwrap();
        assert_eq!(b.dim(), 1);
        assert_eq!(b.state(0).excitations(), 0);
    }

    #[test]
    fn unrestricted_shells_n19() {
        let b = Basis::enumerate(19, 3, 1).unwrap();
        assert_eq!(b.shell_sizes(), vec![1, 19, 171, 969]);
    }

    #[test]
    fn distance_three_shells_n19() {
        let b = Basis::enumerate(19, 5, 3).unwrap();
        assert_eq!(b.shell_sizes(), vec![1, 19, 136, 455, 715, 462]);
        assert_eq!(b.dim(), 1788);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            Basis::enumerate(4, 5, 1),
            Err(BasisError::InvalidArguments(_))
        ));
        assert!(matches!(
            Basis::enumerate(4, 2, 0),
            Err(BasisError::InvalidArguments(_))
        ));
        assert!(Basis::enumerate(0, 0, 1).is_err());
        assert!(Basis::enumerate(64, 1, 1).is_err());
    }

    #[test]
    fn shell_dimension_examples() {
        assert_eq!(shell_dimension(19, 3, 1).unwrap(), 969);
        assert_eq!(shell_dimension(11, 0, 4).unwrap(), 1);
        assert_eq!(shell_dimension(7, 4, 3).unwrap(), 0);
    }

    #[test]
    fn ordering_is_shell_major_then_lexicographic() {
        let b = Basis::enumerate(4, 2, 1).unwrap();
        let listed: Vec<Vec<usize>> = b.states().iter().map(|&c| sites_of(c)).collect();
        assert_eq!(
            listed,
            vec![
                vec![],
                vec![1],
                vec![2],
                vec![3],
                vec![4],
                vec![1, 2],
                vec![1, 3],
                vec![1, 4],
                vec![2, 3],
                vec![2, 4],
                vec![3, 4],
            ]
        );
    }

    #[test]
    fn index_is_a_bijection() {
        let b = Basis::enumerate(13, 4, 2).unwrap();
        for (i, &c) in b.states().iter().enumerate() {
            assert_eq!(b.index_of(c), Some(i));
        }
        let outside = Configuration::from_sites(13, &[1, 2]).unwrap();
        assert_eq!(b.index_of(outside), None);
    }

    #[test]
    fn target_states_from_the_commensurate_cases() {
        let t = |n_sites, n| match target_state(n_sites, n).unwrap() {
            TargetState::Configuration(c) => sites_of(c),
            TargetState::SymmetricSingle => panic!("unexpected symmetric state"),
        };
        assert_eq!(t(19, 3), vec![1, 10, 19]);
        assert_eq!(t(19, 2), vec![1, 19]);
        assert_eq!(t(7, 4), vec![1, 3, 5, 7]);
        assert_eq!(t(19, 0), Vec::<usize>::new());
        assert_eq!(target_state(19, 1).unwrap(), TargetState::SymmetricSingle);
        assert_eq!(
            target_state(19, 5),
            Err(BasisError::InfeasibleGeometry { n_sites: 19, n: 5 })
        );
    }

    #[test]
    fn configuration_validation_and_editing() {
        assert!(Configuration::from_sites(5, &[0]).is_err());
        assert!(Configuration::from_sites(5, &[6]).is_err());
        assert!(Configuration::from_sites(5, &[2, 2]).is_err());
        assert!(Configuration::from_bits(3, 0b1000).is_err());

        let c = Configuration::from_sites(6, &[2, 5]).unwrap();
        assert_eq!(c.excitations(), 2);
        assert_eq!(c.min_pair_distance(), Some(3));
        assert_eq!(c.to_string(), "grggrg");
        assert_eq!(sites_of(c.lowered(5).unwrap()), vec![2]);
        assert_eq!(c.lowered(1), None);
        assert_eq!(sites_of(c.raised(1).unwrap()), vec![1, 2, 5]);
        assert_eq!(c.raised(2), None);
    }

    #[test]
    fn binomial_edges() {
        assert_eq!(binomial(0, 0), 1);
        assert_eq!(binomial(5, 6), 0);
        assert_eq!(binomial(31, 4), 31_465);
        assert_eq!(binomial(62, 31), 465_428_353_255_261_088);
    }
}
