//! Run configuration read from TOML.
//!
//! Every physical key carries its unit in the name: lengths in nm, `C6` in
//! `2π × GHz μm⁶`, Rabi frequencies and detunings in `2π × MHz`, rates in
//! `2π × kHz`, times in μs.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hamiltonian::RelaxationParams;
use crate::observables::TARGET_SHELLS;
use crate::schedule::{Profile, RampShape, Schedule};
use crate::spectrum::{self, CrossingForm, SystemGeometry};
use crate::trajectory::IntegratorSettings;
use crate::units;

#[derive(Debug, Clone, PartialEq, Error)]
pub struct ConfigError {
    /// Dotted key the problem refers to, empty for syntax errors.
    pub key: String,
    /// 1-based line in the source file, when known.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.key.is_empty()) {
            (Some(line), false) => write!(f, "line {line}: `{}`: {}", self.key, self.message),
            (Some(line), true) => write!(f, "line {line}: {}", self.message),
            (None, false) => write!(f, "`{}`: {}", self.key, self.message),
            (None, true) => write!(f, "{}", self.message),
        }
    }
}

impl ConfigError {
    fn at(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            line: None,
            message: message.into(),
        }
    }

    fn located(mut self, source: Option<&str>) -> Self {
        if let Some(src) = source {
            self.line = locate_key(src, &self.key);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub truncation: TruncationConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub convergence: ConvergenceConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub n_sites: usize,
    pub a_nm: f64,
    pub c6_2pi_ghz_um6: f64,
    #[serde(default)]
    pub gamma_r_2pi_khz: f64,
    #[serde(default)]
    pub gamma_z_2pi_khz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    pub n_max: usize,
    pub d: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Standard,
    Custom,
}

/// Knots are `[s, value]` with `s = t/τ`; values in `2π × MHz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub knots: Vec<[f64; 2]>,
    pub shapes: Vec<RampShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub tau_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_max_2pi_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_start_2pi_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_end_2pi_mhz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<ProfileConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<ProfileConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingPoint {
    pub gamma_r_2pi_khz: f64,
    pub gamma_z_2pi_khz: f64,
}

impl DampingPoint {
    pub fn relaxation(&self) -> Result<RelaxationParams, ConfigError> {
        RelaxationParams::new(
            units::from_2pi_khz(self.gamma_r_2pi_khz),
            units::from_2pi_khz(self.gamma_z_2pi_khz),
        )
        .map_err(|e| ConfigError::at("scan.damping", e.to_string()))
    }

    pub fn is_unitary(&self) -> bool {
        self.gamma_r_2pi_khz == 0.0 && self.gamma_z_2pi_khz == 0.0
    }
}

/// Empty lists fall back to `schedule.tau_us` and the system rates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default)]
    pub tau_us: Vec<f64>,
    #[serde(default)]
    pub damping: Vec<DampingPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
}

fn default_trajectories() -> usize {
    100
}

fn default_seed() -> u64 {
    1234
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            trajectories: default_trajectories(),
            base_seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_p_step_max")]
    pub p_step_max: f64,
    #[serde(default = "default_output_points")]
    pub output_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dt_ns: Option<f64>,
    #[serde(default = "default_norm_tolerance")]
    pub norm_tolerance: f64,
}

fn default_safety() -> f64 {
    IntegratorSettings::default().safety
}

fn default_p_step_max() -> f64 {
    IntegratorSettings::default().p_step_max
}

fn default_norm_tolerance() -> f64 {
    IntegratorSettings::default().norm_tolerance
}

fn default_output_points() -> usize {
    IntegratorSettings::default().output_points
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            safety: default_safety(),
            p_step_max: default_p_step_max(),
            output_points: default_output_points(),
            max_dt_ns: None,
            norm_tolerance: default_norm_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Crystal whose population is reported as `F`; defaults to the shell
    /// whose minimum is lowest at the final detuning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_n: Option<usize>,
    #[serde(default = "default_half_window")]
    pub fit_half_window: usize,
}

fn default_half_window() -> usize {
    4
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            target_n: None,
            fit_half_window: default_half_window(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_oracle_dim")]
    pub max_dim: usize,
    #[serde(default = "default_sigma")]
    pub sigma_threshold: f64,
    /// Absolute slack added to `sigma_threshold × stderr`.
    #[serde(default = "default_abs_floor")]
    pub abs_floor: f64,
}

fn default_oracle_dim() -> usize {
    crate::master_oracle::DEFAULT_MAX_DIM
}

fn default_sigma() -> f64 {
    3.0
}

fn default_abs_floor() -> f64 {
    1e-6
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            max_dim: default_oracle_dim(),
            sigma_threshold: default_sigma(),
            abs_floor: default_abs_floor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    /// Truncations to compare; the main `[truncation]` is always included.
    #[serde(default)]
    pub settings: Vec<TruncationConfig>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_tolerance")]
    pub leakage_threshold: f64,
}

fn default_tolerance() -> f64 {
    1e-3
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            settings: Vec::new(),
            tolerance: default_tolerance(),
            leakage_threshold: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossingFormConfig {
    #[default]
    Exact,
    Approximate,
}

impl From<CrossingFormConfig> for CrossingForm {
    fn from(value: CrossingFormConfig) -> Self {
        match value {
            CrossingFormConfig::Exact => CrossingForm::Exact,
            CrossingFormConfig::Approximate => CrossingForm::Approximate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default = "default_delta_min")]
    pub delta_min_2pi_mhz: f64,
    #[serde(default = "default_delta_max")]
    pub delta_max_2pi_mhz: f64,
    #[serde(default = "default_spectrum_points")]
    pub points: usize,
    #[serde(default)]
    pub crossing_form: CrossingFormConfig,
    /// Write every configuration, not just the shell minima.
    #[serde(default)]
    pub all_levels: bool,
}

fn default_delta_min() -> f64 {
    -2.0
}

fn default_delta_max() -> f64 {
    10.0
}

fn default_spectrum_points() -> usize {
    121
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            delta_min_2pi_mhz: default_delta_min(),
            delta_max_2pi_mhz: default_delta_max(),
            points: default_spectrum_points(),
            crossing_form: CrossingFormConfig::default(),
            all_levels: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Also write per-trajectory final records.
    #[serde(default)]
    pub write_trajectories: bool,
}

/// 1-based line of `key` (dotted, e.g. `"schedule.tau_us"`) in TOML source.
/// Falls back to the line of the enclosing table header.
pub fn locate_key(source: &str, key: &str) -> Option<usize> {
    let (table, leaf) = match key.rsplit_once('.') {
        Some((t, l)) => (t, l),
        None => ("", key),
    };
    let mut current = String::new();
    let mut header_line = None;
    let mut table_line = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line
                .trim_start_matches('[')
                .split(']')
                .next()
                .unwrap_or("")
                .trim()
                .to_string();
            if current == table && header_line.is_none() {
                header_line = Some(i + 1);
            }
            if current == key && table_line.is_none() {
                table_line = Some(i + 1);
            }
            continue;
        }
        if current != table {
            continue;
        }
        if let Some(rest) = line.strip_prefix(leaf) {
            let rest = rest.trim_start();
            if rest.starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    table_line.or(header_line)
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Parses a value given on the command line: any TOML literal, or a bare
/// string if it does not parse as one.
fn parse_override_value(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrapper {
        v: toml::Value,
    }
    toml::from_str::<Wrapper>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        ConfigError::at("", format!("override `{assignment}` is not of the form key=value"))
    })?;
    let path = path.trim();
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::at(path, "empty key segment in override"));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::at(path, format!("`{part}` is not a table")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses and validates TOML, applying `key=value` overrides first.
    /// Errors carry the source line where one can be identified.
    pub fn from_toml(source: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let config: RunConfig = if overrides.is_empty() {
            toml::from_str(source).map_err(|e| ConfigError {
                key: String::new(),
                line: e.span().map(|s| line_of_offset(source, s.start)),
                message: e.message().to_string(),
            })?
        } else {
            let mut table: toml::Table = toml::from_str(source).map_err(|e| ConfigError {
                key: String::new(),
                line: e.span().map(|s| line_of_offset(source, s.start)),
                message: e.message().to_string(),
            })?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::at("", e.message().to_string()))?
        };
        config.validate().map_err(|e| e.located(Some(source)))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::at(key, format!("must be positive, got {v}")))
            }
        };
        let non_negative = |key: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::at(key, format!("must be non-negative, got {v}")))
            }
        };

        let s = &self.system;
        if s.n_sites == 0 || s.n_sites > crate::basis::MAX_SITES {
            return Err(ConfigError::at(
                "system.n_sites",
                format!("must lie in 1..={}", crate::basis::MAX_SITES),
            ));
        }
        positive("system.a_nm", s.a_nm)?;
        positive("system.c6_2pi_ghz_um6", s.c6_2pi_ghz_um6)?;
        non_negative("system.gamma_r_2pi_khz", s.gamma_r_2pi_khz)?;
        non_negative("system.gamma_z_2pi_khz", s.gamma_z_2pi_khz)?;

        let t = &self.truncation;
        if t.d == 0 {
            return Err(ConfigError::at("truncation.d", "minimum distance must be at least 1"));
        }
        if t.n_max > s.n_sites {
            return Err(ConfigError::at(
                "truncation.n_max",
                format!("n_max = {} exceeds N = {}", t.n_max, s.n_sites),
            ));
        }

        positive("schedule.tau_us", self.schedule.tau_us)?;
        self.base_schedule()?;

        if self.scan.tau_us.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ConfigError::at("scan.tau_us", "must be strictly increasing"));
        }
        for &tau in &self.scan.tau_us {
            positive("scan.tau_us", tau)?;
        }
        for p in &self.scan.damping {
            non_negative("scan.damping", p.gamma_r_2pi_khz)?;
            non_negative("scan.damping", p.gamma_z_2pi_khz)?;
        }

        if self.ensemble.trajectories == 0 {
            return Err(ConfigError::at("ensemble.trajectories", "need at least one trajectory"));
        }

        self.integrator_settings()
            .validate()
            .map_err(|e| ConfigError::at("integrator", e.to_string()))?;

        if let Some(n) = self.analysis.target_n {
            if n >= TARGET_SHELLS || n > t.n_max || n > s.n_sites {
                return Err(ConfigError::at(
                    "analysis.target_n",
                    format!("target n = {n} must be below {TARGET_SHELLS} and within n_max and N"),
                ));
            }
        }

        positive("oracle.sigma_threshold", self.oracle.sigma_threshold)?;
        non_negative("oracle.abs_floor", self.oracle.abs_floor)?;
        positive("convergence.tolerance", self.convergence.tolerance)?;
        positive("convergence.leakage_threshold", self.convergence.leakage_threshold)?;
        for c in &self.convergence.settings {
            if c.d == 0 || c.n_max > s.n_sites {
                return Err(ConfigError::at(
                    "convergence.settings",
                    format!("invalid truncation n_max = {}, d = {}", c.n_max, c.d),
                ));
            }
        }

        let sp = &self.spectrum;
        if !(sp.delta_max_2pi_mhz > sp.delta_min_2pi_mhz) {
            return Err(ConfigError::at(
                "spectrum.delta_max_2pi_mhz",
                "must exceed spectrum.delta_min_2pi_mhz",
            ));
        }
        if sp.points < 2 {
            return Err(ConfigError::at("spectrum.points", "need at least two points"));
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<SystemGeometry, ConfigError> {
        SystemGeometry::new(
            self.system.n_sites,
            self.system.a_nm * units::NANOMETRE,
            self.system.c6_2pi_ghz_um6 * units::TWO_PI_GHZ_UM6,
        )
        .map_err(|e| ConfigError::at("system", e.to_string()))
    }

    /// Rates from `[system]`.
    pub fn system_damping(&self) -> DampingPoint {
        DampingPoint {
            gamma_r_2pi_khz: self.system.gamma_r_2pi_khz,
            gamma_z_2pi_khz: self.system.gamma_z_2pi_khz,
        }
    }

    pub fn damping_points(&self) -> Vec<DampingPoint> {
        if self.scan.damping.is_empty() {
            vec![self.system_damping()]
        } else {
            self.scan.damping.clone()
        }
    }

    pub fn tau_list_us(&self) -> Vec<f64> {
        if self.scan.tau_us.is_empty() {
            vec![self.schedule.tau_us]
        } else {
            self.scan.tau_us.clone()
        }
    }

    /// Schedule at `schedule.tau_us`.
    pub fn base_schedule(&self) -> Result<Schedule, ConfigError> {
        self.schedule_for(self.schedule.tau_us)
    }

    pub fn schedule_for(&self, tau_us: f64) -> Result<Schedule, ConfigError> {
        let sc = &self.schedule;
        let tau = units::from_us(tau_us);
        match sc.kind {
            ScheduleKind::Standard => {
                let get = |key: &str, v: Option<f64>| {
                    v.ok_or_else(|| {
                        ConfigError::at(&format!("schedule.{key}"), "required for kind = \"standard\"")
                    })
                };
                if sc.omega.is_some() || sc.delta.is_some() {
                    return Err(ConfigError::at(
                        "schedule.kind",
                        "omega/delta profiles are only allowed with kind = \"custom\"",
                    ));
                }
                Schedule::standard(
                    tau,
                    units::from_2pi_mhz(get("omega_max_2pi_mhz", sc.omega_max_2pi_mhz)?),
                    units::from_2pi_mhz(get("delta_start_2pi_mhz", sc.delta_start_2pi_mhz)?),
                    units::from_2pi_mhz(get("delta_end_2pi_mhz", sc.delta_end_2pi_mhz)?),
                    get("ramp_fraction", sc.ramp_fraction)?,
                )
                .map_err(|e| ConfigError::at("schedule", e.to_string()))
            }
            ScheduleKind::Custom => {
                if sc.omega_max_2pi_mhz.is_some()
                    || sc.delta_start_2pi_mhz.is_some()
                    || sc.delta_end_2pi_mhz.is_some()
                    || sc.ramp_fraction.is_some()
                {
                    return Err(ConfigError::at(
                        "schedule.kind",
                        "standard pulse keys are not allowed with kind = \"custom\"",
                    ));
                }
                let profile = |name: &str, p: &Option<ProfileConfig>| {
                    let key = format!("schedule.{name}");
                    let p = p
                        .as_ref()
                        .ok_or_else(|| ConfigError::at(&key, "required for kind = \"custom\""))?;
                    Profile::new(
                        p.knots
                            .iter()
                            .map(|k| (k[0], units::from_2pi_mhz(k[1])))
                            .collect(),
                        p.shapes.clone(),
                    )
                    .map_err(|e| ConfigError::at(&format!("{key}.knots"), e.to_string()))
                };
                Schedule::new(tau, profile("omega", &sc.omega)?, profile("delta", &sc.delta)?)
                    .map_err(|e| ConfigError::at("schedule", e.to_string()))
            }
        }
    }

    pub fn integrator_settings(&self) -> IntegratorSettings {
        IntegratorSettings {
            safety: self.integrator.safety,
            p_step_max: self.integrator.p_step_max,
            output_points: self.integrator.output_points,
            max_dt: self.integrator.max_dt_ns.map(|ns| ns * 1e-9),
            norm_tolerance: self.integrator.norm_tolerance,
        }
    }

    /// `analysis.target_n`, or the shell whose classical minimum is lowest
    /// at the final detuning.
    pub fn target_n(&self) -> Result<usize, ConfigError> {
        if let Some(n) = self.analysis.target_n {
            return Ok(n);
        }
        let geom = self.geometry()?;
        let schedule = self.base_schedule()?;
        let delta_end = schedule.at(schedule.duration()).delta;
        let cap = self
            .truncation
            .n_max
            .min(TARGET_SHELLS - 1)
            .min(self.system.n_sites);
        let mut best = (0, 0.0);
        for n in 1..=cap {
            let e = spectrum::e_min(n, delta_end, &geom)
                .map_err(|e| ConfigError::at("analysis.target_n", e.to_string()))?;
            if e < best.1 {
                best = (n, e);
            }
        }
        Ok(best.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[system]
n_sites = 19
a_nm = 532.0
c6_2pi_ghz_um6 = 2.45

[truncation]
n_max = 5
d = 3

[schedule]
kind = "standard"
tau_us = 12.0
omega_max_2pi_mhz = 0.22
delta_start_2pi_mhz = -1.5
delta_end_2pi_mhz = 4.1
ramp_fraction = 0.3

[scan]
tau_us = [4.0, 8.0, 12.0]

[[scan.damping]]
gamma_r_2pi_khz = 0.0
gamma_z_2pi_khz = 5.0
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::from_toml(SAMPLE, &[]).unwrap();
        assert_eq!(c.ensemble.base_seed, 1234);
        assert_eq!(c.integrator.safety, 0.6);
        let again = RunConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn round_trips_custom_schedule() {
        let src = r#"
[system]
n_sites = 1
a_nm = 532.0
c6_2pi_ghz_um6 = 2.45
[truncation]
n_max = 1
d = 1
[schedule]
kind = "custom"
tau_us = 2.0
omega = { knots = [[0.0, 1.0], [1.0, 1.0]], shapes = ["constant"] }
delta = { knots = [[0.0, 0.0], [0.5, 0.1], [1.0, 0.3]], shapes = ["linear", "sin2"] }
"#;
        let c = RunConfig::from_toml(src, &[]).unwrap();
        assert_eq!(c, RunConfig::from_toml(&c.to_toml(), &[]).unwrap());
        let s = c.base_schedule().unwrap();
        assert!(!s.is_pulsed());
        assert!((s.at(0.0).omega - units::from_2pi_mhz(1.0)).abs() < 1e-6);
    }

    #[test]
    fn target_defaults_to_final_ground_shell() {
        let c = RunConfig::from_toml(SAMPLE, &[]).unwrap();
        assert_eq!(c.target_n().unwrap(), 3);
        let c13 = RunConfig::from_toml(SAMPLE, &["system.n_sites=13".into()]).unwrap();
        assert_eq!(c13.target_n().unwrap(), 2);
    }

    #[test]
    fn validation_reports_line() {
        let bad = SAMPLE.replace("tau_us = [4.0, 8.0, 12.0]", "tau_us = [4.0, 12.0, 8.0]");
        let err = RunConfig::from_toml(&bad, &[]).unwrap_err();
        assert_eq!(err.key, "scan.tau_us");
        let expected = bad.lines().position(|l| l.contains("12.0, 8.0")).unwrap() + 1;
        assert_eq!(err.line, Some(expected));
        assert!(err.to_string().starts_with(&format!("line {expected}:")));
    }

    #[test]
    fn unknown_key_reports_line() {
        let bad = SAMPLE.replace("d = 3", "d = 3\nfoo = 1");
        let err = RunConfig::from_toml(&bad, &[]).unwrap_err();
        let expected = bad.lines().position(|l| l == "foo = 1").unwrap() + 1;
        assert_eq!(err.line, Some(expected));
        assert!(err.message.contains("foo"));
    }

    #[test]
    fn negative_lattice_constant_rejected() {
        let bad = SAMPLE.replace("a_nm = 532.0", "a_nm = -1.0");
        let err = RunConfig::from_toml(&bad, &[]).unwrap_err();
        assert_eq!(err.key, "system.a_nm");
        assert_eq!(err.line, Some(4));
    }

    #[test]
    fn missing_standard_key_rejected() {
        let bad = SAMPLE.replace("ramp_fraction = 0.3\n", "");
        let err = RunConfig::from_toml(&bad, &[]).unwrap_err();
        assert_eq!(err.key, "schedule.ramp_fraction");
        assert!(err.line.is_some());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::from_toml(
            SAMPLE,
            &[
                "ensemble.base_seed=7".into(),
                "schedule.tau_us = 20".into(),
                "output.dir=results".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.ensemble.base_seed, 7);
        assert_eq!(c.schedule.tau_us, 20.0);
        assert_eq!(c.output.dir.as_deref(), Some("results"));
        assert!(RunConfig::from_toml(SAMPLE, &["nonsense".into()]).is_err());
        assert!(RunConfig::from_toml(SAMPLE, &["system.bogus=1".into()]).is_err());
    }

    #[test]
    fn locate_key_handles_tables() {
        let src = "[a]\nx = 1\n[b]\nx = 2\n[[b.c]]\ny = 3\n";
        assert_eq!(locate_key(src, "a.x"), Some(2));
        assert_eq!(locate_key(src, "b.x"), Some(4));
        assert_eq!(locate_key(src, "b.c.y"), Some(6));
        assert_eq!(locate_key(src, "b.missing"), Some(3));
        assert_eq!(locate_key(src, "b.c"), Some(5));
        assert_eq!(locate_key(src, "zzz.q"), None);
    }
}
