//! Laser controls Ω(t) and δ(t) over a preparation time τ.
//!
//! Both controls are stored as piecewise profiles in normalized time
//! `s = t/τ ∈ [0, 1]`, so changing τ rescales the whole pulse at once and
//! the sweep rate `dδ/dt` scales as `1/τ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("time {t:e} s outside [0, {duration:e}] s")]
    OutOfRange { t: f64, duration: f64 },
}

/// Interpolation between two consecutive knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RampShape {
    Linear,
    /// `v0 + (v1 - v0) sin²(π x / 2)`, flat at both ends.
    #[serde(rename = "sin2")]
    SinSquared,
    /// Holds the value; both knots must agree.
    Constant,
}

impl RampShape {
    fn weight(self, x: f64) -> f64 {
        match self {
            Self::Linear => x,
            Self::SinSquared => {
                let s = (std::f64::consts::FRAC_PI_2 * x).sin();
                s * s
            }
            Self::Constant => 0.0,
        }
    }

    fn weight_slope(self, x: f64) -> f64 {
        match self {
            Self::Linear => 1.0,
            Self::SinSquared => std::f64::consts::FRAC_PI_2 * (std::f64::consts::PI * x).sin(),
            Self::Constant => 0.0,
        }
    }
}

/// Piecewise control in normalized time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    knots: Vec<(f64, f64)>,
    shapes: Vec<RampShape>,
}

impl Profile {
    /// `knots` are `(s, value)` pairs with `s` strictly increasing from 0 to 1;
    /// `shapes[i]` interpolates between knots `i` and `i + 1`.
    pub fn new(knots: Vec<(f64, f64)>, shapes: Vec<RampShape>) -> Result<Self, ScheduleError> {
        if knots.len() < 2 {
            return Err(ScheduleError::InvalidProfile(
                "need at least two knots".into(),
            ));
        }
        if shapes.len() != knots.len() - 1 {
            return Err(ScheduleError::InvalidProfile(format!(
                "{} knots need {} segment shapes, got {}",
                knots.len(),
                knots.len() - 1,
                shapes.len()
            )));
        }
        if knots.iter().any(|(s, v)| !s.is_finite() || !v.is_finite()) {
            return Err(ScheduleError::InvalidProfile("non-finite knot".into()));
        }
        if knots[0].0 != 0.0 || knots[knots.len() - 1].0 != 1.0 {
            return Err(ScheduleError::InvalidProfile(
                "knots must start at s = 0 and end at s = 1".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(ScheduleError::InvalidProfile(
                "knot positions must be strictly increasing".into(),
            ));
        }
        for (i, shape) in shapes.iter().enumerate() {
            if *shape == RampShape::Constant && knots[i].1 != knots[i + 1].1 {
                return Err(ScheduleError::InvalidProfile(format!(
                    "constant segment {i} joins different values {} and {}",
                    knots[i].1,
                    knots[i + 1].1
                )));
            }
        }
        Ok(Self { knots, shapes })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            knots: vec![(0.0, value), (1.0, value)],
            shapes: vec![RampShape::Constant],
        }
    }

    pub fn linear(start: f64, end: f64) -> Self {
        Self {
            knots: vec![(0.0, start), (1.0, end)],
            shapes: vec![RampShape::Linear],
        }
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn shapes(&self) -> &[RampShape] {
        &self.shapes
    }

    fn segment(&self, s: f64) -> usize {
        let last = self.shapes.len() - 1;
        self.knots[1..]
            .iter()
            .position(|&(edge, _)| s <= edge)
            .unwrap_or(last)
            .min(last)
    }

    /// Value at normalized time `s` (clamped to `[0, 1]`).
    pub fn value(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let i = self.segment(s);
        let (s0, v0) = self.knots[i];
        let (s1, v1) = self.knots[i + 1];
        let x = (s - s0) / (s1 - s0);
        v0 + (v1 - v0) * self.shapes[i].weight(x)
    }

    /// `d value / ds`.
    pub fn slope(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        let i = self.segment(s);
        let (s0, v0) = self.knots[i];
        let (s1, v1) = self.knots[i + 1];
        let x = (s - s0) / (s1 - s0);
        (v1 - v0) * self.shapes[i].weight_slope(x) / (s1 - s0)
    }

    pub fn max_abs(&self) -> f64 {
        self.knots.iter().map(|k| k.1.abs()).fold(0.0, f64::max)
    }

    fn is_non_decreasing(&self) -> bool {
        self.knots.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

/// Instantaneous controls, both in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub omega: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    duration: f64,
    omega: Profile,
    delta: Profile,
}

impl Schedule {
    /// `duration` in seconds; profile values in rad/s.
    ///
    /// Requires `Ω ≥ 0` and non-decreasing `δ`. Pulses that switch the field
    /// off at both ends are reported by [`Schedule::is_pulsed`].
    pub fn new(duration: f64, omega: Profile, delta: Profile) -> Result<Self, ScheduleError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ScheduleError::InvalidSchedule(format!(
                "duration must be positive, got {duration}"
            )));
        }
        // Every shape interpolates monotonically between its knots.
        if omega.knots.iter().any(|k| k.1 < 0.0) {
            return Err(ScheduleError::InvalidSchedule(
                "Rabi frequency must be non-negative".into(),
            ));
        }
        if !delta.is_non_decreasing() {
            return Err(ScheduleError::InvalidSchedule(
                "detuning must be non-decreasing".into(),
            ));
        }
        Ok(Self {
            duration,
            omega,
            delta,
        })
    }

    /// Smooth pulse: `sin²` ramp of Ω up over `[0, ramp]`, plateau at
    /// `omega_max`, `sin²` ramp down over `[1 - ramp, 1]`; δ linear from
    /// `delta_start` to `delta_end`.
    pub fn standard(
        duration: f64,
        omega_max: f64,
        delta_start: f64,
        delta_end: f64,
        ramp: f64,
    ) -> Result<Self, ScheduleError> {
        if !(ramp > 0.0 && ramp < 0.5) {
            return Err(ScheduleError::InvalidSchedule(format!(
                "ramp fraction must lie in (0, 0.5), got {ramp}"
            )));
        }
        let omega = Profile::new(
            vec![
                (0.0, 0.0),
                (ramp, omega_max),
                (1.0 - ramp, omega_max),
                (1.0, 0.0),
            ],
            vec![RampShape::SinSquared, RampShape::Constant, RampShape::SinSquared],
        )?;
        Self::new(duration, omega, Profile::linear(delta_start, delta_end))
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn omega_profile(&self) -> &Profile {
        &self.omega
    }

    pub fn delta_profile(&self) -> &Profile {
        &self.delta
    }

    /// Field is off at `t = 0` and `t = τ`.
    pub fn is_pulsed(&self) -> bool {
        self.omega.value(0.0) == 0.0 && self.omega.value(1.0) == 0.0
    }

    pub fn evaluate(&self, t: f64) -> Result<Controls, ScheduleError> {
        let slack = 1e-12 * self.duration;
        if !(t >= -slack && t <= self.duration + slack) {
            return Err(ScheduleError::OutOfRange {
                t,
                duration: self.duration,
            });
        }
        Ok(self.at(t))
    }

    /// Unchecked evaluation; `t` is clamped into `[0, τ]`.
    pub fn at(&self, t: f64) -> Controls {
        let s = t / self.duration;
        Controls {
            omega: self.omega.value(s),
            delta: self.delta.value(s),
        }
    }

    /// Same normalized profiles stretched to a new duration.
    pub fn rescale(&self, duration: f64) -> Result<Self, ScheduleError> {
        Self::new(duration, self.omega.clone(), self.delta.clone())
    }

    /// Sweep rate `α = dδ/dt` in rad/s².
    pub fn sweep_rate(&self, t: f64) -> f64 {
        self.delta.slope(t / self.duration) / self.duration
    }

    /// First time at which δ reaches `delta`, if it ever does.
    pub fn time_at_detuning(&self, delta: f64) -> Option<f64> {
        let (first, last) = (self.delta.value(0.0), self.delta.value(1.0));
        if delta < first || delta > last {
            return None;
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.delta.value(mid) < delta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(hi * self.duration)
    }

    pub fn omega_max(&self) -> f64 {
        self.omega.max_abs()
    }

    pub fn delta_max_abs(&self) -> f64 {
        self.delta.max_abs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn standard() -> Schedule {
        Schedule::standard(12e-6, 2.0, -5.0, 7.0, 0.15).unwrap()
    }

    #[test]
    fn boundaries() {
        let s = standard();
        let c0 = s.evaluate(0.0).unwrap();
        assert_eq!(c0.omega, 0.0);
        assert_eq!(c0.delta, -5.0);
        let c1 = s.evaluate(12e-6).unwrap();
        assert!(c1.omega.abs() < 1e-15);
        assert_eq!(c1.delta, 7.0);
        assert!(s.is_pulsed());
    }

    #[test]
    fn linear_midpoint() {
        let s = standard();
        assert!((s.evaluate(6e-6).unwrap().delta - 1.0).abs() < 1e-12);
        assert!((s.evaluate(6e-6).unwrap().omega - 2.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range() {
        let s = standard();
        assert!(matches!(s.evaluate(-1e-9), Err(ScheduleError::OutOfRange { .. })));
        assert!(matches!(s.evaluate(13e-6), Err(ScheduleError::OutOfRange { .. })));
    }

    #[test]
    fn rescale_identity_and_rates() {
        let s = standard();
        assert_eq!(s.rescale(12e-6).unwrap(), s);
        let slow = s.rescale(24e-6).unwrap();
        for k in 0..=10 {
            let t = k as f64 * 1.2e-6;
            assert!((slow.sweep_rate(2.0 * t) - 0.5 * s.sweep_rate(t)).abs() < 1e-3);
        }
        assert!(s.rescale(0.0).is_err());
    }

    #[test]
    fn faster_sweep_is_less_adiabatic() {
        use crate::spectrum::landau_zener_nonadiabatic_prob;
        let s = Schedule::standard(12e-6, 1.0e6, -5.0e6, 7.0e6, 0.15).unwrap();
        let fast = s.rescale(4e-6).unwrap();
        let omega_eff = 2.0e5;
        let alpha = s.sweep_rate(6e-6);
        let alpha_fast = fast.sweep_rate(2e-6);
        assert!((alpha_fast / alpha - 3.0).abs() < 1e-12);
        let p = landau_zener_nonadiabatic_prob(omega_eff, alpha);
        let p_fast = landau_zener_nonadiabatic_prob(omega_eff, alpha_fast);
        assert!(p_fast > p);
        assert!((p_fast - p.powf(1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn profile_validation() {
        use RampShape::*;
        assert!(Profile::new(vec![(0.0, 0.0)], vec![]).is_err());
        assert!(Profile::new(vec![(0.0, 0.0), (1.0, 1.0)], vec![]).is_err());
        assert!(Profile::new(vec![(0.1, 0.0), (1.0, 1.0)], vec![Linear]).is_err());
        assert!(Profile::new(vec![(0.0, 0.0), (0.5, 1.0), (0.5, 1.0), (1.0, 0.0)], vec![Linear; 3]).is_err());
        assert!(Profile::new(vec![(0.0, 0.0), (1.0, 1.0)], vec![Constant]).is_err());
        assert!(Profile::new(vec![(0.0, 1.0), (1.0, 1.0)], vec![Constant]).is_ok());
    }

    #[test]
    fn schedule_validation() {
        assert!(Schedule::new(1.0, Profile::linear(0.0, -1.0), Profile::linear(0.0, 1.0)).is_err());
        assert!(Schedule::new(1.0, Profile::constant(1.0), Profile::linear(1.0, 0.0)).is_err());
        let rabi = Schedule::new(1.0, Profile::constant(1.0), Profile::constant(0.0)).unwrap();
        assert!(!rabi.is_pulsed());
    }

    #[test]
    fn detuning_inversion() {
        let s = standard();
        let t = s.time_at_detuning(1.0).unwrap();
        assert!((t - 6e-6).abs() < 1e-15);
        assert_eq!(s.time_at_detuning(8.0), None);
    }

    proptest! {
        #[test]
        fn rescale_is_exact(s in 0.0f64..=1.0, tau in 1e-7f64..1e-4) {
            let base = standard();
            let other = base.rescale(tau).unwrap();
            let a = base.at(s * base.duration());
            let b = other.at(s * tau);
            prop_assert!((a.omega - b.omega).abs() <= 1e-12 * a.omega.abs().max(1.0));
            prop_assert!((a.delta - b.delta).abs() <= 1e-12 * a.delta.abs().max(1.0));
        }

        #[test]
        fn evaluation_is_continuous(s in 0.0f64..0.999) {
            let base = standard();
            let h = 1e-9;
            let a = base.omega_profile().value(s);
            let b = base.omega_profile().value(s + h);
            // |Ω'| ≤ π/2 · Ω_max / ramp
            prop_assert!((a - b).abs() <= h * 2.0 * std::f64::consts::FRAC_PI_2 / 0.15 + 1e-12);
            let a = base.delta_profile().value(s);
            let b = base.delta_profile().value(s + h);
            prop_assert!((a - b).abs() <= h * 12.0 + 1e-12);
        }

        #[test]
        fn omega_non_negative_and_delta_monotone(s in 0.0f64..0.99, ds in 0.0f64..0.01) {
            let base = standard();
            prop_assert!(base.omega_profile().value(s) >= 0.0);
            prop_assert!(base.delta_profile().value(s + ds) >= base.delta_profile().value(s));
        }
    }
}
