//! Conversions between the lab units used in configuration files and the
//! internal SI-style units (angular frequencies in rad/s, times in s,
//! lengths in μm, `C6` in rad/s·μm⁶).

use std::f64::consts::TAU;

/// `2π × 1 MHz` in rad/s.
pub const TWO_PI_MHZ: f64 = TAU * 1.0e6;
/// `2π × 1 kHz` in rad/s.
pub const TWO_PI_KHZ: f64 = TAU * 1.0e3;
/// `2π × 1 GHz·μm⁶` in rad/s·μm⁶.
pub const TWO_PI_GHZ_UM6: f64 = TAU * 1.0e9;
pub const MICROSECOND: f64 = 1.0e-6;
/// One nanometre in μm.
pub const NANOMETRE: f64 = 1.0e-3;

pub fn from_2pi_mhz(value: f64) -> f64 {
    value * TWO_PI_MHZ
}

pub fn to_2pi_mhz(value: f64) -> f64 {
    value / TWO_PI_MHZ
}

pub fn from_2pi_khz(value: f64) -> f64 {
    value * TWO_PI_KHZ
}

pub fn to_2pi_khz(value: f64) -> f64 {
    value / TWO_PI_KHZ
}

pub fn from_us(value: f64) -> f64 {
    value * MICROSECOND
}

pub fn to_us(value: f64) -> f64 {
    value / MICROSECOND
}
