//! Physical constants and default values shared across modules.

use core::f64::consts::PI;

/// Boltzmann constant (J/K), exact SI value.
pub const BOLTZMANN: f64 = 1.380_649e-23;

/// Default bath temperature (K).
pub const ROOM_TEMPERATURE: f64 = 293.0;

/// Silica density (kg/m³).
pub const SILICA_DENSITY: f64 = 2200.0;

/// Default particle diameter (m).
pub const PARTICLE_DIAMETER: f64 = 210e-9;

/// Mass of a homogeneous sphere.
pub fn sphere_mass(density: f64, diameter: f64) -> f64 {
    let r = 0.5 * diameter;
    density * 4.0 / 3.0 * PI * r * r * r
}

/// Converts a frequency in Hz to an angular frequency in rad/s.
#[inline]
pub fn hz_to_rad(f: f64) -> f64 {
    2.0 * PI * f
}

/// Converts an angular frequency in rad/s to Hz.
#[inline]
pub fn rad_to_hz(w: f64) -> f64 {
    w / (2.0 * PI)
}
