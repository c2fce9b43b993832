//! Uplink optical channel: closed-form line-of-sight terms, ray-traced
//! multipath impulse responses, bandwidth limiting and spectra.

mod filter;
mod spectrum;
mod trace;

use std::io::Write;

pub use filter::{apply_system_filter, SystemFilter};
pub use spectrum::{diffuse_bw_3db, frequency_response, Spectrum};
pub use trace::{impulse_response, ChannelModel, ChannelParams};

use crate::error::{Error, Result};
use crate::scene::{Detector, Emitter};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

/// Uniformly binned channel gain. Bin `i` covers the instant `t0 + i * dt`
/// and holds the fraction of transmitted power arriving in that bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub t0: f64,
    pub dt: f64,
    pub bins: Vec<f64>,
}

impl ImpulseResponse {
    pub fn new(t0: f64, dt: f64, bins: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(crate::error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if bins.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(crate::error::invalid("bins", "gains must be finite and non-negative"));
        }
        Ok(Self { t0, dt, bins })
    }

    pub fn time_of(&self, bin: usize) -> f64 {
        self.t0 + bin as f64 * self.dt
    }

    /// Sum of all bins, i.e. the DC channel gain.
    pub fn total_gain(&self) -> f64 {
        self.bins.iter().sum()
    }

    pub fn first_nonzero(&self) -> Option<usize> {
        self.bins.iter().position(|&b| b > 0.0)
    }

    pub fn scaled(&self, k: f64) -> ImpulseResponse {
        ImpulseResponse {
            t0: self.t0,
            dt: self.dt,
            bins: self.bins.iter().map(|b| b * k).collect(),
        }
    }

    /// Two-column CSV: `time_ns,gain`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time_ns,gain")?;
        for (i, g) in self.bins.iter().enumerate() {
            writeln!(out, "{:.12e},{:.12e}", self.time_of(i) * 1e9, g)?;
        }
        Ok(())
    }
}

fn separation(emitter: &Emitter, detector: &Detector) -> Result<f64> {
    let d = (detector.position - emitter.position).norm();
    if d == 0.0 {
        return Err(Error::CoincidentPositions);
    }
    Ok(d)
}

/// Line-of-sight channel gain (unitless) from an upward emitter to a
/// downward detector. Zero outside the detector's field of view or when the
/// detector is not above the emitter.
pub fn los_gain(emitter: &Emitter, detector: &Detector) -> Result<f64> {
    let d = separation(emitter, detector)?;
    let dz = detector.position.z - emitter.position.z;
    if dz <= 0.0 {
        return Ok(0.0);
    }
    // Both devices are axis aligned, so cos(irradiance) = cos(incidence) = dz / d.
    let cos_incidence = dz / d;
    if cos_incidence < detector.fov_half_angle.cos() {
        return Ok(0.0);
    }
    let m = emitter.lambertian_order;
    Ok((m + 1.0) * detector.area * dz.powf(m + 1.0)
        / (2.0 * std::f64::consts::PI * d.powf(m + 3.0)))
}

/// Received line-of-sight optical power in watts.
pub fn los_power(emitter: &Emitter, detector: &Detector) -> Result<f64> {
    Ok(emitter.power * los_gain(emitter, detector)?)
}

/// Line-of-sight propagation delay in seconds.
pub fn los_delay(emitter: &Emitter, detector: &Detector) -> Result<f64> {
    Ok(separation(emitter, detector)? / SPEED_OF_LIGHT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Scene, Vec3};

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn los_power_under_detector() {
        let s = Scene::reference();
        let e = s.emitter.at(1.5, 1.5);
        // Hand evaluation: 0.01 * 2 * 1e-4 * 2.15^2 / (2 pi 2.15^4) = 2e-6 / (2 pi 4.6225)
        let oracle = 2e-6 / (2.0 * std::f64::consts::PI * 2.15f64.powi(2));
        let p = los_power(&e, &s.detectors[0]).unwrap();
        assert!(rel(p, oracle) < 1e-12);
        assert!(rel(p, 6.886e-8) < 1e-3);
    }

    #[test]
    fn los_power_off_axis() {
        let s = Scene::reference();
        let e = s.emitter.at(3.5, 1.5);
        let d = (4.0f64 + 2.15 * 2.15).sqrt();
        assert!((d - 2.9364).abs() < 1e-4);
        let oracle = 0.01 * 2.0 * 1e-4 * 2.15f64.powi(2) / (2.0 * std::f64::consts::PI * d.powi(4));
        let p = los_power(&e, &s.detectors[0]).unwrap();
        assert!(rel(p, oracle) < 1e-12);
        assert!(rel(p, 1.98e-8) < 2e-3);
    }

    #[test]
    fn los_power_outside_fov() {
        let s = Scene::reference();
        let det = s.detectors[0];
        // Horizontal offset for a 71 degree incidence angle.
        let r = 2.15 * 71f64.to_radians().tan();
        let e = s.emitter.at(det.position.x + r, det.position.y);
        assert_eq!(los_power(&e, &det).unwrap(), 0.0);
        let r = 2.15 * 69f64.to_radians().tan();
        let e = s.emitter.at(det.position.x + r, det.position.y);
        assert!(los_power(&e, &det).unwrap() > 0.0);
    }

    #[test]
    fn los_delay_values() {
        let s = Scene::reference();
        let t = los_delay(&s.emitter.at(1.5, 1.5), &s.detectors[0]).unwrap();
        assert!((t - 7.171e-9).abs() < 1e-12);

        let mut det = s.detectors[0];
        det.position = Vec3::new(0.0, 0.0, SPEED_OF_LIGHT * 1e-9);
        let mut e = s.emitter;
        e.position = Vec3::new(0.0, 0.0, 0.0);
        assert!((los_delay(&e, &det).unwrap() - 1e-9).abs() < 1e-21);

        e.position = det.position;
        assert_eq!(los_delay(&e, &det), Err(Error::CoincidentPositions));
        assert_eq!(los_power(&e, &det), Err(Error::CoincidentPositions));
    }
}
