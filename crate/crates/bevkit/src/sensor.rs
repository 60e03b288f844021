//! Sensor geometry: vertical plane angles, horizontal resolution, mount
//! height. Loaded from small TOML configs so new devices need no code.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Laser geometry of a spinning LiDAR.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSpec {
    /// Vertical angles of the planes in radians, strictly increasing.
    /// Negative angles point below the horizon.
    pub plane_angles: Vec<f64>,
    /// Horizontal angular resolution in radians.
    pub delta_theta: f64,
    /// Sensor height above the ground plane in meters.
    pub mount_height: f64,
}

impl SensorSpec {
    pub fn new(plane_angles: Vec<f64>, delta_theta: f64, mount_height: f64) -> Result<Self> {
        let spec = SensorSpec {
            plane_angles,
            delta_theta,
            mount_height,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_planes(&self) -> usize {
        self.plane_angles.len()
    }

    /// Number of discrete azimuth steps in one revolution.
    pub fn azimuth_steps(&self) -> usize {
        ((std::f64::consts::TAU / self.delta_theta) - 1e-9).ceil() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.plane_angles.is_empty() {
            return Err(Error::Validation("sensor needs at least one plane".into()));
        }
        if !(self.delta_theta > 0.0 && self.delta_theta < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Validation(format!(
                "delta_theta {} rad out of range (0, pi/2)",
                self.delta_theta
            )));
        }
        for w in self.plane_angles.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Validation(format!(
                    "plane angles must be strictly increasing, got {} after {}",
                    w[1], w[0]
                )));
            }
        }
        for &a in &self.plane_angles {
            if !a.is_finite() || a.abs() >= std::f64::consts::FRAC_PI_2 {
                return Err(Error::Validation(format!(
                    "plane angle {a} rad out of range (-pi/2, pi/2)"
                )));
            }
        }
        if !self.mount_height.is_finite() || self.mount_height < 0.0 {
            return Err(Error::Validation(format!(
                "mount height {} must be non-negative",
                self.mount_height
            )));
        }
        Ok(())
    }

    /// Stable fingerprint of the sensor geometry (FNV-1a over the exact bit
    /// patterns); combined with the grid fingerprint to key cached maps.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.plane_angles.len() as u64);
        for &a in &self.plane_angles {
            h.write_u64(a.to_bits());
        }
        h.write_u64(self.delta_theta.to_bits());
        h.write_u64(self.mount_height.to_bits());
        h.finish()
    }
}

/// FNV-1a, fixed here so cache keys stay stable across toolchains.
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

#[derive(Deserialize)]
struct SensorSpecFile {
    plane_angles_deg: Vec<f64>,
    delta_theta_deg: f64,
    mount_height_m: f64,
}

/// Read a sensor spec config: TOML with keys `plane_angles_deg` (list),
/// `delta_theta_deg` (scalar) and `mount_height_m` (scalar).
pub fn read_sensor_spec(path: impl AsRef<Path>) -> Result<SensorSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sensor_spec(&text)
}

pub fn parse_sensor_spec(text: &str) -> Result<SensorSpec> {
    let raw: SensorSpecFile =
        toml::from_str(text).map_err(|e| Error::MalformedInput(format!("sensor spec: {e}")))?;
    SensorSpec::new(
        raw.plane_angles_deg
            .iter()
            .map(|a| a.to_radians())
            .collect(),
        raw.delta_theta_deg.to_radians(),
        raw.mount_height_m,
    )
}

/// 16 planes, -15 to +15 degrees in 2 degree steps.
pub fn vlp16_like(mount_height: f64) -> SensorSpec {
    let angles = (0..16)
        .map(|i| (-15.0 + 2.0 * i as f64).to_radians())
        .collect();
    SensorSpec::new(angles, 0.2f64.to_radians(), mount_height).unwrap()
}

/// 32 planes, -30.67 to +10.67 degrees in 4/3 degree steps.
pub fn hdl32e_like(mount_height: f64) -> SensorSpec {
    let angles = (0..32)
        .map(|i| (-30.67 + (4.0 / 3.0) * i as f64).to_radians())
        .collect();
    SensorSpec::new(angles, 0.1664f64.to_radians(), mount_height).unwrap()
}

/// 64 planes, -24.9 to +2.0 degrees, evenly spaced.
pub fn hdl64_like(mount_height: f64) -> SensorSpec {
    let angles = (0..64)
        .map(|i| (-24.9 + (26.9 / 63.0) * i as f64).to_radians())
        .collect();
    SensorSpec::new(angles, 0.1728f64.to_radians(), mount_height).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    const VLP16_TOML: &str = "\
plane_angles_deg = [-15, -13, -11, -9, -7, -5, -3, -1, 1, 3, 5, 7, 9, 11, 13, 15]
delta_theta_deg = 0.2
mount_height_m = 1.73
";

    #[test]
    fn parses_vlp16_config() {
        let spec = parse_sensor_spec(VLP16_TOML).unwrap();
        assert_eq!(spec.num_planes(), 16);
        assert!((spec.plane_angles[0] + 15f64.to_radians()).abs() < 1e-12);
        assert!((spec.delta_theta - 0.2f64.to_radians()).abs() < 1e-12);
        assert!((spec.mount_height - 1.73).abs() < 1e-12);
        assert_eq!(spec.azimuth_steps(), 1800);
    }

    #[test]
    fn two_plane_spec_is_valid() {
        let spec = SensorSpec::new(vec![-0.1, 0.1], 0.01, 1.0).unwrap();
        assert_eq!(spec.num_planes(), 2);
    }

    #[test]
    fn duplicate_angles_rejected() {
        let err = parse_sensor_spec(
            "plane_angles_deg = [-1, -1, 1]\ndelta_theta_deg = 0.2\nmount_height_m = 1.0\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn missing_field_rejected() {
        let err = parse_sensor_spec("delta_theta_deg = 0.2\n").unwrap_err();
        assert!(matches!(err, Error::MalformedInput(_)));
    }

    #[test]
    fn non_positive_resolution_rejected() {
        let err = SensorSpec::new(vec![0.0], 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = vlp16_like(1.73);
        let b = vlp16_like(1.73);
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = vlp16_like(1.74);
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn builtin_specs_are_valid() {
        assert_eq!(vlp16_like(1.73).num_planes(), 16);
        assert_eq!(hdl32e_like(1.73).num_planes(), 32);
        assert_eq!(hdl64_like(1.73).num_planes(), 64);
    }
}
