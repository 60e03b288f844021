//! Point cloud model and velodyne-style binary I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One LiDAR return: coordinates in meters (sensor frame, x forward, y left,
/// z up) and reflectance in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

/// Unordered collection of returns from one sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, frame_id: impl Into<String>) -> Self {
        PointCloud {
            points,
            frame_id: frame_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

const POINT_STRIDE: usize = 16;

/// Read a KITTI velodyne `.bin` file: consecutive little-endian float32
/// quadruples `(x, y, z, intensity)`.
///
/// Intensities encoded as `[0, 255]` are detected by their maximum and scaled
/// down once per file, so the returned cloud always carries `[0, 1]` values.
pub fn read_kitti_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_kitti_bin(&bytes, frame_id)
}

/// Decode the raw bytes of a velodyne `.bin` buffer.
pub fn decode_kitti_bin(bytes: &[u8], frame_id: impl Into<String>) -> Result<PointCloud> {
    if bytes.len() % POINT_STRIDE != 0 {
        return Err(Error::MalformedInput(format!(
            "binary cloud length {} is not a multiple of {} bytes",
            bytes.len(),
            POINT_STRIDE
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_STRIDE);
    for (idx, chunk) in bytes.chunks_exact(POINT_STRIDE).enumerate() {
        let f = |off: usize| f32::from_le_bytes(chunk[off..off + 4].try_into().unwrap());
        let p = LidarPoint {
            x: f(0),
            y: f(4),
            z: f(8),
            intensity: f(12),
        };
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite() && p.intensity.is_finite()) {
            return Err(Error::MalformedInput(format!(
                "non-finite value in point {idx}"
            )));
        }
        points.push(p);
    }

    // Some datasets store reflectance as [0, 255] instead of [0, 1].
    let max_intensity = points.iter().map(|p| p.intensity).fold(0.0f32, f32::max);
    if max_intensity > 1.0 {
        for p in &mut points {
            p.intensity = (p.intensity / 255.0).clamp(0.0, 1.0);
        }
    } else if points.iter().any(|p| p.intensity < 0.0) {
        for p in &mut points {
            p.intensity = p.intensity.max(0.0);
        }
    }

    Ok(PointCloud {
        points,
        frame_id: frame_id.into(),
    })
}

/// Serialize a cloud back to the binary layout. Round-trips bit-exactly.
pub fn encode_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.points.len() * POINT_STRIDE);
    for p in &cloud.points {
        out.extend_from_slice(&p.x.to_le_bytes());
        out.extend_from_slice(&p.y.to_le_bytes());
        out.extend_from_slice(&p.z.to_le_bytes());
        out.extend_from_slice(&p.intensity.to_le_bytes());
    }
    out
}

pub fn write_kitti_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_kitti_bin(cloud)).map_err(|e| Error::io(path, e))
}
