//! Per-cell maximum possible LiDAR return counts.
//!
//! Each cell of the BEV grid is treated as a solid column of footprint
//! `cell_size x cell_size` reaching from the ground to `h_top`. For every
//! laser plane the beam cone is reduced, in top view, to the radial band
//! between the radii where the beam crosses `z = h_top` and `z = 0`; the
//! azimuthal width of the band/footprint intersection divided by the
//! horizontal resolution gives the per-plane count, and the per-cell maximum
//! is the sum over planes.
//!
//! [`raycast_plane_count`] provides the independent brute-force answer (one
//! ray per discrete azimuth, solid-column slab test) that the analytic path
//! is validated against.

use std::fs;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;

use crate::bev::BevConfig;
use crate::error::{Error, Result};
use crate::geom::{Point2, Square};
use crate::grid::Grid2;
use crate::sensor::{Fnv1a, SensorSpec};

const TAU: f64 = std::f64::consts::TAU;

/// Beams flatter than this are treated as exactly horizontal.
const HORIZONTAL_TAN: f64 = 1e-6;

/// Outcome of cutting a cell footprint with one beam-crossing circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellCase {
    /// The circle misses the square entirely.
    Outside,
    /// Every vertex lies inside the circle (or the sensor sits in the cell):
    /// the full angular extent of the square is swept.
    AllInside,
    /// The circle crosses the square boundary.
    TwoPoint,
}

/// Azimuth interval swept through a cell, plus the boundary crossing points
/// when the circle cuts the footprint.
#[derive(Debug, Clone, Copy)]
pub struct CellIntersection {
    pub case: CellCase,
    /// Entry azimuth in `[0, tau)`.
    pub theta_0: f64,
    /// Exit azimuth in `[0, tau)`, reached from `theta_0` by sweeping
    /// `extent` radians counterclockwise.
    pub theta_n: f64,
    /// Swept width in radians; `tau` when the sensor sits inside the cell.
    pub extent: f64,
    pub p1: Option<Point2>,
    pub p2: Option<Point2>,
}

impl CellIntersection {
    fn empty() -> Self {
        CellIntersection {
            case: CellCase::Outside,
            theta_0: 0.0,
            theta_n: 0.0,
            extent: 0.0,
            p1: None,
            p2: None,
        }
    }
}

/// Azimuth of a point: four-quadrant `atan2(x, y)` normalized to `[0, tau)`
/// (x forward, y left).
pub fn azimuth(p: Point2) -> f64 {
    let mut a = p.x.atan2(p.y);
    if a < 0.0 {
        a += TAU;
        if a >= TAU {
            a = 0.0;
        }
    }
    a
}

/// Fixed-capacity angle buffer: cells contribute at most 4 vertices plus two
/// crossings per side and circle.
struct Angles {
    buf: [f64; 24],
    len: usize,
}

impl Angles {
    fn new() -> Self {
        Angles {
            buf: [0.0; 24],
            len: 0,
        }
    }

    fn push(&mut self, a: f64) {
        if self.len < self.buf.len() {
            self.buf[self.len] = a;
            self.len += 1;
        }
    }

    /// Minimal arc containing all angles: `(theta_0, theta_n, extent)`.
    fn hull(&mut self) -> Option<(f64, f64, f64)> {
        if self.len == 0 {
            return None;
        }
        let angles = &mut self.buf[..self.len];
        angles.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        if self.len == 1 {
            return Some((angles[0], angles[0], 0.0));
        }
        let mut max_gap = TAU - angles[self.len - 1] + angles[0];
        let mut start = 0usize;
        for k in 1..self.len {
            let gap = angles[k] - angles[k - 1];
            if gap > max_gap {
                max_gap = gap;
                start = k;
            }
        }
        let theta_0 = angles[start];
        let theta_n = angles[(start + self.len - 1) % self.len];
        Some((theta_0, theta_n, TAU - max_gap))
    }
}

/// Both intersections of the circle `|p| = d` with the segment `a -> b`,
/// solved parametrically (the line-circle quadratic).
fn segment_circle_crossings(a: Point2, b: Point2, d: f64, out: &mut impl FnMut(Point2)) {
    let vx = b.x - a.x;
    let vy = b.y - a.y;
    let vv = vx * vx + vy * vy;
    if vv == 0.0 {
        return;
    }
    let av = a.x * vx + a.y * vy;
    let aa = a.x * a.x + a.y * a.y;
    let disc = av * av - vv * (aa - d * d);
    if disc < 0.0 {
        return;
    }
    let sq = disc.sqrt();
    for t in [(-av - sq) / vv, (-av + sq) / vv] {
        if (-1e-12..=1.0 + 1e-12).contains(&t) {
            out(Point2::new(a.x + t * vx, a.y + t * vy));
        }
    }
}

/// Cut of a single circle of radius `d` (sensor-centered) against a square
/// footprint, classified into the three top-view cases.
pub fn circle_square_intersection(
    d: f64,
    cell_square: &Square,
    sensor_xy: Point2,
) -> Result<CellIntersection> {
    if !(d > 0.0) {
        return Err(Error::Validation(format!(
            "circle radius {d} must be positive"
        )));
    }
    if !(cell_square.side > 0.0) {
        return Err(Error::Validation(format!(
            "degenerate square side {}",
            cell_square.side
        )));
    }
    let sq = Square {
        min_x: cell_square.min_x - sensor_xy.x,
        min_y: cell_square.min_y - sensor_xy.y,
        side: cell_square.side,
    };
    let verts = sq.vertices();
    let d2 = d * d;
    let dist2: Vec<f64> = verts.iter().map(|v| v.x * v.x + v.y * v.y).collect();

    if sq.contains(Point2::new(0.0, 0.0)) {
        return Ok(CellIntersection {
            case: CellCase::AllInside,
            theta_0: 0.0,
            theta_n: 0.0,
            extent: TAU,
            p1: None,
            p2: None,
        });
    }

    let nearest = sq.nearest_to(Point2::new(0.0, 0.0));
    let nearest2 = nearest.x * nearest.x + nearest.y * nearest.y;
    if dist2.iter().all(|&r2| r2 > d2) && nearest2 > d2 {
        return Ok(CellIntersection::empty());
    }

    let mut angles = Angles::new();
    if dist2.iter().all(|&r2| r2 <= d2) {
        for v in &verts {
            angles.push(azimuth(*v));
        }
        let (theta_0, theta_n, extent) = angles.hull().unwrap();
        return Ok(CellIntersection {
            case: CellCase::AllInside,
            theta_0,
            theta_n,
            extent,
            p1: None,
            p2: None,
        });
    }

    // boundary crossing case
    let mut crossings: Vec<Point2> = Vec::with_capacity(8);
    for k in 0..4 {
        segment_circle_crossings(verts[k], verts[(k + 1) % 4], d, &mut |p| crossings.push(p));
    }
    for (v, &r2) in verts.iter().zip(&dist2) {
        if r2 <= d2 {
            angles.push(azimuth(*v));
        }
    }
    for p in &crossings {
        angles.push(azimuth(*p));
    }
    let Some((theta_0, theta_n, extent)) = angles.hull() else {
        return Ok(CellIntersection::empty());
    };
    let (p1, p2) = if crossings.is_empty() {
        (None, None)
    } else {
        let lo = crossings
            .iter()
            .copied()
            .min_by(|a, b| azimuth(*a).partial_cmp(&azimuth(*b)).unwrap());
        let hi = crossings
            .iter()
            .copied()
            .max_by(|a, b| azimuth(*a).partial_cmp(&azimuth(*b)).unwrap());
        (lo, hi)
    };
    Ok(CellIntersection {
        case: CellCase::TwoPoint,
        theta_0,
        theta_n,
        extent,
        p1,
        p2,
    })
}

/// Horizontal radii between which a beam at vertical angle `phi`, fired from
/// `h_s` above ground, stays inside the slab `[0, h_top]`. `None` when the
/// beam never enters it; the upper radius may be infinite.
pub fn radial_band(phi: f64, h_s: f64, h_top: f64) -> Option<(f64, f64)> {
    let tan = phi.tan();
    if tan.abs() < HORIZONTAL_TAN {
        return if (0.0..=h_top).contains(&h_s) {
            Some((0.0, f64::INFINITY))
        } else {
            None
        };
    }
    if tan > 0.0 {
        if h_s > h_top {
            return None;
        }
        Some((0.0, (h_top - h_s) / tan))
    } else if h_s > h_top {
        Some(((h_top - h_s) / tan, -h_s / tan))
    } else {
        Some((0.0, -h_s / tan))
    }
}

/// Azimuthal width of the intersection between a sensor-centered annulus
/// `[r_in, r_out]` and a square footprint. Returns 0 when empty and `tau`
/// when the sensor sits inside the footprint.
fn annulus_square_extent(sq: &Square, r_in: f64, r_out: f64) -> f64 {
    let verts = sq.vertices();
    let dist2 = [
        verts[0].x * verts[0].x + verts[0].y * verts[0].y,
        verts[1].x * verts[1].x + verts[1].y * verts[1].y,
        verts[2].x * verts[2].x + verts[2].y * verts[2].y,
        verts[3].x * verts[3].x + verts[3].y * verts[3].y,
    ];
    let in2 = r_in * r_in;
    let out2 = if r_out.is_finite() {
        r_out * r_out
    } else {
        f64::INFINITY
    };

    if sq.contains(Point2::new(0.0, 0.0)) {
        let max2 = dist2.iter().cloned().fold(0.0, f64::max);
        return if in2 <= max2 { TAU } else { 0.0 };
    }
    if r_out <= 0.0 {
        return 0.0;
    }

    let nearest = sq.nearest_to(Point2::new(0.0, 0.0));
    let nearest2 = nearest.x * nearest.x + nearest.y * nearest.y;
    if nearest2 > out2 {
        return 0.0;
    }
    if r_in > 0.0 && dist2.iter().all(|&r2| r2 < in2) {
        return 0.0;
    }

    let mut angles = Angles::new();
    for (v, &r2) in verts.iter().zip(&dist2) {
        if r2 >= in2 && r2 <= out2 {
            angles.push(azimuth(*v));
        }
    }
    let mut push_crossing = |p: Point2| angles.push(azimuth(p));
    if r_out.is_finite() {
        for k in 0..4 {
            segment_circle_crossings(verts[k], verts[(k + 1) % 4], r_out, &mut push_crossing);
        }
    }
    if r_in > 0.0 {
        for k in 0..4 {
            segment_circle_crossings(verts[k], verts[(k + 1) % 4], r_in, &mut push_crossing);
        }
    }
    angles.hull().map_or(0.0, |(_, _, extent)| extent)
}

/// Quarter-turn the lattice cell into the canonical quadrant (`gx >= 0`,
/// `gy >= 0`). Rotations are exact in both integer and float space, so all
/// four grid-aligned rotations of a cell share one footprint bit pattern.
fn canonical_lattice(mut gx: i64, mut gy: i64) -> (i64, i64) {
    for _ in 0..3 {
        if gx >= 0 && gy >= 0 {
            break;
        }
        let (nx, ny) = (-gy - 1, gx);
        gx = nx;
        gy = ny;
    }
    (gx, gy)
}

fn canonical_cell_square(cfg: &BevConfig, i: usize, j: usize) -> Square {
    let (gx, gy) = cfg.cell_lattice(i, j);
    let (gx, gy) = canonical_lattice(gx, gy);
    Square {
        min_x: gx as f64 * cfg.cell_size,
        min_y: gy as f64 * cfg.cell_size,
        side: cfg.cell_size,
    }
}

fn count_from_extent(extent: f64, delta_theta: f64, azimuth_steps: usize) -> u32 {
    if extent <= 0.0 {
        return 0;
    }
    if extent >= TAU {
        return azimuth_steps as u32;
    }
    ((extent / delta_theta).ceil() as u32).min(azimuth_steps as u32)
}

/// Maximum number of returns plane `plane_index` can deposit in cell
/// `(i, j)`: the ceiling of the swept azimuth width over the horizontal
/// resolution, zero when the beam cone misses the cell column.
pub fn plane_cell_count(
    spec: &SensorSpec,
    plane_index: usize,
    cell: (usize, usize),
    cfg: &BevConfig,
) -> u32 {
    assert!(plane_index < spec.num_planes(), "plane index out of range");
    assert!(
        cell.0 < cfg.rows() && cell.1 < cfg.cols(),
        "cell outside grid"
    );
    let Some((r_in, r_out)) =
        radial_band(spec.plane_angles[plane_index], spec.mount_height, cfg.h_top)
    else {
        return 0;
    };
    let sq = canonical_cell_square(cfg, cell.0, cell.1);
    let extent = annulus_square_extent(&sq, r_in, r_out);
    count_from_extent(extent, spec.delta_theta, spec.azimuth_steps())
}

/// Per-cell maximum possible return counts for the whole grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationMap {
    pub grid: Grid2<u32>,
    /// Fingerprint of the (sensor, grid) pair the map was built from.
    pub sensor_hash: u64,
    pub cell_size: f64,
}

/// Fingerprint of a (sensor, grid) pair, used as the cache key.
pub fn map_fingerprint(spec: &SensorSpec, cfg: &BevConfig) -> u64 {
    let mut h = Fnv1a::new();
    h.write_u64(spec.fingerprint());
    h.write_u64(cfg.fingerprint());
    h.finish()
}

/// Build the normalization map: every cell holds the sum of
/// [`plane_cell_count`] over all planes. Cells are independent, so rows are
/// processed in parallel; the result is bit-identical regardless of
/// scheduling.
pub fn compute_normalization_map(spec: &SensorSpec, cfg: &BevConfig) -> Result<NormalizationMap> {
    cfg.validate()?;
    let (rows, cols) = (cfg.rows(), cfg.cols());
    let bands: Vec<(f64, f64)> = spec
        .plane_angles
        .iter()
        .filter_map(|&phi| radial_band(phi, spec.mount_height, cfg.h_top))
        .collect();
    let steps = spec.azimuth_steps();
    let delta = spec.delta_theta;

    let data: Vec<u32> = (0..rows)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(cols);
            for j in 0..cols {
                let sq = canonical_cell_square(cfg, i, j);
                let mut total = 0u32;
                for &(r_in, r_out) in &bands {
                    let extent = annulus_square_extent(&sq, r_in, r_out);
                    total += count_from_extent(extent, delta, steps);
                }
                row.push(total);
            }
            row
        })
        .collect::<Vec<_>>()
        .concat();

    Ok(NormalizationMap {
        grid: Grid2::from_vec(rows, cols, data),
        sensor_hash: map_fingerprint(spec, cfg),
        cell_size: cfg.cell_size,
    })
}

impl NormalizationMap {
    pub fn max_count(&self, i: usize, j: usize) -> u32 {
        self.grid.get(i, j)
    }

    /// (min, max, mean) over all cells.
    pub fn stats(&self) -> (u32, u32, f64) {
        let s = self.grid.as_slice();
        let min = s.iter().copied().min().unwrap_or(0);
        let max = s.iter().copied().max().unwrap_or(0);
        let mean = s.iter().map(|&v| v as f64).sum::<f64>() / s.len().max(1) as f64;
        (min, max, mean)
    }
}

/// Ray/solid-column hit test: slab intersection of the ray from
/// `(0, 0, h_s)` with the axis-aligned column over `sq`.
fn ray_hits_column(sq: &Square, h_top: f64, h_s: f64, theta: f64, phi: f64) -> bool {
    let (s_phi, c_phi) = phi.sin_cos();
    let (s_th, c_th) = theta.sin_cos();
    let dir = [c_phi * s_th, c_phi * c_th, s_phi];
    let origin = [0.0, 0.0, h_s];
    let lo = [sq.min_x, sq.min_y, 0.0];
    let hi = [sq.max_x(), sq.max_y(), h_top];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        if dir[axis].abs() < 1e-15 {
            if origin[axis] < lo[axis] || origin[axis] > hi[axis] {
                return false;
            }
            continue;
        }
        let a = (lo[axis] - origin[axis]) / dir[axis];
        let b = (hi[axis] - origin[axis]) / dir[axis];
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    t1 >= t0 && t1 >= 0.0
}

/// Brute-force count for one plane: how many of the discrete sweep azimuths
/// `k * delta_theta` hit the solid cell column. Azimuths outside the cell's
/// angular hull can never hit, so only a padded window is enumerated.
pub fn raycast_plane_count(
    spec: &SensorSpec,
    plane_index: usize,
    cell: (usize, usize),
    cfg: &BevConfig,
) -> u32 {
    let sq = cfg.cell_square(cell.0, cell.1);
    let phi = spec.plane_angles[plane_index];
    let steps = spec.azimuth_steps();
    let delta = spec.delta_theta;
    let h_top = cfg.h_top;
    let h_s = spec.mount_height;

    if sq.contains(Point2::new(0.0, 0.0)) {
        return (0..steps)
            .filter(|&k| ray_hits_column(&sq, h_top, h_s, k as f64 * delta, phi))
            .count() as u32;
    }

    let mut angles = Angles::new();
    for v in sq.vertices() {
        angles.push(azimuth(v));
    }
    let Some((theta_0, _, extent)) = angles.hull() else {
        return 0;
    };
    // padded k-window over the (possibly wrapping) hull arc
    let mut count = 0u32;
    let test_range = |a: f64, b: f64, count: &mut u32| {
        let k_lo = ((a / delta).floor() as i64 - 1).max(0);
        let k_hi = ((b / delta).ceil() as i64 + 1).min(steps as i64 - 1);
        for k in k_lo..=k_hi {
            if ray_hits_column(&sq, h_top, h_s, k as f64 * delta, phi) {
                *count += 1;
            }
        }
    };
    let end = theta_0 + extent;
    if end <= TAU {
        test_range(theta_0, end, &mut count);
    } else {
        test_range(theta_0, TAU, &mut count);
        test_range(0.0, end - TAU, &mut count);
    }
    count
}

/// Brute-force total over all planes for one cell.
pub fn raycast_reference_count(spec: &SensorSpec, cfg: &BevConfig, cell: (usize, usize)) -> u32 {
    (0..spec.num_planes())
        .map(|p| raycast_plane_count(spec, p, cell, cfg))
        .sum()
}

const CACHE_MAGIC: [u8; 4] = *b"BNM1";

/// Serialize the map: header (magic, shape, cell size, fingerprint) followed
/// by row-major little-endian u32 counts.
pub fn write_cache(map: &NormalizationMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(4 + 4 + 4 + 8 + 8 + map.grid.as_slice().len() * 4);
    buf.extend_from_slice(&CACHE_MAGIC);
    buf.extend_from_slice(&(map.grid.rows() as u32).to_le_bytes());
    buf.extend_from_slice(&(map.grid.cols() as u32).to_le_bytes());
    buf.extend_from_slice(&map.cell_size.to_bits().to_le_bytes());
    buf.extend_from_slice(&map.sensor_hash.to_le_bytes());
    for &v in map.grid.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<NormalizationMap> {
    let path = path.as_ref();
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 28];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    if header[0..4] != CACHE_MAGIC {
        return Err(Error::MalformedInput(format!(
            "{} is not a normalization map cache",
            path.display()
        )));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let cell_size = f64::from_bits(u64::from_le_bytes(header[12..20].try_into().unwrap()));
    let sensor_hash = u64::from_le_bytes(header[20..28].try_into().unwrap());
    let mut body = Vec::new();
    file.read_to_end(&mut body)
        .map_err(|e| Error::io(path, e))?;
    if body.len() != rows * cols * 4 {
        return Err(Error::MalformedInput(format!(
            "cache body is {} bytes, expected {}",
            body.len(),
            rows * cols * 4
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(NormalizationMap {
        grid: Grid2::from_vec(rows, cols, data),
        sensor_hash,
        cell_size,
    })
}

/// Load a cached map when its fingerprint matches the (sensor, grid) pair;
/// recompute and rewrite the cache otherwise.
pub fn load_or_compute(
    path: impl AsRef<Path>,
    spec: &SensorSpec,
    cfg: &BevConfig,
) -> Result<NormalizationMap> {
    let path = path.as_ref();
    let wanted = map_fingerprint(spec, cfg);
    if let Ok(map) = read_cache(path) {
        if map.sensor_hash == wanted
            && map.grid.rows() == cfg.rows()
            && map.grid.cols() == cfg.cols()
        {
            return Ok(map);
        }
    }
    let map = compute_normalization_map(spec, cfg)?;
    write_cache(&map, path)?;
    Ok(map)
}
