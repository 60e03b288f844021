//! BEV rasterization: the 3-channel (height, intensity, normalized density)
//! image, flip/rotation augmentation, ground removal and PNG rendering.
//!
//! Grid anchoring: cell boundaries sit on integer multiples of the cell size
//! relative to the sensor. Pixel (0, 0) is the (x_max, y_max) corner; the row
//! index decreases x and the column index decreases y. A point on a shared
//! cell boundary belongs to the cell on the far side from the sensor, which
//! keeps binning exactly symmetric under grid-aligned rotations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Square};
use crate::grid::Grid2;
use crate::kitti::GtObject;
use crate::normmap::NormalizationMap;
use crate::sensor::Fnv1a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FovMode {
    /// 110 degree wedge in front of the vehicle; cells outside are zeroed.
    Frontal110,
    /// Square grid centered on the sensor, no masking.
    Full360,
}

/// Geometry of the BEV raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevConfig {
    /// Cell side in meters.
    pub cell_size: f64,
    /// Forward extent in meters (also the half-extent of a Full360 grid).
    pub forward_range: f64,
    /// Lateral half-extent in meters (Frontal110 only).
    pub lateral_range: f64,
    /// Height clamp above the ground plane in meters.
    pub h_top: f64,
    pub fov_mode: FovMode,
    /// z of the ground plane in the sensor frame (-1.73 for KITTI setups).
    pub ground_offset: f64,
}

impl Default for BevConfig {
    fn default() -> Self {
        BevConfig {
            cell_size: 0.05,
            forward_range: 35.0,
            lateral_range: 20.0,
            h_top: 3.0,
            fov_mode: FovMode::Frontal110,
            ground_offset: -1.73,
        }
    }
}

impl BevConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::Validation("cell_size must be positive".into()));
        }
        if self.forward_range <= 0.0 || self.lateral_range <= 0.0 {
            return Err(Error::Validation("ranges must be positive".into()));
        }
        if self.h_top <= 0.0 {
            return Err(Error::Validation("h_top must be positive".into()));
        }
        if self.rows() == 0 || self.cols() == 0 {
            return Err(Error::Validation("grid has no cells".into()));
        }
        Ok(())
    }

    /// Lattice bounds `(x_lo, x_hi), (y_lo, y_hi)` in whole cells relative to
    /// the sensor. Cell `(gx, gy)` spans `[gx*d, (gx+1)*d) x [gy*d, (gy+1)*d)`.
    fn lattice_bounds(&self) -> ((i64, i64), (i64, i64)) {
        let cells = |range: f64| (range / self.cell_size).round().max(1.0) as i64;
        match self.fov_mode {
            FovMode::Frontal110 => {
                let nx = cells(self.forward_range);
                let ny = cells(self.lateral_range);
                ((0, nx), (-ny, ny))
            }
            FovMode::Full360 => {
                let n = cells(self.forward_range);
                ((-n, n), (-n, n))
            }
        }
    }

    pub fn rows(&self) -> usize {
        let ((lo, hi), _) = self.lattice_bounds();
        (hi - lo) as usize
    }

    pub fn cols(&self) -> usize {
        let (_, (lo, hi)) = self.lattice_bounds();
        (hi - lo) as usize
    }

    /// Lattice coordinates of grid cell `(i, j)`.
    pub fn cell_lattice(&self, i: usize, j: usize) -> (i64, i64) {
        let ((_, x_hi), (_, y_hi)) = self.lattice_bounds();
        (x_hi - 1 - i as i64, y_hi - 1 - j as i64)
    }

    /// Footprint square of grid cell `(i, j)`.
    pub fn cell_square(&self, i: usize, j: usize) -> Square {
        let (gx, gy) = self.cell_lattice(i, j);
        Square {
            min_x: gx as f64 * self.cell_size,
            min_y: gy as f64 * self.cell_size,
            side: self.cell_size,
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        let (gx, gy) = self.cell_lattice(i, j);
        (
            (gx as f64 + 0.5) * self.cell_size,
            (gy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Grid cell containing the planar point, if inside the extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let ((x_lo, x_hi), (y_lo, y_hi)) = self.lattice_bounds();
        let gx = lattice_bin(x, self.cell_size)?;
        let gy = lattice_bin(y, self.cell_size)?;
        if gx < x_lo || gx >= x_hi || gy < y_lo || gy >= y_hi {
            return None;
        }
        Some(((x_hi - 1 - gx) as usize, (y_hi - 1 - gy) as usize))
    }

    /// (x_max, y_max) corner of the raster in meters.
    pub fn extent_max(&self) -> (f64, f64) {
        let ((_, x_hi), (_, y_hi)) = self.lattice_bounds();
        (x_hi as f64 * self.cell_size, y_hi as f64 * self.cell_size)
    }

    /// (x_min, y_min) corner of the raster in meters.
    pub fn extent_min(&self) -> (f64, f64) {
        let ((x_lo, _), (y_lo, _)) = self.lattice_bounds();
        (x_lo as f64 * self.cell_size, y_lo as f64 * self.cell_size)
    }

    /// Stable fingerprint over the exact field bit patterns.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.cell_size.to_bits());
        h.write_u64(self.forward_range.to_bits());
        h.write_u64(self.lateral_range.to_bits());
        h.write_u64(self.h_top.to_bits());
        h.write_u64(match self.fov_mode {
            FovMode::Frontal110 => 0,
            FovMode::Full360 => 1,
        });
        h.write_u64(self.ground_offset.to_bits());
        h.finish()
    }
}

/// Lattice index of a coordinate with the boundary convention that exact
/// cell edges bin away from the sensor: `bin(-v) = -bin(v) - 1` for every
/// nonzero `v`, so quarter-turn rotations of a point and of the grid agree.
fn lattice_bin(v: f64, cell: f64) -> Option<i64> {
    let q = v / cell;
    if !q.is_finite() || q.abs() >= 1e15 {
        return None;
    }
    Some(if q >= 0.0 {
        q.floor() as i64
    } else {
        -((-q).floor() as i64) - 1
    })
}

/// The encoded 3-channel raster; every value lies in `[0, 1]` and untouched
/// cells are exactly `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub height: Grid2<f32>,
    pub intensity: Grid2<f32>,
    pub density: Grid2<f32>,
    pub cfg: BevConfig,
}

impl BevImage {
    pub fn rows(&self) -> usize {
        self.height.rows()
    }

    pub fn cols(&self) -> usize {
        self.height.cols()
    }

    /// Copy with any subset of channels zeroed, mirroring the single-channel
    /// ablation inputs.
    pub fn with_channels(&self, height: bool, intensity: bool, density: bool) -> BevImage {
        let zero = |keep: bool, g: &Grid2<f32>| {
            if keep {
                g.clone()
            } else {
                Grid2::filled(g.rows(), g.cols(), 0.0)
            }
        };
        BevImage {
            height: zero(height, &self.height),
            intensity: zero(intensity, &self.intensity),
            density: zero(density, &self.density),
            cfg: self.cfg,
        }
    }
}

/// A BEV together with the annotations that live in its frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedFrame {
    pub bev: BevImage,
    pub objects: Vec<GtObject>,
}

impl AnnotatedFrame {
    /// True for objects whose footprint center falls outside the raster.
    pub fn out_of_range_flags(&self) -> Vec<bool> {
        self.objects
            .iter()
            .map(|o| self.bev.cfg.cell_of(o.box3d.cx, o.box3d.cy).is_none())
            .collect()
    }
}

/// Rasterize a cloud into the 3-channel BEV.
///
/// Points outside the planar extent or with `z - ground_offset` outside
/// `[0, h_top]` are discarded. The density channel is the in-cell count
/// divided by the cell's maximum possible count, clamped to 1, and 0 where
/// the maximum is 0. Intensity sums are accumulated in f64, which is exact
/// for f32 inputs, so the result is independent of point order.
pub fn encode_bev(
    cloud: &PointCloud,
    cfg: &BevConfig,
    nmap: &NormalizationMap,
) -> Result<BevImage> {
    cfg.validate()?;
    let (rows, cols) = (cfg.rows(), cfg.cols());
    if nmap.grid.rows() != rows || nmap.grid.cols() != cols {
        return Err(Error::Validation(format!(
            "normalization map is {}x{} but the grid is {rows}x{cols}",
            nmap.grid.rows(),
            nmap.grid.cols()
        )));
    }
    if nmap.cell_size.to_bits() != cfg.cell_size.to_bits() {
        return Err(Error::Validation(
            "normalization map cell size differs from the grid".into(),
        ));
    }

    let n = rows * cols;
    let mut count = vec![0u32; n];
    let mut sum_intensity = vec![0f64; n];
    let mut max_height = vec![0f64; n];

    for p in &cloud.points {
        let z_rel = p.z as f64 - cfg.ground_offset;
        if !(0.0..=cfg.h_top).contains(&z_rel) {
            continue;
        }
        let Some((i, j)) = cfg.cell_of(p.x as f64, p.y as f64) else {
            continue;
        };
        let idx = i * cols + j;
        count[idx] += 1;
        sum_intensity[idx] += p.intensity as f64;
        if z_rel > max_height[idx] {
            max_height[idx] = z_rel;
        }
    }

    let mut height = vec![0f32; n];
    let mut intensity = vec![0f32; n];
    let mut density = vec![0f32; n];
    let nmap_counts = nmap.grid.as_slice();
    for idx in 0..n {
        if count[idx] == 0 {
            continue;
        }
        height[idx] = ((max_height[idx] / cfg.h_top).clamp(0.0, 1.0)) as f32;
        intensity[idx] = (sum_intensity[idx] / count[idx] as f64) as f32;
        let m = nmap_counts[idx];
        if m > 0 {
            density[idx] = ((count[idx] as f64 / m as f64).min(1.0)) as f32;
        }
    }

    let mut bev = BevImage {
        height: Grid2::from_vec(rows, cols, height),
        intensity: Grid2::from_vec(rows, cols, intensity),
        density: Grid2::from_vec(rows, cols, density),
        cfg: *cfg,
    };

    if cfg.fov_mode == FovMode::Frontal110 {
        mask_fov_wedge(&mut bev);
    }
    Ok(bev)
}

/// Zero every cell whose center lies outside the 110 degree forward wedge.
fn mask_fov_wedge(bev: &mut BevImage) {
    let half = 55f64.to_radians();
    let (rows, cols) = (bev.rows(), bev.cols());
    for i in 0..rows {
        for j in 0..cols {
            let (cx, cy) = bev.cfg.cell_center(i, j);
            if cy.atan2(cx).abs() > half {
                bev.height.set(i, j, 0.0);
                bev.intensity.set(i, j, 0.0);
                bev.density.set(i, j, 0.0);
            }
        }
    }
}

/// Height-difference ground removal: a coarse grid of `grid_size` cells is
/// laid over the cloud, and cells whose max-min point height falls below the
/// threshold lose all their points. Reproduces the known failure mode of
/// also deleting horizontal car surfaces.
pub fn remove_ground(cloud: &PointCloud, grid_size: f64, height_diff_threshold: f64) -> PointCloud {
    assert!(grid_size > 0.0, "grid_size must be positive");
    assert!(height_diff_threshold > 0.0, "threshold must be positive");
    use std::collections::HashMap;
    let mut cells: HashMap<(i64, i64), (f32, f32)> = HashMap::new();
    let key = |x: f32, y: f32| {
        (
            (x as f64 / grid_size).floor() as i64,
            (y as f64 / grid_size).floor() as i64,
        )
    };
    for p in &cloud.points {
        let e = cells.entry(key(p.x, p.y)).or_insert((p.z, p.z));
        e.0 = e.0.min(p.z);
        e.1 = e.1.max(p.z);
    }
    let points = cloud
        .points
        .iter()
        .filter(|p| {
            let (lo, hi) = cells[&key(p.x, p.y)];
            (hi - lo) as f64 >= height_diff_threshold
        })
        .copied()
        .collect();
    PointCloud {
        points,
        frame_id: cloud.frame_id.clone(),
    }
}

/// Mirror the frame across the forward axis: columns reverse, object
/// y-centers negate, yaws reflect. An exact involution.
pub fn flip_horizontal(frame: &AnnotatedFrame) -> AnnotatedFrame {
    let bev = BevImage {
        height: frame.bev.height.mirror_cols(),
        intensity: frame.bev.intensity.mirror_cols(),
        density: frame.bev.density.mirror_cols(),
        cfg: frame.bev.cfg,
    };
    let objects = frame
        .objects
        .iter()
        .map(|o| {
            let mut o = o.clone();
            o.box3d.cy = -o.box3d.cy;
            // plain negation is exact; only -pi needs wrapping back to +pi
            let y = -o.box3d.yaw;
            o.box3d.yaw = if y <= -std::f64::consts::PI {
                y + std::f64::consts::TAU
            } else {
                y
            };
            o
        })
        .collect();
    AnnotatedFrame { bev, objects }
}

/// Rotate the frame by `k` quarter turns about the sensor. Pure array
/// permutation, no resampling; requires a centered square grid.
pub fn rotate90(frame: &AnnotatedFrame, k: u32) -> Result<AnnotatedFrame> {
    let cfg = &frame.bev.cfg;
    if cfg.fov_mode != FovMode::Full360 || cfg.rows() != cfg.cols() {
        return Err(Error::Validation(
            "rotation augmentation needs a centered square Full360 grid".into(),
        ));
    }
    let mut out = frame.clone();
    for _ in 0..(k % 4) {
        out.bev.height = out.bev.height.rot90();
        out.bev.intensity = out.bev.intensity.rot90();
        out.bev.density = out.bev.density.rot90();
        for o in &mut out.objects {
            let (x, y) = (o.box3d.cx, o.box3d.cy);
            o.box3d.cx = -y;
            o.box3d.cy = x;
            o.box3d.yaw = wrap_angle(o.box3d.yaw + std::f64::consts::FRAC_PI_2);
        }
    }
    Ok(out)
}

/// Write the BEV as an 8-bit PNG with channel order
/// (intensity, density, height) -> (R, G, B); value = round(255 * v).
pub fn render_png(bev: &BevImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = (bev.rows(), bev.cols());
    let mut img = image::RgbImage::new(cols as u32, rows as u32);
    for i in 0..rows {
        for j in 0..cols {
            let q = |v: f32| (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8;
            img.put_pixel(
                j as u32,
                i as u32,
                image::Rgb([
                    q(bev.intensity.get(i, j)),
                    q(bev.density.get(i, j)),
                    q(bev.height.get(i, j)),
                ]),
            );
        }
    }
    img.save(path)
        .map_err(|e| Error::MalformedInput(format!("png write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::LidarPoint;
    use crate::normmap::NormalizationMap;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_nmap(cfg: &BevConfig, value: u32) -> NormalizationMap {
        NormalizationMap {
            grid: Grid2::filled(cfg.rows(), cfg.cols(), value),
            sensor_hash: 0,
            cell_size: cfg.cell_size,
        }
    }

    fn small_cfg() -> BevConfig {
        BevConfig {
            cell_size: 0.5,
            forward_range: 16.0,
            lateral_range: 8.0,
            h_top: 3.0,
            fov_mode: FovMode::Frontal110,
            ground_offset: 0.0,
        }
    }

    fn pt(x: f32, y: f32, z: f32, intensity: f32) -> LidarPoint {
        LidarPoint { x, y, z, intensity }
    }

    #[test]
    fn grid_shape_defaults() {
        let cfg = BevConfig::default();
        assert_eq!(cfg.rows(), 700);
        assert_eq!(cfg.cols(), 800);
        let full = BevConfig {
            fov_mode: FovMode::Full360,
            ..cfg
        };
        assert_eq!(full.rows(), 1400);
        assert_eq!(full.cols(), 1400);
    }

    #[test]
    fn cell_of_matches_cell_square() {
        let cfg = small_cfg();
        for (x, y) in [(0.01, 0.01), (10.2, -3.3), (15.99, 7.99), (0.0, -7.9)] {
            let (i, j) = cfg.cell_of(x, y).unwrap();
            let sq = cfg.cell_square(i, j);
            assert!(x >= sq.min_x && x < sq.min_x + sq.side);
            assert!(y >= sq.min_y && y < sq.min_y + sq.side);
        }
        assert!(cfg.cell_of(-0.1, 0.0).is_none());
        assert!(cfg.cell_of(16.0, 0.0).is_none());
        assert!(cfg.cell_of(3.0, 8.0).is_none());
        // exact boundaries bin away from the sensor
        assert!(cfg.cell_of(3.0, -8.0).is_none());
        let (_, j) = cfg.cell_of(3.0, -7.5).unwrap();
        let sq = cfg.cell_square(0, j);
        assert_eq!(sq.max_y(), -7.5);
    }

    #[test]
    fn boundary_binning_is_rotation_symmetric() {
        let cfg = BevConfig {
            fov_mode: FovMode::Full360,
            forward_range: 8.0,
            ..small_cfg()
        };
        let n = cfg.rows();
        // values that divide to exact lattice integers included
        for v in [2.0f64, 1.0, 4.0, 0.5, 1.3, -3.7] {
            for (x, y) in [(v, 1.23), (1.23, v), (v, -v)] {
                let Some((i, j)) = cfg.cell_of(x, y) else {
                    continue;
                };
                let rotated = cfg.cell_of(-y, x).unwrap();
                assert_eq!(rotated, (n - 1 - j, i), "point ({x}, {y})");
            }
        }
    }

    #[test]
    fn encode_single_point_sets_all_channels() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        let cloud = PointCloud::new(vec![pt(10.0, 0.1, 1.5, 0.5)], "t");
        let bev = encode_bev(&cloud, &cfg, &nmap).unwrap();
        let (i, j) = cfg.cell_of(10.0, 0.1).unwrap();
        assert!((bev.height.get(i, j) - 0.5).abs() < 1e-6);
        assert!((bev.intensity.get(i, j) - 0.5).abs() < 1e-6);
        assert!((bev.density.get(i, j) - 0.25).abs() < 1e-6);
        let occupied: usize = bev
            .density
            .as_slice()
            .iter()
            .zip(bev.height.as_slice())
            .zip(bev.intensity.as_slice())
            .filter(|((d, h), s)| **d != 0.0 || **h != 0.0 || **s != 0.0)
            .count();
        assert_eq!(occupied, 1);
    }

    #[test]
    fn points_above_h_top_are_discarded() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        let cloud = PointCloud::new(vec![pt(10.0, 0.1, 5.0, 0.5), pt(10.0, 0.1, -0.5, 0.5)], "t");
        let bev = encode_bev(&cloud, &cfg, &nmap).unwrap();
        assert!(bev.height.as_slice().iter().all(|v| *v == 0.0));
        assert!(bev.intensity.as_slice().iter().all(|v| *v == 0.0));
        assert!(bev.density.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn density_clamps_at_one() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        let points = (0..10)
            .map(|k| pt(10.0, 0.1, 1.0, 0.1 * k as f32))
            .collect();
        let bev = encode_bev(&PointCloud::new(points, "t"), &cfg, &nmap).unwrap();
        let (i, j) = cfg.cell_of(10.0, 0.1).unwrap();
        assert_eq!(bev.density.get(i, j), 1.0);
    }

    #[test]
    fn zero_max_count_gives_zero_density() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 0);
        let cloud = PointCloud::new(vec![pt(10.0, 0.1, 1.0, 0.5)], "t");
        let bev = encode_bev(&cloud, &cfg, &nmap).unwrap();
        let (i, j) = cfg.cell_of(10.0, 0.1).unwrap();
        assert_eq!(bev.density.get(i, j), 0.0);
        assert!(bev.height.get(i, j) > 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = small_cfg();
        let other = BevConfig {
            forward_range: 8.0,
            ..cfg
        };
        let nmap = flat_nmap(&other, 4);
        let err = encode_bev(&PointCloud::default(), &cfg, &nmap).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn channel_values_stay_in_unit_range() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let points = (0..5000)
            .map(|_| {
                pt(
                    rng.random_range(-1.0..20.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-1.0..5.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let bev = encode_bev(&PointCloud::new(points, "t"), &cfg, &nmap).unwrap();
        for g in [&bev.height, &bev.intensity, &bev.density] {
            assert!(g.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn encoding_is_permutation_invariant() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut points: Vec<LidarPoint> = (0..4000)
            .map(|_| {
                pt(
                    rng.random_range(0.0..16.0),
                    rng.random_range(-8.0..8.0),
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let a = encode_bev(&PointCloud::new(points.clone(), "t"), &cfg, &nmap).unwrap();
        // deterministic shuffle
        for i in (1..points.len()).rev() {
            points.swap(i, rng.random_range(0..=i));
        }
        let b = encode_bev(&PointCloud::new(points, "t"), &cfg, &nmap).unwrap();
        assert_eq!(a.height, b.height);
        assert_eq!(a.intensity, b.intensity);
        assert_eq!(a.density, b.density);
    }

    #[test]
    fn fov_mask_zeroes_wedge_exterior() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        // 80 degrees off axis: inside the lateral range, outside the wedge
        let off_axis = pt(1.0, 5.67, 1.0, 0.9);
        let on_axis = pt(10.0, 0.1, 1.0, 0.9);
        let cloud = PointCloud::new(vec![off_axis, on_axis], "t");
        let bev = encode_bev(&cloud, &cfg, &nmap).unwrap();
        let (i, j) = cfg.cell_of(1.0, 5.67).unwrap();
        assert_eq!(bev.height.get(i, j), 0.0);
        let (i, j) = cfg.cell_of(10.0, 0.1).unwrap();
        assert!(bev.height.get(i, j) > 0.0);
    }

    #[test]
    fn remove_ground_flat_cloud_empties() {
        let mut points = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                points.push(pt(i as f32 * 0.3, j as f32 * 0.3, 0.0, 0.5));
            }
        }
        let out = remove_ground(&PointCloud::new(points, "t"), 1.0, 0.2);
        assert!(out.is_empty());
    }

    #[test]
    fn remove_ground_keeps_vertical_pole() {
        let mut points: Vec<LidarPoint> =
            (0..20).map(|k| pt(5.0, 5.0, 0.1 * k as f32, 0.5)).collect();
        points.push(pt(1.0, 1.0, 0.0, 0.5));
        let out = remove_ground(&PointCloud::new(points, "t"), 1.0, 0.2);
        assert_eq!(out.len(), 20);
        assert!(out.points.iter().all(|p| p.x == 5.0));
    }

    #[test]
    fn remove_ground_deletes_horizontal_roof_patch() {
        // flat ground everywhere plus an isolated flat car-roof patch at 1.5 m
        let mut points = Vec::new();
        for i in 0..30 {
            for j in 0..30 {
                points.push(pt(i as f32 * 0.4, j as f32 * 0.4, 0.0, 0.5));
            }
        }
        let roof: Vec<LidarPoint> = (0..9)
            .map(|k| {
                pt(
                    20.0 + 0.1 * (k % 3) as f32,
                    20.0 + 0.1 * (k / 3) as f32,
                    1.5,
                    0.5,
                )
            })
            .collect();
        points.extend_from_slice(&roof);
        let out = remove_ground(&PointCloud::new(points, "t"), 1.0, 0.2);
        assert!(
            out.is_empty(),
            "roof patch should be lost too, got {}",
            out.len()
        );
    }

    fn random_full360_frame(seed: u64) -> AnnotatedFrame {
        let cfg = BevConfig {
            cell_size: 0.25,
            forward_range: 8.0,
            lateral_range: 8.0,
            h_top: 3.0,
            fov_mode: FovMode::Full360,
            ground_offset: 0.0,
        };
        let nmap = flat_nmap(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..3000)
            .map(|_| {
                pt(
                    rng.random_range(-8.0..8.0),
                    rng.random_range(-8.0..8.0),
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let bev = encode_bev(&PointCloud::new(points, "t"), &cfg, &nmap).unwrap();
        let objects = vec![
            GtObject::upright(
                crate::kitti::ObjectClass::Car,
                5.0,
                1.0,
                0.0,
                4.0,
                1.8,
                1.5,
                0.4,
            ),
            GtObject::upright(
                crate::kitti::ObjectClass::Pedestrian,
                -2.0,
                3.0,
                0.0,
                0.8,
                0.6,
                1.7,
                -2.1,
            ),
        ];
        AnnotatedFrame { bev, objects }
    }

    #[test]
    fn flip_is_bit_exact_involution() {
        let frame = random_full360_frame(50);
        let twice = flip_horizontal(&flip_horizontal(&frame));
        assert_eq!(frame, twice);
    }

    #[test]
    fn flip_reflects_objects() {
        let frame = random_full360_frame(51);
        let flipped = flip_horizontal(&frame);
        let a = &frame.objects[0].box3d;
        let b = &flipped.objects[0].box3d;
        assert_eq!(b.cx, a.cx);
        assert_eq!(b.cy, -a.cy);
        assert!((b.yaw + a.yaw).abs() < 1e-12);
    }

    #[test]
    fn flip_fixes_symmetric_frames() {
        let cfg = BevConfig {
            cell_size: 0.25,
            forward_range: 8.0,
            lateral_range: 8.0,
            h_top: 3.0,
            fov_mode: FovMode::Full360,
            ground_offset: 0.0,
        };
        let nmap = flat_nmap(&cfg, 3);
        // mirror-symmetric cloud: every point paired with its y-reflection
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let mut points = Vec::new();
        for _ in 0..1500 {
            let p = pt(
                rng.random_range(-8.0..8.0),
                rng.random_range(0.01..8.0),
                rng.random_range(0.0..3.0),
                rng.random_range(0.0..1.0),
            );
            points.push(p);
            points.push(pt(p.x, -p.y, p.z, p.intensity));
        }
        let bev = encode_bev(&PointCloud::new(points, "t"), &cfg, &nmap).unwrap();
        let frame = AnnotatedFrame {
            bev,
            objects: vec![GtObject::upright(
                crate::kitti::ObjectClass::Car,
                5.0,
                0.0,
                0.0,
                4.0,
                1.8,
                1.5,
                0.0,
            )],
        };
        assert_eq!(flip_horizontal(&frame), frame);
    }

    #[test]
    fn rotate_four_quarters_is_identity() {
        let frame = random_full360_frame(52);
        let r = rotate90(&frame, 4).unwrap();
        assert_eq!(frame.bev, r.bev);
        for (a, b) in frame.objects.iter().zip(&r.objects) {
            assert!((a.box3d.cx - b.box3d.cx).abs() < 1e-12);
            assert!((a.box3d.cy - b.box3d.cy).abs() < 1e-12);
            assert!(wrap_angle(a.box3d.yaw - b.box3d.yaw).abs() < 1e-12);
        }
    }

    #[test]
    fn rotate_moves_objects() {
        let frame = random_full360_frame(53);
        let r = rotate90(&frame, 1).unwrap();
        let a = &frame.objects[0].box3d;
        let b = &r.objects[0].box3d;
        assert_eq!(b.cx, -a.cy);
        assert_eq!(b.cy, a.cx);
        assert!((wrap_angle(a.yaw + std::f64::consts::FRAC_PI_2) - b.yaw).abs() < 1e-12);
    }

    #[test]
    fn rotate_rejects_frontal_grids() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 1);
        let bev = encode_bev(&PointCloud::default(), &cfg, &nmap).unwrap();
        let frame = AnnotatedFrame {
            bev,
            objects: vec![],
        };
        assert!(matches!(rotate90(&frame, 1), Err(Error::Validation(_))));
    }

    /// Rotating the cloud then encoding equals encoding then rotating.
    #[test]
    fn encode_commutes_with_rotation() {
        let cfg = BevConfig {
            cell_size: 0.25,
            forward_range: 8.0,
            lateral_range: 8.0,
            h_top: 3.0,
            fov_mode: FovMode::Full360,
            ground_offset: 0.0,
        };
        let nmap = flat_nmap(&cfg, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        for _ in 0..5 {
            let points: Vec<LidarPoint> = (0..2000)
                .map(|_| {
                    pt(
                        rng.random_range(-8.0..8.0),
                        rng.random_range(-8.0..8.0),
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect();
            let cloud = PointCloud::new(points.clone(), "t");
            let encoded = encode_bev(&cloud, &cfg, &nmap).unwrap();
            let frame = AnnotatedFrame {
                bev: encoded,
                objects: vec![],
            };
            for k in 1..4u32 {
                let mut rotated_points = points.clone();
                for p in &mut rotated_points {
                    for _ in 0..k {
                        let (x, y) = (p.x, p.y);
                        p.x = -y;
                        p.y = x;
                    }
                }
                let enc_rot =
                    encode_bev(&PointCloud::new(rotated_points, "t"), &cfg, &nmap).unwrap();
                let rot_enc = rotate90(&frame, k).unwrap();
                assert_eq!(enc_rot, rot_enc.bev, "k={k}");
            }
        }
    }

    #[test]
    fn channel_isolation_zeroes_subsets() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        let cloud = PointCloud::new(vec![pt(10.0, 0.1, 1.5, 0.5)], "t");
        let bev = encode_bev(&cloud, &cfg, &nmap).unwrap();
        let (i, j) = cfg.cell_of(10.0, 0.1).unwrap();

        let density_only = bev.with_channels(false, false, true);
        assert_eq!(density_only.height.get(i, j), 0.0);
        assert_eq!(density_only.intensity.get(i, j), 0.0);
        assert_eq!(density_only.density.get(i, j), bev.density.get(i, j));

        let all = bev.with_channels(true, true, true);
        assert_eq!(all, bev);
    }

    #[test]
    fn out_of_range_objects_are_flagged() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        let bev = encode_bev(&PointCloud::default(), &cfg, &nmap).unwrap();
        let frame = AnnotatedFrame {
            bev,
            objects: vec![
                GtObject::upright(
                    crate::kitti::ObjectClass::Car,
                    10.0,
                    0.0,
                    0.0,
                    4.0,
                    1.8,
                    1.5,
                    0.0,
                ),
                GtObject::upright(
                    crate::kitti::ObjectClass::Car,
                    40.0,
                    0.0,
                    0.0,
                    4.0,
                    1.8,
                    1.5,
                    0.0,
                ),
            ],
        };
        assert_eq!(frame.out_of_range_flags(), vec![false, true]);
    }

    #[test]
    fn png_round_trip_preserves_quantized_values() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let points = (0..2000)
            .map(|_| {
                pt(
                    rng.random_range(0.0..16.0),
                    rng.random_range(-8.0..8.0),
                    rng.random_range(0.0..3.0),
                    rng.random_range(0.0..1.0),
                )
            })
            .collect();
        let bev = encode_bev(&PointCloud::new(points, "t"), &cfg, &nmap).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.png");
        render_png(&bev, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!(img.width() as usize, cfg.cols());
        assert_eq!(img.height() as usize, cfg.rows());
        for i in 0..cfg.rows() {
            for j in 0..cfg.cols() {
                let px = img.get_pixel(j as u32, i as u32);
                let q = |v: f32| (v as f64 * 255.0).round() as u8;
                assert_eq!(px.0[0], q(bev.intensity.get(i, j)));
                assert_eq!(px.0[1], q(bev.density.get(i, j)));
                assert_eq!(px.0[2], q(bev.height.get(i, j)));
            }
        }
    }

    #[test]
    fn full_value_renders_saturated_pixel() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 1);
        // one point saturates density; height 3.0/h_top = 1.0 as well
        let cloud = PointCloud::new(vec![pt(10.0, 0.1, 3.0, 1.0)], "t");
        let bev = encode_bev(&cloud, &cfg, &nmap).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sat.png");
        render_png(&bev, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        let (i, j) = cfg.cell_of(10.0, 0.1).unwrap();
        assert_eq!(img.get_pixel(j as u32, i as u32).0, [255, 255, 255]);
    }

    #[test]
    fn all_zero_bev_renders_black() {
        let cfg = small_cfg();
        let nmap = flat_nmap(&cfg, 4);
        let bev = encode_bev(&PointCloud::default(), &cfg, &nmap).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        render_png(&bev, &path).unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert!(img.pixels().all(|p| p.0 == [0, 0, 0]));
    }
}
