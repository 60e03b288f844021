//! Detector output to oriented 3D boxes: yaw bin decoding, the two-length
//! candidate rule with IoU-based selection, a coarse ground grid, and height
//! lifting from the BEV height channel.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bev::{BevConfig, BevImage};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{rects_overlap, rotated_iou, wrap_angle, Aabb2D, Box3D, OrientedBox2D, Point2};
use crate::grid::Grid2;
use crate::kitti::ObjectClass;

/// Candidates whose trig denominator falls below this are invalid.
const DEGENERATE_TRIG: f64 = 1e-3;
/// Valid candidate lengths, as a multiple of the class width and in meters.
const MIN_LENGTH_WIDTHS: f64 = 0.5;
const MAX_LENGTH_M: f64 = 30.0;
/// Side of the coarse ground grid cells in meters.
const GROUND_CELL_SIZE: f64 = 2.0;

/// Fixed per-class widths used to reconstruct oriented boxes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassPriors {
    pub car_width: f64,
    pub pedestrian_width: f64,
    pub cyclist_width: f64,
}

impl Default for ClassPriors {
    fn default() -> Self {
        ClassPriors {
            car_width: 1.8,
            pedestrian_width: 0.6,
            cyclist_width: 0.6,
        }
    }
}

impl ClassPriors {
    pub fn width_for(&self, class: ObjectClass) -> Option<f64> {
        match class {
            ObjectClass::Car => Some(self.car_width),
            ObjectClass::Pedestrian => Some(self.pedestrian_width),
            ObjectClass::Cyclist => Some(self.cyclist_width),
            ObjectClass::DontCare => None,
        }
    }
}

/// Yaw estimate attached to a detection: either the raw bin probabilities or
/// an already-decoded angle.
#[derive(Debug, Clone, PartialEq)]
pub enum YawEstimate {
    Bins(Vec<f64>),
    Decoded(f64),
}

/// One detector output in meters, sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection2D {
    pub class: ObjectClass,
    pub score: f64,
    pub aabb: Aabb2D,
    pub yaw: YawEstimate,
}

impl Detection2D {
    pub fn decoded_yaw(&self) -> Result<f64> {
        match &self.yaw {
            YawEstimate::Decoded(y) => Ok(*y),
            YawEstimate::Bins(p) => decode_yaw(p),
        }
    }
}

fn check_bin_count(n_bins: usize) -> Result<()> {
    if n_bins < 4 || n_bins % 4 != 0 {
        return Err(Error::Validation(format!(
            "bin count {n_bins} must be a positive multiple of 4 so the cardinal headings are exact centers"
        )));
    }
    Ok(())
}

/// Bin centers `k * tau / n`, anchored so the four cardinal headings are
/// exact centers.
pub fn yaw_bin_centers(n_bins: usize) -> Result<Vec<f64>> {
    check_bin_count(n_bins)?;
    let binw = std::f64::consts::TAU / n_bins as f64;
    Ok((0..n_bins).map(|k| k as f64 * binw).collect())
}

fn check_probabilities(probs: &[f64]) -> Result<()> {
    check_bin_count(probs.len())?;
    let mut sum = 0.0;
    for &p in probs {
        if !(p >= -1e-9) {
            return Err(Error::Validation(format!("negative bin probability {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "bin probabilities sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Decode a probability vector to a continuous yaw: the weighted average of
/// the most probable bin center and its more probable circular neighbor,
/// interpolated along the shortest arc and wrapped to `(-pi, pi]`.
pub fn decode_yaw(probs: &[f64]) -> Result<f64> {
    check_probabilities(probs)?;
    let n = probs.len();
    let binw = std::f64::consts::TAU / n as f64;
    let mut best = 0usize;
    for k in 1..n {
        if probs[k] > probs[best] {
            best = k;
        }
    }
    let next = (best + 1) % n;
    let prev = (best + n - 1) % n;
    let (neighbor, step) = if probs[next] >= probs[prev] {
        (next, binw)
    } else {
        (prev, -binw)
    };
    let pair = probs[best] + probs[neighbor];
    let frac = if pair > 0.0 {
        probs[neighbor] / pair
    } else {
        0.0
    };
    Ok(wrap_angle(best as f64 * binw + frac * step))
}

/// Split unit mass between the two bin centers bracketing `yaw`, the inverse
/// of [`decode_yaw`].
pub fn encode_yaw(yaw: f64, n_bins: usize) -> Result<Vec<f64>> {
    check_bin_count(n_bins)?;
    let binw = std::f64::consts::TAU / n_bins as f64;
    let u = yaw.rem_euclid(std::f64::consts::TAU) / binw;
    let k = (u.floor() as usize) % n_bins;
    let frac = (u - u.floor()).clamp(0.0, 1.0);
    let mut probs = vec![0.0; n_bins];
    probs[k] = 1.0 - frac;
    probs[(k + 1) % n_bins] += frac;
    Ok(probs)
}

/// The two length candidates recovered from an axis-aligned box under a
/// fixed width: one from the forward extent, one from the lateral extent.
/// A candidate is `None` when its trig denominator is degenerate or the
/// value falls outside the plausible range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthCandidates {
    pub from_h_bbox: Option<f64>,
    pub from_w_bbox: Option<f64>,
}

pub fn length_candidates(aabb: &Aabb2D, yaw: f64, w_fixed: f64) -> LengthCandidates {
    let (s, c) = (yaw.sin().abs(), yaw.cos().abs());
    let admit = |len: f64| -> Option<f64> {
        (len >= MIN_LENGTH_WIDTHS * w_fixed && len <= MAX_LENGTH_M).then_some(len)
    };
    let from_h_bbox = (c >= DEGENERATE_TRIG)
        .then(|| ((aabb.h_bbox - s * w_fixed) / c).abs())
        .and_then(admit);
    let from_w_bbox = (s >= DEGENERATE_TRIG)
        .then(|| ((aabb.w_bbox - c * w_fixed) / s).abs())
        .and_then(admit);
    LengthCandidates {
        from_h_bbox,
        from_w_bbox,
    }
}

/// Turn a detection into an oriented planar box: fixed class width, decoded
/// yaw, and the length candidate whose rotated box maximizes IoU with the
/// axis-aligned detection (ties go to the shorter candidate).
pub fn fit_oriented_box(det: &Detection2D, priors: &ClassPriors) -> Result<OrientedBox2D> {
    let w_fixed = priors
        .width_for(det.class)
        .ok_or_else(|| Error::Recovery(format!("class {} has no width prior", det.class)))?;
    let yaw = det.decoded_yaw()?;
    let cand = length_candidates(&det.aabb, yaw, w_fixed);
    let mut lengths: Vec<f64> = [cand.from_h_bbox, cand.from_w_bbox]
        .into_iter()
        .flatten()
        .collect();
    if lengths.is_empty() {
        return Err(Error::Recovery(format!(
            "degenerate detection: no valid length candidate for aabb {:?} at yaw {yaw}",
            det.aabb
        )));
    }
    lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let aligned = det.aabb.as_oriented();
    let mut best = lengths[0];
    let mut best_iou = -1.0;
    for &l in &lengths {
        let candidate_box = OrientedBox2D::new(det.aabb.cx, det.aabb.cy, l, w_fixed, yaw);
        let iou = rotated_iou(&candidate_box, &aligned);
        if iou > best_iou {
            best_iou = iou;
            best = l;
        }
    }
    Ok(OrientedBox2D::new(
        det.aabb.cx,
        det.aabb.cy,
        best,
        w_fixed,
        yaw,
    ))
}

/// Coarse terrain approximation: per 2 m cell minimum point height,
/// median-blurred once. Heights are sensor-frame z values.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundGrid {
    pub cell_size: f64,
    min_z: Grid2<f64>,
    /// Cells that had direct point evidence before hole filling.
    valid: Grid2<bool>,
    x0: f64,
    y0: f64,
    fallback: f64,
}

/// Build the ground grid over the BEV extent: minimum z per cell, empty
/// cells filled from the minimum of their populated neighbors (ground level
/// when isolated), then one 3x3 median blur with replicated borders.
pub fn build_ground_grid(cloud: &PointCloud, cfg: &BevConfig) -> GroundGrid {
    let (x_min, y_min) = cfg.extent_min();
    let (x_max, y_max) = cfg.extent_max();
    let cs = GROUND_CELL_SIZE;
    let rows = ((x_max - x_min) / cs).ceil().max(1.0) as usize;
    let cols = ((y_max - y_min) / cs).ceil().max(1.0) as usize;
    let mut min_z = Grid2::filled(rows, cols, f64::INFINITY);
    let mut valid = Grid2::filled(rows, cols, false);

    for p in &cloud.points {
        let (x, y) = (p.x as f64, p.y as f64);
        if x < x_min || x >= x_max || y < y_min || y >= y_max {
            continue;
        }
        let i = (((x - x_min) / cs).floor() as usize).min(rows - 1);
        let j = (((y - y_min) / cs).floor() as usize).min(cols - 1);
        if (p.z as f64) < min_z.get(i, j) {
            min_z.set(i, j, p.z as f64);
        }
        valid.set(i, j, true);
    }

    // fill holes from populated neighbors, ground level when fully isolated
    let mut filled = min_z.clone();
    for i in 0..rows {
        for j in 0..cols {
            if valid.get(i, j) {
                continue;
            }
            let mut best = f64::INFINITY;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= rows as i64 || nj >= cols as i64 {
                        continue;
                    }
                    if valid.get(ni as usize, nj as usize) {
                        best = best.min(min_z.get(ni as usize, nj as usize));
                    }
                }
            }
            filled.set(
                i,
                j,
                if best.is_finite() {
                    best
                } else {
                    cfg.ground_offset
                },
            );
        }
    }

    // 3x3 median blur, replicated borders
    let mut blurred = filled.clone();
    for i in 0..rows {
        for j in 0..cols {
            let mut window = [0.0f64; 9];
            let mut k = 0;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    let ni = (i as i64 + di).clamp(0, rows as i64 - 1) as usize;
                    let nj = (j as i64 + dj).clamp(0, cols as i64 - 1) as usize;
                    window[k] = filled.get(ni, nj);
                    k += 1;
                }
            }
            window.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            blurred.set(i, j, window[4]);
        }
    }

    GroundGrid {
        cell_size: cs,
        min_z: blurred,
        valid,
        x0: x_min,
        y0: y_min,
        fallback: cfg.ground_offset,
    }
}

impl GroundGrid {
    pub fn rows(&self) -> usize {
        self.min_z.rows()
    }

    pub fn cols(&self) -> usize {
        self.min_z.cols()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.min_z.get(i, j)
    }

    pub fn had_points(&self, i: usize, j: usize) -> bool {
        self.valid.get(i, j)
    }

    /// Minimum blurred ground height over every grid cell the footprint
    /// overlaps; ground level when the footprint misses the grid.
    pub fn min_under(&self, footprint: &OrientedBox2D) -> f64 {
        let enc = footprint.enclosing_aabb();
        let cs = self.cell_size;
        let i0 = (((enc.cx - enc.h_bbox * 0.5 - self.x0) / cs).floor() as i64).max(0);
        let i1 =
            (((enc.cx + enc.h_bbox * 0.5 - self.x0) / cs).ceil() as i64).min(self.rows() as i64);
        let j0 = (((enc.cy - enc.w_bbox * 0.5 - self.y0) / cs).floor() as i64).max(0);
        let j1 =
            (((enc.cy + enc.w_bbox * 0.5 - self.y0) / cs).ceil() as i64).min(self.cols() as i64);
        let mut best = f64::INFINITY;
        for i in i0..i1 {
            for j in j0..j1 {
                let cell = OrientedBox2D::new(
                    self.x0 + (i as f64 + 0.5) * cs,
                    self.y0 + (j as f64 + 0.5) * cs,
                    cs,
                    cs,
                    0.0,
                );
                if rects_overlap(&cell, footprint) {
                    best = best.min(self.min_z.get(i as usize, j as usize));
                }
            }
        }
        if best.is_finite() {
            best
        } else {
            self.fallback
        }
    }
}

/// Lift a planar box to 3D: the object top is the highest BEV height-channel
/// value over occupied cells inside the footprint, the bottom the ground
/// grid minimum under it.
pub fn lift_to_3d(box2d: &OrientedBox2D, bev: &BevImage, ground: &GroundGrid) -> Result<Box3D> {
    let cfg = &bev.cfg;
    let enc = box2d.enclosing_aabb();
    let mut v_max: Option<f32> = None;

    let (x_min, y_min) = cfg.extent_min();
    let (x_max, y_max) = cfg.extent_max();
    let lo_x = (enc.cx - enc.h_bbox * 0.5).max(x_min);
    let hi_x = (enc.cx + enc.h_bbox * 0.5).min(x_max - cfg.cell_size * 1e-9);
    let lo_y = (enc.cy - enc.w_bbox * 0.5).max(y_min);
    let hi_y = (enc.cy + enc.w_bbox * 0.5).min(y_max - cfg.cell_size * 1e-9);
    if lo_x >= hi_x || lo_y >= hi_y {
        return Err(Error::Recovery(
            "detection footprint lies outside the BEV extent".into(),
        ));
    }
    // index window over the footprint's enclosure; (i0, j0) is the corner
    // with the largest x and y
    let (i0, j0) = cfg.cell_of(hi_x, hi_y).unwrap_or((0, 0));
    let (i1, j1) = cfg
        .cell_of(lo_x, lo_y)
        .unwrap_or((cfg.rows() - 1, cfg.cols() - 1));
    for i in i0..=i1.min(cfg.rows() - 1) {
        for j in j0..=j1.min(cfg.cols() - 1) {
            let (cx, cy) = cfg.cell_center(i, j);
            if !box2d.contains(Point2::new(cx, cy)) {
                continue;
            }
            let occupied = bev.height.get(i, j) > 0.0
                || bev.intensity.get(i, j) > 0.0
                || bev.density.get(i, j) > 0.0;
            if occupied {
                let v = bev.height.get(i, j);
                v_max = Some(v_max.map_or(v, |m| m.max(v)));
            }
        }
    }
    let Some(v_max) = v_max else {
        return Err(Error::Recovery(
            "no occupied BEV cell under the detection footprint".into(),
        ));
    };

    let z_peak = cfg.ground_offset + v_max as f64 * cfg.h_top;
    let ground_min = ground.min_under(box2d);
    let h = z_peak - ground_min;
    if h <= 0.0 {
        return Err(Error::Recovery(format!(
            "non-positive recovered height {h:.3}"
        )));
    }
    Ok(Box3D {
        cx: box2d.cx,
        cy: box2d.cy,
        cz: ground_min + h * 0.5,
        l: box2d.l,
        w: box2d.w,
        h,
        yaw: box2d.yaw,
    })
}

/// Full recovery of one detection: oriented fit plus 3D lift.
pub fn recover_detection(
    det: &Detection2D,
    priors: &ClassPriors,
    bev: &BevImage,
    ground: &GroundGrid,
) -> Result<Box3D> {
    let box2d = fit_oriented_box(det, priors)?;
    lift_to_3d(&box2d, bev, ground)
}

/// One JSON-lines detection record: detector output, optionally extended
/// with the recovered 3D box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame_id: String,
    pub class: ObjectClass,
    pub score: f64,
    pub aabb: Aabb2D,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw_bins: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yaw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box3d: Option<Box3D>,
}

impl DetectionRecord {
    pub fn to_detection(&self) -> Result<Detection2D> {
        let yaw = match (&self.yaw_bins, self.yaw) {
            (Some(bins), _) => YawEstimate::Bins(bins.clone()),
            (None, Some(y)) => YawEstimate::Decoded(y),
            (None, None) => {
                return Err(Error::MalformedInput(
                    "detection record carries neither yaw_bins nor yaw".into(),
                ))
            }
        };
        Ok(Detection2D {
            class: self.class,
            score: self.score,
            aabb: self.aabb,
            yaw,
        })
    }
}

pub fn read_detections_jsonl(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections_jsonl(&text)
}

pub fn parse_detections_jsonl(text: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(line)
            .map_err(|e| Error::MalformedInput(format!("detections line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_detections_jsonl(records: &[DetectionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::FovMode;
    use crate::cloud::LidarPoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    #[test]
    fn bin_centers_eight() {
        let centers = yaw_bin_centers(8).unwrap();
        for (k, c) in centers.iter().enumerate() {
            assert!((c - k as f64 * 45f64.to_radians()).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_centers_four_are_cardinals() {
        let centers = yaw_bin_centers(4).unwrap();
        let expected = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];
        for (c, e) in centers.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12);
        }
    }

    #[test]
    fn bin_count_must_be_multiple_of_four() {
        assert!(yaw_bin_centers(6).is_err());
        assert!(yaw_bin_centers(0).is_err());
        assert!(yaw_bin_centers(3).is_err());
    }

    #[test]
    fn decode_one_hot_is_exact_center() {
        for n in [8usize, 16] {
            let binw = std::f64::consts::TAU / n as f64;
            for k in 0..n {
                let mut p = vec![0.0; n];
                p[k] = 1.0;
                let yaw = decode_yaw(&p).unwrap();
                assert!((yaw - wrap_angle(k as f64 * binw)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decode_even_split_is_midpoint() {
        let mut p = vec![0.0; 8];
        p[2] = 0.5;
        p[3] = 0.5;
        let yaw = decode_yaw(&p).unwrap();
        let binw = std::f64::consts::TAU / 8.0;
        assert!((yaw - 2.5 * binw).abs() < 1e-12);
    }

    #[test]
    fn decode_shortest_arc_across_zero() {
        // p(0 deg) = 0.6, p(337.5 deg) = 0.4 -> -9 deg
        let mut p = vec![0.0; 16];
        p[0] = 0.6;
        p[15] = 0.4;
        let yaw = decode_yaw(&p).unwrap();
        assert!((yaw - (-9f64).to_radians()).abs() < 1e-12);
    }

    #[test]
    fn decode_rejects_bad_vectors() {
        assert!(decode_yaw(&[0.5, 0.5, 0.0]).is_err()); // 3 bins
        assert!(decode_yaw(&[0.7, 0.1, 0.1, 0.0]).is_err()); // sums to 0.9
        assert!(decode_yaw(&[1.2, -0.2, 0.0, 0.0]).is_err()); // negative
    }

    #[test]
    fn encode_at_center_is_one_hot() {
        let binw = std::f64::consts::TAU / 8.0;
        let p = encode_yaw(3.0 * binw, 8).unwrap();
        assert_eq!(p[3], 1.0);
        assert_eq!(p.iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn encode_midway_splits_evenly() {
        let binw = std::f64::consts::TAU / 8.0;
        let p = encode_yaw(2.5 * binw, 8).unwrap();
        assert!((p[2] - 0.5).abs() < 1e-12);
        assert!((p[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn yaw_codec_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for n in [8usize, 16] {
            for _ in 0..1000 {
                let yaw = rng.random_range(-PI..PI);
                let decoded = decode_yaw(&encode_yaw(yaw, n).unwrap()).unwrap();
                assert!(
                    wrap_angle(decoded - yaw).abs() < 1e-9,
                    "n={n} yaw={yaw} decoded={decoded}"
                );
            }
        }
    }

    #[test]
    fn length_candidates_axis_aligned() {
        let aabb = Aabb2D::new(0.0, 0.0, 4.5, 1.8);
        let c = length_candidates(&aabb, 0.0, 1.8);
        assert_eq!(c.from_h_bbox, Some(4.5));
        assert_eq!(c.from_w_bbox, None);
    }

    #[test]
    fn length_candidates_quarter_turn() {
        let aabb = Aabb2D::new(0.0, 0.0, 1.8, 4.5);
        let c = length_candidates(&aabb, FRAC_PI_2, 1.8);
        assert_eq!(c.from_h_bbox, None);
        let l = c.from_w_bbox.unwrap();
        assert!((l - 4.5).abs() < 1e-12);
    }

    /// Enclosing a true box and inverting must reproduce its length through
    /// both formulas (algebraic identity when the width prior is exact).
    #[test]
    fn length_candidates_invert_enclosure() {
        let truth = OrientedBox2D::new(0.0, 0.0, 4.0, 1.8, FRAC_PI_4);
        let aabb = truth.enclosing_aabb();
        let c = length_candidates(&aabb, FRAC_PI_4, 1.8);
        assert!((c.from_h_bbox.unwrap() - 4.0).abs() < 1e-9);
        assert!((c.from_w_bbox.unwrap() - 4.0).abs() < 1e-9);
    }

    fn det(class: ObjectClass, aabb: Aabb2D, yaw: f64) -> Detection2D {
        Detection2D {
            class,
            score: 1.0,
            aabb,
            yaw: YawEstimate::Decoded(yaw),
        }
    }

    #[test]
    fn fit_axis_aligned_car() {
        let d = det(ObjectClass::Car, Aabb2D::new(5.0, 2.0, 4.5, 1.8), 0.0);
        let b = fit_oriented_box(&d, &ClassPriors::default()).unwrap();
        assert_eq!((b.cx, b.cy), (5.0, 2.0));
        assert_eq!(b.l, 4.5);
        assert_eq!(b.w, 1.8);
        assert_eq!(b.yaw, 0.0);
    }

    #[test]
    fn fit_round_trips_random_boxes() {
        let priors = ClassPriors::default();
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let degenerate = [0.0, FRAC_PI_2, -FRAC_PI_2, PI, -PI];
        let mut tested = 0;
        while tested < 1000 {
            let class = ObjectClass::ALL_SCORED[rng.random_range(0..3)];
            let w = priors.width_for(class).unwrap();
            let yaw: f64 = rng.random_range(-PI..PI);
            if degenerate.iter().any(|d| (yaw - d).abs() < 1e-2) {
                continue;
            }
            let truth = OrientedBox2D::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(w * 0.6..6.0),
                w,
                yaw,
            );
            let d = det(class, truth.enclosing_aabb(), yaw);
            let fit = fit_oriented_box(&d, &priors).unwrap();
            assert!((fit.cx - truth.cx).abs() < 1e-6 * truth.cx.abs().max(1.0));
            assert!((fit.cy - truth.cy).abs() < 1e-6 * truth.cy.abs().max(1.0));
            assert!(
                (fit.l - truth.l).abs() < 1e-6 * truth.l,
                "l {} vs {} at yaw {yaw}",
                fit.l,
                truth.l
            );
            tested += 1;
        }
    }

    #[test]
    fn fit_exact_at_cardinal_yaws() {
        let priors = ClassPriors::default();
        for yaw in [0.0, FRAC_PI_2, -FRAC_PI_2, PI] {
            let truth = OrientedBox2D::new(3.0, -1.0, 4.25, 1.8, yaw);
            let d = det(ObjectClass::Car, truth.enclosing_aabb(), yaw);
            let fit = fit_oriented_box(&d, &priors).unwrap();
            assert_eq!(fit.l, truth.l, "yaw {yaw}");
            assert_eq!(fit.cx, truth.cx);
            assert_eq!(fit.cy, truth.cy);
        }
    }

    /// When both candidates are valid the IoU comparison decides; checked
    /// against an exhaustive raster IoU evaluation.
    #[test]
    fn fit_picks_iou_maximizing_candidate() {
        let w_fixed = 1.0;
        let priors = ClassPriors {
            car_width: w_fixed,
            ..ClassPriors::default()
        };
        let aabb = Aabb2D::new(0.0, 0.0, 3.0, 2.0);
        let d = det(ObjectClass::Car, aabb, FRAC_PI_4);
        let cand = length_candidates(&aabb, FRAC_PI_4, w_fixed);
        let (la, lb) = (cand.from_h_bbox.unwrap(), cand.from_w_bbox.unwrap());
        assert!(la != lb);

        let raster_iou = |l: f64| {
            let b = OrientedBox2D::new(0.0, 0.0, l, w_fixed, FRAC_PI_4);
            let step = 0.005;
            let half = 2.0;
            let n = (2.0 * half / step) as usize;
            let mut inter = 0usize;
            let mut only = 0usize;
            for i in 0..n {
                for j in 0..n {
                    let p = Point2::new(
                        -half + (i as f64 + 0.5) * step,
                        -half + (j as f64 + 0.5) * step,
                    );
                    let in_a = b.contains(p);
                    let in_b = aabb.as_oriented().contains(p);
                    inter += (in_a && in_b) as usize;
                    only += (in_a || in_b) as usize;
                }
            }
            inter as f64 / only as f64
        };
        let expected = if raster_iou(la) >= raster_iou(lb) {
            la
        } else {
            lb
        };
        let fit = fit_oriented_box(&d, &priors).unwrap();
        assert_eq!(fit.l, expected);
    }

    #[test]
    fn fit_degenerate_rejected() {
        // near-90-degree yaw with an aabb too small for any valid candidate
        let d = det(ObjectClass::Car, Aabb2D::new(0.0, 0.0, 0.1, 0.1), 0.0);
        assert!(matches!(
            fit_oriented_box(&d, &ClassPriors::default()),
            Err(Error::Recovery(_))
        ));
    }

    fn ground_cfg() -> BevConfig {
        BevConfig {
            cell_size: 0.25,
            forward_range: 16.0,
            lateral_range: 8.0,
            h_top: 3.0,
            fov_mode: FovMode::Frontal110,
            ground_offset: 0.0,
        }
    }

    fn flat_cloud(z: f32, step: f64) -> PointCloud {
        let mut points = Vec::new();
        let mut x = 0.0;
        while x < 16.0 {
            let mut y = -8.0;
            while y < 8.0 {
                points.push(LidarPoint {
                    x: x as f32,
                    y: y as f32,
                    z,
                    intensity: 0.5,
                });
                y += step;
            }
            x += step;
        }
        PointCloud::new(points, "t")
    }

    #[test]
    fn ground_grid_flat_cloud() {
        let g = build_ground_grid(&flat_cloud(0.0, 0.5), &ground_cfg());
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                assert_eq!(g.value(i, j), 0.0);
            }
        }
    }

    #[test]
    fn ground_grid_median_rejects_outlier() {
        let mut cloud = flat_cloud(0.0, 0.5);
        cloud.points.push(LidarPoint {
            x: 8.1,
            y: 0.1,
            z: -5.0,
            intensity: 0.5,
        });
        let g = build_ground_grid(&cloud, &ground_cfg());
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                assert_eq!(g.value(i, j), 0.0, "outlier leaked into ({i}, {j})");
            }
        }
    }

    #[test]
    fn ground_grid_follows_slope() {
        let mut points = Vec::new();
        let mut x = 0.0;
        while x < 16.0 {
            let mut y = -8.0;
            while y < 8.0 {
                points.push(LidarPoint {
                    x: x as f32,
                    y: y as f32,
                    z: (0.1 * x) as f32,
                    intensity: 0.5,
                });
                y += 0.25;
            }
            x += 0.25;
        }
        let g = build_ground_grid(&PointCloud::new(points, "t"), &ground_cfg());
        // interior cells: min over the cell is 0.1 * (cell lower edge);
        // the median blur may pull one neighbor cell over
        for i in 1..g.rows() - 1 {
            let expected = 0.1 * (i as f64 * GROUND_CELL_SIZE);
            let got = g.value(i, g.cols() / 2);
            assert!(
                (got - expected).abs() <= 0.1 * GROUND_CELL_SIZE + 1e-6,
                "row {i}: {got} vs {expected}"
            );
        }
    }

    fn synthetic_bev(cfg: &BevConfig, cells: &[((usize, usize), f32)]) -> BevImage {
        let (rows, cols) = (cfg.rows(), cfg.cols());
        let mut height = Grid2::filled(rows, cols, 0.0);
        let mut intensity = Grid2::filled(rows, cols, 0.0);
        let density = Grid2::filled(rows, cols, 0.0);
        for &((i, j), h) in cells {
            height.set(i, j, h);
            intensity.set(i, j, 0.5);
        }
        BevImage {
            height,
            intensity,
            density,
            cfg: *cfg,
        }
    }

    #[test]
    fn lift_uses_peak_and_ground() {
        let cfg = ground_cfg();
        let footprint = OrientedBox2D::new(8.0, 0.0, 4.0, 1.8, 0.0);
        let peak_cell = cfg.cell_of(8.0, 0.0).unwrap();
        let other = cfg.cell_of(8.5, 0.3).unwrap();
        let bev = synthetic_bev(&cfg, &[(peak_cell, 1.52 / 3.0), (other, 1.0 / 3.0)]);
        let ground = build_ground_grid(&flat_cloud(0.0, 0.5), &cfg);
        let b = lift_to_3d(&footprint, &bev, &ground).unwrap();
        assert!((b.h - 1.52).abs() < 1e-6);
        assert!((b.cz - 0.76).abs() < 1e-6);
        assert_eq!(b.l, 4.0);
        assert_eq!(b.yaw, 0.0);
    }

    #[test]
    fn lift_with_ground_dip() {
        let cfg = ground_cfg();
        let footprint = OrientedBox2D::new(8.0, 0.0, 4.0, 1.8, 0.0);
        let peak_cell = cfg.cell_of(8.0, 0.0).unwrap();
        let bev = synthetic_bev(&cfg, &[(peak_cell, 1.3 / 3.0)]);
        let ground = build_ground_grid(&flat_cloud(-0.2, 0.5), &cfg);
        let b = lift_to_3d(&footprint, &bev, &ground).unwrap();
        assert!((b.h - 1.5).abs() < 1e-6);
        assert!((b.cz - 0.55).abs() < 1e-6);
    }

    #[test]
    fn lift_without_evidence_errors() {
        let cfg = ground_cfg();
        let footprint = OrientedBox2D::new(8.0, 0.0, 4.0, 1.8, 0.0);
        let bev = synthetic_bev(&cfg, &[]);
        let ground = build_ground_grid(&flat_cloud(0.0, 0.5), &cfg);
        assert!(matches!(
            lift_to_3d(&footprint, &bev, &ground),
            Err(Error::Recovery(_))
        ));
    }

    #[test]
    fn detection_records_round_trip() {
        let recs = vec![
            DetectionRecord {
                frame_id: "000001".into(),
                class: ObjectClass::Car,
                score: 0.93,
                aabb: Aabb2D::new(10.0, -2.0, 4.6, 2.1),
                yaw_bins: Some(encode_yaw(0.4, 8).unwrap()),
                yaw: None,
                box3d: None,
            },
            DetectionRecord {
                frame_id: "000001".into(),
                class: ObjectClass::Pedestrian,
                score: 0.5,
                aabb: Aabb2D::new(5.0, 1.0, 0.7, 0.7),
                yaw_bins: None,
                yaw: Some(-1.2),
                box3d: Some(Box3D {
                    cx: 5.0,
                    cy: 1.0,
                    cz: 0.9,
                    l: 0.7,
                    w: 0.6,
                    h: 1.8,
                    yaw: -1.2,
                }),
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dets.jsonl");
        write_detections_jsonl(&recs, &path).unwrap();
        let back = read_detections_jsonl(&path).unwrap();
        assert_eq!(recs, back);
        assert!(back[0].to_detection().is_ok());
    }

    #[test]
    fn malformed_jsonl_line_is_numbered() {
        let text = "{\"frame_id\":\"a\",\"class\":\"Car\",\"score\":1.0,\"aabb\":{\"cx\":0,\"cy\":0,\"h_bbox\":4,\"w_bbox\":2},\"yaw\":0.0}\nnot json\n";
        match parse_detections_jsonl(text) {
            Err(Error::MalformedInput(msg)) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_without_yaw_is_rejected() {
        let rec = DetectionRecord {
            frame_id: "a".into(),
            class: ObjectClass::Car,
            score: 1.0,
            aabb: Aabb2D::new(0.0, 0.0, 4.0, 2.0),
            yaw_bins: None,
            yaw: None,
            box3d: None,
        };
        assert!(rec.to_detection().is_err());
    }
}
