//! Ray-cast LiDAR simulator over scenes of upright boxes and a flat ground
//! plane. Serves as the brute-force oracle for the normalization map, the
//! generator for multi-device invariance fixtures, and the synthetic
//! stand-in for the detector network.
//!
//! Scene frame: ground at z = 0, sensor at `(0, 0, mount_height)`. Returned
//! clouds therefore pair with a [`BevConfig`] whose `ground_offset` is 0.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Deserialize;

use crate::cloud::{LidarPoint, PointCloud};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Box3D};
use crate::kitti::{GtObject, ObjectClass};
use crate::recover::{encode_yaw, ClassPriors, Detection2D, YawEstimate};
use crate::sensor::SensorSpec;

/// One scene object: an upright box with a class tag and a surface
/// reflectivity in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBox {
    pub box3d: Box3D,
    pub class: ObjectClass,
    pub reflectivity: f64,
}

/// Boxes over an optional flat ground plane at z = 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scene {
    pub boxes: Vec<SceneBox>,
    pub ground_reflectivity: Option<f64>,
}

impl Scene {
    /// The scene annotations as ground-truth objects (Easy difficulty).
    pub fn gt_objects(&self) -> Vec<GtObject> {
        self.boxes
            .iter()
            .map(|b| GtObject {
                class: b.class,
                box3d: b.box3d,
                truncation: 0.0,
                occlusion: 0,
                image_bbox_height: 140.0,
                difficulty: Some(crate::kitti::Difficulty::Easy),
            })
            .collect()
    }
}

/// Parametric hit interval of a ray with an upright oriented box, via the
/// slab test in the box frame. Returns the nearest parameter strictly in
/// front of the origin.
fn ray_box_hit(origin: [f64; 3], dir: [f64; 3], b: &Box3D) -> Option<f64> {
    let (s, c) = b.yaw.sin_cos();
    // into box frame: translate, then rotate by -yaw about z
    let ox = origin[0] - b.cx;
    let oy = origin[1] - b.cy;
    let oz = origin[2] - b.cz;
    let o = [c * ox + s * oy, -s * ox + c * oy, oz];
    let d = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let half = [b.l * 0.5, b.w * 0.5, b.h * 0.5];
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for axis in 0..3 {
        if d[axis].abs() < 1e-15 {
            if o[axis].abs() > half[axis] {
                return None;
            }
            continue;
        }
        let a = (-half[axis] - o[axis]) / d[axis];
        let b2 = (half[axis] - o[axis]) / d[axis];
        let (a, b2) = if a <= b2 { (a, b2) } else { (b2, a) };
        t0 = t0.max(a);
        t1 = t1.min(b2);
        if t0 > t1 {
            return None;
        }
    }
    const T_MIN: f64 = 1e-9;
    if t0 >= T_MIN {
        Some(t0)
    } else if t1 >= T_MIN {
        Some(t1)
    } else {
        None
    }
}

/// Cast every (plane, azimuth) ray and keep the first surface hit. Output
/// order is plane-major, azimuth-minor regardless of scheduling; no noise.
pub fn simulate_scan(scene: &Scene, spec: &SensorSpec) -> PointCloud {
    let steps = spec.azimuth_steps();
    let h_s = spec.mount_height;
    let per_plane: Vec<Vec<LidarPoint>> = spec
        .plane_angles
        .par_iter()
        .map(|&phi| {
            let (s_phi, c_phi) = phi.sin_cos();
            let mut points = Vec::new();
            for k in 0..steps {
                let theta = k as f64 * spec.delta_theta;
                let (s_th, c_th) = theta.sin_cos();
                let dir = [c_phi * s_th, c_phi * c_th, s_phi];
                let origin = [0.0, 0.0, h_s];

                let mut best: Option<(f64, f64)> = None; // (t, reflectivity)
                for sb in &scene.boxes {
                    if let Some(t) = ray_box_hit(origin, dir, &sb.box3d) {
                        if best.map_or(true, |(bt, _)| t < bt) {
                            best = Some((t, sb.reflectivity));
                        }
                    }
                }
                if let Some(refl) = scene.ground_reflectivity {
                    if dir[2] < 0.0 {
                        let t = -h_s / dir[2];
                        if t > 1e-9 && best.map_or(true, |(bt, _)| t < bt) {
                            best = Some((t, refl));
                        }
                    }
                }
                if let Some((t, refl)) = best {
                    points.push(LidarPoint {
                        x: (origin[0] + t * dir[0]) as f32,
                        y: (origin[1] + t * dir[1]) as f32,
                        z: (origin[2] + t * dir[2]) as f32,
                        intensity: refl as f32,
                    });
                }
            }
            points
        })
        .collect();
    PointCloud::new(per_plane.concat(), "sim")
}

/// Drop each point independently with probability `prob`.
pub fn apply_dropout(cloud: &PointCloud, prob: f64, rng: &mut impl Rng) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|_| rng.random_range(0.0..1.0) >= prob)
        .copied()
        .collect();
    PointCloud {
        points,
        frame_id: cloud.frame_id.clone(),
    }
}

/// Synthetic detector configuration: bin count of the yaw head plus optional
/// Gaussian perturbations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub n_bins: usize,
    /// Std-dev of the aabb center perturbation, meters.
    pub center_sigma: f64,
    /// Std-dev of the aabb extent perturbation, meters.
    pub extent_sigma: f64,
    /// Std-dev of the yaw perturbation, radians.
    pub yaw_sigma: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            n_bins: 16,
            center_sigma: 0.0,
            extent_sigma: 0.0,
            yaw_sigma: 0.0,
        }
    }
}

/// Stand-in for the detector: per ground truth, the enclosing axis-aligned
/// box of its footprint at score 1.0 with the yaw re-encoded into bin
/// probabilities. Classes without a width prior (DontCare) are skipped.
pub fn oracle_detections(
    gts: &[GtObject],
    priors: &ClassPriors,
    cfg: &OracleConfig,
    rng: &mut impl Rng,
) -> Result<Vec<Detection2D>> {
    let normal = |sigma: f64| -> Result<Normal<f64>> {
        Normal::new(0.0, sigma)
            .map_err(|e| Error::Validation(format!("bad noise sigma {sigma}: {e}")))
    };
    let center_noise = normal(cfg.center_sigma)?;
    let extent_noise = normal(cfg.extent_sigma)?;
    let yaw_noise = normal(cfg.yaw_sigma)?;

    let mut out = Vec::new();
    for gt in gts {
        if priors.width_for(gt.class).is_none() {
            continue;
        }
        let mut aabb = gt.box3d.footprint().enclosing_aabb();
        aabb.cx += center_noise.sample(rng);
        aabb.cy += center_noise.sample(rng);
        aabb.h_bbox = (aabb.h_bbox + extent_noise.sample(rng)).max(0.05);
        aabb.w_bbox = (aabb.w_bbox + extent_noise.sample(rng)).max(0.05);
        let yaw = wrap_angle(gt.box3d.yaw + yaw_noise.sample(rng));
        out.push(Detection2D {
            class: gt.class,
            score: 1.0,
            aabb,
            yaw: YawEstimate::Bins(encode_yaw(yaw, cfg.n_bins)?),
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SceneBoxFile {
    center: [f64; 3],
    size: [f64; 3],
    yaw_deg: f64,
    class: ObjectClass,
    reflectivity: f64,
}

#[derive(Deserialize)]
struct SceneFile {
    ground_reflectivity: Option<f64>,
    #[serde(default)]
    boxes: Vec<SceneBoxFile>,
}

/// Read a scene config: TOML with an optional `ground_reflectivity` scalar
/// and `[[boxes]]` entries carrying center, size `(l, w, h)`, `yaw_deg`,
/// class and reflectivity.
pub fn read_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text)
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let raw: SceneFile =
        toml::from_str(text).map_err(|e| Error::MalformedInput(format!("scene: {e}")))?;
    let mut boxes = Vec::with_capacity(raw.boxes.len());
    for (idx, b) in raw.boxes.iter().enumerate() {
        if b.size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Validation(format!(
                "scene box {idx} has non-positive size"
            )));
        }
        if !(0.0..=1.0).contains(&b.reflectivity) {
            return Err(Error::Validation(format!(
                "scene box {idx} reflectivity {} outside [0, 1]",
                b.reflectivity
            )));
        }
        boxes.push(SceneBox {
            box3d: Box3D {
                cx: b.center[0],
                cy: b.center[1],
                cz: b.center[2],
                l: b.size[0],
                w: b.size[1],
                h: b.size[2],
                yaw: wrap_angle(b.yaw_deg.to_radians()),
            },
            class: b.class,
            reflectivity: b.reflectivity,
        });
    }
    Ok(Scene {
        boxes,
        ground_reflectivity: raw.ground_reflectivity,
    })
}
