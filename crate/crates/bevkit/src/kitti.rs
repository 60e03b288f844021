//! KITTI-style labels and calibration: object classes, difficulty buckets,
//! camera-frame label parsing and the rigid transform into the sensor frame.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Box3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
    DontCare,
}

impl ObjectClass {
    pub const ALL_SCORED: [ObjectClass; 3] = [
        ObjectClass::Car,
        ObjectClass::Pedestrian,
        ObjectClass::Cyclist,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::DontCare => "DontCare",
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = ();

    /// Unscored label types (Van, Truck, Misc, ...) map to `DontCare` so
    /// their regions stay available to the ignore logic of the evaluator.
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "Car" => ObjectClass::Car,
            "Pedestrian" => ObjectClass::Pedestrian,
            "Cyclist" => ObjectClass::Cyclist,
            _ => ObjectClass::DontCare,
        })
    }
}

/// KITTI difficulty buckets, ordered Easy < Moderate < Hard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
        }
    }
}

/// Easiest bucket an annotation qualifies for under the public KITTI
/// thresholds, or `None` when it is harder than Hard.
pub fn difficulty_bucket(
    truncation: f64,
    occlusion: u8,
    image_bbox_height: f64,
) -> Option<Difficulty> {
    if image_bbox_height >= 40.0 && occlusion == 0 && truncation <= 0.15 {
        Some(Difficulty::Easy)
    } else if image_bbox_height >= 25.0 && occlusion <= 1 && truncation <= 0.30 {
        Some(Difficulty::Moderate)
    } else if image_bbox_height >= 25.0 && occlusion <= 2 && truncation <= 0.50 {
        Some(Difficulty::Hard)
    } else {
        None
    }
}

/// One annotated object, already in the sensor frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject {
    pub class: ObjectClass,
    pub box3d: Box3D,
    pub truncation: f64,
    pub occlusion: u8,
    pub image_bbox_height: f64,
    pub difficulty: Option<Difficulty>,
}

impl GtObject {
    /// Upright object sitting on `z_bottom`, used by the simulator and tests.
    pub fn upright(
        class: ObjectClass,
        cx: f64,
        cy: f64,
        z_bottom: f64,
        l: f64,
        w: f64,
        h: f64,
        yaw: f64,
    ) -> Self {
        GtObject {
            class,
            box3d: Box3D {
                cx,
                cy,
                cz: z_bottom + h * 0.5,
                l,
                w,
                h,
                yaw,
            },
            truncation: 0.0,
            occlusion: 0,
            image_bbox_height: 140.0,
            difficulty: Some(Difficulty::Easy),
        }
    }
}

/// Rigid sensor-to-camera calibration: `X_rect = rect * (R * X_velo + t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub velo_to_cam_r: Matrix3<f64>,
    pub velo_to_cam_t: Vector3<f64>,
    pub rect: Matrix3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

fn check_orthonormal(m: &Matrix3<f64>, name: &str) -> Result<()> {
    let residual = (m * m.transpose() - Matrix3::identity()).abs().max();
    if residual > ORTHONORMAL_TOL {
        return Err(Error::Validation(format!(
            "{name} is not orthonormal (residual {residual:.2e})"
        )));
    }
    Ok(())
}

impl Calibration {
    pub fn new(
        velo_to_cam_r: Matrix3<f64>,
        velo_to_cam_t: Vector3<f64>,
        rect: Matrix3<f64>,
    ) -> Result<Self> {
        check_orthonormal(&velo_to_cam_r, "Tr_velo_to_cam rotation")?;
        check_orthonormal(&rect, "R0_rect")?;
        Ok(Calibration {
            velo_to_cam_r,
            velo_to_cam_t,
            rect,
        })
    }

    /// Nominal axis permutation between the velodyne frame (x forward,
    /// y left, z up) and the camera frame (x right, y down, z forward),
    /// with zero translation and identity rectification.
    pub fn nominal() -> Self {
        Calibration {
            velo_to_cam_r: Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0),
            velo_to_cam_t: Vector3::zeros(),
            rect: Matrix3::identity(),
        }
    }

    pub fn velo_to_cam(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.rect * (self.velo_to_cam_r * p + self.velo_to_cam_t)
    }

    pub fn cam_to_velo(&self, p: Vector3<f64>) -> Vector3<f64> {
        self.velo_to_cam_r.transpose() * (self.rect.transpose() * p - self.velo_to_cam_t)
    }
}

/// Read a KITTI calibration file (`Tr_velo_to_cam`, `R0_rect` keys).
pub fn read_kitti_calib(path: impl AsRef<Path>) -> Result<Calibration> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_calib(&text)
}

pub fn parse_kitti_calib(text: &str) -> Result<Calibration> {
    let mut tr: Option<Vec<f64>> = None;
    let mut rect: Option<Vec<f64>> = None;
    for line in text.lines() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let vals: std::result::Result<Vec<f64>, _> =
            rest.split_whitespace().map(f64::from_str).collect();
        match key.trim() {
            "Tr_velo_to_cam" => tr = Some(vals.map_err(|e| bad_calib(key, e))?),
            "R0_rect" => rect = Some(vals.map_err(|e| bad_calib(key, e))?),
            _ => {}
        }
    }
    let tr = tr.ok_or_else(|| Error::MalformedInput("calib missing Tr_velo_to_cam".into()))?;
    let rect = rect.ok_or_else(|| Error::MalformedInput("calib missing R0_rect".into()))?;
    if tr.len() != 12 {
        return Err(Error::MalformedInput(format!(
            "Tr_velo_to_cam has {} values, expected 12",
            tr.len()
        )));
    }
    if rect.len() != 9 {
        return Err(Error::MalformedInput(format!(
            "R0_rect has {} values, expected 9",
            rect.len()
        )));
    }
    let r = Matrix3::new(
        tr[0], tr[1], tr[2], tr[4], tr[5], tr[6], tr[8], tr[9], tr[10],
    );
    let t = Vector3::new(tr[3], tr[7], tr[11]);
    let rect = Matrix3::from_row_slice(&rect);
    Calibration::new(r, t, rect)
}

fn bad_calib(key: &str, e: std::num::ParseFloatError) -> Error {
    Error::MalformedInput(format!("calib key {key}: {e}"))
}

/// Convert a camera-frame label (bottom-center location, `rotation_y`) into
/// a sensor-frame box. The yaw convention is pinned by the corner-equality
/// test below.
pub fn label_to_sensor_box(
    calib: &Calibration,
    location_cam: Vector3<f64>,
    h: f64,
    w: f64,
    l: f64,
    rotation_y: f64,
) -> Box3D {
    let bottom = calib.cam_to_velo(location_cam);
    Box3D {
        cx: bottom.x,
        cy: bottom.y,
        cz: bottom.z + h * 0.5,
        l,
        w,
        h,
        yaw: wrap_angle(-rotation_y - std::f64::consts::FRAC_PI_2),
    }
}

/// Inverse of [`label_to_sensor_box`] for writing labels.
pub fn sensor_box_to_label(calib: &Calibration, b: &Box3D) -> (Vector3<f64>, f64) {
    let bottom = calib.velo_to_cam(Vector3::new(b.cx, b.cy, b.cz - b.h * 0.5));
    let rotation_y = wrap_angle(-b.yaw - std::f64::consts::FRAC_PI_2);
    (bottom, rotation_y)
}

/// Read a KITTI object label file. Each line carries 15 whitespace-delimited
/// fields (plus an optional trailing score); `DontCare` lines are retained.
pub fn read_kitti_labels(path: impl AsRef<Path>, calib: &Calibration) -> Result<Vec<GtObject>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_labels(&text, calib)
}

pub fn parse_kitti_labels(text: &str, calib: &Calibration) -> Result<Vec<GtObject>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            parse_label_line(line, calib).map_err(|msg| {
                Error::MalformedInput(format!("label line {}: {msg}", lineno + 1))
            })?,
        );
    }
    Ok(out)
}

fn parse_label_line(line: &str, calib: &Calibration) -> std::result::Result<GtObject, String> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(format!("{} fields, expected 15 or 16", fields.len()));
    }
    let class = ObjectClass::from_str(fields[0]).unwrap();
    let num = |i: usize| -> std::result::Result<f64, String> {
        fields[i]
            .parse::<f64>()
            .map_err(|e| format!("field {}: {e}", i + 1))
    };
    let truncation = num(1)?;
    let occlusion = num(2)?.max(0.0).min(3.0) as u8;
    let (top, bottom) = (num(5)?, num(7)?);
    let (h, w, l) = (num(8)?, num(9)?, num(10)?);
    let location = Vector3::new(num(11)?, num(12)?, num(13)?);
    let rotation_y = num(14)?;

    if class != ObjectClass::DontCare && !(h > 0.0 && w > 0.0 && l > 0.0) {
        return Err(format!("non-positive size ({h}, {w}, {l})"));
    }

    let image_bbox_height = bottom - top;
    Ok(GtObject {
        class,
        box3d: label_to_sensor_box(calib, location, h, w, l, rotation_y),
        truncation,
        occlusion,
        image_bbox_height,
        difficulty: difficulty_bucket(truncation, occlusion, image_bbox_height),
    })
}

/// Write objects back to the KITTI label layout (alpha is left at the yaw
/// value since no camera is involved; the 2D bbox is synthetic).
pub fn write_kitti_labels(
    objects: &[GtObject],
    calib: &Calibration,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for o in objects {
        let (loc, ry) = sensor_box_to_label(calib, &o.box3d);
        let bottom = 50.0 + o.image_bbox_height;
        text.push_str(&format!(
            "{} {:.2} {} {:.2} 0.00 50.00 100.00 {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}\n",
            o.class,
            o.truncation,
            o.occlusion,
            ry,
            bottom,
            o.box3d.h,
            o.box3d.w,
            o.box3d.l,
            loc.x,
            loc.y,
            loc.z,
            ry
        ));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Eight corners of an upright sensor-frame box.
pub fn box3d_corners(b: &Box3D) -> [Vector3<f64>; 8] {
    let planar = b.footprint().corners();
    let mut out = [Vector3::zeros(); 8];
    for (i, c) in planar.iter().enumerate() {
        out[i] = Vector3::new(c.x, c.y, b.z_min());
        out[i + 4] = Vector3::new(c.x, c.y, b.z_max());
    }
    out
}

/// Eight corners of a camera-frame label box (bottom-center location,
/// rotation about the camera y axis).
pub fn camera_label_corners(
    location: Vector3<f64>,
    h: f64,
    w: f64,
    l: f64,
    rotation_y: f64,
) -> [Vector3<f64>; 8] {
    let (s, c) = rotation_y.sin_cos();
    let mut out = [Vector3::zeros(); 8];
    let mut i = 0;
    for &y in &[0.0, -h] {
        for &(x, z) in &[
            (l / 2.0, w / 2.0),
            (-l / 2.0, w / 2.0),
            (-l / 2.0, -w / 2.0),
            (l / 2.0, -w / 2.0),
        ] {
            out[i] = Vector3::new(c * x + s * z, y, -s * x + c * z) + location;
            i += 1;
        }
    }
    out
}
