//! Geometric core of a LiDAR bird's-eye-view object detection pipeline.
//!
//! The crate covers everything around the detector network itself:
//!
//! 1. **Ingestion** ([`cloud`], [`sensor`], [`kitti`]) — velodyne-style binary
//!    point clouds, KITTI labels and calibration, sensor geometry configs.
//! 2. **Normalization map** ([`normmap`]) — per-cell maximum possible return
//!    count for a given sensor, computed analytically from the beam cone /
//!    cell column intersection and checked against a brute-force ray caster.
//! 3. **BEV encoding** ([`bev`]) — 3-channel raster (height, intensity,
//!    normalized density) plus flip/rotation augmentation and optional
//!    ground removal.
//! 4. **Box recovery** ([`recover`]) — axis-aligned detections + yaw bins
//!    back to oriented 3D boxes via the two-length-candidate rule, a coarse
//!    ground grid, and height lifting from the BEV.
//! 5. **Evaluation** ([`eval`]) — greedy score-ordered matching, interpolated
//!    AP, AOS, and recall-vs-IoU curves.
//! 6. **Simulation** ([`sim`]) — a ray-cast LiDAR simulator over box scenes,
//!    used as verification oracle and multi-device test generator.
//!
//! All geometry is metric, in the sensor frame (x forward, y left, z up).

pub mod bev;
pub mod cloud;
pub mod error;
pub mod eval;
pub mod geom;
pub mod grid;
pub mod kitti;
pub mod normmap;
pub mod recover;
pub mod sensor;
pub mod sim;

pub use bev::{encode_bev, AnnotatedFrame, BevConfig, BevImage, FovMode};
pub use cloud::{LidarPoint, PointCloud};
pub use error::{Error, Result};
pub use eval::{EvalReport, MatchCriterion};
pub use geom::{Aabb2D, Box3D, OrientedBox2D};
pub use kitti::{Calibration, Difficulty, GtObject, ObjectClass};
pub use normmap::NormalizationMap;
pub use recover::{ClassPriors, Detection2D, GroundGrid};
pub use sensor::SensorSpec;
pub use sim::Scene;
