//! `bevkit simulate` — ray-cast a scene into a KITTI-format frame: cloud,
//! labels and calib, plus optional synthetic detections.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use bevkit::cloud::encode_kitti_bin;
use bevkit::kitti::{sensor_box_to_label, Calibration};
use bevkit::recover::{DetectionRecord, YawEstimate};
use bevkit::sensor::read_sensor_spec;
use bevkit::sim::{oracle_detections, read_scene, simulate_scan};

use crate::config::Settings;
use crate::util::{frame_stem, write_atomic};
use crate::CliResult;

pub fn run(settings: &Settings, scene_path: &Path, detections: bool) -> CliResult<()> {
    if !scene_path.exists() {
        return crate::usage_err(format!("scene {} does not exist", scene_path.display()));
    }
    let spec = read_sensor_spec(settings.require_sensor_spec()?)?;
    let scene = read_scene(scene_path)?;
    let frame_id = frame_stem(scene_path);
    let out = &settings.output_dir;

    let cloud = simulate_scan(&scene, &spec);
    write_atomic(
        &out.join("velodyne").join(format!("{frame_id}.bin")),
        &encode_kitti_bin(&cloud),
    )?;

    let calib = Calibration::nominal();
    let gts = scene.gt_objects();
    let mut label_text = String::new();
    for gt in &gts {
        let (loc, ry) = sensor_box_to_label(&calib, &gt.box3d);
        label_text.push_str(&format!(
            "{} 0.00 0 {ry:.4} 0.00 50.00 100.00 190.00 {:.4} {:.4} {:.4} {:.4} {:.4} {:.4} {ry:.4}\n",
            gt.class, gt.box3d.h, gt.box3d.w, gt.box3d.l, loc.x, loc.y, loc.z
        ));
    }
    write_atomic(
        &out.join("label_2").join(format!("{frame_id}.txt")),
        label_text.as_bytes(),
    )?;
    write_atomic(
        &out.join("calib").join(format!("{frame_id}.txt")),
        super::nominal_calib_text().as_bytes(),
    )?;

    if detections {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
        let dets = oracle_detections(&gts, &settings.priors, &settings.oracle, &mut rng)?;
        let mut lines = String::new();
        for det in &dets {
            let rec = DetectionRecord {
                frame_id: frame_id.clone(),
                class: det.class,
                score: det.score,
                aabb: det.aabb,
                yaw_bins: match &det.yaw {
                    YawEstimate::Bins(b) => Some(b.clone()),
                    YawEstimate::Decoded(_) => None,
                },
                yaw: match &det.yaw {
                    YawEstimate::Bins(_) => None,
                    YawEstimate::Decoded(y) => Some(*y),
                },
                box3d: None,
            };
            lines.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            lines.push('\n');
        }
        write_atomic(
            &out.join("detections").join(format!("{frame_id}.jsonl")),
            lines.as_bytes(),
        )?;
    }

    println!(
        "simulated {} ({} planes): {} points, {} objects into {}",
        frame_id,
        spec.num_planes(),
        cloud.len(),
        gts.len(),
        out.display()
    );
    Ok(())
}
