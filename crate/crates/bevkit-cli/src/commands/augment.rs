//! `bevkit augment` — write flipped and quarter-rotated BEVs plus the
//! transformed annotations. Rotations need a Full360 grid; frontal grids
//! get the flip only.

use rayon::prelude::*;
use serde::Serialize;

use bevkit::bev::{encode_bev, flip_horizontal, rotate90, AnnotatedFrame, FovMode};
use bevkit::cloud::read_kitti_bin;
use bevkit::geom::Box3D;
use bevkit::kitti::{read_kitti_labels, ObjectClass};

use crate::config::Settings;
use crate::util::{frame_stem, list_bin_frames, render_png_atomic, write_atomic};
use crate::{CliError, CliResult};

#[derive(Serialize)]
struct AugmentedObject<'a> {
    frame_id: &'a str,
    augmentation: &'a str,
    class: ObjectClass,
    box3d: Box3D,
}

pub fn run(settings: &Settings) -> CliResult<()> {
    let cloud_dir = settings.require_cloud_dir()?;
    let (_, nmap) = super::load_matching_normmap(settings)?;
    let with_labels = settings.label_dir.is_some();
    if with_labels {
        settings.require_label_dir()?;
        settings.require_calib_dir()?;
    }
    let frames = list_bin_frames(cloud_dir)?;
    let rotations = settings.bev.fov_mode == FovMode::Full360;

    let produced: usize = frames
        .par_iter()
        .map(|path| -> CliResult<usize> {
            let frame_id = frame_stem(path);
            let cloud = read_kitti_bin(path)?;
            let bev = encode_bev(&cloud, &settings.bev, &nmap)?;
            let objects = if with_labels {
                let calib = super::calib_for_frame(
                    settings.calib_dir.as_deref().expect("checked above"),
                    &frame_id,
                )?;
                read_kitti_labels(
                    settings
                        .label_dir
                        .as_deref()
                        .expect("checked above")
                        .join(format!("{frame_id}.txt")),
                    &calib,
                )?
            } else {
                Vec::new()
            };
            let frame = AnnotatedFrame { bev, objects };

            let mut outputs: Vec<(String, AnnotatedFrame)> =
                vec![("flip".to_string(), flip_horizontal(&frame))];
            if rotations {
                for k in 1..4u32 {
                    outputs.push((format!("rot{}", 90 * k), rotate90(&frame, k)?));
                }
            }

            let mut annotations = String::new();
            for (name, aug) in &outputs {
                let png = settings.output_dir.join(format!("{frame_id}_{name}.png"));
                render_png_atomic(&aug.bev, &png)?;
                for o in &aug.objects {
                    let line = AugmentedObject {
                        frame_id: &frame_id,
                        augmentation: name,
                        class: o.class,
                        box3d: o.box3d,
                    };
                    annotations.push_str(&serde_json::to_string(&line).expect("serializes"));
                    annotations.push('\n');
                }
            }
            if with_labels {
                write_atomic(
                    &settings.output_dir.join(format!("{frame_id}_aug.jsonl")),
                    annotations.as_bytes(),
                )?;
            }
            Ok(outputs.len())
        })
        .collect::<Result<Vec<usize>, CliError>>()?
        .iter()
        .sum();

    println!(
        "augmented {} frames ({} variants) into {}",
        frames.len(),
        produced,
        settings.output_dir.display()
    );
    Ok(())
}
