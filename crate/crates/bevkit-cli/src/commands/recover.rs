//! `bevkit recover` — turn detector output into oriented 3D boxes.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;

use bevkit::bev::encode_bev;
use bevkit::cloud::read_kitti_bin;
use bevkit::recover::{build_ground_grid, recover_detection, DetectionRecord};

use crate::config::Settings;
use crate::util::write_atomic;
use crate::{CliError, CliResult};

pub fn run(settings: &Settings, detections: &Path, out: Option<&Path>) -> CliResult<()> {
    if !detections.exists() {
        return crate::usage_err(format!(
            "detections file {} does not exist",
            detections.display()
        ));
    }
    let cloud_dir = settings.require_cloud_dir()?.to_path_buf();
    let (_, nmap) = super::load_matching_normmap(settings)?;
    let out_path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| settings.output_dir.join("boxes.jsonl"));

    // lenient line-by-line parse: bad lines are logged and skipped
    let text = std::fs::read_to_string(detections)
        .with_context(|| format!("reading {}", detections.display()))?;
    let mut by_frame: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    let mut skipped_lines = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DetectionRecord>(line) {
            Ok(rec) => by_frame.entry(rec.frame_id.clone()).or_default().push(rec),
            Err(e) => {
                eprintln!("skipping detections line {}: {e}", lineno + 1);
                skipped_lines += 1;
            }
        }
    }

    let results: Vec<(String, Vec<DetectionRecord>, usize)> = by_frame
        .par_iter()
        .map(|(frame_id, records)| {
            let cloud_path = cloud_dir.join(format!("{frame_id}.bin"));
            let (mut recovered, mut skipped) = (Vec::new(), 0usize);
            match read_kitti_bin(&cloud_path)
                .map_err(CliError::from)
                .and_then(|cloud| {
                    let bev = encode_bev(&cloud, &settings.bev, &nmap)?;
                    let ground = build_ground_grid(&cloud, &settings.bev);
                    Ok((bev, ground))
                }) {
                Ok((bev, ground)) => {
                    for rec in records {
                        let lifted = rec.to_detection().and_then(|det| {
                            recover_detection(&det, &settings.priors, &bev, &ground)
                        });
                        match lifted {
                            Ok(box3d) => {
                                let mut out = rec.clone();
                                out.box3d = Some(box3d);
                                recovered.push(out);
                            }
                            Err(e) => {
                                eprintln!("frame {frame_id}: skipping detection: {e}");
                                skipped += 1;
                            }
                        }
                    }
                }
                Err(e) => {
                    let msg = match e {
                        CliError::Usage(m) => m,
                        CliError::Data(err) => format!("{err:#}"),
                    };
                    eprintln!(
                        "frame {frame_id}: skipping {} detections: {msg}",
                        records.len()
                    );
                    skipped += records.len();
                }
            }
            (frame_id.clone(), recovered, skipped)
        })
        .collect();

    let mut lines = String::new();
    let mut recovered_n = 0usize;
    let mut skipped_dets = skipped_lines;
    for (_, records, skipped) in &results {
        skipped_dets += skipped;
        for rec in records {
            lines.push_str(&serde_json::to_string(rec).expect("record serializes"));
            lines.push('\n');
            recovered_n += 1;
        }
    }
    write_atomic(&out_path, lines.as_bytes())?;

    println!(
        "recovered {recovered_n} boxes across {} frames into {} ({} skipped)",
        results.len(),
        out_path.display(),
        skipped_dets
    );
    Ok(())
}
