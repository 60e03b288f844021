//! `bevkit eval` — score recovered boxes against KITTI-style labels.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;

use bevkit::eval::{evaluate_frames, EvalConfig, EvalDetection, EvalFrame};
use bevkit::kitti::read_kitti_labels;
use bevkit::recover::DetectionRecord;

use crate::config::Settings;
use crate::util::write_atomic;
use crate::CliResult;

pub fn run(
    settings: &Settings,
    boxes: &Path,
    report_path: Option<&Path>,
    car_iou_05: bool,
) -> CliResult<()> {
    if !boxes.exists() {
        return crate::usage_err(format!("boxes file {} does not exist", boxes.display()));
    }
    let label_dir = settings.require_label_dir()?;
    let calib_dir = settings.require_calib_dir()?;
    let report_path = report_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| settings.output_dir.join("eval_report.json"));

    let mut eval_cfg: EvalConfig = settings.eval.clone();
    if car_iou_05 {
        eval_cfg.thresholds.car = 0.5;
    }

    // boxes grouped by frame; records without a recovered box are unusable
    let text =
        std::fs::read_to_string(boxes).with_context(|| format!("reading {}", boxes.display()))?;
    let mut by_frame: BTreeMap<String, Vec<DetectionRecord>> = BTreeMap::new();
    let mut unusable = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DetectionRecord>(line) {
            Ok(rec) if rec.box3d.is_some() => {
                by_frame.entry(rec.frame_id.clone()).or_default().push(rec)
            }
            Ok(rec) => {
                eprintln!(
                    "line {}: record for frame {} has no box3d",
                    lineno + 1,
                    rec.frame_id
                );
                unusable += 1;
            }
            Err(e) => {
                eprintln!("line {}: {e}", lineno + 1);
                unusable += 1;
            }
        }
    }

    // evaluation runs over every labeled frame; boxes without a label file
    // are reported and skipped
    let mut label_frames: Vec<String> = std::fs::read_dir(label_dir)
        .with_context(|| format!("listing {}", label_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .map(|p| crate::util::frame_stem(&p))
        .collect();
    label_frames.sort();

    let mut skipped_frames = Vec::new();
    let mut frames = Vec::new();
    for frame_id in &label_frames {
        let calib = match super::calib_for_frame(calib_dir, frame_id) {
            Ok(c) => c,
            Err(e) => {
                let msg = match e {
                    crate::CliError::Usage(m) => m,
                    crate::CliError::Data(err) => format!("{err:#}"),
                };
                skipped_frames.push(format!("{frame_id}: {msg}"));
                continue;
            }
        };
        let gts = read_kitti_labels(label_dir.join(format!("{frame_id}.txt")), &calib)?;
        let detections = by_frame
            .remove(frame_id)
            .unwrap_or_default()
            .into_iter()
            .map(|rec| EvalDetection {
                class: rec.class,
                score: rec.score,
                box3d: rec.box3d.expect("filtered above"),
            })
            .collect();
        frames.push(EvalFrame {
            frame_id: frame_id.clone(),
            detections,
            gts,
        });
    }
    for frame_id in by_frame.keys() {
        skipped_frames.push(format!("{frame_id}: no label file"));
    }

    let mut report = evaluate_frames(&frames, &eval_cfg);
    report.skipped_frames = skipped_frames;

    print!("{}", report.to_table());
    if !report.skipped_frames.is_empty() {
        println!("skipped frames:");
        for s in &report.skipped_frames {
            println!("  {s}");
        }
    }
    if unusable > 0 {
        println!("{unusable} unusable box records");
    }
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_atomic(&report_path, json.as_bytes())?;
    println!("report: {}", report_path.display());
    Ok(())
}
