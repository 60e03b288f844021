//! `bevkit selftest` — quick oracle-agreement and round-trip suites, one
//! pass/fail line each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevkit::bev::{encode_bev, flip_horizontal, rotate90, AnnotatedFrame, BevConfig, FovMode};
use bevkit::cloud::{LidarPoint, PointCloud};
use bevkit::eval::{match_frame, EvalDetection, MatchCriterion, MetricAccumulator};
use bevkit::geom::{rotated_iou, wrap_angle, OrientedBox2D, Point2};
use bevkit::kitti::{Difficulty, GtObject, ObjectClass};
use bevkit::normmap::{compute_normalization_map, plane_cell_count, raycast_plane_count};
use bevkit::recover::{
    decode_yaw, encode_yaw, fit_oriented_box, ClassPriors, Detection2D, YawEstimate,
};
use bevkit::sensor::{hdl32e_like, hdl64_like, vlp16_like};

use crate::CliResult;

pub fn run() -> CliResult<()> {
    let suites: [(&str, fn() -> Result<String, String>); 6] = [
        ("normalization-map oracle agreement", normmap_oracle),
        ("length recovery round trip", length_round_trip),
        ("yaw codec identity", yaw_codec),
        ("rotated IoU oracle", iou_oracle),
        ("eval self-consistency", eval_self_consistency),
        ("augmentation exactness", augmentation_exactness),
    ];
    let mut failures = 0usize;
    for (name, suite) in suites {
        match suite() {
            Ok(detail) => println!("selftest {name}: PASS ({detail})"),
            Err(why) => {
                println!("selftest {name}: FAIL ({why})");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return Err(crate::CliError::Data(anyhow::anyhow!(
            "{failures} selftest suite(s) failed"
        )));
    }
    println!("selftest: all suites passed");
    Ok(())
}

fn normmap_oracle() -> Result<String, String> {
    let specs = [vlp16_like(1.73), hdl32e_like(1.73), hdl64_like(1.73)];
    let cfg = BevConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut agree = 0usize;
    let total = 300usize;
    for _ in 0..total {
        let spec = &specs[rng.random_range(0..specs.len())];
        let cell = (
            rng.random_range(0..cfg.rows()),
            rng.random_range(0..cfg.cols()),
        );
        let ok = (0..spec.num_planes()).all(|p| {
            let a = plane_cell_count(spec, p, cell, &cfg) as i64;
            let r = raycast_plane_count(spec, p, cell, &cfg) as i64;
            (a - r).abs() <= 1
        });
        agree += ok as usize;
    }
    let rate = agree as f64 / total as f64;
    if rate >= 0.99 {
        Ok(format!(
            "{:.1}% of {total} cells within +-1 per plane",
            rate * 100.0
        ))
    } else {
        Err(format!("only {:.1}% of {total} cells agree", rate * 100.0))
    }
}

fn length_round_trip() -> Result<String, String> {
    let priors = ClassPriors::default();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut tested = 0usize;
    while tested < 2000 {
        let class = ObjectClass::ALL_SCORED[rng.random_range(0..3)];
        let w = priors.width_for(class).unwrap();
        let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if [
            0.0f64,
            std::f64::consts::FRAC_PI_2,
            -std::f64::consts::FRAC_PI_2,
            std::f64::consts::PI,
            -std::f64::consts::PI,
        ]
        .iter()
        .any(|d| (yaw - d).abs() < 1e-2)
        {
            continue;
        }
        let truth = OrientedBox2D::new(
            rng.random_range(-25.0..25.0),
            rng.random_range(-25.0..25.0),
            rng.random_range(w * 0.6..7.0),
            w,
            yaw,
        );
        let det = Detection2D {
            class,
            score: 1.0,
            aabb: truth.enclosing_aabb(),
            yaw: YawEstimate::Decoded(yaw),
        };
        let fit = fit_oriented_box(&det, &priors).map_err(|e| e.to_string())?;
        if (fit.l - truth.l).abs() > 1e-6 * truth.l {
            return Err(format!("length {} vs {} at yaw {yaw}", fit.l, truth.l));
        }
        tested += 1;
    }
    Ok(format!("{tested} boxes within 1e-6 relative"))
}

fn yaw_codec() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst = 0.0f64;
    for n_bins in [8usize, 16] {
        for _ in 0..2000 {
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let decoded = decode_yaw(&encode_yaw(yaw, n_bins).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            worst = worst.max(wrap_angle(decoded - yaw).abs());
        }
    }
    if worst < 1e-9 {
        Ok(format!("worst error {worst:.2e} rad over 4000 yaws"))
    } else {
        Err(format!("worst error {worst:.2e} rad"))
    }
}

fn iou_oracle() -> Result<String, String> {
    let sq = OrientedBox2D::new(0.0, 0.0, 1.0, 1.0, 0.0);
    let off = OrientedBox2D::new(0.5, 0.0, 1.0, 1.0, 0.0);
    if (rotated_iou(&sq, &sq) - 1.0).abs() > 1e-9
        || (rotated_iou(&sq, &off) - 1.0 / 3.0).abs() > 1e-9
    {
        return Err("analytic case failed".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..40 {
        let make = |rng: &mut ChaCha8Rng| {
            OrientedBox2D::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..4.0),
                rng.random_range(0.3..2.5),
                rng.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            )
        };
        let (a, b) = (make(&mut rng), make(&mut rng));
        // Monte-Carlo oracle over the union bounding box
        let ea = a.enclosing_aabb();
        let eb = b.enclosing_aabb();
        let x0 = (ea.cx - ea.h_bbox * 0.5).min(eb.cx - eb.h_bbox * 0.5);
        let x1 = (ea.cx + ea.h_bbox * 0.5).max(eb.cx + eb.h_bbox * 0.5);
        let y0 = (ea.cy - ea.w_bbox * 0.5).min(eb.cy - eb.w_bbox * 0.5);
        let y1 = (ea.cy + ea.w_bbox * 0.5).max(eb.cy + eb.w_bbox * 0.5);
        let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
        for _ in 0..1_000_000 {
            let p = Point2::new(rng.random_range(x0..x1), rng.random_range(y0..y1));
            let ia = a.contains(p);
            let ib = b.contains(p);
            na += ia as u64;
            nb += ib as u64;
            both += (ia && ib) as u64;
        }
        let union = na + nb - both;
        let oracle = if union == 0 {
            0.0
        } else {
            both as f64 / union as f64
        };
        worst = worst.max((rotated_iou(&a, &b) - oracle).abs());
    }
    if worst <= 0.01 {
        Ok(format!(
            "worst Monte-Carlo deviation {worst:.4} over 40 pairs"
        ))
    } else {
        Err(format!("Monte-Carlo deviation {worst:.4}"))
    }
}

fn eval_self_consistency() -> Result<String, String> {
    let gts: Vec<GtObject> = (0..6)
        .map(|k| {
            GtObject::upright(
                ObjectClass::ALL_SCORED[k % 3],
                5.0 + 4.0 * k as f64,
                -6.0 + 2.0 * k as f64,
                0.0,
                3.5,
                1.6,
                1.5,
                0.4 * k as f64 - 1.0,
            )
        })
        .collect();
    let dets: Vec<EvalDetection> = gts
        .iter()
        .map(|g| EvalDetection {
            class: g.class,
            score: 1.0,
            box3d: g.box3d,
        })
        .collect();
    for class in ObjectClass::ALL_SCORED {
        for criterion in [MatchCriterion::Bev, MatchCriterion::Iou3d] {
            let mut acc = MetricAccumulator::default();
            let m = match_frame(&dets, &gts, class, Difficulty::Easy, criterion, 0.7);
            acc.add_frame(&dets, &m);
            if (acc.average_precision() - 1.0).abs() > 1e-12 {
                return Err(format!(
                    "self-eval AP {} for {class}",
                    acc.average_precision()
                ));
            }
        }
    }

    // hand fixture: FP first over one GT reads 0.5 at every recall sample
    let g = &gts[0];
    let dets = vec![
        EvalDetection {
            class: g.class,
            score: 0.9,
            box3d: bevkit::geom::Box3D {
                cx: 45.0,
                ..g.box3d
            },
        },
        EvalDetection {
            class: g.class,
            score: 0.8,
            box3d: g.box3d,
        },
    ];
    let mut acc = MetricAccumulator::default();
    let m = match_frame(
        &dets,
        std::slice::from_ref(g),
        g.class,
        Difficulty::Easy,
        MatchCriterion::Bev,
        0.7,
    );
    acc.add_frame(&dets, &m);
    if (acc.average_precision() - 0.5).abs() > 1e-12 {
        return Err(format!("hand fixture AP {}", acc.average_precision()));
    }
    Ok("GT-as-detections scores 1.0; hand fixture exact".into())
}

fn augmentation_exactness() -> Result<String, String> {
    let cfg = BevConfig {
        cell_size: 0.2,
        forward_range: 6.0,
        lateral_range: 6.0,
        h_top: 3.0,
        fov_mode: FovMode::Full360,
        ground_offset: 0.0,
    };
    let spec = vlp16_like(1.73);
    let nmap = compute_normalization_map(&spec, &cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..5 {
        let points: Vec<LidarPoint> = (0..2000)
            .map(|_| LidarPoint {
                x: rng.random_range(-6.0..6.0),
                y: rng.random_range(-6.0..6.0),
                z: rng.random_range(0.0..3.0),
                intensity: rng.random_range(0.0..1.0),
            })
            .filter(|p| p.x != 0.0 && p.y != 0.0)
            .collect();
        let cloud = PointCloud::new(points.clone(), "st");
        let frame = AnnotatedFrame {
            bev: encode_bev(&cloud, &cfg, &nmap).map_err(|e| e.to_string())?,
            objects: vec![],
        };
        for k in 1..4u32 {
            let mut rotated = points.clone();
            for p in &mut rotated {
                for _ in 0..k {
                    let (x, y) = (p.x, p.y);
                    p.x = -y;
                    p.y = x;
                }
            }
            let enc_rot = encode_bev(&PointCloud::new(rotated, "st"), &cfg, &nmap)
                .map_err(|e| e.to_string())?;
            let rot_enc = rotate90(&frame, k).map_err(|e| e.to_string())?;
            if enc_rot != rot_enc.bev {
                return Err(format!("rotation commutation failed at k={k}"));
            }
        }
        if flip_horizontal(&flip_horizontal(&frame)) != frame {
            return Err("flip involution failed".into());
        }
    }
    Ok("5 clouds, rotations and flip bit-exact".into())
}
