//! KITTI-style evaluation: greedy score-ordered matching under BEV/3D IoU
//! criteria, 11-point interpolated AP, orientation similarity (AOS), and
//! recall-vs-IoU curves.

use serde::{Deserialize, Serialize};

use crate::geom::{iou_3d, rotated_iou, Box3D};
use crate::kitti::{Difficulty, GtObject, ObjectClass};

/// Which overlap measure matches detections to ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCriterion {
    /// Rotated IoU of the planar footprints.
    Bev,
    /// Volumetric IoU of the upright boxes.
    Iou3d,
}

impl MatchCriterion {
    pub fn as_str(&self) -> &'static str {
        match self {
            MatchCriterion::Bev => "BEV",
            MatchCriterion::Iou3d => "3D",
        }
    }

    fn overlap(&self, a: &Box3D, b: &Box3D) -> f64 {
        match self {
            MatchCriterion::Bev => rotated_iou(&a.footprint(), &b.footprint()),
            MatchCriterion::Iou3d => iou_3d(a, b),
        }
    }
}

/// A recovered detection ready for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalDetection {
    pub class: ObjectClass,
    pub score: f64,
    pub box3d: Box3D,
}

/// Fate of one detection after matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetOutcome {
    TruePositive {
        gt_index: usize,
        iou: f64,
        orientation_similarity: f64,
    },
    FalsePositive,
    /// Matched an out-of-difficulty ground truth or a DontCare region, or
    /// belongs to a different class; contributes to neither TP nor FP.
    Ignored,
}

/// Per-frame matching result; `outcomes` is parallel to the input detections.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    pub outcomes: Vec<DetOutcome>,
    pub gt_matched: Vec<bool>,
    pub num_relevant_gts: usize,
}

fn orientation_similarity(a: f64, b: f64) -> f64 {
    (1.0 + (a - b).cos()) / 2.0
}

/// Greedy score-ordered matching of one frame for one class/difficulty.
///
/// Detections claim the unmatched relevant ground truth of maximal IoU when
/// it reaches the threshold; failing that, a qualifying overlap with an
/// ignored ground truth (harder difficulty or DontCare region) makes the
/// detection ignored rather than a false positive. Ties are broken by
/// detection index, so matching is deterministic.
pub fn match_frame(
    dets: &[EvalDetection],
    gts: &[GtObject],
    class: ObjectClass,
    difficulty: Difficulty,
    criterion: MatchCriterion,
    iou_threshold: f64,
) -> FrameMatch {
    let relevant: Vec<bool> = gts
        .iter()
        .map(|g| g.class == class && g.difficulty.is_some_and(|d| d <= difficulty))
        .collect();
    let ignorable: Vec<bool> = gts
        .iter()
        .map(|g| {
            let harder_same_class =
                g.class == class && !g.difficulty.is_some_and(|d| d <= difficulty);
            let dontcare_region = g.class == ObjectClass::DontCare
                && g.box3d.l > 0.0
                && g.box3d.w > 0.0
                && g.box3d.h > 0.0;
            harder_same_class || dontcare_region
        })
        .collect();

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut outcomes = vec![DetOutcome::Ignored; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for &di in &order {
        let det = &dets[di];
        if det.class != class {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if !relevant[gi] || gt_matched[gi] {
                continue;
            }
            let iou = criterion.overlap(&det.box3d, &gt.box3d);
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            gt_matched[gi] = true;
            outcomes[di] = DetOutcome::TruePositive {
                gt_index: gi,
                iou,
                orientation_similarity: orientation_similarity(det.box3d.yaw, gts[gi].box3d.yaw),
            };
            continue;
        }
        let hits_ignored = gts.iter().enumerate().any(|(gi, gt)| {
            ignorable[gi] && criterion.overlap(&det.box3d, &gt.box3d) >= iou_threshold
        });
        outcomes[di] = if hits_ignored {
            DetOutcome::Ignored
        } else {
            DetOutcome::FalsePositive
        };
    }

    FrameMatch {
        outcomes,
        gt_matched,
        num_relevant_gts: relevant.iter().filter(|&&r| r).count(),
    }
}

/// Scored TP/FP stream accumulated across frames for one
/// (class, difficulty, criterion) slot.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    /// `(score, is_tp, orientation_similarity)`.
    outcomes: Vec<(f64, bool, f64)>,
    num_gts: usize,
}

impl MetricAccumulator {
    pub fn add_frame(&mut self, dets: &[EvalDetection], matched: &FrameMatch) {
        self.num_gts += matched.num_relevant_gts;
        for (det, outcome) in dets.iter().zip(&matched.outcomes) {
            match outcome {
                DetOutcome::TruePositive {
                    orientation_similarity,
                    ..
                } => self
                    .outcomes
                    .push((det.score, true, *orientation_similarity)),
                DetOutcome::FalsePositive => self.outcomes.push((det.score, false, 0.0)),
                DetOutcome::Ignored => {}
            }
        }
    }

    pub fn num_gts(&self) -> usize {
        self.num_gts
    }

    /// Raw PR points in rank order: `(recall, precision, similarity-mean)`.
    fn curve_points(&self) -> Vec<(f64, f64, f64)> {
        let mut sorted: Vec<(usize, &(f64, bool, f64))> =
            self.outcomes.iter().enumerate().collect();
        sorted.sort_by(|(ia, a), (ib, b)| b.0.partial_cmp(&a.0).unwrap().then(ia.cmp(ib)));
        let mut points = Vec::with_capacity(sorted.len());
        let mut tp = 0usize;
        let mut sim_sum = 0.0;
        for (rank, (_, &(_, is_tp, sim))) in sorted.iter().enumerate() {
            if is_tp {
                tp += 1;
                sim_sum += sim;
            }
            let n_pred = rank + 1;
            let recall = if self.num_gts > 0 {
                tp as f64 / self.num_gts as f64
            } else {
                0.0
            };
            points.push((recall, tp as f64 / n_pred as f64, sim_sum / n_pred as f64));
        }
        points
    }

    /// 11-point interpolated metric: mean over recall samples of the maximum
    /// of `value` over points with at least that recall.
    fn eleven_point(points: &[(f64, f64, f64)], value: impl Fn(&(f64, f64, f64)) -> f64) -> f64 {
        let mut total = 0.0;
        for step in 0..=10 {
            let r = step as f64 / 10.0;
            let best = points
                .iter()
                .filter(|p| p.0 >= r - 1e-12)
                .map(&value)
                .fold(0.0, f64::max);
            total += best;
        }
        total / 11.0
    }

    /// 11-point interpolated average precision; NaN when no ground truth.
    pub fn average_precision(&self) -> f64 {
        if self.num_gts == 0 {
            return f64::NAN;
        }
        Self::eleven_point(&self.curve_points(), |p| p.1)
    }

    /// 11-point interpolated average orientation similarity.
    pub fn average_orientation_similarity(&self) -> f64 {
        if self.num_gts == 0 {
            return f64::NAN;
        }
        Self::eleven_point(&self.curve_points(), |p| p.2)
    }

    pub fn pr_curve(&self) -> Vec<PrPoint> {
        self.curve_points()
            .into_iter()
            .map(|(recall, precision, similarity)| PrPoint {
                recall,
                precision,
                similarity,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub similarity: f64,
}

/// One frame of the evaluation input.
#[derive(Debug, Clone, Default)]
pub struct EvalFrame {
    pub frame_id: String,
    pub detections: Vec<EvalDetection>,
    pub gts: Vec<GtObject>,
}

/// Per-class IoU thresholds; the KITTI defaults plus the relaxed 0.5 car
/// mode used for validation-set comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassThresholds {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for ClassThresholds {
    fn default() -> Self {
        ClassThresholds {
            car: 0.7,
            pedestrian: 0.5,
            cyclist: 0.5,
        }
    }
}

impl ClassThresholds {
    pub fn relaxed_car() -> Self {
        ClassThresholds {
            car: 0.5,
            ..Default::default()
        }
    }

    pub fn for_class(&self, class: ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            ObjectClass::Cyclist => self.cyclist,
            ObjectClass::DontCare => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: ClassThresholds,
    pub criteria: Vec<MatchCriterion>,
    /// IoU sweep for the recall curves.
    pub recall_thresholds: Vec<f64>,
    /// Per-frame detection cap for the recall curves.
    pub recall_max_detections: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: ClassThresholds::default(),
            criteria: vec![MatchCriterion::Bev, MatchCriterion::Iou3d],
            recall_thresholds: (1..=19).map(|k| k as f64 * 0.05).collect(),
            recall_max_detections: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub class: ObjectClass,
    pub difficulty: Difficulty,
    pub criterion: MatchCriterion,
    pub iou_threshold: f64,
    pub num_gts: usize,
    pub ap: f64,
    pub aos: f64,
    pub pr_curve: Vec<PrPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub class: ObjectClass,
    pub criterion: MatchCriterion,
    pub num_gts: usize,
    pub thresholds: Vec<f64>,
    /// NaN (serialized as null) when there is no ground truth.
    pub recall: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvalReport {
    pub entries: Vec<MetricsEntry>,
    pub recall_curves: Vec<RecallCurve>,
    pub skipped_frames: Vec<String>,
}

impl EvalReport {
    pub fn entry(
        &self,
        class: ObjectClass,
        difficulty: Difficulty,
        criterion: MatchCriterion,
    ) -> Option<&MetricsEntry> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.difficulty == difficulty && e.criterion == criterion)
    }

    /// Plain-text table of AP/AOS per class, difficulty and criterion.
    pub fn to_table(&self) -> String {
        let mut out =
            String::from("class       difficulty criterion  iou    gts     AP       AOS\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{:<11} {:<10} {:<10} {:<6.2} {:<7} {:<8.4} {:<8.4}\n",
                e.class.as_str(),
                e.difficulty.as_str(),
                e.criterion.as_str(),
                e.iou_threshold,
                e.num_gts,
                e.ap,
                e.aos
            ));
        }
        out
    }
}

/// Fraction of ground truths matched by the top-k detections per frame, for
/// each IoU threshold in the sweep.
pub fn recall_at_iou(
    frames: &[EvalFrame],
    class: ObjectClass,
    criterion: MatchCriterion,
    thresholds: &[f64],
    max_detections: usize,
) -> RecallCurve {
    let num_gts: usize = frames
        .iter()
        .map(|f| {
            f.gts
                .iter()
                .filter(|g| g.class == class && g.difficulty.is_some())
                .count()
        })
        .sum();
    let mut recall = Vec::with_capacity(thresholds.len());
    for &thr in thresholds {
        if num_gts == 0 {
            recall.push(f64::NAN);
            continue;
        }
        let mut matched = 0usize;
        for frame in frames {
            let mut dets: Vec<EvalDetection> = frame
                .detections
                .iter()
                .filter(|d| d.class == class)
                .cloned()
                .collect();
            dets.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            dets.truncate(max_detections);
            let m = match_frame(&dets, &frame.gts, class, Difficulty::Hard, criterion, thr);
            matched += m.gt_matched.iter().filter(|&&x| x).count();
        }
        recall.push(matched as f64 / num_gts as f64);
    }
    RecallCurve {
        class,
        criterion,
        num_gts,
        thresholds: thresholds.to_vec(),
        recall,
    }
}

/// Evaluate all frames into the full report.
pub fn evaluate_frames(frames: &[EvalFrame], cfg: &EvalConfig) -> EvalReport {
    let mut report = EvalReport::default();
    for &class in &ObjectClass::ALL_SCORED {
        let thr = cfg.thresholds.for_class(class);
        for &criterion in &cfg.criteria {
            for difficulty in Difficulty::ALL {
                let mut acc = MetricAccumulator::default();
                for frame in frames {
                    let m = match_frame(
                        &frame.detections,
                        &frame.gts,
                        class,
                        difficulty,
                        criterion,
                        thr,
                    );
                    acc.add_frame(&frame.detections, &m);
                }
                report.entries.push(MetricsEntry {
                    class,
                    difficulty,
                    criterion,
                    iou_threshold: thr,
                    num_gts: acc.num_gts(),
                    ap: acc.average_precision(),
                    aos: acc.average_orientation_similarity(),
                    pr_curve: acc.pr_curve(),
                });
            }
            report.recall_curves.push(recall_at_iou(
                frames,
                class,
                criterion,
                &cfg.recall_thresholds,
                cfg.recall_max_detections,
            ));
        }
    }
    report
}
