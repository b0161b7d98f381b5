//! KITTI-style detection and prediction evaluation.
//!
//! Detections from all frames are pooled into one score-ordered sweep.
//! Matching is greedy: each detection, highest score first, takes the
//! unmatched ground truth of its frame with the highest IoU, provided the
//! IoU reaches the threshold.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{foe, hoe, rotated_iou, Angle, OrientedBox, Point2};

/// Seconds between consecutive waypoints.
pub const STEP_SECONDS: f64 = 0.1;
/// Actors faster than this are "moving".
pub const MOVING_SPEED_MPS: f64 = 0.5;
/// Trajectories shorter than this keep their half-range heading.
pub const MIN_TRAVEL_M: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionRecord {
    pub frame: u64,
    pub id: u64,
    /// Box at t = 0; its yaw is the heading scored by AOS/FOE/HOE.
    pub bbox: OrientedBox,
    pub score: f64,
    pub yaws: Vec<Angle>,
    pub flip_prob: Option<f64>,
    /// Future positions at 10 Hz, first entry at t = 0.1 s.
    pub waypoints: Vec<Point2>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GtActor {
    pub frame: u64,
    pub id: u64,
    pub bbox: OrientedBox,
    pub yaws: Vec<Angle>,
    pub waypoints: Vec<Point2>,
    pub speed: f64,
    pub moving: bool,
}

impl GtActor {
    pub fn new(
        frame: u64,
        id: u64,
        bbox: OrientedBox,
        yaws: Vec<Angle>,
        waypoints: Vec<Point2>,
    ) -> Result<Self> {
        bbox.validate()?;
        let speed = actor_speed(bbox.center(), &waypoints);
        Ok(GtActor {
            frame,
            id,
            bbox,
            yaws,
            waypoints,
            speed,
            moving: speed > MOVING_SPEED_MPS,
        })
    }
}

/// Speed from the displacement between t = 0 and the 0.5 s waypoint.
/// Shorter tracks use their last waypoint; an empty track is stationary.
pub fn actor_speed(origin: Point2, waypoints: &[Point2]) -> f64 {
    let steps = (0.5 / STEP_SECONDS).round() as usize;
    match waypoints.len() {
        0 => 0.0,
        n => {
            let idx = steps.min(n) - 1;
            waypoints[idx].dist(origin) / ((idx + 1) as f64 * STEP_SECONDS)
        }
    }
}

/// Orientation similarity `(1 + cos Δ) / 2`.
pub fn orientation_similarity(gt: Angle, pred: Angle) -> f64 {
    0.5 * (1.0 + (gt - pred).radians().cos())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruePositive {
    pub det: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    pub tps: Vec<TruePositive>,
    pub fps: Vec<usize>,
    pub fns: Vec<usize>,
    /// Lowest score admitted into the match.
    pub score_threshold: f64,
}

/// Detection indices in descending score order; equal scores keep input order.
fn score_order(dets: &[DetectionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

fn validate_scores(dets: &[DetectionRecord]) -> Result<()> {
    if dets.iter().any(|d| !d.score.is_finite()) {
        return Err(Error::NonFinite("detection score"));
    }
    Ok(())
}

/// Greedy matching of all detections with `score >= score_threshold`.
pub fn match_detections_at(
    dets: &[DetectionRecord],
    gts: &[GtActor],
    iou_threshold: f64,
    score_threshold: f64,
) -> Result<MatchSet> {
    validate_scores(dets)?;
    let mut by_frame: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_frame.entry(g.frame).or_default().push(i);
    }
    let mut taken = vec![false; gts.len()];
    let mut set = MatchSet {
        score_threshold,
        ..MatchSet::default()
    };
    for d in score_order(dets) {
        if dets[d].score < score_threshold {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for &g in by_frame.get(&dets[d].frame).into_iter().flatten() {
            if taken[g] {
                continue;
            }
            let iou = rotated_iou(&dets[d].bbox, &gts[g].bbox)?;
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        match best {
            Some((g, iou)) => {
                taken[g] = true;
                set.tps.push(TruePositive { det: d, gt: g, iou });
            }
            None => set.fps.push(d),
        }
    }
    set.fns = (0..gts.len()).filter(|&g| !taken[g]).collect();
    Ok(set)
}

pub fn match_detections(
    dets: &[DetectionRecord],
    gts: &[GtActor],
    iou_threshold: f64,
) -> Result<MatchSet> {
    match_detections_at(dets, gts, iou_threshold, f64::NEG_INFINITY)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub score: f64,
    pub recall: f64,
    pub precision: f64,
    /// Mean orientation similarity over the true positives so far.
    pub similarity: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: usize,
}

/// One curve point per distinct score, highest first.
pub fn pr_curve(dets: &[DetectionRecord], gts: &[GtActor], iou_threshold: f64) -> Result<PrCurve> {
    let matches = match_detections(dets, gts, iou_threshold)?;
    let mut tp_of = vec![None; dets.len()];
    for tp in &matches.tps {
        tp_of[tp.det] = Some(tp.gt);
    }
    let mut curve = PrCurve {
        points: Vec::new(),
        num_gt: gts.len(),
    };
    if gts.is_empty() {
        return Ok(curve);
    }
    let order = score_order(dets);
    let (mut tp, mut fp, mut sim_sum) = (0usize, 0usize, 0.0);
    for (k, &d) in order.iter().enumerate() {
        match tp_of[d] {
            Some(g) => {
                tp += 1;
                sim_sum += orientation_similarity(gts[g].bbox.yaw, dets[d].bbox.yaw);
            }
            None => fp += 1,
        }
        let last_of_score = order
            .get(k + 1)
            .is_none_or(|&n| dets[n].score != dets[d].score);
        if last_of_score {
            curve.points.push(PrPoint {
                score: dets[d].score,
                recall: tp as f64 / gts.len() as f64,
                precision: tp as f64 / (tp + fp) as f64,
                similarity: if tp > 0 { sim_sum / tp as f64 } else { 0.0 },
            });
        }
    }
    Ok(curve)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoint,
    /// Mean envelope precision at recall 1/40, 2/40, …, 1.
    Recall40,
}

fn interpolated_area(curve: &PrCurve, value: impl Fn(&PrPoint) -> f64, mode: ApInterpolation) -> f64 {
    let pts = &curve.points;
    if pts.is_empty() {
        return 0.0;
    }
    let mut envelope: Vec<f64> = pts.iter().map(&value).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    match mode {
        ApInterpolation::AllPoint => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (p, e) in pts.iter().zip(&envelope) {
                area += (p.recall - prev) * e;
                prev = p.recall;
            }
            area
        }
        ApInterpolation::Recall40 => {
            let mut sum = 0.0;
            let mut j = 0;
            for k in 1..=40 {
                let r = k as f64 / 40.0;
                while j < pts.len() && pts[j].recall < r - 1e-12 {
                    j += 1;
                }
                if j < pts.len() {
                    sum += envelope[j];
                }
            }
            sum / 40.0
        }
    }
}

pub fn average_precision(curve: &PrCurve, mode: ApInterpolation) -> f64 {
    interpolated_area(curve, |p| p.precision, mode)
}

/// AP with each precision weighted by the mean orientation similarity.
/// Never exceeds [`average_precision`] on the same curve.
pub fn average_orientation_similarity(curve: &PrCurve, mode: ApInterpolation) -> f64 {
    interpolated_area(curve, |p| p.precision * p.similarity, mode)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub recall: f64,
    /// False when the target recall is unreachable and every detection is kept.
    pub reached: bool,
}

/// Highest score threshold whose recall reaches `target_recall`.
pub fn operating_point_at(
    dets: &[DetectionRecord],
    gts: &[GtActor],
    iou_threshold: f64,
    target_recall: f64,
) -> Result<OperatingPoint> {
    let curve = pr_curve(dets, gts, iou_threshold)?;
    if let Some(p) = curve
        .points
        .iter()
        .find(|p| p.recall >= target_recall - 1e-12)
    {
        return Ok(OperatingPoint {
            threshold: p.score,
            recall: p.recall,
            reached: true,
        });
    }
    Ok(OperatingPoint {
        threshold: curve.points.last().map_or(f64::NEG_INFINITY, |p| p.score),
        recall: curve.points.last().map_or(0.0, |p| p.recall),
        reached: false,
    })
}

/// Operating point at 0.8 recall with IoU 0.5 matching.
pub fn operating_point(dets: &[DetectionRecord], gts: &[GtActor]) -> Result<OperatingPoint> {
    operating_point_at(dets, gts, 0.5, 0.8)
}

/// Rotates a half-range heading onto the direction of travel when the
/// trajectory covers more than [`MIN_TRAVEL_M`].
pub fn traj_direction_convert(theta_half: Angle, waypoints: &[Point2]) -> Angle {
    let (Some(first), Some(last)) = (waypoints.first(), waypoints.last()) else {
        return theta_half;
    };
    let d = *last - *first;
    if d.norm() <= MIN_TRAVEL_M {
        return theta_half;
    }
    let heading = Angle::from_radians(d.y.atan2(d.x));
    let flipped = theta_half.flipped();
    if (flipped - heading).radians().cos() > (theta_half - heading).radians().cos() {
        flipped
    } else {
        theta_half
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceErrors {
    pub count: usize,
    pub hoe_deg: Option<f64>,
    pub foe_deg: Option<f64>,
    pub l2_3s_m: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub all: SliceErrors,
    pub moving: SliceErrors,
}

/// Per-TP errors at t = 0 (orientation) and t = 3 s (position).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpErrors {
    pub foe_deg: f64,
    pub hoe_deg: f64,
    pub l2_3s_m: Option<f64>,
    pub speed: f64,
    pub moving: bool,
    pub flip_prob: Option<f64>,
}

fn waypoint_at_3s(w: &[Point2]) -> Option<Point2> {
    let idx = (3.0 / STEP_SECONDS).round() as usize;
    w.get(idx.min(w.len()).checked_sub(1)?).copied()
}

pub fn tp_errors(dets: &[DetectionRecord], gts: &[GtActor], set: &MatchSet) -> Result<Vec<TpErrors>> {
    set.tps
        .iter()
        .map(|tp| {
            let (d, g) = (&dets[tp.det], &gts[tp.gt]);
            let l2 = match (waypoint_at_3s(&d.waypoints), waypoint_at_3s(&g.waypoints)) {
                (Some(a), Some(b)) => Some(a.dist(b)),
                _ => None,
            };
            Ok(TpErrors {
                foe_deg: foe(g.bbox.yaw, d.bbox.yaw)?,
                hoe_deg: hoe(g.bbox.yaw, d.bbox.yaw)?,
                l2_3s_m: l2,
                speed: g.speed,
                moving: g.moving,
                flip_prob: d.flip_prob,
            })
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn slice(errs: &[&TpErrors]) -> SliceErrors {
    SliceErrors {
        count: errs.len(),
        hoe_deg: mean(errs.iter().map(|e| e.hoe_deg)),
        foe_deg: mean(errs.iter().map(|e| e.foe_deg)),
        l2_3s_m: mean(errs.iter().filter_map(|e| e.l2_3s_m)),
    }
}

/// Unweighted means over true positives, for all actors and moving ones.
pub fn error_metrics(errs: &[TpErrors]) -> ErrorMetrics {
    let all: Vec<&TpErrors> = errs.iter().collect();
    let moving: Vec<&TpErrors> = errs.iter().filter(|e| e.moving).collect();
    ErrorMetrics {
        all: slice(&all),
        moving: slice(&moving),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub frac: f64,
    pub mean_foe_deg: Option<f64>,
    pub mean_speed_mps: Option<f64>,
}

/// Bins true positives by flip probability over [0, 0.5].
pub fn flip_prob_bins(errs: &[TpErrors], n_bins: usize) -> Result<Vec<FlipBin>> {
    if n_bins == 0 {
        return Err(Error::Config("flip-probability binning needs at least one bin".into()));
    }
    let width = 0.5 / n_bins as f64;
    let mut members: Vec<Vec<&TpErrors>> = vec![Vec::new(); n_bins];
    let mut total = 0usize;
    for e in errs {
        let Some(p) = e.flip_prob else { continue };
        if !(0.0..=0.5).contains(&p) {
            return Err(Error::Config(format!(
                "flip probability {p} outside [0, 0.5]; run the flip post-processing first"
            )));
        }
        members[((p / width) as usize).min(n_bins - 1)].push(e);
        total += 1;
    }
    Ok(members
        .iter()
        .enumerate()
        .map(|(i, m)| FlipBin {
            lo: i as f64 * width,
            hi: (i + 1) as f64 * width,
            count: m.len(),
            frac: if total > 0 { m.len() as f64 / total as f64 } else { 0.0 },
            mean_foe_deg: mean(m.iter().map(|e| e.foe_deg)),
            mean_speed_mps: mean(m.iter().map(|e| e.speed)),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ap_iou: f64,
    pub op_iou: f64,
    pub op_recall: f64,
    pub interpolation: ApInterpolation,
    pub flip_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ap_iou: 0.7,
            op_iou: 0.5,
            op_recall: 0.8,
            interpolation: ApInterpolation::AllPoint,
            flip_bins: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default)]
    pub label: String,
    pub ap: f64,
    pub aos: f64,
    pub hoe_all: Option<f64>,
    pub foe_all: Option<f64>,
    pub foe_moving: Option<f64>,
    pub l2_all: Option<f64>,
    pub l2_moving: Option<f64>,
    pub operating_point: Option<OperatingPoint>,
    pub num_gt: usize,
    pub num_det: usize,
    pub num_tp: usize,
    pub num_tp_moving: usize,
    pub flip_bins: Option<Vec<FlipBin>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub curve: PrCurve,
    pub tp_errors: Vec<TpErrors>,
}

pub fn evaluate(dets: &[DetectionRecord], gts: &[GtActor], cfg: &EvalConfig) -> Result<Evaluation> {
    let curve = pr_curve(dets, gts, cfg.ap_iou)?;
    let op = operating_point_at(dets, gts, cfg.op_iou, cfg.op_recall)?;
    let set = match_detections_at(dets, gts, cfg.op_iou, op.threshold)?;
    let tp_errors = tp_errors(dets, gts, &set)?;
    let errors = error_metrics(&tp_errors);
    let flip_bins = if tp_errors.iter().any(|e| e.flip_prob.is_some()) {
        Some(flip_prob_bins(&tp_errors, cfg.flip_bins)?)
    } else {
        None
    };
    let report = EvalReport {
        label: String::new(),
        ap: average_precision(&curve, cfg.interpolation),
        aos: average_orientation_similarity(&curve, cfg.interpolation),
        hoe_all: errors.all.hoe_deg,
        foe_all: errors.all.foe_deg,
        foe_moving: errors.moving.foe_deg,
        l2_all: errors.all.l2_3s_m,
        l2_moving: errors.moving.l2_3s_m,
        operating_point: (!dets.is_empty()).then_some(op),
        num_gt: gts.len(),
        num_det: dets.len(),
        num_tp: errors.all.count,
        num_tp_moving: errors.moving.count,
        flip_bins,
    };
    Ok(Evaluation {
        report,
        curve,
        tp_errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deg(d: f64) -> Angle {
        Angle::from_degrees(d)
    }

    fn gt_at(frame: u64, id: u64, x: f64, yaw: f64) -> GtActor {
        let b = OrientedBox::new(x, 0.0, 4.0, 2.0, deg(yaw)).unwrap();
        let wp = (1..=30).map(|t| Point2::new(x + 0.1 * t as f64, 0.0)).collect();
        GtActor::new(frame, id, b, vec![deg(yaw); 30], wp).unwrap()
    }

    fn det_of(g: &GtActor, score: f64, yaw_offset: f64) -> DetectionRecord {
        DetectionRecord {
            frame: g.frame,
            id: g.id,
            bbox: g.bbox.with_yaw((g.bbox.yaw + deg(yaw_offset)).full()),
            score,
            yaws: g.yaws.iter().map(|&a| (a + deg(yaw_offset)).full()).collect(),
            flip_prob: None,
            waypoints: g.waypoints.clone(),
        }
    }

    #[test]
    fn speed_examples() {
        let mut wp = vec![Point2::new(0.0, 0.0); 30];
        wp[4] = Point2::new(0.3, 0.4);
        assert!((actor_speed(Point2::new(0.0, 0.0), &wp) - 1.0).abs() < 1e-12);

        let still = vec![Point2::new(2.0, 3.0); 30];
        assert_eq!(actor_speed(Point2::new(2.0, 3.0), &still), 0.0);

        let mut slow = vec![Point2::new(0.0, 0.0); 30];
        slow[4] = Point2::new(0.2, 0.0);
        let v = actor_speed(Point2::new(0.0, 0.0), &slow);
        assert!((v - 0.4).abs() < 1e-12);
        let b = OrientedBox::new(0.0, 0.0, 4.0, 2.0, Angle::ZERO).unwrap();
        assert!(!GtActor::new(0, 0, b, vec![], slow).unwrap().moving);
    }

    #[test]
    fn matching_examples() {
        let g = gt_at(0, 0, 0.0, 10.0);
        let m = match_detections(&[det_of(&g, 0.9, 0.0)], std::slice::from_ref(&g), 0.7).unwrap();
        assert_eq!(m.tps.len(), 1);

        let dets = [det_of(&g, 0.6, 0.0), det_of(&g, 0.9, 0.0)];
        let m = match_detections(&dets, std::slice::from_ref(&g), 0.7).unwrap();
        assert_eq!(m.tps[0].det, 1);
        assert_eq!(m.fps, vec![0]);

        let m = match_detections(&[det_of(&g, 0.9, 180.0)], &[g], 0.7).unwrap();
        assert_eq!(m.tps.len(), 1);
        assert_eq!(m.tps[0].iou, 1.0);
    }

    #[test]
    fn matching_respects_frames() {
        let g0 = gt_at(0, 0, 0.0, 0.0);
        let mut d = det_of(&g0, 0.9, 0.0);
        d.frame = 1;
        let m = match_detections(&[d], &[g0], 0.5).unwrap();
        assert!(m.tps.is_empty());
        assert_eq!(m.fns, vec![0]);
    }

    #[test]
    fn curve_examples() {
        let gts: Vec<_> = (0..3).map(|i| gt_at(0, i, 10.0 * i as f64, 30.0)).collect();
        let exact: Vec<_> = gts.iter().map(|g| det_of(g, 0.9, 0.0)).collect();
        let c = pr_curve(&exact, &gts, 0.7).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 1.0));
        assert_eq!(average_precision(&c, ApInterpolation::AllPoint), 1.0);

        let flipped: Vec<_> = gts.iter().map(|g| det_of(g, 0.9, 180.0)).collect();
        let c = pr_curve(&flipped, &gts, 0.7).unwrap();
        assert!(c.points.iter().all(|p| p.precision == 1.0 && p.similarity.abs() < 1e-12));
        assert_eq!(average_precision(&c, ApInterpolation::AllPoint), 1.0);
        assert!(average_orientation_similarity(&c, ApInterpolation::AllPoint) < 1e-12);

        let c = pr_curve(&[], &gts, 0.7).unwrap();
        assert!(c.points.is_empty());
        assert_eq!(average_precision(&c, ApInterpolation::AllPoint), 0.0);
    }

    #[test]
    fn ap_hand_computed() {
        // 2 gts; 0.9 hits one, 0.8 hits nothing → P/R = (1, .5), (.5, .5).
        let gts = [gt_at(0, 0, 0.0, 0.0), gt_at(0, 1, 20.0, 0.0)];
        let mut miss = det_of(&gts[0], 0.8, 0.0);
        miss.bbox.cx = 50.0;
        let dets = [det_of(&gts[0], 0.9, 0.0), miss];
        let c = pr_curve(&dets, &gts, 0.7).unwrap();
        assert!((average_precision(&c, ApInterpolation::AllPoint) - 0.5).abs() < 1e-12);
        // R40 samples recall 1/40..20/40 at precision 1, the rest at 0.
        assert!((average_precision(&c, ApInterpolation::Recall40) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tied_scores_collapse_to_one_point() {
        let gts: Vec<_> = (0..4).map(|i| gt_at(0, i, 10.0 * i as f64, 0.0)).collect();
        let dets: Vec<_> = gts.iter().map(|g| det_of(g, 0.5, 0.0)).collect();
        let c = pr_curve(&dets, &gts, 0.7).unwrap();
        assert_eq!(c.points.len(), 1);
        assert_eq!(c.points[0].recall, 1.0);
    }

    #[test]
    fn operating_point_examples() {
        let gts: Vec<_> = (0..10).map(|i| gt_at(0, i, 10.0 * i as f64, 0.0)).collect();
        let all: Vec<_> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| det_of(g, 1.0 - 0.05 * i as f64, 0.0))
            .collect();
        let op = operating_point(&all, &gts).unwrap();
        assert!(op.reached);
        assert!((op.threshold - all[7].score).abs() < 1e-12);
        assert!((op.recall - 0.8).abs() < 1e-12);

        let seven = &all[..7];
        let op = operating_point(seven, &gts).unwrap();
        assert!(!op.reached);
        assert_eq!(op.threshold, seven[6].score);

        let eight = &all[..8];
        let op = operating_point(eight, &gts).unwrap();
        assert!(op.reached);
        assert_eq!(op.threshold, eight[7].score);
    }

    #[test]
    fn error_metric_examples() {
        let gts: Vec<_> = (0..3).map(|i| gt_at(0, i, 10.0 * i as f64, 20.0)).collect();
        let exact: Vec<_> = gts.iter().map(|g| det_of(g, 1.0, 0.0)).collect();
        let ev = evaluate(&exact, &gts, &EvalConfig::default()).unwrap();
        assert_eq!(ev.report.foe_all, Some(0.0));
        assert_eq!(ev.report.hoe_all, Some(0.0));
        assert_eq!(ev.report.l2_all, Some(0.0));

        let flipped: Vec<_> = gts.iter().map(|g| det_of(g, 1.0, 180.0)).collect();
        let ev = evaluate(&flipped, &gts, &EvalConfig::default()).unwrap();
        assert!((ev.report.foe_all.unwrap() - 180.0).abs() < 1e-9);
        assert!(ev.report.hoe_all.unwrap() < 1e-9);

        let mut off = det_of(&gts[0], 1.0, 0.0);
        off.waypoints[29].y += 1.0;
        let ev = evaluate(&[off], &gts[..1], &EvalConfig::default()).unwrap();
        assert!((ev.report.l2_all.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trajectory_conversion_examples() {
        let track = |heading: f64| -> Vec<Point2> {
            let (s, c) = deg(heading).radians().sin_cos();
            (1..=30).map(|t| Point2::new(c * t as f64, s * t as f64)).collect()
        };
        let r = traj_direction_convert(deg(10.0), &track(5.0));
        assert!((r.degrees() - 10.0).abs() < 1e-9);
        let r = traj_direction_convert(deg(10.0), &track(185.0));
        assert!((r.degrees() + 170.0).abs() < 1e-9);
        let still = vec![Point2::new(1.0, 1.0); 30];
        assert_eq!(traj_direction_convert(deg(10.0), &still), deg(10.0));
    }

    #[test]
    fn flip_bin_examples() {
        let e = |p: f64, foe: f64| TpErrors {
            foe_deg: foe,
            hoe_deg: 0.0,
            l2_3s_m: None,
            speed: 1.0,
            moving: true,
            flip_prob: Some(p),
        };
        let bins = flip_prob_bins(&[e(0.0, 0.0), e(0.0, 0.0)], 10).unwrap();
        assert_eq!(bins.iter().filter(|b| b.count > 0).count(), 1);
        assert_eq!(bins[0].mean_foe_deg, Some(0.0));

        let bins = flip_prob_bins(&[e(0.01, 1.0), e(0.26, 2.0), e(0.5, 3.0)], 10).unwrap();
        assert!((bins.iter().map(|b| b.frac).sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(bins[9].count, 1);
        assert_eq!(bins[5].count, 1);
        assert!(flip_prob_bins(&[e(0.7, 0.0)], 10).is_err());
    }

    #[test]
    fn bins_skipped_without_flip_probabilities() {
        let g = gt_at(0, 0, 0.0, 0.0);
        let ev = evaluate(&[det_of(&g, 1.0, 0.0)], &[g], &EvalConfig::default()).unwrap();
        assert!(ev.report.flip_bins.is_none());
    }
}
