use orient_core::geom::{foe, hoe, rotated_iou};
use orient_core::losses::{loss_flipped, loss_full, loss_half, half_params_from_full, SinCosPair};
use orient_core::metrics::{average_orientation_similarity, average_precision, pr_curve, ApInterpolation};
use orient_core::synth::{generate_dataset, perturb_detections};
use orient_core::{Angle, GtOrientationTrack, OrientedBox, PerturbConfig, SceneConfig, SmoothL1};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = OrientedBox> {
    (-3.0..3.0f64, -3.0..3.0f64, 0.5..6.0f64, 0.5..3.0f64, -180.0..180.0f64)
        .prop_map(|(x, y, l, w, yaw)| OrientedBox::new(x, y, l, w, Angle::from_degrees(yaw)).unwrap())
}

fn moved(b: &OrientedBox, dx: f64, dy: f64, rot_deg: f64) -> OrientedBox {
    let (s, c) = rot_deg.to_radians().sin_cos();
    OrientedBox::new(
        c * b.cx - s * b.cy + dx,
        s * b.cx + c * b.cy + dy,
        b.length,
        b.width,
        Angle::from_degrees(b.yaw.degrees() + rot_deg),
    )
    .unwrap()
}

/// Stratified sampling over the bounding square of the first box.
fn grid_iou(a: &OrientedBox, b: &OrientedBox, n: usize) -> f64 {
    let r = 0.5 * a.length.hypot(a.width);
    let cell = 2.0 * r / n as f64;
    let mut both = 0usize;
    for i in 0..n {
        for j in 0..n {
            let p = orient_core::Point2::new(
                a.cx - r + (i as f64 + 0.5) * cell,
                a.cy - r + (j as f64 + 0.5) * cell,
            );
            if a.contains(p) && b.contains(p) {
                both += 1;
            }
        }
    }
    let inter = both as f64 * cell * cell;
    inter / (a.area() + b.area() - inter)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = rotated_iou(&a, &b).unwrap();
        let ba = rotated_iou(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn iou_is_rigid_invariant(a in arb_box(), b in arb_box(), dx in -50.0..50.0f64, dy in -50.0..50.0f64, r in -180.0..180.0f64) {
        let before = rotated_iou(&a, &b).unwrap();
        let after = rotated_iou(&moved(&a, dx, dy, r), &moved(&b, dx, dy, r)).unwrap();
        prop_assert!((before - after).abs() < 1e-9);
    }

    #[test]
    fn iou_matches_area_sampling(a in arb_box(), b in arb_box()) {
        let exact = rotated_iou(&a, &b).unwrap();
        prop_assert!((exact - grid_iou(&a, &b, 300)).abs() < 0.01);
    }

    #[test]
    fn orientation_errors_are_symmetric_and_ordered(x in -720.0..720.0f64, y in -720.0..720.0f64) {
        let (a, b) = (Angle::from_degrees(x), Angle::from_degrees(y));
        let f = foe(a, b).unwrap();
        prop_assert!((f - foe(b, a).unwrap()).abs() < 1e-9);
        prop_assert!(hoe(a, b).unwrap() <= f + 1e-9);
        prop_assert!((0.0..=180.0).contains(&f));
    }

    #[test]
    fn min_of_full_and_flipped_is_antipodal(s in -2.0..2.0f64, c in -2.0..2.0f64, yaw in -180.0..180.0f64) {
        let l1 = SmoothL1::default();
        let gt = GtOrientationTrack::constant(Angle::from_degrees(yaw), 1).unwrap();
        let m = |s: f64, c: f64| {
            let p = [SinCosPair::new(s, c)];
            loss_full(l1, &p, &gt).unwrap().total.min(loss_flipped(l1, &p, &gt).unwrap().total)
        };
        prop_assert!((m(s, c) - m(-s, -c)).abs() < 1e-12);
    }

    #[test]
    fn half_loss_has_period_180(yaw in -180.0..180.0f64, pred in -180.0..180.0f64) {
        let l1 = SmoothL1::default();
        let (s, c) = pred.to_radians().sin_cos();
        let (s2, c2) = half_params_from_full(s, c);
        let p = [SinCosPair::new(s2, c2)];
        let a = GtOrientationTrack::constant(Angle::from_degrees(yaw), 1).unwrap();
        let b = GtOrientationTrack::constant(Angle::from_degrees(yaw + 180.0), 1).unwrap();
        prop_assert!((loss_half(l1, &p, &a).unwrap().total - loss_half(l1, &p, &b).unwrap().total).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn aos_bounded_by_ap_and_ap_invariant_to_score_rescaling(
        seed in 0u64..1000,
        flip in 0.0..1.0f64,
        fp in 0.0..0.5f64,
        fn_rate in 0.0..0.5f64,
        pos in 0.0..0.6f64,
    ) {
        let scene = SceneConfig { frames: 3, actors_per_frame: 10, seed, ..SceneConfig::default() };
        let gts: Vec<_> = generate_dataset(&scene).unwrap().actors.into_iter().map(|a| a.gt).collect();
        let cfg = PerturbConfig { pos_sigma: pos, yaw_sigma_deg: 10.0, flip_fraction: flip, fp_rate: fp, fn_rate, seed };
        let dets = perturb_detections(&gts, &cfg).unwrap();
        for mode in [ApInterpolation::AllPoint, ApInterpolation::Recall40] {
            let curve = pr_curve(&dets, &gts, 0.7).unwrap();
            let ap = average_precision(&curve, mode);
            prop_assert!(average_orientation_similarity(&curve, mode) <= ap + 1e-12);
            let mut rescaled = dets.clone();
            rescaled.iter_mut().for_each(|d| d.score = (3.0 * d.score).exp());
            let ap2 = average_precision(&pr_curve(&rescaled, &gts, 0.7).unwrap(), mode);
            prop_assert!((ap - ap2).abs() < 1e-12);
        }
    }
}
