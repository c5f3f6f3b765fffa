use eiou_core::assignment::GroundTruthInstance;
use eiou_core::eval::{compare_rankings, evaluate, EvalOptions, ImageRecord};
use eiou_core::geometry::{AxisAlignedBox, ExtremePoints};
use eiou_core::postprocess::{Detection, RankingMode};
use eiou_core::scenario::{generate_scenario, ScenarioConfig};
use proptest::prelude::*;

fn gt(b: AxisAlignedBox, id: u64) -> GroundTruthInstance {
    GroundTruthInstance {
        extremes: ExtremePoints::from_box_midpoints(&b),
        bbox: b,
        category: id % 2,
        instance_id: id,
    }
}

fn det(b: AxisAlignedBox, category: u64, cls: f64) -> Detection {
    Detection::new(ExtremePoints::from_box_midpoints(&b), category, cls, 1.0).unwrap()
}

fn boxes(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<AxisAlignedBox>> {
    prop::collection::vec((0.0..80.0f64, 0.0..80.0f64, 4.0..20.0f64, 4.0..20.0f64), n).prop_map(|v| {
        v.into_iter()
            .map(|(x, y, w, h)| AxisAlignedBox::from_xywh(x, y, w, h).unwrap())
            .collect()
    })
}

/// One image; detections are jittered copies of some ground truths plus
/// strays, with confidences in (0.1, 1].
fn image() -> impl Strategy<Value = ImageRecord> {
    (
        boxes(1..8),
        boxes(0..6),
        prop::collection::vec((0usize..8, -3.0..3.0f64, -3.0..3.0f64, 0.1..=1.0f64), 0..10),
        prop::collection::vec(0.1..=1.0f64, 6),
    )
        .prop_map(|(gts, strays, hits, stray_cls)| {
            let gts: Vec<GroundTruthInstance> = gts.into_iter().enumerate().map(|(i, b)| gt(b, i as u64)).collect();
            let mut detections: Vec<Detection> = hits
                .into_iter()
                .map(|(g, dx, dy, cls)| {
                    let g = &gts[g % gts.len()];
                    let b = g.bbox;
                    det(
                        AxisAlignedBox::new(b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy).unwrap(),
                        g.category,
                        cls,
                    )
                })
                .collect();
            detections.extend(strays.into_iter().zip(stray_cls).map(|(b, c)| det(b, 0, c)));
            ImageRecord {
                image_id: 0,
                width: 100.0,
                height: 100.0,
                gts,
                detections,
            }
        })
}

fn opts() -> EvalOptions {
    EvalOptions {
        iou_thresholds: vec![0.3, 0.5, 0.75],
        mode: RankingMode::Plain,
        nms_threshold: None,
        ..Default::default()
    }
}

proptest! {
    #[test]
    fn extra_true_positive_never_lowers_ap(img in image(), g in 0usize..8, cls in 0.0..=1.0f64) {
        let g = g % img.gts.len();
        let before = evaluate(std::slice::from_ref(&img), &opts()).unwrap();
        let mut more = img.clone();
        more.detections.push(det(img.gts[g].bbox, img.gts[g].category, cls));
        let after = evaluate(&[more], &opts()).unwrap();
        for (b, a) in before.thresholds.iter().zip(&after.thresholds) {
            // Only meaningful when the new detection claims a free ground truth.
            if a.tp == b.tp + 1 {
                prop_assert!(a.ap >= b.ap - 1e-15, "{b:?} -> {a:?}");
            }
        }
    }

    #[test]
    fn trailing_false_positive_leaves_ap_unchanged(img in image()) {
        let floor = img.detections.iter().map(|d| d.cls_confidence).fold(1.0, f64::min);
        let before = evaluate(std::slice::from_ref(&img), &opts()).unwrap();
        let mut more = img.clone();
        let far = AxisAlignedBox::new(500.0, 500.0, 510.0, 510.0).unwrap();
        more.detections.push(det(far, 0, floor / 2.0));
        let after = evaluate(&[more], &opts()).unwrap();
        for (b, a) in before.thresholds.iter().zip(&after.thresholds) {
            prop_assert_eq!(a.ap, b.ap);
            prop_assert_eq!(a.fp, b.fp + 1);
        }
    }

    #[test]
    fn unit_eiou_scores_make_guided_equal_plain(seed in 0u64..1000) {
        let cfg: ScenarioConfig = serde_json::from_str(r#"{"kind": "noisy", "num_images": 3}"#).unwrap();
        let mut scenario = generate_scenario(&cfg, seed).unwrap();
        for img in &mut scenario.images {
            for d in &mut img.detections {
                d.eiou_score = 1.0;
            }
        }
        let report = compare_rankings(&scenario, &[0.5, 0.75], 0.6).unwrap();
        let plain = report.report(RankingMode::Plain);
        let guided = report.report(RankingMode::EiouGuided);
        prop_assert_eq!(&plain.thresholds, &guided.thresholds);
        prop_assert_eq!((plain.num_gt, plain.num_detections), (guided.num_gt, guided.num_detections));
    }
}

#[test]
fn noiseless_single_detections_are_perfect_in_every_mode() {
    let cfg: ScenarioConfig = serde_json::from_str(
        r#"{"kind": "noisy", "num_images": 4, "detections_per_gt": 1, "false_positives_per_image": 0,
            "translation_sigma": 0.0, "jitter_sigma": 0.0, "shear": 0.0}"#,
    )
    .unwrap();
    let report = compare_rankings(&generate_scenario(&cfg, 3).unwrap(), &[0.5, 0.75], 0.6).unwrap();
    for r in &report.reports {
        for t in &r.thresholds {
            assert_eq!(t.ap, 1.0, "{:?}", r.mode);
        }
    }
}
