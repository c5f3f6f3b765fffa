use std::path::Path;
use std::process::{Command, Output};

fn eiou(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eiou")).args(args).output().unwrap()
}

fn lines(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const ANNOTATIONS: &str = r#"{
  "images": [{"id": 1, "width": 64, "height": 48, "file_name": "a.jpg"}],
  "categories": [{"id": 1, "name": "tri"}],
  "annotations": [
    {"id": 5, "image_id": 1, "category_id": 1, "bbox": [0, 0, 40, 30],
     "segmentation": [[0, 0, 40, 0, 20, 30]], "iscrowd": 0},
    {"id": 6, "image_id": 1, "category_id": 1, "bbox": [0, 0, 4, 4],
     "segmentation": {"counts": [1], "size": [48, 64]}, "iscrowd": 0}
  ]
}"#;

#[test]
fn extract_applies_tie_rule_and_skips_rle() {
    let dir = tempfile::tempdir().unwrap();
    let out = eiou(&["extract", &write(dir.path(), "a.json", ANNOTATIONS)]);
    assert!(out.status.success());
    let recs = lines(&out);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0]["instance_id"], 5);
    assert_eq!(
        recs[0]["extremes"],
        serde_json::json!([0.0, 0.0, 20.0, 0.0, 40.0, 0.0, 20.0, 30.0])
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 RLE"));
}

#[test]
fn assign_reports_positives_inside_the_box() {
    let dir = tempfile::tempdir().unwrap();
    let out = eiou(&["assign", &write(dir.path(), "a.json", ANNOTATIONS), "--strides", "8,16"]);
    assert!(out.status.success());
    let recs = lines(&out);
    assert!(!recs.is_empty());
    for r in recs {
        let (x, y) = (r["x"].as_f64().unwrap(), r["y"].as_f64().unwrap());
        assert!((0.0..=40.0).contains(&x) && (0.0..=30.0).contains(&y));
        assert_eq!(r["instance_id"], 5);
    }
}

#[test]
fn eval_eiou_pairs_lines_and_summarises() {
    let dir = tempfile::tempdir().unwrap();
    let gt = write(
        dir.path(),
        "gt.jsonl",
        "{\"extremes\": [0, 0.5, 0.5, 0, 1, 0.5, 0.5, 1]}\n",
    );
    let pred = write(
        dir.path(),
        "pred.jsonl",
        "{\"extremes\": [0.5, 0.5, 1, 0, 1.5, 0.5, 1, 1]}\n",
    );
    let out = eiou(&["eval-eiou", &gt, &pred]);
    assert!(out.status.success());
    let recs = lines(&out);
    assert_eq!(recs.len(), 2);
    assert!((recs[0]["eiou"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(recs[1]["pairs"], 1);
}

#[test]
fn nms_keeps_the_better_ranked_duplicate() {
    let dir = tempfile::tempdir().unwrap();
    let dets = write(
        dir.path(),
        "d.jsonl",
        concat!(
            "{\"image_id\": 1, \"category_id\": 0, \"cls_confidence\": 0.9, \"eiou_score\": 0.3, \"extremes\": [0, 5, 5, 0, 10, 5, 5, 10]}\n",
            "{\"image_id\": 1, \"category_id\": 0, \"cls_confidence\": 0.6, \"eiou_score\": 0.9, \"extremes\": [0, 5, 5, 0, 10.5, 5, 5, 10]}\n",
        ),
    );
    let plain = lines(&eiou(&["nms", &dets, "--mode", "plain"]));
    let guided = lines(&eiou(&["nms", &dets, "--mode", "eiou"]));
    assert_eq!((plain.len(), guided.len()), (1, 1));
    assert_eq!(plain[0]["cls_confidence"], 0.9);
    assert_eq!(guided[0]["cls_confidence"], 0.6);
    // Center-ness ranking needs a score or location on every record.
    assert_eq!(eiou(&["nms", &dets, "--mode", "centerness"]).status.code(), Some(1));
}

#[test]
fn input_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.jsonl", "{\"extremes\": [1, 0, 0, 0, 0, 0, 0, 0]}\n");
    assert_eq!(eiou(&["eval-eiou", &bad, &bad]).status.code(), Some(1));
    assert_eq!(eiou(&["extract", "/nonexistent.json"]).status.code(), Some(1));
    let short = write(dir.path(), "one.jsonl", "{\"extremes\": [0, 0, 0, 0, 0, 0, 0, 0]}\n");
    let empty = write(dir.path(), "empty.jsonl", "");
    assert_eq!(eiou(&["eval-eiou", &short, &empty]).status.code(), Some(1));
    let ann = write(dir.path(), "a.json", ANNOTATIONS);
    assert_eq!(eiou(&["assign", &ann, "--strides", "16,8"]).status.code(), Some(1));
}

#[test]
fn failed_gradient_check_exits_with_two() {
    let ok = eiou(&["grad-check", "--trials", "20", "--seed", "3"]);
    assert!(ok.status.success());
    assert_eq!(lines(&ok)[0]["passed"], true);
    let strict = eiou(&["grad-check", "--trials", "20", "--seed", "3", "--tolerance", "1e-30"]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn compare_reports_every_mode() {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/misaligned.json");
    let out = eiou(&["compare", cfg.to_str().unwrap(), "--seed", "1"]);
    assert!(out.status.success());
    let report = &lines(&out)[0];
    assert_eq!(report["reports"].as_array().unwrap().len(), 3);
    assert_eq!(report["ordering"][1]["iou_threshold"], 0.75);
}
