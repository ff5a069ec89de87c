use std::path::Path;

use semeda::cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("semeda").chain(list.iter().copied()).map(String::from).collect()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_small(dir: &Path) {
    let code = run(args(&["gen-data", "--out", p(dir), "--count", "12", "--val-count", "4", "--size", "32", "--classes", "3", "--seed", "5"]));
    assert_eq!(code, EXIT_OK);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(args(&[])), EXIT_USAGE);
    assert_eq!(run(args(&["train-seg", "--lamda1", "2"])), EXIT_USAGE);
    assert_eq!(run(args(&["train-seg", "--match-point", "sideways"])), EXIT_USAGE);
}

#[test]
fn semeda_without_edge_checkpoint_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);
    let code = run(args(&["train-seg", "--data", p(&data), "--out", p(&tmp.path().join("run")), "--strategy", "semeda"]));
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn edge_strategy_with_zero_weights_exits_one() {
    let code = run(args(&["train-seg", "--strategy", "multitask", "--lambda1", "0", "--lambda2", "0"]));
    assert_eq!(code, EXIT_USAGE);
}

#[test]
fn eval_of_ground_truth_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);
    let out = tmp.path().join("eval");
    let code = run(args(&[
        "eval", "--data", p(&data), "--pred-dir", p(&data), "--out", p(&out), "--classes", "3", "--trimap-widths", "1,10",
    ]));
    assert_eq!(code, EXIT_OK);
    let csv = std::fs::read_to_string(out.join("eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("width,region,iou_0,iou_1,iou_2,miou"));
    for line in lines {
        assert!(line.ends_with(",1.000000"), "{line}");
    }
    assert!(std::fs::read_to_string(out.join("eval.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn missing_dataset_exits_two_after_writing_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let code = run(args(&["train-edge", "--data", p(&tmp.path().join("nowhere")), "--out", p(&out), "--seed", "9"]));
    assert_eq!(code, EXIT_DATA);
    let manifest = std::fs::read_to_string(out.join("train-edge.manifest")).unwrap();
    assert!(manifest.contains("command = train-edge"));
    assert!(manifest.contains("seed = 9"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 3\ncount = 9\nval_count = 3\nsize = 32\nclasses = 3\n").unwrap();
    let out = tmp.path().join("data");
    assert_eq!(run(args(&["gen-data", "--config", p(&cfg), "--count", "7", "--out", p(&out)])), EXIT_OK);
    let train = std::fs::read_to_string(out.join("train.txt")).unwrap();
    assert_eq!(train.lines().count(), 4);
    let manifest = std::fs::read_to_string(out.join("gen-data.manifest")).unwrap();
    assert!(manifest.contains("seed = 3") && manifest.contains("count = 7"));
}

#[test]
fn training_commands_write_checkpoints_and_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);
    let edge = tmp.path().join("edge");
    let common = ["--data", p(&data), "--classes", "3", "--epochs", "1", "--batch", "4"];
    let mut a = vec!["train-edge", "--out", p(&edge)];
    a.extend(common);
    assert_eq!(run(args(&a)), EXIT_OK);
    let ckpt = edge.join("edge_net.ckpt");
    let seg = tmp.path().join("seg");
    let mut a = vec!["train-seg", "--out", p(&seg), "--edge-checkpoint", p(&ckpt), "--strategy", "semeda", "--lambda2", "1"];
    a.extend(common);
    assert_eq!(run(args(&a)), EXIT_OK);
    let curve = std::fs::read_to_string(seg.join("seg_metrics.csv")).unwrap();
    assert!(curve.starts_with("epoch,phase,loss,val_miou,wall_seconds\n1,seg,"));
    let eval = tmp.path().join("eval");
    let code = run(args(&["eval", "--data", p(&data), "--checkpoint", p(&seg.join("seg_net.ckpt")), "--out", p(&eval)]));
    assert_eq!(code, EXIT_OK);
}

#[test]
fn gradcheck_passes() {
    assert_eq!(run(args(&["gradcheck", "--instances", "2"])), EXIT_OK);
}
