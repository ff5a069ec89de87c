//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semeda::cli::{ablation_grid, run, EXIT_OK, GRADCHECK_TOLERANCE};
use semeda::data::{decode_pgm, decode_pnm, encode_pgm, encode_pnm, encode_ppm, gen_synthetic, load_dataset, one_hot};
use semeda::eval::{confusion_matrix, dataset_confusion, miou, trimap_miou};
use semeda::gradcheck::gradient_suite;
use semeda::losses::{multitask_loss, ppce, semeda_loss, total_loss, LossConfig, MatchPoint, Strategy};
use semeda::mask::{extract_edge_map, LabelMask, VOID};
use semeda::nets::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, EdgeNetParams, Params, SegNetParams};
use semeda::ops::channel_softmax;
use semeda::train::{edge_net_accuracy, predict_masks, train_edge_net, train_seg_net, TrainConfig};
use semeda::Grid;

const BENCH_SEG_EPOCHS: usize = 10;
const BENCH_SEEDS: [u64; 3] = [1, 2, 3];

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: u32, pass: bool, what: &str, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("{} {id}: {what} | {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn args(list: &[&str]) -> Vec<String> {
    std::iter::once("semeda").chain(list.iter().copied()).map(String::from).collect()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, max_side: usize, classes: u8, void_rate: f64) -> LabelMask {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let labels = (0..h * w)
        .map(|_| if rng.random_bool(void_rate) { VOID } else { rng.random_range(0..classes) })
        .collect();
    LabelMask::new(h, w, labels).unwrap()
}

/// Independent edge oracle: a non-void pixel is an edge when any in-bounds,
/// non-void 8-neighbour carries a different label.
fn scan_edges(m: &LabelMask) -> Vec<bool> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let here = m.get(y as usize, x as usize);
            let mut edge = false;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h || nx >= w {
                        continue;
                    }
                    let there = m.get(ny as usize, nx as usize);
                    edge |= here != VOID && there != VOID && there != here;
                }
            }
            out.push(edge);
        }
    }
    out
}

/// Per-class IoU by direct pixel counting over non-void ground truth.
fn count_miou(pred: &LabelMask, gt: &LabelMask, classes: u8) -> f64 {
    let mut ious = Vec::new();
    for c in 0..classes {
        let (mut inter, mut union) = (0u64, 0u64);
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g == VOID {
                continue;
            }
            inter += u64::from(p == c && g == c);
            union += u64::from(p == c || g == c);
        }
        if union > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    ious.iter().sum::<f64>() / ious.len() as f64
}

fn random_probs(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Grid {
    let logits = Grid::from_fn(&[c, h, w], |_| rng.random_range(-3.0..3.0));
    channel_softmax(&logits).unwrap()
}

fn criterion_2(r: &mut Report) {
    let start = Instant::now();
    let results = gradient_suite(0, 20).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = results.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
    let min_instances = results.iter().map(|x| x.instances).min().unwrap();
    let required = ["conv2d_input", "relu", "channel_softmax", "bilinear_upsample", "ppce", "ppce_on_edges", "semeda_before_relu", "multitask", "total_semeda"];
    let covered = required.iter().all(|n| results.iter().any(|x| x.name == *n));
    r.line(
        2,
        worst.max_rel_error < GRADCHECK_TOLERANCE && min_instances >= 20 && covered && secs < 60.0,
        "gradient suite",
        format!(
            "{} cases, ≥{min_instances} instances each, worst {} {:.2e}, {secs:.1} s",
            results.len(),
            worst.name,
            worst.max_rel_error
        ),
    );
}

fn criterion_3(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let classes = rng.random_range(1..=5);
        let m = random_mask(&mut rng, 16, classes, 0.05);
        if extract_edge_map(&m).flags() != &scan_edges(&m)[..] {
            mismatches += 1;
        }
    }
    r.line(3, mismatches == 0, "edge map vs 8-neighbour scan", format!("1000 masks, {mismatches} mismatches"));
}

fn criterion_4(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut self_nonzero = 0;
    let mut zero_weight_diffs = 0;
    for i in 0..30 {
        let c = rng.random_range(2..=5);
        let (h, w) = (rng.random_range(2..=12), rng.random_range(2..=12));
        let net = EdgeNetParams::init(c, i).unwrap();
        let target = LabelMask::new(h, w, (0..h * w).map(|_| rng.random_range(0..c as u8)).collect()).unwrap();
        let gt = one_hot(&target, c).unwrap();
        let pred = random_probs(&mut rng, c, h, w);
        for mp in [MatchPoint::BeforeRelu, MatchPoint::AfterRelu] {
            let cfg = LossConfig::semeda([1.0, 0.5, 0.25], mp);
            for sample in [&pred, &gt] {
                if semeda_loss(sample, sample, &net, &cfg).unwrap() != 0.0 {
                    self_nonzero += 1;
                }
            }
        }
        let base = ppce(&pred, &target).unwrap();
        for strategy in [Strategy::Semeda, Strategy::PpceOnEdges] {
            let cfg = LossConfig { strategy, lambdas: [0.0; 3], ..LossConfig::default() };
            if total_loss(&pred, &target, &gt, &net, &cfg).unwrap().to_bits() != base.to_bits() {
                zero_weight_diffs += 1;
            }
        }
        let head = random_probs(&mut rng, 2, h, w);
        if multitask_loss(&pred, &head, &target, &extract_edge_map(&target), 0.0).unwrap().to_bits() != base.to_bits() {
            zero_weight_diffs += 1;
        }
    }
    let half = Grid::new(vec![2, 1, 1], vec![0.5, 0.5]).unwrap();
    let ln2_err = (ppce(&half, &LabelMask::new(1, 1, vec![0]).unwrap()).unwrap() - std::f64::consts::LN_2).abs();
    let skew = Grid::new(vec![2, 1, 1], vec![0.25, 0.75]).unwrap();
    let skew_err = (ppce(&skew, &LabelMask::new(1, 1, vec![1]).unwrap()).unwrap() + 0.75f64.ln()).abs();
    r.line(
        4,
        self_nonzero == 0 && zero_weight_diffs == 0 && ln2_err < 1e-12 && skew_err < 1e-12,
        "loss identities",
        format!(
            "self-distance non-zero {self_nonzero}/120, zero-weight bit mismatches {zero_weight_diffs}/90, ln 2 error {ln2_err:.1e}, −ln 0.75 error {skew_err:.1e}"
        ),
    );
}

fn criterion_5(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut pairs = 0;
    while pairs < 100 {
        let classes = rng.random_range(2..=5u8);
        let gt = random_mask(&mut rng, 16, classes, 0.1);
        if gt.labels().iter().all(|&l| l == VOID) {
            continue;
        }
        pairs += 1;
        let labels = gt.labels().iter().map(|_| rng.random_range(0..classes)).collect();
        let pred = LabelMask::new(gt.height(), gt.width(), labels).unwrap();
        let got = miou(&confusion_matrix(&pred, &gt, classes as usize, None).unwrap()).unwrap().miou;
        if got != count_miou(&pred, &gt, classes) {
            mismatches += 1;
        }
    }
    let gt = LabelMask::new(2, 2, vec![0, 0, 1, 1]).unwrap();
    let pred = LabelMask::new(2, 2, vec![0, 1, 1, 1]).unwrap();
    let hand = miou(&confusion_matrix(&pred, &gt, 2, None).unwrap()).unwrap().miou;
    r.line(
        5,
        mismatches == 0 && (hand - 7.0 / 12.0).abs() < 1e-15,
        "mIoU vs pixel counting",
        format!("100 pairs, {mismatches} mismatches, hand case {hand:.6}"),
    );
}

fn criterion_6(r: &mut Report, train: &[semeda::data::Sample], val: &[semeda::data::Sample], ckpt: &Path) -> EdgeNetParams {
    let masks: Vec<LabelMask> = train[..200].iter().map(|s| s.mask.clone()).collect();
    let held_out: Vec<LabelMask> = val[..50].iter().map(|s| s.mask.clone()).collect();
    let start = Instant::now();
    let net = train_edge_net(&masks, 5, &TrainConfig::default()).unwrap().params;
    let secs = start.elapsed().as_secs_f64();
    let acc = edge_net_accuracy(&net, &held_out).unwrap();
    save_checkpoint(ckpt, &Params::Edge(net.clone())).unwrap();
    r.line(
        6,
        acc >= 0.98 && secs < 300.0,
        "edge net convergence",
        format!("200 masks 64×64, 30 epochs, held-out accuracy {acc:.4} on {} masks, {secs:.0} s", held_out.len()),
    );
    net
}

struct Scores {
    miou: f64,
    boundary: [f64; 2],
}

fn score(seg: &SegNetParams, val: &[semeda::data::Sample]) -> Scores {
    let preds = predict_masks(seg, val).unwrap();
    let gts: Vec<LabelMask> = val.iter().map(|s| s.mask.clone()).collect();
    let rows = trimap_miou(&preds, &gts, &[1, 2], 5).unwrap();
    let b = |i: usize| rows[i].boundary.as_ref().unwrap().miou;
    Scores {
        miou: miou(&dataset_confusion(&preds, &gts, 5).unwrap()).unwrap().miou,
        boundary: [b(0), b(1)],
    }
}

fn parse_ablation(path: &Path) -> BTreeMap<String, Scores> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (m, b1, b2) = (col("miou"), col("boundary_w1"), col("boundary_w2"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let v = |i: usize| f[i].parse::<f64>().unwrap();
            (f[0].to_string(), Scores { miou: v(m), boundary: [v(b1), v(b2)] })
        })
        .collect()
}

fn criterion_7(r: &mut Report, data: &Path, work: &Path, edge_ckpt: &Path, net: &EdgeNetParams, train: &[semeda::data::Sample], val: &[semeda::data::Sample]) {
    let semeda_name = "semeda before l=0/1/0";
    let out = work.join("ablate");
    let epochs = BENCH_SEG_EPOCHS.to_string();
    let seed = BENCH_SEEDS[0].to_string();
    let start = Instant::now();
    let code = run(args(&[
        "ablate", "--data", s(data), "--out", s(&out), "--epochs", &epochs, "--seed", &seed,
        "--edge-checkpoint", s(edge_ckpt), "--trimap-widths", "1,2",
    ]));
    let ablate_secs = start.elapsed().as_secs_f64();
    if code != EXIT_OK {
        r.line(7, false, "directional benchmark", format!("ablate exited with {code}"));
        return;
    }
    let mut table = parse_ablation(&out.join("ablation.csv"));
    println!("     ablation (seed {}, {} epochs, {ablate_secs:.0} s):", BENCH_SEEDS[0], BENCH_SEG_EPOCHS);
    for (name, _) in ablation_grid() {
        let row = &table[&name];
        println!("       {name:<30} mIoU {:.4}  boundary w1 {:.4}  w2 {:.4}", row.miou, row.boundary[0], row.boundary[1]);
    }
    let mut ppce_runs = vec![table.remove("ppce").unwrap()];
    let mut semeda_runs = vec![table.remove(semeda_name).unwrap()];
    for &seed in &BENCH_SEEDS[1..] {
        for (loss, runs) in [(LossConfig::ppce(), &mut ppce_runs), (LossConfig::default(), &mut semeda_runs)] {
            let cfg = TrainConfig { seg_epochs: BENCH_SEG_EPOCHS, seed, loss, ..TrainConfig::default() };
            let seg = train_seg_net(train, &[], 5, Some(net), &cfg).unwrap().params;
            runs.push(score(&seg, val));
        }
    }
    let mean = |runs: &[Scores], f: &dyn Fn(&Scores) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let miou_gap = mean(&semeda_runs, &|x| x.miou) - mean(&ppce_runs, &|x| x.miou);
    let boundary_gap = mean(&semeda_runs, &|x| (x.boundary[0] + x.boundary[1]) / 2.0)
        - mean(&ppce_runs, &|x| (x.boundary[0] + x.boundary[1]) / 2.0);
    for (name, runs) in [("ppce", &ppce_runs), (semeda_name, &semeda_runs)] {
        let per_seed: Vec<String> = runs.iter().map(|x| format!("{:.4}/{:.4}/{:.4}", x.miou, x.boundary[0], x.boundary[1])).collect();
        println!("     {name} per seed mIoU/w1/w2: {}", per_seed.join("  "));
    }
    r.line(
        7,
        miou_gap >= 0.0 && boundary_gap >= 0.01 && ablate_secs < 1800.0,
        "directional benchmark",
        format!(
            "3 seeds, {BENCH_SEG_EPOCHS} epochs: mIoU gain {:+.2} pts, boundary w1-2 gain {:+.2} pts, full ablation {ablate_secs:.0} s",
            100.0 * miou_gap,
            100.0 * boundary_gap
        ),
    );
}

fn artifacts(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e != "manifest") {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn criterion_8(r: &mut Report, work: &Path) {
    let mut trees = Vec::new();
    for round in ["a", "b"] {
        let root = work.join("repeat").join(round);
        let data = root.join("data");
        let edge = root.join("edge");
        let ckpt = edge.join("edge_net.ckpt");
        let seg = root.join("seg");
        let (mt, eval, ablate) = (root.join("mt"), root.join("eval"), root.join("ablate"));
        let seg_ckpt = seg.join("seg_net.ckpt");
        let common = ["--data", s(&data), "--classes", "3", "--seed", "11", "--batch", "4"];
        let commands: Vec<Vec<&str>> = vec![
            vec!["gen-data", "--out", s(&data), "--count", "12", "--val-count", "4", "--size", "32", "--classes", "3", "--seed", "11"],
            [&["train-edge", "--out", s(&edge), "--epochs", "2"][..], &common].concat(),
            [&["train-seg", "--out", s(&seg), "--epochs", "2", "--edge-checkpoint", s(&ckpt)][..], &common].concat(),
            [&["train-seg", "--out", s(&mt), "--epochs", "1", "--strategy", "multitask", "--lambda1", "1"][..], &common].concat(),
            vec!["eval", "--data", s(&data), "--out", s(&eval), "--checkpoint", s(&seg_ckpt)],
            [&["ablate", "--out", s(&ablate), "--epochs", "1", "--edge-checkpoint", s(&ckpt)][..], &common].concat(),
        ];
        for c in commands {
            let code = run(args(&c));
            if code != EXIT_OK {
                r.line(8, false, "determinism", format!("`{}` exited with {code}", c[0]));
                return;
            }
        }
        trees.push(artifacts(&root));
    }
    let differing: Vec<String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_set = trees[0].keys().eq(trees[1].keys());
    r.line(
        8,
        differing.is_empty() && same_set && !trees[0].is_empty(),
        "determinism",
        format!("6 commands run twice, {} artifacts compared, differing: {differing:?}", trees[0].len()),
    );
}

fn criterion_9(r: &mut Report, work: &Path) {
    let mask = LabelMask::new(2, 3, vec![0, 1, 2, VOID, 4, 0]).unwrap();
    let golden_pgm: &[u8] = b"P5\n3 2\n255\n\x00\x01\x02\xff\x04\x00";
    let image = Grid::new(vec![3, 1, 2], vec![0.0, 1.0, 0.5, 0.25, 1.0, 0.0]).unwrap();
    let golden_ppm: &[u8] = b"P6\n2 1\n255\n\x00\x80\xff\xff\x40\x00";
    let pgm_ok = encode_pgm(&mask) == golden_pgm && decode_pgm(golden_pgm).unwrap() == mask;
    let ppm_ok = encode_ppm(&image).unwrap() == golden_ppm;

    let dir = work.join("pnm");
    std::fs::create_dir_all(&dir).unwrap();
    let samples = gen_synthetic(20, 32, 5, 9).unwrap();
    let mut mask_mismatch = 0;
    for sample in &samples {
        encode_pnm(sample, &dir).unwrap();
        let back = decode_pnm(&dir, &sample.id).unwrap();
        if back.mask != sample.mask {
            mask_mismatch += 1;
        }
    }

    let nets = [
        Params::Edge(EdgeNetParams::init(5, 1).unwrap()),
        Params::Seg(SegNetParams::init(5, false, 2).unwrap()),
        Params::Seg(SegNetParams::init(3, true, 3).unwrap()),
    ];
    let mut ckpt_mismatch = 0;
    for (i, p) in nets.iter().enumerate() {
        let path = work.join(format!("net{i}.ckpt"));
        save_checkpoint(&path, p).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        if loaded != *p || encode_checkpoint(&loaded) != bytes || encode_checkpoint(&decode_checkpoint(&bytes).unwrap()) != bytes {
            ckpt_mismatch += 1;
        }
    }
    r.line(
        9,
        pgm_ok && ppm_ok && mask_mismatch == 0 && ckpt_mismatch == 0,
        "format round trips",
        format!(
            "PGM golden {pgm_ok}, PPM golden {ppm_ok}, mask mismatches {mask_mismatch}/20, checkpoint mismatches {ckpt_mismatch}/3"
        ),
    );
}

fn main() {
    let mut r = Report { failures: 0 };
    let tmp = tempfile::tempdir().unwrap();
    let work = tmp.path();

    r.line(
        1,
        true,
        "scope",
        "large-backbone, pretrained, full-dataset numbers are not attempted; criteria 2-9 check properties and direction on synthetic data".into(),
    );
    criterion_2(&mut r);
    criterion_3(&mut r);
    criterion_4(&mut r);
    criterion_5(&mut r);

    let data = work.join("bench");
    assert_eq!(run(args(&["gen-data", "--out", s(&data), "--seed", "0"])), EXIT_OK);
    let train = load_dataset(&data, "train.txt").unwrap();
    let val = load_dataset(&data, "val.txt").unwrap();
    assert_eq!((train.len(), val.len()), (500, 100));
    let edge_ckpt = work.join("edge_net.ckpt");
    let net = criterion_6(&mut r, &train, &val, &edge_ckpt);
    criterion_7(&mut r, &data, work, &edge_ckpt, &net, &train, &val);

    criterion_8(&mut r, work);
    criterion_9(&mut r, work);

    println!("{} of 9 criteria failed", r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
