//! Command-line front end.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{decode_pgm, gen_synthetic, load_dataset, write_dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{dataset_confusion, miou, metrics_csv, trimap_miou};
use crate::gradcheck::{gradient_suite, SUITE_EPS};
use crate::losses::{LossConfig, MatchPoint, Strategy};
use crate::mask::LabelMask;
use crate::nets::{load_checkpoint, save_checkpoint, EdgeNetParams, Params};
use crate::plot::miou_width_svg;
use crate::train::{edge_net_accuracy, history_csv, predict_masks, train_edge_net, train_seg_net};

/// Relative error above which `gradcheck` fails.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "semeda", version, about = "Edge-aware segmentation losses: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Shared {
    /// `key = value` configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Dataset directory.
    #[arg(long, default_value = "data")]
    data: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    /// `before` or `after` the ReLU.
    #[arg(long)]
    match_point: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    edge_checkpoint: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic shapes dataset.
    GenData {
        #[command(flatten)]
        shared: Shared,
        /// Total samples, train and validation together.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        val_count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Phase 1: train the edge net on perturbed training masks.
    TrainEdge {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Phase 2: train the segmentation net with the edge net frozen.
    TrainSeg {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Score a segmentation checkpoint (or saved predictions) on the validation split.
    Eval {
        #[command(flatten)]
        shared: Shared,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated band widths, e.g. `1,2,5,10`.
        #[arg(long)]
        trimap_widths: Option<String>,
        /// Directory of `mask_<id>.pgm` predictions to score instead of a checkpoint.
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Train every loss configuration of the ablation grid in turn.
    Ablate {
        #[command(flatten)]
        shared: Shared,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long)]
        trimap_widths: Option<String>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
}

/// Exit code for a library error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Numeric(_) => EXIT_NUMERIC,
        Error::Shape(_) | Error::Format { .. } | Error::Data(_) | Error::Io { .. } => EXIT_DATA,
    }
}

/// Which phase `--epochs` and `--lr` address.
#[derive(Clone, Copy)]
enum PhaseKeys {
    Edge,
    Seg,
}

fn resolve(shared: &Shared, train: Option<(&TrainFlags, PhaseKeys)>, extra: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let mut cfg = match &shared.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut pairs: Vec<(&str, Option<String>)> = vec![("seed", shared.seed.map(|s| s.to_string()))];
    if let Some((t, phase)) = train {
        let (epochs, lr) = match phase {
            PhaseKeys::Edge => ("edge_epochs", "edge_lr"),
            PhaseKeys::Seg => ("seg_epochs", "seg_lr"),
        };
        let s = |v: Option<f64>| v.map(|x| x.to_string());
        pairs.extend([
            (epochs, t.epochs.map(|e| e.to_string())),
            ("batch", t.batch.map(|b| b.to_string())),
            (lr, s(t.lr)),
            ("strategy", t.strategy.clone()),
            ("lambda1", s(t.lambda1)),
            ("lambda2", s(t.lambda2)),
            ("lambda3", s(t.lambda3)),
            ("match_point", t.match_point.clone()),
            ("sigma", s(t.sigma)),
            ("edge_checkpoint", t.edge_checkpoint.as_ref().map(|p| p.display().to_string())),
            ("classes", t.classes.map(|c| c.to_string())),
        ]);
    }
    pairs.extend(extra.iter().cloned());
    for (k, v) in pairs {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Everything needed to repeat a run, written before any computation.
struct RunManifest<'a> {
    command: &'a str,
    argv: &'a [String],
    config: &'a RunConfig,
    outputs: Vec<PathBuf>,
}

impl RunManifest<'_> {
    fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let mut text = String::new();
        let _ = writeln!(text, "command = {}", self.command);
        let _ = writeln!(text, "argv = {}", self.argv.join(" "));
        let _ = writeln!(text, "seed = {}", self.config.train.seed);
        let _ = writeln!(text, "started_unix = {started}");
        for o in &self.outputs {
            let _ = writeln!(text, "output = {}", o.display());
        }
        text.push_str("\n[config]\n");
        text.push_str(&self.config.to_text());
        let path = dir.join(format!("{}.manifest", self.command));
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn masks(samples: &[Sample]) -> Vec<LabelMask> {
    samples.iter().map(|s| s.mask.clone()).collect()
}

fn load_edge_net(cfg: &RunConfig) -> Result<Option<EdgeNetParams>> {
    match &cfg.edge_checkpoint {
        Some(p) => Ok(Some(load_checkpoint(p)?.into_edge()?)),
        None if cfg.train.loss.strategy.needs_edge_net() => Err(Error::InvalidArgument(format!(
            "strategy `{}` needs --edge-checkpoint",
            cfg.train.loss.strategy
        ))),
        None => Ok(None),
    }
}

fn check_edge_weights(loss: &LossConfig) -> Result<()> {
    if loss.strategy != Strategy::Ppce && !loss.has_edge_weight() {
        return Err(Error::InvalidArgument(format!(
            "strategy `{}` needs a positive lambda",
            loss.strategy
        )));
    }
    Ok(())
}

fn cmd_gen_data(argv: &[String], shared: &Shared, extra: &[(&str, Option<String>)]) -> Result<()> {
    let cfg = resolve(shared, None, extra)?;
    if cfg.val_count >= cfg.count {
        return Err(Error::InvalidArgument(format!(
            "val_count {} leaves no training samples out of {}",
            cfg.val_count, cfg.count
        )));
    }
    RunManifest {
        command: "gen-data",
        argv,
        config: &cfg,
        outputs: vec![shared.out.clone()],
    }
    .write(&shared.out)?;
    let mut samples = gen_synthetic(cfg.count, cfg.size, cfg.classes, cfg.train.seed)?;
    let val = samples.split_off(cfg.count - cfg.val_count);
    write_dataset(&shared.out, &samples, &val)?;
    println!("wrote {} train and {} val samples to {}", samples.len(), val.len(), shared.out.display());
    Ok(())
}

fn cmd_train_edge(argv: &[String], shared: &Shared, flags: &TrainFlags) -> Result<()> {
    let cfg = resolve(shared, Some((flags, PhaseKeys::Edge)), &[])?;
    let ckpt = shared.out.join("edge_net.ckpt");
    let csv = shared.out.join("edge_metrics.csv");
    RunManifest {
        command: "train-edge",
        argv,
        config: &cfg,
        outputs: vec![ckpt.clone(), csv.clone()],
    }
    .write(&shared.out)?;
    let train = load_dataset(&shared.data, "train.txt")?;
    let val = load_dataset(&shared.data, "val.txt")?;
    let out = train_edge_net(&masks(&train), cfg.classes, &cfg.train)?;
    save_checkpoint(&ckpt, &Params::Edge(out.params.clone()))?;
    write_file(&csv, history_csv(&out.history))?;
    if !val.is_empty() {
        println!("held-out edge accuracy {:.6}", edge_net_accuracy(&out.params, &masks(&val))?);
    }
    Ok(())
}

fn cmd_train_seg(argv: &[String], shared: &Shared, flags: &TrainFlags) -> Result<()> {
    let cfg = resolve(shared, Some((flags, PhaseKeys::Seg)), &[])?;
    check_edge_weights(&cfg.train.loss)?;
    let edge_net = load_edge_net(&cfg)?;
    let ckpt = shared.out.join("seg_net.ckpt");
    let csv = shared.out.join("seg_metrics.csv");
    RunManifest {
        command: "train-seg",
        argv,
        config: &cfg,
        outputs: vec![ckpt.clone(), csv.clone()],
    }
    .write(&shared.out)?;
    let train = load_dataset(&shared.data, "train.txt")?;
    let val = load_dataset(&shared.data, "val.txt")?;
    let out = train_seg_net(&train, &val, cfg.classes, edge_net.as_ref(), &cfg.train)?;
    save_checkpoint(&ckpt, &Params::Seg(out.params))?;
    write_file(&csv, history_csv(&out.history))?;
    if let Some(last) = out.history.last() {
        println!("epoch {} loss {:.6} val mIoU {}", last.epoch, last.loss, last.val_miou.map(|m| format!("{m:.6}")).unwrap_or_default());
    }
    Ok(())
}

fn cmd_eval(argv: &[String], shared: &Shared, checkpoint: Option<&Path>, pred_dir: Option<&Path>, extra: &[(&str, Option<String>)]) -> Result<()> {
    let mut cfg = resolve(shared, None, extra)?;
    if let Some(c) = checkpoint {
        cfg.checkpoint = Some(c.to_path_buf());
    }
    let csv = shared.out.join("eval.csv");
    let svg = shared.out.join("eval.svg");
    if cfg.checkpoint.is_none() && pred_dir.is_none() {
        return Err(Error::InvalidArgument("eval needs --checkpoint or --pred-dir".into()));
    }
    RunManifest {
        command: "eval",
        argv,
        config: &cfg,
        outputs: vec![csv.clone(), svg.clone()],
    }
    .write(&shared.out)?;
    let val = load_dataset(&shared.data, "val.txt")?;
    if val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let (preds, classes) = match pred_dir {
        Some(dir) => {
            let preds = val
                .iter()
                .map(|s| {
                    let path = dir.join(format!("mask_{}.pgm", s.id));
                    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    decode_pgm(&bytes).map_err(|e| Error::Data(format!("prediction `{}`: {e}", s.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            (preds, cfg.classes)
        }
        None => {
            let path = cfg.checkpoint.as_ref().expect("checked above");
            let seg = load_checkpoint(path)?.into_seg()?;
            (predict_masks(&seg, &val)?, seg.classes())
        }
    };
    let gts = masks(&val);
    let overall = miou(&dataset_confusion(&preds, &gts, classes)?)?;
    let rows = trimap_miou(&preds, &gts, &cfg.trimap_widths, classes)?;
    write_file(&csv, metrics_csv(&overall, &rows, classes))?;
    write_file(&svg, miou_width_svg(&rows, overall.miou))?;
    println!("mIoU {:.6}", overall.miou);
    Ok(())
}

/// The loss configurations compared by `ablate`, with their row labels.
pub fn ablation_grid() -> Vec<(String, LossConfig)> {
    let mut grid = vec![("ppce".to_string(), LossConfig::ppce())];
    for l in [1.0, 0.5, 5.0] {
        grid.push((format!("multitask l1={l}"), LossConfig::edge_term(Strategy::Multitask, l)));
    }
    for l in [1.0, 5.0] {
        grid.push((format!("ppce_on_edges l1={l}"), LossConfig::edge_term(Strategy::PpceOnEdges, l)));
    }
    let after: [[f64; 3]; 2] = [[1.0, 0.0, 0.0], [0.0, 0.5, 0.0]];
    let before: [[f64; 3]; 6] = [
        [1.0, 0.0, 0.0],
        [0.5, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.5, 0.25],
        [0.25, 0.5, 1.0],
    ];
    for (mp, sets) in [(MatchPoint::AfterRelu, &after[..]), (MatchPoint::BeforeRelu, &before[..])] {
        for l in sets {
            grid.push((
                format!("semeda {mp} l={}/{}/{}", l[0], l[1], l[2]),
                LossConfig::semeda(*l, mp),
            ));
        }
    }
    grid
}

fn cmd_ablate(argv: &[String], shared: &Shared, flags: &TrainFlags, extra: &[(&str, Option<String>)]) -> Result<()> {
    let cfg = resolve(shared, Some((flags, PhaseKeys::Seg)), extra)?;
    let csv = shared.out.join("ablation.csv");
    let edge_ckpt = shared.out.join("edge_net.ckpt");
    RunManifest {
        command: "ablate",
        argv,
        config: &cfg,
        outputs: vec![csv.clone(), edge_ckpt.clone()],
    }
    .write(&shared.out)?;
    let train = load_dataset(&shared.data, "train.txt")?;
    let val = load_dataset(&shared.data, "val.txt")?;
    if val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let edge_net = match &cfg.edge_checkpoint {
        Some(p) => load_checkpoint(p)?.into_edge()?,
        None => {
            let net = train_edge_net(&masks(&train), cfg.classes, &cfg.train)?.params;
            save_checkpoint(&edge_ckpt, &Params::Edge(net.clone()))?;
            net
        }
    };
    let gts = masks(&val);
    let mut out = String::from("config,strategy,lambda1,lambda2,lambda3,match_point,final_loss,miou");
    for w in &cfg.trimap_widths {
        let _ = write!(out, ",boundary_w{w}");
    }
    out.push('\n');
    for (name, loss) in ablation_grid() {
        let mut train_cfg = cfg.train.clone();
        train_cfg.loss = LossConfig {
            reduction: cfg.train.loss.reduction,
            distance: cfg.train.loss.distance,
            layer3: cfg.train.loss.layer3,
            void_id: cfg.train.loss.void_id,
            ..loss
        };
        let run = train_seg_net(&train, &[], cfg.classes, Some(&edge_net), &train_cfg)?;
        let preds = predict_masks(&run.params, &val)?;
        let overall = miou(&dataset_confusion(&preds, &gts, cfg.classes)?)?;
        let rows = trimap_miou(&preds, &gts, &cfg.trimap_widths, cfg.classes)?;
        let l = &train_cfg.loss;
        let _ = write!(
            out,
            "{name},{},{},{},{},{},{},{:.6}",
            l.strategy,
            l.lambdas[0],
            l.lambdas[1],
            l.lambdas[2],
            l.match_point,
            run.history.last().map(|r| r.loss.to_string()).unwrap_or_default(),
            overall.miou
        );
        for r in &rows {
            let _ = write!(out, ",{}", r.boundary.as_ref().map(|b| format!("{:.6}", b.miou)).unwrap_or_default());
        }
        out.push('\n');
        println!("{name}: mIoU {:.6}", overall.miou);
        // Rewritten after every configuration so partial sweeps keep their rows.
        write_file(&csv, &out)?;
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize) -> Result<()> {
    if instances == 0 {
        return Err(Error::InvalidArgument("--instances must be at least 1".into()));
    }
    let results = gradient_suite(seed, instances)?;
    println!("{:<26} {:>9} {:>14}", "case", "instances", "max_rel_error");
    let mut worst: Option<(&str, f64)> = None;
    for r in &results {
        println!("{:<26} {:>9} {:>14.3e}", r.name, r.instances, r.max_rel_error);
        if r.max_rel_error >= GRADCHECK_TOLERANCE && worst.is_none_or(|(_, e)| r.max_rel_error > e) {
            worst = Some((r.name, r.max_rel_error));
        }
    }
    println!("step {SUITE_EPS:e}, tolerance {GRADCHECK_TOLERANCE:e}");
    match worst {
        Some((name, err)) => Err(Error::Numeric(format!(
            "gradient check failed: `{name}` relative error {err:.3e} ≥ {GRADCHECK_TOLERANCE:e}"
        ))),
        None => Ok(()),
    }
}

fn limit_threads() {
    if let Some(n) = std::env::var("SEMEDA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A pool built earlier in the process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs the command line `argv` (program name first) and returns the process
/// exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    limit_threads();
    let opt = |v: Option<usize>| v.map(|x| x.to_string());
    let result = match &cli.command {
        Command::GenData { shared, count, val_count, size, classes } => cmd_gen_data(
            &argv,
            shared,
            &[("count", opt(*count)), ("val_count", opt(*val_count)), ("size", opt(*size)), ("classes", opt(*classes))],
        ),
        Command::TrainEdge { shared, train } => cmd_train_edge(&argv, shared, train),
        Command::TrainSeg { shared, train } => cmd_train_seg(&argv, shared, train),
        Command::Eval { shared, checkpoint, trimap_widths, pred_dir, classes } => cmd_eval(
            &argv,
            shared,
            checkpoint.as_deref(),
            pred_dir.as_deref(),
            &[("trimap_widths", trimap_widths.clone()), ("classes", opt(*classes))],
        ),
        Command::Ablate { shared, train, trimap_widths } => {
            cmd_ablate(&argv, shared, train, &[("trimap_widths", trimap_widths.clone())])
        }
        Command::Gradcheck { seed, instances } => cmd_gradcheck(*seed, *instances),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
