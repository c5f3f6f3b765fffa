use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use eiou_core::assignment::{assign, levels_for_strides};
use eiou_core::eval::{compare_rankings, DEFAULT_AP_THRESHOLDS};
use eiou_core::extraction::{extract_extremes, load_annotations, PolygonMask};
use eiou_core::geometry::{eiou, ExtremePoints, Point};
use eiou_core::gradcheck;
use eiou_core::loss::{eiou_loss, eiou_loss_grad};
use eiou_core::postprocess::{NmsConfig, RankingMode, DEFAULT_IOU_THRESHOLD, DEFAULT_SCORE_THRESHOLD};
use eiou_core::records::{read_jsonl, write_jsonl, DetectionRecord, ExtremesRecord, TargetRecord};
use eiou_core::scenario::{generate_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "eiou", version, about = "Extreme-point detection geometry tools")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs). Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extreme points of every polygon instance in a COCO annotation file.
    Extract {
        annotations: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dynamic-radius positive samples for every image.
    Assign {
        annotations: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
        strides: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also emit negative locations.
        #[arg(long)]
        all: bool,
    },
    /// EIoU between line-aligned ground-truth and predicted extremes.
    EvalEiou {
        gt: PathBuf,
        pred: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-image, per-category non-maximum suppression of a detection dump.
    Nms {
        dets: PathBuf,
        #[arg(long, default_value = "eiou")]
        mode: RankingMode,
        #[arg(long = "iou-thr", default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou_thr: f64,
        #[arg(long = "score-thr", default_value_t = DEFAULT_SCORE_THRESHOLD)]
        score_thr: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic loss gradients with central finite differences.
    GradCheck {
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Largest acceptable per-component error.
        #[arg(long, default_value_t = gradcheck::GRAD_TOLERANCE)]
        tolerance: f64,
    },
    /// Throughput of the metric, loss and gradient on random pairs.
    Bench {
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate plain, center-ness and EIoU-guided NMS on a synthetic scenario.
    Compare {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_AP_THRESHOLDS.to_vec())]
        thresholds: Vec<f64>,
        #[arg(long = "nms-thr", default_value_t = DEFAULT_IOU_THRESHOLD)]
        nms_thr: f64,
    },
    /// Write a synthetic scenario as ground-truth and detection dumps.
    Scenario {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        gts_out: PathBuf,
        #[arg(long)]
        dets_out: PathBuf,
    },
}

/// A command either completes or reports a failed check (exit code 2).
enum Outcome {
    Done,
    CheckFailed(String),
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_records<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_jsonl(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn emit<T: Serialize>(out: Option<&Path>, items: &[T]) -> Result<()> {
    let mut w = open_out(out)?;
    write_jsonl(&mut w, items)?;
    w.flush()?;
    Ok(())
}

fn cmd_extract(annotations: &Path, out: Option<&Path>) -> Result<Outcome> {
    let set = load_annotations(annotations)?;
    let records = set
        .instances
        .par_iter()
        .map(|inst| {
            let e = inst.extremes().with_context(|| format!("annotation {}", inst.id))?;
            Ok(ExtremesRecord {
                image_id: inst.image_id,
                category_id: inst.category_id,
                instance_id: inst.id,
                extremes: e.to_array(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if set.skipped_rle + set.skipped_crowd > 0 {
        eprintln!(
            "skipped {} RLE and {} crowd annotations",
            set.skipped_rle, set.skipped_crowd
        );
    }
    emit(out, &records)?;
    Ok(Outcome::Done)
}

fn cmd_assign(annotations: &Path, strides: &[f64], out: Option<&Path>, all: bool) -> Result<Outcome> {
    let set = load_annotations(annotations)?;
    let levels = levels_for_strides(strides)?;
    let per_image = set
        .images
        .par_iter()
        .map(|img| {
            let gts = set
                .instances_for(img.id)
                .map(|i| i.to_ground_truth().with_context(|| format!("annotation {}", i.id)))
                .collect::<Result<Vec<_>>>()?;
            let targets = assign(&gts, f64::from(img.width), f64::from(img.height), &levels);
            Ok(targets
                .iter()
                .filter(|t| all || t.positive)
                .map(|t| TargetRecord::from_target(img.id, t, t.gt_index.map(|g| gts[g].instance_id)))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    emit(out, &per_image.concat())?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct PairLine {
    index: usize,
    image_id: u64,
    instance_id: u64,
    rect_iou: f64,
    cos_sim: f64,
    eiou: f64,
}

#[derive(Serialize)]
struct PairSummary {
    pairs: usize,
    mean_rect_iou: f64,
    mean_cos_sim: f64,
    mean_eiou: f64,
}

fn cmd_eval_eiou(gt: &Path, pred: &Path, out: Option<&Path>) -> Result<Outcome> {
    let gts: Vec<ExtremesRecord> = read_records(gt)?;
    let preds: Vec<ExtremesRecord> = read_records(pred)?;
    if gts.len() != preds.len() {
        bail!("{} ground-truth lines but {} prediction lines", gts.len(), preds.len());
    }
    let lines = gts
        .par_iter()
        .zip(&preds)
        .enumerate()
        .map(|(index, (g, p))| {
            let ge =
                ExtremePoints::from_array(g.extremes).with_context(|| format!("ground truth line {}", index + 1))?;
            let pe = ExtremePoints::from_array(p.extremes).with_context(|| format!("prediction line {}", index + 1))?;
            let b = eiou(&ge, &pe);
            Ok(PairLine {
                index,
                image_id: g.image_id,
                instance_id: g.instance_id,
                rect_iou: b.rect_iou,
                cos_sim: b.cos_sim,
                eiou: b.eiou,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = lines.len().max(1) as f64;
    let summary = PairSummary {
        pairs: lines.len(),
        mean_rect_iou: lines.iter().map(|l| l.rect_iou).sum::<f64>() / n,
        mean_cos_sim: lines.iter().map(|l| l.cos_sim).sum::<f64>() / n,
        mean_eiou: lines.iter().map(|l| l.eiou).sum::<f64>() / n,
    };
    let mut w = open_out(out)?;
    write_jsonl(&mut w, &lines)?;
    write_jsonl(&mut w, &[summary])?;
    w.flush()?;
    Ok(Outcome::Done)
}

fn cmd_nms(dets: &Path, config: NmsConfig, out: Option<&Path>) -> Result<Outcome> {
    let records: Vec<DetectionRecord> = read_records(dets)?;
    let mut order: Vec<u64> = Vec::new();
    let mut groups: HashMap<u64, Vec<_>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let d = r.to_detection().with_context(|| format!("detection line {}", i + 1))?;
        groups
            .entry(r.image_id)
            .or_insert_with(|| {
                order.push(r.image_id);
                Vec::new()
            })
            .push(d);
    }
    let kept = order
        .par_iter()
        .map(|id| {
            let k = config.run(&groups[id])?;
            Ok(k.iter()
                .map(|d| DetectionRecord::from_detection(*id, d))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    emit(out, &kept.concat())?;
    Ok(Outcome::Done)
}

fn cmd_grad_check(trials: usize, seed: u64, tolerance: f64) -> Result<Outcome> {
    let report = gradcheck::run(trials, seed, tolerance);
    emit(None, &[&report])?;
    Ok(if report.passed {
        Outcome::Done
    } else {
        Outcome::CheckFailed(format!(
            "max relative gradient error {:e} exceeds {:e}",
            report.max_rel_error, tolerance
        ))
    })
}

fn bench_quad(rng: &mut ChaCha8Rng) -> ExtremePoints {
    let (cx, cy) = (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
    let scale = rng.random_range(5.0..40.0);
    let vertices = (0..4)
        .map(|k| {
            let a = std::f64::consts::FRAC_PI_2 * k as f64 + rng.random_range(-0.6..0.6);
            let r = scale * rng.random_range(0.5..1.5);
            Point::new(cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    extract_extremes(&PolygonMask::new(vertices)).expect("finite vertices")
}

#[derive(Serialize)]
struct BenchLine {
    n: usize,
    seed: u64,
    mean_eiou: f64,
    mean_loss: f64,
    gradients: usize,
}

fn cmd_bench(n: usize, seed: u64) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(ExtremePoints, ExtremePoints)> =
        (0..n).map(|_| (bench_quad(&mut rng), bench_quad(&mut rng))).collect();

    let t0 = Instant::now();
    let eious: Vec<f64> = pairs.par_iter().map(|(g, p)| eiou(g, p).eiou).collect();
    let t_eiou = t0.elapsed();
    let t1 = Instant::now();
    let losses: Vec<f64> = pairs
        .par_iter()
        .map(|(g, p)| eiou_loss(g, p).map(|l| l.value).unwrap_or(0.0))
        .collect();
    let t_loss = t1.elapsed();
    let t2 = Instant::now();
    let gradients = pairs.par_iter().filter(|(g, p)| eiou_loss_grad(g, p).is_ok()).count();
    let t_grad = t2.elapsed();

    let denom = n.max(1) as f64;
    emit(
        None,
        &[BenchLine {
            n,
            seed,
            mean_eiou: eious.iter().sum::<f64>() / denom,
            mean_loss: losses.iter().sum::<f64>() / denom,
            gradients,
        }],
    )?;
    let rate = |d: std::time::Duration| denom / d.as_secs_f64().max(1e-12);
    eprintln!(
        "eiou {:.0}/s, loss {:.0}/s, gradient {:.0}/s",
        rate(t_eiou),
        rate(t_loss),
        rate(t_grad)
    );
    Ok(Outcome::Done)
}

fn read_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing scenario config {}", path.display()))
}

fn cmd_compare(config: &Path, seed: u64, thresholds: &[f64], nms_thr: f64) -> Result<Outcome> {
    let scenario = generate_scenario(&read_config(config)?, seed)?;
    let report = compare_rankings(&scenario, thresholds, nms_thr)?;
    emit(None, &[report])?;
    Ok(Outcome::Done)
}

fn cmd_scenario(config: &Path, seed: u64, gts_out: &Path, dets_out: &Path) -> Result<Outcome> {
    let scenario = generate_scenario(&read_config(config)?, seed)?;
    let gts: Vec<ExtremesRecord> = scenario
        .images
        .iter()
        .flat_map(|img| {
            img.gts.iter().map(|g| ExtremesRecord {
                image_id: img.image_id,
                category_id: g.category,
                instance_id: g.instance_id,
                extremes: g.extremes.to_array(),
            })
        })
        .collect();
    let dets: Vec<DetectionRecord> = scenario
        .images
        .iter()
        .flat_map(|img| {
            img.detections
                .iter()
                .map(|d| DetectionRecord::from_detection(img.image_id, d))
        })
        .collect();
    emit(Some(gts_out), &gts)?;
    emit(Some(dets_out), &dets)?;
    Ok(Outcome::Done)
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Extract { annotations, out } => cmd_extract(&annotations, out.as_deref()),
        Command::Assign {
            annotations,
            strides,
            out,
            all,
        } => cmd_assign(&annotations, &strides, out.as_deref(), all),
        Command::EvalEiou { gt, pred, out } => cmd_eval_eiou(&gt, &pred, out.as_deref()),
        Command::Nms {
            dets,
            mode,
            iou_thr,
            score_thr,
            out,
        } => cmd_nms(
            &dets,
            NmsConfig {
                mode,
                iou_threshold: iou_thr,
                score_threshold: score_thr,
            },
            out.as_deref(),
        ),
        Command::GradCheck {
            trials,
            seed,
            tolerance,
        } => cmd_grad_check(trials, seed, tolerance),
        Command::Bench { n, seed } => cmd_bench(n, seed),
        Command::Compare {
            config,
            seed,
            thresholds,
            nms_thr,
        } => cmd_compare(&config, seed, &thresholds, nms_thr),
        Command::Scenario {
            config,
            seed,
            gts_out,
            dets_out,
        } => cmd_scenario(&config, seed, &gts_out, &dets_out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
