use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use amodal_core::dataset::{self, canonical_json, ViolationCode};
use amodal_core::expander::{self, mean_amodal_iou, ExpanderParams, Optimizer, ScaleTask, TrainConfig};
use amodal_core::metrics::{self, EvalStratum};
use amodal_core::pno;
use amodal_core::synthetic::{self, SceneConfig};
use amodal_core::tracker;
use amodal_core::{load_dataset, Dataset, Error, EvalConfig, EvalReport, FrameExtent, Result};
use image::RgbImage;
use serde::Serialize;

use crate::args::*;
use crate::manifest::{io_error, stream_seed, Recorder};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Evaluate(a) => evaluate(&a),
        Command::Track(a) => track(&a),
        Command::Augment(a) => augment(&a),
        Command::Stats(a) => stats(&a),
        Command::Validate(a) => validate(&a),
        Command::TrainExpander(a) => train_expander(&a),
        Command::Synth(a) => synth(&a),
    }
}

fn read_dataset(rec: &mut Recorder, path: &Path) -> Result<Dataset> {
    let ds = load_dataset(path)?;
    rec.input(path)?;
    Ok(ds)
}

pub fn parse_iou(arg: &str) -> Result<Vec<f64>> {
    if arg.trim() == "sweep" {
        return Ok(EvalConfig::sweep_thresholds());
    }
    arg.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad IoU threshold {t:?}")))
        })
        .collect()
}

pub fn eval_config(a: &EvaluateArgs) -> Result<EvalConfig> {
    let mut cfg = EvalConfig {
        iou_thresholds: parse_iou(&a.iou)?,
        max_detections_per_image: a.max_dets,
        uncertain_policy: a.uncertain.into(),
        interpolation: a.interpolation.into(),
        ..Default::default()
    };
    if a.strata.trim() != "default" {
        cfg.detection_strata.clear();
        cfg.track_strata.clear();
        for name in a.strata.split(',').map(str::trim) {
            match EvalStratum::by_name(name) {
                Some((s, false)) => cfg.detection_strata.push(s),
                Some((s, true)) => cfg.track_strata.push(s),
                None => {
                    let known: Vec<String> = EvalStratum::default_detection()
                        .into_iter()
                        .chain(EvalStratum::default_track())
                        .map(|s| s.name)
                        .collect();
                    return Err(Error::InvalidConfig(format!(
                        "unknown stratum {name:?}; known: {}",
                        known.join(", ")
                    )));
                }
            }
        }
    }
    let cfg = cfg.with_closure(a.closure.into());
    cfg.validate()?;
    Ok(cfg)
}

/// Printed columns and the report strata behind them.
pub const TABLE_COLUMNS: [(&str, &str); 7] = [
    ("AP[0,0.1]", "ap_vis_0_01"),
    ("AP[0.1,0.8]", "ap_vis_01_08"),
    ("AP[0.8,1]", "ap_vis_08_1"),
    ("AP-OoF", "ap_oof"),
    ("AP", "ap_all"),
    ("Track-AP", "track_ap_all"),
    ("Track-AP[0,0.8]", "track_ap_occ_0_08"),
];

fn percent(ap: Option<f64>) -> String {
    ap.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

/// Fixed-column AP table followed by any strata outside it.
pub fn render_table(report: &EvalReport) -> String {
    let cells: Vec<(&str, String)> = TABLE_COLUMNS
        .iter()
        .map(|(label, name)| {
            let value = match report.strata.get(*name) {
                Some(s) => percent(s.ap),
                None => "n/a".to_string(),
            };
            (*label, value)
        })
        .collect();
    let mut header = String::new();
    let mut values = String::new();
    for (label, value) in &cells {
        let w = label.len().max(value.len());
        header.push_str(&format!("{label:>w$}  "));
        values.push_str(&format!("{value:>w$}  "));
    }
    let mut out = format!("{}\n{}\n", header.trim_end(), values.trim_end());
    for (name, s) in &report.strata {
        if !TABLE_COLUMNS.iter().any(|(_, n)| n == name) {
            out.push_str(&format!("{name}: {}\n", percent(s.ap)));
        }
    }
    out
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let mut rec = Recorder::start("evaluate");
    let cfg = eval_config(a)?;
    let ds = read_dataset(&mut rec, &a.annotations)?;
    let results = metrics::load_results(&a.results)?;
    rec.input(&a.results)?;
    let report = metrics::evaluate(&ds, &results, &cfg)?;
    rec.write(&a.out, report.to_canonical_json().as_bytes())?;
    rec.finish(&a.out, &cfg, None)?;
    print!("{}", render_table(&report));
    Ok(())
}

fn track(a: &TrackArgs) -> Result<()> {
    let mut rec = Recorder::start("track");
    let cfg = a.config();
    cfg.validate()?;
    let ds = read_dataset(&mut rec, &a.annotations)?;
    let detections: Vec<_> = metrics::load_results(&a.detections)?
        .into_iter()
        .map(|d| metrics::DetectionResult { track_id: None, ..d })
        .collect();
    rec.input(&a.detections)?;
    let tracked = tracker::run_dataset(&ds, &detections, &cfg)?;
    rec.write(&a.out, canonical_json(&tracked).as_bytes())?;
    rec.finish(&a.out, &cfg, None)?;
    let n_tracks = tracked
        .iter()
        .filter_map(|d| d.track_id)
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    println!("{} boxes in {n_tracks} tracks", tracked.len());
    Ok(())
}

/// Frame file for an image: its `file_name`, or `<id>.png`.
fn frame_name(ds: &Dataset, image_id: u64) -> PathBuf {
    ds.image(image_id)
        .and_then(|im| im.file_name.clone())
        .map_or_else(|| PathBuf::from(format!("{image_id}.png")), PathBuf::from)
}

/// Mask and source-image files referenced by a bank manifest.
fn bank_files(manifest: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(manifest).map_err(|e| io_error(manifest, e))?;
    let records: Vec<serde_json::Value> = serde_json::from_str(&text)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut files: Vec<PathBuf> = records
        .iter()
        .flat_map(|r| ["mask", "source_image"].map(|k| r.get(k).and_then(|v| v.as_str()).map(|p| base.join(p))))
        .flatten()
        .collect();
    files.sort();
    files.dedup();
    Ok(files)
}

fn augment(a: &AugmentArgs) -> Result<()> {
    let mut rec = Recorder::start("augment");
    let cfg = a.config();
    cfg.validate()?;
    let ds = read_dataset(&mut rec, &a.annotations)?;
    let bank = pno::load_segment_bank(&a.bank)?;
    rec.input(&a.bank)?;
    for f in bank_files(&a.bank)? {
        rec.input(&f)?;
    }

    let mut pixels: BTreeMap<u64, RgbImage> = BTreeMap::new();
    if let Some(dir) = &a.frames_in {
        for im in &ds.images {
            let path = dir.join(frame_name(&ds, im.id));
            if !path.exists() {
                continue;
            }
            let img = image::open(&path)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?
                .to_rgb8();
            rec.input(&path)?;
            pixels.insert(im.id, img);
        }
    }

    let out = pno::augment_dataset(&ds, &bank, &cfg, &pixels)?;
    rec.write(&a.out, out.dataset.to_canonical_json().as_bytes())?;
    if let Some(dir) = &a.frames_out {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        for (id, img) in &out.frames {
            let path = dir.join(frame_name(&ds, *id)).with_extension("png");
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
            }
            img.save_with_format(&path, image::ImageFormat::Png)
                .map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?;
            rec.output(&path)?;
        }
    }
    rec.finish(&a.out, &cfg, Some(cfg.seed))?;
    let pasted: usize = out.placements.values().map(Vec::len).sum();
    println!(
        "{pasted} segments pasted over {} windows; {} -> {} annotations; {} frames composited",
        out.placements.len(),
        ds.annotations.len(),
        out.dataset.annotations.len(),
        out.frames.len()
    );
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let mut rec = Recorder::start("stats");
    let ds = read_dataset(&mut rec, &a.annotations)?;
    let closure = a.closure.into();
    let report = dataset::stats_with_closure(&ds, closure);
    let json = canonical_json(&report);
    rec.write(&a.out, json.as_bytes())?;
    rec.finish(&a.out, serde_json::json!({ "closure": closure }), None)?;
    let value: BTreeMap<String, serde_json::Value> = serde_json::from_str(&json)?;
    let width = value.keys().map(String::len).max().unwrap_or(0);
    for (k, v) in value {
        println!("{k:<width$}  {v}");
    }
    Ok(())
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let mut rec = Recorder::start("validate");
    let ds = read_dataset(&mut rec, &a.annotations)?;
    let report = dataset::validate(&ds);
    rec.write(&a.out, canonical_json(&report).as_bytes())?;
    rec.finish(&a.out, serde_json::json!({}), None)?;
    let mut by_code: BTreeMap<ViolationCode, usize> = BTreeMap::new();
    for v in &report.violations {
        *by_code.entry(v.code).or_default() += 1;
    }
    for (code, n) in &by_code {
        println!("{:<28}  {n}", serde_json::to_value(code)?.as_str().unwrap_or_default());
    }
    println!(
        "{} violations ({} errors)",
        report.violations.len(),
        report.errors().count()
    );
    Ok(())
}

impl TrainExpanderArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            base_lr: self.base_lr,
            iterations: self.iterations,
            batch_size: self.batch_size,
            dropout_prob: self.dropout,
            schedule: self.schedule.into(),
            warmup_iterations: self.warmup_iterations,
            optimizer: match self.momentum {
                Some(momentum) => Optimizer::Momentum { momentum },
                None => Optimizer::Sgd,
            },
            loss_space: self.loss_space.into(),
            smooth_l1_beta: self.smooth_l1_beta,
            hidden: self.hidden,
            log_every: self.log_every,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Serialize)]
struct TrainRun<'a> {
    task: &'static str,
    scale_task: &'a ScaleTask,
    train_samples: usize,
    eval_samples: usize,
    train: &'a TrainConfig,
}

fn train_expander(a: &TrainExpanderArgs) -> Result<()> {
    let mut rec = Recorder::start("train-expander");
    let cfg = a.train_config();
    cfg.validate()?;
    let task = match a.task {
        Task::Scale => ScaleTask {
            scale: a.scale,
            feature_dim: a.feature_dim,
            jitter: a.jitter,
        },
    };
    if !(task.scale > 0.0) || task.feature_dim == 0 || !(0.0..1.0).contains(&task.jitter) {
        return Err(Error::InvalidConfig(
            "scale must be positive, feature_dim nonzero and jitter in [0, 1)".into(),
        ));
    }
    let train_set = task.samples(a.train_samples, stream_seed(a.seed, "train-samples"));
    let held_out = task.samples(a.eval_samples, stream_seed(a.seed, "eval-samples"));
    let outcome = expander::train(&train_set, task.feature_dim, &cfg)?;

    rec.write(&a.out, outcome.params.to_json(Some(&cfg)).as_bytes())?;
    let curve_path = a.curve.clone().unwrap_or_else(|| a.out.with_extension("loss.csv"));
    let mut csv = String::from("iteration,loss\n");
    for (it, loss) in &outcome.loss_curve {
        csv.push_str(&format!("{it},{loss}\n"));
    }
    rec.write(&curve_path, csv.as_bytes())?;
    let run = TrainRun {
        task: "scale",
        scale_task: &task,
        train_samples: a.train_samples,
        eval_samples: a.eval_samples,
        train: &cfg,
    };
    rec.finish(&a.out, &run, Some(a.seed))?;

    if !held_out.is_empty() {
        let iou = mean_amodal_iou(&outcome.params, &held_out)?;
        let baseline = mean_amodal_iou(&ExpanderParams::zeros(task.feature_dim, cfg.hidden), &held_out)?;
        println!("held-out mean IoU {iou:.4} (identity baseline {baseline:.4})");
    }
    if let Some((it, loss)) = outcome.loss_curve.last() {
        println!("loss {loss:.6} at iteration {it}");
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthRun {
    videos: usize,
    frames: usize,
    objects: (usize, usize),
    categories: usize,
    width: f64,
    height: f64,
    uncertain_prob: f64,
    detect_min_visibility: Option<f64>,
    detect_drop: Option<f64>,
    detect_jitter: Option<f64>,
    bank_size: Option<usize>,
}

fn synth(a: &SynthArgs) -> Result<()> {
    let mut rec = Recorder::start("synth");
    let scene = SceneConfig {
        n_videos: a.videos,
        frames_per_video: a.frames,
        objects_per_video: (a.min_objects, a.max_objects),
        n_categories: a.categories,
        frame: FrameExtent::new(a.width, a.height),
        uncertain_prob: a.uncertain_prob,
        seed: a.seed,
        ..Default::default()
    };
    if a.min_objects > a.max_objects || a.categories == 0 || !(a.width > 0.0 && a.height > 0.0) {
        return Err(Error::InvalidConfig(
            "need min_objects <= max_objects, at least one category and a positive frame".into(),
        ));
    }
    if !(0.0..=1.0).contains(&a.uncertain_prob) || !(0.0..=1.0).contains(&a.detect_drop) {
        return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
    }
    let ds = synthetic::generate(&scene);
    rec.write(&a.out, ds.to_canonical_json().as_bytes())?;

    if let Some(path) = &a.detections {
        let dets = synthetic::detections_from_ground_truth(
            &ds,
            a.detect_min_visibility,
            a.detect_drop,
            a.detect_jitter,
            stream_seed(a.seed, "detections"),
        );
        rec.write(path, canonical_json(&dets).as_bytes())?;
    }
    if let Some(dir) = &a.bank {
        let categories: Vec<u64> = ds.categories.iter().map(|c| c.id).collect();
        let bank = pno::synthetic_bank(a.bank_size, &categories, stream_seed(a.seed, "bank"));
        let manifest = pno::save_segment_bank(dir, &bank)?;
        rec.output(&manifest)?;
        for f in bank_files(&manifest)? {
            rec.output(&f)?;
        }
    }
    let run = SynthRun {
        videos: a.videos,
        frames: a.frames,
        objects: (a.min_objects, a.max_objects),
        categories: a.categories,
        width: a.width,
        height: a.height,
        uncertain_prob: a.uncertain_prob,
        detect_min_visibility: a.detections.as_ref().map(|_| a.detect_min_visibility),
        detect_drop: a.detections.as_ref().map(|_| a.detect_drop),
        detect_jitter: a.detections.as_ref().map(|_| a.detect_jitter),
        bank_size: a.bank.as_ref().map(|_| a.bank_size),
    };
    rec.finish(&a.out, &run, Some(a.seed))?;
    println!(
        "{} videos, {} images, {} annotations",
        ds.videos.len(),
        ds.images.len(),
        ds.annotations.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use amodal_core::metrics::{StratumReport, Counts};
    use clap::Parser;

    #[test]
    fn iou_specs() {
        assert_eq!(parse_iou("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_iou("0.5, 0.75").unwrap(), vec![0.5, 0.75]);
        assert_eq!(parse_iou("sweep").unwrap().len(), 10);
        assert!(matches!(parse_iou("half"), Err(Error::InvalidConfig(_))));
    }

    fn eval_args(extra: &[&str]) -> EvaluateArgs {
        let mut argv = vec!["amodal-kit", "evaluate", "--annotations", "a", "--results", "r", "--out", "o"];
        argv.extend_from_slice(extra);
        match Cli::parse_from(argv).command {
            Command::Evaluate(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn evaluate_defaults_equal_module_defaults() {
        assert_eq!(eval_config(&eval_args(&[])).unwrap(), EvalConfig::default());
    }

    #[test]
    fn strata_lists_split_by_kind() {
        let cfg = eval_config(&eval_args(&["--strata", "ap_all,track_ap_all"])).unwrap();
        assert_eq!(cfg.detection_strata.len(), 1);
        assert_eq!(cfg.track_strata.len(), 1);
        assert!(eval_config(&eval_args(&["--strata", "ap_bogus"])).is_err());
    }

    #[test]
    fn train_defaults_equal_module_defaults() {
        let cli = Cli::parse_from(["amodal-kit", "train-expander", "--out", "p.json"]);
        let Command::TrainExpander(t) = cli.command else { unreachable!() };
        assert_eq!(t.train_config(), TrainConfig::default());
        assert_eq!(
            (t.scale, t.feature_dim, t.jitter),
            (ScaleTask::default().scale, ScaleTask::default().feature_dim, ScaleTask::default().jitter)
        );
    }

    #[test]
    fn table_keeps_column_order() {
        let mut report = EvalReport::default();
        let stratum = |ap| StratumReport {
            ap,
            per_category: BTreeMap::new(),
            counts: Counts::default(),
            per_threshold: vec![],
            pr_curve: vec![],
        };
        report.strata.insert("ap_all".into(), stratum(Some(0.5)));
        report.strata.insert("ap_vis_0_01".into(), stratum(None));
        report.strata.insert("ap_modal".into(), stratum(Some(1.0)));
        let table = render_table(&report);
        let lines: Vec<&str> = table.lines().collect();
        let labels: Vec<&str> = lines[0].split_whitespace().collect();
        assert_eq!(labels, TABLE_COLUMNS.map(|c| c.0));
        let values: Vec<&str> = lines[1].split_whitespace().collect();
        assert_eq!(values, ["-", "n/a", "n/a", "n/a", "50.00", "n/a", "n/a"]);
        assert_eq!(lines[2], "ap_modal: 100.00");
    }
}
