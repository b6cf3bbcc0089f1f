//! Reference evaluator written for clarity, not speed, plus a generator of
//! small random evaluation problems.
//!
//! Shares no code with the library evaluator beyond the data types: boxes
//! are intersected, ranked, matched and integrated here from scratch. The
//! generator keeps all coordinates on an integer grid and scores dyadic so
//! that both evaluators see bit-identical IoUs and score means.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use amodal_core::dataset::{AmodalAnnotation, Category, Dataset, ImageFrame, VideoMeta};
use amodal_core::metrics::{EvalConfig, EvalStratum, Interpolation, StratumKind, UncertainPolicy};
use amodal_core::{BBox, DetectionResult, StratumClosure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FRAME_W: f64 = 48.0;
pub const FRAME_H: f64 = 32.0;

fn inter(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let h = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

pub fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let i = inter(a, b);
    let u = a.w * a.h + b.w * b.h - i;
    if u <= 0.0 {
        0.0
    } else {
        i / u
    }
}

pub fn oracle_st_iou(a: &BTreeMap<i64, BBox>, b: &BTreeMap<i64, BBox>) -> f64 {
    let frames: BTreeSet<i64> = a.keys().chain(b.keys()).copied().collect();
    let (mut i, mut u) = (0.0, 0.0);
    for f in frames {
        match (a.get(&f), b.get(&f)) {
            (Some(x), Some(y)) => {
                let v = inter(x, y);
                i += v;
                u += x.w * x.h + y.w * y.h - v;
            }
            (Some(x), None) | (None, Some(x)) => u += x.w * x.h,
            (None, None) => {}
        }
    }
    if u <= 0.0 {
        0.0
    } else {
        i / u
    }
}

fn in_range(closure: StratumClosure, lo: f64, hi: f64, v: f64) -> bool {
    match closure {
        StratumClosure::HalfOpen => {
            if hi >= 1.0 {
                lo <= v && v <= hi
            } else {
                lo <= v && v < hi
            }
        }
        StratumClosure::UpperClosed => {
            if lo <= 0.0 {
                lo <= v && v <= hi
            } else {
                lo < v && v <= hi
            }
        }
    }
}

/// AP of one category given `(score, id, Some(tp) | None for ignored)`.
fn oracle_ap(mut entries: Vec<(f64, u64, Option<bool>)>, n_gt: usize, interp: Interpolation) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    // selection sort: highest score first, lower id on ties
    let mut ranked = Vec::new();
    while !entries.is_empty() {
        let mut best = 0;
        for k in 1..entries.len() {
            let (s, id, _) = entries[k];
            let (bs, bid, _) = entries[best];
            if s > bs || (s == bs && id < bid) {
                best = k;
            }
        }
        if let Some(tp) = entries.remove(best).2 {
            ranked.push(tp);
        }
    }
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (i, hit) in ranked.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        points.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
    }
    let best_from = |r: f64| {
        points
            .iter()
            .filter(|(rec, _)| *rec >= r)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max)
    };
    match interp {
        Interpolation::Points101 => {
            let mut sum = 0.0;
            for k in 0..=100 {
                sum += best_from(k as f64 / 100.0);
            }
            Some(sum / 101.0)
        }
        Interpolation::AllPoints => {
            let mut area = 0.0;
            let mut prev = 0.0;
            for (r, _) in &points {
                area += (r - prev) * best_from(*r);
                prev = *r;
            }
            Some(area)
        }
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

struct Fed {
    evaluated: BTreeSet<(u64, u64)>,
    not_exhaustive: BTreeSet<(u64, u64)>,
}

fn federation(ds: &Dataset) -> Fed {
    let video_of: BTreeMap<u64, u64> = ds.images.iter().map(|i| (i.id, i.video_id)).collect();
    let mut evaluated: BTreeSet<(u64, u64)> = ds
        .annotations
        .iter()
        .map(|a| (video_of[&a.image_id], a.category_id))
        .collect();
    let mut not_exhaustive = BTreeSet::new();
    for v in &ds.videos {
        for c in &v.neg_category_ids {
            evaluated.insert((v.id, *c));
        }
        for c in &v.not_exhaustive_category_ids {
            not_exhaustive.insert((v.id, *c));
        }
    }
    Fed {
        evaluated,
        not_exhaustive,
    }
}

fn oof(ds: &Dataset, a: &AmodalAnnotation) -> bool {
    let im = ds.images.iter().find(|i| i.id == a.image_id).unwrap();
    let v = ds.videos.iter().find(|v| v.id == im.video_id).unwrap();
    let (w, h) = (im.width.unwrap_or(v.width), im.height.unwrap_or(v.height));
    let b = &a.amodal_box;
    b.x < 0.0 || b.y < 0.0 || b.x + b.w > w || b.y + b.h > h
}

/// Per-stratum detection AP.
pub fn oracle_detection(ds: &Dataset, results: &[DetectionResult], cfg: &EvalConfig) -> BTreeMap<String, Option<f64>> {
    let fed = federation(ds);
    let video_of: BTreeMap<u64, u64> = ds.images.iter().map(|i| (i.id, i.video_id)).collect();
    // per-image cap: count better-ranked results on the same image
    let kept: Vec<usize> = (0..results.len())
        .filter(|&i| {
            let r = &results[i];
            let better = (0..results.len())
                .filter(|&j| {
                    results[j].image_id == r.image_id
                        && (results[j].score > r.score || (results[j].score == r.score && j < i))
                })
                .count();
            better < cfg.max_detections_per_image
        })
        .collect();
    let mut categories: Vec<u64> = ds.categories.iter().map(|c| c.id).collect();
    categories.sort();

    let mut out = BTreeMap::new();
    for s in &cfg.detection_strata {
        let modal = s.kind == StratumKind::Modal;
        let ignore_of = |a: &AmodalAnnotation| {
            (cfg.uncertain_policy == UncertainPolicy::Ignore && a.is_uncertain)
                || match s.kind {
                    StratumKind::All | StratumKind::Modal => false,
                    StratumKind::VisibilityRange { lo, hi } => !in_range(s.closure, lo, hi, a.visibility),
                    StratumKind::OutOfFrame => !oof(ds, a),
                }
        };
        let gt_box = |a: &AmodalAnnotation| if modal { a.modal_box } else { Some(a.amodal_box) };
        let det_box = |r: &DetectionResult| if modal { r.modal_box } else { Some(r.amodal_box) };

        let mut per_thr = Vec::new();
        for &thr in &cfg.iou_thresholds {
            let mut aps = Vec::new();
            for &cat in &categories {
                let gts: Vec<(usize, &AmodalAnnotation, BBox)> = ds
                    .annotations
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.category_id == cat && fed.evaluated.contains(&(video_of[&a.image_id], cat)))
                    .filter_map(|(p, a)| gt_box(a).map(|b| (p, a, b)))
                    .collect();
                let n_gt = gts.iter().filter(|g| !ignore_of(g.1)).count();
                let mut preds: Vec<usize> = kept
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let r = &results[i];
                        r.category_id == cat
                            && fed.evaluated.contains(&(video_of[&r.image_id], cat))
                            && det_box(r).is_some()
                    })
                    .collect();
                preds.sort_by(|&a, &b| {
                    results[b].score.partial_cmp(&results[a].score).unwrap().then(a.cmp(&b))
                });
                let mut taken = BTreeSet::new();
                let mut entries = Vec::new();
                for i in preds {
                    let r = &results[i];
                    let pb = det_box(r).unwrap();
                    let mut best: Option<(f64, bool, usize)> = None;
                    for (p, a, b) in &gts {
                        if a.image_id != r.image_id || taken.contains(p) {
                            continue;
                        }
                        let v = oracle_iou(&pb, b);
                        if v < thr {
                            continue;
                        }
                        let regular = !ignore_of(a);
                        let key = (v, regular, std::cmp::Reverse(*p));
                        if best.is_none_or(|(bv, breg, bp)| key > (bv, breg, std::cmp::Reverse(bp))) {
                            best = Some((v, regular, *p));
                        }
                    }
                    let status = match best {
                        Some((_, regular, p)) => {
                            taken.insert(p);
                            regular.then_some(true)
                        }
                        None if fed.not_exhaustive.contains(&(video_of[&r.image_id], cat)) => None,
                        None => Some(false),
                    };
                    entries.push((r.score, i as u64, status));
                }
                if let Some(ap) = oracle_ap(entries, n_gt, cfg.interpolation) {
                    aps.push(ap);
                }
            }
            per_thr.push(mean(&aps));
        }
        let valid: Vec<f64> = per_thr.iter().flatten().copied().collect();
        out.insert(s.name.clone(), mean(&valid));
    }
    out
}

/// Per-stratum Track-AP.
pub fn oracle_track(ds: &Dataset, results: &[DetectionResult], cfg: &EvalConfig) -> BTreeMap<String, Option<f64>> {
    let fed = federation(ds);
    let image = |id: u64| ds.images.iter().find(|i| i.id == id).unwrap();
    let mut categories: Vec<u64> = ds.categories.iter().map(|c| c.id).collect();
    categories.sort();

    let mut out = BTreeMap::new();
    for s in &cfg.track_strata {
        let modal = s.kind == StratumKind::Modal;

        // ground-truth tracks: (id, category, video, frames, ignore)
        let mut gt_ids: BTreeSet<u64> = BTreeSet::new();
        gt_ids.extend(ds.annotations.iter().map(|a| a.track_id));
        let mut gts = Vec::new();
        for id in gt_ids {
            let info = ds.tracks.iter().find(|t| t.id == id).unwrap();
            let anns: Vec<&AmodalAnnotation> = ds.annotations.iter().filter(|a| a.track_id == id).collect();
            let frames: BTreeMap<i64, BBox> = anns
                .iter()
                .filter_map(|a| {
                    let b = if modal { a.modal_box } else { Some(a.amodal_box) };
                    b.map(|b| (image(a.image_id).frame_index, b))
                })
                .collect();
            if frames.is_empty() {
                continue;
            }
            let inside = match s.kind {
                StratumKind::All | StratumKind::Modal => true,
                StratumKind::VisibilityRange { lo, hi } => {
                    anns.iter().filter(|a| lo <= a.visibility && a.visibility <= hi).count() > 5
                }
                StratumKind::OutOfFrame => anns.iter().any(|a| oof(ds, a)),
            };
            let uncertain = cfg.uncertain_policy == UncertainPolicy::Ignore && anns.iter().all(|a| a.is_uncertain);
            gts.push((id, info.category_id, info.video_id, frames, !inside || uncertain));
        }

        // predicted tracks: (id, category, video, score, frames)
        let pred_ids: BTreeSet<u64> = results.iter().filter_map(|r| r.track_id).collect();
        let mut preds = Vec::new();
        for id in pred_ids {
            let members: Vec<&DetectionResult> = results.iter().filter(|r| r.track_id == Some(id)).collect();
            let score = members.iter().map(|r| r.score).sum::<f64>() / members.len() as f64;
            let frames: BTreeMap<i64, BBox> = members
                .iter()
                .filter_map(|r| {
                    let b = if modal { r.modal_box } else { Some(r.amodal_box) };
                    b.map(|b| (image(r.image_id).frame_index, b))
                })
                .collect();
            if frames.is_empty() {
                continue;
            }
            preds.push((id, members[0].category_id, image(members[0].image_id).video_id, score, frames));
        }

        let mut per_thr = Vec::new();
        for &thr in &cfg.iou_thresholds {
            let mut aps = Vec::new();
            for &cat in &categories {
                let cell_gts: Vec<_> = gts
                    .iter()
                    .filter(|g| g.1 == cat && fed.evaluated.contains(&(g.2, cat)))
                    .collect();
                let n_gt = cell_gts.iter().filter(|g| !g.4).count();
                let mut cell_preds: Vec<_> = preds
                    .iter()
                    .filter(|p| p.1 == cat && fed.evaluated.contains(&(p.2, cat)))
                    .collect();
                cell_preds.sort_by(|a, b| b.3.partial_cmp(&a.3).unwrap().then(a.0.cmp(&b.0)));
                let mut taken = BTreeSet::new();
                let mut entries = Vec::new();
                for p in cell_preds {
                    let mut best: Option<(f64, bool, usize)> = None;
                    for (k, g) in cell_gts.iter().enumerate() {
                        if g.2 != p.2 || taken.contains(&g.0) {
                            continue;
                        }
                        let v = oracle_st_iou(&p.4, &g.3);
                        if v < thr {
                            continue;
                        }
                        let key = (v, !g.4, std::cmp::Reverse(k));
                        if best.is_none_or(|(bv, breg, bk)| key > (bv, breg, std::cmp::Reverse(bk))) {
                            best = Some((v, !g.4, k));
                        }
                    }
                    let status = match best {
                        Some((_, regular, k)) => {
                            taken.insert(cell_gts[k].0);
                            regular.then_some(true)
                        }
                        None if fed.not_exhaustive.contains(&(p.2, cat)) => None,
                        None => Some(false),
                    };
                    entries.push((p.3, p.0, status));
                }
                if let Some(ap) = oracle_ap(entries, n_gt, cfg.interpolation) {
                    aps.push(ap);
                }
            }
            per_thr.push(mean(&aps));
        }
        let valid: Vec<f64> = per_thr.iter().flatten().copied().collect();
        out.insert(s.name.clone(), mean(&valid));
    }
    out
}

/// A random evaluation problem.
pub struct Micro {
    pub dataset: Dataset,
    pub results: Vec<DetectionResult>,
    pub config: EvalConfig,
}

fn grid_box(rng: &mut ChaCha8Rng) -> BBox {
    let w = [4.0, 8.0, 12.0, 16.0, 24.0][rng.random_range(0..5)];
    let h = [4.0, 8.0, 12.0, 16.0][rng.random_range(0..4)];
    let x = rng.random_range(-3..12) as f64 * 4.0;
    let y = rng.random_range(-2..8) as f64 * 4.0;
    BBox::new(x, y, w, h)
}

fn nudge(rng: &mut ChaCha8Rng, b: &BBox) -> BBox {
    let d = |rng: &mut ChaCha8Rng| rng.random_range(-1..=1) as f64 * 2.0;
    BBox::new(b.x + d(rng), b.y + d(rng), (b.w + d(rng)).max(2.0), (b.h + d(rng)).max(2.0))
}

/// Integer sub-box of `amodal` inside the frame, or `None`.
fn modal_of(rng: &mut ChaCha8Rng, amodal: &BBox) -> Option<BBox> {
    if rng.random_bool(0.15) {
        return None;
    }
    let x1 = amodal.x.max(0.0);
    let y1 = amodal.y.max(0.0);
    let x2 = (amodal.x + amodal.w).min(FRAME_W);
    let y2 = (amodal.y + amodal.h).min(FRAME_H);
    if x2 <= x1 || y2 <= y1 {
        return None;
    }
    let w = x2 - x1;
    let keep = [1.0, 1.0, 0.75, 0.5, 0.25][rng.random_range(0..5)];
    let kw = (w * keep).round().max(1.0);
    Some(BBox::new(x1, y1, kw, y2 - y1))
}

pub fn micro_instance(seed: u64) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cat = rng.random_range(1..=3u64);
    let n_videos = rng.random_range(1..=2u64);
    let n_images = rng.random_range(n_videos..=4);
    let categories: Vec<Category> = (1..=n_cat)
        .map(|id| Category {
            id,
            name: format!("c{id}"),
        })
        .collect();
    let images: Vec<ImageFrame> = (0..n_images)
        .map(|i| {
            let video_id = if i < n_videos { i + 1 } else { rng.random_range(1..=n_videos) };
            ImageFrame {
                id: i + 1,
                video_id,
                frame_index: 0,
                width: None,
                height: None,
                file_name: None,
            }
        })
        .collect();
    // frame indices in image order within each video
    let mut images = images;
    let mut next_frame: BTreeMap<u64, i64> = BTreeMap::new();
    for im in &mut images {
        let f = next_frame.entry(im.video_id).or_insert(0);
        im.frame_index = *f;
        *f += rng.random_range(1..=2);
    }
    let video_of: BTreeMap<u64, u64> = images.iter().map(|i| (i.id, i.video_id)).collect();

    // track ids keyed by (video, category, slot) so every track stays in one video and category
    let track_id = |v: u64, c: u64, slot: u64| v * 100 + c * 10 + slot;
    let mut used_track_frames = BTreeSet::new();
    let mut annotations = Vec::new();
    let n_gt = rng.random_range(0..=4u64);
    for k in 0..n_gt {
        // sometimes stack a second object on an earlier one so IoU ties occur
        let twin: Option<&AmodalAnnotation> = if rng.random_bool(0.3) { annotations.last() } else { None };
        let image_id = twin.map_or_else(|| rng.random_range(1..=n_images), |a| a.image_id);
        let cat = twin.map_or_else(|| rng.random_range(1..=n_cat), |a| a.category_id);
        let twin_box = twin.map(|a| a.amodal_box);
        let v = video_of[&image_id];
        let mut slot = rng.random_range(1..=2);
        if !used_track_frames.insert((track_id(v, cat, slot), image_id)) {
            slot = 3 + k;
            used_track_frames.insert((track_id(v, cat, slot), image_id));
        }
        let amodal = twin_box.unwrap_or_else(|| grid_box(&mut rng));
        let modal = modal_of(&mut rng, &amodal);
        annotations.push(AmodalAnnotation {
            id: k + 1,
            image_id,
            track_id: track_id(v, cat, slot),
            category_id: cat,
            amodal_box: amodal,
            modal_box: modal,
            visibility: f64::NAN,
            is_uncertain: rng.random_bool(0.15),
            out_of_frame: false,
        });
    }

    let videos: Vec<VideoMeta> = (1..=n_videos)
        .map(|id| {
            let pick = |rng: &mut ChaCha8Rng, p: f64| -> Vec<u64> {
                (1..=n_cat).filter(|_| rng.random_bool(p)).collect()
            };
            VideoMeta {
                id,
                name: format!("v{id}"),
                width: FRAME_W,
                height: FRAME_H,
                neg_category_ids: pick(&mut rng, 0.4),
                not_exhaustive_category_ids: pick(&mut rng, 0.2),
            }
        })
        .collect();

    let dataset = Dataset::from_parts(videos, images, annotations, categories, vec![]).expect("micro instance links");

    let scores = [0.25, 0.5, 0.5, 0.75, 1.0];
    let mut used_pred_frames = BTreeSet::new();
    let n_det = rng.random_range(0..=6);
    let results = (0..n_det)
        .map(|_| {
            let copy = !dataset.annotations.is_empty() && rng.random_bool(0.6);
            let (image_id, category_id, amodal) = if copy {
                let a = &dataset.annotations[rng.random_range(0..dataset.annotations.len())];
                let b = if rng.random_bool(0.5) { a.amodal_box } else { nudge(&mut rng, &a.amodal_box) };
                let cat = if rng.random_bool(0.85) { a.category_id } else { rng.random_range(1..=n_cat) };
                (a.image_id, cat, b)
            } else {
                (rng.random_range(1..=n_images), rng.random_range(1..=n_cat), grid_box(&mut rng))
            };
            let v = video_of[&image_id];
            let frame = dataset.image(image_id).unwrap().frame_index;
            let track = if rng.random_bool(0.8) {
                let t = track_id(v, category_id, rng.random_range(1..=2));
                used_pred_frames.insert((t, frame)).then_some(t)
            } else {
                None
            };
            DetectionResult {
                image_id,
                category_id,
                amodal_box: amodal,
                modal_box: modal_of(&mut rng, &amodal),
                score: scores[rng.random_range(0..scores.len())],
                track_id: track,
            }
        })
        .collect();

    let closure = if rng.random_bool(0.5) {
        StratumClosure::HalfOpen
    } else {
        StratumClosure::UpperClosed
    };
    let mut config = EvalConfig::default().with_closure(closure);
    if rng.random_bool(0.3) {
        config.iou_thresholds = EvalConfig::sweep_thresholds();
    }
    if rng.random_bool(0.3) {
        config.max_detections_per_image = rng.random_range(1..=3);
    }
    if rng.random_bool(0.3) {
        config.uncertain_policy = UncertainPolicy::Include;
    }
    if rng.random_bool(0.2) {
        config.interpolation = Interpolation::AllPoints;
    }
    // micro tracks are too short for the occluded-track stratum; cover out-of-frame tracks instead
    config.track_strata.push(EvalStratum {
        name: "track_ap_oof".into(),
        kind: StratumKind::OutOfFrame,
        closure,
    });
    Micro {
        dataset,
        results,
        config,
    }
}
