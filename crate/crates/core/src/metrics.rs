//! Occlusion-stratified, federated detection AP and Track-AP.
//!
//! Ground truth outside the evaluated stratum becomes an *ignore* target:
//! a prediction matched to it is dropped from the ranking instead of being
//! scored. Matching is greedy in descending score order; each prediction
//! takes the free ground truth of highest overlap at or above the threshold,
//! preferring in-stratum targets on ties, then the lower index.
//!
//! Federation follows the LVIS convention: a category is evaluated in a
//! video only when it is annotated there or declared negative, and unmatched
//! predictions in videos that list the category as not exhaustive are
//! dropped rather than counted as false positives.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, StratumClosure};
use crate::error::{Error, Result};
use crate::geometry::{self, BBox};

/// One predicted box, optionally carrying a track id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub image_id: u64,
    pub category_id: u64,
    #[serde(rename = "bbox")]
    pub amodal_box: BBox,
    #[serde(
        rename = "modal_bbox",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub modal_box: Option<BBox>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<DetectionResult>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StratumKind {
    All,
    /// Detection: ground truth whose visibility falls in the range.
    /// Tracks: ground-truth tracks with more than five annotated frames whose
    /// visibility lies in the closed range.
    VisibilityRange { lo: f64, hi: f64 },
    /// Ground truth whose amodal box crosses the image border (tracks: any
    /// such frame).
    OutOfFrame,
    /// Modal boxes on both sides.
    Modal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStratum {
    pub name: String,
    pub kind: StratumKind,
    #[serde(default)]
    pub closure: StratumClosure,
}

impl EvalStratum {
    pub fn new(name: &str, kind: StratumKind) -> Self {
        EvalStratum {
            name: name.to_string(),
            kind,
            closure: StratumClosure::default(),
        }
    }

    pub fn default_detection() -> Vec<EvalStratum> {
        use StratumKind::*;
        vec![
            EvalStratum::new("ap_vis_0_01", VisibilityRange { lo: 0.0, hi: 0.1 }),
            EvalStratum::new("ap_vis_01_08", VisibilityRange { lo: 0.1, hi: 0.8 }),
            EvalStratum::new("ap_vis_08_1", VisibilityRange { lo: 0.8, hi: 1.0 }),
            EvalStratum::new("ap_oof", OutOfFrame),
            EvalStratum::new("ap_all", All),
            EvalStratum::new("ap_modal", Modal),
        ]
    }

    pub fn default_track() -> Vec<EvalStratum> {
        use StratumKind::*;
        vec![
            EvalStratum::new("track_ap_all", All),
            EvalStratum::new("track_ap_occ_0_08", VisibilityRange { lo: 0.0, hi: 0.8 }),
            EvalStratum::new("track_ap_modal", Modal),
        ]
    }

    /// Every built-in stratum by its report name.
    pub fn by_name(name: &str) -> Option<(EvalStratum, bool)> {
        let det = EvalStratum::default_detection().into_iter().map(|s| (s, false));
        let trk = EvalStratum::default_track().into_iter().map(|s| (s, true));
        det.chain(trk).find(|(s, _)| s.name == name)
    }

    fn validate(&self) -> Result<()> {
        if let StratumKind::VisibilityRange { lo, hi } = self.kind {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "stratum {}: need 0 <= lo < hi <= 1, got [{lo}, {hi}]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainPolicy {
    /// Uncertain ground truth never counts as missed and absorbs matches.
    #[default]
    Ignore,
    Include,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Precision envelope sampled at recall 0.00, 0.01, ..., 1.00.
    #[default]
    Points101,
    /// Exact area under the precision envelope.
    AllPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub max_detections_per_image: usize,
    pub detection_strata: Vec<EvalStratum>,
    pub track_strata: Vec<EvalStratum>,
    pub uncertain_policy: UncertainPolicy,
    pub interpolation: Interpolation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: vec![0.5],
            max_detections_per_image: 300,
            detection_strata: EvalStratum::default_detection(),
            track_strata: EvalStratum::default_track(),
            uncertain_policy: UncertainPolicy::Ignore,
            interpolation: Interpolation::Points101,
        }
    }
}

impl EvalConfig {
    /// 0.50:0.95:0.05.
    pub fn sweep_thresholds() -> Vec<f64> {
        (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
    }

    /// Applies one closure convention to every stratum.
    pub fn with_closure(mut self, closure: StratumClosure) -> Self {
        for s in self.detection_strata.iter_mut().chain(&mut self.track_strata) {
            s.closure = closure;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iou_thresholds.is_empty() {
            return Err(Error::InvalidConfig("no IoU thresholds".into()));
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::InvalidConfig("IoU thresholds must lie in (0, 1]".into()));
        }
        if self.iou_thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("IoU thresholds must be sorted".into()));
        }
        for s in self.detection_strata.iter().chain(&self.track_strata) {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Predictions dropped from scoring (matched to ignore targets or in
    /// non-exhaustive videos).
    pub ignored: usize,
}

impl Counts {
    fn add(&mut self, o: &Counts) {
        self.n_gt += o.n_gt;
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ignored += o.ignored;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub iou: f64,
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    /// Category mean, `None` when no category has ground truth.
    #[serde(rename = "AP")]
    pub ap: Option<f64>,
    /// AP per category averaged over thresholds; `None` means no ground truth.
    pub per_category: BTreeMap<u64, Option<f64>>,
    /// Counts at the first threshold.
    pub counts: Counts,
    pub per_threshold: Vec<ThresholdReport>,
    /// Category-mean interpolated precision at recall 0.00..=1.00 (first
    /// threshold).
    pub pr_curve: Vec<f64>,
}

/// Stratum name to result.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvalReport {
    pub strata: BTreeMap<String, StratumReport>,
}

impl EvalReport {
    pub fn ap(&self, stratum: &str) -> Option<f64> {
        self.strata.get(stratum).and_then(|s| s.ap)
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.strata.extend(other.strata);
    }

    pub fn to_canonical_json(&self) -> String {
        crate::dataset::canonical_json(self)
    }
}

/// Result of greedily matching one ranked prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchOutcome {
    TruePositive { gt: usize },
    FalsePositive,
    /// Matched an ignore target; removed from scoring.
    Ignored { gt: usize },
}

/// Greedy matching of `n_preds` predictions (already ranked) against ground
/// truth with per-target ignore flags, using `similarity(pred, gt)`.
pub fn greedy_match(
    n_preds: usize,
    gt_ignore: &[bool],
    threshold: f64,
    mut similarity: impl FnMut(usize, usize) -> f64,
) -> Vec<MatchOutcome> {
    let mut taken = vec![false; gt_ignore.len()];
    (0..n_preds)
        .map(|p| {
            let mut best: Option<(f64, bool, usize)> = None;
            for (g, &ignore) in gt_ignore.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let s = similarity(p, g);
                if s < threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bs, bignore, _)) => s > bs || (s == bs && bignore && !ignore),
                };
                if better {
                    best = Some((s, ignore, g));
                }
            }
            match best {
                Some((_, ignore, g)) => {
                    taken[g] = true;
                    if ignore {
                        MatchOutcome::Ignored { gt: g }
                    } else {
                        MatchOutcome::TruePositive { gt: g }
                    }
                }
                None => MatchOutcome::FalsePositive,
            }
        })
        .collect()
}

/// A ground-truth box prepared for matching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtEntry {
    pub bbox: BBox,
    pub ignore: bool,
}

/// Matches ranked detection boxes of one (image, category) cell by IoU.
pub fn match_detections(gt: &[GtEntry], dets: &[BBox], iou_thr: f64) -> Vec<MatchOutcome> {
    let flags: Vec<bool> = gt.iter().map(|g| g.ignore).collect();
    greedy_match(dets.len(), &flags, iou_thr, |d, g| geometry::iou(&dets[d], &gt[g].bbox))
}

/// Interpolated precision at the 101 recall points for a ranked TP/FP
/// sequence (`true` = TP). Empty when `n_gt == 0`.
pub fn interpolated_precision(ranked_tp: &[bool], n_gt: usize) -> Vec<f64> {
    if n_gt == 0 {
        return Vec::new();
    }
    let (recall, mut envelope) = pr_points(ranked_tp, n_gt);
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            let i = recall.partition_point(|&x| x < r);
            envelope.get(i).copied().unwrap_or(0.0)
        })
        .collect()
}

fn pr_points(ranked_tp: &[bool], n_gt: usize) -> (Vec<f64>, Vec<f64>) {
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(ranked_tp.len());
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (i, &hit) in ranked_tp.iter().enumerate() {
        tp += usize::from(hit);
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    (recall, precision)
}

/// Average precision of a ranked TP/FP sequence; `None` when `n_gt == 0`.
pub fn average_precision(ranked_tp: &[bool], n_gt: usize, interp: Interpolation) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    match interp {
        Interpolation::Points101 => {
            let p = interpolated_precision(ranked_tp, n_gt);
            Some(p.iter().sum::<f64>() / p.len() as f64)
        }
        Interpolation::AllPoints => {
            let (recall, mut envelope) = pr_points(ranked_tp, n_gt);
            for i in (0..envelope.len().saturating_sub(1)).rev() {
                envelope[i] = envelope[i].max(envelope[i + 1]);
            }
            let mut prev_r = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&envelope) {
                area += (r - prev_r) * p;
                prev_r = *r;
            }
            Some(area)
        }
    }
}

/// Descending score, ascending id.
fn rank_order(a: (f64, u64), b: (f64, u64)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Scored outcome of one prediction in one evaluation cell.
#[derive(Debug, Clone, Copy)]
struct Scored {
    score: f64,
    id: u64,
    outcome: MatchOutcome,
}

/// Per-category accumulation for one (stratum, threshold).
#[derive(Debug, Default)]
struct CategoryTally {
    n_gt: usize,
    scored: Vec<Scored>,
}

impl CategoryTally {
    fn finish(mut self, interp: Interpolation) -> (Option<f64>, Vec<f64>, Counts) {
        self.scored
            .sort_by(|a, b| rank_order((a.score, a.id), (b.score, b.id)));
        let ranked: Vec<bool> = self
            .scored
            .iter()
            .filter_map(|s| match s.outcome {
                MatchOutcome::TruePositive { .. } => Some(true),
                MatchOutcome::FalsePositive => Some(false),
                MatchOutcome::Ignored { .. } => None,
            })
            .collect();
        let tp = ranked.iter().filter(|h| **h).count();
        let counts = Counts {
            n_gt: self.n_gt,
            tp,
            fp: ranked.len() - tp,
            fn_: self.n_gt - tp,
            ignored: self.scored.len() - ranked.len(),
        };
        (
            average_precision(&ranked, self.n_gt, interp),
            interpolated_precision(&ranked, self.n_gt),
            counts,
        )
    }
}

/// Which (video, category) cells are evaluated, and how unmatched predictions
/// are treated there.
struct Federation {
    positive: BTreeSet<(u64, u64)>,
    negative: BTreeSet<(u64, u64)>,
    not_exhaustive: BTreeSet<(u64, u64)>,
}

impl Federation {
    fn new(ds: &Dataset) -> Self {
        let mut positive = BTreeSet::new();
        for a in &ds.annotations {
            let vid = ds.image(a.image_id).expect("linked").video_id;
            positive.insert((vid, a.category_id));
        }
        let mut negative = BTreeSet::new();
        let mut not_exhaustive = BTreeSet::new();
        for v in &ds.videos {
            negative.extend(v.neg_category_ids.iter().map(|&c| (v.id, c)));
            not_exhaustive.extend(v.not_exhaustive_category_ids.iter().map(|&c| (v.id, c)));
        }
        Federation {
            positive,
            negative,
            not_exhaustive,
        }
    }

    fn evaluated(&self, video: u64, category: u64) -> bool {
        self.positive.contains(&(video, category)) || self.negative.contains(&(video, category))
    }

    fn fp_dropped(&self, video: u64, category: u64) -> bool {
        self.not_exhaustive.contains(&(video, category))
    }
}

fn check_results(ds: &Dataset, results: &[DetectionResult]) -> Result<()> {
    for (i, r) in results.iter().enumerate() {
        if ds.image(r.image_id).is_none() {
            return Err(Error::MalformedResults(format!(
                "result {i} references unknown image {}",
                r.image_id
            )));
        }
        if ds.category(r.category_id).is_none() {
            return Err(Error::MalformedResults(format!(
                "result {i} references unknown category {}",
                r.category_id
            )));
        }
        if !r.score.is_finite() {
            return Err(Error::MalformedResults(format!("result {i} has non-finite score")));
        }
        if !r.amodal_box.is_valid() || !r.modal_box.as_ref().is_none_or(BBox::is_valid) {
            return Err(Error::MalformedResults(format!("result {i} has an invalid box")));
        }
    }
    Ok(())
}

/// Result ids (positions) surviving the per-image detection cap.
fn capped_ids(results: &[DetectionResult], max_per_image: usize) -> Vec<usize> {
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, r) in results.iter().enumerate() {
        by_image.entry(r.image_id).or_default().push(i);
    }
    let mut keep = Vec::with_capacity(results.len());
    for ids in by_image.values_mut() {
        ids.sort_by(|&a, &b| rank_order((results[a].score, a as u64), (results[b].score, b as u64)));
        keep.extend(ids.iter().take(max_per_image).copied());
    }
    keep.sort_unstable();
    keep
}

fn gt_is_ignore_detection(
    ann: &crate::dataset::AmodalAnnotation,
    stratum: &EvalStratum,
    policy: UncertainPolicy,
) -> bool {
    if policy == UncertainPolicy::Ignore && ann.is_uncertain {
        return true;
    }
    match stratum.kind {
        StratumKind::All | StratumKind::Modal => false,
        StratumKind::VisibilityRange { lo, hi } => !stratum.closure.contains(lo, hi, ann.visibility),
        StratumKind::OutOfFrame => !ann.out_of_frame,
    }
}

fn summarize(
    config: &EvalConfig,
    categories: &[u64],
    // [threshold][category]
    tallies: Vec<Vec<CategoryTally>>,
) -> StratumReport {
    let n_cat = categories.len();
    let mut per_cat_sum = vec![0.0; n_cat];
    let mut per_cat_has = vec![false; n_cat];
    let mut per_threshold = Vec::new();
    let mut pr_curve = Vec::new();
    let mut counts0 = Counts::default();

    for (ti, row) in tallies.into_iter().enumerate() {
        let mut counts = Counts::default();
        let mut aps = Vec::new();
        let mut curves: Vec<Vec<f64>> = Vec::new();
        for (ci, tally) in row.into_iter().enumerate() {
            let (ap, curve, c) = tally.finish(config.interpolation);
            counts.add(&c);
            if let Some(ap) = ap {
                per_cat_sum[ci] += ap;
                per_cat_has[ci] = true;
                aps.push(ap);
                curves.push(curve);
            }
        }
        let ap = (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64);
        if ti == 0 {
            counts0 = counts;
            if !curves.is_empty() {
                pr_curve = (0..101)
                    .map(|k| curves.iter().map(|c| c[k]).sum::<f64>() / curves.len() as f64)
                    .collect();
            }
        }
        per_threshold.push(ThresholdReport {
            iou: config.iou_thresholds[ti],
            ap,
            counts,
        });
    }

    let n_thr = config.iou_thresholds.len() as f64;
    let per_category: BTreeMap<u64, Option<f64>> = categories
        .iter()
        .enumerate()
        .map(|(ci, &c)| (c, per_cat_has[ci].then(|| per_cat_sum[ci] / n_thr)))
        .collect();
    let valid: Vec<f64> = per_threshold.iter().filter_map(|t| t.ap).collect();
    let ap = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    StratumReport {
        ap,
        per_category,
        counts: counts0,
        per_threshold,
        pr_curve,
    }
}

fn sorted_category_ids(ds: &Dataset) -> Vec<u64> {
    let mut c: Vec<u64> = ds.categories.iter().map(|c| c.id).collect();
    c.sort_unstable();
    c
}

/// Detection AP for every configured detection stratum.
pub fn detection_ap(
    ds: &Dataset,
    results: &[DetectionResult],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    check_results(ds, results)?;
    let fed = Federation::new(ds);
    let categories = sorted_category_ids(ds);
    let keep = capped_ids(results, config.max_detections_per_image);

    // (category, image) -> gt annotation positions / result ids
    let mut gt_cells: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for (p, a) in ds.annotations.iter().enumerate() {
        gt_cells.entry((a.category_id, a.image_id)).or_default().push(p);
    }
    let mut det_cells: BTreeMap<(u64, u64), Vec<usize>> = BTreeMap::new();
    for &i in &keep {
        let r = &results[i];
        det_cells.entry((r.category_id, r.image_id)).or_default().push(i);
    }
    for ids in det_cells.values_mut() {
        ids.sort_by(|&a, &b| rank_order((results[a].score, a as u64), (results[b].score, b as u64)));
    }
    let mut images_by_cat: HashMap<u64, BTreeSet<u64>> = HashMap::new();
    for &(c, im) in gt_cells.keys().chain(det_cells.keys()) {
        images_by_cat.entry(c).or_default().insert(im);
    }

    let mut report = EvalReport::default();
    for stratum in &config.detection_strata {
        let modal = stratum.kind == StratumKind::Modal;
        let tallies: Vec<Vec<CategoryTally>> = config
            .iou_thresholds
            .iter()
            .map(|&thr| {
                categories
                    .par_iter()
                    .map(|&cat| {
                        let mut tally = CategoryTally::default();
                        let Some(images) = images_by_cat.get(&cat) else {
                            return tally;
                        };
                        for &im in images {
                            let video = ds.image(im).expect("linked").video_id;
                            if !fed.evaluated(video, cat) {
                                continue;
                            }
                            let gts: Vec<GtEntry> = gt_cells
                                .get(&(cat, im))
                                .into_iter()
                                .flatten()
                                .filter_map(|&p| {
                                    let a = &ds.annotations[p];
                                    let bbox = if modal { a.modal_box? } else { a.amodal_box };
                                    Some(GtEntry {
                                        bbox,
                                        ignore: gt_is_ignore_detection(
                                            a,
                                            stratum,
                                            config.uncertain_policy,
                                        ),
                                    })
                                })
                                .collect();
                            tally.n_gt += gts.iter().filter(|g| !g.ignore).count();
                            let dets: Vec<(usize, BBox)> = det_cells
                                .get(&(cat, im))
                                .into_iter()
                                .flatten()
                                .filter_map(|&i| {
                                    let r = &results[i];
                                    let b = if modal { r.modal_box? } else { r.amodal_box };
                                    Some((i, b))
                                })
                                .collect();
                            let boxes: Vec<BBox> = dets.iter().map(|d| d.1).collect();
                            let outcomes = match_detections(&gts, &boxes, thr);
                            let drop_fp = fed.fp_dropped(video, cat);
                            for ((i, _), outcome) in dets.iter().zip(outcomes) {
                                let outcome = match outcome {
                                    MatchOutcome::FalsePositive if drop_fp => {
                                        MatchOutcome::Ignored { gt: usize::MAX }
                                    }
                                    o => o,
                                };
                                tally.scored.push(Scored {
                                    score: results[*i].score,
                                    id: *i as u64,
                                    outcome,
                                });
                            }
                        }
                        tally
                    })
                    .collect()
            })
            .collect();
        report
            .strata
            .insert(stratum.name.clone(), summarize(config, &categories, tallies));
    }
    Ok(report)
}

/// A track prepared for 3D matching.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackTube {
    pub id: u64,
    pub category_id: u64,
    pub video_id: u64,
    pub score: f64,
    /// `(frame_index, box)` with strictly increasing frame index.
    pub boxes: Vec<(i64, BBox)>,
}

/// Groups track-carrying results into predicted tracks (amodal boxes, or modal
/// boxes when `modal`); score is the mean member score.
pub fn predicted_tracks(
    ds: &Dataset,
    results: &[DetectionResult],
    modal: bool,
) -> Result<Vec<TrackTube>> {
    let mut groups: BTreeMap<u64, Vec<&DetectionResult>> = BTreeMap::new();
    for r in results {
        if let Some(t) = r.track_id {
            groups.entry(t).or_default().push(r);
        }
    }
    let mut tubes = Vec::with_capacity(groups.len());
    for (id, members) in groups {
        let category_id = members[0].category_id;
        let video_id = ds
            .video_of_image(members[0].image_id)
            .ok_or_else(|| Error::MalformedResults(format!("track {id}: unknown image")))?
            .id;
        let mut boxes = Vec::with_capacity(members.len());
        let mut score_sum = 0.0;
        for r in &members {
            if r.category_id != category_id {
                return Err(Error::MalformedResults(format!(
                    "track {id} appears under categories {category_id} and {}",
                    r.category_id
                )));
            }
            let im = ds.image(r.image_id).ok_or_else(|| {
                Error::MalformedResults(format!("track {id}: unknown image {}", r.image_id))
            })?;
            if im.video_id != video_id {
                return Err(Error::MalformedResults(format!(
                    "track {id} spans videos {video_id} and {}",
                    im.video_id
                )));
            }
            score_sum += r.score;
            let b = if modal { r.modal_box } else { Some(r.amodal_box) };
            if let Some(b) = b {
                boxes.push((im.frame_index, b));
            }
        }
        boxes.sort_by_key(|(f, _)| *f);
        if boxes.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::MalformedResults(format!(
                "track {id} has two boxes on one frame"
            )));
        }
        if boxes.is_empty() {
            continue;
        }
        tubes.push(TrackTube {
            id,
            category_id,
            video_id,
            score: score_sum / members.len() as f64,
            boxes,
        });
    }
    Ok(tubes)
}

/// Ground-truth tracks with their ignore flag for a stratum.
fn gt_tubes(ds: &Dataset, stratum: &EvalStratum, policy: UncertainPolicy) -> Vec<(TrackTube, bool)> {
    let modal = stratum.kind == StratumKind::Modal;
    ds.track_records()
        .into_iter()
        .filter_map(|rec| {
            let anns: Vec<_> = rec.annotations.iter().map(|&p| &ds.annotations[p]).collect();
            if anns.is_empty() {
                return None;
            }
            let boxes: Vec<(i64, BBox)> = anns
                .iter()
                .filter_map(|a| {
                    let b = if modal { a.modal_box? } else { a.amodal_box };
                    Some((ds.frame_index_of(a), b))
                })
                .collect();
            if boxes.is_empty() {
                return None;
            }
            let in_stratum = match stratum.kind {
                StratumKind::All | StratumKind::Modal => true,
                StratumKind::VisibilityRange { lo, hi } => {
                    anns.iter()
                        .filter(|a| lo <= a.visibility && a.visibility <= hi)
                        .count()
                        > crate::dataset::OCCLUDED_TRACK_MIN_FRAMES
                }
                StratumKind::OutOfFrame => anns.iter().any(|a| a.out_of_frame),
            };
            let uncertain = policy == UncertainPolicy::Ignore && anns.iter().all(|a| a.is_uncertain);
            Some((
                TrackTube {
                    id: rec.track_id,
                    category_id: rec.category_id,
                    video_id: rec.video_id,
                    score: 1.0,
                    boxes,
                },
                !in_stratum || uncertain,
            ))
        })
        .collect()
}

/// Track-AP for every configured track stratum.
pub fn track_ap(
    ds: &Dataset,
    results: &[DetectionResult],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    check_results(ds, results)?;
    let fed = Federation::new(ds);
    let categories = sorted_category_ids(ds);
    let amodal_preds = predicted_tracks(ds, results, false)?;
    let modal_preds = predicted_tracks(ds, results, true)?;

    let mut report = EvalReport::default();
    for stratum in &config.track_strata {
        let preds = if stratum.kind == StratumKind::Modal {
            &modal_preds
        } else {
            &amodal_preds
        };
        let gts = gt_tubes(ds, stratum, config.uncertain_policy);

        let mut pred_cells: BTreeMap<(u64, u64), Vec<&TrackTube>> = BTreeMap::new();
        for t in preds {
            pred_cells.entry((t.category_id, t.video_id)).or_default().push(t);
        }
        for v in pred_cells.values_mut() {
            v.sort_by(|a, b| rank_order((a.score, a.id), (b.score, b.id)));
        }
        let mut gt_cells: BTreeMap<(u64, u64), Vec<&(TrackTube, bool)>> = BTreeMap::new();
        for g in &gts {
            gt_cells.entry((g.0.category_id, g.0.video_id)).or_default().push(g);
        }
        let mut videos_by_cat: HashMap<u64, BTreeSet<u64>> = HashMap::new();
        for &(c, v) in pred_cells.keys().chain(gt_cells.keys()) {
            videos_by_cat.entry(c).or_default().insert(v);
        }

        let tallies: Vec<Vec<CategoryTally>> = config
            .iou_thresholds
            .iter()
            .map(|&thr| {
                categories
                    .par_iter()
                    .map(|&cat| {
                        let mut tally = CategoryTally::default();
                        let Some(videos) = videos_by_cat.get(&cat) else {
                            return tally;
                        };
                        for &vid in videos {
                            if !fed.evaluated(vid, cat) {
                                continue;
                            }
                            let gt = gt_cells.get(&(cat, vid)).map(Vec::as_slice).unwrap_or(&[]);
                            let pr = pred_cells.get(&(cat, vid)).map(Vec::as_slice).unwrap_or(&[]);
                            let flags: Vec<bool> = gt.iter().map(|g| g.1).collect();
                            tally.n_gt += flags.iter().filter(|f| !**f).count();
                            let outcomes = greedy_match(pr.len(), &flags, thr, |p, g| {
                                geometry::spatiotemporal_iou(&pr[p].boxes, &gt[g].0.boxes)
                            });
                            let drop_fp = fed.fp_dropped(vid, cat);
                            for (t, outcome) in pr.iter().zip(outcomes) {
                                let outcome = match outcome {
                                    MatchOutcome::FalsePositive if drop_fp => {
                                        MatchOutcome::Ignored { gt: usize::MAX }
                                    }
                                    o => o,
                                };
                                tally.scored.push(Scored {
                                    score: t.score,
                                    id: t.id,
                                    outcome,
                                });
                            }
                        }
                        tally
                    })
                    .collect()
            })
            .collect();
        report
            .strata
            .insert(stratum.name.clone(), summarize(config, &categories, tallies));
    }
    Ok(report)
}

/// Detection AP and Track-AP in one report.
pub fn evaluate(ds: &Dataset, results: &[DetectionResult], config: &EvalConfig) -> Result<EvalReport> {
    let mut report = detection_ap(ds, results, config)?;
    report.merge(track_ap(ds, results, config)?);
    Ok(report)
}

/// Feeds ground truth back as results (score 1, track ids preserved).
pub fn ground_truth_as_results(ds: &Dataset) -> Vec<DetectionResult> {
    ds.annotations
        .iter()
        .map(|a| DetectionResult {
            image_id: a.image_id,
            category_id: a.category_id,
            amodal_box: a.amodal_box,
            modal_box: a.modal_box,
            score: 1.0,
            track_id: Some(a.track_id),
        })
        .collect()
}
