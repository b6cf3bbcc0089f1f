//! Amodal track annotations: data model, JSON I/O, validation and summary
//! statistics.
//!
//! The on-disk format is a single JSON document with the top-level arrays
//! `videos`, `images`, `annotations`, `categories` and `tracks`. Annotation
//! `bbox` is the amodal box, `modal_bbox` the (optional) visible box.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, BBox, FrameExtent};

/// Upper visibility bound of the heavy-occlusion band.
pub const HEAVY_MAX_VISIBILITY: f64 = 0.1;
/// Upper visibility bound of the partial-occlusion band.
pub const PARTIAL_MAX_VISIBILITY: f64 = 0.8;
/// A track is occluded when strictly more than this many annotated frames have
/// visibility at or below [`PARTIAL_MAX_VISIBILITY`] (frames are 1 s apart).
pub const OCCLUDED_TRACK_MIN_FRAMES: usize = 5;
/// Tolerance used when comparing stored and geometric visibility.
pub const VISIBILITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: u64,
    #[serde(default)]
    pub name: String,
    pub width: f64,
    pub height: f64,
    /// Categories verified absent from the video.
    #[serde(default)]
    pub neg_category_ids: Vec<u64>,
    /// Categories present but not exhaustively annotated.
    #[serde(default)]
    pub not_exhaustive_category_ids: Vec<u64>,
}

impl VideoMeta {
    pub fn frame_extent(&self) -> FrameExtent {
        FrameExtent::new(self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFrame {
    pub id: u64,
    pub video_id: u64,
    /// Position in the video; consecutive indices are one second apart.
    pub frame_index: i64,
    /// Per-frame extent; falls back to the video's when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
}

fn nan() -> f64 {
    f64::NAN
}

mod flag01 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Flag {
            Bool(bool),
            Int(i64),
        }
        match Flag::deserialize(d)? {
            Flag::Bool(b) => Ok(b),
            Flag::Int(0) => Ok(false),
            Flag::Int(1) => Ok(true),
            Flag::Int(other) => Err(de::Error::custom(format!(
                "is_uncertain must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// One object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmodalAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub track_id: u64,
    pub category_id: u64,
    /// Amodal box.
    #[serde(rename = "bbox")]
    pub amodal_box: BBox,
    /// Visible box; absent when the object is fully occluded or out of frame.
    #[serde(
        rename = "modal_bbox",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub modal_box: Option<BBox>,
    /// Derived from the boxes when missing from the file.
    #[serde(default = "nan")]
    pub visibility: f64,
    #[serde(default, with = "flag01")]
    pub is_uncertain: bool,
    /// Derived from the amodal box and the frame extent on load.
    #[serde(skip)]
    pub out_of_frame: bool,
}

impl AmodalAnnotation {
    pub fn geometric_visibility(&self) -> f64 {
        geometry::visibility(self.modal_box.as_ref(), &self.amodal_box)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackInfo {
    pub id: u64,
    pub category_id: u64,
    pub video_id: u64,
}

/// A track with its annotations in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub track_id: u64,
    pub category_id: u64,
    pub video_id: u64,
    /// Indices into [`Dataset::annotations`], ordered by frame index.
    pub annotations: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    videos: Vec<VideoMeta>,
    images: Vec<ImageFrame>,
    annotations: Vec<AmodalAnnotation>,
    categories: Vec<Category>,
    #[serde(default)]
    tracks: Vec<TrackInfo>,
}

#[derive(Debug, Clone, Default)]
struct Index {
    video: HashMap<u64, usize>,
    image: HashMap<u64, usize>,
    category: HashMap<u64, usize>,
    track: HashMap<u64, usize>,
}

/// A fully linked annotation set. Construct through [`Dataset::from_parts`] or
/// [`load_dataset`] so that every reference is known to resolve.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub videos: Vec<VideoMeta>,
    pub images: Vec<ImageFrame>,
    pub annotations: Vec<AmodalAnnotation>,
    pub categories: Vec<Category>,
    pub tracks: Vec<TrackInfo>,
    index: Index,
}

fn index_of<T>(
    items: &[T],
    kind: &'static str,
    id: impl Fn(&T) -> u64,
) -> Result<HashMap<u64, usize>> {
    let mut map = HashMap::with_capacity(items.len());
    for (pos, item) in items.iter().enumerate() {
        if map.insert(id(item), pos).is_some() {
            return Err(Error::DuplicateId { kind, id: id(item) });
        }
    }
    Ok(map)
}

impl Dataset {
    /// Links the tables and checks referential integrity.
    ///
    /// When `tracks` is empty, one track per distinct annotation `track_id` is
    /// synthesized (category and video taken from its first annotation).
    /// Missing visibilities are derived from the boxes.
    pub fn from_parts(
        videos: Vec<VideoMeta>,
        images: Vec<ImageFrame>,
        mut annotations: Vec<AmodalAnnotation>,
        categories: Vec<Category>,
        mut tracks: Vec<TrackInfo>,
    ) -> Result<Dataset> {
        let video = index_of(&videos, "video", |v| v.id)?;
        let image = index_of(&images, "image", |i| i.id)?;
        let category = index_of(&categories, "category", |c| c.id)?;
        index_of(&annotations, "annotation", |a| a.id)?;

        for v in &videos {
            for &c in v.neg_category_ids.iter().chain(&v.not_exhaustive_category_ids) {
                if !category.contains_key(&c) {
                    return Err(Error::Integrity {
                        record: "video",
                        record_id: v.id,
                        target: "category",
                        target_id: c,
                    });
                }
            }
        }
        for im in &images {
            if !video.contains_key(&im.video_id) {
                return Err(Error::Integrity {
                    record: "image",
                    record_id: im.id,
                    target: "video",
                    target_id: im.video_id,
                });
            }
        }
        for a in &annotations {
            if !image.contains_key(&a.image_id) {
                return Err(Error::Integrity {
                    record: "annotation",
                    record_id: a.id,
                    target: "image",
                    target_id: a.image_id,
                });
            }
            if !category.contains_key(&a.category_id) {
                return Err(Error::Integrity {
                    record: "annotation",
                    record_id: a.id,
                    target: "category",
                    target_id: a.category_id,
                });
            }
        }

        if tracks.is_empty() {
            let mut seen = BTreeMap::new();
            for a in &annotations {
                seen.entry(a.track_id).or_insert_with(|| TrackInfo {
                    id: a.track_id,
                    category_id: a.category_id,
                    video_id: images[image[&a.image_id]].video_id,
                });
            }
            tracks = seen.into_values().collect();
        }
        let track = index_of(&tracks, "track", |t| t.id)?;
        for t in &tracks {
            if !category.contains_key(&t.category_id) {
                return Err(Error::Integrity {
                    record: "track",
                    record_id: t.id,
                    target: "category",
                    target_id: t.category_id,
                });
            }
            if !video.contains_key(&t.video_id) {
                return Err(Error::Integrity {
                    record: "track",
                    record_id: t.id,
                    target: "video",
                    target_id: t.video_id,
                });
            }
        }
        for a in &annotations {
            if !track.contains_key(&a.track_id) {
                return Err(Error::Integrity {
                    record: "annotation",
                    record_id: a.id,
                    target: "track",
                    target_id: a.track_id,
                });
            }
        }

        let index = Index {
            video,
            image,
            category,
            track,
        };
        let extent_of = |image_id: u64| {
            let im = &images[index.image[&image_id]];
            image_extent(im, &videos[index.video[&im.video_id]])
        };
        for a in &mut annotations {
            if a.visibility.is_nan() {
                a.visibility = a.geometric_visibility();
            }
            a.out_of_frame = geometry::is_out_of_frame(&a.amodal_box, &extent_of(a.image_id));
        }

        Ok(Dataset {
            videos,
            images,
            annotations,
            categories,
            tracks,
            index,
        })
    }

    pub fn empty() -> Dataset {
        Dataset::from_parts(vec![], vec![], vec![], vec![], vec![]).expect("empty dataset links")
    }

    pub fn from_json_str(s: &str) -> Result<Dataset> {
        let file: DatasetFile = serde_json::from_str(s)?;
        Dataset::from_parts(
            file.videos,
            file.images,
            file.annotations,
            file.categories,
            file.tracks,
        )
    }

    /// Canonical JSON: object keys sorted, floats in shortest round-trip form.
    pub fn to_canonical_json(&self) -> String {
        let file = DatasetFile {
            videos: self.videos.clone(),
            images: self.images.clone(),
            annotations: self.annotations.clone(),
            categories: self.categories.clone(),
            tracks: self.tracks.clone(),
        };
        canonical_json(&file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn video(&self, id: u64) -> Option<&VideoMeta> {
        self.index.video.get(&id).map(|&p| &self.videos[p])
    }

    pub fn image(&self, id: u64) -> Option<&ImageFrame> {
        self.index.image.get(&id).map(|&p| &self.images[p])
    }

    pub fn category(&self, id: u64) -> Option<&Category> {
        self.index.category.get(&id).map(|&p| &self.categories[p])
    }

    pub fn track(&self, id: u64) -> Option<&TrackInfo> {
        self.index.track.get(&id).map(|&p| &self.tracks[p])
    }

    /// Video owning an image.
    pub fn video_of_image(&self, image_id: u64) -> Option<&VideoMeta> {
        self.image(image_id).and_then(|im| self.video(im.video_id))
    }

    pub fn frame_extent(&self, image_id: u64) -> Option<FrameExtent> {
        let im = self.image(image_id)?;
        Some(image_extent(im, self.video(im.video_id)?))
    }

    /// Images of a video ordered by frame index.
    pub fn video_frames(&self, video_id: u64) -> Vec<&ImageFrame> {
        let mut frames: Vec<_> = self.images.iter().filter(|i| i.video_id == video_id).collect();
        frames.sort_by_key(|i| (i.frame_index, i.id));
        frames
    }

    /// Tracks ordered by id, annotations ordered by frame index.
    pub fn track_records(&self) -> Vec<TrackRecord> {
        let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (pos, a) in self.annotations.iter().enumerate() {
            members.entry(a.track_id).or_default().push(pos);
        }
        let mut out: Vec<TrackRecord> = self
            .tracks
            .iter()
            .map(|t| {
                let mut anns = members.remove(&t.id).unwrap_or_default();
                anns.sort_by_key(|&p| {
                    let a = &self.annotations[p];
                    (self.image(a.image_id).map(|i| i.frame_index), a.id)
                });
                TrackRecord {
                    track_id: t.id,
                    category_id: t.category_id,
                    video_id: t.video_id,
                    annotations: anns,
                }
            })
            .collect();
        out.sort_by_key(|t| t.track_id);
        out
    }

    /// Frame index of an annotation.
    pub fn frame_index_of(&self, ann: &AmodalAnnotation) -> i64 {
        self.image(ann.image_id).map_or(0, |i| i.frame_index)
    }

    /// Recomputes derived fields (`out_of_frame`, and the lookup index) after
    /// the public tables were edited in place.
    pub fn relink(self) -> Result<Dataset> {
        Dataset::from_parts(
            self.videos,
            self.images,
            self.annotations,
            self.categories,
            self.tracks,
        )
    }

    /// Overwrites every stored visibility with the geometric one.
    pub fn rederive_visibility(&mut self) {
        for a in &mut self.annotations {
            a.visibility = a.geometric_visibility();
        }
    }
}

fn image_extent(im: &ImageFrame, video: &VideoMeta) -> FrameExtent {
    FrameExtent::new(
        im.width.unwrap_or(video.width),
        im.height.unwrap_or(video.height),
    )
}

/// Serializes through `serde_json::Value`, whose maps are ordered by key.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("serializable value");
    serde_json::to_string(&v).expect("value serializes")
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Dataset::from_json_str(&text)
}

/// Recomputes every annotation's visibility from its boxes.
pub fn derive_visibility(mut dataset: Dataset) -> Dataset {
    dataset.rederive_visibility();
    dataset
}

/// How visibility intervals treat their end points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StratumClosure {
    /// `[lo, hi)`, with the top interval closed at 1.
    #[default]
    HalfOpen,
    /// `(lo, hi]`, with the bottom interval closed at 0.
    UpperClosed,
}

impl StratumClosure {
    pub fn contains(self, lo: f64, hi: f64, v: f64) -> bool {
        match self {
            StratumClosure::HalfOpen => lo <= v && (v < hi || (hi >= 1.0 && v <= hi)),
            StratumClosure::UpperClosed => v <= hi && (v > lo || (lo <= 0.0 && v >= lo)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionBand {
    Heavy,
    Partial,
    NonOccluded,
}

impl OcclusionBand {
    pub fn classify(visibility: f64, closure: StratumClosure) -> OcclusionBand {
        if closure.contains(0.0, HEAVY_MAX_VISIBILITY, visibility) {
            OcclusionBand::Heavy
        } else if closure.contains(HEAVY_MAX_VISIBILITY, PARTIAL_MAX_VISIBILITY, visibility) {
            OcclusionBand::Partial
        } else {
            OcclusionBand::NonOccluded
        }
    }
}

/// Whether a track counts as occluded given its per-frame visibilities.
pub fn is_occluded_track(visibilities: impl IntoIterator<Item = f64>) -> bool {
    visibilities
        .into_iter()
        .filter(|&v| v <= PARTIAL_MAX_VISIBILITY)
        .count()
        > OCCLUDED_TRACK_MIN_FRAMES
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationCode {
    VisibilityMismatch,
    VisibilityOutOfRange,
    DuplicateTrackFrame,
    DuplicateFrameIndex,
    InvalidBox,
    AmodalOutsideWorkspace,
    TrackCategoryMismatch,
    TrackVideoMismatch,
    FrameExtentMismatch,
    FederationOverlap,
    NegativeCategoryAnnotated,
}

impl ViolationCode {
    pub fn severity(self) -> Severity {
        match self {
            ViolationCode::VisibilityMismatch => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub video_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub annotation_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, code: ViolationCode) -> usize {
        self.violations.iter().filter(|v| v.code == code).count()
    }

    pub fn errors(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.severity == Severity::Error)
    }

    fn push(&mut self, code: ViolationCode, location: Location, message: String) {
        self.violations.push(Violation {
            code,
            severity: code.severity(),
            location,
            message,
        });
    }
}

/// Checks annotation and track invariants. Violations are data, not errors.
pub fn validate(ds: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();

    for v in &ds.videos {
        let neg: BTreeSet<_> = v.neg_category_ids.iter().collect();
        for c in &v.not_exhaustive_category_ids {
            if neg.contains(c) {
                report.push(
                    ViolationCode::FederationOverlap,
                    Location {
                        video_id: Some(v.id),
                        ..Default::default()
                    },
                    format!("category {c} is both negative and not exhaustive"),
                );
            }
        }
    }

    let mut frame_slots: HashMap<(u64, i64), u64> = HashMap::new();
    let mut images: Vec<_> = ds.images.iter().collect();
    images.sort_by_key(|i| i.id);
    for im in images {
        let loc = Location {
            video_id: Some(im.video_id),
            image_id: Some(im.id),
            ..Default::default()
        };
        if let Some(first) = frame_slots.insert((im.video_id, im.frame_index), im.id) {
            report.push(
                ViolationCode::DuplicateFrameIndex,
                loc.clone(),
                format!("frame index {} already used by image {first}", im.frame_index),
            );
        }
        let video = ds.video(im.video_id).expect("linked");
        let w_bad = im.width.is_some_and(|w| w != video.width);
        let h_bad = im.height.is_some_and(|h| h != video.height);
        if w_bad || h_bad {
            report.push(
                ViolationCode::FrameExtentMismatch,
                loc,
                format!(
                    "image extent {:?}x{:?} differs from video {}x{}",
                    im.width, im.height, video.width, video.height
                ),
            );
        }
    }

    let mut track_frames: HashMap<(u64, u64), u64> = HashMap::new();
    let mut annotated: BTreeSet<(u64, u64)> = BTreeSet::new();
    let mut anns: Vec<_> = ds.annotations.iter().collect();
    anns.sort_by_key(|a| a.id);
    for a in anns {
        let image = ds.image(a.image_id).expect("linked");
        let loc = Location {
            video_id: Some(image.video_id),
            image_id: Some(a.image_id),
            track_id: Some(a.track_id),
            annotation_id: Some(a.id),
        };
        annotated.insert((image.video_id, a.category_id));

        if let Some(first) = track_frames.insert((a.track_id, a.image_id), a.id) {
            report.push(
                ViolationCode::DuplicateTrackFrame,
                loc.clone(),
                format!("track already annotated on this image by annotation {first}"),
            );
        }

        let boxes_ok = a.amodal_box.is_valid() && a.modal_box.as_ref().is_none_or(BBox::is_valid);
        if !boxes_ok {
            report.push(
                ViolationCode::InvalidBox,
                loc.clone(),
                "box has non-finite coordinates or negative size".into(),
            );
        } else {
            let extent = ds.frame_extent(a.image_id).expect("linked");
            let clipped = geometry::clip_to_workspace(&a.amodal_box, &extent);
            let off = [
                clipped.x - a.amodal_box.x,
                clipped.y - a.amodal_box.y,
                clipped.w - a.amodal_box.w,
                clipped.h - a.amodal_box.h,
            ];
            if off.iter().any(|d| d.abs() > 1e-9) {
                report.push(
                    ViolationCode::AmodalOutsideWorkspace,
                    loc.clone(),
                    format!("amodal box {:?} leaves the annotation workspace", a.amodal_box),
                );
            }
        }

        if !(0.0..=1.0).contains(&a.visibility) {
            report.push(
                ViolationCode::VisibilityOutOfRange,
                loc.clone(),
                format!("visibility {} outside [0, 1]", a.visibility),
            );
        } else if boxes_ok {
            let geo = a.geometric_visibility();
            if (geo - a.visibility).abs() > VISIBILITY_TOLERANCE {
                report.push(
                    ViolationCode::VisibilityMismatch,
                    loc.clone(),
                    format!("stored visibility {} but boxes give {geo}", a.visibility),
                );
            }
        }

        let track = ds.track(a.track_id).expect("linked");
        if track.category_id != a.category_id {
            report.push(
                ViolationCode::TrackCategoryMismatch,
                loc.clone(),
                format!(
                    "annotation category {} differs from track category {}",
                    a.category_id, track.category_id
                ),
            );
        }
        if track.video_id != image.video_id {
            report.push(
                ViolationCode::TrackVideoMismatch,
                loc,
                format!(
                    "annotation lies in video {} but track belongs to video {}",
                    image.video_id, track.video_id
                ),
            );
        }
    }

    for v in &ds.videos {
        for c in &v.neg_category_ids {
            if annotated.contains(&(v.id, *c)) {
                report.push(
                    ViolationCode::NegativeCategoryAnnotated,
                    Location {
                        video_id: Some(v.id),
                        ..Default::default()
                    },
                    format!("category {c} is declared negative but annotated"),
                );
            }
        }
    }

    report
        .violations
        .sort_by(|a, b| (a.code, &a.location).cmp(&(b.code, &b.location)));
    report
}

/// Dataset summary counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_sequences: usize,
    /// Categories with at least one annotation.
    pub n_categories: usize,
    pub n_annotations: usize,
    pub n_tracks: usize,
    pub n_partial_boxes: usize,
    pub n_heavy_boxes: usize,
    pub n_nonoccluded_boxes: usize,
    pub n_oof_boxes: usize,
    pub n_uncertain_boxes: usize,
    pub n_occluded_tracks: usize,
    /// Mean over tracks of `last - first` frame index.
    pub mean_track_length_seconds: f64,
    /// Sum over videos of the number of one-second frame slots spanned.
    pub total_length_seconds: f64,
}

#[derive(Debug, Default)]
struct VideoTally {
    heavy: usize,
    partial: usize,
    nonoccluded: usize,
    oof: usize,
    uncertain: usize,
    annotations: usize,
    tracks: usize,
    occluded_tracks: usize,
    track_length_sum: i64,
    span: i64,
    categories: BTreeSet<u64>,
}

pub fn stats(ds: &Dataset) -> StatsReport {
    stats_with_closure(ds, StratumClosure::default())
}

pub fn stats_with_closure(ds: &Dataset, closure: StratumClosure) -> StatsReport {
    let records = ds.track_records();
    let mut by_video: BTreeMap<u64, Vec<&TrackRecord>> = BTreeMap::new();
    for r in &records {
        by_video.entry(r.video_id).or_default().push(r);
    }
    let mut video_ids: Vec<u64> = ds.videos.iter().map(|v| v.id).collect();
    video_ids.sort_unstable();

    let tallies: Vec<VideoTally> = video_ids
        .par_iter()
        .map(|vid| {
            let mut t = VideoTally::default();
            let frames = ds.video_frames(*vid);
            if let (Some(first), Some(last)) = (frames.first(), frames.last()) {
                t.span = last.frame_index - first.frame_index + 1;
            }
            for rec in by_video.get(vid).map(Vec::as_slice).unwrap_or(&[]) {
                let anns: Vec<&AmodalAnnotation> =
                    rec.annotations.iter().map(|&p| &ds.annotations[p]).collect();
                for a in &anns {
                    t.annotations += 1;
                    t.categories.insert(a.category_id);
                    match OcclusionBand::classify(a.visibility, closure) {
                        OcclusionBand::Heavy => t.heavy += 1,
                        OcclusionBand::Partial => t.partial += 1,
                        OcclusionBand::NonOccluded => t.nonoccluded += 1,
                    }
                    t.oof += usize::from(a.out_of_frame);
                    t.uncertain += usize::from(a.is_uncertain);
                }
                if let (Some(first), Some(last)) = (anns.first(), anns.last()) {
                    t.tracks += 1;
                    t.track_length_sum += ds.frame_index_of(last) - ds.frame_index_of(first);
                    if is_occluded_track(anns.iter().map(|a| a.visibility)) {
                        t.occluded_tracks += 1;
                    }
                }
            }
            t
        })
        .collect();

    let mut report = StatsReport {
        n_sequences: ds.videos.len(),
        ..Default::default()
    };
    let mut categories = BTreeSet::new();
    let mut length_sum = 0i64;
    for t in tallies {
        report.n_heavy_boxes += t.heavy;
        report.n_partial_boxes += t.partial;
        report.n_nonoccluded_boxes += t.nonoccluded;
        report.n_oof_boxes += t.oof;
        report.n_uncertain_boxes += t.uncertain;
        report.n_annotations += t.annotations;
        report.n_tracks += t.tracks;
        report.n_occluded_tracks += t.occluded_tracks;
        report.total_length_seconds += t.span as f64;
        length_sum += t.track_length_sum;
        categories.extend(t.categories);
    }
    report.n_categories = categories.len();
    if report.n_tracks > 0 {
        report.mean_track_length_seconds = length_sum as f64 / report.n_tracks as f64;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(id: u64) -> VideoMeta {
        VideoMeta {
            id,
            name: format!("v{id}"),
            width: 100.0,
            height: 100.0,
            neg_category_ids: vec![],
            not_exhaustive_category_ids: vec![],
        }
    }

    fn frame(id: u64, video_id: u64, frame_index: i64) -> ImageFrame {
        ImageFrame {
            id,
            video_id,
            frame_index,
            width: None,
            height: None,
            file_name: None,
        }
    }

    fn ann(id: u64, image_id: u64, track_id: u64, amodal: BBox, modal: Option<BBox>) -> AmodalAnnotation {
        let vis = geometry::visibility(modal.as_ref(), &amodal);
        AmodalAnnotation {
            id,
            image_id,
            track_id,
            category_id: 1,
            amodal_box: amodal,
            modal_box: modal,
            visibility: vis,
            is_uncertain: false,
            out_of_frame: false,
        }
    }

    fn cats() -> Vec<Category> {
        vec![Category {
            id: 1,
            name: "person".into(),
        }]
    }

    const MINIMAL: &str = r#"{
        "videos": [{"id": 1, "name": "v", "width": 100, "height": 80}],
        "images": [{"id": 10, "video_id": 1, "frame_index": 0}],
        "annotations": [{"id": 100, "image_id": 10, "track_id": 7, "category_id": 3,
                         "bbox": [-5, 0, 20, 20], "modal_bbox": [0, 0, 15, 20], "is_uncertain": 0}],
        "categories": [{"id": 3, "name": "cat"}]
    }"#;

    #[test]
    fn minimal_file_loads_one_track() {
        let ds = Dataset::from_json_str(MINIMAL).unwrap();
        assert_eq!(ds.tracks.len(), 1);
        assert_eq!(ds.tracks[0].id, 7);
        assert_eq!(ds.tracks[0].video_id, 1);
        let a = &ds.annotations[0];
        assert!(a.out_of_frame);
        assert!((a.visibility - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dangling_image_is_an_integrity_error() {
        let bad = MINIMAL.replace("\"image_id\": 10", "\"image_id\": 99");
        match Dataset::from_json_str(&bad) {
            Err(Error::Integrity {
                target, target_id, ..
            }) => {
                assert_eq!(target, "image");
                assert_eq!(target_id, 99);
            }
            other => panic!("expected integrity error, got {other:?}"),
        }
    }

    #[test]
    fn dangling_track_and_category_are_reported() {
        let bad = MINIMAL.replace("\"category_id\": 3", "\"category_id\": 4");
        assert!(matches!(
            Dataset::from_json_str(&bad),
            Err(Error::Integrity { target: "category", target_id: 4, .. })
        ));
        let with_tracks = MINIMAL.replace(
            "\"categories\"",
            "\"tracks\": [{\"id\": 8, \"category_id\": 3, \"video_id\": 1}], \"categories\"",
        );
        assert!(matches!(
            Dataset::from_json_str(&with_tracks),
            Err(Error::Integrity { target: "track", target_id: 7, .. })
        ));
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        assert!(matches!(Dataset::from_json_str("{\"videos\": ["), Err(Error::Parse(_))));
        let bad_flag = MINIMAL.replace("\"is_uncertain\": 0", "\"is_uncertain\": 2");
        assert!(matches!(Dataset::from_json_str(&bad_flag), Err(Error::Parse(_))));
    }

    #[test]
    fn canonical_serialization_is_a_fixed_point() {
        let ds = Dataset::from_json_str(MINIMAL).unwrap();
        let once = ds.to_canonical_json();
        let twice = Dataset::from_json_str(&once).unwrap().to_canonical_json();
        assert_eq!(once, twice);
        assert!(once.starts_with("{\"annotations\":"));
    }

    #[test]
    fn derive_visibility_examples() {
        let full = BBox::new(0.0, 0.0, 10.0, 10.0);
        let mut a = ann(1, 1, 1, full, Some(full));
        a.visibility = 0.3;
        let mut b = ann(2, 2, 1, full, None);
        b.visibility = 0.3;
        let mut c = ann(3, 3, 1, full, Some(BBox::new(0.0, 0.0, 5.0, 10.0)));
        c.visibility = 0.9;
        let ds = Dataset::from_parts(
            vec![video(1)],
            vec![frame(1, 1, 0), frame(2, 1, 1), frame(3, 1, 2)],
            vec![a, b, c],
            cats(),
            vec![],
        )
        .unwrap();
        let ds = derive_visibility(ds);
        let vis: Vec<f64> = ds.annotations.iter().map(|a| a.visibility).collect();
        assert_eq!(vis, vec![1.0, 0.0, 0.5]);
        let again = derive_visibility(ds.clone());
        assert_eq!(again.annotations, ds.annotations);
    }

    #[test]
    fn validate_flags_mismatch_and_duplicates() {
        let full = BBox::new(0.0, 0.0, 10.0, 10.0);
        let half = BBox::new(0.0, 0.0, 5.0, 10.0);
        let clean = Dataset::from_parts(
            vec![video(1)],
            vec![frame(1, 1, 0), frame(2, 1, 1)],
            vec![ann(1, 1, 1, full, Some(half)), ann(2, 2, 1, full, Some(full))],
            cats(),
            vec![],
        )
        .unwrap();
        assert!(validate(&clean).is_clean());

        let mut mismatch = clean.clone();
        mismatch.annotations[0].visibility = 0.9;
        let r = validate(&mismatch);
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.count(ViolationCode::VisibilityMismatch), 1);
        assert_eq!(r.violations[0].severity, Severity::Warning);
        assert_eq!(r.violations[0].location.annotation_id, Some(1));

        let mut dup = clean.clone();
        dup.annotations[1].image_id = 1;
        let dup = dup.relink().unwrap();
        let r = validate(&dup);
        assert_eq!(r.count(ViolationCode::DuplicateTrackFrame), 1);
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn validate_catches_structural_problems() {
        let full = BBox::new(0.0, 0.0, 10.0, 10.0);
        let mut v = video(1);
        v.neg_category_ids = vec![1];
        v.not_exhaustive_category_ids = vec![1];
        let mut im2 = frame(2, 1, 0);
        im2.width = Some(50.0);
        let far = BBox::new(-80.0, 0.0, 20.0, 10.0);
        let ds = Dataset::from_parts(
            vec![v],
            vec![frame(1, 1, 0), im2],
            vec![ann(1, 1, 1, full, Some(full)), ann(2, 2, 1, far, None)],
            cats(),
            vec![],
        )
        .unwrap();
        let r = validate(&ds);
        for code in [
            ViolationCode::FederationOverlap,
            ViolationCode::DuplicateFrameIndex,
            ViolationCode::FrameExtentMismatch,
            ViolationCode::AmodalOutsideWorkspace,
            ViolationCode::NegativeCategoryAnnotated,
        ] {
            assert_eq!(r.count(code), 1, "{code:?} in {r:#?}");
        }
    }

    #[test]
    fn band_closures_partition() {
        for closure in [StratumClosure::HalfOpen, StratumClosure::UpperClosed] {
            for k in 0..=1000 {
                let v = k as f64 / 1000.0;
                let hits = [
                    closure.contains(0.0, 0.1, v),
                    closure.contains(0.1, 0.8, v),
                    closure.contains(0.8, 1.0, v),
                ];
                assert_eq!(hits.iter().filter(|h| **h).count(), 1, "{closure:?} {v}");
            }
        }
        assert_eq!(OcclusionBand::classify(0.1, StratumClosure::HalfOpen), OcclusionBand::Partial);
        assert_eq!(OcclusionBand::classify(0.1, StratumClosure::UpperClosed), OcclusionBand::Heavy);
        assert_eq!(OcclusionBand::classify(0.8, StratumClosure::HalfOpen), OcclusionBand::NonOccluded);
        assert_eq!(OcclusionBand::classify(0.8, StratumClosure::UpperClosed), OcclusionBand::Partial);
    }

    #[test]
    fn empty_stats_are_zero() {
        assert_eq!(stats(&Dataset::empty()), StatsReport::default());
    }

    #[test]
    fn six_occluded_frames_make_an_occluded_track() {
        let amodal = BBox::new(0.0, 0.0, 10.0, 10.0);
        let modal = BBox::new(0.0, 0.0, 5.0, 10.0);
        let build = |n: u64| {
            let images = (0..n).map(|i| frame(i + 1, 1, i as i64)).collect();
            let anns = (0..n).map(|i| ann(i + 1, i + 1, 1, amodal, Some(modal))).collect();
            Dataset::from_parts(vec![video(1)], images, anns, cats(), vec![]).unwrap()
        };
        let s6 = stats(&build(6));
        assert_eq!(s6.n_occluded_tracks, 1);
        assert_eq!(s6.n_partial_boxes, 6);
        assert_eq!(s6.mean_track_length_seconds, 5.0);
        assert_eq!(s6.total_length_seconds, 6.0);
        assert_eq!(stats(&build(5)).n_occluded_tracks, 0);
    }

    #[test]
    fn stats_ignore_annotation_order() {
        let amodal = BBox::new(90.0, 0.0, 20.0, 10.0);
        let images: Vec<_> = (0..8).map(|i| frame(i + 1, 1, i as i64)).collect();
        let anns: Vec<_> = (0..8)
            .map(|i| {
                let modal = (i % 3 != 0).then(|| BBox::new(90.0, 0.0, 10.0 - i as f64, 10.0));
                ann(i + 1, i + 1, 1 + i % 2, amodal, modal)
            })
            .collect();
        let mut reversed = anns.clone();
        reversed.reverse();
        let a = Dataset::from_parts(vec![video(1)], images.clone(), anns, cats(), vec![]).unwrap();
        let b = Dataset::from_parts(vec![video(1)], images, reversed, cats(), vec![]).unwrap();
        let (sa, sb) = (stats(&a), stats(&b));
        assert_eq!(sa, sb);
        assert_eq!(
            sa.n_heavy_boxes + sa.n_partial_boxes + sa.n_nonoccluded_boxes,
            sa.n_annotations
        );
        assert_eq!(sa.n_oof_boxes, 8);
    }
}
