//! Online amodal tracker: constant-velocity Kalman filter over
//! `[cx, cy, w, h]`, optimal IoU association per category, and coasting of
//! confirmed tracks through frames where they are not detected.

use std::collections::BTreeMap;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{self, BBox};
use crate::metrics::DetectionResult;

pub type StateVec = SVector<f64, 8>;
pub type StateCov = SMatrix<f64, 8, 8>;
type MeasVec = SVector<f64, 4>;
type MeasCov = SMatrix<f64, 4, 4>;
type ObsMat = SMatrix<f64, 4, 8>;

/// Smallest width/height kept in the state mean.
const MIN_SIZE: f64 = 1e-6;
/// Initial position and size variance (px^2).
const INITIAL_POSITION_VARIANCE: f64 = 10.0;
/// Initial velocity variance; large so the first few measurements set the
/// velocity instead of the zero prior.
const INITIAL_VELOCITY_VARIANCE: f64 = 1e6;

/// Mean `[cx, cy, w, h, vcx, vcy, vw, vh]` and covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanState {
    pub mean: StateVec,
    pub covariance: StateCov,
}

impl KalmanState {
    pub fn bbox(&self) -> BBox {
        BBox::from_center(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    pub fn velocity(&self) -> [f64; 4] {
        [self.mean[4], self.mean[5], self.mean[6], self.mean[7]]
    }

    /// Smallest eigenvalue of the symmetrized covariance.
    pub fn min_covariance_eigenvalue(&self) -> f64 {
        let sym = (self.covariance + self.covariance.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }

    pub fn covariance_asymmetry(&self) -> f64 {
        (self.covariance - self.covariance.transpose()).abs().max()
    }
}

/// Transition and noise model shared by every track of a tracker.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    transition: StateCov,
    observation: ObsMat,
    process_noise: StateCov,
    measurement_noise: MeasCov,
}

impl KalmanFilter {
    pub fn new(process_noise_scale: f64, measurement_noise_scale: f64) -> Self {
        let mut transition = StateCov::identity();
        for i in 0..4 {
            transition[(i, i + 4)] = 1.0;
        }
        let mut observation = ObsMat::zeros();
        for i in 0..4 {
            observation[(i, i)] = 1.0;
        }
        let mut q = StateCov::identity() * process_noise_scale;
        for i in 4..8 {
            q[(i, i)] *= 0.01;
        }
        KalmanFilter {
            transition,
            observation,
            process_noise: q,
            measurement_noise: MeasCov::identity() * measurement_noise_scale,
        }
    }

    pub fn initiate(&self, measurement: &BBox) -> KalmanState {
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&measure(measurement));
        let mut cov = StateCov::zeros();
        for i in 0..4 {
            cov[(i, i)] = INITIAL_POSITION_VARIANCE;
            cov[(i + 4, i + 4)] = INITIAL_VELOCITY_VARIANCE;
        }
        KalmanState {
            mean,
            covariance: cov,
        }
    }

    /// One unit time step of constant-velocity motion. Size velocities that
    /// would collapse the box are zeroed first.
    pub fn predict(&self, state: &KalmanState) -> KalmanState {
        let mut mean = state.mean;
        for i in 2..4 {
            if mean[i] + mean[i + 4] <= MIN_SIZE {
                mean[i + 4] = 0.0;
            }
        }
        let f = &self.transition;
        let cov = f * state.covariance * f.transpose() + self.process_noise;
        KalmanState {
            mean: f * mean,
            covariance: symmetrize(cov),
        }
    }

    /// Measurement update with a box observation (Joseph form).
    pub fn update(&self, state: &KalmanState, measurement: &BBox) -> Result<KalmanState> {
        if !(measurement.w > 0.0 && measurement.h > 0.0) || !measurement.is_valid() {
            return Err(Error::InvalidBox(format!(
                "measurement {measurement:?} must have positive size"
            )));
        }
        let h = &self.observation;
        let p = &state.covariance;
        let s = h * p * h.transpose() + self.measurement_noise;
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| Error::Invariant("singular innovation covariance".into()))?;
        let gain = p * h.transpose() * s_inv;
        let innovation = measure(measurement) - h * state.mean;
        let mut mean = state.mean + gain * innovation;
        for i in 2..4 {
            mean[i] = mean[i].max(MIN_SIZE);
        }
        let i_kh = StateCov::identity() - gain * h;
        let cov = i_kh * p * i_kh.transpose() + gain * self.measurement_noise * gain.transpose();
        Ok(KalmanState {
            mean,
            covariance: symmetrize(cov),
        })
    }
}

fn measure(b: &BBox) -> MeasVec {
    MeasVec::new(b.cx(), b.cy(), b.w, b.h)
}

fn symmetrize(m: StateCov) -> StateCov {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Coasting,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackHypothesis {
    pub track_id: u64,
    pub state: KalmanState,
    pub category_id: u64,
    pub hits: u32,
    pub age: u32,
    pub time_since_update: u32,
    pub status: TrackStatus,
    /// Score of the last matched detection.
    pub last_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Minimum IoU between a predicted box and a detection for association.
    pub iou_gate: f64,
    /// Frames a confirmed track may go unmatched before it is dropped.
    pub max_coast: u32,
    /// Matches needed before a track is confirmed (and allowed to coast).
    pub min_hits: u32,
    pub process_noise_scale: f64,
    pub measurement_noise_scale: f64,
    /// Emit predicted boxes for coasting tracks.
    pub emit_coasted: bool,
    /// Coasted score = last score * decay^time_since_update.
    pub coast_score_decay: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_gate: 0.3,
            max_coast: 10,
            min_hits: 2,
            process_noise_scale: 1.0,
            measurement_noise_scale: 1.0,
            emit_coasted: true,
            coast_score_decay: 0.9,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.iou_gate > 0.0 && self.iou_gate <= 1.0) {
            return bad("iou_gate must lie in (0, 1]");
        }
        if self.max_coast < 1 {
            return bad("max_coast must be at least 1");
        }
        if self.min_hits < 1 {
            return bad("min_hits must be at least 1");
        }
        if !(self.process_noise_scale > 0.0 && self.measurement_noise_scale > 0.0) {
            return bad("noise scales must be positive");
        }
        if !(self.coast_score_decay > 0.0 && self.coast_score_decay <= 1.0) {
            return bad("coast_score_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Outcome of one association round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Association {
    /// `(track index, detection index)`.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Associates predicted track boxes with detections: per category, the
/// assignment maximizing the number of pairs with IoU >= `iou_gate`, then
/// minimizing the summed `1 - IoU`. Inputs are `(category, box)`.
pub fn associate(tracks: &[(u64, BBox)], detections: &[(u64, BBox)], iou_gate: f64) -> Association {
    let mut by_cat: BTreeMap<u64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, (c, _)) in tracks.iter().enumerate() {
        by_cat.entry(*c).or_default().0.push(i);
    }
    for (j, (c, _)) in detections.iter().enumerate() {
        by_cat.entry(*c).or_default().1.push(j);
    }
    let mut out = Association::default();
    let mut det_taken = vec![false; detections.len()];
    let mut trk_taken = vec![false; tracks.len()];
    for (rows, cols) in by_cat.values() {
        if rows.is_empty() || cols.is_empty() {
            continue;
        }
        // gated pairs cost more than any full set of admissible pairs
        let gated = 2.0 + rows.len().max(cols.len()) as f64;
        let mut costs = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            for &c in cols {
                let iou = geometry::iou(&tracks[r].1, &detections[c].1);
                costs.push(if iou >= iou_gate { 1.0 - iou } else { gated });
            }
        }
        let solution = assignment::solve(&costs, rows.len(), cols.len());
        for (ri, ci) in solution.into_iter().enumerate() {
            if let Some(ci) = ci {
                if costs[ri * cols.len() + ci] < gated {
                    out.matches.push((rows[ri], cols[ci]));
                    trk_taken[rows[ri]] = true;
                    det_taken[cols[ci]] = true;
                }
            }
        }
    }
    out.matches.sort_unstable();
    out.unmatched_tracks = (0..tracks.len()).filter(|&i| !trk_taken[i]).collect();
    out.unmatched_detections = (0..detections.len()).filter(|&j| !det_taken[j]).collect();
    out
}

/// One frame of input.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput {
    pub image_id: u64,
    pub frame_index: i64,
    pub detections: Vec<DetectionResult>,
}

/// Single-sequence stateful tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    filter: KalmanFilter,
    tracks: Vec<TrackHypothesis>,
    next_id: u64,
    last_frame: Option<i64>,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let filter = KalmanFilter::new(config.process_noise_scale, config.measurement_noise_scale);
        Ok(Tracker {
            config,
            filter,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn tracks(&self) -> &[TrackHypothesis] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Advances one frame and returns the boxes emitted for it, each carrying
    /// its (sequence-local) track id.
    pub fn step(&mut self, frame: &FrameInput) -> Result<Vec<DetectionResult>> {
        if let Some(prev) = self.last_frame {
            if frame.frame_index <= prev {
                return Err(Error::OutOfOrderFrame {
                    previous: prev,
                    got: frame.frame_index,
                });
            }
        }
        self.last_frame = Some(frame.frame_index);

        for t in &mut self.tracks {
            t.state = self.filter.predict(&t.state);
            t.age += 1;
            t.time_since_update += 1;
        }

        let predicted: Vec<(u64, BBox)> = self
            .tracks
            .iter()
            .map(|t| (t.category_id, t.state.bbox()))
            .collect();
        let observed: Vec<(u64, BBox)> = frame
            .detections
            .iter()
            .map(|d| (d.category_id, d.amodal_box))
            .collect();
        let assoc = associate(&predicted, &observed, self.config.iou_gate);

        let mut emitted = Vec::new();
        for &(ti, di) in &assoc.matches {
            let det = &frame.detections[di];
            let t = &mut self.tracks[ti];
            t.state = self.filter.update(&t.state, &det.amodal_box)?;
            t.hits += 1;
            t.time_since_update = 0;
            t.last_score = det.score;
            t.status = if t.hits >= self.config.min_hits {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            emitted.push(DetectionResult {
                track_id: Some(t.track_id),
                ..det.clone()
            });
        }

        for &ti in &assoc.unmatched_tracks {
            let t = &mut self.tracks[ti];
            t.status = match t.status {
                TrackStatus::Tentative | TrackStatus::Dead => TrackStatus::Dead,
                _ if t.time_since_update > self.config.max_coast => TrackStatus::Dead,
                _ => TrackStatus::Coasting,
            };
            if t.status == TrackStatus::Coasting && self.config.emit_coasted {
                let decay = self.config.coast_score_decay.powi(t.time_since_update as i32);
                emitted.push(DetectionResult {
                    image_id: frame.image_id,
                    category_id: t.category_id,
                    amodal_box: t.state.bbox(),
                    modal_box: None,
                    score: t.last_score * decay,
                    track_id: Some(t.track_id),
                });
            }
        }
        self.tracks.retain(|t| t.status != TrackStatus::Dead);

        for &di in &assoc.unmatched_detections {
            let det = &frame.detections[di];
            if !(det.amodal_box.w > 0.0 && det.amodal_box.h > 0.0) {
                return Err(Error::InvalidBox(format!(
                    "detection {:?} must have positive size",
                    det.amodal_box
                )));
            }
            let id = self.next_id;
            self.next_id += 1;
            let status = if self.config.min_hits <= 1 {
                TrackStatus::Confirmed
            } else {
                TrackStatus::Tentative
            };
            self.tracks.push(TrackHypothesis {
                track_id: id,
                state: self.filter.initiate(&det.amodal_box),
                category_id: det.category_id,
                hits: 1,
                age: 1,
                time_since_update: 0,
                status,
                last_score: det.score,
            });
            emitted.push(DetectionResult {
                track_id: Some(id),
                ..det.clone()
            });
        }

        emitted.sort_by_key(|d| d.track_id);
        Ok(emitted)
    }
}

/// Tracks one video of `dataset`. `detections` are grouped by image id;
/// frames are visited in frame-index order. Track ids are sequence-local,
/// starting at 1.
pub fn run_sequence(
    dataset: &Dataset,
    video_id: u64,
    detections: &BTreeMap<u64, Vec<DetectionResult>>,
    config: &TrackerConfig,
) -> Result<Vec<DetectionResult>> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut out = Vec::new();
    for im in dataset.video_frames(video_id) {
        let frame = FrameInput {
            image_id: im.id,
            frame_index: im.frame_index,
            detections: detections.get(&im.id).cloned().unwrap_or_default(),
        };
        out.extend(tracker.step(&frame)?);
    }
    Ok(out)
}

/// Tracks every video and renumbers track ids to be unique across the
/// output (video order, then local id).
pub fn run_dataset(
    dataset: &Dataset,
    detections: &[DetectionResult],
    config: &TrackerConfig,
) -> Result<Vec<DetectionResult>> {
    use rayon::prelude::*;

    let mut by_video: BTreeMap<u64, BTreeMap<u64, Vec<DetectionResult>>> = BTreeMap::new();
    for d in detections {
        let video = dataset.video_of_image(d.image_id).ok_or_else(|| {
            Error::MalformedResults(format!("detection on unknown image {}", d.image_id))
        })?;
        by_video
            .entry(video.id)
            .or_default()
            .entry(d.image_id)
            .or_default()
            .push(d.clone());
    }
    let mut video_ids: Vec<u64> = dataset.videos.iter().map(|v| v.id).collect();
    video_ids.sort_unstable();
    let empty = BTreeMap::new();
    let per_video: Vec<Vec<DetectionResult>> = video_ids
        .par_iter()
        .map(|vid| run_sequence(dataset, *vid, by_video.get(vid).unwrap_or(&empty), config))
        .collect::<Result<_>>()?;

    let mut offset = 0u64;
    let mut out = Vec::new();
    for seq in per_video {
        let max_local = seq.iter().filter_map(|d| d.track_id).max().unwrap_or(0);
        out.extend(seq.into_iter().map(|mut d| {
            d.track_id = d.track_id.map(|t| t + offset);
            d
        }));
        offset += max_local;
    }
    Ok(out)
}
