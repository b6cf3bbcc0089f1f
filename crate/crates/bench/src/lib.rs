//! Inputs shared by the benchmarks in `benches/`.

use amodal_core::expander::{ProposalSample, ScaleTask};
use amodal_core::synthetic::{self, SceneConfig};
use amodal_core::{tracker, BBox, Dataset, DetectionResult, TrackerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn scene(n_videos: usize, frames_per_video: usize) -> Dataset {
    synthetic::generate(&SceneConfig {
        n_videos,
        frames_per_video,
        objects_per_video: (3, 6),
        seed: 1,
        ..Default::default()
    })
}

/// Ground-truth-derived detections with gaps and jitter.
pub fn detections(ds: &Dataset) -> Vec<DetectionResult> {
    synthetic::detections_from_ground_truth(ds, 0.1, 0.1, 0.05, 2)
}

/// Tracked detections, so both detection AP and Track-AP have work to do.
pub fn tracked_results(ds: &Dataset) -> Vec<DetectionResult> {
    tracker::run_dataset(ds, &detections(ds), &TrackerConfig::default()).expect("synthetic scene tracks")
}

/// `n` boxes and `n` slightly moved copies, in shuffled order.
pub fn box_pairs(n: usize, seed: u64) -> (Vec<(u64, BBox)>, Vec<(u64, BBox)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tracks: Vec<(u64, BBox)> = (0..n as u64)
        .map(|i| {
            let b = BBox::new(
                rng.random_range(0.0..1800.0),
                rng.random_range(0.0..1000.0),
                rng.random_range(20.0..120.0),
                rng.random_range(20.0..120.0),
            );
            (i % 5, b)
        })
        .collect();
    let mut dets: Vec<(u64, BBox)> = tracks
        .iter()
        .map(|&(c, b)| (c, BBox::new(b.x + rng.random_range(-4.0..4.0), b.y + rng.random_range(-4.0..4.0), b.w, b.h)))
        .collect();
    for i in (1..dets.len()).rev() {
        dets.swap(i, rng.random_range(0..=i));
    }
    (tracks, dets)
}

pub fn scale_samples(n: usize) -> Vec<ProposalSample> {
    ScaleTask::default().samples(n, 3)
}
