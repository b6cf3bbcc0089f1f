//! Seeded synthetic scenes: objects moving at constant velocity past static
//! occluding bands, partly leaving the frame. Used for tests, benchmarks and
//! end-to-end smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{AmodalAnnotation, Category, Dataset, ImageFrame, TrackInfo, VideoMeta};
use crate::geometry::{self, BBox, FrameExtent};
use crate::metrics::DetectionResult;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    pub objects_per_video: (usize, usize),
    pub n_categories: usize,
    pub frame: FrameExtent,
    /// Occluding vertical bands per video.
    pub occluders_per_video: (usize, usize),
    pub uncertain_prob: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_videos: 5,
            frames_per_video: 20,
            objects_per_video: (2, 4),
            n_categories: 3,
            frame: FrameExtent::new(320.0, 240.0),
            occluders_per_video: (1, 2),
            uncertain_prob: 0.0,
            seed: 0,
        }
    }
}

/// Visible part of `amodal` given the image and vertical occluding bands
/// `[x1, x2)`; the widest uncovered slab is kept.
pub fn visible_part(amodal: &BBox, frame: &FrameExtent, bands: &[(f64, f64)]) -> Option<BBox> {
    let inside = geometry::clip_to_image(amodal, frame)?;
    let mut pieces = vec![(inside.x, inside.x2())];
    for &(b1, b2) in bands {
        pieces = pieces
            .into_iter()
            .flat_map(|(a1, a2)| {
                let mut out = Vec::new();
                if b1 > a1 {
                    out.push((a1, a2.min(b1)));
                }
                if b2 < a2 {
                    out.push((a1.max(b2), a2));
                }
                out.into_iter().filter(|(l, r)| r > l)
            })
            .collect();
    }
    let (l, r) = pieces
        .into_iter()
        .max_by(|a, b| (a.1 - a.0).total_cmp(&(b.1 - b.0)))?;
    Some(BBox::new(l, inside.y, r - l, inside.h))
}

/// Builds a linked dataset of moving, occluded objects.
pub fn generate(config: &SceneConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let frame = config.frame;
    let categories: Vec<Category> = (1..=config.n_categories as u64)
        .map(|id| Category {
            id,
            name: format!("category_{id}"),
        })
        .collect();

    let mut videos = Vec::new();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut tracks = Vec::new();
    let (mut image_id, mut ann_id, mut track_id) = (1u64, 1u64, 1u64);

    for v in 0..config.n_videos as u64 {
        let video_id = v + 1;
        let n_bands = rng.random_range(config.occluders_per_video.0..=config.occluders_per_video.1);
        let bands: Vec<(f64, f64)> = (0..n_bands)
            .map(|_| {
                let x = rng.random_range(0.0..frame.width * 0.8);
                (x, x + rng.random_range(20.0..frame.width * 0.3))
            })
            .collect();

        let first_image = image_id;
        for f in 0..config.frames_per_video as i64 {
            images.push(ImageFrame {
                id: image_id,
                video_id,
                frame_index: f,
                width: None,
                height: None,
                file_name: Some(format!("video_{video_id}/frame_{f:04}.png")),
            });
            image_id += 1;
        }

        let n_obj = rng.random_range(config.objects_per_video.0..=config.objects_per_video.1);
        let mut present = std::collections::BTreeSet::new();
        for _ in 0..n_obj {
            let category_id = rng.random_range(1..=config.n_categories as u64);
            present.insert(category_id);
            let w = rng.random_range(20.0..80.0);
            let h = rng.random_range(20.0..80.0);
            let mut cx = rng.random_range(0.0..frame.width);
            let mut cy = rng.random_range(0.0..frame.height);
            let vx = rng.random_range(-12.0..12.0);
            let vy = rng.random_range(-4.0..4.0);
            let start = rng.random_range(0..config.frames_per_video / 4 + 1);
            let len = rng.random_range(config.frames_per_video / 2..=config.frames_per_video - start);
            tracks.push(TrackInfo {
                id: track_id,
                category_id,
                video_id,
            });
            for f in start..start + len {
                let raw = BBox::from_center(cx, cy, w, h);
                let amodal = geometry::clip_to_workspace(&raw, &frame);
                cx += vx;
                cy += vy;
                if amodal.area() <= 0.0 {
                    continue;
                }
                let modal = visible_part(&amodal, &frame, &bands);
                annotations.push(AmodalAnnotation {
                    id: ann_id,
                    image_id: first_image + f as u64,
                    track_id,
                    category_id,
                    amodal_box: amodal,
                    modal_box: modal,
                    visibility: geometry::visibility(modal.as_ref(), &amodal),
                    is_uncertain: rng.random_bool(config.uncertain_prob),
                    out_of_frame: false,
                });
                ann_id += 1;
            }
            track_id += 1;
        }

        let absent: Vec<u64> = (1..=config.n_categories as u64)
            .filter(|c| !present.contains(c))
            .collect();
        videos.push(VideoMeta {
            id: video_id,
            name: format!("video_{video_id}"),
            width: frame.width,
            height: frame.height,
            neg_category_ids: absent,
            not_exhaustive_category_ids: vec![],
        });
    }

    // tracks that never received a box are dropped
    let used: std::collections::BTreeSet<u64> = annotations.iter().map(|a| a.track_id).collect();
    tracks.retain(|t| used.contains(&t.id));
    Dataset::from_parts(videos, images, annotations, categories, tracks)
        .expect("generated scene links")
}

/// Detector simulation: ground-truth amodal boxes as detections, dropping
/// frames where the object is heavily occluded (visibility below
/// `min_visibility`) and a further random fraction `drop_prob`. Boxes are
/// jittered by up to `jitter` of their size.
pub fn detections_from_ground_truth(
    ds: &Dataset,
    min_visibility: f64,
    drop_prob: f64,
    jitter: f64,
    seed: u64,
) -> Vec<DetectionResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for a in &ds.annotations {
        let drop = rng.random_bool(drop_prob);
        let (jx, jy, js) = (
            rng.random_range(-1.0..=1.0) * jitter,
            rng.random_range(-1.0..=1.0) * jitter,
            rng.random_range(-1.0..=1.0) * jitter,
        );
        let score = rng.random_range(0.5..1.0);
        if a.visibility < min_visibility || drop {
            continue;
        }
        let b = a.amodal_box;
        let amodal = BBox::from_center(
            b.cx() + jx * b.w,
            b.cy() + jy * b.h,
            b.w * (1.0 + js),
            b.h * (1.0 + js),
        );
        out.push(DetectionResult {
            image_id: a.image_id,
            category_id: a.category_id,
            amodal_box: amodal,
            modal_box: a.modal_box,
            score,
            track_id: None,
        });
    }
    out
}
