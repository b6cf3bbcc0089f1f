//! PasteNOcclude: synthetic occlusion by pasting masked object segments along
//! linearly interpolated trajectories.
//!
//! Pasted segments are added to the ground truth as new tracks. Existing
//! annotations are left untouched unless
//! [`PnOConfig::recompute_occludee_visibility`] is set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AmodalAnnotation, Category, Dataset, TrackInfo};
use crate::error::{Error, Result};
use crate::geometry::{self, BBox, FrameExtent};

/// Binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn full(width: u32, height: u32) -> Mask {
        Mask {
            width,
            height,
            bits: vec![true; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Mask {
        let mut bits = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Mask {
            width,
            height,
            bits,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Any pixel above mid-gray is foreground.
    pub fn load_png(path: &Path) -> Result<Mask> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        Ok(Mask::from_fn(w, h, |x, y| img.get_pixel(x, y)[0] > 127))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_fn(self.width, self.height, |x, y| {
            image::Luma([if self.get(x, y) { 255 } else { 0 }])
        });
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// An object cut-out usable as an occluder.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAsset {
    pub asset_id: u64,
    pub source_image: Option<PathBuf>,
    /// Box in the source image.
    pub bbox: BBox,
    pub mask_area: f64,
    pub category_id: u64,
    /// Box-local mask.
    pub mask: Mask,
    /// Box-local colour crop; a flat colour derived from the id is pasted when absent.
    pub pixels: Option<RgbImage>,
}

impl SegmentAsset {
    pub fn fill_ratio(&self) -> Result<f64> {
        let area = self.bbox.area();
        if !(area > 0.0) {
            return Err(Error::ZeroAreaAsset(self.asset_id));
        }
        Ok(self.mask_area / area)
    }

    fn check(&self) -> Result<()> {
        let (w, h) = (self.bbox.w.round() as u32, self.bbox.h.round() as u32);
        if (self.mask.width, self.mask.height) != (w, h) {
            return Err(Error::InvalidConfig(format!(
                "asset {}: mask is {}x{}, box is {w}x{h}",
                self.asset_id, self.mask.width, self.mask.height
            )));
        }
        if self.mask_area > self.bbox.area() + 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "asset {}: mask area exceeds box area",
                self.asset_id
            )));
        }
        Ok(())
    }

    fn paint(&self) -> Rgb<u8> {
        let h = self.asset_id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Rgb([(h >> 16) as u8, (h >> 32) as u8, (h >> 48) as u8])
    }
}

/// Manifest record; the mask lives in a PNG next to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentRecord {
    asset_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_image: Option<PathBuf>,
    bbox: BBox,
    mask_area: f64,
    category_id: u64,
    mask: PathBuf,
}

/// Reads a segment-bank manifest. Relative paths resolve against the
/// manifest's directory. When `source_image` is given, the box is cropped out
/// of it as the pasted colour.
pub fn load_segment_bank(manifest: impl AsRef<Path>) -> Result<Vec<SegmentAsset>> {
    let manifest = manifest.as_ref();
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let records: Vec<SegmentRecord> = serde_json::from_str(&text)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut seen = BTreeSet::new();
    records
        .into_iter()
        .map(|r| {
            if !seen.insert(r.asset_id) {
                return Err(Error::DuplicateId {
                    kind: "asset",
                    id: r.asset_id,
                });
            }
            let mask = Mask::load_png(&base.join(&r.mask))?;
            let pixels = match &r.source_image {
                Some(src) => {
                    let path = base.join(src);
                    let img = image::open(&path)
                        .map_err(|source| Error::Image { path, source })?
                        .to_rgb8();
                    let b = r.bbox;
                    Some(
                        image::imageops::crop_imm(
                            &img,
                            b.x.max(0.0) as u32,
                            b.y.max(0.0) as u32,
                            mask.width,
                            mask.height,
                        )
                        .to_image(),
                    )
                }
                None => None,
            };
            let asset = SegmentAsset {
                asset_id: r.asset_id,
                source_image: r.source_image,
                bbox: r.bbox,
                mask_area: r.mask_area,
                category_id: r.category_id,
                mask,
                pixels,
            };
            asset.fill_ratio()?;
            asset.check()?;
            Ok(asset)
        })
        .collect()
}

/// Writes `assets` as `dir/bank.json` plus one mask PNG each; colour crops
/// are not written. Returns the manifest path.
pub fn save_segment_bank(dir: impl AsRef<Path>, assets: &[SegmentAsset]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(assets.len());
    for a in assets {
        let name = PathBuf::from(format!("mask_{}.png", a.asset_id));
        a.mask.save_png(&dir.join(&name))?;
        records.push(SegmentRecord {
            asset_id: a.asset_id,
            source_image: None,
            bbox: a.bbox,
            mask_area: a.mask_area,
            category_id: a.category_id,
            mask: name,
        });
    }
    let path = dir.join("bank.json");
    std::fs::write(&path, crate::dataset::canonical_json(&records))
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Seeded bank of elliptical (fill ≈ 0.785) and ring-shaped (fill < 0.7) segments.
pub fn synthetic_bank(n: usize, categories: &[u64], seed: u64) -> Vec<SegmentAsset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|id| {
            let w = rng.random_range(8..40u32);
            let h = rng.random_range(8..40u32);
            let ring = rng.random_bool(0.25);
            let mask = Mask::from_fn(w, h, |x, y| {
                let u = (x as f64 + 0.5) / w as f64 * 2.0 - 1.0;
                let v = (y as f64 + 0.5) / h as f64 * 2.0 - 1.0;
                let r = u * u + v * v;
                r <= 1.0 && !(ring && r < 0.5)
            });
            SegmentAsset {
                asset_id: id + 1,
                source_image: None,
                bbox: BBox::new(0.0, 0.0, w as f64, h as f64),
                mask_area: mask.area() as f64,
                category_id: categories[rng.random_range(0..categories.len())],
                mask,
                pixels: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnOConfig {
    pub n_segments_range: (usize, usize),
    pub size_range: (u32, u32),
    pub sequence_length: usize,
    pub mask_fill_min: f64,
    pub seed: u64,
    pub allow_out_of_frame: bool,
    /// Use the same size in the first and last frame.
    pub lock_size: bool,
    pub recompute_occludee_visibility: bool,
}

impl Default for PnOConfig {
    fn default() -> Self {
        PnOConfig {
            n_segments_range: (1, 7),
            size_range: (12, 192),
            sequence_length: 8,
            mask_fill_min: 0.7,
            seed: 0,
            allow_out_of_frame: true,
            lock_size: false,
            recompute_occludee_visibility: false,
        }
    }
}

impl PnOConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_segments_range.0 > self.n_segments_range.1 {
            return bad("n_segments_range is empty");
        }
        if self.size_range.0 == 0 || self.size_range.0 > self.size_range.1 {
            return bad("size_range must be non-empty and positive");
        }
        if self.sequence_length == 0 {
            return bad("sequence_length must be positive");
        }
        if !(self.mask_fill_min > 0.0 && self.mask_fill_min <= 1.0) {
            return bad("mask_fill_min must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub asset_id: u64,
    pub first_frame_box: BBox,
    pub last_frame_box: BBox,
}

/// Keeps assets whose mask fills at least `mask_fill_min` of their box.
pub fn filter_segment_bank(assets: Vec<SegmentAsset>, mask_fill_min: f64) -> Result<Vec<SegmentAsset>> {
    let mut kept = Vec::with_capacity(assets.len());
    for a in assets {
        if a.fill_ratio()? >= mask_fill_min {
            kept.push(a);
        }
    }
    Ok(kept)
}

pub fn interpolate_box(first: &BBox, last: &BBox, t: f64) -> BBox {
    let lerp = |a: f64, b: f64| if t == 1.0 { b } else { a + (b - a) * t };
    BBox::new(
        lerp(first.x, last.x),
        lerp(first.y, last.y),
        lerp(first.w, last.w),
        lerp(first.h, last.h),
    )
}

fn sample_axis(rng: &mut impl Rng, size: u32, extent: f64, allow_oof: bool) -> f64 {
    let extent = extent.floor() as i64;
    let size = size as i64;
    let (lo, hi) = if allow_oof {
        // at least one pixel stays inside
        (1 - size, extent - 1)
    } else {
        (0, extent - size)
    };
    rng.random_range(lo..=hi) as f64
}

fn sample_box(rng: &mut impl Rng, config: &PnOConfig, frame: &FrameExtent, size: (u32, u32)) -> BBox {
    let x = sample_axis(rng, size.0, frame.width, config.allow_out_of_frame);
    let y = sample_axis(rng, size.1, frame.height, config.allow_out_of_frame);
    BBox::new(x, y, size.0 as f64, size.1 as f64)
}

/// Draws placements for one sequence. Boxes have integer sizes and corners.
///
/// When out-of-frame placement is disallowed, sizes are drawn from the part
/// of `size_range` that fits the frame.
pub fn sample_placements(
    rng: &mut impl Rng,
    config: &PnOConfig,
    frame: &FrameExtent,
    bank: &[SegmentAsset],
) -> Result<Vec<Placement>> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let (lo, mut hi_w) = config.size_range;
    let mut hi_h = hi_w;
    if !config.allow_out_of_frame {
        hi_w = hi_w.min(frame.width.floor() as u32);
        hi_h = hi_h.min(frame.height.floor() as u32);
        if lo > hi_w || lo > hi_h {
            return Err(Error::InvalidConfig(format!(
                "no size in {:?} fits a {}x{} frame",
                config.size_range, frame.width, frame.height
            )));
        }
    } else if frame.width < 1.0 || frame.height < 1.0 {
        return Err(Error::InvalidConfig("frame is smaller than one pixel".into()));
    }
    let k = rng.random_range(config.n_segments_range.0..=config.n_segments_range.1);
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let asset = &bank[rng.random_range(0..bank.len())];
        let first_size = (rng.random_range(lo..=hi_w), rng.random_range(lo..=hi_h));
        let last_size = if config.lock_size {
            first_size
        } else {
            (rng.random_range(lo..=hi_w), rng.random_range(lo..=hi_h))
        };
        let first = sample_box(rng, config, frame, first_size);
        let last = sample_box(rng, config, frame, last_size);
        out.push(Placement {
            asset_id: asset.asset_id,
            first_frame_box: first,
            last_frame_box: last,
        });
    }
    Ok(out)
}

/// Nearest-neighbour resize of the asset onto `target`, hard paste of masked pixels.
pub fn composite(frame: &mut RgbImage, target: &BBox, asset: &SegmentAsset) {
    let x0 = target.x.round() as i64;
    let y0 = target.y.round() as i64;
    let tw = (target.w.round() as i64).max(1);
    let th = (target.h.round() as i64).max(1);
    let (mw, mh) = (asset.mask.width as i64, asset.mask.height as i64);
    if mw == 0 || mh == 0 {
        return;
    }
    let (fw, fh) = (frame.width() as i64, frame.height() as i64);
    let colour = asset.paint();
    for v in y0.max(0) - y0..th.min(fh - y0) {
        let sy = (v * mh / th) as u32;
        for u in x0.max(0) - x0..tw.min(fw - x0) {
            let sx = (u * mw / tw) as u32;
            if asset.mask.get(sx, sy) {
                let px = asset.pixels.as_ref().map_or(colour, |p| *p.get_pixel(sx, sy));
                frame.put_pixel((x0 + u) as u32, (y0 + v) as u32, px);
            }
        }
    }
}

/// One frame of a sequence to augment.
#[derive(Debug, Clone)]
pub struct SequenceFrame {
    pub image_id: u64,
    pub annotations: Vec<AmodalAnnotation>,
    pub pixels: Option<RgbImage>,
}

/// Ids the caller reserves for pasted tracks and annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdBase {
    pub track: u64,
    pub annotation: u64,
}

/// Pastes `placements` into a sequence. Placement `i` becomes track
/// `ids.track + i`; new annotations are numbered from `ids.annotation` in
/// frame-major, placement-minor order. Frames keep their original
/// annotations first.
pub fn apply(
    frames: &[SequenceFrame],
    frame: &FrameExtent,
    placements: &[Placement],
    bank: &[SegmentAsset],
    ids: IdBase,
    recompute_occludee_visibility: bool,
) -> Result<Vec<SequenceFrame>> {
    let by_id: BTreeMap<u64, &SegmentAsset> = bank.iter().map(|a| (a.asset_id, a)).collect();
    let assets = placements
        .iter()
        .map(|p| by_id.get(&p.asset_id).copied().ok_or(Error::UnknownAsset(p.asset_id)))
        .collect::<Result<Vec<_>>>()?;
    let last = frames.len().saturating_sub(1).max(1) as f64;
    let mut next_ann = ids.annotation;
    let mut out = Vec::with_capacity(frames.len());
    for (t, f) in frames.iter().enumerate() {
        let tt = t as f64 / last;
        let placed: Vec<BBox> = placements
            .iter()
            .map(|p| interpolate_box(&p.first_frame_box, &p.last_frame_box, tt))
            .collect();
        let mut annotations = f.annotations.clone();
        if recompute_occludee_visibility && !placed.is_empty() {
            for a in &mut annotations {
                a.visibility = occluded_visibility(a, &placed, frame);
            }
        }
        let mut pixels = f.pixels.clone();
        for (i, (b, asset)) in placed.iter().zip(&assets).enumerate() {
            if let Some(img) = pixels.as_mut() {
                composite(img, b, asset);
            }
            let amodal = geometry::clip_to_workspace(b, frame);
            let modal = geometry::clip_to_image(b, frame);
            annotations.push(AmodalAnnotation {
                id: next_ann,
                image_id: f.image_id,
                track_id: ids.track + i as u64,
                category_id: asset.category_id,
                amodal_box: amodal,
                modal_box: modal,
                visibility: geometry::visibility(modal.as_ref(), &amodal),
                is_uncertain: false,
                out_of_frame: geometry::is_out_of_frame(&amodal, frame),
            });
            next_ann += 1;
        }
        out.push(SequenceFrame {
            image_id: f.image_id,
            annotations,
            pixels,
        });
    }
    Ok(out)
}

/// Visibility after removing the area of `occluders` (as boxes) from the modal box.
fn occluded_visibility(a: &AmodalAnnotation, occluders: &[BBox], frame: &FrameExtent) -> f64 {
    let Some(modal) = a.modal_box else {
        return 0.0;
    };
    let amodal_area = a.amodal_box.area();
    if !(amodal_area > 0.0) {
        return 0.0;
    }
    let cut: Vec<BBox> = occluders
        .iter()
        .filter_map(|o| geometry::clip_to_image(o, frame))
        .map(|o| o.intersection(&modal))
        .filter(|b| b.area() > 0.0)
        .collect();
    let visible = (modal.area() - union_area(&cut)).max(0.0);
    (a.visibility.min(1.0) * visible / modal.area().max(f64::MIN_POSITIVE)).clamp(0.0, 1.0)
}

/// Area of a union of boxes by coordinate compression.
pub fn union_area(boxes: &[BBox]) -> f64 {
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.x, b.x2()]).collect();
    let mut ys: Vec<f64> = boxes.iter().flat_map(|b| [b.y, b.y2()]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    xs.dedup();
    ys.dedup();
    let mut area = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            if boxes
                .iter()
                .any(|b| b.x <= cx && cx <= b.x2() && b.y <= cy && cy <= b.y2())
            {
                area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    area
}

/// Stream seed for one sequence; independent of processing order.
pub fn sequence_seed(seed: u64, video_id: u64, window: u64) -> u64 {
    let mut z = seed ^ video_id.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ window.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finaliser
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub dataset: Dataset,
    /// Placements per (video id, window index).
    pub placements: BTreeMap<(u64, usize), Vec<Placement>>,
    /// Composited frames, for images that had pixels supplied.
    pub frames: BTreeMap<u64, RgbImage>,
}

/// Augments every video. Each video is cut into consecutive windows of
/// `sequence_length` frames and every window gets its own placements, drawn
/// from the stream `sequence_seed(seed, video, window)`.
///
/// Pasted categories missing from the dataset are added, and a pasted
/// category is removed from the video's negative list since it now occurs
/// there.
pub fn augment_dataset(
    ds: &Dataset,
    bank: &[SegmentAsset],
    config: &PnOConfig,
    pixels: &BTreeMap<u64, RgbImage>,
) -> Result<Augmented> {
    config.validate()?;
    let bank = filter_segment_bank(bank.to_vec(), config.mask_fill_min)?;
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let mut by_image: BTreeMap<u64, Vec<AmodalAnnotation>> = BTreeMap::new();
    for a in &ds.annotations {
        by_image.entry(a.image_id).or_default().push(a.clone());
    }

    struct Window {
        video_id: u64,
        index: usize,
        placements: Vec<Placement>,
        frames: Vec<SequenceFrame>,
    }

    let sampled: Vec<Window> = ds
        .videos
        .par_iter()
        .map(|v| -> Result<Vec<Window>> {
            let extent = v.frame_extent();
            let frames = ds.video_frames(v.id);
            frames
                .chunks(config.sequence_length)
                .enumerate()
                .map(|(w, chunk)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(sequence_seed(config.seed, v.id, w as u64));
                    let placements = sample_placements(&mut rng, config, &extent, &bank)?;
                    let frames = chunk
                        .iter()
                        .map(|im| SequenceFrame {
                            image_id: im.id,
                            annotations: by_image.get(&im.id).cloned().unwrap_or_default(),
                            pixels: pixels.get(&im.id).cloned(),
                        })
                        .collect();
                    Ok(Window {
                        video_id: v.id,
                        index: w,
                        placements,
                        frames,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    // id ranges are assigned in video/window order so output is independent of scheduling
    let mut next = IdBase {
        track: ds.tracks.iter().map(|t| t.id).max().unwrap_or(0) + 1,
        annotation: ds.annotations.iter().map(|a| a.id).max().unwrap_or(0) + 1,
    };
    let mut bases = Vec::with_capacity(sampled.len());
    for w in &sampled {
        bases.push(next);
        next.track += w.placements.len() as u64;
        next.annotation += (w.placements.len() * w.frames.len()) as u64;
    }

    let augmented: Vec<Vec<SequenceFrame>> = sampled
        .par_iter()
        .zip(&bases)
        .map(|(w, ids)| {
            let extent = ds.video(w.video_id).expect("linked").frame_extent();
            apply(
                &w.frames,
                &extent,
                &w.placements,
                &bank,
                *ids,
                config.recompute_occludee_visibility,
            )
        })
        .collect::<Result<_>>()?;

    let mut videos = ds.videos.clone();
    let mut categories = ds.categories.clone();
    let mut known: BTreeSet<u64> = categories.iter().map(|c| c.id).collect();
    let by_asset: BTreeMap<u64, &SegmentAsset> = bank.iter().map(|a| (a.asset_id, a)).collect();
    let mut tracks = ds.tracks.clone();
    let mut new_by_image: BTreeMap<u64, Vec<AmodalAnnotation>> = BTreeMap::new();
    let mut updated_originals: BTreeMap<u64, AmodalAnnotation> = BTreeMap::new();
    let mut frames_out = BTreeMap::new();
    let mut placements_out = BTreeMap::new();

    for ((w, ids), frames) in sampled.iter().zip(&bases).zip(augmented) {
        let video = videos.iter_mut().find(|v| v.id == w.video_id).expect("linked");
        for (i, p) in w.placements.iter().enumerate() {
            let cat = by_asset[&p.asset_id].category_id;
            if known.insert(cat) {
                categories.push(Category {
                    id: cat,
                    name: format!("category_{cat}"),
                });
            }
            video.neg_category_ids.retain(|c| *c != cat);
            tracks.push(TrackInfo {
                id: ids.track + i as u64,
                category_id: cat,
                video_id: w.video_id,
            });
        }
        for f in frames {
            let n_orig = by_image.get(&f.image_id).map_or(0, Vec::len);
            let (orig, new) = f.annotations.split_at(n_orig);
            if config.recompute_occludee_visibility {
                for a in orig {
                    updated_originals.insert(a.id, a.clone());
                }
            }
            new_by_image.entry(f.image_id).or_default().extend_from_slice(new);
            if let Some(px) = f.pixels {
                frames_out.insert(f.image_id, px);
            }
        }
        placements_out.insert((w.video_id, w.index), w.placements.clone());
    }

    let mut annotations: Vec<AmodalAnnotation> = ds
        .annotations
        .iter()
        .map(|a| updated_originals.get(&a.id).cloned().unwrap_or_else(|| a.clone()))
        .collect();
    annotations.extend(new_by_image.into_values().flatten());
    annotations.sort_by_key(|a| a.id);
    categories.sort_by_key(|c| c.id);

    let dataset = Dataset::from_parts(videos, ds.images.clone(), annotations, categories, tracks)?;
    Ok(Augmented {
        dataset,
        placements: placements_out,
        frames: frames_out,
    })
}

/// A still image repeated `length` times, for augmenting single images as
/// short synthetic videos.
pub fn still_sequence(
    first_image_id: u64,
    annotations: &[AmodalAnnotation],
    pixels: Option<&RgbImage>,
    length: usize,
) -> Vec<SequenceFrame> {
    (0..length as u64)
        .map(|t| SequenceFrame {
            image_id: first_image_id + t,
            annotations: annotations
                .iter()
                .map(|a| AmodalAnnotation {
                    image_id: first_image_id + t,
                    ..a.clone()
                })
                .collect(),
            pixels: pixels.cloned(),
        })
        .collect()
}
