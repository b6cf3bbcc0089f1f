//! Axis-aligned box arithmetic.
//!
//! Boxes use the continuous COCO convention: `(x, y, w, h)` with `x, y` the
//! top-left corner and `area = w * h` (no `+1` pixel correction). Amodal boxes
//! may extend beyond the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned box `(x, y, w, h)` in pixels.
///
/// Serialized as the 4-element array `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    /// Builds a box from its corners; inverted corners collapse to zero size.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox::new(x1, y1, (x2 - x1).max(0.0), (y2 - y1).max(0.0))
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
    }

    pub fn x2(&self) -> f64 {
        self.x + self.w
    }

    pub fn y2(&self) -> f64 {
        self.y + self.h
    }

    pub fn cx(&self) -> f64 {
        self.x + 0.5 * self.w
    }

    pub fn cy(&self) -> f64 {
        self.y + 0.5 * self.h
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Finite coordinates and non-negative size.
    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w >= 0.0
            && self.h >= 0.0
    }

    /// Intersection box; zero-sized when disjoint.
    pub fn intersection(&self, other: &BBox) -> BBox {
        BBox::from_corners(
            self.x.max(other.x),
            self.y.max(other.y),
            self.x2().min(other.x2()),
            self.y2().min(other.y2()),
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = (self.x2().min(other.x2()) - self.x.max(other.x)).max(0.0);
        let ih = (self.y2().min(other.y2()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Same box scaled by `factor` about its center.
    pub fn scaled_about_center(&self, factor: f64) -> BBox {
        BBox::from_center(self.cx(), self.cy(), self.w * factor, self.h * factor)
    }
}

/// Image dimensions in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameExtent {
    pub width: f64,
    pub height: f64,
}

impl FrameExtent {
    pub fn new(width: f64, height: f64) -> Self {
        FrameExtent { width, height }
    }

    pub fn as_box(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width, self.height)
    }

    /// The 2W x 2H annotation workspace with the image center-aligned inside it.
    pub fn workspace(&self) -> BBox {
        BBox::new(
            -0.5 * self.width,
            -0.5 * self.height,
            2.0 * self.width,
            2.0 * self.height,
        )
    }
}

/// Center-offset / log-size encoding of a box relative to a reference box.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

impl BoxDelta {
    pub const ZERO: BoxDelta = BoxDelta {
        dx: 0.0,
        dy: 0.0,
        dw: 0.0,
        dh: 0.0,
    };

    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        BoxDelta { dx, dy, dw, dh }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        BoxDelta::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Visibility proxy: IoU of the modal and amodal boxes, 0 when the object has
/// no visible extent.
pub fn visibility(modal: Option<&BBox>, amodal: &BBox) -> f64 {
    match modal {
        Some(m) => iou(m, amodal),
        None => 0.0,
    }
}

/// True when the box reaches outside `[0, W) x [0, H)`.
///
/// A box whose far edge sits exactly on the border is in frame.
pub fn is_out_of_frame(b: &BBox, frame: &FrameExtent) -> bool {
    b.x < 0.0 || b.y < 0.0 || b.x2() > frame.width || b.y2() > frame.height
}

/// Intersects `b` with the annotation workspace. Boxes entirely outside
/// collapse to a zero-area box on the nearest workspace boundary.
pub fn clip_to_workspace(b: &BBox, frame: &FrameExtent) -> BBox {
    clip_to(b, &frame.workspace())
}

/// Intersects `b` with the image rectangle, `None` when nothing remains.
pub fn clip_to_image(b: &BBox, frame: &FrameExtent) -> Option<BBox> {
    let c = clip_to(b, &frame.as_box());
    (c.area() > 0.0).then_some(c)
}

fn clip_to(b: &BBox, region: &BBox) -> BBox {
    let (lo_x, hi_x) = (region.x, region.x2());
    let (lo_y, hi_y) = (region.y, region.y2());
    let x1 = b.x.clamp(lo_x, hi_x);
    let y1 = b.y.clamp(lo_y, hi_y);
    let x2 = b.x2().clamp(lo_x, hi_x);
    let y2 = b.y2().clamp(lo_y, hi_y);
    BBox::from_corners(x1, y1, x2, y2)
}

/// Spatio-temporal ("3D") IoU of two tracks given as `(frame_index, box)`
/// sequences with strictly increasing frame indices.
///
/// Frames present in only one track add that box's area to the union.
pub fn spatiotemporal_iou(a: &[(i64, BBox)], b: &[(i64, BBox)]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let mut inter = 0.0;
    let mut union = 0.0;
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some((fa, ba)), Some((fb, bb))) if fa == fb => {
                let x = ba.intersection_area(bb);
                inter += x;
                union += ba.area() + bb.area() - x;
                i += 1;
                j += 1;
            }
            (Some((fa, ba)), Some((fb, _))) if fa < fb => {
                union += ba.area();
                i += 1;
            }
            (Some(_), Some((_, bb))) | (None, Some((_, bb))) => {
                union += bb.area();
                j += 1;
            }
            (Some((_, ba)), None) => {
                union += ba.area();
                i += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Encodes `b` relative to `reference`.
pub fn encode_delta(b: &BBox, reference: &BBox) -> Result<BoxDelta> {
    if !(reference.w > 0.0 && reference.h > 0.0) {
        return Err(Error::InvalidBox(format!(
            "reference box {reference:?} must have positive size"
        )));
    }
    if !(b.w > 0.0 && b.h > 0.0) {
        return Err(Error::InvalidBox(format!(
            "encoded box {b:?} must have positive size"
        )));
    }
    Ok(BoxDelta {
        dx: (b.cx() - reference.cx()) / reference.w,
        dy: (b.cy() - reference.cy()) / reference.h,
        dw: (b.w / reference.w).ln(),
        dh: (b.h / reference.h).ln(),
    })
}

/// Inverse of [`encode_delta`].
pub fn decode_delta(d: &BoxDelta, reference: &BBox) -> BBox {
    let cx = reference.cx() + d.dx * reference.w;
    let cy = reference.cy() + d.dy * reference.h;
    let w = reference.w * d.dw.exp();
    let h = reference.h * d.dh.exp();
    BBox::from_center(cx, cy, w, h)
}
