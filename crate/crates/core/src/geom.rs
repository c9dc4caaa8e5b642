//! Axis-aligned boxes and the overlap arithmetic shared by every other
//! module.
//!
//! Boxes are `(left, top, width, height)` in continuous pixel coordinates;
//! conversion to corner formats happens only at the I/O boundary.

use core::fmt;

/// Errors from box construction and clipping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeomError {
    /// Width or height is zero/negative, or a coordinate is not finite.
    InvalidBox,
    /// The box has no area left after clipping to the frame.
    EmptyBox,
}

impl fmt::Display for GeomError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeomError::InvalidBox => write!(f, "box must have positive finite width and height"),
            GeomError::EmptyBox => write!(f, "box lies outside the frame"),
        }
    }
}

impl core::error::Error for GeomError {}

/// An axis-aligned bounding box: left, top, width, height in pixels.
///
/// Degenerate boxes (`w <= 0` or `h <= 0`, or non-finite coordinates) are
/// rejected at construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeomError> {
        let b = BBox { x, y, w, h };
        if !b.is_valid() {
            return Err(GeomError::InvalidBox);
        }
        Ok(b)
    }

    fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Intersection area with another box (zero when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

/// Intersection over union of two boxes, in `[0, 1]`. Symmetric.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Intersection area over the smaller box's area, in `[0, 1]`.
///
/// Alternative overlap measure for the track-merge test.
pub fn min_area_overlap(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / a.area().min(b.area())
}

/// Intersects `b` with the `frame_w x frame_h` rectangle anchored at the
/// origin. Fails with [`GeomError::EmptyBox`] when nothing remains.
pub fn clip_to_frame(b: &BBox, frame_w: f64, frame_h: f64) -> Result<BBox, GeomError> {
    debug_assert!(frame_w > 0.0 && frame_h > 0.0);
    let x0 = b.x.max(0.0);
    let y0 = b.y.max(0.0);
    let x1 = b.right().min(frame_w);
    let y1 = b.bottom().min(frame_h);
    if x1 - x0 <= 0.0 || y1 - y0 <= 0.0 {
        return Err(GeomError::EmptyBox);
    }
    BBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// A scored candidate box. The score is a probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&score));
        Detection { bbox, score }
    }
}

/// Identifier of a track. Unique within a run, never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_identity() {
        let a = bx(3.0, 4.0, 10.0, 20.0);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        let a = bx(0.0, 0.0, 5.0, 5.0);
        let b = bx(10.0, 10.0, 5.0, 5.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // inter = 2, union = 6
        let a = bx(0.0, 0.0, 2.0, 2.0);
        let b = bx(1.0, 0.0, 2.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, 5.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
        assert!(BBox::new(0.0, f64::INFINITY, 5.0, 5.0).is_err());
    }

    #[test]
    fn clip_inside_is_identity() {
        let b = bx(10.0, 10.0, 5.0, 5.0);
        assert_eq!(clip_to_frame(&b, 100.0, 100.0).unwrap(), b);
    }

    #[test]
    fn clip_clamps_at_boundary() {
        let b = bx(-5.0, 0.0, 10.0, 10.0);
        let c = clip_to_frame(&b, 100.0, 100.0).unwrap();
        assert_eq!(c, bx(0.0, 0.0, 5.0, 10.0));
    }

    #[test]
    fn clip_fully_outside_is_empty() {
        let b = bx(200.0, 200.0, 10.0, 10.0);
        assert_eq!(clip_to_frame(&b, 100.0, 100.0), Err(GeomError::EmptyBox));
    }

    #[test]
    fn min_area_overlap_contained() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        let b = bx(2.0, 2.0, 4.0, 4.0);
        assert_eq!(min_area_overlap(&a, &b), 1.0);
    }
}
