//! Axis-aligned bounding boxes and the conversions every other module relies on.
//!
//! Boxes are stored in top-left / width / height pixel form. The
//! center / aspect / height form only exists as the Kalman measurement.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("box coordinates must be finite (got x={x}, y={y}, w={w}, h={h})")]
    NonFinite { x: f64, y: f64, w: f64, h: f64 },
    #[error("box must have positive width and height (got w={w}, h={h})")]
    Degenerate { w: f64, h: f64 },
}

/// An axis-aligned box in pixels. Width and height are always positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawBox> for BBox {
    type Error = GeometryError;

    fn try_from(r: RawBox) -> Result<Self, Self::Error> {
        BBox::new(r.x, r.y, r.w, r.h)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox { x: b.x, y: b.y, w: b.w, h: b.h }
    }
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(GeometryError::NonFinite { x, y, w, h });
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::Degenerate { w, h });
        }
        Ok(BBox { x, y, w, h })
    }

    /// Box of the given size centered on `c`.
    pub fn from_center(c: Point, w: f64, h: f64) -> Result<Self, GeometryError> {
        BBox::new(c.cx - w / 2.0, c.cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
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

    pub fn center(&self) -> Point {
        Point { cx: self.x + self.w / 2.0, cy: self.y + self.h / 2.0 }
    }

    pub fn to_measurement(&self) -> Measurement {
        let c = self.center();
        Measurement { cx: c.cx, cy: c.cy, aspect: self.w / self.h, h: self.h }
    }

    /// Inverse of [`BBox::to_measurement`].
    pub fn from_measurement(m: &Measurement) -> Result<Self, GeometryError> {
        let w = m.aspect * m.h;
        BBox::new(m.cx - w / 2.0, m.cy - m.h / 2.0, w, m.h)
    }

    /// True when the box lies inside `[0, width] x [0, height]`, allowing `tol` pixels of slack.
    pub fn within(&self, width: f64, height: f64, tol: f64) -> bool {
        self.x >= -tol && self.y >= -tol && self.right() <= width + tol && self.bottom() <= height + tol
    }
}

/// Center of a box, or any 2D position in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub cx: f64,
    pub cy: f64,
}

impl Point {
    pub fn new(cx: f64, cy: f64) -> Self {
        Point { cx, cy }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }
}

/// Kalman measurement parametrization: center, aspect ratio `w / h`, height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub cx: f64,
    pub cy: f64,
    pub aspect: f64,
    pub h: f64,
}

impl Measurement {
    pub fn new(cx: f64, cy: f64, aspect: f64, h: f64) -> Self {
        Measurement { cx, cy, aspect, h }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.aspect, self.h]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

/// Intersection over union. Zero for disjoint boxes, one for identical boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn center(b: &BBox) -> Point {
    b.center()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    /// Counts unit cells covered by the intersection and union of two boxes
    /// with integer coordinates.
    fn raster_iou(a: &BBox, b: &BBox) -> f64 {
        let lo_x = a.x().min(b.x()) as i64;
        let lo_y = a.y().min(b.y()) as i64;
        let hi_x = a.right().max(b.right()) as i64;
        let hi_y = a.bottom().max(b.bottom()) as i64;
        let inside = |bx: &BBox, px: f64, py: f64| {
            px > bx.x() && px < bx.right() && py > bx.y() && py < bx.bottom()
        };
        let (mut inter, mut union) = (0u64, 0u64);
        for j in lo_y..hi_y {
            for i in lo_x..hi_x {
                let (px, py) = (i as f64 + 0.5, j as f64 + 0.5);
                let (ia, ib) = (inside(a, px, py), inside(b, px, py));
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 5.0, 5.0)), 0.0);
        let third = iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(1.0, 0.0, 2.0, 2.0));
        let oracle = raster_iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(1.0, 0.0, 2.0, 2.0));
        assert!((oracle - 1.0 / 3.0).abs() < 1e-12);
        assert!((third - oracle).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&bb(0.0, 0.0, 2.0, 2.0), &bb(2.0, 0.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn center_examples() {
        assert_eq!(bb(0.0, 0.0, 10.0, 10.0).center(), Point::new(5.0, 5.0));
        assert_eq!(bb(2.0, 4.0, 6.0, 8.0).center(), Point::new(5.0, 8.0));
        assert_eq!(center(&bb(-3.0, -3.0, 6.0, 6.0)), Point::new(0.0, 0.0));
    }

    #[test]
    fn measurement_examples() {
        assert_eq!(bb(0.0, 0.0, 4.0, 2.0).to_measurement(), Measurement::new(2.0, 1.0, 2.0, 2.0));
        assert_eq!(bb(10.0, 10.0, 5.0, 5.0).to_measurement(), Measurement::new(12.5, 12.5, 1.0, 5.0));
    }

    #[test]
    fn rejects_degenerate_and_non_finite() {
        assert!(matches!(BBox::new(0.0, 0.0, 0.0, 1.0), Err(GeometryError::Degenerate { .. })));
        assert!(matches!(BBox::new(0.0, 0.0, 1.0, -1.0), Err(GeometryError::Degenerate { .. })));
        assert!(matches!(BBox::new(f64::NAN, 0.0, 1.0, 1.0), Err(GeometryError::NonFinite { .. })));
        assert!(matches!(BBox::new(0.0, f64::INFINITY, 1.0, 1.0), Err(GeometryError::NonFinite { .. })));
    }

    #[test]
    fn deserialize_validates() {
        let ok: BBox = serde_json::from_str(r#"{"x":1,"y":2,"w":3,"h":4}"#).unwrap();
        assert_eq!(ok, bb(1.0, 2.0, 3.0, 4.0));
        assert!(serde_json::from_str::<BBox>(r#"{"x":1,"y":2,"w":0,"h":4}"#).is_err());
    }

    fn any_box() -> impl Strategy<Value = BBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 0.01..200.0f64, 0.01..200.0f64)
            .prop_map(|(x, y, w, h)| bb(x, y, w, h))
    }

    fn int_box() -> impl Strategy<Value = BBox> {
        (-12i32..12, -12i32..12, 1i32..10, 1i32..10)
            .prop_map(|(x, y, w, h)| bb(x as f64, y as f64, w as f64, h as f64))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in any_box(), b in any_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn iou_scale_invariant(a in any_box(), b in any_box(), s in 0.01..100.0f64) {
            let sa = bb(a.x() * s, a.y() * s, a.w() * s, a.h() * s);
            let sb = bb(b.x() * s, b.y() * s, b.w() * s, b.h() * s);
            prop_assert!((iou(&a, &b) - iou(&sa, &sb)).abs() < 1e-12);
        }

        #[test]
        fn iou_matches_raster_oracle(a in int_box(), b in int_box()) {
            prop_assert!((iou(&a, &b) - raster_iou(&a, &b)).abs() < 1e-6);
        }

        #[test]
        fn measurement_round_trip(a in any_box()) {
            let back = BBox::from_measurement(&a.to_measurement()).unwrap();
            let tol = 1e-12 * (1.0 + a.x().abs().max(a.y().abs()).max(a.w()).max(a.h()));
            prop_assert!((back.x() - a.x()).abs() <= tol);
            prop_assert!((back.y() - a.y()).abs() <= tol);
            prop_assert!((back.w() - a.w()).abs() <= tol);
            prop_assert!((back.h() - a.h()).abs() <= tol);
        }
    }
}
