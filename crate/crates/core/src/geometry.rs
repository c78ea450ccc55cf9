//! Axis-aligned boxes in corner form and their overlap.

use crate::error::{Error, Result};

/// Axis-aligned rectangle in image pixels, corner form.
///
/// Construction through [`BBox::new`] guarantees finite coordinates with
/// `x1 <= x2` and `y1 <= y2`. Zero-area boxes are allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x2 < x1 || y2 < y1 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    /// Build from top-left corner plus width and height.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    pub fn contained_in(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }
}

pub fn area(b: &BBox) -> f64 {
    b.area()
}

/// Intersection over union. Two boxes with zero union give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Count unit cells covered by integer-coordinate boxes.
    fn raster_iou(a: &BBox, b: &BBox) -> f64 {
        let (mut inter, mut union) = (0u32, 0u32);
        let lo = a.x1.min(b.x1) as i64;
        let hi = a.x2.max(b.x2) as i64;
        let lo_y = a.y1.min(b.y1) as i64;
        let hi_y = a.y2.max(b.y2) as i64;
        for x in lo..hi {
            for y in lo_y..hi_y {
                let cx = x as f64 + 0.5;
                let cy = y as f64 + 0.5;
                let ina = cx > a.x1 && cx < a.x2 && cy > a.y1 && cy < a.y2;
                let inb = cx > b.x1 && cx < b.x2 && cy > b.y1 && cy < b.y2;
                inter += (ina && inb) as u32;
                union += (ina || inb) as u32;
            }
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    #[test]
    fn iou_fixtures() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(20.0, 20.0, 30.0, 30.0)), 0.0);
        let b = bb(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&a, &b) - raster_iou(&a, &b)).abs() < 1e-12);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn area_fixtures() {
        assert_eq!(area(&bb(0.0, 0.0, 10.0, 10.0)), 100.0);
        assert_eq!(area(&bb(3.0, 3.0, 3.0, 9.0)), 0.0);
        assert_eq!(area(&bb(1.0, 2.0, 4.0, 8.0)), 18.0);
    }

    #[test]
    fn rejects_negative_extent_and_nan() {
        assert!(BBox::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 2.0, 1.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn degenerate_pairs_have_zero_iou() {
        let p = bb(3.0, 3.0, 3.0, 3.0);
        assert_eq!(iou(&p, &p), 0.0);
        let line = bb(3.0, 3.0, 3.0, 9.0);
        assert_eq!(iou(&line, &line), 0.0);
    }

    #[test]
    fn xywh_round_trip() {
        let b = BBox::from_xywh(2.0, 3.0, 4.0, 5.0).unwrap();
        assert_eq!(b.to_array(), [2.0, 3.0, 6.0, 8.0]);
        assert_eq!(b.to_xywh(), [2.0, 3.0, 4.0, 5.0]);
    }

    fn int_box() -> impl Strategy<Value = BBox> {
        (0i32..64, 0i32..64, 0i32..64, 0i32..64)
            .prop_map(|(a, b, c, d)| bb(a.min(c) as f64, b.min(d) as f64, a.max(c) as f64, b.max(d) as f64))
    }

    proptest! {
        #[test]
        fn iou_matches_raster(a in int_box(), b in int_box()) {
            prop_assert!((iou(&a, &b) - raster_iou(&a, &b)).abs() < 1e-9);
        }

        #[test]
        fn iou_symmetric_and_bounded(a in int_box(), b in int_box()) {
            let v = iou(&a, &b);
            prop_assert_eq!(v, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&v));
            if a.area() > 0.0 {
                prop_assert_eq!(iou(&a, &a), 1.0);
            }
        }

        #[test]
        fn iou_translation_invariant(a in int_box(), b in int_box(), dx in -100i32..100, dy in -100i32..100) {
            let (dx, dy) = (dx as f64, dy as f64);
            prop_assert!((iou(&a, &b) - iou(&a.translate(dx, dy), &b.translate(dx, dy))).abs() < 1e-12);
        }
    }
}
