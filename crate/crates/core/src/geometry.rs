//! Bounding-box geometry in centroid/scale form.
//!
//! Boxes are stored as `(x, y, lx, ly)`: centroid plus horizontal and
//! vertical extent, all in normalized image units. Corner form is only
//! materialized inside [`iou`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to extrapolated scales.
pub const SCALE_FLOOR: f64 = 1e-4;

/// An axis-aligned box `(x, y, lx, ly)` with strictly positive scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub lx: f64,
    pub ly: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, lx: f64, ly: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite component in ({x}, {y}, {lx}, {ly})"
            )));
        }
        if lx <= 0.0 || ly <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "scales must be positive, got lx = {lx}, ly = {ly}"
            )));
        }
        Ok(Self { x, y, lx, ly })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.lx, self.ly]
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        let hx = 0.5 * self.lx;
        let hy = 0.5 * self.ly;
        (self.x - hx, self.y - hy, self.x + hx, self.y + hy)
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Builds a box from raw components, flooring the scales at [`SCALE_FLOOR`].
    pub(crate) fn clamped(x: f64, y: f64, lx: f64, ly: f64) -> Self {
        Self {
            x,
            y,
            lx: lx.max(SCALE_FLOOR),
            ly: ly.max(SCALE_FLOOR),
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.as_array()
    }
}

/// Intersection-over-union of the axis-aligned extents of `a` and `b`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = a.corners();
    let (bx1, by1, bx2, by2) = b.corners();
    let iw = ax2.min(bx2) - ax1.max(bx1);
    let ih = ay2.min(by2) - ay1.max(by1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// `true` iff `iou(a, b)` strictly exceeds `iou_lim`.
pub fn indicator_overlap(a: &BoundingBox, b: &BoundingBox, iou_lim: f64) -> bool {
    iou(a, b) > iou_lim
}

/// Extends a path one frame with the constant-velocity model.
///
/// A single box extrapolates to itself. Scales are floored at [`SCALE_FLOOR`].
///
/// # Panics
///
/// Panics if `boxes` is empty.
pub fn predict_constant_velocity(boxes: &[BoundingBox]) -> BoundingBox {
    match boxes {
        [] => panic!("predict_constant_velocity on an empty path"),
        [only] => *only,
        [.., prev, last] => BoundingBox::clamped(
            2.0 * last.x - prev.x,
            2.0 * last.y - prev.y,
            2.0 * last.lx - prev.lx,
            2.0 * last.ly - prev.ly,
        ),
    }
}

/// Squared norm of the second difference `b_prev2 - 2 b_prev + b`.
pub fn smoothness_penalty(b_prev2: &BoundingBox, b_prev: &BoundingBox, b: &BoundingBox) -> f64 {
    let p2 = b_prev2.as_array();
    let p1 = b_prev.as_array();
    let c = b.as_array();
    (0..4)
        .map(|k| {
            let d = p2[k] - 2.0 * p1[k] + c[k];
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x: f64, y: f64, lx: f64, ly: f64) -> BoundingBox {
        BoundingBox::new(x, y, lx, ly).unwrap()
    }

    /// Counts cells of a `n x n` grid over the unit square whose centres fall
    /// inside each extent.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox, n: usize) -> f64 {
        let inside = |bx: &BoundingBox, px: f64, py: f64| {
            (px - bx.x).abs() < bx.lx / 2.0 && (py - bx.y).abs() < bx.ly / 2.0
        };
        let (mut inter, mut union) = (0u64, 0u64);
        for i in 0..n {
            for j in 0..n {
                let px = (i as f64 + 0.5) / n as f64;
                let py = (j as f64 + 0.5) / n as f64;
                let (ia, ib) = (inside(a, px, py), inside(b, px, py));
                inter += (ia && ib) as u64;
                union += (ia || ib) as u64;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn rejects_nonpositive_scales() {
        assert!(BoundingBox::new(0.5, 0.5, 0.0, 0.1).is_err());
        assert!(BoundingBox::new(0.5, 0.5, 0.1, -0.1).is_err());
        assert!(BoundingBox::new(f64::NAN, 0.5, 0.1, 0.1).is_err());
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let b = bb(0.3, 0.7, 0.2, 0.1);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&bb(0.2, 0.2, 0.1, 0.1), &bb(0.8, 0.8, 0.1, 0.1)), 0.0);
    }

    #[test]
    fn iou_matches_raster_oracle() {
        let a = bb(0.5, 0.5, 0.2, 0.2);
        let b = bb(0.6, 0.5, 0.2, 0.2);
        let oracle = raster_iou(&a, &b, 2000);
        assert!((oracle - 1.0 / 3.0).abs() < 2e-3, "oracle {oracle}");
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_is_strict() {
        let a = bb(0.5, 0.5, 0.5, 0.5);
        assert!(indicator_overlap(&a, &a, 0.5));
        // Same centre, half the width: iou is exactly 0.5 in binary.
        let half = bb(0.5, 0.5, 0.25, 0.5);
        assert_eq!(iou(&a, &half), 0.5);
        assert!(!indicator_overlap(&a, &half, 0.5));
        let c = bb(0.5, 0.5, 0.2, 0.2);
        assert!(!indicator_overlap(&c, &bb(0.6, 0.5, 0.2, 0.2), 0.5));
    }

    #[test]
    fn constant_velocity_prediction() {
        let p = predict_constant_velocity(&[bb(0.4, 0.4, 0.1, 0.1), bb(0.5, 0.4, 0.1, 0.1)]);
        assert!((p.x - 0.6).abs() < 1e-12);
        assert!((p.y - 0.4).abs() < 1e-12);
        assert!((p.lx - 0.1).abs() < 1e-12 && (p.ly - 0.1).abs() < 1e-12);

        let single = bb(0.5, 0.5, 0.2, 0.2);
        assert_eq!(predict_constant_velocity(&[single]), single);
    }

    #[test]
    fn constant_velocity_clamps_scale() {
        let p = predict_constant_velocity(&[bb(0.1, 0.1, 0.05, 0.05), bb(0.1, 0.1, 0.02, 0.05)]);
        // 2 * 0.02 - 0.05 = -0.01 falls below the floor.
        assert_eq!(p.lx, SCALE_FLOOR);
        assert!((p.ly - 0.05).abs() < 1e-12);
    }

    #[test]
    fn penalty_examples() {
        let a = bb(0.1, 0.2, 0.1, 0.1);
        let b = bb(0.2, 0.25, 0.12, 0.1);
        let c = bb(0.3, 0.3, 0.14, 0.1);
        assert!(smoothness_penalty(&a, &b, &c) < 1e-24);
        assert_eq!(smoothness_penalty(&a, &a, &a), 0.0);
        let p = smoothness_penalty(
            &bb(0.0, 0.0, 0.1, 0.1),
            &bb(0.1, 0.0, 0.1, 0.1),
            &bb(0.1, 0.0, 0.1, 0.1),
        );
        assert!((p - 0.01).abs() < 1e-15);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..1.0f64, 0.0..1.0f64, 0.01..0.5f64, 0.01..0.5f64)
            .prop_map(|(x, y, lx, ly)| bb(x, y, lx, ly))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn penalty_zero_iff_linear(a in arb_box(), b in arb_box(), c in arb_box()) {
            let p = smoothness_penalty(&a, &b, &c);
            prop_assert!(p >= 0.0);
            let linear = predict_constant_velocity(&[a, b]);
            if linear.lx > SCALE_FLOOR && linear.ly > SCALE_FLOOR {
                prop_assert!(smoothness_penalty(&a, &b, &linear) < 1e-24);
            }
            if p == 0.0 {
                prop_assert!((c.x - (2.0 * b.x - a.x)).abs() < 1e-12);
            }
        }

        #[test]
        fn repeated_last_box_predicts_itself(a in arb_box(), b in arb_box()) {
            prop_assert_eq!(predict_constant_velocity(&[a, b, b]), b);
        }
    }
}
