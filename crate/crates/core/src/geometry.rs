//! Geometric primitives and the dominant-orientation rule.
//!
//! Boxes are stored center + size because every downstream formula consumes
//! centers. Corner form only appears at crop boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in continuous image coordinates (origin top-left, y down).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn coord(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
        }
    }

    pub fn l1(&self, other: &Point2D) -> f64 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    pub fn l2(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Point2D {
        Point2D::new(self.x + dx, self.y + dy)
    }
}

/// Axis-aligned box in center/size form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn center(&self) -> Point2D {
        Point2D::new(self.cx, self.cy)
    }

    pub fn rect(&self) -> Rect {
        Rect {
            x0: self.cx - self.w / 2.0,
            y0: self.cy - self.h / 2.0,
            x1: self.cx + self.w / 2.0,
            y1: self.cy + self.h / 2.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Closed containment: points on the border count as inside.
    pub fn contains(&self, p: &Point2D) -> bool {
        self.rect().contains(p)
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite()
            && self.cy.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }
}

/// Corner-form rectangle, used for crop regions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn image(width: f64, height: f64) -> Rect {
        Rect {
            x0: 0.0,
            y0: 0.0,
            x1: width,
            y1: height,
        }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn contains(&self, p: &Point2D) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn expand(&self, pad: f64) -> Rect {
        Rect {
            x0: self.x0 - pad,
            y0: self.y0 - pad,
            x1: self.x1 + pad,
            y1: self.y1 + pad,
        }
    }

    pub fn clip(&self, bounds: &Rect) -> Rect {
        Rect {
            x0: self.x0.max(bounds.x0),
            y0: self.y0.max(bounds.y0),
            x1: self.x1.min(bounds.x1),
            y1: self.y1.min(bounds.y1),
        }
    }
}

/// A predicted handle box with its confidence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(flatten)]
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub const fn new(bbox: BBox, score: f64) -> Self {
        Self { bbox, score }
    }

    pub fn center(&self) -> Point2D {
        self.bbox.center()
    }

    pub fn is_valid(&self) -> bool {
        self.bbox.is_valid() && (0.0..=1.0).contains(&self.score)
    }
}

/// One image: its size, predictions and annotations.
///
/// `gt_count` is set for images that only carry a total count and no
/// instance boxes; such images take part in count statistics only.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub predictions: Vec<Detection>,
    pub ground_truth: Vec<BBox>,
    pub gt_count: Option<usize>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, width: f64, height: f64) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            predictions: Vec::new(),
            ground_truth: Vec::new(),
            gt_count: None,
        }
    }

    pub fn bounds(&self) -> Rect {
        Rect::image(self.width, self.height)
    }

    pub fn predicted_count(&self) -> usize {
        self.predictions.len()
    }

    pub fn true_count(&self) -> usize {
        self.gt_count.unwrap_or(self.ground_truth.len())
    }

    /// Whether instance-level boxes are available for spatial metrics.
    pub fn has_instances(&self) -> bool {
        self.gt_count.is_none()
    }

    pub fn predicted_centers(&self) -> Vec<Point2D> {
        self.predictions.iter().map(Detection::center).collect()
    }

    pub fn gt_centers(&self) -> Vec<Point2D> {
        self.ground_truth.iter().map(BBox::center).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Error::InvalidRecord {
            id: self.id.clone(),
            reason,
        };
        if !(self.width.is_finite()
            && self.width > 0.0
            && self.height.is_finite()
            && self.height > 0.0)
        {
            return Err(fail(format!(
                "image size {}x{} must be positive",
                self.width, self.height
            )));
        }
        let bounds = self.bounds();
        for (i, det) in self.predictions.iter().enumerate() {
            if !det.is_valid() {
                return Err(fail(format!("prediction {i} is malformed: {det:?}")));
            }
            if !bounds.contains(&det.center()) {
                return Err(fail(format!(
                    "prediction {i} center lies outside the image"
                )));
            }
        }
        for (i, b) in self.ground_truth.iter().enumerate() {
            if !b.is_valid() {
                return Err(fail(format!("ground truth {i} is malformed: {b:?}")));
            }
            if !bounds.contains(&b.center()) {
                return Err(fail(format!(
                    "ground truth {i} center lies outside the image"
                )));
            }
        }
        if self.gt_count.is_some() && !self.ground_truth.is_empty() {
            return Err(fail(
                "a count-only record cannot also carry instance boxes".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn other(self) -> Axis {
        match self {
            Axis::X => Axis::Y,
            Axis::Y => Axis::X,
        }
    }
}

/// Picks the axis along which the points spread the most.
///
/// X wins only on a strictly larger spread; ties (including a single point)
/// resolve to Y.
pub fn dominant_orientation(points: &[Point2D]) -> Result<Axis> {
    let first = points
        .first()
        .ok_or(Error::EmptyInput("dominant_orientation"))?;
    let (mut min_x, mut max_x, mut min_y, mut max_y) = (first.x, first.x, first.y, first.y);
    for p in &points[1..] {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    if max_x - min_x > max_y - min_y {
        Ok(Axis::X)
    } else {
        Ok(Axis::Y)
    }
}

/// Returns the permutation that sorts `points` ascending along `axis`.
///
/// Ties fall back to the other coordinate, then to the original index.
pub fn sort_along(points: &[Point2D], axis: Axis) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let other = axis.other();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&points[a], &points[b]);
        pa.coord(axis)
            .total_cmp(&pb.coord(axis))
            .then_with(|| pa.coord(other).total_cmp(&pb.coord(other)))
            .then_with(|| a.cmp(&b))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point2D> {
        v.iter().map(|&(x, y)| Point2D::new(x, y)).collect()
    }

    #[test]
    fn orientation_cases() {
        assert_eq!(
            dominant_orientation(&pts(&[(0.0, 0.0), (10.0, 1.0), (20.0, 0.0)])).unwrap(),
            Axis::X
        );
        assert_eq!(
            dominant_orientation(&pts(&[(0.0, 0.0), (1.0, 10.0)])).unwrap(),
            Axis::Y
        );
        assert_eq!(dominant_orientation(&pts(&[(3.0, 3.0)])).unwrap(), Axis::Y);
        // equal spreads take the y branch
        assert_eq!(
            dominant_orientation(&pts(&[(0.0, 0.0), (5.0, 5.0)])).unwrap(),
            Axis::Y
        );
        assert!(matches!(
            dominant_orientation(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn sort_cases() {
        assert_eq!(
            sort_along(&pts(&[(5.0, 0.0), (1.0, 0.0), (3.0, 0.0)]), Axis::X),
            vec![1, 2, 0]
        );
        assert!(sort_along(&[], Axis::X).is_empty());
        assert_eq!(
            sort_along(&pts(&[(2.0, 9.0), (2.0, 1.0)]), Axis::X),
            vec![1, 0]
        );
        assert_eq!(
            sort_along(&pts(&[(4.0, 1.0), (0.0, 1.0), (4.0, 1.0)]), Axis::Y),
            vec![1, 0, 2]
        );
        assert_eq!(
            sort_along(&pts(&[(0.0, 3.0), (9.0, 1.0)]), Axis::Y),
            vec![1, 0]
        );
    }

    #[test]
    fn box_center_is_exact() {
        let b = BBox::new(12.25, 7.5, 3.0, 4.0);
        assert_eq!(b.center(), Point2D::new(12.25, 7.5));
        assert!(b.contains(&Point2D::new(13.75, 9.5)));
        assert!(!b.contains(&Point2D::new(13.76, 9.5)));
    }

    #[test]
    fn record_validation() {
        let mut r = ImageRecord::new("a", 10.0, 10.0);
        r.ground_truth.push(BBox::new(5.0, 5.0, 2.0, 2.0));
        assert!(r.validate().is_ok());
        r.predictions
            .push(Detection::new(BBox::new(11.0, 5.0, 2.0, 2.0), 0.5));
        assert!(r.validate().is_err());
        r.predictions[0] = Detection::new(BBox::new(1.0, 5.0, 2.0, 2.0), 1.5);
        assert!(r.validate().is_err());
    }

    fn arb_points() -> impl Strategy<Value = Vec<Point2D>> {
        prop::collection::vec((-500.0..500.0f64, -500.0..500.0f64), 1..40)
            .prop_map(|v| v.into_iter().map(|(x, y)| Point2D::new(x, y)).collect())
    }

    proptest! {
        #[test]
        fn orientation_translation_invariant(points in arb_points(), dx in -1e3..1e3f64, dy in -1e3..1e3f64) {
            // integer-valued offsets keep the spreads bit-exact
            let (dx, dy) = (dx.round(), dy.round());
            let points: Vec<_> = points.iter().map(|p| Point2D::new(p.x.round(), p.y.round())).collect();
            let moved: Vec<_> = points.iter().map(|p| p.translate(dx, dy)).collect();
            prop_assert_eq!(dominant_orientation(&points).unwrap(), dominant_orientation(&moved).unwrap());
        }

        #[test]
        fn sort_is_permutation_and_stable(points in arb_points(), use_x in any::<bool>()) {
            let axis = if use_x { Axis::X } else { Axis::Y };
            let order = sort_along(&points, axis);
            let mut seen = order.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..points.len()).collect::<Vec<_>>());
            let sorted: Vec<_> = order.iter().map(|&i| points[i]).collect();
            let again = sort_along(&sorted, axis);
            prop_assert_eq!(again, (0..points.len()).collect::<Vec<_>>());
        }
    }
}
