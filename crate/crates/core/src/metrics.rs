//! Counting and localization metrics.
//!
//! Conventions that move the third decimal place:
//!
//! * GAME cells are half-open `[a, b)`; a center on an interior boundary
//!   belongs to the higher-index cell, and the far image edge is closed.
//! * Percentiles interpolate linearly between order statistics: with sorted
//!   `v[0..n]`, rank `r = q/100 * (n-1)`, result
//!   `v[floor r] + (r - floor r) * (v[ceil r] - v[floor r])`.
//! * "Point in box" is closed: border points are inside.
//! * Dataset precision/recall/F1 pool TP/FP/FN over images (micro); the
//!   macro averages are reported alongside.
//! * Images without matched pairs do not contribute to distance or IoU
//!   means.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ImageRecord, Point2D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountStats {
    pub mae: f64,
    pub rmse: f64,
    pub n_images: usize,
}

pub fn count_stats(records: &[ImageRecord]) -> Result<CountStats> {
    if records.is_empty() {
        return Err(Error::EmptyInput("count_stats"));
    }
    let n = records.len() as f64;
    let (abs, sq) = records.iter().fold((0.0, 0.0), |(a, s), r| {
        let d = r.predicted_count() as f64 - r.true_count() as f64;
        (a + d.abs(), s + d * d)
    });
    Ok(CountStats {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        n_images: records.len(),
    })
}

/// Number of points in each cell of a `2^level x 2^level` grid, row-major
/// (`row * side + col`).
pub fn grid_counts(points: &[Point2D], width: f64, height: f64, level: u32) -> Vec<usize> {
    let side = 1usize << level;
    let mut counts = vec![0usize; side * side];
    for p in points {
        let col = cell_index(p.x, width, side);
        let row = cell_index(p.y, height, side);
        counts[row * side + col] += 1;
    }
    counts
}

fn cell_index(v: f64, extent: f64, side: usize) -> usize {
    // Scaling by a power of two is exact, so grids at consecutive levels nest.
    let t = (v * side as f64) / extent;
    if t <= 0.0 {
        0
    } else {
        (t.floor() as usize).min(side - 1)
    }
}

/// Sum over grid cells of `|#predicted centers - #target centers|`.
pub fn game(record: &ImageRecord, level: u32) -> f64 {
    let pred = grid_counts(
        &record.predicted_centers(),
        record.width,
        record.height,
        level,
    );
    let gt = grid_counts(&record.gt_centers(), record.width, record.height, level);
    pred.iter()
        .zip(&gt)
        .map(|(&p, &g)| (p as f64 - g as f64).abs())
        .sum()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GameStats {
    /// Mean GAME over the instance-annotated images, per level.
    pub levels: BTreeMap<u32, f64>,
    pub n_images: usize,
}

/// `None` when no record carries instance boxes.
pub fn game_stats(records: &[ImageRecord], levels: &[u32]) -> Option<GameStats> {
    let annotated: Vec<&ImageRecord> = records.iter().filter(|r| r.has_instances()).collect();
    if annotated.is_empty() {
        return None;
    }
    let n = annotated.len() as f64;
    let levels = levels
        .iter()
        .map(|&l| {
            (
                l,
                annotated
                    .par_iter()
                    .map(|r| game(r, l))
                    .collect::<Vec<_>>()
                    .iter()
                    .sum::<f64>()
                    / n,
            )
        })
        .collect();
    Some(GameStats {
        levels,
        n_images: annotated.len(),
    })
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ra, rb) = (a.rect(), b.rect());
    let iw = (ra.x1.min(rb.x1) - ra.x0.max(rb.x0)).max(0.0);
    let ih = (ra.y1.min(rb.y1) - ra.y0.max(rb.y0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Linear-interpolation percentile, `q` in `[0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InvalidConfig(format!(
            "percentile {q} is outside [0, 100]"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Ok(sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// Per-image localization outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageLocalization {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// Matched center distances, in prediction-index order.
    pub distances: Vec<f64>,
    pub ious: Vec<f64>,
}

impl ImageLocalization {
    pub fn mean_l2(&self) -> Option<f64> {
        mean(&self.distances)
    }

    pub fn median_l2(&self) -> Option<f64> {
        percentile(&self.distances, 50.0).ok()
    }

    pub fn p95_l2(&self) -> Option<f64> {
        percentile(&self.distances, 95.0).ok()
    }

    pub fn mean_iou(&self) -> Option<f64> {
        mean(&self.ious)
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Filters predictions to those whose center lies in some target box, then
/// matches them to target centers by minimum total L2 distance.
pub fn localize_image(record: &ImageRecord) -> ImageLocalization {
    let filtered: Vec<usize> = (0..record.predictions.len())
        .filter(|&i| {
            let c = record.predictions[i].center();
            record.ground_truth.iter().any(|b| b.contains(&c))
        })
        .collect();
    let gts = &record.ground_truth;
    let costs = CostMatrix::from_fn(filtered.len(), gts.len(), |i, j| {
        record.predictions[filtered[i]]
            .center()
            .l2(&gts[j].center())
    })
    .expect("validated records have finite centers");
    let matching = hungarian(&costs);
    let distances = matching
        .pairs
        .iter()
        .map(|&(i, j)| costs.get(i, j))
        .collect();
    let ious = matching
        .pairs
        .iter()
        .map(|&(i, j)| iou(&record.predictions[filtered[i]].bbox, &gts[j]))
        .collect();
    let tp = matching.pairs.len();
    ImageLocalization {
        tp,
        fp: record.predictions.len() - tp,
        fn_: gts.len() - tp,
        distances,
        ious,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub mean_l2: f64,
    pub mean_median_l2: f64,
    pub mean_p95_l2: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub mean_iou_matched: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub n_images: usize,
    pub n_images_matched: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Dataset-level localization metrics over the instance-annotated records;
/// `None` when there are none. Undefined ratios report as 0.
pub fn localization_report(records: &[ImageRecord]) -> Option<LocalizationReport> {
    let annotated: Vec<&ImageRecord> = records.iter().filter(|r| r.has_instances()).collect();
    if annotated.is_empty() {
        return None;
    }
    let per_image: Vec<ImageLocalization> =
        annotated.par_iter().map(|r| localize_image(r)).collect();

    let (tp, fp, fn_) = per_image
        .iter()
        .fold((0, 0, 0), |(a, b, c), l| (a + l.tp, b + l.fp, c + l.fn_));
    let precision = ratio(tp, tp + fp).unwrap_or(0.0);
    let recall = ratio(tp, tp + fn_).unwrap_or(0.0);

    let mean_of = |f: &dyn Fn(&ImageLocalization) -> Option<f64>| {
        let v: Vec<f64> = per_image.iter().filter_map(f).collect();
        mean(&v).unwrap_or(0.0)
    };

    Some(LocalizationReport {
        mean_l2: mean_of(&|l| l.mean_l2()),
        mean_median_l2: mean_of(&|l| l.median_l2()),
        mean_p95_l2: mean_of(&|l| l.p95_l2()),
        precision,
        recall,
        f1: harmonic(precision, recall),
        macro_precision: mean_of(&|l| ratio(l.tp, l.tp + l.fp)),
        macro_recall: mean_of(&|l| ratio(l.tp, l.tp + l.fn_)),
        macro_f1: mean_of(&|l| ratio(2 * l.tp, 2 * l.tp + l.fp + l.fn_)),
        mean_iou_matched: mean_of(&|l| l.mean_iou()),
        tp,
        fp,
        fn_,
        n_images: per_image.len(),
        n_images_matched: per_image.iter().filter(|l| l.tp > 0).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Detection;
    use approx::assert_relative_eq;

    fn record(preds: &[(f64, f64)], gts: &[(f64, f64)]) -> ImageRecord {
        let mut r = ImageRecord::new("r", 100.0, 100.0);
        r.predictions = preds
            .iter()
            .map(|&(x, y)| Detection::new(BBox::new(x, y, 10.0, 10.0), 0.9))
            .collect();
        r.ground_truth = gts
            .iter()
            .map(|&(x, y)| BBox::new(x, y, 10.0, 10.0))
            .collect();
        r
    }

    #[test]
    fn count_stats_examples() {
        let a = record(&[(1.0, 1.0); 3], &[(1.0, 1.0); 3]);
        let b = record(&[(1.0, 1.0); 5], &[(1.0, 1.0); 4]);
        let s = count_stats(&[a.clone(), b]).unwrap();
        assert_eq!(s.mae, 0.5);
        assert_relative_eq!(s.rmse, 0.5f64.sqrt(), max_relative = 1e-15);
        let s = count_stats(&[a.clone(), a]).unwrap();
        assert_eq!((s.mae, s.rmse), (0.0, 0.0));
        assert!(count_stats(&[]).is_err());
    }

    #[test]
    fn count_only_records_use_their_count() {
        let mut r = record(&[(1.0, 1.0); 3], &[]);
        r.gt_count = Some(5);
        assert_eq!(count_stats(&[r.clone()]).unwrap().mae, 2.0);
        assert!(game_stats(&[r.clone()], &[1]).is_none());
        assert!(localization_report(&[r]).is_none());
    }

    #[test]
    fn game_examples() {
        let r = record(
            &[(10.0, 10.0), (20.0, 20.0)],
            &[(10.0, 10.0), (20.0, 20.0), (80.0, 80.0)],
        );
        assert_eq!(game(&r, 0), 1.0);
        let perfect = record(&[(10.0, 10.0), (60.0, 70.0)], &[(10.0, 10.0), (60.0, 70.0)]);
        assert!((0..4).all(|l| game(&perfect, l) == 0.0));
        let moved = record(&[(75.0, 25.0)], &[(25.0, 25.0)]);
        assert_eq!(game(&moved, 0), 0.0);
        assert_eq!(game(&moved, 1), 2.0);
    }

    #[test]
    fn game_boundaries() {
        // 50 sits on the L1 boundary and belongs to the right/bottom cell;
        // 100 is the closed far edge.
        assert_eq!(
            grid_counts(&[Point2D::new(50.0, 50.0)], 100.0, 100.0, 1),
            vec![0, 0, 0, 1]
        );
        assert_eq!(
            grid_counts(&[Point2D::new(100.0, 0.0)], 100.0, 100.0, 1),
            vec![0, 1, 0, 0]
        );
        assert_eq!(
            grid_counts(&[Point2D::new(0.0, 100.0)], 100.0, 100.0, 2)[12],
            1
        );
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.5, 0.5, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 1.0, 1.0)), 0.0);
        assert_relative_eq!(
            iou(&a, &BBox::new(1.0, 0.5, 1.0, 1.0)),
            1.0 / 3.0,
            max_relative = 1e-15
        );
        // touching edges
        assert_eq!(iou(&a, &BBox::new(1.5, 0.5, 1.0, 1.0)), 0.0);
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 50.0).unwrap(), 3.0);
        assert_eq!(percentile(&[5.0, 1.0, 4.0, 2.0, 3.0], 50.0).unwrap(), 3.0);
        for q in [0.0, 37.5, 100.0] {
            assert_eq!(percentile(&[7.25], q).unwrap(), 7.25);
        }
        assert_eq!(percentile(&[0.0, 10.0], 95.0).unwrap(), 9.5);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.5);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn localization_perfect() {
        let r = record(&[(10.0, 10.0), (50.0, 50.0)], &[(10.0, 10.0), (50.0, 50.0)]);
        let rep = localization_report(&[r]).unwrap();
        assert_eq!(rep.mean_l2, 0.0);
        assert_eq!((rep.precision, rep.recall, rep.f1), (1.0, 1.0, 1.0));
        assert_eq!(rep.mean_iou_matched, 1.0);
    }

    #[test]
    fn two_predictions_in_one_box() {
        // gt box [45,55]^2; predictions at distance 1 and 3 from its center,
        // plus one outside every box.
        let r = record(&[(53.0, 50.0), (50.0, 51.0), (10.0, 90.0)], &[(50.0, 50.0)]);
        let loc = localize_image(&r);
        assert_eq!((loc.tp, loc.fp, loc.fn_), (1, 2, 0));
        assert_eq!(loc.distances, vec![1.0]);
        let rep = localization_report(&[r]).unwrap();
        assert_relative_eq!(rep.precision, 1.0 / 3.0);
        assert_eq!(rep.recall, 1.0);
        assert_relative_eq!(rep.f1, 0.5);
    }

    #[test]
    fn image_without_targets_contributes_false_positives_only() {
        let empty = record(&[(10.0, 10.0), (20.0, 20.0)], &[]);
        let good = record(&[(50.0, 50.0)], &[(50.0, 52.0)]);
        let rep = localization_report(&[empty, good]).unwrap();
        assert_eq!((rep.tp, rep.fp, rep.fn_), (1, 2, 0));
        // distance statistics come from the matched image only
        assert_eq!(rep.mean_l2, 2.0);
        assert_eq!(rep.n_images_matched, 1);
        assert_relative_eq!(rep.macro_precision, 0.5);
    }

    proptest::proptest! {
        #[test]
        fn game_never_decreases_with_level(
            preds in proptest::collection::vec((0.0..100.0f64, 0.0..100.0f64), 0..20),
            gts in proptest::collection::vec((0.0..100.0f64, 0.0..100.0f64), 0..20),
        ) {
            let r = record(&preds, &gts);
            let at_zero = game(&r, 0);
            proptest::prop_assert_eq!(at_zero, (preds.len() as f64 - gts.len() as f64).abs());
            let mut prev = at_zero;
            for level in 1..=4 {
                let g = game(&r, level);
                proptest::prop_assert!(g >= prev, "level {level}: {g} < {prev}");
                prev = g;
            }
        }
    }
}
