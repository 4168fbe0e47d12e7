//! Duplicate removal along the dominant axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sort_along, Axis, Detection, Point2D};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.26;

/// The distance threshold has no default; callers choose it per dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub distance_threshold: f64,
    pub confidence_threshold: f64,
}

impl DedupConfig {
    pub fn new(distance_threshold: f64) -> Self {
        Self {
            distance_threshold,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.distance_threshold > 0.0 && self.distance_threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "dedup distance threshold must be positive, got {}",
                self.distance_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::InvalidConfig(format!(
                "confidence threshold must lie in [0,1], got {}",
                self.confidence_threshold
            )));
        }
        Ok(())
    }
}

/// Keeps detections scoring at least `sigma`, in their original order.
pub fn filter_by_confidence(dets: &[Detection], sigma: f64) -> Vec<Detection> {
    dets.iter().filter(|d| d.score >= sigma).copied().collect()
}

/// Sorts along `axis` and removes the lower-confidence member of every
/// pair of neighbours closer than the threshold along that axis, until no
/// such pair remains. Only the distance check is applied here; confidence
/// filtering is [`filter_by_confidence`].
///
/// On equal scores the detection earlier in sweep order is kept.
pub fn dedup(dets: &[Detection], cfg: &DedupConfig, axis: Axis) -> Vec<Detection> {
    let centers: Vec<Point2D> = dets.iter().map(Detection::center).collect();
    let mut kept: Vec<Detection> = sort_along(&centers, axis)
        .into_iter()
        .map(|i| dets[i])
        .collect();
    loop {
        let (next, changed) = sweep(&kept, cfg.distance_threshold, axis);
        kept = next;
        if !changed {
            return kept;
        }
    }
}

fn sweep(sorted: &[Detection], threshold: f64, axis: Axis) -> (Vec<Detection>, bool) {
    let mut out: Vec<Detection> = Vec::with_capacity(sorted.len());
    let mut changed = false;
    for det in sorted {
        match out.last_mut() {
            Some(top) if det.center().coord(axis) - top.center().coord(axis) < threshold => {
                changed = true;
                if det.score > top.score {
                    // `det` lies further along than `top`, so its gap to the
                    // element below can only grow.
                    *top = *det;
                }
            }
            _ => out.push(*det),
        }
    }
    (out, changed)
}

/// Merges detections that come from different `groups` (e.g. overlapping
/// crops) and lie within `threshold` (Euclidean) of each other, keeping the
/// higher-confidence one. Same-group neighbours are never merged. Returns
/// the surviving detections sorted along `axis`.
pub fn merge_across_groups(
    dets: &[Detection],
    groups: &[usize],
    threshold: f64,
    axis: Axis,
) -> Vec<Detection> {
    assert_eq!(dets.len(), groups.len(), "one group label per detection");
    let centers: Vec<Point2D> = dets.iter().map(Detection::center).collect();
    let order = sort_along(&centers, axis);
    let mut alive = vec![true; dets.len()];
    for (a, &i) in order.iter().enumerate() {
        for &j in &order[a + 1..] {
            if centers[j].coord(axis) - centers[i].coord(axis) >= threshold {
                break;
            }
            if !alive[i] {
                break;
            }
            if !alive[j] || groups[i] == groups[j] || centers[i].l2(&centers[j]) >= threshold {
                continue;
            }
            if dets[j].score > dets[i].score {
                alive[i] = false;
            } else {
                alive[j] = false;
            }
        }
    }
    order
        .into_iter()
        .filter(|&i| alive[i])
        .map(|i| dets[i])
        .collect()
}
