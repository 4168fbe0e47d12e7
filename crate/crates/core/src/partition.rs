//! Divide-and-conquer counting: cluster first-pass detections by gaps along
//! the chain, crop each cluster, count each crop again and stitch.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    dominant_orientation, sort_along, Axis, Detection, ImageRecord, Point2D, Rect,
};
use crate::postprocess::merge_across_groups;
use crate::synth::{corrupt, CorruptionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionConfig {
    /// Consecutive detections further apart than this start a new cluster.
    pub gap_threshold: f64,
    /// Context margin added around each cluster's bounding rectangle.
    pub padding: f64,
    /// Detections from different crops closer than this are merged.
    pub merge_distance: f64,
}

impl PartitionConfig {
    pub fn new(gap_threshold: f64) -> Self {
        Self {
            gap_threshold,
            padding: 0.0,
            merge_distance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap_threshold > 0.0 && self.gap_threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gap threshold must be positive, got {}",
                self.gap_threshold
            )));
        }
        if !(self.padding >= 0.0 && self.merge_distance >= 0.0) {
            return Err(Error::InvalidConfig(
                "padding and merge distance must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSlice {
    /// Indices into the sorted first-pass detections.
    pub member_indices: Vec<usize>,
    pub crop_region: Rect,
}

/// A region handed to a [`Counter`], with a stable identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub id: String,
    pub region: Rect,
}

impl Crop {
    pub fn full(record: &ImageRecord) -> Crop {
        Crop {
            id: format!("{}/full", record.id),
            region: record.bounds(),
        }
    }

    pub fn slice(record: &ImageRecord, index: usize, region: Rect) -> Crop {
        Crop {
            id: format!("{}/slice-{index}", record.id),
            region,
        }
    }
}

/// Something that detects handles inside a crop of an image.
///
/// Returned detections are in crop-local coordinates (origin at the crop's
/// top-left corner).
pub trait Counter: Sync {
    fn count(&self, record: &ImageRecord, crop: &Crop) -> Result<Vec<Detection>>;
}

impl<C: Counter + ?Sized> Counter for &C {
    fn count(&self, record: &ImageRecord, crop: &Crop) -> Result<Vec<Detection>> {
        (**self).count(record, crop)
    }
}

/// Returns the ground truth whose centers fall inside the crop, with score 1.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleCounter;

impl Counter for OracleCounter {
    fn count(&self, record: &ImageRecord, crop: &Crop) -> Result<Vec<Detection>> {
        let r = crop.region;
        Ok(record
            .ground_truth
            .iter()
            .filter(|b| r.contains(&b.center()))
            .map(|b| Detection::new(b.translate(-r.x0, -r.y0), 1.0))
            .collect())
    }
}

/// Oracle output passed through [`corrupt`], seeded per crop id.
#[derive(Clone, Copy, Debug)]
pub struct NoisyCounter {
    pub corruption: CorruptionSpec,
}

impl Counter for NoisyCounter {
    fn count(&self, record: &ImageRecord, crop: &Crop) -> Result<Vec<Detection>> {
        let mut local =
            ImageRecord::new(crop.id.clone(), crop.region.width(), crop.region.height());
        local.ground_truth = OracleCounter
            .count(record, crop)?
            .into_iter()
            .map(|d| d.bbox)
            .collect();
        let spec = CorruptionSpec {
            seed: self.corruption.seed ^ fnv1a(crop.id.as_bytes()),
            ..self.corruption
        };
        Ok(corrupt(&local, &spec)?.predictions)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// One line of a precomputed-output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropOutput {
    pub crop_id: String,
    pub detections: Vec<Detection>,
}

/// Serves detections produced offline by an external model, keyed by crop id.
#[derive(Clone, Debug, Default)]
pub struct FileCounter {
    outputs: HashMap<String, Vec<Detection>>,
}

impl FileCounter {
    pub fn from_outputs(outputs: impl IntoIterator<Item = CropOutput>) -> Self {
        Self {
            outputs: outputs
                .into_iter()
                .map(|o| (o.crop_id, o.detections))
                .collect(),
        }
    }

    /// Reads one [`CropOutput`] JSON object per line; blank lines are skipped.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut outputs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let out: CropOutput = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })?;
            outputs.push(out);
        }
        Ok(Self::from_outputs(outputs))
    }
}

impl Counter for FileCounter {
    fn count(&self, _record: &ImageRecord, crop: &Crop) -> Result<Vec<Detection>> {
        self.outputs
            .get(&crop.id)
            .cloned()
            .ok_or_else(|| Error::Counter {
                slice: crop.id.clone(),
                reason: "no precomputed output for this crop".into(),
            })
    }
}

/// Splits sorted points wherever consecutive points are more than `delta`
/// apart (Euclidean). The ranges partition `0..points.len()` in order.
pub fn cluster_by_gap(points: &[Point2D], delta: f64) -> Vec<Range<usize>> {
    if points.is_empty() {
        return Vec::new();
    }
    let mut clusters = Vec::new();
    let mut start = 0;
    for i in 0..points.len() - 1 {
        if points[i].l2(&points[i + 1]) > delta {
            clusters.push(start..i + 1);
            start = i + 1;
        }
    }
    clusters.push(start..points.len());
    clusters
}

/// Bounding rectangle of each cluster's boxes, padded and clipped to the image.
pub fn slice_image(
    record: &ImageRecord,
    dets: &[Detection],
    clusters: &[Range<usize>],
    padding: f64,
) -> Vec<ClusterSlice> {
    let bounds = record.bounds();
    clusters
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let hull = dets[c.clone()]
                .iter()
                .map(|d| d.bbox.rect())
                .reduce(|a, b| a.union(&b))
                .expect("non-empty cluster");
            ClusterSlice {
                member_indices: c.clone().collect(),
                crop_region: hull.expand(padding).clip(&bounds),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwoPassOutput {
    /// Stitched detections in global coordinates, sorted along `axis`.
    pub detections: Vec<Detection>,
    pub slices: Vec<ClusterSlice>,
    pub first_pass: Vec<Detection>,
    pub axis: Axis,
}

/// First pass over the whole image, gap clustering of its detections,
/// second pass on every cluster crop, then stitching with cross-crop
/// duplicates merged. Crops are counted in parallel and combined in slice
/// order. With no first-pass detections the whole image is one slice.
pub fn two_pass_count(
    record: &ImageRecord,
    counter: &impl Counter,
    cfg: &PartitionConfig,
) -> Result<TwoPassOutput> {
    cfg.validate()?;
    let full = Crop::full(record);
    let first_pass = counter.count(record, &full).map_err(|e| Error::Counter {
        slice: full.id.clone(),
        reason: e.to_string(),
    })?;

    let centers: Vec<Point2D> = first_pass.iter().map(Detection::center).collect();
    let (axis, slices) = match dominant_orientation(&centers) {
        Ok(axis) => {
            let sorted: Vec<Detection> = sort_along(&centers, axis)
                .into_iter()
                .map(|i| first_pass[i])
                .collect();
            let sorted_centers: Vec<Point2D> = sorted.iter().map(Detection::center).collect();
            let clusters = cluster_by_gap(&sorted_centers, cfg.gap_threshold);
            (axis, slice_image(record, &sorted, &clusters, cfg.padding))
        }
        Err(_) => (
            Axis::Y,
            vec![ClusterSlice {
                member_indices: Vec::new(),
                crop_region: record.bounds(),
            }],
        ),
    };

    let per_slice: Vec<Vec<Detection>> = slices
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let crop = Crop::slice(record, k, s.crop_region);
            let local = counter.count(record, &crop).map_err(|e| Error::Counter {
                slice: crop.id.clone(),
                reason: e.to_string(),
            })?;
            let r = crop.region;
            Ok(local
                .into_iter()
                .map(|d| Detection::new(d.bbox.translate(r.x0, r.y0), d.score))
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut stitched = Vec::new();
    let mut groups = Vec::new();
    for (k, dets) in per_slice.into_iter().enumerate() {
        groups.extend(std::iter::repeat_n(k, dets.len()));
        stitched.extend(dets);
    }
    let detections = merge_across_groups(&stitched, &groups, cfg.merge_distance, axis);
    Ok(TwoPassOutput {
        detections,
        slices,
        first_pass,
        axis,
    })
}
