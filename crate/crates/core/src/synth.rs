//! Deterministic synthetic scenes: handle chains laid out along an axis and
//! corrupted copies of them standing in for detector output.
//!
//! All randomness comes from [`SplitMix64`], whose constants are fixed here
//! so a seed reproduces the same scene on any platform.

use serde::{Deserialize, Serialize};

use crate::assignment::FocalParams;
use crate::error::{Error, Result};
use crate::geometry::{Axis, BBox, Detection, ImageRecord, Point2D};
use crate::losses::ChainInstance;

/// SplitMix64 generator (Steele, Lea & Flood). Increment
/// `0x9E3779B97F4A7C15`, mixers `0xBF58476D1CE4E5B9` and `0x94D049BB133111EB`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub const fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`; `n == 0` yields 0.
    pub fn below(&mut self, n: u64) -> u64 {
        if n == 0 {
            return 0;
        }
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Box-Muller; consumes exactly two draws.
    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        mean + sd * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Layout of one synthetic image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: f64,
    pub height: f64,
    pub n_clusters: usize,
    /// Inclusive range of handles per cluster.
    pub handles_per_cluster: (usize, usize),
    pub spacing_mean: f64,
    /// Each consecutive spacing is drawn uniformly within `mean ± jitter`.
    pub spacing_jitter: f64,
    /// Center-to-center distance along the axis between adjacent clusters.
    pub inter_cluster_gap: f64,
    pub axis: Axis,
    pub handle_w: f64,
    pub handle_h: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 1024.0,
            height: 768.0,
            n_clusters: 2,
            handles_per_cluster: (6, 12),
            spacing_mean: 30.0,
            spacing_jitter: 4.0,
            inter_cluster_gap: 160.0,
            axis: Axis::X,
            handle_w: 18.0,
            handle_h: 18.0,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("scene: {m}")));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("image size must be positive");
        }
        if self.n_clusters == 0
            || self.handles_per_cluster.0 == 0
            || self.handles_per_cluster.0 > self.handles_per_cluster.1
        {
            return bad("need at least one cluster and a non-empty handle range");
        }
        if !(self.handle_w > 0.0 && self.handle_h > 0.0) {
            return bad("handle size must be positive");
        }
        if !(self.spacing_jitter >= 0.0 && self.spacing_mean - self.spacing_jitter > 0.0) {
            return bad("spacing must stay positive");
        }
        if self.n_clusters > 1
            && (self.inter_cluster_gap.is_nan()
                || self.inter_cluster_gap <= self.spacing_mean + self.spacing_jitter)
        {
            return bad("inter-cluster gap must exceed the largest intra-cluster spacing");
        }
        Ok(())
    }

    fn along_and_across(&self) -> (f64, f64, f64, f64) {
        match self.axis {
            Axis::X => (self.width, self.height, self.handle_w, self.handle_h),
            Axis::Y => (self.height, self.width, self.handle_h, self.handle_w),
        }
    }
}

/// Lays out ground-truth handle chains. Within a cluster handles are
/// collinear; each cluster gets its own offset across the axis.
pub fn generate_scene(spec: &SceneSpec) -> Result<ImageRecord> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let (along, across, size_along, size_across) = spec.along_and_across();

    let (lo, hi) = spec.handles_per_cluster;
    let counts: Vec<usize> = (0..spec.n_clusters)
        .map(|_| lo + rng.below((hi - lo + 1) as u64) as usize)
        .collect();
    let mut offsets = Vec::new();
    let mut pos = 0.0;
    for (c, &n) in counts.iter().enumerate() {
        if c > 0 {
            pos += spec.inter_cluster_gap;
        }
        let mut cluster = Vec::with_capacity(n);
        for k in 0..n {
            if k > 0 {
                pos += rng.uniform(
                    spec.spacing_mean - spec.spacing_jitter,
                    spec.spacing_mean + spec.spacing_jitter,
                );
            }
            cluster.push(pos);
        }
        offsets.push(cluster);
    }
    let extent = pos + size_along;
    if extent > along || size_across > across {
        let (need_along, need_across) = (extent.max(along), size_across.max(across));
        let (min_width, min_height) = match spec.axis {
            Axis::X => (need_along, need_across),
            Axis::Y => (need_across, need_along),
        };
        return Err(Error::LayoutDoesNotFit {
            min_width,
            min_height,
        });
    }

    let start = size_along / 2.0 + rng.uniform(0.0, along - extent);
    let mut record = ImageRecord::new(format!("synth-{}", spec.seed), spec.width, spec.height);
    for cluster in &offsets {
        let cross = rng.uniform(size_across / 2.0, across - size_across / 2.0);
        for &o in cluster {
            let a = start + o;
            let (cx, cy) = match spec.axis {
                Axis::X => (a, cross),
                Axis::Y => (cross, a),
            };
            record
                .ground_truth
                .push(BBox::new(cx, cy, spec.handle_w, spec.handle_h));
        }
    }
    Ok(record)
}

/// Score distributions: clipped normals for true detections and for
/// spurious ones.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreModel {
    pub true_mean: f64,
    pub true_sd: f64,
    pub false_mean: f64,
    pub false_sd: f64,
}

impl ScoreModel {
    pub const PERFECT: ScoreModel = ScoreModel {
        true_mean: 1.0,
        true_sd: 0.0,
        false_mean: 0.0,
        false_sd: 0.0,
    };
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self {
            true_mean: 0.85,
            true_sd: 0.1,
            false_mean: 0.2,
            false_sd: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionSpec {
    pub center_jitter_sigma: f64,
    pub dropout_rate: f64,
    pub duplicate_rate: f64,
    /// Spread of a near-duplicate around its source detection.
    pub duplicate_sigma: f64,
    pub false_positive_rate: f64,
    pub score_model: ScoreModel,
    pub seed: u64,
}

impl CorruptionSpec {
    /// Predictions become an exact copy of the ground truth with score 1.
    pub fn none() -> Self {
        Self {
            center_jitter_sigma: 0.0,
            dropout_rate: 0.0,
            duplicate_rate: 0.0,
            duplicate_sigma: 0.0,
            false_positive_rate: 0.0,
            score_model: ScoreModel::PERFECT,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.dropout_rate,
            self.duplicate_rate,
            self.false_positive_rate,
        ];
        if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidConfig(format!(
                "corruption rates must lie in [0,1]: {rates:?}"
            )));
        }
        if !(self.center_jitter_sigma >= 0.0 && self.duplicate_sigma >= 0.0) {
            return Err(Error::InvalidConfig(
                "jitter spreads must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self {
            center_jitter_sigma: 2.0,
            dropout_rate: 0.05,
            duplicate_rate: 0.1,
            duplicate_sigma: 2.0,
            false_positive_rate: 0.05,
            score_model: ScoreModel::default(),
            seed: 0,
        }
    }
}

/// Fills `predictions` from the ground truth.
///
/// Per target, in this order: dropout draw; if kept, two jitter draws and a
/// score draw; duplicate draw, and if duplicated two offset draws and a
/// score draw; false-positive draw, and if added two position draws and a
/// score draw. Centers are clamped into the image.
pub fn corrupt(record: &ImageRecord, spec: &CorruptionSpec) -> Result<ImageRecord> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let mut out = record.clone();
    out.predictions.clear();
    let model = spec.score_model;
    let clamp_score = |s: f64| s.clamp(0.0, 1.0);
    let (w, h) = (record.width, record.height);
    let place = |x: f64, y: f64, b: &BBox| BBox::new(x.clamp(0.0, w), y.clamp(0.0, h), b.w, b.h);

    for gt in &record.ground_truth {
        if !rng.bernoulli(spec.dropout_rate) {
            let x = gt.cx + rng.normal(0.0, spec.center_jitter_sigma);
            let y = gt.cy + rng.normal(0.0, spec.center_jitter_sigma);
            let score = clamp_score(rng.normal(model.true_mean, model.true_sd));
            let det = Detection::new(place(x, y, gt), score);
            out.predictions.push(det);
            if rng.bernoulli(spec.duplicate_rate) {
                let dx = rng.normal(0.0, spec.duplicate_sigma);
                let dy = rng.normal(0.0, spec.duplicate_sigma);
                let score = clamp_score(rng.normal(model.true_mean, model.true_sd));
                out.predictions.push(Detection::new(
                    place(det.bbox.cx + dx, det.bbox.cy + dy, gt),
                    score,
                ));
            }
        }
        if rng.bernoulli(spec.false_positive_rate) {
            let x = rng.uniform(0.0, w);
            let y = rng.uniform(0.0, h);
            let score = clamp_score(rng.normal(model.false_mean, model.false_sd));
            out.predictions.push(Detection::new(place(x, y, gt), score));
        }
    }
    Ok(out)
}

/// A straight chain of `n` targets `spacing` apart along x, with
/// predictions displaced uniformly by up to `jitter` on both axes and
/// scores drawn from `[0.6, 0.9)`. Predictions are matched to targets with
/// the focal value function.
pub fn jittered_chain(
    n: usize,
    spacing: f64,
    jitter: f64,
    seed: u64,
    focal: &FocalParams,
) -> Result<ChainInstance> {
    let mut rng = SplitMix64::new(seed);
    let gts: Vec<Point2D> = (0..n)
        .map(|i| Point2D::new(50.0 + spacing * i as f64, 100.0))
        .collect();
    let mut preds = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for g in &gts {
        preds.push(Point2D::new(
            g.x + rng.uniform(-jitter, jitter),
            g.y + rng.uniform(-jitter, jitter),
        ));
        scores.push(rng.uniform(0.6, 0.9));
    }
    ChainInstance::matched(preds, scores, gts, focal)
}
