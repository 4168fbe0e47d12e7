//! Central finite-difference check of [`composite_loss_gradient`].
//!
//! The numerical side only ever calls [`composite_loss`], so it shares no
//! code with the analytic derivatives it verifies.

use crate::assignment::FocalParams;
use crate::error::Result;
use crate::geometry::Point2D;
use crate::losses::{composite_loss, composite_loss_gradient, ChainInstance, LossWeights};
use crate::synth::SplitMix64;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Coordinates whose `|.|` arguments sit closer than this to zero are skipped.
pub const KINK_MARGIN: f64 = 1e-6;

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute
/// below unit magnitude where the loss's rounding floor dominates.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub instances: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    fn absorb(&mut self, other: &GradCheckReport) {
        self.instances += other.instances;
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
        self.max_relative_error = self.max_relative_error.max(other.max_relative_error);
    }
}

pub fn check_instance(
    inst: &ChainInstance,
    weights: &LossWeights,
    focal: &FocalParams,
    step: f64,
) -> GradCheckReport {
    let analytic = composite_loss_gradient(inst, weights, focal);
    let margins = inst.kink_margins();
    let skip_below = KINK_MARGIN.max(2.0 * step);
    let mut report = GradCheckReport {
        instances: 1,
        ..Default::default()
    };
    let mut probe = inst.clone();

    let central = |probe: &mut ChainInstance, set: &dyn Fn(&mut ChainInstance, f64)| {
        set(probe, step);
        let plus = composite_loss(probe, weights, focal).total;
        set(probe, -2.0 * step);
        let minus = composite_loss(probe, weights, focal).total;
        set(probe, step);
        (plus - minus) / (2.0 * step)
    };

    for (i, &margin) in margins.iter().enumerate() {
        if margin < skip_below {
            report.skipped_kinks += 2;
            continue;
        }
        let origin = inst.pred_centers[i];
        let nx = central(&mut probe, &|c, d| c.pred_centers[i].x += d);
        probe.pred_centers[i] = origin;
        let ny = central(&mut probe, &|c, d| c.pred_centers[i].y += d);
        probe.pred_centers[i] = origin;
        report.max_relative_error = report
            .max_relative_error
            .max(relative_error(analytic.centers[i].x, nx))
            .max(relative_error(analytic.centers[i].y, ny));
        report.checked += 2;
    }

    for i in 0..inst.pred_scores.len() {
        let origin = inst.pred_scores[i];
        if origin - step < 0.0 || origin + step > 1.0 {
            report.skipped_kinks += 1;
            continue;
        }
        let ns = central(&mut probe, &|c, d| c.pred_scores[i] += d);
        probe.pred_scores[i] = origin;
        report.max_relative_error = report
            .max_relative_error
            .max(relative_error(analytic.scores[i], ns));
        report.checked += 1;
    }
    report
}

/// Targets uniform in `[0, 800]^2`; predictions are jittered targets with
/// occasional misses and spurious extras, matched with the focal cost.
pub fn random_instance(
    rng: &mut SplitMix64,
    n_points: usize,
    focal: &FocalParams,
) -> Result<ChainInstance> {
    let gts: Vec<Point2D> = (0..n_points)
        .map(|_| Point2D::new(rng.uniform(0.0, 800.0), rng.uniform(0.0, 800.0)))
        .collect();
    let mut preds = Vec::new();
    let mut scores = Vec::new();
    for g in &gts {
        if rng.bernoulli(0.1) {
            continue;
        }
        preds.push(Point2D::new(
            (g.x + rng.normal(0.0, 4.0)).clamp(0.0, 800.0),
            (g.y + rng.normal(0.0, 4.0)).clamp(0.0, 800.0),
        ));
        scores.push(rng.uniform(0.02, 0.98));
    }
    for _ in 0..rng.below(3) {
        preds.push(Point2D::new(
            rng.uniform(0.0, 800.0),
            rng.uniform(0.0, 800.0),
        ));
        scores.push(rng.uniform(0.02, 0.98));
    }
    ChainInstance::matched(preds, scores, gts, focal)
}

/// Runs the check over `instances` random chains of 3 to 20 targets.
pub fn run(
    seed: u64,
    instances: usize,
    weights: &LossWeights,
    focal: &FocalParams,
    step: f64,
) -> Result<GradCheckReport> {
    let mut rng = SplitMix64::new(seed);
    let mut total = GradCheckReport::default();
    for _ in 0..instances {
        let n = 3 + rng.below(18) as usize;
        let inst = random_instance(&mut rng, n, focal)?;
        total.absorb(&check_instance(&inst, weights, focal, step));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-9, 0.0), 1e-9);
        assert_eq!(relative_error(200.0, 198.0), 0.01);
    }

    #[test]
    fn random_instances_pass() {
        let report = run(
            7,
            20,
            &LossWeights::default(),
            &FocalParams::default(),
            DEFAULT_STEP,
        )
        .unwrap();
        assert_eq!(report.instances, 20);
        assert!(report.checked > 100);
        assert!(report.max_relative_error < DEFAULT_TOLERANCE, "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Analytic side at the default weights, numeric side at doubled ones.
        let focal = FocalParams::default();
        let mut rng = SplitMix64::new(3);
        let inst = random_instance(&mut rng, 6, &focal).unwrap();
        let w = LossWeights::default();
        let analytic = composite_loss_gradient(&inst, &w, &focal);
        let doubled = LossWeights {
            loc: 20.0,
            neigh: 200.0,
            cls: 2.0,
        };
        let mut worst: f64 = 0.0;
        for i in 0..inst.pred_centers.len() {
            let mut a = inst.clone();
            let mut b = inst.clone();
            a.pred_centers[i].x += DEFAULT_STEP;
            b.pred_centers[i].x -= DEFAULT_STEP;
            let n = (composite_loss(&a, &doubled, &focal).total
                - composite_loss(&b, &doubled, &focal).total)
                / (2.0 * DEFAULT_STEP);
            worst = worst.max(relative_error(analytic.centers[i].x, n));
        }
        assert!(worst > 0.1);
    }
}
