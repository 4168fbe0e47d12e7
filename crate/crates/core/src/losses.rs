//! Training objective over a matched chain: localization, neighboring and
//! focal classification terms, plus analytic gradients with the assignment
//! held fixed.

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian, value_matrix_from_centers, FocalParams, MatchResult};
use crate::error::Result;
use crate::geometry::{dominant_orientation, sort_along, Axis, Point2D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub loc: f64,
    pub neigh: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            loc: 10.0,
            neigh: 100.0,
            cls: 1.0,
        }
    }
}

impl LossWeights {
    pub const fn new(cls: f64, loc: f64, neigh: f64) -> Self {
        Self { loc, neigh, cls }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loc: f64,
    pub neigh: f64,
    pub cls: f64,
    pub total: f64,
}

/// Predictions and targets of one image together with their assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainInstance {
    pub pred_centers: Vec<Point2D>,
    pub pred_scores: Vec<f64>,
    pub gt_centers: Vec<Point2D>,
    pub matching: MatchResult,
    pub axis: Axis,
}

impl ChainInstance {
    /// Matches predictions to targets with the focal value function and
    /// orients the chain along the targets' dominant axis.
    pub fn matched(
        pred_centers: Vec<Point2D>,
        pred_scores: Vec<f64>,
        gt_centers: Vec<Point2D>,
        focal: &FocalParams,
    ) -> Result<Self> {
        let axis = chain_axis(&gt_centers, &pred_centers);
        let mut inst = Self {
            pred_centers,
            pred_scores,
            gt_centers,
            matching: MatchResult::default(),
            axis,
        };
        inst.rematch(focal)?;
        Ok(inst)
    }

    /// Recomputes the assignment from the current centers and scores and
    /// returns how many predictions changed partner.
    pub fn rematch(&mut self, focal: &FocalParams) -> Result<usize> {
        let costs = value_matrix_from_centers(
            &self.pred_centers,
            &self.pred_scores,
            &self.gt_centers,
            focal,
        )?;
        let before = self.matching.pred_to_gt(self.pred_centers.len());
        self.matching = hungarian(&costs);
        let after = self.matching.pred_to_gt(self.pred_centers.len());
        Ok(before.iter().zip(&after).filter(|(a, b)| a != b).count())
    }

    /// Matched `(pred, gt)` pairs ordered along the chain axis by target center.
    pub fn chain(&self) -> Vec<(usize, usize)> {
        let gts: Vec<Point2D> = self
            .matching
            .pairs
            .iter()
            .map(|&(_, g)| self.gt_centers[g])
            .collect();
        sort_along(&gts, self.axis)
            .into_iter()
            .map(|k| self.matching.pairs[k])
            .collect()
    }

    /// For every prediction center, the smallest absolute argument of any
    /// `|.|` term it feeds. Finite differences closer than this to zero
    /// straddle a kink.
    pub fn kink_margins(&self) -> Vec<f64> {
        let mut margins = vec![f64::INFINITY; self.pred_centers.len()];
        for &(p, g) in &self.matching.pairs {
            let d = self.pred_centers[p];
            let t = self.gt_centers[g];
            margins[p] = margins[p].min((d.x - t.x).abs()).min((d.y - t.y).abs());
        }
        let chain = self.chain();
        for w in chain.windows(2) {
            let (pa, ga) = w[0];
            let (pb, gb) = w[1];
            let dp = self.pred_centers[pa].l2(&self.pred_centers[pb]);
            let dg = self.gt_centers[ga].l2(&self.gt_centers[gb]);
            let m = (dp - dg).abs().min(dp);
            margins[pa] = margins[pa].min(m);
            margins[pb] = margins[pb].min(m);
        }
        margins
    }
}

fn chain_axis(gt_centers: &[Point2D], pred_centers: &[Point2D]) -> Axis {
    dominant_orientation(gt_centers)
        .or_else(|_| dominant_orientation(pred_centers))
        .unwrap_or(Axis::Y)
}

/// Sum of L1 distances between matched prediction and target centers.
pub fn localization_loss(inst: &ChainInstance) -> f64 {
    inst.matching
        .pairs
        .iter()
        .map(|&(p, g)| inst.pred_centers[p].l1(&inst.gt_centers[g]))
        .sum()
}

/// Sum over consecutive chain links of `|d_pred - d_gt|`, where both are
/// Euclidean center-to-center distances. Zero with fewer than two pairs.
pub fn neighboring_loss(inst: &ChainInstance) -> f64 {
    inst.chain()
        .windows(2)
        .map(|w| {
            let (pa, ga) = w[0];
            let (pb, gb) = w[1];
            let dp = inst.pred_centers[pa].l2(&inst.pred_centers[pb]);
            let dg = inst.gt_centers[ga].l2(&inst.gt_centers[gb]);
            (dp - dg).abs()
        })
        .sum()
}

/// Focal loss with matched scores as positives and the rest as negatives.
pub fn classification_loss(scores: &[f64], matched_mask: &[bool], params: &FocalParams) -> f64 {
    assert_eq!(
        scores.len(),
        matched_mask.len(),
        "scores and mask must align"
    );
    scores
        .iter()
        .zip(matched_mask)
        .map(|(&p, &matched)| {
            if matched {
                params.positive(p)
            } else {
                params.negative(p)
            }
        })
        .sum()
}

pub fn composite_loss(
    inst: &ChainInstance,
    weights: &LossWeights,
    params: &FocalParams,
) -> LossBreakdown {
    let loc = localization_loss(inst);
    let neigh = neighboring_loss(inst);
    let mask = inst.matching.matched_mask(inst.pred_scores.len());
    let cls = classification_loss(&inst.pred_scores, &mask, params);
    LossBreakdown {
        loc,
        neigh,
        cls,
        total: weights.loc * loc + weights.neigh * neigh + weights.cls * cls,
    }
}

/// Gradient of [`LossBreakdown::total`] with respect to prediction centers
/// and (probability-space) scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub centers: Vec<Point2D>,
    pub scores: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Analytic gradient with the matching frozen. Exact zeros inside `|.|`
/// (and coincident predicted centers) take the zero subgradient.
pub fn composite_loss_gradient(
    inst: &ChainInstance,
    weights: &LossWeights,
    params: &FocalParams,
) -> LossGradient {
    let n = inst.pred_centers.len();
    let mut centers = vec![Point2D::default(); n];

    for &(p, g) in &inst.matching.pairs {
        let d = inst.pred_centers[p];
        let t = inst.gt_centers[g];
        centers[p].x += weights.loc * sign(d.x - t.x);
        centers[p].y += weights.loc * sign(d.y - t.y);
    }

    for w in inst.chain().windows(2) {
        let (pa, ga) = w[0];
        let (pb, gb) = w[1];
        let a = inst.pred_centers[pa];
        let b = inst.pred_centers[pb];
        let dp = a.l2(&b);
        if dp == 0.0 {
            continue;
        }
        let dg = inst.gt_centers[ga].l2(&inst.gt_centers[gb]);
        let s = weights.neigh * sign(dp - dg);
        let ux = (b.x - a.x) / dp;
        let uy = (b.y - a.y) / dp;
        centers[pb].x += s * ux;
        centers[pb].y += s * uy;
        centers[pa].x -= s * ux;
        centers[pa].y -= s * uy;
    }

    let mask = inst.matching.matched_mask(n);
    let scores = inst
        .pred_scores
        .iter()
        .zip(&mask)
        .map(|(&p, &matched)| {
            weights.cls
                * if matched {
                    params.positive_derivative(p)
                } else {
                    params.negative_derivative(p)
                }
        })
        .collect();

    LossGradient { centers, scores }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(x: f64, y: f64) -> Point2D {
        Point2D::new(x, y)
    }

    /// Instance with an explicit identity assignment over the first `k` points.
    fn paired(preds: Vec<Point2D>, gts: Vec<Point2D>, scores: Vec<f64>) -> ChainInstance {
        let k = preds.len().min(gts.len());
        let matching = MatchResult {
            pairs: (0..k).map(|i| (i, i)).collect(),
            unmatched_preds: (k..preds.len()).collect(),
            unmatched_gts: (k..gts.len()).collect(),
            total_cost: 0.0,
        };
        let axis = chain_axis(&gts, &preds);
        ChainInstance {
            pred_centers: preds,
            pred_scores: scores,
            gt_centers: gts,
            matching,
            axis,
        }
    }

    #[test]
    fn localization_examples() {
        let gts = vec![p(10.0, 10.0), p(20.0, 10.0)];
        assert_eq!(
            localization_loss(&paired(gts.clone(), gts.clone(), vec![0.9; 2])),
            0.0
        );
        let one = paired(vec![p(13.0, 14.0)], vec![p(10.0, 10.0)], vec![0.9]);
        assert_eq!(localization_loss(&one), 7.0);
        let two = paired(vec![p(11.0, 10.0), p(20.0, 12.0)], gts, vec![0.9; 2]);
        assert_eq!(localization_loss(&two), 3.0);
    }

    #[test]
    fn neighboring_examples() {
        let gts = vec![p(0.0, 0.0), p(10.0, 1.0), p(20.0, 0.0)];
        let shifted: Vec<_> = gts.iter().map(|q| q.translate(3.5, -2.0)).collect();
        assert_eq!(neighboring_loss(&paired(shifted, gts, vec![0.9; 3])), 0.0);

        let inst = paired(
            vec![p(0.0, 0.0), p(5.0, 0.0)],
            vec![p(0.0, 0.0), p(3.0, 0.0)],
            vec![0.9; 2],
        );
        assert_eq!(neighboring_loss(&inst), 2.0);

        // predicted gaps 4 and 6 against target gaps 5 and 5
        let inst = paired(
            vec![p(0.0, 0.0), p(4.0, 0.0), p(10.0, 0.0)],
            vec![p(0.0, 0.0), p(5.0, 0.0), p(10.0, 0.0)],
            vec![0.9; 3],
        );
        assert_eq!(neighboring_loss(&inst), 2.0);

        let single = paired(vec![p(0.0, 0.0)], vec![p(30.0, 0.0)], vec![0.9]);
        assert_eq!(neighboring_loss(&single), 0.0);
    }

    #[test]
    fn chain_follows_target_order_not_prediction_order() {
        // targets listed right-to-left; the chain must still run left-to-right
        let gts = vec![p(20.0, 0.0), p(10.0, 0.0), p(0.0, 0.0)];
        let preds = vec![p(20.0, 0.0), p(12.0, 0.0), p(0.0, 0.0)];
        let inst = paired(preds, gts, vec![0.9; 3]);
        assert_eq!(inst.chain(), vec![(2, 2), (1, 1), (0, 0)]);
        assert_eq!(neighboring_loss(&inst), 4.0);
    }

    #[test]
    fn classification_examples() {
        let params = FocalParams::default();
        let eps = params.epsilon;
        assert!(classification_loss(&[1.0 - eps], &[true], &params).abs() < 1e-12);
        assert!(classification_loss(&[1e-9], &[false], &params).abs() < 1e-12);
        assert_relative_eq!(
            classification_loss(&[0.5], &[true], &params),
            0.04332169753499659,
            max_relative = 1e-12
        );
    }

    #[test]
    fn composite_examples() {
        let params = FocalParams::default();
        let gts = vec![p(0.0, 0.0), p(10.0, 0.0), p(20.0, 0.0)];
        let perfect = paired(gts.clone(), gts.clone(), vec![1.0 - params.epsilon; 3]);
        let b = composite_loss(&perfect, &LossWeights::default(), &params);
        assert!(b.total.abs() < 1e-12, "{b:?}");

        let inst = paired(
            vec![p(1.0, 0.5), p(12.0, -1.0), p(19.0, 0.0), p(40.0, 3.0)],
            gts,
            vec![0.8, 0.6, 0.9, 0.2],
        );
        let unit = composite_loss(&inst, &LossWeights::new(1.0, 1.0, 1.0), &params);
        let paper = composite_loss(&inst, &LossWeights::default(), &params);
        assert_eq!(unit.loc, paper.loc);
        assert_eq!(unit.neigh, paper.neigh);
        assert_eq!(unit.cls, paper.cls);
        assert_eq!(paper.total, 10.0 * unit.loc + 100.0 * unit.neigh + unit.cls);

        let cls_only = composite_loss(&inst, &LossWeights::new(1.0, 0.0, 0.0), &params);
        assert_eq!(
            cls_only.total,
            classification_loss(&inst.pred_scores, &[true, true, true, false], &params)
        );
    }

    #[test]
    fn gradient_examples() {
        let params = FocalParams::default();
        let gts = vec![p(0.0, 0.0), p(10.0, 0.0), p(20.0, 0.0)];
        let perfect = paired(gts.clone(), gts, vec![1.0 - params.epsilon; 3]);
        let g = composite_loss_gradient(&perfect, &LossWeights::default(), &params);
        assert!(g.centers.iter().all(|c| c.x == 0.0 && c.y == 0.0));
        assert!(g.scores.iter().all(|s| s.abs() < 1e-6), "{:?}", g.scores);

        let single = paired(vec![p(13.0, 5.0)], vec![p(10.0, 5.0)], vec![0.5]);
        let g = composite_loss_gradient(&single, &LossWeights::new(0.0, 1.0, 0.0), &params);
        assert_eq!(g.centers, vec![p(1.0, 0.0)]);
        assert_eq!(g.scores, vec![0.0]);
    }

    #[test]
    fn unmatched_predictions_only_feed_classification() {
        let params = FocalParams::default();
        let inst = paired(
            vec![p(0.0, 0.0), p(50.0, 50.0)],
            vec![p(1.0, 0.0)],
            vec![0.7, 0.4],
        );
        let g = composite_loss_gradient(&inst, &LossWeights::default(), &params);
        assert_eq!(g.centers[1], Point2D::default());
        assert_relative_eq!(g.scores[1], params.negative_derivative(0.4));
    }

    #[test]
    fn matched_constructor_assigns_nearest() {
        let params = FocalParams::default();
        let inst = ChainInstance::matched(
            vec![p(21.0, 0.0), p(1.0, 0.0), p(300.0, 300.0)],
            vec![0.9, 0.9, 0.3],
            vec![p(0.0, 0.0), p(20.0, 0.0)],
            &params,
        )
        .unwrap();
        assert_eq!(inst.matching.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(inst.matching.unmatched_preds, vec![2]);
        assert_eq!(inst.axis, Axis::X);
    }
}
