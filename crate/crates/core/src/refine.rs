//! Descent on predicted centers and scores under the composite loss.
//!
//! Scores are optimized through their logits so they stay in (0, 1). The
//! assignment is frozen between re-matches, which happen every
//! `rematch_every` steps.

use serde::{Deserialize, Serialize};

use crate::assignment::FocalParams;
use crate::error::{Error, Result};
use crate::losses::{
    composite_loss, composite_loss_gradient, ChainInstance, LossBreakdown, LossWeights,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// `x -= lr * g`.
    GradientDescent,
    /// Bias-corrected Adam with per-parameter moment estimates.
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::ADAM
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub rematch_every: usize,
    pub weights: LossWeights,
    pub focal: FocalParams,
    pub optimizer: Optimizer,
    /// Recorded with the trace; the descent itself draws no random numbers.
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            learning_rate: 0.05,
            rematch_every: 25,
            weights: LossWeights::default(),
            focal: FocalParams::default(),
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.rematch_every == 0 || self.rematch_every > self.steps {
            return Err(Error::InvalidConfig(format!(
                "refine needs steps > 0 and 0 < rematch_every <= steps (got {} / {})",
                self.steps, self.rematch_every
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        let w = self.weights;
        if !(w.loc >= 0.0 && w.neigh >= 0.0 && w.cls >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "loss weights must be non-negative: {w:?}"
            )));
        }
        self.focal.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineStep {
    pub step: usize,
    pub loss: LossBreakdown,
    /// Predictions whose partner changed at this step's re-match.
    pub churn: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineTrace {
    /// Step 0 (before any update) through `steps`.
    pub steps: Vec<RefineStep>,
    pub initial: ChainInstance,
    pub final_state: ChainInstance,
}

impl RefineTrace {
    pub fn initial_loss(&self) -> LossBreakdown {
        self.steps[0].loss
    }

    pub fn final_loss(&self) -> LossBreakdown {
        self.steps[self.steps.len() - 1].loss
    }

    pub fn min_total(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| s.loss.total)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Mean Euclidean distance between matched predictions and their targets.
pub fn mean_center_error(inst: &ChainInstance) -> f64 {
    let pairs = &inst.matching.pairs;
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|&(p, g)| inst.pred_centers[p].l2(&inst.gt_centers[g]))
        .sum::<f64>()
        / pairs.len() as f64
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

fn apply(
    optimizer: &Optimizer,
    lr: f64,
    t: usize,
    params: &mut [f64],
    grads: &[f64],
    state: &mut Moments,
) {
    match *optimizer {
        Optimizer::GradientDescent => {
            for (x, g) in params.iter_mut().zip(grads) {
                *x -= lr * g;
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let c1 = 1.0 - beta1.powi(t as i32);
            let c2 = 1.0 - beta2.powi(t as i32);
            for (k, (x, &g)) in params.iter_mut().zip(grads).enumerate() {
                state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g;
                state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g;
                let m_hat = state.m[k] / c1;
                let v_hat = state.v[k] / c2;
                *x -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

/// Runs `cfg.steps` updates and records the loss before the first update
/// and after each one. Fails on the first non-finite loss.
pub fn refine(inst: &ChainInstance, cfg: &RefineConfig) -> Result<RefineTrace> {
    cfg.validate()?;
    if inst.gt_centers.is_empty() {
        return Err(Error::EmptyInput("refine"));
    }
    let n = inst.pred_centers.len();
    let mut state = inst.clone();
    let mut logits: Vec<f64> = state.pred_scores.iter().map(|&p| logit(p)).collect();
    let mut coords: Vec<f64> = state.pred_centers.iter().flat_map(|c| [c.x, c.y]).collect();
    let mut coord_moments = Moments::new(2 * n);
    let mut logit_moments = Moments::new(n);
    let mut steps = Vec::with_capacity(cfg.steps + 1);

    for step in 0..=cfg.steps {
        let churn = if step > 0 && step % cfg.rematch_every == 0 {
            state.rematch(&cfg.focal)?
        } else {
            0
        };
        let loss = composite_loss(&state, &cfg.weights, &cfg.focal);
        if !(loss.total.is_finite()
            && loss.loc.is_finite()
            && loss.neigh.is_finite()
            && loss.cls.is_finite())
        {
            return Err(Error::NonFinite { step });
        }
        steps.push(RefineStep { step, loss, churn });
        if step == cfg.steps {
            break;
        }

        let grad = composite_loss_gradient(&state, &cfg.weights, &cfg.focal);
        let coord_grads: Vec<f64> = grad.centers.iter().flat_map(|g| [g.x, g.y]).collect();
        // chain rule through the sigmoid
        let logit_grads: Vec<f64> = grad
            .scores
            .iter()
            .zip(&state.pred_scores)
            .map(|(g, &s)| g * s * (1.0 - s))
            .collect();
        apply(
            &cfg.optimizer,
            cfg.learning_rate,
            step + 1,
            &mut coords,
            &coord_grads,
            &mut coord_moments,
        );
        apply(
            &cfg.optimizer,
            cfg.learning_rate,
            step + 1,
            &mut logits,
            &logit_grads,
            &mut logit_moments,
        );

        for (i, c) in state.pred_centers.iter_mut().enumerate() {
            c.x = coords[2 * i];
            c.y = coords[2 * i + 1];
        }
        for (s, &z) in state.pred_scores.iter_mut().zip(&logits) {
            *s = sigmoid(z);
        }
    }

    Ok(RefineTrace {
        steps,
        initial: inst.clone(),
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2D;
    use crate::synth::jittered_chain;

    fn chain() -> ChainInstance {
        jittered_chain(20, 30.0, 2.0, 0, &FocalParams::default()).unwrap()
    }

    #[test]
    fn starting_at_the_optimum_stays_put() {
        let gts: Vec<Point2D> = (0..10)
            .map(|i| Point2D::new(10.0 + 30.0 * i as f64, 50.0))
            .collect();
        let focal = FocalParams::default();
        let inst = ChainInstance::matched(gts.clone(), vec![1.0; 10], gts, &focal).unwrap();
        let cfg = RefineConfig {
            steps: 50,
            rematch_every: 10,
            ..Default::default()
        };
        let trace = refine(&inst, &cfg).unwrap();
        assert_eq!(trace.steps.len(), 51);
        assert!(trace.steps.iter().all(|s| s.loss.total.abs() < 1e-12));
        assert_eq!(trace.final_state.pred_centers, inst.pred_centers);
    }

    #[test]
    fn trace_is_deterministic() {
        let cfg = RefineConfig {
            steps: 100,
            ..Default::default()
        };
        let a = refine(&chain(), &cfg).unwrap();
        let b = refine(&chain(), &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.min_total() <= a.initial_loss().total);
    }

    #[test]
    fn neighboring_term_shrinks() {
        let trace = refine(&chain(), &RefineConfig::default()).unwrap();
        let (first, last) = (trace.initial_loss(), trace.final_loss());
        assert!(last.neigh <= 0.1 * first.neigh, "{first:?} -> {last:?}");
        assert!(mean_center_error(&trace.final_state) <= 0.5 * mean_center_error(&trace.initial));
    }

    #[test]
    fn neighbor_only_descent_keeps_targets() {
        let cfg = RefineConfig {
            steps: 60,
            weights: LossWeights::new(0.0, 0.0, 100.0),
            ..Default::default()
        };
        let inst = chain();
        let trace = refine(&inst, &cfg).unwrap();
        assert_eq!(trace.final_state.gt_centers, inst.gt_centers);
        assert!(trace.final_loss().neigh < trace.initial_loss().neigh);
    }

    #[test]
    fn rejects_bad_configs_and_inputs() {
        let inst = chain();
        assert!(refine(
            &inst,
            &RefineConfig {
                rematch_every: 600,
                ..Default::default()
            }
        )
        .is_err());
        assert!(refine(
            &inst,
            &RefineConfig {
                learning_rate: 0.0,
                ..Default::default()
            }
        )
        .is_err());
        let mut empty = inst.clone();
        empty.gt_centers.clear();
        assert!(matches!(
            refine(&empty, &RefineConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn divergence_is_reported_with_its_step() {
        let inst = chain();
        let cfg = RefineConfig {
            steps: 400,
            learning_rate: f64::MAX,
            optimizer: Optimizer::GradientDescent,
            ..Default::default()
        };
        match refine(&inst, &cfg) {
            Err(Error::NonFinite { step }) => assert!(step >= 1),
            other => panic!(
                "expected divergence, got {:?}",
                other.map(|t| t.final_loss())
            ),
        }
    }
}
