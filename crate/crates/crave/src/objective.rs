//! Training losses: a bounded PLCC loss, a pairwise hinge rank loss and
//! their gamma-weighted sum, each returned with its gradient w.r.t. the
//! predictions. The same op implementations back the training graph, so the
//! gradients here are exactly what the optimiser sees.

use thiserror::Error;

use crate::autodiff::{Graph, Tensor};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("batch needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("target is constant; correlation loss undefined")]
    ConstantTarget,
    #[error("pred and target lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub rank_margin: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 0.3, rank_margin: 0.0, eps: 1e-8 }
    }
}

/// A loss value with its gradient w.r.t. the predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct Diff {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check(pred: &[f64], target: &[f64]) -> Result<(), LossError> {
    if pred.len() != target.len() {
        return Err(LossError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.len() < 2 {
        return Err(LossError::BatchTooSmall(pred.len()));
    }
    Ok(())
}

fn target_is_constant(target: &[f64]) -> bool {
    target.iter().all(|v| *v == target[0])
}

/// `(1 - r) / 2` in `[0, 1]`, where `r` is the Pearson correlation with
/// eps-floored standard deviations on the prediction side.
pub fn plcc_loss(pred: &[f64], target: &[f64], cfg: &LossConfig) -> Result<Diff, LossError> {
    check(pred, target)?;
    if target_is_constant(target) {
        return Err(LossError::ConstantTarget);
    }
    let mut g = Graph::new();
    let p = g.leaf(Tensor::vector(pred.to_vec()));
    let t = g.leaf(Tensor::vector(target.to_vec()));
    let loss = g.plcc_loss(p, t, cfg.eps);
    let grads = g.backward(loss);
    Ok(Diff {
        value: g.value(loss).as_scalar(),
        grad: grads.get(p).expect("pred gradient").data().to_vec(),
    })
}

/// Mean hinge `max(0, margin - (pred_i - pred_j))` over ordered pairs with
/// `target_i > target_j`; zero when no pair qualifies.
pub fn rank_loss(pred: &[f64], target: &[f64], cfg: &LossConfig) -> Result<Diff, LossError> {
    check(pred, target)?;
    let mut g = Graph::new();
    let p = g.leaf(Tensor::vector(pred.to_vec()));
    let t = g.leaf(Tensor::vector(target.to_vec()));
    let loss = g.rank_loss(p, t, cfg.rank_margin);
    let grads = g.backward(loss);
    Ok(Diff {
        value: g.value(loss).as_scalar(),
        grad: grads.get(p).expect("pred gradient").data().to_vec(),
    })
}

/// `plcc_loss + gamma * rank_loss`.
pub fn total_loss(pred: &[f64], target: &[f64], cfg: &LossConfig) -> Result<Diff, LossError> {
    check(pred, target)?;
    if target_is_constant(target) {
        return Err(LossError::ConstantTarget);
    }
    let mut g = Graph::new();
    let p = g.leaf(Tensor::vector(pred.to_vec()));
    let t = g.leaf(Tensor::vector(target.to_vec()));
    let plcc = g.plcc_loss(p, t, cfg.eps);
    let rank = g.rank_loss(p, t, cfg.rank_margin);
    let loss = g.add_scaled(plcc, rank, cfg.gamma);
    let grads = g.backward(loss);
    Ok(Diff {
        value: g.value(loss).as_scalar(),
        grad: grads.get(p).expect("pred gradient").data().to_vec(),
    })
}
