//! Relation-weighted gradient scaling and the SGD step that consumes it.
//!
//! A weight gradient `g` is blended with its relation-gated copy,
//! `alpha·(g ∘ R) + (1 − alpha)·g`, so synapses whose pre- and
//! post-synaptic neurons fired together get a larger step and silent ones a
//! smaller one. Because `R ≥ 0` the blend never flips a gradient's sign.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trace::{RelationMode, RelationNorm, RelationTensor, DEFAULT_TRACE_DECAY};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradScaleConfig {
    pub enabled: bool,
    pub alpha: f64,
    pub relation_mode: RelationMode,
    pub relation_norm: RelationNorm,
    pub trace_decay: f64,
}

impl Default for GradScaleConfig {
    fn default() -> Self {
        GradScaleConfig {
            enabled: false,
            alpha: 0.1,
            relation_mode: RelationMode::FinalStep,
            relation_norm: RelationNorm::None,
            trace_decay: DEFAULT_TRACE_DECAY,
        }
    }
}

impl GradScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("gradscale.alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.trace_decay >= 0.0 && self.trace_decay < 1.0) {
            return Err(Error::Config(format!(
                "gradscale.trace_decay must lie in [0, 1), got {}",
                self.trace_decay
            )));
        }
        Ok(())
    }
}

/// `alpha·(grad ∘ r) + (1 − alpha)·grad`.
pub fn scale_gradient(grad: &Tensor, r: &RelationTensor, alpha: f64) -> Result<Tensor> {
    if grad.shape() != r.r.shape() {
        return Err(Error::shape("scale_gradient", grad.shape(), r.r.shape()));
    }
    let keep = 1.0 - alpha;
    let data = grad
        .data()
        .iter()
        .zip(r.r.data())
        .map(|(&g, &r)| alpha * (g * r) + keep * g)
        .collect();
    Tensor::new(grad.shape().to_vec(), data)
}

/// Learning-rate schedule and SGD hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerState {
    pub eta: f64,
    pub epoch: usize,
    pub base_eta: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(base_eta: f64) -> Self {
        OptimizerState {
            eta: base_eta,
            epoch: 0,
            base_eta,
            decay_factor: 0.1,
            decay_every: 100,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_eta >= 0.0 && self.base_eta.is_finite()) {
            return Err(Error::Config(format!("optim.lr must be non-negative, got {}", self.base_eta)));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("optim.decay_every must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::Config(format!(
                "optim.decay_factor must be positive, got {}",
                self.decay_factor
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("optim.momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "optim.weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    /// Moves the schedule to `epoch` and updates `eta`.
    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
        self.eta = lr_at_epoch(self, epoch);
    }
}

/// `base_eta · decay_factor^floor(epoch / decay_every)`.
pub fn lr_at_epoch(state: &OptimizerState, epoch: usize) -> f64 {
    let steps = (epoch / state.decay_every.max(1)) as i32;
    state.base_eta * state.decay_factor.powi(steps)
}

/// `W − eta·v`, where `v` is the gradient (plus weight decay) passed through
/// the momentum buffer `velocity`. The buffer is created on first use.
pub fn sgd_step(weight: &Tensor, grad: &Tensor, state: &OptimizerState, velocity: &mut Option<Tensor>) -> Result<Tensor> {
    if weight.shape() != grad.shape() {
        return Err(Error::shape("sgd_step", weight.shape(), grad.shape()));
    }
    if !grad.all_finite() {
        return Err(Error::NonFinite { op: "sgd_step" });
    }
    let mut step: Vec<f64> = if state.weight_decay > 0.0 {
        grad.data()
            .iter()
            .zip(weight.data())
            .map(|(&g, &w)| g + state.weight_decay * w)
            .collect()
    } else {
        grad.data().to_vec()
    };
    if state.momentum > 0.0 {
        match velocity {
            Some(v) if v.shape() == weight.shape() => {
                for (vi, si) in v.data_mut().iter_mut().zip(step.iter_mut()) {
                    *vi = state.momentum * *vi + *si;
                    *si = *vi;
                }
            }
            _ => *velocity = Some(Tensor::new(weight.shape().to_vec(), step.clone())?),
        }
    }
    let data = weight.data().iter().zip(&step).map(|(&w, &s)| w - state.eta * s).collect();
    Tensor::new(weight.shape().to_vec(), data).map_err(|_| Error::NonFinite { op: "sgd_step" })
}
