//! Leaky integrate-and-fire dynamics.
//!
//! One step of a layer's neurons is
//!
//! ```text
//! u'  = tau * u + psp          (leaky integration)
//! s   = H(u' - v_th)           (firing, H(0) = 1)
//! u'' = u' - s * v_th          (soft reset)
//! u'' = (1 - s) * u' + s * v_r (hard reset)
//! ```
//!
//! The firing function has no useful derivative, so the backward pass
//! substitutes one of the [`Surrogate`] windows for `dH/du`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetMode {
    Soft,
    Hard,
}

impl FromStr for ResetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(ResetMode::Soft),
            "hard" => Ok(ResetMode::Hard),
            _ => Err(Error::Config(format!("unknown reset mode '{s}' (soft|hard)"))),
        }
    }
}

impl fmt::Display for ResetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResetMode::Soft => "soft",
            ResetMode::Hard => "hard",
        })
    }
}

/// Shape of the pseudo-derivative used in place of `dH/du`. Every variant
/// integrates to one over the real line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surrogate {
    /// `1/a` on `|x| <= a/2`, zero elsewhere.
    Rectangular,
    /// Tent of half-width `a` and height `1/a`.
    Triangular,
    /// Derivative of a logistic with slope `4/a`, peak `1/a`.
    Sigmoid,
}

impl Surrogate {
    /// Derivative at offset `x = u - v_th` for window width `width`.
    #[inline]
    pub fn eval(self, x: f64, width: f64) -> f64 {
        match self {
            Surrogate::Rectangular => {
                if x.abs() <= 0.5 * width {
                    1.0 / width
                } else {
                    0.0
                }
            }
            Surrogate::Triangular => ((1.0 - x.abs() / width) / width).max(0.0),
            Surrogate::Sigmoid => {
                let k = 4.0 / width;
                let s = sigmoid(k * x);
                k * s * (1.0 - s)
            }
        }
    }
}

impl FromStr for Surrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectangular" => Ok(Surrogate::Rectangular),
            "triangular" => Ok(Surrogate::Triangular),
            "sigmoid" => Ok(Surrogate::Sigmoid),
            _ => Err(Error::Config(format!(
                "unknown surrogate '{s}' (rectangular|triangular|sigmoid)"
            ))),
        }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Surrogate::Rectangular => "rectangular",
            Surrogate::Triangular => "triangular",
            Surrogate::Sigmoid => "sigmoid",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronParams {
    pub tau: f64,
    pub v_th: f64,
    pub v_r: f64,
    pub reset: ResetMode,
    pub surrogate: Surrogate,
    pub surrogate_width: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams {
            tau: 0.9,
            v_th: 1.0,
            v_r: 0.0,
            reset: ResetMode::Soft,
            surrogate: Surrogate::Rectangular,
            surrogate_width: 1.0,
        }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidParam(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        // v_th may be +inf to disable firing; v_r must stay finite.
        if self.v_th.is_nan() || !self.v_r.is_finite() || self.v_th <= self.v_r {
            return Err(Error::InvalidParam(format!(
                "need v_th > v_r, got v_th={} v_r={}",
                self.v_th, self.v_r
            )));
        }
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "surrogate width must be positive, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }

    /// Surrogate derivative of the firing function at pre-reset potential `u`.
    #[inline]
    pub fn surrogate_at(&self, u: f64) -> f64 {
        self.surrogate.eval(u - self.v_th, self.surrogate_width)
    }

    #[inline]
    pub(crate) fn fire(&self, u: f64) -> f64 {
        if u - self.v_th >= 0.0 {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub(crate) fn reset(&self, u: f64, s: f64) -> f64 {
        match self.reset {
            // s == 0 keeps u untouched even for an infinite threshold
            ResetMode::Soft if s == 0.0 => u,
            ResetMode::Soft => u - s * self.v_th,
            ResetMode::Hard => (1.0 - s) * u + s * self.v_r,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Membrane potentials after reset and the spikes emitted in the same step.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState {
    pub u: Tensor,
    pub s: Tensor,
}

impl LifState {
    pub fn zeros(shape: &[usize]) -> Self {
        LifState {
            u: Tensor::zeros(shape),
            s: Tensor::zeros(shape),
        }
    }
}

/// Result of one neuron step with the pre-reset potential kept for the
/// backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LifStep {
    pub state: LifState,
    pub u_pre: Tensor,
}

/// `1.0` where `v >= 0`, else `0.0`.
pub fn heaviside(v: &Tensor) -> Tensor {
    let data = v.data().iter().map(|&x| if x >= 0.0 { 1.0 } else { 0.0 }).collect();
    Tensor::from_parts(v.shape().to_vec(), data)
}

pub fn surrogate_grad(u: &Tensor, params: &NeuronParams) -> Tensor {
    let data = u.data().iter().map(|&x| params.surrogate_at(x)).collect();
    Tensor::from_parts(u.shape().to_vec(), data)
}

fn check_step_inputs(state: &LifState, psp: &Tensor, params: &NeuronParams) -> Result<()> {
    params.validate()?;
    if psp.shape() != state.u.shape() {
        return Err(Error::shape("lif_step", state.u.shape(), psp.shape()));
    }
    if !psp.all_finite() {
        return Err(Error::NonFinite { op: "lif_step" });
    }
    Ok(())
}

pub fn lif_step(state: &LifState, psp: &Tensor, params: &NeuronParams) -> Result<LifState> {
    lif_step_traced(state, psp, params).map(|step| step.state)
}

pub fn lif_step_traced(state: &LifState, psp: &Tensor, params: &NeuronParams) -> Result<LifStep> {
    check_step_inputs(state, psp, params)?;
    let n = psp.len();
    let mut u_pre = Vec::with_capacity(n);
    let mut u_post = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for (&u, &z) in state.u.data().iter().zip(psp.data()) {
        let v = params.tau * u + z;
        let fired = params.fire(v);
        u_pre.push(v);
        s.push(fired);
        u_post.push(params.reset(v, fired));
    }
    let shape = psp.shape().to_vec();
    Ok(LifStep {
        state: LifState {
            u: Tensor::from_parts(shape.clone(), u_post).finite("lif_step")?,
            s: Tensor::from_parts(shape.clone(), s),
        },
        u_pre: Tensor::from_parts(shape, u_pre).finite("lif_step")?,
    })
}

/// Same recurrence as [`lif_step`] with the step function replaced by
/// `sigmoid(beta * (u - v_th))`; spikes become real-valued and the reset
/// uses them as weights. Only used to check gradients against finite
/// differences.
pub fn lif_step_smooth(state: &LifState, psp: &Tensor, params: &NeuronParams, beta: f64) -> Result<LifStep> {
    check_step_inputs(state, psp, params)?;
    if beta.is_nan() || beta <= 0.0 {
        return Err(Error::InvalidParam(format!("beta must be positive, got {beta}")));
    }
    let n = psp.len();
    let mut u_pre = Vec::with_capacity(n);
    let mut u_post = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for (&u, &z) in state.u.data().iter().zip(psp.data()) {
        let v = params.tau * u + z;
        let fired = sigmoid(beta * (v - params.v_th));
        u_pre.push(v);
        s.push(fired);
        u_post.push(params.reset(v, fired));
    }
    let shape = psp.shape().to_vec();
    Ok(LifStep {
        state: LifState {
            u: Tensor::from_parts(shape.clone(), u_post).finite("lif_step_smooth")?,
            s: Tensor::from_parts(shape.clone(), s),
        },
        u_pre: Tensor::from_parts(shape, u_pre).finite("lif_step_smooth")?,
    })
}
