//! Exponential spike traces and the pre/post spike relation of each layer.
//!
//! A trace decays by a fixed factor per step and jumps by one on a spike:
//! `x(t) = decay·x(t−1) + s(t)`. The relation of a layer is the product of
//! its post- and pre-synaptic traces laid out in the layer's weight shape:
//! an outer product for dense layers, the kernel-shaped correlation for
//! convolutions.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{ForwardCache, LayerKind, Model};
use crate::tensor::{self, ConvDims, ConvGeometry, Tensor};

/// `e^{-1}`, one step of trace decay.
pub const DEFAULT_TRACE_DECAY: f64 = 0.367_879_441_171_442_33;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceState {
    pub x_pre: Tensor,
    pub x_post: Tensor,
    pub decay: f64,
}

impl TraceState {
    pub fn zeros(pre_shape: &[usize], post_shape: &[usize], decay: f64) -> Self {
        TraceState {
            x_pre: Tensor::zeros(pre_shape),
            x_post: Tensor::zeros(post_shape),
            decay,
        }
    }

    pub fn update(&mut self, pre_spikes: &Tensor, post_spikes: &Tensor) -> Result<()> {
        self.x_pre = trace_update(&self.x_pre, pre_spikes, self.decay)?;
        self.x_post = trace_update(&self.x_post, post_spikes, self.decay)?;
        Ok(())
    }
}

/// `x' = decay·x + s`.
pub fn trace_update(x: &Tensor, s: &Tensor, decay: f64) -> Result<Tensor> {
    if x.shape() != s.shape() {
        return Err(Error::shape("trace_update", x.shape(), s.shape()));
    }
    let data = x.data().iter().zip(s.data()).map(|(&x, &s)| decay * x + s).collect();
    Tensor::from_parts(x.shape().to_vec(), data).finite("trace_update")
}

/// Spike relation of one layer, shaped like its weight.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationTensor {
    pub r: Tensor,
}

impl RelationTensor {
    pub fn mean(&self) -> f64 {
        self.r.mean()
    }

    pub fn max(&self) -> f64 {
        if self.r.is_empty() {
            0.0
        } else {
            self.r.max()
        }
    }
}

pub fn relation_dense(x_post: &Tensor, x_pre: &Tensor) -> Result<RelationTensor> {
    Ok(RelationTensor {
        r: tensor::outer(x_post, x_pre)?,
    })
}

pub fn relation_conv(x_pre: &Tensor, x_post: &Tensor, geom: &ConvGeometry) -> Result<RelationTensor> {
    Ok(RelationTensor {
        r: tensor::conv2d_weight_corr(x_pre, x_post, geom)?,
    })
}

/// Which point of the forward pass the relation is read at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationMode {
    /// Traces after the last timestep.
    FinalStep,
    /// Sum of the relation over every timestep.
    Summed,
}

impl FromStr for RelationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final_step" => Ok(RelationMode::FinalStep),
            "summed" => Ok(RelationMode::Summed),
            _ => Err(Error::Config(format!("unknown relation mode '{s}' (final_step|summed)"))),
        }
    }
}

impl fmt::Display for RelationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationMode::FinalStep => "final_step",
            RelationMode::Summed => "summed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelationNorm {
    None,
    Max,
    Mean,
}

impl FromStr for RelationNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RelationNorm::None),
            "max" => Ok(RelationNorm::Max),
            "mean" => Ok(RelationNorm::Mean),
            _ => Err(Error::Config(format!("unknown relation norm '{s}' (none|max|mean)"))),
        }
    }
}

impl fmt::Display for RelationNorm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationNorm::None => "none",
            RelationNorm::Max => "max",
            RelationNorm::Mean => "mean",
        })
    }
}

/// Divides a relation by its max or mean. An all-zero relation is left as is.
pub fn normalize_relation(rel: &RelationTensor, norm: RelationNorm) -> Result<RelationTensor> {
    let denom = match norm {
        RelationNorm::None => return Ok(rel.clone()),
        RelationNorm::Max => rel.max(),
        RelationNorm::Mean => rel.mean(),
    };
    if denom <= 0.0 {
        return Ok(rel.clone());
    }
    Ok(RelationTensor {
        r: rel.r.scale(1.0 / denom)?,
    })
}

/// A layer has a relation when both sides of its synapses carry spikes:
/// it fires, and its input is the output of a spiking layer.
pub fn has_relation(model: &Model, layer: usize) -> bool {
    layer > 0 && model.layers[layer].is_spiking() && model.layers[layer - 1].is_spiking()
}

/// Relations of one sample, recomputed from the spikes cached by its
/// forward pass. Layers without spike traces on both sides get `None`.
pub fn sample_relations(
    model: &Model,
    caches: &[ForwardCache],
    mode: RelationMode,
    decay: f64,
) -> Result<Vec<Option<RelationTensor>>> {
    if caches.len() != model.layers.len() {
        return Err(Error::InvalidParam(format!(
            "cache has {} layers, model has {}",
            caches.len(),
            model.layers.len()
        )));
    }
    let mut out = Vec::with_capacity(caches.len());
    for (l, (layer, cache)) in model.layers.iter().zip(caches).enumerate() {
        if !has_relation(model, l) {
            out.push(None);
            continue;
        }
        if cache.spikes.len() != cache.inputs.len() || cache.inputs.is_empty() {
            return Err(Error::InvalidParam("forward cache is missing timesteps".into()));
        }
        let mut x_pre = vec![0.0; layer.in_len()];
        let mut x_post = vec![0.0; layer.out_len()];
        let mut r = vec![0.0; layer.weight.len()];
        let steps = cache.inputs.len();
        for t in 0..steps {
            let (pre, post) = (cache.inputs[t].data(), cache.spikes[t].data());
            if pre.len() != x_pre.len() || post.len() != x_post.len() {
                return Err(Error::InvalidParam("forward cache does not match model".into()));
            }
            for (x, &s) in x_pre.iter_mut().zip(pre) {
                *x = decay * *x + s;
            }
            for (x, &s) in x_post.iter_mut().zip(post) {
                *x = decay * *x + s;
            }
            if mode == RelationMode::Summed || t + 1 == steps {
                accumulate_relation(layer.kind, &layer.in_shape, &x_pre, &x_post, &mut r);
            }
        }
        let r = Tensor::from_parts(layer.weight.shape().to_vec(), r).finite("relation")?;
        out.push(Some(RelationTensor { r }));
    }
    Ok(out)
}

fn accumulate_relation(kind: LayerKind, in_shape: &[usize], x_pre: &[f64], x_post: &[f64], r: &mut [f64]) {
    match kind {
        LayerKind::Conv2d(g) => {
            let d = ConvDims::new(g, in_shape[1], in_shape[2]).expect("validated geometry");
            tensor::conv2d_weight_corr_acc(x_pre, x_post, &d, r);
        }
        _ => tensor::outer_acc(x_post, x_pre, r),
    }
}

/// Adds `rels` into `acc` layer by layer.
pub fn accumulate_relations(acc: &mut Vec<Option<Tensor>>, rels: &[Option<RelationTensor>]) {
    if acc.is_empty() {
        acc.extend(rels.iter().map(|r| r.as_ref().map(|r| Tensor::zeros(r.r.shape()))));
    }
    for (a, r) in acc.iter_mut().zip(rels) {
        if let (Some(a), Some(r)) = (a.as_mut(), r.as_ref()) {
            for (x, &v) in a.data_mut().iter_mut().zip(r.r.data()) {
                *x += v;
            }
        }
    }
}

/// Per-layer relation averaged over a batch of samples, summed in sample
/// order.
pub fn collect_relations(
    model: &Model,
    batch: &[Vec<ForwardCache>],
    mode: RelationMode,
    decay: f64,
) -> Result<Vec<Option<RelationTensor>>> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = Vec::new();
    for caches in batch {
        accumulate_relations(&mut acc, &sample_relations(model, caches, mode, decay)?);
    }
    finish_mean(acc, batch.len())
}

pub(crate) fn finish_mean(acc: Vec<Option<Tensor>>, n: usize) -> Result<Vec<Option<RelationTensor>>> {
    let k = 1.0 / n as f64;
    acc.into_iter()
        .map(|a| a.map(|t| t.scale(k).map(|r| RelationTensor { r })).transpose())
        .collect()
}
