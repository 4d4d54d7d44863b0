//! Spiking dense/convolutional layers, the non-firing readout, and the
//! per-sample forward and backward passes over `T` timesteps.
//!
//! The backward pass is spatio-temporal backpropagation written out by
//! hand: time runs in reverse, and within each timestep layers run from the
//! top down. Every spiking layer carries `dL/du` from step `t+1` back to
//! step `t` through the leak, and the reset is part of the graph with the
//! surrogate standing in for the firing derivative.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::neuron::{sigmoid, LifState, LifStep, NeuronParams, ResetMode};
use crate::tensor::{self, ConvDims, ConvGeometry, Tensor};

/// How the network's output is read into class scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoding {
    /// Final layer is a non-firing integrator; logits are its potential at
    /// the last step divided by `T`.
    Potential,
    /// Final layer is a spiking dense layer; logits are its firing rates.
    SpikeRate,
}

impl FromStr for Decoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "potential" => Ok(Decoding::Potential),
            "rate" => Ok(Decoding::SpikeRate),
            _ => Err(Error::Config(format!("unknown decoding '{s}' (potential|rate)"))),
        }
    }
}

impl fmt::Display for Decoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decoding::Potential => "potential",
            Decoding::SpikeRate => "rate",
        })
    }
}

/// Firing function used by a forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FiringMode {
    /// Heaviside firing; the backward pass uses the neuron's surrogate.
    Spike,
    /// `sigmoid(beta * (u - v_th))`; differentiable end to end, for
    /// gradient checking.
    Smooth { beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Dense {
        units: usize,
        residual: bool,
    },
    Conv {
        channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        residual: bool,
    },
    Readout {
        classes: usize,
    },
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// `dense:UNITS[:res]`, `conv:CHANNELS:KERNEL:STRIDE:PAD[:res]` or
    /// `readout:CLASSES`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad layer spec '{s}'"));
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let num = |i: usize| -> Result<usize> { parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let residual = |i: usize| -> Result<bool> {
            match parts.get(i) {
                None => Ok(false),
                Some(&"res") if parts.len() == i + 1 => Ok(true),
                _ => Err(bad()),
            }
        };
        match parts[0] {
            "dense" => Ok(LayerSpec::Dense {
                units: num(1)?,
                residual: residual(2)?,
            }),
            "conv" => Ok(LayerSpec::Conv {
                channels: num(1)?,
                kernel: num(2)?,
                stride: num(3)?,
                pad: num(4)?,
                residual: residual(5)?,
            }),
            "readout" if parts.len() == 2 => Ok(LayerSpec::Readout { classes: num(1)? }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let res = |r: bool| if r { ":res" } else { "" };
        match *self {
            LayerSpec::Dense { units, residual } => write!(f, "dense:{units}{}", res(residual)),
            LayerSpec::Conv {
                channels,
                kernel,
                stride,
                pad,
                residual,
            } => write!(f, "conv:{channels}:{kernel}:{stride}:{pad}{}", res(residual)),
            LayerSpec::Readout { classes } => write!(f, "readout:{classes}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub decoding: Decoding,
    pub readout_leak: f64,
}

pub fn parse_layer_list(s: &str) -> Result<Vec<LayerSpec>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

pub fn format_layer_list(layers: &[LayerSpec]) -> String {
    layers.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    let shape: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad shape '{s}' (expected e.g. 1x16x16)")))?;
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Config(format!("bad shape '{s}'")));
    }
    Ok(shape)
}

pub fn format_shape(shape: &[usize]) -> String {
    shape.iter().map(ToString::to_string).collect::<Vec<_>>().join("x")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerKind {
    Dense,
    Conv2d(ConvGeometry),
    /// Pure integrator `u' = leak·u + psp`, never fires.
    Readout { leak: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpikingLayer {
    pub kind: LayerKind,
    pub weight: Tensor,
    pub bias: Tensor,
    /// `None` exactly for readout layers.
    pub neuron: Option<NeuronParams>,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Adds the layer's input to its PSP (identity shortcut).
    pub residual: bool,
}

/// Spikes, potentials and inputs of one layer at every timestep of a
/// forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardCache {
    pub inputs: Vec<Tensor>,
    /// Potentials before reset (for the readout, the integrated potential).
    pub u_pre: Vec<Tensor>,
    /// Emitted spikes; all zeros for the readout.
    pub spikes: Vec<Tensor>,
}

impl ForwardCache {
    fn with_capacity(t: usize) -> Self {
        ForwardCache {
            inputs: Vec::with_capacity(t),
            u_pre: Vec::with_capacity(t),
            spikes: Vec::with_capacity(t),
        }
    }

    pub fn timesteps(&self) -> usize {
        self.inputs.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub caches: Vec<ForwardCache>,
    /// Spikes emitted per layer over all timesteps (readout counts zero).
    pub spike_counts: Vec<u64>,
    pub mode: FiringMode,
}

impl ForwardOutput {
    pub fn total_spikes(&self) -> u64 {
        self.spike_counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerGrad {
    pub fn zeros_like(layer: &SpikingLayer) -> Self {
        LayerGrad {
            weight: Tensor::zeros(layer.weight.shape()),
            bias: Tensor::zeros(layer.bias.shape()),
        }
    }
}

impl SpikingLayer {
    pub fn is_spiking(&self) -> bool {
        self.neuron.is_some()
    }

    pub fn in_len(&self) -> usize {
        self.in_shape.iter().product()
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        match self.kind {
            LayerKind::Conv2d(g) => Some(g),
            _ => None,
        }
    }

    fn conv_dims(&self) -> Option<ConvDims> {
        self.conv_geometry()
            .map(|g| ConvDims::new(g, self.in_shape[1], self.in_shape[2]).expect("geometry validated at build"))
    }

    /// Checks weight/bias/geometry consistency.
    pub fn validate(&self) -> Result<()> {
        let (w_shape, b_len) = match self.kind {
            LayerKind::Dense | LayerKind::Readout { .. } => (vec![self.out_len(), self.in_len()], self.out_len()),
            LayerKind::Conv2d(g) => {
                if self.in_shape.len() != 3 || self.in_shape[0] != g.in_channels {
                    return Err(Error::shape("conv layer", &[g.in_channels, 0, 0], &self.in_shape));
                }
                let (oh, ow) = g.output_hw(self.in_shape[1], self.in_shape[2])?;
                if self.out_shape != [g.out_channels, oh, ow] {
                    return Err(Error::shape("conv layer", &[g.out_channels, oh, ow], &self.out_shape));
                }
                (g.kernel_shape().to_vec(), g.out_channels)
            }
        };
        if self.weight.shape() != w_shape.as_slice() {
            return Err(Error::shape("layer weight", &w_shape, self.weight.shape()));
        }
        if self.bias.shape() != [b_len] {
            return Err(Error::shape("layer bias", &[b_len], self.bias.shape()));
        }
        match (self.kind, &self.neuron) {
            (LayerKind::Readout { .. }, Some(_)) => {
                return Err(Error::InvalidParam("readout layers do not fire".into()))
            }
            (LayerKind::Readout { leak }, None) if !(leak > 0.0 && leak <= 1.0) => {
                return Err(Error::InvalidParam(format!("readout leak must lie in (0, 1], got {leak}")))
            }
            (LayerKind::Readout { .. }, None) => {}
            (_, None) => return Err(Error::InvalidParam("spiking layer without neuron parameters".into())),
            (_, Some(p)) => p.validate()?,
        }
        if self.residual && self.in_len() != self.out_len() {
            return Err(Error::shape("residual layer", &self.in_shape, &self.out_shape));
        }
        Ok(())
    }

    /// Post-synaptic potential for one timestep's input.
    pub fn psp(&self, input: &Tensor) -> Result<Tensor> {
        if input.len() != self.in_len() {
            return Err(Error::shape("layer input", &self.in_shape, input.shape()));
        }
        let mut out = vec![0.0; self.out_len()];
        match self.kind {
            LayerKind::Dense | LayerKind::Readout { .. } => {
                out.copy_from_slice(self.bias.data());
                tensor::affine_acc(input.data(), self.weight.data(), self.in_len(), &mut out);
            }
            LayerKind::Conv2d(g) => {
                let d = self.conv_dims().unwrap();
                let plane = d.oh * d.ow;
                for (o, &b) in self.bias.data().iter().enumerate().take(g.out_channels) {
                    out[o * plane..(o + 1) * plane].fill(b);
                }
                tensor::conv2d_acc(input.data(), self.weight.data(), &d, &mut out);
            }
        }
        if self.residual {
            for (o, &x) in out.iter_mut().zip(input.data()) {
                *o += x;
            }
        }
        Tensor::from_parts(self.out_shape.clone(), out).finite("layer psp")
    }

    /// One timestep: PSP from `input`, then the neuron update on `state`.
    /// Readout layers integrate without firing.
    pub fn forward_step(&self, input: &Tensor, state: &LifState, mode: FiringMode) -> Result<LifStep> {
        let psp = self.psp(input)?;
        if state.u.len() != psp.len() {
            return Err(Error::shape("layer state", &self.out_shape, state.u.shape()));
        }
        match (self.kind, self.neuron) {
            (LayerKind::Readout { leak }, _) => {
                let u: Vec<f64> = state.u.data().iter().zip(psp.data()).map(|(&u, &z)| leak * u + z).collect();
                let u = Tensor::from_parts(self.out_shape.clone(), u).finite("readout")?;
                Ok(LifStep {
                    state: LifState {
                        u: u.clone(),
                        s: Tensor::zeros(&self.out_shape),
                    },
                    u_pre: u,
                })
            }
            (_, Some(params)) => {
                let n = psp.len();
                let (mut u_pre, mut u_post, mut s) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
                for (&u, &z) in state.u.data().iter().zip(psp.data()) {
                    let v = params.tau * u + z;
                    let fired = match mode {
                        FiringMode::Spike => params.fire(v),
                        FiringMode::Smooth { beta } => sigmoid(beta * (v - params.v_th)),
                    };
                    u_pre.push(v);
                    s.push(fired);
                    u_post.push(params.reset(v, fired));
                }
                Ok(LifStep {
                    state: LifState {
                        u: Tensor::from_parts(self.out_shape.clone(), u_post).finite("layer step")?,
                        s: Tensor::from_parts(self.out_shape.clone(), s),
                    },
                    u_pre: Tensor::from_parts(self.out_shape.clone(), u_pre).finite("layer step")?,
                })
            }
            (_, None) => Err(Error::InvalidParam("spiking layer without neuron parameters".into())),
        }
    }

    /// Accumulates weight/bias gradients for one timestep and returns the
    /// gradient with respect to the layer input when `want_input` is set.
    fn backward_step(&self, dpsp: &[f64], input: &[f64], grad: &mut LayerGrad, want_input: bool) -> Option<Vec<f64>> {
        let mut din = want_input.then(|| vec![0.0; self.in_len()]);
        match self.kind {
            LayerKind::Dense | LayerKind::Readout { .. } => {
                tensor::outer_acc(dpsp, input, grad.weight.data_mut());
                for (b, &g) in grad.bias.data_mut().iter_mut().zip(dpsp) {
                    *b += g;
                }
                if let Some(din) = din.as_mut() {
                    tensor::affine_input_grad_acc(dpsp, self.weight.data(), self.in_len(), din);
                }
            }
            LayerKind::Conv2d(_) => {
                let d = self.conv_dims().unwrap();
                tensor::conv2d_weight_corr_acc(input, dpsp, &d, grad.weight.data_mut());
                let plane = d.oh * d.ow;
                for (o, b) in grad.bias.data_mut().iter_mut().enumerate() {
                    *b += dpsp[o * plane..(o + 1) * plane].iter().sum::<f64>();
                }
                if let Some(din) = din.as_mut() {
                    tensor::conv2d_input_grad_acc(dpsp, self.weight.data(), &d, din);
                }
            }
        }
        if self.residual {
            if let Some(din) = din.as_mut() {
                for (x, &g) in din.iter_mut().zip(dpsp) {
                    *x += g;
                }
            }
        }
        din
    }
}

/// A feed-forward stack of layers applied at every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub input_shape: Vec<usize>,
    pub layers: Vec<SpikingLayer>,
    pub decoding: Decoding,
}

impl Model {
    /// Builds a model with fan-in-scaled normal weights
    /// (`std = gain·sqrt(2/fan_in)`) and zero biases.
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, neuron: &NeuronParams, gain: f64, rng: &mut R) -> Result<Model> {
        if spec.layers.is_empty() {
            return Err(Error::Config("model has no layers".into()));
        }
        if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
            return Err(Error::Config(format!("bad input shape {:?}", spec.input_shape)));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Config(format!("init gain must be positive, got {gain}")));
        }
        neuron.validate()?;
        let mut shape = spec.input_shape.clone();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for ls in &spec.layers {
            let in_len: usize = shape.iter().product();
            let (kind, out_shape, fan_in, w_shape, residual) = match *ls {
                LayerSpec::Dense { units, residual } => {
                    (LayerKind::Dense, vec![units], in_len, vec![units, in_len], residual)
                }
                LayerSpec::Readout { classes } => (
                    LayerKind::Readout {
                        leak: spec.readout_leak,
                    },
                    vec![classes],
                    in_len,
                    vec![classes, in_len],
                    false,
                ),
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    pad,
                    residual,
                } => {
                    if shape.len() != 3 {
                        return Err(Error::Config(format!(
                            "conv layer needs a C×H×W input, got {}",
                            format_shape(&shape)
                        )));
                    }
                    let g = ConvGeometry::square(shape[0], channels, kernel, stride, pad);
                    g.validate()?;
                    let (oh, ow) = g.output_hw(shape[1], shape[2])?;
                    (
                        LayerKind::Conv2d(g),
                        vec![channels, oh, ow],
                        shape[0] * kernel * kernel,
                        g.kernel_shape().to_vec(),
                        residual,
                    )
                }
            };
            if out_shape.contains(&0) {
                return Err(Error::Config(format!("layer '{ls}' has an empty output")));
            }
            let std = gain * (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParam(e.to_string()))?;
            let n: usize = w_shape.iter().product();
            let weight = Tensor::from_parts(w_shape, (0..n).map(|_| normal.sample(rng)).collect());
            let bias = Tensor::zeros(&[*out_shape.first().unwrap()]);
            let layer = SpikingLayer {
                kind,
                weight,
                bias,
                neuron: match kind {
                    LayerKind::Readout { .. } => None,
                    _ => Some(*neuron),
                },
                in_shape: shape.clone(),
                out_shape: out_shape.clone(),
                residual,
            };
            layers.push(layer);
            shape = out_shape;
        }
        let model = Model {
            input_shape: spec.input_shape.clone(),
            layers,
            decoding: spec.decoding,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return Err(Error::Config("model has no layers".into()));
        };
        let mut shape: &[usize] = &self.input_shape;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.validate()?;
            if layer.in_len() != shape.iter().product::<usize>() {
                return Err(Error::shape("layer chain", shape, &layer.in_shape));
            }
            if matches!(layer.kind, LayerKind::Conv2d(_)) && layer.in_shape != shape {
                return Err(Error::shape("layer chain", shape, &layer.in_shape));
            }
            if !layer.is_spiking() && i + 1 != self.layers.len() {
                return Err(Error::Config("a readout layer must be the last layer".into()));
            }
            shape = &layer.out_shape;
        }
        match self.decoding {
            Decoding::Potential if last.is_spiking() => {
                Err(Error::Config("potential decoding needs a readout as the last layer".into()))
            }
            Decoding::SpikeRate if !matches!(last.kind, LayerKind::Dense) => {
                Err(Error::Config("rate decoding needs a spiking dense layer last".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, SpikingLayer::out_len)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Runs every layer at each timestep of `encoded` (one input tensor per
    /// step), starting from zero potentials.
    pub fn forward(&self, encoded: &[Tensor], mode: FiringMode) -> Result<ForwardOutput> {
        let steps = encoded.len();
        if steps == 0 {
            return Err(Error::InvalidParam("need at least one timestep".into()));
        }
        let mut states: Vec<LifState> = self.layers.iter().map(|l| LifState::zeros(&l.out_shape)).collect();
        let mut caches: Vec<ForwardCache> = self.layers.iter().map(|_| ForwardCache::with_capacity(steps)).collect();
        let mut counts = vec![0u64; self.layers.len()];
        let mut rate = vec![0.0; self.n_classes()];
        for x in encoded {
            let mut input = x.clone();
            for (l, layer) in self.layers.iter().enumerate() {
                let step = layer.forward_step(&input, &states[l], mode)?;
                if layer.is_spiking() {
                    counts[l] += step.state.s.data().iter().filter(|&&s| s >= 0.5).count() as u64;
                }
                let cache = &mut caches[l];
                cache.inputs.push(input);
                cache.u_pre.push(step.u_pre);
                cache.spikes.push(step.state.s.clone());
                input = step.state.s.clone();
                states[l] = step.state;
            }
            if self.decoding == Decoding::SpikeRate {
                for (r, &s) in rate.iter_mut().zip(input.data()) {
                    *r += s;
                }
            }
        }
        let scale = 1.0 / steps as f64;
        let logits = match self.decoding {
            Decoding::Potential => states.last().unwrap().u.scale(scale)?,
            Decoding::SpikeRate => Tensor::from_parts(vec![rate.len()], rate.iter().map(|r| r * scale).collect()),
        };
        Ok(ForwardOutput {
            logits,
            caches,
            spike_counts: counts,
            mode,
        })
    }

    /// Gradients of a loss with respect to every weight and bias, summed
    /// over timesteps, given `dL/dlogits` and the caches of the forward pass
    /// that produced the logits.
    pub fn backward(&self, fwd: &ForwardOutput, dlogits: &Tensor) -> Result<Vec<LayerGrad>> {
        let caches = &fwd.caches;
        if caches.len() != self.layers.len() {
            return Err(Error::InvalidParam(format!(
                "cache has {} layers, model has {}",
                caches.len(),
                self.layers.len()
            )));
        }
        let steps = caches[0].timesteps();
        for (layer, cache) in self.layers.iter().zip(caches) {
            if cache.timesteps() != steps
                || cache.u_pre.len() != steps
                || cache.spikes.len() != steps
                || cache.inputs.iter().any(|x| x.len() != layer.in_len())
                || cache.u_pre.iter().any(|u| u.len() != layer.out_len())
            {
                return Err(Error::InvalidParam("forward cache does not match model".into()));
            }
        }
        if steps == 0 {
            return Err(Error::InvalidParam("empty forward cache".into()));
        }
        if dlogits.len() != self.n_classes() {
            return Err(Error::shape("backward", &[self.n_classes()], dlogits.shape()));
        }
        let scale = 1.0 / steps as f64;
        let top: Vec<f64> = dlogits.data().iter().map(|g| g * scale).collect();
        let n_layers = self.layers.len();
        let mut grads: Vec<LayerGrad> = self.layers.iter().map(LayerGrad::zeros_like).collect();
        // dL/du carried from step t+1: post-reset potential for spiking
        // layers, integrated potential for the readout.
        let mut carry: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.out_len()]).collect();

        for t in (0..steps).rev() {
            let mut from_above: Option<Vec<f64>> = None;
            for l in (0..n_layers).rev() {
                let layer = &self.layers[l];
                let cache = &caches[l];
                let dpsp: Vec<f64> = match (layer.kind, layer.neuron) {
                    (LayerKind::Readout { leak }, _) => {
                        let mut du = std::mem::take(&mut carry[l]);
                        if t + 1 == steps {
                            for (d, &g) in du.iter_mut().zip(&top) {
                                *d += g;
                            }
                        }
                        carry[l] = du.iter().map(|d| leak * d).collect();
                        du
                    }
                    (_, Some(p)) => {
                        let ds = match from_above.take() {
                            Some(g) => g,
                            None if l + 1 == n_layers => top.clone(),
                            None => vec![0.0; layer.out_len()],
                        };
                        let u_pre = cache.u_pre[t].data();
                        let spikes = cache.spikes[t].data();
                        let du_post = &carry[l];
                        let mut du_pre = vec![0.0; layer.out_len()];
                        for i in 0..du_pre.len() {
                            let sg = match fwd.mode {
                                FiringMode::Spike => p.surrogate_at(u_pre[i]),
                                FiringMode::Smooth { beta } => beta * spikes[i] * (1.0 - spikes[i]),
                            };
                            let s = spikes[i];
                            du_pre[i] = match p.reset {
                                ResetMode::Soft => ds[i] * sg + du_post[i] * (1.0 - p.v_th * sg),
                                ResetMode::Hard => {
                                    ds[i] * sg + du_post[i] * ((1.0 - s) + (p.v_r - u_pre[i]) * sg)
                                }
                            };
                        }
                        carry[l] = du_pre.iter().map(|d| p.tau * d).collect();
                        du_pre
                    }
                    (_, None) => unreachable!("validated: only readouts lack neuron parameters"),
                };
                from_above = layer.backward_step(&dpsp, cache.inputs[t].data(), &mut grads[l], l > 0);
            }
        }
        for g in &grads {
            if !g.weight.all_finite() || !g.bias.all_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(grads)
    }
}
