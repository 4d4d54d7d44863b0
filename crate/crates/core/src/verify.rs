//! Self-check suite: every kernel and training step compared against a
//! slow, independent reference at fixed seeds.
//!
//! The references in [`oracle`] are written as plain index loops straight
//! from the defining formulas and share no code with the optimized kernels.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{self, LabeledDataset, Sample, SyntheticKind};
use crate::error::{Error, Result};
use crate::gradscale::{lr_at_epoch, scale_gradient, sgd_step, GradScaleConfig, OptimizerState};
use crate::layers::{parse_layer_list, Decoding, FiringMode, LayerKind, Model, ModelSpec, SpikingLayer};
use crate::neuron::{NeuronParams, ResetMode, Surrogate};
use crate::tensor::{self, ConvGeometry, Tensor};
use crate::trace::{self, RelationMode, RelationTensor, DEFAULT_TRACE_DECAY};
use crate::train::{self, DataConfig, DataSource, TrainConfig, Trainer};

/// Reference implementations.
pub mod oracle {
    use super::*;

    /// `W·x + b` for `W` of shape `[n_out, n_in]`.
    pub fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
        let n_in = x.len();
        let mut out = vec![0.0; b.len()];
        for j in 0..b.len() {
            let mut acc = b[j];
            for i in 0..n_in {
                acc += w[j * n_in + i] * x[i];
            }
            out[j] = acc;
        }
        out
    }

    fn padded(x: &[f64], c: usize, h: usize, w: usize, ci: usize, y: isize, xx: isize) -> f64 {
        if y < 0 || xx < 0 || y as usize >= h || xx as usize >= w {
            return 0.0;
        }
        debug_assert!(ci < c);
        x[(ci * h + y as usize) * w + xx as usize]
    }

    /// Output spatial size, or `None` when the kernel does not tile the
    /// padded input exactly.
    pub fn out_size(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
        let span = n + 2 * p;
        (span >= k && (span - k).is_multiple_of(s)).then(|| (span - k) / s + 1)
    }

    /// Cross-correlation of a `[c, h, w]` input with a `[o, c, kh, kw]`
    /// kernel.
    pub fn conv2d(input: &[f64], dims: [usize; 3], kernel: &[f64], kdims: [usize; 4], bias: &[f64], s: usize, p: usize) -> Vec<f64> {
        let [c, h, w] = dims;
        let [o, _, kh, kw] = kdims;
        let oh = out_size(h, kh, s, p).expect("geometry");
        let ow = out_size(w, kw, s, p).expect("geometry");
        let mut out = vec![0.0; o * oh * ow];
        for co in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * s + ky) as isize - p as isize;
                                let x = (ox * s + kx) as isize - p as isize;
                                acc += kernel[((co * c + ci) * kh + ky) * kw + kx] * padded(input, c, h, w, ci, y, x);
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    /// Gradient of `Σ grad·conv2d(input)` with respect to the input.
    pub fn conv2d_input_grad(grad: &[f64], kernel: &[f64], kdims: [usize; 4], dims: [usize; 3], s: usize, p: usize) -> Vec<f64> {
        let [c, h, w] = dims;
        let [o, _, kh, kw] = kdims;
        let oh = out_size(h, kh, s, p).expect("geometry");
        let ow = out_size(w, kw, s, p).expect("geometry");
        let mut out = vec![0.0; c * h * w];
        for co in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * s + ky) as isize - p as isize;
                                let x = (ox * s + kx) as isize - p as isize;
                                if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                                    continue;
                                }
                                out[(ci * h + y as usize) * w + x as usize] +=
                                    grad[(co * oh + oy) * ow + ox] * kernel[((co * c + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// `R[o,c,ky,kx] = Σ_{y,x} out_map[o,y,x]·input[c, y·s−p+ky, x·s−p+kx]`.
    pub fn conv2d_weight_corr(input: &[f64], dims: [usize; 3], out_map: &[f64], kdims: [usize; 4], s: usize, p: usize) -> Vec<f64> {
        let [c, h, w] = dims;
        let [o, _, kh, kw] = kdims;
        let oh = out_size(h, kh, s, p).expect("geometry");
        let ow = out_size(w, kw, s, p).expect("geometry");
        let mut out = vec![0.0; o * c * kh * kw];
        for co in 0..o {
            for ci in 0..c {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let y = (oy * s + ky) as isize - p as isize;
                                let x = (ox * s + kx) as isize - p as isize;
                                acc += out_map[(co * oh + oy) * ow + ox] * padded(input, c, h, w, ci, y, x);
                            }
                        }
                        out[((co * c + ci) * kh + ky) * kw + kx] = acc;
                    }
                }
            }
        }
        out
    }

    pub fn outer(post: &[f64], pre: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(post.len() * pre.len());
        for &a in post {
            for &b in pre {
                out.push(a * b);
            }
        }
        out
    }

    /// `x(t) = Σ_{k=1..t} decay^(t−k)·s(k)` for a train `s(1..t)`.
    pub fn trace_closed_form(train: &[f64], decay: f64) -> f64 {
        let t = train.len();
        train
            .iter()
            .enumerate()
            .map(|(k, &s)| decay.powi((t - 1 - k) as i32) * s)
            .sum()
    }

    /// Midpoint rule over `[lo, hi]` with `n` cells.
    pub fn quadrature(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let dx = (hi - lo) / n as f64;
        (0..n).map(|i| f(lo + (i as f64 + 0.5) * dx)).sum::<f64>() * dx
    }

    /// `|a − n| / max(|a|, |n|, floor)`.
    pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
    }

    /// Softmax cross-entropy, computed directly.
    pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        -(logits[label] - m - z.ln())
    }

    /// Loss of `model` on one sample presented for `steps` timesteps.
    pub fn loss(model: &Model, x: &Tensor, label: usize, steps: usize, mode: FiringMode) -> Result<f64> {
        let fwd = model.forward(&vec![x.clone(); steps], mode)?;
        Ok(cross_entropy(fwd.logits.data(), label))
    }

    fn param(m: &mut Model, l: usize, which: usize, i: usize) -> &mut f64 {
        let layer = &mut m.layers[l];
        if which == 0 {
            &mut layer.weight.data_mut()[i]
        } else {
            &mut layer.bias.data_mut()[i]
        }
    }

    /// Central finite differences of [`loss`] for every weight and bias,
    /// in layer order, weights before biases.
    pub fn numeric_gradients(model: &Model, x: &Tensor, label: usize, steps: usize, mode: FiringMode, h: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(model.param_count());
        let mut m = model.clone();
        for l in 0..model.layers.len() {
            for which in 0..2 {
                let n = if which == 0 { model.layers[l].weight.len() } else { model.layers[l].bias.len() };
                for i in 0..n {
                    let orig = *param(&mut m, l, which, i);
                    *param(&mut m, l, which, i) = orig + h;
                    let plus = loss(&m, x, label, steps, mode)?;
                    *param(&mut m, l, which, i) = orig - h;
                    let minus = loss(&m, x, label, steps, mode)?;
                    *param(&mut m, l, which, i) = orig;
                    out.push((plus - minus) / (2.0 * h));
                }
            }
        }
        Ok(out)
    }

    /// Heaviside-mode forward pass of a model of dense and readout layers,
    /// unrolled one neuron at a time. Returns per-layer spike counts and the
    /// logits.
    pub fn simulate_dense(model: &Model, x: &[f64], steps: usize) -> Result<(Vec<u64>, Vec<f64>)> {
        let n = model.layers.len();
        let mut u: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.out_len()]).collect();
        let mut counts = vec![0u64; n];
        let mut rate = vec![0.0; model.n_classes()];
        for _ in 0..steps {
            let mut input = x.to_vec();
            for (l, layer) in model.layers.iter().enumerate() {
                if layer.residual || matches!(layer.kind, LayerKind::Conv2d(_)) {
                    return Err(Error::InvalidParam("simulate_dense handles plain dense layers only".into()));
                }
                let n_in = input.len();
                let mut out = vec![0.0; layer.out_len()];
                for j in 0..layer.out_len() {
                    let mut psp = layer.bias.data()[j];
                    for (i, &x) in input.iter().enumerate() {
                        psp += layer.weight.data()[j * n_in + i] * x;
                    }
                    match (layer.kind, layer.neuron) {
                        (LayerKind::Readout { leak }, _) => u[l][j] = leak * u[l][j] + psp,
                        (_, Some(p)) => {
                            let v = p.tau * u[l][j] + psp;
                            let fired = v >= p.v_th;
                            u[l][j] = match (fired, p.reset) {
                                (false, _) => v,
                                (true, ResetMode::Soft) => v - p.v_th,
                                (true, ResetMode::Hard) => p.v_r,
                            };
                            if fired {
                                out[j] = 1.0;
                                counts[l] += 1;
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                input = out;
            }
            for (r, s) in rate.iter_mut().zip(&input) {
                *r += s;
            }
        }
        let logits = match model.decoding {
            Decoding::Potential => u[n - 1].iter().map(|v| v / steps as f64).collect(),
            Decoding::SpikeRate => rate.iter().map(|r| r / steps as f64).collect(),
        };
        Ok((counts, logits))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub millis: u128,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Replaces the neuron's surrogate width in every check that uses
    /// neuron parameters.
    pub surrogate_width: Option<f64>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0x5eed,
            surrogate_width: None,
        }
    }
}

struct Ctx {
    seed: u64,
    neuron: NeuronParams,
}

impl Ctx {
    fn rng(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

type CheckFn = fn(&Ctx) -> Result<(bool, String)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("affine", check_affine),
    ("conv2d", check_conv2d),
    ("conv2d_input_grad", check_conv2d_input_grad),
    ("conv2d_weight_corr", check_conv2d_weight_corr),
    ("outer", check_outer),
    ("surrogate_integral", check_surrogate_integral),
    ("rectangular_window", check_rectangular_window),
    ("smooth_grad_dense_soft", check_grad_dense_soft),
    ("smooth_grad_dense_hard", check_grad_dense_hard),
    ("smooth_grad_conv_soft", check_grad_conv_soft),
    ("smooth_grad_conv_hard", check_grad_conv_hard),
    ("smooth_grad_rate", check_grad_rate),
    ("hand_simulation", check_hand_simulation),
    ("trace_closed_form", check_trace_closed_form),
    ("relation_dense", check_relation_dense),
    ("relation_conv", check_relation_conv),
    ("relation_batch_mean", check_relation_batch_mean),
    ("cross_entropy_grad", check_cross_entropy),
    ("momentum_recurrence", check_momentum),
    ("lr_schedule", check_lr_schedule),
    ("sign_preservation", check_sign_preservation),
    ("baseline_equivalence", check_baseline_equivalence),
    ("idx_fixture", check_idx_fixture),
    ("cifar_fixture", check_cifar_fixture),
    ("blobs_linear_readout", check_blobs_linear),
    ("overfit_one_sample", check_overfit_one),
    ("eval_hand_model", check_eval_hand_model),
    ("repetition_aggregate", check_repetitions),
];

/// Names of all checks, in run order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

pub fn run_all(opts: &VerifyOptions) -> Vec<Check> {
    run_selected(opts, |_| true)
}

/// Runs the checks whose name satisfies `filter`.
pub fn run_selected(opts: &VerifyOptions, filter: impl Fn(&str) -> bool) -> Vec<Check> {
    let mut neuron = NeuronParams::default();
    if let Some(w) = opts.surrogate_width {
        neuron.surrogate_width = w;
    }
    let ctx = Ctx { seed: opts.seed, neuron };
    CHECKS
        .iter()
        .filter(|(name, _)| filter(name))
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = match f(&ctx) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            Check {
                name,
                passed,
                detail,
                millis: start.elapsed().as_millis(),
            }
        })
        .collect()
}

pub fn format_table(checks: &[Check]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for c in checks {
        let _ = writeln!(
            out,
            "{:<width$}  {}  {:>6} ms  {}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.millis,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(out, "{} checks, {failed} failed", checks.len());
    out
}

fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn binary(rng: &mut impl Rng, n: usize, p: f64) -> Vec<f64> {
    (0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn within(err: f64, tol: f64) -> (bool, String) {
    (err <= tol, format!("max error {err:.3e} (tol {tol:.0e})"))
}

/// A random convolution whose kernel tiles the padded input exactly.
pub fn random_conv_case(rng: &mut impl Rng) -> (ConvGeometry, usize, usize) {
    loop {
        let k = rng.random_range(1..=4);
        let s = rng.random_range(1..=3);
        let p = rng.random_range(0..k);
        let oh = rng.random_range(1..=5);
        let ow = rng.random_range(1..=5);
        let h = ((oh - 1) * s + k) as isize - 2 * p as isize;
        let w = ((ow - 1) * s + k) as isize - 2 * p as isize;
        if h >= 1 && w >= 1 {
            let g = ConvGeometry::square(rng.random_range(1..=3), rng.random_range(1..=3), k, s, p);
            return (g, h as usize, w as usize);
        }
    }
}

fn check_affine(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(1);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let (n_out, n_in) = if case == 0 { (4, 3) } else { (rng.random_range(1..9), rng.random_range(1..9)) };
        let x = uniform(&mut rng, n_in, -1.0, 1.0);
        let w = uniform(&mut rng, n_out * n_in, -1.0, 1.0);
        let b = uniform(&mut rng, n_out, -1.0, 1.0);
        let got = tensor::affine(
            &Tensor::vector(x.clone())?,
            &Tensor::new(vec![n_out, n_in], w.clone())?,
            &Tensor::vector(b.clone())?,
        )?;
        worst = worst.max(max_abs_diff(got.data(), &oracle::affine(&x, &w, &b)));
    }
    Ok(within(worst, 1e-12))
}

fn check_conv2d(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(2);
    let mut worst: f64 = 0.0;
    for case in 0..30 {
        let (g, h, w) = if case == 0 { (ConvGeometry::square(2, 3, 3, 1, 1), 5, 5) } else { random_conv_case(&mut rng) };
        let dims = [g.in_channels, h, w];
        let x = uniform(&mut rng, dims.iter().product(), -1.0, 1.0);
        let k = uniform(&mut rng, g.kernel_shape().iter().product(), -1.0, 1.0);
        let b = uniform(&mut rng, g.out_channels, -1.0, 1.0);
        let got = tensor::conv2d(
            &Tensor::new(dims.to_vec(), x.clone())?,
            &Tensor::new(g.kernel_shape().to_vec(), k.clone())?,
            &Tensor::vector(b.clone())?,
            g.stride,
            g.pad,
        )?;
        let want = oracle::conv2d(&x, dims, &k, g.kernel_shape(), &b, g.stride, g.pad);
        worst = worst.max(max_abs_diff(got.data(), &want));
    }
    Ok(within(worst, 1e-12))
}

fn check_conv2d_input_grad(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(3);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let (g, h, w) = random_conv_case(&mut rng);
        let (oh, ow) = g.output_hw(h, w)?;
        let grad = uniform(&mut rng, g.out_channels * oh * ow, -1.0, 1.0);
        let k = uniform(&mut rng, g.kernel_shape().iter().product(), -1.0, 1.0);
        let got = tensor::conv2d_input_grad(
            &Tensor::new(vec![g.out_channels, oh, ow], grad.clone())?,
            &Tensor::new(g.kernel_shape().to_vec(), k.clone())?,
            &g,
            h,
            w,
        )?;
        let want = oracle::conv2d_input_grad(&grad, &k, g.kernel_shape(), [g.in_channels, h, w], g.stride, g.pad);
        worst = worst.max(max_abs_diff(got.data(), &want));
    }
    Ok(within(worst, 1e-12))
}

fn check_conv2d_weight_corr(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..30 {
        let (g, h, w) = random_conv_case(&mut rng);
        let (oh, ow) = g.output_hw(h, w)?;
        let dims = [g.in_channels, h, w];
        let x = uniform(&mut rng, dims.iter().product(), -1.0, 1.0);
        let m = uniform(&mut rng, g.out_channels * oh * ow, -1.0, 1.0);
        let got = tensor::conv2d_weight_corr(
            &Tensor::new(dims.to_vec(), x.clone())?,
            &Tensor::new(vec![g.out_channels, oh, ow], m.clone())?,
            &g,
        )?;
        let want = oracle::conv2d_weight_corr(&x, dims, &m, g.kernel_shape(), g.stride, g.pad);
        worst = worst.max(max_abs_diff(got.data(), &want));
    }
    Ok(within(worst, 1e-12))
}

fn check_outer(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(5);
    let a = uniform(&mut rng, 5, -2.0, 2.0);
    let b = uniform(&mut rng, 7, -2.0, 2.0);
    let got = tensor::outer(&Tensor::vector(a.clone())?, &Tensor::vector(b.clone())?)?;
    let exact = got.data() == oracle::outer(&a, &b).as_slice();
    Ok((exact, format!("5x7 {}", if exact { "exact" } else { "differs" })))
}

fn check_surrogate_integral(_: &Ctx) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for s in [Surrogate::Rectangular, Surrogate::Triangular, Surrogate::Sigmoid] {
        for a in [0.25, 0.5, 1.0, 2.0] {
            let area = oracle::quadrature(|x| s.eval(x, a), -10.0 * a, 10.0 * a, 200_000);
            worst = worst.max((area - 1.0).abs());
        }
    }
    Ok(within(worst, 1e-3))
}

/// With the default width the rectangular surrogate is 1 on
/// `|u − v_th| ≤ 0.5` and 0 outside.
fn check_rectangular_window(ctx: &Ctx) -> Result<(bool, String)> {
    let p = NeuronParams {
        surrogate: Surrogate::Rectangular,
        ..ctx.neuron
    };
    let inside = [0.0, 0.49, -0.49, 0.5, -0.5];
    let outside = [0.51, -0.51, 2.0, -2.0];
    let bad_in: Vec<f64> = inside.iter().copied().filter(|d| p.surrogate_at(p.v_th + d) != 1.0).collect();
    let bad_out: Vec<f64> = outside.iter().copied().filter(|d| p.surrogate_at(p.v_th + d) != 0.0).collect();
    let ok = bad_in.is_empty() && bad_out.is_empty();
    let detail = if ok {
        format!("width {}", p.surrogate_width)
    } else {
        format!("width {}: wrong value at offsets {:?}", p.surrogate_width, [bad_in, bad_out].concat())
    };
    Ok((ok, detail))
}

/// Max relative error between `model.backward` and central differences on
/// a smoothed forward pass, plus the parameter count.
pub fn smooth_gradient_error(model: &Model, x: &Tensor, label: usize, steps: usize, beta: f64) -> Result<(f64, usize)> {
    let mode = FiringMode::Smooth { beta };
    let fwd = model.forward(&vec![x.clone(); steps], mode)?;
    let (_, dlogits) = train::cross_entropy(&fwd.logits, label)?;
    let grads = model.backward(&fwd, &dlogits)?;
    let analytic: Vec<f64> = grads
        .iter()
        .flat_map(|g| g.weight.data().iter().chain(g.bias.data()).copied())
        .collect();
    let numeric = oracle::numeric_gradients(model, x, label, steps, mode, 1e-5)?;
    let err = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| oracle::relative_error(a, n, 1e-6))
        .fold(0.0, f64::max);
    Ok((err, analytic.len()))
}

fn grad_check(ctx: &Ctx, salt: u64, input: &[usize], layers: &str, decoding: Decoding, reset: ResetMode) -> Result<(bool, String)> {
    let mut rng = ctx.rng(salt);
    let spec = ModelSpec {
        input_shape: input.to_vec(),
        layers: parse_layer_list(layers)?,
        decoding,
        readout_leak: 0.9,
    };
    let neuron = NeuronParams {
        reset,
        v_r: if reset == ResetMode::Hard { -0.2 } else { 0.0 },
        ..ctx.neuron
    };
    let mut model = Model::build(&spec, &neuron, 1.0, &mut rng)?;
    for layer in &mut model.layers {
        for b in layer.bias.data_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    let x = Tensor::new(input.to_vec(), uniform(&mut rng, input.iter().product(), 0.0, 1.0))?;
    let label = rng.random_range(0..model.n_classes());
    let (err, params) = smooth_gradient_error(&model, &x, label, 4, 10.0)?;
    let (ok, detail) = within(err, 1e-4);
    Ok((ok && params <= 50, format!("{params} params, {detail}")))
}

fn check_grad_dense_soft(ctx: &Ctx) -> Result<(bool, String)> {
    grad_check(ctx, 6, &[4], "dense:5,readout:3", Decoding::Potential, ResetMode::Soft)
}

fn check_grad_dense_hard(ctx: &Ctx) -> Result<(bool, String)> {
    grad_check(ctx, 7, &[4], "dense:5,readout:3", Decoding::Potential, ResetMode::Hard)
}

fn check_grad_conv_soft(ctx: &Ctx) -> Result<(bool, String)> {
    grad_check(ctx, 8, &[1, 4, 4], "conv:2:3:1:0,readout:3", Decoding::Potential, ResetMode::Soft)
}

fn check_grad_conv_hard(ctx: &Ctx) -> Result<(bool, String)> {
    grad_check(ctx, 9, &[1, 4, 4], "conv:2:3:1:0,readout:3", Decoding::Potential, ResetMode::Hard)
}

fn check_grad_rate(ctx: &Ctx) -> Result<(bool, String)> {
    grad_check(ctx, 10, &[4], "dense:4,dense:3", Decoding::SpikeRate, ResetMode::Soft)
}

fn check_hand_simulation(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(11);
    let mut mismatches = 0;
    for reset in [ResetMode::Soft, ResetMode::Hard] {
        for (layers, decoding) in [("dense:6,readout:3", Decoding::Potential), ("dense:6,dense:3", Decoding::SpikeRate)] {
            let spec = ModelSpec {
                input_shape: vec![5],
                layers: parse_layer_list(layers)?,
                decoding,
                readout_leak: 1.0,
            };
            let neuron = NeuronParams { reset, ..ctx.neuron };
            let model = Model::build(&spec, &neuron, 1.5, &mut rng)?;
            for _ in 0..10 {
                let x = uniform(&mut rng, 5, 0.0, 1.0);
                let fwd = model.forward(&vec![Tensor::vector(x.clone())?; 4], FiringMode::Spike)?;
                let (counts, logits) = oracle::simulate_dense(&model, &x, 4)?;
                if fwd.spike_counts != counts || max_abs_diff(fwd.logits.data(), &logits) > 1e-12 {
                    mismatches += 1;
                }
            }
        }
    }
    Ok((mismatches == 0, format!("{mismatches} of 40 samples differ")))
}

fn check_trace_closed_form(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(12);
    let mut worst: f64 = 0.0;
    let fixed = [1.0, 0.0, 1.0, 0.0];
    for case in 0..1000 {
        let train = if case == 0 {
            fixed.to_vec()
        } else {
            let t = rng.random_range(1..=64);
            let p = rng.random_range(0.05..0.95);
            binary(&mut rng, t, p)
        };
        let mut x = Tensor::zeros(&[1]);
        for &s in &train {
            x = trace::trace_update(&x, &Tensor::full(&[1], s), DEFAULT_TRACE_DECAY)?;
        }
        worst = worst.max((x.data()[0] - oracle::trace_closed_form(&train, DEFAULT_TRACE_DECAY)).abs());
    }
    Ok(within(worst, 1e-12))
}

fn check_relation_dense(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(13);
    let mut exact = true;
    for _ in 0..50 {
        let (n_post, n_pre) = (rng.random_range(1..12), rng.random_range(1..12));
        let post = uniform(&mut rng, n_post, 0.0, 3.0);
        let pre = uniform(&mut rng, n_pre, 0.0, 3.0);
        let r = trace::relation_dense(&Tensor::vector(post.clone())?, &Tensor::vector(pre.clone())?)?;
        exact &= r.r.data() == oracle::outer(&post, &pre).as_slice();
    }
    Ok((exact, format!("50 shapes {}", if exact { "exact" } else { "differ" })))
}

fn check_relation_conv(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(14);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (g, h, w) = random_conv_case(&mut rng);
        let (oh, ow) = g.output_hw(h, w)?;
        let dims = [g.in_channels, h, w];
        let pre = uniform(&mut rng, dims.iter().product(), 0.0, 3.0);
        let post = uniform(&mut rng, g.out_channels * oh * ow, 0.0, 3.0);
        let r = trace::relation_conv(&Tensor::new(dims.to_vec(), pre.clone())?, &Tensor::new(vec![g.out_channels, oh, ow], post.clone())?, &g)?;
        worst = worst.max(max_abs_diff(r.r.data(), &oracle::conv2d_weight_corr(&pre, dims, &post, g.kernel_shape(), g.stride, g.pad)));
    }
    Ok(within(worst, 1e-12))
}

/// Relation of `layer` for one sample, rebuilt from the raw spike trains
/// with closed-form traces.
fn naive_layer_relation(layer: &SpikingLayer, inputs: &[Tensor], spikes: &[Tensor]) -> Vec<f64> {
    let trace_of = |seq: &[Tensor], i: usize| -> f64 {
        let train: Vec<f64> = seq.iter().map(|t| t.data()[i]).collect();
        oracle::trace_closed_form(&train, DEFAULT_TRACE_DECAY)
    };
    let pre: Vec<f64> = (0..layer.in_len()).map(|i| trace_of(inputs, i)).collect();
    let post: Vec<f64> = (0..layer.out_len()).map(|i| trace_of(spikes, i)).collect();
    match layer.kind {
        LayerKind::Conv2d(g) => {
            let dims = [layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]];
            oracle::conv2d_weight_corr(&pre, dims, &post, g.kernel_shape(), g.stride, g.pad)
        }
        _ => oracle::outer(&post, &pre),
    }
}

fn check_relation_batch_mean(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(15);
    let spec = ModelSpec {
        input_shape: vec![1, 6, 6],
        layers: parse_layer_list("conv:3:3:1:1,conv:4:2:2:0,dense:5,readout:2")?,
        decoding: Decoding::Potential,
        readout_leak: 1.0,
    };
    let model = Model::build(&spec, &ctx.neuron, 2.0, &mut rng)?;
    let mut batch = Vec::new();
    for _ in 0..2 {
        let x = Tensor::new(vec![1, 6, 6], uniform(&mut rng, 36, 0.0, 1.5))?;
        batch.push(model.forward(&vec![x; 5], FiringMode::Spike)?.caches);
    }
    let got = trace::collect_relations(&model, &batch, RelationMode::FinalStep, DEFAULT_TRACE_DECAY)?;
    let mut worst: f64 = 0.0;
    let mut layers_checked = 0;
    for (l, layer) in model.layers.iter().enumerate() {
        let want = trace::has_relation(&model, l);
        match (&got[l], want) {
            (Some(r), true) => {
                let a = naive_layer_relation(layer, &batch[0][l].inputs, &batch[0][l].spikes);
                let b = naive_layer_relation(layer, &batch[1][l].inputs, &batch[1][l].spikes);
                let mean: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
                worst = worst.max(max_abs_diff(r.r.data(), &mean));
                layers_checked += 1;
            }
            (None, false) => {}
            _ => return Ok((false, format!("layer {l}: relation presence wrong"))),
        }
    }
    let (ok, detail) = within(worst, 1e-12);
    Ok((ok && layers_checked == 2, format!("{layers_checked} layers, {detail}")))
}

fn check_cross_entropy(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(16);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..12);
        let z = uniform(&mut rng, n, -5.0, 5.0);
        let label = rng.random_range(0..n);
        let (loss, grad) = train::cross_entropy(&Tensor::vector(z.clone())?, label)?;
        worst = worst.max((loss - oracle::cross_entropy(&z, label)).abs());
        for i in 0..n {
            let h = 1e-5;
            let mut zp = z.clone();
            zp[i] += h;
            let mut zm = z.clone();
            zm[i] -= h;
            let fd = (oracle::cross_entropy(&zp, label) - oracle::cross_entropy(&zm, label)) / (2.0 * h);
            worst = worst.max(oracle::relative_error(grad.data()[i], fd, 1e-6));
        }
    }
    Ok(within(worst, 1e-6))
}

fn check_momentum(_: &Ctx) -> Result<(bool, String)> {
    let state = OptimizerState {
        momentum: 0.9,
        ..OptimizerState::new(0.1)
    };
    let (w0, g) = (0.7, -0.3);
    let mut v = None;
    let w1 = sgd_step(&Tensor::vector(vec![w0])?, &Tensor::vector(vec![g])?, &state, &mut v)?;
    let w2 = sgd_step(&w1, &Tensor::vector(vec![g])?, &state, &mut v)?;
    // v1 = g, w1 = w0 - 0.1 v1; v2 = 0.9 v1 + g, w2 = w1 - 0.1 v2
    let hand = (w0 - 0.1 * g) - 0.1 * (0.9 * g + g);
    Ok(within((w2.data()[0] - hand).abs(), 1e-15))
}

fn check_lr_schedule(_: &Ctx) -> Result<(bool, String)> {
    let s = OptimizerState::new(0.1);
    let cases = [(0, 0.1), (99, 0.1), (100, 0.01), (199, 0.01), (200, 0.001), (250, 0.001)];
    let worst = cases
        .iter()
        .map(|&(e, want)| (lr_at_epoch(&s, e) - want).abs() / want)
        .fold(0.0, f64::max);
    Ok(within(worst, 1e-12))
}

fn check_sign_preservation(ctx: &Ctx) -> Result<(bool, String)> {
    let mut rng = ctx.rng(17);
    let mut flips = 0;
    for i in 0..10_000 {
        let g: f64 = rng.random_range(-10.0..10.0) * 10f64.powi(rng.random_range(-6..3));
        let r: f64 = if i % 10 == 0 { 0.0 } else { rng.random_range(0.0..20.0) };
        let alpha = if i % 7 == 0 { 1.0 } else { rng.random_range(0.0..=1.0) };
        let out = scale_gradient(&Tensor::vector(vec![g])?, &RelationTensor { r: Tensor::vector(vec![r])? }, alpha)?;
        let o = out.data()[0];
        // Full gating by a zero relation removes the gradient entirely.
        let ok = if alpha == 1.0 && r == 0.0 { o == 0.0 } else { g == 0.0 || o.signum() == g.signum() };
        flips += usize::from(!ok);
    }
    Ok((flips == 0, format!("{flips} sign flips in 10000 triples")))
}

fn blobs_config(seed: u64, epochs: usize, layers: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig {
        epochs,
        batch_size: 16,
        seed,
        workers: 0,
        ..TrainConfig::default()
    };
    cfg.model = ModelSpec {
        input_shape: vec![2],
        layers: parse_layer_list(layers)?,
        decoding: Decoding::Potential,
        readout_leak: 1.0,
    };
    cfg.data = DataConfig {
        source: DataSource::Synthetic {
            kind: SyntheticKind::blobs(),
            n_train: 256,
            n_test: 128,
            seed,
        },
        normalization: None,
        classes: None,
    };
    Ok(cfg)
}

fn check_baseline_equivalence(ctx: &Ctx) -> Result<(bool, String)> {
    let base = blobs_config(ctx.seed, 2, "dense:16,dense:16,readout:4")?;
    let (tr, te) = base.data.load()?;
    let off = train::run_single(&base, base.seed, &tr, &te, &mut |_| Ok(()))?;
    let zero = TrainConfig {
        gradscale: GradScaleConfig {
            enabled: true,
            alpha: 0.0,
            ..base.gradscale
        },
        ..base.clone()
    };
    let on = train::run_single(&zero, zero.seed, &tr, &te, &mut |_| Ok(()))?;
    let same = off.model == on.model && off.epochs == on.epochs;
    Ok((same, if same { "bit-identical".into() } else { "trajectories differ".into() }))
}

fn check_idx_fixture(_: &Ctx) -> Result<(bool, String)> {
    let mut images = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend_from_slice(&[0, 255, 128, 1]);
    let labels = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 1, 7];
    let ds = data::parse_idx(&images, &labels)?;
    let s = &ds.samples[0];
    let ok = ds.len() == 1
        && s.label == 7
        && s.x.shape() == [1, 2, 2]
        && s.x.data() == [0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0];
    Ok((ok, "2x2 image, label 7".into()))
}

fn check_cifar_fixture(_: &Ctx) -> Result<(bool, String)> {
    let mut rec = vec![3u8];
    rec.extend((0..3072).map(|i| (i % 256) as u8));
    let ds = data::parse_cifar(&rec, data::CifarVariant::Cifar10)?;
    let s = &ds.samples[0];
    let ok = s.label == 3
        && s.x.shape() == [3, 32, 32]
        && s.x.data().iter().enumerate().all(|(i, &v)| v == (i % 256) as f64 / 255.0);
    Ok((ok, "single CIFAR-10 record".into()))
}

fn check_blobs_linear(ctx: &Ctx) -> Result<(bool, String)> {
    let mut cfg = blobs_config(ctx.seed, 30, "readout:4")?;
    cfg.data.source = DataSource::Synthetic {
        kind: SyntheticKind::Blobs {
            classes: 4,
            dim: 2,
            spread: 0.02,
        },
        n_train: 200,
        n_test: 40,
        seed: ctx.seed,
    };
    cfg.data.normalization = Some(data::Normalization {
        mean: vec![0.5],
        std: vec![0.25],
    });
    cfg.optim = OptimizerState::new(0.5);
    let (tr, te) = cfg.data.load()?;
    let rec = train::run_single(&cfg, cfg.seed, &tr, &te, &mut |_| Ok(()))?;
    let acc = train::evaluate(&rec.model, &tr, cfg.timesteps)?.accuracy;
    Ok((acc == 100.0, format!("train accuracy {acc}%")))
}

fn check_overfit_one(ctx: &Ctx) -> Result<(bool, String)> {
    let mut cfg = blobs_config(ctx.seed, 1, "dense:8,readout:2")?;
    cfg.batch_size = 1;
    cfg.optim = OptimizerState::new(0.1);
    let ds = LabeledDataset::new(
        vec![Sample {
            x: Tensor::vector(vec![0.9, 0.2])?,
            label: 1,
        }],
        2,
    )?;
    let mut trainer = Trainer::new(&cfg, ctx.seed)?;
    let mut losses = Vec::new();
    for _ in 0..500 {
        // Train loss is measured before each update, so record the loss
        // after the final epoch separately.
        losses.push(trainer.train_epoch(&ds)?.0);
    }
    let last = oracle::loss(&trainer.model, &ds.samples[0].x, 1, cfg.timesteps, FiringMode::Spike)?;
    losses.push(last);
    let monotone = losses.windows(2).all(|w| w[1] <= w[0]);
    Ok((monotone && last < 0.01, format!("final loss {last:.2e}, monotone {monotone}")))
}

fn check_eval_hand_model(_: &Ctx) -> Result<(bool, String)> {
    // Two identity-wired neurons, rate decoding, T = 4, tau 0.9, v_th 1:
    //   (1, 0)   -> neuron 0 fires every step        4 spikes, predicts 0
    //   (0, 1)   -> neuron 1 fires every step        4 spikes, predicts 1
    //   (0.5, 0) -> u = 0.5, 0.95, 1.355↑, 0.8195    1 spike,  predicts 0
    //   (0, 0.3) -> u = 0.3, 0.57, 0.813, 1.0317↑    1 spike,  predicts 1
    // Labels 0, 1, 0, 0 -> 3 of 4 correct, 10 spikes in total.
    let layer = SpikingLayer {
        kind: LayerKind::Dense,
        weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0])?,
        bias: Tensor::zeros(&[2]),
        neuron: Some(NeuronParams::default()),
        in_shape: vec![2],
        out_shape: vec![2],
        residual: false,
    };
    let model = Model {
        input_shape: vec![2],
        layers: vec![layer],
        decoding: Decoding::SpikeRate,
    };
    let samples = [([1.0, 0.0], 0), ([0.0, 1.0], 1), ([0.5, 0.0], 0), ([0.0, 0.3], 0)]
        .iter()
        .map(|(x, label)| {
            Ok(Sample {
                x: Tensor::vector(x.to_vec())?,
                label: *label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = train::evaluate(&model, &LabeledDataset::new(samples, 2)?, 4)?;
    let ok = report.accuracy == 75.0 && report.mean_spikes == 2.5 && report.layer_spikes == [2.5];
    Ok((ok, format!("accuracy {}%, mean spikes {}", report.accuracy, report.mean_spikes)))
}

fn check_repetitions(ctx: &Ctx) -> Result<(bool, String)> {
    let cfg = TrainConfig {
        repetitions: 4,
        ..blobs_config(ctx.seed, 2, "dense:8,readout:4")?
    };
    let (tr, te) = cfg.data.load()?;
    let mut finals = [(0.0, 0.0); 4];
    let (summary, _) = train::run_repetitions(&cfg, &tr, &te, &mut |rep, m| {
        finals[rep] = (m.test_accuracy, m.total_spikes);
        Ok(())
    })?;
    let mean_acc = finals.iter().map(|f| f.0).sum::<f64>() / 4.0;
    let max_acc = finals.iter().map(|f| f.0).fold(f64::MIN, f64::max);
    let mean_spk = finals.iter().map(|f| f.1).sum::<f64>() / 4.0;
    let max_spk = finals.iter().map(|f| f.1).fold(f64::MIN, f64::max);
    let err = [
        summary.accuracy_mean - mean_acc,
        summary.accuracy_max - max_acc,
        summary.spikes_mean - mean_spk,
        summary.spikes_max - max_spk,
    ]
    .iter()
    .map(|d| d.abs())
    .fold(0.0, f64::max);
    let seeds_distinct = {
        let mut s: Vec<u64> = summary.runs.iter().map(|r| r.seed).collect();
        s.dedup();
        s.len() == 4
    };
    let (ok, detail) = within(err, 1e-12);
    Ok((ok && seeds_distinct, detail))
}
