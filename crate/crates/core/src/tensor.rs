//! Dense row-major `f64` tensors and the numeric kernels the network is
//! built from: affine maps, 2-D cross-correlation and its two adjoints,
//! outer and Hadamard products.
//!
//! Every public operation checks its output for NaN/Inf and reports
//! [`Error::NonFinite`] instead of handing back a poisoned tensor.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} [{} elements]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = numel(&shape).ok_or_else(|| Error::InvalidParam("tensor too large".into()))?;
        if n != data.len() {
            return Err(Error::shape("Tensor::new", &shape, &[data.len()]));
        }
        Tensor { shape, data }.finite("Tensor::new")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(value.is_finite());
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the flat buffer. Callers are responsible for
    /// keeping the values finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != Some(self.data.len()) {
            return Err(Error::shape("reshape", shape, &self.shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
        .finite("map")
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Result<Self> {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &v) in self.data.iter().enumerate() {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn finite(self, op: &'static str) -> Result<Self> {
        if self.all_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
        .finite(op)
    }

    /// Little-endian encoding: `u32` rank, `u32` per dimension, then the
    /// `f64` payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.shape.len() + 8 * self.data.len());
        self.write_bytes(&mut out);
        out
    }

    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decodes one tensor from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut pos = 0usize;
        let rank = read_u32_le(bytes, &mut pos)? as usize;
        // Each dimension needs four bytes, so a rank larger than the input is
        // necessarily truncated.
        if rank > bytes.len().saturating_sub(pos) / 4 {
            return Err(Error::parse("tensor", format!("rank {rank} exceeds input")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32_le(bytes, &mut pos)? as usize);
        }
        let n = numel(&shape).ok_or_else(|| Error::parse("tensor", "element count overflows"))?;
        let payload = n
            .checked_mul(8)
            .ok_or_else(|| Error::parse("tensor", "payload size overflows"))?;
        if bytes.len() - pos < payload {
            return Err(Error::parse(
                "tensor",
                format!("payload truncated: need {payload} bytes, have {}", bytes.len() - pos),
            ));
        }
        let data: Vec<f64> = bytes[pos..pos + payload]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += payload;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::parse("tensor", "non-finite value in payload"));
        }
        Ok((Tensor { shape, data }, pos))
    }
}

fn numel(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

fn read_u32_le(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let end = *pos + 4;
    let chunk = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::parse("tensor", "unexpected end of input"))?;
    *pos = end;
    Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
}

/// Geometry of a 2-D convolution: channel counts, kernel size, stride and
/// symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
        }
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    /// Output spatial size for an `h × w` input. The division must be exact.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            out_dim(h, self.kernel_h, self.stride, self.pad)?,
            out_dim(w, self.kernel_w, self.stride, self.pad)?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Geometry {
                op: "conv2d",
                reason: "channel counts and kernel size must be positive".into(),
            });
        }
        if self.stride == 0 {
            return Err(Error::Geometry {
                op: "conv2d",
                reason: "stride must be positive".into(),
            });
        }
        Ok(())
    }
}

fn out_dim(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = n + 2 * pad;
    if stride == 0 || span < k {
        return Err(Error::Geometry {
            op: "conv2d",
            reason: format!("kernel {k} does not fit input {n} with pad {pad}"),
        });
    }
    if !(span - k).is_multiple_of(stride) {
        return Err(Error::Geometry {
            op: "conv2d",
            reason: format!("({n} + 2*{pad} - {k}) is not divisible by stride {stride}"),
        });
    }
    Ok((span - k) / stride + 1)
}

/// `out[j] = Σ_i weight[j,i]·input[i] + bias[j]`. The input is read as a
/// flat vector of length `n_in`, whatever its shape.
pub fn affine(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = matrix_dims("affine", weight)?;
    if input.len() != n_in {
        return Err(Error::shape("affine", &[n_in], input.shape()));
    }
    if bias.shape() != [n_out] {
        return Err(Error::shape("affine", &[n_out], bias.shape()));
    }
    let mut out = bias.data.clone();
    affine_acc(&input.data, &weight.data, n_in, &mut out);
    Tensor::from_parts(vec![n_out], out).finite("affine")
}

/// `out[i] = Σ_j weight[j,i]·grad[j]`, the adjoint of [`affine`] with respect
/// to its input.
pub fn affine_input_grad(grad: &Tensor, weight: &Tensor) -> Result<Tensor> {
    let (n_out, n_in) = matrix_dims("affine_input_grad", weight)?;
    if grad.len() != n_out {
        return Err(Error::shape("affine_input_grad", &[n_out], grad.shape()));
    }
    let mut out = vec![0.0; n_in];
    affine_input_grad_acc(&grad.data, &weight.data, n_in, &mut out);
    Tensor::from_parts(vec![n_in], out).finite("affine_input_grad")
}

fn matrix_dims(op: &'static str, weight: &Tensor) -> Result<(usize, usize)> {
    match *weight.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Geometry {
            op,
            reason: format!("weight must be a matrix, got shape {:?}", weight.shape()),
        }),
    }
}

pub(crate) fn affine_acc(input: &[f64], weight: &[f64], n_in: usize, out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weight[j * n_in..(j + 1) * n_in];
        *o += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
    }
}

pub(crate) fn affine_input_grad_acc(grad: &[f64], weight: &[f64], n_in: usize, out: &mut [f64]) {
    for (j, &g) in grad.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &weight[j * n_in..(j + 1) * n_in];
        for (o, w) in out.iter_mut().zip(row) {
            *o += g * w;
        }
    }
}

pub(crate) fn outer_acc(post: &[f64], pre: &[f64], out: &mut [f64]) {
    let n_in = pre.len();
    for (j, &a) in post.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &mut out[j * n_in..(j + 1) * n_in];
        for (o, &b) in row.iter_mut().zip(pre) {
            *o += a * b;
        }
    }
}

fn chw(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Geometry {
            op,
            reason: format!("expected a C×H×W tensor, got shape {:?}", t.shape()),
        }),
    }
}

/// Resolved sizes for one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub geom: ConvGeometry,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn new(geom: ConvGeometry, h: usize, w: usize) -> Result<Self> {
        geom.validate()?;
        let (oh, ow) = geom.output_hw(h, w)?;
        Ok(ConvDims { geom, h, w, oh, ow })
    }

    pub fn in_len(&self) -> usize {
        self.geom.in_channels * self.h * self.w
    }

    pub fn out_len(&self) -> usize {
        self.geom.out_channels * self.oh * self.ow
    }

    /// Output coordinate fed by input row/col `i` through kernel tap `p`,
    /// if there is one.
    #[inline]
    fn out_coord(&self, i: usize, p: usize, n_out: usize) -> Option<usize> {
        let t = i + self.geom.pad;
        if t < p {
            return None;
        }
        let t = t - p;
        if !t.is_multiple_of(self.geom.stride) {
            return None;
        }
        let o = t / self.geom.stride;
        (o < n_out).then_some(o)
    }

    /// Input coordinate read by output row/col `o` through kernel tap `p`,
    /// if it lies inside the unpadded input.
    #[inline]
    fn in_coord(&self, o: usize, p: usize, n_in: usize) -> Option<usize> {
        let t = o * self.geom.stride + p;
        if t < self.geom.pad {
            return None;
        }
        let i = t - self.geom.pad;
        (i < n_in).then_some(i)
    }
}

/// Forward correlation, scattered from non-zero inputs (spike maps are
/// sparse). Adds into `out`.
pub(crate) fn conv2d_acc(input: &[f64], kernel: &[f64], d: &ConvDims, out: &mut [f64]) {
    let g = &d.geom;
    let (kh, kw, cin) = (g.kernel_h, g.kernel_w, g.in_channels);
    let plane = d.oh * d.ow;
    let kstride = cin * kh * kw;
    for c in 0..cin {
        for iy in 0..d.h {
            for ix in 0..d.w {
                let v = input[(c * d.h + iy) * d.w + ix];
                if v == 0.0 {
                    continue;
                }
                for p in 0..kh {
                    let Some(y) = d.out_coord(iy, p, d.oh) else { continue };
                    for q in 0..kw {
                        let Some(x) = d.out_coord(ix, q, d.ow) else { continue };
                        let kbase = (c * kh + p) * kw + q;
                        let obase = y * d.ow + x;
                        for o in 0..g.out_channels {
                            out[o * plane + obase] += v * kernel[o * kstride + kbase];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of the forward correlation with respect to its input. Adds into
/// `out`, which has the input's layout.
pub(crate) fn conv2d_input_grad_acc(grad: &[f64], kernel: &[f64], d: &ConvDims, out: &mut [f64]) {
    let g = &d.geom;
    let (kh, kw, cin) = (g.kernel_h, g.kernel_w, g.in_channels);
    for o in 0..g.out_channels {
        for y in 0..d.oh {
            for x in 0..d.ow {
                let gv = grad[(o * d.oh + y) * d.ow + x];
                if gv == 0.0 {
                    continue;
                }
                for c in 0..cin {
                    for p in 0..kh {
                        let Some(iy) = d.in_coord(y, p, d.h) else { continue };
                        for q in 0..kw {
                            let Some(ix) = d.in_coord(x, q, d.w) else { continue };
                            out[(c * d.h + iy) * d.w + ix] += gv * kernel[((o * cin + c) * kh + p) * kw + q];
                        }
                    }
                }
            }
        }
    }
}

/// Correlates an input map with an output-shaped map into kernel shape.
/// Adds into `out`.
pub(crate) fn conv2d_weight_corr_acc(input: &[f64], out_map: &[f64], d: &ConvDims, out: &mut [f64]) {
    let g = &d.geom;
    let (kh, kw, cin) = (g.kernel_h, g.kernel_w, g.in_channels);
    for o in 0..g.out_channels {
        for y in 0..d.oh {
            for x in 0..d.ow {
                let gv = out_map[(o * d.oh + y) * d.ow + x];
                if gv == 0.0 {
                    continue;
                }
                for c in 0..cin {
                    for p in 0..kh {
                        let Some(iy) = d.in_coord(y, p, d.h) else { continue };
                        for q in 0..kw {
                            let Some(ix) = d.in_coord(x, q, d.w) else { continue };
                            out[((o * cin + c) * kh + p) * kw + q] += gv * input[(c * d.h + iy) * d.w + ix];
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims_for(op: &'static str, input: &Tensor, geom: &ConvGeometry) -> Result<ConvDims> {
    let (c, h, w) = chw(op, input)?;
    if c != geom.in_channels {
        return Err(Error::shape(op, &[geom.in_channels, h, w], input.shape()));
    }
    ConvDims::new(*geom, h, w)
}

/// 2-D cross-correlation with per-output-channel bias.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let geom = match *kernel.shape() {
        [o, c, kh, kw] => ConvGeometry {
            in_channels: c,
            out_channels: o,
            kernel_h: kh,
            kernel_w: kw,
            stride,
            pad,
        },
        _ => {
            return Err(Error::Geometry {
                op: "conv2d",
                reason: format!("kernel must be rank 4, got shape {:?}", kernel.shape()),
            })
        }
    };
    let d = conv_dims_for("conv2d", input, &geom)?;
    if bias.shape() != [geom.out_channels] {
        return Err(Error::shape("conv2d", &[geom.out_channels], bias.shape()));
    }
    let plane = d.oh * d.ow;
    let mut out = vec![0.0; d.out_len()];
    for (o, &b) in bias.data().iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(b);
    }
    conv2d_acc(input.data(), kernel.data(), &d, &mut out);
    Tensor::from_parts(vec![geom.out_channels, d.oh, d.ow], out).finite("conv2d")
}

/// Adjoint of [`conv2d`] with respect to the input.
pub fn conv2d_input_grad(grad: &Tensor, kernel: &Tensor, geom: &ConvGeometry, in_h: usize, in_w: usize) -> Result<Tensor> {
    if kernel.shape() != geom.kernel_shape() {
        return Err(Error::shape("conv2d_input_grad", &geom.kernel_shape(), kernel.shape()));
    }
    let d = ConvDims::new(*geom, in_h, in_w)?;
    if grad.shape() != [geom.out_channels, d.oh, d.ow] {
        return Err(Error::shape("conv2d_input_grad", &[geom.out_channels, d.oh, d.ow], grad.shape()));
    }
    let mut out = vec![0.0; d.in_len()];
    conv2d_input_grad_acc(grad.data(), kernel.data(), &d, &mut out);
    Tensor::from_parts(vec![geom.in_channels, in_h, in_w], out).finite("conv2d_input_grad")
}

/// `out[o,c,p,q] = Σ_{y,x} out_map[o,y,x] · input[c, y·stride−pad+p, x·stride−pad+q]`
/// with out-of-range input read as zero.
///
/// With `out_map` the upstream gradient this is the kernel gradient; with
/// spike traces on both sides it is the convolutional spike relation.
pub fn conv2d_weight_corr(input: &Tensor, out_map: &Tensor, geom: &ConvGeometry) -> Result<Tensor> {
    let d = conv_dims_for("conv2d_weight_corr", input, geom)?;
    if out_map.shape() != [geom.out_channels, d.oh, d.ow] {
        return Err(Error::shape(
            "conv2d_weight_corr",
            &[geom.out_channels, d.oh, d.ow],
            out_map.shape(),
        ));
    }
    let mut out = vec![0.0; geom.kernel_shape().iter().product()];
    conv2d_weight_corr_acc(input.data(), out_map.data(), &d, &mut out);
    Tensor::from_parts(geom.kernel_shape().to_vec(), out).finite("conv2d_weight_corr")
}

/// `out[j,i] = post[j]·pre[i]`.
pub fn outer(post: &Tensor, pre: &Tensor) -> Result<Tensor> {
    if post.rank() != 1 || pre.rank() != 1 {
        return Err(Error::Geometry {
            op: "outer",
            reason: format!("expected vectors, got {:?} and {:?}", post.shape(), pre.shape()),
        });
    }
    let mut out = vec![0.0; post.len() * pre.len()];
    for (j, &a) in post.data().iter().enumerate() {
        for (i, &b) in pre.data().iter().enumerate() {
            out[j * pre.len() + i] = a * b;
        }
    }
    Tensor::from_parts(vec![post.len(), pre.len()], out).finite("outer")
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.zip_with(b, "hadamard", |x, y| x * y)
}
