//! Model checkpoints: a short text header describing the topology followed
//! by the weight and bias tensors in layer order.
//!
//! ```text
//! spikegrad-checkpoint 1
//! input 1x16x16
//! decoding potential
//! timesteps 4
//! normalization mean=0.13 std=0.31
//! layer conv:8:4:2:1 tau=0.9 v_th=1 v_r=0 reset=soft surrogate=rectangular width=1
//! layer readout:10 leak=1
//! end
//! <weight₀><bias₀><weight₁><bias₁>...
//! ```

use std::path::Path;

use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::layers::{format_shape, parse_shape, Decoding, LayerKind, LayerSpec, Model, SpikingLayer};
use crate::neuron::NeuronParams;
use crate::tensor::{ConvGeometry, Tensor};

const MAGIC: &str = "spikegrad-checkpoint 1";
const MAX_HEADER: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Timesteps the model was trained with.
    pub timesteps: usize,
    /// Input normalization applied during training.
    pub normalization: Option<Normalization>,
}

fn layer_spec(layer: &SpikingLayer) -> Result<LayerSpec> {
    Ok(match layer.kind {
        LayerKind::Dense => LayerSpec::Dense {
            units: layer.out_len(),
            residual: layer.residual,
        },
        LayerKind::Readout { .. } => LayerSpec::Readout {
            classes: layer.out_len(),
        },
        LayerKind::Conv2d(g) => {
            if g.kernel_h != g.kernel_w {
                return Err(Error::InvalidParam("checkpoints store square kernels only".into()));
            }
            LayerSpec::Conv {
                channels: g.out_channels,
                kernel: g.kernel_h,
                stride: g.stride,
                pad: g.pad,
                residual: layer.residual,
            }
        }
    })
}

fn floats(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut head = format!(
            "{MAGIC}\ninput {}\ndecoding {}\ntimesteps {}\n",
            format_shape(&self.model.input_shape),
            self.model.decoding,
            self.timesteps
        );
        match &self.normalization {
            Some(n) => head += &format!("normalization mean={} std={}\n", floats(&n.mean), floats(&n.std)),
            None => head += "normalization none\n",
        }
        for layer in &self.model.layers {
            head += &format!("layer {}", layer_spec(layer)?);
            match (layer.kind, &layer.neuron) {
                (LayerKind::Readout { leak }, _) => head += &format!(" leak={leak}"),
                (_, Some(p)) => {
                    head += &format!(
                        " tau={} v_th={} v_r={} reset={} surrogate={} width={}",
                        p.tau, p.v_th, p.v_r, p.reset, p.surrogate, p.surrogate_width
                    )
                }
                (_, None) => return Err(Error::InvalidParam("spiking layer without neuron parameters".into())),
            }
            head.push('\n');
        }
        head += "end\n";
        let mut out = head.into_bytes();
        for layer in &self.model.layers {
            layer.weight.write_bytes(&mut out);
            layer.bias.write_bytes(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |reason: String| Error::parse("checkpoint", reason);
        let end = find_header_end(bytes).ok_or_else(|| bad("missing 'end' line".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint (bad magic line)".into()));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing '{name}' line")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(format!("expected '{name}', got '{line}'")))
        };
        let input_shape = parse_shape(&field("input")?)?;
        let decoding: Decoding = field("decoding")?.parse()?;
        let timesteps: usize = field("timesteps")?
            .parse()
            .map_err(|_| bad("bad timesteps".into()))?;
        let normalization = parse_normalization(&field("normalization")?)?;
        let mut layer_lines: Vec<&str> = lines.collect();
        layer_lines.pop(); // the terminating "end"
        if layer_lines.is_empty() {
            return Err(bad("no layers".into()));
        }

        let mut payload = &bytes[end..];
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(layer_lines.len());
        for line in layer_lines {
            let rest = line.strip_prefix("layer ").ok_or_else(|| bad(format!("unexpected line '{line}'")))?;
            let mut tokens = rest.split(' ');
            let spec: LayerSpec = tokens.next().unwrap_or("").parse()?;
            let kv: Vec<(&str, &str)> = tokens
                .map(|t| t.split_once('=').ok_or_else(|| bad(format!("bad token '{t}'"))))
                .collect::<Result<_>>()?;
            let get = |k: &str| -> Result<&str> {
                kv.iter()
                    .find(|(key, _)| *key == k)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| bad(format!("layer '{line}' lacks {k}")))
            };
            let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("bad value for {k}"))) };
            let in_len: usize = shape.iter().product();
            let (kind, out_shape, residual) = match spec {
                LayerSpec::Dense { units, residual } => (LayerKind::Dense, vec![units], residual),
                LayerSpec::Readout { classes } => (LayerKind::Readout { leak: num("leak")? }, vec![classes], false),
                LayerSpec::Conv {
                    channels,
                    kernel,
                    stride,
                    pad,
                    residual,
                } => {
                    if shape.len() != 3 {
                        return Err(bad("conv layer needs a C×H×W input".into()));
                    }
                    let g = ConvGeometry::square(shape[0], channels, kernel, stride, pad);
                    g.validate()?;
                    let (oh, ow) = g.output_hw(shape[1], shape[2])?;
                    (LayerKind::Conv2d(g), vec![channels, oh, ow], residual)
                }
            };
            let neuron = match kind {
                LayerKind::Readout { .. } => None,
                _ => Some(NeuronParams {
                    tau: num("tau")?,
                    v_th: num("v_th")?,
                    v_r: num("v_r")?,
                    reset: get("reset")?.parse()?,
                    surrogate: get("surrogate")?.parse()?,
                    surrogate_width: num("width")?,
                }),
            };
            let (weight, used) = Tensor::from_bytes(payload)?;
            payload = &payload[used..];
            let (bias, used) = Tensor::from_bytes(payload)?;
            payload = &payload[used..];
            let expect_w: Vec<usize> = match kind {
                LayerKind::Conv2d(g) => g.kernel_shape().to_vec(),
                _ => vec![out_shape[0], in_len],
            };
            if weight.shape() != expect_w.as_slice() {
                return Err(Error::shape("checkpoint weight", &expect_w, weight.shape()));
            }
            if bias.shape() != [out_shape[0]] {
                return Err(Error::shape("checkpoint bias", &[out_shape[0]], bias.shape()));
            }
            layers.push(SpikingLayer {
                kind,
                weight,
                bias,
                neuron,
                in_shape: shape.clone(),
                out_shape: out_shape.clone(),
                residual,
            });
            shape = out_shape;
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes", payload.len())));
        }
        let model = Model {
            input_shape,
            layers,
            decoding,
        };
        model.validate()?;
        if let Some(n) = &normalization {
            n.validate()?;
        }
        Ok(Checkpoint {
            model,
            timesteps,
            normalization,
        })
    }

    /// Writes to a temporary file beside `path` and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

/// Offset just past the `end\n` line.
fn find_header_end(bytes: &[u8]) -> Option<usize> {
    let mut start = 0;
    let limit = bytes.len().min(MAX_HEADER);
    while start < limit {
        let nl = bytes[start..limit].iter().position(|&b| b == b'\n')? + start;
        if &bytes[start..nl] == b"end" {
            return Some(nl + 1);
        }
        start = nl + 1;
    }
    None
}

fn parse_normalization(s: &str) -> Result<Option<Normalization>> {
    if s == "none" {
        return Ok(None);
    }
    let bad = || Error::parse("checkpoint", format!("bad normalization '{s}'"));
    let (m, sd) = s.split_once(' ').ok_or_else(bad)?;
    let list = |v: &str, key: &str| -> Result<Vec<f64>> {
        v.strip_prefix(key)
            .ok_or_else(bad)?
            .split(',')
            .map(|x| x.parse::<f64>().map_err(|_| bad()))
            .collect()
    };
    Ok(Some(Normalization {
        mean: list(m, "mean=")?,
        std: list(sd, "std=")?,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{parse_layer_list, ModelSpec};
    use crate::neuron::ResetMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let spec = ModelSpec {
            input_shape: vec![1, 6, 6],
            layers: parse_layer_list("conv:2:3:1:1,dense:5,readout:3").unwrap(),
            decoding: Decoding::Potential,
            readout_leak: 0.95,
        };
        let neuron = NeuronParams {
            reset: ResetMode::Hard,
            v_r: -0.25,
            ..NeuronParams::default()
        };
        let model = Model::build(&spec, &neuron, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        Checkpoint {
            model,
            timesteps: 6,
            normalization: Some(Normalization {
                mean: vec![0.5],
                std: vec![0.25],
            }),
        }
    }

    #[test]
    fn round_trip_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn round_trip_without_normalization() {
        let mut c = sample();
        c.normalization = None;
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap(), c);
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn header_mismatch_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        let pos = bytes.windows(12).position(|w| w == b"conv:2:3:1:1").unwrap();
        bytes[pos + 5] = b'3';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        assert!(Checkpoint::from_bytes(b"spikegrad-checkpoint 2\nend\n").is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
        assert!(!path.with_extension("tmp").exists());
    }
}
