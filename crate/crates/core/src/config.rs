//! Plain-text run configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. A `[section]`
//! line prefixes the keys that follow it, so
//!
//! ```text
//! [optim]
//! lr = 0.1
//! ```
//!
//! is the same as `optim.lr = 0.1`. Unknown keys are rejected when the file
//! is turned into a [`TrainConfig`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{CifarVariant, Normalization, SyntheticKind};
use crate::error::{Error, Result};
use crate::gradscale::{GradScaleConfig, OptimizerState};
use crate::layers::{format_layer_list, format_shape, parse_layer_list, parse_shape, Decoding, ModelSpec};
use crate::neuron::NeuronParams;
use crate::train::{DataConfig, DataSource, TrainConfig};

pub const KNOWN_KEYS: &[&str] = &[
    "run.seed",
    "run.repetitions",
    "run.same_seed",
    "run.epochs",
    "run.batch_size",
    "run.timesteps",
    "run.workers",
    "run.relation_summary",
    "model.input",
    "model.layers",
    "model.decoding",
    "model.readout_leak",
    "model.init_gain",
    "neuron.tau",
    "neuron.v_th",
    "neuron.v_r",
    "neuron.reset",
    "neuron.surrogate",
    "neuron.surrogate_width",
    "gradscale.enabled",
    "gradscale.alpha",
    "gradscale.relation_mode",
    "gradscale.relation_norm",
    "gradscale.trace_decay",
    "optim.lr",
    "optim.decay_every",
    "optim.decay_factor",
    "optim.momentum",
    "optim.weight_decay",
    "data.kind",
    "data.train_images",
    "data.train_labels",
    "data.test_images",
    "data.test_labels",
    "data.train",
    "data.test",
    "data.n_train",
    "data.n_test",
    "data.seed",
    "data.mean",
    "data.std",
    "data.classes",
];

/// Ordered key/value view of a configuration file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = strip_comment(raw).trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Config(format!("line {}: {reason}", i + 1));
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| err("unterminated section header".into()))?.trim();
                if !name.is_empty() && !is_key(name) {
                    return Err(err(format!("bad section name '{name}'")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = split_pair(line).map_err(err)?;
            let key = if section.is_empty() { k } else { format!("{section}.{k}") };
            if cfg.entries.insert(key.clone(), v).is_some() {
                return Err(err(format!("duplicate key '{key}'")));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Config> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text)
    }

    /// Applies a `key=value` override; later overrides win.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = split_pair(pair).map_err(|r| Error::Config(format!("override '{pair}': {r}")))?;
        self.entries.insert(k, v);
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Config {
        Config { entries }
    }

    /// Keys not in [`KNOWN_KEYS`].
    pub fn unknown_keys(&self) -> Vec<&str> {
        self.entries
            .keys()
            .map(String::as_str)
            .filter(|k| !KNOWN_KEYS.contains(k))
            .collect()
    }

    fn typed<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| Error::Config(format!("{key}: cannot parse '{v}': {e}"))),
        }
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::Config(format!("{key}: cannot parse '{x}': {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.get(key)
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            // Quote values that would otherwise lose whitespace or quotes on
            // re-parsing.
            if v.trim() != v || v.starts_with('"') {
                writeln!(f, "{k} = \"{v}\"")?;
            } else {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(head, _)| head)
}

fn is_key(k: &str) -> bool {
    k.split('.').all(|part| {
        !part.is_empty() && part.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
    })
}

fn split_pair(line: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = line.split_once('=').ok_or("expected key = value")?;
    let k = k.trim();
    if !is_key(k) {
        return Err(format!("bad key '{k}'"));
    }
    let v = v.trim();
    let v = v
        .strip_prefix('"')
        .and_then(|s| s.strip_suffix('"'))
        .unwrap_or(v);
    Ok((k.to_string(), v.to_string()))
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelSpec {
                input_shape: vec![1, 16, 16],
                layers: parse_layer_list("conv:8:4:2:1,conv:16:4:2:1,readout:10").expect("valid default"),
                decoding: Decoding::Potential,
                readout_leak: 1.0,
            },
            neuron: NeuronParams::default(),
            init_gain: 1.0,
            timesteps: 4,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            repetitions: 1,
            same_seed: false,
            workers: 0,
            gradscale: GradScaleConfig::default(),
            optim: OptimizerState::new(0.1),
            data: DataConfig {
                source: DataSource::Synthetic {
                    kind: SyntheticKind::glyphs(),
                    n_train: 10_000,
                    n_test: 2_000,
                    seed: 0,
                },
                normalization: None,
                classes: None,
            },
            relation_summary: false,
        }
    }
}

impl TrainConfig {
    /// Builds a configuration from `cfg`, filling unset keys with defaults.
    /// Relative dataset paths are resolved against `base_dir` when given.
    pub fn from_config(cfg: &Config, base_dir: Option<&Path>) -> Result<TrainConfig> {
        let unknown = cfg.unknown_keys();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let d = TrainConfig::default();

        let model = ModelSpec {
            input_shape: match cfg.get("model.input") {
                Some(s) => parse_shape(s)?,
                None => d.model.input_shape,
            },
            layers: match cfg.get("model.layers") {
                Some(s) => parse_layer_list(s)?,
                None => d.model.layers,
            },
            decoding: cfg.typed("model.decoding", d.model.decoding)?,
            readout_leak: cfg.typed("model.readout_leak", d.model.readout_leak)?,
        };
        let neuron = NeuronParams {
            tau: cfg.typed("neuron.tau", d.neuron.tau)?,
            v_th: cfg.typed("neuron.v_th", d.neuron.v_th)?,
            v_r: cfg.typed("neuron.v_r", d.neuron.v_r)?,
            reset: cfg.typed("neuron.reset", d.neuron.reset)?,
            surrogate: cfg.typed("neuron.surrogate", d.neuron.surrogate)?,
            surrogate_width: cfg.typed("neuron.surrogate_width", d.neuron.surrogate_width)?,
        };
        let gradscale = GradScaleConfig {
            enabled: cfg.typed("gradscale.enabled", d.gradscale.enabled)?,
            alpha: cfg.typed("gradscale.alpha", d.gradscale.alpha)?,
            relation_mode: cfg.typed("gradscale.relation_mode", d.gradscale.relation_mode)?,
            relation_norm: cfg.typed("gradscale.relation_norm", d.gradscale.relation_norm)?,
            trace_decay: cfg.typed("gradscale.trace_decay", d.gradscale.trace_decay)?,
        };
        let lr = cfg.typed("optim.lr", d.optim.base_eta)?;
        let optim = OptimizerState {
            decay_every: cfg.typed("optim.decay_every", d.optim.decay_every)?,
            decay_factor: cfg.typed("optim.decay_factor", d.optim.decay_factor)?,
            momentum: cfg.typed("optim.momentum", d.optim.momentum)?,
            weight_decay: cfg.typed("optim.weight_decay", d.optim.weight_decay)?,
            ..OptimizerState::new(lr)
        };

        let resolve = |key: &str| -> Result<PathBuf> {
            let p = cfg.path(key)?;
            Ok(match base_dir {
                Some(base) if p.is_relative() => base.join(p),
                _ => p,
            })
        };
        let kind = cfg.get("data.kind").unwrap_or("glyphs");
        let source = match kind {
            "idx" => DataSource::Idx {
                train_images: resolve("data.train_images")?,
                train_labels: resolve("data.train_labels")?,
                test_images: resolve("data.test_images")?,
                test_labels: resolve("data.test_labels")?,
            },
            "cifar10" | "cifar100" => DataSource::Cifar {
                train: resolve("data.train")?,
                test: resolve("data.test")?,
                variant: if kind == "cifar10" {
                    CifarVariant::Cifar10
                } else {
                    CifarVariant::Cifar100
                },
            },
            other => DataSource::Synthetic {
                kind: other.parse()?,
                n_train: cfg.typed("data.n_train", 10_000)?,
                n_test: cfg.typed("data.n_test", 2_000)?,
                seed: cfg.typed("data.seed", 0)?,
            },
        };
        let normalization = match (cfg.list("data.mean")?, cfg.list("data.std")?) {
            (Some(mean), Some(std)) => Some(Normalization { mean, std }),
            (None, None) => None,
            _ => return Err(Error::Config("data.mean and data.std must be given together".into())),
        };
        let classes = cfg.get("data.classes").map(|_| cfg.typed("data.classes", 0usize)).transpose()?;

        let out = TrainConfig {
            model,
            neuron,
            init_gain: cfg.typed("model.init_gain", d.init_gain)?,
            timesteps: cfg.typed("run.timesteps", d.timesteps)?,
            epochs: cfg.typed("run.epochs", d.epochs)?,
            batch_size: cfg.typed("run.batch_size", d.batch_size)?,
            seed: cfg.typed("run.seed", d.seed)?,
            repetitions: cfg.typed("run.repetitions", d.repetitions)?,
            same_seed: cfg.typed("run.same_seed", d.same_seed)?,
            workers: cfg.typed("run.workers", d.workers)?,
            gradscale,
            optim,
            data: DataConfig {
                source,
                normalization,
                classes,
            },
            relation_summary: cfg.typed("run.relation_summary", d.relation_summary)?,
        };
        out.neuron.validate()?;
        out.gradscale.validate()?;
        out.optim.validate()?;
        Ok(out)
    }

    /// Every setting as explicit key/value pairs; parsing the result gives
    /// back an equal configuration.
    pub fn to_config(&self) -> Config {
        let mut c = Config::default();
        c.set("run.seed", self.seed);
        c.set("run.repetitions", self.repetitions);
        c.set("run.same_seed", self.same_seed);
        c.set("run.epochs", self.epochs);
        c.set("run.batch_size", self.batch_size);
        c.set("run.timesteps", self.timesteps);
        c.set("run.workers", self.workers);
        c.set("run.relation_summary", self.relation_summary);
        c.set("model.input", format_shape(&self.model.input_shape));
        c.set("model.layers", format_layer_list(&self.model.layers));
        c.set("model.decoding", self.model.decoding);
        c.set("model.readout_leak", self.model.readout_leak);
        c.set("model.init_gain", self.init_gain);
        c.set("neuron.tau", self.neuron.tau);
        c.set("neuron.v_th", self.neuron.v_th);
        c.set("neuron.v_r", self.neuron.v_r);
        c.set("neuron.reset", self.neuron.reset);
        c.set("neuron.surrogate", self.neuron.surrogate);
        c.set("neuron.surrogate_width", self.neuron.surrogate_width);
        c.set("gradscale.enabled", self.gradscale.enabled);
        c.set("gradscale.alpha", self.gradscale.alpha);
        c.set("gradscale.relation_mode", self.gradscale.relation_mode);
        c.set("gradscale.relation_norm", self.gradscale.relation_norm);
        c.set("gradscale.trace_decay", self.gradscale.trace_decay);
        c.set("optim.lr", self.optim.base_eta);
        c.set("optim.decay_every", self.optim.decay_every);
        c.set("optim.decay_factor", self.optim.decay_factor);
        c.set("optim.momentum", self.optim.momentum);
        c.set("optim.weight_decay", self.optim.weight_decay);
        match &self.data.source {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                c.set("data.kind", "idx");
                c.set("data.train_images", train_images.display());
                c.set("data.train_labels", train_labels.display());
                c.set("data.test_images", test_images.display());
                c.set("data.test_labels", test_labels.display());
            }
            DataSource::Cifar { train, test, variant } => {
                c.set(
                    "data.kind",
                    match variant {
                        CifarVariant::Cifar10 => "cifar10",
                        CifarVariant::Cifar100 => "cifar100",
                    },
                );
                c.set("data.train", train.display());
                c.set("data.test", test.display());
            }
            DataSource::Synthetic {
                kind,
                n_train,
                n_test,
                seed,
            } => {
                c.set("data.kind", kind);
                c.set("data.n_train", n_train);
                c.set("data.n_test", n_test);
                c.set("data.seed", seed);
            }
        }
        if let Some(n) = &self.data.normalization {
            c.set("data.mean", join_floats(&n.mean));
            c.set("data.std", join_floats(&n.std));
        }
        if let Some(k) = self.data.classes {
            c.set("data.classes", k);
        }
        c
    }
}

fn join_floats(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}
