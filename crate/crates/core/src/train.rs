//! Training loop, evaluation and repeated-run aggregation.
//!
//! Per batch: encode each sample, run the forward pass, take the softmax
//! cross-entropy of the time-averaged readout, backpropagate through time,
//! optionally collect spike relations, average over the batch, scale the
//! weight gradients and take an SGD step. Samples are processed in parallel
//! and reduced in a fixed order, so results do not depend on the worker
//! count.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, CifarVariant, LabeledDataset, Normalization, Sample, SyntheticKind};
use crate::error::{Error, Result};
use crate::gradscale::{scale_gradient, sgd_step, GradScaleConfig, OptimizerState};
use crate::layers::{FiringMode, LayerGrad, Model, ModelSpec};
use crate::neuron::NeuronParams;
use crate::tensor::Tensor;
use crate::trace::{self, normalize_relation, RelationTensor};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        train: PathBuf,
        test: PathBuf,
        variant: CifarVariant,
    },
    Synthetic {
        kind: SyntheticKind,
        n_train: usize,
        n_test: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// Taken from the training split when absent.
    pub normalization: Option<Normalization>,
    /// Overrides the class count inferred from the labels.
    pub classes: Option<usize>,
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let paths: Vec<&PathBuf> = match &self.source {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![train_images, train_labels, test_images, test_labels],
            DataSource::Cifar { train, test, .. } => vec![train, test],
            DataSource::Synthetic { n_train, n_test, .. } => {
                if *n_train == 0 || *n_test == 0 {
                    return Err(Error::Config("synthetic data needs n_train > 0 and n_test > 0".into()));
                }
                vec![]
            }
        };
        for p in paths {
            if !p.exists() {
                return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
            }
        }
        if let Some(n) = &self.normalization {
            n.validate()?;
        }
        Ok(())
    }

    /// Loads both splits, normalized with the configured statistics or
    /// those of the training split.
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        self.validate()?;
        let (train, test) = match &self.source {
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => (data::load_idx(train_images, train_labels)?, data::load_idx(test_images, test_labels)?),
            DataSource::Cifar { train, test, variant } => {
                (data::load_cifar_bin(train, *variant)?, data::load_cifar_bin(test, *variant)?)
            }
            DataSource::Synthetic {
                kind,
                n_train,
                n_test,
                seed,
            } => (
                data::gen_synthetic(*kind, *n_train, *seed)?,
                data::gen_synthetic(*kind, *n_test, seed.wrapping_add(0x5eed))?,
            ),
        };
        if train.is_empty() || test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let classes = self.classes.unwrap_or(0).max(train.n_classes).max(test.n_classes);
        let train = train.with_classes(classes)?;
        let test = test.with_classes(classes)?;
        let norm = match &self.normalization {
            Some(n) => n.clone(),
            None => train.channel_stats()?,
        };
        Ok((train.normalized(&norm)?, test.normalized(&norm)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelSpec,
    pub neuron: NeuronParams,
    pub init_gain: f64,
    pub timesteps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub repetitions: usize,
    /// Every repetition uses `seed` itself instead of a derived seed.
    pub same_seed: bool,
    /// Worker threads for per-sample passes; 0 means all cores.
    pub workers: usize,
    pub gradscale: GradScaleConfig,
    pub optim: OptimizerState,
    pub data: DataConfig,
    /// Append per-layer relation mean/max to each epoch's metrics.
    pub relation_summary: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 {
            return Err(Error::Config("run.timesteps must be at least 1".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("run.repetitions must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("run.batch_size must be at least 1".into()));
        }
        self.neuron.validate()?;
        self.gradscale.validate()?;
        self.optim.validate()?;
        self.data.validate()
    }

    /// Seed of repetition `rep`.
    pub fn repetition_seed(&self, rep: usize) -> u64 {
        if self.same_seed {
            self.seed
        } else {
            self.seed.wrapping_add((rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        }
    }
}

/// Presents the same real-valued sample as input at every one of `steps`
/// timesteps.
pub fn encode_real_value(sample: &Tensor, steps: usize) -> Vec<Tensor> {
    vec![sample.clone(); steps]
}

/// Softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let n = logits.len();
    if label >= n {
        return Err(Error::InvalidLabel { label, n_classes: n });
    }
    let max = logits.max();
    let exps: Vec<f64> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits.data()[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationStats {
    pub layer: usize,
    pub mean: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    /// Mean spikes per test inference, all layers and timesteps.
    pub total_spikes: f64,
    pub layer_spikes: Vec<f64>,
    pub relations: Vec<RelationStats>,
}

impl EpochMetrics {
    pub const CSV_HEADER: &'static str = "rep,epoch,lr,train_loss,test_acc,total_spikes,layer_spikes,relations";

    pub fn csv_line(&self, rep: usize) -> String {
        let layers = join(self.layer_spikes.iter().map(|v| v.to_string()));
        let rels = if self.relations.is_empty() {
            "-".to_string()
        } else {
            join(self.relations.iter().map(|r| format!("{}:{}:{}", r.layer, r.mean, r.max)))
        };
        format!(
            "{rep},{},{},{},{},{},{layers},{rels}",
            self.epoch, self.lr, self.train_loss, self.test_accuracy, self.total_spikes
        )
    }
}

fn join(items: impl Iterator<Item = String>) -> String {
    items.collect::<Vec<_>>().join(";")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Percent correct under argmax of the logits.
    pub accuracy: f64,
    pub mean_spikes: f64,
    pub layer_spikes: Vec<f64>,
}

struct SamplePass {
    loss: f64,
    correct: bool,
    grads: Vec<LayerGrad>,
    relations: Option<Vec<Option<RelationTensor>>>,
}

fn sample_pass(model: &Model, sample: &Sample, steps: usize, gs: &GradScaleConfig) -> Result<SamplePass> {
    let fwd = model.forward(&encode_real_value(&sample.x, steps), FiringMode::Spike)?;
    let (loss, dlogits) = cross_entropy(&fwd.logits, sample.label)?;
    let grads = model.backward(&fwd, &dlogits)?;
    let relations = if gs.enabled {
        Some(trace::sample_relations(model, &fwd.caches, gs.relation_mode, gs.trace_decay)?)
    } else {
        None
    };
    Ok(SamplePass {
        loss,
        correct: fwd.logits.argmax() == Some(sample.label),
        grads,
        relations,
    })
}

/// Model plus optimizer state for one training run.
pub struct Trainer {
    pub model: Model,
    pub optimizer: OptimizerState,
    config: TrainConfig,
    velocity: Vec<[Option<Tensor>; 2]>,
    shuffle_rng: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig, seed: u64) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::build(&config.model, &config.neuron, config.init_gain, &mut init_rng)?;
        Ok(Self::with_model(config, model, seed))
    }

    pub fn with_model(config: &TrainConfig, model: Model, seed: u64) -> Self {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed);
        shuffle_rng.set_stream(1);
        Trainer {
            velocity: vec![[None, None]; model.layers.len()],
            model,
            optimizer: config.optim,
            config: config.clone(),
            shuffle_rng,
            epoch: 0,
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over `train` in a freshly shuffled order. Returns mean loss
    /// and accuracy (percent) over the epoch and the relation statistics.
    pub fn train_epoch(&mut self, train: &LabeledDataset) -> Result<(f64, f64, Vec<RelationStats>)> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.optimizer.set_epoch(self.epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle_rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut rel_stats: Vec<(f64, f64, usize)> = Vec::new();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let (loss, hits, rels) = self.train_batch(train, batch, b)?;
            loss_sum += loss;
            correct += hits;
            if rel_stats.is_empty() {
                rel_stats = vec![(0.0, 0.0, 0); rels.len()];
            }
            for (acc, r) in rel_stats.iter_mut().zip(&rels) {
                if let Some(r) = r {
                    acc.0 += r.mean();
                    acc.1 = acc.1.max(r.max());
                    acc.2 += 1;
                }
            }
        }
        let relations = if self.config.relation_summary {
            rel_stats
                .iter()
                .enumerate()
                .filter(|(_, s)| s.2 > 0)
                .map(|(layer, s)| RelationStats {
                    layer,
                    mean: s.0 / s.2 as f64,
                    max: s.1,
                })
                .collect()
        } else {
            Vec::new()
        };
        self.epoch += 1;
        let n = train.len() as f64;
        Ok((loss_sum / n, 100.0 * correct as f64 / n, relations))
    }

    fn train_batch(
        &mut self,
        train: &LabeledDataset,
        batch: &[usize],
        batch_index: usize,
    ) -> Result<(f64, usize, Vec<Option<RelationTensor>>)> {
        let steps = self.config.timesteps;
        let gs = self.config.gradscale;
        let model = &self.model;
        let passes: Vec<SamplePass> = batch
            .par_iter()
            .map(|&i| sample_pass(model, &train.samples[i], steps, &gs))
            .collect::<Result<_>>()?;

        let mut loss = 0.0;
        let mut hits = 0;
        let mut grads: Vec<LayerGrad> = model.layers.iter().map(LayerGrad::zeros_like).collect();
        let mut rel_acc: Vec<Option<Tensor>> = Vec::new();
        for pass in &passes {
            loss += pass.loss;
            hits += pass.correct as usize;
            for (acc, g) in grads.iter_mut().zip(&pass.grads) {
                add_into(&mut acc.weight, &g.weight);
                add_into(&mut acc.bias, &g.bias);
            }
            if let Some(r) = &pass.relations {
                trace::accumulate_relations(&mut rel_acc, r);
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                batch: batch_index,
            });
        }
        let k = 1.0 / batch.len() as f64;
        let relations = if gs.enabled {
            trace::finish_mean(rel_acc, batch.len())?
        } else {
            vec![None; grads.len()]
        };

        for (l, g) in grads.iter().enumerate() {
            let gw = g.weight.scale(k)?;
            let gb = g.bias.scale(k)?;
            let gw = match (&relations[l], gs.enabled) {
                (Some(r), true) => scale_gradient(&gw, &normalize_relation(r, gs.relation_norm)?, gs.alpha)?,
                _ => gw,
            };
            let layer = &mut self.model.layers[l];
            let [vw, vb] = &mut self.velocity[l];
            layer.weight = sgd_step(&layer.weight, &gw, &self.optimizer, vw).map_err(|_| Error::Diverged {
                epoch: self.epoch,
                batch: batch_index,
            })?;
            layer.bias = sgd_step(&layer.bias, &gb, &self.optimizer, vb).map_err(|_| Error::Diverged {
                epoch: self.epoch,
                batch: batch_index,
            })?;
        }
        Ok((loss, hits, relations))
    }
}

fn add_into(acc: &mut Tensor, x: &Tensor) {
    for (a, &b) in acc.data_mut().iter_mut().zip(x.data()) {
        *a += b;
    }
}

/// Test accuracy and spike counts of `model` on `test`.
pub fn evaluate(model: &Model, test: &LabeledDataset, steps: usize) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let outcomes: Vec<(bool, Vec<u64>)> = test
        .samples
        .par_iter()
        .map(|s| {
            let fwd = model.forward(&encode_real_value(&s.x, steps), FiringMode::Spike)?;
            Ok((fwd.logits.argmax() == Some(s.label), fwd.spike_counts))
        })
        .collect::<Result<_>>()?;
    let n = outcomes.len() as f64;
    let mut layer_totals = vec![0u64; model.layers.len()];
    let mut correct = 0usize;
    for (hit, counts) in &outcomes {
        correct += *hit as usize;
        for (t, c) in layer_totals.iter_mut().zip(counts) {
            *t += c;
        }
    }
    Ok(EvalReport {
        samples: outcomes.len(),
        accuracy: 100.0 * correct as f64 / n,
        mean_spikes: layer_totals.iter().sum::<u64>() as f64 / n,
        layer_spikes: layer_totals.iter().map(|&c| c as f64 / n).collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub model: Model,
}

impl RunRecord {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub test_accuracy: f64,
    pub spikes: f64,
}

/// Final test accuracy and spike count of each repetition with their mean
/// and max.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub runs: Vec<RunResult>,
    pub accuracy_mean: f64,
    pub accuracy_max: f64,
    pub spikes_mean: f64,
    pub spikes_max: f64,
}

impl RunSummary {
    pub fn from_runs(runs: Vec<RunResult>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidParam("no runs to aggregate".into()));
        }
        let n = runs.len() as f64;
        let mean = |f: fn(&RunResult) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let max = |f: fn(&RunResult) -> f64| runs.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        Ok(RunSummary {
            accuracy_mean: mean(|r| r.test_accuracy),
            accuracy_max: max(|r| r.test_accuracy),
            spikes_mean: mean(|r| r.spikes),
            spikes_max: max(|r| r.spikes),
            runs,
        })
    }
}

/// Runs `f` on a pool of `workers` threads; 0 uses the global pool.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidParam(e.to_string()))?;
    Ok(pool.install(f))
}

/// One training run of `config.epochs` epochs from `seed`, evaluating on
/// `test` after every epoch. `on_epoch` sees each epoch's metrics as they
/// are produced.
pub fn run_single(
    config: &TrainConfig,
    seed: u64,
    train: &LabeledDataset,
    test: &LabeledDataset,
    on_epoch: &mut (dyn FnMut(&EpochMetrics) -> Result<()> + Send),
) -> Result<RunRecord> {
    config.validate()?;
    with_workers(config.workers, || {
        let mut trainer = Trainer::new(config, seed)?;
        let mut epochs = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            let epoch = trainer.epoch();
            let (train_loss, train_accuracy, relations) = trainer.train_epoch(train)?;
            let eval = evaluate(&trainer.model, test, config.timesteps)?;
            let m = EpochMetrics {
                epoch,
                lr: trainer.optimizer.eta,
                train_loss,
                train_accuracy,
                test_accuracy: eval.accuracy,
                total_spikes: eval.mean_spikes,
                layer_spikes: eval.layer_spikes,
                relations,
            };
            on_epoch(&m)?;
            epochs.push(m);
        }
        Ok(RunRecord {
            seed,
            epochs,
            model: trainer.model,
        })
    })?
}

/// `config.repetitions` independent runs with seeds from
/// [`TrainConfig::repetition_seed`], aggregated into mean/max.
pub fn run_repetitions(
    config: &TrainConfig,
    train: &LabeledDataset,
    test: &LabeledDataset,
    on_epoch: &mut (dyn FnMut(usize, &EpochMetrics) -> Result<()> + Send),
) -> Result<(RunSummary, Vec<RunRecord>)> {
    config.validate()?;
    if config.epochs == 0 {
        return Err(Error::Config("run.epochs must be at least 1 to aggregate results".into()));
    }
    let mut records = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let seed = config.repetition_seed(rep);
        let record = run_single(config, seed, train, test, &mut |m| on_epoch(rep, m))?;
        records.push(record);
    }
    let runs = records
        .iter()
        .map(|r| {
            let last = r.final_metrics().expect("epochs >= 1");
            RunResult {
                seed: r.seed,
                test_accuracy: last.test_accuracy,
                spikes: last.total_spikes,
            }
        })
        .collect();
    Ok((RunSummary::from_runs(runs)?, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_repeats_sample() {
        let c = Tensor::vector(vec![0.25, -1.0]).unwrap();
        assert_eq!(encode_real_value(&c, 4), vec![c.clone(); 4]);
        assert_eq!(encode_real_value(&c, 1), vec![c]);
    }

    #[test]
    fn cross_entropy_uniform() {
        let (loss, grad) = cross_entropy(&Tensor::zeros(&[10]), 3).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((grad.data()[3] + 0.9).abs() < 1e-12);
        assert!((grad.data()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident() {
        let mut z = Tensor::zeros(&[5]);
        z.data_mut()[2] = 800.0;
        let (loss, _) = cross_entropy(&z, 2).unwrap();
        assert!(loss < 1e-300);
        assert!(cross_entropy(&z, 5).is_err());
    }

    #[test]
    fn summary_of_one_run() {
        let s = RunSummary::from_runs(vec![RunResult {
            seed: 1,
            test_accuracy: 81.5,
            spikes: 120.25,
        }])
        .unwrap();
        assert_eq!(s.accuracy_mean, s.accuracy_max);
        assert_eq!(s.spikes_mean, s.spikes_max);
        assert!(RunSummary::from_runs(vec![]).is_err());
    }

    #[test]
    fn csv_line_format() {
        let m = EpochMetrics {
            epoch: 3,
            lr: 0.01,
            train_loss: 0.5,
            train_accuracy: 90.0,
            test_accuracy: 88.0,
            total_spikes: 12.5,
            layer_spikes: vec![10.0, 2.5, 0.0],
            relations: vec![RelationStats {
                layer: 1,
                mean: 0.25,
                max: 2.0,
            }],
        };
        assert_eq!(m.csv_line(2), "2,3,0.01,0.5,88,12.5,10;2.5;0,1:0.25:2");
        assert_eq!(EpochMetrics::CSV_HEADER.split(',').count(), m.csv_line(0).split(',').count());
    }
}
