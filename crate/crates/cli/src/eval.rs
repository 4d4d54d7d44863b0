use serde::Serialize;
use spikegrad::checkpoint::Checkpoint;
use spikegrad::data::{self, CifarVariant, LabeledDataset, SyntheticKind};
use spikegrad::layers::format_shape;
use spikegrad::train::{self, EvalReport};

use crate::seed::{self, Seed};
use crate::{EvalArgs, Failure};

#[derive(Serialize)]
struct Report<'a> {
    checkpoint: String,
    seed: u64,
    seed_source: &'a str,
    timesteps: usize,
    #[serde(flatten)]
    eval: EvalReport,
}

fn load_dataset(args: &EvalArgs, seed: Seed) -> Result<LabeledDataset, Failure> {
    let chosen = [
        args.idx_images.is_some(),
        args.cifar10.is_some(),
        args.cifar100.is_some(),
        args.synthetic.is_some(),
    ]
    .iter()
    .filter(|&&b| b)
    .count();
    if chosen != 1 {
        return Err(Failure::usage(
            "give exactly one dataset: --idx-images/--idx-labels, --cifar10, --cifar100 or --synthetic",
        ));
    }
    let ds = if let (Some(images), Some(labels)) = (&args.idx_images, &args.idx_labels) {
        data::load_idx(images, labels)?
    } else if let Some(path) = &args.cifar10 {
        data::load_cifar_bin(path, CifarVariant::Cifar10)?
    } else if let Some(path) = &args.cifar100 {
        data::load_cifar_bin(path, CifarVariant::Cifar100)?
    } else {
        let kind: SyntheticKind = args.synthetic.as_deref().unwrap_or_default().parse()?;
        data::gen_synthetic(kind, args.n, seed.value)?
    };
    Ok(ds)
}

pub fn run(args: EvalArgs) -> Result<(), Failure> {
    let seed = seed::resolve(args.seed, None, None)?;
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| Failure::usage(e.to_string()))?;
    let steps = args.timesteps.unwrap_or(ckpt.timesteps);
    if steps == 0 {
        return Err(Failure::usage("--timesteps must be at least 1"));
    }
    let mut ds = load_dataset(&args, seed)?;
    if ds.is_empty() {
        return Err(Failure::usage("dataset is empty"));
    }
    let model = &ckpt.model;
    let sample_shape = ds.sample_shape().unwrap_or(&[]).to_vec();
    let sample_len: usize = sample_shape.iter().product();
    let model_len: usize = model.input_shape.iter().product();
    let conv_first = model
        .layers
        .first()
        .is_some_and(|l| l.conv_geometry().is_some());
    if sample_len != model_len || (conv_first && sample_shape != model.input_shape) {
        return Err(Failure::usage(format!(
            "checkpoint expects input {} but dataset samples are {}",
            format_shape(&model.input_shape),
            format_shape(&sample_shape)
        )));
    }
    if ds.n_classes > model.n_classes() {
        return Err(Failure::usage(format!(
            "dataset has {} classes, checkpoint model has {}",
            ds.n_classes,
            model.n_classes()
        )));
    }
    if let Some(norm) = &ckpt.normalization {
        ds = ds.normalized(norm)?;
    }
    let report = train::with_workers(args.workers.unwrap_or(0), || train::evaluate(model, &ds, steps))??;

    if args.json {
        let r = Report {
            checkpoint: args.checkpoint.display().to_string(),
            seed: seed.value,
            seed_source: seed.source,
            timesteps: steps,
            eval: report,
        };
        println!("{}", serde_json::to_string_pretty(&r).map_err(|e| Failure::run(e.to_string()))?);
    } else {
        println!("seed {} ({})", seed.value, seed.source);
        println!("samples      {}", report.samples);
        println!("accuracy     {:.2}%", report.accuracy);
        println!("mean spikes  {:.2}", report.mean_spikes);
        for (l, s) in report.layer_spikes.iter().enumerate() {
            println!("  layer {l}    {s:.2}");
        }
    }
    Ok(())
}
