use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spikegrad::checkpoint::Checkpoint;
use spikegrad::data::{gen_synthetic, load_idx, write_idx, SyntheticKind};
use spikegrad::layers::{parse_layer_list, Decoding, FiringMode, Model, ModelSpec};
use spikegrad::neuron::NeuronParams;
use spikegrad::train::{self, encode_real_value, DataConfig, DataSource, TrainConfig};
use spikegrad::{Config, Tensor};

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 11,
        ..TrainConfig::default()
    };
    cfg.data = DataConfig {
        source: DataSource::Synthetic {
            kind: SyntheticKind::glyphs(),
            n_train: 64,
            n_test: 32,
            seed: 3,
        },
        normalization: None,
        classes: None,
    };
    cfg
}

#[test]
fn same_seed_same_run() {
    let cfg = small_config();
    let (tr, te) = cfg.data.load().unwrap();
    let a = train::run_single(&cfg, 11, &tr, &te, &mut |_| Ok(())).unwrap();
    let b = train::run_single(&cfg, 11, &tr, &te, &mut |_| Ok(())).unwrap();
    assert_eq!(a, b);
    let c = train::run_single(&cfg, 12, &tr, &te, &mut |_| Ok(())).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn worker_count_does_not_change_results() {
    let cfg = small_config();
    let (tr, te) = cfg.data.load().unwrap();
    let one = train::run_single(&TrainConfig { workers: 1, ..cfg.clone() }, 11, &tr, &te, &mut |_| Ok(())).unwrap();
    let three = train::run_single(&TrainConfig { workers: 3, ..cfg }, 11, &tr, &te, &mut |_| Ok(())).unwrap();
    assert_eq!(one, three);
}

#[test]
fn checkpoint_file_round_trip_preserves_predictions() {
    let cfg = small_config();
    let (tr, te) = cfg.data.load().unwrap();
    let rec = train::run_single(&cfg, 11, &tr, &te, &mut |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = Checkpoint {
        model: rec.model,
        timesteps: cfg.timesteps,
        normalization: tr.normalization.clone(),
    };
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let a = train::evaluate(&ckpt.model, &te, cfg.timesteps).unwrap();
    let b = train::evaluate(&back.model, &te, back.timesteps).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.accuracy, rec.epochs.last().unwrap().test_accuracy);
}

#[test]
fn idx_files_round_trip() {
    let ds = gen_synthetic(SyntheticKind::glyphs(), 50, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("i.idx"), dir.path().join("l.idx"));
    write_idx(&ds, &i, &l).unwrap();
    let back = load_idx(&i, &l).unwrap();
    assert_eq!(back.len(), 50);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.label, b.label);
        for (x, y) in a.x.data().iter().zip(b.x.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn config_text_round_trip() {
    let cfg = small_config();
    let text = cfg.to_config().to_string();
    let back = TrainConfig::from_config(&Config::parse(&text).unwrap(), None).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_rejects_unknown_keys() {
    let cfg = Config::parse("[optim]\nlearning_rate = 0.1\n").unwrap();
    let err = TrainConfig::from_config(&cfg, None).unwrap_err().to_string();
    assert!(err.contains("optim.learning_rate"), "{err}");
}

#[test]
fn real_value_encoding_repeats_the_sample() {
    let x = Tensor::vector(vec![0.2, 0.9]).unwrap();
    let enc = encode_real_value(&x, 4);
    assert_eq!(enc.len(), 4);
    assert!(enc.iter().all(|t| *t == x));
}

#[test]
fn forward_reports_per_layer_spikes() {
    let spec = ModelSpec {
        input_shape: vec![3],
        layers: parse_layer_list("dense:4,dense:4,readout:2").unwrap(),
        decoding: Decoding::Potential,
        readout_leak: 1.0,
    };
    let model = Model::build(&spec, &NeuronParams::default(), 2.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let x = Tensor::vector(vec![1.0, 1.0, 1.0]).unwrap();
    let out = model.forward(&encode_real_value(&x, 4), FiringMode::Spike).unwrap();
    assert_eq!(out.spike_counts.len(), 3);
    assert_eq!(out.spike_counts[2], 0);
    for (l, cache) in out.caches.iter().enumerate().take(2) {
        let counted: f64 = cache.spikes.iter().map(Tensor::sum).sum();
        assert_eq!(counted as u64, out.spike_counts[l]);
    }
    assert_eq!(out.logits.shape(), &[2]);
}
