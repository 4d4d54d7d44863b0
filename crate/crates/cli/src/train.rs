use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spikegrad::checkpoint::Checkpoint;
use spikegrad::train::{self, EpochMetrics};
use spikegrad::{Config, TrainConfig};

use crate::seed::{self, Seed};
use crate::{Failure, TrainArgs};

const METRICS: &str = "metrics.csv";
const SUMMARY: &str = "summary.json";
const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub metrics: String,
    pub summary: String,
    pub checkpoints: Vec<String>,
}

/// Everything needed to repeat a run: the fully resolved configuration
/// (seed included) plus where its outputs went.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub seed_source: String,
    pub config: BTreeMap<String, String>,
    pub artifacts: Artifacts,
}

fn checkpoint_name(rep: usize) -> String {
    format!("rep{rep}.ckpt")
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::run(format!("{}: {e}", path.display()))
}

/// Resolves the run configuration and where its seed came from.
fn resolve(args: &TrainArgs) -> Result<(TrainConfig, Seed), Failure> {
    let (mut cfg, base_dir) = match (&args.config, &args.manifest) {
        (Some(path), _) => {
            if !path.is_file() {
                return Err(Failure::usage(format!("config file {} not found", path.display())));
            }
            let dir = path
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."))
                .canonicalize()
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            (Config::load(path)?, Some(dir))
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("manifest {}: {e}", path.display())))?;
            let m: RunManifest = serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("manifest {}: {e}", path.display())))?;
            (Config::from_entries(m.config), None)
        }
        (None, None) => return Err(Failure::usage("either --config or --manifest is required")),
    };
    let file_seed = cfg.get("run.seed").map(str::to_string);
    let mut overridden_seed = None;
    for pair in &args.overrides {
        cfg.apply_override(pair)?;
        if let Some((k, v)) = pair.split_once('=') {
            if k.trim() == "run.seed" {
                overridden_seed = Some(v.trim().to_string());
            }
        }
    }
    let seed = seed::resolve(args.seed, overridden_seed.as_deref(), file_seed.as_deref())?;
    cfg.set("run.seed", seed.value);
    if let Some(w) = args.workers {
        cfg.set("run.workers", w);
    }
    let tc = TrainConfig::from_config(&cfg, base_dir.as_deref())?;
    tc.validate()?;
    Ok((tc, seed))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn open_metrics(path: &Path) -> Result<File, Failure> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| io_err(path, e))?;
    let empty = f.metadata().map_err(|e| io_err(path, e))?.len() == 0;
    if empty {
        writeln!(f, "{}", EpochMetrics::CSV_HEADER).map_err(|e| io_err(path, e))?;
    }
    Ok(f)
}

pub fn run(args: TrainArgs) -> Result<(), Failure> {
    let (cfg, seed) = resolve(&args)?;
    let out: PathBuf = args.out.clone();
    if out.join(MANIFEST).exists() {
        return Err(Failure::usage(format!(
            "{} already holds a run; pick another --out",
            out.display()
        )));
    }
    std::fs::create_dir_all(&out).map_err(|e| Failure::usage(format!("{}: {e}", out.display())))?;

    let manifest = RunManifest {
        tool: "spikegrad".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: seed.value,
        seed_source: seed.source.into(),
        config: cfg.to_config().entries().clone(),
        artifacts: Artifacts {
            metrics: METRICS.into(),
            summary: SUMMARY.into(),
            checkpoints: (0..cfg.repetitions).map(checkpoint_name).collect(),
        },
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::run(e.to_string()))?;
    write_atomic(&out.join(MANIFEST), json.as_bytes())?;
    println!("seed {} ({})", seed.value, seed.source);

    let (train_set, test_set) = cfg.data.load()?;
    let metrics_path = out.join(METRICS);
    let mut metrics = open_metrics(&metrics_path)?;
    let quiet = args.quiet;
    let (summary, records) = train::run_repetitions(&cfg, &train_set, &test_set, &mut |rep, m| {
        writeln!(metrics, "{}", m.csv_line(rep))
            .and_then(|_| metrics.flush())
            .map_err(|e| spikegrad::Error::io(&metrics_path, e))?;
        if !quiet {
            eprintln!(
                "rep {rep} epoch {:>3}  lr {:<8} loss {:.4}  train {:.2}%  test {:.2}%  spikes {:.1}",
                m.epoch, m.lr, m.train_loss, m.train_accuracy, m.test_accuracy, m.total_spikes
            );
        }
        Ok(())
    })?;

    for (rep, record) in records.into_iter().enumerate() {
        let ckpt = Checkpoint {
            model: record.model,
            timesteps: cfg.timesteps,
            normalization: train_set.normalization.clone(),
        };
        ckpt.save(out.join(checkpoint_name(rep)))?;
    }
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::run(e.to_string()))?;
    write_atomic(&out.join(SUMMARY), json.as_bytes())?;

    println!(
        "accuracy mean {:.2}% max {:.2}%  spikes mean {:.1} max {:.1}  ({} runs)",
        summary.accuracy_mean,
        summary.accuracy_max,
        summary.spikes_mean,
        summary.spikes_max,
        summary.runs.len()
    );
    println!("outputs in {}", out.display());
    Ok(())
}
