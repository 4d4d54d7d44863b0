use std::path::Path;

use spikegrad::data::{self, SyntheticKind};

use crate::{seed, Failure, GenDataArgs};

/// Writes `<prefix>-{train,test}-{images,labels}.idx` and `<prefix>.cfg`,
/// a config that trains on them.
pub fn run(args: GenDataArgs) -> Result<(), Failure> {
    let kind: SyntheticKind = args.kind.parse()?;
    let seed = seed::resolve(args.seed, None, None)?;
    println!("seed {} ({})", seed.value, seed.source);
    let prefix = args.prefix.unwrap_or_else(|| kind.name().to_string());
    std::fs::create_dir_all(&args.out).map_err(|e| Failure::usage(format!("{}: {e}", args.out.display())))?;

    let train = data::gen_synthetic(kind, args.n_train, seed.value)?;
    let test = data::gen_synthetic(kind, args.n_test, seed.value.wrapping_add(1))?;
    let file = |split: &str, what: &str| format!("{prefix}-{split}-{what}.idx");
    for (split, ds) in [("train", &train), ("test", &test)] {
        data::write_idx(ds, args.out.join(file(split, "images")), args.out.join(file(split, "labels")))?;
    }

    let shape = match kind.sample_shape().as_slice() {
        [d] => format!("1x1x{d}"),
        other => spikegrad::layers::format_shape(other),
    };
    let layers = match kind {
        SyntheticKind::Glyphs { .. } => "conv:8:4:2:1,conv:16:4:2:1,readout:10".to_string(),
        _ => format!("dense:32,dense:32,readout:{}", kind.n_classes()),
    };
    let cfg = format!(
        "# generated by spikegrad gen-data --kind {kind} --seed {}\n\
         [run]\nseed = 0\nepochs = 20\nbatch_size = 128\ntimesteps = 4\n\n\
         [model]\ninput = {shape}\nlayers = {layers}\n\n\
         [data]\nkind = idx\n\
         train_images = {}\ntrain_labels = {}\ntest_images = {}\ntest_labels = {}\n",
        seed.value,
        file("train", "images"),
        file("train", "labels"),
        file("test", "images"),
        file("test", "labels"),
    );
    let cfg_path = args.out.join(format!("{prefix}.cfg"));
    write(&cfg_path, cfg.as_bytes())?;
    println!(
        "wrote {} train / {} test samples and {}",
        args.n_train,
        args.n_test,
        cfg_path.display()
    );
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::run(format!("{}: {e}", path.display())))
}
