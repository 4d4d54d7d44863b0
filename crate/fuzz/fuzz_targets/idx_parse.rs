#![no_main]

use libfuzzer_sys::fuzz_target;
use spikegrad::data::parse_idx;

// First byte picks where the input splits into image and label files.
fuzz_target!(|data: &[u8]| {
    let Some((&cut, rest)) = data.split_first() else {
        return;
    };
    let cut = (cut as usize * rest.len()) / 255;
    let (images, labels) = rest.split_at(cut);
    if let Ok(ds) = parse_idx(images, labels) {
        for s in &ds.samples {
            assert!(s.x.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
