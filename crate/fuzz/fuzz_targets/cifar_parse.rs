#![no_main]

use libfuzzer_sys::fuzz_target;
use spikegrad::data::{parse_cifar, CifarVariant};

fuzz_target!(|data: &[u8]| {
    for variant in [CifarVariant::Cifar10, CifarVariant::Cifar100] {
        if let Ok(ds) = parse_cifar(data, variant) {
            assert_eq!(ds.len() * variant.record_len(), data.len());
        }
    }
});
