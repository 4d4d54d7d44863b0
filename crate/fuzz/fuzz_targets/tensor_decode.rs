#![no_main]

use libfuzzer_sys::fuzz_target;
use spikegrad::Tensor;

fuzz_target!(|data: &[u8]| {
    if let Ok((t, used)) = Tensor::from_bytes(data) {
        assert!(used <= data.len());
        assert_eq!(t.to_bytes(), data[..used]);
    }
});
