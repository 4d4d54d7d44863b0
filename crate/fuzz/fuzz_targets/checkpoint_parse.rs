#![no_main]

use libfuzzer_sys::fuzz_target;
use spikegrad::Checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes().expect("parsed checkpoint re-encodes");
        assert_eq!(Checkpoint::from_bytes(&bytes).expect("re-encoded checkpoint parses"), ckpt);
    }
});
