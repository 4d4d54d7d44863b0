#![no_main]

use libfuzzer_sys::fuzz_target;
use spikegrad::{Config, TrainConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = Config::parse(text) {
        let _ = TrainConfig::from_config(&cfg, None);
        assert_eq!(Config::parse(&cfg.to_string()).ok(), Some(cfg));
    }
});
