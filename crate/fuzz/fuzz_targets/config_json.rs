#![no_main]

use cacheic::model::{normalize_config, RawConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(raw) = RawConfig::from_json(text) {
        if let Ok(cfg) = normalize_config(&raw) {
            assert!(cfg.t_t >= 1);
            assert!(cfg.t_t <= cfg.k_t && cfg.t_r <= cfg.k_r);
        }
    }
});
