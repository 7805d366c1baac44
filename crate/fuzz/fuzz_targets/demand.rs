#![no_main]

use cacheic::model::{Demand, SystemConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let cfg = SystemConfig::from_t(3, 4, 4, 2, 1, 0).unwrap();
    if let Ok(d) = Demand::parse(text, &cfg) {
        assert_eq!(d.as_slice().len(), cfg.k_r);
        assert!(d.as_slice().iter().all(|&n| (1..=cfg.n_files).contains(&n)));
    }
});
