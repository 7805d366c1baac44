#![no_main]

use cacheic::ratio::{decimal, exact, parse_exact, parse_rational};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_rational(text) {
        let e = exact(&r);
        assert_eq!(parse_exact(&e).unwrap(), r);
        let _ = decimal(&r, 6);
    }
    let _ = parse_exact(text);
});
