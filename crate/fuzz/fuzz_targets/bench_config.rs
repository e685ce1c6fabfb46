//! TOML benchmark-config parsing must never panic: unknown keys, bad
//! values, and hostile nesting all surface as configuration errors.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shiftbench::bench::BenchConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = BenchConfig::from_toml_str(text);
    }
});
