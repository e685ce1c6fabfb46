//! Newline-delimited JSON record parser must never panic: any byte soup is
//! either parsed, warned about, or rejected with a structured error.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shiftbench::data::parse_records_str;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_records_str(text, false);
        let _ = parse_records_str(text, true);
    }
});
