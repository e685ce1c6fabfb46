//! Feature-store decoding must never panic. The input encodes both files:
//! the JSON index sidecar up to the first newline, the binary matrix after.

#![no_main]

use libfuzzer_sys::fuzz_target;
use shiftbench::data::FeatureStore;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == b'\n').unwrap_or(data.len());
    let sidecar = &data[..split];
    let bin = data.get(split + 1..).unwrap_or(&[]);
    if let Ok(store) = FeatureStore::from_bytes(sidecar, bin) {
        // A successful decode must re-encode to the same bytes.
        let (sidecar2, bin2) = store.to_bytes().unwrap();
        let again = FeatureStore::from_bytes(&sidecar2, &bin2).unwrap();
        assert_eq!(store, again);
    }
});
