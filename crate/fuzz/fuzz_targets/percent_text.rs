#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::xref::{percent_decode, percent_encode};

fuzz_target!(|data: &[u8]| {
    let encoded = percent_encode(data);
    assert!(!encoded.contains([';', '\n', '\r']));
    assert_eq!(percent_decode(&encoded).as_deref(), Some(data));
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = percent_decode(text);
    }
});
