#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::gitcore::{encode_loose, parse_loose};

fuzz_target!(|data: &[u8]| {
    if let Ok((kind, payload)) = parse_loose(data) {
        assert_eq!(parse_loose(&encode_loose(kind, payload)).unwrap(), (kind, payload));
    }
});
