#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::store::{decode_offsets, decode_presence};

fuzz_target!(|data: &[u8]| {
    for e in decode_offsets(data) {
        assert_eq!(woc_core::store::ContentLogEntry::decode(&e.encode()), Some(e));
    }
    let _ = decode_presence(data);
});
