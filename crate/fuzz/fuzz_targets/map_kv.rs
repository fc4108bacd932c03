#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::xref::decode_kv;

fuzz_target!(|data: &[u8]| {
    let _ = decode_kv(data);
});
