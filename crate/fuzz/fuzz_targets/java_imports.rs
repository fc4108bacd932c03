#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::langmaps::extract_java_imports;

fuzz_target!(|data: &[u8]| {
    for m in extract_java_imports(data) {
        assert!(!m.is_empty());
    }
});
