#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::langmaps::extract_python_imports;

fuzz_target!(|data: &[u8]| {
    for m in extract_python_imports(data) {
        assert!(!m.is_empty());
    }
});
