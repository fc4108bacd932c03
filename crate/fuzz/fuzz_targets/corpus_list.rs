#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use woc_core::ingest::discover;

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    let d = discover(&text, Some(Path::new("/base")));
    for r in &d.repos {
        assert!(!r.name.is_empty());
        assert!(!r.name.contains(';') && !r.name.contains(char::is_whitespace));
    }
});
