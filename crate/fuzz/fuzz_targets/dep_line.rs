#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::langmaps::parse_dep_line;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(r) = parse_dep_line(line) {
        assert_eq!(parse_dep_line(&r.to_string()).unwrap(), r);
    }
});
