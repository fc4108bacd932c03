#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::ingest::parse_journal_line;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Some((project, commit)) = parse_journal_line(line) {
        assert_eq!(parse_journal_line(&format!("{project};{commit}")), Some((project, commit)));
    }
});
