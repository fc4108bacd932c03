#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::gitcore::{parse_object, ObjectKind};

fuzz_target!(|data: &[u8]| {
    let Some((&selector, payload)) = data.split_first() else {
        return;
    };
    let kind = ObjectKind::ALL[selector as usize % ObjectKind::ALL.len()];
    if let Ok(record) = parse_object(kind, payload) {
        let again = parse_object(kind, &record.serialize()).expect("serialized record must parse");
        assert_eq!(again, record);
    }
});
