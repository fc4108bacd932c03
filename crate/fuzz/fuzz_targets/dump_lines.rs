#![no_main]

use libfuzzer_sys::fuzz_target;
use woc_core::xref::{Entity, MapName, MultiMap};

fuzz_target!(|data: &[u8]| {
    let text = String::from_utf8_lossy(data);
    for name in [MapName::new(Entity::Commit, Entity::File), MapName::new(Entity::File, Entity::Author)] {
        if let Ok(m) = MultiMap::from_dump_lines(name, 2, 1, text.lines()) {
            let lines: Vec<String> = (0..m.shard_count()).flat_map(|s| m.dump_lines(s)).collect();
            let again = MultiMap::from_dump_lines(name, 2, 1, lines.iter()).expect("dump must reload");
            assert_eq!(again, m);
        }
    }
});
