//! Replays the checked-in fuzz corpus through the same entry points and
//! properties as the fuzz targets, so seeds stay meaningful on stable.

use std::fs;
use std::path::{Path, PathBuf};

use woc_core::gitcore::{encode_loose, parse_loose, parse_object, ObjectKind};
use woc_core::ingest::{discover, parse_journal_line};
use woc_core::langmaps::{extract_java_imports, extract_python_imports, parse_dep_line};
use woc_core::store::{decode_offsets, decode_presence, ContentLogEntry, Manifest};
use woc_core::xref::{decode_kv, percent_decode, percent_encode, Entity, MapName, MultiMap};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let data = fs::read(&p).unwrap();
            (p, data)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn git_object_seeds() {
    let mut parsed = 0;
    for (p, data) in seeds("git_object") {
        let Some((&sel, payload)) = data.split_first() else { continue };
        let kind = ObjectKind::ALL[sel as usize % 4];
        if let Ok(record) = parse_object(kind, payload) {
            assert_eq!(parse_object(kind, &record.serialize()).unwrap(), record, "{}", p.display());
            parsed += 1;
        }
    }
    assert!(parsed >= 5);
}

#[test]
fn loose_object_seeds() {
    for (p, data) in seeds("loose_object") {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        match parse_loose(&data) {
            Ok((kind, payload)) => {
                assert!(!name.starts_with("bad"), "{name} parsed");
                assert_eq!(parse_loose(&encode_loose(kind, payload)).unwrap(), (kind, payload));
            }
            Err(_) => assert!(name.starts_with("bad"), "{name} rejected"),
        }
    }
}

#[test]
fn corpus_list_seeds() {
    for (_, data) in seeds("corpus_list") {
        let d = discover(&String::from_utf8_lossy(&data), Some(Path::new("/base")));
        assert!(!d.repos.is_empty());
        for r in &d.repos {
            assert!(!r.name.is_empty() && !r.name.contains(';'));
        }
    }
}

#[test]
fn map_kv_seeds() {
    for (p, data) in seeds("map_kv") {
        let (_, entries) = decode_kv(&data).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(entries.is_empty(), p.to_string_lossy().ends_with("-small"));
        assert!(decode_kv(&data[..data.len() - 1]).is_err());
    }
}

#[test]
fn dump_line_seeds() {
    let maps = |s: &str| -> Option<MapName> { s.split('-').next()?.parse().ok() };
    for (p, data) in seeds("dump_lines") {
        let text = String::from_utf8(data).unwrap();
        let stem = p.file_name().unwrap().to_string_lossy().into_owned();
        let name = maps(&stem).unwrap_or(MapName::new(Entity::Commit, Entity::File));
        let m = MultiMap::from_dump_lines(name, 2, 1, text.lines()).unwrap_or_else(|e| panic!("{stem}: {e}"));
        let lines: Vec<String> = (0..m.shard_count()).flat_map(|s| m.dump_lines(s)).collect();
        assert_eq!(MultiMap::from_dump_lines(name, 2, 1, lines.iter()).unwrap(), m);
    }
}

#[test]
fn import_seeds() {
    for (_, data) in seeds("python_imports") {
        assert!(extract_python_imports(&data).iter().all(|m| !m.is_empty()));
    }
    for (_, data) in seeds("java_imports") {
        let mods = extract_java_imports(&data);
        assert!(!mods.is_empty() && mods.iter().all(|m| !m.is_empty()));
    }
}

#[test]
fn manifest_seeds() {
    let mut ok = 0;
    for (_, data) in seeds("manifest") {
        if let Ok(m) = Manifest::parse(std::str::from_utf8(&data).unwrap()) {
            assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
            ok += 1;
        }
    }
    assert!(ok >= 1);
}

#[test]
fn store_index_seeds() {
    for (p, data) in seeds("store_index") {
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name.ends_with("offsets.idx") {
            let entries = decode_offsets(&data);
            assert!(!entries.is_empty());
            for e in entries {
                assert_eq!(ContentLogEntry::decode(&e.encode()), Some(e));
            }
        } else {
            assert!(!decode_presence(&data).unwrap().is_empty());
        }
    }
}

#[test]
fn journal_and_dep_line_seeds() {
    for (p, data) in seeds("journal_line") {
        let line = String::from_utf8(data).unwrap();
        let parsed = parse_journal_line(&line);
        if let Some((project, commit)) = &parsed {
            assert_eq!(parse_journal_line(&format!("{project};{commit}")), parsed);
        }
        let named_bad = p.ends_with("two-semicolons");
        assert_eq!(parsed.is_none(), named_bad, "{line}");
    }
    for (_, data) in seeds("dep_line") {
        let r = parse_dep_line(std::str::from_utf8(&data).unwrap()).unwrap();
        assert_eq!(parse_dep_line(&r.to_string()).unwrap(), r);
    }
}

#[test]
fn percent_text_seeds() {
    for (_, data) in seeds("percent_text") {
        let enc = percent_encode(&data);
        assert!(!enc.contains([';', '\n', '\r']));
        assert_eq!(percent_decode(&enc).as_deref(), Some(data.as_slice()));
    }
}
