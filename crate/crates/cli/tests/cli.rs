mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use common::*;
use flate2::read::GzDecoder;
use woc_core::gitcore::{hash_object, ObjectId, ObjectKind};
use woc_core::store::{ObjectStore, ShardConfig};
use woc_core::xref::{Entity, MapName, MapSet, MultiMap};
use woc_testkit as tk;

fn small_params(commits: usize) -> tk::RepoParams {
    tk::RepoParams {
        commits,
        ..Default::default()
    }
}

#[test]
fn show_content_commit_line_matches_reference_format() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let payload = sample_commit_payload();
    let id = hash_object(ObjectKind::Commit, &payload);
    let mut store = ObjectStore::create(&root, ShardConfig::default()).unwrap();
    store.put_raw(ObjectKind::Commit, id, payload).unwrap();
    store.commit().unwrap();
    drop(store);

    let out = woc_ok(&root, &["show-content", "commit"], format!("{id}\n").as_bytes());
    assert_eq!(out.text(), format!("{id}{SAMPLE_TAIL}\n"));
    assert!(out.stderr.is_empty());
}

#[test]
fn show_content_empty_and_mixed_input() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("r/one");
    tk::generate_repo(&repo, 3, &small_params(12));
    let root = dir.path().join("store");
    let list = write_named_list(&dir.path().join("list"), &[("r_one", &repo)]);
    woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");

    let out = woc_ok(&root, &["show-content", "commit"], b"");
    assert!(out.stdout.is_empty());

    let commits = tk::all_commits(&repo);
    let absent = ObjectId::from_bytes([0xab; 20]);
    let input = format!("{}\n{absent}\nnot-hex\n{}\n", commits[0], commits[1]);
    let out = woc(&root, &["show-content", "commit"], input.as_bytes());
    assert_eq!(out.code, 1);
    let text = out.text();
    let lines: Vec<&str> = text.lines().map(|l| l.split(';').next().unwrap()).collect();
    assert_eq!(lines, [commits[0].to_hex(), commits[1].to_hex()]);
    assert!(out.stderr.contains(&absent.to_hex()));
    assert_eq!(out.stderr.lines().count(), 2);

    // parents and times against git's own rendering
    for c in &commits {
        let line = woc_ok(&root, &["show-content", "commit"], format!("{c}\n").as_bytes()).text();
        let f: Vec<&str> = line.trim_end().split(';').collect();
        let want = tk::git(&repo, &["log", "-1", "--format=%H;%T;%P;%an <%ae>;%cn <%ce>", &c.to_hex()]);
        let want = want.trim_end().replace(' ', ":");
        let got = f[..5].join(";").replace(' ', ":");
        assert_eq!(got, want);
        let (t, _) = tk::time_author(&repo, c);
        assert!(f[5].starts_with(&t.to_string()));
    }

    // trees as `mode name id`, blobs raw
    let head = commits[0];
    let tree: ObjectId = tk::git(&repo, &["rev-parse", &format!("{head}^{{tree}}")]).trim().parse().unwrap();
    let out = woc_ok(&root, &["show-content", "tree"], format!("{tree}\n").as_bytes());
    let got: Vec<(String, String, ObjectId)> = out
        .text()
        .lines()
        .map(|l| {
            let mut p = l.splitn(3, ' ');
            let mode = p.next().unwrap().to_owned();
            let name = p.next().unwrap().to_owned();
            (mode, name, p.next().unwrap().parse().unwrap())
        })
        .collect();
    let want: Vec<(String, String, ObjectId)> = tk::ls_tree_root(&repo, &head)
        .into_iter()
        .map(|(mode, name, id)| (mode.trim_start_matches('0').to_owned(), name, id))
        .collect();
    let got: Vec<_> = got.into_iter().map(|(m, n, i)| (m.trim_start_matches('0').to_owned(), n, i)).collect();
    assert_eq!(got, want);

    let (_, blob) = tk::ls_tree_r(&repo, &head).into_iter().next().unwrap();
    let out = woc_ok(&root, &["show-content", "blob"], format!("{blob}\n").as_bytes());
    assert_eq!(out.stdout, tk::cat_file(&repo, ObjectKind::Blob, &blob));

    assert_eq!(woc(&root, &["show-content", "banana"], b"").code, 2);
}

#[test]
fn get_values_shape_for_a_commit_shared_by_many_projects() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("src/news");
    tk::generate_repo(&repo, 11, &small_params(6));
    let root = dir.path().join("store");
    let entries: Vec<(&str, &Path)> = SAMPLE_PROJECTS.iter().rev().map(|n| (*n, repo.as_path())).collect();
    let list = write_named_list(&dir.path().join("list"), &entries);
    let out = woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");
    let actions: Vec<String> = out.rows().iter().map(|r| r.split(';').nth(1).unwrap().to_owned()).collect();
    assert_eq!(actions.iter().filter(|a| *a == "extracted").count(), 1);
    assert_eq!(actions.iter().filter(|a| *a == "membership-only").count(), 11);
    woc_ok(&root, &["build-maps"], b"");

    let c = tk::all_commits(&repo)[0];
    let out = woc_ok(&root, &["get-values", "c2p"], format!("{c}\n").as_bytes());
    assert_eq!(out.text(), format!("{c};{}\n", SAMPLE_PROJECTS.join(";")));

    // absent key: bare key, diagnostic, exit 1; input order preserved
    let absent = "00000000000000000000000000000000000000aa";
    let out = woc(&root, &["get-values", "c2p"], format!("{absent}\n{c}\n").as_bytes());
    assert_eq!(out.code, 1);
    let text = out.text();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], absent);
    assert!(lines[1].starts_with(&c.to_hex()));
    assert!(out.stderr.contains(absent));

    assert_eq!(woc(&root, &["get-values", "x2y"], b"").code, 2);
}

#[test]
fn get_values_chain_equals_compose() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tk::Corpus::generate(&dir.path().join("c"), 3, &small_params(25));
    let list = corpus.write_list();
    let root = dir.path().join("store");
    woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");
    woc_ok(&root, &["build-maps"], b"");

    let maps = MapSet::maps_dir(&root);
    let f2c = MultiMap::load(&maps, MapName::new(Entity::File, Entity::Commit)).unwrap();
    let c2p = MultiMap::load(&maps, MapName::new(Entity::Commit, Entity::Project)).unwrap();
    let composed = f2c.compose(&c2p).unwrap();

    let files: Vec<String> = f2c.keys().map(|k| Entity::File.render(k)).collect();
    let input: String = files.iter().map(|f| format!("{f}\n")).collect();
    let first = woc_ok(&root, &["get-values", "f2c"], input.as_bytes());
    // the shell step: split values, one key per line
    let mut chain: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for line in first.text().lines() {
        let mut parts = line.split(';');
        let file = parts.next().unwrap().to_owned();
        let commits: String = parts.map(|c| format!("{c}\n")).collect();
        let second = woc_ok(&root, &["get-values", "c2p"], commits.as_bytes());
        let projects = chain.entry(file).or_default();
        for l in second.text().lines() {
            projects.extend(l.split(';').skip(1).map(str::to_owned));
        }
    }
    assert_eq!(chain.len(), composed.key_count());
    for (k, vs) in composed.iter() {
        let want: BTreeSet<String> = vs.iter().map(|v| Entity::Project.render(v)).collect();
        assert_eq!(chain[&Entity::File.render(k)], want);
    }
}

#[test]
fn trend_hand_count_and_both_routes() {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("t/java");
    trend_repo(&repo);
    let root = dir.path().join("store");
    let list = write_named_list(&dir.path().join("list"), &[("t_java", &repo)]);
    woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");
    woc_ok(&root, &["build-maps"], b"");
    woc_ok(&root, &["langmap", "java"], b"");

    let via_f2c = woc_ok(&root, &["trend", "java"], b"");
    assert_eq!(via_f2c.rows(), TREND_EXPECTED);
    let via_langmap = woc_ok(&root, &["trend", "java", "--from", "langmap"], b"");
    assert_eq!(via_langmap.stdout, via_f2c.stdout);

    // a language with no files gives an empty table
    let py_none = woc_ok(&root, &["trend", "python"], b"");
    assert_eq!(py_none.rows(), ["2014;1;1;1"]);
    assert_eq!(woc(&root, &["trend", "cobol"], b"").code, 2);
}

fn gunzip(data: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    GzDecoder::new(data).read_to_end(&mut v).unwrap();
    v
}

#[test]
fn sort_merge_shard_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tk::Corpus::generate(&dir.path().join("c"), 2, &small_params(20));
    let list = corpus.write_list();
    let root = dir.path().join("store");
    woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");
    woc_ok(&root, &["build-maps"], b"");

    let map_dir = MapSet::maps_dir(&root).join("c2f");
    let shards: Vec<String> = (0..8).map(|s| map_dir.join(format!("{s}.s.gz")).display().to_string()).collect();
    let mut oracle: Vec<Vec<u8>> = Vec::new();
    for s in &shards {
        let data = gunzip(&std::fs::read(s).unwrap());
        oracle.extend(data.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(<[u8]>::to_vec));
    }
    oracle.sort();
    let mut want = Vec::new();
    for l in &oracle {
        want.extend_from_slice(l);
        want.push(b'\n');
    }

    let mut args = vec!["sort-merge", "--memory", "1"];
    args.extend(shards.iter().map(String::as_str));
    let out = woc_ok(&root, &args, b"");
    assert_eq!(gunzip(&out.stdout), want);

    // already sorted input through stdin comes back unchanged
    let again = woc_ok(&root, &["sort-merge", "--plain"], &want);
    assert_eq!(again.stdout, want);

    let doubled: Vec<u8> = [want.clone(), want.clone()].concat();
    let u = woc_ok(&root, &["sort-merge", "-u", "--plain", "-"], &doubled);
    assert_eq!(u.stdout, want);

    let target = dir.path().join("merged.gz");
    woc_ok(&root, &["sort-merge", "-o", target.to_str().unwrap(), &shards[0]], b"");
    assert!(!gunzip(&std::fs::read(target).unwrap()).is_empty() || oracle.is_empty());
}

fn kind_delta(before: &BTreeMap<ObjectKind, BTreeSet<ObjectId>>, after: &BTreeMap<ObjectKind, BTreeSet<ObjectId>>, k: ObjectKind) -> usize {
    let empty = BTreeSet::new();
    after.get(&k).unwrap_or(&empty).difference(before.get(&k).unwrap_or(&empty)).count()
}

#[test]
fn update_fetches_only_moved_repos() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tk::Corpus::generate(&dir.path().join("c"), 3, &small_params(15));
    let list = corpus.write_list();
    let root = dir.path().join("store");
    woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");

    let out = woc_ok(&root, &["update", list.to_str().unwrap()], b"");
    assert!(out.rows().iter().all(|r| r.split(';').nth(1) == Some("up-to-date")), "{}", out.text());
    assert!(out.stderr.contains("0 of 3 repositories fetched"));

    let repo = &corpus.repos[1].1;
    let before = tk::reachable_by_kind(repo);
    tk::append_commits(repo, "main", 3, "new/dir", 5);
    let after = tk::reachable_by_kind(repo);
    let out = woc_ok(&root, &["update", list.to_str().unwrap()], b"");
    assert!(out.stderr.contains("1 of 3 repositories fetched"));
    let row = out.rows().into_iter().find(|r| r.starts_with(&corpus.repos[1].0)).unwrap();
    let f: Vec<&str> = row.split(';').collect();
    assert_eq!(f[1], "fetched");
    let want = [ObjectKind::Commit, ObjectKind::Tree, ObjectKind::Blob, ObjectKind::Tag]
        .map(|k| kind_delta(&before, &after, k).to_string());
    assert_eq!(f[2..6], want);
}

#[test]
fn pipeline_stamps_one_version_and_pins_are_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tk::Corpus::generate(&dir.path().join("c"), 3, &small_params(20));
    let list = corpus.write_list();
    let root = dir.path().join("store");
    woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");
    woc_ok(&root, &["build-maps"], b"");
    woc_ok(&root, &["defork"], b"");
    woc_ok(&root, &["identities"], b"");
    woc_ok(&root, &["langmap", "python"], b"");

    let v = ObjectStore::open_read_only(&root).unwrap().version();
    let maps_dir = MapSet::maps_dir(&root);
    let (index_version, names) = MapSet::read_index(&root).unwrap();
    assert_eq!(index_version, v);
    assert_eq!(names.len(), 16);
    for name in names.iter().copied().chain(["p2p".parse().unwrap(), "a2a".parse().unwrap()]) {
        assert_eq!(MultiMap::load(&maps_dir, name).unwrap().store_version(), v, "{name}");
    }
    assert_eq!(woc_cli_langmap_version(&root, "python"), v);

    let stats = woc_ok(&root, &["stats"], b"");
    assert!(stats.text().contains(&format!("store_version;{v}\n")));

    let key = format!("{}\n", tk::all_commits(&corpus.repos[0].1)[0]);
    woc_ok(&root, &["--version", &v.to_string(), "get-values", "c2p"], key.as_bytes());
    let pinned = woc(&root, &["get-values", "c2p", "--version", &(v + 1).to_string()], key.as_bytes());
    assert_eq!(pinned.code, 2);
    assert!(pinned.stdout.is_empty());

    // move the store forward and rebuild only the basemaps: p2p is now
    // from another version and must be refused
    tk::append_commits(&corpus.repos[0].1, "main", 1, "", 9);
    woc_ok(&root, &["update", list.to_str().unwrap()], b"");
    woc_ok(&root, &["build-maps"], b"");
    let mixed = woc(&root, &["get-values", "p2p"], b"owner0_repo0\n");
    assert_eq!(mixed.code, 2, "{}", mixed.stderr);
    let stale = woc(&root, &["trend", "python", "--from", "langmap", "--version", &(v + 1).to_string()], b"");
    assert_eq!(stale.code, 2);
    woc_ok(&root, &["defork"], b"");
    woc_ok(&root, &["get-values", "p2p"], b"owner0_repo0\n");

    // writes cannot be pinned
    assert_eq!(woc(&root, &["--version", "1", "ingest", list.to_str().unwrap()], b"").code, 2);
}

fn woc_cli_langmap_version(root: &Path, lang: &str) -> u64 {
    woc_core::langmaps::langmap_version(root, lang).unwrap()
}

#[test]
fn bench_reports_fit_and_membership() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tk::Corpus::generate(&dir.path().join("c"), 1, &small_params(20));
    let list = corpus.write_list();
    let root = dir.path().join("store");
    woc_ok(&root, &["ingest", list.to_str().unwrap()], b"");
    woc_ok(&root, &["build-maps"], b"");
    let out = woc_ok(&root, &["bench", "b2c", "--sizes", "0,10,100", "--reps", "1", "--membership", "1000"], b"");
    let text = out.text();
    assert!(text.starts_with("size;seconds;keys_per_second\n0;"));
    for key in ["r2;", "sweep_seconds;", "membership_per_second;"] {
        assert!(text.contains(key), "{text}");
    }
    let sweep_lines: usize = text
        .lines()
        .find_map(|l| l.strip_prefix("sweep_lines;"))
        .unwrap()
        .parse()
        .unwrap();
    let b2c = MultiMap::load(&MapSet::maps_dir(&root), "b2c".parse().unwrap()).unwrap();
    assert_eq!(sweep_lines, b2c.pair_count());
}

#[test]
fn binary_exit_codes_and_streams() {
    let bin = env!("CARGO_BIN_EXE_woc");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str], input: &[u8]| {
        let mut child = std::process::Command::new(bin)
            .args(args)
            .env("WOC_STORE_ROOT", dir.path())
            .current_dir(dir.path())
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(input).unwrap();
        child.wait_with_output().unwrap()
    };
    let help = run(&["--help"], b"");
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("get-values"));
    assert!(help.stderr.is_empty());

    let no_maps = run(&["get-values", "c2p"], b"x\n");
    assert_eq!(no_maps.status.code(), Some(2));
    assert!(no_maps.stdout.is_empty());
    assert!(!no_maps.stderr.is_empty());

    let sorted = run(&["sort-merge", "--plain"], b"b\na\n");
    assert_eq!(sorted.status.code(), Some(0));
    assert_eq!(sorted.stdout, b"a\nb\n");
    assert_eq!(run(&["no-such-verb"], b"").status.code(), Some(2));
}
