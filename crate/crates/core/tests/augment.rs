use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use woc_core::augment::{
    self, AuthorProfiles, Partition, StopList, Thresholds,
};
use woc_core::gitcore::{hash_object, ObjectId, ObjectKind};
use woc_core::xref::{Entity, MapBuilder, MapName, MultiMap};

fn commit_id(n: usize) -> ObjectId {
    hash_object(ObjectKind::Blob, format!("commit {n}").as_bytes())
}

/// c2p and p2c from `project -> commit numbers`.
fn maps(projects: &BTreeMap<String, BTreeSet<usize>>, version: u64) -> (MultiMap, MultiMap) {
    let mut c2p = MapBuilder::new(MapName::new(Entity::Commit, Entity::Project), 3, version);
    for (p, cs) in projects {
        for c in cs {
            c2p.insert(commit_id(*c).as_bytes().to_vec(), p.clone().into_bytes());
        }
    }
    let c2p = c2p.build();
    let p2c = c2p.invert();
    (c2p, p2c)
}

/// Connected components by breadth-first search over the "share at least
/// `min` commits" graph, computed from explicit set intersections.
fn closure_oracle(projects: &BTreeMap<String, BTreeSet<usize>>, min: usize) -> BTreeSet<BTreeSet<String>> {
    let names: Vec<&String> = projects.keys().collect();
    let mut seen = BTreeSet::new();
    let mut out = BTreeSet::new();
    for start in &names {
        if seen.contains(*start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = vec![(*start).clone()];
        while let Some(p) = queue.pop() {
            if !comp.insert(p.clone()) {
                continue;
            }
            for q in &names {
                if !comp.contains(*q) && projects[&p].intersection(&projects[*q]).count() >= min {
                    queue.push((*q).clone());
                }
            }
        }
        seen.extend(comp.iter().cloned());
        out.insert(comp);
    }
    out
}

fn classes(p: &Partition) -> BTreeSet<BTreeSet<String>> {
    p.classes().map(|(_, m)| m.iter().cloned().collect()).collect()
}

fn fixture(spec: &[(&str, std::ops::Range<usize>)]) -> BTreeMap<String, BTreeSet<usize>> {
    let mut m: BTreeMap<String, BTreeSet<usize>> = BTreeMap::new();
    for (p, r) in spec {
        m.entry(p.to_string()).or_default().extend(r.clone());
    }
    m
}

#[test]
fn chained_sharing_is_one_class() {
    // A~B share 10..12, B~C share 20..21, A and C share nothing
    let projects = fixture(&[
        ("A", 0..12),
        ("B", 10..21),
        ("C", 20..30),
        ("D", 100..105),
        ("E", 200..201),
    ]);
    let (c2p, p2c) = maps(&projects, 1);
    let part = augment::defork(&c2p, &p2c, 1, &BTreeSet::new()).unwrap();
    assert_eq!(classes(&part), closure_oracle(&projects, 1));
    assert!(part.same_class("A", "C"));
    assert_eq!(part.class_count(), 3);
    // B has 11 commits, A 12, C 10
    assert_eq!(augment::canonical_project("C", &part).unwrap(), "A");
    assert!(augment::canonical_project("nope", &part).is_err());

    let strict = augment::defork(&c2p, &p2c, 2, &BTreeSet::new()).unwrap();
    assert_eq!(classes(&strict), closure_oracle(&projects, 2));
    assert!(strict.same_class("A", "B") && !strict.same_class("B", "C"));
}

#[test]
fn excluded_commits_do_not_link() {
    let projects = fixture(&[("A", 0..3), ("B", 2..5)]);
    let (c2p, p2c) = maps(&projects, 1);
    let excluded: BTreeSet<ObjectId> = [commit_id(2)].into();
    let part = augment::defork(&c2p, &p2c, 1, &excluded).unwrap();
    assert!(!part.same_class("A", "B"));
}

#[test]
fn defork_refuses_mixed_versions() {
    let projects = fixture(&[("A", 0..3)]);
    let (c2p, _) = maps(&projects, 1);
    let (_, p2c) = maps(&projects, 2);
    assert!(matches!(
        augment::defork(&c2p, &p2c, 1, &BTreeSet::new()),
        Err(augment::AugmentError::VersionMismatch { .. })
    ));
}

#[test]
fn p2p_map_composes() {
    let projects = fixture(&[("A", 0..5), ("Afork", 0..3), ("B", 10..12)]);
    let (c2p, p2c) = maps(&projects, 4);
    let part = augment::defork(&c2p, &p2c, 1, &BTreeSet::new()).unwrap();
    let p2p = part.to_map(Entity::Project, 3, 4);
    assert_eq!(p2p.name().to_string(), "p2p");
    let corrected = c2p.compose(&p2p).unwrap();
    assert_eq!(corrected.values(commit_id(1).as_bytes()), &[b"A".to_vec()]);
    assert_eq!(corrected.values(commit_id(10).as_bytes()), &[b"B".to_vec()]);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn defork_matches_closure_and_is_monotone(
        sets in proptest::collection::vec(proptest::collection::btree_set(0usize..40, 1..8), 1..12),
        shuffle_seed in any::<u64>(),
    ) {
        let projects: BTreeMap<String, BTreeSet<usize>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| (format!("p{i:02}"), s.clone()))
            .collect();
        let (c2p, p2c) = maps(&projects, 1);
        let mut previous: Option<Partition> = None;
        for min in 1..=3 {
            let part = augment::defork(&c2p, &p2c, min, &BTreeSet::new()).unwrap();
            prop_assert_eq!(classes(&part), closure_oracle(&projects, min));
            if let Some(prev) = &previous {
                // every class at a higher threshold sits inside one class of the lower
                for (_, members) in part.classes() {
                    let c = prev.class_of(&members[0]);
                    prop_assert!(members.iter().all(|m| prev.class_of(m) == c));
                }
            }
            previous = Some(part);
        }

        // renaming-free reordering: same pairs fed in another order
        let mut pairs: Vec<(Vec<u8>, Vec<u8>)> = c2p
            .iter()
            .flat_map(|(k, vs)| vs.iter().map(move |v| (k.clone(), v.clone())))
            .collect();
        let n = pairs.len();
        for i in 0..n {
            let j = (shuffle_seed as usize).wrapping_mul(i + 7) % n;
            pairs.swap(i, j);
        }
        let mut b = MapBuilder::new(c2p.name(), 3, 1);
        for (k, v) in pairs {
            b.insert(k, v);
        }
        let c2p2 = b.build();
        let p2c2 = c2p2.invert();
        prop_assert_eq!(
            augment::defork(&c2p2, &p2c2, 1, &BTreeSet::new()).unwrap(),
            augment::defork(&c2p, &p2c, 1, &BTreeSet::new()).unwrap()
        );
    }
}

struct LabeledFixture {
    touches: BTreeMap<String, BTreeMap<String, usize>>,
    pairs: Vec<(bool, String, String)>,
}

fn load_fixture() -> LabeledFixture {
    let text = include_str!("fixtures/identity_pairs.txt");
    let mut touches = BTreeMap::new();
    let mut pairs = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("touch ") {
            let (author, files) = rest.split_once(" | ").unwrap();
            let files: BTreeMap<String, usize> = files
                .split_whitespace()
                .map(|f| {
                    let (p, n) = f.rsplit_once(':').unwrap();
                    (p.to_owned(), n.parse().unwrap())
                })
                .collect();
            touches.insert(author.to_owned(), files);
        } else if let Some(rest) = line.strip_prefix("pair ") {
            let parts: Vec<&str> = rest.split(" | ").collect();
            pairs.push((parts[0] == "same", parts[1].to_owned(), parts[2].to_owned()));
        }
    }
    LabeledFixture { touches, pairs }
}

/// a2c and c2f that reproduce the fixture's touch counts: one synthetic
/// commit per touch.
fn fixture_maps(f: &LabeledFixture) -> (MultiMap, MultiMap) {
    let mut a2c = MapBuilder::new(MapName::new(Entity::Author, Entity::Commit), 2, 1);
    let mut c2f = MapBuilder::new(MapName::new(Entity::Commit, Entity::File), 2, 1);
    let mut n = 0;
    for (a, files) in &f.touches {
        for (path, count) in files {
            for _ in 0..*count {
                n += 1;
                let c = commit_id(n).as_bytes().to_vec();
                a2c.insert(a.clone().into_bytes(), c.clone());
                c2f.insert(c, path.clone().into_bytes());
            }
        }
    }
    (a2c.build(), c2f.build())
}

#[test]
fn identity_fixture_agreement() {
    let f = load_fixture();
    assert_eq!(f.pairs.len(), 20);
    let (a2c, c2f) = fixture_maps(&f);
    let profiles = AuthorProfiles::build(&a2c, &c2f).unwrap();
    for (a, files) in &f.touches {
        assert_eq!(profiles.touches(a).unwrap(), files);
    }
    let stop = StopList::default();
    let pairs = augment::candidate_pairs(&profiles, &stop, 1000);
    let signals = augment::score_pairs(&profiles, &pairs).unwrap();
    let part = augment::resolve_identities(&profiles, &signals, &Thresholds::default(), &stop);
    let mut agree = 0;
    for (same, a, b) in &f.pairs {
        let got = part.same_class(a, b);
        if got == *same {
            agree += 1;
        } else {
            eprintln!("disagree: {a} / {b} labeled {same}");
        }
    }
    assert!(agree >= 18, "{agree}/20");
}

#[test]
fn signals_are_symmetric_and_reflexive() {
    let f = load_fixture();
    let (a2c, c2f) = fixture_maps(&f);
    let profiles = AuthorProfiles::build(&a2c, &c2f).unwrap();
    let authors: Vec<&str> = profiles.authors().collect();
    for a in &authors {
        let s = profiles.signals(a, a).unwrap();
        assert_eq!((s.name_sim, s.email_sim, s.file_jaccard), (1.0, 1.0, 1.0));
        for b in &authors {
            let x = profiles.signals(a, b).unwrap();
            let y = profiles.signals(b, a).unwrap();
            assert_eq!(x.name_sim.to_bits(), y.name_sim.to_bits());
            assert_eq!(x.email_sim.to_bits(), y.email_sim.to_bits());
            assert_eq!(x.file_jaccard.to_bits(), y.file_jaccard.to_bits());
            assert_eq!((x.commit_count_a, x.commit_count_b), (y.commit_count_b, y.commit_count_a));
            for v in [x.name_sim, x.email_sim, x.file_jaccard] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn jaccard_against_multiset_oracle() {
    // 3 files shared out of 5 distinct, with touch counts as weights
    let a = "J Smith <js@x.com>";
    let b = "John Smith <js@x.com>";
    let ta = [("f1", 2), ("f2", 1), ("f3", 1), ("f4", 1)];
    let tb = [("f1", 1), ("f2", 3), ("f3", 1), ("f5", 2)];
    let mut a2c = MapBuilder::new(MapName::new(Entity::Author, Entity::Commit), 2, 1);
    let mut c2f = MapBuilder::new(MapName::new(Entity::Commit, Entity::File), 2, 1);
    let mut n = 0;
    for (author, t) in [(a, &ta[..]), (b, &tb[..])] {
        for (f, k) in t {
            for _ in 0..*k {
                n += 1;
                let c = commit_id(n).as_bytes().to_vec();
                a2c.insert(author.as_bytes().to_vec(), c.clone());
                c2f.insert(c, f.as_bytes().to_vec());
            }
        }
    }
    let (a2c, c2f) = (a2c.build(), c2f.build());
    let s = augment::identity_signals(a, b, &a2c, &c2f).unwrap();

    // multiset intersection / union over expanded lists
    let expand = |t: &[(&str, usize)]| -> Vec<String> {
        t.iter().flat_map(|(f, k)| std::iter::repeat_n(f.to_string(), *k)).collect()
    };
    let (ea, mut eb) = (expand(&ta), expand(&tb));
    let mut inter = 0;
    for x in &ea {
        if let Some(i) = eb.iter().position(|y| y == x) {
            eb.remove(i);
            inter += 1;
        }
    }
    let union = ea.len() + expand(&tb).len() - inter;
    assert_eq!(s.file_jaccard, inter as f64 / union as f64);
    assert_eq!(s.email_sim, 1.0);
    assert!(augment::identity_signals(a, "Nobody <x@y>", &a2c, &c2f).is_err());
}

#[test]
fn nothing_above_threshold_gives_singletons() {
    let mut t = BTreeMap::new();
    for (a, f) in [("Ann A <ann@a.org>", "x"), ("Zed Z <zed@z.org>", "y")] {
        t.insert(a.to_string(), [(f.to_string(), 1)].into());
    }
    let profiles = AuthorProfiles::from_touches(t);
    let stop = StopList::default();
    let pairs = augment::candidate_pairs(&profiles, &stop, 10);
    let signals = augment::score_pairs(&profiles, &pairs).unwrap();
    let part = augment::resolve_identities(&profiles, &signals, &Thresholds::default(), &stop);
    assert_eq!(part.class_count(), 2);
}

#[test]
fn partition_survives_map_roundtrip() {
    let projects = fixture(&[("A", 0..5), ("Afork", 0..3), ("B", 10..12), ("C", 11..13), ("D", 50..51)]);
    let (c2p, p2c) = maps(&projects, 1);
    let part = augment::defork(&c2p, &p2c, 1, &BTreeSet::new()).unwrap();
    let back = Partition::from_map(&part.to_map(Entity::Project, 3, 1)).unwrap();
    assert_eq!(back, part);
}
