//! Corrections layered on the basemaps: grouping forks into one project
//! class and merging author ids that belong to one person.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::gitcore::{split_ident, ObjectId};
use crate::xref::{Entity, MapBuilder, MapName, MultiMap, Token};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("store version mismatch: {left} vs {right}")]
    VersionMismatch { left: u64, right: u64 },
    #[error("unknown project {0}")]
    UnknownProject(String),
    #[error("unknown author {0}")]
    UnknownAuthor(String),
    #[error("expected {expected} map, got {got}")]
    WrongMap { expected: MapName, got: MapName },
}

pub type Result<T, E = AugmentError> = std::result::Result<T, E>;

/// Union-find over dense indices with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when the two were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Equivalence classes over a set of names, each with a representative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    class_of: BTreeMap<String, usize>,
    representatives: Vec<String>,
    members: Vec<Vec<String>>,
}

impl Partition {
    /// Groups `elements` by the disjoint set (indexed like `elements`).
    /// The representative of a class is the member with the highest
    /// weight, ties going to the smallest name. Classes are numbered in
    /// representative order, so the result does not depend on how the
    /// elements were enumerated.
    pub fn from_sets(elements: &[String], dsu: &mut DisjointSet, weight: impl Fn(&str) -> usize) -> Self {
        let mut groups: HashMap<usize, Vec<String>> = HashMap::new();
        for (i, e) in elements.iter().enumerate() {
            groups.entry(dsu.find(i)).or_default().push(e.clone());
        }
        let mut classes: Vec<(String, Vec<String>)> = groups
            .into_values()
            .map(|mut members| {
                members.sort();
                members.dedup();
                let rep = members
                    .iter()
                    .max_by(|a, b| weight(a).cmp(&weight(b)).then_with(|| b.cmp(a)))
                    .expect("non-empty class")
                    .clone();
                (rep, members)
            })
            .collect();
        classes.sort();
        let mut class_of = BTreeMap::new();
        let mut representatives = Vec::with_capacity(classes.len());
        let mut members = Vec::with_capacity(classes.len());
        for (i, (rep, m)) in classes.into_iter().enumerate() {
            for e in &m {
                class_of.insert(e.clone(), i);
            }
            representatives.push(rep);
            members.push(m);
        }
        Partition {
            class_of,
            representatives,
            members,
        }
    }

    /// Reads back a map written by [`Partition::to_map`].
    pub fn from_map(map: &MultiMap) -> Result<Self> {
        if map.name().source != map.name().target {
            return Err(AugmentError::WrongMap {
                expected: MapName::new(map.name().source, map.name().source),
                got: map.name(),
            });
        }
        let mut by_rep: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (k, v) in map.iter() {
            let rep = v.first().map(text).unwrap_or_else(|| text(k));
            by_rep.entry(rep).or_default().push(text(k));
        }
        let mut class_of = BTreeMap::new();
        let mut representatives = Vec::new();
        let mut members = Vec::new();
        for (i, (rep, mut m)) in by_rep.into_iter().enumerate() {
            m.sort();
            for e in &m {
                class_of.insert(e.clone(), i);
            }
            representatives.push(rep);
            members.push(m);
        }
        Ok(Partition {
            class_of,
            representatives,
            members,
        })
    }

    pub fn class_count(&self) -> usize {
        self.representatives.len()
    }

    pub fn len(&self) -> usize {
        self.class_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_of.is_empty()
    }

    pub fn class_of(&self, element: &str) -> Option<usize> {
        self.class_of.get(element).copied()
    }

    pub fn representative(&self, class: usize) -> &str {
        &self.representatives[class]
    }

    pub fn members(&self, class: usize) -> &[String] {
        &self.members[class]
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.representatives
            .iter()
            .map(String::as_str)
            .zip(self.members.iter().map(Vec::as_slice))
    }

    pub fn canonical(&self, element: &str) -> Option<&str> {
        self.class_of(element).map(|c| self.representative(c))
    }

    pub fn same_class(&self, a: &str, b: &str) -> bool {
        matches!((self.class_of(a), self.class_of(b)), (Some(x), Some(y)) if x == y)
    }

    /// `element -> representative` for every element, as a map over one
    /// entity (p2p or a2a).
    pub fn to_map(&self, entity: Entity, shard_bits: u8, store_version: u64) -> MultiMap {
        let mut b = MapBuilder::new(MapName::new(entity, entity), shard_bits, store_version);
        for (e, &c) in &self.class_of {
            b.insert(e.clone().into_bytes(), self.representatives[c].clone().into_bytes());
        }
        b.build()
    }
}

/// Representative of the class holding `project`.
pub fn canonical_project<'a>(project: &str, partition: &'a Partition) -> Result<&'a str> {
    partition
        .canonical(project)
        .ok_or_else(|| AugmentError::UnknownProject(project.to_owned()))
}

fn expect_map(m: &MultiMap, expected: MapName) -> Result<()> {
    if m.name() != expected {
        return Err(AugmentError::WrongMap {
            expected,
            got: m.name(),
        });
    }
    Ok(())
}

fn text(t: &Token) -> String {
    String::from_utf8_lossy(t).into_owned()
}

/// Groups projects that share at least `min_shared_commits` commits,
/// closed transitively. Commits in `excluded` do not link projects.
pub fn defork(
    c2p: &MultiMap,
    p2c: &MultiMap,
    min_shared_commits: usize,
    excluded: &BTreeSet<ObjectId>,
) -> Result<Partition> {
    expect_map(c2p, MapName::new(Entity::Commit, Entity::Project))?;
    expect_map(p2c, MapName::new(Entity::Project, Entity::Commit))?;
    if c2p.store_version() != p2c.store_version() {
        return Err(AugmentError::VersionMismatch {
            left: c2p.store_version(),
            right: p2c.store_version(),
        });
    }
    let mut universe: BTreeSet<String> = p2c.keys().map(text).collect();
    for (_, ps) in c2p.iter() {
        universe.extend(ps.iter().map(text));
    }
    let elements: Vec<String> = universe.into_iter().collect();
    let index: HashMap<&str, usize> = elements
        .iter()
        .enumerate()
        .map(|(i, e)| (e.as_str(), i))
        .collect();
    let mut dsu = DisjointSet::new(elements.len());
    let is_excluded = |c: &Token| {
        ObjectId::from_slice(c).is_some_and(|id| excluded.contains(&id))
    };
    let min = min_shared_commits.max(1);
    if min == 1 {
        for (c, ps) in c2p.iter() {
            if is_excluded(c) {
                continue;
            }
            let first = index[text(&ps[0]).as_str()];
            for p in &ps[1..] {
                dsu.union(first, index[text(p).as_str()]);
            }
        }
    } else {
        let mut shared: HashMap<(usize, usize), usize> = HashMap::new();
        for (c, ps) in c2p.iter() {
            if is_excluded(c) || ps.len() < 2 {
                continue;
            }
            let ids: Vec<usize> = ps.iter().map(|p| index[text(p).as_str()]).collect();
            for (i, &a) in ids.iter().enumerate() {
                for &b in &ids[i + 1..] {
                    *shared.entry((a.min(b), a.max(b))).or_default() += 1;
                }
            }
        }
        let mut edges: Vec<(usize, usize)> = shared
            .into_iter()
            .filter(|&(_, n)| n >= min)
            .map(|(e, _)| e)
            .collect();
        edges.sort_unstable();
        for (a, b) in edges {
            dsu.union(a, b);
        }
    }
    Ok(Partition::from_sets(&elements, &mut dsu, |p| {
        p2c.values(p.as_bytes()).len()
    }))
}

/// Pairwise evidence that two author ids are one person.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySignal {
    pub pair: (String, String),
    pub name_sim: f64,
    pub email_sim: f64,
    pub file_jaccard: f64,
    pub commit_count_a: usize,
    pub commit_count_b: usize,
    /// Reserved for a commit-message style score; unused by the rule.
    pub style_sim: Option<f64>,
}

/// Lowercased name and email parts of an author id.
pub fn name_email(author: &str) -> (String, String) {
    let (n, e) = split_ident(author.as_bytes());
    (
        String::from_utf8_lossy(n).trim().to_lowercase(),
        String::from_utf8_lossy(e).trim().to_lowercase(),
    )
}

fn string_sim(a: &str, b: &str) -> f64 {
    if a.is_empty() || b.is_empty() {
        // two missing fields are not evidence of anything
        return 0.0;
    }
    strsim::normalized_damerau_levenshtein(a, b)
}

/// Σ min / Σ max over per-file weights. Two empty profiles give 0.
pub fn weighted_jaccard(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> f64 {
    let mut num = 0usize;
    let mut den = 0usize;
    for (f, &wa) in a {
        let wb = b.get(f).copied().unwrap_or(0);
        num += wa.min(wb);
        den += wa.max(wb);
    }
    for (f, &wb) in b {
        if !a.contains_key(f) {
            den += wb;
        }
    }
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-author commit counts and file touch counts, from a2c and c2f.
#[derive(Debug, Clone, Default)]
pub struct AuthorProfiles {
    commits: BTreeMap<String, usize>,
    touches: BTreeMap<String, BTreeMap<String, usize>>,
}

impl AuthorProfiles {
    pub fn build(a2c: &MultiMap, c2f: &MultiMap) -> Result<Self> {
        expect_map(a2c, MapName::new(Entity::Author, Entity::Commit))?;
        expect_map(c2f, MapName::new(Entity::Commit, Entity::File))?;
        if a2c.store_version() != c2f.store_version() {
            return Err(AugmentError::VersionMismatch {
                left: a2c.store_version(),
                right: c2f.store_version(),
            });
        }
        let mut p = AuthorProfiles::default();
        for (a, cs) in a2c.iter() {
            let a = text(a);
            let files = p.touches.entry(a.clone()).or_default();
            for c in cs {
                for f in c2f.values(c) {
                    *files.entry(text(f)).or_default() += 1;
                }
            }
            p.commits.insert(a, cs.len());
        }
        Ok(p)
    }

    /// Profiles given directly as `author -> (file -> touches)`; commit
    /// counts default to the largest touch count.
    pub fn from_touches(touches: BTreeMap<String, BTreeMap<String, usize>>) -> Self {
        let commits = touches
            .iter()
            .map(|(a, f)| (a.clone(), f.values().copied().max().unwrap_or(0)))
            .collect();
        AuthorProfiles { commits, touches }
    }

    pub fn authors(&self) -> impl Iterator<Item = &str> {
        self.touches.keys().map(String::as_str)
    }

    pub fn contains(&self, author: &str) -> bool {
        self.touches.contains_key(author)
    }

    pub fn commit_count(&self, author: &str) -> usize {
        self.commits.get(author).copied().unwrap_or(0)
    }

    pub fn touches(&self, author: &str) -> Option<&BTreeMap<String, usize>> {
        self.touches.get(author)
    }

    pub fn signals(&self, a1: &str, a2: &str) -> Result<IdentitySignal> {
        let t1 = self
            .touches(a1)
            .ok_or_else(|| AugmentError::UnknownAuthor(a1.to_owned()))?;
        let t2 = self
            .touches(a2)
            .ok_or_else(|| AugmentError::UnknownAuthor(a2.to_owned()))?;
        let (n1, e1) = name_email(a1);
        let (n2, e2) = name_email(a2);
        let same = a1 == a2;
        Ok(IdentitySignal {
            pair: (a1.to_owned(), a2.to_owned()),
            name_sim: if same { 1.0 } else { string_sim(&n1, &n2) },
            email_sim: if same { 1.0 } else { string_sim(&e1, &e2) },
            file_jaccard: if same { 1.0 } else { weighted_jaccard(t1, t2) },
            commit_count_a: self.commit_count(a1),
            commit_count_b: self.commit_count(a2),
            style_sim: None,
        })
    }
}

/// Signals for one pair straight from the maps.
pub fn identity_signals(a1: &str, a2: &str, a2c: &MultiMap, c2f: &MultiMap) -> Result<IdentitySignal> {
    for a in [a1, a2] {
        if !a2c.contains_key(a.as_bytes()) {
            return Err(AugmentError::UnknownAuthor(a.to_owned()));
        }
    }
    let mut b = MapBuilder::new(a2c.name(), a2c.shard_bits(), a2c.store_version());
    for a in [a1, a2] {
        b.extend_key(a.as_bytes().to_vec(), a2c.values(a.as_bytes()).iter().cloned());
    }
    AuthorProfiles::build(&b.build(), c2f)?.signals(a1, a2)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub email: f64,
    pub name: f64,
    pub files: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            email: 0.95,
            name: 0.9,
            files: 0.2,
        }
    }
}

impl Thresholds {
    pub fn merges(&self, s: &IdentitySignal) -> bool {
        s.email_sim >= self.email || (s.name_sim >= self.name && s.file_jaccard >= self.files)
    }
}

/// Author ids that are not people and never take part in merging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopList {
    words: BTreeSet<String>,
}

pub const DEFAULT_STOP_WORDS: &[&str] = &[
    "root",
    "admin",
    "administrator",
    "nobody",
    "anonymous",
    "anon",
    "unknown",
    "none",
    "guest",
    "user",
    "student",
    "test",
    "jenkins",
    "travis",
    "github",
    "gitlab",
    "bitbucket",
    "buildbot",
    "dependabot",
    "renovate",
    "openstack",
    "ubuntu",
    "localhost",
    "noreply",
    "no-reply",
];

impl Default for StopList {
    fn default() -> Self {
        StopList::new(DEFAULT_STOP_WORDS.iter().copied())
    }
}

impl StopList {
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        StopList {
            words: words
                .into_iter()
                .map(|w| w.as_ref().trim().to_lowercase())
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// One word per line; `#` starts a comment.
    pub fn from_text(text: &str) -> Self {
        StopList::new(text.lines().map(|l| l.split('#').next().unwrap_or("")))
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.words.iter().map(String::as_str)
    }

    /// Stopped when the whole name, the email local part, or the whole
    /// email is a stop word, or the name is a `[bot]` account.
    pub fn is_stopped(&self, author: &str) -> bool {
        let (name, email) = name_email(author);
        let local = email.split('@').next().unwrap_or("");
        name.ends_with("[bot]")
            || self.words.contains(&name)
            || self.words.contains(local)
            || self.words.contains(&email)
    }
}

/// Pairs worth scoring: a shared email local part, an identical name, or
/// at least one shared file. Files touched by more than `bucket_cap`
/// authors do not generate pairs.
pub fn candidate_pairs(profiles: &AuthorProfiles, stop: &StopList, bucket_cap: usize) -> Vec<(String, String)> {
    let authors: Vec<&str> = profiles.authors().filter(|a| !stop.is_stopped(a)).collect();
    let mut by_local: HashMap<String, Vec<usize>> = HashMap::new();
    let mut by_name: HashMap<String, Vec<usize>> = HashMap::new();
    let mut by_file: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, a) in authors.iter().enumerate() {
        let (name, email) = name_email(a);
        let local = email.split('@').next().unwrap_or("").to_owned();
        if !local.is_empty() {
            by_local.entry(local).or_default().push(i);
        }
        if !name.is_empty() {
            by_name.entry(name).or_default().push(i);
        }
        for f in profiles.touches(a).into_iter().flat_map(|t| t.keys()) {
            by_file.entry(f.as_str()).or_default().push(i);
        }
    }
    let mut pairs = BTreeSet::new();
    let buckets = by_local
        .values()
        .chain(by_name.values())
        .chain(by_file.values().filter(|b| b.len() <= bucket_cap));
    for bucket in buckets {
        for (x, &i) in bucket.iter().enumerate() {
            for &j in &bucket[x + 1..] {
                let (a, b) = (authors[i], authors[j]);
                pairs.insert(if a < b { (a, b) } else { (b, a) });
            }
        }
    }
    pairs
        .into_iter()
        .map(|(a, b)| (a.to_owned(), b.to_owned()))
        .collect()
}

/// Signals for every pair, computed in parallel.
pub fn score_pairs(profiles: &AuthorProfiles, pairs: &[(String, String)]) -> Result<Vec<IdentitySignal>> {
    pairs
        .par_iter()
        .map(|(a, b)| profiles.signals(a, b))
        .collect()
}

/// Merges pairs that pass the threshold rule and closes transitively.
/// Stop-listed ids stay singletons. The representative is the member with
/// the most commits.
pub fn resolve_identities(
    profiles: &AuthorProfiles,
    signals: &[IdentitySignal],
    thresholds: &Thresholds,
    stop: &StopList,
) -> Partition {
    let elements: Vec<String> = profiles.authors().map(str::to_owned).collect();
    let index: HashMap<&str, usize> = elements
        .iter()
        .enumerate()
        .map(|(i, e)| (e.as_str(), i))
        .collect();
    let mut dsu = DisjointSet::new(elements.len());
    for s in signals {
        let (a, b) = (&s.pair.0, &s.pair.1);
        if stop.is_stopped(a) || stop.is_stopped(b) || !thresholds.merges(s) {
            continue;
        }
        if let (Some(&i), Some(&j)) = (index.get(a.as_str()), index.get(b.as_str())) {
            dsu.union(i, j);
        }
    }
    Partition::from_sets(&elements, &mut dsu, |a| profiles.commit_count(a))
}
