//! Language classification by file extension and per-blob dependency
//! extraction.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use thiserror::Error;

use crate::augment::Partition;
use crate::gitcore::{ObjectId, ObjectKind};
use crate::store::{top_bits, ObjectStore, StoreError};
use crate::xref::{self, percent_decode, percent_encode, ChangeKind, Entity, MapName, MultiMap, XrefError};

#[derive(Debug, Error)]
pub enum LangError {
    #[error("extension {ext} claimed by both {first} and {second}")]
    DuplicateExtension {
        ext: String,
        first: String,
        second: String,
    },
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("store version mismatch: {left} vs {right}")]
    VersionMismatch { left: u64, right: u64 },
    #[error("expected {expected} map, got {got}")]
    WrongMap { expected: MapName, got: MapName },
    #[error("missing object {0}")]
    MissingObject(ObjectId),
    #[error("bad language map line: {0:?}")]
    BadRecord(String),
    #[error(transparent)]
    Xref(#[from] XrefError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<StoreError> for LangError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { id, .. } => LangError::MissingObject(id),
            other => LangError::Store(other),
        }
    }
}

pub type Result<T, E = LangError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Extractor {
    Python,
    Java,
    /// Classified but no modules extracted.
    None,
}

impl Extractor {
    pub fn extract(self, payload: &[u8]) -> Vec<String> {
        match self {
            Extractor::Python => extract_python_imports(payload),
            Extractor::Java => extract_java_imports(payload),
            Extractor::None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LangRule {
    pub language: String,
    /// Lowercase, with the leading dot.
    pub extensions: Vec<String>,
    pub extractor: Extractor,
}

impl LangRule {
    pub fn new(language: &str, extensions: &[&str], extractor: Extractor) -> Self {
        LangRule {
            language: language.to_owned(),
            extensions: extensions.iter().map(|e| e.to_lowercase()).collect(),
            extractor,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<LangRule>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::new(vec![
            LangRule::new("python", &[".py"], Extractor::Python),
            LangRule::new("java", &[".java"], Extractor::Java),
        ])
        .expect("built-in rules are consistent")
    }
}

impl RuleSet {
    pub fn new(rules: Vec<LangRule>) -> Result<Self> {
        let mut seen: Vec<(&str, &str)> = Vec::new();
        for r in &rules {
            for e in &r.extensions {
                if let Some((_, first)) = seen.iter().find(|(x, _)| *x == e) {
                    return Err(LangError::DuplicateExtension {
                        ext: e.clone(),
                        first: first.to_string(),
                        second: r.language.clone(),
                    });
                }
                seen.push((e, &r.language));
            }
        }
        Ok(RuleSet { rules })
    }

    pub fn rules(&self) -> &[LangRule] {
        &self.rules
    }

    pub fn rule(&self, language: &str) -> Result<&LangRule> {
        self.rules
            .iter()
            .find(|r| r.language == language)
            .ok_or_else(|| LangError::UnknownLanguage(language.to_owned()))
    }

    /// Rule whose extension is the longest case-insensitive suffix of the
    /// path's last component.
    pub fn classify(&self, path: &str) -> Option<&LangRule> {
        let base = path.rsplit('/').next().unwrap_or(path).to_lowercase();
        self.rules
            .iter()
            .flat_map(|r| r.extensions.iter().map(move |e| (e, r)))
            .filter(|(e, _)| base.len() > e.len() && base.ends_with(e.as_str()))
            .max_by_key(|(e, _)| e.len())
            .map(|(_, r)| r)
    }
}

/// Language of a path under the built-in rules.
pub fn classify_path(path: &str) -> Option<String> {
    RuleSet::default().classify(path).map(|r| r.language.clone())
}

fn is_word(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Leading `\w[\w.]*` of `s`.
fn dotted_name(s: &str) -> Option<&str> {
    let b = s.as_bytes();
    if b.first().is_none_or(|&c| !is_word(c)) {
        return None;
    }
    let end = b.iter().position(|&c| !(is_word(c) || c == b'.')).unwrap_or(b.len());
    Some(&s[..end])
}

fn strip_keyword<'a>(s: &'a str, kw: &str) -> Option<&'a str> {
    let rest = s.strip_prefix(kw)?;
    match rest.bytes().next() {
        None => Some(rest),
        Some(c) if c.is_ascii_whitespace() => Some(rest.trim_start()),
        _ => None,
    }
}

fn lines_of(payload: &[u8]) -> impl Iterator<Item = &str> {
    payload
        .split(|&b| b == b'\n')
        .filter_map(|l| std::str::from_utf8(l).ok())
}

/// Modules named by Python import statements, one logical line at a time:
/// `import A as x` gives A, `import A, B` gives A and B,
/// `from A import B` gives A.B, and `from A import` followed by nothing,
/// `*` or `(` gives A. Text after `#` or `;` is ignored. Binary payloads
/// give nothing.
pub fn extract_python_imports(payload: &[u8]) -> Vec<String> {
    if payload.contains(&0) {
        return Vec::new();
    }
    let mut out = BTreeSet::new();
    for line in lines_of(payload) {
        let line = line.split(['#', ';']).next().unwrap_or("").trim_end_matches('\r');
        let stmt = line.trim_start();
        if let Some(rest) = strip_keyword(stmt, "import") {
            for item in rest.split(',') {
                let item = item.trim();
                let item = match item.find(|c: char| c.is_ascii_whitespace()) {
                    Some(i) => &item[..i],
                    None => item,
                };
                if let Some(m) = dotted_name(item) {
                    out.insert(m.to_owned());
                }
            }
        } else if let Some(rest) = strip_keyword(stmt, "from") {
            let Some(module) = dotted_name(rest) else { continue };
            let after = &rest[module.len()..];
            if !after.starts_with(|c: char| c.is_ascii_whitespace()) {
                continue;
            }
            let Some(names) = strip_keyword(after.trim_start(), "import") else { continue };
            let first = names
                .bytes()
                .position(|c| !is_word(c))
                .map_or(names, |i| &names[..i]);
            if first.is_empty() {
                out.insert(module.to_owned());
            } else {
                out.insert(format!("{module}.{first}"));
            }
        }
    }
    out.into_iter().collect()
}

/// Names in `import [static] a.b.C;` and `import a.b.*;` statements.
pub fn extract_java_imports(payload: &[u8]) -> Vec<String> {
    if payload.contains(&0) {
        return Vec::new();
    }
    let mut out = BTreeSet::new();
    for line in lines_of(payload) {
        let line = line.split("//").next().unwrap_or("");
        let segments: Vec<&str> = line.split(';').collect();
        // the last segment has no terminating ';'
        for stmt in &segments[..segments.len() - 1] {
            let Some(mut rest) = strip_keyword(stmt.trim_start(), "import") else { continue };
            if let Some(r) = strip_keyword(rest, "static") {
                rest = r;
            }
            let rest = rest.trim_end();
            let Some(name) = dotted_name(rest) else { continue };
            let name = match &rest[name.len()..] {
                "" => name.trim_end_matches('.').to_owned(),
                "*" if name.ends_with('.') => format!("{name}*"),
                _ => continue,
            };
            out.insert(name);
        }
    }
    out.into_iter().collect()
}

/// One line of a language map.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DepRecord {
    pub commit: ObjectId,
    pub repository_name: String,
    pub timestamp: i64,
    pub author: String,
    pub blob: ObjectId,
    pub modules: Vec<String>,
}

impl fmt::Display for DepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{};{};{};{};{}",
            self.commit,
            percent_encode(self.repository_name.as_bytes()),
            self.timestamp,
            percent_encode(self.author.as_bytes()),
            self.blob
        )?;
        for m in &self.modules {
            write!(f, ";{m}")?;
        }
        Ok(())
    }
}

pub fn parse_dep_line(line: &str) -> Result<DepRecord> {
    let bad = || LangError::BadRecord(line.to_owned());
    let mut it = line.split(';');
    let mut next = || it.next().ok_or_else(bad);
    let commit = next()?.parse().map_err(|_| bad())?;
    let repo = percent_decode(next()?).ok_or_else(bad)?;
    let timestamp = next()?.parse().map_err(|_| bad())?;
    let author = percent_decode(next()?).ok_or_else(bad)?;
    let blob = next()?.parse().map_err(|_| bad())?;
    let modules = it.map(str::to_owned).collect();
    Ok(DepRecord {
        commit,
        repository_name: String::from_utf8(repo).map_err(|_| bad())?,
        timestamp,
        author: String::from_utf8(author).map_err(|_| bad())?,
        blob,
        modules,
    })
}

fn expect_map(m: &MultiMap, expected: MapName) -> Result<()> {
    if m.name() != expected {
        return Err(LangError::WrongMap {
            expected,
            got: m.name(),
        });
    }
    Ok(())
}

/// Commits that touched a file of `rule`'s language, via f2c.
pub fn language_commits(rules: &RuleSet, language: &str, f2c: &MultiMap) -> Result<BTreeSet<ObjectId>> {
    expect_map(f2c, MapName::new(Entity::File, Entity::Commit))?;
    rules.rule(language)?;
    let mut out = BTreeSet::new();
    for (path, commits) in f2c.iter() {
        let path = String::from_utf8_lossy(path);
        if rules.classify(&path).is_some_and(|r| r.language == language) {
            out.extend(commits.iter().filter_map(|c| ObjectId::from_slice(c)));
        }
    }
    Ok(out)
}

/// Dependency records for every (commit, blob) of the language, sorted by
/// commit then blob.
pub fn build_langmap(
    rules: &RuleSet,
    language: &str,
    f2c: &MultiMap,
    c2p: &MultiMap,
    store: &ObjectStore,
    partition: Option<&Partition>,
) -> Result<Vec<DepRecord>> {
    expect_map(c2p, MapName::new(Entity::Commit, Entity::Project))?;
    for m in [f2c, c2p] {
        if m.store_version() != store.version() {
            return Err(LangError::VersionMismatch {
                left: store.version(),
                right: m.store_version(),
            });
        }
    }
    let rule = rules.rule(language)?;
    let commits: Vec<ObjectId> = language_commits(rules, language, f2c)?.into_iter().collect();
    let per_commit: Vec<Vec<DepRecord>> = commits
        .par_iter()
        .map(|c| -> Result<Vec<DepRecord>> {
            let projects = c2p.values(c.as_bytes());
            let Some(first) = projects.first() else {
                return Ok(Vec::new());
            };
            let project = String::from_utf8_lossy(first).into_owned();
            let repository_name = partition
                .and_then(|p| p.canonical(&project))
                .map(str::to_owned)
                .unwrap_or(project);
            let (timestamp, author) = xref::commit_time_author(store, c)?;
            let blobs: BTreeSet<ObjectId> = xref::changed_blobs(store, c)?
                .into_iter()
                .filter(|r| r.kind != ChangeKind::Deleted)
                .filter(|r| rules.classify(&r.path).is_some_and(|x| x.language == rule.language))
                .map(|r| r.blob)
                .collect();
            blobs
                .into_iter()
                .map(|blob| {
                    let payload = store.get(ObjectKind::Blob, &blob)?;
                    Ok(DepRecord {
                        commit: *c,
                        repository_name: repository_name.clone(),
                        timestamp,
                        author: author.clone(),
                        blob,
                        modules: rule.extractor.extract(&payload),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<DepRecord> = per_commit.into_iter().flatten().collect();
    out.sort_by_key(|a| (a.commit, a.blob));
    Ok(out)
}

pub const LANGMAPS_DIR: &str = "langmaps";

pub fn langmap_dir(store_root: &Path, language: &str) -> PathBuf {
    store_root.join(LANGMAPS_DIR).join(language)
}

/// Writes `<root>/langmaps/<language>/<shard>.gz`, records sharded by the
/// commit's first byte, plus a `meta` file with the store version.
pub fn write_langmap(
    store_root: &Path,
    language: &str,
    shard_bits: u8,
    store_version: u64,
    records: &[DepRecord],
) -> Result<()> {
    let dir = langmap_dir(store_root, language);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    fs::create_dir_all(&dir)?;
    let mut writers = Vec::new();
    for s in 0..(1u32 << shard_bits) {
        let f = File::create(dir.join(format!("{s}.gz")))?;
        writers.push(GzEncoder::new(BufWriter::new(f), Compression::default()));
    }
    for r in records {
        let s = top_bits(r.commit.first_byte(), shard_bits) as usize;
        writeln!(writers[s], "{r}")?;
    }
    for w in writers {
        w.finish()?.flush()?;
    }
    fs::write(dir.join("meta"), format!("version {store_version}\nshard_bits {shard_bits}\n"))?;
    Ok(())
}

/// Store version a written language map was built from.
pub fn langmap_version(store_root: &Path, language: &str) -> Result<u64> {
    let meta = match fs::read_to_string(langmap_dir(store_root, language).join("meta")) {
        Ok(m) => m,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(LangError::UnknownLanguage(language.to_owned()))
        }
        Err(e) => return Err(e.into()),
    };
    meta.lines()
        .find_map(|l| l.strip_prefix("version ")?.parse().ok())
        .ok_or_else(|| LangError::BadRecord(meta.clone()))
}

/// Every record of a written language map, in shard order.
pub fn read_langmap(store_root: &Path, language: &str) -> Result<Vec<DepRecord>> {
    let dir = langmap_dir(store_root, language);
    let mut out = Vec::new();
    for s in 0u32.. {
        let path = dir.join(format!("{s}.gz"));
        if !path.exists() {
            if s == 0 {
                return Err(LangError::UnknownLanguage(language.to_owned()));
            }
            break;
        }
        let reader = BufReader::new(MultiGzDecoder::new(BufReader::new(File::open(&path)?)));
        for line in reader.lines() {
            let line = line?;
            if !line.is_empty() {
                out.push(parse_dep_line(&line)?);
            }
        }
    }
    Ok(out)
}
