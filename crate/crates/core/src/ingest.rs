//! Getting objects from repositories into the store.
//!
//! Heads come from `git ls-remote`, objects from a long-lived
//! `git cat-file --batch` session. Reachability is walked here rather than
//! delegated to `git rev-list`, so the same walk serves full extraction and
//! incremental fetch (which stops at anything the store already holds).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Instant;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::gitcore::{self, EntryKind, GitObjectRecord, ObjectId, ObjectKind};
use crate::store::{ObjectStore, PutResult, StoreError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read corpus list {path}: {source}")]
    UnreadableList { path: PathBuf, source: io::Error },
    #[error("repository {repo} unreachable: {detail}")]
    RepoUnreachable { repo: String, detail: String },
    #[error("precondition failed: {0}")]
    PreconditionFailed(String),
    #[error("membership journal: {0}")]
    Journal(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoRef {
    pub name: String,
    pub source: String,
    pub last_seen_heads: BTreeMap<String, ObjectId>,
}

impl RepoRef {
    pub fn new(name: impl Into<String>, source: impl Into<String>) -> Self {
        RepoRef {
            name: name.into(),
            source: source.into(),
            last_seen_heads: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    DuplicateName { line: usize, name: String },
    InvalidName { line: usize, name: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicateName { line, name } => {
                write!(f, "line {line}: duplicate project name {name:?}, skipped")
            }
            Diagnostic::InvalidName { line, name } => {
                write!(f, "line {line}: project name {name:?} contains ';' or whitespace, skipped")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Discovery {
    pub repos: Vec<RepoRef>,
    pub diagnostics: Vec<Diagnostic>,
}

/// `owner_repo` from the last two segments of a path or URL.
pub fn derive_name(source: &str) -> String {
    let trimmed = source.trim_end_matches('/');
    let segments: Vec<&str> = trimmed
        .rsplit(['/', ':', '\\'])
        .filter(|s| !s.is_empty())
        .take(2)
        .collect();
    let mut parts: Vec<String> = segments
        .iter()
        .rev()
        .map(|s| s.strip_suffix(".git").unwrap_or(s).to_owned())
        .collect();
    parts.retain(|p| !p.is_empty());
    parts.join("_")
}

/// Parses a corpus list: `name<TAB>source` or bare `source` per line,
/// `#` starts a comment line. Relative sources resolve against `base`.
pub fn discover(text: &str, base: Option<&Path>) -> Discovery {
    let mut out = Discovery::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, source) = match line.split_once('\t') {
            Some((n, s)) => (n.trim().to_owned(), s.trim().to_owned()),
            None => (derive_name(line), line.to_owned()),
        };
        if name.is_empty()
            || name.contains(';')
            || name.contains(char::is_whitespace)
            || source.is_empty()
        {
            out.diagnostics.push(Diagnostic::InvalidName {
                line: line_no,
                name,
            });
            continue;
        }
        if !seen.insert(name.clone()) {
            out.diagnostics.push(Diagnostic::DuplicateName {
                line: line_no,
                name,
            });
            continue;
        }
        let source = match base {
            Some(b) if !is_url(&source) && Path::new(&source).is_relative() => {
                b.join(&source).to_string_lossy().into_owned()
            }
            _ => source,
        };
        out.repos.push(RepoRef::new(name, source));
    }
    out
}

pub fn discover_file(path: &Path) -> Result<Discovery> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::UnreadableList {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(discover(&text, path.parent()))
}

fn is_url(source: &str) -> bool {
    source.contains("://") || (source.contains('@') && source.contains(':'))
}

fn git() -> Command {
    let mut cmd = Command::new("git");
    cmd.env("GIT_TERMINAL_PROMPT", "0");
    cmd
}

fn unreachable_err(repo: &RepoRef, detail: impl Into<String>) -> IngestError {
    IngestError::RepoUnreachable {
        repo: repo.name.clone(),
        detail: detail.into(),
    }
}

/// Branch heads via `git ls-remote --heads`; no objects are enumerated.
pub fn heads_of(repo: &RepoRef) -> Result<BTreeMap<String, ObjectId>> {
    let out = git()
        .args(["ls-remote", "--heads", "--", &repo.source])
        .stdin(Stdio::null())
        .output()
        .map_err(|e| unreachable_err(repo, e.to_string()))?;
    if !out.status.success() {
        return Err(unreachable_err(
            repo,
            String::from_utf8_lossy(&out.stderr).trim().to_owned(),
        ));
    }
    let mut heads = BTreeMap::new();
    for line in String::from_utf8_lossy(&out.stdout).lines() {
        let Some((hex, refname)) = line.split_once('\t') else {
            continue;
        };
        let Some(branch) = refname.strip_prefix("refs/heads/") else {
            continue;
        };
        let id = ObjectId::from_hex(hex)
            .map_err(|e| unreachable_err(repo, format!("ls-remote: {e}")))?;
        heads.insert(branch.to_owned(), id);
    }
    Ok(heads)
}

pub fn needs_update(repo: &RepoRef, store: &ObjectStore) -> Result<bool> {
    let heads = heads_of(repo)?;
    Ok(heads_need_update(&heads, store))
}

fn heads_need_update(heads: &BTreeMap<String, ObjectId>, store: &ObjectStore) -> bool {
    !heads
        .values()
        .all(|id| store.contains(ObjectKind::Commit, id))
}

/// Source of raw objects for one repository.
pub trait ObjectSource {
    fn read(&mut self, id: &ObjectId) -> Result<Option<(ObjectKind, Vec<u8>)>>;
}

/// A `git cat-file --batch` process answering one id at a time.
pub struct CatFile {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    repo: String,
}

impl CatFile {
    pub fn spawn(git_dir: &Path, repo_name: &str) -> Result<Self> {
        let mut child = git()
            .arg("-C")
            .arg(git_dir)
            .args(["cat-file", "--batch"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| IngestError::RepoUnreachable {
                repo: repo_name.to_owned(),
                detail: format!("spawn git cat-file: {e}"),
            })?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped"));
        let stdout = BufReader::with_capacity(1 << 16, child.stdout.take().expect("piped"));
        Ok(CatFile {
            child,
            stdin,
            stdout,
            repo: repo_name.to_owned(),
        })
    }

    fn broken(&self, what: &str) -> IngestError {
        IngestError::RepoUnreachable {
            repo: self.repo.clone(),
            detail: format!("git cat-file: {what}"),
        }
    }
}

impl ObjectSource for CatFile {
    fn read(&mut self, id: &ObjectId) -> Result<Option<(ObjectKind, Vec<u8>)>> {
        writeln!(self.stdin, "{id}")?;
        self.stdin.flush()?;
        let mut header = String::new();
        if self.stdout.read_line(&mut header)? == 0 {
            return Err(self.broken("unexpected end of output"));
        }
        let header = header.trim_end();
        let mut parts = header.split(' ');
        let _oid = parts.next();
        let kind = match parts.next() {
            Some("missing") => return Ok(None),
            Some(k) => ObjectKind::from_name(k.as_bytes())
                .ok_or_else(|| self.broken(&format!("unknown type in {header:?}")))?,
            None => return Err(self.broken(&format!("bad header {header:?}"))),
        };
        let size: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.broken(&format!("bad size in {header:?}")))?;
        let mut payload = vec![0u8; size];
        self.stdout.read_exact(&mut payload)?;
        let mut lf = [0u8; 1];
        self.stdout.read_exact(&mut lf)?;
        Ok(Some((kind, payload)))
    }
}

impl Drop for CatFile {
    fn drop(&mut self) {
        let _ = self.stdin.flush();
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Local git directory for `repo`: the source itself when it is a local
/// path, otherwise a bare mirror under `cache_dir` (cloned or refreshed).
pub fn local_git_dir(repo: &RepoRef, cache_dir: &Path) -> Result<PathBuf> {
    let p = Path::new(&repo.source);
    if !is_url(&repo.source) && p.exists() {
        return Ok(p.to_path_buf());
    }
    let target = cache_dir.join(format!("{}.git", repo.name));
    let status = if target.exists() {
        git()
            .arg("-C")
            .arg(&target)
            .args(["fetch", "--quiet", "--prune", "origin", "+refs/heads/*:refs/heads/*"])
            .stdin(Stdio::null())
            .status()
    } else {
        fs::create_dir_all(cache_dir)?;
        git()
            .args(["clone", "--quiet", "--bare", "--", &repo.source])
            .arg(&target)
            .stdin(Stdio::null())
            .status()
    };
    match status {
        Ok(s) if s.success() => Ok(target),
        Ok(s) => Err(unreachable_err(repo, format!("git exited with {s}"))),
        Err(e) => Err(unreachable_err(repo, e.to_string())),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KindCounts {
    pub seen: u64,
    pub inserted: u64,
    pub duplicates: u64,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub id: ObjectId,
    pub kind: ObjectKind,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub repo: RepoRef,
    pub counts: BTreeMap<ObjectKind, KindCounts>,
    pub rejected: Vec<Rejection>,
    /// Commits newly journaled for this project.
    pub journaled: u64,
    /// True when objects were not read because every head was already
    /// stored; only membership was recorded.
    pub membership_only: bool,
    pub elapsed: f64,
}

impl IngestReport {
    fn new(repo: RepoRef) -> Self {
        IngestReport {
            repo,
            counts: ObjectKind::ALL
                .into_iter()
                .map(|k| (k, KindCounts::default()))
                .collect(),
            rejected: Vec::new(),
            journaled: 0,
            membership_only: false,
            elapsed: 0.0,
        }
    }

    pub fn get(&self, kind: ObjectKind) -> KindCounts {
        self.counts.get(&kind).copied().unwrap_or_default()
    }

    pub fn inserted_total(&self) -> u64 {
        self.counts.values().map(|c| c.inserted).sum()
    }

    pub fn seen_total(&self) -> u64 {
        self.counts.values().map(|c| c.seen).sum()
    }

    pub fn is_consistent(&self) -> bool {
        self.counts
            .values()
            .all(|c| c.seen == c.inserted + c.duplicates + c.rejected)
    }
}

/// Walks everything reachable from `heads`, validating and storing each
/// object. With `prune`, anything already stored is not descended into.
pub fn walk_into_store(
    source: &mut dyn ObjectSource,
    heads: &BTreeMap<String, ObjectId>,
    store: &mut ObjectStore,
    prune: bool,
    report: &mut IngestReport,
) -> Result<()> {
    let mut stack: Vec<(ObjectKind, ObjectId)> = heads
        .values()
        .rev()
        .map(|id| (ObjectKind::Commit, *id))
        .collect();
    let mut visited: HashSet<ObjectId> = HashSet::new();
    while let Some((expected, id)) = stack.pop() {
        if !visited.insert(id) {
            continue;
        }
        if prune && store.contains(expected, &id) {
            continue;
        }
        let Some((kind, payload)) = source.read(&id)? else {
            return Err(IngestError::RepoUnreachable {
                repo: report.repo.name.clone(),
                detail: format!("object {id} referenced but missing"),
            });
        };
        let counts = report.counts.entry(kind).or_default();
        counts.seen += 1;
        let record = gitcore::parse_object(kind, &payload).ok();
        match gitcore::validate(id, kind, payload) {
            Ok(obj) => match store.put(&obj)? {
                PutResult::Inserted => counts.inserted += 1,
                PutResult::Duplicate => counts.duplicates += 1,
            },
            Err((_, reason)) => {
                counts.rejected += 1;
                report.rejected.push(Rejection {
                    id,
                    kind,
                    reason: reason.to_string(),
                });
                continue;
            }
        }
        match record {
            Some(GitObjectRecord::Commit(c)) => {
                for p in c.parents.iter().rev() {
                    stack.push((ObjectKind::Commit, *p));
                }
                stack.push((ObjectKind::Tree, c.tree));
            }
            Some(GitObjectRecord::Tree(t)) => {
                for e in t.entries.iter().rev() {
                    match e.entry_kind {
                        EntryKind::Tree => stack.push((ObjectKind::Tree, e.id)),
                        EntryKind::Blob => stack.push((ObjectKind::Blob, e.id)),
                        EntryKind::Gitlink => {}
                    }
                }
            }
            Some(GitObjectRecord::Tag(t)) => stack.push((t.target_kind, t.object)),
            Some(GitObjectRecord::Blob(_)) | None => {}
        }
    }
    Ok(())
}

/// Append-only record of which commits belong to which project, stored as
/// concatenated gzip members of `project;commit-hex` lines.
#[derive(Debug)]
pub struct MembershipJournal {
    path: PathBuf,
    members: HashMap<String, HashSet<ObjectId>>,
    /// Projects in first-seen order.
    order: Vec<String>,
}

impl MembershipJournal {
    pub const FILE_NAME: &'static str = "membership.gz";

    pub fn path_in(store_root: &Path) -> PathBuf {
        store_root.join(Self::FILE_NAME)
    }

    pub fn open(store_root: &Path) -> Result<Self> {
        let path = Self::path_in(store_root);
        let mut journal = MembershipJournal {
            path: path.clone(),
            members: HashMap::new(),
            order: Vec::new(),
        };
        if path.exists() {
            for entry in read_journal(&path)? {
                let (project, commit) = entry?;
                journal.record(project, commit);
            }
        }
        Ok(journal)
    }

    fn record(&mut self, project: String, commit: ObjectId) -> bool {
        if !self.members.contains_key(&project) {
            self.order.push(project.clone());
        }
        self.members.entry(project).or_default().insert(commit)
    }

    pub fn knows_project(&self, project: &str) -> bool {
        self.members.contains_key(project)
    }

    pub fn projects(&self) -> &[String] {
        &self.order
    }

    pub fn commits_of(&self, project: &str) -> Option<&HashSet<ObjectId>> {
        self.members.get(project)
    }

    pub fn len(&self) -> usize {
        self.members.values().map(HashSet::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All `(project, commit)` pairs, projects in first-seen order and
    /// commits sorted within a project.
    pub fn pairs(&self) -> Vec<(String, ObjectId)> {
        let mut out = Vec::with_capacity(self.len());
        for p in &self.order {
            let mut commits: Vec<_> = self.members[p].iter().copied().collect();
            commits.sort_unstable();
            out.extend(commits.into_iter().map(|c| (p.clone(), c)));
        }
        out
    }

    /// Records every commit reachable from `heads` (through stored commit
    /// records) that is not yet journaled for `project`. Returns how many
    /// were added.
    pub fn extend_from_store(
        &mut self,
        project: &str,
        heads: &BTreeMap<String, ObjectId>,
        store: &ObjectStore,
    ) -> Result<u64> {
        let known = self.members.get(project);
        let mut new = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<ObjectId> = heads.values().copied().collect();
        while let Some(id) = stack.pop() {
            if !visited.insert(id) || known.is_some_and(|k| k.contains(&id)) {
                continue;
            }
            if !store.contains(ObjectKind::Commit, &id) {
                // rejected or absent: nothing to attribute past this point
                continue;
            }
            let c = store.commit_record(&id)?;
            new.push(id);
            stack.extend(c.parents.iter().copied());
        }
        if new.is_empty() && self.members.contains_key(project) {
            return Ok(0);
        }
        new.sort_unstable();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let mut gz = GzEncoder::new(BufWriter::new(file), Compression::default());
        for c in &new {
            writeln!(gz, "{project};{c}")?;
        }
        gz.finish()?.flush()?;
        if !self.members.contains_key(project) {
            self.order.push(project.to_owned());
            self.members.insert(project.to_owned(), HashSet::new());
        }
        let set = self.members.get_mut(project).expect("inserted");
        set.extend(new.iter().copied());
        Ok(new.len() as u64)
    }
}

/// Streams `(project, commit)` pairs from a journal file.
pub fn read_journal(
    path: &Path,
) -> Result<impl Iterator<Item = Result<(String, ObjectId)>>> {
    let file = File::open(path)?;
    let reader = BufReader::new(MultiGzDecoder::new(BufReader::new(file)));
    Ok(reader.lines().enumerate().map(|(i, line)| {
        let line = line?;
        parse_journal_line(&line)
            .ok_or_else(|| IngestError::Journal(format!("line {}: malformed {line:?}", i + 1)))
    }))
}

pub fn parse_journal_line(line: &str) -> Option<(String, ObjectId)> {
    let (project, hex) = line.rsplit_once(';')?;
    if project.is_empty() || project.contains(';') {
        return None;
    }
    Some((project.to_owned(), ObjectId::from_hex(hex).ok()?))
}

/// Extracts every object reachable from the repo's branch heads.
pub fn extract_all(
    repo: &RepoRef,
    store: &mut ObjectStore,
    journal: &mut MembershipJournal,
    cache_dir: &Path,
) -> Result<IngestReport> {
    let start = Instant::now();
    let heads = heads_of(repo)?;
    let dir = local_git_dir(repo, cache_dir)?;
    let mut source = CatFile::spawn(&dir, &repo.name)?;
    let mut report = IngestReport::new(repo.clone());
    walk_into_store(&mut source, &heads, store, false, &mut report)?;
    report.journaled = journal.extend_from_store(&repo.name, &heads, store)?;
    store.commit()?;
    report.repo.last_seen_heads = heads;
    report.elapsed = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Extracts only the objects reachable from current heads that the store
/// lacks.
pub fn fetch_incremental(
    repo: &RepoRef,
    store: &mut ObjectStore,
    journal: &mut MembershipJournal,
    cache_dir: &Path,
) -> Result<IngestReport> {
    let start = Instant::now();
    let heads = heads_of(repo)?;
    if !heads_need_update(&heads, store) {
        return Err(IngestError::PreconditionFailed(format!(
            "{}: every head is already stored",
            repo.name
        )));
    }
    let dir = local_git_dir(repo, cache_dir)?;
    let mut source = CatFile::spawn(&dir, &repo.name)?;
    let mut report = IngestReport::new(repo.clone());
    walk_into_store(&mut source, &heads, store, true, &mut report)?;
    report.journaled = journal.extend_from_store(&repo.name, &heads, store)?;
    store.commit()?;
    report.repo.last_seen_heads = heads;
    report.elapsed = start.elapsed().as_secs_f64();
    Ok(report)
}

/// What [`ingest_repo`] decided to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngestAction {
    Extracted,
    /// New project whose heads are all stored already (a fork or mirror):
    /// membership journaled, no objects read.
    MembershipOnly,
    UpToDate,
}

/// Corpus-level ingest step for one repo: full extraction unless every head
/// is already stored.
pub fn ingest_repo(
    repo: &RepoRef,
    store: &mut ObjectStore,
    journal: &mut MembershipJournal,
    cache_dir: &Path,
) -> Result<(IngestAction, IngestReport)> {
    let start = Instant::now();
    let heads = heads_of(repo)?;
    if heads_need_update(&heads, store) {
        return Ok((IngestAction::Extracted, extract_all(repo, store, journal, cache_dir)?));
    }
    let mut report = IngestReport::new(repo.clone());
    report.repo.last_seen_heads = heads.clone();
    let action = if journal.knows_project(&repo.name) {
        IngestAction::UpToDate
    } else {
        report.membership_only = true;
        IngestAction::MembershipOnly
    };
    report.journaled = journal.extend_from_store(&repo.name, &heads, store)?;
    report.elapsed = start.elapsed().as_secs_f64();
    Ok((action, report))
}
