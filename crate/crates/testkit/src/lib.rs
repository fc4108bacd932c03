//! Test fixtures: deterministic git repositories built with
//! `git fast-import`, and thin wrappers over reference git commands used as
//! independent oracles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use woc_core::gitcore::{ObjectId, ObjectKind};

/// Runs git in `dir` and returns stdout; panics with stderr on failure.
pub fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .arg("-C")
        .arg(dir)
        .args(args)
        .env("GIT_CONFIG_NOSYSTEM", "1")
        .env("HOME", dir)
        .output()
        .expect("git on PATH");
    assert!(
        out.status.success(),
        "git {:?} in {} failed: {}",
        args,
        dir.display(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf8 git output")
}

pub fn init_bare(path: &Path) {
    std::fs::create_dir_all(path).unwrap();
    git(path, &["init", "--quiet", "--bare", "--initial-branch=main"]);
}

/// `git clone --bare` of `src` into `dst`.
pub fn clone_bare(src: &Path, dst: &Path) {
    let parent = dst.parent().unwrap();
    std::fs::create_dir_all(parent).unwrap();
    git(
        parent,
        &[
            "clone",
            "--quiet",
            "--bare",
            "--no-local",
            src.to_str().unwrap(),
            dst.to_str().unwrap(),
        ],
    );
}

#[derive(Debug, Clone)]
pub enum FileOp {
    Modify { path: String, content: Vec<u8> },
    Delete { path: String },
    Rename { from: String, to: String },
}

#[derive(Debug, Clone)]
pub enum Parent {
    Mark(usize),
    /// Existing branch tip in the repository (`refs/heads/<name>^0`).
    Branch(String),
}

#[derive(Debug, Clone)]
pub struct CommitSpec {
    pub branch: String,
    pub author: String,
    pub committer: Option<String>,
    pub time: i64,
    pub tz: String,
    pub message: String,
    pub from: Option<Parent>,
    pub merges: Vec<Parent>,
    pub ops: Vec<FileOp>,
}

impl CommitSpec {
    pub fn new(branch: &str, author: &str, time: i64) -> Self {
        CommitSpec {
            branch: branch.to_owned(),
            author: author.to_owned(),
            committer: None,
            time,
            tz: "+0000".to_owned(),
            message: format!("commit at {time}\n"),
            from: None,
            merges: Vec::new(),
            ops: Vec::new(),
        }
    }

    pub fn from(mut self, p: Parent) -> Self {
        self.from = Some(p);
        self
    }

    pub fn merge(mut self, p: Parent) -> Self {
        self.merges.push(p);
        self
    }

    pub fn tz(mut self, tz: &str) -> Self {
        self.tz = tz.to_owned();
        self
    }

    pub fn message(mut self, m: &str) -> Self {
        self.message = m.to_owned();
        self
    }

    pub fn write(mut self, path: &str, content: impl Into<Vec<u8>>) -> Self {
        self.ops.push(FileOp::Modify {
            path: path.to_owned(),
            content: content.into(),
        });
        self
    }

    pub fn delete(mut self, path: &str) -> Self {
        self.ops.push(FileOp::Delete {
            path: path.to_owned(),
        });
        self
    }

    pub fn rename(mut self, from: &str, to: &str) -> Self {
        self.ops.push(FileOp::Rename {
            from: from.to_owned(),
            to: to.to_owned(),
        });
        self
    }
}

/// Accumulates commits and feeds them to `git fast-import` in one go.
/// Marks are 1-based in the order commits were added.
#[derive(Default)]
pub struct FastImport {
    stream: Vec<u8>,
    marks: usize,
}

impl FastImport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn commit(&mut self, spec: CommitSpec) -> usize {
        self.marks += 1;
        let mark = self.marks;
        let s = &mut self.stream;
        let committer = spec.committer.as_deref().unwrap_or(&spec.author);
        let mut head = String::new();
        writeln!(head, "commit refs/heads/{}", spec.branch).unwrap();
        writeln!(head, "mark :{mark}").unwrap();
        writeln!(head, "author {} {} {}", spec.author, spec.time, spec.tz).unwrap();
        writeln!(head, "committer {} {} {}", committer, spec.time, spec.tz).unwrap();
        writeln!(head, "data {}", spec.message.len()).unwrap();
        s.extend_from_slice(head.as_bytes());
        s.extend_from_slice(spec.message.as_bytes());
        s.push(b'\n');
        let parent_ref = |p: &Parent| match p {
            Parent::Mark(m) => format!(":{m}"),
            Parent::Branch(b) => format!("refs/heads/{b}^0"),
        };
        if let Some(p) = &spec.from {
            s.extend_from_slice(format!("from {}\n", parent_ref(p)).as_bytes());
        }
        for p in &spec.merges {
            s.extend_from_slice(format!("merge {}\n", parent_ref(p)).as_bytes());
        }
        for op in &spec.ops {
            match op {
                FileOp::Modify { path, content } => {
                    s.extend_from_slice(format!("M 100644 inline {path}\n").as_bytes());
                    s.extend_from_slice(format!("data {}\n", content.len()).as_bytes());
                    s.extend_from_slice(content);
                    s.push(b'\n');
                }
                FileOp::Delete { path } => {
                    s.extend_from_slice(format!("D {path}\n").as_bytes());
                }
                FileOp::Rename { from, to } => {
                    s.extend_from_slice(format!("R {from} {to}\n").as_bytes());
                }
            }
        }
        s.push(b'\n');
        mark
    }

    /// Runs the import into the (bare) repository at `repo`.
    pub fn run(self, repo: &Path) {
        let mut child = Command::new("git")
            .arg("-C")
            .arg(repo)
            .args(["fast-import", "--quiet", "--force"])
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::piped())
            .spawn()
            .expect("git fast-import");
        child
            .stdin
            .take()
            .unwrap()
            .write_all(&self.stream)
            .unwrap();
        let out = child.wait_with_output().unwrap();
        assert!(
            out.status.success(),
            "fast-import failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

/// Shape of a generated repository.
#[derive(Debug, Clone)]
pub struct RepoParams {
    pub commits: usize,
    pub branches: usize,
    pub merges: usize,
    pub authors: Vec<String>,
    pub base_time: i64,
    /// Seconds between consecutive commits.
    pub step: i64,
}

impl Default for RepoParams {
    fn default() -> Self {
        RepoParams {
            commits: 55,
            branches: 2,
            merges: 2,
            authors: default_authors(),
            base_time: 1_388_534_400, // 2014-01-01
            step: 86_400 * 9,
        }
    }
}

pub fn default_authors() -> Vec<String> {
    [
        "Audris Mockus <audris@utk.edu>",
        "Jane Doe <jane@example.org>",
        "J Doe <jane@example.org>",
        "Bob Stone <bob@stone.dev>",
        "Carol Ng <carol.ng@uni.edu>",
        "root <root@localhost>",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

const DIRS: [&str; 6] = ["src", "lib", "core", "util", "deep", "pkg"];
const TZS: [&str; 4] = ["+0000", "-0400", "+0530", "-0700"];

fn random_path(rng: &mut ChaCha8Rng) -> String {
    let depth = rng.gen_range(0..=5);
    let mut parts: Vec<String> = (0..depth)
        .map(|_| DIRS.choose(rng).unwrap().to_string())
        .collect();
    let ext = ["txt", "py", "java", "md", "c"].choose(rng).unwrap();
    parts.push(format!("f{}.{}", rng.gen_range(0..40), ext));
    parts.join("/")
}

fn random_content(rng: &mut ChaCha8Rng, path: &str) -> Vec<u8> {
    if rng.gen_bool(0.08) {
        return Vec::new();
    }
    let mut s = String::new();
    if path.ends_with(".py") {
        let mods = ["os", "sys", "json", "numpy as np", "collections"];
        for _ in 0..rng.gen_range(1..3) {
            writeln!(s, "import {}", mods.choose(rng).unwrap()).unwrap();
        }
        if rng.gen_bool(0.5) {
            s.push_str("from collections import OrderedDict\n");
        }
    } else if path.ends_with(".java") {
        let mods = ["java.util.List", "java.io.File", "org.junit.Test"];
        writeln!(s, "import {};", mods.choose(rng).unwrap()).unwrap();
        s.push_str("class X {}\n");
    }
    writeln!(s, "// {} {}", path, rng.gen::<u32>()).unwrap();
    s.into_bytes()
}

/// Generates a repository at `path` with random but reproducible history:
/// commits spread over branches, merges back into `main`, renames,
/// deletions, empty files and directories up to five deep.
pub fn generate_repo(path: &Path, seed: u64, params: &RepoParams) {
    init_bare(path);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fi = FastImport::new();
    let mut time = params.base_time + (seed as i64 % 97) * 3_600;

    struct Branch {
        name: String,
        tip: Option<usize>,
        files: BTreeMap<String, Vec<u8>>,
        changed: BTreeSet<String>,
    }
    let mut main = Branch {
        name: "main".into(),
        tip: None,
        files: BTreeMap::new(),
        changed: BTreeSet::new(),
    };
    let mut side: Vec<Branch> = Vec::new();
    let mut merges_left = params.merges;
    let mut deep_done = false;

    for i in 0..params.commits {
        time += params.step / 2 + rng.gen_range(0..params.step);
        let author = params.authors.choose(&mut rng).unwrap().clone();
        let tz = *TZS.choose(&mut rng).unwrap();

        // open a side branch from main
        if side.len() < params.branches.saturating_sub(1) && main.tip.is_some() && rng.gen_bool(0.15) {
            side.push(Branch {
                name: format!("topic{}", side.len() + 1),
                tip: main.tip,
                files: main.files.clone(),
                changed: BTreeSet::new(),
            });
        }

        // merge a side branch back
        let remaining = params.commits - i;
        if merges_left > 0
            && !side.is_empty()
            && side.iter().any(|b| !b.changed.is_empty())
            && (rng.gen_bool(0.2) || remaining <= merges_left * 2)
        {
            let idx = side.iter().position(|b| !b.changed.is_empty()).unwrap();
            let b = &mut side[idx];
            let mut spec = CommitSpec::new("main", &author, time)
                .tz(tz)
                .message(&format!("Merge {} into main\n", b.name));
            spec.from = main.tip.map(Parent::Mark);
            spec.merges.push(Parent::Mark(b.tip.unwrap()));
            for p in &b.changed {
                match b.files.get(p) {
                    Some(c) if main.files.get(p) != Some(c) => {
                        spec = spec.write(p, c.clone());
                        main.files.insert(p.clone(), c.clone());
                    }
                    None if main.files.contains_key(p) => {
                        spec = spec.delete(p);
                        main.files.remove(p);
                    }
                    _ => {}
                }
            }
            if rng.gen_bool(0.3) {
                let p = format!("MERGE_NOTES_{i}.txt");
                let c = format!("resolved {i}\n").into_bytes();
                spec = spec.write(&p, c.clone());
                main.files.insert(p, c);
            }
            b.changed.clear();
            b.files = main.files.clone();
            let mark = fi.commit(spec);
            main.tip = Some(mark);
            b.tip = Some(mark);
            merges_left -= 1;
            continue;
        }

        let on_side = !side.is_empty() && rng.gen_bool(0.35);
        let br: &mut Branch = if on_side {
            let n = side.len();
            &mut side[rng.gen_range(0..n)]
        } else {
            &mut main
        };
        let mut spec = CommitSpec::new(&br.name, &author, time).tz(tz);
        spec.from = br.tip.map(Parent::Mark);
        let n_ops = rng.gen_range(1..=3);
        for _ in 0..n_ops {
            let roll: f64 = rng.gen();
            let existing: Vec<String> = br.files.keys().cloned().collect();
            if !deep_done {
                let p = "a/b/c/d/e/deep.txt".to_string();
                let c = b"deep\n".to_vec();
                spec = spec.write(&p, c.clone());
                br.files.insert(p.clone(), c);
                br.changed.insert(p);
                deep_done = true;
            } else if roll < 0.1 && existing.len() > 3 {
                let victim = existing.choose(&mut rng).unwrap().clone();
                spec = spec.delete(&victim);
                br.files.remove(&victim);
                br.changed.insert(victim);
            } else if roll < 0.2 && existing.len() > 3 {
                let from = existing.choose(&mut rng).unwrap().clone();
                let to = random_path(&mut rng);
                if br.files.contains_key(&to) || spec_touches(&spec, &from) || spec_touches(&spec, &to) {
                    continue;
                }
                spec = spec.rename(&from, &to);
                let c = br.files.remove(&from).unwrap();
                br.files.insert(to.clone(), c);
                br.changed.insert(from);
                br.changed.insert(to);
            } else if roll < 0.55 && !existing.is_empty() {
                let p = existing.choose(&mut rng).unwrap().clone();
                if spec_touches(&spec, &p) {
                    continue;
                }
                let c = random_content(&mut rng, &p);
                spec = spec.write(&p, c.clone());
                br.files.insert(p.clone(), c);
                br.changed.insert(p);
            } else {
                let p = random_path(&mut rng);
                if spec_touches(&spec, &p) {
                    continue;
                }
                let c = random_content(&mut rng, &p);
                spec = spec.write(&p, c.clone());
                br.files.insert(p.clone(), c);
                br.changed.insert(p);
            }
        }
        let mark = fi.commit(spec);
        br.tip = Some(mark);
    }
    fi.run(path);
}

fn spec_touches(spec: &CommitSpec, path: &str) -> bool {
    spec.ops.iter().any(|op| match op {
        FileOp::Modify { path: p, .. } | FileOp::Delete { path: p } => p == path,
        FileOp::Rename { from, to } => from == path || to == path,
    })
}

/// Appends `n` commits to `branch` of an existing repo, each touching one
/// new file under `dir`.
pub fn append_commits(repo: &Path, branch: &str, n: usize, dir: &str, seed: u64) -> Vec<ObjectId> {
    let mut fi = FastImport::new();
    let mut prev: Option<usize> = None;
    for i in 0..n {
        let path = if dir.is_empty() {
            format!("new_{seed}_{i}.txt")
        } else {
            format!("{dir}/new_{seed}_{i}.txt")
        };
        let mut spec = CommitSpec::new(branch, "Upstream Dev <up@stream.io>", 1_500_000_000 + seed as i64 * 1000 + i as i64)
            .write(&path, format!("upstream {seed} {i}\n"));
        spec.from = Some(match prev {
            Some(m) => Parent::Mark(m),
            None => Parent::Branch(branch.to_owned()),
        });
        prev = Some(fi.commit(spec));
    }
    fi.run(repo);
    let tip = git(repo, &["rev-parse", &format!("refs/heads/{branch}")]);
    vec![tip.trim().parse().unwrap()]
}

/// A corpus of generated repositories.
pub struct Corpus {
    pub root: PathBuf,
    pub repos: Vec<(String, PathBuf)>,
}

impl Corpus {
    /// `n` repositories `owner{i}/repo{i}` under `root`.
    pub fn generate(root: &Path, n: usize, params: &RepoParams) -> Self {
        let mut repos = Vec::new();
        for i in 0..n {
            let path = root.join(format!("owner{i}")).join(format!("repo{i}"));
            generate_repo(&path, 1000 + i as u64, params);
            repos.push((format!("owner{i}_repo{i}"), path));
        }
        Corpus {
            root: root.to_path_buf(),
            repos,
        }
    }

    /// Corpus list text with bare sources (names are derived).
    pub fn list_text(&self) -> String {
        self.repos
            .iter()
            .map(|(_, p)| format!("{}\n", p.display()))
            .collect()
    }

    pub fn write_list(&self) -> PathBuf {
        let p = self.root.join("corpus.list");
        std::fs::write(&p, self.list_text()).unwrap();
        p
    }
}

// ---- reference git oracles ----

/// `git rev-list --objects --branches`: every object reachable from a branch.
pub fn reachable_objects(repo: &Path) -> BTreeSet<ObjectId> {
    git(repo, &["rev-list", "--objects", "--branches"])
        .lines()
        .map(|l| l.split(' ').next().unwrap().parse().unwrap())
        .collect()
}

/// Reachable objects grouped by kind via `cat-file --batch-check`.
pub fn reachable_by_kind(repo: &Path) -> BTreeMap<ObjectKind, BTreeSet<ObjectId>> {
    let ids = reachable_objects(repo);
    let mut input = String::new();
    for id in &ids {
        writeln!(input, "{id}").unwrap();
    }
    let mut child = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["cat-file", "--batch-check"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(input.as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    let mut by_kind: BTreeMap<ObjectKind, BTreeSet<ObjectId>> = BTreeMap::new();
    for line in String::from_utf8(out.stdout).unwrap().lines() {
        let mut parts = line.split(' ');
        let id: ObjectId = parts.next().unwrap().parse().unwrap();
        let kind = ObjectKind::from_name(parts.next().unwrap().as_bytes()).unwrap();
        by_kind.entry(kind).or_default().insert(id);
    }
    by_kind
}

pub fn all_commits(repo: &Path) -> Vec<ObjectId> {
    git(repo, &["rev-list", "--branches"])
        .lines()
        .map(|l| l.parse().unwrap())
        .collect()
}

pub fn merge_commits(repo: &Path) -> Vec<ObjectId> {
    git(repo, &["rev-list", "--merges", "--branches"])
        .lines()
        .map(|l| l.parse().unwrap())
        .collect()
}

/// `git show-ref --heads` as branch → id.
pub fn show_ref_heads(repo: &Path) -> BTreeMap<String, ObjectId> {
    git(repo, &["show-ref", "--heads"])
        .lines()
        .map(|l| {
            let (id, r) = l.split_once(' ').unwrap();
            (
                r.strip_prefix("refs/heads/").unwrap().to_owned(),
                id.parse().unwrap(),
            )
        })
        .collect()
}

/// `git ls-tree -r` of a commit: (path, blob) pairs.
pub fn ls_tree_r(repo: &Path, commit: &ObjectId) -> BTreeSet<(String, ObjectId)> {
    git(repo, &["ls-tree", "-r", "-z", &commit.to_hex()])
        .split('\0')
        .filter(|l| !l.is_empty())
        .filter_map(|l| {
            let (meta, path) = l.split_once('\t').unwrap();
            let mut parts = meta.split(' ');
            let _mode = parts.next();
            let kind = parts.next().unwrap();
            let id = parts.next().unwrap().parse().unwrap();
            (kind == "blob").then(|| (path.to_owned(), id))
        })
        .collect()
}

/// `git ls-tree` (non-recursive) of a commit's root: (mode, name, id).
pub fn ls_tree_root(repo: &Path, commit: &ObjectId) -> Vec<(String, String, ObjectId)> {
    git(repo, &["ls-tree", "-z", &commit.to_hex()])
        .split('\0')
        .filter(|l| !l.is_empty())
        .map(|l| {
            let (meta, name) = l.split_once('\t').unwrap();
            let mut parts = meta.split(' ');
            let mode = parts.next().unwrap().to_owned();
            let _kind = parts.next();
            let id = parts.next().unwrap().parse().unwrap();
            (mode, name.to_owned(), id)
        })
        .collect()
}

/// `git cat-file <kind> <id>` payload.
pub fn cat_file(repo: &Path, kind: ObjectKind, id: &ObjectId) -> Vec<u8> {
    let out = Command::new("git")
        .arg("-C")
        .arg(repo)
        .args(["cat-file", kind.as_str(), &id.to_hex()])
        .output()
        .unwrap();
    assert!(out.status.success());
    out.stdout
}

/// `git hash-object --stdin -t <kind>` without writing.
pub fn hash_object_git(kind: ObjectKind, payload: &[u8]) -> ObjectId {
    let mut child = Command::new("git")
        .args(["hash-object", "--stdin", "--literally", "-t", kind.as_str()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(payload).unwrap();
    let out = child.wait_with_output().unwrap();
    String::from_utf8(out.stdout).unwrap().trim().parse().unwrap()
}

/// Ingests every repo of a corpus into a fresh store under `root/store`
/// and commits it.
pub fn ingest_corpus(
    corpus: &Corpus,
    root: &Path,
) -> (woc_core::store::ObjectStore, woc_core::ingest::MembershipJournal) {
    use woc_core::ingest::{self, MembershipJournal, RepoRef};
    use woc_core::store::{ObjectStore, ShardConfig};
    let mut store = ObjectStore::create(root.join("store"), ShardConfig::default()).unwrap();
    let mut journal = MembershipJournal::open(store.root()).unwrap();
    for (name, path) in &corpus.repos {
        let r = RepoRef::new(name.clone(), path.to_str().unwrap());
        ingest::ingest_repo(&r, &mut store, &mut journal, &root.join("cache")).unwrap();
    }
    store.commit().unwrap();
    (store, journal)
}

/// Parents of a commit per `git rev-list --parents`.
pub fn parents_of(repo: &Path, commit: &ObjectId) -> Vec<ObjectId> {
    let out = git(repo, &["rev-list", "--parents", "-n", "1", &commit.to_hex()]);
    out.split_whitespace().skip(1).map(|s| s.parse().unwrap()).collect()
}

pub type Changes = BTreeSet<(String, ObjectId, woc_core::xref::ChangeKind)>;

/// Changes of one commit from full `ls-tree -r` snapshots of it and all of
/// its parents, with no pruning.
pub fn snapshot_diff_oracle(repo: &Path, commit: &ObjectId) -> Changes {
    use woc_core::xref::ChangeKind;
    let snap = ls_tree_r(repo, commit);
    let parent_snaps: Vec<_> = parents_of(repo, commit)
        .iter()
        .map(|p| ls_tree_r(repo, p))
        .collect();
    let union: BTreeSet<_> = parent_snaps.iter().flatten().cloned().collect();
    let first: BTreeMap<String, ObjectId> = parent_snaps
        .first()
        .map(|s| s.iter().cloned().collect())
        .unwrap_or_default();
    let mut out = Changes::new();
    for (path, blob) in &snap {
        if union.contains(&(path.clone(), *blob)) {
            continue;
        }
        let kind = if first.contains_key(path) {
            ChangeKind::Modified
        } else {
            ChangeKind::Added
        };
        out.insert((path.clone(), *blob, kind));
    }
    let paths: BTreeSet<&String> = snap.iter().map(|(p, _)| p).collect();
    for (path, blob) in &first {
        if !paths.contains(path) {
            out.insert((path.clone(), *blob, ChangeKind::Deleted));
        }
    }
    out
}

/// `(author time, "Name <email>")` per `git log`.
pub fn time_author(repo: &Path, commit: &ObjectId) -> (i64, String) {
    let out = git(repo, &["log", "-1", "--format=%at;%an <%ae>", &commit.to_hex()]);
    let (t, a) = out.trim_end_matches('\n').split_once(';').unwrap();
    (t.parse().unwrap(), a.to_owned())
}
