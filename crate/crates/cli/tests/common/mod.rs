#![allow(dead_code)]

use std::io::Cursor;
use std::path::{Path, PathBuf};

pub struct Out {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

impl Out {
    pub fn text(&self) -> String {
        String::from_utf8(self.stdout.clone()).unwrap()
    }

    /// Output lines without the header row.
    pub fn rows(&self) -> Vec<String> {
        self.text().lines().skip(1).map(str::to_owned).collect()
    }
}

/// Runs the command in-process against the store at `root`.
pub fn woc(root: &Path, args: &[&str], stdin: &[u8]) -> Out {
    let env = vec![
        ("WOC_STORE_ROOT".to_owned(), root.display().to_string()),
        ("WOC_CACHE_DIR".to_owned(), root.join("clones").display().to_string()),
        ("WOC_MAP_SHARD_BITS".to_owned(), "3".to_owned()),
    ];
    let mut argv = vec!["woc"];
    argv.extend_from_slice(args);
    let mut input = Cursor::new(stdin.to_vec());
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let code = woc_cli::run(argv, env, &mut input, &mut stdout, &mut stderr);
    Out {
        code,
        stdout,
        stderr: String::from_utf8_lossy(&stderr).into_owned(),
    }
}

/// Like [`woc`] but insists on exit 0.
pub fn woc_ok(root: &Path, args: &[&str], stdin: &[u8]) -> Out {
    let out = woc(root, args, stdin);
    assert_eq!(out.code, 0, "woc {args:?} failed: {}", out.stderr);
    out
}

/// Corpus list with explicit names.
pub fn write_named_list(path: &Path, entries: &[(&str, &Path)]) -> PathBuf {
    let text: String = entries
        .iter()
        .map(|(n, p)| format!("{n}\t{}\n", p.display()))
        .collect();
    std::fs::write(path, text).unwrap();
    path.to_owned()
}

use woc_testkit::{init_bare, CommitSpec, FastImport, Parent};

pub const SAMPLE_TREE: &str = "f1b66dcca490b5c4455af319bc961a34f69c72c2";
pub const SAMPLE_PARENT: &str = "c19ff598808b181f1ab2383ff0214520cb3ec659";
/// Everything after the commit id in the reference output line.
pub const SAMPLE_TAIL: &str = ";f1b66dcca490b5c4455af319bc961a34f69c72c2;c19ff598808b181f1ab2383ff0214520cb3ec659;Audris Mockus <audris@utk.edu>;Audris Mockus <audris@utk.edu>;1410029988 -0400;1410029988 -0400";

/// A commit with the reference line's tree, parent, signatures and times.
pub fn sample_commit_payload() -> Vec<u8> {
    format!(
        "tree {SAMPLE_TREE}\nparent {SAMPLE_PARENT}\n\
         author Audris Mockus <audris@utk.edu> 1410029988 -0400\n\
         committer Audris Mockus <audris@utk.edu> 1410029988 -0400\n\nupdate\n"
    )
    .into_bytes()
}

/// Project names of the reference multi-project commit, byte-sorted.
pub const SAMPLE_PROJECTS: [&str; 12] = [
    "W4D3_news",
    "chumekaboom_news",
    "fdac15_news",
    "fdac_syllabus",
    "igorwiese_syllabus",
    "jaredmichaelsmith_news",
    "jking018_news",
    "milanjpatel_news",
    "rroper1_news",
    "tapjdey_news",
    "taurytang_syllabus",
    "tennisjohn21_news",
];

pub const ALICE: &str = "Alice Ames <alice@ames.org>";
pub const BOB: &str = "Bob Burr <bob@burr.org>";
pub const CAROL: &str = "Carol Cole <carol@cole.org>";

/// Hand-counted trend fixture. Java commits by UTC year:
/// 2014 has three (Alice twice, Bob once), 2015 has one (Carol, whose
/// local date is still 2014). A README commit, a Python commit and a
/// Java deletion do not count.
pub fn trend_repo(path: &Path) {
    init_bare(path);
    let mut fi = FastImport::new();
    let c1 = fi.commit(CommitSpec::new("main", ALICE, 1_391_212_800).write("src/A.java", "import java.util.List;\nclass A {}\n"));
    let c2 = fi.commit(
        CommitSpec::new("main", BOB, 1_393_632_000)
            .from(Parent::Mark(c1))
            .write("src/B.java", "import java.io.File;\nclass B {}\n")
            .write("README.md", "hello\n"),
    );
    let c3 = fi.commit(
        CommitSpec::new("main", ALICE, 1_398_902_400)
            .from(Parent::Mark(c2))
            .write("src/A.java", "import java.util.Map;\nclass A {}\n"),
    );
    let c4 = fi.commit(
        CommitSpec::new("main", "Dave Dunn <dave@dunn.org>", 1_401_580_800)
            .from(Parent::Mark(c3))
            .write("README.md", "hello again\n"),
    );
    let c5 = fi.commit(
        CommitSpec::new("main", "Eve Eng <eve@eng.org>", 1_404_172_800)
            .from(Parent::Mark(c4))
            .write("tool.py", "import os\n"),
    );
    let c6 = fi.commit(
        CommitSpec::new("main", CAROL, 1_420_072_200)
            .tz("-0500")
            .from(Parent::Mark(c5))
            .write("src/B.java", "import java.io.File;\nclass B { int x; }\n"),
    );
    fi.commit(
        CommitSpec::new("main", ALICE, 1_425_168_000)
            .from(Parent::Mark(c6))
            .delete("src/A.java"),
    );
    fi.run(path);
}

pub const TREND_EXPECTED: [&str; 2] = ["2014;3;2;1.5", "2015;1;1;1"];
