//! Verb dispatch. Data goes to `stdout`, every diagnostic to `stderr`.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use flate2::write::GzEncoder;
use flate2::Compression;
use woc_core::augment::{self, AuthorProfiles, Partition};
use woc_core::gitcore::{CommitRecord, ObjectId, ObjectKind, TagRecord, TreeRecord};
use woc_core::ingest::{self, IngestAction, IngestReport, MembershipJournal};
use woc_core::langmaps::{self, RuleSet};
use woc_core::store::ObjectStore;
use woc_core::xref::{self, Entity, MapName, MapSet, MultiMap};

use crate::bench;
use crate::config::Config;
use crate::extsort::{self, SortOptions};
use crate::trend;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_FATAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "woc", about = "Desk-scale git object store and cross-reference maps", disable_version_flag = true)]
pub struct Cli {
    /// Settings file (default: ./woc.toml when present).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Store root, overriding config and environment.
    #[arg(long, global = true, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// Refuse to read maps or objects from any other store version.
    #[arg(long = "version", global = true, value_name = "STORE_VERSION")]
    pub pin: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrendSource {
    F2c,
    Langmap,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract every repository of the corpus list into the store.
    Ingest {
        /// Corpus list (default: `corpus_list` from config).
        list: Option<PathBuf>,
    },
    /// Fetch only repositories whose heads moved.
    Update { list: Option<PathBuf> },
    /// Build and save the basemaps for the current store version.
    BuildMaps,
    /// Project-to-project map from shared commits.
    Defork {
        #[arg(long)]
        min_shared: Option<usize>,
    },
    /// Author-to-author map from identity signals.
    Identities,
    /// Dependency records for one language.
    Langmap { language: String },
    /// Print stored objects for ids read from standard input.
    ShowContent {
        /// commit, tree, blob or tag
        kind: String,
    },
    /// Print `key;v1;v2;...` for keys read from standard input.
    GetValues {
        /// Map name such as c2p, a2f or p2p.
        map: String,
    },
    /// Commits, authors and their ratio per year for one language.
    Trend {
        language: String,
        #[arg(long, value_enum, default_value = "f2c")]
        from: TrendSource,
    },
    /// Sort and merge line streams (plain or gzip) with bounded memory.
    SortMerge {
        /// Drop duplicate lines.
        #[arg(short = 'u', long)]
        unique: bool,
        /// Memory budget in MiB (default: `sort_memory_mb`).
        #[arg(long, value_name = "MB")]
        memory: Option<usize>,
        /// Write uncompressed output.
        #[arg(long)]
        plain: bool,
        #[arg(short = 'o', long, value_name = "FILE")]
        output: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        temp_dir: Option<PathBuf>,
        /// Inputs; `-` or none reads standard input.
        inputs: Vec<PathBuf>,
    },
    /// Random-lookup timings against batch size.
    Bench {
        map: String,
        /// Comma-separated batch sizes (default: 100,1000,10000,100000).
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Object membership probes for the throughput line.
        #[arg(long, default_value_t = 200_000)]
        membership: usize,
    },
    /// Store and map summary.
    Stats,
}

/// Fatal error text; the caller prints it and exits 2.
#[derive(Debug)]
pub struct Fatal(pub String);

impl<E: std::fmt::Display> From<E> for Fatal {
    fn from(e: E) -> Self {
        Fatal(e.to_string())
    }
}

type Outcome = Result<i32, Fatal>;

struct Ctx<'a> {
    cfg: Config,
    pin: Option<u64>,
    stdin: &'a mut dyn BufRead,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Ctx<'_> {
    fn diag(&mut self, msg: impl std::fmt::Display) {
        let _ = writeln!(self.err, "woc: {msg}");
    }

    fn root(&self) -> &Path {
        &self.cfg.store_root
    }

    fn corpus_list(&self, arg: Option<PathBuf>) -> Result<PathBuf, Fatal> {
        arg.or_else(|| self.cfg.corpus_list.clone())
            .ok_or_else(|| Fatal("no corpus list given and none configured".into()))
    }

    /// Version of the saved map set, checked against the pin.
    fn maps_version(&self) -> Result<u64, Fatal> {
        let (version, _) = MapSet::read_index(self.root())?;
        self.check_pin(version, "maps")?;
        Ok(version)
    }

    fn check_pin(&self, version: u64, what: &str) -> Result<(), Fatal> {
        match self.pin {
            Some(p) if p != version => Err(Fatal(format!(
                "{what} are stamped with store version {version}, pinned to {p}"
            ))),
            _ => Ok(()),
        }
    }

    fn load_maps(&self, names: &[MapName]) -> Result<MapSet, Fatal> {
        self.maps_version()?;
        Ok(MapSet::load(self.root(), names)?)
    }

    /// Any saved map, basemap or derived, refusing a version that differs
    /// from the basemap set.
    fn load_map(&self, name: MapName) -> Result<MultiMap, Fatal> {
        let version = self.maps_version()?;
        let m = MultiMap::load(&MapSet::maps_dir(self.root()), name)?;
        if m.store_version() != version {
            return Err(Fatal(format!(
                "{name} is stamped with store version {}, the map set with {version}",
                m.store_version()
            )));
        }
        Ok(m)
    }

    fn store_at(&self, version: u64) -> Result<ObjectStore, Fatal> {
        Ok(ObjectStore::open_at(self.root(), version)?)
    }

    fn store_read(&self) -> Result<ObjectStore, Fatal> {
        match self.pin {
            Some(v) => self.store_at(v),
            None => Ok(ObjectStore::open_read_only(self.root())?),
        }
    }
}

/// Parses `args` (program name first) and runs the verb. Returns the exit
/// code.
pub fn run<I, T>(
    args: I,
    env: Vec<(String, String)>,
    stdin: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_FATAL
                }
            };
        }
    };
    let mut cfg = match Config::load(cli.config.as_deref(), env) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "woc: error: {e}");
            return EXIT_FATAL;
        }
    };
    if let Some(root) = cli.store {
        cfg.store_root = root;
    }
    let mut ctx = Ctx {
        cfg,
        pin: cli.pin,
        stdin,
        out,
        err,
    };
    let result = dispatch(&mut ctx, cli.command);
    let code = match result {
        Ok(code) => code,
        Err(Fatal(msg)) => {
            let _ = writeln!(ctx.err, "woc: error: {msg}");
            EXIT_FATAL
        }
    };
    if ctx.out.flush().is_err() && code == EXIT_OK {
        return EXIT_FATAL;
    }
    code
}

fn dispatch(ctx: &mut Ctx<'_>, cmd: Command) -> Outcome {
    match cmd {
        Command::Ingest { list } => cmd_ingest(ctx, list, false),
        Command::Update { list } => cmd_ingest(ctx, list, true),
        Command::BuildMaps => cmd_build_maps(ctx),
        Command::Defork { min_shared } => cmd_defork(ctx, min_shared),
        Command::Identities => cmd_identities(ctx),
        Command::Langmap { language } => cmd_langmap(ctx, &language),
        Command::ShowContent { kind } => cmd_show_content(ctx, &kind),
        Command::GetValues { map } => cmd_get_values(ctx, &map),
        Command::Trend { language, from } => cmd_trend(ctx, &language, from),
        Command::SortMerge {
            unique,
            memory,
            plain,
            output,
            temp_dir,
            inputs,
        } => cmd_sort_merge(ctx, unique, memory, plain, output, temp_dir, inputs),
        Command::Bench {
            map,
            sizes,
            reps,
            seed,
            membership,
        } => cmd_bench(ctx, &map, sizes, reps, seed, membership),
        Command::Stats => cmd_stats(ctx),
    }
}

fn report_line(action: &str, r: &IngestReport) -> String {
    let n = |k| r.get(k).inserted;
    format!(
        "{};{};{};{};{};{};{}",
        r.repo.name,
        action,
        n(ObjectKind::Commit),
        n(ObjectKind::Tree),
        n(ObjectKind::Blob),
        n(ObjectKind::Tag),
        r.journaled
    )
}

/// `ingest` extracts what is missing from every listed repo; `update`
/// first asks each repo whether its heads moved and fetches only those.
fn cmd_ingest(ctx: &mut Ctx<'_>, list: Option<PathBuf>, update: bool) -> Outcome {
    if ctx.pin.is_some() {
        return Err(Fatal("--version pins reads; writing verbs always extend the latest version".into()));
    }
    let list = ctx.corpus_list(list)?;
    let discovery = ingest::discover_file(&list)?;
    for d in &discovery.diagnostics {
        ctx.diag(format!("{}: {d}", list.display()));
    }
    let shards = ctx.cfg.shard_config()?;
    let mut store = ObjectStore::open_or_create(ctx.root(), shards)?;
    let mut journal = MembershipJournal::open(ctx.root())?;
    let cache = ctx.cfg.cache_dir();
    writeln!(ctx.out, "project;action;commits;trees;blobs;tags;journaled")?;
    let mut failed = 0usize;
    let mut fetched = 0usize;
    for repo in &discovery.repos {
        let step = if update {
            match ingest::needs_update(repo, &store) {
                Ok(true) => ingest::fetch_incremental(repo, &mut store, &mut journal, &cache)
                    .map(|r| ("fetched", r)),
                Ok(false) => ingest::ingest_repo(repo, &mut store, &mut journal, &cache).map(|(a, r)| {
                    (
                        match a {
                            IngestAction::MembershipOnly => "membership-only",
                            _ => "up-to-date",
                        },
                        r,
                    )
                }),
                Err(e) => Err(e),
            }
        } else {
            ingest::ingest_repo(repo, &mut store, &mut journal, &cache).map(|(a, r)| {
                (
                    match a {
                        IngestAction::Extracted => "extracted",
                        IngestAction::MembershipOnly => "membership-only",
                        IngestAction::UpToDate => "up-to-date",
                    },
                    r,
                )
            })
        };
        match step {
            Ok((action, report)) => {
                if action == "fetched" {
                    fetched += 1;
                }
                for rej in &report.rejected {
                    ctx.diag(format!("{}: rejected {} {}: {}", repo.name, rej.kind, rej.id, rej.reason));
                }
                writeln!(ctx.out, "{}", report_line(action, &report))?;
            }
            Err(e) => {
                failed += 1;
                ctx.diag(format!("{}: {e}", repo.name));
            }
        }
    }
    let version = store.commit()?;
    if update {
        ctx.diag(format!("{fetched} of {} repositories fetched", discovery.repos.len()));
    }
    ctx.diag(format!("store version {version}"));
    Ok(if failed > 0 || !discovery.diagnostics.is_empty() {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    })
}

fn cmd_build_maps(ctx: &mut Ctx<'_>) -> Outcome {
    let store = ctx.store_read()?;
    let journal = MembershipJournal::open(ctx.root())?;
    let shards = ctx.cfg.shard_config()?;
    let set = xref::build_basemaps(&store, &journal, &shards, &ctx.cfg.build_options())?;
    set.save(ctx.root())?;
    writeln!(ctx.out, "map;keys;pairs")?;
    for (name, m) in &set.maps {
        writeln!(ctx.out, "{name};{};{}", m.key_count(), m.pair_count())?;
    }
    if !set.excluded_commits.is_empty() {
        let n = set.excluded_commits.len();
        ctx.diag(format!("{n} commits over the change cap left out of file and blob maps"));
    }
    ctx.diag(format!("maps stamped with store version {}", set.store_version));
    Ok(EXIT_OK)
}

fn project_partition(ctx: &Ctx<'_>, set: &MapSet, min_shared: usize) -> Result<Partition, Fatal> {
    augment::defork(
        set.get(MapName::new(Entity::Commit, Entity::Project))?,
        set.get(MapName::new(Entity::Project, Entity::Commit))?,
        min_shared,
        &set.excluded_commits,
    )
    .map_err(|e| Fatal(format!("defork at {}: {e}", ctx.root().display())))
}

fn cmd_defork(ctx: &mut Ctx<'_>, min_shared: Option<usize>) -> Outcome {
    let min = min_shared.unwrap_or(ctx.cfg.min_shared_commits);
    if min == 0 {
        return Err(Fatal("--min-shared must be at least 1".into()));
    }
    let set = ctx.load_maps(&[
        MapName::new(Entity::Commit, Entity::Project),
        MapName::new(Entity::Project, Entity::Commit),
    ])?;
    let part = project_partition(ctx, &set, min)?;
    let map = part.to_map(Entity::Project, set.shard_bits, set.store_version);
    map.save(&MapSet::maps_dir(ctx.root()))?;
    writeln!(ctx.out, "projects;classes")?;
    writeln!(ctx.out, "{};{}", part.len(), part.class_count())?;
    Ok(EXIT_OK)
}

fn cmd_identities(ctx: &mut Ctx<'_>) -> Outcome {
    let set = ctx.load_maps(&[
        MapName::new(Entity::Author, Entity::Commit),
        MapName::new(Entity::Commit, Entity::File),
    ])?;
    let profiles = AuthorProfiles::build(
        set.get(MapName::new(Entity::Author, Entity::Commit))?,
        set.get(MapName::new(Entity::Commit, Entity::File))?,
    )?;
    let stop = ctx.cfg.stop_list()?;
    let pairs = augment::candidate_pairs(&profiles, &stop, ctx.cfg.blocking_bucket_cap);
    let signals = augment::score_pairs(&profiles, &pairs)?;
    let part = augment::resolve_identities(&profiles, &signals, &ctx.cfg.thresholds, &stop);
    let map = part.to_map(Entity::Author, set.shard_bits, set.store_version);
    map.save(&MapSet::maps_dir(ctx.root()))?;
    writeln!(ctx.out, "authors;candidate_pairs;classes")?;
    writeln!(ctx.out, "{};{};{}", part.len(), pairs.len(), part.class_count())?;
    Ok(EXIT_OK)
}

fn cmd_langmap(ctx: &mut Ctx<'_>, language: &str) -> Outcome {
    let rules = RuleSet::default();
    rules.rule(language)?;
    let set = ctx.load_maps(&[
        MapName::new(Entity::File, Entity::Commit),
        MapName::new(Entity::Commit, Entity::Project),
        MapName::new(Entity::Project, Entity::Commit),
    ])?;
    let p2p = MapName::new(Entity::Project, Entity::Project);
    let part = if MapSet::maps_dir(ctx.root()).join(p2p.to_string()).exists() {
        Partition::from_map(&ctx.load_map(p2p)?)?
    } else {
        ctx.diag("no p2p map saved; deforking with the configured minimum");
        project_partition(ctx, &set, ctx.cfg.min_shared_commits)?
    };
    let store = ctx.store_at(set.store_version)?;
    let records = langmaps::build_langmap(
        &rules,
        language,
        set.get(MapName::new(Entity::File, Entity::Commit))?,
        set.get(MapName::new(Entity::Commit, Entity::Project))?,
        &store,
        Some(&part),
    )?;
    langmaps::write_langmap(ctx.root(), language, set.shard_bits, set.store_version, &records)?;
    writeln!(ctx.out, "language;records")?;
    writeln!(ctx.out, "{language};{}", records.len())?;
    Ok(EXIT_OK)
}

/// The one-line commit rendering: id, tree, colon-joined parents, author,
/// committer, author time, commit time.
pub fn commit_line(id: &ObjectId, c: &CommitRecord) -> String {
    let parents: Vec<String> = c.parents.iter().map(ObjectId::to_hex).collect();
    format!(
        "{};{};{};{};{};{};{}",
        id,
        c.tree,
        parents.join(":"),
        c.author.ident_str(),
        c.committer.ident_str(),
        c.author.time_field(),
        c.committer.time_field()
    )
}

fn render_object(kind: ObjectKind, id: &ObjectId, payload: &[u8], out: &mut dyn Write) -> Result<(), Fatal> {
    match kind {
        ObjectKind::Commit => writeln!(out, "{}", commit_line(id, &CommitRecord::parse(payload)?))?,
        ObjectKind::Tree => {
            for e in TreeRecord::parse(payload)?.entries {
                writeln!(out, "{} {} {}", e.mode, e.name_str(), e.id)?;
            }
        }
        ObjectKind::Tag => {
            let t = TagRecord::parse(payload)?;
            writeln!(out, "{};{};{};{}", id, t.object, t.target_kind, String::from_utf8_lossy(&t.name))?;
        }
        ObjectKind::Blob => out.write_all(payload)?,
    }
    Ok(())
}

fn input_lines(stdin: &mut dyn BufRead) -> io::Result<Vec<String>> {
    let mut lines = Vec::new();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if stdin.read_until(b'\n', &mut buf)? == 0 {
            return Ok(lines);
        }
        while matches!(buf.last(), Some(b'\n' | b'\r')) {
            buf.pop();
        }
        lines.push(String::from_utf8_lossy(&buf).into_owned());
    }
}

fn cmd_show_content(ctx: &mut Ctx<'_>, kind: &str) -> Outcome {
    let kind = ObjectKind::from_name(kind.as_bytes())
        .ok_or_else(|| Fatal(format!("unknown object kind {kind:?}")))?;
    let store = ctx.store_read()?;
    let mut code = EXIT_OK;
    for line in input_lines(ctx.stdin)? {
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let id = match ObjectId::from_hex(text) {
            Ok(id) => id,
            Err(e) => {
                ctx.diag(e);
                code = EXIT_PARTIAL;
                continue;
            }
        };
        if !store.contains(kind, &id) {
            ctx.diag(format!("{kind} {id} not found"));
            code = EXIT_PARTIAL;
            continue;
        }
        let payload = store.get(kind, &id)?;
        render_object(kind, &id, &payload, ctx.out)?;
    }
    Ok(code)
}

fn cmd_get_values(ctx: &mut Ctx<'_>, map: &str) -> Outcome {
    let name: MapName = map.parse()?;
    let m = ctx.load_map(name)?;
    let mut code = EXIT_OK;
    let mut line_out = String::new();
    for line in input_lines(ctx.stdin)? {
        if line.is_empty() {
            continue;
        }
        line_out.clear();
        line_out.push_str(&line);
        match name.source.parse_text(&line) {
            Ok(key) => match m.get(&key) {
                Some(values) => {
                    for v in values {
                        line_out.push(';');
                        line_out.push_str(&name.target.render(v));
                    }
                    if m.is_truncated(&key) {
                        ctx.diag(format!("{line}: value list truncated at the cap"));
                    }
                }
                None => {
                    ctx.diag(format!("{line}: not in {name}"));
                    code = EXIT_PARTIAL;
                }
            },
            Err(e) => {
                ctx.diag(format!("{line}: {e}"));
                code = EXIT_PARTIAL;
            }
        }
        writeln!(ctx.out, "{line_out}")?;
    }
    Ok(code)
}

fn cmd_trend(ctx: &mut Ctx<'_>, language: &str, from: TrendSource) -> Outcome {
    let rows = match from {
        TrendSource::F2c => {
            let rules = RuleSet::default();
            let f2c = ctx.load_map(MapName::new(Entity::File, Entity::Commit))?;
            let commits: BTreeSet<ObjectId> = langmaps::language_commits(&rules, language, &f2c)?;
            let store = ctx.store_at(f2c.store_version())?;
            trend::from_commits(&store, &commits)?
        }
        TrendSource::Langmap => {
            let version = langmaps::langmap_version(ctx.root(), language)?;
            ctx.check_pin(version, "language maps")?;
            trend::from_langmap(&langmaps::read_langmap(ctx.root(), language)?)
        }
    };
    writeln!(ctx.out, "year;commits;authors;commits_per_author")?;
    for r in rows {
        writeln!(ctx.out, "{r}")?;
    }
    Ok(EXIT_OK)
}

fn cmd_sort_merge(
    ctx: &mut Ctx<'_>,
    unique: bool,
    memory: Option<usize>,
    plain: bool,
    output: Option<PathBuf>,
    temp_dir: Option<PathBuf>,
    inputs: Vec<PathBuf>,
) -> Outcome {
    let mut readers: Vec<Box<dyn BufRead>> = Vec::new();
    let mut stdin_used = false;
    for p in &inputs {
        if p == Path::new("-") {
            stdin_used = true;
            readers.push(extsort::maybe_gunzip(Box::new(io::Cursor::new(read_all(ctx.stdin)?)))?);
        } else {
            readers.push(extsort::open_input(p).map_err(|e| Fatal(format!("{}: {e}", p.display())))?);
        }
    }
    if inputs.is_empty() && !stdin_used {
        readers.push(extsort::maybe_gunzip(Box::new(io::Cursor::new(read_all(ctx.stdin)?)))?);
    }
    let opts = SortOptions {
        memory_budget: memory.unwrap_or(ctx.cfg.sort_memory_mb).max(1) << 20,
        unique,
        temp_dir: temp_dir.unwrap_or_else(std::env::temp_dir),
    };
    let stats = {
        let mut file_sink;
        let sink: &mut dyn Write = match &output {
            Some(p) => {
                file_sink = BufWriter::new(File::create(p)?);
                &mut file_sink
            }
            None => ctx.out,
        };
        if plain {
            let s = extsort::sort_merge(readers, sink, &opts)?;
            sink.flush()?;
            s
        } else {
            let mut gz = GzEncoder::new(sink, Compression::default());
            let s = extsort::sort_merge(readers, &mut gz, &opts)?;
            gz.finish()?.flush()?;
            s
        }
    };
    ctx.diag(format!(
        "{} lines in, {} out, {} spilled runs",
        stats.lines_in, stats.lines_out, stats.runs
    ));
    Ok(EXIT_OK)
}

fn read_all(r: &mut dyn BufRead) -> io::Result<Vec<u8>> {
    let mut v = Vec::new();
    r.read_to_end(&mut v)?;
    Ok(v)
}

fn cmd_bench(ctx: &mut Ctx<'_>, map: &str, sizes: Vec<usize>, reps: usize, seed: u64, membership: usize) -> Outcome {
    let name: MapName = map.parse()?;
    let m = ctx.load_map(name)?;
    let sizes = if sizes.is_empty() {
        bench::DEFAULT_SIZES.to_vec()
    } else {
        sizes
    };
    let dumps = MapSet::maps_dir(ctx.root()).join(name.to_string());
    let report = bench::run(&m, &sizes, reps, seed, Some(&dumps))?;
    write!(ctx.out, "{}", report.render())?;
    if m.key_count() < 100_000 {
        ctx.diag(format!("{name} has {} keys; fewer than 100000 distinct keys per batch", m.key_count()));
    }
    if membership > 0 {
        let store = ctx.store_at(m.store_version())?;
        let r = bench::membership(&store, membership, seed);
        let rate = r.per_second();
        writeln!(ctx.out, "membership_lookups;{}", r.lookups)?;
        writeln!(ctx.out, "membership_per_second;{rate:.0}")?;
        if rate < 20_000.0 {
            ctx.diag(format!("membership throughput {rate:.0}/s is under 20000/s"));
        }
    }
    Ok(EXIT_OK)
}

fn cmd_stats(ctx: &mut Ctx<'_>) -> Outcome {
    let store = ctx.store_read()?;
    writeln!(ctx.out, "store_version;{}", store.version())?;
    for kind in ObjectKind::ALL {
        writeln!(ctx.out, "objects;{kind};{}", store.count(kind))?;
    }
    let journal = MembershipJournal::open(ctx.root())?;
    writeln!(ctx.out, "projects;{}", journal.projects().len())?;
    match MapSet::read_index(ctx.root()) {
        Ok((version, names)) => {
            writeln!(ctx.out, "maps_version;{version}")?;
            let names: Vec<String> = names.iter().map(MapName::to_string).collect();
            writeln!(ctx.out, "maps;{}", names.join(";"))?;
            if version != store.version() {
                ctx.diag(format!("maps built at version {version}, store is at {}", store.version()));
            }
        }
        Err(_) => writeln!(ctx.out, "maps_version;")?,
    }
    Ok(EXIT_OK)
}
