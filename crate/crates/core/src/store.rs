//! Sharded, deduplicated, append-only object storage.
//!
//! Every `(kind, shard)` pair owns three files:
//!
//! * `log.bin`: concatenated compressed payloads, append-only.
//! * `offsets.idx`: one 36-byte record per stored object in insertion order
//!   (20-byte id, u64 LE offset, u64 LE compressed length).
//! * `presence.idx`: id to insertion ordinal, written as a sorted table of
//!   28-byte records (20-byte id, u64 LE ordinal).
//!
//! `manifest` at the store root is the commit point. It records the shard
//! layout, the codec, and one snapshot of per-shard counts for every store
//! version. Anything past the current snapshot's counts is an uncommitted
//! tail and is truncated on open.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufReader, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::gitcore::{
    self, CommitRecord, GitObjectRecord, ObjectId, ObjectKind, RejectReason, TreeRecord,
    ValidatedObject, ID_LEN,
};

pub const OFFSET_RECORD_LEN: usize = ID_LEN + 16;
pub const PRESENCE_RECORD_LEN: usize = ID_LEN + 8;
const MANIFEST_MAGIC: &str = "woc-store-manifest 1";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{kind} {id} not found")]
    NotFound { kind: ObjectKind, id: ObjectId },
    #[error("failed to inflate {kind} {id}: {source}")]
    DecompressFailed {
        kind: ObjectKind,
        id: ObjectId,
        source: io::Error,
    },
    #[error("store corrupt: {0}")]
    StoreCorrupt(String),
    #[error("object failed validation: {0}")]
    PreconditionFailed(RejectReason),
    #[error("store opened read-only")]
    ReadOnly,
    #[error("invalid shard configuration: {0}")]
    InvalidConfig(String),
    #[error("no snapshot for store version {0}")]
    UnknownVersion(u64),
    #[error("no store at {0}")]
    Missing(PathBuf),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShardConfig {
    pub object_shard_bits: u8,
    pub map_shard_bits: u8,
}

impl Default for ShardConfig {
    fn default() -> Self {
        ShardConfig {
            object_shard_bits: 7,
            map_shard_bits: 5,
        }
    }
}

impl ShardConfig {
    pub fn new(object_shard_bits: u8, map_shard_bits: u8) -> Result<Self> {
        for bits in [object_shard_bits, map_shard_bits] {
            if bits > 8 {
                return Err(StoreError::InvalidConfig(format!(
                    "shard bits must be in 0..=8, got {bits}"
                )));
            }
        }
        Ok(ShardConfig {
            object_shard_bits,
            map_shard_bits,
        })
    }

    pub fn object_shards(&self) -> u32 {
        1 << self.object_shard_bits
    }

    pub fn map_shards(&self) -> u32 {
        1 << self.map_shard_bits
    }
}

/// Top `bits` bits of `byte`.
pub fn top_bits(byte: u8, bits: u8) -> u32 {
    if bits == 0 {
        0
    } else {
        u32::from(byte) >> (8 - bits)
    }
}

pub fn shard_of_object(id: &ObjectId, cfg: &ShardConfig) -> u32 {
    top_bits(id.first_byte(), cfg.object_shard_bits)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Codec {
    Zlib,
}

impl Codec {
    fn compress(self, payload: &[u8]) -> Vec<u8> {
        match self {
            Codec::Zlib => {
                let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
                enc.write_all(payload).expect("write to Vec");
                enc.finish().expect("finish to Vec")
            }
        }
    }

    fn decompress(self, data: &[u8]) -> io::Result<Vec<u8>> {
        match self {
            Codec::Zlib => {
                let mut out = Vec::with_capacity(data.len() * 2);
                ZlibDecoder::new(data).read_to_end(&mut out)?;
                Ok(out)
            }
        }
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Codec::Zlib => f.write_str("zlib"),
        }
    }
}

impl FromStr for Codec {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zlib" => Ok(Codec::Zlib),
            other => Err(StoreError::StoreCorrupt(format!("unknown codec {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentLogEntry {
    pub id: ObjectId,
    pub offset: u64,
    pub length: u64,
}

impl ContentLogEntry {
    pub fn encode(&self) -> [u8; OFFSET_RECORD_LEN] {
        let mut out = [0u8; OFFSET_RECORD_LEN];
        out[..ID_LEN].copy_from_slice(self.id.as_bytes());
        out[ID_LEN..ID_LEN + 8].copy_from_slice(&self.offset.to_le_bytes());
        out[ID_LEN + 8..].copy_from_slice(&self.length.to_le_bytes());
        out
    }

    pub fn decode(rec: &[u8]) -> Option<Self> {
        if rec.len() != OFFSET_RECORD_LEN {
            return None;
        }
        Some(ContentLogEntry {
            id: ObjectId::from_slice(&rec[..ID_LEN])?,
            offset: u64::from_le_bytes(rec[ID_LEN..ID_LEN + 8].try_into().ok()?),
            length: u64::from_le_bytes(rec[ID_LEN + 8..].try_into().ok()?),
        })
    }

    fn end(&self) -> u64 {
        self.offset + self.length
    }
}

/// Decodes a whole `offsets.idx` image. A partial trailing record is ignored.
pub fn decode_offsets(data: &[u8]) -> Vec<ContentLogEntry> {
    data.chunks_exact(OFFSET_RECORD_LEN)
        .map(|c| ContentLogEntry::decode(c).expect("exact chunk"))
        .collect()
}

/// Decodes a `presence.idx` image into `(id, ordinal)` pairs.
pub fn decode_presence(data: &[u8]) -> Result<Vec<(ObjectId, u64)>> {
    if !data.len().is_multiple_of(PRESENCE_RECORD_LEN) {
        return Err(StoreError::StoreCorrupt(format!(
            "presence index length {} is not a multiple of {PRESENCE_RECORD_LEN}",
            data.len()
        )));
    }
    Ok(data
        .chunks_exact(PRESENCE_RECORD_LEN)
        .map(|c| {
            let id = ObjectId::from_slice(&c[..ID_LEN]).expect("exact chunk");
            let ord = u64::from_le_bytes(c[ID_LEN..].try_into().expect("8 bytes"));
            (id, ord)
        })
        .collect())
}

fn encode_presence(entries: &[ContentLogEntry]) -> Vec<u8> {
    let mut sorted: Vec<(ObjectId, u64)> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.id, i as u64))
        .collect();
    sorted.sort_unstable();
    let mut out = Vec::with_capacity(sorted.len() * PRESENCE_RECORD_LEN);
    for (id, ord) in sorted {
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&ord.to_le_bytes());
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Snapshot {
    pub version: u64,
    pub counts: BTreeMap<(ObjectKind, u32), u64>,
}

impl Snapshot {
    pub fn count(&self, kind: ObjectKind, shard: u32) -> u64 {
        self.counts.get(&(kind, shard)).copied().unwrap_or(0)
    }

    pub fn total(&self, kind: ObjectKind) -> u64 {
        self.counts
            .iter()
            .filter(|((k, _), _)| *k == kind)
            .map(|(_, c)| c)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub config: ShardConfig,
    pub codec: Codec,
    /// Ascending by version; version 0 (empty store) is implicit.
    pub snapshots: Vec<Snapshot>,
}

impl Manifest {
    pub fn new(config: ShardConfig) -> Self {
        Manifest {
            config,
            codec: Codec::Zlib,
            snapshots: Vec::new(),
        }
    }

    pub fn version(&self) -> u64 {
        self.snapshots.last().map_or(0, |s| s.version)
    }

    pub fn snapshot(&self, version: u64) -> Option<Snapshot> {
        if version == 0 {
            return Some(Snapshot::default());
        }
        self.snapshots.iter().find(|s| s.version == version).cloned()
    }

    pub fn current(&self) -> Snapshot {
        self.snapshots.last().cloned().unwrap_or_default()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(MANIFEST_MAGIC);
        out.push('\n');
        out.push_str(&format!(
            "object_shard_bits {}\n",
            self.config.object_shard_bits
        ));
        out.push_str(&format!("map_shard_bits {}\n", self.config.map_shard_bits));
        out.push_str(&format!("codec {}\n", self.codec));
        out.push_str(&format!("version {}\n", self.version()));
        for snap in &self.snapshots {
            for kind in ObjectKind::ALL {
                out.push_str(&format!("snapshot {} {}", snap.version, kind));
                for ((k, shard), count) in &snap.counts {
                    if *k == kind && *count > 0 {
                        out.push_str(&format!(" {shard}:{count}"));
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| StoreError::StoreCorrupt(format!("manifest: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(bad("missing header"));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(&format!("expected {name}")))
        };
        let obits: u8 = field("object_shard_bits")?
            .parse()
            .map_err(|_| bad("object_shard_bits"))?;
        let mbits: u8 = field("map_shard_bits")?
            .parse()
            .map_err(|_| bad("map_shard_bits"))?;
        let config = ShardConfig::new(obits, mbits).map_err(|_| bad("shard bits out of range"))?;
        let codec: Codec = field("codec")?.parse()?;
        let version: u64 = field("version")?.parse().map_err(|_| bad("version"))?;

        let mut snapshots: Vec<Snapshot> = Vec::new();
        for line in lines {
            let mut parts = line.split(' ');
            if parts.next() != Some("snapshot") {
                return Err(bad("expected snapshot line"));
            }
            let v: u64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("snapshot version"))?;
            let kind = ObjectKind::from_name(parts.next().unwrap_or("").as_bytes())
                .ok_or_else(|| bad("snapshot kind"))?;
            if snapshots.last().map(|s| s.version) != Some(v) {
                if v == 0 || snapshots.last().is_some_and(|s| s.version >= v) {
                    return Err(bad("snapshot versions must increase"));
                }
                snapshots.push(Snapshot {
                    version: v,
                    counts: BTreeMap::new(),
                });
            }
            let snap = snapshots.last_mut().expect("pushed");
            for pair in parts {
                let (s, c) = pair.split_once(':').ok_or_else(|| bad("count pair"))?;
                let shard: u32 = s.parse().map_err(|_| bad("shard"))?;
                let count: u64 = c.parse().map_err(|_| bad("count"))?;
                if shard >= config.object_shards() {
                    return Err(bad("shard out of range"));
                }
                snap.counts.insert((kind, shard), count);
            }
        }
        if snapshots.last().map_or(0, |s| s.version) != version {
            return Err(bad("version does not match last snapshot"));
        }
        Ok(Manifest {
            config,
            codec,
            snapshots,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutResult {
    Inserted,
    Duplicate,
}

struct Shard {
    dir: PathBuf,
    log: Option<File>,
    entries: Vec<ContentLogEntry>,
    presence: HashMap<ObjectId, u64>,
    /// Entries already in `offsets.idx`.
    committed: usize,
}

impl Shard {
    fn empty(dir: PathBuf) -> Self {
        Shard {
            dir,
            log: None,
            entries: Vec::new(),
            presence: HashMap::new(),
            committed: 0,
        }
    }

    fn log_end(&self) -> u64 {
        self.entries.last().map_or(0, ContentLogEntry::end)
    }
}

/// The object store. Reads take `&self` and may run concurrently; writes
/// take `&mut self`.
pub struct ObjectStore {
    root: PathBuf,
    manifest: Manifest,
    shards: HashMap<(ObjectKind, u32), Shard>,
    read_only: bool,
    dirty: bool,
}

impl fmt::Debug for ObjectStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectStore")
            .field("root", &self.root)
            .field("version", &self.manifest.version())
            .field("read_only", &self.read_only)
            .finish()
    }
}

fn write_atomic(path: &Path, data: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(data)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}

impl ObjectStore {
    /// Creates a new store at `root`, or fails if one already exists.
    pub fn create(root: impl AsRef<Path>, config: ShardConfig) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let config = ShardConfig::new(config.object_shard_bits, config.map_shard_bits)?;
        if root.join("manifest").exists() {
            return Err(StoreError::InvalidConfig(format!(
                "store already exists at {}",
                root.display()
            )));
        }
        fs::create_dir_all(&root)?;
        let manifest = Manifest::new(config);
        write_atomic(&root.join("manifest"), manifest.render().as_bytes())?;
        Ok(ObjectStore {
            root,
            manifest,
            shards: HashMap::new(),
            read_only: false,
            dirty: false,
        })
    }

    /// Opens an existing store for writing, or creates it with `config`.
    pub fn open_or_create(root: impl AsRef<Path>, config: ShardConfig) -> Result<Self> {
        if root.as_ref().join("manifest").exists() {
            Self::open(root)
        } else {
            Self::create(root, config)
        }
    }

    /// Opens for writing at the current version, discarding any uncommitted
    /// tail left by an interrupted writer.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        Self::open_inner(root.as_ref(), None, false)
    }

    pub fn open_read_only(root: impl AsRef<Path>) -> Result<Self> {
        Self::open_inner(root.as_ref(), None, true)
    }

    /// Read-only view of the store as it was at `version`.
    pub fn open_at(root: impl AsRef<Path>, version: u64) -> Result<Self> {
        Self::open_inner(root.as_ref(), Some(version), true)
    }

    fn open_inner(root: &Path, version: Option<u64>, read_only: bool) -> Result<Self> {
        let text = match fs::read_to_string(root.join("manifest")) {
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::Missing(root.to_owned())),
            r => r?,
        };
        let mut manifest = Manifest::parse(&text)?;
        let snapshot = match version {
            Some(v) => manifest
                .snapshot(v)
                .ok_or(StoreError::UnknownVersion(v))?,
            None => manifest.current(),
        };
        if version.is_some() {
            manifest.snapshots.retain(|s| s.version <= snapshot.version);
        }
        let mut shards = HashMap::new();
        for kind in ObjectKind::ALL {
            let kind_dir = root.join(kind.as_str());
            for shard in 0..manifest.config.object_shards() {
                let dir = kind_dir.join(shard.to_string());
                let count = snapshot.count(kind, shard);
                if !dir.exists() {
                    if count > 0 {
                        return Err(StoreError::StoreCorrupt(format!(
                            "{}: missing, manifest expects {count} objects",
                            dir.display()
                        )));
                    }
                    continue;
                }
                let s = load_shard(
                    dir,
                    shard,
                    count as usize,
                    &manifest.config,
                    read_only,
                )?;
                shards.insert((kind, shard), s);
            }
        }
        Ok(ObjectStore {
            root: root.to_path_buf(),
            manifest,
            shards,
            read_only,
            dirty: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> ShardConfig {
        self.manifest.config
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    /// Last committed version. Uncommitted puts do not change it.
    pub fn version(&self) -> u64 {
        self.manifest.version()
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn shard_of(&self, id: &ObjectId) -> u32 {
        shard_of_object(id, &self.manifest.config)
    }

    /// Validates then stores.
    pub fn put_raw(&mut self, kind: ObjectKind, id: ObjectId, payload: Vec<u8>) -> Result<PutResult> {
        let obj = gitcore::validate(id, kind, payload)
            .map_err(|(_, reason)| StoreError::PreconditionFailed(reason))?;
        self.put(&obj)
    }

    pub fn put(&mut self, obj: &ValidatedObject) -> Result<PutResult> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        let kind = obj.kind();
        let id = obj.id();
        let shard_no = self.shard_of(&id);
        let root = &self.root;
        let shard = self.shards.entry((kind, shard_no)).or_insert_with(|| {
            Shard::empty(root.join(kind.as_str()).join(shard_no.to_string()))
        });
        if shard.presence.contains_key(&id) {
            return Ok(PutResult::Duplicate);
        }
        if shard.log.is_none() {
            fs::create_dir_all(&shard.dir)?;
            let f = OpenOptions::new()
                .read(true)
                .append(true)
                .create(true)
                .open(shard.dir.join("log.bin"))?;
            shard.log = Some(f);
        }
        let compressed = self.manifest.codec.compress(obj.payload());
        let offset = shard.log_end();
        // log append precedes any index update
        shard
            .log
            .as_mut()
            .expect("opened above")
            .write_all(&compressed)?;
        let ordinal = shard.entries.len() as u64;
        shard.entries.push(ContentLogEntry {
            id,
            offset,
            length: compressed.len() as u64,
        });
        shard.presence.insert(id, ordinal);
        self.dirty = true;
        Ok(PutResult::Inserted)
    }

    /// Persists indexes for every put since the last commit and bumps the
    /// store version. A commit with nothing new keeps the version.
    pub fn commit(&mut self) -> Result<u64> {
        if self.read_only {
            return Err(StoreError::ReadOnly);
        }
        if !self.dirty {
            return Ok(self.version());
        }
        let mut counts = BTreeMap::new();
        for ((kind, shard_no), shard) in self.shards.iter_mut() {
            if shard.entries.len() > shard.committed {
                if let Some(log) = &shard.log {
                    log.sync_data()?;
                }
                let mut buf = Vec::new();
                for e in &shard.entries[shard.committed..] {
                    buf.extend_from_slice(&e.encode());
                }
                let mut idx = OpenOptions::new()
                    .append(true)
                    .create(true)
                    .open(shard.dir.join("offsets.idx"))?;
                idx.write_all(&buf)?;
                idx.sync_data()?;
                write_atomic(
                    &shard.dir.join("presence.idx"),
                    &encode_presence(&shard.entries),
                )?;
                shard.committed = shard.entries.len();
            }
            if !shard.entries.is_empty() {
                counts.insert((*kind, *shard_no), shard.entries.len() as u64);
            }
        }
        let version = self.version() + 1;
        self.manifest.snapshots.push(Snapshot { version, counts });
        write_atomic(
            &self.root.join("manifest"),
            self.manifest.render().as_bytes(),
        )?;
        self.dirty = false;
        Ok(version)
    }

    pub fn contains(&self, kind: ObjectKind, id: &ObjectId) -> bool {
        self.shards
            .get(&(kind, self.shard_of(id)))
            .is_some_and(|s| s.presence.contains_key(id))
    }

    /// Membership for a stream of ids; output order follows input order.
    pub fn contains_batch<'a, I>(&self, kind: ObjectKind, ids: I) -> Vec<bool>
    where
        I: IntoIterator<Item = &'a ObjectId>,
    {
        ids.into_iter().map(|id| self.contains(kind, id)).collect()
    }

    pub fn kind_of(&self, id: &ObjectId) -> Option<ObjectKind> {
        ObjectKind::ALL.into_iter().find(|k| self.contains(*k, id))
    }

    /// Insertion ordinal within the object's shard.
    pub fn ordinal(&self, kind: ObjectKind, id: &ObjectId) -> Option<u64> {
        self.shards
            .get(&(kind, self.shard_of(id)))
            .and_then(|s| s.presence.get(id).copied())
    }

    pub fn entry(&self, kind: ObjectKind, id: &ObjectId) -> Option<ContentLogEntry> {
        let shard = self.shards.get(&(kind, self.shard_of(id)))?;
        let ord = *shard.presence.get(id)?;
        shard.entries.get(ord as usize).copied()
    }

    pub fn get(&self, kind: ObjectKind, id: &ObjectId) -> Result<Vec<u8>> {
        let not_found = || StoreError::NotFound { kind, id: *id };
        let shard = self
            .shards
            .get(&(kind, self.shard_of(id)))
            .ok_or_else(not_found)?;
        let ord = *shard.presence.get(id).ok_or_else(not_found)?;
        let entry = shard.entries[ord as usize];
        let log = shard.log.as_ref().ok_or_else(|| {
            StoreError::StoreCorrupt(format!("{}: no content log", shard.dir.display()))
        })?;
        let mut buf = vec![0u8; entry.length as usize];
        log.read_exact_at(&mut buf, entry.offset)?;
        self.manifest
            .codec
            .decompress(&buf)
            .map_err(|source| StoreError::DecompressFailed {
                kind,
                id: *id,
                source,
            })
    }

    pub fn get_record(&self, kind: ObjectKind, id: &ObjectId) -> Result<GitObjectRecord> {
        let payload = self.get(kind, id)?;
        gitcore::parse_object(kind, &payload).map_err(|e| {
            StoreError::StoreCorrupt(format!("stored {kind} {id} does not parse: {e}"))
        })
    }

    pub fn commit_record(&self, id: &ObjectId) -> Result<CommitRecord> {
        match self.get_record(ObjectKind::Commit, id)? {
            GitObjectRecord::Commit(c) => Ok(c),
            _ => unreachable!("parsed as commit"),
        }
    }

    pub fn tree_record(&self, id: &ObjectId) -> Result<TreeRecord> {
        match self.get_record(ObjectKind::Tree, id)? {
            GitObjectRecord::Tree(t) => Ok(t),
            _ => unreachable!("parsed as tree"),
        }
    }

    pub fn count(&self, kind: ObjectKind) -> u64 {
        self.shards
            .iter()
            .filter(|((k, _), _)| *k == kind)
            .map(|(_, s)| s.entries.len() as u64)
            .sum()
    }

    pub fn shard_count(&self, kind: ObjectKind, shard: u32) -> u64 {
        self.shards
            .get(&(kind, shard))
            .map_or(0, |s| s.entries.len() as u64)
    }

    /// Ids of one shard in insertion order, from the offset index alone.
    pub fn shard_ids(&self, kind: ObjectKind, shard: u32) -> Vec<ObjectId> {
        self.shards
            .get(&(kind, shard))
            .map(|s| s.entries.iter().map(|e| e.id).collect())
            .unwrap_or_default()
    }

    /// All ids of a kind: shards ascending, insertion order within a shard.
    pub fn ids(&self, kind: ObjectKind) -> Vec<ObjectId> {
        (0..self.manifest.config.object_shards())
            .flat_map(|s| self.shard_ids(kind, s))
            .collect()
    }

    /// Sequential scan of one shard's content log in insertion order.
    pub fn sweep(&self, kind: ObjectKind, shard: u32) -> Result<Sweep> {
        let Some(s) = self.shards.get(&(kind, shard)) else {
            return Ok(Sweep::empty(kind, self.manifest.codec));
        };
        // own handle, so concurrent sweeps and appends keep separate cursors
        let reader = match &s.log {
            Some(_) => Some(BufReader::with_capacity(
                1 << 16,
                File::open(s.dir.join("log.bin"))?,
            )),
            None => None,
        };
        Ok(Sweep {
            kind,
            codec: self.manifest.codec,
            entries: s.entries.clone().into_iter(),
            reader,
            pos: 0,
        })
    }
}

fn load_shard(
    dir: PathBuf,
    shard_no: u32,
    count: usize,
    cfg: &ShardConfig,
    read_only: bool,
) -> Result<Shard> {
    let corrupt = |msg: String| StoreError::StoreCorrupt(format!("{}: {msg}", dir.display()));
    let offsets_path = dir.join("offsets.idx");
    let raw = match fs::read(&offsets_path) {
        Ok(d) => d,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    let mut entries = decode_offsets(&raw);
    if entries.len() < count {
        return Err(corrupt(format!(
            "offset index has {} records, manifest expects {count}",
            entries.len()
        )));
    }
    let on_disk = raw.len();
    entries.truncate(count);
    if !read_only && on_disk != count * OFFSET_RECORD_LEN {
        OpenOptions::new()
            .write(true)
            .open(&offsets_path)?
            .set_len((count * OFFSET_RECORD_LEN) as u64)?;
    }

    let mut prev_end = 0u64;
    for e in &entries {
        if e.offset < prev_end || (e.length == 0) {
            return Err(corrupt(format!("overlapping or empty log span for {}", e.id)));
        }
        if shard_of_object(&e.id, cfg) != shard_no {
            return Err(corrupt(format!("{} does not belong to shard {shard_no}", e.id)));
        }
        prev_end = e.end();
    }

    let log_path = dir.join("log.bin");
    let log = if log_path.exists() {
        let f = OpenOptions::new()
            .read(true)
            .append(!read_only)
            .open(&log_path)?;
        let len = f.metadata()?.len();
        if len < prev_end {
            return Err(corrupt(format!(
                "content log is {len} bytes, index expects {prev_end}"
            )));
        }
        if len > prev_end && !read_only {
            // trailing bytes without an index record
            f.set_len(prev_end)?;
        }
        Some(f)
    } else if count > 0 {
        return Err(corrupt("missing content log".into()));
    } else {
        None
    };

    let mut presence = HashMap::with_capacity(entries.len());
    let presence_path = dir.join("presence.idx");
    let stored = match fs::read(&presence_path) {
        Ok(d) => decode_presence(&d)?,
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e.into()),
    };
    if stored.len() == count {
        for (id, ord) in stored {
            match entries.get(ord as usize) {
                Some(e) if e.id == id => {
                    if presence.insert(id, ord).is_some() {
                        return Err(corrupt(format!("duplicate presence record for {id}")));
                    }
                }
                _ => {
                    return Err(corrupt(format!(
                        "presence index maps {id} to ordinal {ord}, offset index disagrees"
                    )))
                }
            }
        }
    } else {
        for (i, e) in entries.iter().enumerate() {
            if presence.insert(e.id, i as u64).is_some() {
                return Err(corrupt(format!("{} stored twice", e.id)));
            }
        }
        if !read_only {
            write_atomic(&presence_path, &encode_presence(&entries))?;
        }
    }

    Ok(Shard {
        dir,
        log,
        entries,
        presence,
        committed: count,
    })
}

/// Iterator over `(id, payload)` of one shard; see [`ObjectStore::sweep`].
pub struct Sweep {
    kind: ObjectKind,
    codec: Codec,
    entries: std::vec::IntoIter<ContentLogEntry>,
    reader: Option<BufReader<File>>,
    pos: u64,
}

impl Sweep {
    fn empty(kind: ObjectKind, codec: Codec) -> Self {
        Sweep {
            kind,
            codec,
            entries: Vec::new().into_iter(),
            reader: None,
            pos: 0,
        }
    }
}

impl Iterator for Sweep {
    type Item = Result<(ObjectId, Vec<u8>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let entry = self.entries.next()?;
        let reader = self.reader.as_mut()?;
        let mut step = || -> Result<(ObjectId, Vec<u8>)> {
            if entry.offset < self.pos {
                return Err(StoreError::StoreCorrupt("sweep went backwards".into()));
            }
            let skip = entry.offset - self.pos;
            if skip > 0 {
                io::copy(&mut reader.by_ref().take(skip), &mut io::sink())?;
            }
            let mut buf = vec![0u8; entry.length as usize];
            reader.read_exact(&mut buf)?;
            self.pos = entry.end();
            let payload =
                self.codec
                    .decompress(&buf)
                    .map_err(|source| StoreError::DecompressFailed {
                        kind: self.kind,
                        id: entry.id,
                        source,
                    })?;
            Ok((entry.id, payload))
        };
        Some(step())
    }
}
