//! Cross-reference maps among authors, blobs, commits, file names and
//! projects.
//!
//! Per-commit changes come from a recursive tree diff against the first
//! parent that skips identical subtrees; merge commits only credit blobs
//! that none of their parents already had at that path. Everything else is
//! derived: inverses, and compositions through commits.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rayon::prelude::*;
use thiserror::Error;

use crate::gitcore::{EntryKind, ObjectId, TreeRecord};
use crate::ingest::MembershipJournal;
use crate::store::{top_bits, ObjectStore, ShardConfig, StoreError};

#[derive(Debug, Error)]
pub enum XrefError {
    #[error("missing object {id}{}", referenced_by.map(|r| format!(" (referenced by {r})")).unwrap_or_default())]
    MissingObject {
        id: ObjectId,
        referenced_by: Option<ObjectId>,
    },
    #[error("journal references commit {commit} of {project}, absent from the store")]
    StaleJournal { project: String, commit: ObjectId },
    #[error("map {0} is not available")]
    MapUnavailable(String),
    #[error("cannot compose {left} with {right}")]
    SchemaMismatch { left: MapName, right: MapName },
    #[error("store version mismatch: {left} vs {right}")]
    VersionMismatch { left: u64, right: u64 },
    #[error("bad {entity} key {text:?}")]
    BadKey { entity: Entity, text: String },
    #[error("map file corrupt: {0}")]
    Corrupt(String),
    #[error("{0} not found")]
    NotFound(ObjectId),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<StoreError> for XrefError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotFound { id, .. } => XrefError::MissingObject {
                id,
                referenced_by: None,
            },
            other => XrefError::Store(other),
        }
    }
}

pub type Result<T, E = XrefError> = std::result::Result<T, E>;

/// The five first-class entities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Entity {
    Author,
    Blob,
    Commit,
    File,
    Project,
}

impl Entity {
    pub const ALL: [Entity; 5] = [
        Entity::Author,
        Entity::Blob,
        Entity::Commit,
        Entity::File,
        Entity::Project,
    ];

    pub fn letter(self) -> char {
        match self {
            Entity::Author => 'a',
            Entity::Blob => 'b',
            Entity::Commit => 'c',
            Entity::File => 'f',
            Entity::Project => 'p',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        Entity::ALL.into_iter().find(|e| e.letter() == c)
    }

    /// Blobs and commits are keyed by raw 20-byte ids; the rest by text.
    pub fn is_object_id(self) -> bool {
        matches!(self, Entity::Blob | Entity::Commit)
    }

    /// Text form used in dumps and on the command line.
    pub fn render(self, key: &[u8]) -> String {
        if self.is_object_id() {
            hex::encode(key)
        } else {
            percent_encode(key)
        }
    }

    pub fn parse_text(self, text: &str) -> Result<Vec<u8>> {
        let bad = || XrefError::BadKey {
            entity: self,
            text: text.to_owned(),
        };
        if self.is_object_id() {
            ObjectId::from_hex(text)
                .map(|id| id.as_bytes().to_vec())
                .map_err(|_| bad())
        } else {
            percent_decode(text).ok_or_else(bad)
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Entity::Author => "author",
            Entity::Blob => "blob",
            Entity::Commit => "commit",
            Entity::File => "file",
            Entity::Project => "project",
        };
        f.write_str(s)
    }
}

/// Escapes the bytes that would break the `key;value` line format.
pub fn percent_encode(raw: &[u8]) -> String {
    let mut out = String::with_capacity(raw.len());
    for chunk in raw.utf8_chunks() {
        for ch in chunk.valid().chars() {
            match ch {
                '%' => out.push_str("%25"),
                ';' => out.push_str("%3B"),
                '\n' => out.push_str("%0A"),
                '\r' => out.push_str("%0D"),
                c => out.push(c),
            }
        }
        for b in chunk.invalid() {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub fn percent_decode(text: &str) -> Option<Vec<u8>> {
    let bytes = text.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = text.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    Some(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MapName {
    pub source: Entity,
    pub target: Entity,
}

impl MapName {
    pub const fn new(source: Entity, target: Entity) -> Self {
        MapName { source, target }
    }

    pub fn inverse(self) -> Self {
        MapName::new(self.target, self.source)
    }

    pub fn is_basemap(self) -> bool {
        BASEMAPS.contains(&self)
    }
}

impl fmt::Display for MapName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}2{}", self.source.letter(), self.target.letter())
    }
}

impl FromStr for MapName {
    type Err = XrefError;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.chars();
        match (chars.next(), chars.next(), chars.next(), chars.next()) {
            (Some(a), Some('2'), Some(b), None) => {
                match (Entity::from_letter(a), Entity::from_letter(b)) {
                    (Some(src), Some(dst)) => Ok(MapName::new(src, dst)),
                    _ => Err(XrefError::MapUnavailable(s.to_owned())),
                }
            }
            _ => Err(XrefError::MapUnavailable(s.to_owned())),
        }
    }
}

use Entity::{Author as A, Blob as B, Commit as C, File as F, Project as P};

/// Every materialized basemap.
pub const BASEMAPS: [MapName; 16] = [
    MapName::new(A, B),
    MapName::new(A, C),
    MapName::new(A, F),
    MapName::new(A, P),
    MapName::new(B, A),
    MapName::new(B, C),
    MapName::new(B, F),
    MapName::new(C, A),
    MapName::new(C, B),
    MapName::new(C, F),
    MapName::new(C, P),
    MapName::new(F, A),
    MapName::new(F, B),
    MapName::new(F, C),
    MapName::new(P, A),
    MapName::new(P, C),
];

/// 32-bit FNV-1a.
pub fn fnv1a_32(data: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for &b in data {
        h ^= u32::from(b);
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

/// Shard of a raw map key. Object ids use their own first byte; string keys
/// use the most significant byte of their FNV-1a hash.
pub fn map_shard_of(key: &[u8], entity: Entity, shard_bits: u8) -> u32 {
    let byte = if entity.is_object_id() {
        key.first().copied().unwrap_or(0)
    } else {
        fnv1a_32(key).to_be_bytes()[0]
    };
    top_bits(byte, shard_bits)
}

pub type Token = Vec<u8>;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
struct MapShard {
    /// Sorted by key; values sorted and deduplicated, never empty.
    entries: Vec<(Token, Vec<Token>)>,
}

impl MapShard {
    fn get(&self, key: &[u8]) -> Option<&[Token]> {
        self.entries
            .binary_search_by(|(k, _)| k.as_slice().cmp(key))
            .ok()
            .map(|i| self.entries[i].1.as_slice())
    }
}

/// One directed multi-valued map, sharded by key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiMap {
    name: MapName,
    shard_bits: u8,
    store_version: u64,
    shards: Vec<MapShard>,
    /// Keys whose value sets were cut at the build cap.
    truncated: BTreeSet<Token>,
}

/// Accumulates pairs before freezing into a [`MultiMap`].
#[derive(Debug, Clone)]
pub struct MapBuilder {
    name: MapName,
    shard_bits: u8,
    store_version: u64,
    shards: Vec<BTreeMap<Token, BTreeSet<Token>>>,
}

impl MapBuilder {
    pub fn new(name: MapName, shard_bits: u8, store_version: u64) -> Self {
        MapBuilder {
            name,
            shard_bits,
            store_version,
            shards: vec![BTreeMap::new(); 1 << shard_bits],
        }
    }

    pub fn insert(&mut self, key: Token, value: Token) {
        let s = map_shard_of(&key, self.name.source, self.shard_bits) as usize;
        self.shards[s].entry(key).or_default().insert(value);
    }

    pub fn extend_key<I: IntoIterator<Item = Token>>(&mut self, key: Token, values: I) {
        let s = map_shard_of(&key, self.name.source, self.shard_bits) as usize;
        let set = self.shards[s].entry(key).or_default();
        set.extend(values);
        if set.is_empty() {
            // never store a key without values
            let k: Vec<Token> = self.shards[s]
                .iter()
                .filter(|(_, v)| v.is_empty())
                .map(|(k, _)| k.clone())
                .collect();
            for key in k {
                self.shards[s].remove(&key);
            }
        }
    }

    pub fn build(self) -> MultiMap {
        self.build_capped(None)
    }

    /// Freezes the map; value sets longer than `cap` keep their first `cap`
    /// values and the key is flagged as truncated.
    pub fn build_capped(self, cap: Option<usize>) -> MultiMap {
        let results: Vec<(MapShard, Vec<Token>)> = self
            .shards
            .into_par_iter()
            .map(|shard| {
                let mut truncated = Vec::new();
                let entries = shard
                    .into_iter()
                    .map(|(k, v)| {
                        let mut vals: Vec<Token> = v.into_iter().collect();
                        if let Some(cap) = cap {
                            if vals.len() > cap {
                                vals.truncate(cap);
                                truncated.push(k.clone());
                            }
                        }
                        (k, vals)
                    })
                    .collect();
                (MapShard { entries }, truncated)
            })
            .collect();
        let mut shards = Vec::with_capacity(results.len());
        let mut truncated = BTreeSet::new();
        for (s, t) in results {
            shards.push(s);
            truncated.extend(t);
        }
        MultiMap {
            name: self.name,
            shard_bits: self.shard_bits,
            store_version: self.store_version,
            shards,
            truncated,
        }
    }
}

/// One row of a lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupResult<'a> {
    pub key: Token,
    pub values: &'a [Token],
    pub present: bool,
}

impl MultiMap {
    pub fn name(&self) -> MapName {
        self.name
    }

    pub fn store_version(&self) -> u64 {
        self.store_version
    }

    pub fn shard_bits(&self) -> u8 {
        self.shard_bits
    }

    pub fn shard_count(&self) -> u32 {
        1 << self.shard_bits
    }

    pub fn truncated(&self) -> &BTreeSet<Token> {
        &self.truncated
    }

    pub fn is_truncated(&self, key: &[u8]) -> bool {
        self.truncated.contains(key)
    }

    /// Same contents under another name (e.g. a p2p partition map reused
    /// as an identity-like map).
    pub fn renamed(mut self, name: MapName) -> Self {
        self.name = name;
        self
    }

    pub fn get(&self, key: &[u8]) -> Option<&[Token]> {
        let s = map_shard_of(key, self.name.source, self.shard_bits) as usize;
        self.shards[s].get(key)
    }

    pub fn values(&self, key: &[u8]) -> &[Token] {
        self.get(key).unwrap_or(&[])
    }

    pub fn contains_key(&self, key: &[u8]) -> bool {
        self.get(key).is_some()
    }

    /// Per-key values in input order; absent keys come back empty and
    /// flagged.
    pub fn lookup<'a, I>(&'a self, keys: I) -> impl Iterator<Item = LookupResult<'a>> + 'a
    where
        I: IntoIterator<Item = Token>,
        I::IntoIter: 'a,
    {
        keys.into_iter().map(move |key| match self.get(&key) {
            Some(values) => LookupResult {
                key,
                values,
                present: true,
            },
            None => LookupResult {
                key,
                values: &[],
                present: false,
            },
        })
    }

    pub fn key_count(&self) -> usize {
        self.shards.iter().map(|s| s.entries.len()).sum()
    }

    pub fn pair_count(&self) -> usize {
        self.shards
            .iter()
            .flat_map(|s| s.entries.iter())
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Keys of one shard in sorted order.
    pub fn shard_entries(&self, shard: u32) -> &[(Token, Vec<Token>)] {
        &self.shards[shard as usize].entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, &Vec<Token>)> {
        self.shards
            .iter()
            .flat_map(|s| s.entries.iter().map(|(k, v)| (k, v)))
    }

    pub fn keys(&self) -> impl Iterator<Item = &Token> {
        self.iter().map(|(k, _)| k)
    }

    /// Same pairs, reversed.
    pub fn invert(&self) -> MultiMap {
        self.invert_capped(None)
    }

    pub fn invert_capped(&self, cap: Option<usize>) -> MultiMap {
        let mut b = MapBuilder::new(self.name.inverse(), self.shard_bits, self.store_version);
        for (k, vs) in self.iter() {
            for v in vs {
                b.insert(v.clone(), k.clone());
            }
        }
        b.build_capped(cap)
    }

    /// `ac[k] = ∪ bc[m] for m in ab[k]`.
    pub fn compose(&self, bc: &MultiMap) -> Result<MultiMap> {
        if self.name.target != bc.name.source {
            return Err(XrefError::SchemaMismatch {
                left: self.name,
                right: bc.name,
            });
        }
        if self.store_version != bc.store_version {
            return Err(XrefError::VersionMismatch {
                left: self.store_version,
                right: bc.store_version,
            });
        }
        let name = MapName::new(self.name.source, bc.name.target);
        let shards: Vec<MapShard> = self
            .shards
            .par_iter()
            .map(|shard| {
                let entries = shard
                    .entries
                    .iter()
                    .filter_map(|(k, mids)| {
                        let vals: BTreeSet<&Token> =
                            mids.iter().flat_map(|m| bc.values(m)).collect();
                        (!vals.is_empty())
                            .then(|| (k.clone(), vals.into_iter().cloned().collect()))
                    })
                    .collect();
                MapShard { entries }
            })
            .collect();
        // source entity and shard bits carry over, so every key stays in
        // the shard it came from
        Ok(MultiMap {
            name,
            shard_bits: self.shard_bits,
            store_version: self.store_version,
            shards,
            truncated: BTreeSet::new(),
        })
    }

    /// Sorted `key;value` lines of one shard, one value per line.
    pub fn dump_lines(&self, shard: u32) -> Vec<String> {
        let mut lines: Vec<String> = self.shards[shard as usize]
            .entries
            .iter()
            .flat_map(|(k, vs)| {
                let key = self.name.source.render(k);
                vs.iter()
                    .map(move |v| format!("{};{}", key, self.name.target.render(v)))
            })
            .collect();
        lines.sort_unstable();
        lines
    }

    /// Gzip-compressed dump of one shard; byte-identical for equal maps.
    pub fn export_dump(&self, shard: u32) -> Vec<u8> {
        let mut gz = GzEncoder::new(Vec::new(), Compression::default());
        for line in self.dump_lines(shard) {
            gz.write_all(line.as_bytes()).expect("write to Vec");
            gz.write_all(b"\n").expect("write to Vec");
        }
        gz.finish().expect("finish to Vec")
    }

    /// Rebuilds a map from dump lines (any order, any shard mix).
    pub fn from_dump_lines<I, S>(
        name: MapName,
        shard_bits: u8,
        store_version: u64,
        lines: I,
    ) -> Result<MultiMap>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut b = MapBuilder::new(name, shard_bits, store_version);
        for line in lines {
            let line = line.as_ref();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once(';')
                .ok_or_else(|| XrefError::Corrupt(format!("dump line without ';': {line:?}")))?;
            b.insert(name.source.parse_text(k)?, name.target.parse_text(v)?);
        }
        Ok(b.build())
    }

    fn encode_kv(&self, shard: u32) -> Vec<u8> {
        let entries = &self.shards[shard as usize].entries;
        let mut out = Vec::new();
        out.extend_from_slice(KV_MAGIC);
        out.extend_from_slice(&self.store_version.to_le_bytes());
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (k, vs) in entries {
            put_bytes(&mut out, k);
            out.extend_from_slice(&(vs.len() as u32).to_le_bytes());
            for v in vs {
                put_bytes(&mut out, v);
            }
        }
        out
    }

    /// Writes `<dir>/<name>/{meta, <shard>.kv, <shard>.s.gz}`.
    pub fn save(&self, maps_dir: &Path) -> Result<()> {
        let dir = maps_dir.join(self.name.to_string());
        fs::create_dir_all(&dir)?;
        for shard in 0..self.shard_count() {
            fs::write(dir.join(format!("{shard}.kv")), self.encode_kv(shard))?;
            fs::write(dir.join(format!("{shard}.s.gz")), self.export_dump(shard))?;
        }
        let mut meta = format!(
            "name {}\nversion {}\nshard_bits {}\n",
            self.name, self.store_version, self.shard_bits
        );
        for t in &self.truncated {
            meta.push_str(&format!("truncated {}\n", self.name.source.render(t)));
        }
        fs::write(dir.join("meta"), meta)?;
        Ok(())
    }

    pub fn load(maps_dir: &Path, name: MapName) -> Result<MultiMap> {
        let dir = maps_dir.join(name.to_string());
        let meta = match fs::read_to_string(dir.join("meta")) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(XrefError::MapUnavailable(name.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let mut version = None;
        let mut bits = None;
        let mut truncated = BTreeSet::new();
        for line in meta.lines() {
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            match k {
                "name" if v != name.to_string() => {
                    return Err(XrefError::Corrupt(format!("{}: meta names {v}", dir.display())))
                }
                "version" => version = v.parse::<u64>().ok(),
                "shard_bits" => bits = v.parse::<u8>().ok().filter(|b| *b <= 8),
                "truncated" => {
                    truncated.insert(name.source.parse_text(v)?);
                }
                _ => {}
            }
        }
        let (Some(version), Some(bits)) = (version, bits) else {
            return Err(XrefError::Corrupt(format!("{}: incomplete meta", dir.display())));
        };
        let mut shards = Vec::with_capacity(1 << bits);
        for shard in 0..(1u32 << bits) {
            let data = fs::read(dir.join(format!("{shard}.kv")))?;
            let (v, entries) = decode_kv(&data)?;
            if v != version {
                return Err(XrefError::VersionMismatch {
                    left: version,
                    right: v,
                });
            }
            if entries
                .iter()
                .any(|(k, _)| map_shard_of(k, name.source, bits) != shard)
            {
                return Err(XrefError::Corrupt(format!(
                    "{}: key outside shard {shard}",
                    dir.display()
                )));
            }
            shards.push(MapShard { entries });
        }
        Ok(MultiMap {
            name,
            shard_bits: bits,
            store_version: version,
            shards,
            truncated,
        })
    }
}

const KV_MAGIC: &[u8; 8] = b"WOCKV001";

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

/// Decodes a `.kv` shard file into its version and sorted entries.
pub fn decode_kv(data: &[u8]) -> Result<(u64, Vec<(Token, Vec<Token>)>)> {
    struct Cursor<'a>(&'a [u8]);
    impl<'a> Cursor<'a> {
        fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.0.len() < n {
                return Err(XrefError::Corrupt("truncated .kv file".into()));
            }
            let (h, t) = self.0.split_at(n);
            self.0 = t;
            Ok(h)
        }
        fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
        }
        fn bytes(&mut self) -> Result<Token> {
            let n = self.u32()? as usize;
            Ok(self.take(n)?.to_vec())
        }
    }
    let mut c = Cursor(data);
    if c.take(8)? != KV_MAGIC {
        return Err(XrefError::Corrupt("bad .kv magic".into()));
    }
    let version = u64::from_le_bytes(c.take(8)?.try_into().expect("8"));
    let n = c.u32()? as usize;
    let mut entries: Vec<(Token, Vec<Token>)> = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let k = c.bytes()?;
        let nv = c.u32()? as usize;
        if nv == 0 {
            return Err(XrefError::Corrupt("key without values".into()));
        }
        let mut vs = Vec::with_capacity(nv.min(1 << 16));
        for _ in 0..nv {
            vs.push(c.bytes()?);
        }
        if vs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(XrefError::Corrupt("values not sorted".into()));
        }
        if entries.last().is_some_and(|(prev, _)| *prev >= k) {
            return Err(XrefError::Corrupt("keys not sorted".into()));
        }
        entries.push((k, vs));
    }
    if !c.0.is_empty() {
        return Err(XrefError::Corrupt("trailing bytes in .kv file".into()));
    }
    Ok((version, entries))
}

/// Reads gzip dump files back into lines.
pub fn read_dump(path: &Path) -> Result<Vec<String>> {
    let reader = BufReader::new(MultiGzDecoder::new(BufReader::new(File::open(path)?)));
    Ok(reader.lines().collect::<io::Result<_>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChangeKind {
    Added,
    Modified,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChangeRecord {
    pub commit: ObjectId,
    pub path: String,
    /// Post-image, or the pre-image for deletions.
    pub blob: ObjectId,
    pub kind: ChangeKind,
}

fn load_tree(store: &ObjectStore, id: &ObjectId, referenced_by: ObjectId) -> Result<TreeRecord> {
    store.tree_record(id).map_err(|e| match e {
        StoreError::NotFound { .. } => XrefError::MissingObject {
            id: *id,
            referenced_by: Some(referenced_by),
        },
        other => other.into(),
    })
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}/{name}")
    }
}

fn collect_tree(
    store: &ObjectStore,
    tree: &ObjectId,
    referenced_by: ObjectId,
    prefix: &str,
    out: &mut Vec<(String, ObjectId)>,
) -> Result<()> {
    let t = load_tree(store, tree, referenced_by)?;
    for e in &t.entries {
        let path = join(prefix, &e.name_str());
        match e.entry_kind {
            EntryKind::Blob => out.push((path, e.id)),
            EntryKind::Tree => collect_tree(store, &e.id, *tree, &path, out)?,
            EntryKind::Gitlink => {}
        }
    }
    Ok(())
}

/// Every `(path, blob)` of a commit's tree.
pub fn snapshot_blobs(store: &ObjectStore, commit: &ObjectId) -> Result<BTreeSet<(String, ObjectId)>> {
    let c = store.commit_record(commit)?;
    let mut out = Vec::new();
    collect_tree(store, &c.tree, *commit, "", &mut out)?;
    Ok(out.into_iter().collect())
}

/// Blob id at `path` inside `tree`, if any.
pub fn lookup_path(store: &ObjectStore, tree: &ObjectId, path: &str) -> Result<Option<ObjectId>> {
    let mut current = *tree;
    let mut parts = path.split('/').peekable();
    while let Some(part) = parts.next() {
        let t = load_tree(store, &current, current)?;
        let Some(e) = t.entries.iter().find(|e| e.name_str() == part) else {
            return Ok(None);
        };
        match (e.entry_kind, parts.peek().is_some()) {
            (EntryKind::Tree, true) => current = e.id,
            (EntryKind::Blob, false) => return Ok(Some(e.id)),
            _ => return Ok(None),
        }
    }
    Ok(None)
}

enum Delta {
    Added(String, ObjectId),
    Modified(String, ObjectId),
    Deleted(String, ObjectId),
}

fn diff_trees(
    store: &ObjectStore,
    old: Option<ObjectId>,
    new: Option<ObjectId>,
    owner: ObjectId,
    prefix: &str,
    out: &mut Vec<Delta>,
) -> Result<()> {
    if old == new {
        return Ok(());
    }
    let old_t = match old {
        Some(id) => load_tree(store, &id, owner)?,
        None => TreeRecord::default(),
    };
    let new_t = match new {
        Some(id) => load_tree(store, &id, owner)?,
        None => TreeRecord::default(),
    };
    let mut old_map: HashMap<&[u8], (EntryKind, ObjectId)> = old_t
        .entries
        .iter()
        .filter(|e| e.entry_kind != EntryKind::Gitlink)
        .map(|e| (e.name.as_slice(), (e.entry_kind, e.id)))
        .collect();
    let owner_new = new.unwrap_or(owner);
    let owner_old = old.unwrap_or(owner);
    for e in &new_t.entries {
        if e.entry_kind == EntryKind::Gitlink {
            continue;
        }
        let path = join(prefix, &e.name_str());
        let before = old_map.remove(e.name.as_slice());
        match (e.entry_kind, before) {
            (EntryKind::Blob, Some((EntryKind::Blob, old_id))) => {
                if old_id != e.id {
                    out.push(Delta::Modified(path, e.id));
                }
            }
            (EntryKind::Blob, other) => {
                if let Some((EntryKind::Tree, old_id)) = other {
                    diff_trees(store, Some(old_id), None, owner_old, &path, out)?;
                }
                out.push(Delta::Added(path, e.id));
            }
            (EntryKind::Tree, Some((EntryKind::Tree, old_id))) => {
                diff_trees(store, Some(old_id), Some(e.id), owner_new, &path, out)?;
            }
            (EntryKind::Tree, other) => {
                if let Some((EntryKind::Blob, old_id)) = other {
                    out.push(Delta::Deleted(path.clone(), old_id));
                }
                diff_trees(store, None, Some(e.id), owner_new, &path, out)?;
            }
            (EntryKind::Gitlink, _) => unreachable!("filtered"),
        }
    }
    for e in &old_t.entries {
        if let Some((kind, id)) = old_map.remove(e.name.as_slice()) {
            let path = join(prefix, &e.name_str());
            match kind {
                EntryKind::Blob => out.push(Delta::Deleted(path, id)),
                EntryKind::Tree => diff_trees(store, Some(id), None, owner_old, &path, out)?,
                EntryKind::Gitlink => {}
            }
        }
    }
    Ok(())
}

/// Files and blobs a commit introduced, modified or deleted.
///
/// Root commits add every blob. Otherwise the tree is diffed against the
/// first parent (identical subtrees are skipped); for merges, a new or
/// modified `(path, blob)` that some other parent already had is dropped.
/// Records are sorted by path.
pub fn changed_blobs(store: &ObjectStore, commit: &ObjectId) -> Result<Vec<ChangeRecord>> {
    let c = store.commit_record(commit)?;
    let mut deltas = Vec::new();
    let first_tree = match c.parents.first() {
        Some(p) => Some(
            store
                .commit_record(p)
                .map_err(|e| match e {
                    StoreError::NotFound { .. } => XrefError::MissingObject {
                        id: *p,
                        referenced_by: Some(*commit),
                    },
                    other => other.into(),
                })?
                .tree,
        ),
        None => None,
    };
    diff_trees(store, first_tree, Some(c.tree), *commit, "", &mut deltas)?;

    let other_trees: Vec<ObjectId> = c.parents[c.parents.len().min(1)..]
        .iter()
        .map(|p| store.commit_record(p).map(|pc| pc.tree))
        .collect::<Result<_, _>>()?;

    let mut out = Vec::with_capacity(deltas.len());
    for d in deltas {
        let (path, blob, kind) = match d {
            Delta::Added(p, b) => (p, b, ChangeKind::Added),
            Delta::Modified(p, b) => (p, b, ChangeKind::Modified),
            Delta::Deleted(p, b) => (p, b, ChangeKind::Deleted),
        };
        if kind != ChangeKind::Deleted && !other_trees.is_empty() {
            let mut inherited = false;
            for t in &other_trees {
                if lookup_path(store, t, &path)? == Some(blob) {
                    inherited = true;
                    break;
                }
            }
            if inherited {
                continue;
            }
        }
        out.push(ChangeRecord {
            commit: *commit,
            path,
            blob,
            kind,
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

/// Author time and `Name <email>` straight from the commit object.
pub fn commit_time_author(store: &ObjectStore, commit: &ObjectId) -> Result<(i64, String)> {
    let c = store.commit_record(commit).map_err(|e| match e {
        StoreError::NotFound { .. } => XrefError::NotFound(*commit),
        other => other.into(),
    })?;
    Ok((c.author.time, c.author.ident_str().into_owned()))
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Commits with more change records than this stay out of the
    /// file/blob maps.
    pub pathological_commit_cap: usize,
    /// Blobs reached from more commits than this are cut in b2c.
    pub ubiquitous_blob_cap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            pathological_commit_cap: 10_000,
            ubiquitous_blob_cap: 10_000,
        }
    }
}

/// Every basemap built from one store version.
#[derive(Debug, Clone)]
pub struct MapSet {
    pub store_version: u64,
    pub shard_bits: u8,
    pub maps: BTreeMap<MapName, MultiMap>,
    /// Commits left out of c2f/c2b/f2c/b2c/f2b/b2f for exceeding the cap.
    pub excluded_commits: BTreeSet<ObjectId>,
}

pub const MAPS_DIR: &str = "maps";
const MAPSET_INDEX: &str = "MAPS";
const EXCLUDED_FILE: &str = "excluded_commits";

impl MapSet {
    pub fn get(&self, name: MapName) -> Result<&MultiMap> {
        self.maps
            .get(&name)
            .ok_or_else(|| XrefError::MapUnavailable(name.to_string()))
    }

    pub fn maps_dir(store_root: &Path) -> PathBuf {
        store_root.join(MAPS_DIR)
    }

    /// Persists every map plus an index naming the version they share.
    pub fn save(&self, store_root: &Path) -> Result<()> {
        let dir = Self::maps_dir(store_root);
        fs::create_dir_all(&dir)?;
        self.maps
            .par_iter()
            .map(|(_, m)| m.save(&dir))
            .collect::<Result<Vec<()>>>()?;
        let mut w = BufWriter::new(File::create(dir.join(EXCLUDED_FILE))?);
        for c in &self.excluded_commits {
            writeln!(w, "{c}")?;
        }
        w.flush()?;
        let mut index = format!(
            "version {}\nshard_bits {}\n",
            self.store_version, self.shard_bits
        );
        for name in self.maps.keys() {
            index.push_str(&format!("map {name}\n"));
        }
        fs::write(dir.join(MAPSET_INDEX), index)?;
        Ok(())
    }

    /// Reads the index: `(version, map names)`.
    pub fn read_index(store_root: &Path) -> Result<(u64, Vec<MapName>)> {
        let path = Self::maps_dir(store_root).join(MAPSET_INDEX);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(XrefError::MapUnavailable(format!("set {} (run build-maps)", path.display())))
            }
            Err(e) => return Err(e.into()),
        };
        let mut version = None;
        let mut names = Vec::new();
        for line in text.lines() {
            match line.split_once(' ') {
                Some(("version", v)) => version = v.parse().ok(),
                Some(("map", n)) => names.push(n.parse()?),
                _ => {}
            }
        }
        let version = version.ok_or_else(|| XrefError::Corrupt("maps index without version".into()))?;
        Ok((version, names))
    }

    /// Loads the named maps, refusing any whose version differs from the
    /// index (a mixed set).
    pub fn load(store_root: &Path, names: &[MapName]) -> Result<MapSet> {
        let (version, _) = Self::read_index(store_root)?;
        let dir = Self::maps_dir(store_root);
        let mut maps = BTreeMap::new();
        let mut bits = None;
        for name in names {
            let m = MultiMap::load(&dir, *name)?;
            if m.store_version() != version {
                return Err(XrefError::VersionMismatch {
                    left: version,
                    right: m.store_version(),
                });
            }
            bits = Some(m.shard_bits());
            maps.insert(*name, m);
        }
        let excluded = match fs::read_to_string(dir.join(EXCLUDED_FILE)) {
            Ok(t) => t
                .lines()
                .map(|l| {
                    ObjectId::from_hex(l).map_err(|_| XrefError::Corrupt(format!("excluded commit {l:?}")))
                })
                .collect::<Result<_>>()?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => BTreeSet::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(MapSet {
            store_version: version,
            shard_bits: bits.unwrap_or(5),
            maps,
            excluded_commits: excluded,
        })
    }

    pub fn load_all(store_root: &Path) -> Result<MapSet> {
        let (_, names) = Self::read_index(store_root)?;
        Self::load(store_root, &names)
    }
}

fn id_token(id: &ObjectId) -> Token {
    id.as_bytes().to_vec()
}

/// Builds all sixteen basemaps from the store and the membership journal.
pub fn build_basemaps(
    store: &ObjectStore,
    journal: &MembershipJournal,
    cfg: &ShardConfig,
    opts: &BuildOptions,
) -> Result<MapSet> {
    let version = store.version();
    let bits = cfg.map_shard_bits;

    let mut c2p = MapBuilder::new(MapName::new(C, P), bits, version);
    for (project, commit) in journal.pairs() {
        if !store.contains(crate::gitcore::ObjectKind::Commit, &commit) {
            return Err(XrefError::StaleJournal { project, commit });
        }
        c2p.insert(id_token(&commit), project.into_bytes());
    }
    let c2p = c2p.build();

    let commits = store.ids(crate::gitcore::ObjectKind::Commit);
    let per_commit: Vec<(ObjectId, String, Vec<ChangeRecord>)> = commits
        .par_iter()
        .map(|c| -> Result<_> {
            let (_, author) = commit_time_author(store, c)?;
            Ok((*c, author, changed_blobs(store, c)?))
        })
        .collect::<Result<_>>()?;

    let mut c2a = MapBuilder::new(MapName::new(C, A), bits, version);
    let mut c2f = MapBuilder::new(MapName::new(C, F), bits, version);
    let mut c2b = MapBuilder::new(MapName::new(C, B), bits, version);
    let mut f2b = MapBuilder::new(MapName::new(F, B), bits, version);
    let mut excluded = BTreeSet::new();
    for (commit, author, records) in per_commit {
        let ck = id_token(&commit);
        c2a.insert(ck.clone(), author.into_bytes());
        if records.len() > opts.pathological_commit_cap {
            excluded.insert(commit);
            continue;
        }
        for r in records.iter().filter(|r| r.kind != ChangeKind::Deleted) {
            c2f.insert(ck.clone(), r.path.clone().into_bytes());
            c2b.insert(ck.clone(), id_token(&r.blob));
            f2b.insert(r.path.clone().into_bytes(), id_token(&r.blob));
        }
    }
    let c2a = c2a.build();
    let c2f = c2f.build();
    let c2b = c2b.build();
    let f2b = f2b.build();
    if !excluded.is_empty() {
        log::info!("{} commits over the change cap left out of file/blob maps", excluded.len());
    }

    let a2c = c2a.invert();
    let f2c = c2f.invert();
    let b2c = c2b.invert_capped(Some(opts.ubiquitous_blob_cap));
    let b2f = f2b.invert();
    let p2c = c2p.invert();
    let a2b = a2c.compose(&c2b)?;
    let a2f = a2c.compose(&c2f)?;
    let a2p = a2c.compose(&c2p)?;
    let b2a = a2b.invert();
    let f2a = a2f.invert();
    let p2a = a2p.invert();

    let maps = [
        a2b, a2c, a2f, a2p, b2a, b2c, b2f, c2a, c2b, c2f, c2p, f2a, f2b, f2c, p2a, p2c,
    ]
    .into_iter()
    .map(|m| (m.name(), m))
    .collect();
    Ok(MapSet {
        store_version: version,
        shard_bits: bits,
        maps,
        excluded_commits: excluded,
    })
}

/// Writes one shard dump to a file; used by the CLI and tests.
pub fn write_dump(map: &MultiMap, shard: u32, path: &Path) -> Result<()> {
    fs::write(path, map.export_dump(shard))?;
    Ok(())
}

/// Concatenated, decompressed contents of every shard dump of a saved map.
pub fn read_all_dumps(maps_dir: &Path, name: MapName, shards: u32) -> Result<Vec<String>> {
    let dir = maps_dir.join(name.to_string());
    let mut lines = Vec::new();
    for s in 0..shards {
        let path = dir.join(format!("{s}.s.gz"));
        let mut text = String::new();
        MultiGzDecoder::new(File::open(&path)?).read_to_string(&mut text)?;
        lines.extend(text.lines().map(str::to_owned));
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference FNV-1a, written out from the published offset basis and
    // prime, checked against the published test vectors.
    fn reference_fnv(data: &[u8]) -> u32 {
        let mut hash: u64 = 2166136261;
        for b in data {
            hash ^= *b as u64;
            hash = (hash * 16777619) % (1u64 << 32);
        }
        hash as u32
    }

    #[test]
    fn fnv_test_vectors() {
        for (input, expected) in [
            (&b""[..], 0x811c9dc5u32),
            (b"a", 0xe40c292c),
            (b"foobar", 0xbf9cf968),
        ] {
            assert_eq!(reference_fnv(input), expected);
            assert_eq!(fnv1a_32(input), expected);
        }
    }

    #[test]
    fn map_shard_examples() {
        let mut id = [0x42u8; 20];
        id[0] = 0;
        assert_eq!(map_shard_of(&id, Entity::Commit, 5), 0);
        id[0] = 0xff;
        assert_eq!(map_shard_of(&id, Entity::Commit, 5), 31);
        // 0xE4 >> 3 == 28
        assert_eq!(map_shard_of(b"a", Entity::Author, 5), 28);
    }

    #[test]
    fn author_shard_histogram() {
        let mut bins = [0u32; 32];
        for i in 0..10_000 {
            let a = format!("Dev {i} <dev{i}@host{}.org>", i % 37);
            bins[map_shard_of(a.as_bytes(), Entity::Author, 5) as usize] += 1;
        }
        let max = *bins.iter().max().unwrap() as f64;
        let min = *bins.iter().min().unwrap() as f64;
        assert!(min > 0.0 && max / min < 3.0, "{bins:?}");
    }

    #[test]
    fn map_names() {
        assert_eq!("c2p".parse::<MapName>().unwrap(), MapName::new(C, P));
        assert_eq!(MapName::new(A, F).to_string(), "a2f");
        assert!("x2p".parse::<MapName>().is_err());
        assert!("c2pp".parse::<MapName>().is_err());
        assert!(MapName::new(C, P).is_basemap());
        assert!(!MapName::new(P, P).is_basemap());
        assert_eq!(BASEMAPS.iter().collect::<BTreeSet<_>>().len(), 16);
    }

    fn small_map(name: MapName, pairs: &[(&str, &str)]) -> MultiMap {
        let mut b = MapBuilder::new(name, 2, 1);
        for (k, v) in pairs {
            b.insert(
                name.source.parse_text(k).unwrap(),
                name.target.parse_text(v).unwrap(),
            );
        }
        b.build()
    }

    #[test]
    fn lookup_flags_absent_and_keeps_order() {
        let m = small_map(MapName::new(F, P), &[("x.py", "p1"), ("x.py", "p0"), ("y", "p2")]);
        let keys = vec![b"y".to_vec(), b"nope".to_vec(), b"x.py".to_vec()];
        let rows: Vec<_> = m.lookup(keys).collect();
        assert_eq!(rows[0].values, &[b"p2".to_vec()]);
        assert!(!rows[1].present && rows[1].values.is_empty());
        assert_eq!(rows[2].values, &[b"p0".to_vec(), b"p1".to_vec()]);
    }

    #[test]
    fn compose_identity_and_empty() {
        let ab = small_map(MapName::new(A, F), &[("u", "f1"), ("u", "f2"), ("w", "f2")]);
        let mut id = MapBuilder::new(MapName::new(F, F), 2, 1);
        for f in ["f1", "f2", "f3"] {
            id.insert(f.as_bytes().to_vec(), f.as_bytes().to_vec());
        }
        let composed = ab.compose(&id.build()).unwrap();
        assert_eq!(composed.name(), MapName::new(A, F));
        for (k, v) in ab.iter() {
            assert_eq!(composed.values(k), v.as_slice());
        }
        assert_eq!(composed.key_count(), ab.key_count());

        let fp = small_map(MapName::new(F, P), &[("f9", "p")]);
        let none = ab.compose(&fp).unwrap();
        assert!(none.values(b"u").is_empty());
        assert_eq!(none.key_count(), 0);
    }

    #[test]
    fn compose_checks_schema_and_version() {
        let ab = small_map(MapName::new(A, F), &[("u", "f1")]);
        let cp = small_map(MapName::new(C, P), &[]);
        assert!(matches!(ab.compose(&cp), Err(XrefError::SchemaMismatch { .. })));
        let mut fp = MapBuilder::new(MapName::new(F, P), 2, 2);
        fp.insert(b"f1".to_vec(), b"p".to_vec());
        assert!(matches!(
            ab.compose(&fp.build()),
            Err(XrefError::VersionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn dumps_are_deterministic_and_reload() {
        let m = small_map(
            MapName::new(F, C),
            &[
                ("a;b.txt", "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"),
                ("100%25", "4b825dc642cb6eb9a060e54bf8d69288fbee4904"),
                ("plain", "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"),
            ],
        );
        let mut all = Vec::new();
        for s in 0..m.shard_count() {
            assert_eq!(m.export_dump(s), m.export_dump(s));
            let lines = m.dump_lines(s);
            let mut sorted = lines.clone();
            sorted.sort();
            assert_eq!(lines, sorted);
            all.extend(lines);
        }
        assert!(all.iter().any(|l| l.starts_with("a%3Bb.txt;")));
        all.sort();
        let back = MultiMap::from_dump_lines(m.name(), 2, 1, &all).unwrap();
        assert_eq!(back, m);

        let empty = MapBuilder::new(MapName::new(F, C), 2, 1).build();
        let gz = empty.export_dump(0);
        let mut text = String::new();
        MultiGzDecoder::new(gz.as_slice()).read_to_string(&mut text).unwrap();
        assert!(text.is_empty());
    }

    #[test]
    fn save_load_roundtrip_and_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_map(MapName::new(P, C), &[("p", "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391")]);
        m.save(dir.path()).unwrap();
        assert_eq!(MultiMap::load(dir.path(), m.name()).unwrap(), m);
        assert!(matches!(
            MultiMap::load(dir.path(), MapName::new(A, C)),
            Err(XrefError::MapUnavailable(_))
        ));
    }

    #[test]
    fn truncation_caps_values() {
        let mut b = MapBuilder::new(MapName::new(C, B), 0, 1);
        for i in 0..5u8 {
            b.insert(vec![1; 20], vec![i; 20]);
        }
        b.insert(vec![2; 20], vec![9; 20]);
        let m = b.build_capped(Some(3));
        assert_eq!(m.values(&[1; 20]).len(), 3);
        assert!(m.is_truncated(&[1; 20]));
        assert!(!m.is_truncated(&[2; 20]));
    }

    #[test]
    fn kv_decoder_rejects_garbage() {
        assert!(decode_kv(b"").is_err());
        assert!(decode_kv(b"WOCKV001\0\0\0\0\0\0\0\0\x01\0\0\0").is_err());
        let mut ok = Vec::new();
        ok.extend_from_slice(KV_MAGIC);
        ok.extend_from_slice(&7u64.to_le_bytes());
        ok.extend_from_slice(&0u32.to_le_bytes());
        assert_eq!(decode_kv(&ok).unwrap(), (7, vec![]));
        ok.push(0);
        assert!(decode_kv(&ok).is_err());
    }

    proptest! {
        #[test]
        fn percent_roundtrip(s in ".*") {
            let enc = percent_encode(s.as_bytes());
            prop_assert!(!enc.contains(';') && !enc.contains('\n'));
            prop_assert_eq!(percent_decode(&enc).unwrap(), s.as_bytes().to_vec());
        }

        #[test]
        fn invert_is_dual(pairs in proptest::collection::vec(("[a-d]{1,2}", "[w-z]{1,2}"), 0..40)) {
            let mut b = MapBuilder::new(MapName::new(A, P), 3, 1);
            for (k, v) in &pairs {
                b.insert(k.as_bytes().to_vec(), v.as_bytes().to_vec());
            }
            let m = b.build();
            let inv = m.invert();
            for (k, vs) in m.iter() {
                for v in vs {
                    prop_assert!(inv.values(v).contains(k));
                }
            }
            for (v, ks) in inv.iter() {
                for k in ks {
                    prop_assert!(m.values(k).contains(v));
                }
            }
            prop_assert_eq!(inv.invert(), m);
        }

        #[test]
        fn keys_live_in_their_shard(keys in proptest::collection::btree_set(".{0,12}", 0..30)) {
            let mut b = MapBuilder::new(MapName::new(F, P), 5, 1);
            for k in &keys {
                b.insert(k.as_bytes().to_vec(), b"p".to_vec());
            }
            let m = b.build();
            for s in 0..m.shard_count() {
                for (k, _) in m.shard_entries(s) {
                    prop_assert_eq!(map_shard_of(k, Entity::File, 5), s);
                }
            }
        }
    }
}
