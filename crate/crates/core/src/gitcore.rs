//! Byte-level model of the four git object kinds.
//!
//! Payloads here are always the post-inflation body without the
//! `<kind> <len>\0` header; [`parse_loose`] and [`encode_loose`] handle the
//! header form. Parsing never re-sorts or normalizes anything, so
//! `serialize(parse_object(k, p)) == p` holds for every well-formed payload.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use sha1::{Digest, Sha1};
use thiserror::Error;

pub const ID_LEN: usize = 20;

/// 20-byte SHA1 naming a git object.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId([u8; ID_LEN]);

impl ObjectId {
    pub const fn from_bytes(bytes: [u8; ID_LEN]) -> Self {
        ObjectId(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        let arr: [u8; ID_LEN] = bytes.try_into().ok()?;
        Some(ObjectId(arr))
    }

    pub fn as_bytes(&self) -> &[u8; ID_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Accepts upper or lower case; rendering is always lowercase.
    pub fn from_hex(s: &str) -> Result<Self, ParseIdError> {
        if s.len() != ID_LEN * 2 {
            return Err(ParseIdError(s.to_owned()));
        }
        let mut out = [0u8; ID_LEN];
        hex::decode_to_slice(s, &mut out).map_err(|_| ParseIdError(s.to_owned()))?;
        Ok(ObjectId(out))
    }

    pub fn first_byte(&self) -> u8 {
        self.0[0]
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectId({self})")
    }
}

impl FromStr for ObjectId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectId::from_hex(s)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("not a 40-character hex object id: {0:?}")]
pub struct ParseIdError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectKind {
    Commit,
    Tree,
    Blob,
    Tag,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [
        ObjectKind::Commit,
        ObjectKind::Tree,
        ObjectKind::Blob,
        ObjectKind::Tag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::Commit => "commit",
            ObjectKind::Tree => "tree",
            ObjectKind::Blob => "blob",
            ObjectKind::Tag => "tag",
        }
    }

    pub fn from_name(name: &[u8]) -> Option<Self> {
        match name {
            b"commit" => Some(ObjectKind::Commit),
            b"tree" => Some(ObjectKind::Tree),
            b"blob" => Some(ObjectKind::Blob),
            b"tag" => Some(ObjectKind::Tag),
            _ => None,
        }
    }
}

impl fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectKind {
    type Err = MalformedObject;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectKind::from_name(s.as_bytes())
            .ok_or_else(|| MalformedObject::new(format!("unknown object kind {s:?}")))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("malformed object: {reason}")]
pub struct MalformedObject {
    pub reason: String,
}

impl MalformedObject {
    fn new(reason: impl Into<String>) -> Self {
        MalformedObject {
            reason: reason.into(),
        }
    }
}

/// SHA1 over `"<kind> <len>\0" ++ payload`.
pub fn hash_object(kind: ObjectKind, payload: &[u8]) -> ObjectId {
    let mut hasher = Sha1::new();
    hasher.update(kind.as_str().as_bytes());
    hasher.update(b" ");
    hasher.update(payload.len().to_string().as_bytes());
    hasher.update([0u8]);
    hasher.update(payload);
    ObjectId(hasher.finalize().into())
}

/// Prepends the loose-object header to `payload`.
pub fn encode_loose(kind: ObjectKind, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("{} {}\0", kind, payload.len()).into_bytes();
    out.extend_from_slice(payload);
    out
}

/// Splits an inflated loose object `<kind> <len>\0<body>` into kind and body.
pub fn parse_loose(data: &[u8]) -> Result<(ObjectKind, &[u8]), MalformedObject> {
    let nul = data
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| MalformedObject::new("loose header: missing NUL"))?;
    let header = &data[..nul];
    let space = header
        .iter()
        .position(|&b| b == b' ')
        .ok_or_else(|| MalformedObject::new("loose header: missing space"))?;
    let kind = ObjectKind::from_name(&header[..space])
        .ok_or_else(|| MalformedObject::new("loose header: unknown kind"))?;
    let len = parse_decimal(&header[space + 1..])
        .ok_or_else(|| MalformedObject::new("loose header: non-decimal length"))?;
    let body = &data[nul + 1..];
    if body.len() as u64 != len {
        return Err(MalformedObject::new(format!(
            "loose header: length {} but body has {} bytes",
            len,
            body.len()
        )));
    }
    Ok((kind, body))
}

fn parse_decimal(digits: &[u8]) -> Option<u64> {
    if digits.is_empty() || !digits.iter().all(u8::is_ascii_digit) {
        return None;
    }
    // git never writes leading zeros
    if digits.len() > 1 && digits[0] == b'0' {
        return None;
    }
    std::str::from_utf8(digits).ok()?.parse().ok()
}

/// Author or committer line: `<ident> <seconds> <tz>`.
///
/// `ident` is the exact byte span between the header tag and the time field,
/// normally `Name <email>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    pub ident: Vec<u8>,
    pub time: i64,
    pub tz: String,
}

impl Signature {
    fn parse(line: &[u8]) -> Result<Self, MalformedObject> {
        let tz_sep = line
            .iter()
            .rposition(|&b| b == b' ')
            .ok_or_else(|| MalformedObject::new("signature: missing timezone"))?;
        let tz = &line[tz_sep + 1..];
        let rest = &line[..tz_sep];
        let time_sep = rest
            .iter()
            .rposition(|&b| b == b' ')
            .ok_or_else(|| MalformedObject::new("signature: missing time"))?;
        let time_raw = &rest[time_sep + 1..];
        let ident = &rest[..time_sep];
        let time = parse_signed(time_raw)
            .ok_or_else(|| MalformedObject::new("signature: non-decimal time"))?;
        if tz.is_empty() || !tz.iter().all(|b| b.is_ascii_digit() || *b == b'+' || *b == b'-') {
            return Err(MalformedObject::new("signature: bad timezone"));
        }
        Ok(Signature {
            ident: ident.to_vec(),
            time,
            tz: String::from_utf8(tz.to_vec()).expect("ascii checked"),
        })
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.ident);
        out.push(b' ');
        out.extend_from_slice(self.time.to_string().as_bytes());
        out.push(b' ');
        out.extend_from_slice(self.tz.as_bytes());
    }

    /// `Name <email>` as text; invalid UTF-8 is replaced.
    pub fn ident_str(&self) -> Cow<'_, str> {
        String::from_utf8_lossy(&self.ident)
    }

    pub fn name(&self) -> Cow<'_, str> {
        let (name, _) = split_ident(&self.ident);
        String::from_utf8_lossy(name)
    }

    pub fn email(&self) -> Cow<'_, str> {
        let (_, email) = split_ident(&self.ident);
        String::from_utf8_lossy(email)
    }

    /// `<seconds> <tz>` as it appears in the header.
    pub fn time_field(&self) -> String {
        format!("{} {}", self.time, self.tz)
    }
}

/// Splits `Name <email>` into its name and email parts.
pub fn split_ident(ident: &[u8]) -> (&[u8], &[u8]) {
    match (
        ident.iter().position(|&b| b == b'<'),
        ident.iter().rposition(|&b| b == b'>'),
    ) {
        (Some(lt), Some(gt)) if lt < gt => {
            let mut name = &ident[..lt];
            while let [head @ .., b' '] = name {
                name = head;
            }
            (name, &ident[lt + 1..gt])
        }
        _ => (ident, &[]),
    }
}

fn parse_signed(raw: &[u8]) -> Option<i64> {
    let (neg, digits) = match raw.split_first() {
        Some((b'-', rest)) => (true, rest),
        _ => (false, raw),
    };
    let v = parse_decimal(digits)?;
    let v = i64::try_from(v).ok()?;
    Some(if neg { -v } else { v })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitRecord {
    pub tree: ObjectId,
    pub parents: Vec<ObjectId>,
    pub author: Signature,
    pub committer: Signature,
    /// Headers after `committer` (encoding, gpgsig, mergetag, ...), each with
    /// its raw value including continuation lines.
    pub extra_headers: Vec<(Vec<u8>, Vec<u8>)>,
    pub message: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EntryKind {
    Blob,
    Tree,
    /// Submodule commit pointer (mode 160000); never stored locally.
    Gitlink,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeEntry {
    pub mode: String,
    pub name: Vec<u8>,
    pub id: ObjectId,
    pub entry_kind: EntryKind,
}

impl TreeEntry {
    pub fn new(mode: &str, name: impl Into<Vec<u8>>, id: ObjectId) -> Self {
        TreeEntry {
            mode: mode.to_owned(),
            name: name.into(),
            id,
            entry_kind: entry_kind_for_mode(mode),
        }
    }

    pub fn name_str(&self) -> Cow<'_, str> {
        String::from_utf8_lossy(&self.name)
    }

    fn sort_key(&self) -> Vec<u8> {
        let mut key = self.name.clone();
        if self.entry_kind == EntryKind::Tree {
            key.push(b'/');
        }
        key
    }
}

fn entry_kind_for_mode(mode: &str) -> EntryKind {
    match mode {
        "40000" | "040000" => EntryKind::Tree,
        "160000" => EntryKind::Gitlink,
        _ => EntryKind::Blob,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TreeRecord {
    pub entries: Vec<TreeEntry>,
}

impl TreeRecord {
    /// Builds a tree in git's canonical order (directories compare as if
    /// their name ended in `/`).
    pub fn new_sorted(mut entries: Vec<TreeEntry>) -> Self {
        entries.sort_by_key(TreeEntry::sort_key);
        TreeRecord { entries }
    }

    pub fn is_canonically_sorted(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[0].sort_key() < w[1].sort_key())
    }

    pub fn find(&self, name: &[u8]) -> Option<&TreeEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagRecord {
    pub object: ObjectId,
    pub target_kind: ObjectKind,
    pub name: Vec<u8>,
    pub tagger: Option<Signature>,
    pub extra_headers: Vec<(Vec<u8>, Vec<u8>)>,
    pub message: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GitObjectRecord {
    Commit(CommitRecord),
    Tree(TreeRecord),
    Blob(Vec<u8>),
    Tag(TagRecord),
}

impl GitObjectRecord {
    pub fn kind(&self) -> ObjectKind {
        match self {
            GitObjectRecord::Commit(_) => ObjectKind::Commit,
            GitObjectRecord::Tree(_) => ObjectKind::Tree,
            GitObjectRecord::Blob(_) => ObjectKind::Blob,
            GitObjectRecord::Tag(_) => ObjectKind::Tag,
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        match self {
            GitObjectRecord::Commit(c) => c.serialize(),
            GitObjectRecord::Tree(t) => t.serialize(),
            GitObjectRecord::Blob(b) => b.clone(),
            GitObjectRecord::Tag(t) => t.serialize(),
        }
    }

    pub fn id(&self) -> ObjectId {
        hash_object(self.kind(), &self.serialize())
    }
}

pub fn parse_object(kind: ObjectKind, payload: &[u8]) -> Result<GitObjectRecord, MalformedObject> {
    Ok(match kind {
        ObjectKind::Commit => GitObjectRecord::Commit(CommitRecord::parse(payload)?),
        ObjectKind::Tree => GitObjectRecord::Tree(TreeRecord::parse(payload)?),
        ObjectKind::Blob => GitObjectRecord::Blob(payload.to_vec()),
        ObjectKind::Tag => GitObjectRecord::Tag(TagRecord::parse(payload)?),
    })
}

/// Header lines of a commit or tag up to the blank separator line.
struct HeaderReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn new(data: &'a [u8]) -> Self {
        HeaderReader { data, pos: 0 }
    }

    /// Next `(key, value)` with continuation lines folded into the value
    /// (joined by `\n`, leading space kept). `None` at the blank line or
    /// end of input.
    fn next_header(&mut self) -> Result<Option<(&'a [u8], &'a [u8])>, MalformedObject> {
        let rest = &self.data[self.pos..];
        if rest.is_empty() {
            return Ok(None);
        }
        if rest[0] == b'\n' {
            return Ok(None);
        }
        let mut end = self.pos;
        loop {
            let nl = self.data[end..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| MalformedObject::new("header: unterminated line"))?;
            end += nl + 1;
            if self.data.get(end) != Some(&b' ') {
                break;
            }
        }
        let line = &self.data[self.pos..end - 1];
        self.pos = end;
        let space = line
            .iter()
            .position(|&b| b == b' ')
            .ok_or_else(|| MalformedObject::new("header: missing space"))?;
        Ok(Some((&line[..space], &line[space + 1..])))
    }

    fn peek_key(&self) -> Option<&'a [u8]> {
        let rest = &self.data[self.pos..];
        let space = rest.iter().position(|&b| b == b' ' || b == b'\n')?;
        if rest[space] == b' ' {
            Some(&rest[..space])
        } else {
            None
        }
    }

    /// Remaining bytes after the blank line, or `None` if there was no
    /// blank line (headers ran to the end of the payload).
    fn message(&self) -> Option<&'a [u8]> {
        let rest = &self.data[self.pos..];
        match rest.first() {
            Some(b'\n') => Some(&rest[1..]),
            _ => None,
        }
    }
}

fn parse_id_value(value: &[u8], what: &str) -> Result<ObjectId, MalformedObject> {
    std::str::from_utf8(value)
        .ok()
        .and_then(|s| ObjectId::from_hex(s).ok())
        .filter(|_| value.iter().all(|b| !b.is_ascii_uppercase()))
        .ok_or_else(|| MalformedObject::new(format!("{what}: bad object id")))
}

fn write_header(out: &mut Vec<u8>, key: &[u8], value: &[u8]) {
    out.extend_from_slice(key);
    out.push(b' ');
    out.extend_from_slice(value);
    out.push(b'\n');
}

impl CommitRecord {
    pub fn parse(payload: &[u8]) -> Result<Self, MalformedObject> {
        let mut rd = HeaderReader::new(payload);
        let tree = match rd.next_header()? {
            Some((b"tree", v)) => parse_id_value(v, "tree")?,
            _ => return Err(MalformedObject::new("commit: missing tree header")),
        };
        let mut parents = Vec::new();
        while rd.peek_key() == Some(b"parent") {
            let (_, v) = rd.next_header()?.expect("peeked");
            parents.push(parse_id_value(v, "parent")?);
        }
        let author = match rd.next_header()? {
            Some((b"author", v)) => Signature::parse(v)?,
            _ => return Err(MalformedObject::new("commit: missing author header")),
        };
        let committer = match rd.next_header()? {
            Some((b"committer", v)) => Signature::parse(v)?,
            _ => return Err(MalformedObject::new("commit: missing committer header")),
        };
        let mut extra_headers = Vec::new();
        while let Some((k, v)) = rd.next_header()? {
            extra_headers.push((k.to_vec(), v.to_vec()));
        }
        let message = rd
            .message()
            .ok_or_else(|| MalformedObject::new("commit: missing message separator"))?;
        Ok(CommitRecord {
            tree,
            parents,
            author,
            committer,
            extra_headers,
            message: message.to_vec(),
        })
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(256 + self.message.len());
        write_header(&mut out, b"tree", self.tree.to_hex().as_bytes());
        for p in &self.parents {
            write_header(&mut out, b"parent", p.to_hex().as_bytes());
        }
        let mut sig = Vec::new();
        self.author.write(&mut sig);
        write_header(&mut out, b"author", &sig);
        sig.clear();
        self.committer.write(&mut sig);
        write_header(&mut out, b"committer", &sig);
        for (k, v) in &self.extra_headers {
            write_header(&mut out, k, v);
        }
        out.push(b'\n');
        out.extend_from_slice(&self.message);
        out
    }
}

impl TreeRecord {
    pub fn parse(payload: &[u8]) -> Result<Self, MalformedObject> {
        let mut entries = Vec::new();
        let mut pos = 0;
        while pos < payload.len() {
            let rest = &payload[pos..];
            let space = rest
                .iter()
                .position(|&b| b == b' ')
                .ok_or_else(|| MalformedObject::new("tree: entry missing mode separator"))?;
            let mode = &rest[..space];
            if mode.is_empty() || !mode.iter().all(|b| (b'0'..=b'7').contains(b)) {
                return Err(MalformedObject::new("tree: bad mode"));
            }
            let after_mode = &rest[space + 1..];
            let nul = after_mode
                .iter()
                .position(|&b| b == 0)
                .ok_or_else(|| MalformedObject::new("tree: entry missing NUL"))?;
            let name = &after_mode[..nul];
            if name.is_empty() || name.contains(&b'/') {
                return Err(MalformedObject::new("tree: bad entry name"));
            }
            let id_start = nul + 1;
            let id = after_mode
                .get(id_start..id_start + ID_LEN)
                .and_then(ObjectId::from_slice)
                .ok_or_else(|| MalformedObject::new("tree: truncated entry id"))?;
            let mode = std::str::from_utf8(mode).expect("octal digits");
            entries.push(TreeEntry::new(mode, name, id));
            pos += space + 1 + id_start + ID_LEN;
        }
        Ok(TreeRecord { entries })
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.entries.len() * 40);
        for e in &self.entries {
            out.extend_from_slice(e.mode.as_bytes());
            out.push(b' ');
            out.extend_from_slice(&e.name);
            out.push(0);
            out.extend_from_slice(e.id.as_bytes());
        }
        out
    }
}

impl TagRecord {
    pub fn parse(payload: &[u8]) -> Result<Self, MalformedObject> {
        let mut rd = HeaderReader::new(payload);
        let object = match rd.next_header()? {
            Some((b"object", v)) => parse_id_value(v, "object")?,
            _ => return Err(MalformedObject::new("tag: missing object header")),
        };
        let target_kind = match rd.next_header()? {
            Some((b"type", v)) => ObjectKind::from_name(v)
                .ok_or_else(|| MalformedObject::new("tag: unknown target type"))?,
            _ => return Err(MalformedObject::new("tag: missing type header")),
        };
        let name = match rd.next_header()? {
            Some((b"tag", v)) => v.to_vec(),
            _ => return Err(MalformedObject::new("tag: missing tag header")),
        };
        let tagger = if rd.peek_key() == Some(b"tagger") {
            let (_, v) = rd.next_header()?.expect("peeked");
            Some(Signature::parse(v)?)
        } else {
            None
        };
        let mut extra_headers = Vec::new();
        while let Some((k, v)) = rd.next_header()? {
            extra_headers.push((k.to_vec(), v.to_vec()));
        }
        let message = rd
            .message()
            .ok_or_else(|| MalformedObject::new("tag: missing message separator"))?;
        Ok(TagRecord {
            object,
            target_kind,
            name,
            tagger,
            extra_headers,
            message: message.to_vec(),
        })
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        write_header(&mut out, b"object", self.object.to_hex().as_bytes());
        write_header(&mut out, b"type", self.target_kind.as_str().as_bytes());
        write_header(&mut out, b"tag", &self.name);
        if let Some(t) = &self.tagger {
            let mut sig = Vec::new();
            t.write(&mut sig);
            write_header(&mut out, b"tagger", &sig);
        }
        for (k, v) in &self.extra_headers {
            write_header(&mut out, k, v);
        }
        out.push(b'\n');
        out.extend_from_slice(&self.message);
        out
    }
}

/// Why an object failed validation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RejectReason {
    #[error("zero-length payload")]
    ZeroLength,
    #[error("{0}")]
    Malformed(MalformedObject),
    #[error("re-serialization differs from the original payload")]
    NotCanonical,
    #[error("hash mismatch: payload hashes to {actual}")]
    HashMismatch { actual: ObjectId },
}

/// An object that passed [`validate`]. Only this module can construct one.
#[derive(Debug, Clone)]
pub struct ValidatedObject {
    kind: ObjectKind,
    id: ObjectId,
    payload: Vec<u8>,
}

impl ValidatedObject {
    pub fn kind(&self) -> ObjectKind {
        self.kind
    }

    pub fn id(&self) -> ObjectId {
        self.id
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn into_payload(self) -> Vec<u8> {
        self.payload
    }
}

/// Parse, re-serialize and re-hash; the result must reproduce `id`.
///
/// A zero-length payload is only accepted under the id git assigns to the
/// empty object of that kind (the empty blob `e69de29b...`, the empty tree
/// `4b825dc6...`). Any other id with no content is a truncated write.
pub fn validate(
    id: ObjectId,
    kind: ObjectKind,
    payload: Vec<u8>,
) -> Result<ValidatedObject, (Vec<u8>, RejectReason)> {
    match check(id, kind, &payload) {
        Ok(()) => Ok(ValidatedObject { kind, id, payload }),
        Err(r) => Err((payload, r)),
    }
}

fn check(id: ObjectId, kind: ObjectKind, payload: &[u8]) -> Result<(), RejectReason> {
    if payload.is_empty() && hash_object(kind, payload) != id {
        return Err(RejectReason::ZeroLength);
    }
    let record = parse_object(kind, payload).map_err(RejectReason::Malformed)?;
    let reserialized = record.serialize();
    if reserialized != payload {
        return Err(RejectReason::NotCanonical);
    }
    let actual = hash_object(kind, &reserialized);
    if actual != id {
        return Err(RejectReason::HashMismatch { actual });
    }
    Ok(())
}

pub fn validate_roundtrip(id: ObjectId, kind: ObjectKind, payload: &[u8]) -> bool {
    check(id, kind, payload).is_ok()
}

/// Same as [`validate_roundtrip`] but reports why.
pub fn roundtrip_reason(id: ObjectId, kind: ObjectKind, payload: &[u8]) -> Result<(), RejectReason> {
    check(id, kind, payload)
}
