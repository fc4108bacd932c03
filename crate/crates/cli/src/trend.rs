//! Commits and distinct authors per calendar year for one language.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Datelike};
use woc_core::gitcore::ObjectId;
use woc_core::langmaps::DepRecord;
use woc_core::store::ObjectStore;
use woc_core::xref::{self, XrefError};

/// UTC calendar year of a unix time.
pub fn utc_year(secs: i64) -> i32 {
    DateTime::from_timestamp(secs, 0)
        .map(|t| t.year())
        .unwrap_or(if secs < 0 { -262_143 } else { 262_142 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct YearRow {
    pub year: i32,
    pub commits: usize,
    pub authors: usize,
}

impl YearRow {
    /// Commits per developer.
    pub fn ratio(&self) -> f64 {
        self.commits as f64 / self.authors as f64
    }
}

impl fmt::Display for YearRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};{};{};{}", self.year, self.commits, self.authors, self.ratio())
    }
}

/// Buckets `(commit, time, author)` triples, counting each commit once.
pub fn bucket<I>(commits: I) -> Vec<YearRow>
where
    I: IntoIterator<Item = (ObjectId, i64, String)>,
{
    let mut seen = BTreeSet::new();
    let mut years: BTreeMap<i32, (usize, BTreeSet<String>)> = BTreeMap::new();
    for (c, t, a) in commits {
        if !seen.insert(c) {
            continue;
        }
        let y = years.entry(utc_year(t)).or_default();
        y.0 += 1;
        y.1.insert(a);
    }
    years
        .into_iter()
        .map(|(year, (commits, authors))| YearRow {
            year,
            commits,
            authors: authors.len(),
        })
        .collect()
}

/// Route one: commit ids (from f2c), time and author read from the store.
pub fn from_commits(store: &ObjectStore, commits: &BTreeSet<ObjectId>) -> Result<Vec<YearRow>, XrefError> {
    let rows = commits
        .iter()
        .map(|c| xref::commit_time_author(store, c).map(|(t, a)| (*c, t, a)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(bucket(rows))
}

/// Route two: time and author fields of language map records.
pub fn from_langmap(records: &[DepRecord]) -> Vec<YearRow> {
    bucket(
        records
            .iter()
            .map(|r| (r.commit, r.timestamp, r.author.clone())),
    )
}
