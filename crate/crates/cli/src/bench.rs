//! Random-lookup timing against batch size, and a full sweep for
//! comparison.

use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use woc_core::gitcore::{ObjectId, ObjectKind};
use woc_core::store::ObjectStore;
use woc_core::xref::{MultiMap, XrefError};

use crate::extsort::open_input;

pub const DEFAULT_SIZES: [usize; 4] = [100, 1_000, 10_000, 100_000];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub size: usize,
    /// Median over repetitions.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Seconds per key.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub sweep_seconds: f64,
    pub sweep_lines: u64,
}

impl BenchReport {
    pub fn seconds_at(&self, size: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.size == size).map(|r| r.seconds)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("size;seconds;keys_per_second\n");
        for r in &self.rows {
            let rate = if r.seconds > 0.0 { r.size as f64 / r.seconds } else { 0.0 };
            writeln!(s, "{};{:.6};{:.0}", r.size, r.seconds, rate).unwrap();
        }
        writeln!(s, "slope_seconds_per_key;{:.3e}", self.slope).unwrap();
        writeln!(s, "intercept_seconds;{:.3e}", self.intercept).unwrap();
        writeln!(s, "r2;{:.5}", self.r2).unwrap();
        writeln!(s, "sweep_seconds;{:.6}", self.sweep_seconds).unwrap();
        writeln!(s, "sweep_lines;{}", self.sweep_lines).unwrap();
        s
    }
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r²)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (0.0, points.first().map_or(0.0, |p| p.1), 1.0);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, my, 1.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// What a `get-values` invocation does per key: parse the text key, look
/// it up, render the output line.
fn query_batch(map: &MultiMap, keys: &[String], out: &mut String) -> Result<usize, XrefError> {
    let name = map.name();
    let mut found = 0;
    for k in keys {
        out.clear();
        let raw = name.source.parse_text(k)?;
        out.push_str(k);
        if let Some(vs) = map.get(&raw) {
            found += 1;
            for v in vs {
                out.push(';');
                out.push_str(&name.target.render(v));
            }
        }
        std::hint::black_box(&out);
    }
    Ok(found)
}

/// Times batches of uniformly sampled keys (with replacement, fixed seed).
pub fn run(
    map: &MultiMap,
    sizes: &[usize],
    repetitions: usize,
    seed: u64,
    dumps_dir: Option<&Path>,
) -> Result<BenchReport, XrefError> {
    let keys: Vec<String> = map.keys().map(|k| map.name().source.render(k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = String::new();

    // touch every shard once so no size pays for first access
    let mut warm = keys.clone();
    warm.shuffle(&mut rng);
    query_batch(map, &warm, &mut buf)?;

    let mut rows = Vec::new();
    for &size in sizes {
        let mut times = Vec::with_capacity(repetitions.max(1));
        for _ in 0..repetitions.max(1) {
            let batch: Vec<String> = if keys.is_empty() {
                Vec::new()
            } else {
                (0..size).map(|_| keys[rng.gen_range(0..keys.len())].clone()).collect()
            };
            let start = Instant::now();
            query_batch(map, &batch, &mut buf)?;
            times.push(start.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            size,
            seconds: median(times),
        });
    }
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.size as f64, r.seconds)).collect();
    let (slope, intercept, r2) = linear_fit(&points);

    let start = Instant::now();
    let sweep_lines = match dumps_dir {
        Some(dir) => sweep_dumps(dir, map.shard_count())?,
        None => map.iter().map(|(_, v)| v.len() as u64).sum(),
    };
    let sweep_seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        rows,
        slope,
        intercept,
        r2,
        sweep_seconds,
        sweep_lines,
    })
}

/// Reads every shard dump of a saved map front to back.
fn sweep_dumps(dir: &Path, shards: u32) -> Result<u64, XrefError> {
    let mut n = 0;
    let mut line = Vec::new();
    for s in 0..shards {
        let mut r = open_input(&dir.join(format!("{s}.s.gz")))?;
        loop {
            line.clear();
            if r.read_until(b'\n', &mut line)? == 0 {
                break;
            }
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MembershipReport {
    pub lookups: usize,
    pub hits: usize,
    pub seconds: f64,
}

impl MembershipReport {
    pub fn per_second(&self) -> f64 {
        if self.seconds > 0.0 {
            self.lookups as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

/// Single-thread object membership checks: half stored commit/blob ids,
/// half random ids.
pub fn membership(store: &ObjectStore, lookups: usize, seed: u64) -> MembershipReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut known: Vec<(ObjectKind, ObjectId)> = Vec::new();
    for kind in [ObjectKind::Commit, ObjectKind::Blob, ObjectKind::Tree] {
        known.extend(store.ids(kind).into_iter().map(|id| (kind, id)));
    }
    let probes: Vec<(ObjectKind, ObjectId)> = (0..lookups)
        .map(|i| {
            if i % 2 == 0 && !known.is_empty() {
                known[rng.gen_range(0..known.len())]
            } else {
                (ObjectKind::Blob, ObjectId::from_bytes(rng.gen()))
            }
        })
        .collect();
    let start = Instant::now();
    let hits = probes.iter().filter(|(k, id)| store.contains(*k, id)).count();
    MembershipReport {
        lookups,
        hits,
        seconds: start.elapsed().as_secs_f64(),
    }
}
