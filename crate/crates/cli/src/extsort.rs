//! External merge sort over line streams: sorted runs spill to gzip temp
//! files once the memory budget fills, then a k-way merge writes the
//! result.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

#[derive(Debug, Clone)]
pub struct SortOptions {
    /// Bytes of line data held in memory before a run is spilled.
    pub memory_budget: usize,
    pub unique: bool,
    pub temp_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SortStats {
    pub lines_in: u64,
    pub lines_out: u64,
    pub runs: usize,
}

/// Opens a file, transparently gunzipping when it starts with the gzip
/// magic bytes. `-` is standard input.
pub fn open_input(path: &Path) -> io::Result<Box<dyn BufRead>> {
    let raw: Box<dyn Read> = if path == Path::new("-") {
        Box::new(io::stdin())
    } else {
        Box::new(File::open(path)?)
    };
    maybe_gunzip(raw)
}

pub fn maybe_gunzip(raw: Box<dyn Read>) -> io::Result<Box<dyn BufRead>> {
    let mut r = BufReader::new(raw);
    let head = r.fill_buf()?;
    if head.starts_with(&[0x1f, 0x8b]) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(r))))
    } else {
        Ok(Box::new(r))
    }
}

fn read_line(r: &mut dyn BufRead, buf: &mut Vec<u8>) -> io::Result<bool> {
    buf.clear();
    if r.read_until(b'\n', buf)? == 0 {
        return Ok(false);
    }
    if buf.last() == Some(&b'\n') {
        buf.pop();
    }
    Ok(true)
}

struct Run {
    reader: Box<dyn BufRead>,
}

fn spill(lines: &mut Vec<Vec<u8>>, dir: &Path, unique: bool) -> io::Result<(tempfile::TempPath, Run)> {
    lines.sort_unstable();
    if unique {
        lines.dedup();
    }
    let tmp = tempfile::Builder::new().prefix("run").suffix(".gz").tempfile_in(dir)?;
    let (file, path) = tmp.into_parts();
    let mut w = GzEncoder::new(BufWriter::new(file), Compression::fast());
    for l in lines.drain(..) {
        w.write_all(&l)?;
        w.write_all(b"\n")?;
    }
    w.finish()?.flush()?;
    let reader = Box::new(BufReader::new(MultiGzDecoder::new(BufReader::new(File::open(&path)?))));
    Ok((path, Run { reader }))
}

/// Sorts every line of `inputs` byte-wise into `out`.
pub fn sort_merge(
    inputs: Vec<Box<dyn BufRead>>,
    out: &mut dyn Write,
    opts: &SortOptions,
) -> io::Result<SortStats> {
    let mut stats = SortStats::default();
    let mut buffer: Vec<Vec<u8>> = Vec::new();
    let mut used = 0usize;
    let mut runs: Vec<Run> = Vec::new();
    let mut temp_paths = Vec::new();
    let mut line = Vec::new();
    for mut input in inputs {
        while read_line(input.as_mut(), &mut line)? {
            stats.lines_in += 1;
            used += line.len() + std::mem::size_of::<Vec<u8>>();
            buffer.push(std::mem::take(&mut line));
            if used >= opts.memory_budget.max(1) {
                let (p, r) = spill(&mut buffer, &opts.temp_dir, opts.unique)?;
                temp_paths.push(p);
                runs.push(r);
                used = 0;
            }
        }
    }
    stats.runs = runs.len();

    let mut w = BufWriter::new(out);
    let mut last: Option<Vec<u8>> = None;
    let mut emit = |l: Vec<u8>, w: &mut BufWriter<&mut dyn Write>| -> io::Result<()> {
        if opts.unique && last.as_deref() == Some(l.as_slice()) {
            return Ok(());
        }
        w.write_all(&l)?;
        w.write_all(b"\n")?;
        stats.lines_out += 1;
        last = Some(l);
        Ok(())
    };

    buffer.sort_unstable();
    if runs.is_empty() {
        for l in buffer {
            emit(l, &mut w)?;
        }
    } else {
        // the in-memory tail is one more sorted source
        let mut tail = buffer.into_iter();
        let mut heap: BinaryHeap<Reverse<(Vec<u8>, usize)>> = BinaryHeap::new();
        let tail_idx = runs.len();
        for (i, r) in runs.iter_mut().enumerate() {
            let mut l = Vec::new();
            if read_line(r.reader.as_mut(), &mut l)? {
                heap.push(Reverse((l, i)));
            }
        }
        if let Some(l) = tail.next() {
            heap.push(Reverse((l, tail_idx)));
        }
        while let Some(Reverse((l, i))) = heap.pop() {
            emit(l, &mut w)?;
            if i == tail_idx {
                if let Some(n) = tail.next() {
                    heap.push(Reverse((n, i)));
                }
            } else {
                let mut n = Vec::new();
                if read_line(runs[i].reader.as_mut(), &mut n)? {
                    heap.push(Reverse((n, i)));
                }
            }
        }
    }
    w.flush()?;
    drop(w);
    drop(temp_paths);
    Ok(stats)
}
