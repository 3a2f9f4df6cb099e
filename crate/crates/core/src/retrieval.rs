//! Hamming ranking over bit-packed codes, and MAP / precision-recall metrics.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codes::CodeMatrix;
use crate::error::{Error, Result};

/// Points kept when a PR curve is written to disk.
pub const PR_FILE_POINTS: usize = 200;

const QUERY_CHUNK: usize = 64;

/// Codes packed into `ceil(r/64)` words per sample. Bit `j` of a row is
/// bit `j % 64` of word `j / 64`, set iff the code entry is `+1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    r: usize,
    words_per_row: usize,
    words: Vec<u64>,
    ids: Vec<u64>,
}

impl PackedCodes {
    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> usize {
        self.r
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// Database ids of the rows; `0..n` unless replaced with [`PackedCodes::with_ids`].
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn with_ids(mut self, ids: Vec<u64>) -> Result<Self> {
        if ids.len() != self.n {
            return Err(Error::Shape(format!("{} ids for {} codes", ids.len(), self.n)));
        }
        let unique: HashSet<u64> = ids.iter().copied().collect();
        if unique.len() != ids.len() {
            return Err(Error::Value("code ids are not unique".into()));
        }
        self.ids = ids;
        Ok(self)
    }
}

pub fn pack(b: &CodeMatrix) -> PackedCodes {
    let (n, r) = (b.nrows(), b.bits());
    let words_per_row = r.div_ceil(64);
    let mut words = vec![0u64; n * words_per_row];
    for i in 0..n {
        let row = &mut words[i * words_per_row..(i + 1) * words_per_row];
        for (j, &e) in b.row(i).iter().enumerate() {
            if e == 1 {
                row[j / 64] |= 1 << (j % 64);
            }
        }
    }
    PackedCodes {
        n,
        r,
        words_per_row,
        words,
        ids: (0..n as u64).collect(),
    }
}

pub fn unpack(p: &PackedCodes) -> CodeMatrix {
    let mut entries = Vec::with_capacity(p.n * p.r);
    for i in 0..p.n {
        let row = p.row(i);
        entries.extend((0..p.r).map(|j| if row[j / 64] >> (j % 64) & 1 == 1 { 1i8 } else { -1 }));
    }
    CodeMatrix::from_entries(p.n, p.r, entries).expect("unpacked entries are ±1")
}

pub fn hamming(a: &[u64], b: &[u64]) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("rows of {} and {} words", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub query: u64,
    /// Database ids by ascending distance, ties by ascending id.
    pub ids: Vec<u64>,
    pub distances: Vec<u32>,
    /// Storage positions of `ids` in the database.
    pub positions: Vec<usize>,
}

/// Database positions sorted by id; the tie-break order for every ranking.
fn id_order(db: &PackedCodes) -> Vec<usize> {
    let mut order: Vec<usize> = (0..db.n).collect();
    order.sort_unstable_by_key(|&i| db.ids[i]);
    order
}

/// Counting sort on distance, scanning the database in id order.
fn rank_in_order(query: &[u64], db: &PackedCodes, order: &[usize]) -> (Vec<usize>, Vec<u32>) {
    let dist: Vec<u32> = (0..db.n)
        .map(|i| query.iter().zip(db.row(i)).map(|(x, y)| (x ^ y).count_ones()).sum())
        .collect();
    let mut start = vec![0usize; db.r + 2];
    for &d in &dist {
        start[d as usize + 1] += 1;
    }
    for k in 1..start.len() {
        start[k] += start[k - 1];
    }
    let mut positions = vec![0usize; db.n];
    let mut distances = vec![0u32; db.n];
    for &i in order {
        let slot = &mut start[dist[i] as usize];
        positions[*slot] = i;
        distances[*slot] = dist[i];
        *slot += 1;
    }
    (positions, distances)
}

fn check_width(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!("code lengths differ: {a} vs {b}")));
    }
    Ok(())
}

/// Ranks the whole database for one query row. `query_id` is carried into the result.
pub fn rank(query: &[u64], query_id: u64, db: &PackedCodes) -> Result<RankedList> {
    check_width(query.len(), db.words_per_row)?;
    let (positions, distances) = rank_in_order(query, db, &id_order(db));
    Ok(RankedList {
        query: query_id,
        ids: positions.iter().map(|&i| db.ids[i]).collect(),
        distances,
        positions,
    })
}

/// Mean of precision@k over the ranks `k` of relevant items; 0 if nothing is relevant.
pub fn average_precision(ranking: &RankedList, relevant: &HashSet<u64>) -> f64 {
    let flags: Vec<bool> = ranking.ids.iter().map(|id| relevant.contains(id)).collect();
    ap_from_flags(&flags)
}

fn ap_from_flags(flags: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &rel) in flags.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn check_labels(queries: &PackedCodes, db: &PackedCodes, labels_q: &[i64], labels_db: &[i64]) -> Result<()> {
    check_width(queries.r, db.r)?;
    if labels_q.len() != queries.n || labels_db.len() != db.n {
        return Err(Error::Shape(format!(
            "{} query labels for {} queries, {} database labels for {} items",
            labels_q.len(),
            queries.n,
            labels_db.len(),
            db.n
        )));
    }
    Ok(())
}

/// Relevance flags in rank order for query `q`.
fn relevance(q: usize, queries: &PackedCodes, db: &PackedCodes, order: &[usize], labels_q: &[i64], labels_db: &[i64]) -> Vec<bool> {
    let (positions, _) = rank_in_order(queries.row(q), db, order);
    positions.iter().map(|&i| labels_db[i] == labels_q[q]).collect()
}

/// MAP over the full ranking, relevance by label equality.
pub fn map_score(queries: &PackedCodes, db: &PackedCodes, labels_q: &[i64], labels_db: &[i64]) -> Result<f64> {
    check_labels(queries, db, labels_q, labels_db)?;
    if queries.n == 0 {
        return Err(Error::Shape("no queries".into()));
    }
    let order = id_order(db);
    let aps: Vec<f64> = (0..queries.n)
        .into_par_iter()
        .map(|q| ap_from_flags(&relevance(q, queries, db, &order, labels_q, labels_db)))
        .collect();
    Ok(aps.iter().sum::<f64>() / queries.n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub depth: usize,
    pub recall: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// At most `max_points` evenly spaced depths, always keeping the last one.
    pub fn downsample(&self, max_points: usize) -> PrCurve {
        let n = self.points.len();
        if n <= max_points || max_points == 0 {
            return self.clone();
        }
        PrCurve {
            points: (0..max_points).map(|k| self.points[(k + 1) * n / max_points - 1]).collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth,recall,precision\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.depth, p.recall, p.precision));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Precision and recall at every depth `1..=n_db`, averaged over queries.
/// A query with no relevant items contributes recall 0.
pub fn pr_curve(queries: &PackedCodes, db: &PackedCodes, labels_q: &[i64], labels_db: &[i64]) -> Result<PrCurve> {
    check_labels(queries, db, labels_q, labels_db)?;
    if queries.n == 0 {
        return Err(Error::Shape("no queries".into()));
    }
    let order = id_order(db);
    let n_db = db.n;
    // fixed chunking keeps the summation order independent of the thread count
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..queries.n)
        .collect::<Vec<_>>()
        .par_chunks(QUERY_CHUNK)
        .map(|chunk| {
            let mut precision = vec![0.0; n_db];
            let mut recall = vec![0.0; n_db];
            for &q in chunk {
                let flags = relevance(q, queries, db, &order, labels_q, labels_db);
                let total = flags.iter().filter(|&&f| f).count();
                let mut hits = 0usize;
                for (k, &rel) in flags.iter().enumerate() {
                    hits += rel as usize;
                    precision[k] += hits as f64 / (k + 1) as f64;
                    if total > 0 {
                        recall[k] += hits as f64 / total as f64;
                    }
                }
            }
            (precision, recall)
        })
        .collect();
    let mut precision = vec![0.0; n_db];
    let mut recall = vec![0.0; n_db];
    for (p, r) in &partials {
        for k in 0..n_db {
            precision[k] += p[k];
            recall[k] += r[k];
        }
    }
    let nq = queries.n as f64;
    Ok(PrCurve {
        points: (0..n_db)
            .map(|k| PrPoint {
                depth: k + 1,
                recall: recall[k] / nq,
                precision: precision[k] / nq,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map: f64,
    pub n_queries: usize,
    pub n_db: usize,
    pub r: usize,
}

impl MetricsReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(file, "{text}").map_err(|e| Error::io(path, e))
    }
}
