//! Multiview feature data: loading, per-view normalization, train/query
//! splitting and a seeded synthetic generator.
//!
//! Every view of a [`MultiviewDataset`] describes the same samples, so row `i`
//! of each view (and `labels[i]`, `ids[i]`) refer to one item.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LPMV_MAGIC: &[u8; 4] = b"LPMV";
const LPMV_VERSION: u32 = 1;
const LPMV_HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Dense `n x d` matrix of finite features, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(DMatrix<f64>);

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Value(format!(
                "feature matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (row, col) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::Value(format!(
                "non-finite entry at row {row}, column {col}"
            )));
        }
        Ok(FeatureMatrix(values))
    }

    /// Builds a matrix from row-major values.
    pub fn from_row_major(n: usize, d: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Shape(format!(
                "expected {} values for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, d, values))
    }

    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.0.len());
        for i in 0..self.nrows() {
            out.extend(self.0.row(i).iter());
        }
        out
    }

    /// Copies the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select_rows(rows))
    }
}

/// On-disk encodings accepted by [`load_features`] and [`write_features`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureFormat {
    Csv,
    LpmvBinary,
}

impl FeatureFormat {
    /// Guesses the format from the file extension; anything but `.csv` is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::LpmvBinary,
        }
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        FeatureFormat::Csv => parse_csv(&bytes),
        FeatureFormat::LpmvBinary => parse_lpmv(&bytes),
    }
}

pub fn write_features(path: &Path, x: &FeatureMatrix, format: FeatureFormat) -> Result<()> {
    let bytes = match format {
        FeatureFormat::Csv => encode_csv(x)?,
        FeatureFormat::LpmvBinary => encode_lpmv(x),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_csv(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut values = Vec::new();
    let mut width = None;
    let mut n = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("csv: {e}")))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Format(format!(
                    "ragged row {}: expected {w} fields, found {}",
                    line + 1,
                    record.len()
                )))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!("row {}: non-numeric token {field:?}", line + 1))
            })?;
            values.push(v);
        }
        n += 1;
    }
    let d = width.ok_or_else(|| Error::Format("csv file has no rows".into()))?;
    FeatureMatrix::from_row_major(n, d, &values)
}

fn encode_csv(x: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for i in 0..x.nrows() {
        // `{}` on f64 prints the shortest string that parses back to the same bits.
        writer
            .write_record(x.matrix().row(i).iter().map(|v| format!("{v}")))
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    writer
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))
}

fn parse_lpmv(bytes: &[u8]) -> Result<FeatureMatrix> {
    if bytes.len() < LPMV_HEADER_LEN {
        return Err(Error::Format("lpmv: truncated header".into()));
    }
    if &bytes[..4] != LPMV_MAGIC {
        return Err(Error::Format("lpmv: bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != LPMV_VERSION {
        return Err(Error::Format(format!("lpmv: unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let count = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::Format("lpmv: dimensions overflow".into()))?;
    let body = &bytes[LPMV_HEADER_LEN..];
    if body.len() != count {
        return Err(Error::Format(format!(
            "lpmv: expected {count} payload bytes for {n}x{d}, found {}",
            body.len()
        )));
    }
    if n == 0 || d == 0 {
        return Err(Error::Format(format!("lpmv: empty matrix {n}x{d}")));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    FeatureMatrix::from_row_major(n as usize, d as usize, &values)
}

fn encode_lpmv(x: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(LPMV_HEADER_LEN + 8 * x.nrows() * x.ncols());
    out.extend_from_slice(LPMV_MAGIC);
    out.extend_from_slice(&LPMV_VERSION.to_le_bytes());
    out.extend_from_slice(&(x.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(x.ncols() as u64).to_le_bytes());
    for v in x.to_row_major() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads a labels file: one integer per line, blank lines ignored.
pub fn load_labels(path: &Path) -> Result<Vec<i64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::Format(format!("labels line {}: {l:?} is not an integer", i + 1)))
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for l in labels {
        writeln!(out, "{l}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Aligned feature views of the same `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiviewDataset {
    views: Vec<FeatureMatrix>,
    labels: Option<Vec<i64>>,
    ids: Vec<u64>,
}

impl MultiviewDataset {
    /// Builds a dataset with ids `0..n`.
    pub fn new(views: Vec<FeatureMatrix>, labels: Option<Vec<i64>>) -> Result<Self> {
        let n = views.first().map(FeatureMatrix::nrows).unwrap_or(0);
        Self::with_ids(views, labels, (0..n as u64).collect())
    }

    pub fn with_ids(
        views: Vec<FeatureMatrix>,
        labels: Option<Vec<i64>>,
        ids: Vec<u64>,
    ) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::MissingView("dataset needs at least one view".into()))?;
        let n = first.nrows();
        for (m, v) in views.iter().enumerate() {
            if v.nrows() != n {
                return Err(Error::Shape(format!(
                    "view {m} has {} rows, view 0 has {n}",
                    v.nrows()
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Shape(format!(
                    "{} labels for {n} samples",
                    labels.len()
                )));
            }
        }
        if ids.len() != n {
            return Err(Error::Shape(format!("{} ids for {n} samples", ids.len())));
        }
        Ok(MultiviewDataset { views, labels, ids })
    }

    pub fn len(&self) -> usize {
        self.views[0].nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn views(&self) -> &[FeatureMatrix] {
        &self.views
    }

    pub fn view(&self, m: usize) -> &FeatureMatrix {
        &self.views[m]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(FeatureMatrix::ncols).collect()
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Keeps only the listed views, in the given order.
    pub fn select_views(&self, views: &[usize]) -> Result<MultiviewDataset> {
        let picked = views
            .iter()
            .map(|&m| {
                self.views
                    .get(m)
                    .cloned()
                    .ok_or_else(|| Error::MissingView(format!("no view {m}")))
            })
            .collect::<Result<Vec<_>>>()?;
        MultiviewDataset::with_ids(picked, self.labels.clone(), self.ids.clone())
    }

    /// Keeps the listed rows (in order) of every view.
    pub fn select_rows(&self, rows: &[usize]) -> MultiviewDataset {
        MultiviewDataset {
            views: self.views.iter().map(|v| v.select_rows(rows)).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&i| l[i]).collect()),
            ids: rows.iter().map(|&i| self.ids[i]).collect(),
        }
    }
}

/// Per-column affine transform `(x - mean) / scale` fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl NormStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "normalization fitted on {} columns, input has {}",
                self.dim(),
                x.ncols()
            )));
        }
        let mut out = x.matrix().clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (mu, s) = (self.mean[j], self.scale[j]);
            col.apply(|v| *v = (*v - mu) / s);
        }
        Ok(FeatureMatrix(out))
    }
}

/// Centers every column and divides by its population standard deviation.
/// Constant columns keep scale 1.
pub fn normalize_view(x: &FeatureMatrix) -> Result<(FeatureMatrix, NormStats)> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Value(format!(
            "normalization needs at least 2 rows, got {n}"
        )));
    }
    let mut mean = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    for col in x.matrix().column_iter() {
        let mu = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        mean.push(mu);
        scale.push(if sd > 1e-12 * (1.0 + mu.abs()) { sd } else { 1.0 });
    }
    let stats = NormStats { mean, scale };
    let out = stats.apply(x)?;
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Partitions rows into `(train, query)` index lists, each sorted ascending.
pub fn split_indices(n: usize, labels: Option<&[i64]>, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train = Vec::new();
    if spec.stratified {
        let labels = labels
            .ok_or_else(|| Error::Config("stratified split requires labels".into()))?;
        let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        for members in by_class.values_mut() {
            members.shuffle(&mut rng);
            let take = (members.len() as f64 * spec.train_fraction).round() as usize;
            train.extend_from_slice(&members[..take]);
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let take = (n as f64 * spec.train_fraction).round() as usize;
        train.extend_from_slice(&order[..take]);
    }
    train.sort_unstable();
    let mut in_train = vec![false; n];
    for &i in &train {
        in_train[i] = true;
    }
    let query: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    if train.is_empty() || query.is_empty() {
        return Err(Error::Config(format!(
            "split of {n} samples at fraction {} leaves an empty side",
            spec.train_fraction
        )));
    }
    Ok((train, query))
}

pub fn split(ds: &MultiviewDataset, spec: &SplitSpec) -> Result<(MultiviewDataset, MultiviewDataset)> {
    let (train, query) = split_indices(ds.len(), ds.labels(), spec)?;
    Ok((ds.select_rows(&train), ds.select_rows(&query)))
}

/// Distance between cluster centers in the latent space is `CENTER_SPREAD * sqrt(2)`.
const CENTER_SPREAD: f64 = 1.0;

/// Shared latent spread relative to the per-view noise. Most of the noise is
/// view specific, so combining views can average it out.
const LATENT_NOISE_RATIO: f64 = 0.1;

/// Draws `n` samples from `n_clusters` latent clusters and embeds them into one
/// view per entry of `dims`.
///
/// Latent points live in `R^n_clusters` around one-hot centers with isotropic
/// noise of standard deviation `0.1 * noise`. Each view applies its own
/// Gaussian random linear map and adds independent isotropic noise of
/// standard deviation `noise`.
/// Sample `i` belongs to cluster `i % n_clusters`.
pub fn synth_multiview(
    n: usize,
    n_clusters: usize,
    dims: &[usize],
    noise: f64,
    seed: u64,
) -> Result<MultiviewDataset> {
    if n_clusters < 2 || n < n_clusters {
        return Err(Error::Config(format!(
            "need n >= n_clusters >= 2, got n={n}, n_clusters={n_clusters}"
        )));
    }
    if dims.is_empty() || dims.iter().any(|&d| d < 2) {
        return Err(Error::Config(format!("every view needs dim >= 2, got {dims:?}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and >= 0, got {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let latent_dim = n_clusters;
    let labels: Vec<i64> = (0..n).map(|i| (i % n_clusters) as i64).collect();
    let mut latent = DMatrix::from_fn(n, latent_dim, |i, j| {
        if labels[i] as usize == j {
            CENTER_SPREAD
        } else {
            0.0
        }
    });
    for i in 0..n {
        for j in 0..latent_dim {
            let e: f64 = StandardNormal.sample(&mut rng);
            latent[(i, j)] += LATENT_NOISE_RATIO * noise * e;
        }
    }
    let scale = 1.0 / (latent_dim as f64).sqrt();
    let mut views = Vec::with_capacity(dims.len());
    for &d in dims {
        let embed = DMatrix::from_fn(latent_dim, d, |_, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            e * scale
        });
        let mut x = &latent * embed;
        for i in 0..n {
            for j in 0..d {
                let e: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] += noise * e;
            }
        }
        views.push(FeatureMatrix::new(x)?);
    }
    MultiviewDataset::new(views, Some(labels))
}
