//! Anchor-graph affinity `A = Z Λ⁻¹ Zᵀ` and the per-view scatter matrix
//! `S = Xᵀ A X`, computed through the `P`-dimensional factor so the `n x n`
//! affinity is never formed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

/// Rows per block when computing point-to-center distances with a matrix product.
const DIST_BLOCK: usize = 4096;

/// Anchor points for one view, one center per row.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub centers: DMatrix<f64>,
    pub view_index: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }
}

/// Kernel width used for the anchor weights `exp(-dist² / σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// σ = mean distance from each point to its s-th nearest anchor.
    #[default]
    Auto,
    Fixed(f64),
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            let t = x[k] - y[k];
            acc[k] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Index of the nearest center for each row, using `‖x‖² - 2x·c + ‖c‖²`
/// (the `‖x‖²` term is constant per row and omitted). Ties go to the lowest index.
fn assign_nearest(x: &DMatrix<f64>, centers: &DMatrix<f64>) -> Vec<(usize, f64)> {
    let center_norms: Vec<f64> = centers.row_iter().map(|r| r.norm_squared()).collect();
    let ct = centers.transpose();
    let mut out = Vec::with_capacity(x.nrows());
    let mut start = 0;
    while start < x.nrows() {
        let len = DIST_BLOCK.min(x.nrows() - start);
        let block = x.rows(start, len);
        let dots = block * &ct;
        let block_assign: Vec<(usize, f64)> = (0..len)
            .into_par_iter()
            .map(|i| {
                let xn = block.row(i).norm_squared();
                let mut best = (0usize, f64::INFINITY);
                for (p, &cn) in center_norms.iter().enumerate() {
                    let d = cn - 2.0 * dots[(i, p)];
                    if d < best.1 {
                        best = (p, d);
                    }
                }
                (best.0, (best.1 + xn).max(0.0))
            })
            .collect();
        out.extend(block_assign);
        start += len;
    }
    out
}

/// Picks `p` anchors with Lloyd's k-means from a seeded k-means++ start.
pub fn select_anchors(x: &FeatureMatrix, p: usize, seed: u64, max_iters: usize) -> Result<AnchorSet> {
    let n = x.nrows();
    if p < 2 || p > n {
        return Err(Error::Config(format!(
            "anchor count must satisfy 2 <= P <= n ({n}), got {p}"
        )));
    }
    let d = x.ncols();
    let rows = x.to_row_major();
    let row = |i: usize| &rows[i * d..(i + 1) * d];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut chosen = vec![false; n];
    let mut picks = Vec::with_capacity(p);
    let first = rng.random_range(0..n);
    picks.push(first);
    chosen[first] = true;
    let mut nearest: Vec<f64> = (0..n).into_par_iter().map(|i| sq_dist(row(i), row(first))).collect();
    while picks.len() < p {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc >= target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `acc` just short of `target`
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap()
        };
        chosen[next] = true;
        picks.push(next);
        let c = row(next).to_vec();
        nearest.par_iter_mut().enumerate().for_each(|(i, m)| {
            let dd = sq_dist(row(i), &c);
            if dd < *m {
                *m = dd;
            }
        });
    }
    let mut centers = x.matrix().select_rows(&picks);

    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let assigned = assign_nearest(x.matrix(), &centers);
        let changed = assigned
            .iter()
            .zip(&assignment)
            .any(|((a, _), b)| a != b);
        assignment = assigned.iter().map(|(a, _)| *a).collect();
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; p * d];
        let mut counts = vec![0usize; p];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * d..(a + 1) * d].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        for k in 0..p {
            if counts[k] == 0 {
                // reseed an empty cluster at the point farthest from its center
                let far = assigned
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .fold((0usize, -1.0f64), |best, (i, &(_, dist))| {
                        if dist > best.1 {
                            (i, dist)
                        } else {
                            best
                        }
                    })
                    .0;
                taken[far] = true;
                for j in 0..d {
                    centers[(k, j)] = row(far)[j];
                }
            } else {
                let inv = 1.0 / counts[k] as f64;
                for j in 0..d {
                    centers[(k, j)] = sums[k * d + j] * inv;
                }
            }
        }
    }
    Ok(AnchorSet {
        centers,
        view_index: 0,
    })
}

/// Sparse row-stochastic `Z` (CSR) with the column masses `Λ = diag(Zᵀ1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGraphFactor {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    lambda: Vec<f64>,
    retained: Vec<usize>,
    s: usize,
    bandwidth: f64,
}

impl AnchorGraphFactor {
    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Number of anchors that kept positive mass.
    pub fn num_anchors(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// Indices into the original [`AnchorSet`] of the retained anchors.
    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn neighbors(&self) -> usize {
        self.s
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Nonzero `(anchor, weight)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn dense_z(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.nrows(), self.num_anchors());
        for i in 0..self.nrows() {
            for (p, w) in self.row(i) {
                z[(i, p)] = w;
            }
        }
        z
    }

    /// Materializes `A = Z Λ⁻¹ Zᵀ`. Only sensible for small `n`.
    pub fn dense_affinity(&self) -> DMatrix<f64> {
        let z = self.dense_z();
        let mut zl = z.clone();
        for (p, mut col) in zl.column_iter_mut().enumerate() {
            col /= self.lambda[p];
        }
        &zl * z.transpose()
    }
}

/// Connects every point to its `s` nearest anchors with Gaussian weights,
/// normalized per row. Anchors that end up with no mass are dropped.
pub fn build_factor(
    x: &FeatureMatrix,
    anchors: &AnchorSet,
    s: usize,
    bandwidth: Bandwidth,
) -> Result<AnchorGraphFactor> {
    let p = anchors.len();
    if s < 1 || s > p {
        return Err(Error::Config(format!(
            "neighbor count must satisfy 1 <= s <= P ({p}), got {s}"
        )));
    }
    if anchors.dim() != x.ncols() {
        return Err(Error::Shape(format!(
            "anchors have dim {}, data has {}",
            anchors.dim(),
            x.ncols()
        )));
    }
    if let Bandwidth::Fixed(b) = bandwidth {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {b}")));
        }
    }
    let n = x.nrows();
    let d = x.ncols();
    let rows = x.to_row_major();
    let centers = row_major(&anchors.centers);

    // s nearest anchors per row as (squared distance, anchor), ascending
    let knn: Vec<Vec<(f64, usize)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &rows[i * d..(i + 1) * d];
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(s + 1);
            for k in 0..p {
                let dist = sq_dist(xi, &centers[k * d..(k + 1) * d]);
                if best.len() == s && dist >= best[s - 1].0 {
                    continue;
                }
                // strict comparison keeps the lower index first among ties
                let pos = best.partition_point(|&(b, _)| b <= dist);
                best.insert(pos, (dist, k));
                best.truncate(s);
            }
            best
        })
        .collect();

    let sigma = match bandwidth {
        Bandwidth::Fixed(b) => b,
        Bandwidth::Auto => knn.iter().map(|nb| nb[s - 1].0.sqrt()).sum::<f64>() / n as f64,
    };
    if !(sigma > 0.0) && s > 1 {
        return Err(Error::Degenerate(
            "all points coincide with their anchors; automatic bandwidth is zero".into(),
        ));
    }
    let inv_sigma2 = if sigma > 0.0 { 1.0 / (sigma * sigma) } else { 0.0 };

    let mut mass = vec![0.0f64; p];
    let weights: Vec<Vec<(usize, f64)>> = knn
        .iter()
        .map(|nb| {
            let d0 = nb[0].0;
            let raw: Vec<f64> = nb.iter().map(|&(dd, _)| (-(dd - d0) * inv_sigma2).exp()).collect();
            let total: f64 = raw.iter().sum();
            nb.iter()
                .zip(raw)
                .filter(|(_, w)| *w > 0.0)
                .map(|(&(_, k), w)| (k, w / total))
                .collect()
        })
        .collect();
    for row in &weights {
        for &(k, w) in row {
            mass[k] += w;
        }
    }

    let retained: Vec<usize> = (0..p).filter(|&k| mass[k] > 0.0).collect();
    let mut remap = vec![usize::MAX; p];
    for (new, &old) in retained.iter().enumerate() {
        remap[old] = new;
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(n * s);
    let mut vals = Vec::with_capacity(n * s);
    row_ptr.push(0);
    for row in &weights {
        let mut entries: Vec<(usize, f64)> = row.iter().map(|&(k, w)| (remap[k], w)).collect();
        entries.sort_by_key(|e| e.0);
        for (k, w) in entries {
            cols.push(k);
            vals.push(w);
        }
        row_ptr.push(cols.len());
    }
    let mut lambda = vec![0.0f64; retained.len()];
    for (&k, &w) in cols.iter().zip(&vals) {
        lambda[k] += w;
    }
    Ok(AnchorGraphFactor {
        row_ptr,
        cols,
        vals,
        lambda,
        retained,
        s,
        bandwidth: sigma,
    })
}

/// Symmetric `d x d` matrix `Xᵀ A X`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScatterMatrix(DMatrix<f64>);

impl ScatterMatrix {
    /// Wraps a matrix, symmetrizing it.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Shape(format!(
                "scatter matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(ScatterMatrix(sym))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `S = (Λ^{-1/2} Zᵀ X)ᵀ (Λ^{-1/2} Zᵀ X)`, at cost `O(n·d·s + P·d²)`.
pub fn scatter_matrix(x: &FeatureMatrix, f: &AnchorGraphFactor) -> Result<ScatterMatrix> {
    if x.nrows() != f.nrows() {
        return Err(Error::Shape(format!(
            "factor built for {} rows, data has {}",
            f.nrows(),
            x.nrows()
        )));
    }
    let d = x.ncols();
    let p = f.num_anchors();
    let rows = x.to_row_major();
    // row-major P x d accumulator for Zᵀ X
    let mut ztx = vec![0.0f64; p * d];
    for i in 0..x.nrows() {
        let xi = &rows[i * d..(i + 1) * d];
        for (k, w) in f.row(i) {
            for (acc, v) in ztx[k * d..(k + 1) * d].iter_mut().zip(xi) {
                *acc += w * v;
            }
        }
    }
    for (k, &l) in f.lambda().iter().enumerate() {
        let scale = 1.0 / l.sqrt();
        for v in &mut ztx[k * d..(k + 1) * d] {
            *v *= scale;
        }
    }
    let m = DMatrix::from_row_slice(p, d, &ztx);
    ScatterMatrix::new(m.transpose() * &m)
}
