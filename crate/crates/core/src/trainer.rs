//! Alternating minimization of the multiview hashing objective
//!
//! ```text
//! Σ_m  −Tr(W_mᵀ S_m W_m) + (1/μ_m) ‖B − X_m W_m‖²_F
//! ```
//!
//! over orthonormal projections `W_m`, view weights `μ_m` and codes
//! `B ∈ {−1, +1}^{n x r}`. Each outer iteration updates every `W_m` on the
//! Stiefel manifold, then `μ`, then `B`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor_graph::{build_factor, scatter_matrix, select_anchors, AnchorSet, Bandwidth, ScatterMatrix};
use crate::codes::CodeMatrix;
use crate::dataset::{normalize_view, FeatureMatrix, MultiviewDataset, NormStats};
use crate::error::{Error, Result};
use crate::model::{weighted_sign, HashModel};
use crate::stiefel::{self, orthogonality_error, SmoothObjective, StiefelOptions, StiefelPoint};

/// Smallest loss allowed into the view-weight update, so `1/μ` stays finite.
pub const LOSS_FLOOR: f64 = 1e-12;

const DEFAULT_MAX_ANCHORS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    /// Anchors per view; `None` means `min(300, n/2)`.
    pub count: Option<usize>,
    /// Nonzeros per row of `Z`.
    pub neighbors: usize,
    pub bandwidth: Bandwidth,
    pub kmeans_iters: usize,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            count: None,
            neighbors: 3,
            bandwidth: Bandwidth::Auto,
            kmeans_iters: 20,
        }
    }
}

impl AnchorConfig {
    pub fn resolve_count(&self, n: usize) -> Result<usize> {
        let p = self.count.unwrap_or_else(|| DEFAULT_MAX_ANCHORS.min(n / 2));
        if p < 2 || p > n {
            return Err(Error::Config(format!(
                "anchor count {p} invalid for {n} samples (need 2 <= P <= n)"
            )));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub bits: usize,
    pub max_outer_iters: usize,
    pub rel_tol: f64,
    pub mu_init: f64,
    pub seed: u64,
    pub anchors: AnchorConfig,
    pub stiefel: StiefelOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            bits: 16,
            max_outer_iters: 50,
            rel_tol: 1e-6,
            mu_init: 0.5,
            seed: 0,
            anchors: AnchorConfig::default(),
            stiefel: StiefelOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits < 2 {
            return Err(Error::Config(format!("code length must be >= 2, got {}", self.bits)));
        }
        if self.max_outer_iters < 1 {
            return Err(Error::Config("max_outer_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if !(self.mu_init > 0.0 && self.mu_init.is_finite()) {
            return Err(Error::Config(format!("mu_init must be positive, got {}", self.mu_init)));
        }
        if self.anchors.neighbors < 1 {
            return Err(Error::Config("anchor neighbors must be >= 1".into()));
        }
        self.stiefel.validate()
    }
}

/// Objective change caused by each step of one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDeltas {
    /// One entry per view.
    pub projection: Vec<f64>,
    pub mu: f64,
    pub codes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    RelativeTolerance,
    MaxIterations,
    /// Every view reproduces `B` exactly; the weight update is undefined.
    ExactQuantization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Entry 0 is the objective at initialization, entry `k` after outer iteration `k`.
    pub objective_per_iter: Vec<f64>,
    pub step_deltas: Vec<StepDeltas>,
    /// Largest `‖WᵀW − I‖∞` over views, aligned with `objective_per_iter`.
    pub orthogonality_per_iter: Vec<f64>,
    /// Stiefel solver iterations per view in each outer iteration.
    pub inner_iterations: Vec<Vec<usize>>,
    pub mu_history: Vec<Vec<f64>>,
    pub iters_run: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub final_mu: Vec<f64>,
}

/// `−Tr(WᵀSW)` and `‖B − XW‖²` for one view.
fn view_terms(s: &DMatrix<f64>, w: &DMatrix<f64>, xw: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let trace = (w.transpose() * s * w).trace();
    (trace, (b - xw).norm_squared())
}

fn check_shapes(
    views: &[FeatureMatrix],
    scatters: &[ScatterMatrix],
    projections: &[StiefelPoint],
    mu: &[f64],
    b: &CodeMatrix,
) -> Result<()> {
    let m = views.len();
    if scatters.len() != m || projections.len() != m || mu.len() != m {
        return Err(Error::Shape(format!(
            "{m} views, {} scatters, {} projections, {} weights",
            scatters.len(),
            projections.len(),
            mu.len()
        )));
    }
    for (k, ((x, s), w)) in views.iter().zip(scatters).zip(projections).enumerate() {
        if x.nrows() != b.nrows() || x.ncols() != s.dim() || w.dim() != x.ncols() || w.rank() != b.bits() {
            return Err(Error::Shape(format!(
                "view {k}: X {}x{}, S {}x{}, W {}x{}, B {}x{}",
                x.nrows(),
                x.ncols(),
                s.dim(),
                s.dim(),
                w.dim(),
                w.rank(),
                b.nrows(),
                b.bits()
            )));
        }
    }
    if let Some(bad) = mu.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Value(format!("view weight {bad} is not positive")));
    }
    Ok(())
}

/// `Σ_m −Tr(W_mᵀ S_m W_m) + (1/μ_m)‖B − X_m W_m‖²` on normalized views.
pub fn objective_value(
    projections: &[StiefelPoint],
    mu: &[f64],
    views: &[FeatureMatrix],
    scatters: &[ScatterMatrix],
    b: &CodeMatrix,
) -> Result<f64> {
    check_shapes(views, scatters, projections, mu, b)?;
    let bm = b.to_matrix();
    let mut total = 0.0;
    for (((x, s), w), &m) in views.iter().zip(scatters).zip(projections).zip(mu) {
        let xw = x.matrix() * w.matrix();
        let (trace, resid) = view_terms(s.matrix(), w.matrix(), &xw, &bm);
        total += -trace + resid / m;
    }
    if !total.is_finite() {
        return Err(Error::Numeric("objective is not finite".into()));
    }
    Ok(total)
}

pub fn objective(
    model: &HashModel,
    views: &[FeatureMatrix],
    scatters: &[ScatterMatrix],
    b: &CodeMatrix,
) -> Result<f64> {
    objective_value(&model.projections, &model.mu, views, scatters, b)
}

/// Top-`r` eigenvectors of each scatter matrix, by descending eigenvalue, each
/// signed so its largest-magnitude entry is positive.
pub fn init_projections(scatters: &[ScatterMatrix], r: usize) -> Result<Vec<StiefelPoint>> {
    scatters
        .iter()
        .enumerate()
        .map(|(m, s)| {
            let d = s.dim();
            if r > d || r == 0 {
                return Err(Error::Config(format!(
                    "code length {r} exceeds view {m} dimension {d}"
                )));
            }
            let eig = SymmetricEigen::new(s.matrix().clone());
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let mut w = DMatrix::zeros(d, r);
            for (j, &k) in order.iter().take(r).enumerate() {
                let v = eig.eigenvectors.column(k);
                let pivot = v.iter().copied().fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                w.set_column(j, &(v * sign));
            }
            StiefelPoint::new(w)
        })
        .collect()
}

pub fn init_codes(n: usize, r: usize) -> CodeMatrix {
    CodeMatrix::ones(n, r)
}

/// The projection subproblem `f(W) = −Tr(WᵀSW) + (1/μ)‖B − XW‖²`, expanded as
/// `Tr(WᵀQW) − ⟨L, W⟩ + c` with `Q = (XᵀX)/μ − S`, `L = 2XᵀB/μ`, `c = ‖B‖²/μ`
/// so each evaluation costs `O(d²r)` instead of `O(n·d·r)`.
#[derive(Debug, Clone)]
pub struct ProjectionObjective {
    quad: DMatrix<f64>,
    linear: DMatrix<f64>,
    constant: f64,
}

impl ProjectionObjective {
    /// `gram` is `XᵀX`, passed in so callers can reuse it across iterations.
    pub fn new(x: &DMatrix<f64>, gram: &DMatrix<f64>, s: &DMatrix<f64>, b: &DMatrix<f64>, mu: f64) -> Self {
        let inv_mu = 1.0 / mu;
        let q = gram * inv_mu - s;
        let quad = (&q + q.transpose()) * 0.5;
        let linear = x.transpose() * b * (2.0 * inv_mu);
        ProjectionObjective {
            quad,
            linear,
            constant: b.norm_squared() * inv_mu,
        }
    }
}

impl SmoothObjective for ProjectionObjective {
    fn value(&self, w: &DMatrix<f64>) -> f64 {
        self.value_and_gradient(w).0
    }

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        self.value_and_gradient(w).1
    }

    fn value_and_gradient(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let qw = &self.quad * w;
        let value = w.dot(&qw) - self.linear.dot(w) + self.constant;
        (value, qw * 2.0 - &self.linear)
    }
}

struct ProjectionUpdate {
    point: StiefelPoint,
    xw: DMatrix<f64>,
    trace: f64,
    resid: f64,
    inner_iterations: usize,
}

#[allow(clippy::too_many_arguments)]
fn solve_projection(
    x: &DMatrix<f64>,
    gram: &DMatrix<f64>,
    s: &DMatrix<f64>,
    b: &DMatrix<f64>,
    mu: f64,
    current: &StiefelPoint,
    current_term: f64,
    opts: &StiefelOptions,
) -> Result<Option<ProjectionUpdate>> {
    let sub = ProjectionObjective::new(x, gram, s, b, mu);
    let out = stiefel::minimize(&sub, current, opts)?;
    let xw = x * out.point.matrix();
    let (trace, resid) = view_terms(s, out.point.matrix(), &xw, b);
    let term = -trace + resid / mu;
    if !term.is_finite() {
        return Err(Error::Numeric("projection update produced a non-finite objective".into()));
    }
    // the solver works on the expanded form; keep the step only if the exact form agrees
    if term > current_term {
        return Ok(None);
    }
    Ok(Some(ProjectionUpdate {
        point: out.point,
        xw,
        trace,
        resid,
        inner_iterations: out.iterations,
    }))
}

/// One W-step for a single view. Never returns a point with a larger objective.
pub fn update_projection(
    x: &FeatureMatrix,
    s: &ScatterMatrix,
    b: &CodeMatrix,
    mu_m: f64,
    w_current: &StiefelPoint,
    opts: &StiefelOptions,
) -> Result<StiefelPoint> {
    if x.nrows() != b.nrows() || x.ncols() != s.dim() || w_current.dim() != x.ncols() || w_current.rank() != b.bits() {
        return Err(Error::Shape("projection update shapes disagree".into()));
    }
    if !(mu_m > 0.0 && mu_m.is_finite()) {
        return Err(Error::Value(format!("view weight {mu_m} is not positive")));
    }
    let xm = x.matrix();
    let bm = b.to_matrix();
    let gram = xm.transpose() * xm;
    let (trace, resid) = view_terms(s.matrix(), w_current.matrix(), &(xm * w_current.matrix()), &bm);
    let current_term = -trace + resid / mu_m;
    let update = solve_projection(xm, &gram, s.matrix(), &bm, mu_m, w_current, current_term, opts)?;
    Ok(update.map_or_else(|| w_current.clone(), |u| u.point))
}

/// `μ_m = l_m / Σ_i l_i`, with each loss floored at [`LOSS_FLOOR`].
pub fn update_mu(losses: &[f64]) -> Result<Vec<f64>> {
    if losses.is_empty() {
        return Err(Error::Shape("no view losses".into()));
    }
    if let Some(bad) = losses.iter().find(|&&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::Value(format!("view loss {bad} is not a nonnegative number")));
    }
    if losses.iter().all(|&l| l == 0.0) {
        return Err(Error::Degenerate("all quantization losses are zero".into()));
    }
    let floored: Vec<f64> = losses.iter().map(|&l| l.max(LOSS_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    Ok(floored.iter().map(|l| l / total).collect())
}

/// `B = sgn(Σ_m X_m W_m / μ_m)` on normalized views.
pub fn update_codes(views: &[FeatureMatrix], projections: &[StiefelPoint], mu: &[f64]) -> Result<CodeMatrix> {
    if views.is_empty() || views.len() != projections.len() || views.len() != mu.len() {
        return Err(Error::Shape(format!(
            "{} views, {} projections, {} weights",
            views.len(),
            projections.len(),
            mu.len()
        )));
    }
    let n = views[0].nrows();
    let r = projections[0].rank();
    let mut projected = Vec::with_capacity(views.len());
    for (m, (x, w)) in views.iter().zip(projections).enumerate() {
        if x.nrows() != n || x.ncols() != w.dim() || w.rank() != r {
            return Err(Error::Shape(format!("view {m} does not match its projection")));
        }
        projected.push(x.matrix() * w.matrix());
    }
    if let Some(bad) = mu.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Value(format!("view weight {bad} is not positive")));
    }
    Ok(weighted_sign(&projected, mu))
}

/// Normalized features, anchor graph and scatter matrix for one view.
pub struct PreparedView {
    pub x: FeatureMatrix,
    pub stats: NormStats,
    pub anchors: AnchorSet,
    pub scatter: ScatterMatrix,
}

pub fn prepare_view(m: usize, raw: &FeatureMatrix, cfg: &TrainConfig) -> Result<PreparedView> {
    let p = cfg.anchors.resolve_count(raw.nrows())?;
    let (x, stats) = normalize_view(raw)?;
    let mut anchors = select_anchors(&x, p, cfg.seed.wrapping_add(m as u64), cfg.anchors.kmeans_iters)?;
    anchors.view_index = m;
    let factor = build_factor(&x, &anchors, cfg.anchors.neighbors, cfg.anchors.bandwidth)?;
    let scatter = scatter_matrix(&x, &factor)?;
    Ok(PreparedView {
        x,
        stats,
        anchors,
        scatter,
    })
}

pub fn train(ds: &MultiviewDataset, cfg: &TrainConfig) -> Result<(HashModel, CodeMatrix, TrainReport)> {
    cfg.validate()?;
    let n = ds.len();
    let r = cfg.bits;
    let min_dim = ds.dims().into_iter().min().unwrap_or(0);
    if r > min_dim {
        return Err(Error::Config(format!(
            "code length {r} exceeds the smallest view dimension {min_dim}"
        )));
    }
    cfg.anchors.resolve_count(n)?;

    let prepared: Vec<PreparedView> = ds
        .views()
        .par_iter()
        .enumerate()
        .map(|(m, raw)| prepare_view(m, raw, cfg))
        .collect::<Result<_>>()?;
    let views = prepared.len();
    let grams: Vec<DMatrix<f64>> = prepared
        .par_iter()
        .map(|v| v.x.matrix().transpose() * v.x.matrix())
        .collect();
    let scatters: Vec<ScatterMatrix> = prepared.iter().map(|v| v.scatter.clone()).collect();

    let mut w = init_projections(&scatters, r)?;
    let mut b = init_codes(n, r);
    let mut bm = b.to_matrix();
    let mut mu = vec![cfg.mu_init; views];
    let mut xw: Vec<DMatrix<f64>> = prepared.iter().zip(&w).map(|(v, w)| v.x.matrix() * w.matrix()).collect();
    let mut traces = Vec::with_capacity(views);
    let mut resids = Vec::with_capacity(views);
    for m in 0..views {
        let (t, e) = view_terms(scatters[m].matrix(), w[m].matrix(), &xw[m], &bm);
        traces.push(t);
        resids.push(e);
    }
    let total = |traces: &[f64], resids: &[f64], mu: &[f64]| -> f64 {
        traces.iter().zip(resids).zip(mu).map(|((t, e), m)| -t + e / m).sum()
    };
    let ortho = |w: &[StiefelPoint]| w.iter().map(|p| orthogonality_error(p.matrix())).fold(0.0, f64::max);

    let mut report = TrainReport {
        objective_per_iter: vec![total(&traces, &resids, &mu)],
        step_deltas: Vec::new(),
        orthogonality_per_iter: vec![ortho(&w)],
        inner_iterations: Vec::new(),
        mu_history: vec![mu.clone()],
        iters_run: 0,
        converged: false,
        stop_reason: StopReason::MaxIterations,
        final_mu: Vec::new(),
    };
    if !report.objective_per_iter[0].is_finite() {
        return Err(Error::Numeric("initial objective is not finite".into()));
    }

    for iter in 1..=cfg.max_outer_iters {
        report.iters_run = iter;
        let before_w = total(&traces, &resids, &mu);

        // W-step, views are independent
        let updates: Vec<Option<ProjectionUpdate>> = (0..views)
            .into_par_iter()
            .map(|m| {
                let current = -traces[m] + resids[m] / mu[m];
                solve_projection(
                    prepared[m].x.matrix(),
                    &grams[m],
                    scatters[m].matrix(),
                    &bm,
                    mu[m],
                    &w[m],
                    current,
                    &cfg.stiefel,
                )
            })
            .collect::<Result<_>>()?;
        let mut projection_deltas = Vec::with_capacity(views);
        let mut inner = Vec::with_capacity(views);
        for (m, update) in updates.into_iter().enumerate() {
            let old = -traces[m] + resids[m] / mu[m];
            match update {
                Some(u) => {
                    projection_deltas.push((-u.trace + u.resid / mu[m]) - old);
                    inner.push(u.inner_iterations);
                    w[m] = u.point;
                    xw[m] = u.xw;
                    traces[m] = u.trace;
                    resids[m] = u.resid;
                }
                None => {
                    projection_deltas.push(0.0);
                    inner.push(0);
                }
            }
        }
        report.inner_iterations.push(inner);

        // μ-step
        let before_mu = total(&traces, &resids, &mu);
        match update_mu(&resids) {
            Ok(next) => mu = next,
            Err(Error::Degenerate(_)) => {
                report.step_deltas.push(StepDeltas {
                    projection: projection_deltas,
                    mu: 0.0,
                    codes: 0.0,
                });
                report.objective_per_iter.push(before_mu);
                report.orthogonality_per_iter.push(ortho(&w));
                report.mu_history.push(mu.clone());
                report.converged = true;
                report.stop_reason = StopReason::ExactQuantization;
                break;
            }
            Err(e) => return Err(e),
        }
        let after_mu = total(&traces, &resids, &mu);

        // B-step
        let next_b = weighted_sign(&xw, &mu);
        if next_b != b {
            b = next_b;
            bm = b.to_matrix();
            for m in 0..views {
                resids[m] = (&bm - &xw[m]).norm_squared();
            }
        }
        let after_b = total(&traces, &resids, &mu);
        if !after_b.is_finite() {
            return Err(Error::Numeric(format!("objective diverged at iteration {iter}")));
        }

        report.step_deltas.push(StepDeltas {
            projection: projection_deltas,
            mu: after_mu - before_mu,
            codes: after_b - after_mu,
        });
        report.objective_per_iter.push(after_b);
        report.orthogonality_per_iter.push(ortho(&w));
        report.mu_history.push(mu.clone());
        log::debug!(
            "iteration {iter}: objective {after_b:.6e} (W {:.3e}, mu {:.3e}, B {:.3e}), mu {mu:?}",
            before_mu - before_w,
            after_mu - before_mu,
            after_b - after_mu
        );

        let prev = report.objective_per_iter[report.objective_per_iter.len() - 2];
        let rel = (prev - after_b).abs() / prev.abs().max(f64::MIN_POSITIVE);
        if rel < cfg.rel_tol {
            report.converged = true;
            report.stop_reason = StopReason::RelativeTolerance;
            break;
        }
    }
    report.final_mu = mu.clone();

    let (norm_stats, anchors): (Vec<_>, Vec<_>) = prepared.into_iter().map(|v| (v.stats, v.anchors)).unzip();
    let model = HashModel {
        bits: r,
        projections: w,
        mu,
        norm_stats,
        anchors,
        config: cfg.clone(),
    };
    Ok((model, b, report))
}
