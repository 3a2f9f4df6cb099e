//! Minimization over matrices with orthonormal columns (`WᵀW = I`) by
//! curvilinear search along the Cayley transform.
//!
//! A step from `W` with Euclidean gradient `G` follows
//!
//! ```text
//! W(τ) = (I + τ/2 K)⁻¹ (I − τ/2 K) W,   K = G Wᵀ − W Gᵀ
//! ```
//!
//! which stays on the manifold for every `τ`. Writing `K = U Vᵀ` with
//! `U = [G, W]` and `V = [W, −G]` turns the `d x d` inverse into a `2r x 2r`
//! solve, so a trial step costs `O(d·r²)`. Step sizes come from alternating
//! Barzilai–Borwein formulas and are accepted by a nonmonotone Armijo test
//! against the largest of the last few objective values.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on `‖WᵀW − I‖∞` for a matrix to count as feasible.
pub const FEASIBILITY_TOL: f64 = 1e-8;

const MIN_STEP: f64 = 1e-10;
const MAX_STEP: f64 = 1e2;
const MAX_BACKTRACKS: usize = 40;
const REORTHONORMALIZE_EVERY: usize = 50;

/// `‖WᵀW − I‖∞` (largest absolute entry).
pub fn orthogonality_error(w: &DMatrix<f64>) -> f64 {
    let r = w.ncols();
    (w.transpose() * w - DMatrix::<f64>::identity(r, r)).amax()
}

/// A `d x r` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if w.ncols() == 0 || w.ncols() > w.nrows() {
            return Err(Error::Shape(format!(
                "Stiefel point needs 1 <= r <= d, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        let err = orthogonality_error(&w);
        if !(err <= FEASIBILITY_TOL) {
            return Err(Error::Value(format!(
                "columns are not orthonormal (‖WᵀW − I‖∞ = {err:e})"
            )));
        }
        Ok(StiefelPoint(w))
    }

    /// Orthonormalizes `w` with a thin QR; the diagonal of `R` is made positive.
    pub fn from_qr(w: DMatrix<f64>) -> Result<Self> {
        let (d, r) = w.shape();
        if r == 0 || r > d {
            return Err(Error::Shape(format!("cannot orthonormalize a {d}x{r} matrix")));
        }
        let qr = w.qr();
        let rdiag = qr.r().diagonal();
        let mut q = qr.q();
        for (j, mut col) in q.column_iter_mut().enumerate() {
            if rdiag[j] < 0.0 {
                col.neg_mut();
            }
        }
        StiefelPoint::new(q)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn rank(&self) -> usize {
        self.0.ncols()
    }
}

/// A differentiable objective on `d x r` matrices. `gradient` is the Euclidean
/// gradient; the solver projects it onto the manifold itself.
pub trait SmoothObjective {
    fn value(&self, w: &DMatrix<f64>) -> f64;

    fn gradient(&self, w: &DMatrix<f64>) -> DMatrix<f64>;

    fn value_and_gradient(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        (self.value(w), self.gradient(w))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StiefelOptions {
    pub max_iters: usize,
    /// Stop once the projected gradient `∇f − W·sym(Wᵀ∇f)` has Frobenius norm below this.
    pub grad_tol: f64,
    pub initial_step: f64,
    pub armijo_c: f64,
    pub step_shrink: f64,
    pub nonmonotone_window: usize,
}

impl Default for StiefelOptions {
    fn default() -> Self {
        StiefelOptions {
            max_iters: 100,
            grad_tol: 1e-5,
            initial_step: 1e-3,
            armijo_c: 1e-4,
            step_shrink: 0.5,
            nonmonotone_window: 5,
        }
    }
}

impl StiefelOptions {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.grad_tol > 0.0) || !(self.initial_step > 0.0) {
            return Err(Error::Config("grad_tol and initial_step must be positive".into()));
        }
        if !in_unit(self.armijo_c) || !in_unit(self.step_shrink) {
            return Err(Error::Config("armijo_c and step_shrink must lie in (0, 1)".into()));
        }
        if self.nonmonotone_window == 0 {
            return Err(Error::Config("nonmonotone_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// The Cayley curve through `W` for a fixed gradient, with the `τ`-independent
/// products cached.
struct CayleyCurve<'a> {
    w: &'a DMatrix<f64>,
    u: DMatrix<f64>,
    vtu: DMatrix<f64>,
    vtw: DMatrix<f64>,
}

impl<'a> CayleyCurve<'a> {
    fn new(w: &'a DMatrix<f64>, g: &DMatrix<f64>) -> Self {
        let (d, r) = w.shape();
        let mut u = DMatrix::zeros(d, 2 * r);
        u.columns_mut(0, r).copy_from(g);
        u.columns_mut(r, r).copy_from(w);
        let mut v = DMatrix::zeros(d, 2 * r);
        v.columns_mut(0, r).copy_from(w);
        v.columns_mut(r, r).copy_from(&(-g));
        let vt = v.transpose();
        let vtu = &vt * &u;
        let vtw = &vt * w;
        CayleyCurve { w, u, vtu, vtw }
    }

    fn at(&self, tau: f64) -> Result<DMatrix<f64>> {
        let k = self.vtu.nrows();
        let system = DMatrix::<f64>::identity(k, k) + &self.vtu * (0.5 * tau);
        let solved = system
            .lu()
            .solve(&self.vtw)
            .ok_or_else(|| Error::Numeric(format!("Cayley system singular at step {tau:e}")))?;
        let out = self.w - &self.u * solved * tau;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("Cayley step {tau:e} produced non-finite values")));
        }
        Ok(out)
    }
}

/// `W(τ) = (I + τ/2 K)⁻¹ (I − τ/2 K) W` with `K = G Wᵀ − W Gᵀ`.
pub fn cayley_curve(w: &StiefelPoint, g: &DMatrix<f64>, tau: f64) -> Result<StiefelPoint> {
    if g.shape() != w.0.shape() {
        return Err(Error::Shape(format!(
            "gradient is {:?}, point is {:?}",
            g.shape(),
            w.0.shape()
        )));
    }
    if !(tau >= 0.0) {
        return Err(Error::Value(format!("step must be nonnegative, got {tau}")));
    }
    let moved = CayleyCurve::new(&w.0, g).at(tau)?;
    Ok(StiefelPoint(moved))
}

fn projected_gradient(w: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let wtg = w.transpose() * g;
    let sym = (&wtg + wtg.transpose()) * 0.5;
    g - w * sym
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    /// Best iterate found.
    pub point: StiefelPoint,
    /// Objective at the start followed by the value after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl MinimizeOutcome {
    pub fn value(&self) -> f64 {
        self.trace.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn minimize<O: SmoothObjective + ?Sized>(
    obj: &O,
    w0: &StiefelPoint,
    opts: &StiefelOptions,
) -> Result<MinimizeOutcome> {
    opts.validate()?;
    let finite = |f: f64| {
        if f.is_finite() {
            Ok(f)
        } else {
            Err(Error::Numeric("objective returned a non-finite value".into()))
        }
    };
    let mut w = w0.0.clone();
    let (f0, mut g) = obj.value_and_gradient(&w);
    let mut f = finite(f0)?;
    let mut trace = vec![f];
    let mut best = (f, w.clone());
    let mut tau = opts.initial_step;
    let mut accepted = 0usize;
    let mut iterations = 0usize;
    let mut converged = false;
    let mut grad_norm = projected_gradient(&w, &g).norm();

    while iterations < opts.max_iters {
        if grad_norm <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let wtg = w.transpose() * &g;
        // derivative of f(W(τ)) at τ = 0 is −⟨G, G − W GᵀW⟩
        let slope = -(g.norm_squared() - wtg.dot(&wtg.transpose()));
        if !(slope < 0.0) {
            converged = true;
            break;
        }
        let reference = trace[trace.len().saturating_sub(opts.nonmonotone_window)..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let curve = CayleyCurve::new(&w, &g);
        let mut step = tau;
        let mut next = None;
        for _ in 0..MAX_BACKTRACKS {
            if let Ok(candidate) = curve.at(step) {
                let (fc, gc) = obj.value_and_gradient(&candidate);
                if fc.is_finite() && fc <= reference + opts.armijo_c * step * slope {
                    next = Some((candidate, fc, gc));
                    break;
                }
            }
            step *= opts.step_shrink;
        }
        let Some((mut w_new, mut f_new, mut g_new)) = next else {
            break;
        };
        accepted += 1;

        let dir_old = &g - &w * g.transpose() * &w;
        let dir_new = &g_new - &w_new * g_new.transpose() * &w_new;
        let s = &w_new - &w;
        let y = dir_new - dir_old;
        let sy = s.dot(&y).abs();
        let bb = if accepted % 2 == 1 {
            s.norm_squared() / sy
        } else {
            sy / y.norm_squared()
        };
        tau = if bb.is_finite() && bb > 0.0 {
            bb.clamp(MIN_STEP, MAX_STEP)
        } else {
            opts.initial_step
        };

        if accepted.is_multiple_of(REORTHONORMALIZE_EVERY) {
            w_new = StiefelPoint::from_qr(w_new)?.0;
            let (fr, gr) = obj.value_and_gradient(&w_new);
            f_new = finite(fr)?;
            g_new = gr;
        }
        w = w_new;
        f = f_new;
        g = g_new;
        trace.push(f);
        if f < best.0 {
            best = (f, w.clone());
        }
        grad_norm = projected_gradient(&w, &g).norm();
    }
    if grad_norm <= opts.grad_tol {
        converged = true;
    }
    let point = StiefelPoint::new(best.1)?;
    Ok(MinimizeOutcome {
        point,
        trace,
        iterations,
        grad_norm,
        converged,
    })
}
