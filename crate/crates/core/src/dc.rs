//! Difference-of-convex relaxations of the QP, minimized by CCCP.
//!
//! Two splits of `qp(y) = phi^T y + y^T Psi y` are available:
//!
//! * generic: `p = phi^T y + y^T (Psi + D) y`, `q = y^T D y`. Each convex
//!   step is a full Frank-Wolfe solve and filters once per inner iteration.
//! * negative semi-definite compatibility: with `mu~ = mu - c 11^T` NSD and
//!   `w` the self weight `K_{a,a}`,
//!   `p = phi^T y - w sum_a y_a^T mu~ y_a + c S` and `q = -y^T (mu~ (x) K) y`,
//!   where `S = sum_{a != b} K_{a,b}`. Linearizing `q` needs one filter pass;
//!   the convex step then splits into independent `M`-dimensional problems.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;

use crate::crf::DenseCrf;
use crate::energy::{d_vector, dot};
use crate::error::{CrfError, Result};
use crate::model::{argmin_row, canonicalize_compat, check_feasible, AssignmentMatrix, CanonicalCompat};
use crate::qp::{run_frank_wolfe_warm, step_from_coefficients, ConvexQp, FwOptions};
use crate::trace::{EnergyTrace, Recorder};

#[derive(Debug, Clone, Copy)]
pub struct PixelOptions {
    pub iters: usize,
    /// Absolute FW gap at which a pixel subproblem is considered solved.
    pub tol: f64,
}

impl Default for PixelOptions {
    fn default() -> Self {
        Self { iters: 50, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CccpOptions {
    pub outer_iters: usize,
    /// Stop when the relative decrease of the QP objective falls below this.
    pub tol: f64,
    /// Inner Frank-Wolfe budget (generic split).
    pub inner: FwOptions,
    /// Per-pixel solver budget (NSD split).
    pub pixel: PixelOptions,
    pub trace_integer: bool,
}

impl Default for CccpOptions {
    fn default() -> Self {
        Self {
            outer_iters: 20,
            tol: 1e-5,
            inner: FwOptions { max_iters: 20, gap_tol: 0.0, validate_cache: false, trace_integer: false },
            pixel: PixelOptions::default(),
            trace_integer: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CccpResult {
    pub y: AssignmentMatrix,
    /// QP objective (original scale) at every outer iterate.
    pub trace: EnergyTrace,
    /// Number of convex subproblems solved.
    pub outer_iterations: usize,
}

fn converged(prev: f64, next: f64, tol: f64) -> bool {
    prev - next <= tol * prev.abs().max(f64::MIN_POSITIVE)
}

/// CCCP on the diagonal-dominance split.
pub fn run_cccp_generic(crf: &DenseCrf, y0: &AssignmentMatrix, opts: &CccpOptions) -> Result<CccpResult> {
    crf.check_shape(y0.view())?;
    check_feasible(y0.view())?;
    let d = d_vector(crf)?;
    let concave_vanishes = d.iter().all(|v| *v == 0.0);
    let mut rec = Recorder::new(crf, opts.trace_integer);
    let base = ConvexQp::relaxation(crf)?;
    let mut y = y0.clone();
    let mut product = base.product(y.view());
    let qp_value = |y: ArrayView2<'_, f64>, product: &Array2<f64>| {
        let dy2: f64 = Zip::from(&d).and(y).fold(0.0, |acc, d, y| acc + d * y * y);
        dot(crf.unary(), y) + dot(y, product.view()) - dy2
    };
    let mut obj = qp_value(y.view(), &product);
    rec.record(0, obj, &y)?;
    let mut outer = 0;
    while outer < opts.outer_iters {
        // Linearize q = y^T D y at y_t: p(y) - 2 (D y_t)^T y.
        let mut linear = crf.unary().to_owned();
        Zip::from(&mut linear).and(&d).and(y.view()).for_each(|l, d, y| *l -= 2.0 * d * y);
        let sub = ConvexQp::with_linear(crf, linear)?;
        let res = run_frank_wolfe_warm(&sub, &y, Some(product), &opts.inner)?;
        y = res.y;
        product = res.cache.psi_d_y;
        outer += 1;
        let next = qp_value(y.view(), &product);
        rec.record(outer, next, &y)?;
        let done = concave_vanishes || converged(obj, next, opts.tol);
        obj = next;
        if done {
            break;
        }
    }
    Ok(CccpResult { y, trace: rec.finish(), outer_iterations: outer })
}

/// CCCP on the NSD split; one filter pass per outer iteration.
///
/// The pass at the top of each iteration filters the current iterate with
/// self-interactions included, which gives both the linearization of the
/// concave part and the objective value of that iterate. Stopping therefore
/// costs one final pass on the last iterate.
pub fn run_cccp_negdef(crf: &DenseCrf, y0: &AssignmentMatrix, opts: &CccpOptions) -> Result<CccpResult> {
    crf.check_shape(y0.view())?;
    check_feasible(y0.view())?;
    let canon = nsd_canonical(crf)?;
    let w = crf.filter().total_weight();
    let self_quad = canon.shifted.mapv(|v| w * v);
    let concave_vanishes = w == 0.0 || canon.shifted.iter().all(|v| *v == 0.0);
    let offset = canon.offset_coeff * crf.total_pair_mass();
    let mut rec = Recorder::new(crf, opts.trace_integer);
    let mut y = y0.clone().into_inner();
    let mut prev = f64::INFINITY;
    let mut outer = 0;
    loop {
        let ky = crf.filter().apply(y.view(), true)?;
        let grad = ky.dot(&canon.shifted.t()) * 2.0;
        let obj = dot(crf.unary(), y.view()) + 0.5 * dot(y.view(), grad.view()) - pixel_quadratic(y.view(), &self_quad)
            + offset;
        let ya = AssignmentMatrix::from_raw(y.clone());
        rec.record(outer, obj, &ya)?;
        let done = outer >= opts.outer_iters
            || (outer > 0 && (concave_vanishes || converged(prev, obj, opts.tol)));
        if done {
            break;
        }
        prev = obj;
        let phi_eff = &crf.unary() + &grad;
        let rows: Vec<Array1<f64>> = (0..crf.n_vars())
            .into_par_iter()
            .map(|a| solve_pixelwise_convex(phi_eff.row(a), self_quad.view(), y.row(a), &opts.pixel))
            .collect();
        for (mut dst, src) in y.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&src);
        }
        outer += 1;
    }
    Ok(CccpResult { y: AssignmentMatrix::from_raw(y), trace: rec.finish(), outer_iterations: outer })
}

fn nsd_canonical(crf: &DenseCrf) -> Result<CanonicalCompat> {
    let canon = canonicalize_compat(crf.compat(), crf.n_labels())?;
    if !canon.nsd {
        return Err(CrfError::UnsupportedCompat(
            "shifted compatibility is not negative semi-definite".into(),
        ));
    }
    Ok(canon)
}

fn pixel_quadratic(y: ArrayView2<'_, f64>, quad: &Array2<f64>) -> f64 {
    let my = y.dot(&quad.t());
    dot(y, my.view())
}

/// Minimizes `phi^T y - y^T mu y` over the simplex. `mu` must be negative
/// semi-definite.
///
/// Pairwise Frank-Wolfe: each step moves mass from the support label with
/// the largest gradient to the label with the smallest, with exact line
/// search. Unlike plain FW steps this converges linearly when the optimum
/// lies on a face, and `M` is small enough that the support scan is free.
/// Stops once the FW gap falls to `opts.tol`.
pub fn solve_pixelwise_convex(
    phi_eff: ArrayView1<'_, f64>,
    mu_tilde: ArrayView2<'_, f64>,
    y0: ArrayView1<'_, f64>,
    opts: &PixelOptions,
) -> Array1<f64> {
    let mut y = y0.to_owned();
    // grad = phi - 2 mu y; keep mu y up to date incrementally.
    let mut my = mu_tilde.dot(&y);
    for _ in 0..opts.iters {
        let grad = &phi_eff - &(&my * 2.0);
        let k = argmin_row(grad.view());
        let gap = grad.dot(&y) - grad[k];
        if gap <= opts.tol {
            break;
        }
        let j = (0..y.len())
            .filter(|&i| y[i] > 0.0)
            .max_by(|&a, &b| grad[a].total_cmp(&grad[b]).then(b.cmp(&a)))
            .expect("a simplex point has support");
        if j == k {
            break;
        }
        // d = e_k - e_j; curvature = -d^T mu d.
        let mu_dir = mu_tilde.column(k).to_owned() - mu_tilde.column(j);
        let curvature = -(mu_dir[k] - mu_dir[j]);
        // Parametrize the step as y_j * s with s in [0, 1].
        let yj = y[j];
        let alpha = (yj * step_from_coefficients(yj * (grad[k] - grad[j]), yj * yj * curvature)).min(yj);
        if !(alpha > 0.0) {
            break;
        }
        y[k] += alpha;
        y[j] = if alpha >= yj { 0.0 } else { yj - alpha };
        my.scaled_add(alpha, &mu_dir);
    }
    // Remove the rounding drift of the mass transfers.
    let total = y.sum();
    y /= total;
    y
}

/// `(p, q)` of the generic split at `y`.
pub fn dc_generic_parts(crf: &DenseCrf, y: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    crf.check_shape(y)?;
    let qp = ConvexQp::relaxation(crf)?;
    let product = qp.product(y);
    let q: f64 = Zip::from(qp.d()).and(y).fold(0.0, |acc, d, y| acc + d * y * y);
    Ok((dot(crf.unary(), y) + dot(y, product.view()), q))
}

/// `(p, q)` of the NSD split at `y`, including the constant shift in `p`.
pub fn dc_negdef_parts(crf: &DenseCrf, y: ArrayView2<'_, f64>) -> Result<(f64, f64)> {
    crf.check_shape(y)?;
    let canon = nsd_canonical(crf)?;
    let w = crf.filter().total_weight();
    let self_quad = canon.shifted.mapv(|v| w * v);
    let ky = crf.filter().apply(y, true)?;
    let concave = dot(y, ky.dot(&canon.shifted.t()).view());
    let p = dot(crf.unary(), y) - pixel_quadratic(y, &self_quad) + canon.offset_coeff * crf.total_pair_mass();
    Ok((p, -concave))
}
