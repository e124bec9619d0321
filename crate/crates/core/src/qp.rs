//! Frank-Wolfe on the convexified QP relaxation.
//!
//! The objective is `f(y) = l^T y + y^T (Psi + D) y` over the product of
//! simplices, with `l = phi - d` for the plain relaxation or a CCCP-modified
//! linear term. Only `(Psi + D) s` is ever filtered after the first
//! iteration: since `y_{t+1} = y_t + alpha (s - y_t)`, the product for the
//! next iterate is `(1 - alpha) (Psi + D) y_t + alpha (Psi + D) s`.

use ndarray::{Array2, ArrayView2, Zip};

use crate::crf::DenseCrf;
use crate::energy::{d_vector, dot};
use crate::error::{CrfError, Result};
use crate::model::{argmin_row, check_feasible, AssignmentMatrix};
use crate::trace::{EnergyTrace, Recorder};

/// Curvature below which the step is decided by the sign of the slope.
pub const DEGENERATE_CURVATURE: f64 = 1e-12;

/// Quadratic `l^T y + y^T (Psi + D) y` with a fixed `D` from the problem.
#[derive(Debug)]
pub struct ConvexQp<'a> {
    crf: &'a DenseCrf,
    linear: Array2<f64>,
    d: Array2<f64>,
}

impl<'a> ConvexQp<'a> {
    /// `(phi - d)^T y + y^T (Psi + D) y`.
    pub fn relaxation(crf: &'a DenseCrf) -> Result<Self> {
        let d = d_vector(crf)?;
        let linear = &crf.unary() - &d;
        Ok(Self { crf, linear, d })
    }

    /// Same quadratic part, caller-supplied linear term.
    pub fn with_linear(crf: &'a DenseCrf, linear: Array2<f64>) -> Result<Self> {
        crf.check_shape(linear.view())?;
        let d = d_vector(crf)?;
        Ok(Self { crf, linear, d })
    }

    pub fn crf(&self) -> &DenseCrf {
        self.crf
    }

    pub fn linear(&self) -> &Array2<f64> {
        &self.linear
    }

    pub fn d(&self) -> &Array2<f64> {
        &self.d
    }

    /// `(Psi + D) v`, one filter pass.
    pub fn product(&self, v: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = self.crf.pairwise_product(v);
        Zip::from(&mut out).and(&self.d).and(v).for_each(|o, d, v| *o += d * v);
        out
    }

    pub fn objective(&self, y: ArrayView2<'_, f64>) -> f64 {
        let p = self.product(y);
        self.objective_with(y, p.view())
    }

    /// Objective given a precomputed `(Psi + D) y`.
    pub fn objective_with(&self, y: ArrayView2<'_, f64>, product: ArrayView2<'_, f64>) -> f64 {
        dot(self.linear.view(), y) + dot(y, product)
    }
}

/// Products kept across iterations so that each one filters only `s`.
#[derive(Debug, Clone)]
pub struct FwCache {
    pub psi_d_y: Array2<f64>,
    pub psi_d_s: Option<Array2<f64>>,
    pub alpha_last: f64,
}

impl FwCache {
    pub fn new(qp: &ConvexQp<'_>, y: ArrayView2<'_, f64>) -> Self {
        Self { psi_d_y: qp.product(y), psi_d_s: None, alpha_last: 0.0 }
    }
}

/// `l + 2 (Psi + D) y`, reusing `cache.psi_d_y` when available.
pub fn gradient_cvx(qp: &ConvexQp<'_>, y: ArrayView2<'_, f64>, cache: Option<&FwCache>) -> Array2<f64> {
    let fresh;
    let product = match cache {
        Some(c) => &c.psi_d_y,
        None => {
            fresh = qp.product(y);
            &fresh
        }
    };
    let mut g = qp.linear.clone();
    g.scaled_add(2.0, product);
    g
}

/// Per row, the vertex at the smallest gradient entry (ties to the lowest label).
pub fn conditional_gradient(grad: ArrayView2<'_, f64>) -> AssignmentMatrix {
    let mut s = Array2::zeros(grad.dim());
    for (a, row) in grad.rows().into_iter().enumerate() {
        s[[a, argmin_row(row)]] = 1.0;
    }
    AssignmentMatrix::from_raw(s)
}

/// Minimizer over `[0, 1]` of `curvature * alpha^2 + slope * alpha`.
pub fn step_from_coefficients(slope: f64, curvature: f64) -> f64 {
    if curvature <= DEGENERATE_CURVATURE {
        return if slope < 0.0 { 1.0 } else { 0.0 };
    }
    (-0.5 * slope / curvature).clamp(0.0, 1.0)
}

/// Exact line search along `s - y` using the cached products.
pub fn optimal_step(qp: &ConvexQp<'_>, y: ArrayView2<'_, f64>, s: ArrayView2<'_, f64>, cache: &FwCache) -> f64 {
    let psi_d_s = cache.psi_d_s.as_ref().expect("cache must hold (Psi + D) s");
    let dir = &s - &y;
    let dprod = psi_d_s - &cache.psi_d_y;
    let slope = dot(qp.linear.view(), dir.view()) + 2.0 * dot(cache.psi_d_y.view(), dir.view());
    let curvature = dot(dir.view(), dprod.view());
    step_from_coefficients(slope, curvature)
}

#[derive(Debug, Clone, Copy)]
pub struct FwOptions {
    pub max_iters: usize,
    /// Stop once the FW gap falls below this fraction of the first gap.
    pub gap_tol: f64,
    /// Recompute `(Psi + D) y` every iteration and compare with the cache.
    pub validate_cache: bool,
    pub trace_integer: bool,
}

impl Default for FwOptions {
    fn default() -> Self {
        Self { max_iters: 100, gap_tol: 1e-3, validate_cache: false, trace_integer: true }
    }
}

#[derive(Debug, Clone)]
pub struct FwResult {
    pub y: AssignmentMatrix,
    pub trace: EnergyTrace,
    /// FW gap at every visited iterate.
    pub gaps: Vec<f64>,
    /// Number of updates performed.
    pub iterations: usize,
    pub cache: FwCache,
}

pub fn run_frank_wolfe(qp: &ConvexQp<'_>, y0: &AssignmentMatrix, opts: &FwOptions) -> Result<FwResult> {
    run_frank_wolfe_warm(qp, y0, None, opts)
}

/// Frank-Wolfe starting from `y0`, optionally with `(Psi + D) y0` already known.
pub fn run_frank_wolfe_warm(
    qp: &ConvexQp<'_>,
    y0: &AssignmentMatrix,
    psi_d_y0: Option<Array2<f64>>,
    opts: &FwOptions,
) -> Result<FwResult> {
    qp.crf.check_shape(y0.view())?;
    check_feasible(y0.view())?;
    let mut rec = Recorder::new(qp.crf, opts.trace_integer);
    let mut y = y0.clone().into_inner();
    let mut cache = match psi_d_y0 {
        Some(p) => FwCache { psi_d_y: p, psi_d_s: None, alpha_last: 0.0 },
        None => FwCache::new(qp, y.view()),
    };
    let mut gaps = Vec::new();
    let mut first_gap = None;
    let mut iterations = 0;

    loop {
        let grad = gradient_cvx(qp, y.view(), Some(&cache));
        let s = conditional_gradient(grad.view());
        let gap = dot((&y - &s.view()).view(), grad.view());
        gaps.push(gap);
        let obj = qp.objective_with(y.view(), cache.psi_d_y.view());
        rec.record(iterations, obj, &AssignmentMatrix::from_raw(y.clone()))?;

        let threshold = opts.gap_tol * *first_gap.get_or_insert(gap);
        if iterations >= opts.max_iters || gap <= threshold || gap <= 0.0 {
            break;
        }
        cache.psi_d_s = Some(qp.product(s.view()));
        let alpha = optimal_step(qp, y.view(), s.view(), &cache);
        let psi_d_s = cache.psi_d_s.as_ref().unwrap();
        Zip::from(&mut y).and(s.view()).for_each(|y, s| *y += alpha * (s - *y));
        Zip::from(&mut cache.psi_d_y)
            .and(psi_d_s)
            .for_each(|p, ps| *p = (1.0 - alpha) * *p + alpha * ps);
        cache.alpha_last = alpha;
        iterations += 1;

        if opts.validate_cache {
            let fresh = qp.product(y.view());
            let num = (&fresh - &cache.psi_d_y).iter().map(|v| v * v).sum::<f64>().sqrt();
            let den = fresh.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            if num / den > 1e-6 && num > 1e-12 {
                return Err(CrfError::CacheMismatch(num / den));
            }
        }
    }
    Ok(FwResult { y: AssignmentMatrix::from_raw(y), trace: rec.finish(), gaps, iterations, cache })
}
