//! LP relaxation minimized by projected subgradient descent.
//!
//! For Potts, `S(y) = phi^T y + sum_i sum_{a < b} K_{a,b} |y_a(i) - y_b(i)|`.
//! Sorting the column `y_.(k)` in decreasing order turns the absolute values
//! into signs, so a subgradient is
//! `g_c(k) = phi_c(k) + sum_{b after c} K_{b,c} - sum_{b before c} K_{b,c}`,
//! i.e. two triangular kernel sums per label. Tree metrics replace columns
//! by subtree masses `y_a(T)` weighted by `c_T`.

pub mod projection;
pub mod rhst;
pub mod rounding;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::crf::DenseCrf;
use crate::energy::dot;
use crate::error::{CrfError, Result};
use crate::model::{check_feasible, AssignmentMatrix, LabelCompatibility};
use crate::trace::{EnergyTrace, Recorder};

pub use projection::{project_rows_to_simplex, simplex_threshold};
pub use rhst::{RHSTree, Subtree};
pub use rounding::kt_round;

/// Labels whose warm-start probability never exceeds this are dropped by
/// [`restrict_labels`].
pub const RESTRICT_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct LPOptions {
    pub max_iters: usize,
    /// Step size `beta_t = beta0 / (1 + t)`.
    pub beta0: f64,
    /// When set, only these labels may carry mass.
    pub restricted_labels: Option<Vec<usize>>,
    pub trace_integer: bool,
}

impl Default for LPOptions {
    fn default() -> Self {
        Self { max_iters: 5, beta0: 1.0, restricted_labels: None, trace_integer: true }
    }
}

impl LPOptions {
    pub fn step(&self, t: usize) -> f64 {
        self.beta0 / (1.0 + t as f64)
    }
}

#[derive(Debug, Clone)]
pub struct LpResult {
    /// Iterate with the lowest LP objective seen.
    pub y: AssignmentMatrix,
    pub best_objective: f64,
    /// One row per evaluated iterate, starting with `y0`.
    pub trace: EnergyTrace,
    pub iterations: usize,
}

/// Labels with `max_a y_a(i) > 1e-3`.
pub fn restrict_labels(y: &AssignmentMatrix) -> Vec<usize> {
    y.view()
        .axis_iter(Axis(1))
        .enumerate()
        .filter(|(_, col)| col.iter().any(|v| *v > RESTRICT_THRESHOLD))
        .map(|(i, _)| i)
        .collect()
}

/// Variable indices sorted by decreasing value, ties by increasing index.
fn decreasing_order(col: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..col.len()).collect();
    order.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then(a.cmp(&b)));
    order
}

/// `sum_{b below c} K - sum_{b above c} K` for the decreasing order of `col`,
/// in original indexing. Tied variables are neither above nor below each
/// other, so their pairs contribute nothing; this keeps the result a valid
/// subgradient and makes it vanish on symmetric points.
fn sorted_difference(crf: &DenseCrf, col: ArrayView1<'_, f64>) -> Array1<f64> {
    let order = decreasing_order(col);
    let mut groups = Vec::with_capacity(order.len());
    let mut id = 0;
    for (pos, &var) in order.iter().enumerate() {
        if pos > 0 && col[order[pos - 1]] != col[var] {
            id += 1;
        }
        groups.push(id);
    }
    let (upper, lower) = crf.filter().grouped_triangular_sums(&order, &groups).expect("order is a permutation");
    let mut out = Array1::zeros(col.len());
    for (pos, &var) in order.iter().enumerate() {
        out[var] = upper[pos] - lower[pos];
    }
    out
}

fn all_labels(m: usize) -> Vec<usize> {
    (0..m).collect()
}

/// Subgradient of the LP objective at `y`. Dispatches to
/// [`rhst_subgradient`] for tree compatibilities.
pub fn lp_subgradient(crf: &DenseCrf, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    crf.check_shape(y)?;
    subgradient_on(crf, y, &all_labels(crf.n_labels()))
}

fn subgradient_on(crf: &DenseCrf, y: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Array2<f64>> {
    match crf.compat() {
        LabelCompatibility::Potts => Ok(potts_subgradient(crf, y, labels)),
        LabelCompatibility::Tree(tree) => Ok(tree_subgradient(crf, tree, y, labels)),
        LabelCompatibility::Matrix(_) => Err(CrfError::UnsupportedCompat(
            "the LP relaxation needs a Potts or tree compatibility".into(),
        )),
    }
}

fn potts_subgradient(crf: &DenseCrf, y: ArrayView2<'_, f64>, labels: &[usize]) -> Array2<f64> {
    let cols: Vec<Array1<f64>> = labels.par_iter().map(|&k| sorted_difference(crf, y.column(k))).collect();
    let mut g = crf.unary().to_owned();
    for (&k, col) in labels.iter().zip(cols) {
        let mut dst = g.column_mut(k);
        dst += &col;
    }
    g
}

/// Subgradient of the tree-metric LP:
/// `g_c(k) = phi_c(k) + sum_{T containing k} c_T (upper_T - lower_T)_c`.
pub fn rhst_subgradient(crf: &DenseCrf, tree: &RHSTree, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    crf.check_shape(y)?;
    if tree.n_labels() != crf.n_labels() {
        return Err(CrfError::InvalidInput(format!(
            "tree has {} leaves but the problem has {} labels",
            tree.n_labels(),
            crf.n_labels()
        )));
    }
    Ok(tree_subgradient(crf, tree, y, &all_labels(crf.n_labels())))
}

fn tree_subgradient(crf: &DenseCrf, tree: &RHSTree, y: ArrayView2<'_, f64>, labels: &[usize]) -> Array2<f64> {
    let mut active = vec![false; crf.n_labels()];
    for &k in labels {
        active[k] = true;
    }
    let subtrees = tree.subtrees();
    let parts: Vec<(Array1<f64>, &[usize])> = subtrees
        .par_iter()
        .filter(|t| t.weight != 0.0 && t.labels.iter().any(|&k| active[k]))
        .map(|t| {
            let mut mass = Array1::<f64>::zeros(crf.n_vars());
            for &k in t.labels {
                mass += &y.column(k);
            }
            (sorted_difference(crf, mass.view()) * t.weight, t.labels)
        })
        .collect();
    let mut g = crf.unary().to_owned();
    for (gt, ls) in parts {
        for &k in ls.iter().filter(|&&k| active[k]) {
            let mut dst = g.column_mut(k);
            dst += &gt;
        }
    }
    g
}

/// Projected subgradient descent from `y0`, returning the best iterate.
///
/// Every iterate costs one subgradient, which also yields its objective as
/// `<y, g>`. `max_iters` steps evaluate `max_iters + 1` iterates.
pub fn run_lp(crf: &DenseCrf, y0: &AssignmentMatrix, opts: &LPOptions) -> Result<LpResult> {
    crf.check_shape(y0.view())?;
    check_feasible(y0.view())?;
    if !(opts.beta0 > 0.0 && opts.beta0.is_finite()) {
        return Err(CrfError::InvalidParameter(format!("beta0 must be positive, got {}", opts.beta0)));
    }
    let m = crf.n_labels();
    let labels = match &opts.restricted_labels {
        Some(ls) => {
            let mut ls = ls.clone();
            ls.sort_unstable();
            ls.dedup();
            if ls.is_empty() || ls.iter().any(|&k| k >= m) {
                return Err(CrfError::InvalidParameter("restricted label set is empty or out of range".into()));
            }
            ls
        }
        None => all_labels(m),
    };
    let restricted = labels.len() < m;
    let mut y = y0.clone().into_inner();
    if restricted {
        // Move to the face spanned by the kept labels.
        let sub = project_rows_to_simplex(y.select(Axis(1), &labels).view()).into_inner();
        y.fill(0.0);
        for (j, &k) in labels.iter().enumerate() {
            y.column_mut(k).assign(&sub.column(j));
        }
    }

    let mut rec = Recorder::new(crf, opts.trace_integer);
    let mut best: Option<(f64, Array2<f64>)> = None;
    let mut t = 0;
    loop {
        let g = subgradient_on(crf, y.view(), &labels)?;
        let obj = dot(y.view(), g.view());
        rec.record(t, obj, &AssignmentMatrix::from_raw(y.clone()))?;
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, y.clone()));
        }
        if t >= opts.max_iters {
            break;
        }
        let beta = opts.step(t);
        if restricted {
            let mut step = y.select(Axis(1), &labels);
            step.scaled_add(-beta, &g.select(Axis(1), &labels));
            let sub = project_rows_to_simplex(step.view()).into_inner();
            for (j, &k) in labels.iter().enumerate() {
                y.column_mut(k).assign(&sub.column(j));
            }
        } else {
            y.scaled_add(-beta, &g);
            y = project_rows_to_simplex(y.view()).into_inner();
        }
        t += 1;
    }
    let (best_objective, y_best) = best.expect("at least one iterate");
    Ok(LpResult {
        y: AssignmentMatrix::from_raw(y_best),
        best_objective,
        trace: rec.finish(),
        iterations: t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Backend;
    use crate::model::{KernelSpec, ProblemInstance};
    use ndarray::array;

    fn crf(unary: Array2<f64>, compat: LabelCompatibility) -> DenseCrf {
        let n = unary.nrows();
        let f = Array2::from_shape_fn((n, 1), |(a, _)| a as f64 * 0.9);
        let p = ProblemInstance::new(unary, vec![KernelSpec::new(1.0, f).unwrap()], compat).unwrap();
        DenseCrf::new(p, Backend::Exact).unwrap()
    }

    #[test]
    fn single_variable_subgradient_is_unary() {
        let c = crf(array![[0.5, -1.0, 2.0]], LabelCompatibility::Potts);
        let g = lp_subgradient(&c, array![[0.2, 0.3, 0.5]].view()).unwrap();
        assert_eq!(g, array![[0.5, -1.0, 2.0]]);
    }

    #[test]
    fn uniform_is_stationary_without_unary() {
        let c = crf(Array2::zeros((5, 3)), LabelCompatibility::Potts);
        let y0 = AssignmentMatrix::uniform(5, 3);
        let res = run_lp(&c, &y0, &LPOptions { max_iters: 10, ..LPOptions::default() }).unwrap();
        for v in res.y.view() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_compat_is_rejected() {
        let c = crf(Array2::zeros((2, 2)), LabelCompatibility::Matrix(array![[0.0, 2.0], [2.0, 0.0]]));
        assert!(matches!(
            lp_subgradient(&c, AssignmentMatrix::uniform(2, 2).view()),
            Err(CrfError::UnsupportedCompat(_))
        ));
    }

    #[test]
    fn restriction_keeps_mass_on_kept_labels() {
        let unary = array![[0.0, 1.0, 5.0], [1.0, 0.0, 5.0], [0.3, 0.2, 5.0]];
        let c = crf(unary, LabelCompatibility::Potts);
        let y0 = AssignmentMatrix::new(array![[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.5, 0.5, 0.0]]).unwrap();
        assert_eq!(restrict_labels(&y0), vec![0, 1]);
        let opts = LPOptions { max_iters: 20, restricted_labels: Some(vec![0, 1]), ..LPOptions::default() };
        let res = run_lp(&c, &y0, &opts).unwrap();
        assert!(res.y.view().column(2).iter().all(|v| *v == 0.0));
        assert_eq!(res.trace.len(), 21);
    }
}
