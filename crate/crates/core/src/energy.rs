//! Objective evaluation. All values are in the original (unshifted) scale
//! and count both orderings `(a, b)` and `(b, a)` of every pair.

use ndarray::{Array2, ArrayView2, Zip};

use crate::crf::DenseCrf;
use crate::error::{CrfError, Result};
use crate::filter::CompensatedSum;
use crate::lp;
use crate::model::{AssignmentMatrix, LabelCompatibility, Labeling};

/// Below this size `ip_energy` uses the literal double sum.
pub const LITERAL_ENERGY_MAX_N: usize = 512;

pub(crate) fn dot(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let mut s = CompensatedSum::default();
    Zip::from(a).and(b).for_each(|x, y| s.add(x * y));
    s.total()
}

/// Energy of an integer labeling.
pub fn ip_energy(crf: &DenseCrf, labeling: &Labeling) -> Result<f64> {
    let (n, m) = (crf.n_vars(), crf.n_labels());
    if labeling.len() != n {
        return Err(CrfError::InvalidInput(format!("labeling has {} entries, expected {n}", labeling.len())));
    }
    if let Some(l) = labeling.iter().find(|&&l| l >= m) {
        return Err(CrfError::InvalidInput(format!("label {l} out of range for {m} labels")));
    }
    let phi = crf.unary();
    let mu = crf.mu();
    let mut s = CompensatedSum::default();
    for (a, &l) in labeling.iter().enumerate() {
        s.add(phi[[a, l]]);
    }
    if n <= LITERAL_ENERGY_MAX_N {
        let f = crf.filter();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    let c = mu[[labeling[a], labeling[b]]];
                    if c != 0.0 {
                        s.add(c * f.kernel_value(a, b));
                    }
                }
            }
        }
    } else {
        let y = AssignmentMatrix::from_labeling(labeling, m);
        let u = crf.filter().apply(y.view(), false)?;
        for (a, &l) in labeling.iter().enumerate() {
            for j in 0..m {
                s.add(mu[[l, j]] * u[[a, j]]);
            }
        }
    }
    Ok(s.total())
}

/// `phi^T y + y^T Psi y`.
pub fn qp_objective(crf: &DenseCrf, y: ArrayView2<'_, f64>) -> Result<f64> {
    crf.check_shape(y)?;
    let psi_y = crf.pairwise_product(y);
    Ok(dot(crf.unary(), y) + dot(y, psi_y.view()))
}

/// Diagonal-dominance vector `d_a(i) = (sum_j |mu(i, j)|) sum_{b != a} K_{a,b}`.
pub fn d_vector(crf: &DenseCrf) -> Result<Array2<f64>> {
    if matches!(crf.compat(), LabelCompatibility::Tree(_)) {
        return Err(CrfError::UnsupportedCompat("d vector needs a Potts or matrix compatibility".into()));
    }
    let rows = crf.filter().row_sums_excluding_self();
    let mass = crf.abs_row_mass();
    Ok(Array2::from_shape_fn((crf.n_vars(), crf.n_labels()), |(a, i)| mass[i] * rows[a]))
}

/// Convexified objective `(phi - d)^T y + y^T (Psi + D) y`.
pub fn cvx_objective(crf: &DenseCrf, y: ArrayView2<'_, f64>) -> Result<f64> {
    crf.check_shape(y)?;
    let d = d_vector(crf)?;
    let psi_y = crf.pairwise_product(y);
    let mut s = CompensatedSum::default();
    Zip::from(crf.unary()).and(&d).and(y).and(&psi_y).for_each(|phi, d, y, py| {
        s.add((phi - d) * y);
        s.add(y * py);
        s.add(d * y * y);
    });
    Ok(s.total())
}

/// LP relaxation `sum phi y + sum_{a != b} sum_i K_{a,b} |y_a(i) - y_b(i)| / 2`
/// for Potts, evaluated through the sorted reformulation.
pub fn lp_objective(crf: &DenseCrf, y: ArrayView2<'_, f64>) -> Result<f64> {
    crf.check_shape(y)?;
    let g = lp::lp_subgradient(crf, y)?;
    Ok(dot(y, g.view()))
}
