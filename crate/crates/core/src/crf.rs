use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{CrfError, Result};
use crate::filter::{FilterOptions, GaussianFilter};
use crate::model::{LabelCompatibility, ProblemInstance};

/// A problem instance bound to a prepared filter.
///
/// Construction performs one filter pass to cache `sum_{b != a} K_{a,b}`.
/// Shareable across threads; solvers borrow it immutably.
#[derive(Debug)]
pub struct DenseCrf {
    problem: ProblemInstance,
    filter: GaussianFilter,
    mu: Array2<f64>,
}

impl DenseCrf {
    pub fn new(problem: ProblemInstance, options: impl Into<FilterOptions>) -> Result<Self> {
        let filter = GaussianFilter::build(problem.kernels(), options)?;
        let mu = problem.compat().dense(problem.n_labels());
        filter.row_sums_excluding_self();
        Ok(Self { problem, filter, mu })
    }

    pub fn problem(&self) -> &ProblemInstance {
        &self.problem
    }

    pub fn filter(&self) -> &GaussianFilter {
        &self.filter
    }

    pub fn n_vars(&self) -> usize {
        self.problem.n_vars()
    }

    pub fn n_labels(&self) -> usize {
        self.problem.n_labels()
    }

    pub fn unary(&self) -> ArrayView2<'_, f64> {
        self.problem.unary()
    }

    /// Dense label compatibility (tree metric for `Tree`).
    pub fn mu(&self) -> &Array2<f64> {
        &self.mu
    }

    pub fn compat(&self) -> &LabelCompatibility {
        self.problem.compat()
    }

    pub(crate) fn check_shape(&self, y: ArrayView2<'_, f64>) -> Result<()> {
        if y.dim() != (self.n_vars(), self.n_labels()) {
            return Err(CrfError::InvalidInput(format!(
                "assignment is {}x{}, problem is {}x{}",
                y.nrows(),
                y.ncols(),
                self.n_vars(),
                self.n_labels()
            )));
        }
        Ok(())
    }

    /// `out_a(i) = sum_j mu(i, j) u_a(j)`.
    pub(crate) fn mix_labels(&self, u: &Array2<f64>, mu: &Array2<f64>) -> Array2<f64> {
        u.dot(&mu.t())
    }

    /// `Psi v = (mu (x) (K - w I)) v`, one filter pass.
    pub(crate) fn pairwise_product(&self, v: ArrayView2<'_, f64>) -> Array2<f64> {
        let u = self.filter.apply(v, false).expect("shape checked by caller");
        self.mix_labels(&u, &self.mu)
    }

    /// `sum_j |mu(i, j)|` per label.
    pub(crate) fn abs_row_mass(&self) -> Array1<f64> {
        self.mu.map(|v| v.abs()).sum_axis(ndarray::Axis(1))
    }

    /// `sum_{a != b} K_{a,b}`.
    pub(crate) fn total_pair_mass(&self) -> f64 {
        let mut s = crate::filter::CompensatedSum::default();
        for v in self.filter.row_sums_excluding_self() {
            s.add(*v);
        }
        s.total()
    }
}
