//! Gaussian kernel summation `v'_a = sum_b K_{a,b} v_b` over the mixture
//! `K_{a,b} = sum_m w_m exp(-|f_a^m - f_b^m|^2 / 2)`.
//!
//! Two backends share one interface: an exact `O(N^2)` evaluation with
//! compensated accumulation, and the `O(N)` permutohedral lattice. The
//! divide-and-conquer triangular sums used by the LP subgradient live here
//! as well, since they only need cross-block kernel sums.

mod exact;
mod lattice;
mod triangular;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{CrfError, Result};
use crate::model::KernelSpec;

pub use exact::CompensatedSum;
pub(crate) use exact::gauss;

use exact::ExactKernels;
pub use lattice::Permutohedral;

/// Default size above which the exact backend stops materializing `K`.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Block size below which triangular sums are computed by brute force.
pub const DEFAULT_BASE_CASE: usize = 64;

/// Number of rows sampled when calibrating the lattice against exact sums.
const CALIBRATION_ROWS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Exact,
    Lattice,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(Backend::Exact),
            "lattice" => Ok(Backend::Lattice),
            other => Err(format!("unknown filter backend '{other}' (expected exact or lattice)")),
        }
    }
}

/// Which strict triangle of the reordered kernel matrix to sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangularSide {
    /// `t_c = sum_{a > c} K_{a,c}` in the permuted order.
    Upper,
    /// `t_c = sum_{a < c} K_{a,c}` in the permuted order.
    Lower,
}

#[derive(Debug, Clone, Copy)]
pub struct FilterOptions {
    pub backend: Backend,
    pub dense_cap: usize,
    pub base_case: usize,
}

impl Default for FilterOptions {
    fn default() -> Self {
        Self { backend: Backend::Exact, dense_cap: DEFAULT_DENSE_CAP, base_case: DEFAULT_BASE_CASE }
    }
}

impl From<Backend> for FilterOptions {
    fn from(backend: Backend) -> Self {
        Self { backend, ..Self::default() }
    }
}

#[derive(Debug)]
struct LatticeKernel {
    weight: f64,
    features: Array2<f64>,
    lattice: Permutohedral,
    // Exact / lattice ratio on the all-ones input.
    calibration: f64,
}

/// Prepared Gaussian convolution over a fixed feature set.
#[derive(Debug)]
pub struct GaussianFilter {
    backend: Backend,
    n: usize,
    total_weight: f64,
    base_case: usize,
    exact: ExactKernels,
    lattice: Vec<LatticeKernel>,
    calls: AtomicUsize,
    row_sums: OnceLock<Array1<f64>>,
}

impl GaussianFilter {
    pub fn build(kernels: &[KernelSpec], options: impl Into<FilterOptions>) -> Result<Self> {
        let options = options.into();
        let n = kernels
            .first()
            .map(KernelSpec::n_points)
            .ok_or_else(|| CrfError::InvalidInput("at least one kernel is required".into()))?;
        if let Some((i, k)) = kernels.iter().enumerate().find(|(_, k)| k.n_points() != n) {
            return Err(CrfError::InvalidInput(format!(
                "kernel {i} has {} rows, kernel 0 has {n}",
                k.n_points()
            )));
        }
        let views: Vec<_> = kernels.iter().map(|k| (k.weight(), k.features())).collect();
        let dense_cap = if options.backend == Backend::Exact { options.dense_cap } else { 0 };
        let exact = ExactKernels::new(&views, dense_cap);
        let lattice = match options.backend {
            Backend::Exact => Vec::new(),
            Backend::Lattice => kernels
                .par_iter()
                .map(|k| {
                    let lattice = Permutohedral::new(k.features());
                    let calibration = calibrate(k, &lattice);
                    LatticeKernel { weight: k.weight(), features: k.features().to_owned(), lattice, calibration }
                })
                .collect(),
        };
        Ok(Self {
            backend: options.backend,
            n,
            total_weight: kernels.iter().map(KernelSpec::weight).sum(),
            base_case: options.base_case.max(1),
            exact,
            lattice,
            calls: AtomicUsize::new(0),
            row_sums: OnceLock::new(),
        })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `K_{a,a} = sum_m w_m`.
    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Per-kernel exact/lattice ratios (empty for the exact backend).
    pub fn calibration(&self) -> Vec<f64> {
        self.lattice.iter().map(|k| k.calibration).collect()
    }

    /// Number of filter passes performed so far (apply and triangular blocks).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub(crate) fn count_call(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }

    /// Exact `K_{a,b}` from the features, whatever the backend.
    pub fn kernel_value(&self, a: usize, b: usize) -> f64 {
        self.exact.k(a, b)
    }

    /// Column-wise `v'_a = sum_b K_{a,b} v_b`. With `include_self = false`
    /// the diagonal term `K_{a,a} v_a` is removed.
    pub fn apply(&self, values: ArrayView2<'_, f64>, include_self: bool) -> Result<Array2<f64>> {
        if values.nrows() != self.n {
            return Err(CrfError::InvalidInput(format!(
                "filter expects {} rows, got {}",
                self.n,
                values.nrows()
            )));
        }
        self.count_call();
        let mut out = match self.backend {
            Backend::Exact => self.exact.apply(values),
            Backend::Lattice => {
                let c = values.ncols();
                let jobs: Vec<(usize, usize)> =
                    (0..self.lattice.len()).flat_map(|k| (0..c).map(move |j| (k, j))).collect();
                let cols: Vec<Vec<f64>> = jobs
                    .par_iter()
                    .map(|&(k, j)| {
                        let lk = &self.lattice[k];
                        let s = lk.weight * lk.calibration;
                        let mut col = lk.lattice.compute(|p| values[[p, j]]);
                        col.iter_mut().for_each(|v| *v *= s);
                        col
                    })
                    .collect();
                let mut out = Array2::zeros((self.n, c));
                for (&(_, j), col) in jobs.iter().zip(cols) {
                    let mut dst = out.column_mut(j);
                    for (o, v) in dst.iter_mut().zip(col) {
                        *o += v;
                    }
                }
                out
            }
        };
        if !include_self {
            out.scaled_add(-self.total_weight, &values);
        }
        Ok(out)
    }

    /// `sum_{b != a} K_{a,b}`, computed once and cached.
    pub fn row_sums_excluding_self(&self) -> &Array1<f64> {
        self.row_sums.get_or_init(|| {
            let ones = Array2::ones((self.n, 1));
            self.apply(ones.view(), false)
                .expect("row count matches by construction")
                .column(0)
                .to_owned()
        })
    }

    /// Triangular kernel sums in the order given by `order` (position to
    /// variable index). Output is indexed by position.
    pub fn triangular_sum(&self, order: &[usize], side: TriangularSide) -> Result<Array1<f64>> {
        let (upper, lower) = self.triangular_sums(order)?;
        Ok(match side {
            TriangularSide::Upper => upper,
            TriangularSide::Lower => lower,
        })
    }

    /// Both triangular sums from a single recursion.
    pub fn triangular_sums(&self, order: &[usize]) -> Result<(Array1<f64>, Array1<f64>)> {
        check_permutation(order, self.n)?;
        let (u, l) = triangular::triangular_sums(self, order, None);
        Ok((Array1::from(u), Array1::from(l)))
    }

    /// Triangular sums where positions sharing a group id are unordered:
    /// pairs within a group count towards neither side. `groups[pos]` must
    /// be nondecreasing along the ordering.
    pub fn grouped_triangular_sums(&self, order: &[usize], groups: &[usize]) -> Result<(Array1<f64>, Array1<f64>)> {
        check_permutation(order, self.n)?;
        if groups.len() != order.len() || groups.windows(2).any(|w| w[0] > w[1]) {
            return Err(CrfError::InvalidInput("group ids must be nondecreasing, one per position".into()));
        }
        let (u, l) = triangular::triangular_sums(self, order, Some(groups));
        Ok((Array1::from(u), Array1::from(l)))
    }

    pub(crate) fn base_case(&self) -> usize {
        self.base_case
    }

    pub(crate) fn exact_kernels(&self) -> &ExactKernels {
        &self.exact
    }

    /// Lattice estimate of cross-block sums, using a lattice built over the
    /// block's points only.
    pub(crate) fn lattice_cross_sums(&self, left: &[usize], right: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let nl = left.len();
        let mut row = vec![0.0; nl];
        let mut col = vec![0.0; right.len()];
        for lk in &self.lattice {
            let pts: Vec<usize> = left.iter().chain(right).cloned().collect();
            let feats = lk.features.select(ndarray::Axis(0), &pts);
            let lat = Permutohedral::new(feats.view());
            let s = lk.weight * lk.calibration;
            let to_left = lat.compute(|p| if p >= nl { 1.0 } else { 0.0 });
            let to_right = lat.compute(|p| if p < nl { 1.0 } else { 0.0 });
            for i in 0..nl {
                row[i] += s * to_left[i];
            }
            for j in 0..right.len() {
                col[j] += s * to_right[nl + j];
            }
        }
        (row, col)
    }
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(CrfError::InvalidInput(format!("ordering has {} entries, expected {n}", order.len())));
    }
    let mut seen = vec![false; n];
    for &v in order {
        if v >= n || std::mem::replace(&mut seen[v], true) {
            return Err(CrfError::InvalidInput(format!("ordering is not a permutation (entry {v})")));
        }
    }
    Ok(())
}

fn calibrate(kernel: &KernelSpec, lattice: &Permutohedral) -> f64 {
    let n = kernel.n_points();
    let d = kernel.dim();
    let flat: Vec<f64> = kernel.features().iter().cloned().collect();
    let approx = lattice.compute(|_| 1.0);
    let stride = n.div_ceil(CALIBRATION_ROWS).max(1);
    let rows: Vec<usize> = (0..n).step_by(stride).collect();
    let exact: f64 = rows
        .par_iter()
        .map(|&a| {
            let fa = &flat[a * d..(a + 1) * d];
            let mut s = CompensatedSum::default();
            for fb in flat.chunks_exact(d) {
                s.add(gauss(fa, fb));
            }
            s.total()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let approx: f64 = rows.iter().map(|&a| approx[a]).sum();
    if approx > 0.0 {
        exact / approx
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny3() -> GaussianFilter {
        let k = KernelSpec::new(1.0, array![[0.0], [1.0], [3.0]]).unwrap();
        GaussianFilter::build(&[k], Backend::Exact).unwrap()
    }

    fn k(d2: f64) -> f64 {
        (-0.5 * d2).exp()
    }

    #[test]
    fn single_point_returns_total_weight() {
        let ks = vec![
            KernelSpec::new(2.0, array![[1.0, 2.0]]).unwrap(),
            KernelSpec::new(0.5, array![[3.0]]).unwrap(),
        ];
        let f = GaussianFilter::build(&ks, Backend::Exact).unwrap();
        let out = f.apply(array![[4.0]].view(), true).unwrap();
        assert!((out[[0, 0]] - 10.0).abs() < 1e-15);
        assert_eq!(f.row_sums_excluding_self().to_vec(), vec![0.0]);
    }

    #[test]
    fn identical_features_give_all_ones() {
        let ks = vec![KernelSpec::new(1.0, array![[0.3, 0.3], [0.3, 0.3]]).unwrap()];
        let f = GaussianFilter::build(&ks, Backend::Exact).unwrap();
        let out = f.apply(array![[1.0], [0.0]].view(), true).unwrap();
        assert_eq!(out.column(0).to_vec(), vec![1.0, 1.0]);
        assert_eq!(f.row_sums_excluding_self().to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn tiny3_apply() {
        let f = tiny3();
        let (k12, k13, k23) = (k(1.0), k(9.0), k(4.0));
        let out = f.apply(array![[1.0], [2.0], [3.0]].view(), true).unwrap();
        assert!((out[[0, 0]] - (1.0 + 2.0 * k12 + 3.0 * k13)).abs() < 1e-15);
        let out = f.apply(array![[1.0], [1.0], [1.0]].view(), false).unwrap();
        assert!((out[[0, 0]] - (k12 + k13)).abs() < 1e-15);
        let rs = f.row_sums_excluding_self();
        let expect = [k12 + k13, k12 + k23, k13 + k23];
        for i in 0..3 {
            assert!((rs[i] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny3_triangular() {
        let f = tiny3();
        let up = f.triangular_sum(&[0, 1, 2], TriangularSide::Upper).unwrap();
        let expect = [k(1.0) + k(9.0), k(4.0), 0.0];
        for i in 0..3 {
            assert!((up[i] - expect[i]).abs() < 1e-15);
        }
        let lo = f.triangular_sum(&[0, 1, 2], TriangularSide::Lower).unwrap();
        let expect = [0.0, k(1.0), k(9.0) + k(4.0)];
        for i in 0..3 {
            assert!((lo[i] - expect[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn single_point_triangular_is_zero() {
        let ks = vec![KernelSpec::new(1.0, array![[0.0]]).unwrap()];
        for backend in [Backend::Exact, Backend::Lattice] {
            let f = GaussianFilter::build(&ks, backend).unwrap();
            assert_eq!(f.triangular_sum(&[0], TriangularSide::Upper).unwrap().to_vec(), vec![0.0]);
            assert_eq!(f.triangular_sum(&[0], TriangularSide::Lower).unwrap().to_vec(), vec![0.0]);
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let ks = vec![KernelSpec::new(1.5, Array2::from_shape_fn((40, 2), |(i, j)| (i * j) as f64 * 0.1)).unwrap()];
        for backend in [Backend::Exact, Backend::Lattice] {
            let f = GaussianFilter::build(&ks, backend).unwrap();
            let out = f.apply(Array2::zeros((40, 3)).view(), false).unwrap();
            assert!(out.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn input_validation() {
        let f = tiny3();
        assert!(f.apply(Array2::zeros((2, 1)).view(), true).is_err());
        assert!(f.triangular_sum(&[0, 0, 1], TriangularSide::Upper).is_err());
        assert!(f.triangular_sum(&[0, 1], TriangularSide::Upper).is_err());
        assert!(f.triangular_sum(&[0, 1, 3], TriangularSide::Upper).is_err());
        let ks = vec![
            KernelSpec::new(1.0, Array2::zeros((3, 1))).unwrap(),
            KernelSpec::new(1.0, Array2::zeros((4, 1))).unwrap(),
        ];
        assert!(GaussianFilter::build(&ks, Backend::Exact).is_err());
        assert!(GaussianFilter::build(&[], Backend::Exact).is_err());
    }

    #[test]
    fn backend_from_str() {
        assert_eq!("exact".parse::<Backend>().unwrap(), Backend::Exact);
        assert_eq!("Lattice".parse::<Backend>().unwrap(), Backend::Lattice);
        assert!("grid".parse::<Backend>().is_err());
    }
}
