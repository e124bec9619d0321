//! Problem definition: unaries, Gaussian kernels over per-variable features,
//! label compatibility, and the relaxed/integer assignment types.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{CrfError, Result};
use crate::lp::rhst::RHSTree;

/// Row-sum and box tolerance for relaxed assignments.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Eigenvalue tolerance used when deciding negative semi-definiteness.
pub const NSD_TOL: f64 = 1e-8;

/// One component `w · exp(-|f_a - f_b|^2 / 2)` of the pixel compatibility.
///
/// Bandwidths are folded into `features` at construction time, so every
/// kernel seen by the filtering backend has unit bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    weight: f64,
    features: Array2<f64>,
}

impl KernelSpec {
    pub fn new(weight: f64, features: Array2<f64>) -> Result<Self> {
        if !weight.is_finite() || weight < 0.0 {
            return Err(CrfError::InvalidParameter(format!(
                "kernel weight must be finite and nonnegative, got {weight}"
            )));
        }
        if features.ncols() == 0 {
            return Err(CrfError::InvalidInput("kernel features need at least one dimension".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(CrfError::InvalidInput("kernel features must be finite".into()));
        }
        Ok(Self { weight, features })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn n_points(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Label compatibility `mu(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelCompatibility {
    /// `mu(i, j) = [i != j]`.
    Potts,
    /// Dense symmetric matrix with zero diagonal.
    Matrix(Array2<f64>),
    /// Tree metric induced by an r-HST.
    Tree(RHSTree),
}

impl LabelCompatibility {
    /// Dense `M x M` matrix of the compatibility (the induced metric for trees).
    pub fn dense(&self, n_labels: usize) -> Array2<f64> {
        match self {
            LabelCompatibility::Potts => {
                Array2::from_shape_fn((n_labels, n_labels), |(i, j)| if i == j { 0.0 } else { 1.0 })
            }
            LabelCompatibility::Matrix(mu) => mu.clone(),
            LabelCompatibility::Tree(tree) => tree.metric(),
        }
    }

    pub fn is_potts(&self) -> bool {
        matches!(self, LabelCompatibility::Potts)
    }

    fn validate(&self, n_labels: usize) -> Result<()> {
        match self {
            LabelCompatibility::Potts => Ok(()),
            LabelCompatibility::Matrix(mu) => {
                if mu.dim() != (n_labels, n_labels) {
                    return Err(CrfError::InvalidInput(format!(
                        "compatibility matrix is {}x{}, expected {n_labels}x{n_labels}",
                        mu.nrows(),
                        mu.ncols()
                    )));
                }
                for i in 0..n_labels {
                    if mu[[i, i]] != 0.0 {
                        return Err(CrfError::InvalidInput(format!(
                            "compatibility diagonal must be zero, mu({i},{i}) = {}",
                            mu[[i, i]]
                        )));
                    }
                    for j in 0..n_labels {
                        let (a, b) = (mu[[i, j]], mu[[j, i]]);
                        if !a.is_finite() {
                            return Err(CrfError::InvalidInput("compatibility must be finite".into()));
                        }
                        if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                            return Err(CrfError::InvalidInput(format!(
                                "compatibility must be symmetric, mu({i},{j}) = {a} but mu({j},{i}) = {b}"
                            )));
                        }
                    }
                }
                Ok(())
            }
            LabelCompatibility::Tree(tree) => {
                if tree.n_labels() != n_labels {
                    return Err(CrfError::InvalidInput(format!(
                        "tree has {} leaves but the problem has {n_labels} labels",
                        tree.n_labels()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// A dense CRF instance: `N` variables, `M` labels, unary costs, kernels and
/// label compatibility. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    unary: Array2<f64>,
    kernels: Vec<KernelSpec>,
    compat: LabelCompatibility,
}

impl ProblemInstance {
    pub fn new(unary: Array2<f64>, kernels: Vec<KernelSpec>, compat: LabelCompatibility) -> Result<Self> {
        let (n, m) = unary.dim();
        if n == 0 {
            return Err(CrfError::InvalidInput("problem needs at least one variable".into()));
        }
        if m < 2 && !matches!(compat, LabelCompatibility::Tree(_)) {
            return Err(CrfError::InvalidInput(format!("problem needs at least two labels, got {m}")));
        }
        if m == 0 {
            return Err(CrfError::InvalidInput("problem needs at least one label".into()));
        }
        if unary.iter().any(|v| !v.is_finite()) {
            return Err(CrfError::InvalidInput("unary costs must be finite".into()));
        }
        if kernels.is_empty() {
            return Err(CrfError::InvalidInput("at least one kernel is required".into()));
        }
        for (idx, k) in kernels.iter().enumerate() {
            if k.n_points() != n {
                return Err(CrfError::InvalidInput(format!(
                    "kernel {idx} has {} feature rows but the unary has {n}",
                    k.n_points()
                )));
            }
        }
        compat.validate(m)?;
        Ok(Self { unary, kernels, compat })
    }

    pub fn n_vars(&self) -> usize {
        self.unary.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.unary.ncols()
    }

    pub fn unary(&self) -> ArrayView2<'_, f64> {
        self.unary.view()
    }

    pub fn kernels(&self) -> &[KernelSpec] {
        &self.kernels
    }

    pub fn compat(&self) -> &LabelCompatibility {
        &self.compat
    }

    /// Sum of kernel weights, i.e. `K_{a,a}`.
    pub fn total_weight(&self) -> f64 {
        self.kernels.iter().map(KernelSpec::weight).sum()
    }

    /// Same kernels and compatibility, different unary costs.
    pub fn with_unary(&self, unary: Array2<f64>) -> Result<Self> {
        Self::new(unary, self.kernels.clone(), self.compat.clone())
    }

    /// Same unaries and kernels, different compatibility.
    pub fn with_compat(&self, compat: LabelCompatibility) -> Result<Self> {
        Self::new(self.unary.clone(), self.kernels.clone(), compat)
    }

    /// Literal pixel compatibility `K_{a,b} = sum_m w_m exp(-|f_a - f_b|^2 / 2)`.
    pub fn pixel_compat(&self, a: usize, b: usize) -> f64 {
        self.kernels
            .iter()
            .map(|k| {
                let f = k.features();
                let d2: f64 = f.row(a).iter().zip(f.row(b)).map(|(x, y)| (x - y) * (x - y)).sum();
                k.weight() * (-0.5 * d2).exp()
            })
            .sum()
    }
}

/// Relaxed assignment `y`: every row lies on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix(pub(crate) Array2<f64>);

impl AssignmentMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        check_feasible(values.view())?;
        Ok(Self(values))
    }

    /// Wraps solver output that is feasible by construction.
    pub(crate) fn from_raw(values: Array2<f64>) -> Self {
        debug_assert!(check_feasible(values.view()).is_ok());
        Self(values)
    }

    pub fn uniform(n: usize, m: usize) -> Self {
        Self(Array2::from_elem((n, m), 1.0 / m as f64))
    }

    pub fn from_labeling(labeling: &Labeling, m: usize) -> Self {
        let mut y = Array2::zeros((labeling.len(), m));
        for (a, &l) in labeling.iter().enumerate() {
            y[[a, l]] = 1.0;
        }
        Self(y)
    }

    /// Row-wise `softmax(-cost)`, stabilised by subtracting the row minimum.
    pub fn softmax_neg(cost: ArrayView2<'_, f64>) -> Self {
        let mut y = cost.to_owned();
        for mut row in y.rows_mut() {
            let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
            row.mapv_inplace(|c| (min - c).exp());
            let s = row.sum();
            row /= s;
        }
        Self(y)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn n_vars(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.0.ncols()
    }
}

/// Checks that every entry is in `[0, 1]` and every row sums to one.
pub fn check_feasible(y: ArrayView2<'_, f64>) -> Result<()> {
    for (a, row) in y.axis_iter(Axis(0)).enumerate() {
        if let Some(v) = row
            .iter()
            .find(|v| !v.is_finite() || **v < -FEASIBILITY_TOL || **v > 1.0 + FEASIBILITY_TOL)
        {
            return Err(CrfError::InvalidInput(format!("row {a} has entry {v} outside [0, 1]")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > FEASIBILITY_TOL {
            return Err(CrfError::InvalidInput(format!("row {a} sums to {s}, expected 1")));
        }
    }
    Ok(())
}

/// Integer labeling `x`, one label per variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Labeling(Vec<usize>);

impl Labeling {
    pub fn new(labels: Vec<usize>, n_labels: usize) -> Result<Self> {
        if let Some((a, l)) = labels.iter().enumerate().find(|(_, l)| **l >= n_labels) {
            return Err(CrfError::InvalidInput(format!(
                "variable {a} has label {l}, but only {n_labels} labels exist"
            )));
        }
        Ok(Self(labels))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, usize> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl std::ops::Index<usize> for Labeling {
    type Output = usize;

    fn index(&self, idx: usize) -> &usize {
        &self.0[idx]
    }
}

/// Argmax of each row, ties to the smallest label index.
pub fn round_argmax(y: &AssignmentMatrix) -> Labeling {
    Labeling(y.view().rows().into_iter().map(argmax_row).collect())
}

pub(crate) fn argmax_row(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn argmin_row(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v < row[best] {
            best = i;
        }
    }
    best
}

/// 8-bit RGB raster in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(CrfError::InvalidInput(format!("image has zero size ({width}x{height})")));
        }
        if data.len() != width * height * 3 {
            return Err(CrfError::InvalidInput(format!(
                "image buffer has {} bytes, expected {} for {width}x{height} RGB",
                data.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let o = 3 * (row * self.width + col);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Parameters of the two-kernel (smoothness + appearance) pixel compatibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureParams {
    pub w1: f64,
    pub sigma1: f64,
    pub w2: f64,
    pub sigma_spc: f64,
    pub sigma_col: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self { w1: 3.0, sigma1: 3.0, w2: 10.0, sigma_spc: 80.0, sigma_col: 13.0 }
    }
}

/// Builds the smoothness kernel over `(x, y) / sigma1` and the appearance
/// kernel over `(x, y) / sigma_spc, (r, g, b) / sigma_col`.
pub fn build_features(image: &RgbImage, params: &FeatureParams) -> Result<Vec<KernelSpec>> {
    for (name, s) in [("sigma1", params.sigma1), ("sigma_spc", params.sigma_spc), ("sigma_col", params.sigma_col)] {
        if !(s > 0.0) || !s.is_finite() {
            return Err(CrfError::InvalidParameter(format!("{name} must be positive, got {s}")));
        }
    }
    for (name, w) in [("w1", params.w1), ("w2", params.w2)] {
        if !(w >= 0.0) || !w.is_finite() {
            return Err(CrfError::InvalidParameter(format!("{name} must be nonnegative, got {w}")));
        }
    }
    let n = image.n_pixels();
    let mut smooth = Array2::zeros((n, 2));
    let mut appearance = Array2::zeros((n, 5));
    for row in 0..image.height() {
        for col in 0..image.width() {
            let a = row * image.width() + col;
            let (x, y) = (col as f64, row as f64);
            smooth[[a, 0]] = x / params.sigma1;
            smooth[[a, 1]] = y / params.sigma1;
            let [r, g, b] = image.pixel(col, row);
            appearance[[a, 0]] = x / params.sigma_spc;
            appearance[[a, 1]] = y / params.sigma_spc;
            appearance[[a, 2]] = r as f64 / params.sigma_col;
            appearance[[a, 3]] = g as f64 / params.sigma_col;
            appearance[[a, 4]] = b as f64 / params.sigma_col;
        }
    }
    Ok(vec![KernelSpec::new(params.w1, smooth)?, KernelSpec::new(params.w2, appearance)?])
}

/// Compatibility shifted by a multiple of the all-ones matrix.
///
/// On the feasible set `y_a^T 1 = 1`, so `y^T ((mu - c 11^T) (x) Kbar) y`
/// differs from the unshifted form by the constant `c * sum_{a != b} K_{a,b}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalCompat {
    pub shifted: Array2<f64>,
    pub offset_coeff: f64,
    pub nsd: bool,
}

/// Shifts `mu` by `c = max_{i,j} mu(i, j)`; Potts maps to `-I` with `c = 1`.
pub fn canonicalize_compat(compat: &LabelCompatibility, n_labels: usize) -> Result<CanonicalCompat> {
    match compat {
        LabelCompatibility::Potts => Ok(CanonicalCompat {
            shifted: -Array2::<f64>::eye(n_labels),
            offset_coeff: 1.0,
            nsd: true,
        }),
        LabelCompatibility::Matrix(mu) => {
            let c = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);
            let shifted = mu.mapv(|v| v - c);
            let nsd = largest_eigenvalue(shifted.view()) <= NSD_TOL;
            Ok(CanonicalCompat { shifted, offset_coeff: c, nsd })
        }
        LabelCompatibility::Tree(_) => Err(CrfError::UnsupportedCompat(
            "tree compatibilities are only handled by the r-HST LP solver".into(),
        )),
    }
}

pub(crate) fn largest_eigenvalue(sym: ArrayView2<'_, f64>) -> f64 {
    let m = sym.nrows();
    let mat = DMatrix::from_fn(m, m, |i, j| 0.5 * (sym[[i, j]] + sym[[j, i]]));
    SymmetricEigen::new(mat).eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}
