//! Brute-force Gaussian sums with compensated accumulation.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(self) -> f64 {
        self.sum + self.carry
    }
}

#[inline]
pub(crate) fn gauss(fa: &[f64], fb: &[f64]) -> f64 {
    let d2: f64 = fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum();
    (-0.5 * d2).exp()
}

/// Weighted kernel mixture evaluated from features, optionally backed by a
/// materialized `N x N` matrix.
#[derive(Debug)]
pub(crate) struct ExactKernels {
    weights: Vec<f64>,
    // Row-major feature copies, one per kernel.
    features: Vec<(usize, Vec<f64>)>,
    dense: Option<Array2<f64>>,
    n: usize,
}

impl ExactKernels {
    pub fn new(kernels: &[(f64, ArrayView2<'_, f64>)], dense_cap: usize) -> Self {
        let n = kernels.first().map(|(_, f)| f.nrows()).unwrap_or(0);
        let weights = kernels.iter().map(|(w, _)| *w).collect();
        let features = kernels
            .iter()
            .map(|(_, f)| (f.ncols(), f.iter().cloned().collect::<Vec<_>>()))
            .collect();
        let mut out = Self { weights, features, dense: None, n };
        if n <= dense_cap {
            let mut dense = Array2::zeros((n, n));
            dense.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(a, mut row)| {
                for b in 0..n {
                    row[b] = out.eval(a, b);
                }
            });
            out.dense = Some(dense);
        }
        out
    }

    fn eval(&self, a: usize, b: usize) -> f64 {
        let mut k = 0.0;
        for (w, (d, f)) in self.weights.iter().zip(&self.features) {
            k += w * gauss(&f[a * d..(a + 1) * d], &f[b * d..(b + 1) * d]);
        }
        k
    }

    #[inline]
    pub fn k(&self, a: usize, b: usize) -> f64 {
        match &self.dense {
            Some(m) => m[[a, b]],
            None => self.eval(a, b),
        }
    }

    /// `out_a = sum_b K_{a,b} v_b` for every column of `values`.
    pub fn apply(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let c = values.ncols();
        let mut out = Array2::zeros((self.n, c));
        out.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(a, mut row)| {
            let mut acc = vec![CompensatedSum::default(); c];
            for b in 0..self.n {
                let k = self.k(a, b);
                for (j, s) in acc.iter_mut().enumerate() {
                    s.add(k * values[[b, j]]);
                }
            }
            for (j, s) in acc.into_iter().enumerate() {
                row[j] = s.total();
            }
        });
        out
    }

    /// Sums of `K` across the two index sets: for `p` in `left`,
    /// `sum_{q in right} K_{p,q}`, and for `q` in `right`, `sum_{p in left} K_{p,q}`.
    pub fn cross_sums(&self, left: &[usize], right: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut row_acc = vec![CompensatedSum::default(); left.len()];
        let mut col_acc = vec![CompensatedSum::default(); right.len()];
        for (i, &p) in left.iter().enumerate() {
            for (j, &q) in right.iter().enumerate() {
                let k = self.k(p, q);
                row_acc[i].add(k);
                col_acc[j].add(k);
            }
        }
        (
            row_acc.into_iter().map(CompensatedSum::total).collect(),
            col_acc.into_iter().map(CompensatedSum::total).collect(),
        )
    }

    /// Exact triangular sums inside one block of the ordering.
    pub fn block_triangular(&self, block: &[usize], upper: &mut [f64], lower: &mut [f64]) {
        let n = block.len();
        let mut up = vec![CompensatedSum::default(); n];
        let mut lo = vec![CompensatedSum::default(); n];
        for p in 0..n {
            for q in p + 1..n {
                let k = self.k(block[p], block[q]);
                up[p].add(k);
                lo[q].add(k);
            }
        }
        for p in 0..n {
            upper[p] += up[p].total();
            lower[p] += lo[p].total();
        }
    }

    /// Like [`Self::block_triangular`], skipping pairs in the same group.
    pub fn grouped_block_triangular(&self, block: &[usize], groups: &[usize], upper: &mut [f64], lower: &mut [f64]) {
        let n = block.len();
        let mut up = vec![CompensatedSum::default(); n];
        let mut lo = vec![CompensatedSum::default(); n];
        for p in 0..n {
            for q in p + 1..n {
                if groups[p] == groups[q] {
                    continue;
                }
                let k = self.k(block[p], block[q]);
                up[p].add(k);
                lo[q].add(k);
            }
        }
        for p in 0..n {
            upper[p] += up[p].total();
            lower[p] += lo[p].total();
        }
    }
}
