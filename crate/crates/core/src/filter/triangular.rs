//! Divide-and-conquer triangular sums.
//!
//! For a block of positions `[lo, hi)` split at `mid = lo + ceil(n / 2)`,
//! the upper sums of the left half pick up the whole off-diagonal block
//! `sum_{q in [mid, hi)} K`, and the lower sums of the right half pick up
//! its transpose. Both halves then recurse. Every level touches each point
//! once, so the lattice backend does `O(N log N)` work overall.
//!
//! The grouped variant treats runs of equal group ids as unordered: pairs
//! inside a run contribute to neither side. Splits move to the run boundary
//! nearest the midpoint, and a block made of a single run is skipped.

use rayon::join;

use super::{Backend, GaussianFilter};

pub(super) fn triangular_sums(filter: &GaussianFilter, order: &[usize], groups: Option<&[usize]>) -> (Vec<f64>, Vec<f64>) {
    let n = order.len();
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    recurse(filter, order, groups, &mut upper, &mut lower);
    (upper, lower)
}

/// Run boundary closest to the middle of the block, if any.
fn split_point(n: usize, groups: Option<&[usize]>) -> Option<usize> {
    let mid = n.div_ceil(2);
    let Some(g) = groups else { return Some(mid) };
    let is_boundary = |p: usize| g[p - 1] != g[p];
    (0..n).find_map(|off| {
        let right = mid + off;
        if right < n && is_boundary(right) {
            return Some(right);
        }
        let left = mid.checked_sub(off)?;
        (left >= 1 && left < n && is_boundary(left)).then_some(left)
    })
}

fn recurse(filter: &GaussianFilter, block: &[usize], groups: Option<&[usize]>, upper: &mut [f64], lower: &mut [f64]) {
    let n = block.len();
    if n <= 1 {
        return;
    }
    if n <= filter.base_case() {
        match groups {
            None => filter.exact_kernels().block_triangular(block, upper, lower),
            Some(g) => filter.exact_kernels().grouped_block_triangular(block, g, upper, lower),
        }
        return;
    }
    let Some(mid) = split_point(n, groups) else { return };
    let (left, right) = block.split_at(mid);
    filter.count_call();
    let (to_left, to_right) = match filter.backend() {
        Backend::Exact => filter.exact_kernels().cross_sums(left, right),
        Backend::Lattice => filter.lattice_cross_sums(left, right),
    };
    let (up_l, up_r) = upper.split_at_mut(mid);
    let (lo_l, lo_r) = lower.split_at_mut(mid);
    for (u, v) in up_l.iter_mut().zip(&to_left) {
        *u += v;
    }
    for (l, v) in lo_r.iter_mut().zip(&to_right) {
        *l += v;
    }
    let (g_l, g_r) = match groups {
        Some(g) => {
            let (a, b) = g.split_at(mid);
            (Some(a), Some(b))
        }
        None => (None, None),
    };
    join(|| recurse(filter, left, g_l, up_l, lo_l), || recurse(filter, right, g_r, up_r, lo_r));
}
