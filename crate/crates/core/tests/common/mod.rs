//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the solver code paths being checked.
#![allow(dead_code)]

use crfrelax::{
    AssignmentMatrix, Backend, DenseCrf, KernelSpec, LabelCompatibility, Labeling, ProblemInstance, RHSTree,
};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) || (a - b).abs() <= 1e-300
}

// ---------------------------------------------------------------- instances

pub const TINY3: [f64; 3] = [0.0, 1.0, 3.0];

pub fn tiny3(unary: Array2<f64>, compat: LabelCompatibility) -> DenseCrf {
    let f = Array2::from_shape_vec((3, 1), TINY3.to_vec()).unwrap();
    let p = ProblemInstance::new(unary, vec![KernelSpec::new(1.0, f).unwrap()], compat).unwrap();
    DenseCrf::new(p, Backend::Exact).unwrap()
}

/// Random kernels: one or two Gaussians over 1-3 dimensional features with
/// spread chosen so kernel values span several orders of magnitude.
pub fn random_kernels(rng: &mut ChaCha8Rng, n: usize) -> Vec<KernelSpec> {
    let count = rng.random_range(1..=2);
    (0..count)
        .map(|_| {
            let d = rng.random_range(1..=3);
            let spread = rng.random_range(1.0..4.0) * (n as f64).powf(1.0 / d as f64) / 2.0;
            let f = Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * spread);
            KernelSpec::new(rng.random_range(0.3..2.0), f).unwrap()
        })
        .collect()
}

pub fn random_unary(rng: &mut ChaCha8Rng, n: usize, m: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(lo..hi))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64) -> Array2<f64> {
    let mut mu = Array2::zeros((m, m));
    for i in 0..m {
        for j in i + 1..m {
            let v = rng.random_range(lo..hi);
            mu[[i, j]] = v;
            mu[[j, i]] = v;
        }
    }
    mu
}

pub fn random_crf(rng: &mut ChaCha8Rng, n: usize, m: usize, compat: LabelCompatibility) -> DenseCrf {
    let unary = random_unary(rng, n, m, -2.0, 2.0);
    let kernels = random_kernels(rng, n);
    DenseCrf::new(ProblemInstance::new(unary, kernels, compat).unwrap(), Backend::Exact).unwrap()
}

pub fn random_feasible(rng: &mut ChaCha8Rng, n: usize, m: usize) -> AssignmentMatrix {
    let mut y = Array2::from_shape_fn((n, m), |_| -rng.random::<f64>().ln());
    for mut row in y.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    AssignmentMatrix::new(y).unwrap()
}

pub fn random_labeling(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Labeling {
    Labeling::new((0..n).map(|_| rng.random_range(0..m)).collect(), m).unwrap()
}

/// Two-level tree over four labels: two groups of two at edge length 4,
/// leaves at edge length 1.
pub fn two_level_tree() -> RHSTree {
    RHSTree::new(
        vec![None, Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)],
        vec![0.0, 4.0, 4.0, 1.0, 1.0, 1.0, 1.0],
        vec![None, None, None, Some(0), Some(1), Some(2), Some(3)],
    )
    .unwrap()
}

// ------------------------------------------------------------- dense algebra

/// Literal `K_{a,b} = sum_m w_m exp(-|f_a - f_b|^2 / 2)`, diagonal included.
pub fn dense_k(problem: &ProblemInstance) -> Array2<f64> {
    let n = problem.n_vars();
    let mut k = Array2::zeros((n, n));
    for spec in problem.kernels() {
        let f = spec.features();
        for a in 0..n {
            for b in 0..n {
                let d2: f64 = f.row(a).iter().zip(f.row(b)).map(|(x, y)| (x - y) * (x - y)).sum();
                k[[a, b]] += spec.weight() * (-0.5 * d2).exp();
            }
        }
    }
    k
}

/// `K` with its diagonal removed.
pub fn dense_kbar(problem: &ProblemInstance) -> Array2<f64> {
    let mut k = dense_k(problem);
    for a in 0..k.nrows() {
        k[[a, a]] = 0.0;
    }
    k
}

pub fn literal_apply(k: &Array2<f64>, v: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, c) = v.dim();
    let mut out = Array2::zeros((n, c));
    for a in 0..n {
        for j in 0..c {
            let mut s = 0.0;
            for b in 0..n {
                s += k[[a, b]] * v[[b, j]];
            }
            out[[a, j]] = s;
        }
    }
    out
}

/// Literal triangular sums in the permuted order, indexed by position.
pub fn literal_triangular(k: &Array2<f64>, order: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = order.len();
    let mut upper = vec![0.0; n];
    let mut lower = vec![0.0; n];
    for c in 0..n {
        for a in 0..n {
            let v = k[[order[a], order[c]]];
            if a > c {
                upper[c] += v;
            } else if a < c {
                lower[c] += v;
            }
        }
    }
    (upper, lower)
}

/// Flattened index of `y_a(i)`.
pub fn idx(a: usize, i: usize, m: usize) -> usize {
    a * m + i
}

/// Dense `Psi = mu (x) Kbar` on the flattened variables.
pub fn dense_psi(problem: &ProblemInstance, mu: &Array2<f64>) -> Array2<f64> {
    let kbar = dense_kbar(problem);
    let (n, m) = (problem.n_vars(), problem.n_labels());
    let mut psi = Array2::zeros((n * m, n * m));
    for a in 0..n {
        for b in 0..n {
            for i in 0..m {
                for j in 0..m {
                    psi[[idx(a, i, m), idx(b, j, m)]] = mu[[i, j]] * kbar[[a, b]];
                }
            }
        }
    }
    psi
}

/// Literal diagonal-dominance vector, flattened.
pub fn literal_d(problem: &ProblemInstance, mu: &Array2<f64>) -> Array1<f64> {
    let psi = dense_psi(problem, mu);
    psi.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum()).collect()
}

pub fn flatten(y: ArrayView2<'_, f64>) -> Array1<f64> {
    y.iter().cloned().collect()
}

pub fn literal_energy(problem: &ProblemInstance, mu: &Array2<f64>, k: &Array2<f64>, x: &[usize]) -> f64 {
    let phi = problem.unary();
    let mut e: f64 = x.iter().enumerate().map(|(a, &l)| phi[[a, l]]).sum();
    for a in 0..x.len() {
        for b in 0..x.len() {
            if a != b {
                e += mu[[x[a], x[b]]] * k[[a, b]];
            }
        }
    }
    e
}

pub fn literal_qp(problem: &ProblemInstance, mu: &Array2<f64>, y: ArrayView2<'_, f64>) -> f64 {
    let psi = dense_psi(problem, mu);
    let v = flatten(y);
    flatten(problem.unary()).dot(&v) + v.dot(&psi.dot(&v))
}

pub fn literal_cvx(problem: &ProblemInstance, mu: &Array2<f64>, y: ArrayView2<'_, f64>) -> f64 {
    let psi = dense_psi(problem, mu);
    let d = literal_d(problem, mu);
    let v = flatten(y);
    let lin = &flatten(problem.unary()) - &d;
    lin.dot(&v) + v.dot(&psi.dot(&v)) + (&d * &v).dot(&v)
}

/// `sum phi y + sum_{a != b} K_{a,b} sum_i |y_a(i) - y_b(i)| / 2`.
pub fn literal_lp(problem: &ProblemInstance, k: &Array2<f64>, y: ArrayView2<'_, f64>) -> f64 {
    let (n, m) = y.dim();
    let mut s: f64 = problem.unary().iter().zip(y.iter()).map(|(p, v)| p * v).sum();
    for a in 0..n {
        for b in 0..n {
            if a != b {
                for i in 0..m {
                    s += k[[a, b]] * (y[[a, i]] - y[[b, i]]).abs() / 2.0;
                }
            }
        }
    }
    s
}

/// Tree-metric LP: `sum phi y + sum_T c_T / 2 sum_{a != b} K_{a,b} |y_a(T) - y_b(T)|`.
pub fn literal_tree_lp(problem: &ProblemInstance, tree: &RHSTree, k: &Array2<f64>, y: ArrayView2<'_, f64>) -> f64 {
    let n = y.nrows();
    let mut s: f64 = problem.unary().iter().zip(y.iter()).map(|(p, v)| p * v).sum();
    for t in tree.subtrees() {
        let mass: Vec<f64> = (0..n).map(|a| t.labels.iter().map(|&i| y[[a, i]]).sum()).collect();
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    s += t.weight / 2.0 * k[[a, b]] * (mass[a] - mass[b]).abs();
                }
            }
        }
    }
    s
}

/// Central differences of `f` at `y`, one entry at a time.
pub fn finite_difference(y: &Array2<f64>, h: f64, f: impl Fn(ArrayView2<'_, f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(y.dim());
    let mut z = y.clone();
    for (a, i) in ndarray::indices(y.dim()) {
        let v = y[[a, i]];
        z[[a, i]] = v + h;
        let fp = f(z.view());
        z[[a, i]] = v - h;
        let fm = f(z.view());
        z[[a, i]] = v;
        g[[a, i]] = (fp - fm) / (2.0 * h);
    }
    g
}

pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

// ------------------------------------------------------------------ solvers

/// Minimum energy over all `M^N` labelings.
pub fn exhaustive_ip(problem: &ProblemInstance, mu: &Array2<f64>) -> (f64, Vec<usize>) {
    let (n, m) = (problem.n_vars(), problem.n_labels());
    let k = dense_k(problem);
    let mut x = vec![0usize; n];
    let mut best = (f64::INFINITY, x.clone());
    loop {
        let e = literal_energy(problem, mu, &k, &x);
        if e < best.0 {
            best = (e, x.clone());
        }
        let mut p = 0;
        loop {
            if p == n {
                return best;
            }
            x[p] += 1;
            if x[p] < m {
                break;
            }
            x[p] = 0;
            p += 1;
        }
    }
}

/// Simplex projection by sorting (Held-Wolfe-Crowder).
pub fn sort_projection(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.mapv(|x| (x - tau).max(0.0))
}

/// Nearest simplex point by enumerating supports and checking KKT.
pub fn kkt_projection(v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let s: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let tau = (s.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / s.len() as f64;
        let x: Vec<f64> = (0..m).map(|i| if mask >> i & 1 == 1 { v[i] - tau } else { 0.0 }).collect();
        let primal = s.iter().all(|&i| x[i] >= -1e-12);
        let dual = (0..m).filter(|i| mask >> i & 1 == 0).all(|i| v[i] - tau <= 1e-12);
        if primal && dual {
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.expect("some support satisfies KKT").1
}

/// Minimizes `l^T y + y^T P y` over the product of simplices by accelerated
/// projected gradient with adaptive restart. Returns `(y, value, gap)`
/// where `gap` is the Frank-Wolfe gap certifying suboptimality.
pub fn dense_qp(p: &Array2<f64>, l: &Array1<f64>, n: usize, m: usize, iters: usize) -> (Array1<f64>, f64, f64) {
    let lip = 2.0 * p.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip.max(1e-12);
    let f = |y: &Array1<f64>| l.dot(y) + y.dot(&p.dot(y));
    let grad = |y: &Array1<f64>| l + &(p.dot(y) * 2.0);
    let project = |z: Array1<f64>| {
        let mut out = Array1::zeros(n * m);
        for a in 0..n {
            let row = sort_projection(z.slice(ndarray::s![a * m..(a + 1) * m]));
            out.slice_mut(ndarray::s![a * m..(a + 1) * m]).assign(&row);
        }
        out
    };
    let mut x = Array1::from_elem(n * m, 1.0 / m as f64);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut fx = f(&x);
    for _ in 0..iters {
        let g = grad(&z);
        let xn = project(&z - &(g * step));
        let fxn = f(&xn);
        if fxn > fx {
            // Restart momentum.
            z = x.clone();
            t = 1.0;
            continue;
        }
        let tn = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &xn + &((&xn - &x) * ((t - 1.0) / tn));
        x = xn;
        fx = fxn;
        t = tn;
    }
    let g = grad(&x);
    let mut gap = 0.0;
    for a in 0..n {
        let row = g.slice(ndarray::s![a * m..(a + 1) * m]);
        let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
        gap += row.dot(&x.slice(ndarray::s![a * m..(a + 1) * m])) - min;
    }
    (x, fx, gap)
}

/// Exact minimizer of `phi^T y + y^T Q y` (Q PSD) over the simplex by
/// enumerating supports and solving the KKT system on each.
pub fn kkt_simplex_qp(phi: &[f64], q: &Array2<f64>) -> (Vec<f64>, f64) {
    let m = phi.len();
    let value = |y: &[f64]| {
        let mut v = 0.0;
        for i in 0..m {
            v += phi[i] * y[i];
            for j in 0..m {
                v += y[i] * q[[i, j]] * y[j];
            }
        }
        v
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << m) {
        let s: Vec<usize> = (0..m).filter(|i| mask >> i & 1 == 1).collect();
        let k = s.len();
        // [2 Q_SS  -1] [y_S]   [-phi_S]
        // [ 1^T     0] [lam] = [   1  ]
        let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (r, &i) in s.iter().enumerate() {
            for (c, &j) in s.iter().enumerate() {
                a[(r, c)] = 2.0 * q[[i, j]];
            }
            a[(r, k)] = -1.0;
            a[(k, r)] = 1.0;
            rhs[r] = -phi[i];
        }
        rhs[k] = 1.0;
        let Some(sol) = a.lu().solve(&rhs) else { continue };
        let mut y = vec![0.0; m];
        for (r, &i) in s.iter().enumerate() {
            y[i] = sol[r];
        }
        if y.iter().any(|v| *v < -1e-10) {
            continue;
        }
        let lam = sol[k];
        let feasible_dual = (0..m).filter(|i| mask >> i & 1 == 0).all(|i| {
            let g = phi[i] + 2.0 * (0..m).map(|j| q[[i, j]] * y[j]).sum::<f64>();
            g >= lam - 1e-9
        });
        if !feasible_dual {
            continue;
        }
        let v = value(&y);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, y));
        }
    }
    let (v, y) = best.expect("a convex QP on the simplex has a KKT point");
    (y, v)
}

/// Largest eigenvalue of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_max_eigenvalue(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut a = a.clone();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).map(|(i, j)| a[[i, j]].powi(2)).sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).fold(f64::NEG_INFINITY, f64::max)
}

/// Exact LP optimum of the Potts relaxation with auxiliary variables
/// `z_{ab}(i) >= |y_a(i) - y_b(i)|` for every unordered pair.
pub fn exact_lp_optimum(problem: &ProblemInstance) -> f64 {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let (n, m) = (problem.n_vars(), problem.n_labels());
    let k = dense_k(problem);
    let phi = problem.unary();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let y: Vec<Vec<minilp::Variable>> =
        (0..n).map(|a| (0..m).map(|i| lp.add_var(phi[[a, i]], (0.0, 1.0))).collect()).collect();
    for row in &y {
        lp.add_constraint(row.iter().map(|v| (*v, 1.0)).collect::<Vec<_>>(), ComparisonOp::Eq, 1.0);
    }
    for a in 0..n {
        for b in a + 1..n {
            for i in 0..m {
                let z = lp.add_var(k[[a, b]], (0.0, f64::INFINITY));
                lp.add_constraint(&[(z, 1.0), (y[a][i], -1.0), (y[b][i], 1.0)], ComparisonOp::Ge, 0.0);
                lp.add_constraint(&[(z, 1.0), (y[a][i], 1.0), (y[b][i], -1.0)], ComparisonOp::Ge, 0.0);
            }
        }
    }
    lp.solve().expect("LP is feasible and bounded").objective()
}

/// Piecewise-constant image of random colored disks over a random
/// background, with mild per-pixel noise.
pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> crfrelax::RgbImage {
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..255.0));
    let disks: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(3..8))
        .map(|_| {
            let r = rng.random_range(0.1..0.4) * w.min(h) as f64;
            (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64, r, std::array::from_fn(|_| rng.random_range(0.0..255.0)))
        })
        .collect();
    let mut data = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            let mut c = bg;
            for (cx, cy, r, col) in &disks {
                if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                    c = *col;
                }
            }
            for v in c {
                data.push((v + rng.random_range(-8.0..8.0)).clamp(0.0, 255.0) as u8);
            }
        }
    }
    crfrelax::RgbImage::new(w, h, data).unwrap()
}
