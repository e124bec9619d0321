//! Permutohedral lattice: splat onto the enclosing simplex vertices, blur
//! along each of the `d + 1` lattice directions, slice back.
//!
//! The lattice is refined by `sqrt(REFINE)` relative to the textbook
//! spacing and each direction is blurred `REFINE` times, which keeps the
//! same Gaussian width with a smaller interpolation error. Vertices one blur
//! step away from the occupied ones are also allocated so blurred mass is
//! not dropped at the edge of the support.
//!
//! The output is left unnormalized. It approximates the exact Gaussian sum
//! up to a roughly constant factor, which the caller calibrates away.

use ndarray::{Array2, ArrayView2};

const EMPTY: u32 = u32::MAX;

const REFINE: usize = 2;

/// Open-addressing table from lattice keys (`d` coordinates) to vertex ids.
struct KeyTable {
    d: usize,
    keys: Vec<i32>,
    slots: Vec<u32>,
}

impl KeyTable {
    fn with_capacity(d: usize, expected: usize) -> Self {
        let cap = (2 * expected.max(8)).next_power_of_two();
        Self { d, keys: Vec::with_capacity(expected * d), slots: vec![EMPTY; cap] }
    }

    fn len(&self) -> usize {
        self.keys.len() / self.d.max(1)
    }

    #[inline]
    fn hash(key: &[i32]) -> usize {
        let mut h: u64 = 0;
        for &k in key {
            h = h.wrapping_add(k as u32 as u64).wrapping_mul(2_531_011);
        }
        (h ^ (h >> 29)) as usize
    }

    fn key(&self, id: u32) -> &[i32] {
        let o = id as usize * self.d;
        &self.keys[o..o + self.d]
    }

    fn find(&self, key: &[i32]) -> Option<u32> {
        let mask = self.slots.len() - 1;
        let mut h = Self::hash(key) & mask;
        loop {
            let id = self.slots[h];
            if id == EMPTY {
                return None;
            }
            if self.key(id) == key {
                return Some(id);
            }
            h = (h + 1) & mask;
        }
    }

    fn insert(&mut self, key: &[i32]) -> u32 {
        if 2 * (self.len() + 1) > self.slots.len() {
            self.grow();
        }
        let mask = self.slots.len() - 1;
        let mut h = Self::hash(key) & mask;
        loop {
            let id = self.slots[h];
            if id == EMPTY {
                let new_id = self.len() as u32;
                self.keys.extend_from_slice(key);
                self.slots[h] = new_id;
                return new_id;
            }
            if self.key(id) == key {
                return id;
            }
            h = (h + 1) & mask;
        }
    }

    fn grow(&mut self) {
        let cap = self.slots.len() * 2;
        let mut slots = vec![EMPTY; cap];
        let mask = cap - 1;
        for id in 0..self.len() as u32 {
            let mut h = Self::hash(self.key(id)) & mask;
            while slots[h] != EMPTY {
                h = (h + 1) & mask;
            }
            slots[h] = id;
        }
        self.slots = slots;
    }
}

/// Precomputed splat/blur/slice structure over a fixed point set.
#[derive(Debug, Clone)]
pub struct Permutohedral {
    d: usize,
    n: usize,
    n_vertices: usize,
    // Per point, the d + 1 enclosing vertices and barycentric weights.
    offsets: Vec<u32>,
    barycentric: Vec<f64>,
    // For each direction j and vertex i, the two neighbours along j.
    neighbours: Vec<[u32; 2]>,
}

impl Permutohedral {
    pub fn new(features: ArrayView2<'_, f64>) -> Self {
        let (n, d) = features.dim();
        let dp1 = d + 1;
        let inv_std_dev = (REFINE as f64).sqrt() * (2.0f64 / 3.0).sqrt() * dp1 as f64;
        let scale: Vec<f64> =
            (0..d).map(|i| inv_std_dev / (((i + 1) * (i + 2)) as f64).sqrt()).collect();
        // canonical[r * (d+1) + k]: coordinate offset of remainder-r vertex for rank k.
        let mut canonical = vec![0i32; dp1 * dp1];
        for r in 0..=d {
            for k in 0..=d - r {
                canonical[r * dp1 + k] = r as i32;
            }
            for k in d - r + 1..=d {
                canonical[r * dp1 + k] = r as i32 - dp1 as i32;
            }
        }
        let down = 1.0 / dp1 as f64;

        let mut table = KeyTable::with_capacity(d, n * dp1);
        let mut offsets = vec![0u32; n * dp1];
        let mut barycentric = vec![0.0; n * dp1];
        let mut elevated = vec![0.0; dp1];
        let mut rem0 = vec![0i32; dp1];
        let mut rank = vec![0i32; dp1];
        let mut bary = vec![0.0; d + 2];
        let mut key = vec![0i32; d];

        for p in 0..n {
            let f = features.row(p);
            let mut sm = 0.0;
            for j in (1..=d).rev() {
                let cf = f[j - 1] * scale[j - 1];
                elevated[j] = sm - j as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            // Closest remainder-0 lattice point.
            let mut sum = 0i32;
            for i in 0..=d {
                let v = down * elevated[i];
                let up = v.ceil() * dp1 as f64;
                let dn = v.floor() * dp1 as f64;
                rem0[i] = if up - elevated[i] < elevated[i] - dn { up as i32 } else { dn as i32 };
                sum += rem0[i];
            }
            sum /= dp1 as i32;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                let di = elevated[i] - rem0[i] as f64;
                for j in i + 1..=d {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            for i in 0..=d {
                rank[i] += sum;
                if rank[i] < 0 {
                    rank[i] += dp1 as i32;
                    rem0[i] += dp1 as i32;
                } else if rank[i] > d as i32 {
                    rank[i] -= dp1 as i32;
                    rem0[i] -= dp1 as i32;
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..=d {
                let v = (elevated[i] - rem0[i] as f64) * down;
                let r = rank[i] as usize;
                bary[d - r] += v;
                bary[d + 1 - r] -= v;
            }
            bary[0] += 1.0 + bary[d + 1];

            for r in 0..=d {
                for i in 0..d {
                    key[i] = rem0[i] + canonical[r * dp1 + rank[i] as usize];
                }
                offsets[p * dp1 + r] = table.insert(&key);
                barycentric[p * dp1 + r] = bary[r];
            }
        }

        // One ring of blur neighbours around the occupied vertices.
        let occupied = table.len();
        let mut key_v = vec![0i32; d];
        let mut nb = vec![0i32; d];
        for v in 0..occupied {
            key_v.copy_from_slice(table.key(v as u32));
            for j in 0..=d {
                for sign in [-1i32, 1] {
                    for i in 0..d {
                        nb[i] = key_v[i] - sign;
                    }
                    if j < d {
                        nb[j] = key_v[j] + sign * d as i32;
                    }
                    table.insert(&nb);
                }
            }
        }
        let n_vertices = table.len();
        let mut neighbours = vec![[EMPTY, EMPTY]; dp1 * n_vertices];
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for j in 0..=d {
            for v in 0..n_vertices {
                let k = table.key(v as u32);
                for i in 0..d {
                    n1[i] = k[i] - 1;
                    n2[i] = k[i] + 1;
                }
                if j < d {
                    n1[j] = k[j] + d as i32;
                    n2[j] = k[j] - d as i32;
                }
                neighbours[j * n_vertices + v] =
                    [table.find(&n1).unwrap_or(EMPTY), table.find(&n2).unwrap_or(EMPTY)];
            }
        }

        Self { d, n, n_vertices, offsets, barycentric, neighbours }
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    /// Filters one column of values.
    pub fn compute(&self, values: impl Fn(usize) -> f64) -> Vec<f64> {
        let dp1 = self.d + 1;
        // Slot 0 stands for "no vertex" and stays zero.
        let mut buf = vec![0.0; self.n_vertices + 1];
        for p in 0..self.n {
            let v = values(p);
            if v == 0.0 {
                continue;
            }
            for r in 0..dp1 {
                buf[self.offsets[p * dp1 + r] as usize + 1] += self.barycentric[p * dp1 + r] * v;
            }
        }

        let mut next = vec![0.0; self.n_vertices + 1];
        let slot = |id: u32| if id == EMPTY { 0 } else { id as usize + 1 };
        for j in (0..dp1).flat_map(|j| std::iter::repeat_n(j, REFINE)) {
            let nb = &self.neighbours[j * self.n_vertices..(j + 1) * self.n_vertices];
            for (v, [a, b]) in nb.iter().enumerate() {
                next[v + 1] = buf[v + 1] + 0.5 * (buf[slot(*a)] + buf[slot(*b)]);
            }
            std::mem::swap(&mut buf, &mut next);
        }

        let alpha = 1.0 / (1.0 + 2f64.powi(-(self.d as i32)));
        (0..self.n)
            .map(|p| {
                let mut acc = 0.0;
                for r in 0..dp1 {
                    acc += self.barycentric[p * dp1 + r] * buf[self.offsets[p * dp1 + r] as usize + 1];
                }
                alpha * acc
            })
            .collect()
    }

    pub fn compute_matrix(&self, values: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros(values.dim());
        for c in 0..values.ncols() {
            let col = self.compute(|p| values[[p, c]]);
            out.column_mut(c).assign(&ndarray::Array1::from(col));
        }
        out
    }
}
