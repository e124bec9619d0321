//! Reproducible synthetic segmentation instances.
//!
//! A random Voronoi partition of an `h x w` grid gives the ground truth.
//! Each region gets a random color; pixels add Gaussian color noise. Unary
//! costs are negative log-probabilities of noisy per-pixel classifiers that
//! favour the true label but are wrong on a sizeable fraction of pixels.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CrfError, Result};
use crate::model::{build_features, FeatureParams, LabelCompatibility, Labeling, ProblemInstance, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    /// Per-channel color noise standard deviation.
    pub color_noise: f64,
    /// Logit bonus of the true label.
    pub signal: f64,
    /// Logit noise standard deviation.
    pub unary_noise: f64,
    pub features: FeatureParams,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { color_noise: 20.0, signal: 1.0, unary_noise: 1.0, features: FeatureParams::default() }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub image: RgbImage,
    pub ground_truth: Labeling,
    pub problem: ProblemInstance,
}

/// Grid with `h * w = n` and `w` the largest divisor of `n` not above `sqrt(n)`.
pub fn grid_shape(n: usize) -> (usize, usize) {
    let mut w = (n as f64).sqrt() as usize;
    while w > 1 && n % w != 0 {
        w -= 1;
    }
    let w = w.max(1);
    (n / w, w)
}

pub fn synthetic(n: usize, m: usize, seed: u64) -> Result<SyntheticInstance> {
    synthetic_with(n, m, seed, &SynthParams::default())
}

pub fn synthetic_with(n: usize, m: usize, seed: u64, params: &SynthParams) -> Result<SyntheticInstance> {
    if n == 0 || m == 0 {
        return Err(CrfError::InvalidParameter(format!("need N, M >= 1, got N={n}, M={m}")));
    }
    let color_noise = Normal::new(0.0, params.color_noise)
        .map_err(|e| CrfError::InvalidParameter(format!("color noise: {e}")))?;
    let logit_noise = Normal::new(0.0, params.unary_noise)
        .map_err(|e| CrfError::InvalidParameter(format!("unary noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = grid_shape(n);

    let centers: Vec<(f64, f64)> =
        (0..m).map(|_| (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64)).collect();
    let colors: Vec<[f64; 3]> =
        (0..m).map(|_| std::array::from_fn(|_| rng.random_range(30.0..225.0))).collect();

    let mut truth = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(3 * n);
    for row in 0..h {
        for col in 0..w {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let label = (0..m)
                .min_by(|&i, &j| {
                    let di = (centers[i].0 - x).powi(2) + (centers[i].1 - y).powi(2);
                    let dj = (centers[j].0 - x).powi(2) + (centers[j].1 - y).powi(2);
                    di.total_cmp(&dj)
                })
                .expect("m >= 1");
            truth.push(label);
            for c in colors[label] {
                data.push((c + color_noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8);
            }
        }
    }

    let mut unary = Array2::zeros((n, m));
    for (a, &l) in truth.iter().enumerate() {
        let logits: Vec<f64> = (0..m)
            .map(|i| logit_noise.sample(&mut rng) + if i == l { params.signal } else { 0.0 })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for (i, v) in logits.iter().enumerate() {
            unary[[a, i]] = lse - v;
        }
    }

    let image = RgbImage::new(w, h, data)?;
    let kernels = build_features(&image, &params.features)?;
    let problem = ProblemInstance::new(unary, kernels, LabelCompatibility::Potts)?;
    Ok(SyntheticInstance { image, ground_truth: Labeling::new(truth, m)?, problem })
}
