use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{argmax_row, AssignmentMatrix, Labeling};

/// Threshold passes per label before unassigned rows fall back to argmax.
pub const PASSES_PER_LABEL: usize = 64;

/// Kleinberg-Tardos rounding: draw a label `i` and a threshold
/// `theta in (0, 1]`, give `i` to every unassigned variable with
/// `y_a(i) >= theta`, and repeat until all variables are assigned.
pub fn kt_round(y: &AssignmentMatrix, seed: u64) -> Labeling {
    let (n, m) = (y.n_vars(), y.n_labels());
    let y = y.view();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut remaining = n;
    let mut passes = 0;
    while remaining > 0 && passes < PASSES_PER_LABEL * m {
        let i = rng.random_range(0..m);
        let theta = 1.0 - rng.random::<f64>();
        for (a, l) in label.iter_mut().enumerate() {
            if l.is_none() && y[[a, i]] >= theta {
                *l = Some(i);
                remaining -= 1;
            }
        }
        passes += 1;
    }
    let labels = label
        .into_iter()
        .enumerate()
        .map(|(a, l)| l.unwrap_or_else(|| argmax_row(y.row(a))))
        .collect();
    Labeling::new(labels, m).expect("labels are in range")
}
