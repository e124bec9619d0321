//! Euclidean projection onto the probability simplex (Condat's method).

use ndarray::parallel::prelude::*;
use ndarray::{Array2, ArrayView2, ArrayViewMut1, Axis};

use crate::model::AssignmentMatrix;

/// Threshold `tau` with `sum_i max(v_i - tau, 0) = 1`.
pub fn simplex_threshold(v: &[f64]) -> f64 {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut active = Vec::with_capacity(v.len());
    let mut pending = Vec::new();
    active.push(v[0]);
    let mut rho = v[0] - 1.0;
    for &y in &v[1..] {
        if y > rho {
            rho += (y - rho) / (active.len() + 1) as f64;
            if rho > y - 1.0 {
                active.push(y);
            } else {
                pending.append(&mut active);
                active.push(y);
                rho = y - 1.0;
            }
        }
    }
    for y in pending {
        if y > rho {
            active.push(y);
            rho += (y - rho) / active.len() as f64;
        }
    }
    loop {
        let before = active.len();
        let mut i = 0;
        while i < active.len() {
            let y = active[i];
            if y <= rho {
                active.swap_remove(i);
                rho += (rho - y) / active.len() as f64;
            } else {
                i += 1;
            }
        }
        if active.len() == before {
            break;
        }
    }
    rho
}

/// Projects `row` onto the simplex in place.
pub fn project_row(mut row: ArrayViewMut1<'_, f64>) {
    let tau = match row.as_slice() {
        Some(s) => simplex_threshold(s),
        None => simplex_threshold(&row.to_vec()),
    };
    row.mapv_inplace(|v| (v - tau).max(0.0));
}

/// Projects every row of `y_raw` onto the probability simplex.
pub fn project_rows_to_simplex(y_raw: ArrayView2<'_, f64>) -> AssignmentMatrix {
    let mut y: Array2<f64> = y_raw.to_owned();
    y.axis_iter_mut(Axis(0)).into_par_iter().for_each(project_row);
    AssignmentMatrix::from_raw(y)
}
