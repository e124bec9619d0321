//! Synchronous mean-field updates, the usual dense-CRF baseline.

use ndarray::{Array2, Zip};

use crate::crf::DenseCrf;
use crate::energy::dot;
use crate::error::Result;
use crate::model::{check_feasible, AssignmentMatrix};
use crate::trace::{EnergyTrace, Recorder};

/// Stop after this many consecutive iterations without a new best objective.
pub const STALL_LIMIT: usize = 10;

#[derive(Debug, Clone, Copy)]
pub struct MfOptions {
    pub max_iters: usize,
    /// Stop when the max-norm change of `Q` drops below this.
    pub tol: f64,
    pub trace_integer: bool,
}

impl Default for MfOptions {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6, trace_integer: true }
    }
}

impl MfOptions {
    /// Exactly five parallel updates.
    pub fn mf5() -> Self {
        Self { max_iters: 5, tol: 0.0, trace_integer: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfStop {
    MaxIters,
    Converged,
    Stalled,
}

#[derive(Debug, Clone)]
pub struct MfResult {
    pub q: AssignmentMatrix,
    pub trace: EnergyTrace,
    pub steps: usize,
    pub stop: MfStop,
}

/// `Q'_a(i) ∝ exp(-phi_a(i) - sum_j mu(i, j) [(K - wI) Q_j]_a)`.
pub fn mf_step(crf: &DenseCrf, q: &AssignmentMatrix) -> Result<AssignmentMatrix> {
    crf.check_shape(q.view())?;
    let messages = crf.pairwise_product(q.view());
    Ok(update(crf, &messages))
}

fn update(crf: &DenseCrf, messages: &Array2<f64>) -> AssignmentMatrix {
    let mut logits = Array2::zeros(messages.dim());
    Zip::from(&mut logits).and(crf.unary()).and(messages).for_each(|l, phi, m| *l = -phi - m);
    for mut row in logits.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row /= s;
    }
    AssignmentMatrix::from_raw(logits)
}

/// Iterates `mf_step` from `q0`. Each iteration costs one filter pass, which
/// also yields the QP objective of the current `Q` for the trace.
pub fn run_mf(crf: &DenseCrf, q0: &AssignmentMatrix, opts: &MfOptions) -> Result<MfResult> {
    crf.check_shape(q0.view())?;
    check_feasible(q0.view())?;
    let mut rec = Recorder::new(crf, opts.trace_integer);
    let mut q = q0.clone();
    let mut messages = crf.pairwise_product(q.view());
    let objective = |q: &AssignmentMatrix, msg: &Array2<f64>| dot(crf.unary(), q.view()) + dot(q.view(), msg.view());
    let mut obj = objective(&q, &messages);
    rec.record(0, obj, &q)?;
    let (mut best_obj, mut best_q) = (obj, q.clone());
    let mut stall = 0;
    let mut stop = MfStop::MaxIters;
    let mut steps = 0;

    while steps < opts.max_iters {
        let next = update(crf, &messages);
        let change = Zip::from(next.view())
            .and(q.view())
            .fold(0.0f64, |acc, a, b| acc.max((a - b).abs()));
        q = next;
        steps += 1;
        messages = crf.pairwise_product(q.view());
        obj = objective(&q, &messages);
        rec.record(steps, obj, &q)?;
        if obj < best_obj {
            best_obj = obj;
            best_q = q.clone();
            stall = 0;
        } else {
            stall += 1;
        }
        if change < opts.tol {
            stop = MfStop::Converged;
            break;
        }
        if stall >= STALL_LIMIT {
            stop = MfStop::Stalled;
            q = best_q;
            break;
        }
    }
    Ok(MfResult { q, trace: rec.finish(), steps, stop })
}
