use std::time::Instant;

use crate::crf::DenseCrf;
use crate::energy::ip_energy;
use crate::error::Result;
use crate::model::{round_argmax, AssignmentMatrix};

/// One solver iteration: wall time since the solver started, the relaxed
/// objective it tracks, and optionally the energy of the argmax labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub elapsed_s: f64,
    pub relaxed_objective: f64,
    pub integer_energy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyTrace {
    rows: Vec<TraceRow>,
}

impl EnergyTrace {
    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.relaxed_objective).collect()
    }

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }
}

pub(crate) struct Recorder<'a> {
    crf: &'a DenseCrf,
    start: Instant,
    integer: bool,
    trace: EnergyTrace,
}

impl<'a> Recorder<'a> {
    pub fn new(crf: &'a DenseCrf, integer: bool) -> Self {
        Self { crf, start: Instant::now(), integer, trace: EnergyTrace::default() }
    }

    pub fn record(&mut self, iter: usize, relaxed_objective: f64, y: &AssignmentMatrix) -> Result<()> {
        let integer_energy = if self.integer { Some(ip_energy(self.crf, &round_argmax(y))?) } else { None };
        self.trace.push(TraceRow {
            iter,
            elapsed_s: self.start.elapsed().as_secs_f64(),
            relaxed_objective,
            integer_energy,
        });
        Ok(())
    }

    pub fn finish(self) -> EnergyTrace {
        self.trace
    }
}
