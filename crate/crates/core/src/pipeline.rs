//! Warm-started chains of solvers, e.g. `qp -> dcneg -> lp`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::crf::DenseCrf;
use crate::dc::{run_cccp_generic, run_cccp_negdef, CccpOptions};
use crate::energy::ip_energy;
use crate::error::{CrfError, Result};
use crate::lp::{restrict_labels, run_lp, LPOptions};
use crate::meanfield::{run_mf, MfOptions};
use crate::model::{round_argmax, AssignmentMatrix};
use crate::qp::{run_frank_wolfe, ConvexQp, FwOptions};
use crate::trace::EnergyTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Mf,
    Mf5,
    Qp,
    DcGen,
    DcNeg,
    Lp,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Mf => "mf",
            Stage::Mf5 => "mf5",
            Stage::Qp => "qp",
            Stage::DcGen => "dcgen",
            Stage::DcNeg => "dcneg",
            Stage::Lp => "lp",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = CrfError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mf" => Ok(Stage::Mf),
            "mf5" => Ok(Stage::Mf5),
            "qp" => Ok(Stage::Qp),
            "dcgen" => Ok(Stage::DcGen),
            "dcneg" => Ok(Stage::DcNeg),
            "lp" => Ok(Stage::Lp),
            other => Err(CrfError::InvalidParameter(format!(
                "unknown stage '{other}' (expected mf, mf5, qp, dcgen, dcneg or lp)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageOptions {
    pub mf: MfOptions,
    pub fw: FwOptions,
    pub cccp: CccpOptions,
    pub lp: LPOptions,
    /// Restrict the LP to labels used by its warm start.
    pub restrict_labels: bool,
}

impl Default for StageOptions {
    fn default() -> Self {
        Self {
            mf: MfOptions::default(),
            fw: FwOptions::default(),
            cccp: CccpOptions::default(),
            lp: LPOptions::default(),
            restrict_labels: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineSpec {
    stages: Vec<Stage>,
    pub options: StageOptions,
}

impl PipelineSpec {
    pub fn new(stages: Vec<Stage>, options: StageOptions) -> Result<Self> {
        if stages.is_empty() {
            return Err(CrfError::InvalidParameter("pipeline needs at least one stage".into()));
        }
        Ok(Self { stages, options })
    }

    /// Parses `qp,dcneg,lp` or `qp-dcneg-lp`.
    pub fn parse(text: &str, options: StageOptions) -> Result<Self> {
        let stages = text
            .split([',', '-', '>', ' '])
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(stages, options)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub trace: EnergyTrace,
    /// Objective the stage itself minimizes, at its returned iterate.
    pub relaxed_objective: f64,
    /// Energy of the argmax labeling of the returned iterate.
    pub integer_energy: f64,
    pub elapsed_s: f64,
    pub filter_calls: usize,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub y: AssignmentMatrix,
    pub stages: Vec<StageReport>,
}

impl PipelineResult {
    pub fn final_energy(&self) -> f64 {
        self.stages.last().map(|s| s.integer_energy).unwrap_or(f64::NAN)
    }

    pub fn final_objective(&self) -> f64 {
        self.stages.last().map(|s| s.relaxed_objective).unwrap_or(f64::NAN)
    }
}

/// A failed stage together with everything that finished before it.
#[derive(Debug)]
pub struct PipelineFailure {
    pub stage: Stage,
    pub completed: Vec<StageReport>,
    pub error: CrfError,
}

impl fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for PipelineFailure {}

/// Runs the stages in order from `softmax(-phi)`, each warm-started from the
/// previous stage's output.
pub fn run_pipeline(crf: &DenseCrf, spec: &PipelineSpec) -> std::result::Result<PipelineResult, PipelineFailure> {
    let y0 = AssignmentMatrix::softmax_neg(crf.unary());
    run_pipeline_from(crf, spec, y0)
}

pub fn run_pipeline_from(
    crf: &DenseCrf,
    spec: &PipelineSpec,
    y0: AssignmentMatrix,
) -> std::result::Result<PipelineResult, PipelineFailure> {
    let mut y = y0;
    let mut reports = Vec::with_capacity(spec.stages.len());
    for &stage in &spec.stages {
        match run_stage(crf, stage, &y, &spec.options) {
            Ok((next, report)) => {
                y = next;
                reports.push(report);
            }
            Err(error) => return Err(PipelineFailure { stage, completed: reports, error }),
        }
    }
    Ok(PipelineResult { y, stages: reports })
}

fn run_stage(
    crf: &DenseCrf,
    stage: Stage,
    y: &AssignmentMatrix,
    opts: &StageOptions,
) -> Result<(AssignmentMatrix, StageReport)> {
    let start = Instant::now();
    let calls = crf.filter().calls();
    let (next, trace, relaxed_objective) = match stage {
        Stage::Mf | Stage::Mf5 => {
            let o = if stage == Stage::Mf5 { MfOptions { trace_integer: opts.mf.trace_integer, ..MfOptions::mf5() } } else { opts.mf };
            let r = run_mf(crf, y, &o)?;
            let obj = crate::energy::qp_objective(crf, r.q.view())?;
            (r.q, r.trace, obj)
        }
        Stage::Qp => {
            let qp = ConvexQp::relaxation(crf)?;
            let r = run_frank_wolfe(&qp, y, &opts.fw)?;
            let obj = qp.objective_with(r.y.view(), r.cache.psi_d_y.view());
            (r.y, r.trace, obj)
        }
        Stage::DcGen | Stage::DcNeg => {
            let r = if stage == Stage::DcGen {
                run_cccp_generic(crf, y, &opts.cccp)?
            } else {
                run_cccp_negdef(crf, y, &opts.cccp)?
            };
            let obj = r.trace.last().map(|t| t.relaxed_objective).unwrap_or(f64::NAN);
            (r.y, r.trace, obj)
        }
        Stage::Lp => {
            let mut o = opts.lp.clone();
            if opts.restrict_labels && o.restricted_labels.is_none() {
                o.restricted_labels = Some(restrict_labels(y));
            }
            let r = run_lp(crf, y, &o)?;
            (r.y, r.trace, r.best_objective)
        }
    };
    let integer_energy = ip_energy(crf, &round_argmax(&next))?;
    let report = StageReport {
        stage,
        trace,
        relaxed_objective,
        integer_energy,
        elapsed_s: start.elapsed().as_secs_f64(),
        filter_calls: crf.filter().calls() - calls,
    };
    Ok((next, report))
}
