mod common;

use common::*;
use crfrelax::pipeline::run_pipeline_from;
use crfrelax::synth::synthetic;
use crfrelax::{
    mf_step, qp_objective, run_pipeline, AssignmentMatrix, Backend, DenseCrf, LabelCompatibility, PipelineSpec, Stage,
    StageOptions,
};

fn spec(s: &str) -> PipelineSpec {
    PipelineSpec::parse(s, StageOptions::default()).unwrap()
}

#[test]
fn mf5_stage_is_five_steps_from_softmax() {
    let mut r = rng(161);
    let crf = random_crf(&mut r, 30, 3, LabelCompatibility::Potts);
    let res = run_pipeline(&crf, &spec("mf5")).unwrap();
    let mut q = AssignmentMatrix::softmax_neg(crf.unary());
    for _ in 0..5 {
        q = mf_step(&crf, &q).unwrap();
    }
    assert_eq!(res.y, q);
}

#[test]
fn dc_refinement_never_hurts_the_relaxed_objective() {
    let mut r = rng(163);
    for _ in 0..10 {
        let crf = random_crf(&mut r, 25, 3, LabelCompatibility::Potts);
        let qp = run_pipeline(&crf, &spec("qp")).unwrap();
        let qd = run_pipeline(&crf, &spec("qp,dcneg")).unwrap();
        let before = qp_objective(&crf, qp.y.view()).unwrap();
        let after = qp_objective(&crf, qd.y.view()).unwrap();
        assert!(after <= before + 1e-8 * before.abs().max(1.0));
        assert_eq!(qd.stages.len(), 2);
        assert_eq!(qd.stages[0].stage, Stage::Qp);
        assert!(rel_err(qd.final_objective(), after) < 1e-9);
    }
}

#[test]
fn stages_warm_start_from_their_predecessor() {
    let mut r = rng(165);
    let crf = random_crf(&mut r, 20, 3, LabelCompatibility::Potts);
    let y0 = random_feasible(&mut r, 20, 3);
    let first = run_pipeline_from(&crf, &spec("qp"), y0.clone()).unwrap();
    let chained = run_pipeline_from(&crf, &spec("qp,lp"), y0).unwrap();
    let alone = run_pipeline_from(&crf, &spec("lp"), first.y.clone()).unwrap();
    assert_eq!(chained.y, alone.y);
    assert_eq!(chained.stages[1].trace.rows()[0].relaxed_objective, alone.stages[0].trace.rows()[0].relaxed_objective);
}

#[test]
fn failures_report_the_stage_and_completed_work() {
    let mut r = rng(167);
    let mu = random_symmetric(&mut r, 3, 0.0, 1.0);
    let crf = random_crf(&mut r, 10, 3, LabelCompatibility::Matrix(mu));
    let err = run_pipeline(&crf, &spec("qp,lp")).unwrap_err();
    assert_eq!(err.stage, Stage::Lp);
    assert_eq!(err.completed.len(), 1);
}

#[test]
fn runs_are_bit_identical() {
    let inst = synthetic(256, 3, 9).unwrap();
    let again = synthetic(256, 3, 9).unwrap();
    assert_eq!(inst.image, again.image);
    assert_eq!(inst.problem.unary(), again.problem.unary());
    assert_ne!(synthetic(256, 3, 10).unwrap().image, inst.image);
    for backend in [Backend::Exact, Backend::Lattice] {
        let run = || {
            let crf = DenseCrf::new(inst.problem.clone(), backend).unwrap();
            run_pipeline(&crf, &spec("qp,dcneg,lp")).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.y, b.y);
        for (sa, sb) in a.stages.iter().zip(&b.stages) {
            assert_eq!(sa.trace.objectives(), sb.trace.objectives());
            assert_eq!(sa.integer_energy.to_bits(), sb.integer_energy.to_bits());
        }
    }
}
