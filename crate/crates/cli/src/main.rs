use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use crfrelax::synth::synthetic;
use crfrelax::{
    ip_energy, kt_round, round_argmax, Backend, DenseCrf, FeatureParams, LabelCompatibility, PipelineSpec, RHSTree,
    StageOptions,
};
use crfrelax_cli::{load_problem, save_pgm, save_trace, summary, CliError, Result};

/// Dense CRF MAP inference with warm-started relaxation pipelines.
#[derive(Debug, Parser)]
#[command(name = "crfrelax", version)]
struct Args {
    /// Unary cost file.
    #[arg(long, required_unless_present = "synthetic", requires = "image")]
    unary: Option<PathBuf>,
    /// RGB image the pairwise kernels are built from (png or pnm).
    #[arg(long)]
    image: Option<PathBuf>,
    /// Generate a random instance instead of reading files.
    #[arg(long, num_args = 3, value_names = ["N", "M", "SEED"], conflicts_with_all = ["unary", "image"])]
    synthetic: Option<Vec<u64>>,
    /// Unary file is binary little-endian (u32 N, u32 M, f32 costs).
    #[arg(long)]
    binary_unary: bool,
    /// Stages to chain, e.g. `qp,dcneg,lp` or `mf5`.
    #[arg(long, visible_alias = "method", default_value = "qp,dcneg,lp")]
    pipeline: String,
    #[arg(long, default_value = "lattice")]
    filter: Backend,
    /// Iteration cap of mean field, Frank-Wolfe and the CCCP outer loop.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Stopping tolerance of mean field, Frank-Wolfe and CCCP.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    lp_beta0: Option<f64>,
    #[arg(long)]
    lp_iters: Option<usize>,
    /// Round the final solution with randomized metric-labeling rounding
    /// under this seed instead of argmax.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the per-iteration trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the label map as PGM here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// r-HST label tree; replaces the Potts compatibility.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Run the LP only over labels used by its warm start.
    #[arg(long)]
    restrict_labels: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value_t = FeatureParams::default().w1)]
    w1: f64,
    #[arg(long, default_value_t = FeatureParams::default().sigma1)]
    sigma1: f64,
    #[arg(long, default_value_t = FeatureParams::default().w2)]
    w2: f64,
    #[arg(long, default_value_t = FeatureParams::default().sigma_spc)]
    sigma_spc: f64,
    #[arg(long, default_value_t = FeatureParams::default().sigma_col)]
    sigma_col: f64,
}

impl Args {
    fn stage_options(&self) -> StageOptions {
        let mut o = StageOptions::default();
        if let Some(k) = self.max_iter {
            o.mf.max_iters = k;
            o.fw.max_iters = k;
            o.cccp.outer_iters = k;
        }
        if let Some(t) = self.tol {
            o.mf.tol = t;
            o.fw.gap_tol = t;
            o.cccp.tol = t;
        }
        if let Some(b) = self.lp_beta0 {
            o.lp.beta0 = b;
        }
        if let Some(k) = self.lp_iters {
            o.lp.max_iters = k;
        }
        let traced = self.trace.is_some();
        o.mf.trace_integer = traced;
        o.fw.trace_integer = traced;
        o.cccp.trace_integer = traced;
        o.lp.trace_integer = traced;
        o.restrict_labels = self.restrict_labels;
        o
    }

    fn compat(&self) -> Result<LabelCompatibility> {
        let Some(path) = &self.tree else { return Ok(LabelCompatibility::Potts) };
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
        let tree = RHSTree::parse(&text)
            .map_err(|e| CliError::Parse { path: path.clone(), line: 0, message: e.to_string() })?;
        Ok(LabelCompatibility::Tree(tree))
    }

    fn features(&self) -> FeatureParams {
        FeatureParams { w1: self.w1, sigma1: self.sigma1, w2: self.w2, sigma_spc: self.sigma_spc, sigma_col: self.sigma_col }
    }
}

fn run(args: &Args) -> Result<()> {
    if let Some(t) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Input(format!("--threads: {e}")))?;
    }
    let spec = PipelineSpec::parse(&args.pipeline, args.stage_options())
        .map_err(|e| CliError::Input(format!("--pipeline: {e}")))?;
    let compat = args.compat()?;
    let (problem, width, height) = match (&args.synthetic, &args.unary, &args.image) {
        (Some(s), _, _) => {
            let inst = synthetic(s[0] as usize, s[1] as usize, s[2]).map_err(|e| CliError::Input(e.to_string()))?;
            let (h, w) = (inst.image.height(), inst.image.width());
            (inst.problem.with_compat(compat)?, w, h)
        }
        (None, Some(u), Some(i)) => {
            let (p, img) = load_problem(u, i, &args.features(), compat, args.binary_unary)?;
            (p, img.width(), img.height())
        }
        _ => unreachable!("clap enforces --unary with --image, or --synthetic"),
    };
    let crf = DenseCrf::new(problem, args.filter)?;
    let outcome = crfrelax::run_pipeline(&crf, &spec);
    let stages = match &outcome {
        Ok(r) => &r.stages,
        Err(f) => &f.completed,
    };
    if let Some(path) = &args.trace {
        save_trace(path, stages)?;
    }
    let result = outcome.map_err(|f| {
        eprint!("{}", summary(&f.completed));
        CliError::Stage { stage: f.stage.name(), source: f.error }
    })?;
    print!("{}", summary(&result.stages));
    let labels = match args.seed {
        Some(seed) => {
            let l = kt_round(&result.y, seed);
            println!("rounded (seed {seed}) energy {:.6e}", ip_energy(&crf, &l)?);
            l
        }
        None => round_argmax(&result.y),
    };
    if let Some(path) = &args.out {
        save_pgm(path, &labels, crf.n_labels(), width, height)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
