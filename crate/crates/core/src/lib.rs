//! MAP inference for fully connected CRFs with Gaussian pairwise terms.
//!
//! The energy `E(x) = sum_a phi_a(x_a) + sum_{a != b} K_{a,b} mu(x_a, x_b)`
//! is minimized through continuous relaxations over the product of simplices:
//!
//! * [`qp`]: the convexified quadratic relaxation, solved by Frank-Wolfe.
//! * [`dc`]: the non-convex quadratic relaxation, solved by CCCP.
//! * [`lp`]: the LP relaxation, solved by projected subgradient descent.
//! * [`meanfield`]: the mean-field baseline.
//!
//! All `K`-products go through [`filter::GaussianFilter`], which is either
//! exact (`O(N^2)`) or a permutohedral-lattice approximation (`O(N)`).

pub mod crf;
pub mod dc;
pub mod energy;
pub mod error;
pub mod filter;
pub mod lp;
pub mod meanfield;
pub mod model;
pub mod pipeline;
pub mod qp;
pub mod synth;
pub mod trace;

pub use crf::DenseCrf;
pub use dc::{run_cccp_generic, run_cccp_negdef, solve_pixelwise_convex, CccpOptions, CccpResult, PixelOptions};
pub use energy::{cvx_objective, d_vector, ip_energy, lp_objective, qp_objective};
pub use error::{CrfError, Result};
pub use filter::{Backend, FilterOptions, GaussianFilter, TriangularSide};
pub use lp::{kt_round, lp_subgradient, project_rows_to_simplex, rhst_subgradient, run_lp, LPOptions, LpResult, RHSTree};
pub use meanfield::{mf_step, run_mf, MfOptions, MfResult};
pub use model::{
    build_features, canonicalize_compat, round_argmax, AssignmentMatrix, CanonicalCompat, FeatureParams, KernelSpec,
    LabelCompatibility, Labeling, ProblemInstance, RgbImage,
};
pub use pipeline::{run_pipeline, PipelineResult, PipelineSpec, Stage, StageOptions, StageReport};
pub use qp::{run_frank_wolfe, ConvexQp, FwOptions, FwResult};
pub use trace::{EnergyTrace, TraceRow};
