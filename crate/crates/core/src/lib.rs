//! Generalized Tikhonov-Phillips regularization on pixel grids.
//!
//! The crate minimizes functionals of the form
//!
//! ```text
//! J(x) = ‖T x − y‖² + α · W(x)
//! ```
//!
//! where `T` is a matrix-free linear operator (blur, gradient, structural
//! anisotropic gradient, identity, or a dense matrix) and `W` is a convex
//! penalizer (squared norms, seminorm powers, weighted sums, smoothed total
//! variation, BV norm).
//!
//! Module map:
//!
//! * [`grid`] and [`pgm`]: grid-valued data, inner products, graymap I/O.
//! * [`operators`]: linear operators with adjoints and dense assembly.
//! * [`penalizer`]: penalizer values, gradients and line models.
//! * [`solver`]: conjugate gradients on the normal equations, gradient
//!   descent with Armijo backtracking, and a dense direct oracle.
//! * [`stability`]: perturbation experiments and the quantitative
//!   stability bounds for quadratic penalizers.
//! * [`lcurve`]: parameter sweeps and Menger-curvature corner selection.
//! * [`pipeline`]: phantoms, noise, restoration metrics and the end-to-end
//!   deblurring run used by the command-line tool.

pub mod config;
pub mod error;
pub mod grid;
pub mod lcurve;
pub mod operators;
pub mod penalizer;
pub mod pgm;
pub mod pipeline;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
pub use grid::{inner_product, norm_l2, norm_linf, GridFunction, Shape};
pub use lcurve::{corner, sweep, LCurve};
pub use operators::{OperatorHandle, OperatorKind, StructuralField, DEFAULT_DENSE_CAP};
pub use penalizer::{Penalizer, PenalizerContext, PenalizerKind, PenaltyTerm};
pub use pgm::{read_pgm, write_pgm};
pub use pipeline::{
    add_noise, compute_metrics, make_phantom, run_pipeline, PipelineConfig, PipelineOutcome,
    RestorationMetrics,
};
pub use solver::{
    limit_to_best_approximate, objective, LimitEntry, solve, solve_dense_oracle, solve_general,
    solve_quadratic, Problem, SolveReport, SolverOptions,
};
pub use stability::{
    check_identity_n3, check_operator_bounds_q2_q3, estimate_complementation_constant,
    probe_uniqueness, run_stability_experiment, PerturbationSchedule, StabilityReport,
};
