//! Self-contained small-scale convex solvers. Everything here is dense and
//! sized for tens of unknowns; no sparsity, no warm starts.

pub mod lp;
pub mod qcqp;
pub mod sdp;

pub use lp::{solve_lp, LpProblem, LpSolution};
pub use qcqp::{solve_qcqp, QcqpProblem, QcqpSolution, Quadratic};
pub use sdp::{solve_sdp_feasibility, MatrixBlock, SdpFeasibility, SdpOutcome};
