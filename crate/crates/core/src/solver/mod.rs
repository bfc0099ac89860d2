//! Sequential quadratic programming for box-bounded, equality-constrained
//! NLPs.
//!
//! Each iteration linearizes the equalities, keeps the bounds, and solves the
//! resulting QP with a damped-BFGS Hessian of the Lagrangian. Steps are
//! globalized by backtracking on the ℓ1 merit function with a second-order
//! correction.

mod qp;
mod sqp;

pub use qp::{qp_subsolve, BoundState, QpProblem, QpSolution};
pub use sqp::{
    kkt_residual, solve, EvalError, IterationRecord, NlpProblem, SolverConfig, SolverResult, SolverStatus,
};
