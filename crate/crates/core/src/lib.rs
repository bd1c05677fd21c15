//! Differentiable model predictive control.
//!
//! The forward pass solves a discrete-time optimal control problem with
//! sequential quadratic programming. Each QP is reduced to a symmetric
//! positive-definite block-tridiagonal system in the multipliers (the negated
//! Schur complement of the KKT matrix), which is solved by warm-started
//! preconditioned conjugate gradient. Gradients of a loss on the solution
//! with respect to problem parameters are obtained by implicit differentiation
//! of the KKT conditions, reusing the same Schur machinery.

pub mod backward;
pub mod batch;
pub mod error;
pub mod models;
pub mod oracle;
pub mod pcg;
pub mod problem;
pub mod schur;
pub mod sqp;

pub use backward::{backward_vjp, fd_check, BackwardResult, FdReport};
pub use batch::{
    batch_solve, rollout, rollout_backward, rollout_backward_with, AffineEnv, Env, QuadraticReward,
    Reward, RolloutConfig, RolloutGradient, RolloutRecord, WarmStartCache, WarmStartSlot,
};
pub use error::{Error, Result};
pub use pcg::{pcg_solve, PcgConfig, PcgOutcome};
pub use problem::{
    kkt_residual, linearize, project_pd, CostEval, DynamicsEval, Ocp, ParameterVector, QpData,
    Segment, SegmentRole, Trajectory,
};
pub use schur::{assemble_schur, BlockTridiag, SchurSystem};
pub use sqp::{
    line_search, merit, policy_first_control, recover_primal, sqp_solve, IterationLog,
    LineSearchOutcome, SolveResult, SqpConfig,
};
