//! Forward pass: SQP with a parallel-candidate merit line search.
//!
//! The QP model is kept in absolute coordinates: for a linearization point
//! `z̄` the linear cost terms are `q_t = ∇c_t(x̄_t) − Q_t x̄_t` (see
//! [`crate::problem::linearize`]), so the QP solution recovered from the Schur
//! multipliers is directly the next candidate trajectory.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::pcg::{pcg_solve, PcgConfig};
use crate::problem::{linearize, Ocp, ParameterVector, QpData, Trajectory, DEFAULT_EPS_PD};
use crate::schur::{assemble_schur, SchurSystem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqpConfig {
    pub max_sqp_iters: usize,
    /// Strictly decreasing step sizes in `(0, 1]`.
    pub step_candidates: Vec<f64>,
    pub eta_armijo: f64,
    pub rho_penalty: f64,
    pub pcg: PcgConfig,
    /// Stop once `‖z_new − z‖∞` is at most this.
    pub convergence_tol: f64,
    pub mu_floor_denominator: f64,
    pub eps_pd: f64,
}

impl Default for SqpConfig {
    fn default() -> Self {
        SqpConfig {
            max_sqp_iters: 20,
            step_candidates: vec![1.0, 0.7, 0.3, 0.1, 0.01],
            eta_armijo: 0.4,
            rho_penalty: 0.5,
            pcg: PcgConfig::default(),
            convergence_tol: 1e-8,
            mu_floor_denominator: 1e-12,
            eps_pd: DEFAULT_EPS_PD,
        }
    }
}

impl SqpConfig {
    /// A fixed number of full steps without line search.
    pub fn fixed_iterations(iters: usize) -> Self {
        SqpConfig {
            max_sqp_iters: iters,
            step_candidates: vec![1.0],
            convergence_tol: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.max_sqp_iters == 0 {
            return bad("max_sqp_iters must be ≥ 1".into());
        }
        if self.step_candidates.is_empty() {
            return bad("empty step candidate list".into());
        }
        if self.step_candidates.iter().any(|&a| !(a > 0.0 && a <= 1.0))
            || self.step_candidates.windows(2).any(|w| w[1] >= w[0])
        {
            return bad(format!(
                "step candidates must be strictly decreasing in (0, 1]: {:?}",
                self.step_candidates
            ));
        }
        if !(self.eta_armijo > 0.0 && self.eta_armijo < 1.0) {
            return bad(format!(
                "eta_armijo must lie in (0, 1), got {}",
                self.eta_armijo
            ));
        }
        if !(self.rho_penalty >= 0.0 && self.rho_penalty < 1.0) {
            return bad(format!(
                "rho_penalty must lie in [0, 1), got {}",
                self.rho_penalty
            ));
        }
        self.pcg.validate()
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub alpha: f64,
    pub step_norm: f64,
    pub pcg_iters: usize,
    pub pcg_converged: bool,
    pub mu: f64,
    pub merit_before: f64,
    pub merit_after: f64,
    /// Whether some candidate satisfied the decrease condition.
    pub sufficient_decrease: bool,
    /// `‖F(z, λ)‖∞` after the iteration.
    pub kkt_inf_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z: Trajectory,
    pub lambda: DVector<f64>,
    /// Linearization at `z`.
    pub qp: QpData,
    /// Schur system assembled from `qp`.
    pub schur: SchurSystem,
    pub sqp_iters: usize,
    pub kkt_inf_norm: f64,
    pub converged: bool,
    /// `‖F(z_0, λ_0)‖∞` at the initial guess.
    pub initial_kkt_inf_norm: f64,
    pub history: Vec<IterationLog>,
}

impl SolveResult {
    pub fn pcg_iters(&self) -> usize {
        self.history.iter().map(|h| h.pcg_iters).sum()
    }
}

/// Primal recovery `x_t = −Q_t⁻¹(b_{x_t} + A_{t−1}⁺ᵀλ_t + A_tᵀλ_{t+1})`,
/// `u_t = −R_t⁻¹(b_{u_t} + B_tᵀλ_{t+1})`, with `A_{−1}⁺ = I` and no
/// `λ_{T+1}` term for the terminal state.
pub fn recover_primal(
    qp: &QpData,
    schur: &SchurSystem,
    lambda: &DVector<f64>,
    rhs_b: &DVector<f64>,
) -> Result<Trajectory> {
    let (n_x, n_u, horizon) = (qp.n_x(), qp.n_u(), qp.horizon());
    check_len("multipliers", qp.n_lambda(), lambda.len())?;
    check_len("cost vector b", qp.n_z(), rhs_b.len())?;
    let lam = |k: usize| lambda.rows(k * n_x, n_x);
    let stride = n_x + n_u;
    let x: Vec<DVector<f64>> = (0..=horizon)
        .into_par_iter()
        .map(|t| {
            let mut v = rhs_b.rows(t * stride, n_x).into_owned();
            if t == 0 {
                v += lam(0);
            } else {
                v.gemv_tr(1.0, &qp.a_plus[t - 1], &lam(t), 1.0);
            }
            if t < horizon {
                v.gemv_tr(1.0, &qp.a[t], &lam(t + 1), 1.0);
            }
            -schur.solve_q(t, &v)
        })
        .collect();
    let u: Vec<DVector<f64>> = (0..horizon)
        .into_par_iter()
        .map(|t| {
            let mut v = rhs_b.rows(t * stride + n_x, n_u).into_owned();
            v.gemv_tr(1.0, &qp.b[t], &lam(t + 1), 1.0);
            -schur.solve_r(t, &v)
        })
        .collect();
    Ok(Trajectory { x, u })
}

/// Total cost and 1-norm of all equality residuals (initial condition
/// included), with per-stage terms summed in stage order.
pub fn cost_and_violation(
    ocp: &dyn Ocp,
    z: &Trajectory,
    theta: &DVector<f64>,
) -> Result<(f64, f64)> {
    let horizon = ocp.horizon();
    let parts: Vec<(f64, f64)> = (0..=horizon)
        .into_par_iter()
        .map(|t| {
            let mut cost = ocp.state_cost_value(t, &z.x[t], theta);
            let mut viol = 0.0;
            if t < horizon {
                cost += ocp.control_cost_value(t, &z.u[t], theta);
                viol = ocp
                    .dynamics_residual(t, &z.x[t + 1], &z.x[t], &z.u[t], theta)
                    .lp_norm(1);
            }
            (cost, viol)
        })
        .collect();
    let mut cost = 0.0;
    let mut viol = (&z.x[0] - ocp.initial_state(theta)).lp_norm(1);
    for (c, v) in parts {
        cost += c;
        viol += v;
    }
    if !cost.is_finite() || !viol.is_finite() {
        return Err(Error::Evaluation {
            callback: "merit",
            stage: 0,
        });
    }
    Ok((cost, viol))
}

/// Merit `φ(z) = Σ c_t + μ ‖g(z)‖₁`.
pub fn merit(ocp: &dyn Ocp, z: &Trajectory, mu: f64, theta: &ParameterVector) -> Result<f64> {
    z.check_dims(ocp)?;
    let (cost, viol) = cost_and_violation(ocp, z, &theta.to_dvector())?;
    Ok(cost + mu * viol)
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome {
    pub z: Trajectory,
    pub alpha: f64,
    pub mu: f64,
    /// `Δφ_α` for every candidate, in candidate order.
    pub decrease: Vec<f64>,
    pub merit_before: f64,
    pub merit_after: f64,
    pub accepted: bool,
}

/// Selects the largest candidate step with `Δφ_α < 0`, or the smallest
/// candidate when none qualifies.
///
/// The penalty is `μ = ∇cᵀΔz / ((1 − ρ)‖g(z)‖₁)`, lower-bounded by
/// `‖λ_qp‖∞` so that the QP step is a descent direction of the exact penalty;
/// when the violation is below `mu_floor_denominator` the previous `μ` is kept
/// instead of the ratio. The cost gradient at `z_old` is read from `qp`, which
/// must be the linearization at `z_old`.
#[allow(clippy::too_many_arguments)]
pub fn line_search(
    ocp: &dyn Ocp,
    qp: &QpData,
    z_old: &Trajectory,
    z_qp: &Trajectory,
    lambda_qp: &DVector<f64>,
    theta: &ParameterVector,
    cfg: &SqpConfig,
    mu_prev: f64,
) -> Result<LineSearchOutcome> {
    z_old.check_dims(ocp)?;
    z_qp.check_dims(ocp)?;
    let th = theta.to_dvector();
    let (cost0, viol0) = cost_and_violation(ocp, z_old, &th)?;

    // ∇c(z_old)ᵀ Δz, with ∇c = q + Q z̄ in absolute coordinates.
    let mut slope = 0.0;
    for t in 0..=qp.horizon() {
        let grad = &qp.q_vec[t] + &qp.q_mat[t] * &z_old.x[t];
        slope += grad.dot(&(&z_qp.x[t] - &z_old.x[t]));
    }
    for t in 0..qp.horizon() {
        let grad = &qp.r_vec[t] + &qp.r_mat[t] * &z_old.u[t];
        slope += grad.dot(&(&z_qp.u[t] - &z_old.u[t]));
    }

    let denom = (1.0 - cfg.rho_penalty) * viol0;
    let ratio = if denom < cfg.mu_floor_denominator {
        mu_prev
    } else {
        slope / denom
    };
    let mu = ratio.max(lambda_qp.amax());
    let descent = slope - mu * viol0;
    let merit0 = cost0 + mu * viol0;

    let candidates: Vec<(Trajectory, f64)> = cfg
        .step_candidates
        .par_iter()
        .map(|&alpha| -> Result<(Trajectory, f64)> {
            let z = z_old.interpolate(z_qp, alpha);
            let (c, v) = cost_and_violation(ocp, &z, &th)?;
            let delta = c + mu * v - merit0 - cfg.eta_armijo * alpha * descent;
            Ok((z, delta))
        })
        .collect::<Result<Vec<_>>>()?;

    let decrease: Vec<f64> = candidates.iter().map(|(_, d)| *d).collect();
    let chosen = decrease.iter().position(|&d| d < 0.0);
    let idx = chosen.unwrap_or(cfg.step_candidates.len() - 1);
    let alpha = cfg.step_candidates[idx];
    let merit_after = merit0 + decrease[idx] + cfg.eta_armijo * alpha * descent;
    let z = candidates.into_iter().nth(idx).unwrap().0;
    Ok(LineSearchOutcome {
        z,
        alpha,
        mu,
        decrease,
        merit_before: merit0,
        merit_after,
        accepted: chosen.is_some(),
    })
}

/// `‖F(z, λ)‖∞` computed from the linearization at `z`: the cost gradient is
/// `q + Q z` and the constraint residual is `H z − d`.
pub fn qp_kkt_inf_norm(qp: &QpData, z: &Trajectory, lambda: &DVector<f64>) -> f64 {
    let n_x = qp.n_x();
    let horizon = qp.horizon();
    let lam = |k: usize| lambda.rows(k * n_x, n_x);
    let mut worst: f64 = (&z.x[0] - &qp.x_s).amax();
    for t in 0..=horizon {
        let mut g = &qp.q_vec[t] + &qp.q_mat[t] * &z.x[t];
        if t == 0 {
            g += lam(0);
        } else {
            g.gemv_tr(1.0, &qp.a_plus[t - 1], &lam(t), 1.0);
        }
        if t < horizon {
            g.gemv_tr(1.0, &qp.a[t], &lam(t + 1), 1.0);
            let mut gu = &qp.r_vec[t] + &qp.r_mat[t] * &z.u[t];
            gu.gemv_tr(1.0, &qp.b[t], &lam(t + 1), 1.0);
            let f =
                &qp.a_plus[t] * &z.x[t + 1] + &qp.a[t] * &z.x[t] + &qp.b[t] * &z.u[t] - &qp.c[t];
            worst = worst.max(gu.amax()).max(f.amax());
        }
        worst = worst.max(g.amax());
    }
    worst
}

/// Solves the problem from the initial guess `(z0, λ0)`.
///
/// Each iteration linearizes, assembles the Schur system, runs PCG warm-started
/// from the current multipliers, recovers the QP primal and line-searches
/// towards it. The returned `qp`/`schur` are re-evaluated at the returned `z`.
pub fn sqp_solve(
    ocp: &dyn Ocp,
    theta: &ParameterVector,
    z0: &Trajectory,
    lambda0: &DVector<f64>,
    cfg: &SqpConfig,
) -> Result<SolveResult> {
    cfg.validate()?;
    z0.check_dims(ocp)?;
    check_len("initial multipliers", ocp.n_lambda(), lambda0.len())?;
    if !z0.is_finite() || lambda0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite initial guess".into()));
    }

    let mut z = z0.clone();
    let mut lambda = lambda0.clone();
    let mut mu = 1.0;
    let mut qp = linearize(ocp, &z, theta, cfg.eps_pd)?;
    let initial_kkt = qp_kkt_inf_norm(&qp, &z, &lambda);
    let mut history = Vec::with_capacity(cfg.max_sqp_iters);
    let mut converged = false;

    for iteration in 0..cfg.max_sqp_iters {
        let schur = assemble_schur(&qp)?;
        let b = qp.cost_gradient();
        let d = qp.constraint_rhs();
        let gamma = schur.assemble_gamma(&qp, &b, &d)?;
        let pcg = pcg_solve(&schur, &gamma, &lambda, &cfg.pcg)?;
        let z_qp = recover_primal(&qp, &schur, &pcg.lambda, &b)?;
        if !z_qp.is_finite() {
            return Err(Error::Divergence {
                iteration,
                last_finite: z.flatten().as_slice().to_vec(),
            });
        }

        let (z_new, alpha, merit_before, merit_after, accepted) = if cfg.step_candidates.len() == 1
        {
            (z_qp, cfg.step_candidates[0], f64::NAN, f64::NAN, true)
        } else {
            let ls = line_search(ocp, &qp, &z, &z_qp, &pcg.lambda, theta, cfg, mu)?;
            mu = ls.mu;
            (ls.z, ls.alpha, ls.merit_before, ls.merit_after, ls.accepted)
        };
        let step_norm = z_new.max_abs_diff(&z);
        z = z_new;
        lambda = pcg.lambda;
        qp = linearize(ocp, &z, theta, cfg.eps_pd).map_err(|e| match e {
            Error::Evaluation { .. } => Error::Divergence {
                iteration,
                last_finite: z.flatten().as_slice().to_vec(),
            },
            other => other,
        })?;
        history.push(IterationLog {
            alpha,
            step_norm,
            pcg_iters: pcg.iters,
            pcg_converged: pcg.converged,
            mu,
            merit_before,
            merit_after,
            sufficient_decrease: accepted,
            kkt_inf_norm: qp_kkt_inf_norm(&qp, &z, &lambda),
        });
        if step_norm <= cfg.convergence_tol {
            converged = true;
            break;
        }
    }

    let schur = assemble_schur(&qp)?;
    let kkt_inf_norm = qp_kkt_inf_norm(&qp, &z, &lambda);
    Ok(SolveResult {
        z,
        lambda,
        qp,
        schur,
        sqp_iters: history.len(),
        kkt_inf_norm,
        converged,
        initial_kkt_inf_norm: initial_kkt,
        history,
    })
}

/// First control `u_0` of the solved trajectory.
pub fn policy_first_control(result: &SolveResult) -> DVector<f64> {
    result.z.u[0].clone()
}
