//! Backward pass: implicit differentiation of the KKT conditions at a solution.
//!
//! The adjoint system has the same matrix as the forward QP, so it is solved
//! with the stored Schur factorization and one warm-startable PCG call, with
//! `b = −∂ℓ/∂z` and `d = 0`. No problem callback other than
//! [`Ocp::theta_vjp`] is evaluated.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{check_len, Result};
use crate::pcg::{pcg_solve, PcgConfig};
use crate::problem::{Ocp, ParameterVector, Trajectory};
use crate::sqp::{recover_primal, sqp_solve, SolveResult, SqpConfig};

#[derive(Debug, Clone)]
pub struct BackwardResult {
    /// `dℓ/dθ`
    pub grad_theta: DVector<f64>,
    pub z_tilde: Trajectory,
    pub lambda_tilde: DVector<f64>,
    pub pcg_iters: usize,
    pub pcg_converged: bool,
}

/// Vector-Jacobian product of the solution map `θ ↦ z*(θ)` with the
/// cotangent `dl_dz` (interleaved layout).
///
/// `lambda_tilde0` warm-starts the adjoint PCG; `None` starts from zero.
pub fn backward_vjp(
    ocp: &dyn Ocp,
    solution: &SolveResult,
    theta: &ParameterVector,
    dl_dz: &DVector<f64>,
    lambda_tilde0: Option<&DVector<f64>>,
    pcg: &PcgConfig,
) -> Result<BackwardResult> {
    let qp = &solution.qp;
    check_len("loss cotangent", qp.n_z(), dl_dz.len())?;
    let b = -dl_dz;
    let d = DVector::zeros(qp.n_lambda());
    let gamma = solution.schur.assemble_gamma(qp, &b, &d)?;
    let start = match lambda_tilde0 {
        Some(l) => {
            check_len("adjoint warm start", qp.n_lambda(), l.len())?;
            l.clone()
        }
        None => DVector::zeros(qp.n_lambda()),
    };
    let out = pcg_solve(&solution.schur, &gamma, &start, pcg)?;
    let z_tilde = recover_primal(qp, &solution.schur, &out.lambda, &b)?;
    let grad_theta = ocp.theta_vjp(
        &solution.z,
        &solution.lambda,
        &z_tilde,
        &out.lambda,
        &theta.to_dvector(),
    );
    check_len("theta_vjp output", theta.len(), grad_theta.len())?;
    Ok(BackwardResult {
        grad_theta,
        z_tilde,
        lambda_tilde: out.lambda,
        pcg_iters: out.iters,
        pcg_converged: out.converged,
    })
}

/// Analytic against central-difference gradient of `ℓ(z*(θ))`.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub analytic: DVector<f64>,
    pub numeric: DVector<f64>,
    pub max_abs_err: f64,
    /// `max_i |a_i − n_i| / max(|n_i|, 1e-8)`
    pub max_rel_err: f64,
}

/// Compares [`backward_vjp`] with central differences of step `h`.
///
/// `loss` returns the loss value and its gradient in `z` (interleaved).
/// Nominal and perturbed problems all start from `(z0, λ0)` and are solved
/// with `cfg`; the adjoint uses `cfg.pcg`.
///
/// Starting the perturbed solves at the nominal solution would make their
/// steps `O(h)` and their merit decrease `O(h²)`, which is below the level the
/// line search can resolve against the PCG residual.
pub fn fd_check<L>(
    ocp: &dyn Ocp,
    theta: &ParameterVector,
    z0: &Trajectory,
    lambda0: &DVector<f64>,
    cfg: &SqpConfig,
    loss: L,
    h: f64,
) -> Result<FdReport>
where
    L: Fn(&Trajectory) -> (f64, DVector<f64>) + Sync,
{
    let nominal = sqp_solve(ocp, theta, z0, lambda0, cfg)?;
    let (_, dl_dz) = loss(&nominal.z);
    let analytic = backward_vjp(ocp, &nominal, theta, &dl_dz, None, &cfg.pcg)?.grad_theta;

    let numeric: Vec<f64> = (0..theta.len())
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let eval = |sign: f64| -> Result<f64> {
                let mut th = theta.clone();
                th.set(i, theta.values()[i] + sign * h);
                let sol = sqp_solve(ocp, &th, z0, lambda0, cfg)?;
                Ok(loss(&sol.z).0)
            };
            Ok((eval(1.0)? - eval(-1.0)?) / (2.0 * h))
        })
        .collect::<Result<Vec<_>>>()?;
    let numeric = DVector::from_vec(numeric);
    let diff = &analytic - &numeric;
    let max_abs_err = diff.amax();
    let max_rel_err = diff
        .iter()
        .zip(numeric.iter())
        .map(|(d, n)| d.abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max);
    Ok(FdReport {
        analytic,
        numeric,
        max_abs_err,
        max_rel_err,
    })
}
