//! Warm-startable preconditioned conjugate gradient on the stored Schur system.

use std::cell::Cell;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::schur::SchurSystem;

/// Exit tolerance on `η = rᵀ Φ⁻¹ r` and iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcgConfig {
    pub epsilon: f64,
    /// `None` means `2 · dim`.
    pub max_iters: Option<usize>,
}

impl Default for PcgConfig {
    fn default() -> Self {
        PcgConfig {
            epsilon: 1e-12,
            max_iters: None,
        }
    }
}

impl PcgConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        PcgConfig {
            epsilon,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "PCG tolerance must be non-negative, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == Some(0) {
            return Err(Error::InvalidParameter("PCG max_iters must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgOutcome {
    pub lambda: DVector<f64>,
    pub iters: usize,
    pub final_eta: f64,
    pub converged: bool,
    /// `η` before the first iteration and after each one.
    pub eta_history: Vec<f64>,
}

thread_local! {
    static SOLVES: Cell<u64> = const { Cell::new(0) };
}

/// Number of [`pcg_solve`] calls made on the current thread.
pub fn solves_on_this_thread() -> u64 {
    SOLVES.with(|c| c.get())
}

/// Sequential dot product; the fixed summation order keeps results
/// independent of thread scheduling.
fn dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// Solves `(−S) λ = −γ` with `Φ⁻¹` as preconditioner, starting from `lambda0`.
///
/// `gamma` is the stored right-hand side as returned by
/// [`SchurSystem::assemble_gamma`]. Hitting the iteration cap is not an error:
/// the outcome reports `converged = false`.
pub fn pcg_solve(
    system: &SchurSystem,
    gamma: &DVector<f64>,
    lambda0: &DVector<f64>,
    cfg: &PcgConfig,
) -> Result<PcgOutcome> {
    SOLVES.with(|c| c.set(c.get() + 1));
    cfg.validate()?;
    let dim = system.dim();
    check_len("PCG right-hand side", dim, gamma.len())?;
    check_len("PCG initial guess", dim, lambda0.len())?;
    let max_iters = cfg.max_iters.unwrap_or(2 * dim);

    let mut lambda = lambda0.clone();
    let mut r = gamma - system.s.matvec(&lambda)?;
    let mut r_tilde = system.precond.matvec(&r)?;
    let mut p = r_tilde.clone();
    let mut eta = dot(&r, &r_tilde);
    let mut eta_history = vec![eta];
    let mut iters = 0;
    while eta > cfg.epsilon && iters < max_iters {
        let y = system.s.matvec(&p)?;
        let v = dot(&p, &y);
        if v.is_nan() || v <= 0.0 {
            return Err(Error::PcgBreakdown {
                iteration: iters,
                curvature: v,
            });
        }
        let alpha = eta / v;
        lambda.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &y, 1.0);
        r_tilde = system.precond.matvec(&r)?;
        let eta_next = dot(&r, &r_tilde);
        let beta = eta_next / eta;
        p = &r_tilde + &p * beta;
        eta = eta_next;
        eta_history.push(eta);
        iters += 1;
    }
    Ok(PcgOutcome {
        lambda,
        iters,
        final_eta: eta,
        converged: eta <= cfg.epsilon,
        eta_history,
    })
}
