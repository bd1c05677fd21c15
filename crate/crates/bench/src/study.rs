//! Warm- versus cold-started PCG on sequences of slowly perturbed problems.
//!
//! Each instance's parameters are perturbed by at most 1% per entry, `len`
//! times. Every problem of the sequence is solved twice, once with PCG
//! starting from zero and once from the previous problem's multipliers, and
//! the same is done for the adjoint of `½‖z‖²`. Iteration counts are compared
//! per pass.

use dmpc_core::{backward_vjp, sqp_solve, ParameterVector, PcgConfig, SqpConfig, Trajectory};
use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generators::seeded;
use crate::training::RlProblem;
use crate::BenchError;

/// Largest relative change applied to any parameter entry.
pub const PERTURBATION: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveComparison {
    pub tol: f64,
    pub pass: String,
    pub instance: usize,
    pub step: usize,
    pub cold_iters: usize,
    pub warm_iters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub tol: f64,
    pub pass: String,
    pub solves: usize,
    pub mean_cold_iters: f64,
    pub mean_warm_iters: f64,
    /// `(cold − warm) / cold` on total iteration counts.
    pub speedup: f64,
    /// Share of solves with `warm ≤ cold`.
    pub warm_le_cold: f64,
}

/// `len + 1` parameter vectors: the base and `len` perturbations of it.
fn perturbed_sequence(
    base: &ParameterVector,
    len: usize,
    seed: u64,
    stream: u64,
) -> Vec<ParameterVector> {
    let mut rng = seeded(seed);
    rng.set_stream(stream);
    let mut out = vec![base.clone()];
    for _ in 0..len {
        let mut th = base.clone();
        for i in 0..th.len() {
            let scale = 1.0 + PERTURBATION * rng.random_range(-1.0..=1.0);
            th.set(i, base.values()[i] * scale);
        }
        out.push(th);
    }
    out
}

fn compare_instance(
    idx: usize,
    p: &RlProblem,
    tol: f64,
    len: usize,
    seed: u64,
) -> Result<Vec<SolveComparison>, BenchError> {
    let ocp = p.ocp;
    let pcg = PcgConfig::with_epsilon(tol);
    let sqp = SqpConfig {
        pcg,
        ..SqpConfig::fixed_iterations(1)
    };
    let z_zero = Trajectory::zeros_for(ocp);
    let l_zero = DVector::zeros(ocp.n_lambda());
    let mut out = Vec::with_capacity(2 * len);
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    for (step, th) in perturbed_sequence(&p.theta, len, seed, idx as u64)
        .iter()
        .enumerate()
    {
        let cold = sqp_solve(ocp, th, &z_zero, &l_zero, &sqp)?;
        let dl_dz = cold.z.flatten();
        let cold_adj = backward_vjp(ocp, &cold, th, &dl_dz, None, &pcg)?;
        let next = match &prev {
            None => (cold.lambda.clone(), cold_adj.lambda_tilde.clone()),
            Some((lambda, lambda_tilde)) => {
                let warm = sqp_solve(ocp, th, &z_zero, lambda, &sqp)?;
                let warm_adj =
                    backward_vjp(ocp, &warm, th, &warm.z.flatten(), Some(lambda_tilde), &pcg)?;
                let row = |pass: &str, cold_iters, warm_iters| SolveComparison {
                    tol,
                    pass: pass.into(),
                    instance: idx,
                    step,
                    cold_iters,
                    warm_iters,
                };
                out.push(row("forward", cold.pcg_iters(), warm.pcg_iters()));
                out.push(row("backward", cold_adj.pcg_iters, warm_adj.pcg_iters));
                (warm.lambda, warm_adj.lambda_tilde)
            }
        };
        prev = Some(next);
    }
    Ok(out)
}

/// Per-solve comparisons for every tolerance, instance and sequence step.
/// Perturbations depend only on `seed` and the instance index.
pub fn pcg_study(
    problems: &[RlProblem],
    tolerances: &[f64],
    len: usize,
    seed: u64,
) -> Result<Vec<SolveComparison>, BenchError> {
    let mut rows = Vec::new();
    for &tol in tolerances {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(BenchError::Invalid(format!(
                "tolerance {tol} must be positive"
            )));
        }
        let per_instance = problems
            .par_iter()
            .enumerate()
            .map(|(i, p)| compare_instance(i, p, tol, len, seed))
            .collect::<Result<Vec<_>, _>>()?;
        rows.extend(per_instance.into_iter().flatten());
    }
    Ok(rows)
}

/// Aggregates comparisons by tolerance and pass, in first-seen order.
pub fn summarize(rows: &[SolveComparison]) -> Vec<StudySummary> {
    let mut keys: Vec<(f64, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(t, p)| *t == r.tol && *p == r.pass) {
            keys.push((r.tol, r.pass.clone()));
        }
    }
    keys.into_iter()
        .map(|(tol, pass)| {
            let sel: Vec<&SolveComparison> = rows
                .iter()
                .filter(|r| r.tol == tol && r.pass == pass)
                .collect();
            let n = sel.len();
            let cold: usize = sel.iter().map(|r| r.cold_iters).sum();
            let warm: usize = sel.iter().map(|r| r.warm_iters).sum();
            let le = sel.iter().filter(|r| r.warm_iters <= r.cold_iters).count();
            StudySummary {
                tol,
                pass,
                solves: n,
                mean_cold_iters: cold as f64 / n as f64,
                mean_warm_iters: warm as f64 / n as f64,
                speedup: if cold == 0 {
                    0.0
                } else {
                    (cold as f64 - warm as f64) / cold as f64
                },
                warm_le_cold: le as f64 / n as f64,
            }
        })
        .collect()
}
