//! Concrete problem families.

mod affine;
mod attitude;
mod cartpole;
mod linear_quadratic;

pub use affine::{AffineQuadratic, ProblemFile, PROBLEM_FORMAT};
pub use attitude::Attitude;
pub use cartpole::{CartPole, CartPoleParams};
pub use linear_quadratic::LinearQuadratic;

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::problem::{accumulate_diag_weight_vjp, CostEval, Trajectory};

/// `½ κ Σ_i w_i v_i²`
pub(crate) fn diag_quadratic(scale: f64, weights: &[f64], v: &DVector<f64>) -> CostEval {
    let w = DVector::from_column_slice(weights);
    let gradient = v.component_mul(&w) * scale;
    CostEval {
        value: 0.5 * gradient.dot(v),
        gradient,
        hessian: DMatrix::from_diagonal(&(w * scale)),
    }
}

pub(crate) fn diag_quadratic_value(scale: f64, weights: &[f64], v: &DVector<f64>) -> f64 {
    0.5 * scale
        * weights
            .iter()
            .zip(v.iter())
            .map(|(w, x)| w * x * x)
            .sum::<f64>()
}

/// `−∂F/∂θᵀ[z̃; λ̃]` for diagonal quadratic costs, θ-free dynamics and an
/// initial state taken from θ.
#[allow(clippy::too_many_arguments)]
pub(crate) fn diag_cost_theta_vjp(
    dim: usize,
    scale: f64,
    state_weights: Range<usize>,
    control_weights: Range<usize>,
    initial_state: Range<usize>,
    z: &Trajectory,
    z_tilde: &Trajectory,
    lambda_tilde: &DVector<f64>,
) -> DVector<f64> {
    let mut out = vec![0.0; dim];
    for (x, xt) in z.x.iter().zip(&z_tilde.x) {
        accumulate_diag_weight_vjp(&mut out[state_weights.clone()], scale, x, xt);
    }
    for (u, ut) in z.u.iter().zip(&z_tilde.u) {
        accumulate_diag_weight_vjp(&mut out[control_weights.clone()], scale, u, ut);
    }
    // g_0 = x_0 − x_s, so ∂F/∂x_s contributes −λ̃_0 and the VJP +λ̃_0.
    for (k, i) in initial_state.enumerate() {
        out[i] += lambda_tilde[k];
    }
    DVector::from_vec(out)
}

/// Cross-product matrix `[a]_×` with `[a]_× b = a × b`.
pub(crate) fn skew(a: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(
        3,
        3,
        &[0.0, -a[2], a[1], a[2], 0.0, -a[0], -a[1], a[0], 0.0],
    )
}
