use nalgebra::{DMatrix, DVector};

use super::{diag_cost_theta_vjp, diag_quadratic, diag_quadratic_value, skew};
use crate::problem::{CostEval, DynamicsEval, Ocp, ParameterVector, SegmentRole, Trajectory};

/// Rigid-body attitude-rate stabilization: `J ω̇ = (Jω) × ω + τ` with diagonal
/// inertia `J`, discretized by forward Euler.
///
/// θ = (diag Q (3), diag R (3), x_s (3)) with costs `½ ωᵀ diag(Q) ω` and
/// `½ τᵀ diag(R) τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attitude {
    pub inertia: [f64; 3],
    pub dt: f64,
    horizon: usize,
}

const NX: usize = 3;

impl Attitude {
    pub fn new(inertia: [f64; 3], dt: f64, horizon: usize) -> Self {
        assert!(horizon >= 1);
        assert!(inertia.iter().all(|&j| j > 0.0), "inertia must be positive");
        Attitude {
            inertia,
            dt,
            horizon,
        }
    }

    pub fn parameters(&self, q: &[f64; 3], r: &[f64; 3], x_s: &[f64; 3]) -> ParameterVector {
        ParameterVector::new()
            .with_segment("Q", SegmentRole::StateCost, q)
            .with_segment("R", SegmentRole::ControlCost, r)
            .with_segment("x_s", SegmentRole::InitialState, x_s)
    }

    fn j(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.inertia)
    }

    /// `ω̇ = J⁻¹((Jω) × ω + τ)`
    pub fn angular_acceleration(&self, w: &DVector<f64>, tau: &DVector<f64>) -> DVector<f64> {
        let jw = w.component_mul(&self.j());
        (jw.cross(w) + tau).component_div(&self.j())
    }

    pub fn step(&self, w: &DVector<f64>, tau: &DVector<f64>) -> DVector<f64> {
        w + self.angular_acceleration(w, tau) * self.dt
    }

    pub fn step_jacobians(&self, w: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let j = DMatrix::from_diagonal(&self.j());
        let j_inv = DMatrix::from_diagonal(&self.j().map(|v| 1.0 / v));
        // d/dω [(Jω) × ω] = [Jω]_× − [ω]_× J
        let cross = skew(&(&j * w)) - skew(w) * &j;
        let jx = DMatrix::identity(NX, NX) + &j_inv * cross * self.dt;
        let ju = j_inv * self.dt;
        (jx, ju)
    }
}

impl Ocp for Attitude {
    fn n_x(&self) -> usize {
        NX
    }

    fn n_u(&self) -> usize {
        NX
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn state_cost(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> CostEval {
        diag_quadratic(1.0, &theta.as_slice()[0..3], x)
    }

    fn control_cost(&self, _t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> CostEval {
        diag_quadratic(1.0, &theta.as_slice()[3..6], u)
    }

    fn state_cost_value(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        diag_quadratic_value(1.0, &theta.as_slice()[0..3], x)
    }

    fn control_cost_value(&self, _t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        diag_quadratic_value(1.0, &theta.as_slice()[3..6], u)
    }

    fn dynamics(
        &self,
        _t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DynamicsEval {
        let (jx, ju) = self.step_jacobians(x);
        DynamicsEval::explicit(x_next, self.step(x, u), jx, ju)
    }

    fn dynamics_residual(
        &self,
        _t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        x_next - self.step(x, u)
    }

    fn initial_state(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta.rows(6, NX).into_owned()
    }

    fn theta_vjp(
        &self,
        z: &Trajectory,
        _lambda: &DVector<f64>,
        z_tilde: &Trajectory,
        lambda_tilde: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        diag_cost_theta_vjp(9, 1.0, 0..3, 3..6, 6..9, z, z_tilde, lambda_tilde)
    }
}
