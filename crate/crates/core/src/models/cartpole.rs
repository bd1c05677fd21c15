use nalgebra::{DMatrix, DVector};

use super::{diag_cost_theta_vjp, diag_quadratic, diag_quadratic_value};
use crate::problem::{CostEval, DynamicsEval, Ocp, ParameterVector, SegmentRole, Trajectory};

/// Physical constants and step size of the cart-pole model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            length: 0.5,
            gravity: 9.81,
            dt: 0.05,
        }
    }
}

/// Cart-pole with state `(position, velocity, angle, angular rate)` and a
/// scalar force input, discretized with forward Euler.
///
/// This is the imitation-learning benchmark variant, not the textbook
/// cart-pole: the force enters only the angular-rate equation, and that
/// equation is linear (not quadratic) in the angular rate.
///
/// θ = (diag Q (4), R (1), x_s (4)) with costs `½ xᵀ diag(Q) x` and `½ R u²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPole {
    pub params: CartPoleParams,
    horizon: usize,
}

const NX: usize = 4;

impl CartPole {
    pub fn new(horizon: usize, params: CartPoleParams) -> Self {
        assert!(horizon >= 1);
        CartPole { params, horizon }
    }

    pub fn parameters(&self, q: &[f64; 4], r: f64, x_s: &[f64; 4]) -> ParameterVector {
        ParameterVector::new()
            .with_segment("Q", SegmentRole::StateCost, q)
            .with_segment("R", SegmentRole::ControlCost, &[r])
            .with_segment("x_s", SegmentRole::InitialState, x_s)
    }

    /// Continuous-time vector field.
    pub fn vector_field(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        let p = &self.params;
        let total = p.cart_mass + p.pole_mass;
        let (s, c) = x[2].sin_cos();
        let den = total + p.pole_mass * (1.0 - c * c);
        let n2 = -p.pole_mass * p.length * s * x[3] * x[3] + p.pole_mass * p.gravity * s * c;
        let n4 = -p.pole_mass * p.length * s * x[3] + p.pole_mass * p.gravity * s * c + u;
        DVector::from_vec(vec![x[1], n2 / (den * p.length), x[3], n4 / den])
    }

    /// Jacobians of the vector field in `x` and `u`.
    pub fn vector_field_jacobians(&self, x: &DVector<f64>, u: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let p = &self.params;
        let (mp, l, g) = (p.pole_mass, p.length, p.gravity);
        let total = p.cart_mass + mp;
        let (s, c) = x[2].sin_cos();
        let w = x[3];
        let den = total + mp * (1.0 - c * c);
        let dden = 2.0 * mp * s * c;
        let n2 = -mp * l * s * w * w + mp * g * s * c;
        let n4 = -mp * l * s * w + mp * g * s * c + u;
        let dn2_da = -mp * l * c * w * w + mp * g * (c * c - s * s);
        let dn2_dw = -2.0 * mp * l * s * w;
        let dn4_da = -mp * l * c * w + mp * g * (c * c - s * s);
        let dn4_dw = -mp * l * s;

        let mut jx = DMatrix::zeros(NX, NX);
        jx[(0, 1)] = 1.0;
        jx[(1, 2)] = (dn2_da * den - n2 * dden) / (den * den * l);
        jx[(1, 3)] = dn2_dw / (den * l);
        jx[(2, 3)] = 1.0;
        jx[(3, 2)] = (dn4_da * den - n4 * dden) / (den * den);
        jx[(3, 3)] = dn4_dw / den;
        let mut ju = DMatrix::zeros(NX, 1);
        ju[(3, 0)] = 1.0 / den;
        (jx, ju)
    }

    /// One Euler step `x + Δt·ẋ`.
    pub fn step(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        x + self.vector_field(x, u) * self.params.dt
    }

    /// Jacobians of [`CartPole::step`].
    pub fn step_jacobians(&self, x: &DVector<f64>, u: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (jx, ju) = self.vector_field_jacobians(x, u);
        let dt = self.params.dt;
        (DMatrix::identity(NX, NX) + jx * dt, ju * dt)
    }

    /// States reached from `x0` under `controls`.
    pub fn rollout(&self, x0: &DVector<f64>, controls: &[DVector<f64>]) -> Trajectory {
        let mut x = vec![x0.clone()];
        for u in controls {
            let next = self.step(x.last().unwrap(), u[0]);
            x.push(next);
        }
        Trajectory {
            x,
            u: controls.to_vec(),
        }
    }
}

impl Ocp for CartPole {
    fn n_x(&self) -> usize {
        NX
    }

    fn n_u(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn state_cost(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> CostEval {
        diag_quadratic(1.0, &theta.as_slice()[0..4], x)
    }

    fn control_cost(&self, _t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> CostEval {
        diag_quadratic(1.0, &theta.as_slice()[4..5], u)
    }

    fn state_cost_value(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        diag_quadratic_value(1.0, &theta.as_slice()[0..4], x)
    }

    fn control_cost_value(&self, _t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        diag_quadratic_value(1.0, &theta.as_slice()[4..5], u)
    }

    fn dynamics(
        &self,
        _t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DynamicsEval {
        let (jx, ju) = self.step_jacobians(x, u[0]);
        DynamicsEval::explicit(x_next, self.step(x, u[0]), jx, ju)
    }

    fn dynamics_residual(
        &self,
        _t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        x_next - self.step(x, u[0])
    }

    fn initial_state(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta.rows(5, NX).into_owned()
    }

    fn theta_vjp(
        &self,
        z: &Trajectory,
        _lambda: &DVector<f64>,
        z_tilde: &Trajectory,
        lambda_tilde: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        diag_cost_theta_vjp(9, 1.0, 0..4, 4..5, 5..9, z, z_tilde, lambda_tilde)
    }
}
