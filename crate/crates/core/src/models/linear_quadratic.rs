use nalgebra::DVector;

use crate::problem::{
    CostEval, DynamicsEval, Ocp, ParameterVector, QpData, SegmentRole, Trajectory,
};

/// Time-varying linear-quadratic problem read straight off a [`QpData`]:
/// costs `½ xᵀQ_t x + q_tᵀx`, `½ uᵀR_t u + r_tᵀu` and dynamics residual
/// `A_t⁺x_{t+1} + A_t x_t + B_t u_t − C_t`.
///
/// Only the initial state is a parameter. Linearizing this problem anywhere
/// reproduces the data it was built from.
#[derive(Debug, Clone)]
pub struct LinearQuadratic {
    qp: QpData,
}

impl LinearQuadratic {
    pub fn new(qp: QpData) -> Self {
        qp.validate().expect("consistent QP data");
        LinearQuadratic { qp }
    }

    pub fn qp(&self) -> &QpData {
        &self.qp
    }

    pub fn parameters(&self) -> ParameterVector {
        ParameterVector::new().with_segment(
            "x_s",
            SegmentRole::InitialState,
            self.qp.x_s.as_slice(),
        )
    }
}

impl Ocp for LinearQuadratic {
    fn n_x(&self) -> usize {
        self.qp.n_x()
    }

    fn n_u(&self) -> usize {
        self.qp.n_u()
    }

    fn horizon(&self) -> usize {
        self.qp.horizon()
    }

    fn state_cost(&self, t: usize, x: &DVector<f64>, _theta: &DVector<f64>) -> CostEval {
        let q = &self.qp.q_mat[t];
        let qx = q * x;
        CostEval {
            value: 0.5 * x.dot(&qx) + self.qp.q_vec[t].dot(x),
            gradient: qx + &self.qp.q_vec[t],
            hessian: q.clone(),
        }
    }

    fn control_cost(&self, t: usize, u: &DVector<f64>, _theta: &DVector<f64>) -> CostEval {
        let r = &self.qp.r_mat[t];
        let ru = r * u;
        CostEval {
            value: 0.5 * u.dot(&ru) + self.qp.r_vec[t].dot(u),
            gradient: ru + &self.qp.r_vec[t],
            hessian: r.clone(),
        }
    }

    fn dynamics(
        &self,
        t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DynamicsEval {
        let qp = &self.qp;
        DynamicsEval {
            residual: &qp.a_plus[t] * x_next + &qp.a[t] * x + &qp.b[t] * u - &qp.c[t],
            jac_next: qp.a_plus[t].clone(),
            jac_x: qp.a[t].clone(),
            jac_u: qp.b[t].clone(),
        }
    }

    fn initial_state(&self, theta: &DVector<f64>) -> DVector<f64> {
        theta.clone()
    }

    fn theta_vjp(
        &self,
        _z: &Trajectory,
        _lambda: &DVector<f64>,
        _z_tilde: &Trajectory,
        lambda_tilde: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        lambda_tilde.rows(0, self.n_x()).into_owned()
    }
}
