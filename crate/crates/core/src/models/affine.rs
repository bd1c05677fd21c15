use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{diag_quadratic, diag_quadratic_value};
use crate::error::{Error, Result};
use crate::problem::{
    accumulate_diag_weight_vjp, CostEval, DynamicsEval, Ocp, ParameterVector, SegmentRole,
    Trajectory,
};

pub const PROBLEM_FORMAT: &str = "dmpc-affine-qp/1";

/// Time-invariant affine dynamics `x_{t+1} = A x_t + B u_t + b` with diagonal
/// quadratic costs `½ κ xᵀ diag(w_x) x` and `½ κ uᵀ diag(w_u) u`.
///
/// Every numeric coefficient lives in θ, in the segment order state weights,
/// control weights, `A` (row-major), `B` (row-major), `b`, `x_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineQuadratic {
    n_x: usize,
    n_u: usize,
    horizon: usize,
    cost_scale: f64,
}

struct Layout {
    qw: usize,
    rw: usize,
    a: usize,
    b: usize,
    off: usize,
    xs: usize,
    dim: usize,
}

impl AffineQuadratic {
    pub fn new(n_x: usize, n_u: usize, horizon: usize) -> Self {
        Self::with_cost_scale(n_x, n_u, horizon, 1.0)
    }

    /// `cost_scale = 2` turns the costs into `xᵀ diag(w_x) x` and `uᵀ diag(w_u) u`.
    pub fn with_cost_scale(n_x: usize, n_u: usize, horizon: usize, cost_scale: f64) -> Self {
        assert!(n_x >= 1 && n_u >= 1 && horizon >= 1, "empty problem");
        AffineQuadratic {
            n_x,
            n_u,
            horizon,
            cost_scale,
        }
    }

    pub fn cost_scale(&self) -> f64 {
        self.cost_scale
    }

    fn layout(&self) -> Layout {
        let (nx, nu) = (self.n_x, self.n_u);
        let qw = 0;
        let rw = qw + nx;
        let a = rw + nu;
        let b = a + nx * nx;
        let off = b + nx * nu;
        let xs = off + nx;
        Layout {
            qw,
            rw,
            a,
            b,
            off,
            xs,
            dim: xs + nx,
        }
    }

    pub fn n_theta(&self) -> usize {
        self.layout().dim
    }

    /// Builds θ; `a` and `b` are row-major.
    pub fn parameters(
        &self,
        state_weights: &[f64],
        control_weights: &[f64],
        a: &[f64],
        b: &[f64],
        offset: &[f64],
        x_s: &[f64],
    ) -> ParameterVector {
        let (nx, nu) = (self.n_x, self.n_u);
        assert_eq!(state_weights.len(), nx);
        assert_eq!(control_weights.len(), nu);
        assert_eq!(a.len(), nx * nx);
        assert_eq!(b.len(), nx * nu);
        assert_eq!(offset.len(), nx);
        assert_eq!(x_s.len(), nx);
        ParameterVector::new()
            .with_segment("state_weights", SegmentRole::StateCost, state_weights)
            .with_segment("control_weights", SegmentRole::ControlCost, control_weights)
            .with_segment("A", SegmentRole::Dynamics, a)
            .with_segment("B", SegmentRole::Dynamics, b)
            .with_segment("b_affine", SegmentRole::Dynamics, offset)
            .with_segment("x_s", SegmentRole::InitialState, x_s)
    }

    pub fn a_matrix(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout();
        DMatrix::from_row_slice(
            self.n_x,
            self.n_x,
            &theta.as_slice()[l.a..l.a + self.n_x * self.n_x],
        )
    }

    pub fn b_matrix(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let l = self.layout();
        DMatrix::from_row_slice(
            self.n_x,
            self.n_u,
            &theta.as_slice()[l.b..l.b + self.n_x * self.n_u],
        )
    }

    fn offset(&self, theta: &DVector<f64>) -> DVector<f64> {
        let l = self.layout();
        theta.rows(l.off, self.n_x).into_owned()
    }

    /// Next state `A x + B u + b`.
    pub fn step(&self, theta: &DVector<f64>, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.a_matrix(theta) * x + self.b_matrix(theta) * u + self.offset(theta)
    }

    /// Rolls the dynamics out from `x_s` under the given controls.
    pub fn rollout(&self, theta: &DVector<f64>, controls: &[DVector<f64>]) -> Trajectory {
        let mut x = vec![self.initial_state(theta)];
        for u in controls {
            let next = self.step(theta, x.last().unwrap(), u);
            x.push(next);
        }
        Trajectory {
            x,
            u: controls.to_vec(),
        }
    }

    pub fn from_file(file: &ProblemFile) -> Result<(Self, ParameterVector)> {
        file.validate()?;
        let ocp =
            AffineQuadratic::with_cost_scale(file.n_x, file.n_u, file.horizon, file.cost_scale);
        let a: Vec<f64> = file.a.iter().flatten().copied().collect();
        let b: Vec<f64> = file.b.iter().flatten().copied().collect();
        let theta = ocp.parameters(&file.q, &file.r, &a, &b, &file.b_affine, &file.x_s);
        Ok((ocp, theta))
    }

    pub fn to_file(&self, theta: &ParameterVector) -> ProblemFile {
        let v = theta.values();
        let l = self.layout();
        let rows = |start: usize, ncols: usize| -> Vec<Vec<f64>> {
            (0..self.n_x)
                .map(|i| v[start + i * ncols..start + (i + 1) * ncols].to_vec())
                .collect()
        };
        ProblemFile {
            format: PROBLEM_FORMAT.to_string(),
            n_x: self.n_x,
            n_u: self.n_u,
            horizon: self.horizon,
            q: v[l.qw..l.rw].to_vec(),
            r: v[l.rw..l.a].to_vec(),
            a: rows(l.a, self.n_x),
            b: rows(l.b, self.n_u),
            b_affine: v[l.off..l.xs].to_vec(),
            x_s: v[l.xs..l.dim].to_vec(),
            cost_scale: self.cost_scale,
        }
    }
}

impl Ocp for AffineQuadratic {
    fn n_x(&self) -> usize {
        self.n_x
    }

    fn n_u(&self) -> usize {
        self.n_u
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn state_cost(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> CostEval {
        let l = self.layout();
        diag_quadratic(self.cost_scale, &theta.as_slice()[l.qw..l.rw], x)
    }

    fn control_cost(&self, _t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> CostEval {
        let l = self.layout();
        diag_quadratic(self.cost_scale, &theta.as_slice()[l.rw..l.a], u)
    }

    fn state_cost_value(&self, _t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let l = self.layout();
        diag_quadratic_value(self.cost_scale, &theta.as_slice()[l.qw..l.rw], x)
    }

    fn control_cost_value(&self, _t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let l = self.layout();
        diag_quadratic_value(self.cost_scale, &theta.as_slice()[l.rw..l.a], u)
    }

    fn dynamics(
        &self,
        _t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DynamicsEval {
        let a = self.a_matrix(theta);
        let b = self.b_matrix(theta);
        let phi = &a * x + &b * u + self.offset(theta);
        DynamicsEval::explicit(x_next, phi, a, b)
    }

    fn dynamics_residual(
        &self,
        _t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64> {
        x_next - self.step(theta, x, u)
    }

    fn initial_state(&self, theta: &DVector<f64>) -> DVector<f64> {
        let l = self.layout();
        theta.rows(l.xs, self.n_x).into_owned()
    }

    fn theta_vjp(
        &self,
        z: &Trajectory,
        lambda: &DVector<f64>,
        z_tilde: &Trajectory,
        lambda_tilde: &DVector<f64>,
        _theta: &DVector<f64>,
    ) -> DVector<f64> {
        let l = self.layout();
        let (nx, nu) = (self.n_x, self.n_u);
        let mut out = vec![0.0; l.dim];
        for (x, xt) in z.x.iter().zip(&z_tilde.x) {
            accumulate_diag_weight_vjp(&mut out[l.qw..l.rw], self.cost_scale, x, xt);
        }
        for (u, ut) in z.u.iter().zip(&z_tilde.u) {
            accumulate_diag_weight_vjp(&mut out[l.rw..l.a], self.cost_scale, u, ut);
        }
        // f_t = x_{t+1} − A x_t − B u_t − b enters F through λ_{t+1}ᵀ J_f z̃ and λ̃_{t+1}ᵀ f_t.
        for t in 0..self.horizon {
            let lam = lambda.rows((t + 1) * nx, nx);
            let lam_t = lambda_tilde.rows((t + 1) * nx, nx);
            for i in 0..nx {
                for j in 0..nx {
                    out[l.a + i * nx + j] += lam[i] * z_tilde.x[t][j] + lam_t[i] * z.x[t][j];
                }
                for j in 0..nu {
                    out[l.b + i * nu + j] += lam[i] * z_tilde.u[t][j] + lam_t[i] * z.u[t][j];
                }
                out[l.off + i] += lam_t[i];
            }
        }
        for i in 0..nx {
            out[l.xs + i] += lambda_tilde[i];
        }
        DVector::from_vec(out)
    }
}

/// On-disk description of an affine-quadratic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub format: String,
    pub n_x: usize,
    pub n_u: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Diagonal of the state-cost weight.
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    /// Diagonal of the control-cost weight.
    #[serde(rename = "R")]
    pub r: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub b_affine: Vec<f64>,
    pub x_s: Vec<f64>,
    #[serde(default = "default_cost_scale")]
    pub cost_scale: f64,
}

fn default_cost_scale() -> f64 {
    1.0
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Format(msg));
        if self.format != PROBLEM_FORMAT {
            return bad(format!(
                "unsupported format '{}', expected '{PROBLEM_FORMAT}'",
                self.format
            ));
        }
        if self.n_x == 0 || self.n_u == 0 || self.horizon == 0 {
            return bad("n_x, n_u and T must be positive".into());
        }
        let (nx, nu) = (self.n_x, self.n_u);
        if self.q.len() != nx || self.r.len() != nu {
            return bad("Q and R must hold n_x and n_u diagonal entries".into());
        }
        if self.a.len() != nx || self.a.iter().any(|row| row.len() != nx) {
            return bad("A must be n_x × n_x".into());
        }
        if self.b.len() != nx || self.b.iter().any(|row| row.len() != nu) {
            return bad("B must be n_x × n_u".into());
        }
        if self.b_affine.len() != nx || self.x_s.len() != nx {
            return bad("b_affine and x_s must have n_x entries".into());
        }
        let all = self
            .q
            .iter()
            .chain(&self.r)
            .chain(self.a.iter().flatten())
            .chain(self.b.iter().flatten())
            .chain(&self.b_affine)
            .chain(&self.x_s);
        if !all.clone().all(|v| v.is_finite()) || !self.cost_scale.is_finite() {
            return bad("non-finite coefficient".into());
        }
        Ok(())
    }
}
