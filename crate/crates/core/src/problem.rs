//! Parametric optimal control problems, their linear-quadratic models and the
//! KKT residual.
//!
//! A problem is described by the [`Ocp`] trait: separable state and control
//! costs, an implicit dynamics residual `f_t(x_{t+1}, x_t, u_t) = 0` and an
//! initial condition `x_0 = x_s`, all parameterized by a flat vector `θ`.
//!
//! Multipliers are laid out as `λ = (λ_init, λ_dyn,0, …, λ_dyn,T−1)`, one block
//! of `n_x` entries each, and trajectories are flattened in the interleaved
//! order `z = (x_0, u_0, …, x_{T−1}, u_{T−1}, x_T)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default floor for the eigenvalues of the projected cost Hessians.
pub const DEFAULT_EPS_PD: f64 = 1e-6;

/// Value, gradient and Hessian of a stage cost.
#[derive(Debug, Clone)]
pub struct CostEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// Residual of the dynamics constraint and its three Jacobians.
#[derive(Debug, Clone)]
pub struct DynamicsEval {
    pub residual: DVector<f64>,
    /// ∂f/∂x_{t+1}
    pub jac_next: DMatrix<f64>,
    /// ∂f/∂x_t
    pub jac_x: DMatrix<f64>,
    /// ∂f/∂u_t
    pub jac_u: DMatrix<f64>,
}

impl DynamicsEval {
    /// Builds the residual `f = x_next − φ(x, u)` of explicit dynamics from the
    /// value of `φ` and its Jacobians.
    pub fn explicit(
        x_next: &DVector<f64>,
        phi: DVector<f64>,
        phi_x: DMatrix<f64>,
        phi_u: DMatrix<f64>,
    ) -> Self {
        let n = x_next.len();
        DynamicsEval {
            residual: x_next - phi,
            jac_next: DMatrix::identity(n, n),
            jac_x: -phi_x,
            jac_u: -phi_u,
        }
    }
}

/// A parametric finite-horizon optimal control problem.
///
/// Implementations must be pure: the solver calls them concurrently from
/// several threads and relies on identical inputs giving identical outputs.
pub trait Ocp: Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    /// Number of control stages `T`; states run over `t = 0..=T`.
    fn horizon(&self) -> usize;

    /// State cost `c_t^x` for `t = 0..=T` (the terminal stage is `t = T`).
    fn state_cost(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> CostEval;

    fn control_cost(&self, t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> CostEval;

    fn state_cost_value(&self, t: usize, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        self.state_cost(t, x, theta).value
    }

    fn control_cost_value(&self, t: usize, u: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        self.control_cost(t, u, theta).value
    }

    fn dynamics(
        &self,
        t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DynamicsEval;

    fn dynamics_residual(
        &self,
        t: usize,
        x_next: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64> {
        self.dynamics(t, x_next, x, u, theta).residual
    }

    fn initial_state(&self, theta: &DVector<f64>) -> DVector<f64>;

    /// Returns `−∂F/∂θᵀ [z̃; λ̃]` where `F(z, λ, θ)` is the stacked KKT
    /// residual, evaluated at the primal-dual point `(z, λ)`.
    fn theta_vjp(
        &self,
        z: &Trajectory,
        lambda: &DVector<f64>,
        z_tilde: &Trajectory,
        lambda_tilde: &DVector<f64>,
        theta: &DVector<f64>,
    ) -> DVector<f64>;

    fn n_z(&self) -> usize {
        (self.horizon() + 1) * self.n_x() + self.horizon() * self.n_u()
    }

    fn n_lambda(&self) -> usize {
        (self.horizon() + 1) * self.n_x()
    }
}

/// Role of a parameter segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentRole {
    StateCost,
    ControlCost,
    Dynamics,
    InitialState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub role: SegmentRole,
    pub range: Range<usize>,
}

/// Flat differentiable parameter vector with named segments.
///
/// Entries flagged in the log mask are stored in natural space but updated in
/// log space by [`ParameterVector::gradient_step`], which keeps them positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
    log_mask: Vec<bool>,
}

impl Default for ParameterVector {
    fn default() -> Self {
        Self::new()
    }
}

impl ParameterVector {
    pub fn new() -> Self {
        ParameterVector {
            values: Vec::new(),
            segments: Vec::new(),
            log_mask: Vec::new(),
        }
    }

    /// Appends a segment. Segments are contiguous, so they are disjoint and
    /// cover the vector by construction.
    pub fn with_segment(mut self, name: &str, role: SegmentRole, values: &[f64]) -> Self {
        let start = self.values.len();
        self.values.extend_from_slice(values);
        self.log_mask
            .extend(std::iter::repeat_n(false, values.len()));
        self.segments.push(Segment {
            name: name.to_string(),
            role,
            range: start..self.values.len(),
        });
        self
    }

    /// Flags every entry of the segments with `role` for log-space updates.
    pub fn with_log_space(mut self, role: SegmentRole) -> Result<Self> {
        for seg in self.segments.iter().filter(|s| s.role == role) {
            for i in seg.range.clone() {
                if self.values[i] <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "log-space entry {} of segment '{}' must be positive, got {}",
                        i - seg.range.start,
                        seg.name,
                        self.values[i]
                    )));
                }
                self.log_mask[i] = true;
            }
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn log_mask(&self) -> &[bool] {
        &self.log_mask
    }

    /// First segment with the given role.
    pub fn segment(&self, role: SegmentRole) -> Option<&Segment> {
        self.segments.iter().find(|s| s.role == role)
    }

    pub fn segment_by_name(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn slice(&self, role: SegmentRole) -> Option<&[f64]> {
        self.segment(role).map(|s| &self.values[s.range.clone()])
    }

    /// The part of a θ-shaped vector (e.g. a gradient) belonging to `role`.
    pub fn slice_of<'a>(&self, v: &'a DVector<f64>, role: SegmentRole) -> &'a [f64] {
        let range = self.segment(role).map_or(0..0, |s| s.range.clone());
        &v.as_slice()[range]
    }

    pub fn set(&mut self, index: usize, value: f64) {
        self.values[index] = value;
    }

    pub fn set_segment(&mut self, role: SegmentRole, values: &[f64]) -> Result<()> {
        let range = self
            .segment(role)
            .ok_or_else(|| Error::InvalidParameter(format!("no {role:?} segment")))?
            .range
            .clone();
        check_len("parameter segment", range.len(), values.len())?;
        self.values[range].copy_from_slice(values);
        Ok(())
    }

    /// Mask selecting the entries of all segments whose role is in `roles`.
    pub fn role_mask(&self, roles: &[SegmentRole]) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for seg in self.segments.iter().filter(|s| roles.contains(&s.role)) {
            for m in &mut mask[seg.range.clone()] {
                *m = true;
            }
        }
        mask
    }

    /// One gradient-descent step `θ ← θ − lr·g` restricted to `mask`; log-flagged
    /// entries step in log space with the chain-ruled gradient `g·θ`.
    pub fn gradient_step(&mut self, grad: &[f64], lr: f64, mask: &[bool]) -> Result<()> {
        check_len("gradient", self.len(), grad.len())?;
        check_len("update mask", self.len(), mask.len())?;
        for i in 0..self.len() {
            if !mask[i] {
                continue;
            }
            if self.log_mask[i] {
                let v = self.values[i];
                self.values[i] = v * (-lr * grad[i] * v).exp();
            } else {
                self.values[i] -= lr * grad[i];
            }
        }
        Ok(())
    }
}

/// State and control trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn zeros(n_x: usize, n_u: usize, horizon: usize) -> Self {
        Trajectory {
            x: vec![DVector::zeros(n_x); horizon + 1],
            u: vec![DVector::zeros(n_u); horizon],
        }
    }

    pub fn zeros_for(ocp: &dyn Ocp) -> Self {
        Self::zeros(ocp.n_x(), ocp.n_u(), ocp.horizon())
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    pub fn n_x(&self) -> usize {
        self.x[0].len()
    }

    pub fn n_u(&self) -> usize {
        self.u.first().map_or(0, |u| u.len())
    }

    pub fn flat_len(&self) -> usize {
        self.x.len() * self.n_x() + self.u.len() * self.n_u()
    }

    /// Interleaved flattening `(x_0, u_0, …, x_{T−1}, u_{T−1}, x_T)`.
    pub fn flatten(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for t in 0..self.u.len() {
            out.extend(self.x[t].iter());
            out.extend(self.u[t].iter());
        }
        out.extend(self.x[self.u.len()].iter());
        DVector::from_vec(out)
    }

    pub fn from_flat(n_x: usize, n_u: usize, horizon: usize, flat: &[f64]) -> Result<Self> {
        check_len(
            "flattened trajectory",
            (horizon + 1) * n_x + horizon * n_u,
            flat.len(),
        )?;
        let stride = n_x + n_u;
        let x = (0..=horizon)
            .map(|t| DVector::from_column_slice(&flat[t * stride..t * stride + n_x]))
            .collect();
        let u = (0..horizon)
            .map(|t| DVector::from_column_slice(&flat[t * stride + n_x..(t + 1) * stride]))
            .collect();
        Ok(Trajectory { x, u })
    }

    /// Offset of `x_t` in the flattened vector.
    pub fn x_offset(n_x: usize, n_u: usize, t: usize) -> usize {
        t * (n_x + n_u)
    }

    /// Offset of `u_t` in the flattened vector.
    pub fn u_offset(n_x: usize, n_u: usize, t: usize) -> usize {
        t * (n_x + n_u) + n_x
    }

    /// `self + α (other − self)`
    pub fn interpolate(&self, other: &Trajectory, alpha: f64) -> Trajectory {
        Trajectory {
            x: self
                .x
                .iter()
                .zip(&other.x)
                .map(|(a, b)| a + (b - a) * alpha)
                .collect(),
            u: self
                .u
                .iter()
                .zip(&other.u)
                .map(|(a, b)| a + (b - a) * alpha)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        self.x
            .iter()
            .zip(&other.x)
            .chain(self.u.iter().zip(&other.u))
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.x
            .iter()
            .chain(&self.u)
            .all(|v| v.iter().all(|e| e.is_finite()))
    }

    pub fn check_dims(&self, ocp: &dyn Ocp) -> Result<()> {
        check_len("trajectory states", ocp.horizon() + 1, self.x.len())?;
        check_len("trajectory controls", ocp.horizon(), self.u.len())?;
        for x in &self.x {
            check_len("state", ocp.n_x(), x.len())?;
        }
        for u in &self.u {
            check_len("control", ocp.n_u(), u.len())?;
        }
        Ok(())
    }
}

/// Linear-quadratic data of one SQP iteration.
///
/// Defines the QP cost blocks `G = blkdiag(Q_0, R_0, …, Q_T)`, the
/// constraint matrix `H` with block rows `[I]` and `[A_t B_t A_t⁺]`,
/// `b = (q_0, r_0, …, q_T)` and `d = (x_s, C_0, …, C_{T−1})`, without ever
/// forming `G` or `H`.
#[derive(Debug, Clone)]
pub struct QpData {
    pub q_mat: Vec<DMatrix<f64>>,
    pub q_vec: Vec<DVector<f64>>,
    pub r_mat: Vec<DMatrix<f64>>,
    pub r_vec: Vec<DVector<f64>>,
    pub a_plus: Vec<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub c: Vec<DVector<f64>>,
    pub x_s: DVector<f64>,
}

impl QpData {
    pub fn horizon(&self) -> usize {
        self.r_mat.len()
    }

    pub fn n_x(&self) -> usize {
        self.x_s.len()
    }

    pub fn n_u(&self) -> usize {
        self.r_mat.first().map_or(0, |r| r.nrows())
    }

    pub fn n_z(&self) -> usize {
        (self.horizon() + 1) * self.n_x() + self.horizon() * self.n_u()
    }

    pub fn n_lambda(&self) -> usize {
        (self.horizon() + 1) * self.n_x()
    }

    /// Cost gradient `b` in interleaved order.
    pub fn cost_gradient(&self) -> DVector<f64> {
        Trajectory {
            x: self.q_vec.clone(),
            u: self.r_vec.clone(),
        }
        .flatten()
    }

    /// Constraint right-hand side `d = (x_s, C_0, …, C_{T−1})`.
    pub fn constraint_rhs(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.n_lambda());
        out.extend(self.x_s.iter());
        for c in &self.c {
            out.extend(c.iter());
        }
        DVector::from_vec(out)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon();
        let (n_x, n_u) = (self.n_x(), self.n_u());
        check_len("Q blocks", t + 1, self.q_mat.len())?;
        check_len("q vectors", t + 1, self.q_vec.len())?;
        check_len("r vectors", t, self.r_vec.len())?;
        check_len("A+ blocks", t, self.a_plus.len())?;
        check_len("A blocks", t, self.a.len())?;
        check_len("B blocks", t, self.b.len())?;
        check_len("C vectors", t, self.c.len())?;
        for k in 0..=t {
            check_len("Q rows", n_x, self.q_mat[k].nrows())?;
            check_len("Q cols", n_x, self.q_mat[k].ncols())?;
            check_len("q", n_x, self.q_vec[k].len())?;
        }
        for k in 0..t {
            check_len("R rows", n_u, self.r_mat[k].nrows())?;
            check_len("R cols", n_u, self.r_mat[k].ncols())?;
            check_len("r", n_u, self.r_vec[k].len())?;
            check_len("A+ rows", n_x, self.a_plus[k].nrows())?;
            check_len("A+ cols", n_x, self.a_plus[k].ncols())?;
            check_len("A rows", n_x, self.a[k].nrows())?;
            check_len("A cols", n_x, self.a[k].ncols())?;
            check_len("B rows", n_x, self.b[k].nrows())?;
            check_len("B cols", n_u, self.b[k].ncols())?;
            check_len("C", n_x, self.c[k].len())?;
        }
        Ok(())
    }
}

/// Projects a symmetric matrix onto `{M : λ_min(M) ≥ eps}` by clamping its
/// eigenvalues. The input is symmetrized first; matrices already satisfying the
/// bound are returned unchanged.
pub fn project_pd(m: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let shifted = &sym - DMatrix::identity(n, n) * eps;
    if shifted.cholesky().is_some() {
        return Ok(sym);
    }
    let eig = sym
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(Error::Eigen {
            n,
            max_abs: m.amax(),
        })?;
    if eig.eigenvalues.iter().all(|&l| l >= eps) {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(eps));
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&clamped) * v.transpose())
}

struct StageModel {
    q_mat: DMatrix<f64>,
    q_vec: DVector<f64>,
    control: Option<ControlStage>,
}

struct ControlStage {
    r_mat: DMatrix<f64>,
    r_vec: DVector<f64>,
    a_plus: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
}

fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|e| e.is_finite())
}

fn all_finite_mat(m: &DMatrix<f64>) -> bool {
    m.iter().all(|e| e.is_finite())
}

/// Evaluates the QP model of the problem around `z`. Stages are independent and
/// evaluated in parallel; each `(Q_t, R_t)` is projected with [`project_pd`].
///
/// The model is in absolute coordinates: `q_t = ∇c_t(x̄_t) − Q_t x̄_t` (and
/// likewise `r_t`), `C_t = A_t⁺x̄_{t+1} + A_t x̄_t + B_t ū_t − f_t(z̄)`, so the
/// QP minimizer is the next iterate itself rather than a step. At `z̄ = 0`
/// the linear terms are the plain cost gradients.
pub fn linearize(
    ocp: &dyn Ocp,
    z: &Trajectory,
    theta: &ParameterVector,
    eps_pd: f64,
) -> Result<QpData> {
    z.check_dims(ocp)?;
    let th = theta.to_dvector();
    let horizon = ocp.horizon();
    let stages: Vec<StageModel> = (0..=horizon)
        .into_par_iter()
        .map(|t| -> Result<StageModel> {
            let sc = ocp.state_cost(t, &z.x[t], &th);
            if !sc.value.is_finite()
                || !all_finite_vec(&sc.gradient)
                || !all_finite_mat(&sc.hessian)
            {
                return Err(Error::Evaluation {
                    callback: "state_cost",
                    stage: t,
                });
            }
            let q_mat = project_pd(&sc.hessian, eps_pd)?;
            let control = if t < horizon {
                let cc = ocp.control_cost(t, &z.u[t], &th);
                if !cc.value.is_finite()
                    || !all_finite_vec(&cc.gradient)
                    || !all_finite_mat(&cc.hessian)
                {
                    return Err(Error::Evaluation {
                        callback: "control_cost",
                        stage: t,
                    });
                }
                let dy = ocp.dynamics(t, &z.x[t + 1], &z.x[t], &z.u[t], &th);
                if !all_finite_vec(&dy.residual)
                    || !all_finite_mat(&dy.jac_next)
                    || !all_finite_mat(&dy.jac_x)
                    || !all_finite_mat(&dy.jac_u)
                {
                    return Err(Error::Evaluation {
                        callback: "dynamics",
                        stage: t,
                    });
                }
                let c = &dy.jac_next * &z.x[t + 1] + &dy.jac_x * &z.x[t] + &dy.jac_u * &z.u[t]
                    - &dy.residual;
                let r_mat = project_pd(&cc.hessian, eps_pd)?;
                let r_vec = cc.gradient - &r_mat * &z.u[t];
                Some(ControlStage {
                    r_mat,
                    r_vec,
                    a_plus: dy.jac_next,
                    a: dy.jac_x,
                    b: dy.jac_u,
                    c,
                })
            } else {
                None
            };
            let q_vec = sc.gradient - &q_mat * &z.x[t];
            Ok(StageModel {
                q_mat,
                q_vec,
                control,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let x_s = ocp.initial_state(&th);
    if !all_finite_vec(&x_s) {
        return Err(Error::Evaluation {
            callback: "initial_state",
            stage: 0,
        });
    }
    let mut qp = QpData {
        q_mat: Vec::with_capacity(horizon + 1),
        q_vec: Vec::with_capacity(horizon + 1),
        r_mat: Vec::with_capacity(horizon),
        r_vec: Vec::with_capacity(horizon),
        a_plus: Vec::with_capacity(horizon),
        a: Vec::with_capacity(horizon),
        b: Vec::with_capacity(horizon),
        c: Vec::with_capacity(horizon),
        x_s,
    };
    for stage in stages {
        qp.q_mat.push(stage.q_mat);
        qp.q_vec.push(stage.q_vec);
        if let Some(cs) = stage.control {
            qp.r_mat.push(cs.r_mat);
            qp.r_vec.push(cs.r_vec);
            qp.a_plus.push(cs.a_plus);
            qp.a.push(cs.a);
            qp.b.push(cs.b);
            qp.c.push(cs.c);
        }
    }
    Ok(qp)
}

/// Stacked KKT residual `(∇_z L, g)` with `g = (x_0 − x_s, f_0, …, f_{T−1})`
/// and `L = c(z) + λᵀ g(z)`.
pub fn kkt_residual(
    ocp: &dyn Ocp,
    z: &Trajectory,
    lambda: &DVector<f64>,
    theta: &ParameterVector,
) -> Result<DVector<f64>> {
    z.check_dims(ocp)?;
    check_len("multipliers", ocp.n_lambda(), lambda.len())?;
    let th = theta.to_dvector();
    let (n_x, n_u, horizon) = (ocp.n_x(), ocp.n_u(), ocp.horizon());
    let lam = |k: usize| lambda.rows(k * n_x, n_x);

    let mut grad = Trajectory::zeros(n_x, n_u, horizon);
    let mut cons = DVector::zeros(ocp.n_lambda());
    for t in 0..=horizon {
        grad.x[t] += ocp.state_cost(t, &z.x[t], &th).gradient;
    }
    grad.x[0] += lam(0);
    let x_s = ocp.initial_state(&th);
    cons.rows_mut(0, n_x).copy_from(&(&z.x[0] - x_s));
    for t in 0..horizon {
        grad.u[t] += ocp.control_cost(t, &z.u[t], &th).gradient;
        let dy = ocp.dynamics(t, &z.x[t + 1], &z.x[t], &z.u[t], &th);
        let l = lam(t + 1);
        grad.x[t] += dy.jac_x.tr_mul(&l);
        grad.u[t] += dy.jac_u.tr_mul(&l);
        grad.x[t + 1] += dy.jac_next.tr_mul(&l);
        cons.rows_mut((t + 1) * n_x, n_x).copy_from(&dy.residual);
    }
    let g = grad.flatten();
    let mut out = DVector::zeros(g.len() + cons.len());
    out.rows_mut(0, g.len()).copy_from(&g);
    out.rows_mut(g.len(), cons.len()).copy_from(&cons);
    Ok(out)
}

/// Contribution of a diagonal quadratic penalty `½ κ Σ_i w_i v_i²` to
/// `−∂F/∂wᵀ[z̃; λ̃]`, accumulated into `out` for one stage.
///
/// The stationarity row of `v` contains `κ w_i v_i`, whose derivative in `w_i`
/// is `κ v_i`, so the entry is `−κ v_i ṽ_i`.
pub fn accumulate_diag_weight_vjp(
    out: &mut [f64],
    scale: f64,
    v: &DVector<f64>,
    v_tilde: &DVector<f64>,
) {
    for i in 0..out.len() {
        out[i] -= scale * v[i] * v_tilde[i];
    }
}
