//! Batched solves, receding-horizon rollouts and their reverse-mode gradients.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::backward::{backward_vjp, BackwardResult};
use crate::error::{check_len, Error, Result};
use crate::models::{Attitude, CartPole};
use crate::pcg::PcgConfig;
use crate::problem::{Ocp, ParameterVector, SegmentRole, Trajectory};
use crate::sqp::{sqp_solve, SolveResult, SqpConfig};

/// Previous primal, dual and adjoint solution of one instance.
#[derive(Debug, Clone, Default)]
pub struct WarmStartSlot {
    pub z: Option<Trajectory>,
    pub lambda: Option<DVector<f64>>,
    pub lambda_tilde: Option<DVector<f64>>,
}

impl WarmStartSlot {
    pub fn from_solution(sol: &SolveResult) -> Self {
        WarmStartSlot {
            z: Some(sol.z.clone()),
            lambda: Some(sol.lambda.clone()),
            lambda_tilde: None,
        }
    }

    /// Initial guess for `ocp`. Missing or non-conforming entries read as zeros.
    pub fn guess(&self, ocp: &dyn Ocp) -> (Trajectory, DVector<f64>) {
        let z = self
            .z
            .as_ref()
            .filter(|z| z.check_dims(ocp).is_ok())
            .cloned()
            .unwrap_or_else(|| Trajectory::zeros_for(ocp));
        let lambda = self
            .lambda
            .as_ref()
            .filter(|l| l.len() == ocp.n_lambda())
            .cloned()
            .unwrap_or_else(|| DVector::zeros(ocp.n_lambda()));
        (z, lambda)
    }

    /// Adjoint warm start of length `n`, zeros when absent.
    pub fn adjoint_guess(&self, n: usize) -> DVector<f64> {
        self.lambda_tilde
            .as_ref()
            .filter(|l| l.len() == n)
            .cloned()
            .unwrap_or_else(|| DVector::zeros(n))
    }

    /// Shifts the stored solution one stage forward in time, repeating the last
    /// stage. Used between consecutive receding-horizon solves.
    pub fn shifted(&self) -> Self {
        let n_x = self.z.as_ref().map_or(0, |z| z.n_x());
        let shift_blocks = |l: &DVector<f64>| {
            if n_x == 0 {
                return l.clone();
            }
            let blocks = l.len() / n_x;
            let mut out = l.clone();
            for k in 0..blocks {
                let src = (k + 1).min(blocks - 1);
                out.rows_mut(k * n_x, n_x)
                    .copy_from(&l.rows(src * n_x, n_x));
            }
            out
        };
        let z = self.z.as_ref().map(|z| {
            let h = z.horizon();
            Trajectory {
                x: (0..=h).map(|t| z.x[(t + 1).min(h)].clone()).collect(),
                u: (0..h).map(|t| z.u[(t + 1).min(h - 1)].clone()).collect(),
            }
        });
        WarmStartSlot {
            z,
            lambda: self.lambda.as_ref().map(shift_blocks),
            lambda_tilde: self.lambda_tilde.as_ref().map(shift_blocks),
        }
    }
}

/// Per-instance warm-start slots of a batch.
#[derive(Debug, Clone, Default)]
pub struct WarmStartCache {
    slots: Vec<WarmStartSlot>,
    generation: u64,
}

impl WarmStartCache {
    pub fn new(n_instances: usize) -> Self {
        WarmStartCache {
            slots: vec![WarmStartSlot::default(); n_instances],
            generation: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Number of batch solves that have updated the cache.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn slot(&self, i: usize) -> &WarmStartSlot {
        &self.slots[i]
    }

    pub fn slot_mut(&mut self, i: usize) -> &mut WarmStartSlot {
        &mut self.slots[i]
    }

    pub fn clear(&mut self) {
        for s in &mut self.slots {
            *s = WarmStartSlot::default();
        }
    }
}

/// Solves every instance in parallel, warm-started from its cache slot, and
/// stores successful solutions back. Failures are reported per instance and
/// leave the slot untouched. A cache of the wrong size is reset.
pub fn batch_solve(
    instances: &[(&dyn Ocp, &ParameterVector)],
    cache: &mut WarmStartCache,
    cfg: &SqpConfig,
) -> Vec<Result<SolveResult>> {
    if cache.len() != instances.len() {
        *cache = WarmStartCache::new(instances.len());
    }
    let results: Vec<Result<SolveResult>> = instances
        .par_iter()
        .zip(cache.slots.par_iter())
        .map(|(&(ocp, theta), slot)| {
            let (z0, lambda0) = slot.guess(ocp);
            sqp_solve(ocp, theta, &z0, &lambda0, cfg)
        })
        .collect();
    for (slot, res) in cache.slots.iter_mut().zip(&results) {
        if let Ok(sol) = res {
            slot.z = Some(sol.z.clone());
            slot.lambda = Some(sol.lambda.clone());
        }
    }
    cache.generation += 1;
    results
}

/// The system the controller acts on.
pub trait Env: Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    /// `((∂step/∂x)ᵀ c, (∂step/∂u)ᵀ c)` for a cotangent `c` on the next state.
    fn vjp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        cotangent: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>);
}

/// Per-step reward `R(x_{t+1}, u_t)`.
pub trait Reward: Sync {
    fn reward(&self, x_next: &DVector<f64>, u: &DVector<f64>) -> f64;
    /// Gradients in `x_next` and `u`.
    fn gradient(&self, x_next: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>);
}

/// `R = −(w_x‖x‖² + w_u‖u‖²)`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticReward {
    pub state_weight: f64,
    pub control_weight: f64,
}

impl Reward for QuadraticReward {
    fn reward(&self, x_next: &DVector<f64>, u: &DVector<f64>) -> f64 {
        -(self.state_weight * x_next.norm_squared() + self.control_weight * u.norm_squared())
    }

    fn gradient(&self, x_next: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            x_next * (-2.0 * self.state_weight),
            u * (-2.0 * self.control_weight),
        )
    }
}

/// `x⁺ = A x + B u + c`
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEnv {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl Env for AffineEnv {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }

    fn n_u(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.offset
    }

    fn vjp(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        cotangent: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        (self.a.tr_mul(cotangent), self.b.tr_mul(cotangent))
    }
}

impl Env for CartPole {
    fn n_x(&self) -> usize {
        4
    }

    fn n_u(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        CartPole::step(self, x, u[0])
    }

    fn vjp(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        cotangent: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let (jx, ju) = self.step_jacobians(x, u[0]);
        (jx.tr_mul(cotangent), ju.tr_mul(cotangent))
    }
}

impl Env for Attitude {
    fn n_x(&self) -> usize {
        3
    }

    fn n_u(&self) -> usize {
        3
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        Attitude::step(self, x, u)
    }

    fn vjp(
        &self,
        x: &DVector<f64>,
        _u: &DVector<f64>,
        cotangent: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let (jx, ju) = self.step_jacobians(x);
        (jx.tr_mul(cotangent), ju.tr_mul(cotangent))
    }
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    pub steps: usize,
    pub sqp: SqpConfig,
    /// Reuse the shifted previous solution as the next initial guess.
    pub warm_start: bool,
}

/// Closed-loop trajectory with the per-step solutions kept for the backward
/// pass.
#[derive(Debug, Clone)]
pub struct RolloutRecord {
    /// `x_0 … x_H`
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    pub rewards: Vec<f64>,
    pub solutions: Vec<SolveResult>,
    /// Parameter vector used at each step (θ with the current state as `x_s`).
    pub thetas: Vec<ParameterVector>,
}

impl RolloutRecord {
    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

fn initial_state_range(theta: &ParameterVector) -> Result<std::ops::Range<usize>> {
    theta
        .segment(SegmentRole::InitialState)
        .map(|s| s.range.clone())
        .ok_or_else(|| Error::InvalidParameter("θ has no initial-state segment".into()))
}

/// Runs the MPC policy `u_t = z*(θ, x_t).u_0` in closed loop for
/// `cfg.steps` steps from `x_init`.
pub fn rollout(
    ocp: &dyn Ocp,
    env: &dyn Env,
    reward: &dyn Reward,
    theta: &ParameterVector,
    x_init: &DVector<f64>,
    cfg: &RolloutConfig,
) -> Result<RolloutRecord> {
    let xs_range = initial_state_range(theta)?;
    check_len("initial state", xs_range.len(), x_init.len())?;
    check_len("environment state", ocp.n_x(), env.n_x())?;
    let mut record = RolloutRecord {
        states: vec![x_init.clone()],
        controls: Vec::with_capacity(cfg.steps),
        rewards: Vec::with_capacity(cfg.steps),
        solutions: Vec::with_capacity(cfg.steps),
        thetas: Vec::with_capacity(cfg.steps),
    };
    let mut slot = WarmStartSlot::default();
    for step in 0..cfg.steps {
        let x = record.states[step].clone();
        let mut th = theta.clone();
        th.set_segment(SegmentRole::InitialState, x.as_slice())?;
        let (mut z0, lambda0) = slot.guess(ocp);
        if slot.z.is_none() {
            for xt in &mut z0.x {
                xt.copy_from(&x);
            }
        }
        let sol = sqp_solve(ocp, &th, &z0, &lambda0, &cfg.sqp).map_err(|e| Error::Rollout {
            step,
            source: Box::new(e),
        })?;
        let u = sol.z.u[0].clone();
        let x_next = env.step(&x, &u);
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Rollout {
                step,
                source: Box::new(Error::Evaluation {
                    callback: "env.step",
                    stage: step,
                }),
            });
        }
        record.rewards.push(reward.reward(&x_next, &u));
        if cfg.warm_start {
            slot = WarmStartSlot::from_solution(&sol).shifted();
        }
        record.controls.push(u);
        record.states.push(x_next);
        record.solutions.push(sol);
        record.thetas.push(th);
    }
    Ok(record)
}

/// Gradient of the total reward of `record` with respect to θ.
///
/// Every step's policy is differentiated through [`backward_vjp`]. The
/// initial-state segment of the result holds the gradient with respect to the
/// rollout's initial state; all other segments accumulate over steps.
pub fn rollout_backward(
    ocp: &dyn Ocp,
    env: &dyn Env,
    reward: &dyn Reward,
    theta: &ParameterVector,
    record: &RolloutRecord,
    pcg: &PcgConfig,
) -> Result<DVector<f64>> {
    Ok(rollout_backward_with(ocp, env, reward, theta, record, pcg, false)?.grad)
}

/// Rollout gradient together with the per-step adjoint solves.
#[derive(Debug, Clone)]
pub struct RolloutGradient {
    pub grad: DVector<f64>,
    /// Indexed by rollout step.
    pub steps: Vec<BackwardResult>,
}

/// [`rollout_backward`] with the adjoint solve of each step optionally
/// warm-started from the following step's `λ̃`, moved one stage later in time.
pub fn rollout_backward_with(
    ocp: &dyn Ocp,
    env: &dyn Env,
    reward: &dyn Reward,
    theta: &ParameterVector,
    record: &RolloutRecord,
    pcg: &PcgConfig,
    warm_start: bool,
) -> Result<RolloutGradient> {
    let xs_range = initial_state_range(theta)?;
    let (n_x, n_u) = (ocp.n_x(), ocp.n_u());
    let h = record.controls.len();
    if record.solutions.len() != h || record.thetas.len() != h || record.states.len() != h + 1 {
        return Err(Error::Contract("incomplete rollout record"));
    }
    let mut grad = DVector::zeros(theta.len());
    let mut cx: DVector<f64> = DVector::zeros(n_x);
    let mut steps = Vec::with_capacity(h);
    let mut next_adjoint: Option<DVector<f64>> = None;
    for step in (0..h).rev() {
        let x = &record.states[step];
        let u = &record.controls[step];
        let (rx, ru) = reward.gradient(&record.states[step + 1], u);
        let cx_next = cx + rx;
        let (env_x, env_u) = env.vjp(x, u, &cx_next);
        let cu = ru + env_u;

        let sol = &record.solutions[step];
        let mut dl_dz = DVector::zeros(sol.qp.n_z());
        dl_dz.rows_mut(n_x, n_u).copy_from(&cu);
        let guess = next_adjoint
            .as_ref()
            .filter(|_| warm_start)
            .map(|l| delay_blocks(l, n_x));
        let back = backward_vjp(ocp, sol, &record.thetas[step], &dl_dz, guess.as_ref(), pcg)
            .map_err(|e| Error::Rollout {
                step,
                source: Box::new(e),
            })?;
        let g = &back.grad_theta;
        for i in 0..theta.len() {
            if !xs_range.contains(&i) {
                grad[i] += g[i];
            }
        }
        cx = env_x + g.rows(xs_range.start, xs_range.len());
        next_adjoint = Some(back.lambda_tilde.clone());
        steps.push(back);
    }
    grad.rows_mut(xs_range.start, xs_range.len()).copy_from(&cx);
    steps.reverse();
    Ok(RolloutGradient { grad, steps })
}

/// Moves stacked `n`-blocks one position later, repeating the first block.
fn delay_blocks(l: &DVector<f64>, n: usize) -> DVector<f64> {
    let mut out = l.clone();
    let blocks = l.len() / n;
    for k in (1..blocks).rev() {
        out.rows_mut(k * n, n).copy_from(&l.rows((k - 1) * n, n));
    }
    out
}
