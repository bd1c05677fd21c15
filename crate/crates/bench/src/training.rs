//! Imitation learning on cart-pole demonstrations and reinforcement learning
//! through closed-loop rollouts.

use std::time::Instant;

use dmpc_core::{
    backward_vjp, rollout, rollout_backward_with, sqp_solve, Env, Ocp, ParameterVector, PcgConfig,
    Reward, RolloutConfig, SqpConfig,
};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::generators::{
    read_segments, write_segments, AttitudeInstance, CartPoleBundle, LinearInstance,
};
use crate::BenchError;

/// Learnable cost weights are kept at or above this value.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// IL: mean imitation loss. RL: batch-mean total reward.
    pub objective: f64,
    /// `‖θ − θ*‖₂` when the target is known.
    pub model_distance: Option<f64>,
    /// RL only: batch-mean `‖x_H‖₂`.
    pub terminal_state_norm: Option<f64>,
    pub grad_norm: f64,
    pub wall_time_s: f64,
    pub sqp_iters: usize,
    pub pcg_iters: usize,
    /// Instances left out of this epoch after a solver failure.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// One record per evaluated parameter: index `k` is measured after `k`
    /// updates.
    pub records: Vec<EpochRecord>,
    pub theta: Vec<f64>,
    pub failed: bool,
    pub failure: Option<String>,
}

impl TrainReport {
    fn new(theta: &[f64]) -> Self {
        TrainReport {
            records: Vec::new(),
            theta: theta.to_vec(),
            failed: false,
            failure: None,
        }
    }

    fn fail(mut self, msg: String) -> Self {
        self.failed = true;
        self.failure = Some(msg);
        self
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

fn floor_weights(w: &mut [f64]) {
    for v in w {
        *v = v.max(WEIGHT_FLOOR);
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone)]
pub struct IlConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Solver for the learner; warm-started from each demonstration.
    pub sqp: SqpConfig,
}

impl IlConfig {
    /// Five SQP iterations, as in the benchmark setup.
    pub fn new(epochs: usize, lr: f64) -> Self {
        IlConfig {
            epochs,
            lr,
            sqp: SqpConfig {
                max_sqp_iters: 5,
                ..SqpConfig::default()
            },
        }
    }
}

struct IlSample {
    loss: f64,
    grad_q: Vec<f64>,
    sqp_iters: usize,
    pcg_iters: usize,
}

/// Loss `‖û − u(θ)‖²` of one demonstration and its gradient in the state
/// weights.
fn il_sample(
    bundle: &CartPoleBundle,
    q: &[f64; 4],
    i: usize,
    sqp: &SqpConfig,
) -> Result<IlSample, BenchError> {
    let demo = &bundle.demos[i];
    let theta = bundle.theta(q, i);
    let sol = sqp_solve(&bundle.ocp, &theta, &demo.z, &demo.lambda, sqp)?;
    let ocp: &dyn Ocp = &bundle.ocp;
    let (n_x, n_u) = (ocp.n_x(), ocp.n_u());
    let mut dl_dz = DVector::zeros(ocp.n_z());
    let mut loss = 0.0;
    for (t, (u, u_hat)) in sol.z.u.iter().zip(&demo.z.u).enumerate() {
        let d = u - u_hat;
        loss += d.norm_squared();
        dl_dz
            .rows_mut(t * (n_x + n_u) + n_x, n_u)
            .copy_from(&(d * 2.0));
    }
    let back = backward_vjp(&bundle.ocp, &sol, &theta, &dl_dz, None, &sqp.pcg)?;
    Ok(IlSample {
        loss,
        grad_q: read_segments(&theta, &["Q"], &back.grad_theta)?,
        sqp_iters: sol.sqp_iters,
        pcg_iters: sol.pcg_iters() + back.pcg_iters,
    })
}

/// Mean imitation loss and its gradient at `q`, with iteration totals.
pub fn il_objective(
    bundle: &CartPoleBundle,
    q: &[f64; 4],
    sqp: &SqpConfig,
) -> Result<(f64, Vec<f64>, usize, usize), BenchError> {
    let samples = (0..bundle.demos.len())
        .into_par_iter()
        .map(|i| il_sample(bundle, q, i, sqp))
        .collect::<Result<Vec<_>, _>>()?;
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; 4];
    let (mut sqp_iters, mut pcg_iters) = (0, 0);
    for s in &samples {
        loss += s.loss / n;
        for (g, v) in grad.iter_mut().zip(&s.grad_q) {
            *g += v / n;
        }
        sqp_iters += s.sqp_iters;
        pcg_iters += s.pcg_iters;
    }
    Ok((loss, grad, sqp_iters, pcg_iters))
}

/// Full-batch gradient descent on the state weights `Q`.
pub fn train_il(bundle: &CartPoleBundle, q_init: [f64; 4], cfg: &IlConfig) -> TrainReport {
    let mut q = q_init;
    let mut report = TrainReport::new(&q);
    for epoch in 0..=cfg.epochs {
        let start = Instant::now();
        let (loss, grad, sqp_iters, pcg_iters) = match il_objective(bundle, &q, &cfg.sqp) {
            Ok(v) => v,
            Err(e) => return report.fail(format!("epoch {epoch}: {e}")),
        };
        report.records.push(EpochRecord {
            epoch,
            objective: loss,
            model_distance: Some(distance(&q, &bundle.theta_star)),
            terminal_state_norm: None,
            grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            wall_time_s: start.elapsed().as_secs_f64(),
            sqp_iters,
            pcg_iters,
            excluded: 0,
        });
        if epoch < cfg.epochs {
            for (v, g) in q.iter_mut().zip(&grad) {
                *v -= cfg.lr * g;
            }
            floor_weights(&mut q);
        }
        report.theta = q.to_vec();
        if loss.is_nan() {
            return report.fail(format!("epoch {epoch}: non-finite loss"));
        }
    }
    report
}

/// One closed-loop task of an RL batch.
pub struct RlProblem<'a> {
    pub ocp: &'a dyn Ocp,
    pub env: &'a dyn Env,
    pub theta: ParameterVector,
    pub x0: DVector<f64>,
}

pub fn linear_problems(instances: &[LinearInstance]) -> Vec<RlProblem<'_>> {
    instances
        .iter()
        .map(|i| RlProblem {
            ocp: &i.ocp,
            env: &i.env,
            theta: i.theta.clone(),
            x0: i.x0.clone(),
        })
        .collect()
}

pub fn attitude_problems(instances: &[AttitudeInstance]) -> Vec<RlProblem<'_>> {
    instances
        .iter()
        .map(|i| RlProblem {
            ocp: &i.ocp,
            env: &i.ocp,
            theta: i.theta.clone(),
            x0: i.x0.clone(),
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RlConfig {
    pub steps: usize,
    pub lr: f64,
    /// Segment names shared by all problems and updated by training.
    pub learnable: Vec<String>,
    pub rollout: RolloutConfig,
    pub backward_pcg: PcgConfig,
}

impl RlConfig {
    /// Linear benchmark: one QP solve per step, no line search, `θ = diag Q`.
    pub fn linear(steps: usize, lr: f64, episode_len: usize) -> Self {
        let sqp = SqpConfig::fixed_iterations(1);
        RlConfig {
            steps,
            lr,
            learnable: vec!["state_weights".into()],
            backward_pcg: sqp.pcg,
            rollout: RolloutConfig {
                steps: episode_len,
                sqp,
                warm_start: true,
            },
        }
    }

    /// Attitude benchmark: `θ = (diag Q, diag R)`, at most five SQP
    /// iterations per warm-started solve.
    pub fn attitude(steps: usize, lr: f64, episode_len: usize) -> Self {
        let sqp = SqpConfig {
            max_sqp_iters: 5,
            ..SqpConfig::default()
        };
        RlConfig {
            steps,
            lr,
            learnable: vec!["Q".into(), "R".into()],
            backward_pcg: sqp.pcg,
            rollout: RolloutConfig {
                steps: episode_len,
                sqp,
                warm_start: true,
            },
        }
    }
}

struct Episode {
    total_reward: f64,
    terminal_norm: f64,
    grad: Vec<f64>,
    sqp_iters: usize,
    pcg_iters: usize,
}

fn episode(
    p: &RlProblem,
    reward: &dyn Reward,
    w: &[f64],
    cfg: &RlConfig,
) -> Result<Episode, BenchError> {
    let names: Vec<&str> = cfg.learnable.iter().map(String::as_str).collect();
    let mut theta = p.theta.clone();
    write_segments(&mut theta, &names, w)?;
    let record = rollout(p.ocp, p.env, reward, &theta, &p.x0, &cfg.rollout)?;
    let back = rollout_backward_with(
        p.ocp,
        p.env,
        reward,
        &theta,
        &record,
        &cfg.backward_pcg,
        false,
    )?;
    Ok(Episode {
        total_reward: record.total_reward(),
        terminal_norm: record.states.last().map_or(0.0, |x| x.norm()),
        grad: read_segments(&theta, &names, &back.grad)?,
        sqp_iters: record.solutions.iter().map(|s| s.sqp_iters).sum(),
        pcg_iters: record
            .solutions
            .iter()
            .map(|s| s.pcg_iters())
            .sum::<usize>()
            + back.steps.iter().map(|b| b.pcg_iters).sum::<usize>(),
    })
}

/// Gradient ascent on the batch-mean total reward. Problems whose rollout
/// fails are left out of that step's average.
pub fn train_rl(
    problems: &[RlProblem],
    reward: &dyn Reward,
    w_init: &[f64],
    cfg: &RlConfig,
) -> TrainReport {
    let mut w = w_init.to_vec();
    let mut report = TrainReport::new(&w);
    for step in 0..=cfg.steps {
        let start = Instant::now();
        let results: Vec<Result<Episode, BenchError>> = problems
            .par_iter()
            .map(|p| episode(p, reward, &w, cfg))
            .collect();
        let ok: Vec<&Episode> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        if ok.is_empty() {
            let msg = results
                .into_iter()
                .find_map(|r| r.err())
                .map_or_else(|| "empty batch".to_string(), |e| e.to_string());
            return report.fail(format!("step {step}: every rollout failed: {msg}"));
        }
        let n = ok.len() as f64;
        let mut grad = vec![0.0; w.len()];
        let (mut total, mut terminal) = (0.0, 0.0);
        for e in &ok {
            total += e.total_reward / n;
            terminal += e.terminal_norm / n;
            for (g, v) in grad.iter_mut().zip(&e.grad) {
                *g += v / n;
            }
        }
        report.records.push(EpochRecord {
            epoch: step,
            objective: total,
            model_distance: None,
            terminal_state_norm: Some(terminal),
            grad_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            wall_time_s: start.elapsed().as_secs_f64(),
            sqp_iters: ok.iter().map(|e| e.sqp_iters).sum(),
            pcg_iters: ok.iter().map(|e| e.pcg_iters).sum(),
            excluded: problems.len() - ok.len(),
        });
        if step < cfg.steps {
            for (v, g) in w.iter_mut().zip(&grad) {
                *v += cfg.lr * g;
            }
            floor_weights(&mut w);
        }
        report.theta = w.clone();
    }
    report
}
