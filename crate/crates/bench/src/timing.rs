//! Wall-clock timing of batched forward rollouts and their backward passes.

use std::collections::BTreeMap;
use std::time::Instant;

use dmpc_core::{rollout, rollout_backward_with, QuadraticReward, RolloutRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::training::{RlConfig, RlProblem};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub repeat: usize,
    pub forward_s: f64,
    pub backward_s: f64,
    pub sqp_iters: usize,
    pub forward_pcg_iters: usize,
    pub backward_pcg_iters: usize,
}

/// Median, mean and twice the sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median: f64,
    pub mean: f64,
    pub two_sigma: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats {
                median: f64::NAN,
                mean: f64::NAN,
                two_sigma: f64::NAN,
            };
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Stats {
            median,
            mean,
            two_sigma: 2.0 * var.sqrt(),
        }
    }
}

/// Number of PCG solves that took a given number of iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub pass: String,
    pub pcg_iters: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub records: Vec<TimingRecord>,
    pub histogram: Vec<HistogramRow>,
    pub forward: Stats,
    pub backward: Stats,
}

/// Runs the batch of rollouts and their gradients `repeats` times with the
/// parameters already in each problem's θ.
pub fn time_harness(
    problems: &[RlProblem],
    reward: &QuadraticReward,
    cfg: &RlConfig,
    repeats: usize,
) -> Result<TimingReport, BenchError> {
    let mut records = Vec::with_capacity(repeats);
    let mut forward_hist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut backward_hist: BTreeMap<usize, usize> = BTreeMap::new();
    for repeat in 0..repeats {
        let start = Instant::now();
        let rollouts: Vec<RolloutRecord> = problems
            .par_iter()
            .map(|p| rollout(p.ocp, p.env, reward, &p.theta, &p.x0, &cfg.rollout))
            .collect::<Result<_, _>>()?;
        let forward_s = start.elapsed().as_secs_f64();

        let start = Instant::now();
        let grads = problems
            .par_iter()
            .zip(&rollouts)
            .map(|(p, r)| {
                rollout_backward_with(p.ocp, p.env, reward, &p.theta, r, &cfg.backward_pcg, true)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let backward_s = start.elapsed().as_secs_f64();

        let mut rec = TimingRecord {
            repeat,
            forward_s,
            backward_s,
            sqp_iters: 0,
            forward_pcg_iters: 0,
            backward_pcg_iters: 0,
        };
        for sol in rollouts.iter().flat_map(|r| &r.solutions) {
            rec.sqp_iters += sol.sqp_iters;
            for h in &sol.history {
                rec.forward_pcg_iters += h.pcg_iters;
                *forward_hist.entry(h.pcg_iters).or_default() += 1;
            }
        }
        for b in grads.iter().flat_map(|g| &g.steps) {
            rec.backward_pcg_iters += b.pcg_iters;
            *backward_hist.entry(b.pcg_iters).or_default() += 1;
        }
        records.push(rec);
    }
    let histogram = [("forward", forward_hist), ("backward", backward_hist)]
        .into_iter()
        .flat_map(|(pass, h)| {
            h.into_iter().map(move |(pcg_iters, count)| HistogramRow {
                pass: pass.to_string(),
                pcg_iters,
                count,
            })
        })
        .collect();
    let forward = Stats::of(&records.iter().map(|r| r.forward_s).collect::<Vec<_>>());
    let backward = Stats::of(&records.iter().map(|r| r.backward_s).collect::<Vec<_>>());
    Ok(TimingReport {
        records,
        histogram,
        forward,
        backward,
    })
}
