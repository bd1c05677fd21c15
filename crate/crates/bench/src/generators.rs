//! Seeded problem generators for the linear RL, cart-pole IL and attitude RL
//! benchmarks.

use dmpc_core::models::{AffineQuadratic, Attitude, CartPole, CartPoleParams};
use dmpc_core::{sqp_solve, AffineEnv, Ocp, ParameterVector, PcgConfig, SqpConfig, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::BenchError;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sizes of a linear RL benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearProblemSpec {
    pub n_x: usize,
    pub n_u: usize,
    pub horizon: usize,
    pub episode_len: usize,
    pub batch: usize,
    pub seed: u64,
}

/// `(n_x, n_u, T, H, B)` of the six named presets.
pub const LINEAR_PRESETS: [(usize, usize, usize, usize, usize); 6] = [
    (8, 4, 40, 50, 64),
    (8, 4, 30, 50, 16),
    (8, 4, 30, 50, 64),
    (8, 4, 30, 50, 256),
    (16, 8, 30, 50, 16),
    (16, 8, 30, 50, 64),
];

impl LinearProblemSpec {
    /// `problem1` … `problem6`.
    pub fn preset(name: &str, seed: u64) -> Result<Self, BenchError> {
        let k: usize = name
            .strip_prefix("problem")
            .and_then(|k| k.parse().ok())
            .filter(|k| (1..=LINEAR_PRESETS.len()).contains(k))
            .ok_or_else(|| BenchError::Invalid(format!("unknown preset {name:?}")))?;
        let (n_x, n_u, horizon, episode_len, batch) = LINEAR_PRESETS[k - 1];
        Ok(LinearProblemSpec {
            n_x,
            n_u,
            horizon,
            episode_len,
            batch,
            seed,
        })
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if [
            self.n_x,
            self.n_u,
            self.horizon,
            self.episode_len,
            self.batch,
        ]
        .contains(&0)
        {
            return Err(BenchError::Invalid("problem sizes must be positive".into()));
        }
        Ok(())
    }
}

/// One environment of the linear benchmark. The controller's model matches the
/// environment.
#[derive(Debug, Clone)]
pub struct LinearInstance {
    pub ocp: AffineQuadratic,
    pub theta: ParameterVector,
    pub env: AffineEnv,
    pub x0: DVector<f64>,
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Random stable affine systems with costs `xᵀ diag(θ) x + ‖u‖²`, θ = 1.
///
/// `A = I + 0.1 ΔA` is rescaled to spectral radius at most 0.99, `B` is
/// standard normal, `b ~ N(0, 1e-4 I)` and `x_0 ~ N(0, 25 I)`.
pub fn gen_linear(spec: &LinearProblemSpec) -> Result<Vec<LinearInstance>, BenchError> {
    spec.validate()?;
    let mut rng = seeded(spec.seed);
    let (n_x, n_u) = (spec.n_x, spec.n_u);
    let mut out = Vec::with_capacity(spec.batch);
    for _ in 0..spec.batch {
        let mut a =
            DMatrix::identity(n_x, n_x) + DMatrix::from_fn(n_x, n_x, |_, _| 0.1 * normal(&mut rng));
        let rho = spectral_radius(&a);
        if rho > 0.99 {
            a *= 0.99 / rho;
        }
        let b = DMatrix::from_fn(n_x, n_u, |_, _| normal(&mut rng));
        let offset = DVector::from_fn(n_x, |_, _| 1e-2 * normal(&mut rng));
        let x0 = DVector::from_fn(n_x, |_, _| 5.0 * normal(&mut rng));

        let ocp = AffineQuadratic::with_cost_scale(n_x, n_u, spec.horizon, 2.0);
        let theta = ocp.parameters(
            &vec![1.0; n_x],
            &vec![1.0; n_u],
            a.transpose().as_slice(),
            b.transpose().as_slice(),
            offset.as_slice(),
            x0.as_slice(),
        );
        out.push(LinearInstance {
            ocp,
            theta,
            env: AffineEnv { a, b, offset },
            x0,
        });
    }
    Ok(out)
}

pub const CARTPOLE_THETA_STAR: [f64; 4] = [1.0, 2.0, 1.5, 1.0];
pub const CARTPOLE_R: f64 = 0.05;
pub const CARTPOLE_HORIZON: usize = 20;

/// An expert solve from one initial condition.
#[derive(Debug, Clone)]
pub struct Demonstration {
    pub x0: DVector<f64>,
    pub z: Trajectory,
    pub lambda: DVector<f64>,
}

impl Demonstration {
    pub fn controls(&self) -> DVector<f64> {
        DVector::from_iterator(self.z.u.len(), self.z.u.iter().map(|u| u[0]))
    }
}

#[derive(Debug, Clone)]
pub struct CartPoleBundle {
    pub ocp: CartPole,
    pub theta_star: [f64; 4],
    pub r: f64,
    pub demos: Vec<Demonstration>,
}

impl CartPoleBundle {
    /// θ for demonstration `i` with state weights `q`.
    pub fn theta(&self, q: &[f64; 4], i: usize) -> ParameterVector {
        let x0 = &self.demos[i].x0;
        self.ocp
            .parameters(q, self.r, &[x0[0], x0[1], x0[2], x0[3]])
    }
}

/// Configuration used to produce expert demonstrations: solved until the step
/// falls below tolerance, with a generous iteration cap and near-exact linear
/// solves so that the demonstrations are stationary for the learner.
pub fn expert_config() -> SqpConfig {
    SqpConfig {
        max_sqp_iters: 100,
        pcg: PcgConfig::with_epsilon(1e-24),
        convergence_tol: 1e-10,
        ..SqpConfig::default()
    }
}

/// Expert demonstrations from `n_demos` random initial conditions.
pub fn gen_cartpole(seed: u64, n_demos: usize) -> Result<CartPoleBundle, BenchError> {
    if n_demos == 0 {
        return Err(BenchError::Invalid(
            "need at least one demonstration".into(),
        ));
    }
    let ocp = CartPole::new(CARTPOLE_HORIZON, CartPoleParams::default());
    let mut rng = seeded(seed);
    let starts: Vec<[f64; 4]> = (0..n_demos)
        .map(|_| {
            [
                rng.random_range(-0.5..=0.5),
                rng.random_range(-0.5..=0.5),
                rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI),
                rng.random_range(-1.0..=1.0),
            ]
        })
        .collect();
    let cfg = expert_config();
    let mut demos = Vec::with_capacity(n_demos);
    for (i, x0) in starts.iter().enumerate() {
        let theta = ocp.parameters(&CARTPOLE_THETA_STAR, CARTPOLE_R, x0);
        let mut z0 = Trajectory::zeros_for(&ocp);
        for x in &mut z0.x {
            x.copy_from_slice(x0);
        }
        let sol = sqp_solve(&ocp, &theta, &z0, &DVector::zeros(ocp.n_lambda()), &cfg)
            .map_err(|e| BenchError::Generation(format!("expert {i}: {e}")))?;
        let th = theta.to_dvector();
        let worst = (0..ocp.horizon())
            .map(|t| {
                ocp.dynamics_residual(t, &sol.z.x[t + 1], &sol.z.x[t], &sol.z.u[t], &th)
                    .amax()
            })
            .fold(0.0, f64::max);
        if worst > 1e-6 {
            return Err(BenchError::Generation(format!(
                "expert {i}: dynamics residual {worst:e}"
            )));
        }
        demos.push(Demonstration {
            x0: DVector::from_column_slice(x0),
            z: sol.z,
            lambda: sol.lambda,
        });
    }
    Ok(CartPoleBundle {
        ocp,
        theta_star: CARTPOLE_THETA_STAR,
        r: CARTPOLE_R,
        demos,
    })
}

/// Learner's initial state weights, `U([0, 1])⁴`. Drawn from a separate
/// stream so they do not depend on the number of demonstrations.
pub fn initial_il_weights(seed: u64) -> [f64; 4] {
    let mut rng = seeded(seed);
    rng.set_stream(1);
    [0; 4].map(|_| rng.random_range(0.0..=1.0))
}

pub const ATTITUDE_DT: f64 = 0.1;
pub const ATTITUDE_HORIZON: usize = 25;
pub const ATTITUDE_BATCH: usize = 16;

#[derive(Debug, Clone)]
pub struct AttitudeInstance {
    pub ocp: Attitude,
    pub theta: ParameterVector,
    pub x0: DVector<f64>,
}

/// Rigid bodies with `diag J ~ U[0.1, 10]³`, `ω_0 ~ U[−1, 1]³` and
/// `Q = R = I`.
pub fn gen_attitude(
    seed: u64,
    batch: usize,
    horizon: usize,
) -> Result<Vec<AttitudeInstance>, BenchError> {
    if batch == 0 || horizon == 0 {
        return Err(BenchError::Invalid(
            "batch and horizon must be positive".into(),
        ));
    }
    let mut rng = seeded(seed);
    Ok((0..batch)
        .map(|_| {
            let inertia = [0; 3].map(|_| rng.random_range(0.1..=10.0));
            let w0 = [0; 3].map(|_| rng.random_range(-1.0..=1.0));
            let ocp = Attitude::new(inertia, ATTITUDE_DT, horizon);
            AttitudeInstance {
                theta: ocp.parameters(&[1.0; 3], &[1.0; 3], &w0),
                ocp,
                x0: DVector::from_column_slice(&w0),
            }
        })
        .collect())
}

/// Copies `values` into the listed segments of `theta`, in order.
pub fn write_segments(
    theta: &mut ParameterVector,
    names: &[&str],
    values: &[f64],
) -> Result<(), BenchError> {
    let mut offset = 0;
    for name in names {
        let range = segment_range(theta, name)?;
        let n = range.len();
        let chunk = values
            .get(offset..offset + n)
            .ok_or_else(|| BenchError::Invalid("too few learnable values".into()))?;
        for (i, v) in range.zip(chunk) {
            theta.set(i, *v);
        }
        offset += n;
    }
    if offset != values.len() {
        return Err(BenchError::Invalid("too many learnable values".into()));
    }
    Ok(())
}

/// Gathers the listed segments of a θ-sized vector, in order.
pub fn read_segments(
    theta: &ParameterVector,
    names: &[&str],
    v: &DVector<f64>,
) -> Result<Vec<f64>, BenchError> {
    let mut out = Vec::new();
    for name in names {
        out.extend(segment_range(theta, name)?.map(|i| v[i]));
    }
    Ok(out)
}

fn segment_range(
    theta: &ParameterVector,
    name: &str,
) -> Result<std::ops::Range<usize>, BenchError> {
    theta
        .segment_by_name(name)
        .map(|s| s.range.clone())
        .ok_or_else(|| BenchError::Invalid(format!("θ has no segment {name:?}")))
}
