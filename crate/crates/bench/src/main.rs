use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dmpc_bench::generators::{
    gen_attitude, gen_cartpole, gen_linear, initial_il_weights, LinearProblemSpec, ATTITUDE_BATCH,
    ATTITUDE_HORIZON,
};
use dmpc_bench::output::{OutputDir, RunMetadata};
use dmpc_bench::study::{pcg_study, summarize};
use dmpc_bench::timing::time_harness;
use dmpc_bench::training::{
    attitude_problems, linear_problems, train_il, train_rl, IlConfig, RlConfig, TrainReport,
};
use dmpc_bench::BenchError;
use dmpc_core::models::{AffineQuadratic, ProblemFile};
use dmpc_core::{fd_check, sqp_solve, Ocp, PcgConfig, QuadraticReward, SqpConfig, Trajectory};
use nalgebra::DVector;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "dmpc",
    version,
    about = "Differentiable MPC solver and benchmarks"
)]
struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true, env = "DMPC_WORKERS", default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true, default_value = "dmpc-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an affine-quadratic problem file.
    Solve { problem: PathBuf },
    /// Compare analytic and finite-difference gradients of `½‖z‖²`.
    GradCheck {
        problem: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
    },
    /// Linear RL benchmark: training or timing.
    BenchLinear {
        #[arg(long, default_value = "problem1")]
        preset: String,
        #[arg(long, value_enum, default_value_t = Mode::Rl)]
        mode: Mode,
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
    /// Cart-pole imitation learning.
    BenchCartpoleIl {
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        demos: usize,
    },
    /// Rigid-body attitude RL.
    BenchAttitudeRl {
        #[arg(long, default_value_t = 50)]
        steps: usize,
        #[arg(long, default_value_t = 1e-2)]
        lr: f64,
        #[arg(long, default_value_t = 20)]
        episode_len: usize,
        #[arg(long, default_value_t = ATTITUDE_BATCH)]
        batch: usize,
    },
    /// Warm- versus cold-started PCG iteration counts on perturbed problems.
    PcgStudy {
        #[arg(long, num_args = 1.., default_values_t = [1e-4, 1e-8, 1e-12])]
        tol: Vec<f64>,
        #[arg(long, default_value = "problem1")]
        preset: String,
        /// Perturbed problems per instance.
        #[arg(long, default_value_t = 50)]
        len: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Rl,
    Timing,
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: usize,
    var: &'static str,
    index: usize,
    value: f64,
}

#[derive(Serialize)]
struct GradientRow {
    index: usize,
    segment: String,
    analytic: f64,
    numeric: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<PathBuf, BenchError> {
    if cli.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build_global()
            .map_err(|e| BenchError::Invalid(e.to_string()))?;
    }
    let meta =
        |command: &str, parameters: serde_json::Value, summary: serde_json::Value| RunMetadata {
            command: command.to_string(),
            seed: cli.seed,
            workers: rayon::current_num_threads(),
            parameters,
            summary,
            files: Vec::new(),
        };

    match &cli.command {
        Command::Solve { problem } => {
            let (ocp, theta) = load_problem(problem)?;
            let mut out = OutputDir::create(&cli.out)?;
            let z0 = Trajectory::zeros_for(&ocp);
            let sol = sqp_solve(
                &ocp,
                &theta,
                &z0,
                &DVector::zeros(ocp.n_lambda()),
                &SqpConfig::default(),
            )?;
            let mut rows = Vec::new();
            for (t, x) in sol.z.x.iter().enumerate() {
                rows.extend(x.iter().enumerate().map(|(index, &value)| TrajectoryRow {
                    t,
                    var: "x",
                    index,
                    value,
                }));
            }
            for (t, u) in sol.z.u.iter().enumerate() {
                rows.extend(u.iter().enumerate().map(|(index, &value)| TrajectoryRow {
                    t,
                    var: "u",
                    index,
                    value,
                }));
            }
            let n_x = ocp.n_x();
            for (i, &value) in sol.lambda.iter().enumerate() {
                rows.push(TrajectoryRow {
                    t: i / n_x,
                    var: "lambda",
                    index: i % n_x,
                    value,
                });
            }
            out.write_csv("solution.csv", &rows)?;
            let summary = json!({
                "sqp_iters": sol.sqp_iters,
                "pcg_iters": sol.pcg_iters(),
                "kkt_inf_norm": sol.kkt_inf_norm,
                "converged": sol.converged,
                "u0": sol.z.u[0].as_slice(),
            });
            out.finish(meta("solve", json!({ "problem": problem }), summary))
        }
        Command::GradCheck { problem, step } => {
            let (ocp, theta) = load_problem(problem)?;
            let mut out = OutputDir::create(&cli.out)?;
            let cfg = SqpConfig {
                max_sqp_iters: 50,
                pcg: PcgConfig::with_epsilon(1e-28),
                ..SqpConfig::default()
            };
            let z0 = Trajectory::zeros_for(&ocp);
            let report = fd_check(
                &ocp,
                &theta,
                &z0,
                &DVector::zeros(ocp.n_lambda()),
                &cfg,
                |z| {
                    let v = z.flatten();
                    (0.5 * v.norm_squared(), v)
                },
                *step,
            )?;
            let rows: Vec<GradientRow> = (0..theta.len())
                .map(|i| GradientRow {
                    index: i,
                    segment: theta
                        .segments()
                        .iter()
                        .find(|s| s.range.contains(&i))
                        .map_or_else(String::new, |s| s.name.clone()),
                    analytic: report.analytic[i],
                    numeric: report.numeric[i],
                })
                .collect();
            out.write_csv("gradient.csv", &rows)?;
            let summary = json!({
                "max_abs_err": report.max_abs_err,
                "max_rel_err": report.max_rel_err,
            });
            out.finish(meta(
                "grad-check",
                json!({ "problem": problem, "step": step }),
                summary,
            ))
        }
        Command::BenchLinear {
            preset,
            mode,
            steps,
            lr,
            repeats,
        } => {
            let spec = LinearProblemSpec::preset(preset, cli.seed)?;
            let instances = gen_linear(&spec)?;
            let problems = linear_problems(&instances);
            let reward = QuadraticReward {
                state_weight: 1.0,
                control_weight: 1.0,
            };
            let cfg = RlConfig::linear(*steps, *lr, spec.episode_len);
            let mut out = OutputDir::create(&cli.out)?;
            let params = json!({ "preset": preset, "spec": spec, "steps": steps, "lr": lr, "repeats": repeats });
            match mode {
                Mode::Rl => {
                    let report = train_rl(&problems, &reward, &vec![1.0; spec.n_x], &cfg);
                    finish_training(out, meta("bench-linear-rl", params, json!({})), report)
                }
                Mode::Timing => {
                    if *repeats == 0 {
                        return Err(BenchError::Invalid("repeats must be positive".into()));
                    }
                    let timing = time_harness(&problems, &reward, &cfg, *repeats)?;
                    out.write_csv("timing.csv", &timing.records)?;
                    out.write_csv("pcg_histogram.csv", &timing.histogram)?;
                    let summary =
                        json!({ "forward_s": timing.forward, "backward_s": timing.backward });
                    out.finish(meta("bench-linear-timing", params, summary))
                }
            }
        }
        Command::BenchCartpoleIl { epochs, lr, demos } => {
            let bundle = gen_cartpole(cli.seed, *demos)?;
            let out = OutputDir::create(&cli.out)?;
            let q0 = initial_il_weights(cli.seed);
            let report = train_il(&bundle, q0, &IlConfig::new(*epochs, *lr));
            let params = json!({ "epochs": epochs, "lr": lr, "demos": demos, "q_init": q0 });
            finish_training(out, meta("bench-cartpole-il", params, json!({})), report)
        }
        Command::BenchAttitudeRl {
            steps,
            lr,
            episode_len,
            batch,
        } => {
            let instances = gen_attitude(cli.seed, *batch, ATTITUDE_HORIZON)?;
            let out = OutputDir::create(&cli.out)?;
            let problems = attitude_problems(&instances);
            let reward = QuadraticReward {
                state_weight: 0.1,
                control_weight: 1.0,
            };
            let cfg = RlConfig::attitude(*steps, *lr, *episode_len);
            let report = train_rl(&problems, &reward, &[1.0; 6], &cfg);
            let params =
                json!({ "steps": steps, "lr": lr, "episode_len": episode_len, "batch": batch });
            finish_training(out, meta("bench-attitude-rl", params, json!({})), report)
        }
        Command::PcgStudy { tol, preset, len } => {
            let spec = LinearProblemSpec::preset(preset, cli.seed)?;
            let instances = gen_linear(&spec)?;
            let problems = linear_problems(&instances);
            let rows = pcg_study(&problems, tol, *len, cli.seed)?;
            let summary = summarize(&rows);
            let mut out = OutputDir::create(&cli.out)?;
            out.write_csv("solves.csv", &rows)?;
            out.write_csv("summary.csv", &summary)?;
            let params = json!({ "tol": tol, "preset": preset, "len": len });
            out.finish(meta("pcg-study", params, json!(summary)))
        }
    }
}

fn load_problem(path: &Path) -> Result<(AffineQuadratic, dmpc_core::ParameterVector), BenchError> {
    let text = fs::read_to_string(path)
        .map_err(|e| BenchError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    let file = ProblemFile::from_json(&text)?;
    Ok(AffineQuadratic::from_file(&file)?)
}

/// Writes the epoch series and the final parameters. A failed run still writes
/// its partial report before returning the solver error code.
fn finish_training(
    mut out: OutputDir,
    mut meta: RunMetadata,
    report: TrainReport,
) -> Result<PathBuf, BenchError> {
    out.write_csv("epochs.csv", &report.records)?;
    meta.summary = json!({
        "first": report.first(),
        "last": report.last(),
        "theta": report.theta,
        "failed": report.failed,
        "failure": report.failure,
    });
    let failure = report.failure.clone();
    let path = out.finish(meta)?;
    match failure {
        Some(msg) => Err(BenchError::Training(msg)),
        None => Ok(path),
    }
}
