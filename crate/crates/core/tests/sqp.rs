mod common;

use common::{normal_vec, random_affine, random_qp, rel_err, rng};
use dmpc_core::models::{AffineQuadratic, CartPole, CartPoleParams, LinearQuadratic};
use dmpc_core::oracle::{dense_kkt_solve, riccati_lqr};
use dmpc_core::{
    line_search, linearize, merit, policy_first_control, sqp_solve, CostEval, DynamicsEval, Error,
    Ocp, PcgConfig, SqpConfig, Trajectory,
};
use nalgebra::DVector;
use rand::Rng;

fn one_step_cfg() -> SqpConfig {
    // Tight PCG tolerance: the absolute exit test at 1e-12 leaves relative
    // errors near 1e-7 on these instances.
    SqpConfig {
        pcg: PcgConfig::with_epsilon(1e-16),
        ..SqpConfig::fixed_iterations(1)
    }
}

#[test]
fn one_iteration_reproduces_dense_kkt_solution() {
    for seed in 0..10 {
        let explicit = seed % 2 == 0;
        let qp = random_qp(seed, 6, 3, 15, explicit);
        let ocp = LinearQuadratic::new(qp.clone());
        let res = sqp_solve(
            &ocp,
            &ocp.parameters(),
            &Trajectory::zeros(6, 3, 15),
            &DVector::zeros(96),
            &one_step_cfg(),
        )
        .unwrap();
        let (z, l) = dense_kkt_solve(&qp, &qp.cost_gradient(), &qp.constraint_rhs()).unwrap();
        assert!(rel_err(&res.z.flatten(), &z) <= 1e-8);
        assert!(rel_err(&res.lambda, &l) <= 1e-8);
        assert!(res.kkt_inf_norm <= 1e-6, "{}", res.kkt_inf_norm);
        // First control from the dense solution.
        let u0 = z.rows(6, 3).into_owned();
        assert!(rel_err(&policy_first_control(&res), &u0) <= 1e-7);
    }
}

#[test]
fn matches_riccati_recursion() {
    for seed in 0..10 {
        let qp = random_qp(100 + seed, 8, 4, 30, true);
        let ocp = LinearQuadratic::new(qp.clone());
        let res = sqp_solve(
            &ocp,
            &ocp.parameters(),
            &Trajectory::zeros(8, 4, 30),
            &DVector::zeros(248),
            &one_step_cfg(),
        )
        .unwrap();
        let r = riccati_lqr(&qp).unwrap();
        assert!(rel_err(&res.z.flatten(), &r.flatten()) <= 1e-8);
    }
}

#[test]
fn exact_start_is_a_fixed_point() {
    let (ocp, theta) = random_affine(5, 4, 2, 10);
    let cfg = SqpConfig {
        pcg: PcgConfig::with_epsilon(1e-20),
        ..Default::default()
    };
    let first = sqp_solve(
        &ocp,
        &theta,
        &Trajectory::zeros(4, 2, 10),
        &DVector::zeros(44),
        &cfg,
    )
    .unwrap();
    let again = sqp_solve(&ocp, &theta, &first.z, &first.lambda, &SqpConfig::default()).unwrap();
    assert_eq!(again.sqp_iters, 1);
    assert!(again.converged);
    assert!(again.history[0].step_norm <= 1e-8);
    assert!(again.z.max_abs_diff(&first.z) <= 1e-10);
}

#[test]
fn full_step_accepted_on_convex_problems() {
    let cfg = SqpConfig::default();
    for seed in 0..20 {
        let (ocp, theta) = random_affine(200 + seed, 4, 2, 8);
        let mut r = rng(300 + seed);
        // Infeasible starting point.
        let z_old =
            Trajectory::from_flat(4, 2, 8, normal_vec(&mut r, ocp.n_z(), 1.0).as_slice()).unwrap();
        let qp = linearize(&ocp, &z_old, &theta, 1e-6).unwrap();
        let (z, l) = dense_kkt_solve(&qp, &qp.cost_gradient(), &qp.constraint_rhs()).unwrap();
        let z_qp = Trajectory::from_flat(4, 2, 8, z.as_slice()).unwrap();
        let ls = line_search(&ocp, &qp, &z_old, &z_qp, &l, &theta, &cfg, 1.0).unwrap();
        assert_eq!(ls.alpha, 1.0, "seed {seed}: {:?}", ls.decrease);
        assert!(ls.decrease[0] < 0.0);
        assert!(ls.merit_after < ls.merit_before);
    }
}

#[test]
fn merit_matches_direct_evaluation() {
    let (ocp, theta) = random_affine(7, 3, 2, 5);
    let th = theta.to_dvector();
    let a = ocp.a_matrix(&th);
    let b = ocp.b_matrix(&th);
    let qw = &th.as_slice()[0..3];
    let rw = &th.as_slice()[3..5];
    let off = th.rows(3 + 2 + 9 + 6, 3).into_owned();
    let xs = th.rows(3 + 2 + 9 + 6 + 3, 3).into_owned();
    let mut r = rng(8);
    for _ in 0..10 {
        let z =
            Trajectory::from_flat(3, 2, 5, normal_vec(&mut r, ocp.n_z(), 1.0).as_slice()).unwrap();
        let mu = r.random_range(0.0..5.0);
        let mut cost = 0.0;
        for x in &z.x {
            cost += 0.5 * (0..3).map(|i| qw[i] * x[i] * x[i]).sum::<f64>();
        }
        for u in &z.u {
            cost += 0.5 * (0..2).map(|i| rw[i] * u[i] * u[i]).sum::<f64>();
        }
        let mut viol = (&z.x[0] - &xs).lp_norm(1);
        for t in 0..5 {
            viol += (&z.x[t + 1] - &a * &z.x[t] - &b * &z.u[t] - &off).lp_norm(1);
        }
        let m = merit(&ocp, &z, mu, &theta).unwrap();
        assert!((m - (cost + mu * viol)).abs() <= 1e-12 * m.abs().max(1.0));
    }
}

#[test]
fn zero_gradient_feasible_instance_has_zero_control() {
    let ocp = AffineQuadratic::new(2, 1, 4);
    let theta = ocp.parameters(
        &[1.0, 1.0],
        &[1.0],
        &[0.9, 0.1, 0.0, 0.9],
        &[0.0, 1.0],
        &[0.0; 2],
        &[0.0; 2],
    );
    let res = sqp_solve(
        &ocp,
        &theta,
        &Trajectory::zeros(2, 1, 4),
        &DVector::zeros(10),
        &SqpConfig::default(),
    )
    .unwrap();
    assert_eq!(policy_first_control(&res), DVector::zeros(1));
}

#[test]
fn cartpole_kkt_residual_decreases() {
    let cp = CartPole::new(20, CartPoleParams::default());
    let mut r = rng(9);
    for _ in 0..5 {
        let xs = [
            r.random_range(-0.5..0.5),
            r.random_range(-0.5..0.5),
            r.random_range(-1.0..1.0),
            r.random_range(-1.0..1.0),
        ];
        let theta = cp.parameters(&[1.0, 2.0, 1.5, 1.0], 0.05, &xs);
        let mut z0 = Trajectory::zeros(4, 1, 20);
        for x in &mut z0.x {
            x.copy_from_slice(&xs);
        }
        let cfg = SqpConfig {
            max_sqp_iters: 5,
            pcg: PcgConfig::with_epsilon(1e-16),
            ..Default::default()
        };
        let res = sqp_solve(&cp, &theta, &z0, &DVector::zeros(84), &cfg).unwrap();
        let mut prev = res.initial_kkt_inf_norm;
        for h in &res.history {
            if h.sufficient_decrease {
                assert!(h.kkt_inf_norm <= prev, "{:?}", res.history);
            }
            prev = h.kkt_inf_norm;
        }
        assert!(res.kkt_inf_norm < res.initial_kkt_inf_norm);
        // Without constraint curvature in the QP Hessian the rate is linear,
        // so the threshold is checked on the run to convergence.
        let full = SqpConfig {
            max_sqp_iters: 50,
            ..cfg
        };
        let res = sqp_solve(&cp, &theta, &res.z, &res.lambda, &full).unwrap();
        assert!(res.kkt_inf_norm <= 1e-4, "{:?}", res.history);
    }
}

#[test]
fn merit_never_increases_on_accepted_steps() {
    let cp = CartPole::new(15, CartPoleParams::default());
    let mut r = rng(10);
    for _ in 0..10 {
        let xs = [
            0.0,
            0.0,
            r.random_range(-3.0..3.0),
            r.random_range(-1.0..1.0),
        ];
        let theta = cp.parameters(&[1.0, 2.0, 1.5, 1.0], 0.05, &xs);
        let cfg = SqpConfig {
            max_sqp_iters: 15,
            ..Default::default()
        };
        let res = sqp_solve(
            &cp,
            &theta,
            &Trajectory::zeros(4, 1, 15),
            &DVector::zeros(64),
            &cfg,
        )
        .unwrap();
        for h in &res.history {
            if h.sufficient_decrease {
                assert!(h.merit_after <= h.merit_before);
            }
        }
    }
}

#[test]
fn warm_start_never_worsens_first_iteration() {
    let cp = CartPole::new(20, CartPoleParams::default());
    let theta = cp.parameters(&[1.0, 2.0, 1.5, 1.0], 0.05, &[0.2, 0.0, 0.6, 0.1]);
    let cfg = SqpConfig::default();
    let zero = (Trajectory::zeros(4, 1, 20), DVector::zeros(84));
    let first = sqp_solve(&cp, &theta, &zero.0, &zero.1, &cfg).unwrap();
    let cold = sqp_solve(
        &cp,
        &theta,
        &zero.0,
        &zero.1,
        &SqpConfig {
            max_sqp_iters: 1,
            ..cfg.clone()
        },
    )
    .unwrap();
    let warm = sqp_solve(
        &cp,
        &theta,
        &first.z,
        &first.lambda,
        &SqpConfig {
            max_sqp_iters: 1,
            ..cfg
        },
    )
    .unwrap();
    assert!(warm.history[0].kkt_inf_norm <= cold.history[0].kkt_inf_norm);
}

/// Quadratic problem whose cost evaluates to NaN away from the origin.
struct Fragile(AffineQuadratic);

impl Ocp for Fragile {
    fn n_x(&self) -> usize {
        self.0.n_x()
    }
    fn n_u(&self) -> usize {
        self.0.n_u()
    }
    fn horizon(&self) -> usize {
        self.0.horizon()
    }
    fn state_cost(&self, t: usize, x: &DVector<f64>, th: &DVector<f64>) -> CostEval {
        let mut c = self.0.state_cost(t, x, th);
        if x.amax() > 0.5 {
            c.value = f64::NAN;
        }
        c
    }
    fn control_cost(&self, t: usize, u: &DVector<f64>, th: &DVector<f64>) -> CostEval {
        self.0.control_cost(t, u, th)
    }
    fn dynamics(
        &self,
        t: usize,
        xn: &DVector<f64>,
        x: &DVector<f64>,
        u: &DVector<f64>,
        th: &DVector<f64>,
    ) -> DynamicsEval {
        self.0.dynamics(t, xn, x, u, th)
    }
    fn initial_state(&self, th: &DVector<f64>) -> DVector<f64> {
        self.0.initial_state(th)
    }
    fn theta_vjp(
        &self,
        z: &Trajectory,
        l: &DVector<f64>,
        zt: &Trajectory,
        lt: &DVector<f64>,
        th: &DVector<f64>,
    ) -> DVector<f64> {
        self.0.theta_vjp(z, l, zt, lt, th)
    }
}

#[test]
fn non_finite_iterate_reports_divergence() {
    let inner = AffineQuadratic::new(1, 1, 2);
    let theta = inner.parameters(&[1.0], &[1.0], &[1.0], &[1.0], &[0.0], &[1.0]);
    let err = sqp_solve(
        &Fragile(inner),
        &theta,
        &Trajectory::zeros(1, 1, 2),
        &DVector::zeros(3),
        &SqpConfig::fixed_iterations(3),
    )
    .unwrap_err();
    match err {
        Error::Divergence {
            iteration,
            last_finite,
        } => {
            assert_eq!(iteration, 0);
            assert_eq!(last_finite.len(), 5);
        }
        other => panic!("unexpected {other:?}"),
    }
}
