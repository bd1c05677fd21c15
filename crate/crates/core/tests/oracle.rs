mod common;

use common::{random_qp, rel_err};
use dmpc_core::oracle::{dense_g, dense_h, dense_kkt_solve, fd_gradient, fd_jacobian, riccati_lqr};
use dmpc_core::Error;
use nalgebra::{DMatrix, DVector};

#[test]
fn dense_solution_satisfies_kkt_equations() {
    for seed in 0..5 {
        let qp = random_qp(seed, 5, 2, 8, seed % 2 == 0);
        let (b, d) = (qp.cost_gradient(), qp.constraint_rhs());
        let (z, l) = dense_kkt_solve(&qp, &b, &d).unwrap();
        let g = dense_g(&qp);
        let h = dense_h(&qp);
        assert!((&g * &z + h.transpose() * &l + &b).amax() <= 1e-9);
        assert!((&h * &z - &d).amax() <= 1e-9);
    }
}

#[test]
fn riccati_agrees_with_dense_solve() {
    for seed in 0..5 {
        let qp = random_qp(20 + seed, 6, 3, 12, true);
        let (z, _) = dense_kkt_solve(&qp, &qp.cost_gradient(), &qp.constraint_rhs()).unwrap();
        assert!(rel_err(&riccati_lqr(&qp).unwrap().flatten(), &z) <= 1e-10);
    }
}

#[test]
fn riccati_rejects_implicit_dynamics() {
    let qp = random_qp(30, 3, 1, 4, false);
    assert!(matches!(riccati_lqr(&qp), Err(Error::Unsupported(_))));
}

#[test]
fn finite_differences_exact_on_affine_maps() {
    let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, 4.0]);
    let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
    let jac = fd_jacobian(|v| &m * v, &x, 1e-4);
    assert!((jac - &m).amax() <= 1e-9);
    let grad = fd_gradient(|v| m.row(0).dot(&v.transpose()), &x, 1e-4);
    assert!((grad - m.row(0).transpose()).amax() <= 1e-9);
}
