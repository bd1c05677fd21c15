//! Dense reference implementations used to validate the structured solvers.
//!
//! Everything here forms full matrices and is meant for small test instances.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{kkt_residual, Ocp, ParameterVector, QpData, Trajectory};
use crate::schur::BlockTridiag;

fn x_col(qp: &QpData, t: usize) -> usize {
    t * (qp.n_x() + qp.n_u())
}

fn u_col(qp: &QpData, t: usize) -> usize {
    x_col(qp, t) + qp.n_x()
}

/// `G = blkdiag(Q_0, R_0, …, Q_T)` in interleaved order.
pub fn dense_g(qp: &QpData) -> DMatrix<f64> {
    let (n_x, n_u) = (qp.n_x(), qp.n_u());
    let mut g = DMatrix::zeros(qp.n_z(), qp.n_z());
    for t in 0..=qp.horizon() {
        let c = x_col(qp, t);
        g.view_mut((c, c), (n_x, n_x)).copy_from(&qp.q_mat[t]);
        if t < qp.horizon() {
            let c = u_col(qp, t);
            g.view_mut((c, c), (n_u, n_u)).copy_from(&qp.r_mat[t]);
        }
    }
    g
}

/// Constraint matrix with block rows `[I]` and `[A_t B_t A_t⁺]`.
pub fn dense_h(qp: &QpData) -> DMatrix<f64> {
    let (n_x, n_u) = (qp.n_x(), qp.n_u());
    let mut h = DMatrix::zeros(qp.n_lambda(), qp.n_z());
    h.view_mut((0, 0), (n_x, n_x)).fill_with_identity();
    for t in 0..qp.horizon() {
        let r = (t + 1) * n_x;
        h.view_mut((r, x_col(qp, t)), (n_x, n_x))
            .copy_from(&qp.a[t]);
        h.view_mut((r, u_col(qp, t)), (n_x, n_u))
            .copy_from(&qp.b[t]);
        h.view_mut((r, x_col(qp, t + 1)), (n_x, n_x))
            .copy_from(&qp.a_plus[t]);
    }
    h
}

/// Full KKT matrix `[G Hᵀ; H 0]`.
pub fn dense_kkt_matrix(qp: &QpData) -> DMatrix<f64> {
    let (nz, nl) = (qp.n_z(), qp.n_lambda());
    let h = dense_h(qp);
    let mut k = DMatrix::zeros(nz + nl, nz + nl);
    k.view_mut((0, 0), (nz, nz)).copy_from(&dense_g(qp));
    k.view_mut((0, nz), (nz, nl)).copy_from(&h.transpose());
    k.view_mut((nz, 0), (nl, nz)).copy_from(&h);
    k
}

/// Solves `[G Hᵀ; H 0][z; λ] = [−b; d]` by LU.
pub fn dense_kkt_solve(
    qp: &QpData,
    b: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (nz, nl) = (qp.n_z(), qp.n_lambda());
    let mut rhs = DVector::zeros(nz + nl);
    rhs.rows_mut(0, nz).copy_from(&(-b));
    rhs.rows_mut(nz, nl).copy_from(d);
    let sol = dense_kkt_matrix(qp)
        .lu()
        .solve(&rhs)
        .ok_or(Error::Factorization {
            what: "KKT",
            stage: 0,
        })?;
    Ok((sol.rows(0, nz).into_owned(), sol.rows(nz, nl).into_owned()))
}

/// `(H G⁻¹ Hᵀ, −(d + H G⁻¹ b))`, i.e. the negated Schur complement and
/// right-hand side in the sign convention stored by the structured solver.
pub fn dense_schur(
    qp: &QpData,
    b: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let g_inv = dense_g(qp).try_inverse().ok_or(Error::Factorization {
        what: "G",
        stage: 0,
    })?;
    let h = dense_h(qp);
    let s = &h * &g_inv * h.transpose();
    let gamma = -(d + &h * &g_inv * b);
    Ok((s, gamma))
}

pub fn densify(m: &BlockTridiag) -> DMatrix<f64> {
    let n = m.block_size();
    let mut out = DMatrix::zeros(m.dim(), m.dim());
    for k in 0..m.n_blocks() {
        out.view_mut((k * n, k * n), (n, n)).copy_from(&m.diag[k]);
    }
    for k in 0..m.sub.len() {
        out.view_mut(((k + 1) * n, k * n), (n, n))
            .copy_from(&m.sub[k]);
        out.view_mut((k * n, (k + 1) * n), (n, n))
            .copy_from(&m.sup[k]);
    }
    out
}

/// Primal optimum of the QP by a backward Riccati recursion with affine terms.
/// Only the explicit form `A_t⁺ = I` is supported.
pub fn riccati_lqr(qp: &QpData) -> Result<Trajectory> {
    let horizon = qp.horizon();
    let n_x = qp.n_x();
    if qp.a_plus.iter().any(|m| *m != DMatrix::identity(n_x, n_x)) {
        return Err(Error::Unsupported("Riccati recursion needs A⁺ = I"));
    }
    let mut gains = Vec::with_capacity(horizon);
    let mut models = Vec::with_capacity(horizon);
    let mut p_mat = qp.q_mat[horizon].clone();
    let mut p_vec = qp.q_vec[horizon].clone();
    for t in (0..horizon).rev() {
        // x_{t+1} = Ā x_t + B̄ u_t + c
        let a_bar = -&qp.a[t];
        let b_bar = -&qp.b[t];
        let c = qp.c[t].clone();
        let pc_p = &p_mat * &c + &p_vec;
        let h_uu = &qp.r_mat[t] + b_bar.transpose() * &p_mat * &b_bar;
        let h_ux = b_bar.transpose() * &p_mat * &a_bar;
        let h_u = &qp.r_vec[t] + b_bar.transpose() * &pc_p;
        let chol = h_uu.cholesky().ok_or(Error::Factorization {
            what: "H_uu",
            stage: t,
        })?;
        let k_mat = -chol.solve(&h_ux);
        let k_vec = -chol.solve(&h_u);
        p_vec = &qp.q_vec[t] + a_bar.transpose() * &pc_p + h_ux.transpose() * &k_vec;
        p_mat = &qp.q_mat[t] + a_bar.transpose() * &p_mat * &a_bar + h_ux.transpose() * &k_mat;
        p_mat = (&p_mat + p_mat.transpose()) * 0.5;
        gains.push((k_mat, k_vec));
        models.push((a_bar, b_bar, c));
    }
    gains.reverse();
    models.reverse();

    let mut x = vec![qp.x_s.clone()];
    let mut u = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let (k_mat, k_vec) = &gains[t];
        let (a_bar, b_bar, c) = &models[t];
        let ut = k_mat * &x[t] + k_vec;
        x.push(a_bar * &x[t] + b_bar * &ut + c);
        u.push(ut);
    }
    Ok(Trajectory { x, u })
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    DVector::from_fn(x.len(), |i, _| {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    })
}

/// Central-difference Jacobian of a vector function (columns per input).
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        jac.set_column(i, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    jac
}

/// `−∂F/∂θᵀ [z̃; λ̃]` with the θ-derivative of the KKT residual taken by
/// central differences.
pub fn fd_theta_vjp(
    ocp: &dyn Ocp,
    z: &Trajectory,
    lambda: &DVector<f64>,
    z_tilde: &Trajectory,
    lambda_tilde: &DVector<f64>,
    theta: &ParameterVector,
    h: f64,
) -> Result<DVector<f64>> {
    let mut xi = z_tilde.flatten().as_slice().to_vec();
    xi.extend(lambda_tilde.iter());
    let xi = DVector::from_vec(xi);
    let mut out = DVector::zeros(theta.len());
    for i in 0..theta.len() {
        let mut tp = theta.clone();
        let mut tm = theta.clone();
        tp.set(i, theta.values()[i] + h);
        tm.set(i, theta.values()[i] - h);
        let dp = kkt_residual(ocp, z, lambda, &tp)?;
        let dm = kkt_residual(ocp, z, lambda, &tm)?;
        out[i] = -((dp - dm) / (2.0 * h)).dot(&xi);
    }
    Ok(out)
}
