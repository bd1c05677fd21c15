//! Schur complement of the QP's KKT system and its stair preconditioner.
//!
//! Eliminating the primal variables from `[G Hᵀ; H 0]` leaves
//! `S λ = γ` with `S = −H G⁻¹ Hᵀ` and `γ = d + H G⁻¹ b`. `S` is negative
//! definite, so we store and solve the equivalent SPD system `(−S) λ = −γ`.
//! Block row 0 belongs to the initial condition and block row `t + 1` to the
//! dynamics of stage `t`:
//!
//! ```text
//!   −S = | Q_0⁻¹  φ_0ᵀ                 |
//!        | φ_0    χ_0   φ_1ᵀ           |
//!        |        φ_1   χ_1   ⋱        |
//!        |              ⋱     χ_{T−1}  |
//!   χ_t = A_t Q_t⁻¹ A_tᵀ + B_t R_t⁻¹ B_tᵀ + A_t⁺ Q_{t+1}⁻¹ A_t⁺ᵀ
//!   φ_t = A_t Q_t⁻¹ A_{t−1}⁺ᵀ,   A_{−1}⁺ = I
//! ```
//!
//! The preconditioner is the symmetric stair approximation of `(−S)⁻¹`,
//! `Φ⁻¹ = D⁻¹ − D⁻¹ O D⁻¹` for the block diagonal `D` and off-diagonal part
//! `O` of `−S`. It is block tridiagonal too and positive definite whenever
//! `−S` is.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::problem::QpData;

/// Block rows processed per rayon task in the block kernels.
const ROWS_PER_TASK: usize = 8;

/// Block-tridiagonal matrix with square blocks of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockTridiag {
    /// Diagonal blocks, `n_blocks` of them.
    pub diag: Vec<DMatrix<f64>>,
    /// `sub[t]` is block `(t + 1, t)`.
    pub sub: Vec<DMatrix<f64>>,
    /// `sup[t]` is block `(t, t + 1)`.
    pub sup: Vec<DMatrix<f64>>,
}

impl BlockTridiag {
    pub fn identity(n_blocks: usize, block: usize) -> Self {
        BlockTridiag {
            diag: vec![DMatrix::identity(block, block); n_blocks],
            sub: vec![DMatrix::zeros(block, block); n_blocks.saturating_sub(1)],
            sup: vec![DMatrix::zeros(block, block); n_blocks.saturating_sub(1)],
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn block_size(&self) -> usize {
        self.diag[0].nrows()
    }

    pub fn dim(&self) -> usize {
        self.n_blocks() * self.block_size()
    }

    /// `y = M v`, computed block row by block row.
    pub fn matvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("block-tridiagonal operand", self.dim(), v.len())?;
        let n = self.block_size();
        let last = self.n_blocks() - 1;
        let rows: Vec<DVector<f64>> = (0..self.n_blocks())
            .into_par_iter()
            .with_min_len(ROWS_PER_TASK)
            .map(|t| {
                let mut y = &self.diag[t] * v.rows(t * n, n);
                if t > 0 {
                    y.gemv(1.0, &self.sub[t - 1], &v.rows((t - 1) * n, n), 1.0);
                }
                if t < last {
                    y.gemv(1.0, &self.sup[t], &v.rows((t + 1) * n, n), 1.0);
                }
                y
            })
            .collect();
        let mut out = DVector::zeros(self.dim());
        for (t, y) in rows.iter().enumerate() {
            out.rows_mut(t * n, n).copy_from(y);
        }
        Ok(out)
    }
}

/// `btd_matvec`
pub fn btd_matvec(m: &BlockTridiag, v: &DVector<f64>) -> Result<DVector<f64>> {
    m.matvec(v)
}

/// `r̃ = Φ⁻¹ r`
pub fn precond_apply(p: &BlockTridiag, r: &DVector<f64>) -> Result<DVector<f64>> {
    p.matvec(r)
}

/// The stored SPD Schur system together with the factorizations reused by
/// right-hand-side assembly and primal recovery.
#[derive(Debug, Clone)]
pub struct SchurSystem {
    /// `−S`
    pub s: BlockTridiag,
    /// `Φ⁻¹`
    pub precond: BlockTridiag,
    q_chol: Vec<Cholesky<f64, Dyn>>,
    r_chol: Vec<Cholesky<f64, Dyn>>,
}

fn chol(m: &DMatrix<f64>, what: &'static str, stage: usize) -> Result<Cholesky<f64, Dyn>> {
    m.clone()
        .cholesky()
        .ok_or(Error::Factorization { what, stage })
}

fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

impl SchurSystem {
    pub fn dim(&self) -> usize {
        self.s.dim()
    }

    /// `Q_t⁻¹ v`
    pub fn solve_q(&self, t: usize, v: &DVector<f64>) -> DVector<f64> {
        self.q_chol[t].solve(v)
    }

    /// `R_t⁻¹ v`
    pub fn solve_r(&self, t: usize, v: &DVector<f64>) -> DVector<f64> {
        self.r_chol[t].solve(v)
    }

    /// Stored right-hand side `−γ = −(d + H G⁻¹ b)` for the interleaved cost
    /// vector `b` and constraint vector `d`.
    pub fn assemble_gamma(
        &self,
        qp: &QpData,
        b: &DVector<f64>,
        d: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let (n_x, n_u, horizon) = (qp.n_x(), qp.n_u(), qp.horizon());
        check_len("cost vector b", qp.n_z(), b.len())?;
        check_len("constraint vector d", qp.n_lambda(), d.len())?;
        let stride = n_x + n_u;
        let wx: Vec<DVector<f64>> = (0..=horizon)
            .into_par_iter()
            .map(|t| self.solve_q(t, &b.rows(t * stride, n_x).into_owned()))
            .collect();
        let wu: Vec<DVector<f64>> = (0..horizon)
            .into_par_iter()
            .map(|t| self.solve_r(t, &b.rows(t * stride + n_x, n_u).into_owned()))
            .collect();
        let rows: Vec<DVector<f64>> = (0..=horizon)
            .into_par_iter()
            .map(|k| {
                let mut g = d.rows(k * n_x, n_x).into_owned();
                if k == 0 {
                    g += &wx[0];
                } else {
                    let t = k - 1;
                    g += &qp.a[t] * &wx[t] + &qp.b[t] * &wu[t] + &qp.a_plus[t] * &wx[t + 1];
                }
                -g
            })
            .collect();
        let mut out = DVector::zeros(qp.n_lambda());
        for (k, g) in rows.iter().enumerate() {
            out.rows_mut(k * n_x, n_x).copy_from(g);
        }
        Ok(out)
    }
}

/// Assembles `−S`, `Φ⁻¹` and the block factorizations. Every stage is
/// independent and processed in parallel.
pub fn assemble_schur(qp: &QpData) -> Result<SchurSystem> {
    qp.validate()?;
    let horizon = qp.horizon();
    let n_x = qp.n_x();

    let q_chol = (0..=horizon)
        .into_par_iter()
        .map(|t| chol(&qp.q_mat[t], "Q", t))
        .collect::<Result<Vec<_>>>()?;
    let r_chol = (0..horizon)
        .into_par_iter()
        .map(|t| chol(&qp.r_mat[t], "R", t))
        .collect::<Result<Vec<_>>>()?;

    // (χ_t, φ_t) for each dynamics stage.
    let coupling: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..horizon)
        .into_par_iter()
        .map(|t| {
            let qa = q_chol[t].solve(&qp.a[t].transpose());
            let rb = r_chol[t].solve(&qp.b[t].transpose());
            let qa_plus = q_chol[t + 1].solve(&qp.a_plus[t].transpose());
            let chi = &qp.a[t] * qa + &qp.b[t] * rb + &qp.a_plus[t] * qa_plus;
            let prev_plus_t = if t == 0 {
                DMatrix::identity(n_x, n_x)
            } else {
                qp.a_plus[t - 1].transpose()
            };
            let phi = &qp.a[t] * q_chol[t].solve(&prev_plus_t);
            (symmetrized(chi), phi)
        })
        .collect();

    let mut diag = Vec::with_capacity(horizon + 1);
    diag.push(symmetrized(q_chol[0].inverse()));
    let mut sub = Vec::with_capacity(horizon);
    for (chi, phi) in coupling {
        diag.push(chi);
        sub.push(phi);
    }
    let sup: Vec<DMatrix<f64>> = sub.iter().map(|m| m.transpose()).collect();
    let s = BlockTridiag { diag, sub, sup };

    // D⁻¹ blocks: Q_0 and χ_t⁻¹.
    let d_inv: Vec<DMatrix<f64>> = (0..=horizon)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                Ok(qp.q_mat[0].clone())
            } else {
                chol(&s.diag[k], "chi", k - 1).map(|c| symmetrized(c.inverse()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let p_sup: Vec<DMatrix<f64>> = (0..horizon)
        .into_par_iter()
        .map(|t| -(&d_inv[t] * s.sup[t].clone() * &d_inv[t + 1]))
        .collect();
    let p_sub = p_sup.iter().map(|m| m.transpose()).collect();
    let precond = BlockTridiag {
        diag: d_inv,
        sub: p_sub,
        sup: p_sup,
    };

    Ok(SchurSystem {
        s,
        precond,
        q_chol,
        r_chol,
    })
}
