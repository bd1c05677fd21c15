#![allow(dead_code)]

use dmpc_core::models::AffineQuadratic;
use dmpc_core::{ParameterVector, QpData};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        std * v
    })
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        std * v
    })
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// `I + 0.1 ΔA` rescaled to spectral radius at most 0.99.
pub fn stable_a(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::identity(n, n) + normal_mat(rng, n, n, 0.1);
    let rho = spectral_radius(&a);
    a * (0.99 / rho).min(1.0)
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = normal_mat(rng, n, n, 1.0);
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5
}

/// Random strictly convex QP. `explicit` selects `A⁺ = I`.
pub fn random_qp(seed: u64, n_x: usize, n_u: usize, horizon: usize, explicit: bool) -> QpData {
    let mut r = rng(seed);
    let mut qp = QpData {
        q_mat: vec![],
        q_vec: vec![],
        r_mat: vec![],
        r_vec: vec![],
        a_plus: vec![],
        a: vec![],
        b: vec![],
        c: vec![],
        x_s: normal_vec(&mut r, n_x, 5.0),
    };
    for t in 0..=horizon {
        qp.q_mat.push(random_spd(&mut r, n_x));
        qp.q_vec.push(normal_vec(&mut r, n_x, 1.0));
        if t < horizon {
            qp.r_mat.push(random_spd(&mut r, n_u));
            qp.r_vec.push(normal_vec(&mut r, n_u, 1.0));
            qp.a_plus.push(if explicit {
                DMatrix::identity(n_x, n_x)
            } else {
                DMatrix::identity(n_x, n_x) + normal_mat(&mut r, n_x, n_x, 0.1)
            });
            qp.a.push(-stable_a(&mut r, n_x));
            qp.b.push(-normal_mat(&mut r, n_x, n_u, 1.0));
            qp.c.push(normal_vec(&mut r, n_x, 0.1));
        }
    }
    qp
}

/// Random affine-quadratic problem with positive diagonal weights.
pub fn random_affine(
    seed: u64,
    n_x: usize,
    n_u: usize,
    horizon: usize,
) -> (AffineQuadratic, ParameterVector) {
    let mut r = rng(seed);
    let ocp = AffineQuadratic::new(n_x, n_u, horizon);
    let qw: Vec<f64> = (0..n_x).map(|_| r.random_range(0.5..2.0)).collect();
    let rw: Vec<f64> = (0..n_u).map(|_| r.random_range(0.5..2.0)).collect();
    let a = stable_a(&mut r, n_x).transpose();
    let b = normal_mat(&mut r, n_x, n_u, 1.0).transpose();
    let off = normal_vec(&mut r, n_x, 0.1);
    let xs = normal_vec(&mut r, n_x, 1.0);
    // nalgebra is column-major, so the transposes above give row-major slices.
    let theta = ocp.parameters(
        &qw,
        &rw,
        a.as_slice(),
        b.as_slice(),
        off.as_slice(),
        xs.as_slice(),
    );
    (ocp, theta)
}

/// `‖a − b‖∞ / ‖b‖∞`
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
