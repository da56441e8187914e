#![allow(dead_code)]

use nalgebra::DMatrix;
use pce_lqr::basis::Interval;
use pce_lqr::linalg;
use pce_lqr::surrogate::SurrogateModel;
use pce_lqr::system::{MatrixFn, ParametricSystem, PolyMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..=scale))
}

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n, 1.0);
    (&m + m.transpose()) * 0.5
}

/// Random positive semidefinite matrix of rank at most `rank`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> DMatrix<f64> {
    let g = random_matrix(rng, n, rank, 1.0);
    &g * g.transpose()
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    random_psd(rng, n, n) + DMatrix::identity(n, n) * 0.1
}

/// Random matrix shifted so its spectral abscissa is at most `-margin`.
pub fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> DMatrix<f64> {
    let g = random_matrix(rng, n, n, 1.0);
    let abscissa = linalg::is_hurwitz(&g).unwrap().abscissa;
    g - DMatrix::identity(n, n) * (abscissa.max(0.0) + margin)
}

fn random_poly(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    degree: usize,
) -> Vec<Vec<Vec<f64>>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| (0..=degree).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect()
        })
        .collect()
}

/// Plant with random polynomial entries on a sub-interval of `[-1, 1]`.
/// The constant part of `A` is shifted by `-(bound + margin) I`, where
/// `bound` dominates `sup ||A(xi)||`, so `K = 0` is admissible at every order.
pub fn random_stable_poly_system(
    rng: &mut ChaCha8Rng,
    nx: usize,
    nu: usize,
    degree: usize,
    margin: f64,
) -> ParametricSystem {
    let mut a = random_poly(rng, nx, nx, degree);
    let bound = a
        .iter()
        .flatten()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>().powi(2))
        .sum::<f64>()
        .sqrt();
    for (i, row) in a.iter_mut().enumerate() {
        row[i][0] -= bound + margin;
    }
    let b = random_poly(rng, nx, nu, degree.min(1));
    let lo: f64 = rng.random_range(-1.0..=0.0);
    let hi = (lo + rng.random_range(0.5..=1.5)).min(1.0);
    ParametricSystem::new(
        MatrixFn::Polynomial(PolyMatrix::from_rows(a).unwrap()),
        MatrixFn::Polynomial(PolyMatrix::from_rows(b).unwrap()),
        Interval::new(lo, hi).unwrap(),
    )
    .unwrap()
}

/// Perturbs `base` entrywise by up to `spread * (1 + |entry|)` until the
/// result stabilizes the surrogate.
pub fn random_admissible_gain(
    rng: &mut ChaCha8Rng,
    model: &SurrogateModel,
    base: &DMatrix<f64>,
    spread: f64,
) -> DMatrix<f64> {
    for _ in 0..1000 {
        let k = DMatrix::from_fn(base.nrows(), base.ncols(), |i, j| {
            let v = base[(i, j)];
            v + spread * (1.0 + v.abs()) * rng.random_range(-1.0..=1.0)
        });
        if model.admissibility(&k).unwrap().is_hurwitz {
            return k;
        }
    }
    panic!("no admissible perturbation found");
}

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}
