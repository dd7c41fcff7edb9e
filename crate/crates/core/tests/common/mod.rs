#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rgl_core::{Matrix, Vector};

pub fn uniform(rng: &mut ChaCha8Rng, d: usize, range: f64) -> Vector {
    Vector::from_fn(d, |_| rng.gen_range(-range..range))
}

pub fn uniform_seq(rng: &mut ChaCha8Rng, k: usize, d: usize, range: f64) -> Vec<Vector> {
    (0..k).map(|_| uniform(rng, d, range)).collect()
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, range: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-range..range))
}

pub fn unit(d: usize, j: usize) -> Vector {
    Vector::from_fn(d, |i| f64::from(u8::from(i == j)))
}

/// Largest singular value from a dense SVD, independent of the library's power iteration.
pub fn dense_spectral_norm(m: &Matrix) -> f64 {
    let d = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
    d.singular_values().max()
}

/// Entrywise relative error with an absolute floor for entries near zero.
pub fn max_rel_diff(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
